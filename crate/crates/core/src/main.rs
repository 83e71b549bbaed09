fn main() {
    std::process::exit(blockmf::cli::run(std::env::args_os()));
}

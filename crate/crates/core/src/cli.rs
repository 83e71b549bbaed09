//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 divergence. Files are written atomically, and everything a failing
//! command already wrote is removed again.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::baselines::{train_cmf, train_cpmf};
use crate::data_io::{self, DatasetFormat, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{InnerSchedule, RatingsDataset, TrainConfig};
use crate::scheduler::{plan_step, validate_plan};
use crate::trainer::{budget_splits, sweep_budget, train_bgmf, TrainResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "blockmf", version, about = "Block-partitioned parallel matrix factorization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a uniform random integer rating matrix as row,col,value CSV.
    Gen(GenArgs),
    /// Train one variant and write its convergence trace and model.
    Train(TrainArgs),
    /// Print the RMSE of a saved model on a dataset.
    Evaluate(EvaluateArgs),
    /// Train cmf, cpmf and bgmf on the same data and tabulate them.
    Benchmark(BenchmarkArgs),
    /// Split a fixed sweep budget between outer steps and inner sweeps.
    Sweep(SweepArgs),
    /// Print the batches of one outer step.
    ScheduleDump(ScheduleDumpArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 1)]
    low: i64,
    #[arg(long, default_value_t = 30)]
    high: i64,
    #[arg(long, default_value_t = 1.0)]
    density: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Input file; not needed for `--format synthetic:...`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// ml100k, ml1m, ml20m, jester, triples, or synthetic:NxM,LOW,HIGH,SEED[,DENSITY].
    #[arg(long, default_value = "triples", value_parser = parse_format)]
    format: DatasetFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Grid(usize, usize);

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parsed = s
            .split_once(['x', 'X'])
            .and_then(|(i, j)| Some(Grid(i.trim().parse().ok()?, j.trim().parse().ok()?)));
        match parsed {
            Some(g) if g.0 >= 1 && g.1 >= 1 => Ok(g),
            _ => Err(format!("expected IxJ with positive I and J, got '{s}'")),
        }
    }
}

#[derive(Debug, Args)]
struct HyperArgs {
    #[arg(long, default_value_t = 30)]
    k: usize,
    #[arg(long, default_value_t = 1e-4)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-2)]
    beta: f64,
    /// Stop once an outer step improves train RMSE by less than this.
    #[arg(long, default_value_t = 1e-2)]
    delta: f64,
    /// Run all outer steps regardless of `--delta`.
    #[arg(long)]
    no_early_stop: bool,
    #[arg(long, default_value_t = 1000)]
    outer_steps: usize,
    /// const:g, inc:p,G, dec:s, adaptive:s or converge:tol.
    #[arg(long, default_value = "const:1", value_parser = parse_schedule)]
    inner_schedule: InnerSchedule,
    #[arg(long, default_value = "1x1")]
    grid: Grid,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl HyperArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            k: self.k,
            alpha: self.alpha,
            beta: self.beta,
            delta: self.delta,
            early_stopping: !self.no_early_stop,
            outer_steps: self.outer_steps,
            inner_schedule: self.inner_schedule,
            grid_i: self.grid.0,
            grid_j: self.grid.1,
            workers: self.workers,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    Bgmf,
    Cmf,
    Cpmf,
}

impl Variant {
    fn name(self) -> &'static str {
        match self {
            Variant::Bgmf => "bgmf",
            Variant::Cmf => "cmf",
            Variant::Cpmf => "cpmf",
        }
    }

    fn train(self, d: &RatingsDataset, cfg: &TrainConfig, test: Option<&RatingsDataset>) -> Result<TrainResult> {
        match self {
            Variant::Bgmf => train_bgmf(d, cfg, test),
            Variant::Cmf => train_cmf(d, cfg, test),
            Variant::Cpmf => train_cpmf(d, cfg, test),
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, value_enum, default_value_t = Variant::Bgmf)]
    variant: Variant,
    /// Held-out share of entries; 0 trains on everything.
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Leave the seconds column empty so reruns give identical traces.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Table destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, default_value_t = 200)]
    budget: usize,
    /// `auto` for every divisor pair, or a list such as `40x1,8x5,1x40`.
    #[arg(long, default_value = "auto")]
    splits: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScheduleDumpArgs {
    #[arg(long)]
    grid: Grid,
    /// Zero-based outer step.
    #[arg(long, default_value_t = 0)]
    step: usize,
}

fn parse_format(s: &str) -> std::result::Result<DatasetFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_schedule(s: &str) -> std::result::Result<InnerSchedule, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let mut outputs = Outputs::default();
    match execute(cli.command, &mut outputs) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            outputs.discard();
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::InvalidPlan(_) => EXIT_USAGE,
        Error::Divergence(_) => EXIT_DIVERGED,
        _ => EXIT_DATA,
    }
}

/// Files written so far by the running command.
#[derive(Default)]
struct Outputs {
    written: Vec<PathBuf>,
}

impl Outputs {
    fn write(&mut self, path: &Path, contents: &str) -> Result<()> {
        data_io::write_atomic(path, contents)?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    fn discard(&mut self) {
        for path in self.written.drain(..) {
            let _ = fs::remove_file(path);
        }
    }
}

fn emit(outputs: &mut Outputs, out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(path) => outputs.write(path, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn execute(command: Command, outputs: &mut Outputs) -> Result<()> {
    match command {
        Command::Gen(args) => gen(args, outputs),
        Command::Train(args) => train(args, outputs),
        Command::Evaluate(args) => evaluate(args),
        Command::Benchmark(args) => benchmark(args, outputs),
        Command::Sweep(args) => sweep(args, outputs),
        Command::ScheduleDump(args) => schedule_dump(args),
    }
}

fn load_data(args: &DataArgs) -> Result<RatingsDataset> {
    match (&args.data, args.format) {
        (_, DatasetFormat::Synthetic(_)) => data_io::load(Path::new(""), args.format),
        (Some(path), fmt) => data_io::load(path, fmt),
        (None, _) => Err(Error::InvalidArgument("--data is required for file formats".into())),
    }
}

fn describe_data(args: &DataArgs) -> String {
    let format = match args.format {
        DatasetFormat::MovieLens100K => "ml100k".to_string(),
        DatasetFormat::MovieLens1M20M => "movielens".to_string(),
        DatasetFormat::JesterDense => "jester".to_string(),
        DatasetFormat::TripleCsv => "triples".to_string(),
        DatasetFormat::Synthetic(spec) => format!("synthetic:{spec}"),
    };
    match &args.data {
        Some(path) if !matches!(args.format, DatasetFormat::Synthetic(_)) => {
            format!("data={} format={format}", path.display())
        }
        _ => format!("format={format}"),
    }
}

fn describe_config(cfg: &TrainConfig) -> String {
    format!(
        "k={} alpha={:?} beta={:?} delta={:?} early_stopping={} outer_steps={} inner_schedule={} grid={}x{} workers={} seed={}",
        cfg.k,
        cfg.alpha,
        cfg.beta,
        cfg.delta,
        cfg.early_stopping,
        cfg.outer_steps,
        cfg.inner_schedule,
        cfg.grid_i,
        cfg.grid_j,
        cfg.workers,
        cfg.seed
    )
}

fn gen(args: GenArgs, outputs: &mut Outputs) -> Result<()> {
    let spec = SyntheticSpec {
        n: args.n,
        m: args.m,
        low: args.low,
        high: args.high,
        seed: args.seed,
        density: args.density,
    };
    spec.validate()?;
    let d = data_io::gen_synthetic(&spec)?;
    let mut text = format!(
        "# blockmf gen n={} m={} low={} high={} density={:?} seed={}\n",
        spec.n, spec.m, spec.low, spec.high, spec.density, spec.seed
    );
    text.push_str(&data_io::triples_to_csv(&d));
    outputs.write(&args.out, &text)
}

fn train(args: TrainArgs, outputs: &mut Outputs) -> Result<()> {
    let cfg = args.hyper.config();
    cfg.validate()?;
    if !(0.0..1.0).contains(&args.test_fraction) {
        return Err(Error::InvalidArgument(format!(
            "--test-fraction {} outside [0, 1)",
            args.test_fraction
        )));
    }
    let d = load_data(&args.data)?;
    let (train, test) = if args.test_fraction > 0.0 {
        let (train, test) = data_io::split(&d, args.test_fraction, cfg.seed)?;
        (train, Some(test))
    } else {
        (d, None)
    };
    log::info!(
        "training {} on {}x{} with {} entries",
        args.variant.name(),
        train.n(),
        train.m(),
        train.len()
    );
    let result = args.variant.train(&train, &cfg, test.as_ref())?;
    let last = result.trace.steps.last();
    println!(
        "{} stopped after {} steps ({:?}): train rmse {:.6}{}",
        args.variant.name(),
        result.trace.steps.len(),
        result.stop_reason,
        result.final_train_rmse(),
        last.and_then(|s| s.test_rmse)
            .map(|r| format!(", test rmse {r:.6}"))
            .unwrap_or_default()
    );
    if let Some(path) = &args.trace {
        let comment = format!(
            "blockmf train variant={} {} test_fraction={:?} {}",
            args.variant.name(),
            describe_data(&args.data),
            args.test_fraction,
            describe_config(&cfg)
        );
        outputs.write(path, &result.trace.to_csv(Some(&comment), !args.no_timing))?;
    }
    if let Some(path) = &args.model_out {
        data_io::save_model(&result.model, path)?;
        outputs.written.push(path.clone());
    }
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let model = data_io::load_model(&args.model)?;
    let d = load_data(&args.data)?;
    let rmse = metrics::rmse(&model, &d)?;
    println!("rmse {rmse:.6}");
    println!("entries {}", d.len());
    Ok(())
}

fn benchmark(args: BenchmarkArgs, outputs: &mut Outputs) -> Result<()> {
    let cfg = args.hyper.config();
    cfg.validate()?;
    let d = load_data(&args.data)?;
    let mut table = format!(
        "# blockmf benchmark {} {}\nvariant,sec_per_iter,iters,final_rmse\n",
        describe_data(&args.data),
        describe_config(&cfg)
    );
    for variant in [Variant::Cmf, Variant::Cpmf, Variant::Bgmf] {
        let result = variant.train(&d, &cfg, None)?;
        let iters = result.trace.steps.len();
        let per_iter = if iters > 0 {
            result.trace.total_seconds() / iters as f64
        } else {
            0.0
        };
        writeln!(
            table,
            "{},{per_iter:.6},{iters},{:?}",
            variant.name(),
            result.final_train_rmse()
        )
        .expect("writing to a String");
    }
    emit(outputs, args.out.as_deref(), &table)
}

fn parse_splits(text: &str, budget: usize) -> Result<Vec<(usize, usize)>> {
    if text.trim() == "auto" {
        return Ok(budget_splits(budget));
    }
    text.split(',')
        .map(|pair| {
            pair.parse::<Grid>()
                .map(|g| (g.0, g.1))
                .map_err(|e| Error::InvalidArgument(format!("--splits: {e}")))
        })
        .collect()
}

fn sweep(args: SweepArgs, outputs: &mut Outputs) -> Result<()> {
    let cfg = args.hyper.config();
    cfg.validate()?;
    if args.budget == 0 {
        return Err(Error::InvalidArgument("--budget must be positive".into()));
    }
    let splits = parse_splits(&args.splits, args.budget)?;
    let d = load_data(&args.data)?;
    let report = sweep_budget(&d, &cfg, args.budget, &splits)?;
    let comment = format!(
        "blockmf sweep budget={} {} {}",
        args.budget,
        describe_data(&args.data),
        describe_config(&cfg)
    );
    emit(outputs, args.out.as_deref(), &report.to_csv(Some(&comment)))?;
    if let Some(best) = report.best() {
        log::info!("best split: outer={} inner={} rmse={:.6}", best.outer, best.inner, best.final_rmse);
    }
    Ok(())
}

fn schedule_dump(args: ScheduleDumpArgs) -> Result<()> {
    let plan = plan_step(args.grid.0, args.grid.1, args.step)?;
    validate_plan(&plan, args.grid.0, args.grid.1)?;
    print!("{plan}");
    Ok(())
}

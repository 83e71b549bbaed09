use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn blockmf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockmf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, n: usize, m: usize) -> String {
    let out = dir.join(format!("gen_{n}x{m}.csv"));
    let o = blockmf(&["gen", "--out", path_str(&out), "--n", &n.to_string(), "--m", &m.to_string(), "--seed", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.to_str().unwrap().to_string()
}

#[test]
fn gen_writes_one_line_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen(dir.path(), 12, 7);
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# blockmf gen n=12 m=7 low=1 high=30"));
    let rows = data_lines(&text);
    assert_eq!(rows.len(), 84);
    assert!(rows.iter().all(|r| {
        let v: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
        (1.0..=30.0).contains(&v)
    }));
}

#[test]
fn single_block_trace_equals_sequential_trace() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 20, 20);
    let run = |variant: &str| {
        let trace = dir.path().join(format!("{variant}.csv"));
        let o = blockmf(&[
            "train", "--data", &data, "--variant", variant, "--grid", "1x1", "--inner-schedule", "const:1",
            "--k", "5", "--outer-steps", "10", "--no-early-stop", "--seed", "2", "--no-timing", "--trace",
            path_str(&trace),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(trace).unwrap()
    };
    let (bgmf, cmf) = (run("bgmf"), run("cmf"));
    assert_eq!(data_lines(&bgmf), data_lines(&cmf));
    assert_eq!(data_lines(&bgmf).len(), 11);
    assert_eq!(data_lines(&bgmf)[0], "step,train_rmse,test_rmse,seconds,inner_iters");
}

#[test]
fn repeated_runs_give_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 32, 32);
    let run = |name: &str| {
        let trace = dir.path().join(name);
        let o = blockmf(&[
            "train", "--data", &data, "--grid", "4x4", "--workers", "4", "--k", "4", "--outer-steps", "8",
            "--no-timing", "--trace", path_str(&trace),
        ]);
        assert!(o.status.success());
        fs::read(trace).unwrap()
    };
    assert_eq!(run("a.csv"), run("b.csv"));
}

#[test]
fn timed_trace_has_seconds_and_config_comment() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 16, 16);
    let trace = dir.path().join("t.csv");
    let o = blockmf(&["train", "--data", &data, "--grid", "2x2", "--k", "3", "--outer-steps", "3", "--trace", path_str(&trace)]);
    assert!(o.status.success());
    let text = fs::read_to_string(trace).unwrap();
    let comment = text.lines().next().unwrap();
    for key in ["variant=bgmf", "k=3", "alpha=0.0001", "beta=0.01", "delta=0.01", "grid=2x2", "seed=0", "test_fraction=0.2"] {
        assert!(comment.contains(key), "{key} missing from {comment}");
    }
    for row in data_lines(&text).iter().skip(1) {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 5);
        assert!(fields[2].parse::<f64>().is_ok(), "test rmse in {row}");
        assert!(fields[3].parse::<f64>().unwrap() >= 0.0);
    }
}

#[test]
fn saved_model_evaluates_to_its_train_rmse() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), 18, 14);
    let (trace, model) = (dir.path().join("t.csv"), dir.path().join("m.txt"));
    let o = blockmf(&[
        "train", "--data", &data, "--test-fraction", "0", "--k", "3", "--outer-steps", "4", "--no-early-stop",
        "--no-timing", "--trace", path_str(&trace), "--model-out", path_str(&model),
    ]);
    assert!(o.status.success());
    let last: Vec<String> = data_lines(&fs::read_to_string(trace).unwrap())
        .last()
        .unwrap()
        .split(',')
        .map(String::from)
        .collect();
    assert_eq!(last[2], "");
    let train_rmse: f64 = last[1].parse().unwrap();
    let o = blockmf(&["evaluate", "--model", path_str(&model), "--data", &data]);
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    let reported: f64 = stdout.lines().next().unwrap().strip_prefix("rmse ").unwrap().parse().unwrap();
    assert!((reported - train_rmse).abs() < 1e-6, "{reported} vs {train_rmse}");
}

#[test]
fn benchmark_tabulates_three_variants() {
    let o = blockmf(&[
        "benchmark", "--format", "synthetic:32x32,1,30,42", "--k", "4", "--grid", "4x4", "--workers", "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let rows = data_lines(&stdout);
    assert_eq!(rows[0], "variant,sec_per_iter,iters,final_rmse");
    let names: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(names, ["cmf", "cpmf", "bgmf"]);
}

#[test]
fn sweep_lists_requested_splits() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let o = blockmf(&[
        "sweep", "--format", "synthetic:16x16,1,30,1", "--k", "3", "--grid", "2x2", "--budget", "6", "--out",
        path_str(&out),
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(out).unwrap();
    let rows = data_lines(&text);
    assert_eq!(rows[0], "outer_steps,inner_iters,final_rmse,seconds");
    let splits: Vec<&str> = rows[1..].iter().map(|r| &r[..r.find(",").unwrap() + 2]).collect();
    assert_eq!(splits, ["6,1", "3,2", "2,3", "1,6"]);
}

#[test]
fn schedule_dump_matches_rotation() {
    let o = blockmf(&["schedule-dump", "--grid", "3x3", "--step", "0"]);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), "(0,0) (1,1) (2,2)\n(1,0) (2,1) (0,2)\n(2,0) (0,1) (1,2)\n");
    let o = blockmf(&["schedule-dump", "--grid", "3x3", "--step", "1"]);
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("(1,0) (2,1) (0,2)\n"));
}

#[test]
fn exit_codes_and_cleanup() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(blockmf(&["train", "--grid", "2y2"]).status.code(), Some(1));
    assert_eq!(blockmf(&["train", "--data", "x", "--k", "0"]).status.code(), Some(1));

    let missing = dir.path().join("missing.csv");
    let o = blockmf(&["train", "--data", path_str(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "0,0,1\n0,0,2\n").unwrap();
    assert_eq!(blockmf(&["train", "--data", path_str(&bad)]).status.code(), Some(2));

    let data = gen(dir.path(), 10, 10);
    let trace = dir.path().join("diverged.csv");
    let o = blockmf(&["train", "--data", &data, "--alpha", "10", "--trace", path_str(&trace)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!trace.exists());

    let model = dir.path().join("no_such_dir").join("m.txt");
    let o = blockmf(&[
        "train", "--data", &data, "--k", "2", "--outer-steps", "2", "--trace", path_str(&trace), "--model-out",
        path_str(&model),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!trace.exists(), "trace left behind after a failed model write");
    assert!(fs::read_dir(dir.path()).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".partial")));
}

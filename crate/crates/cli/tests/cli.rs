use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_geophy");

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/fixture8.fasta")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn quick_infer(out: &Path, extra: &[&str]) -> Output {
    let data = fixture();
    let mut args = vec![
        "infer",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--estimator",
        "loo",
        "--K",
        "2",
        "--nle-budget",
        "2000",
        "--trace-every",
        "50",
        "--mll-k",
        "20",
        "--samples",
        "50",
        "--seed",
        "5",
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path).unwrap()
}

fn body(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn infer_writes_every_artifact() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    let res = quick_infer(&out, &[]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    for name in ["trace.csv", "checkpoint.json", "topologies.nwk", "consensus.nwk", "mll.csv", "coordinates.csv"] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let trace = read(out.join("trace.csv"));
    assert!(trace.starts_with("# geophy "));
    assert_eq!(body(&trace)[0], "step,nle,elbo,beta,lr,wall_ms");
    assert_eq!(body(&read(out.join("topologies.nwk"))).len(), 50);
    let coords = read(out.join("coordinates.csv"));
    assert_eq!(body(&coords)[0], "tip,dim0,dim1");
    assert_eq!(body(&coords).len(), 9);
    assert_eq!(body(&read(out.join("mll.csv")))[0], "samples,reps,mean,std");
    assert!(String::from_utf8_lossy(&res.stdout).starts_with("MLL "));
}

#[test]
fn same_seed_reproduces_trace_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&quick_infer(&a, &["--threads", "1"])), 0);
    assert_eq!(code(&quick_infer(&b, &["--threads", "4"])), 0);
    for name in ["trace.csv", "topologies.nwk", "mll.csv", "checkpoint.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
}

#[test]
fn mll_from_checkpoint() {
    let dir = TempDir::new().unwrap();
    let run_dir = dir.path().join("run");
    assert_eq!(code(&quick_infer(&run_dir, &[])), 0);
    let ckpt = run_dir.join("checkpoint.json");
    let out = dir.path().join("mll");
    let res = run(&[
        "mll",
        "--data",
        fixture().to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--K",
        "10",
        "--reps",
        "3",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let rows = read(out.join("mll.csv"));
    let fields: Vec<&str> = body(&rows)[1].split(',').collect();
    assert_eq!(&fields[..2], &["10", "3"]);
    assert!(fields[2].parse::<f64>().unwrap() < 0.0);
}

#[test]
fn invalid_estimator_sample_count_is_an_argument_error() {
    let dir = TempDir::new().unwrap();
    let res = quick_infer(&dir.path().join("run"), &["--K", "1"]);
    assert_eq!(code(&res), 2);
}

#[test]
fn help_and_argument_errors() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["infer", "--help"])), 0);
    assert_eq!(code(&run(&["infer", "--bogus"])), 2);
    assert_eq!(code(&run(&[])), 2);
    assert_eq!(code(&run(&["--threads", "0", "compare", "a", "b"])), 2);
}

#[test]
fn missing_or_malformed_data_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    let missing = dir.path().join("nope.fasta");
    let res = run(&["infer", "--data", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 3);
    let bad = dir.path().join("bad.fasta");
    fs::write(&bad, ">a\nACGT\n>b\nAC\n").unwrap();
    let res = run(&["infer", "--data", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 3);
}

#[test]
fn compare_tree_with_itself() {
    let tree = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/fixture8.nwk");
    let res = run(&["compare", tree.to_str().unwrap(), tree.to_str().unwrap()]);
    assert_eq!(code(&res), 0);
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert_eq!(body(&stdout), vec!["rf,normalized_rf", "0,0"]);
}

#[test]
fn compare_detects_a_different_tree() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.nwk");
    let b = dir.path().join("b.nwk");
    fs::write(&a, "((A,B),(C,D),(E,F));\n").unwrap();
    fs::write(&b, "((A,C),(B,D),(E,F));\n").unwrap();
    let res = run(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert_eq!(body(&stdout)[1], "4,0.6666666666666666");
}

#[test]
fn consensus_of_identical_trees() {
    let dir = TempDir::new().unwrap();
    let trees = dir.path().join("trees.nwk");
    fs::write(&trees, "((A,B),(C,D),E);\n".repeat(5)).unwrap();
    let out = dir.path().join("cons");
    let res = run(&["consensus", "--trees", trees.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let parts = read(out.join("bipartitions.csv"));
    let rows = body(&parts);
    assert_eq!(rows[0], "split,frequency");
    assert_eq!(rows.len(), 3);
    assert!(rows[1..].iter().all(|r| r.ends_with(",1")));
    let stats = read(out.join("stats.csv"));
    assert_eq!(body(&stats)[1].split(',').take(2).collect::<Vec<_>>(), vec!["5", "1"]);
    assert!(out.join("consensus.nwk").is_file());
}

#[test]
fn simulate_then_infer_recovers_the_tree() {
    let dir = TempDir::new().unwrap();
    let sim = dir.path().join("sim");
    let res = run(&["simulate", "--taxa", "6", "--sites", "1000", "--rate", "5", "--seed", "2", "--out", sim.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let fit = dir.path().join("fit");
    let res = run(&[
        "infer",
        "--data",
        sim.join("alignment.fasta").to_str().unwrap(),
        "--out",
        fit.to_str().unwrap(),
        "--estimator",
        "loo",
        "--K",
        "3",
        "--nle-budget",
        "15000",
        "--mll-k",
        "10",
        "--samples",
        "200",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let res = run(&[
        "compare",
        sim.join("tree.nwk").to_str().unwrap(),
        fit.join("consensus.nwk").to_str().unwrap(),
    ]);
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert_eq!(body(&stdout)[1], "0,0");
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "lr = 0.05\ndim = 3\nestimator = \"loo\"\nk = 2\n").unwrap();
    let from_file = dir.path().join("a");
    let data = fixture();
    let base = |out: &Path| {
        vec![
            "infer".to_string(),
            "--data".into(),
            data.to_str().unwrap().into(),
            "--out".into(),
            out.to_str().unwrap().into(),
            "--config".into(),
            cfg.to_str().unwrap().into(),
            "--nle-budget".into(),
            "200".into(),
            "--trace-every".into(),
            "1".into(),
            "--mll-k".into(),
            "5".into(),
            "--samples".into(),
            "5".into(),
        ]
    };
    let args = base(&from_file);
    let res = run(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let lr_of = |dir: &Path| -> f64 {
        let trace = read(dir.join("trace.csv"));
        body(&trace)[1].split(',').nth(4).unwrap().parse().unwrap()
    };
    assert_eq!(lr_of(&from_file), 0.05);
    assert_eq!(body(&read(from_file.join("coordinates.csv")))[0], "tip,dim0,dim1,dim2");

    let overridden = dir.path().join("b");
    let mut args = base(&overridden);
    args.extend(["--lr".to_string(), "0.02".into()]);
    let res = run(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&res), 0);
    assert_eq!(lr_of(&overridden), 0.02);

    fs::write(&cfg, "learning_rate = 0.05\n").unwrap();
    let res = run(&base(&dir.path().join("c")).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&res), 2);
}

#[test]
fn bench_appends_to_existing_report() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("grid.txt");
    fs::write(
        &spec,
        format!(
            "datasets = fx:{}\nestimator = loo\nk = 2\ndim = 2\nseeds = 1, 2\nnle_budget = 400\nmll_k = 5\n",
            fixture().display()
        ),
    )
    .unwrap();
    let out = dir.path().join("bench");
    for _ in 0..2 {
        let res = run(&["bench", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    }
    let report = read(out.join("report.csv"));
    let rows = body(&report);
    assert!(rows[0].starts_with("dataset,space,dim"));
    assert_eq!(rows.len(), 1 + 4);
    assert!(rows[1..].iter().all(|r| r.contains(",ok,")));
    assert_eq!(report.lines().filter(|l| l.starts_with('#')).count(), 1);
    assert_eq!(body(&read(out.join("summary.csv"))).len(), 1 + 2);
}

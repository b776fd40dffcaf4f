use std::path::Path;
use std::process::{Command, Output};

use polyreg_core::motion::{read_flo, write_flo, FlowMap};
use polyreg_core::{CoefficientVector, DomainGrid, FixedDecoder, ModelSpec};

fn polyreg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polyreg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = polyreg(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn numbers(line: &str) -> Vec<f64> {
    line.split_whitespace().skip(1).map(|v| v.parse().unwrap()).collect()
}

#[test]
fn lse_fit_of_a_noiseless_dump_recovers_theta() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen", "--scheme", "eval", "--ratio", "0", "--noise", "0", "--count", "4", "--precision", "f64", "--seed", "3", "-o", "pairs.bin"]);
    for index in ["0", "3"] {
        let out = ok(d, &["fit", "-i", "pairs.bin", "--index", index, "--method", "lse"]);
        let line = |key: &str| out.lines().find(|l| l.starts_with(key)).unwrap().to_string();
        let theta = numbers(&line("theta:"));
        let truth = numbers(&line("theta_true:"));
        assert_eq!(theta.len(), 5);
        for (a, b) in theta.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}

#[test]
fn bench_is_reproducible_and_rerunnable_from_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = ["bench", "--spec", "scalar", "--methods", "lse,ransac,irwls", "--seed", "7", "--trials", "6"];
    ok(d, &[&args[..], &["-o", "a.csv"]].concat());
    ok(d, &[&args[..], &["-o", "b.csv"]].concat());
    let a = std::fs::read(d.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.csv")).unwrap());
    assert!(d.join("a.txt").exists());

    ok(d, &["bench", "--config", "a.csv.manifest", "-o", "c.csv"]);
    assert_eq!(a, std::fs::read(d.join("c.csv")).unwrap());
    // a flag overrides the file
    ok(d, &["bench", "--config", "a.csv.manifest", "--seed", "8", "-o", "e.csv"]);
    assert_ne!(a, std::fs::read(d.join("e.csv")).unwrap());
}

#[test]
fn motion_fit_reproduces_a_parametric_flow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (w, h) = (40, 30);
    let theta = CoefficientVector(vec![1.5, -0.8, 0.6, 0.3, -0.4, 0.2, 0.1, -0.15, 0.05, 0.12, -0.07, 0.09]);
    let decoder = FixedDecoder::new(ModelSpec::quadratic_motion(), DomainGrid::lattice(h, w).unwrap()).unwrap();
    let field = decoder.decode(&theta).unwrap();
    let flow = FlowMap::new(w, h, field.values().iter().map(|&v| v as f32).collect()).unwrap();
    write_flo(&flow, &d.join("in.flo")).unwrap();

    let out = ok(d, &["motion-fit", "-i", "in.flo", "--method", "lse", "-o", "param.flo", "--residual", "res.csv"]);
    assert!(out.contains("theta:"));
    let param = read_flo(&d.join("param.flo")).unwrap();
    assert_eq!((param.width, param.height), (w, h));
    for (a, b) in param.data.iter().zip(&flow.data) {
        assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
    }
    let rows = std::fs::read_to_string(d.join("res.csv")).unwrap();
    assert_eq!(rows.lines().count(), h);
    assert!(d.join("param.flo.manifest").exists());
}

#[test]
fn train_writes_checkpoint_manifest_and_curve_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = [
        "train", "--grid", "16", "--channels", "4", "--levels", "2", "--head-planes", "2", "--steps", "4", "--batch-size", "4", "--seed", "5",
    ];
    ok(d, &[&args[..], &["-o", "a.ckpt"]].concat());
    ok(d, &[&args[..], &["-o", "b.ckpt"]].concat());
    let read = |p: &str| std::fs::read(d.join(p)).unwrap();
    assert_eq!(read("a.ckpt"), read("b.ckpt"));
    assert_eq!(read("a.ckpt.loss.csv"), read("b.ckpt.loss.csv"));
    let curve = String::from_utf8(read("a.ckpt.loss.csv")).unwrap();
    assert!(curve.starts_with("step,loss,phase\n"));
    assert_eq!(curve.lines().count(), 5);

    ok(d, &["train", "--config", "a.ckpt.manifest", "-o", "c.ckpt"]);
    assert_eq!(read("a.ckpt"), read("c.ckpt"));

    // the checkpoint plugs into fit and bench
    ok(d, &["gen", "--grid", "16", "--count", "2", "-o", "p.bin"]);
    let out = ok(d, &["fit", "-i", "p.bin", "--checkpoint", "a.ckpt"]);
    assert!(out.contains("FullNet"));
    ok(d, &["bench", "--grid", "16", "--methods", "lse", "--checkpoint", "a.ckpt", "--trials", "2", "-o", "r.csv"]);
    let table = String::from_utf8(read("r.csv")).unwrap();
    assert!(table.contains("FullNet"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(polyreg(d, &["--help"]).status.code(), Some(0));
    assert_eq!(polyreg(d, &["bench", "--help"]).status.code(), Some(0));
    assert_eq!(polyreg(d, &["bench", "--no-such-flag", "-o", "x"]).status.code(), Some(2));
    assert_eq!(polyreg(d, &[]).status.code(), Some(2));
    assert_eq!(polyreg(d, &["bench", "--methods", "magic", "-o", "x.csv"]).status.code(), Some(2));
    assert_eq!(polyreg(d, &["fit", "-i", "missing.bin"]).status.code(), Some(1));
    // an unreadable checkpoint is a runtime failure
    let out = polyreg(d, &["bench", "--checkpoint", "missing.ckpt", "-o", "x.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

use std::path::Path;
use std::process::{Command, Output};

use lpom::datasets::write_mnist;
use lpom::{Checkpoint, LabeledDataset, Matrix};

fn lpom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpom")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn train_blobs(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--dataset",
        "blobs",
        "--arch",
        "6,5,3",
        "--batch-size",
        "20",
        "--seed",
        "2",
    ];
    args.extend_from_slice(extra);
    args.extend_from_slice(&["--out-dir", out.to_str().unwrap()]);
    lpom(&args)
}

#[test]
fn zero_epochs_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_blobs(dir.path(), &["--epochs", "0"]);
    assert!(o.status.success(), "{o:?}");
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv, "epoch,train_acc,test_acc,objective_mean,wall_seconds\n");
    assert!(dir.path().join("model.lpomckpt").is_file());
    assert!(dir.path().join("manifest.json").is_file());
}

#[test]
fn bad_flags_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    for extra in [
        &["--activation", "swish"][..],
        &["--arch", "6"][..],
        &["--mu", "-1"][..],
        &["--method", "sgd", "--momentum", "1.5"][..],
    ] {
        let o = train_blobs(dir.path(), extra);
        assert_eq!(o.status.code(), Some(2), "{extra:?}: {o:?}");
    }
    let o = lpom(&["train", "--dataset", "mnist", "--data-dir", "/nonexistent"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_then_eval_and_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let o = train_blobs(dir.path(), &["--epochs", "3"]);
    assert!(o.status.success(), "{o:?}");
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let last: Vec<&str> = csv.lines().last().unwrap().split(',').collect();
    assert_eq!(last[0], "3");

    let ckpt = dir.path().join("model.lpomckpt");
    let ckpt_s = ckpt.to_str().unwrap();
    let o = lpom(&["eval", "--checkpoint", ckpt_s, "--dataset", "blobs", "--split", "train"]);
    assert!(o.status.success(), "{o:?}");
    let acc: f64 = stdout(&o).trim().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let o = lpom(&["diagnose", "--checkpoint", ckpt_s, "--kv"]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    let rho = kv_value(&text, "rho");
    assert!(text.contains("kind=tau value=0.05 status=PASS"), "{text}");

    // Scaling every weight by 100 scales rho by 1e4.
    let mut loaded = Checkpoint::load(&ckpt).unwrap();
    loaded.weights = loaded.weights.scaled(100.0).unwrap();
    let big = dir.path().join("big.lpomckpt");
    loaded.save(&big).unwrap();
    let o = lpom(&["diagnose", "--checkpoint", big.to_str().unwrap(), "--kv"]);
    let scaled = kv_value(&stdout(&o), "rho");
    assert!((scaled / rho - 1e4).abs() < 1e-6 * 1e4);
    assert!(stdout(&o).contains("kind=rho value") && stdout(&o).contains("status=WARN"));
}

fn kv_value(text: &str, kind: &str) -> f64 {
    let line = text.lines().find(|l| l.contains(&format!("kind={kind} "))).unwrap();
    line.split_whitespace()
        .find_map(|f| f.strip_prefix("value="))
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn eval_rejects_mismatched_inputs_and_corrupt_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    assert!(train_blobs(dir.path(), &["--epochs", "1"]).status.success());
    let ckpt = dir.path().join("model.lpomckpt");

    // A 2×2 "MNIST" set has 4 features; the network expects 6.
    let mnist = dir.path().join("mnist");
    std::fs::create_dir(&mnist).unwrap();
    let tiny = LabeledDataset::new(
        Matrix::from_fn(4, 3, |i, j| ((i + j) % 2) as f64).unwrap(),
        vec![0, 1, 2],
        10,
    )
    .unwrap();
    for (img, lbl) in [
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    ] {
        write_mnist(&tiny, 2, 2, mnist.join(img), mnist.join(lbl)).unwrap();
    }
    let o = lpom(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--dataset",
        "mnist",
        "--data-dir",
        mnist.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{o:?}");

    let bad = dir.path().join("bad.lpomckpt");
    std::fs::write(&bad, b"LPOMCKPT\x01").unwrap();
    let o = lpom(&["eval", "--checkpoint", bad.to_str().unwrap(), "--dataset", "blobs"]);
    assert_eq!(o.status.code(), Some(1), "{o:?}");
}

#[test]
fn sgd_runs_from_the_same_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(train_blobs(&a, &["--epochs", "0"]).status.success());
    assert!(train_blobs(&b, &["--epochs", "0", "--method", "sgd"]).status.success());
    assert_eq!(
        std::fs::read(a.join("model.lpomckpt")).unwrap(),
        std::fs::read(b.join("model.lpomckpt")).unwrap()
    );
}

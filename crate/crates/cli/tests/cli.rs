use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_switchnet");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/data")
        .join(name)
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    run(dir, args).status.code().expect("exit code")
}

/// Report value of `metric` (and `convention`, if given) from a TSV report.
fn report_value(path: &Path, metric: &str, convention: Option<&str>) -> f64 {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .find(|l| {
            l.contains(&format!("metric={metric}\t"))
                && convention.is_none_or(|c| l.contains(&format!("convention={c}\t")))
        })
        .and_then(|l| l.split('\t').find_map(|f| f.strip_prefix("value=")))
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| panic!("no {metric} in {text}"))
}

fn synthetic(dir: &Path, n: &str) {
    ok(
        dir,
        &[
            "--seed",
            "7",
            "--out-dir",
            "d",
            "gen-data",
            "synthetic",
            "--n",
            n,
            "--count",
            "3000",
            "--test-count",
            "500",
        ],
    );
}

fn train_small(dir: &Path, out: &str) {
    ok(
        dir,
        &[
            "--seed",
            "3",
            "--out-dir",
            out,
            "train",
            "--data",
            "d/dataset.txt",
            "--arch",
            "two",
            "--m1",
            "2",
            "--l",
            "3",
            "--m2",
            "3",
            "--epochs",
            "4",
            "--batch",
            "250",
            "--checkpoint-every",
            "2",
        ],
    );
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synthetic(p, "6");
    let first = fs::read(p.join("d/dataset.txt")).unwrap();
    let table = fs::read(p.join("d/table.txt")).unwrap();
    synthetic(p, "6");
    assert_eq!(fs::read(p.join("d/dataset.txt")).unwrap(), first);
    assert_eq!(fs::read(p.join("d/table.txt")).unwrap(), table);
    assert!(p.join("d/test.txt").exists());
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("switchnet-dataset v1 n=6 count=3000"));
}

#[test]
fn training_reruns_give_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synthetic(p, "5");
    train_small(p, "a");
    train_small(p, "b");
    for f in [
        "model.ckpt",
        "checkpoint-epoch-00002.ckpt",
        "checkpoint-epoch-00004.ckpt",
        "config.txt",
    ] {
        assert_eq!(
            fs::read(p.join("a").join(f)).unwrap(),
            fs::read(p.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let metrics = fs::read_to_string(p.join("a/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 6);
    assert!(metrics.starts_with("epoch,nll_total,seconds\n0,"));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("a/manifest-train.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 1);
    assert!(manifest["outputs"].as_array().unwrap().len() >= 4);

    // the recorded configuration alone reproduces the run
    fs::write(p.join("replay.txt"), manifest["config"].as_str().unwrap()).unwrap();
    ok(
        p,
        &[
            "--out-dir",
            "c",
            "--config",
            "replay.txt",
            "train",
            "--data",
            "d/dataset.txt",
        ],
    );
    assert_eq!(
        fs::read(p.join("a/model.ckpt")).unwrap(),
        fs::read(p.join("c/model.ckpt")).unwrap()
    );
}

#[test]
fn argument_errors_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synthetic(p, "4");
    let args = [
        "--out-dir",
        "r",
        "train",
        "--data",
        "d/dataset.txt",
        "--arch",
        "single",
        "--m",
        "2",
        "--l",
        "3",
    ];
    assert_eq!(code(p, &args), 1);
    assert!(!p.join("r/model.ckpt").exists());
    assert_eq!(code(p, &["train"]), 1);
    assert_eq!(code(p, &["frobnicate"]), 1);
    assert_eq!(code(p, &["--help"]), 0);
    let mcmc_single = [
        "train",
        "--data",
        "d/dataset.txt",
        "--arch",
        "single",
        "--m",
        "2",
        "--grad-mode",
        "mcmc",
    ];
    assert_eq!(code(p, &mcmc_single), 1);

    fs::write(p.join("bad.txt"), "arch = two\nwidth = 3\n").unwrap();
    assert_eq!(code(p, &["--config", "bad.txt", "train", "--data", "d/dataset.txt"]), 1);
}

#[test]
fn data_errors_exit_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synthetic(p, "4");
    assert_eq!(
        code(p, &["train", "--data", "missing.txt", "--arch", "single", "--m", "1"]),
        2
    );

    ok(
        p,
        &[
            "--out-dir",
            "r",
            "train",
            "--data",
            "d/dataset.txt",
            "--arch",
            "single",
            "--m",
            "2",
            "--epochs",
            "1",
        ],
    );
    let mut bytes = fs::read(p.join("r/model.ckpt")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 4;
    fs::write(p.join("broken.ckpt"), &bytes).unwrap();
    assert_eq!(code(p, &["sample", "--model", "broken.ckpt"]), 2);

    ok(
        p,
        &[
            "--seed",
            "1",
            "--out-dir",
            "e",
            "gen-data",
            "synthetic",
            "--n",
            "5",
            "--count",
            "10",
        ],
    );
    let mismatch = [
        "eval",
        "table-metrics",
        "--model",
        "r/model.ckpt",
        "--table",
        "e/table.txt",
    ];
    assert_eq!(code(p, &mismatch), 2);
}

#[test]
fn mcmc_training_runs_on_two_layer() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synthetic(p, "5");
    let out = ok(
        p,
        &[
            "--out-dir",
            "m",
            "train",
            "--data",
            "d/dataset.txt",
            "--arch",
            "two",
            "--m1",
            "2",
            "--l",
            "20",
            "--m2",
            "2",
            "--epochs",
            "1",
            "--batch",
            "1000",
            "--grad-mode",
            "mcmc",
            "--r",
            "2",
            "--t",
            "3",
        ],
    );
    assert!(out.contains("epoch     1"));
    let exact = [
        "train",
        "--data",
        "d/dataset.txt",
        "--arch",
        "two",
        "--m1",
        "2",
        "--l",
        "20",
        "--m2",
        "2",
    ];
    assert_eq!(code(p, &exact), 1);
}

#[test]
fn sampling_formats() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synthetic(p, "4");
    ok(
        p,
        &[
            "--out-dir",
            "r",
            "train",
            "--data",
            "d/dataset.txt",
            "--arch",
            "single",
            "--m",
            "2",
            "--epochs",
            "2",
        ],
    );
    ok(
        p,
        &[
            "--seed",
            "9",
            "--out-dir",
            "s1",
            "sample",
            "--model",
            "r/model.ckpt",
            "--count",
            "50",
        ],
    );
    ok(
        p,
        &[
            "--seed",
            "9",
            "--out-dir",
            "s2",
            "sample",
            "--model",
            "r/model.ckpt",
            "--count",
            "50",
        ],
    );
    let a = fs::read(p.join("s1/samples.txt")).unwrap();
    assert_eq!(a, fs::read(p.join("s2/samples.txt")).unwrap());
    assert!(String::from_utf8(a)
        .unwrap()
        .starts_with("switchnet-dataset v1 n=4 count=50"));

    // n = 4 is a 2×2 image
    ok(
        p,
        &[
            "--out-dir",
            "s1",
            "sample",
            "--model",
            "r/model.ckpt",
            "--format",
            "pgm-grid",
            "--count",
            "4",
        ],
    );
    let pgm = fs::read(p.join("s1/samples.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n7 7\n255\n"));
    assert_eq!(pgm.len(), b"P5\n7 7\n255\n".len() + 49);
    assert_eq!(code(p, &["sample", "--model", "r/model.ckpt", "--format", "words"]), 1);
}

#[test]
fn word_pipeline_and_dictionary_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let words = fixture("words-10k.txt");
    let words = words.to_str().unwrap();
    ok(p, &["--out-dir", "w", "gen-data", "words", "--input", words]);
    let head = fs::read_to_string(p.join("w/dataset.txt")).unwrap();
    assert!(head.starts_with("switchnet-dataset v1 n=40 count=10000"));

    ok(
        p,
        &[
            "--out-dir",
            "e",
            "eval",
            "dict-ratio",
            "--samples",
            words,
            "--lexicon",
            words,
        ],
    );
    assert_eq!(report_value(&p.join("e/dict-ratio.tsv"), "dict_ratio", None), 1.0);

    ok(
        p,
        &[
            "--out-dir",
            "w",
            "train",
            "--data",
            "w/dataset.txt",
            "--arch",
            "single",
            "--m",
            "1",
            "--epochs",
            "1",
        ],
    );
    ok(
        p,
        &[
            "--out-dir",
            "w",
            "sample",
            "--model",
            "w/model.ckpt",
            "--format",
            "words",
            "--count",
            "20",
        ],
    );
    let sampled = fs::read_to_string(p.join("w/samples-words.txt")).unwrap();
    assert_eq!(sampled.lines().count(), 20);
    ok(
        p,
        &[
            "--out-dir",
            "e",
            "eval",
            "dict-ratio",
            "--samples",
            "w/samples-words.txt",
            "--lexicon",
            words,
        ],
    );
    let r = report_value(&p.join("e/dict-ratio.tsv"), "dict_ratio", None);
    assert!((0.0..=1.0).contains(&r));
}

#[test]
fn mnist_ingestion_full_size() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let images = fixture("mnist-2k-images-idx3-ubyte.gz");
    ok(
        p,
        &[
            "--out-dir",
            "m",
            "gen-data",
            "mnist",
            "--images",
            images.to_str().unwrap(),
            "--limit",
            "20",
        ],
    );
    let text = fs::read_to_string(p.join("m/dataset.txt")).unwrap();
    assert!(text.starts_with("switchnet-dataset v1 n=784 count=20"));
}

#[test]
fn test_nll_agrees_with_exact_expectation() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(
        p,
        &[
            "--seed",
            "4",
            "--out-dir",
            "d",
            "gen-data",
            "synthetic",
            "--n",
            "6",
            "--count",
            "2000",
            "--test-count",
            "40000",
        ],
    );
    ok(
        p,
        &[
            "--out-dir",
            "r",
            "train",
            "--data",
            "d/dataset.txt",
            "--arch",
            "single",
            "--m",
            "2",
            "--epochs",
            "3",
            "--batch",
            "200",
            "--lr",
            "1",
        ],
    );
    ok(
        p,
        &[
            "--out-dir",
            "r",
            "eval",
            "table-metrics",
            "--model",
            "r/model.ckpt",
            "--table",
            "d/table.txt",
        ],
    );
    ok(
        p,
        &[
            "--out-dir",
            "r",
            "eval",
            "test-nll",
            "--model",
            "r/model.ckpt",
            "--data",
            "d/test.txt",
        ],
    );
    let exact = report_value(&p.join("r/table-metrics.tsv"), "expected_nll", None);
    let sampled = report_value(&p.join("r/test-nll.tsv"), "test_nll", None);
    // Monte-Carlo standard error with 40000 draws is about 0.003 nats here
    assert!((exact - sampled).abs() < 0.02, "{exact} vs {sampled}");
    let tv = report_value(&p.join("r/table-metrics.tsv"), "tv", Some("half-l1"));
    assert!((0.0..=1.0).contains(&tv));
}

#[test]
fn sweep_emits_one_row_per_width() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synthetic(p, "5");
    ok(
        p,
        &[
            "--out-dir",
            "s",
            "eval",
            "sweep",
            "--train",
            "d/dataset.txt",
            "--test",
            "d/test.txt",
            "--ms",
            "1,2",
            "--epochs",
            "2",
            "--batch",
            "500",
            "--lr",
            "1",
        ],
    );
    let csv = fs::read_to_string(p.join("s/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "m,epochs,train_nll,test_nll");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,2,") && lines[2].starts_with("2,2,"));
}

#[test]
fn gradcheck_reports_and_guards_budget() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = ok(
        p,
        &[
            "--out-dir",
            "g",
            "gradcheck",
            "--instances",
            "6",
            "--l",
            "4",
            "--m1",
            "2",
            "--m2",
            "2",
            "--batch",
            "32",
            "--trials",
            "20",
            "--r",
            "1,10,50",
        ],
    );
    assert!(out.contains("PASS finite differences"));
    let table = fs::read_to_string(p.join("g/gradcheck-mcmc.csv")).unwrap();
    let errors: Vec<f64> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(errors.len(), 3);
    assert!(errors[0] > errors[1] && errors[1] > errors[2]);
    assert_eq!(
        fs::read_to_string(p.join("g/gradcheck-fd.csv"))
            .unwrap()
            .lines()
            .count(),
        7
    );

    let refused = run(p, &["gradcheck", "--l", "12"]);
    assert_eq!(refused.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("smaller --l"));
}

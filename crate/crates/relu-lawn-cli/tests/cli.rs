//! End-to-end checks of the binary: artifact pipelines, CSV shapes, exit
//! codes, and byte-level reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_relu-lawn"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str]) -> i32 {
    bin().args(args).output().expect("spawn").status.code().unwrap_or(-1)
}

fn write_identity_net(dir: &Path) -> PathBuf {
    let path = dir.join("net.json");
    std::fs::write(
        &path,
        r#"{
  "activation": "relu",
  "layers": [
    {"weight": [[1.0, 0.0], [0.0, 1.0]], "bias": [0.0, 0.0]},
    {"weight": [[1.0, 1.0]], "bias": [0.0]}
  ]
}"#,
    )
    .unwrap();
    path
}

fn write_standard_gmm(dir: &Path) -> PathBuf {
    let path = dir.join("gmm.json");
    std::fs::write(
        &path,
        r#"{
  "weights": [1.0],
  "means": [[0.0, 0.0]],
  "covariances": [[[1.0, 0.0], [0.0, 1.0]]],
  "kind": "diagonal"
}"#,
    )
    .unwrap();
    path
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    (header, rows)
}

#[test]
fn pmf_exhaustive_partitions_unity_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let net = write_identity_net(dir.path());
    let gmm = write_standard_gmm(dir.path());
    let out_dir = dir.path().join("run1");
    let args = |out: &Path| {
        vec![
            "pmf".to_string(),
            format!("--net={}", net.display()),
            format!("--gmm={}", gmm.display()),
            "--exhaustive".to_string(),
            "--budget=2048".to_string(),
            "--seed=9".to_string(),
            format!("--out-dir={}", out.display()),
        ]
    };
    let a1: Vec<&str> = Vec::new();
    drop(a1);
    run_ok(&args(&out_dir).iter().map(String::as_str).collect::<Vec<_>>());

    let (header, rows) = read_rows(&out_dir.join("pmf.csv"));
    assert_eq!(
        header,
        vec!["pattern_bits", "pattern_decimal", "probability", "std_error"]
    );
    assert_eq!(rows.len(), 4);
    let total: f64 = rows.iter().map(|r| r[2].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-3, "total {total}");

    // Same inputs, same seed: byte-identical CSV.
    let out_dir2 = dir.path().join("run2");
    run_ok(&args(&out_dir2).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(
        std::fs::read(out_dir.join("pmf.csv")).unwrap(),
        std::fs::read(out_dir2.join("pmf.csv")).unwrap()
    );

    // Manifest records the seed and hashes both inputs.
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest-pmf.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "pmf");
    assert_eq!(manifest["parameters"]["quadrature"]["seed"], 9);
    assert_eq!(manifest["input_hashes"].as_object().unwrap().len(), 2);
}

#[test]
fn output_cdf_grid_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let net = write_identity_net(dir.path());
    let gmm = write_standard_gmm(dir.path());
    let out = dir.path().join("cdf");
    run_ok(&[
        "output-cdf",
        &format!("--net={}", net.display()),
        &format!("--gmm={}", gmm.display()),
        "--exhaustive",
        "--grid=-1:3:9",
        "--budget=2048",
        &format!("--out-dir={}", out.display()),
    ]);
    let (header, rows) = read_rows(&out.join("cdf.csv"));
    assert_eq!(header, vec!["phi_0", "cdf_value", "std_error"]);
    assert_eq!(rows.len(), 9);
    let values: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    for pair in values.windows(2) {
        assert!(pair[1] >= pair[0] - 1e-6, "not monotone: {values:?}");
    }
}

#[test]
fn support_coverage_svdist_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let net = write_identity_net(dir.path());
    let gmm = write_standard_gmm(dir.path());
    let out = dir.path().join("sup");
    run_ok(&[
        "support",
        &format!("--net={}", net.display()),
        &format!("--gmm={}", gmm.display()),
        "--tau=0.4",
        "--cap=10",
        &format!("--out-dir={}", out.display()),
    ]);
    let support_csv = out.join("support.csv");
    let (header, rows) = read_rows(&support_csv);
    assert_eq!(header, vec!["pattern_bits", "pattern_decimal", "diag_weight"]);
    // Standard normal marginals are exactly 0.5: everything stays free.
    assert_eq!(rows.len(), 4);

    // Coverage of a small labeled set against that support file.
    let data_csv = dir.path().join("points.csv");
    std::fs::write(&data_csv, "x0,x1,label\n1.0,1.0,0\n-1.0,2.0,1\n0.5,-0.2,0\n").unwrap();
    run_ok(&[
        "coverage",
        &format!("--net={}", net.display()),
        &format!("--support={}", support_csv.display()),
        &format!("--data={}", data_csv.display()),
        &format!("--out-dir={}", out.display()),
    ]);
    let (_, rows) = read_rows(&out.join("coverage.csv"));
    assert_eq!(rows[0][2], "1");

    // Singular-value histogram weighted by the support's diag weights.
    run_ok(&[
        "sv-dist",
        &format!("--net={}", net.display()),
        &format!("--patterns={}", support_csv.display()),
        "--bins=10",
        &format!("--out-dir={}", out.display()),
    ]);
    let (header, rows) = read_rows(&out.join("sv-hist.csv"));
    assert_eq!(header, vec!["bin_lo", "bin_hi", "mass"]);
    assert_eq!(rows.len(), 10);
    let mass: f64 = rows.iter().map(|r| r[2].parse::<f64>().unwrap()).sum();
    assert!((mass - 1.0).abs() < 1e-9, "mass {mass}");
}

#[test]
fn train_moons_then_validate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("moons");
    run_ok(&[
        "train-moons",
        "--n=400",
        "--epochs=5",
        &format!("--out-dir={}", out.display()),
    ]);
    assert!(out.join("moons-net.json").exists());
    assert!(out.join("moons-train.csv").exists());
    assert!(out.join("moons-test.csv").exists());
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("manifest-train-moons.json")).unwrap(),
    )
    .unwrap();
    assert!(manifest["parameters"]["test_accuracy"].as_f64().unwrap() > 0.5);

    // Fit a class GMM from the emitted training data and validate the PMF
    // against a small Monte Carlo run.
    run_ok(&[
        "fit-gmm",
        &format!("--data={}", out.join("moons-train.csv").display()),
        "--components=3",
        "--label=0",
        &format!("--out-dir={}", out.display()),
    ]);
    let gmm = out.join("gmm-class0.json");
    assert!(gmm.exists());
    run_ok(&[
        "mc-validate",
        &format!("--net={}", out.join("moons-net.json").display()),
        &format!("--gmm={}", gmm.display()),
        "--samples=20000",
        "--budget=1024",
        &format!("--out-dir={}", out.display()),
    ]);
    let (_, rows) = read_rows(&out.join("mc-validate.csv"));
    let metric = |name: &str| -> f64 {
        rows.iter()
            .find(|r| r[0] == name)
            .unwrap_or_else(|| panic!("missing metric {name}"))[1]
            .parse()
            .unwrap()
    };
    // Loose sanity bounds at this sample count.
    assert!(metric("tv_distance") < 0.05);
    assert!(metric("cdf_sup_gap") < 0.05);

    // Class Gaussian and tail rates round out the pipeline.
    run_ok(&[
        "class-gaussian",
        &format!("--data={}", out.join("moons-train.csv").display()),
        "--label=1",
        &format!("--out-dir={}", out.display()),
    ]);
    assert!(out.join("gaussian-class1.json").exists());
    run_ok(&[
        "fit-gmm",
        &format!("--data={}", out.join("moons-train.csv").display()),
        "--components=3",
        "--label=1",
        &format!("--out-dir={}", out.display()),
    ]);
    run_ok(&[
        "tail-rates",
        &format!("--net={}", out.join("moons-net.json").display()),
        &format!("--gmm0={}", gmm.display()),
        &format!("--gmm1={}", out.join("gmm-class1.json").display()),
        "--budget=1024",
        &format!("--out-dir={}", out.display()),
    ]);
    let (_, rows) = read_rows(&out.join("tail-rates.csv"));
    assert_eq!(rows.len(), 2);
    for row in &rows {
        let rate: f64 = row[1].parse().unwrap();
        assert!((0.0..=1.0).contains(&rate));
    }
}

#[test]
fn train_mnist_on_synthetic_idx_files() {
    let dir = tempfile::tempdir().unwrap();
    // 40 tiny 4x4 images over 2 classes: class c has pixel intensity c.
    let n = 40u32;
    let mut img = Vec::new();
    img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    img.extend_from_slice(&n.to_be_bytes());
    img.extend_from_slice(&4u32.to_be_bytes());
    img.extend_from_slice(&4u32.to_be_bytes());
    let mut lab = Vec::new();
    lab.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    for i in 0..n {
        let class = (i % 2) as u8;
        for p in 0..16u8 {
            img.push(if (p + class).is_multiple_of(2) { 220 } else { 30 });
        }
        lab.push(class);
    }
    let img_path = dir.path().join("train-images.idx");
    let lab_path = dir.path().join("train-labels.idx");
    std::fs::write(&img_path, &img).unwrap();
    std::fs::write(&lab_path, &lab).unwrap();

    let out = dir.path().join("mnist");
    run_ok(&[
        "train-mnist",
        &format!("--train-images={}", img_path.display()),
        &format!("--train-labels={}", lab_path.display()),
        "--widths=4,4",
        "--epochs=3",
        &format!("--out-dir={}", out.display()),
    ]);
    assert!(out.join("mnist-net.json").exists());
}

#[test]
fn output_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let net = write_identity_net(dir.path());
    let gmm = write_standard_gmm(dir.path());
    let run = |threads: &str, out: &Path| {
        run_ok(&[
            "pmf",
            &format!("--net={}", net.display()),
            &format!("--gmm={}", gmm.display()),
            "--exhaustive",
            "--budget=2048",
            "--seed=3",
            &format!("--threads={threads}"),
            &format!("--out-dir={}", out.display()),
        ]);
    };
    let one = dir.path().join("t1");
    let two = dir.path().join("t2");
    run("1", &one);
    run("2", &two);
    assert_eq!(
        std::fs::read(one.join("pmf.csv")).unwrap(),
        std::fs::read(two.join("pmf.csv")).unwrap()
    );
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let net = write_identity_net(dir.path());
    let gmm = write_standard_gmm(dir.path());

    // Unknown flag: usage error.
    assert_eq!(exit_code(&["pmf", "--bogus"]), 1);
    // Missing mode selection: usage error.
    assert_eq!(
        exit_code(&[
            "pmf",
            &format!("--net={}", net.display()),
            &format!("--gmm={}", gmm.display()),
        ]),
        1
    );

    // Unreadable/invalid data: exit 2.
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{not json").unwrap();
    assert_eq!(
        exit_code(&[
            "pmf",
            &format!("--net={}", bad.display()),
            &format!("--gmm={}", gmm.display()),
            "--exhaustive",
        ]),
        2
    );
    assert_eq!(
        exit_code(&[
            "pmf",
            &format!("--net={}", dir.path().join("missing.json").display()),
            &format!("--gmm={}", gmm.display()),
            "--exhaustive",
        ]),
        2
    );

    // Capacity overflow: exit 3.
    assert_eq!(
        exit_code(&[
            "pmf",
            &format!("--net={}", net.display()),
            &format!("--gmm={}", gmm.display()),
            "--exhaustive",
            "--max-bits=1",
        ]),
        3
    );

    // Help is a success.
    assert_eq!(exit_code(&["--help"]), 0);
}

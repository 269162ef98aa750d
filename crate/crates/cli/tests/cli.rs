use std::path::Path;
use std::process::{Command, Output};

fn famdrift(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_famdrift"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = famdrift(args, cwd);
    assert!(
        out.status.success(),
        "famdrift {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TINY_TRAIN: [&str; 6] = ["--dims", "8,6,3", "--epochs", "3", "--batch", "16"];

fn synth(dir: &Path) {
    ok(
        &[
            "synth", "--families", "3", "--dim", "8", "--per-family", "40", "--seed", "7", "--out",
            "data.csv",
        ],
        dir,
    );
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    ok(&["prep", "--input", "data.csv", "--out-dir", "prep"], dir);
    for f in ["mask.txt", "train.csv", "test.csv"] {
        assert!(dir.join("prep").join(f).exists(), "{f}");
    }

    let mut train = vec![
        "train", "--input", "prep/train.csv", "--mask", "prep/mask.txt", "--out", "net.bin",
        "--loss-curve", "curve.csv",
    ];
    train.extend(TINY_TRAIN);
    ok(&train, dir);
    let curve = std::fs::read_to_string(dir.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 3, "{curve}");

    let report = ok(
        &["cluster", "--model", "net.bin", "--input", "prep/train.csv", "--out", "fam.bin", "--report"],
        dir,
    );
    for family in ["family_00", "family_01", "family_02"] {
        assert!(report.contains(family), "{report}");
    }

    for mode in ["dbscan", "mad"] {
        let out = format!("verdicts_{mode}.csv");
        ok(
            &[
                "detect", "--model", "net.bin", "--family-model", "fam.bin", "--input", "prep/test.csv",
                "--threshold-mode", mode, "--out", &out,
            ],
            dir,
        );
        let text = std::fs::read_to_string(dir.join(&out)).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("sample_index,verdict,nearest_family,nearest_cluster,distance,threshold")
        );
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 24);
        assert!(rows.iter().all(|r| r.contains(",KNOWN,") || r.contains(",DRIFT,")));
    }

    let mut eval = vec!["eval", "--input", "data.csv", "--out", "report.csv", "--render", "table"];
    eval.extend(TINY_TRAIN);
    let table = ok(&eval, dir);
    assert!(table.contains("Overall"), "{table}");
    let csv = std::fs::read_to_string(dir.join("report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert!(rows[0].starts_with("family,n_known,n_unknown,f1_dbscan,f1_mad"));
    assert_eq!(rows.len(), 1 + 3 + 1);
}

#[test]
fn missing_input_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = famdrift(&["prep", "--input", "nope.csv", "--out-dir", "x"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn malformed_csv_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.csv"), "a,b,family,timestamp\n1,x,f,0\n").unwrap();
    let out = famdrift(&["prep", "--input", "bad.csv", "--out-dir", "x"], tmp.path());
    assert!(!out.status.success());
}

#[test]
fn family_model_from_another_network_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    for (seed, out) in [("1", "a.bin"), ("2", "b.bin")] {
        let mut args = vec!["train", "--input", "data.csv", "--seed", seed, "--out", out];
        args.extend(TINY_TRAIN);
        ok(&args, dir);
    }
    ok(&["cluster", "--model", "a.bin", "--input", "data.csv", "--out", "fam_a.bin"], dir);
    let out = famdrift(
        &[
            "detect", "--model", "b.bin", "--family-model", "fam_a.bin", "--input", "data.csv", "--out",
            "v.csv",
        ],
        dir,
    );
    assert!(!out.status.success());
    assert!(!dir.join("v.csv").exists());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.to_lowercase().contains("hash"), "{stderr}");
}

#[test]
fn eval_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    for out in ["r1.csv", "r2.csv"] {
        let mut args = vec!["eval", "--input", "data.csv", "--out", out];
        args.extend(TINY_TRAIN);
        ok(&args, dir);
    }
    assert_eq!(
        std::fs::read(dir.join("r1.csv")).unwrap(),
        std::fs::read(dir.join("r2.csv")).unwrap()
    );
}

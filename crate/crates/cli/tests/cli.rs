use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dspt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dspt")).args(args).output().unwrap()
}

fn dspt_out(args: &[&str], out: &Path) -> Output {
    let mut full: Vec<&str> = args.to_vec();
    full.extend(["--out", out.to_str().unwrap()]);
    dspt(&full)
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

const SMALL: [&str; 8] = ["--classes", "6", "--dim", "16", "--n-train", "300", "--n-test", "120"];

#[test]
fn gen_data_writes_files_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args: Vec<&str> = ["gen-data", "--seed", "5"]
        .iter()
        .chain(SMALL.iter())
        .copied()
        .collect();
    assert_eq!(code(&dspt_out(&args, &a)), 0);
    assert_eq!(code(&dspt_out(&args, &b)), 0);
    for f in ["train.emb", "test.emb", "anchors.emb", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["command"], "gen-data");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["files"].as_object().unwrap().len(), 3);
    assert!(m["info"]["warnings"].as_array().unwrap().is_empty());

    // a different seed gives different data
    let c = tmp.path().join("c");
    let args: Vec<&str> = ["gen-data", "--seed", "6"]
        .iter()
        .chain(SMALL.iter())
        .copied()
        .collect();
    dspt_out(&args, &c);
    assert_ne!(
        fs::read(a.join("train.emb")).unwrap(),
        fs::read(c.join("train.emb")).unwrap()
    );
}

#[test]
fn gen_data_warns_on_low_dimension() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dspt_out(
        &[
            "gen-data",
            "--classes",
            "10",
            "--dim",
            "4",
            "--n-train",
            "50",
            "--n-test",
            "20",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let m = json(&tmp.path().join("manifest.json"));
    assert_eq!(m["info"]["warnings"].as_array().unwrap().len(), 1);
}

#[test]
fn train_on_generated_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let args: Vec<&str> = ["gen-data"].iter().chain(SMALL.iter()).copied().collect();
    assert_eq!(code(&dspt_out(&args, &data)), 0);
    let run = tmp.path().join("run");
    let o = dspt_out(
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--loss",
            "dspt",
            "--noise",
            "sym:0.4",
        ],
        &run,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    // header plus one row per epoch
    assert_eq!(csv.lines().count(), 51);
    let metrics = json(&run.join("metrics.json"));
    assert_eq!(metrics["loss"], "dspt");
    assert!(run.join("model.ckpt").exists());
    let m = json(&run.join("manifest.json"));
    assert_eq!(m["files"].as_object().unwrap().len(), 3);
}

#[test]
fn train_with_selection() {
    let tmp = tempfile::tempdir().unwrap();
    let args: Vec<&str> = [
        "train",
        "--loss",
        "ce",
        "--noise",
        "pair:0.3",
        "--selection",
        "--epochs",
        "3",
    ]
    .iter()
    .chain(SMALL.iter())
    .copied()
    .collect();
    let o = dspt_out(&args, tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read_to_string(tmp.path().join("metrics.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );
}

#[test]
fn logitclip_needs_tau() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&dspt_out(
            &["train", "--loss", "logitclip", "--epochs", "1"],
            tmp.path()
        )),
        2
    );
    let args: Vec<&str> = ["train", "--loss", "logitclip", "--tau", "0.5", "--epochs", "1"]
        .iter()
        .chain(SMALL.iter())
        .copied()
        .collect();
    assert_eq!(code(&dspt_out(&args, tmp.path())), 0);
}

#[test]
fn audit_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let noisy = tmp.path().join("noisy");
    let args: Vec<&str> = ["audit", "--noise", "sym:0.5"]
        .iter()
        .chain(SMALL.iter())
        .copied()
        .collect();
    assert_eq!(code(&dspt_out(&args, &noisy)), 0);
    assert!(noisy.join("audit_ce.csv").exists());
    assert!(noisy.join("audit_dspt.csv").exists());
    let s = json(&noisy.join("summary.json"));
    assert!(s["separation_factor"].is_f64());

    let clean = tmp.path().join("clean");
    let args: Vec<&str> = ["audit", "--noise", "sym:0"]
        .iter()
        .chain(SMALL.iter())
        .copied()
        .collect();
    assert_eq!(code(&dspt_out(&args, &clean)), 0);
    let s = json(&clean.join("summary.json"));
    assert!(s["separation_factor"].is_null());
    assert!(s["losses"]
        .as_array()
        .unwrap()
        .iter()
        .all(|l| l["noisy_mean"].is_null()));
}

#[test]
fn verify_single_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dspt_out(
        &["verify", "--check", "prop33", "--classes", "101", "--trials", "2000"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("3.63199"), "{stdout}");
    assert!(stdout.contains("4.63199"), "{stdout}");

    // eta beyond 1 - 1/C is outside the theorem
    let o = dspt_out(
        &["verify", "--check", "thm34", "--classes", "2", "--eta", "0.7"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0);
    let reports = json(&tmp.path().join("reports.json"));
    assert_eq!(reports[0]["status"], "not_applicable");
    assert_eq!(reports[0]["pass"], false);
    assert!(reports[0]["worst_violation"].is_null());

    let o = dspt_out(
        &["verify", "--check", "thm35", "--classes", "3", "--noise", "pair:0.3"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn verify_requires_a_check() {
    assert_eq!(code(&dspt(&["verify"])), 2);
    assert_eq!(code(&dspt(&["verify", "--check", "nope"])), 2);
}

#[test]
fn sweep_consolidates_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dspt_out(
        &[
            "sweep",
            "--mode",
            "per-class",
            "--epochs",
            "15",
            "--n-train",
            "1500",
            "--n-test",
            "600",
            "--jobs",
            "2",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(tmp.path().join("sweep.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| &r[col("status")] == "ok"));
    let acc = |loss: &str, eta: &str| -> f64 {
        let r = rows
            .iter()
            .find(|r| &r[col("loss")] == loss && &r[col("eta")] == eta)
            .unwrap();
        r[col("final_acc")].parse().unwrap()
    };
    assert!(acc("dspt", "0.8") >= acc("ce", "0.8"));
    for r in &rows {
        assert!(tmp
            .path()
            .join("runs")
            .join(&r[col("run")])
            .join("metrics.csv")
            .exists());
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    // usage
    assert_eq!(
        code(&dspt_out(&["train", "--lr", "-1", "--epochs", "1"], tmp.path())),
        2
    );
    assert_eq!(code(&dspt_out(&["train", "--noise", "sym:1.5"], tmp.path())), 2);
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[train]\nepochz = 3\n").unwrap();
    assert_eq!(
        code(&dspt_out(&["train", "--config", cfg.to_str().unwrap()], tmp.path())),
        2
    );

    // data
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    for f in ["train.emb", "test.emb", "anchors.emb"] {
        fs::write(data.join(f), b"not an embedding file").unwrap();
    }
    assert_eq!(
        code(&dspt_out(&["train", "--data", data.to_str().unwrap()], tmp.path())),
        3
    );
    let missing = tmp.path().join("missing");
    assert_eq!(
        code(&dspt_out(&["audit", "--data", missing.to_str().unwrap()], tmp.path())),
        3
    );

    // a matrix outside the theorem is reported, not failed
    assert_eq!(
        code(&dspt_out(
            &["verify", "--check", "thm35", "--noise", "pair:0.6"],
            tmp.path()
        )),
        0
    );
}

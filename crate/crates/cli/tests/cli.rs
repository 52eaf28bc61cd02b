use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fragility"))
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().expect("binary runs")
}

// Small deterministic LCG so the fixture does not need an rng crate.
struct Lcg(u64);

impl Lcg {
    fn uniform(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    fn normal(&mut self) -> f64 {
        let (u, v) = (self.uniform(), self.uniform());
        (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
    }
}

/// `duplicate` appends a copy of column `a`.
fn write_csv(dir: &Path, name: &str, n: usize, duplicate: bool) -> PathBuf {
    let mut rng = Lcg(7);
    let mut text = String::from(if duplicate { "a,b,c,a_copy,label\n" } else { "a,b,c,label\n" });
    for _ in 0..n {
        let (a, b, c) = (rng.normal(), rng.normal(), rng.normal());
        let label = (a - 0.5 * b + 0.3 * rng.normal() > 0.0) as u8;
        if duplicate {
            writeln!(text, "{a},{b},{c},{a},{label}").unwrap();
        } else {
            writeln!(text, "{a},{b},{c},{label}").unwrap();
        }
    }
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn clean_audit_exits_zero_with_empty_flags() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(dir.path(), "clean.csv", 300, false);
    let out = dir.path().join("out");
    let r = run(&["audit", "--data", data.to_str().unwrap()], &out);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let report = json(&out.join("audit.json"));
    assert_eq!(report["result"]["flagged"]["high_vif"], serde_json::json!([]));
    assert_eq!(report["result"]["flagged"]["high_corr"], serde_json::json!([]));
    assert_eq!(report["provenance"]["thresholds"]["vif"], 10.0);
    assert!(out.join("vif_table.csv").exists());
    assert!(out.join("clusters.json").exists());
}

#[test]
fn duplicate_column_is_flagged() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(dir.path(), "dup.csv", 300, true);
    let out = dir.path().join("out");
    let r = run(&["audit", "--data", data.to_str().unwrap()], &out);
    assert_eq!(r.status.code(), Some(1));
    let flagged = &json(&out.join("audit.json"))["result"]["flagged"]["high_vif"];
    let names: Vec<&str> = flagged.as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(names.contains(&"a") && names.contains(&"a_copy"), "{names:?}");
    let table = fs::read_to_string(out.join("vif_table.csv")).unwrap();
    assert!(table.lines().any(|l| l.starts_with("a_copy,inf")), "{table}");
}

#[test]
fn unreadable_input_exits_two() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let missing = dir.path().join("missing.csv");
    assert_eq!(run(&["audit", "--data", missing.to_str().unwrap()], &out).status.code(), Some(2));

    let ragged = dir.path().join("ragged.csv");
    fs::write(&ragged, "a,b,label\n1,2,0\n3,1\n").unwrap();
    assert_eq!(run(&["audit", "--data", ragged.to_str().unwrap()], &out).status.code(), Some(2));

    let no_label = dir.path().join("nolabel.csv");
    fs::write(&no_label, "a,b\n1,2\n3,4\n").unwrap();
    assert_eq!(run(&["train", "--data", no_label.to_str().unwrap()], &out).status.code(), Some(2));
}

#[test]
fn bad_flag_values_are_rejected() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(dir.path(), "clean.csv", 100, false);
    let out = dir.path().join("out");
    let d = data.to_str().unwrap();
    assert_eq!(run(&["audit", "--data", d, "--rho-thresh", "1.5"], &out).status.code(), Some(2));
    assert_eq!(run(&["ablate", "--data", d, "--lambdas", "0.1,1"], &out).status.code(), Some(2));
    assert_ne!(run(&["train", "--data", d, "--model", "forest"], &out).status.code(), Some(0));
}

#[test]
fn ablate_writes_one_row_per_lambda() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(dir.path(), "dup.csv", 300, true);
    let out = dir.path().join("out");
    let r = run(
        &["ablate", "--data", data.to_str().unwrap(), "--epochs", "3", "--resamples", "3", "--eval-rows", "30"],
        &out,
    );
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("lambda,accuracy,f1,roc_auc,fragility,tau_top50"));
    let lambdas: Vec<f64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(lambdas, vec![0.0, 0.01, 0.1, 1.0, 10.0]);
}

#[test]
fn zero_lambda_row_matches_plain_training() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(dir.path(), "clean.csv", 300, false);
    let d = data.to_str().unwrap();
    let common = ["--epochs", "4", "--resamples", "3", "--eval-rows", "30"];
    let abl = dir.path().join("abl");
    let mut args = vec!["ablate", "--data", d];
    args.extend(common);
    assert_eq!(run(&args, &abl).status.code(), Some(0));
    let frag = dir.path().join("frag");
    let mut args = vec!["fragility", "--data", d];
    args.extend(common);
    assert_eq!(run(&args, &frag).status.code(), Some(0));

    let row = &json(&abl.join("ablation.json"))["result"]["rows"][0];
    let plain = &json(&frag.join("fragility.json"))["result"];
    assert_eq!(row["lambda"], 0.0);
    let features = plain["features"].as_array().unwrap();
    let mean = features.iter().map(|f| f["fragility"].as_f64().unwrap()).sum::<f64>() / features.len() as f64;
    assert!((row["mean_fragility"].as_f64().unwrap() - mean).abs() <= 1e-12 * mean.max(1.0));

    let sharp = dir.path().join("sharp");
    assert_eq!(run(&["sharp", "--data", d, "--epochs", "4", "--lambda", "0"], &sharp).status.code(), Some(0));
    let train = dir.path().join("train");
    assert_eq!(run(&["train", "--data", d, "--epochs", "4"], &train).status.code(), Some(0));
    assert_eq!(
        fs::read(sharp.join("model.json")).unwrap(),
        fs::read(train.join("model.json")).unwrap()
    );
}

#[test]
fn theorem_check_passes_on_default_grid() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let r = bin().arg("theorem-check").arg("--out").arg(&out).output().unwrap();
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stdout));
    let report = json(&out.join("theorem.json"));
    assert_eq!(report["result"]["passed"], true);
    let grid: Vec<f64> = report["provenance"]["settings"]["grid"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(grid, vec![0.0, 0.9, 0.99, 0.999]);
    assert!(out.join("theorem.csv").exists());
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(dir.path(), "dup.csv", 300, true);
    let d = data.to_str().unwrap();
    for (cmd, file) in [("audit", "audit.json"), ("fragility", "fragility.json"), ("pipeline", "pipeline.json")] {
        let a = dir.path().join(format!("{cmd}-a"));
        let b = dir.path().join(format!("{cmd}-b"));
        let args = [cmd, "--data", d, "--resamples", "3", "--eval-rows", "30"];
        let args: &[&str] = if cmd == "audit" { &args[..3] } else { &args };
        run(args, &a);
        run(args, &b);
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{cmd}");
        assert!(a.join("metadata.json").exists());
    }
}

#[test]
fn pipeline_removes_the_duplicate() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(dir.path(), "dup.csv", 300, true);
    let out = dir.path().join("out");
    let r = run(&["pipeline", "--data", data.to_str().unwrap(), "--resamples", "3"], &out);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let report = json(&out.join("pipeline.json"));
    let removed = report["result"]["removed"].as_array().unwrap();
    assert_eq!(removed.len(), 1);
    let drops = fs::read_to_string(out.join("drops.csv")).unwrap();
    assert!(drops.starts_with("metric,control,hypothesis,drop_percent"));
    assert_eq!(report["provenance"]["seeds"]["seed"], 0);
}

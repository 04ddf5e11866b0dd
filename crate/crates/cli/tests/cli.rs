use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn pfedmb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfedmb"))
        .args(args)
        .env_remove("PFEDMB_OUT")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn final_json(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("final.json")).unwrap()).unwrap()
}

#[test]
fn smoke_run_is_fast_and_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("smoke.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let start = Instant::now();
    let o = pfedmb(&["run", "--config", s(&cfg), "--out", s(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(start.elapsed() < Duration::from_secs(10));
    assert!(pfedmb(&["run", "--config", s(&cfg), "--out", s(&b)]).status.success());
    for f in ["rounds.csv", "final.json", "alpha_trajectory.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let rounds = fs::read_to_string(a.join("rounds.csv")).unwrap();
    assert_eq!(rounds.lines().next(), Some("round,method,mean_test_acc,mean_train_loss"));
    assert_eq!(rounds.lines().count(), 3);
}

#[test]
fn flag_overrides_are_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("smoke.json");
    let o = pfedmb(&[
        "run", "--config", s(&cfg), "--branches", "3", "--epochs", "1", "--shared-alpha", "--out", s(tmp.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = final_json(tmp.path());
    assert_eq!(v["config"]["branches"], 3);
    assert_eq!(v["config"]["epochs"], 1);
    assert_eq!(v["config"]["shared_alpha"], true);
    assert_eq!(v["config"]["batch_size"], 64);
    assert_eq!(v["mean_convention"], "unweighted mean over clients");
    assert_eq!(v["final_alphas"][0][0].as_array().unwrap().len(), 3);
}

#[test]
fn zero_rounds_writes_header_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("smoke.json");
    assert!(pfedmb(&["run", "--config", s(&cfg), "--rounds", "0", "--out", s(tmp.path())]).status.success());
    let rounds = fs::read_to_string(tmp.path().join("rounds.csv")).unwrap();
    assert_eq!(rounds, "round,method,mean_test_acc,mean_train_loss\n");
}

#[test]
fn output_dir_defaults_to_env() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_pfedmb"))
        .args(["run", "--config", s(&configs().join("smoke.json"))])
        .env("PFEDMB_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("final.json").exists());
}

#[test]
fn fedavg_with_branches_fails_naming_the_field() {
    let o = pfedmb(&["run", "--config", s(&configs().join("smoke.json")), "--method", "fedavg"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("branches"), "{}", stderr(&o));
}

#[test]
fn empty_config_lists_missing_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("empty.json");
    fs::write(&cfg, "").unwrap();
    let o = pfedmb(&["run", "--config", s(&cfg)]);
    assert!(!o.status.success());
    let err = stderr(&o);
    for f in ["method", "num_clients", "rounds", "lr_alpha", "lr_w", "data", "partition", "seed"] {
        assert!(err.contains(&format!("{f}: missing")), "{f} missing from {err}");
    }
}

#[test]
fn malformed_config_names_file_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, "{\n  \"method\": \"pfedmb\",\n  \"rounds\": -1\n}\n").unwrap();
    let err = stderr(&pfedmb(&["run", "--config", s(&cfg)]));
    assert!(err.contains("bad.json") && err.contains("line 3"), "{err}");
    let missing = stderr(&pfedmb(&["run", "--config", "/nonexistent/x.json"]));
    assert!(missing.contains("/nonexistent/x.json"), "{missing}");
}

#[test]
fn compare_writes_one_row_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("paired_clusters.json");
    let args = [
        "compare",
        "--config",
        s(&cfg),
        "--methods",
        "local,fedavg,pfedmb_plain_agg,pfedmb",
        "--rounds",
        "3",
        "--out",
        s(tmp.path()),
    ];
    let o = pfedmb(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(tmp.path().join("compare.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "seed,local,fedavg,pfedmb_plain_agg,pfedmb");
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1].split(',').count(), 5);
    assert!(pfedmb(&args).status.success());
    assert_eq!(fs::read_to_string(tmp.path().join("compare.csv")).unwrap(), table);
}

#[test]
fn single_config_compare_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("smoke.json");
    let run_dir = tmp.path().join("run");
    let cmp_dir = tmp.path().join("cmp");
    assert!(pfedmb(&["run", "--config", s(&cfg), "--out", s(&run_dir)]).status.success());
    assert!(pfedmb(&["compare", "--config", s(&cfg), "--out", s(&cmp_dir)]).status.success());
    let inner = cmp_dir.join("pfedmb").join("seed-0");
    for f in ["rounds.csv", "final.json", "alpha_trajectory.csv"] {
        assert_eq!(fs::read(run_dir.join(f)).unwrap(), fs::read(inner.join(f)).unwrap(), "{f}");
    }
    let table = fs::read_to_string(cmp_dir.join("compare.csv")).unwrap();
    assert!(table.starts_with("seed,pfedmb\n0,"));
}

#[test]
fn compare_rejects_mismatched_data() {
    let tmp = tempfile::tempdir().unwrap();
    let other = tmp.path().join("other.json");
    let mut v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(configs().join("smoke.json")).unwrap()).unwrap();
    v["data"]["synthetic"]["noise_std"] = serde_json::json!(0.9);
    fs::write(&other, v.to_string()).unwrap();
    let o = pfedmb(&[
        "compare", "--config", s(&configs().join("smoke.json")), "--with", s(&other), "--out", s(tmp.path()),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("data"), "{}", stderr(&o));
}

#[test]
fn gradcheck_exit_codes() {
    let ok = pfedmb(&["gradcheck"]);
    assert!(ok.status.success());
    let text = String::from_utf8_lossy(&ok.stdout);
    assert!(text.contains("weights:") && text.contains("PASS"));
    let bad = pfedmb(&["gradcheck", "--inject-fault"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
    let single = pfedmb(&["gradcheck", "--branches", "1"]);
    assert!(single.status.success());
    assert!(String::from_utf8_lossy(&single.stdout).contains("alpha: skipped"));
}

#[test]
fn partition_stats_counts_every_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let o = pfedmb(&["partition-stats", "--config", s(&configs().join("dirichlet.json")), "--out", s(tmp.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("partition_stats.csv")).unwrap();
    let mut totals = std::collections::BTreeMap::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        *totals.entry(f[0].to_string()).or_insert(0usize) += f[3].parse::<usize>().unwrap();
    }
    // Dirichlet assigns every sample of every split.
    assert_eq!(totals["train"], 2000);
    assert_eq!(totals["validation"], 200);
    assert_eq!(totals["test"], 500);
    assert!(tmp.path().join("partition.json").exists());
}

use std::path::Path;
use std::process::{Command, Output};

fn crw(args: &[&str], workers: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_crw"));
    cmd.args(args);
    match workers {
        Some(w) => cmd.env("CRW_WORKERS", w),
        None => cmd.env_remove("CRW_WORKERS"),
    };
    cmd.output().expect("run crw")
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn estimate_twice_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let base = ["estimate", "--graph", "cycle:8", "--method", "dual", "--t", "linear:0:4:9", "--reps", "20000", "--seed", "1"];
    for (p, w) in [(&a, "1"), (&b, "3")] {
        let mut args = base.to_vec();
        args.extend(["--out", p.to_str().unwrap()]);
        let out = crw(&args, Some(w));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(read(&a).starts_with("t,estimate,ci_low,ci_high,replicates,method,cap_hit\r\n"));
}

#[test]
fn duality_reports_tiny_gap() {
    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("s.json");
    let out = crw(
        &["duality", "--graph", "path:4", "--t", "1", "--v", "0", "--summary", summary.to_str().unwrap()],
        None,
    );
    assert!(out.status.success());
    let text = read(&summary);
    assert!(text.contains("\"schema_version\": 1"));
    assert!(text.contains("duality_gap"));
}

#[test]
fn summary_config_reruns_to_same_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv1 = dir.path().join("1.csv");
    let summary = dir.path().join("s.json");
    let out = crw(
        &[
            "verify-bounds", "--graph", "regtree:3", "--t", "0.5,2,8", "--reps", "3000", "--seed", "4",
            "--out", csv1.to_str().unwrap(), "--summary", summary.to_str().unwrap(),
        ],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // Pull the embedded config out of the JSON and rerun from it.
    let json = read(&summary);
    let start = json.find("\"config\": \"").unwrap() + 11;
    let end = start + json[start..].find("\",").unwrap();
    let cfg_text = json[start..end].replace("\\n", "\n");
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(&cfg_path, cfg_text).unwrap();
    let csv2 = dir.path().join("2.csv");
    let out = crw(
        &["verify-bounds", "--config", cfg_path.to_str().unwrap(), "--out", csv2.to_str().unwrap(), "--summary", "none"],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(&csv1).unwrap(), std::fs::read(&csv2).unwrap());
}

#[test]
fn bad_config_exits_with_actionable_error() {
    let out = crw(&["estimate", "--graph", "cycle:5", "--method", "nb_zap", "--t", "1"], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rooted tree"));
    let out = crw(&["estimate", "--graph", "hexagon"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_code_reflects_checks() {
    let ok = crw(&["martingale", "--graph", "regtree:3", "--reps", "400", "--checkpoints", "5,50", "--sup-jumps", "100", "--thresholds", "20"], None);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    // Two replicates whose clusters both die before jump 1000 give mean 0
    // with zero spread, which the martingale check rejects.
    let bad = crw(&["martingale", "--graph", "regtree:3", "--reps", "2", "--seed", "3", "--checkpoints", "1000", "--thresholds", ""], None);
    assert_eq!(bad.status.code(), Some(1), "{}", String::from_utf8_lossy(&bad.stderr));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("FAIL"));
}

#[test]
fn nb_compare_writes_samples() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("x.txt");
    let out = crw(
        &["nb-compare", "--graph", "bintree:4", "--t", "2", "--reps", "500", "--samples-out", samples.to_str().unwrap()],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(&samples).lines().count(), 1000);
}

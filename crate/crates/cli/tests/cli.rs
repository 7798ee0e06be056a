use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn prft(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prft"))
        .args(args)
        .env("PRFT_OUT", out)
        .output()
        .expect("spawn prft")
}

fn scenario(rel: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(rel);
    p.to_str().unwrap().to_string()
}

#[test]
fn run_writes_bundle_records_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let o = prft(&["run", &scenario("honest.toml")], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let records = std::fs::read_to_string(dir.path().join("records.jsonl")).unwrap();
    let mut lines = 0;
    for l in records.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        for f in ["scenario", "config_hash", "seed", "metric", "value"] {
            assert!(v.get(f).is_some(), "missing {f} in {l}");
        }
        lines += 1;
    }
    assert!(lines > 0);

    let bundle = dir.path().join("bundle.json");
    let rep = prft(&["report", bundle.to_str().unwrap(), "--format", "records"], dir.path());
    assert_eq!(rep.status.code(), Some(0));
    assert_eq!(String::from_utf8(rep.stdout).unwrap(), records);

    let table = prft(&["report", bundle.to_str().unwrap(), "--format", "table"], dir.path());
    assert!(String::from_utf8(table.stdout).unwrap().contains("honest"));

    let trace = dir.path().join("traces/honest-seed0.jsonl");
    let chk = prft(&["check", trace.to_str().unwrap(), "--c", "0"], dir.path());
    assert_eq!(chk.status.code(), Some(0));
    let rep: serde_json::Value = serde_json::from_slice(&chk.stdout).unwrap();
    assert_eq!(rep["agreement"], true);
}

#[test]
fn forced_fork_exits_with_violation() {
    let dir = tempfile::tempdir().unwrap();
    let o = prft(&["run", &scenario("outside/forced-fork.toml"), "--no-traces"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn censored_trace_fails_check() {
    let dir = tempfile::tempdir().unwrap();
    let o = prft(&["run", &scenario("rational-censor.toml")], dir.path());
    assert_eq!(o.status.code(), Some(0), "censorship alone is not a safety violation");
    let trace = dir.path().join("traces/rational-censor-seed0.jsonl");
    let chk = prft(&["check", trace.to_str().unwrap(), "--c", "0"], dir.path());
    assert_eq!(chk.status.code(), Some(1));
    let rep: serde_json::Value = serde_json::from_slice(&chk.stdout).unwrap();
    assert_eq!(rep["censorship_resistance"], false);
    assert_eq!(rep["agreement"], true);
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "n = 13\nt0 = 2\n[[players]]\nids = [0, 1, 2]\nrole = \"byzantine\"\n").unwrap();
    let o = prft(&["run", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("t exceeds t0"));

    let missing = prft(&["check", dir.path().join("nope.jsonl").to_str().unwrap()], dir.path());
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn sweep_reports_slope() {
    let dir = tempfile::tempdir().unwrap();
    let o = prft(&["sweep", "--n", "5,9", "--param", "bytes", "--rounds", "3", "--seeds", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8(o.stdout).unwrap().contains("bytes slope"));
    assert!(dir.path().join("sweep.json").exists());
}

use std::io::Write;
use std::path::PathBuf;

use prft_core::adversary::Strategy;
use prft_core::gametheory::{classify_state, honest_finals};
use prft_core::harness::config::{load_config, ConfigError, ScenarioConfig};
use prft_core::harness::report::{emit_report, Format};
use prft_core::harness::robustness::check_robustness;
use prft_core::harness::run::run_seed;
use prft_core::harness::suite::{run_suite, summarize, Bundle};
use prft_core::trace::RunTrace;
use prft_core::types::{Role, SystemState};

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn honest_five_finalize_every_round() {
    let mut cfg = ScenarioConfig::honest(5);
    cfg.rounds = 10;
    let sc = cfg.validate().unwrap();
    let res = run_seed(&sc, 1).unwrap();
    let t = &res.trace;
    assert!(!t.footer.truncated);
    let finals = honest_finals(t);
    for r in 0..10 {
        let m = finals.get(&r).unwrap_or_else(|| panic!("round {r} not final"));
        assert_eq!(m.len(), 5, "round {r}");
    }
    assert_eq!(classify_state(t).state, SystemState::Honest);
}

#[test]
fn same_seed_same_trace() {
    let mut cfg = ScenarioConfig::honest(4);
    cfg.rounds = 6;
    let sc = cfg.validate().unwrap();
    let a = run_seed(&sc, 7).unwrap().trace;
    let b = run_seed(&sc, 7).unwrap().trace;
    assert_eq!(a.hash(), b.hash());
    let c = run_seed(&sc, 8).unwrap().trace;
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn abstainers_above_threshold_stall() {
    // q = n - t0 = 5 but only 4 players take part.
    let mut cfg = ScenarioConfig::honest(7).with_group(&[0, 1, 2], Role::Rational, Some(3), Strategy::abstain());
    cfg.t0 = Some(2);
    cfg.rounds = 7;
    let sc = cfg.validate().unwrap();
    let t = run_seed(&sc, 0).unwrap().trace;
    assert!(honest_finals(&t).is_empty());
    assert_eq!(classify_state(&t).state, SystemState::NoProgress);
}

#[test]
fn forced_fork_outside_threat_model_breaks_agreement() {
    let sc = load_config(&scenarios_dir().join("outside/forced-fork.toml")).unwrap();
    for &seed in &sc.seeds {
        let t = run_seed(&sc, seed).unwrap().trace;
        let rep = check_robustness(&t, 0, sc.config.cr_window);
        assert!(!rep.agreement, "seed {seed}");
        assert_eq!(classify_state(&t).state, SystemState::Fork);
    }
}

#[test]
fn sample_scenarios_load() {
    let mut seen = 0;
    for e in std::fs::read_dir(scenarios_dir()).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            load_config(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            seen += 1;
        }
    }
    assert!(seen >= 5);
}

#[test]
fn config_file_errors_and_defaults() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    write!(
        f,
        "n = 13\nt0 = 2\n[[players]]\nids = [0, 1, 2]\nrole = \"byzantine\"\n"
    )
    .unwrap();
    let errs = load_config(f.path()).unwrap_err();
    assert!(errs.0.contains(&ConfigError::TExceedsT0 { t: 3, t0: 2 }), "{errs}");
    assert!(errs.to_string().contains("t exceeds t0"));

    let mut g = tempfile::NamedTempFile::new().unwrap();
    write!(g, "n = 5\n").unwrap();
    let sc = load_config(g.path()).unwrap();
    assert_eq!(sc.seeds, (0..20).collect::<Vec<u64>>());

    let missing = load_config(&g.path().with_extension("absent")).unwrap_err();
    assert!(matches!(missing.0[0], ConfigError::Io(_)));
}

#[test]
fn empty_suite_is_empty_bundle() {
    let b = run_suite(&[]).unwrap();
    assert!(b.runs.is_empty());
    assert!(b.all_safe());
    assert_eq!(emit_report(&b, Format::Records), "");
}

#[test]
fn stored_artifacts_reproduce_reports() {
    let mut cfg = ScenarioConfig::honest(5).with_group(&[0], Role::Byzantine, None, Strategy::double_sign(vec![], vec![]));
    cfg.rounds = 6;
    cfg.seeds = Some(vec![0, 1]);
    let sc = cfg.validate().unwrap();
    let bundle = run_suite(std::slice::from_ref(&sc)).unwrap();

    let json = serde_json::to_string(&bundle).unwrap();
    let back: Bundle = serde_json::from_str(&json).unwrap();
    assert_eq!(back, bundle);
    for f in [Format::Records, Format::Table] {
        assert_eq!(emit_report(&back, f), emit_report(&bundle, f));
    }

    let res = run_seed(&sc, 1).unwrap();
    let text = res.trace.to_jsonl();
    let stored = RunTrace::from_jsonl(&text).unwrap();
    assert_eq!(stored.to_jsonl(), text);
    let a = summarize(&sc, &res.trace, res.metrics.clone());
    let b = summarize(&sc, &stored, res.metrics);
    assert_eq!(a, b);
    assert_eq!(bundle.runs[1], a);
}

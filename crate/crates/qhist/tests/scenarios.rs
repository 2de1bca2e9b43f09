//! The bundled scenarios: loading, canonical round-trips, and full runs.

use std::path::PathBuf;
use std::time::Instant;

use qhist::report::{run, Command, RunOptions, VariantFilter};
use qhist::scenario::{LoadError, Scenario};

const NAMES: [&str; 4] = ["spin3", "twotime-observables", "mach-zehnder", "zfamily"];

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

fn load(name: &str) -> Scenario {
    Scenario::load_path(&scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn every_bundled_scenario_loads() {
    for name in NAMES {
        let s = load(name);
        assert_eq!(s.id, name);
        assert!(!s.checks.is_empty(), "{name} has no checks");
    }
}

#[test]
fn canonical_form_is_a_fixed_point() {
    for name in NAMES {
        let first = load(name).canonical_json();
        let reloaded = Scenario::load_str(&first).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(first, reloaded.canonical_json(), "{name} canonical form drifted");
    }
}

#[test]
fn clean_scenarios_pass_report_all() {
    for name in ["spin3", "twotime-observables"] {
        let s = load(name);
        let r = run(&s, Command::ReportAll, &RunOptions::default());
        for c in &r.checks {
            assert!(c.pass, "{name}/{}: {}", c.name, c.detail);
        }
        assert_eq!(r.summary.failed, 0);
    }
}

#[test]
fn printed_families_fail_their_validate_checks() {
    let expected_failures = [("mach-zehnder", "arm-family-printed"), ("zfamily", "pair-grid-printed")];
    for (name, failing) in expected_failures {
        let s = load(name);
        let r = run(&s, Command::ReportAll, &RunOptions::default());
        let failed: Vec<&str> = r
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.as_str())
            .collect();
        assert_eq!(failed, vec![failing], "{name}: {:#?}", r.checks.iter()
            .filter(|c| !c.pass).map(|c| format!("{}: {}", c.name, c.detail)).collect::<Vec<_>>());
        let record = r.checks.iter().find(|c| c.name == failing).unwrap();
        assert_eq!(record.data["as_expected"], serde_json::json!(true));
    }
}

#[test]
fn printed_interferometer_family_fails_with_doubled_weights() {
    let s = load("mach-zehnder");
    let r = run(&s, Command::Validate, &RunOptions::default());
    let printed = r.checks.iter().find(|c| c.name == "arm-family-printed").unwrap();
    assert!(!printed.pass);
    assert_eq!(printed.variant.as_deref(), Some("printed"));
    let weights = printed.data["weights"].as_array().unwrap();
    for w in weights {
        assert!((w.as_f64().unwrap() - 2.0).abs() <= 1e-10);
    }
    let corrected = r.checks.iter().find(|c| c.name == "arm-family").unwrap();
    assert!(corrected.pass, "{}", corrected.detail);
}

#[test]
fn every_declared_expectation_is_consistent() {
    for name in NAMES {
        let s = load(name);
        let r = run(&s, Command::ReportAll, &RunOptions::default());
        for c in &r.checks {
            if let Some(flag) = c.data.get("as_expected") {
                assert_eq!(flag, &serde_json::json!(true), "{name}/{}: {}", c.name, c.detail);
            }
        }
    }
}

#[test]
fn variant_selection_splits_pass_and_fail() {
    for name in ["mach-zehnder", "zfamily"] {
        let s = load(name);
        let mut opts = RunOptions::default();
        opts.variant = VariantFilter::parse("corrected");
        let corrected = run(&s, Command::ReportAll, &opts);
        assert_eq!(corrected.summary.failed, 0, "{name} corrected: {:#?}", corrected
            .checks.iter().filter(|c| !c.pass)
            .map(|c| format!("{}: {}", c.name, c.detail)).collect::<Vec<_>>());
        assert!(corrected.summary.checks > 0);

        opts.variant = VariantFilter::parse("printed");
        let printed = run(&s, Command::ReportAll, &opts);
        assert!(printed.summary.failed > 0, "{name} printed run found no failure");
    }
}

#[test]
fn reports_are_byte_stable_across_runs() {
    for name in NAMES {
        let s = load(name);
        let a = run(&s, Command::ReportAll, &RunOptions::default()).to_json();
        let b = run(&s, Command::ReportAll, &RunOptions::default()).to_json();
        assert_eq!(a, b, "{name} report drifted between runs");
        let reloaded = Scenario::load_str(&load(name).canonical_json()).unwrap();
        let c = run(&reloaded, Command::ReportAll, &RunOptions::default()).to_json();
        assert_eq!(a, c, "{name} report depends on the concrete serialization");
    }
}

#[test]
fn report_all_stays_under_ten_seconds_per_scenario() {
    for name in NAMES {
        let s = load(name);
        let started = Instant::now();
        let _ = run(&s, Command::ReportAll, &RunOptions::default());
        let elapsed = started.elapsed();
        assert!(elapsed.as_secs_f64() < 10.0, "{name} took {elapsed:?}");
    }
}

#[test]
fn oversized_ket_reports_its_location() {
    let text = r#"{
        "version": 1,
        "id": "broken",
        "timeline": [{"label": "t1", "dim": 2}, {"label": "t2", "dim": 2}],
        "kets": {"w": {"dim": 2, "amplitudes": [1, 0, 0]}}
    }"#;
    let err = Scenario::load_str(text).unwrap_err();
    match err {
        LoadError::Shape { location, .. } => assert_eq!(location, "kets.w"),
        other => panic!("expected a shape error, got {other}"),
    }
}

#[test]
fn unknown_gate_reports_its_location() {
    let text = r#"{
        "version": 1,
        "id": "broken",
        "timeline": [{"label": "t1", "dim": 2}, {"label": "t2", "dim": 2}],
        "bridging": ["Hh"]
    }"#;
    let err = Scenario::load_str(text).unwrap_err();
    match err {
        LoadError::Resolution { location, detail } => {
            assert_eq!(location, "bridging[0]");
            assert!(detail.contains("Hh"), "{detail}");
        }
        other => panic!("expected a resolution error, got {other}"),
    }
}

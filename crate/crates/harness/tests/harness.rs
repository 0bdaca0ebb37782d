use sle_core::natparam::{PhiGrid, PhiGridSpec};
use sle_core::SleError;
use sle_harness::cache::grid_path;
use sle_harness::experiments::stream_constants;
use sle_harness::{
    emit_plotdata, manage_cache, registry_names, run_experiment, CacheAction, CacheStatus, ConfigError, ExperimentConfig, ResultRecord,
    RunError,
};

fn small_martingale() -> ExperimentConfig {
    ExperimentConfig::from_json(r#"{"experiment": "martingale-one", "budgets": {"paths": 1000}}"#).unwrap()
}

fn tiny_spec() -> PhiGridSpec {
    PhiGridSpec {
        n_r: 5,
        n_theta: 4,
        paths: 60,
        direct_paths: 0,
        se_cap: 0.5,
        ..PhiGridSpec::desk(8.0 / 3.0, 11)
    }
}

#[test]
fn every_registered_name_has_valid_defaults() {
    let names = registry_names();
    assert_eq!(names.len(), 12);
    for name in names {
        let cfg = ExperimentConfig::default_for(name).unwrap();
        cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn unknown_experiment_lists_registry() {
    let err = ExperimentConfig::default_for("no-such-thing").unwrap_err();
    assert!(matches!(err, ConfigError::UnknownExperiment(_)));
    let msg = err.to_string();
    for name in registry_names() {
        assert!(msg.contains(name), "{name} missing from: {msg}");
    }
    let mut cfg = small_martingale();
    cfg.experiment = "no-such-thing".into();
    assert!(matches!(run_experiment(&cfg), Err(RunError::Config(ConfigError::UnknownExperiment(_)))));
}

#[test]
fn invalid_fields_are_reported_together() {
    let cfg = ExperimentConfig::from_json(r#"{"experiment": "martingale-one", "geometry": {"eps": [5.0]}, "budgets": {"paths": 0}}"#).unwrap();
    match run_experiment(&cfg) {
        Err(RunError::Config(ConfigError::Invalid { diagnostics, .. })) => {
            assert_eq!(diagnostics.len(), 2, "{diagnostics:?}");
            assert!(diagnostics.iter().any(|d| d.contains("geometry.eps")));
            assert!(diagnostics.iter().any(|d| d.contains("budgets.paths")));
        }
        other => panic!("expected field diagnostics, got {other:?}"),
    }
}

#[test]
fn partial_config_merges_over_defaults() {
    let cfg = small_martingale();
    let defaults = ExperimentConfig::default_for("martingale-one").unwrap();
    assert_eq!(cfg.budgets.paths, 1000);
    assert_eq!(cfg.geometry, defaults.geometry);
    assert_eq!(cfg.seed, defaults.seed);
    assert!(ExperimentConfig::from_json(r#"{"budgets": {}}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"experiment": "martingale-one", "budgets": {"paths": "many"}}"#).is_err());
}

#[test]
fn hash_ignores_paths_on_disk_only() {
    let a = small_martingale();
    let mut b = a.clone();
    b.out_dir = Some("/tmp/elsewhere".into());
    b.cache_dir = Some("/tmp/cache".into());
    assert_eq!(a.hash(), b.hash());
    b.seed += 1;
    assert_ne!(a.hash(), b.hash());
    let back = ExperimentConfig::from_json(&a.to_json()).unwrap();
    assert_eq!(back.hash(), a.hash());
}

#[test]
fn stream_constants_are_distinct() {
    let mut s = stream_constants().to_vec();
    s.sort_unstable();
    s.dedup();
    assert_eq!(s.len(), stream_constants().len());
}

#[test]
fn martingale_one_defaults_pass_and_write_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default_for("martingale-one").unwrap();
    cfg.out_dir = Some(dir.path().to_path_buf());
    let rec = run_experiment(&cfg).unwrap();
    assert!(rec.passed(), "{}", rec.summary());
    assert!(!rec.partial);
    assert_eq!(rec.config_hash, cfg.hash());
    let saved: ResultRecord = serde_json::from_str(&std::fs::read_to_string(dir.path().join("martingale-one.json")).unwrap()).unwrap();
    assert_eq!(saved, rec);
    let saved_cfg = ExperimentConfig::load(&dir.path().join("martingale-one-config.json")).unwrap();
    assert_eq!(saved_cfg.hash(), cfg.hash());
}

#[test]
fn identical_config_reproduces_numbers() {
    let cfg = small_martingale();
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert!(a.same_numbers(&b));
    let mut other = cfg.clone();
    other.seed += 1;
    let c = run_experiment(&other).unwrap();
    assert!(!a.same_numbers(&c));
}

#[test]
fn summary_has_one_line_per_verdict() {
    let rec = run_experiment(&ExperimentConfig::default_for("flow-oracle").unwrap()).unwrap();
    let summary = rec.summary();
    assert_eq!(summary.lines().count(), rec.verdicts.len());
    assert!(summary.lines().all(|l| l.starts_with("PASS ") || l.starts_with("FAIL ")));
    assert!(rec.passed(), "{summary}");
}

#[test]
fn plotdata_is_plain_csv() {
    let rec = run_experiment(&ExperimentConfig::default_for("flow-oracle").unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = emit_plotdata(&rec, dir.path()).unwrap();
    assert_eq!(files.len(), 1);
    assert!(files[0].ends_with("flow-oracle-flow.csv"));
    let text = std::fs::read_to_string(&files[0]).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("kappa,t,rel_err"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), rec.tables[0].rows.len());
    assert!(rows.iter().all(|r| r.len() == 3));
}

#[test]
fn cache_build_verify_purge() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny_spec();
    let built = manage_cache(CacheAction::Build, &spec, dir.path()).unwrap();
    assert!(matches!(built, CacheStatus::Built { missing: 0, .. }), "{built:?}");
    let again = manage_cache(CacheAction::Build, &spec, dir.path()).unwrap();
    assert!(matches!(again, CacheStatus::Present { .. }));
    match manage_cache(CacheAction::Verify, &spec, dir.path()).unwrap() {
        CacheStatus::Verified { checks } => assert_eq!(checks.len(), 5),
        other => panic!("expected verified, got {other:?}"),
    }
    match manage_cache(CacheAction::Purge, &spec, dir.path()).unwrap() {
        CacheStatus::Purged { removed } => assert_eq!(removed, 1),
        other => panic!("{other:?}"),
    }
    match PhiGrid::load(dir.path(), &spec) {
        Err(SleError::MissingGrid(msg)) => assert!(msg.contains("no phi grid")),
        other => panic!("expected a missing grid, got {other:?}"),
    }
}

fn corrupt(spec: &PhiGridSpec, dir: &std::path::Path, f: impl Fn(&mut PhiGrid)) {
    let mut g = PhiGrid::load(dir, spec).unwrap();
    f(&mut g);
    std::fs::write(grid_path(dir, spec), g.to_json().unwrap()).unwrap();
}

#[test]
fn corrupted_value_marks_cache_stale() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny_spec();
    manage_cache(CacheAction::Build, &spec, dir.path()).unwrap();
    corrupt(&spec, dir.path(), |g| g.values[3] = 1.7);
    let status = manage_cache(CacheAction::Verify, &spec, dir.path()).unwrap();
    assert!(!status.ok());
    let CacheStatus::Stale { moved_to, .. } = status else { unreachable!() };
    assert!(moved_to.exists());
    assert!(matches!(PhiGrid::load(dir.path(), &spec), Err(SleError::MissingGrid(_))));
}

#[test]
fn plausible_but_wrong_values_fail_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny_spec();
    manage_cache(CacheAction::Build, &spec, dir.path()).unwrap();
    // stays in range and mirror-symmetric, so only recomputation can tell
    corrupt(&spec, dir.path(), |g| {
        for v in g.values.iter_mut() {
            *v = if *v < 0.5 { 1.0 } else { 0.0 };
        }
        for s in g.stderr.iter_mut() {
            *s = 0.0;
        }
    });
    let status = manage_cache(CacheAction::Verify, &spec, dir.path()).unwrap();
    assert!(matches!(status, CacheStatus::Stale { .. }), "{status:?}");
}

#[test]
fn verify_without_grid_is_missing() {
    let dir = tempfile::tempdir().unwrap();
    let err = manage_cache(CacheAction::Verify, &tiny_spec(), dir.path()).unwrap_err();
    assert!(matches!(err, SleError::MissingGrid(_)));
}

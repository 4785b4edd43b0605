use std::path::{Path, PathBuf};

use bsde_ident::experiment::{
    parse_config, run_experiment, Check, ConfigError, ExperimentConfig, ExperimentError,
};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn shipped(name: &str) -> ExperimentConfig {
    let text = std::fs::read_to_string(configs_dir().join(format!("{name}.toml"))).unwrap();
    parse_config(&text).unwrap()
}

fn small(name: &str, dir: &Path) -> ExperimentConfig {
    let mut cfg = shipped(name);
    cfg.run.paths = cfg.run.paths.min(2000);
    cfg.output.dir = dir.to_path_buf();
    cfg
}

#[test]
fn every_shipped_config_parses() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let text = std::fs::read_to_string(&path).unwrap();
            parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 6);
}

#[test]
fn brownian_linear_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = shipped("brownian-linear");
    cfg.output.dir = dir.path().to_path_buf();
    let out = run_experiment(&cfg).unwrap();
    assert!(out.passed(), "{}", out.summary);
    assert!(out.report.z_rel_error.unwrap() <= 0.05);

    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), row.len());
    let z = header.iter().position(|h| *h == "z_rel_error").unwrap();
    assert!(row[z].parse::<f64>().is_ok(), "{}", row[z]);
    // unrun checks leave their cells empty
    let u = header.iter().position(|h| *h == "h_nuc_l2").unwrap();
    assert_eq!(row[u], "");

    for f in [
        "scenario_manifest.tsv",
        "scenario_0.tsv",
        "solution_steps.csv",
        "solution_atoms.csv",
        "summary.txt",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let manifest = std::fs::read_to_string(dir.path().join("scenario_manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), cfg.run.paths + 1);
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let read_all = |d: &Path| {
        let mut files: Vec<_> = std::fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        files
            .into_iter()
            .map(|p| (p.file_name().unwrap().to_owned(), std::fs::read(&p).unwrap()))
            .collect::<Vec<_>>()
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_experiment(&small("custom-pdmp", &a)).unwrap();
    run_experiment(&small("custom-pdmp", &b)).unwrap();
    assert_eq!(read_all(&a), read_all(&b));

    let c = dir.path().join("c");
    let mut other = small("custom-pdmp", &c);
    other.run.seed += 1;
    run_experiment(&other).unwrap();
    assert_ne!(
        std::fs::read(a.join("report.csv")).unwrap(),
        std::fs::read(c.join("report.csv")).unwrap()
    );
}

#[test]
fn positive_control_fails_both_null_tests() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&small("violating-h", dir.path())).unwrap();
    assert!(!out.passed());
    assert_eq!(out.report.passed(Check::Martingale), Some(false));
    assert_eq!(out.report.passed(Check::Pathwise), Some(false));
    assert!(out.summary.contains("FAIL martingale"), "{}", out.summary);
}

#[test]
fn oracle_exact_pdmp_checks_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&small("pdmp-deterministic", dir.path())).unwrap();
    assert!(out.passed(), "{}", out.summary);
    assert_eq!(out.report.pathwise.unwrap().sup, 0.0);
    assert_eq!(out.report.classification, Some((0, 1000)));
}

#[test]
fn explicit_models_run_without_an_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&small("custom-jump-diffusion", dir.path())).unwrap();
    let run: Vec<Check> = out.report.results.iter().map(|r| r.check).collect();
    assert_eq!(run, [Check::Transfer, Check::Bracket, Check::Residual]);
    assert!(out.report.transfer_max.unwrap() <= 1e-9);
}

#[test]
fn inapplicable_check_is_a_config_fault() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small("pdmp-deterministic", dir.path());
    cfg.run.checks = Some(vec![Check::Z]);
    let e = run_experiment(&cfg).unwrap_err();
    assert!(matches!(e, ExperimentError::Inapplicable { check: Check::Z, .. }), "{e}");
    assert_eq!(e.category(), "config");
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("fault: config"), "{summary}");
}

#[test]
fn benchmark_horizon_must_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small("brownian-linear", dir.path());
    cfg.run.horizon = Some(2.0);
    let e = run_experiment(&cfg).unwrap_err();
    assert!(matches!(e, ExperimentError::Config(ConfigError::Invalid(_))), "{e}");
}

#[test]
fn scale_multiplies_the_solution() {
    let dir = tempfile::tempdir().unwrap();
    let base = run_experiment(&small("pdmp-deterministic", &dir.path().join("a"))).unwrap();
    let mut cfg = small("pdmp-deterministic", &dir.path().join("b"));
    cfg.scale = 2.0;
    let scaled = run_experiment(&cfg).unwrap();
    assert!(scaled.passed(), "{}", scaled.summary);
    let (y1, y2) = (base.report.y0.unwrap(), scaled.report.y0.unwrap());
    assert!((y2 - 2.0 * y1).abs() <= 1e-9, "{y1} {y2}");
}

use std::collections::BTreeSet;
use std::fs;

use psgd_lab::harness::{
    run_experiment, write_report, ExperimentConfig, ExperimentKind, ExperimentReport, Manifest, Table,
};
use psgd_lab::optimizers::run;
use psgd_lab::{OptimizerConfig, ProblemInstance};
use serde_json::{json, Value};

fn ov(pairs: &[(&str, Value)]) -> Vec<(String, Value)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Small but complete configurations so each kind runs in well under a second.
fn small(kind: ExperimentKind) -> ExperimentConfig {
    let o = match kind {
        ExperimentKind::Escape => ov(&[
            ("replicas", json!(40)),
            ("steps", json!(30)),
            ("trajectory_replicas", json!(2)),
        ]),
        ExperimentKind::NoiseSweep => ov(&[
            ("replicas", json!(40)),
            ("steps", json!(30)),
            ("zetas", json!([1.0, 5.0])),
            ("trajectory_replicas", json!(1)),
        ]),
        ExperimentKind::Equivalence => ov(&[
            ("replicas", json!(50)),
            ("steps", json!(20)),
            ("grid_replicas", json!(10)),
        ]),
        ExperimentKind::Convergence => ov(&[
            ("replicas", json!(50)),
            ("steps", json!(200)),
            ("fit_points", json!(41)),
            ("fit_draws", json!(2000)),
            ("trajectory_replicas", json!(2)),
        ]),
        ExperimentKind::Constants => ov(&[("fit_points", json!(41)), ("fit_draws", json!(2000))]),
    };
    ExperimentConfig::resolve(kind, None, &o).unwrap()
}

fn header(report: &ExperimentReport, table: &str) -> Vec<String> {
    report
        .table(table)
        .unwrap_or_else(|| panic!("missing table {table}"))
        .header
        .clone()
}

fn strs(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn golden_headers_escape() {
    let r = run_experiment(&small(ExperimentKind::Escape)).unwrap();
    assert_eq!(
        header(&r, "escape_summary"),
        strs(&["algorithm", "zeta", "gamma", "near_global_fraction", "spread", "diverged"])
    );
    assert_eq!(
        header(&r, "last_iterates"),
        strs(&["replica", "x0", "gd", "psgd_zeta_0.5", "psgd_zeta_1"])
    );
    for z in ["0.5", "1"] {
        assert_eq!(
            header(&r, &format!("histogram_zeta_{z}")),
            strs(&["bin_lo", "bin_hi", "count_gd", "count_psgd"])
        );
    }
    assert_eq!(
        header(&r, "trajectories_gd"),
        strs(&["step", "replica", "x", "f", "g", "grad_g_sq", "g_gap"])
    );
    assert_eq!(header(&r, "grid_search"), strs(&["algorithm", "gamma", "mean_final_f", "selected"]));
}

#[test]
fn golden_headers_noise_sweep() {
    let r = run_experiment(&small(ExperimentKind::NoiseSweep)).unwrap();
    assert_eq!(
        header(&r, "sweep_summary"),
        strs(&[
            "zeta",
            "gamma",
            "noise_variance",
            "near_sgd",
            "near_psgd",
            "spread_sgd",
            "spread_psgd",
            "diverged_sgd",
            "diverged_psgd"
        ])
    );
    assert_eq!(
        header(&r, "histogram_zeta_5"),
        strs(&["bin_lo", "bin_hi", "count_sgd", "count_psgd"])
    );
    assert!(r.table("trajectories_psgd_zeta_5").is_some());
    assert!(r.verdicts().is_empty());
}

#[test]
fn golden_headers_equivalence() {
    let r = run_experiment(&small(ExperimentKind::Equivalence)).unwrap();
    assert_eq!(
        header(&r, "equivalence"),
        strs(&["step", "mean_y", "sd_y", "mean_z", "sd_z", "diff", "ci_lo", "ci_hi"])
    );
    assert_eq!(r.table("equivalence").unwrap().rows.len(), 21);
    assert_eq!(header(&r, "grid_search"), strs(&["gamma", "mean_final_f", "selected"]));
}

#[test]
fn golden_headers_convergence() {
    let r = run_experiment(&small(ExperimentKind::Convergence)).unwrap();
    assert_eq!(header(&r, "envelope"), strs(&["step", "mean", "std_err", "bound"]));
    assert_eq!(header(&r, "gap"), strs(&["step", "mean_gap", "std_err_gap", "mean_dist_sq"]));
    assert_eq!(header(&r, "noise_fit"), strs(&["x", "b", "v", "v_se"]));
    assert_eq!(
        header(&r, "trajectories"),
        strs(&["step", "replica", "x", "f", "g", "grad_g_sq", "g_gap"])
    );
}

#[test]
fn golden_headers_constants() {
    let r = run_experiment(&small(ExperimentKind::Constants)).unwrap();
    assert_eq!(
        header(&r, "constants"),
        strs(&[
            "zeta",
            "sigma2",
            "m_prime",
            "delta",
            "m",
            "delta_perp",
            "m_par",
            "analytic_m",
            "analytic_delta",
            "intercept_at_analytic_slope",
            "analytic_violations",
            "feasible"
        ])
    );
    assert_eq!(r.table("constants").unwrap().rows.len(), 3);
}

#[test]
fn reruns_are_byte_identical() {
    for kind in ExperimentKind::ALL {
        let cfg = small(kind);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let fa = write_report(&run_experiment(&cfg).unwrap(), a.path()).unwrap();
        let fb = write_report(&run_experiment(&small(kind)).unwrap(), b.path()).unwrap();
        assert_eq!(fa.len(), fb.len());
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(x.file_name(), y.file_name());
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{kind:?} {:?}", x.file_name());
        }
    }
}

#[test]
fn different_seeds_change_the_output() {
    let a = run_experiment(&small(ExperimentKind::Equivalence)).unwrap();
    let cfg = ExperimentConfig::resolve(
        ExperimentKind::Equivalence,
        None,
        &ov(&[
            ("replicas", json!(50)),
            ("steps", json!(20)),
            ("grid_replicas", json!(10)),
            ("seed", json!(7)),
        ]),
    )
    .unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_ne!(a.table("equivalence"), b.table("equivalence"));
}

#[test]
fn consumed_keys_are_recorded_in_the_manifest() {
    for kind in ExperimentKind::ALL {
        let r = run_experiment(&small(kind)).unwrap();
        let m = &r.manifest;
        assert!(!m.consumed_keys.is_empty());
        let config: BTreeSet<&String> = m.config.keys().collect();
        for k in &m.consumed_keys {
            assert!(config.contains(k), "{kind:?}: consumed {k} missing from manifest");
        }
        assert!(m.consumed_keys.iter().any(|k| k == "seed"));
    }
}

#[test]
fn empty_report_writes_headers_only() {
    let cfg = ExperimentConfig::defaults(ExperimentKind::Escape);
    let report = ExperimentReport {
        manifest: Manifest {
            kind: ExperimentKind::Escape,
            version: "0".into(),
            seed: 0,
            config: cfg.values().clone(),
            consumed_keys: Vec::new(),
            verdicts: Vec::new(),
            summary: Value::Null,
        },
        tables: vec![
            Table::new("histogram_zeta_1", &["bin_lo", "bin_hi", "count_gd", "count_psgd"]),
            Table::new("equivalence", &["step", "mean_y", "sd_y", "mean_z", "sd_z", "diff", "ci_lo", "ci_hi"]),
        ],
    };
    let dir = tempfile::tempdir().unwrap();
    let files = write_report(&report, dir.path()).unwrap();
    assert_eq!(files.len(), 3);
    assert_eq!(
        fs::read_to_string(dir.path().join("histogram_zeta_1.csv")).unwrap(),
        "bin_lo,bin_hi,count_gd,count_psgd\n"
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("equivalence.csv")).unwrap(),
        "step,mean_y,sd_y,mean_z,sd_z,diff,ci_lo,ci_hi\n"
    );
    let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m, report.manifest);
}

#[test]
fn unwritable_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let r = run_experiment(&small(ExperimentKind::Constants)).unwrap();
    assert!(write_report(&r, &blocker.join("sub")).is_err());
}

#[test]
fn escape_single_replica_without_smoothing_is_gd() {
    let gamma = 0.01;
    let cfg = ExperimentConfig::resolve(
        ExperimentKind::Escape,
        None,
        &ov(&[
            ("replicas", json!(1)),
            ("zetas", json!([0.0])),
            ("gamma", json!(gamma)),
        ]),
    )
    .unwrap();
    let r = run_experiment(&cfg).unwrap();
    let row = &r.table("last_iterates").unwrap().rows[0];
    let x0: f64 = row[1].parse().unwrap();
    let problem = ProblemInstance::toy_sine(10.0, 1.0).unwrap();
    let gd = run(&problem, &OptimizerConfig::gd(gamma, 100, vec![x0])).unwrap();
    let expect = format!("{:?}", gd.last()[0]);
    assert_eq!(row[2], expect);
    assert_eq!(row[3], expect);
}

#[test]
fn config_file_then_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, r#"{"kind": "convergence", "theorem": 3, "steps": 10}"#).unwrap();
    let cfg = ExperimentConfig::load(
        ExperimentKind::Convergence,
        Some(&path),
        &ov(&[("steps", json!(12))]),
    )
    .unwrap();
    assert_eq!(cfg.values()["theorem"], json!(3));
    assert_eq!(cfg.values()["steps"], json!(12));

    fs::write(&path, r#"{"kind": "escape"}"#).unwrap();
    assert!(ExperimentConfig::load(ExperimentKind::Convergence, Some(&path), &[]).is_err());
    fs::write(&path, r#"{"not_a_key": 1}"#).unwrap();
    let err = ExperimentConfig::load(ExperimentKind::Convergence, Some(&path), &[]).unwrap_err();
    assert!(err.to_string().contains("not_a_key"));
}

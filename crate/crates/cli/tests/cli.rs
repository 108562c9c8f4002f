use std::path::{Path, PathBuf};
use std::process::Command;

use hinfq_cli::output::{read_matrix_csv, REBALANCING_HEADER};
use hinfq_cli::{cmd_amod, cmd_bench, cmd_learn, cmd_solve_riccati, verify_manifest, AmodCommand, CliError, RunReport, ScenarioConfig};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&configs().join(name)).unwrap()
}

fn with_json(name: &str, edit: impl FnOnce(&mut serde_json::Value)) -> ScenarioConfig {
    let text = std::fs::read_to_string(configs().join(name)).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    edit(&mut v);
    ScenarioConfig::from_json(&v.to_string()).unwrap()
}

fn read_report(dir: &Path) -> RunReport {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn drop_last_column(text: &str) -> String {
    text.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn scalar_riccati_writes_the_closed_form_root() {
    let dir = tempfile::tempdir().unwrap();
    let report = cmd_solve_riccati(&load("scalar.json"), dir.path()).unwrap();
    let p = read_matrix_csv(&dir.path().join("p_star.csv")).unwrap();
    assert!((p[(0, 0)] - (0.25 + 4.0625f64.sqrt()) / 2.0).abs() <= 1e-9);
    assert_eq!(report.converged, Some(true));
}

#[test]
fn zero_dynamics_converge_in_one_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let report = cmd_solve_riccati(&load("a_zero.json"), dir.path()).unwrap();
    assert_eq!(report.iterations, Some(1));
    let p = read_matrix_csv(&dir.path().join("p_star.csv")).unwrap();
    let rx = nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    assert!((p - rx).amax() <= 1e-12);
}

#[test]
fn two_station_riccati_keeps_the_conserved_fleet_mode() {
    let dir = tempfile::tempdir().unwrap();
    let report = cmd_solve_riccati(&load("amod_n2.json"), dir.path()).unwrap();
    assert_eq!(report.converged, Some(true));
    let residual = report.details["residual"].as_f64().unwrap();
    assert!(residual <= 1e-9);
    // The fleet count is invariant under any feedback, so the radius is one.
    let rho = report.details["control_spectral_radius"].as_f64().unwrap();
    assert!((rho - 1.0).abs() <= 1e-9, "{rho}");
}

#[test]
fn learn_on_small_benchmark_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let report = cmd_learn(&load("linear_211.json"), dir.path()).unwrap();
    assert_eq!(report.converged, Some(true));
    assert!(report.s_rel_error.unwrap() <= 1e-6, "{:?}", report.s_rel_error);
    verify_manifest(dir.path(), &report).unwrap();
}

#[test]
fn learn_outputs_are_deterministic_per_seed() {
    let cfg = load("linear_211.json");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_learn(&cfg, a.path()).unwrap();
    cmd_learn(&cfg, b.path()).unwrap();
    for name in ["final_gains.csv", "final_s.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    let ta = std::fs::read_to_string(a.path().join("trace.csv")).unwrap();
    let tb = std::fs::read_to_string(b.path().join("trace.csv")).unwrap();
    assert!(ta.lines().next().unwrap().ends_with(",update_seconds"));
    assert_eq!(drop_last_column(&ta), drop_last_column(&tb));
}

#[test]
fn amod_learn_outputs_are_deterministic_per_seed() {
    let cfg = with_json("amod_n3.json", |v| v["learner"]["max_iter"] = 20.into());
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_learn(&cfg, a.path()).unwrap();
    cmd_learn(&cfg, b.path()).unwrap();
    for name in ["final_gains.csv", "final_s.csv", "metrics.csv", "demand.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn every_manifest_parses_back() {
    let cases: Vec<(&str, Box<dyn Fn(&ScenarioConfig, &Path) -> Result<RunReport, CliError>>)> = vec![
        ("scalar.json", Box::new(cmd_solve_riccati)),
        ("amod_n2.json", Box::new(|c, d| cmd_amod(c, AmodCommand::Build, d))),
        ("amod_n2.json", Box::new(|c, d| cmd_amod(c, AmodCommand::Rebalance, d))),
        ("amod_n3.json", Box::new(|c, d| cmd_amod(c, AmodCommand::Simulate, d))),
    ];
    for (name, run) in cases {
        let dir = tempfile::tempdir().unwrap();
        let report = run(&load(name), dir.path()).unwrap();
        assert!(!report.manifest.is_empty());
        assert_eq!(read_report(dir.path()), report);
        verify_manifest(dir.path(), &report).unwrap();
    }

    let dir = tempfile::tempdir().unwrap();
    let cfg = with_json("amod_n3.json", |v| v["learner"]["max_iter"] = 10.into());
    let report = cmd_learn(&cfg, dir.path()).unwrap();
    verify_manifest(dir.path(), &report).unwrap();
    let kinds: Vec<_> = report.manifest.iter().map(|e| e.path.as_str()).collect();
    assert!(kinds.contains(&"metrics.csv") && kinds.contains(&"demand.csv"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = with_json("bench.json", |v| {
        v["bench"]["dims"] = serde_json::json!([[2, 1, 1], [3, 1, 1], [4, 1, 1]]);
        v["bench"]["repetitions"] = 20.into();
    });
    let report = cmd_bench(&cfg, dir.path()).unwrap();
    verify_manifest(dir.path(), &report).unwrap();
}

#[test]
fn tiny_epsilon_exhausts_iterations_and_keeps_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_json("linear_211.json", |v| {
        v["learner"]["epsilon"] = 1e-30.into();
        v["learner"]["max_iter"] = 50.into();
    });
    let err = cmd_learn(&cfg, dir.path()).unwrap_err();
    match &err {
        CliError::Learn(f) => assert!(matches!(f.error, hinfq::Error::MaxIterExceeded { .. }), "{f}"),
        other => panic!("unexpected {other}"),
    }
    assert_eq!(err.exit_code(), 2);
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.lines().count() > 10);
    assert_eq!(read_report(dir.path()).converged, Some(false));
}

#[test]
fn small_gamma_reports_a_feasible_suggestion() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_json("linear_211.json", |v| v["cost"]["gamma"] = 0.05.into());
    match cmd_solve_riccati(&cfg, dir.path()).unwrap_err() {
        CliError::GammaTooSmall { suggestion, .. } => {
            let g: f64 = suggestion.parse().unwrap();
            assert!(g > 0.05);
            let ok = with_json("linear_211.json", |v| v["cost"]["gamma"] = g.into());
            cmd_solve_riccati(&ok, dir.path()).unwrap();
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn asymmetric_two_station_rebalancing() {
    let dir = tempfile::tempdir().unwrap();
    let report = cmd_amod(&load("amod_n2.json"), AmodCommand::Rebalance, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("r_bar.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), REBALANCING_HEADER.join(","));
    let r: Vec<f64> = lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(r[0].abs() <= 1e-9 && (r[1] - 2.0).abs() <= 1e-9, "{r:?}");
    assert!(report.details["kkt_primal"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn zero_demand_from_equilibrium_gives_constant_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_json("amod_n3.json", |v| {
        let zeros = serde_json::json!([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        v["plant"]["network"]["arrival_rates"] = zeros.clone();
        v["plant"]["network"]["schedule"] = serde_json::json!([]);
        v["cost"]["gamma"] = 1.0.into();
        v["amod"]["initial"] = "equilibrium".into();
        v["amod"]["simulate_steps"] = 50.into();
    });
    let report = cmd_amod(&cfg, AmodCommand::Simulate, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let rows: Vec<Vec<String>> = text.lines().skip(1).map(|l| l.split(',').skip(2).map(str::to_owned).collect()).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.windows(2).all(|w| w[0] == w[1]), "{rows:?}");
    assert_eq!(report.details["violations"].as_u64(), Some(0));
}

#[test]
fn demand_replay_drives_the_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let replay = dir.path().join("replay.csv");
    let mut text = String::from("iteration,origin,dest,count\n");
    for k in 0..30 {
        text.push_str(&format!("{k},0,1,{}\n{k},1,0,1\n", k % 3));
    }
    std::fs::write(&replay, text).unwrap();
    let cfg = with_json("amod_n2.json", |v| {
        v["amod"] = serde_json::json!({"demand_replay": replay, "simulate_steps": 30, "metrics_window": 10});
    });
    let out = dir.path().join("out");
    let report = cmd_amod(&cfg, AmodCommand::Simulate, &out).unwrap();
    verify_manifest(&out, &report).unwrap();
    let realized = std::fs::read_to_string(out.join("demand.csv")).unwrap();
    assert!(realized.contains("\n4,0,1,1\n"));
    assert!(realized.contains("\n5,0,1,2"));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_hinfq");
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| Command::new(bin).args(args).output().unwrap();

    let scalar = configs().join("scalar.json");
    let out = run(&["solve-riccati", "--config", scalar.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("report.json").exists());

    let bad_gamma = dir.path().join("bad_gamma.json");
    let cfg = std::fs::read_to_string(configs().join("linear_211.json")).unwrap().replace("\"gamma\": 2.0", "\"gamma\": 0.05");
    std::fs::write(&bad_gamma, cfg).unwrap();
    let out = run(&["solve-riccati", "--config", bad_gamma.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("feasible gamma"));

    let unknown = dir.path().join("unknown.json");
    std::fs::write(&unknown, r#"{"schema": 1, "plant": {"matrices": {"a": [[0.5]], "b": [[1]], "l": [[0]]}}, "cost": {"gamma": 1, "rx": [[1]], "rv": [[1]]}, "lerner": {}}"#).unwrap();
    let out = run(&["learn", "--config", unknown.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    let missing = dir.path().join("missing.json");
    let out = run(&["bench", "--config", missing.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn seed_flag_overrides_config() {
    let bin = env!("CARGO_BIN_EXE_hinfq");
    let cfg = configs().join("linear_211.json");
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (dir, seed) in dirs.iter().zip(["1", "1", "2"]) {
        let out = Command::new(bin)
            .args(["learn", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--seed", seed])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
    }
    let trace = |d: &tempfile::TempDir| drop_last_column(&std::fs::read_to_string(d.path().join("trace.csv")).unwrap());
    assert_eq!(trace(&dirs[0]), trace(&dirs[1]));
    assert_ne!(trace(&dirs[0]), trace(&dirs[2]));
}

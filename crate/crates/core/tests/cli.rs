use std::fs;

use lod_ocp::cli::{
    convergence_csv, execute, exit_code, loglog_slope, main_with_args, parse_config, payload_checksum,
    preset, run_basis_export, run_convergence, run_decay, strip_timing_columns, Command, RunConfig,
    CONVERGENCE_HEADER, DECAY_HEADER, EXIT_CONFIG, EXIT_OK, PRESETS,
};
use lod_ocp::grid::GridPair;
use lod_ocp::interp::InterpOperators;
use lod_ocp::Error;

fn small() -> RunConfig {
    parse_config(
        r#"{"example": "oscillatory", "N": 4, "R": 4, "mode": "localized", "k": 2, "repeat_loads": 2}"#,
        None,
    )
    .unwrap()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn presets_parse_and_merge() {
    for name in PRESETS {
        let cfg = preset(name).unwrap();
        assert_eq!(cfg.preset.as_deref(), Some(*name));
        cfg.sweep().unwrap();
    }
    let cfg = parse_config(r#"{"preset": "desk-heterogeneous", "seed": 9}"#, None).unwrap();
    assert_eq!(cfg.example, "heterogeneous");
    assert_eq!(cfg.seed, 9);
    let cfg = parse_config(r#"{"N": 16}"#, Some("desk-oscillatory")).unwrap();
    assert_eq!((cfg.n, cfg.epsilon), (16, 0.08));
}

#[test]
fn bad_configurations_map_to_config_exit_code() {
    for text in [
        r#"{"bogus": 1}"#,
        r#"[1, 2]"#,
        r#"{"N": "eight"}"#,
        r#"{"preset": "nope"}"#,
        "not json",
    ] {
        let err = parse_config(text, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{text}: {err}");
        assert_eq!(exit_code(&err), EXIT_CONFIG);
    }
    let mut cfg = small();
    cfg.n_list.clear();
    assert!(matches!(run_convergence(&cfg), Err(Error::Config(_))));
    cfg.n_list = vec![3];
    assert!(cfg.sweep().is_err());
    cfg.mode = "fancy".into();
    assert!(cfg.base_problem().is_err());
}

#[test]
fn binary_entry_point_reports_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"unknown_key": true}"#).unwrap();
    let out = dir.path().join("out");
    let args = |extra: &[&str]| {
        let mut v = vec!["lod-ocp".to_string()];
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    assert_eq!(main_with_args(args(&["solve", "--config", bad.to_str().unwrap()])), EXIT_CONFIG);
    assert_eq!(main_with_args(args(&["solve", "--preset", "missing"])), EXIT_CONFIG);
    assert_eq!(main_with_args(args(&["frobnicate"])), EXIT_CONFIG);
    let good = dir.path().join("good.json");
    fs::write(&good, r#"{"N": 4, "R": 2, "mode": "localized", "k": 1, "nodes": [4]}"#).unwrap();
    assert_eq!(
        main_with_args(args(&["decay", "--config", good.to_str().unwrap(), "--out", out.to_str().unwrap()])),
        EXIT_OK
    );
    assert!(out.join("decay.csv").exists() && out.join("manifest.json").exists());
}

#[test]
fn solve_outputs_are_reproducible() {
    let cfg = small();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = execute(Command::Solve, &cfg, a.path()).unwrap();
    let mb = execute(Command::Solve, &cfg, b.path()).unwrap();
    assert_eq!(ma.checksums, mb.checksums);
    assert_eq!(ma.checksums.len(), 3);
    for (name, sum) in &ma.checksums {
        let text = fs::read_to_string(a.path().join(name)).unwrap();
        assert_eq!(&payload_checksum(&text), sum);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["config"]["N"], 4);
    let summary = fs::read_to_string(a.path().join("solve.csv")).unwrap();
    let err = column(&summary, "rel_energy_err");
    assert_eq!(err[0], 0.0);
    assert!(err[2] < err[1]);
}

#[test]
fn decay_output_is_byte_stable_and_zero_for_zero_steps() {
    let mut cfg = small();
    cfg.nodes = vec![0, 4];
    let first = run_decay(&cfg).unwrap();
    assert_eq!(first, run_decay(&cfg).unwrap());
    assert!(first.starts_with(DECAY_HEADER));
    cfg.k = Some(0);
    let zero = run_decay(&cfg).unwrap();
    let rows: Vec<&str> = zero.lines().skip(1).filter(|l| l.ends_with(",0")).collect();
    assert!(!rows.is_empty());
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[2].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn raw_basis_export_is_the_prolonged_hat() {
    let mut cfg = small();
    cfg.nodes = vec![4];
    let files = run_basis_export(&cfg).unwrap();
    assert_eq!(files.len(), 3);
    let (name, raw) = files.iter().find(|(n, _)| n.ends_with("_raw.csv")).unwrap();
    assert_eq!(name, "basis_node4_raw.csv");
    let grid = GridPair::build_nested(4, 4).unwrap();
    let interp = InterpOperators::build(&grid);
    let mut e = vec![0.0; grid.n_coarse()];
    e[4] = 1.0;
    let hat = interp.prolong(&e).unwrap();
    assert_eq!(column(raw, "b1_p"), hat);
    assert_eq!(column(raw, "b2_y"), hat);
    assert!(column(raw, "b1_y").iter().chain(&column(raw, "b2_p")).all(|&v| v == 0.0));
    cfg.nodes = vec![99];
    assert!(run_basis_export(&cfg).is_err());
}

#[test]
fn convergence_table_has_slope_rows() {
    let mut cfg = small();
    cfg.n_list = vec![2, 4];
    cfg.fine_cells = Some(8);
    cfg.modes = vec!["localized".into(), "coarse".into()];
    let rows = run_convergence(&cfg).unwrap();
    assert_eq!(rows.len(), 4);
    let csv = convergence_csv(&rows).unwrap();
    assert!(csv.starts_with(CONVERGENCE_HEADER));
    assert_eq!(csv.lines().filter(|l| l.contains("slope")).count(), 4);
}

#[test]
fn slope_and_checksum_helpers() {
    let h = [0.25, 0.125, 0.0625];
    let err: Vec<f64> = h.iter().map(|x: &f64| 3.0 * x.powi(2)).collect();
    let (s, r) = loglog_slope(&h, &err).unwrap();
    assert!((s - 2.0).abs() < 1e-12 && r < 1e-12);
    assert!(loglog_slope(&[0.5], &[1.0]).is_err());
    assert!(loglog_slope(&[0.5, 0.5], &[1.0, 2.0]).is_err());
    assert!(loglog_slope(&[0.5, 0.25], &[0.0, 2.0]).is_err());
    let csv = "a,wall_time_s,b\n1,0.5,2\n3,0.7,4\n";
    assert_eq!(strip_timing_columns(csv), "a,b\n1,2\n3,4\n");
    assert_eq!(payload_checksum(csv), payload_checksum("a,wall_time_s,b\n1,9.9,2\n3,0.1,4\n"));
    assert_ne!(payload_checksum(csv), payload_checksum("a,wall_time_s,b\n1,0.5,2\n3,0.7,5\n"));
}

use std::path::PathBuf;

use ma_tts::channel::Point;
use ma_tts::config::{ExperimentConfig, Preset, SchemeId, Sweep, SweepAxis};
use ma_tts::sim::*;
use proptest::prelude::*;

fn tiny() -> ExperimentConfig {
    ExperimentConfig {
        iterations: 3,
        realizations: 2,
        evaluation_samples: 4,
        short_term_iterations: 4,
        ..ExperimentConfig::preset(Preset::Desk)
    }
}

fn scratch_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ma-tts-sim-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn apv(points: &[(f64, f64)]) -> Vec<Point> {
    points.iter().map(|&(x, y)| Point::new(x, y)).collect()
}

#[test]
fn feasibility_ratio_examples() {
    assert_eq!(feasibility_ratio(&[vec![1.0, 2.0], vec![3.0, 1.5]], 1.0), 1.0);
    assert_eq!(feasibility_ratio(&[vec![0.5, 2.0], vec![3.0, 0.9]], 1.0), 0.0);
    let rows = vec![vec![2.0, 2.0], vec![1.0, 1.0], vec![1.2, 5.0], vec![0.99, 5.0]];
    assert_eq!(feasibility_ratio(&rows, 1.0), 0.75);
    assert_eq!(feasibility_ratio(&[], 1.0), 0.0);
}

#[test]
fn static_antennas_have_no_delay_and_capped_efficiency() {
    let still = vec![vec![apv(&[(0.0, 0.0), (0.03, 0.0)])]; 5];
    let rates = vec![vec![2.0]; 5];
    let e = energy_metrics(&still, &rates).unwrap();
    assert_eq!(e.delay, 0.0);
    assert_eq!(e.distance, 0.0);
    assert_eq!(e.efficiency, EFFICIENCY_CAP);
}

#[test]
fn constant_speed_energy_example() {
    // One antenna moving 1 cm per interval: 0.1 W and 1 ms per move.
    let traj: Vec<Vec<Vec<Point>>> = (0..6).map(|i| vec![apv(&[(0.01 * i as f64, 0.0), (1.0, 1.0)])]).collect();
    let rates = vec![vec![3.0]; 6];
    let e = energy_metrics(&traj, &rates).unwrap();
    assert!((e.distance - 0.01).abs() < 1e-15);
    assert!((e.delay - 0.001).abs() < 1e-15);
    assert!((e.efficiency - 3.0 / 0.1).abs() < 1e-9);
}

#[test]
fn energy_metrics_average_over_users() {
    let traj = vec![vec![apv(&[(0.0, 0.0)]), apv(&[(0.0, 0.0)])], vec![apv(&[(0.02, 0.0)]), apv(&[(0.0, 0.0)])]];
    let rates = vec![vec![1.0, 4.0], vec![3.0, 4.0]];
    let e = energy_metrics(&traj, &rates).unwrap();
    // User 0: rate 2 over 0.2 W; user 1 never moves.
    assert!((e.efficiency - (10.0 + EFFICIENCY_CAP) / 2.0).abs() < 1e-3);
    assert!((e.delay - 0.001).abs() < 1e-15);
    assert!((e.distance - 0.01).abs() < 1e-15);
}

#[test]
fn energy_metrics_rejects_mismatched_input() {
    assert!(energy_metrics(&[], &[]).is_err());
    let traj = vec![vec![apv(&[(0.0, 0.0)])]; 2];
    assert!(energy_metrics(&traj, &[vec![1.0]]).is_err());
}

proptest! {
    #[test]
    fn delay_is_bounded_by_travel(steps in prop::collection::vec((-0.01f64..0.01, -0.01f64..0.01, -0.01f64..0.01, -0.01f64..0.01), 1..8),
                                  rate in 0.1f64..10.0) {
        let mut pos = [(0.0, 0.0), (0.05, 0.05)];
        let mut traj = vec![vec![apv(&pos)]];
        for (a, b, c, d) in &steps {
            pos[0].0 += a;
            pos[0].1 += b;
            pos[1].0 += c;
            pos[1].1 += d;
            traj.push(vec![apv(&pos)]);
        }
        let rates = vec![vec![rate]; traj.len()];
        let e = energy_metrics(&traj, &rates).unwrap();
        prop_assert!(e.delay >= 0.0);
        prop_assert!(e.delay * REPOSITIONING_SPEED <= e.distance + 1e-15);
        prop_assert!(e.delay * REPOSITIONING_SPEED * 2.0 >= e.distance - 1e-15);
        prop_assert!(e.efficiency > 0.0 && e.efficiency <= EFFICIENCY_CAP);

        // Shifting the whole trajectory changes nothing.
        let shifted: Vec<Vec<Vec<Point>>> = traj
            .iter()
            .map(|i| i.iter().map(|a| a.iter().map(|p| Point::new(p.x + 0.3, p.y - 0.2)).collect()).collect())
            .collect();
        let s = energy_metrics(&shifted, &rates).unwrap();
        prop_assert!((s.distance - e.distance).abs() <= 1e-12);
        prop_assert!((s.delay - e.delay).abs() <= 1e-12);
    }
}

#[test]
fn one_row_per_scheme_and_sweep_point() {
    let mut cfg = tiny();
    cfg.realizations = 1;
    let res = run_experiment(&cfg).unwrap();
    assert_eq!(res.rows.len(), SchemeId::ALL.len());
    for (row, id) in res.rows.iter().zip(SchemeId::ALL) {
        assert_eq!(row.scheme, id.name());
        assert_eq!(row.sweep_name, "none");
        assert_eq!(row.realizations, 1);
        assert!(row.avg_sum_rate.is_finite() && row.avg_sum_rate > 0.0);
        assert!(row.feasibility_ratio == 0.0 || row.feasibility_ratio == 1.0);
    }
    // Schemes with statistics-only receive APVs never move during transmission.
    for row in res.rows.iter().filter(|r| r.scheme.starts_with("scsit")) {
        assert_eq!(row.energy_eff, EFFICIENCY_CAP);
        assert_eq!(row.repositioning_delay, 0.0);
    }

    cfg.schemes = vec![SchemeId::ScsitUpa, SchemeId::ProposedGmm];
    cfg.sweep = Some(Sweep { axis: SweepAxis::PowerDbm, values: vec![10.0, 20.0] });
    let res = run_experiment(&cfg).unwrap();
    let order: Vec<(String, f64)> = res.rows.iter().map(|r| (r.scheme.clone(), r.sweep_value)).collect();
    assert_eq!(
        order,
        vec![
            ("scsit-upa".to_string(), 10.0),
            ("proposed-gmm".to_string(), 10.0),
            ("scsit-upa".to_string(), 20.0),
            ("proposed-gmm".to_string(), 20.0)
        ]
    );
    assert!(res.rows.iter().all(|r| r.sweep_name == "power_dbm"));
}

#[test]
fn rows_aggregate_outcomes() {
    let cfg = ExperimentConfig { schemes: vec![SchemeId::ProposedGmm], realizations: 3, ..tiny() };
    let res = run_experiment(&cfg).unwrap();
    assert_eq!(res.outcomes.len(), 3);
    let mean = res.outcomes.iter().map(|o| o.sum_rate).sum::<f64>() / 3.0;
    assert!((res.rows[0].avg_sum_rate - mean).abs() < 1e-12);
    for o in &res.outcomes {
        assert!((o.user_rates.iter().sum::<f64>() - o.sum_rate).abs() < 1e-12);
        assert!(o.iterate_sum_rates.is_empty());
    }
}

#[test]
fn iterate_trace_ends_at_the_reported_rate() {
    let cfg = tiny();
    let out = run_realization(SchemeId::ProposedGmm, &cfg, 0, 0, true).unwrap();
    assert_eq!(out.iterate_sum_rates.len(), cfg.iterations + 1);
    assert!((out.iterate_sum_rates[0] - out.initial_sum_rate).abs() < 1e-12);
    assert!((out.iterate_sum_rates.last().unwrap() - out.sum_rate).abs() < 1e-12);
}

#[test]
fn worker_count_does_not_change_results() {
    let cfg = ExperimentConfig { schemes: vec![SchemeId::ProposedPmm, SchemeId::ScsitGmm], ..tiny() };
    let a = run_experiment(&ExperimentConfig { workers: 1, ..cfg.clone() }).unwrap();
    let b = run_experiment(&ExperimentConfig { workers: 3, ..cfg }).unwrap();
    assert_eq!(a, b);
}

#[test]
fn same_seed_same_files() {
    let cfg = ExperimentConfig { schemes: vec![SchemeId::ProposedGmm, SchemeId::ScsitUpa], trace: true, ..tiny() };
    let (a, b) = (scratch_dir("det-a"), scratch_dir("det-b"));
    for dir in [&a, &b] {
        let res = run_experiment(&cfg).unwrap();
        emit_results(&res, &cfg, dir).unwrap();
    }
    for file in [CSV_FILE, MANIFEST_FILE] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
    let other = ExperimentConfig { seed: cfg.seed + 1, ..cfg.clone() };
    let res = run_experiment(&other).unwrap();
    let c = scratch_dir("det-c");
    emit_results(&res, &other, &c).unwrap();
    assert_ne!(std::fs::read(a.join(CSV_FILE)).unwrap(), std::fs::read(c.join(CSV_FILE)).unwrap());
    for d in [a, b, c] {
        std::fs::remove_dir_all(d).unwrap();
    }
}

#[test]
fn csv_and_manifest_contents() {
    let cfg = ExperimentConfig { schemes: vec![SchemeId::ScsitUpa], realizations: 1, ..tiny() };
    let res = run_experiment(&cfg).unwrap();
    let dir = scratch_dir("contents");
    let (csv, manifest) = emit_results(&res, &cfg, &dir).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[0],
        "scheme,sweep_name,sweep_value,avg_sum_rate,feasibility_ratio,energy_eff,repositioning_delay,realizations,seed"
    );
    assert_eq!(read_rows(&csv).unwrap(), res.rows);

    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(json["artifact"], "ma-tts");
    assert_eq!(json["rows"].as_array().unwrap().len(), 1);
    assert!(json.get("traces").is_none() || json["traces"].is_null());
    assert!(json["config"].get("out_dir").is_none());
    let back: ExperimentConfig = serde_json::from_value(json["config"].clone()).unwrap();
    assert_eq!(back, ExperimentConfig { out_dir: back.out_dir.clone(), ..cfg });
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn unwritable_output_fails_before_work() {
    let dir = scratch_dir("blocked");
    std::fs::create_dir_all(&dir).unwrap();
    let file = dir.join("plain-file");
    std::fs::write(&file, b"x").unwrap();
    assert!(prepare_output_dir(&file.join("out")).is_err());
    let empty = ExperimentResult { rows: vec![], outcomes: vec![] };
    assert!(emit_results(&empty, &tiny(), &dir).is_err());
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn short_term_trace_never_decreases() {
    let cfg = ExperimentConfig::preset(Preset::Desk);
    for scheme in [SchemeId::ProposedGmm, SchemeId::ProposedPmm] {
        for r in 0..3 {
            let t = short_term_trace(&cfg, scheme, r, 10).unwrap();
            assert_eq!(t.len(), 11);
            assert!(t.windows(2).all(|w| w[1] >= w[0]), "{scheme} {t:?}");
        }
    }
}

#[test]
fn shared_statistics_across_schemes() {
    let cfg = ExperimentConfig::preset(Preset::Desk);
    let sys = cfg.system();
    assert_eq!(realization_statistics(&sys, 3, 4), realization_statistics(&sys, 3, 4));
    assert_ne!(realization_statistics(&sys, 3, 4), realization_statistics(&sys, 3, 5));
    assert_ne!(training_seed(3, 4), training_seed(3, 5));
    // Sweeping power does not touch the channel statistics.
    let louder = cfg.with_axis(SweepAxis::PowerDbm, 30.0).system();
    assert_eq!(realization_statistics(&sys, 3, 4), realization_statistics(&louder, 3, 4));
}

#[test]
fn sweep_points_cover_the_axis() {
    let (name, pts) = sweep_points(&tiny());
    assert_eq!(name, "none");
    assert_eq!(pts.len(), 1);
    let cfg = ExperimentConfig { sweep: Some("x_r=0.5,1,1.5".parse().unwrap()), ..tiny() };
    let (name, pts) = sweep_points(&cfg);
    assert_eq!(name, "rx_region_lambda");
    let xs: Vec<f64> = pts.iter().map(|p| p.1.rx_region_lambda).collect();
    assert_eq!(xs, vec![0.5, 1.0, 1.5]);
}

#[test]
fn toml_overrides_the_preset() {
    let cfg = ExperimentConfig::from_toml_str("n_users = 3\npower_dbm = 15.0\nschemes = [\"scsit-upa\"]\n", Preset::Desk).unwrap();
    assert_eq!(cfg.n_users, 3);
    assert_eq!(cfg.power_dbm, 15.0);
    assert_eq!(cfg.schemes, vec![SchemeId::ScsitUpa]);
    assert_eq!(cfg.n_tx_antennas, 4);
    let cfg = ExperimentConfig::from_toml_str("[sweep]\naxis = \"power_dbm\"\nvalues = [5.0, 10.0]\n", Preset::Paper).unwrap();
    assert_eq!(cfg.sweep, Some(Sweep { axis: SweepAxis::PowerDbm, values: vec![5.0, 10.0] }));

    let round = ExperimentConfig::from_toml_str(&cfg.to_toml(), Preset::Desk).unwrap();
    assert_eq!(round, cfg);
}

#[test]
fn bad_configs_are_rejected() {
    for text in [
        "no_such_key = 1",
        "n_users = 0",
        "tau_t = 1.0",
        "armijo_xi = 1.5",
        "schemes = []",
        "schemes = [\"nope\"]",
        "n_users = \"two\"",
        "distance_max_m = 1.0",
        "[sweep]\naxis = \"power_dbm\"\nvalues = []",
        "[sweep]\naxis = \"rx_region_lambda\"\nvalues = [-1.0]",
    ] {
        assert!(ExperimentConfig::from_toml_str(text, Preset::Desk).is_err(), "{text}");
    }
}

#[test]
fn presets() {
    let p = ExperimentConfig::preset(Preset::Paper);
    assert_eq!((p.n_tx_antennas, p.n_rx_antennas, p.n_users, p.n_paths), (8, 2, 4, 10));
    assert_eq!((p.iterations, p.batch_size, p.short_term_iterations), (100, 10, 30));
    assert_eq!((p.power_dbm, p.noise_dbm, p.rate_min_bps_hz), (20.0, -80.0, 1.0));
    let sys = p.system();
    assert!((sys.power - 0.1).abs() < 1e-15);
    assert!((sys.noise - 1e-11).abs() < 1e-25);
    assert!((sys.min_distance - 0.03).abs() < 1e-15);
    assert!((sys.tau_q * sys.power * sys.power + 1.0).abs() < 1e-12);
    let d = ExperimentConfig::preset(Preset::Desk);
    assert_eq!((d.n_tx_antennas, d.n_users, d.iterations, d.realizations), (4, 2, 30, 50));
}

#[test]
fn sweep_and_scheme_parsing() {
    let s: Sweep = "power=5,10,15".parse().unwrap();
    assert_eq!(s.axis, SweepAxis::PowerDbm);
    assert_eq!(s.values, vec![5.0, 10.0, 15.0]);
    for axis in SweepAxis::ALL {
        assert_eq!(axis.name().parse::<SweepAxis>().unwrap(), axis);
    }
    for id in SchemeId::ALL {
        assert_eq!(id.name().parse::<SchemeId>().unwrap(), id);
    }
    assert!("x_t".parse::<SweepAxis>().is_ok());
    assert!("power_dbm=".parse::<Sweep>().is_err());
    assert!("power_dbm=1,abc".parse::<Sweep>().is_err());
    assert!("volume=1".parse::<Sweep>().is_err());
    assert!("proposed".parse::<SchemeId>().is_err());
}

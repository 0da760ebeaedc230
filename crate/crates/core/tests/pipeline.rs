//! End-to-end pipeline: config files, beam sweeps, CSV round trips and a
//! small fit on data written to disk.

use flagella::beam::Regime;
use flagella::calib::{self, Config, Design, ExperimentRecord, ExperimentSeries, FitOptions, Model, ParamBounds, SweepRow};

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("robot.toml");
    let mut cfg = Config::preset(Design::Two);
    cfg.robot.n = 3;
    cfg.beam.regime = Regime::Nlb;
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let back = Config::load(&path, &Config::preset(Design::One)).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn partial_config_overlays_preset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("partial.toml");
    std::fs::write(&path, "[medium]\nC1 = 3.0\n").unwrap();
    let base = Config::preset(Design::One);
    let cfg = Config::load(&path, &base).unwrap();
    assert_eq!(cfg.medium.c1, 3.0);
    assert_eq!(cfg.medium.c2, base.medium.c2);
    assert_eq!(cfg.robot, base.robot);
}

#[test]
fn missing_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(Config::load(&dir.path().join("absent.toml"), &Config::preset(Design::One)).is_err());
}

#[test]
fn sweep_csv_round_trip() {
    let cfg = Config::preset(Design::One);
    let rows = calib::sweep(&cfg, Model::Beam, &[2, 3], &[cfg.robot.flagellum_length], &[50.0, 150.0]);
    assert!(rows.iter().all(|r| r.error.is_empty()));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    calib::write_csv(&path, &rows).unwrap();
    let back: Vec<SweepRow> = calib::read_csv(&path).unwrap();
    assert_eq!(back.len(), rows.len());
    for (a, b) in rows.iter().zip(&back) {
        assert_eq!(a.n, b.n);
        assert!((a.v.unwrap() - b.v.unwrap()).abs() <= 1e-12 * a.v.unwrap().abs());
    }
}

#[test]
fn fit_from_csv_recovers_medium() {
    let mut cfg = Config::preset(Design::One);
    cfg.beam.grid_points = 32;
    let speeds = [50.0, 150.0, 250.0];
    let records: Vec<ExperimentRecord> = [2, 3]
        .iter()
        .flat_map(|&n| calib::synthetic_series(&cfg, Model::Beam, Design::One, n, &speeds, 0.05).unwrap().records)
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    calib::write_csv(&path, &records).unwrap();
    let read: Vec<ExperimentRecord> = calib::read_csv(&path).unwrap();
    let series = ExperimentSeries::group(Design::One, &read);
    assert_eq!(series.len(), 2);
    let m = cfg.medium;
    let fit = calib::fit_parameters(&cfg, &series, Model::Beam, [2.0, 0.05, 6.0], ParamBounds::default(), FitOptions::default())
        .unwrap();
    assert!((fit.c1 - m.c1).abs() < 0.01 * m.c1, "C1 {}", fit.c1);
    assert!((fit.c2 - m.c2).abs() < 0.01 * m.c2, "C2 {}", fit.c2);
    assert!((fit.mu - m.mu).abs() < 0.01 * m.mu, "mu {}", fit.mu);
}

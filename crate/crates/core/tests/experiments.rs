mod common;

use shapegd::experiment::config::{ExperimentConfig, ModelKind, PureShapeConfig, Scenario};
use shapegd::experiment::detection::run_detection_sweep;
use shapegd::experiment::fragility::run_count_fragility;
use shapegd::experiment::pure_shape::run_pure_shape;
use shapegd::experiment::setup::build_setup;

#[test]
fn benign_control_fires_at_the_calibrated_rate() {
    let cfg = ExperimentConfig {
        seed: 21,
        ..ExperimentConfig::default()
    };
    let setup = build_setup(&cfg, &[]).unwrap();
    let ps = PureShapeConfig {
        neighborhoods: 500,
        bins: vec![cfg.reference.bins],
        control: true,
        ..PureShapeConfig::default()
    };
    let r = run_pure_shape(&setup, &ps, cfg.seed).unwrap();
    let o = &r.outcomes[0];
    // Both sets are benign: each exceeds gamma about 1% of the time.
    assert!(o.fp_rate <= 0.03, "fp {}", o.fp_rate);
    assert!(o.tp_rate <= 0.03, "second benign set {}", o.tp_rate);
    assert!(o.gap() < 0.0, "benign sets must overlap");
}

#[test]
fn gap_shrinks_with_separation() {
    let separations = [2.5, 2.0, 1.5, 1.0, 0.5];
    let mut gaps = Vec::new();
    for &sep in &separations {
        let mut cfg = common::small_config(31);
        cfg.model.kind = ModelKind::Isotropic;
        cfg.model.separation = Some(sep);
        let setup = build_setup(&cfg, &[]).unwrap();
        let ps = PureShapeConfig {
            neighborhoods: 100,
            bins: vec![cfg.reference.bins],
            ..PureShapeConfig::default()
        };
        gaps.push(run_pure_shape(&setup, &ps, cfg.seed).unwrap().outcomes[0].gap());
    }
    assert!(gaps.windows(2).all(|w| w[0] > w[1]), "{gaps:?}");
    assert!(gaps[0] > 0.0 && *gaps.last().unwrap() < 0.0, "{gaps:?}");
}

#[test]
fn count_gd_rates_fall_as_the_size_estimate_grows() {
    let cfg = common::small_config(41);
    let setup = build_setup(&cfg, &[]).unwrap();
    let mut fc = cfg.count_fragility.clone();
    fc.errors = Some((-15..=25).map(|i| i as f64 / 100.0).collect());
    let r = run_count_fragility(&setup, &fc, cfg.seed).unwrap();
    assert!(r.rows.windows(2).all(|w| w[1].count_fp <= w[0].count_fp));
    assert!(r.rows.windows(2).all(|w| w[1].count_tp <= w[0].count_tp));
    assert!(r.rows.windows(2).all(|w| w[1].threshold >= w[0].threshold));
    let zero = r.rows.iter().find(|row| row.relative_error == 0.0).unwrap();
    assert!(zero.count_fp <= 0.03 && zero.count_tp >= 0.99, "{zero:?}");
}

#[test]
fn wider_waterhole_windows_detect_later() {
    let mut cfg = common::small_config(51);
    cfg.scenario = Scenario::Waterhole;
    cfg.detection.ntw = vec![6.0, 100.0];
    cfg.detection.repetitions = 10;
    let setup = build_setup(&cfg, &[]).unwrap();
    let e = run_detection_sweep(&cfg, &setup).unwrap();
    let narrow = e[0].summary.median_infected.unwrap();
    let wide = e[1].summary.median_infected.unwrap();
    assert!(wide > narrow, "6 s: {narrow}, 100 s: {wide}");
}

#[test]
fn no_clicks_means_no_detections() {
    let mut cfg = common::small_config(61);
    cfg.scenario = Scenario::Phishing;
    cfg.detection.infection = vec![0.0];
    cfg.detection.repetitions = 20;
    let setup = build_setup(&cfg, &[]).unwrap();
    let e = run_detection_sweep(&cfg, &setup).unwrap();
    let s = &e[0].summary;
    assert_eq!(s.censored, 20);
    assert!(e[0].runs.iter().all(|r| r.infected_at_end == 0));
    let rate = s.false_alarm_rate.unwrap();
    assert!(rate <= 0.03, "false alarm rate {rate}");
}

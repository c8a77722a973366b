mod common;

use common::*;
use dctmap::data::simulate_scan;
use dctmap::eval::{random_beams, synthetic_scene, SceneConfig};
use dctmap::field::SpectralField;
use dctmap::fit::{fit, fit_from, initial_map, FitConfig, FitInit, HessianMode};
use dctmap::{Error, Extent, ScanSet, SensorLimits, SpectralMap};

fn extent() -> Extent {
    Extent::new(10.0, 10.0).unwrap()
}

#[test]
fn empty_scan_set_is_invalid_input() {
    let scans = ScanSet::new(SensorLimits::default(), Some(extent()));
    assert!(matches!(fit(&scans, extent(), &FitConfig::with_size(2, 2)), Err(Error::InvalidInput(_))));
}

#[test]
fn constant_field_recovery_across_map_sizes() {
    let truth = SpectralMap::constant(1, 1, 0.8, extent()).unwrap();
    let mut rng = rng(60);
    let beams = random_beams(&mut rng, extent(), 40, 50, 0.5).unwrap();
    let mut scans = simulate_scan(&SpectralField::new(&truth), &beams, SensorLimits::new(0.04, 80.0).unwrap(), 61).unwrap();
    scans.extent = Some(extent());
    for n in [1, 2, 3] {
        let (map, report) = fit(&scans, extent(), &FitConfig::with_size(n, n)).unwrap();
        assert!(report.converged);
        assert!(report.loglik_trace.windows(2).all(|w| w[1] >= w[0]));
        let mean = map.eval_lambda(dctmap::Point2::new(5.0, 5.0)).unwrap();
        assert!((mean - 0.64).abs() / 0.64 < 0.1, "{n}×{n}: λ(centre) = {mean}");
    }
}

#[test]
fn newton_and_gradient_modes_agree_on_a_small_problem() {
    let config = SceneConfig {
        truth_size: 2,
        ..SceneConfig::default()
    };
    let scene = synthetic_scene(62, &config).unwrap();
    let newton = FitConfig {
        rows: 2,
        cols: 2,
        rel_tol: 1e-9,
        ..FitConfig::default()
    };
    let gradient = FitConfig {
        hessian_mode: HessianMode::GradientOnly,
        max_iters: 5000,
        ..newton.clone()
    };
    let (_, a) = fit(&scene.scans, extent(), &newton).unwrap();
    let (_, b) = fit(&scene.scans, extent(), &gradient).unwrap();
    assert!((a.final_loglik - b.final_loglik).abs() < 1e-3 * a.final_loglik.abs(), "{} vs {}", a.final_loglik, b.final_loglik);
    assert!(a.final_loglik >= b.final_loglik - 1e-6);
}

#[test]
fn sign_flipped_start_reaches_the_same_likelihood() {
    let scene = synthetic_scene(63, &SceneConfig::default()).unwrap();
    let config = FitConfig {
        rows: 4,
        cols: 4,
        init: FitInit::ConstantPlusNoise { scale: 0.1, seed: 1 },
        ..FitConfig::default()
    };
    let init = initial_map(&scene.scans, extent(), &config).unwrap();
    let (m1, r1) = fit_from(&scene.scans, init.clone(), &config).unwrap();
    let (m2, r2) = fit_from(&scene.scans, init.negated(), &config).unwrap();
    assert!((r1.final_loglik - r2.final_loglik).abs() <= 1e-6 * r1.final_loglik.abs());
    assert_eq!(m1.negated().coeffs(), m2.coeffs());
}

#[test]
fn fits_are_reproducible() {
    let scene = synthetic_scene(64, &SceneConfig::default()).unwrap();
    let config = FitConfig::with_size(5, 5);
    let (a, ra) = fit(&scene.scans, extent(), &config).unwrap();
    let (b, rb) = fit(&scene.scans, extent(), &config).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    assert_eq!(ra.loglik_trace, rb.loglik_trace);
}

#[test]
fn report_serializes_to_json() {
    let scene = synthetic_scene(65, &SceneConfig::default()).unwrap();
    let (_, report) = fit(&scene.scans, extent(), &FitConfig::with_size(2, 2)).unwrap();
    let json = serde_json::to_string(&report).unwrap();
    let back: dctmap::fit::FitReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
}

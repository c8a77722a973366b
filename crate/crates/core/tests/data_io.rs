mod common;

use common::*;
use dctmap::data::{
    extract_patch, parse_carmen, read_scan_set, scans_to_rays, simulate_detailed, write_flaser, write_scan_set,
    PatchSpec,
};
use dctmap::field::SpectralField;
use dctmap::{Extent, Point2, Ray2, RayOutcome, SensorLimits, SpectralMap};

const LOG: &str = "\
# synthetic Carmen log
PARAM laser_front_laser_fov 180
ODOM 0 0 0 0 0 0 0.0 host 0.0
FLASER 5 1.0 2.0 80.0 0.01 3.0 2.0 2.0 0.0 2.0 2.0 0.0 1.0 host 1.0
FLASER 5 0.5 0.5 0.5 0.5 0.5 3.0 2.5 1.5707963267948966 3.0 2.5 1.5707963267948966 2.0 host 2.0
";

#[test]
fn log_to_patch_to_file() {
    let raw = parse_carmen(LOG.as_bytes()).unwrap();
    assert_eq!(raw.len(), 2);
    let again: Vec<_> = raw.iter().flat_map(|s| parse_carmen(write_flaser(s).as_bytes()).unwrap()).collect();
    assert_eq!(raw, again);

    let limits = SensorLimits::default();
    let scans = scans_to_rays(&raw, limits).unwrap();
    assert_eq!(scans.len(), 10);
    let count = |o: fn(&RayOutcome) -> bool| scans.rays.iter().filter(|z| o(&z.outcome)).count();
    assert_eq!(count(|o| *o == RayOutcome::Super), 1);
    assert_eq!(count(|o| *o == RayOutcome::Sub), 1);
    assert_eq!(count(|o| matches!(o, RayOutcome::Return(_))), 8);

    // 3 × 3 patch with its corner at (1, 1): both poses are inside.
    let patch = PatchSpec::new(Point2::new(1.0, 1.0), 3.0, 3.0, 100).unwrap();
    let local = extract_patch(&scans, &patch).unwrap();
    assert_eq!(local.len(), 10);
    // First scan, beam 0 points along −y from (1, 1) local: exits after 1 m,
    // so the 1 m return stays; beam 1 (−45°) at 2 m is past the boundary.
    assert_eq!(local.rays[0].outcome, RayOutcome::Return(1.0));
    assert_eq!(local.rays[1].outcome, RayOutcome::Super);
    assert_eq!(local.rays[4].outcome, RayOutcome::Super);
    local.validate().unwrap();

    let text = write_scan_set(&local);
    assert_eq!(read_scan_set(&text).unwrap(), local);
}

/// Returns from a constant field along one fixed ray follow the truncated
/// exponential distribution.
#[test]
fn constant_field_ranges_are_truncated_exponential() {
    let c: f64 = 0.6;
    let extent = Extent::new(10.0, 10.0).unwrap();
    let map = SpectralMap::constant(1, 1, c, extent).unwrap();
    let limits = SensorLimits::new(0.1, 6.0).unwrap();
    let ray = Ray2::new(Point2::new(1.0, 5.0), [1.0, 0.0]).unwrap();
    let sims = simulate_detailed(&SpectralField::new(&map), &vec![ray; 10_000], limits, 77).unwrap();
    let mut ranges: Vec<f64> = sims
        .iter()
        .filter_map(|s| match s.measurement.outcome {
            RayOutcome::Return(r) => Some(r),
            _ => None,
        })
        .collect();
    let lambda = c * c;
    let (lo, hi) = (limits.r_min, limits.r_max);
    let cdf = |r: f64| ((-lambda * lo).exp() - (-lambda * r).exp()) / ((-lambda * lo).exp() - (-lambda * hi).exp());
    let n = ranges.len() as f64;
    let d = ks_statistic(&mut ranges, cdf);
    // critical value at significance 0.01
    assert!(d < 1.628 / n.sqrt(), "KS {d} with {n} samples");
}

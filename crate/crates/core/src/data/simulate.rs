//! Exact sampling of lidar measurements from a decay-rate field.
//!
//! For each beam draw `u ~ U(0, 1]` and look for the range `r*` where the
//! survival probability `N(r*) = exp(−S(r*))` drops to `u`. The beam is sub
//! if that happens before `r_min`, super if it does not happen before `r_max`
//! or the field boundary, and a return at `r*` otherwise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::DecayField;
use crate::forward::{LidarRay, RayOutcome, ScanSet, SensorLimits};
use crate::spectral::Ray2;

/// A simulated measurement together with the uniform draw behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedRay {
    pub measurement: LidarRay,
    pub u: f64,
}

const MAX_ROOT_ITERS: usize = 200;

/// Solves `S(r) = target` on `[lo, hi]`, given `S(lo) < target ≤ S(hi)`,
/// with Newton steps that fall back to bisection when they leave the bracket.
fn solve_range<F: DecayField + ?Sized>(field: &F, ray: &Ray2, target: f64, u: f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut r = lo;
    let mut s = field.line_integral(ray, lo);
    for _ in 0..MAX_ROOT_ITERS {
        let slope = field.decay_along(ray, r);
        let newton = r + (target - s) / slope;
        r = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        s = field.line_integral(ray, r);
        if ((-s).exp() - u).abs() < 1e-13 {
            break;
        }
        if s < target {
            lo = r;
        } else {
            hi = r;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi.max(1.0) {
            break;
        }
    }
    r
}

fn simulate_one<F: DecayField + ?Sized>(field: &F, ray: &Ray2, limits: &SensorLimits, u: f64) -> Result<RayOutcome> {
    let exit = field
        .exit_distance(ray)
        .ok_or_else(|| Error::invalid("simulated beam starts outside the field"))?;
    let target = -u.ln();
    let sub_end = limits.r_min.min(exit);
    let s_sub = field.line_integral(ray, sub_end);
    if s_sub >= target && sub_end > 0.0 {
        return Ok(RayOutcome::Sub);
    }
    let horizon = limits.r_max.min(exit);
    if horizon <= limits.r_min {
        return Ok(RayOutcome::Super);
    }
    if field.line_integral(ray, horizon) < target {
        return Ok(RayOutcome::Super);
    }
    let r = solve_range(field, ray, target, u, limits.r_min, horizon);
    Ok(RayOutcome::Return(r.clamp(limits.r_min, horizon)))
}

/// Simulates one measurement per beam. Beam `k` uses ChaCha stream `k` of
/// `seed`, so results do not depend on scheduling.
pub fn simulate_detailed<F: DecayField + ?Sized>(
    field: &F,
    beams: &[Ray2],
    limits: SensorLimits,
    seed: u64,
) -> Result<Vec<SimulatedRay>> {
    beams
        .par_iter()
        .enumerate()
        .map(|(k, ray)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let u = 1.0 - rng.random::<f64>();
            let outcome = simulate_one(field, ray, &limits, u)?;
            Ok(SimulatedRay {
                measurement: LidarRay::new(*ray, outcome),
                u,
            })
        })
        .collect()
}

/// Like [`simulate_detailed`] but returns just the measurements. The set has
/// no extent; callers that know it should set it.
pub fn simulate_scan<F: DecayField + ?Sized>(field: &F, beams: &[Ray2], limits: SensorLimits, seed: u64) -> Result<ScanSet> {
    let rays = simulate_detailed(field, beams, limits, seed)?
        .into_iter()
        .map(|s| s.measurement)
        .collect();
    ScanSet::from_rays(rays, limits, None)
}

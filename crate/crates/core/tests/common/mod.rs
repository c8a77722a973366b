//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use dctmap::{Point2, Ray2, SpectralMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// `λ(p)` as the square of the plain double cosine sum.
pub fn lambda_double_sum(map: &SpectralMap, p: Point2) -> f64 {
    let e = map.extent();
    let (xt, yt) = (PI * p.x / e.x, PI * p.y / e.y);
    let mut f = 0.0;
    for l in 0..map.rows() {
        for m in 0..map.cols() {
            f += map.coeff(l, m) * (l as f64 * xt).cos() * (m as f64 * yt).cos();
        }
    }
    f * f
}

/// `λ(p)` with the cosine products expanded into sums over sign
/// combinations: `cos A cos B = ½[cos(A+B) + cos(A−B)]`, applied to both
/// coordinates of every coefficient pair.
pub fn lambda_sign_sum(map: &SpectralMap, p: Point2) -> f64 {
    let e = map.extent();
    let (xt, yt) = (PI * p.x / e.x, PI * p.y / e.y);
    let n = map.len();
    let a = map.coeffs();
    let mut total = 0.0;
    for i in 0..n {
        let (li, mi) = map.index_pair(i);
        for j in 0..n {
            let (lj, mj) = map.index_pair(j);
            let mut s = 0.0;
            for alpha in [1.0, -1.0] {
                for beta in [1.0, -1.0] {
                    for gamma in [1.0, -1.0] {
                        let px = li as f64 + alpha * lj as f64;
                        let qy = beta * (mi as f64 + gamma * mj as f64);
                        s += (px * xt + qy * yt).cos();
                    }
                }
            }
            total += a[i] * a[j] * s / 8.0;
        }
    }
    total
}

/// Line integral of `λ` along the ray by quadrature of the double sum.
pub fn line_integral_quadrature(map: &SpectralMap, ray: &Ray2, r: f64) -> f64 {
    simpson(&|t| lambda_double_sum(map, ray.point_at(t)), 0.0, r, 1e-13)
}

/// Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &mut [f64], cdf: F) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let c = cdf(x);
            (c - k as f64 / n).abs().max(((k + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

pub fn random_map(rng: &mut ChaCha8Rng, rows: usize, cols: usize, extent: dctmap::Extent, scale: f64) -> SpectralMap {
    let coeffs = (0..rows * cols).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    SpectralMap::new(rows, cols, coeffs, extent).unwrap()
}

pub fn random_ray(rng: &mut ChaCha8Rng, extent: dctmap::Extent, margin: f64) -> Ray2 {
    let o = Point2::new(
        rng.random_range(margin..extent.x - margin),
        rng.random_range(margin..extent.y - margin),
    );
    Ray2::from_angle(o, rng.random_range(0.0..std::f64::consts::TAU)).unwrap()
}

/// Traversed length per cell of a unit-origin square grid, by stepping
/// along the ray in tiny increments.
pub fn brute_force_lengths(nx: usize, ny: usize, edge: f64, ray: &Ray2, r: f64, steps: usize) -> Vec<f64> {
    let mut lengths = vec![0.0; nx * ny];
    let dt = r / steps as f64;
    for k in 0..steps {
        let p = ray.point_at((k as f64 + 0.5) * dt);
        if p.x < 0.0 || p.y < 0.0 {
            continue;
        }
        let (ix, iy) = ((p.x / edge) as usize, (p.y / edge) as usize);
        if ix < nx && iy < ny {
            lengths[iy * nx + ix] += dt;
        }
    }
    lengths
}

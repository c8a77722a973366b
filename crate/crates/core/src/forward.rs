//! Closed-form forward sensor model on a [`SpectralMap`].
//!
//! Along a ray the squared cosine sum expands into a sum of pure cosines of
//! the ray parameter, so the line integral `S(s, v, r) = ∫₀ʳ λ` has a closed
//! form built from the antiderivative terms
//!
//! ```text
//! A(i, j, α, β, γ) = [sin(p·x̃(t) + q·ỹ(t))]₀ʳ / d     if |d| ≥ ZERO_FREQUENCY_TOL
//!                  = r · cos(p·x̃(0) + q·ỹ(0))        otherwise
//! p = l_i + α·l_j,  q = β·(m_i + γ·m_j),  d = p·ṽx + q·ṽy
//! ```
//!
//! Each term depends on `(i, j, α, β, γ)` only through the frequency pair
//! `(p, q)`, so a ray is summarized by a [`FrequencyTable`] holding one value
//! per pair. The table is coefficient-independent and is what the derivative
//! and fitting code reuse.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{Extent, Ray2, SpectralMap};

/// Below this ray-direction frequency (rad/m) the `r·cos` branch is used.
pub const ZERO_FREQUENCY_TOL: f64 = 1e-9;

/// Decay rates are clamped to at least this value inside logarithms and
/// derivative denominators.
pub const LAMBDA_FLOOR: f64 = 1e-12;

/// Probabilities of no-return outcomes are clamped to at least this value
/// before taking logarithms.
pub const PROB_FLOOR: f64 = f64::MIN_POSITIVE;

/// Returns may lie this far past the map boundary and still be accepted.
pub const BOUNDARY_SLACK: f64 = 1e-9;

/// Rays are processed in fixed-size chunks so parallel sums are reproducible.
pub(crate) const RAY_CHUNK: usize = 32;

/// Valid range interval `[r_min, r_max]` of the scanner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorLimits {
    pub r_min: f64,
    pub r_max: f64,
}

impl SensorLimits {
    pub fn new(r_min: f64, r_max: f64) -> Result<Self> {
        if !(r_min >= 0.0 && r_min < r_max && r_max.is_finite()) {
            return Err(Error::invalid(format!(
                "sensor limits must satisfy 0 ≤ r_min < r_max < ∞, got [{r_min}, {r_max}]"
            )));
        }
        Ok(Self { r_min, r_max })
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.r_min && r <= self.r_max
    }
}

impl Default for SensorLimits {
    fn default() -> Self {
        Self {
            r_min: 0.04,
            r_max: 80.0,
        }
    }
}

/// What the scanner reported for one beam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RayOutcome {
    /// Reflected before `r_min`.
    Sub,
    /// No reflection up to `r_max` (or up to the map boundary).
    Super,
    /// Reflected at the given range.
    Return(f64),
}

/// One measurement: a ray and its outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarRay {
    pub ray: Ray2,
    pub outcome: RayOutcome,
}

impl LidarRay {
    pub fn new(ray: Ray2, outcome: RayOutcome) -> Self {
        Self { ray, outcome }
    }
}

/// An ordered set of measurements sharing sensor limits.
///
/// `extent` is set for patch-local sets, whose rays all start inside
/// `[0, X] × [0, Y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSet {
    pub rays: Vec<LidarRay>,
    pub limits: SensorLimits,
    pub extent: Option<Extent>,
}

impl ScanSet {
    pub fn new(limits: SensorLimits, extent: Option<Extent>) -> Self {
        Self {
            rays: Vec::new(),
            limits,
            extent,
        }
    }

    /// Builds a set, checking every return radius against the limits and,
    /// when an extent is given, every ray against the extent.
    pub fn from_rays(rays: Vec<LidarRay>, limits: SensorLimits, extent: Option<Extent>) -> Result<Self> {
        let set = Self { rays, limits, extent };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, z) in self.rays.iter().enumerate() {
            if let RayOutcome::Return(r) = z.outcome {
                if !self.limits.contains(r) {
                    return Err(Error::invalid(format!(
                        "ray {k}: return range {r} outside [{}, {}]",
                        self.limits.r_min, self.limits.r_max
                    )));
                }
            }
            if let Some(extent) = self.extent {
                let exit = z.ray.exit_distance(extent).ok_or_else(|| {
                    Error::invalid(format!("ray {k}: origin outside the map extent"))
                })?;
                if let RayOutcome::Return(r) = z.outcome {
                    if r > exit + BOUNDARY_SLACK {
                        return Err(Error::invalid(format!(
                            "ray {k}: return at {r} m lies beyond the map boundary ({exit} m)"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn push(&mut self, z: LidarRay) {
        self.rays.push(z);
    }

    /// Concatenation of two sets with identical limits.
    pub fn concat(&self, other: &ScanSet) -> Result<ScanSet> {
        if self.limits != other.limits {
            return Err(Error::invalid("cannot concatenate scan sets with different limits"));
        }
        let mut rays = self.rays.clone();
        rays.extend_from_slice(&other.rays);
        Ok(ScanSet {
            rays,
            limits: self.limits,
            extent: self.extent,
        })
    }
}

/// Length of the ray segment that enters the likelihood of `z`, given the
/// distance `exit` at which the ray leaves the map.
///
/// Sub rays integrate to `r_min`, returns to their range, super rays to
/// `r_max`; all of them are clipped at the boundary.
pub fn integration_length(z: &LidarRay, limits: &SensorLimits, exit: f64) -> Result<f64> {
    match z.outcome {
        RayOutcome::Sub => Ok(limits.r_min.min(exit)),
        RayOutcome::Super => Ok(limits.r_max.min(exit)),
        RayOutcome::Return(r) => {
            if !limits.contains(r) {
                return Err(Error::invalid(format!(
                    "return range {r} outside [{}, {}]",
                    limits.r_min, limits.r_max
                )));
            }
            if r > exit + BOUNDARY_SLACK {
                return Err(Error::invalid(format!(
                    "return at {r} m lies beyond the map boundary ({exit} m)"
                )));
            }
            Ok(r.min(exit))
        }
    }
}

pub(crate) fn exit_distance(map: &SpectralMap, ray: &Ray2) -> Result<f64> {
    ray.exit_distance(map.extent())
        .ok_or_else(|| Error::invalid("ray origin lies outside the map extent"))
}

fn check_length(r: f64) -> Result<()> {
    if r >= 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("integration length must be ≥ 0, got {r}")))
    }
}

/// The antiderivative term `A(i, j, α, β, γ)` evaluated literally from its
/// sine-difference definition. Signs are `±1`.
///
/// [`FrequencyTable`] computes the same quantities in a cancellation-free
/// form; this function is the reference route.
pub fn antiderivative_term(
    map: &SpectralMap,
    ray: &Ray2,
    r: f64,
    i: usize,
    j: usize,
    signs: [i8; 3],
) -> f64 {
    let [alpha, beta, gamma] = signs.map(f64::from);
    let (li, mi) = map.index_pair(i);
    let (lj, mj) = map.index_pair(j);
    let p = li as f64 + alpha * lj as f64;
    let q = beta * (mi as f64 + gamma * mj as f64);
    let (sx, sy) = map.normalize(ray.origin());
    let extent = map.extent();
    let [vx, vy] = ray.direction();
    let vx = std::f64::consts::PI * vx / extent.x;
    let vy = std::f64::consts::PI * vy / extent.y;
    let d = p * vx + q * vy;
    if d.abs() < ZERO_FREQUENCY_TOL {
        r * (p * sx + q * sy).cos()
    } else {
        ((p * (sx + vx * r) + q * (sy + vy * r)).sin() - (p * sx + q * sy).sin()) / d
    }
}

/// Per-ray table of `∫₀ʳ cos(p·x̃(t) + q·ỹ(t)) dt` over every frequency pair
/// reachable by a map of the given size, folded over the sign of `q`.
///
/// Rows run over `p ∈ [0, 2(L−1)]`, columns over `q ∈ [0, 2(M−1)]`; entry
/// `(p, q)` stores `T(p, q) + T(p, −q)`. Negative `p` maps onto positive by
/// `T(−p, −q) = T(p, q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    rows: usize,
    cols: usize,
    folded: Vec<f64>,
}

impl FrequencyTable {
    /// An all-zero table, the identity for [`FrequencyTable::add_scaled`].
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            folded: vec![0.0; (2 * rows - 1) * (2 * cols - 1)],
        }
    }

    /// Tabulates the segment `[0, r]` of `ray` for the geometry of `map`.
    pub fn new(map: &SpectralMap, ray: &Ray2, r: f64) -> Self {
        Self::for_geometry(map.rows(), map.cols(), map.extent(), ray, r)
    }

    pub fn for_geometry(rows: usize, cols: usize, extent: Extent, ray: &Ray2, r: f64) -> Self {
        use std::f64::consts::PI;
        let p_max = 2 * (rows - 1);
        let q_max = 2 * (cols - 1);
        let q_dim = q_max + 1;
        let mut table = Self::zeros(rows, cols);
        if r == 0.0 {
            return table;
        }
        let origin = ray.origin();
        let [dx, dy] = ray.direction();
        let vx = PI * dx / extent.x;
        let vy = PI * dy / extent.y;
        // Phases at the segment midpoint and half-length phase increments.
        let xm = PI * origin.x / extent.x + 0.5 * vx * r;
        let ym = PI * origin.y / extent.y + 0.5 * vy * r;
        let hx = 0.5 * vx * r;
        let hy = 0.5 * vy * r;

        let mid_x: Vec<(f64, f64)> = (0..=p_max).map(|p| (p as f64 * xm).sin_cos()).collect();
        let mid_y: Vec<(f64, f64)> = (0..=q_max).map(|q| (q as f64 * ym).sin_cos()).collect();
        let half_x: Vec<(f64, f64)> = (0..=p_max).map(|p| (p as f64 * hx).sin_cos()).collect();
        let half_y: Vec<(f64, f64)> = (0..=q_max).map(|q| (q as f64 * hy).sin_cos()).collect();

        // T(p, q) = r · cos(θ_mid) · sin(h)/h with h = d·r/2; this is the
        // sine difference rewritten as 2·cos(θ_mid)·sin(h)/d.
        let term = |p: usize, q: usize, qsign: f64| -> f64 {
            let (sxp, cxp) = mid_x[p];
            let (syq, cyq) = mid_y[q];
            let cos_mid = cxp * cyq - sxp * (qsign * syq);
            let d = p as f64 * vx + qsign * q as f64 * vy;
            let h = p as f64 * hx + qsign * q as f64 * hy;
            let sinc = if d.abs() < ZERO_FREQUENCY_TOL || h.abs() < 1e-8 {
                1.0 - h * h / 6.0
            } else if h.abs() < 0.5 {
                h.sin() / h
            } else {
                let (shp, chp) = half_x[p];
                let (shq, chq) = half_y[q];
                (shp * chq + chp * (qsign * shq)) / h
            };
            r * cos_mid * sinc
        };

        for p in 0..=p_max {
            for q in 0..=q_max {
                let value = if q == 0 {
                    2.0 * term(p, 0, 1.0)
                } else {
                    term(p, q, 1.0) + term(p, q, -1.0)
                };
                table.folded[p * q_dim + q] = value;
            }
        }
        table
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Folded value `T(p, q) + T(p, −q)` for `p, q ≥ 0`.
    #[inline]
    pub fn folded(&self, p: usize, q: usize) -> f64 {
        self.folded[p * (2 * self.cols - 1) + q]
    }

    /// `self += weight · other`.
    pub fn add_scaled(&mut self, other: &FrequencyTable, weight: f64) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.folded.iter_mut().zip(&other.folded) {
            *a += weight * b;
        }
    }

    /// Coupling `C_ij = ∂²S/∂a_i∂a_j`, coefficient independent.
    #[inline]
    pub fn coupling(&self, (li, mi): (usize, usize), (lj, mj): (usize, usize)) -> f64 {
        let ps = li + lj;
        let pd = li.abs_diff(lj);
        let qs = mi + mj;
        let qd = mi.abs_diff(mj);
        0.25 * (self.folded(ps, qs) + self.folded(ps, qd) + self.folded(pd, qs) + self.folded(pd, qd))
    }

    /// Dense symmetric `I × I` coupling matrix.
    pub fn coupling_matrix(&self) -> DMatrix<f64> {
        let (l, m) = (self.rows, self.cols);
        let n = l * m;
        let mut c = DMatrix::zeros(n, n);
        for lj in 0..l {
            for mj in 0..m {
                let mut column = c.column_mut(lj * m + mj);
                let column = column.as_mut_slice();
                for li in 0..l {
                    let (rs, rd) = self.row_pair(li, lj);
                    for mi in 0..m {
                        let (qs, qd) = (mi + mj, mi.abs_diff(mj));
                        column[li * m + mi] = 0.25 * (rs[qs] + rs[qd] + rd[qs] + rd[qd]);
                    }
                }
            }
        }
        c
    }

    /// `C_i = Σ_j a_j C_ij = ∂S/∂a_i` without forming the matrix.
    pub fn coupling_vector(&self, coeffs: &[f64]) -> Vec<f64> {
        let (l, m) = (self.rows, self.cols);
        let mut out = vec![0.0; l * m];
        for li in 0..l {
            for lj in 0..l {
                let (rs, rd) = self.row_pair(li, lj);
                let a = &coeffs[lj * m..(lj + 1) * m];
                for mi in 0..m {
                    let mut acc = 0.0;
                    for (mj, aj) in a.iter().enumerate() {
                        let (qs, qd) = (mi + mj, mi.abs_diff(mj));
                        acc += aj * (rs[qs] + rs[qd] + rd[qs] + rd[qd]);
                    }
                    out[li * m + mi] += 0.25 * acc;
                }
            }
        }
        out
    }

    /// Table rows for `p = li + lj` and `p = |li − lj|`.
    #[inline]
    fn row_pair(&self, li: usize, lj: usize) -> (&[f64], &[f64]) {
        let w = 2 * self.cols - 1;
        let (ps, pd) = (li + lj, li.abs_diff(lj));
        (&self.folded[ps * w..(ps + 1) * w], &self.folded[pd * w..(pd + 1) * w])
    }
}

/// Coefficient products of a map binned by frequency pair, so that the line
/// integral of any ray reduces to a dot product with its [`FrequencyTable`].
#[derive(Debug, Clone)]
pub struct PairWeights {
    cols: usize,
    weights: Vec<f64>,
}

impl PairWeights {
    pub fn new(map: &SpectralMap) -> Self {
        let (rows, cols) = (map.rows(), map.cols());
        let q_dim = 2 * cols - 1;
        let mut weights = vec![0.0; (2 * rows - 1) * q_dim];
        let a = map.coeffs();
        for i in 0..a.len() {
            let (li, mi) = map.index_pair(i);
            for j in 0..a.len() {
                let w = a[i] * a[j] / 8.0;
                if w == 0.0 {
                    continue;
                }
                let (lj, mj) = map.index_pair(j);
                let (ps, pd) = (li + lj, li.abs_diff(lj));
                let (qs, qd) = (mi + mj, mi.abs_diff(mj));
                weights[ps * q_dim + qs] += w;
                weights[ps * q_dim + qd] += w;
                weights[pd * q_dim + qs] += w;
                weights[pd * q_dim + qd] += w;
            }
        }
        Self { cols, weights }
    }

    /// `S = ½ aᵀ C a` for the segment tabulated in `table`.
    pub fn line_integral(&self, table: &FrequencyTable) -> f64 {
        debug_assert_eq!(self.cols, table.cols);
        self.weights
            .iter()
            .zip(&table.folded)
            .map(|(w, t)| w * t)
            .sum::<f64>()
            .max(0.0)
    }
}

/// `S(s, v, r) = ∫₀ʳ λ(s + v·t) dt` in closed form. The caller is responsible
/// for keeping the segment inside the map.
pub fn line_integral_s(map: &SpectralMap, ray: &Ray2, r: f64) -> Result<f64> {
    check_length(r)?;
    let table = FrequencyTable::new(map, ray, r);
    Ok(PairWeights::new(map).line_integral(&table))
}

/// Survival probability `N(r) = exp(−S(r))`.
pub fn survival_n(map: &SpectralMap, ray: &Ray2, r: f64) -> Result<f64> {
    Ok((-line_integral_s(map, ray, r)?).exp())
}

/// Return density `p(r) = λ(r)·N(r)` for `r ∈ [r_min, r_max]`.
pub fn return_density(map: &SpectralMap, ray: &Ray2, r: f64, limits: &SensorLimits) -> Result<f64> {
    if !limits.contains(r) {
        return Err(Error::invalid(format!(
            "range {r} outside [{}, {}]",
            limits.r_min, limits.r_max
        )));
    }
    let exit = exit_distance(map, ray)?;
    if r > exit + BOUNDARY_SLACK {
        return Err(Error::invalid(format!(
            "range {r} lies beyond the map boundary ({exit} m)"
        )));
    }
    let lambda = map.eval_lambda_on_ray(ray, r)?;
    Ok(lambda * survival_n(map, ray, r.min(exit))?)
}

/// `P(sub) = 1 − N(r_min)`, evaluated as `−expm1(−S)`.
pub fn prob_sub(map: &SpectralMap, ray: &Ray2, limits: &SensorLimits) -> Result<f64> {
    let exit = exit_distance(map, ray)?;
    let s = line_integral_s(map, ray, limits.r_min.min(exit))?;
    Ok(-(-s).exp_m1())
}

/// `P(super) = N(r_max)`, with `r_max` clipped at the map boundary.
pub fn prob_super(map: &SpectralMap, ray: &Ray2, limits: &SensorLimits) -> Result<f64> {
    let exit = exit_distance(map, ray)?;
    survival_n(map, ray, limits.r_max.min(exit))
}

/// Log of the mixed sub/return/super density given the line integral `s` up
/// to the outcome's integration length and, for returns, the endpoint decay.
pub(crate) fn mixed_log_density(outcome: RayOutcome, s: f64, endpoint_lambda: f64) -> f64 {
    match outcome {
        RayOutcome::Sub => (-(-s).exp_m1()).max(PROB_FLOOR).ln(),
        RayOutcome::Super => -s,
        RayOutcome::Return(_) => endpoint_lambda.max(LAMBDA_FLOOR).ln() - s,
    }
}

fn ray_log_likelihood_with(map: &SpectralMap, weights: &PairWeights, z: &LidarRay, limits: &SensorLimits) -> Result<f64> {
    let exit = exit_distance(map, &z.ray)?;
    let len = integration_length(z, limits, exit)?;
    let s = weights.line_integral(&FrequencyTable::new(map, &z.ray, len));
    let endpoint = match z.outcome {
        RayOutcome::Return(_) => map.lambda_unchecked(z.ray.point_at(len)),
        _ => 0.0,
    };
    Ok(mixed_log_density(z.outcome, s, endpoint))
}

/// Log of the mixed measurement density of one ray. Always finite.
pub fn ray_log_likelihood(map: &SpectralMap, z: &LidarRay, limits: &SensorLimits) -> Result<f64> {
    ray_log_likelihood_with(map, &PairWeights::new(map), z, limits)
}

/// Per-ray log-likelihoods, in input order.
pub fn ray_log_likelihoods(map: &SpectralMap, scans: &ScanSet) -> Result<Vec<f64>> {
    let weights = PairWeights::new(map);
    let chunks: Vec<Result<Vec<f64>>> = scans
        .rays
        .par_chunks(RAY_CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|z| ray_log_likelihood_with(map, &weights, z, &scans.limits))
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(scans.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Joint log-likelihood `Σ_k log p(z_k | A)`; zero for an empty set.
pub fn scan_log_likelihood(map: &SpectralMap, scans: &ScanSet) -> Result<f64> {
    Ok(ray_log_likelihoods(map, scans)?.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Point2;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn extent() -> Extent {
        Extent::new(10.0, 10.0).unwrap()
    }

    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + k as f64 * h);
        }
        acc * h / 3.0
    }

    fn random_map(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> SpectralMap {
        let coeffs = (0..rows * cols).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        SpectralMap::new(rows, cols, coeffs, extent()).unwrap()
    }

    #[test]
    fn empty_and_constant_integrals() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let map = random_map(&mut rng, 3, 3, 1.0);
        let ray = Ray2::from_angle(Point2::new(3.0, 4.0), 0.3).unwrap();
        assert_eq!(line_integral_s(&map, &ray, 0.0).unwrap(), 0.0);
        assert!(line_integral_s(&map, &ray, -1.0).is_err());

        let c = SpectralMap::constant(1, 1, 0.7, extent()).unwrap();
        let s = line_integral_s(&c, &ray, 2.5).unwrap();
        assert!((s - 0.49 * 2.5).abs() < 1e-14);
        let n = survival_n(&c, &ray, 2.0).unwrap();
        assert!((n - (-2.0 * 0.49f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn coupling_matrix_and_vector_agree_with_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let map = SpectralMap::new(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect(), extent()).unwrap();
        let ray = Ray2::from_angle(Point2::new(2.0, 3.0), 0.8).unwrap();
        let table = FrequencyTable::new(&map, &ray, 4.0);
        let c = table.coupling_matrix();
        for i in 0..12 {
            for j in 0..12 {
                assert_eq!(c[(i, j)], table.coupling(map.index_pair(i), map.index_pair(j)));
            }
        }
        let v = table.coupling_vector(map.coeffs());
        let cv = &c * DVector::from_column_slice(map.coeffs());
        for i in 0..12 {
            assert!((v[i] - cv[i]).abs() < 1e-12);
        }
        let s = PairWeights::new(&map).line_integral(&table);
        assert!((s - 0.5 * cv.dot(&DVector::from_column_slice(map.coeffs()))).abs() < 1e-12);
    }

    #[test]
    fn table_matches_literal_antiderivative_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let map = random_map(&mut rng, 3, 3, 1.0);
        for dir in [0.0, 0.4, std::f64::consts::FRAC_PI_2, 2.2] {
            let ray = Ray2::from_angle(Point2::new(5.0, 5.0), dir).unwrap();
            let r = 3.0;
            let literal: f64 = (0..map.len())
                .flat_map(|i| (0..map.len()).map(move |j| (i, j)))
                .map(|(i, j)| {
                    let mut acc = 0.0;
                    for a in [-1i8, 1] {
                        for b in [-1i8, 1] {
                            for g in [-1i8, 1] {
                                acc += antiderivative_term(&map, &ray, r, i, j, [a, b, g]);
                            }
                        }
                    }
                    map.coeffs()[i] * map.coeffs()[j] * acc / 8.0
                })
                .sum();
            let s = line_integral_s(&map, &ray, r).unwrap();
            assert!((s - literal).abs() <= 1e-12 * s.max(1.0), "{s} vs {literal}");
        }
    }

    #[test]
    fn integral_matches_quadrature_including_axis_aligned() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 0..20 {
            let map = random_map(&mut rng, 3, 3, 1.0);
            let angle = if k % 4 == 0 {
                std::f64::consts::FRAC_PI_2 * (k / 4) as f64
            } else {
                rng.random_range(0.0..std::f64::consts::TAU)
            };
            let origin = Point2::new(rng.random_range(1.0..9.0), rng.random_range(1.0..9.0));
            let ray = Ray2::from_angle(origin, angle).unwrap();
            let exit = ray.exit_distance(map.extent()).unwrap();
            let r = rng.random_range(0.0..exit);
            let s = line_integral_s(&map, &ray, r).unwrap();
            let f = |t: f64| map.lambda_unchecked(ray.point_at(t));
            let q = simpson(&f, 0.0, r, 4000);
            assert!((s - q).abs() / s.max(1.0) < 1e-8, "{s} vs {q}");
        }
    }

    #[test]
    fn additivity_of_line_integral() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let map = random_map(&mut rng, 4, 3, 1.0);
        let ray = Ray2::from_angle(Point2::new(1.0, 2.0), 0.6).unwrap();
        let (r1, r2) = (2.3, 3.1);
        let whole = line_integral_s(&map, &ray, r1 + r2).unwrap();
        let split = line_integral_s(&map, &ray, r1).unwrap()
            + line_integral_s(&map, &ray.advanced(r1), r2).unwrap();
        assert!((whole - split).abs() <= 1e-10 * whole);
    }

    #[test]
    fn branch_is_continuous_near_zero_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let map = random_map(&mut rng, 3, 3, 1.0);
        let origin = Point2::new(2.0, 3.0);
        let exact = line_integral_s(&map, &Ray2::from_angle(origin, 0.0).unwrap(), 4.0).unwrap();
        for eps in [1e-3, 1e-5, 1e-7, 1e-9, 1e-11, 1e-13] {
            let s = line_integral_s(&map, &Ray2::from_angle(origin, eps).unwrap(), 4.0).unwrap();
            assert!((s - exact).abs() <= 10.0 * eps * exact.max(1.0) + 1e-13, "eps {eps}: {s} vs {exact}");
        }
    }

    #[test]
    fn density_is_negative_derivative_of_survival() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let limits = SensorLimits::new(0.1, 30.0).unwrap();
        let map = random_map(&mut rng, 3, 3, 0.8);
        let ray = Ray2::from_angle(Point2::new(4.0, 4.5), 1.1).unwrap();
        for r in [0.5, 1.7, 3.2] {
            let h = 1e-6;
            let fd = -(survival_n(&map, &ray, r + h).unwrap() - survival_n(&map, &ray, r - h).unwrap()) / (2.0 * h);
            let p = return_density(&map, &ray, r, &limits).unwrap();
            assert!((p - fd).abs() / p.abs().max(1e-3) < 1e-6, "{p} vs {fd}");
        }
    }

    #[test]
    fn constant_field_closed_forms() {
        let c = 0.6;
        let map = SpectralMap::constant(1, 1, c, extent()).unwrap();
        let limits = SensorLimits::new(0.2, 5.0).unwrap();
        let ray = Ray2::from_angle(Point2::new(0.5, 5.0), 0.0).unwrap();
        let p = return_density(&map, &ray, 2.0, &limits).unwrap();
        assert!((p - c * c * (-c * c * 2.0f64).exp()).abs() < 1e-15);
        let sup = prob_super(&map, &ray, &limits).unwrap();
        assert!((sup - (-c * c * 5.0f64).exp()).abs() < 1e-15);
        let z = LidarRay::new(ray, RayOutcome::Return(2.0));
        let ll = ray_log_likelihood(&map, &z, &limits).unwrap();
        assert!((ll - (2.0 * c.ln() - c * c * 2.0)).abs() < 1e-14);
    }

    #[test]
    fn zero_map_outcomes() {
        let map = SpectralMap::zeros(2, 2, extent()).unwrap();
        let limits = SensorLimits::new(0.1, 5.0).unwrap();
        let ray = Ray2::from_angle(Point2::new(3.0, 3.0), 0.2).unwrap();
        assert_eq!(prob_sub(&map, &ray, &limits).unwrap(), 0.0);
        assert_eq!(prob_super(&map, &ray, &limits).unwrap(), 1.0);
        assert_eq!(return_density(&map, &ray, 1.0, &limits).unwrap(), 0.0);
        for outcome in [RayOutcome::Sub, RayOutcome::Super, RayOutcome::Return(1.0)] {
            let ll = ray_log_likelihood(&map, &LidarRay::new(ray, outcome), &limits).unwrap();
            assert!(ll.is_finite());
        }
        let sup = ray_log_likelihood(&map, &LidarRay::new(ray, RayOutcome::Super), &limits).unwrap();
        assert_eq!(sup, 0.0);
    }

    #[test]
    fn returns_outside_limits_or_extent_are_rejected() {
        let map = SpectralMap::constant(1, 1, 1.0, extent()).unwrap();
        let limits = SensorLimits::new(0.1, 50.0).unwrap();
        let ray = Ray2::from_angle(Point2::new(9.0, 5.0), 0.0).unwrap();
        assert!(return_density(&map, &ray, 0.05, &limits).is_err());
        assert!(return_density(&map, &ray, 3.0, &limits).is_err());
        let z = LidarRay::new(ray, RayOutcome::Return(3.0));
        assert!(ray_log_likelihood(&map, &z, &limits).is_err());
        assert!(ScanSet::from_rays(vec![z], limits, Some(extent())).is_err());
        assert!(SensorLimits::new(2.0, 1.0).is_err());
    }

    #[test]
    fn scan_likelihood_sums_rays() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let map = random_map(&mut rng, 3, 3, 0.7);
        let limits = SensorLimits::new(0.1, 30.0).unwrap();
        let empty = ScanSet::new(limits, Some(extent()));
        assert_eq!(scan_log_likelihood(&map, &empty).unwrap(), 0.0);
        let z = LidarRay::new(
            Ray2::from_angle(Point2::new(5.0, 5.0), 0.4).unwrap(),
            RayOutcome::Return(2.0),
        );
        let single = ray_log_likelihood(&map, &z, &limits).unwrap();
        let twice = ScanSet::from_rays(vec![z, z], limits, None).unwrap();
        assert_eq!(scan_log_likelihood(&map, &twice).unwrap(), 2.0 * single);
    }
}

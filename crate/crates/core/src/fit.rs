//! Maximum-likelihood fitting of spectral maps.
//!
//! The joint log-likelihood splits into a part that is quadratic in the
//! coefficients and a part that is not:
//!
//! ```text
//! log p(Z | a) = Σ_returns log λ_k(a) − ½ aᵀ C a + Σ_subs log(1 − e^{−S_k(a)})
//! ```
//!
//! where `C` sums the coupling matrices of every return and super ray. Since
//! coupling is linear in the frequency table, [`ScanObjective`] keeps one
//! summed table for all of these rays, the endpoint basis vectors of the
//! returns, and one table per sub ray.

use std::time::Instant;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derivatives::{basis_at, sub_weight};
use crate::error::{Error, Result};
use crate::forward::{
    integration_length, FrequencyTable, PairWeights, RayOutcome, ScanSet, LAMBDA_FLOOR, PROB_FLOOR, RAY_CHUNK,
};
use crate::grid::{trace_ray, GridGeometry};
use crate::spectral::{Extent, Point2, Ray2, SpectralMap};

/// Rays whose in-map segment is shorter than this are dropped.
pub const MIN_SEGMENT: f64 = 1e-9;

/// How the optimizer picks its first iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitInit {
    /// Cosine transform of the square root of a coarse `L × M` decay grid.
    FromGridDct,
    /// `a_00 = √(mean decay)`, all other coefficients `~ N(0, scale²)`.
    ConstantPlusNoise { scale: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    /// Trust-region Newton with the analytic Hessian.
    Newton,
    /// Backtracking gradient ascent.
    GradientOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub rows: usize,
    pub cols: usize,
    pub max_iters: usize,
    /// Stop once `|Δ loglik| / max(1, |loglik|)` falls below this.
    pub rel_tol: f64,
    pub init: FitInit,
    pub hessian_mode: HessianMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            rows: 10,
            cols: 10,
            max_iters: 200,
            rel_tol: 1e-3,
            init: FitInit::FromGridDct,
            hessian_mode: HessianMode::Newton,
        }
    }
}

impl FitConfig {
    pub fn with_size(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid("map size must be at least 1 × 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be ≥ 1"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::invalid("rel_tol must be > 0"));
        }
        if let FitInit::ConstantPlusNoise { scale, .. } = self.init {
            if !(scale >= 0.0) || !scale.is_finite() {
                return Err(Error::invalid("noise scale must be finite and ≥ 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub final_loglik: f64,
    /// Log-likelihood at the initial iterate and after every accepted step.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time: f64,
    pub dropped_rays: usize,
    pub initial_grad_norm: f64,
    pub final_grad_norm: f64,
}

/// Value and derivatives of the joint log-likelihood.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub grad: Option<DVector<f64>>,
    pub hess: Option<Hessian>,
}

/// Precomputed, coefficient-independent pieces of the joint log-likelihood
/// for one scan set and one map size.
#[derive(Debug, Clone)]
pub struct ScanObjective {
    rows: usize,
    cols: usize,
    extent: Extent,
    /// Summed frequency table of all return and super rays.
    total: FrequencyTable,
    /// Endpoint basis vectors of the returns, one per row.
    endpoints: DMatrix<f64>,
    subs: Vec<FrequencyTable>,
    dropped: usize,
}

struct Prepared {
    table: FrequencyTable,
    outcome: RayOutcome,
    endpoint: Option<Point2>,
}

impl ScanObjective {
    pub fn new(scans: &ScanSet, rows: usize, cols: usize, extent: Extent) -> Result<Self> {
        let probe = SpectralMap::zeros(rows, cols, extent)?;
        let prepare = |z: &crate::forward::LidarRay| -> Result<Option<Prepared>> {
            let exit = z
                .ray
                .exit_distance(extent)
                .ok_or_else(|| Error::invalid("ray origin lies outside the map extent"))?;
            let len = integration_length(z, &scans.limits, exit)?;
            if len < MIN_SEGMENT {
                return Ok(None);
            }
            Ok(Some(Prepared {
                table: FrequencyTable::new(&probe, &z.ray, len),
                outcome: z.outcome,
                endpoint: matches!(z.outcome, RayOutcome::Return(_)).then(|| z.ray.point_at(len)),
            }))
        };
        // Per-chunk partial sums, reduced in order for reproducibility.
        let parts: Vec<Result<(FrequencyTable, Vec<Point2>, Vec<FrequencyTable>, usize)>> = scans
            .rays
            .par_chunks(RAY_CHUNK)
            .map(|chunk| {
                let mut sum = FrequencyTable::zeros(rows, cols);
                let mut ends = Vec::new();
                let mut subs = Vec::new();
                let mut dropped = 0;
                for z in chunk {
                    match prepare(z)? {
                        None => dropped += 1,
                        Some(p) if p.outcome == RayOutcome::Sub => subs.push(p.table),
                        Some(p) => {
                            sum.add_scaled(&p.table, 1.0);
                            ends.extend(p.endpoint);
                        }
                    }
                }
                Ok((sum, ends, subs, dropped))
            })
            .collect();
        let mut total = FrequencyTable::zeros(rows, cols);
        let mut ends = Vec::new();
        let mut subs = Vec::new();
        let mut dropped = 0;
        for part in parts {
            let (t, e, s, d) = part?;
            total.add_scaled(&t, 1.0);
            ends.extend(e);
            subs.extend(s);
            dropped += d;
        }
        if dropped > 0 {
            warn!("dropped {dropped} rays with in-map segments shorter than {MIN_SEGMENT} m");
        }
        let n = rows * cols;
        let mut endpoints = DMatrix::zeros(ends.len(), n);
        for (k, p) in ends.iter().enumerate() {
            endpoints.row_mut(k).copy_from(&basis_at(&probe, *p).transpose());
        }
        Ok(Self {
            rows,
            cols,
            extent,
            total,
            endpoints,
            subs,
            dropped,
        })
    }

    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn dropped_rays(&self) -> usize {
        self.dropped
    }

    pub fn map_for(&self, coeffs: Vec<f64>) -> Result<SpectralMap> {
        SpectralMap::new(self.rows, self.cols, coeffs, self.extent)
    }

    /// Joint log-likelihood at `a`, with the gradient when `order ≥ 1` and
    /// the Hessian when `order ≥ 2`.
    pub fn evaluate(&self, a: &DVector<f64>, order: u8) -> Evaluation {
        let map = SpectralMap::new(self.rows, self.cols, a.as_slice().to_vec(), self.extent)
            .expect("objective dimensions are valid");
        let weights = PairWeights::new(&map);
        let mut value = -weights.line_integral(&self.total);
        // Σ_k w_k T_k − T_total: its coupling gives the C-terms of both
        // gradient and Hessian.
        let mut combined = FrequencyTable::zeros(self.rows, self.cols);
        let mut sub_weights = Vec::with_capacity(self.subs.len());
        for table in &self.subs {
            let s = weights.line_integral(table);
            value += (-(-s).exp_m1()).max(PROB_FLOOR).ln();
            let w = sub_weight(s);
            combined.add_scaled(table, w);
            sub_weights.push(w);
        }
        combined.add_scaled(&self.total, -1.0);

        let f = (self.endpoints.nrows() > 0).then(|| &self.endpoints * a);
        let lambda = f.as_ref().map(|f| f.map(|v| (v * v).max(LAMBDA_FLOOR)));
        if let Some(l) = &lambda {
            value += l.iter().map(|l| l.ln()).sum::<f64>();
        }
        if order == 0 {
            return Evaluation {
                value,
                grad: None,
                hess: None,
            };
        }

        let mut grad = DVector::from_vec(combined.coupling_vector(a.as_slice()));
        if let (Some(f), Some(l)) = (&f, &lambda) {
            grad += self.endpoints.tr_mul(&f.zip_map(l, |f, l| 2.0 * f / l));
        }
        let hess = (order >= 2).then(|| {
            let return_weights = match (&f, &lambda) {
                (Some(f), Some(l)) => f.zip_map(l, |f, l| 2.0 / l - 4.0 * f * f / (l * l)),
                _ => DVector::zeros(0),
            };
            let low_rank = self
                .subs
                .iter()
                .zip(&sub_weights)
                .map(|(table, w)| (-(w + w * w), DVector::from_vec(table.coupling_vector(a.as_slice()))))
                .collect();
            Hessian {
                coupling: combined.coupling_matrix(),
                endpoints: self.endpoints.clone(),
                return_weights,
                low_rank,
            }
        });
        Evaluation {
            value,
            grad: Some(grad),
            hess,
        }
    }
}

/// The Hessian as a sum of a dense coupling part, a weighted Gram matrix of
/// return endpoint basis vectors, and rank-one sub-ray terms.
#[derive(Debug, Clone)]
pub struct Hessian {
    coupling: DMatrix<f64>,
    endpoints: DMatrix<f64>,
    return_weights: DVector<f64>,
    low_rank: Vec<(f64, DVector<f64>)>,
}

impl Hessian {
    /// `H · v` without forming `H`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.coupling * v;
        if !self.return_weights.is_empty() {
            let pv = (&self.endpoints * v).component_mul(&self.return_weights);
            out += self.endpoints.tr_mul(&pv);
        }
        for (w, c) in &self.low_rank {
            out.axpy(w * c.dot(v), c, 1.0);
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut h = self.coupling.clone();
        if !self.return_weights.is_empty() {
            let mut scaled = self.endpoints.clone();
            for (mut row, wk) in scaled.row_iter_mut().zip(self.return_weights.iter()) {
                row *= *wk;
            }
            h += self.endpoints.tr_mul(&scaled);
        }
        for (w, c) in &self.low_rank {
            h.ger(*w, c, c, 1.0);
        }
        h
    }
}

/// Fits an `L × M` spectral map to `scans` over `extent`.
pub fn fit(scans: &ScanSet, extent: Extent, config: &FitConfig) -> Result<(SpectralMap, FitReport)> {
    config.validate()?;
    if scans.is_empty() {
        return Err(Error::invalid("cannot fit a map to an empty scan set"));
    }
    let init = initial_map(scans, extent, config)?;
    fit_from(scans, init, config)
}

/// Fits starting from an explicit initial map, whose size and extent are
/// used instead of the ones in `config`.
pub fn fit_from(scans: &ScanSet, init: SpectralMap, config: &FitConfig) -> Result<(SpectralMap, FitReport)> {
    config.validate()?;
    if scans.is_empty() {
        return Err(Error::invalid("cannot fit a map to an empty scan set"));
    }
    let start = Instant::now();
    let objective = ScanObjective::new(scans, init.rows(), init.cols(), init.extent())?;
    let a0 = DVector::from_column_slice(init.coeffs());
    let first = objective.evaluate(&a0, 1);
    if !first.value.is_finite() {
        return Err(Error::InitFailure(format!(
            "log-likelihood at the initial map is {}",
            first.value
        )));
    }
    let initial_grad_norm = first.grad.as_ref().map_or(0.0, |g| g.amax());
    let outcome = match config.hessian_mode {
        HessianMode::Newton => trust_region(&objective, a0, config),
        HessianMode::GradientOnly => gradient_ascent(&objective, a0, config),
    };
    let final_grad_norm = objective
        .evaluate(&outcome.coeffs, 1)
        .grad
        .map_or(0.0, |g| g.amax());
    let map = objective.map_for(outcome.coeffs.as_slice().to_vec())?;
    let report = FitReport {
        final_loglik: *outcome.trace.last().expect("trace holds the initial value"),
        loglik_trace: outcome.trace,
        iterations: outcome.iterations,
        converged: outcome.converged,
        wall_time: start.elapsed().as_secs_f64(),
        dropped_rays: objective.dropped_rays(),
        initial_grad_norm,
        final_grad_norm,
    };
    Ok((map, report))
}

struct Outcome {
    coeffs: DVector<f64>,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn relative_change(old: f64, new: f64) -> f64 {
    (new - old).abs() / new.abs().max(1.0)
}

const MAX_RADIUS: f64 = 1e4;

fn trust_region(objective: &ScanObjective, mut a: DVector<f64>, config: &FitConfig) -> Outcome {
    let mut current = objective.evaluate(&a, 2);
    let mut trace = vec![current.value];
    let mut radius = (0.25 * a.norm()).max(0.1);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        iterations += 1;
        let g = current.grad.as_ref().expect("gradient evaluated");
        let h = current.hess.as_ref().expect("hessian evaluated");
        if g.amax() == 0.0 {
            converged = true;
            break;
        }
        let step = steihaug_cg(g, h, radius);
        let predicted = g.dot(&step.p) + 0.5 * step.p.dot(&h.apply(&step.p));
        let candidate = &a + &step.p;
        let value = objective.evaluate(&candidate, 0).value;
        let actual = value - current.value;
        let rho = if predicted > 0.0 { actual / predicted } else { -1.0 };
        let step_norm = step.p.norm();
        debug!(
            "iter {iterations}: loglik {:.6} rho {rho:.3} radius {radius:.3e} |p| {step_norm:.3e} cg {}",
            current.value, step.iterations
        );
        if rho < 0.25 {
            radius = 0.25 * step_norm.min(radius);
        } else if rho > 0.75 && step.on_boundary {
            radius = (2.0 * radius).min(MAX_RADIUS);
        }
        if rho > 1e-4 && actual > 0.0 && value.is_finite() {
            let old = current.value;
            a = candidate;
            current = objective.evaluate(&a, 2);
            trace.push(current.value);
            if relative_change(old, current.value) < config.rel_tol && !step.on_boundary {
                converged = true;
                break;
            }
        } else if radius < 1e-12 * (1.0 + a.norm()) {
            debug!("trust region collapsed at iteration {iterations}");
            break;
        }
    }
    Outcome {
        coeffs: a,
        trace,
        iterations,
        converged,
    }
}

struct CgStep {
    p: DVector<f64>,
    on_boundary: bool,
    iterations: usize,
}

/// Approximately maximizes `gᵀp + ½ pᵀHp` subject to `‖p‖ ≤ radius` by
/// truncated conjugate gradients. Directions of nonpositive curvature of the
/// negated model (the first one being the gradient itself) are followed to
/// the trust-region boundary.
fn steihaug_cg(g: &DVector<f64>, h: &Hessian, radius: f64) -> CgStep {
    // Work on the minimization form: min (−g)ᵀp + ½ pᵀ(−H)p.
    let n = g.len();
    let gnorm = g.norm();
    let tol = gnorm * gnorm.sqrt().min(0.5);
    let mut p = DVector::zeros(n);
    let mut r = -g;
    let mut d = g.clone();
    let max_iter = n.min(250).max(1);
    for k in 0..max_iter {
        let bd = -h.apply(&d);
        let curvature = d.dot(&bd);
        if curvature <= 0.0 {
            return CgStep {
                p: to_boundary(&p, &d, radius),
                on_boundary: true,
                iterations: k + 1,
            };
        }
        let rr = r.dot(&r);
        let alpha = rr / curvature;
        let next = &p + &d * alpha;
        if next.norm() >= radius {
            return CgStep {
                p: to_boundary(&p, &d, radius),
                on_boundary: true,
                iterations: k + 1,
            };
        }
        p = next;
        r += &bd * alpha;
        let rr_new = r.dot(&r);
        if rr_new.sqrt() <= tol {
            return CgStep {
                p,
                on_boundary: false,
                iterations: k + 1,
            };
        }
        d = &d * (rr_new / rr) - &r;
    }
    CgStep {
        p,
        on_boundary: false,
        iterations: max_iter,
    }
}

/// `p + τ·d` with `τ ≥ 0` such that `‖p + τ·d‖ = radius`.
fn to_boundary(p: &DVector<f64>, d: &DVector<f64>, radius: f64) -> DVector<f64> {
    let dd = d.dot(d);
    let pd = p.dot(d);
    let pp = p.dot(p);
    let tau = (-pd + (pd * pd + dd * (radius * radius - pp)).max(0.0).sqrt()) / dd;
    p + d * tau
}

fn gradient_ascent(objective: &ScanObjective, mut a: DVector<f64>, config: &FitConfig) -> Outcome {
    let mut current = objective.evaluate(&a, 1);
    let mut trace = vec![current.value];
    let mut step = 0.1 / current.grad.as_ref().map_or(1.0, |g| g.norm().max(1e-12));
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        iterations += 1;
        let g = current.grad.clone().expect("gradient evaluated");
        let gg = g.dot(&g);
        if gg == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = None;
        for _ in 0..60 {
            let candidate = &a + &g * step;
            let value = objective.evaluate(&candidate, 0).value;
            if value.is_finite() && value >= current.value + 1e-4 * step * gg {
                accepted = Some(candidate);
                break;
            }
            step *= 0.5;
        }
        let Some(candidate) = accepted else { break };
        let old = current.value;
        a = candidate;
        current = objective.evaluate(&a, 1);
        trace.push(current.value);
        step *= 2.0;
        if relative_change(old, current.value) < config.rel_tol {
            converged = true;
            break;
        }
    }
    Outcome {
        coeffs: a,
        trace,
        iterations,
        converged,
    }
}

/// Hit counts and traversed lengths on an `L × M` grid of (possibly
/// non-square) cells over the extent, row-major along x.
fn coarse_accumulators(scans: &ScanSet, extent: Extent, rows: usize, cols: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    // Trace in coordinates where cells are unit squares.
    let unit = GridGeometry::new(rows, cols, 1.0, Point2::new(0.0, 0.0))?;
    let (kx, ky) = (rows as f64 / extent.x, cols as f64 / extent.y);
    let mut hits = vec![0.0; rows * cols];
    let mut len = vec![0.0; rows * cols];
    for z in &scans.rays {
        let o = z.ray.origin();
        let [dx, dy] = z.ray.direction();
        let scale = (dx * kx).hypot(dy * ky);
        let scaled = Ray2::new(Point2::new(o.x * kx, o.y * ky), [dx * kx / scale, dy * ky / scale])?;
        let Some(exit) = z.ray.exit_distance(extent) else {
            continue;
        };
        let r = integration_length(z, &scans.limits, exit)?;
        let cell_idx = |c: crate::grid::CellIndex| c.ix * cols + c.iy;
        for seg in trace_ray(&unit, &scaled, r * scale) {
            len[cell_idx(seg.cell)] += seg.length() / scale;
        }
        if let RayOutcome::Return(_) = z.outcome {
            if let Some(c) = unit.cell_along(&scaled, r * scale) {
                hits[cell_idx(c)] += 1.0;
            }
        }
    }
    Ok((hits, len))
}

/// Coefficients whose field interpolates `values` (row-major `L × M`, the
/// amplitude at cell midpoints) exactly at the cell midpoints.
pub fn cosine_transform(values: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    let basis = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|k| {
                let w = if k == 0 { 1.0 } else { 2.0 } / n as f64;
                (0..n)
                    .map(|c| w * (PI * k as f64 * (c as f64 + 0.5) / n as f64).cos())
                    .collect()
            })
            .collect()
    };
    let (bx, by) = (basis(rows), basis(cols));
    let mut out = vec![0.0; rows * cols];
    for l in 0..rows {
        for m in 0..cols {
            let mut acc = 0.0;
            for c in 0..rows {
                for d in 0..cols {
                    acc += values[c * cols + d] * bx[l][c] * by[m][d];
                }
            }
            out[l * cols + m] = acc;
        }
    }
    out
}

/// The initial iterate requested by `config`.
pub fn initial_map(scans: &ScanSet, extent: Extent, config: &FitConfig) -> Result<SpectralMap> {
    let (rows, cols) = (config.rows, config.cols);
    let (hits, len) = coarse_accumulators(scans, extent, rows, cols)?;
    let total_hits: f64 = hits.iter().sum();
    let total_len: f64 = len.iter().sum();
    let mean = if total_len > 0.0 { total_hits / total_len } else { 0.0 };
    let noisy = |scale: f64, seed: u64| -> Result<SpectralMap> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, scale).map_err(|e| Error::invalid(e.to_string()))?;
        let mut coeffs: Vec<f64> = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
        coeffs[0] = mean.sqrt();
        SpectralMap::new(rows, cols, coeffs, extent)
    };
    match config.init {
        FitInit::ConstantPlusNoise { scale, seed } => noisy(scale, seed),
        FitInit::FromGridDct => {
            if total_hits == 0.0 {
                debug!("no returns for grid initialization, using a constant field");
                return noisy(0.0, 0);
            }
            let floor = 0.01 * mean;
            let amplitude: Vec<f64> = hits
                .iter()
                .zip(&len)
                .map(|(h, l)| if *l > 0.0 { (h / l).max(floor) } else { mean }.sqrt())
                .collect();
            SpectralMap::new(rows, cols, cosine_transform(&amplitude, rows, cols), extent)
        }
    }
}

//! Analytic derivatives of the measurement log-likelihood with respect to the
//! spectral coefficients.
//!
//! Two coefficient-independent matrices carry all the geometry:
//!
//! * `B_ij = 2·φ_i(p)·φ_j(p)` at a point, with `φ_i = cos(l_i x̃)·cos(m_i ỹ)`,
//!   so that `∂λ/∂a_i = B_i = Σ_j a_j B_ij`;
//! * `C_ij = ∂²S/∂a_i∂a_j` along a ray segment, so that `∂S/∂a_i = C_i`.
//!
//! Per ray the log-likelihood derivatives are
//!
//! ```text
//!            gradient                 Hessian
//! sub     w·C_i                     w·(C_ij − C_i C_j) − w²·C_i C_j,   w = N / (1 − N)
//! return  B_i/λ − C_i               B_ij/λ − B_i B_j/λ² − C_ij
//! super   −C_i                      −C_ij
//! ```

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{
    exit_distance, integration_length, ray_log_likelihood, scan_log_likelihood, FrequencyTable,
    LidarRay, RayOutcome, ScanSet, SensorLimits, LAMBDA_FLOOR, PROB_FLOOR,
};
use crate::spectral::{Point2, Ray2, SpectralMap};

/// Gradient and, when requested, Hessian of a log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct GradHess {
    pub grad: DVector<f64>,
    pub hess: Option<DMatrix<f64>>,
}

impl GradHess {
    pub fn zeros(n: usize, with_hessian: bool) -> Self {
        Self {
            grad: DVector::zeros(n),
            hess: with_hessian.then(|| DMatrix::zeros(n, n)),
        }
    }

    fn add_assign(&mut self, other: &GradHess) {
        self.grad += &other.grad;
        if let (Some(h), Some(o)) = (self.hess.as_mut(), other.hess.as_ref()) {
            *h += o;
        }
    }
}

/// Basis values `φ_i(p)` in flat coefficient order.
pub(crate) fn basis_at(map: &SpectralMap, p: Point2) -> DVector<f64> {
    let (cx, cy) = map.cosine_factors(p);
    DVector::from_iterator(
        map.len(),
        cx.iter().flat_map(|c| cy.iter().map(move |d| c * d)),
    )
}

/// `B_i = ∂λ/∂a_i` at `p`, plus the matrix `B_ij` on request.
pub fn eval_b(map: &SpectralMap, p: Point2, with_matrix: bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
    map.eval_lambda(p)?;
    let phi = basis_at(map, p);
    let f = phi.dot(&DVector::from_column_slice(map.coeffs()));
    let b = &phi * (2.0 * f);
    let bmat = with_matrix.then(|| &phi * phi.transpose() * 2.0);
    Ok((b, bmat))
}

/// `C_i = ∂S/∂a_i` for the segment `[0, r]`, plus the matrix `C_ij` on
/// request.
pub fn eval_c(map: &SpectralMap, ray: &Ray2, r: f64, with_matrix: bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::invalid(format!("integration length must be ≥ 0, got {r}")));
    }
    let table = FrequencyTable::new(map, ray, r);
    let a = DVector::from_column_slice(map.coeffs());
    if with_matrix {
        let cmat = table.coupling_matrix();
        let c = &cmat * a;
        Ok((c, Some(cmat)))
    } else {
        Ok((DVector::from_vec(table.coupling_vector(map.coeffs())), None))
    }
}

/// Weight `N / (1 − N) = 1 / (e^S − 1)` of the sub-ray derivatives.
pub(crate) fn sub_weight(s: f64) -> f64 {
    1.0 / s.exp_m1().max(PROB_FLOOR)
}

/// Derivatives of `log p(z | A)` for one ray.
pub fn ray_loglik_grad(map: &SpectralMap, z: &LidarRay, limits: &SensorLimits, with_hessian: bool) -> Result<GradHess> {
    let exit = exit_distance(map, &z.ray)?;
    let len = integration_length(z, limits, exit)?;
    let (c, cmat) = eval_c(map, &z.ray, len, with_hessian)?;
    let a = DVector::from_column_slice(map.coeffs());
    match z.outcome {
        RayOutcome::Super => Ok(GradHess {
            grad: -c,
            hess: cmat.map(|m| -m),
        }),
        RayOutcome::Sub => {
            let s = 0.5 * c.dot(&a);
            let w = sub_weight(s);
            let hess = cmat.map(|m| {
                let cc = &c * c.transpose();
                m * w - cc * (w + w * w)
            });
            Ok(GradHess { grad: c * w, hess })
        }
        RayOutcome::Return(_) => {
            let phi = basis_at(map, z.ray.point_at(len));
            let f = phi.dot(&a);
            let lambda = (f * f).max(LAMBDA_FLOOR);
            let b = &phi * (2.0 * f);
            let grad = &b / lambda - &c;
            let hess = cmat.map(|m| {
                let bmat = &phi * phi.transpose() * 2.0;
                bmat / lambda - &b * b.transpose() / (lambda * lambda) - m
            });
            Ok(GradHess { grad, hess })
        }
    }
}

/// Sum of per-ray derivatives over the scan set.
pub fn scan_loglik_grad(map: &SpectralMap, scans: &ScanSet, with_hessian: bool) -> Result<GradHess> {
    let n = map.len();
    if scans.is_empty() {
        return Ok(GradHess::zeros(n, with_hessian));
    }
    // A fixed number of partitions keeps the reduction order independent of
    // the thread count.
    let chunk = scans.len().div_ceil(16);
    let parts: Vec<Result<GradHess>> = scans
        .rays
        .par_chunks(chunk)
        .map(|rays| {
            let mut acc = GradHess::zeros(n, with_hessian);
            for z in rays {
                acc.add_assign(&ray_loglik_grad(map, z, &scans.limits, with_hessian)?);
            }
            Ok(acc)
        })
        .collect();
    let mut total = GradHess::zeros(n, with_hessian);
    for p in parts {
        total.add_assign(&p?);
    }
    Ok(total)
}

/// Derivative order checked by [`fd_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FdOrder {
    Gradient,
    Hessian,
}

impl FdOrder {
    pub fn from_order(order: u8) -> Result<Self> {
        match order {
            1 => Ok(Self::Gradient),
            2 => Ok(Self::Hessian),
            _ => Err(Error::invalid(format!("derivative order must be 1 or 2, got {order}"))),
        }
    }

    /// Relative step multiplier used when none is given.
    pub fn default_step(self) -> f64 {
        match self {
            Self::Gradient => 1e-6,
            Self::Hessian => 1e-4,
        }
    }
}

/// Worst disagreement between analytic and finite-difference derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub order: u8,
    pub step: f64,
    pub max_rel_error: f64,
    pub index: usize,
    /// Second coefficient index for Hessian entries.
    pub second_index: Option<usize>,
    pub analytic: f64,
    pub numeric: f64,
}

/// `|analytic − numeric| / max(1, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Compares analytic derivatives of the scan log-likelihood with central
/// finite differences over every coefficient. The step for coefficient `i`
/// is `step·(1 + |a_i|)`.
pub fn fd_check(map: &SpectralMap, scans: &ScanSet, step: f64, order: FdOrder) -> Result<FdReport> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::invalid(format!("finite-difference step must be > 0, got {step}")));
    }
    let a = map.coeffs().to_vec();
    let n = a.len();
    let h: Vec<f64> = a.iter().map(|x| step * (1.0 + x.abs())).collect();
    let objective = |shift: &[(usize, f64)]| -> Result<f64> {
        let mut c = a.clone();
        for &(i, d) in shift {
            c[i] += d;
        }
        scan_log_likelihood(&map.with_coeffs(c)?, scans)
    };
    let mut worst = FdReport {
        order: match order {
            FdOrder::Gradient => 1,
            FdOrder::Hessian => 2,
        },
        step,
        max_rel_error: 0.0,
        index: 0,
        second_index: None,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut consider = |i: usize, j: Option<usize>, analytic: f64, numeric: f64| {
        let e = relative_error(analytic, numeric);
        if e > worst.max_rel_error || (worst.max_rel_error == 0.0 && i == 0 && j.unwrap_or(0) == 0) {
            worst.max_rel_error = e;
            worst.index = i;
            worst.second_index = j;
            worst.analytic = analytic;
            worst.numeric = numeric;
        }
    };
    match order {
        FdOrder::Gradient => {
            let analytic = scan_loglik_grad(map, scans, false)?.grad;
            for i in 0..n {
                let fd = (objective(&[(i, h[i])])? - objective(&[(i, -h[i])])?) / (2.0 * h[i]);
                consider(i, None, analytic[i], fd);
            }
        }
        FdOrder::Hessian => {
            let analytic = scan_loglik_grad(map, scans, true)?
                .hess
                .expect("hessian requested");
            let f0 = objective(&[])?;
            for i in 0..n {
                let fd = (objective(&[(i, h[i])])? - 2.0 * f0 + objective(&[(i, -h[i])])?) / (h[i] * h[i]);
                consider(i, Some(i), analytic[(i, i)], fd);
                for j in (i + 1)..n {
                    let fd = (objective(&[(i, h[i]), (j, h[j])])?
                        - objective(&[(i, h[i]), (j, -h[j])])?
                        - objective(&[(i, -h[i]), (j, h[j])])?
                        + objective(&[(i, -h[i]), (j, -h[j])])?)
                        / (4.0 * h[i] * h[j]);
                    consider(i, Some(j), analytic[(i, j)], fd);
                }
            }
        }
    }
    Ok(worst)
}

/// Finite-difference gradient of one ray's log-likelihood, for tests and
/// diagnostics.
pub fn fd_ray_gradient(map: &SpectralMap, z: &LidarRay, limits: &SensorLimits, step: f64) -> Result<DVector<f64>> {
    let a = map.coeffs().to_vec();
    let mut g = DVector::zeros(a.len());
    for i in 0..a.len() {
        let h = step * (1.0 + a[i].abs());
        let mut up = a.clone();
        up[i] += h;
        let mut dn = a.clone();
        dn[i] -= h;
        g[i] = (ray_log_likelihood(&map.with_coeffs(up)?, z, limits)?
            - ray_log_likelihood(&map.with_coeffs(dn)?, z, limits)?)
            / (2.0 * h);
    }
    Ok(g)
}

//! Spectral map representation and evaluation of the decay-rate field.
//!
//! The field is the square of a plain cosine double sum
//!
//! ```text
//! λ(x, y) = ( Σ_l Σ_m a_lm · cos(l·π·x/X) · cos(m·π·y/Y) )²
//! ```
//!
//! with no orthonormalization factors. Coefficients are stored row-major,
//! flat index `i = l·M + m`. The series is defined everywhere, but only the
//! extent `[0, X] × [0, Y]` is physically meaningful; outside it the field is
//! the even periodic extension.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in map coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Tolerance on `‖direction‖ − 1` accepted by [`Ray2::new`].
pub const UNIT_TOLERANCE: f64 = 1e-12;

/// A half-line with origin `s` and unit direction `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray2 {
    origin: Point2,
    direction: [f64; 2],
}

impl Ray2 {
    /// Builds a ray, rejecting directions that are not unit length.
    pub fn new(origin: Point2, direction: [f64; 2]) -> Result<Self> {
        if !origin.is_finite() || !direction.iter().all(|d| d.is_finite()) {
            return Err(Error::invalid("ray origin and direction must be finite"));
        }
        let norm = direction[0].hypot(direction[1]);
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::invalid(format!(
                "ray direction must be a unit vector (norm {norm})"
            )));
        }
        Ok(Self { origin, direction })
    }

    /// Ray from `origin` heading at `angle` radians from the x axis.
    pub fn from_angle(origin: Point2, angle: f64) -> Result<Self> {
        let (sin, cos) = angle.sin_cos();
        Self::new(origin, [cos, sin])
    }

    /// Normalizes `direction` before building the ray.
    pub fn towards(origin: Point2, direction: [f64; 2]) -> Result<Self> {
        let norm = direction[0].hypot(direction[1]);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::invalid("ray direction must be nonzero and finite"));
        }
        Self::new(origin, [direction[0] / norm, direction[1] / norm])
    }

    pub fn origin(&self) -> Point2 {
        self.origin
    }

    pub fn direction(&self) -> [f64; 2] {
        self.direction
    }

    pub fn point_at(&self, r: f64) -> Point2 {
        Point2::new(
            self.origin.x + self.direction[0] * r,
            self.origin.y + self.direction[1] * r,
        )
    }

    /// The same ray with its origin moved `r` meters forward.
    pub fn advanced(&self, r: f64) -> Self {
        Self {
            origin: self.point_at(r),
            direction: self.direction,
        }
    }

    /// Distance along the ray at which it leaves the rectangle
    /// `[0, X] × [0, Y]`. `None` when the origin is outside the rectangle.
    pub fn exit_distance(&self, extent: Extent) -> Option<f64> {
        if !extent.contains(self.origin) {
            return None;
        }
        let mut t = f64::INFINITY;
        for (o, d, hi) in [
            (self.origin.x, self.direction[0], extent.x),
            (self.origin.y, self.direction[1], extent.y),
        ] {
            if d > 0.0 {
                t = t.min((hi - o) / d);
            } else if d < 0.0 {
                t = t.min(-o / d);
            }
        }
        Some(t.max(0.0))
    }
}

/// Size of a rectangular map patch anchored at the origin, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub x: f64,
    pub y: f64,
}

impl Extent {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite()) {
            return Err(Error::invalid(format!(
                "map extent must be positive and finite, got {x} × {y}"
            )));
        }
        Ok(Self { x, y })
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= 0.0 && p.x <= self.x && p.y >= 0.0 && p.y <= self.y
    }
}

/// An `L × M` matrix of cosine coefficients together with the map extent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralMap {
    rows: usize,
    cols: usize,
    coeffs: Vec<f64>,
    extent: Extent,
}

impl SpectralMap {
    /// Builds a map from row-major coefficients (`coeffs[l * cols + m]`).
    pub fn new(rows: usize, cols: usize, coeffs: Vec<f64>, extent: Extent) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("coefficient matrix must be at least 1 × 1"));
        }
        if coeffs.len() != rows * cols {
            return Err(Error::invalid(format!(
                "expected {} coefficients for a {rows} × {cols} map, got {}",
                rows * cols,
                coeffs.len()
            )));
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("coefficient {i} is not finite")));
        }
        Extent::new(extent.x, extent.y)?;
        Ok(Self {
            rows,
            cols,
            coeffs,
            extent,
        })
    }

    pub fn zeros(rows: usize, cols: usize, extent: Extent) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols], extent)
    }

    /// A map whose only nonzero coefficient is `a_00 = amplitude`, i.e. the
    /// constant field `λ = amplitude²`.
    pub fn constant(rows: usize, cols: usize, amplitude: f64, extent: Extent) -> Result<Self> {
        let mut coeffs = vec![0.0; rows * cols];
        if let Some(c) = coeffs.first_mut() {
            *c = amplitude;
        }
        Self::new(rows, cols, coeffs, extent)
    }

    /// Number of rows `L` (frequencies along x).
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of columns `M` (frequencies along y).
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Total number of coefficients `I = L·M`.
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, l: usize, m: usize) -> f64 {
        self.coeffs[l * self.cols + m]
    }

    /// `(l_i, m_i)` for flat index `i`.
    pub fn index_pair(&self, i: usize) -> (usize, usize) {
        (i / self.cols, i % self.cols)
    }

    /// Same geometry, new coefficients.
    pub fn with_coeffs(&self, coeffs: Vec<f64>) -> Result<Self> {
        Self::new(self.rows, self.cols, coeffs, self.extent)
    }

    /// The map with every coefficient negated. Defines the identical field.
    pub fn negated(&self) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| -c).collect(),
            ..self.clone()
        }
    }

    /// `π`-normalized coordinates `(πx/X, πy/Y)`.
    pub fn normalize(&self, p: Point2) -> (f64, f64) {
        (PI * p.x / self.extent.x, PI * p.y / self.extent.y)
    }

    /// Separable cosine factors `cos(l·x̃)` and `cos(m·ỹ)` at `p`.
    pub(crate) fn cosine_factors(&self, p: Point2) -> (Vec<f64>, Vec<f64>) {
        let (xt, yt) = self.normalize(p);
        let cx = (0..self.rows).map(|l| (l as f64 * xt).cos()).collect();
        let cy = (0..self.cols).map(|m| (m as f64 * yt).cos()).collect();
        (cx, cy)
    }

    /// The inner cosine sum `f(p)`, so that `λ(p) = f(p)²`.
    pub(crate) fn amplitude_unchecked(&self, p: Point2) -> f64 {
        let (cx, cy) = self.cosine_factors(p);
        self.amplitude_from_factors(&cx, &cy)
    }

    pub(crate) fn amplitude_from_factors(&self, cx: &[f64], cy: &[f64]) -> f64 {
        self.coeffs
            .chunks_exact(self.cols)
            .zip(cx)
            .map(|(row, c)| c * row.iter().zip(cy).map(|(a, d)| a * d).sum::<f64>())
            .sum()
    }

    pub(crate) fn lambda_unchecked(&self, p: Point2) -> f64 {
        let f = self.amplitude_unchecked(p);
        f * f
    }

    /// Decay rate `λ(x, y)`.
    pub fn eval_lambda(&self, p: Point2) -> Result<f64> {
        check_point(p)?;
        Ok(self.lambda_unchecked(p))
    }

    /// Analytic spatial gradient `(∂λ/∂x, ∂λ/∂y)`.
    pub fn eval_lambda_spatial_gradient(&self, p: Point2) -> Result<(f64, f64)> {
        check_point(p)?;
        let (xt, yt) = self.normalize(p);
        let kx = PI / self.extent.x;
        let ky = PI / self.extent.y;
        let (mut f, mut fx, mut fy) = (0.0, 0.0, 0.0);
        for l in 0..self.rows {
            let (sl, cl) = (l as f64 * xt).sin_cos();
            for m in 0..self.cols {
                let (sm, cm) = (m as f64 * yt).sin_cos();
                let a = self.coeff(l, m);
                f += a * cl * cm;
                fx -= a * l as f64 * kx * sl * cm;
                fy -= a * m as f64 * ky * cl * sm;
            }
        }
        Ok((2.0 * f * fx, 2.0 * f * fy))
    }

    /// `λ` at distance `r` along `ray`.
    pub fn eval_lambda_on_ray(&self, ray: &Ray2, r: f64) -> Result<f64> {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(Error::invalid(format!("ray parameter must be ≥ 0, got {r}")));
        }
        self.eval_lambda(ray.point_at(r))
    }

    /// Serializes to the plain-text matrix format: a header line `L M X Y`
    /// followed by `L` lines of `M` space-separated coefficients.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} {} {} {}\n",
            self.rows, self.cols, self.extent.x, self.extent.y
        );
        for row in self.coeffs.chunks_exact(self.cols) {
            let line: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing `L M X Y` header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(hline + 1, "header must be `L M X Y`"));
        }
        let rows: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(hline + 1, "L is not an integer"))?;
        let cols: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(hline + 1, "M is not an integer"))?;
        let x = parse_f64(fields[2], hline + 1)?;
        let y = parse_f64(fields[3], hline + 1)?;
        let mut coeffs = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::parse(hline + 1, format!("expected {rows} coefficient rows")))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| parse_f64(t, n + 1))
                .collect::<Result<_>>()?;
            if row.len() != cols {
                return Err(Error::parse(
                    n + 1,
                    format!("expected {cols} coefficients, found {}", row.len()),
                ));
            }
            coeffs.extend(row);
        }
        if let Some((n, _)) = lines.next() {
            return Err(Error::parse(n + 1, "trailing data after coefficient rows"));
        }
        Self::new(rows, cols, coeffs, Extent::new(x, y)?)
    }
}

fn check_point(p: Point2) -> Result<()> {
    if p.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("non-finite point ({}, {})", p.x, p.y)))
    }
}

pub(crate) fn parse_f64(token: &str, line: usize) -> Result<f64> {
    token
        .parse::<f64>()
        .map_err(|_| Error::parse(line, format!("`{token}` is not a number")))
}

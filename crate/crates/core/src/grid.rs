//! Decay-rate grid maps: per cell, the number of returns ending in the cell
//! divided by the total distance traveled by all rays inside it.
//!
//! Cells are indexed `(ix, iy)` and stored row-major with rows along y.
//! Cell intervals are half-open `[lo, hi)` in the direction of travel: a
//! ray that ends exactly on a boundary is credited to the cell it enters.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{integration_length, mixed_log_density, LidarRay, RayOutcome, ScanSet, RAY_CHUNK};
use crate::spectral::{parse_f64, Extent, Point2, Ray2};

/// Placement and resolution of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    /// Cells along x.
    pub nx: usize,
    /// Cells along y.
    pub ny: usize,
    pub cell_edge: f64,
    /// Lower-left corner.
    pub origin: Point2,
}

impl GridGeometry {
    pub fn new(nx: usize, ny: usize, cell_edge: f64, origin: Point2) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::invalid("grid must have at least one cell"));
        }
        if !(cell_edge > 0.0 && cell_edge.is_finite()) || !origin.is_finite() {
            return Err(Error::invalid(format!("invalid cell edge {cell_edge}")));
        }
        Ok(Self {
            nx,
            ny,
            cell_edge,
            origin,
        })
    }

    /// `n × n` cells exactly covering `[0, X] × [0, Y]`; requires a square
    /// cell shape, i.e. `X / nx == Y / ny`.
    pub fn covering(extent: Extent, nx: usize, ny: usize) -> Result<Self> {
        let ex = extent.x / nx as f64;
        let ey = extent.y / ny as f64;
        if ((ex - ey) / ex).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "{nx} × {ny} cells do not tile {} × {} with square cells",
                extent.x, extent.y
            )));
        }
        Self::new(nx, ny, ex, Point2::new(0.0, 0.0))
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn width(&self) -> f64 {
        self.nx as f64 * self.cell_edge
    }

    pub fn height(&self) -> f64 {
        self.ny as f64 * self.cell_edge
    }

    pub fn flat(&self, cell: CellIndex) -> usize {
        cell.iy * self.nx + cell.ix
    }

    pub fn midpoint(&self, cell: CellIndex) -> Point2 {
        Point2::new(
            self.origin.x + (cell.ix as f64 + 0.5) * self.cell_edge,
            self.origin.y + (cell.iy as f64 + 0.5) * self.cell_edge,
        )
    }

    fn contains(&self, p: Point2) -> bool {
        p.x >= self.origin.x
            && p.x <= self.origin.x + self.width()
            && p.y >= self.origin.y
            && p.y <= self.origin.y + self.height()
    }

    /// Cell containing `p`, with the upper boundary folded into the last
    /// cell. `None` outside the grid.
    pub fn cell_of(&self, p: Point2) -> Option<CellIndex> {
        if !self.contains(p) {
            return None;
        }
        let ix = ((p.x - self.origin.x) / self.cell_edge).floor() as usize;
        let iy = ((p.y - self.origin.y) / self.cell_edge).floor() as usize;
        Some(CellIndex {
            ix: ix.min(self.nx - 1),
            iy: iy.min(self.ny - 1),
        })
    }

    /// Cell the ray occupies at parameter `t`, using the entering-cell rule
    /// on boundaries.
    pub fn cell_along(&self, ray: &Ray2, t: f64) -> Option<CellIndex> {
        let p = ray.point_at(t);
        let [dx, dy] = ray.direction();
        let ix = axis_cell((p.x - self.origin.x) / self.cell_edge, dx, self.nx)?;
        let iy = axis_cell((p.y - self.origin.y) / self.cell_edge, dy, self.ny)?;
        Some(CellIndex { ix, iy })
    }

    /// Parameter interval `[t0, t1]` of the ray inside the grid, or `None`.
    fn clip(&self, ray: &Ray2) -> Option<(f64, f64)> {
        let o = ray.origin();
        let d = ray.direction();
        let lo = [self.origin.x, self.origin.y];
        let hi = [self.origin.x + self.width(), self.origin.y + self.height()];
        let s = [o.x, o.y];
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for k in 0..2 {
            if d[k] == 0.0 {
                if s[k] < lo[k] || s[k] > hi[k] {
                    return None;
                }
            } else {
                let a = (lo[k] - s[k]) / d[k];
                let b = (hi[k] - s[k]) / d[k];
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        (t0 <= t1).then_some((t0, t1))
    }

    /// Distance at which a ray starting inside the grid leaves it.
    pub fn exit_distance(&self, ray: &Ray2) -> Option<f64> {
        if !self.contains(ray.origin()) {
            return None;
        }
        self.clip(ray).map(|(_, t1)| t1)
    }
}

fn axis_cell(v: f64, d: f64, n: usize) -> Option<usize> {
    const SLACK: f64 = 1e-9;
    let raw = if d < 0.0 { v.ceil() - 1.0 } else { v.floor() };
    if raw >= 0.0 && raw < n as f64 {
        Some(raw as usize)
    } else if raw < 0.0 && v >= -SLACK {
        Some(0)
    } else if raw >= n as f64 && v <= n as f64 + SLACK {
        Some(n - 1)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub ix: usize,
    pub iy: usize,
}

/// The part of a ray inside one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSegment {
    pub cell: CellIndex,
    pub t_enter: f64,
    pub t_exit: f64,
}

impl CellSegment {
    pub fn length(&self) -> f64 {
        self.t_exit - self.t_enter
    }
}

/// Cells visited by the segment `[0, r]` of `ray`, in order of travel, with
/// the portion of the segment inside each. Zero-length visits are omitted.
pub fn trace_ray(geometry: &GridGeometry, ray: &Ray2, r: f64) -> Vec<CellSegment> {
    let mut out = Vec::new();
    if !(r > 0.0) {
        return out;
    }
    let Some((t0, t1)) = geometry.clip(ray) else {
        return out;
    };
    let t_end = t1.min(r);
    if t0 >= t_end {
        return out;
    }
    let Some(start) = geometry.cell_along(ray, t0) else {
        return out;
    };
    let o = ray.origin();
    let d = ray.direction();
    let s = [o.x - geometry.origin.x, o.y - geometry.origin.y];
    let e = geometry.cell_edge;
    let n = [geometry.nx as i64, geometry.ny as i64];
    let step = d.map(|v| if v > 0.0 { 1i64 } else if v < 0.0 { -1 } else { 0 });
    let mut idx = [start.ix as i64, start.iy as i64];
    let next_boundary = |k: usize, i: i64| -> f64 {
        match step[k] {
            1 => ((i + 1) as f64 * e - s[k]) / d[k],
            -1 => (i as f64 * e - s[k]) / d[k],
            _ => f64::INFINITY,
        }
    };
    let mut t = t0;
    loop {
        let tx = next_boundary(0, idx[0]);
        let ty = next_boundary(1, idx[1]);
        let t_next = tx.min(ty).min(t_end);
        if t_next > t {
            out.push(CellSegment {
                cell: CellIndex {
                    ix: idx[0] as usize,
                    iy: idx[1] as usize,
                },
                t_enter: t,
                t_exit: t_next,
            });
        }
        t = t.max(t_next);
        if t >= t_end {
            break;
        }
        if tx <= ty {
            idx[0] += step[0];
        } else {
            idx[1] += step[1];
        }
        if idx[0] < 0 || idx[0] >= n[0] || idx[1] < 0 || idx[1] >= n[1] {
            break;
        }
    }
    out
}

/// Which cells count as observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ObservedRule {
    /// Traversed by at least one ray.
    #[default]
    Traversed,
    /// Containing at least one return.
    Hit,
}

/// A decay-rate grid map with its build accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDecayMap {
    geometry: GridGeometry,
    hits: Vec<u32>,
    path_len: Vec<f64>,
    decay: Vec<Option<f64>>,
}

impl GridDecayMap {
    /// A map with no traffic: every cell unobserved.
    pub fn empty(geometry: GridGeometry) -> Self {
        let n = geometry.cell_count();
        Self {
            geometry,
            hits: vec![0; n],
            path_len: vec![0.0; n],
            decay: vec![None; n],
        }
    }

    /// A map with prescribed decay values (`None` marks unobserved cells)
    /// and no accumulators.
    pub fn from_decay(geometry: GridGeometry, decay: Vec<Option<f64>>) -> Result<Self> {
        if decay.len() != geometry.cell_count() {
            return Err(Error::invalid(format!(
                "expected {} decay values, got {}",
                geometry.cell_count(),
                decay.len()
            )));
        }
        if decay.iter().flatten().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::invalid("decay values must be finite and nonnegative"));
        }
        let mut map = Self::empty(geometry);
        map.decay = decay;
        Ok(map)
    }

    /// Every cell observed with the same decay rate.
    pub fn uniform(geometry: GridGeometry, decay: f64) -> Result<Self> {
        Self::from_decay(geometry, vec![Some(decay); geometry.cell_count()])
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn hits(&self, cell: CellIndex) -> u32 {
        self.hits[self.geometry.flat(cell)]
    }

    pub fn path_len(&self, cell: CellIndex) -> f64 {
        self.path_len[self.geometry.flat(cell)]
    }

    pub fn hit_counts(&self) -> &[u32] {
        &self.hits
    }

    pub fn path_lengths(&self) -> &[f64] {
        &self.path_len
    }

    /// Decay of a cell, `None` when unobserved.
    pub fn decay(&self, cell: CellIndex) -> Option<f64> {
        self.decay[self.geometry.flat(cell)]
    }

    pub fn decays(&self) -> &[Option<f64>] {
        &self.decay
    }

    /// Decay with unobserved cells read as zero.
    pub(crate) fn decay_or_zero(&self, cell: CellIndex) -> f64 {
        self.decay(cell).unwrap_or(0.0)
    }

    /// Recomputes decay values from the accumulators under `rule`.
    pub fn apply_rule(&mut self, rule: ObservedRule) {
        for k in 0..self.decay.len() {
            let observed = match rule {
                ObservedRule::Traversed => self.path_len[k] > 0.0,
                ObservedRule::Hit => self.hits[k] > 0,
            };
            self.decay[k] = observed.then(|| {
                if self.path_len[k] > 0.0 {
                    self.hits[k] as f64 / self.path_len[k]
                } else {
                    0.0
                }
            });
        }
    }

    /// Observation mask in storage order.
    pub fn observed_mask(&self) -> Vec<bool> {
        self.decay.iter().map(Option::is_some).collect()
    }

    /// Looks up the cell containing `p`.
    pub fn sample(&self, p: Point2) -> Result<CellValue> {
        let cell = self.geometry.cell_of(p).ok_or_else(|| {
            Error::invalid(format!("point ({}, {}) outside the grid", p.x, p.y))
        })?;
        Ok(match self.decay(cell) {
            Some(d) => CellValue::Observed(d),
            None => CellValue::Unobserved,
        })
    }

    /// Text form: header `nx ny cell_edge origin_x origin_y`, then `ny` rows
    /// of `nx` decay values starting at `iy = 0`; unobserved cells are `nan`.
    pub fn to_text(&self) -> String {
        let g = &self.geometry;
        let mut out = format!(
            "{} {} {} {} {}\n",
            g.nx, g.ny, g.cell_edge, g.origin.x, g.origin.y
        );
        for row in self.decay.chunks_exact(g.nx) {
            let line: Vec<String> = row
                .iter()
                .map(|d| d.map_or_else(|| "nan".to_string(), |v| v.to_string()))
                .collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (h, header) = lines.next().ok_or_else(|| Error::parse(1, "missing grid header"))?;
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 5 {
            return Err(Error::parse(h + 1, "header must be `nx ny cell_edge origin_x origin_y`"));
        }
        let nx: usize = f[0].parse().map_err(|_| Error::parse(h + 1, "nx is not an integer"))?;
        let ny: usize = f[1].parse().map_err(|_| Error::parse(h + 1, "ny is not an integer"))?;
        let geometry = GridGeometry::new(
            nx,
            ny,
            parse_f64(f[2], h + 1)?,
            Point2::new(parse_f64(f[3], h + 1)?, parse_f64(f[4], h + 1)?),
        )?;
        let mut decay = Vec::with_capacity(nx * ny);
        for _ in 0..ny {
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::parse(h + 1, format!("expected {ny} rows")))?;
            let row: Vec<Option<f64>> = line
                .split_whitespace()
                .map(|t| if t == "nan" { Ok(None) } else { parse_f64(t, n + 1).map(Some) })
                .collect::<Result<_>>()?;
            if row.len() != nx {
                return Err(Error::parse(n + 1, format!("expected {nx} values, found {}", row.len())));
            }
            decay.extend(row);
        }
        Self::from_decay(geometry, decay)
    }
}

/// Result of a point lookup in a grid map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellValue {
    Observed(f64),
    Unobserved,
}

/// Path length of `z` that counts towards the cells it traverses, before
/// clipping to the grid.
fn build_length(z: &LidarRay, scans: &ScanSet) -> f64 {
    match z.outcome {
        RayOutcome::Sub => scans.limits.r_min,
        RayOutcome::Super => scans.limits.r_max,
        RayOutcome::Return(r) => r,
    }
}

/// Accumulates hits and traversed lengths of all rays and derives decay
/// rates, with cells observed when traversed.
pub fn build_grid(scans: &ScanSet, geometry: GridGeometry) -> GridDecayMap {
    let mut map = GridDecayMap::empty(geometry);
    for z in &scans.rays {
        let len = build_length(z, scans);
        for seg in trace_ray(&geometry, &z.ray, len) {
            map.path_len[geometry.flat(seg.cell)] += seg.length();
        }
        if let RayOutcome::Return(r) = z.outcome {
            if let Some(cell) = geometry.cell_along(&z.ray, r) {
                map.hits[geometry.flat(cell)] += 1;
            }
        }
    }
    map.apply_rule(ObservedRule::Traversed);
    map
}

fn grid_ray_log_likelihood(map: &GridDecayMap, z: &LidarRay, scans: &ScanSet) -> Result<f64> {
    let g = map.geometry();
    let exit = g
        .exit_distance(&z.ray)
        .ok_or_else(|| Error::invalid("ray origin lies outside the grid"))?;
    let len = integration_length(z, &scans.limits, exit)?;
    let s: f64 = trace_ray(g, &z.ray, len)
        .iter()
        .map(|seg| map.decay_or_zero(seg.cell) * seg.length())
        .sum();
    let endpoint = match z.outcome {
        RayOutcome::Return(_) => g
            .cell_along(&z.ray, len)
            .map_or(0.0, |cell| map.decay_or_zero(cell)),
        _ => 0.0,
    };
    Ok(mixed_log_density(z.outcome, s, endpoint))
}

/// Joint log-likelihood under the piecewise-constant field of the grid,
/// with unobserved cells treated as fully transparent.
pub fn grid_scan_log_likelihood(map: &GridDecayMap, scans: &ScanSet) -> Result<f64> {
    let chunks: Vec<Result<f64>> = scans
        .rays
        .par_chunks(RAY_CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|z| grid_ray_log_likelihood(map, z, scans))
                .sum()
        })
        .collect();
    chunks.into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::SensorLimits;
    use crate::spectral::SpectralMap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_grid(n: usize) -> GridGeometry {
        GridGeometry::new(n, n, 1.0, Point2::new(0.0, 0.0)).unwrap()
    }

    #[test]
    fn axis_aligned_trace() {
        let ray = Ray2::new(Point2::new(0.5, 0.5), [1.0, 0.0]).unwrap();
        let segs = trace_ray(&unit_grid(5), &ray, 2.5);
        let got: Vec<((usize, usize), f64)> = segs
            .iter()
            .map(|s| ((s.cell.ix, s.cell.iy), s.length()))
            .collect();
        assert_eq!(got, vec![((0, 0), 0.5), ((1, 0), 1.0), ((2, 0), 1.0)]);
        assert!(trace_ray(&unit_grid(5), &ray, 0.0).is_empty());
    }

    #[test]
    fn fully_outside_ray_is_empty() {
        let ray = Ray2::new(Point2::new(-1.0, -1.0), [-1.0, 0.0]).unwrap();
        assert!(trace_ray(&unit_grid(3), &ray, 10.0).is_empty());
    }

    #[test]
    fn entering_ray_is_clipped() {
        let ray = Ray2::new(Point2::new(-2.0, 0.5), [1.0, 0.0]).unwrap();
        let segs = trace_ray(&unit_grid(3), &ray, 10.0);
        assert_eq!(segs.len(), 3);
        assert!((segs[0].t_enter - 2.0).abs() < 1e-12);
        let total: f64 = segs.iter().map(CellSegment::length).sum();
        assert!((total - 3.0).abs() < 1e-12);
    }

    #[test]
    fn segment_lengths_are_conserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = GridGeometry::new(7, 5, 0.7, Point2::new(0.0, 0.0)).unwrap();
        for _ in 0..200 {
            let o = Point2::new(rng.random_range(0.0..g.width()), rng.random_range(0.0..g.height()));
            let ray = Ray2::from_angle(o, rng.random_range(0.0..std::f64::consts::TAU)).unwrap();
            let r = rng.random_range(0.0..8.0);
            let exit = g.exit_distance(&ray).unwrap();
            let segs = trace_ray(&g, &ray, r);
            let total: f64 = segs.iter().map(CellSegment::length).sum();
            assert!((total - r.min(exit)).abs() < 1e-9);
            for w in segs.windows(2) {
                assert_eq!(w[0].t_exit, w[1].t_enter);
                let (a, b) = (w[0].cell, w[1].cell);
                assert_eq!(a.ix.abs_diff(b.ix) + a.iy.abs_diff(b.iy), 1);
            }
        }
    }

    #[test]
    fn boundary_return_credits_entered_cell() {
        let g = unit_grid(4);
        let fwd = Ray2::new(Point2::new(0.5, 0.5), [1.0, 0.0]).unwrap();
        assert_eq!(g.cell_along(&fwd, 1.5), Some(CellIndex { ix: 2, iy: 0 }));
        let back = Ray2::new(Point2::new(3.5, 0.5), [-1.0, 0.0]).unwrap();
        assert_eq!(g.cell_along(&back, 1.5), Some(CellIndex { ix: 1, iy: 0 }));
    }

    #[test]
    fn single_return_decay() {
        let g = unit_grid(4);
        let limits = SensorLimits::new(0.01, 20.0).unwrap();
        let ray = Ray2::new(Point2::new(0.5, 0.5), [1.0, 0.0]).unwrap();
        let scans = ScanSet::from_rays(vec![LidarRay::new(ray, RayOutcome::Return(1.0))], limits, None).unwrap();
        let map = build_grid(&scans, g);
        assert_eq!(map.decay(CellIndex { ix: 0, iy: 0 }), Some(0.0));
        assert_eq!(map.decay(CellIndex { ix: 1, iy: 0 }), Some(2.0));
        assert_eq!(map.decay(CellIndex { ix: 2, iy: 0 }), None);
    }

    #[test]
    fn pass_through_rays_give_zero_decay() {
        let g = GridGeometry::new(3, 1, 0.6, Point2::new(0.0, 0.0)).unwrap();
        let limits = SensorLimits::new(0.01, 20.0).unwrap();
        let rays = (0..2)
            .map(|_| LidarRay::new(Ray2::new(Point2::new(0.0, 0.3), [1.0, 0.0]).unwrap(), RayOutcome::Super))
            .collect();
        let map = build_grid(&ScanSet::from_rays(rays, limits, None).unwrap(), g);
        let mid = CellIndex { ix: 1, iy: 0 };
        assert!((map.path_len(mid) - 1.2).abs() < 1e-12);
        assert_eq!(map.decay(mid), Some(0.0));
    }

    #[test]
    fn uniform_grid_matches_constant_spectral_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let extent = Extent::new(10.0, 10.0).unwrap();
        let limits = SensorLimits::new(0.2, 30.0).unwrap();
        let c = 0.55;
        let spectral = SpectralMap::constant(3, 3, c, extent).unwrap();
        let grid = GridDecayMap::uniform(GridGeometry::covering(extent, 8, 8).unwrap(), c * c).unwrap();
        let rays = (0..40)
            .map(|k| {
                let o = Point2::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
                let ray = Ray2::from_angle(o, rng.random_range(0.0..6.28)).unwrap();
                let exit = ray.exit_distance(extent).unwrap();
                let outcome = match k % 3 {
                    0 => RayOutcome::Sub,
                    1 => RayOutcome::Super,
                    _ if exit > 0.3 => RayOutcome::Return(rng.random_range(0.2..exit)),
                    _ => RayOutcome::Super,
                };
                LidarRay::new(ray, outcome)
            })
            .collect();
        let scans = ScanSet::from_rays(rays, limits, Some(extent)).unwrap();
        let a = grid_scan_log_likelihood(&grid, &scans).unwrap();
        let b = crate::forward::scan_log_likelihood(&spectral, &scans).unwrap();
        assert!((a - b).abs() <= 1e-8 * b.abs(), "{a} vs {b}");
    }

    #[test]
    fn zero_grid_super_rays_have_zero_loglik() {
        let g = unit_grid(5);
        let limits = SensorLimits::new(0.1, 3.0).unwrap();
        let grid = GridDecayMap::uniform(g, 0.0).unwrap();
        let rays = vec![LidarRay::new(Ray2::from_angle(Point2::new(2.0, 2.0), 1.0).unwrap(), RayOutcome::Super)];
        let scans = ScanSet::from_rays(rays, limits, None).unwrap();
        assert_eq!(grid_scan_log_likelihood(&grid, &scans).unwrap(), 0.0);
    }

    #[test]
    fn single_cell_grid_is_exponential() {
        let g = GridGeometry::new(1, 1, 10.0, Point2::new(0.0, 0.0)).unwrap();
        let limits = SensorLimits::new(0.1, 30.0).unwrap();
        let lam = 0.3;
        let grid = GridDecayMap::uniform(g, lam).unwrap();
        let ray = Ray2::from_angle(Point2::new(1.0, 1.0), 0.5).unwrap();
        let scans = ScanSet::from_rays(vec![LidarRay::new(ray, RayOutcome::Return(2.0))], limits, None).unwrap();
        let ll = grid_scan_log_likelihood(&grid, &scans).unwrap();
        assert!((ll - (lam.ln() - lam * 2.0)).abs() < 1e-14);
    }

    #[test]
    fn sampling_and_text_round_trip() {
        let g = GridGeometry::new(3, 2, 0.5, Point2::new(1.0, -1.0)).unwrap();
        let decay = vec![Some(0.1), None, Some(2.5), Some(0.0), Some(1.0 / 3.0), None];
        let map = GridDecayMap::from_decay(g, decay).unwrap();
        let mid = g.midpoint(CellIndex { ix: 2, iy: 0 });
        assert_eq!(map.sample(mid).unwrap(), CellValue::Observed(2.5));
        assert_eq!(map.sample(g.midpoint(CellIndex { ix: 1, iy: 0 })).unwrap(), CellValue::Unobserved);
        assert!(map.sample(Point2::new(0.0, 0.0)).is_err());
        let text = map.to_text();
        let back = GridDecayMap::from_text(&text).unwrap();
        assert_eq!(back.decays(), map.decays());
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn observed_rule_can_be_flipped() {
        let g = unit_grid(4);
        let limits = SensorLimits::new(0.01, 20.0).unwrap();
        let ray = Ray2::new(Point2::new(0.5, 0.5), [1.0, 0.0]).unwrap();
        let scans = ScanSet::from_rays(vec![LidarRay::new(ray, RayOutcome::Return(1.0))], limits, None).unwrap();
        let mut map = build_grid(&scans, g);
        assert_eq!(map.observed_mask().iter().filter(|o| **o).count(), 2);
        map.apply_rule(ObservedRule::Hit);
        assert_eq!(map.observed_mask().iter().filter(|o| **o).count(), 1);
    }
}

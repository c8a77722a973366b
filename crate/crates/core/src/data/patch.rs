//! Cutting a square patch out of a large scan set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{LidarRay, RayOutcome, ScanSet};
use crate::spectral::{Extent, Point2, Ray2};

pub const DEFAULT_PATCH_EDGE: f64 = 10.0;
/// Ray budget for map-quality comparisons.
pub const FIT_MAX_RAYS: usize = 10_000;
/// Ray budget for likelihood comparisons.
pub const EVAL_MAX_RAYS: usize = 500;

/// Axis-aligned patch given by its lower-left corner in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub corner: Point2,
    pub width: f64,
    pub height: f64,
    pub max_rays: usize,
}

impl PatchSpec {
    pub fn new(corner: Point2, width: f64, height: f64, max_rays: usize) -> Result<Self> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) || !corner.is_finite() {
            return Err(Error::invalid(format!("patch must have positive size, got {width} × {height}")));
        }
        Ok(Self {
            corner,
            width,
            height,
            max_rays,
        })
    }

    pub fn extent(&self) -> Extent {
        Extent {
            x: self.width,
            y: self.height,
        }
    }

    /// The window of the given size that fully contains the most returns
    /// (origin and endpoint), searched over corners on a lattice of `step`
    /// meters. Ties go to the lowest corner, y first.
    pub fn densest(scans: &ScanSet, width: f64, height: f64, max_rays: usize, step: f64) -> Result<Self> {
        if !(step > 0.0) {
            return Err(Error::invalid("lattice step must be > 0"));
        }
        let segments: Vec<(Point2, Point2)> = scans
            .rays
            .iter()
            .filter_map(|z| match z.outcome {
                RayOutcome::Return(r) => Some((z.ray.origin(), z.ray.point_at(r))),
                _ => None,
            })
            .collect();
        let Some(first) = segments.first() else {
            return Err(Error::invalid("no returns to anchor a patch on"));
        };
        let (mut lo, mut hi) = (first.0, first.0);
        for (a, b) in &segments {
            for p in [a, b] {
                lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
            }
        }
        let origin = Point2::new(lo.x - width, lo.y - height);
        let nx = ((hi.x - origin.x) / step).ceil() as usize + 2;
        let ny = ((hi.y - origin.y) / step).ceil() as usize + 2;
        // A segment lies inside the window with corner c iff
        // max − size ≤ c ≤ min on both axes. Accumulate those corner
        // rectangles with a 2-D difference array.
        let mut diff = vec![0i64; (nx + 1) * (ny + 1)];
        let span = |a: f64, b: f64, size: f64, o: f64, n: usize| -> Option<(usize, usize)> {
            let first = ((a.max(b) - size - o) / step).ceil().max(0.0) as usize;
            let last = (((a.min(b) - o) / step).floor() as usize).min(n - 1);
            (first <= last).then_some((first, last))
        };
        for (a, b) in &segments {
            let (Some((x0, x1)), Some((y0, y1))) = (
                span(a.x, b.x, width, origin.x, nx),
                span(a.y, b.y, height, origin.y, ny),
            ) else {
                continue;
            };
            let w = nx + 1;
            diff[y0 * w + x0] += 1;
            diff[y0 * w + x1 + 1] -= 1;
            diff[(y1 + 1) * w + x0] -= 1;
            diff[(y1 + 1) * w + x1 + 1] += 1;
        }
        let w = nx + 1;
        for j in 0..=ny {
            for i in 1..=nx {
                diff[j * w + i] += diff[j * w + i - 1];
            }
        }
        for j in 1..=ny {
            for i in 0..=nx {
                diff[j * w + i] += diff[(j - 1) * w + i];
            }
        }
        let mut best = (0, 0, i64::MIN);
        for j in 0..ny {
            for i in 0..nx {
                if diff[j * w + i] > best.2 {
                    best = (i, j, diff[j * w + i]);
                }
            }
        }
        let corner = Point2::new(origin.x + best.0 as f64 * step, origin.y + best.1 as f64 * step);
        Self::new(corner, width, height, max_rays)
    }
}

/// Rays whose origin lies in the patch, translated to patch coordinates and
/// capped at `max_rays` in input order. Returns past the patch boundary
/// become super rays, which the likelihood clips at the boundary.
pub fn extract_patch(scans: &ScanSet, patch: &PatchSpec) -> Result<ScanSet> {
    let extent = patch.extent();
    let mut out = ScanSet::new(scans.limits, Some(extent));
    for z in &scans.rays {
        if out.len() >= patch.max_rays {
            break;
        }
        let o = z.ray.origin();
        let local = Point2::new(o.x - patch.corner.x, o.y - patch.corner.y);
        let ray = Ray2::new(local, z.ray.direction())?;
        let Some(exit) = ray.exit_distance(extent) else {
            continue;
        };
        let outcome = match z.outcome {
            RayOutcome::Return(r) if r > exit => RayOutcome::Super,
            other => other,
        };
        out.push(LidarRay::new(ray, outcome));
    }
    Ok(out)
}

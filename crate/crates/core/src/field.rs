//! A common view of spectral and grid maps as decay-rate fields, used by the
//! scan simulator and by rasterization.

use crate::forward::{FrequencyTable, PairWeights};
use crate::grid::{trace_ray, GridDecayMap};
use crate::spectral::{Point2, Ray2, SpectralMap};

pub trait DecayField: Sync {
    /// Distance at which a ray starting inside the field's domain leaves it;
    /// `None` if the origin is outside.
    fn exit_distance(&self, ray: &Ray2) -> Option<f64>;

    /// Decay rate at `p`; zero where the field has no information.
    fn decay_at(&self, p: Point2) -> f64;

    /// `∫₀ʳ λ` along the ray.
    fn line_integral(&self, ray: &Ray2, r: f64) -> f64;

    /// Decay rate the ray sees at parameter `r`.
    fn decay_along(&self, ray: &Ray2, r: f64) -> f64 {
        self.decay_at(ray.point_at(r))
    }
}

/// A [`SpectralMap`] with its coefficient pair weights precomputed, for
/// repeated line integrals.
#[derive(Debug, Clone)]
pub struct SpectralField<'a> {
    map: &'a SpectralMap,
    weights: PairWeights,
}

impl<'a> SpectralField<'a> {
    pub fn new(map: &'a SpectralMap) -> Self {
        Self {
            map,
            weights: PairWeights::new(map),
        }
    }

    pub fn map(&self) -> &SpectralMap {
        self.map
    }
}

impl DecayField for SpectralField<'_> {
    fn exit_distance(&self, ray: &Ray2) -> Option<f64> {
        ray.exit_distance(self.map.extent())
    }

    fn decay_at(&self, p: Point2) -> f64 {
        self.map.lambda_unchecked(p)
    }

    fn line_integral(&self, ray: &Ray2, r: f64) -> f64 {
        self.weights
            .line_integral(&FrequencyTable::new(self.map, ray, r))
    }
}

impl DecayField for SpectralMap {
    fn exit_distance(&self, ray: &Ray2) -> Option<f64> {
        ray.exit_distance(self.extent())
    }

    fn decay_at(&self, p: Point2) -> f64 {
        self.lambda_unchecked(p)
    }

    fn line_integral(&self, ray: &Ray2, r: f64) -> f64 {
        SpectralField::new(self).line_integral(ray, r)
    }
}

impl DecayField for GridDecayMap {
    fn exit_distance(&self, ray: &Ray2) -> Option<f64> {
        self.geometry().exit_distance(ray)
    }

    fn decay_at(&self, p: Point2) -> f64 {
        self.geometry()
            .cell_of(p)
            .map_or(0.0, |c| self.decay_or_zero(c))
    }

    fn line_integral(&self, ray: &Ray2, r: f64) -> f64 {
        trace_ray(self.geometry(), ray, r)
            .iter()
            .map(|s| self.decay_or_zero(s.cell) * s.length())
            .sum()
    }

    fn decay_along(&self, ray: &Ray2, r: f64) -> f64 {
        self.geometry()
            .cell_along(ray, r)
            .map_or(0.0, |c| self.decay_or_zero(c))
    }
}

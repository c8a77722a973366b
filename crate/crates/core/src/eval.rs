//! Map comparison: reference probabilities, rasters, RMSE against a truth
//! raster, scan log-likelihoods of spectral and grid maps, reports and PGM
//! images.

use std::fmt::Write;
use std::time::Instant;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::simulate_scan;
use crate::error::{Error, Result};
use crate::field::{DecayField, SpectralField};
use crate::fit::{fit, FitConfig, FitInit};
use crate::forward::{scan_log_likelihood, ScanSet, SensorLimits};
use crate::grid::{build_grid, grid_scan_log_likelihood, CellIndex, GridDecayMap, GridGeometry};
use crate::spectral::{Extent, Point2, Ray2, SpectralMap};

/// `1 − exp(−λ)`: reflection probability within one meter.
pub fn p_ref(decay: f64) -> Result<f64> {
    if !(decay >= 0.0) {
        return Err(Error::invalid(format!("decay must be ≥ 0, got {decay}")));
    }
    Ok(-(-decay).exp_m1())
}

/// A row-major image of `p_ref` values. Row 0 is the top (largest y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Raster {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }
}

/// Axis-aligned window `[origin, origin + size]` to rasterize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub origin: Point2,
    pub width: f64,
    pub height: f64,
}

impl Region {
    pub fn of_extent(extent: Extent) -> Self {
        Self {
            origin: Point2::new(0.0, 0.0),
            width: extent.x,
            height: extent.y,
        }
    }

    pub fn of_grid(geometry: &GridGeometry) -> Self {
        Self {
            origin: geometry.origin,
            width: geometry.width(),
            height: geometry.height(),
        }
    }

    /// Midpoint of raster cell `(row, col)`.
    pub fn midpoint(&self, rows: usize, cols: usize, row: usize, col: usize) -> Point2 {
        Point2::new(
            self.origin.x + (col as f64 + 0.5) * self.width / cols as f64,
            self.origin.y + self.height - (row as f64 + 0.5) * self.height / rows as f64,
        )
    }
}

/// Samples the field at raster cell midpoints and maps through [`p_ref`].
pub fn rasterize<F: DecayField + ?Sized>(field: &F, region: Region, rows: usize, cols: usize) -> Result<Raster> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("raster must be at least 1 × 1"));
    }
    let values = (0..rows * cols)
        .map(|k| p_ref(field.decay_at(region.midpoint(rows, cols, k / cols, k % cols))))
        .collect::<Result<_>>()?;
    Ok(Raster { rows, cols, values })
}

pub fn rasterize_spectral(map: &SpectralMap, rows: usize, cols: usize) -> Result<Raster> {
    rasterize(map, Region::of_extent(map.extent()), rows, cols)
}

pub fn rasterize_grid(grid: &GridDecayMap, rows: usize, cols: usize) -> Result<Raster> {
    rasterize(grid, Region::of_grid(grid.geometry()), rows, cols)
}

/// Observed flags of a grid in raster order (top row first).
pub fn grid_mask(grid: &GridDecayMap) -> Vec<bool> {
    let g = grid.geometry();
    let observed = grid.observed_mask();
    (0..g.ny)
        .rev()
        .flat_map(|iy| (0..g.nx).map(move |ix| (ix, iy)))
        .map(|(ix, iy)| observed[g.flat(CellIndex { ix, iy })])
        .collect()
}

/// Root mean squared difference over the cells where `mask` is set.
pub fn rmse_pref(candidate: &Raster, truth: &Raster, mask: &[bool]) -> Result<f64> {
    if (candidate.rows, candidate.cols) != (truth.rows, truth.cols) || mask.len() != truth.values.len() {
        return Err(Error::invalid("raster and mask shapes differ"));
    }
    let (sum, count) = candidate
        .values
        .iter()
        .zip(&truth.values)
        .zip(mask)
        .filter(|(_, m)| **m)
        .fold((0.0, 0usize), |(s, n), ((a, b), _)| (s + (a - b) * (a - b), n + 1));
    if count == 0 {
        return Err(Error::invalid("RMSE mask selects no cells"));
    }
    Ok((sum / count as f64).sqrt())
}

/// Binary 8-bit PGM with pixel value `round(255·p_ref)`.
pub fn render_pgm(raster: &Raster) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", raster.cols, raster.rows).into_bytes();
    out.extend(
        raster
            .values
            .iter()
            .map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8),
    );
    out
}

/// The reference a comparison is scored against.
#[derive(Debug, Clone)]
pub struct Truth {
    pub raster: Raster,
    pub mask: Vec<bool>,
}

impl Truth {
    /// Fine grid built from `scans`; unobserved cells are masked out.
    pub fn from_grid_scans(scans: &ScanSet, extent: Extent, n: usize) -> Result<Self> {
        let grid = build_grid(scans, GridGeometry::covering(extent, n, n)?);
        Ok(Self {
            raster: rasterize_grid(&grid, n, n)?,
            mask: grid_mask(&grid),
        })
    }

    /// A known field sampled at `n × n` midpoints, masked to the cells that
    /// `scans` traverse.
    pub fn from_field(map: &SpectralMap, scans: &ScanSet, n: usize) -> Result<Self> {
        let grid = build_grid(scans, GridGeometry::covering(map.extent(), n, n)?);
        Ok(Self {
            raster: rasterize_spectral(map, n, n)?,
            mask: grid_mask(&grid),
        })
    }
}

/// Default pairing of spectral sizes and grid resolutions over a
/// 10 m patch: `n × n` coefficients against `n × n` cells.
pub const DEFAULT_RESOLUTIONS: [usize; 5] = [10, 13, 20, 29, 40];
pub const TRUTH_CELLS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub rows: usize,
    pub cols: usize,
    pub edge_len: f64,
    pub rmse_dct: f64,
    pub rmse_grid: f64,
    pub loglik_dct: f64,
    pub loglik_grid: f64,
    pub fit_time_s: f64,
    pub grid_time_s: f64,
    pub fit_iterations: usize,
    pub fit_converged: bool,
    /// Log-likelihoods of external baselines, if merged in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loglik_gpom: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loglik_hilbert: Option<f64>,
}

impl EvalRecord {
    pub fn params(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    /// One JSON object per record and line.
    pub fn to_json_lines(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }

    pub fn from_json_lines(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(k, l)| serde_json::from_str(l).map_err(|e| Error::parse(k + 1, e.to_string())))
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }

    /// Table with RMSEs and their relative improvement, plus log-likelihood
    /// differences of the spectral map against each baseline.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "params,edge_len,rmse_dct,rmse_grid,rmse_improvement_pct,loglik_dct,loglik_grid,\
             loglik_diff_grid,loglik_diff_gpom,loglik_diff_hilbert,fit_time_s,grid_time_s\n",
        );
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for r in &self.records {
            let improvement = if r.rmse_grid > 0.0 {
                Some(100.0 * (r.rmse_grid - r.rmse_dct) / r.rmse_grid)
            } else {
                None
            };
            let _ = writeln!(
                out,
                "{}x{},{},{},{},{},{},{},{},{},{},{},{}",
                r.rows,
                r.cols,
                r.edge_len,
                r.rmse_dct,
                r.rmse_grid,
                opt(improvement),
                r.loglik_dct,
                r.loglik_grid,
                r.loglik_dct - r.loglik_grid,
                opt(r.loglik_gpom.map(|g| r.loglik_dct - g)),
                opt(r.loglik_hilbert.map(|h| r.loglik_dct - h)),
                r.fit_time_s,
                r.grid_time_s
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonOptions {
    pub resolutions: Vec<usize>,
    /// Template for the spectral fits; its size is replaced per resolution.
    pub fit: FitConfig,
    pub truth_cells: usize,
}

impl Default for ComparisonOptions {
    fn default() -> Self {
        Self {
            resolutions: DEFAULT_RESOLUTIONS.to_vec(),
            fit: FitConfig::default(),
            truth_cells: TRUTH_CELLS,
        }
    }
}

/// Fits a spectral map and builds a grid map with `n × n` parameters each,
/// for every requested `n`, and scores both against `truth` and by their
/// log-likelihood of `scans`.
pub fn run_map_comparison(scans: &ScanSet, extent: Extent, truth: &Truth, options: &ComparisonOptions) -> Result<EvalReport> {
    compare_maps(scans, extent, truth, options).map(|(report, _)| report)
}

/// The two maps built at one resolution.
#[derive(Debug, Clone)]
pub struct ComparedMaps {
    pub spectral: SpectralMap,
    pub grid: GridDecayMap,
}

/// [`run_map_comparison`], also returning the maps.
pub fn compare_maps(
    scans: &ScanSet,
    extent: Extent,
    truth: &Truth,
    options: &ComparisonOptions,
) -> Result<(EvalReport, Vec<ComparedMaps>)> {
    let cells = truth.raster.rows;
    let mut records = Vec::with_capacity(options.resolutions.len());
    let mut maps = Vec::with_capacity(options.resolutions.len());
    for &n in &options.resolutions {
        let config = FitConfig {
            rows: n,
            cols: n,
            ..options.fit.clone()
        };
        let start = Instant::now();
        let (map, report) = fit(scans, extent, &config)?;
        let fit_time_s = start.elapsed().as_secs_f64();

        let start = Instant::now();
        let grid = build_grid(scans, GridGeometry::covering(extent, n, n)?);
        let grid_time_s = start.elapsed().as_secs_f64();

        let field = SpectralField::new(&map);
        let dct_raster = rasterize(&field, Region::of_extent(extent), cells, truth.raster.cols)?;
        let grid_raster = rasterize_grid(&grid, cells, truth.raster.cols)?;
        let record = EvalRecord {
            rows: n,
            cols: n,
            edge_len: extent.x / n as f64,
            rmse_dct: rmse_pref(&dct_raster, &truth.raster, &truth.mask)?,
            rmse_grid: rmse_pref(&grid_raster, &truth.raster, &truth.mask)?,
            loglik_dct: scan_log_likelihood(&map, scans)?,
            loglik_grid: grid_scan_log_likelihood(&grid, scans)?,
            fit_time_s,
            grid_time_s,
            fit_iterations: report.iterations,
            fit_converged: report.converged,
            loglik_gpom: None,
            loglik_hilbert: None,
        };
        info!(
            "{n}x{n}: rmse dct {:.4} grid {:.4}, loglik dct {:.2} grid {:.2}",
            record.rmse_dct, record.rmse_grid, record.loglik_dct, record.loglik_grid
        );
        records.push(record);
        maps.push(ComparedMaps { spectral: map, grid });
    }
    Ok((EvalReport { records }, maps))
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some(Summary { mean, std: var.sqrt() })
}

/// Parameters of a synthetic scene: a random smooth spectral truth field,
/// scanned from random poses with full-circle beam fans.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub extent: Extent,
    pub truth_size: usize,
    /// Mean coefficient.
    pub base: f64,
    /// Standard deviation of the other coefficients.
    pub spread: f64,
    pub poses: usize,
    pub beams_per_pose: usize,
    /// Poses keep at least this distance from the border.
    pub margin: f64,
    pub limits: SensorLimits,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            extent: Extent { x: 10.0, y: 10.0 },
            truth_size: 5,
            base: 0.6,
            spread: 0.3,
            poses: 10,
            beams_per_pose: 50,
            margin: 1.0,
            limits: SensorLimits::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub truth: SpectralMap,
    pub scans: ScanSet,
}

/// Beam fans from `poses` random positions, with a random phase per fan.
pub fn random_beams(rng: &mut ChaCha8Rng, extent: Extent, poses: usize, beams_per_pose: usize, margin: f64) -> Result<Vec<Ray2>> {
    let mut beams = Vec::with_capacity(poses * beams_per_pose);
    let tau = std::f64::consts::TAU;
    for _ in 0..poses {
        let o = Point2::new(
            rng.random_range(margin..extent.x - margin),
            rng.random_range(margin..extent.y - margin),
        );
        let phase = rng.random_range(0.0..tau);
        for k in 0..beams_per_pose {
            beams.push(Ray2::from_angle(o, phase + tau * k as f64 / beams_per_pose as f64)?);
        }
    }
    Ok(beams)
}

pub fn synthetic_scene(seed: u64, config: &SceneConfig) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.truth_size;
    let normal = Normal::new(0.0, config.spread).map_err(|e| Error::invalid(e.to_string()))?;
    let mut coeffs: Vec<f64> = (0..n * n).map(|_| normal.sample(&mut rng)).collect();
    coeffs[0] = config.base;
    let truth = SpectralMap::new(n, n, coeffs, config.extent)?;
    let beams = random_beams(&mut rng, config.extent, config.poses, config.beams_per_pose, config.margin)?;
    let mut scans = simulate_scan(&SpectralField::new(&truth), &beams, config.limits, rng.random())?;
    scans.extent = Some(config.extent);
    scans.validate()?;
    Ok(Scene { truth, scans })
}

/// Default fit settings for comparisons.
pub fn comparison_fit_config() -> FitConfig {
    FitConfig {
        init: FitInit::FromGridDct,
        ..FitConfig::default()
    }
}

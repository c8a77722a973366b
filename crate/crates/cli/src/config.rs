//! Run configuration: command-line flags over a TOML file over built-in
//! defaults.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use dctmap::data::{PatchSpec, DEFAULT_PATCH_EDGE};
use dctmap::fit::{FitConfig, FitInit, HessianMode};
use dctmap::{Point2, SensorLimits};
use serde::Deserialize;

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub threads: Option<usize>,
    #[serde(default)]
    pub limits: LimitArgs,
    #[serde(default)]
    pub fit: FitArgs,
    #[serde(default)]
    pub patch: PatchArgs,
    #[serde(default)]
    pub eval: EvalArgs,
    #[serde(default)]
    pub simulate: BeamArgs,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitArgs {
    /// Minimum valid range in meters [default: 0.04]
    #[arg(long)]
    pub r_min: Option<f64>,
    /// Maximum valid range in meters [default: 80]
    #[arg(long)]
    pub r_max: Option<f64>,
}

impl LimitArgs {
    pub fn resolve(&self, file: &LimitArgs) -> Result<SensorLimits> {
        let d = SensorLimits::default();
        Ok(SensorLimits::new(
            self.r_min.or(file.r_min).unwrap_or(d.r_min),
            self.r_max.or(file.r_max).unwrap_or(d.r_max),
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// Cosine transform of a coarse grid map
    Grid,
    /// Constant plus Gaussian noise
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Newton,
    Gradient,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitArgs {
    /// Coefficient rows L [default: 10]
    #[arg(long)]
    pub rows: Option<usize>,
    /// Coefficient columns M [default: 10]
    #[arg(long)]
    pub cols: Option<usize>,
    /// Iteration cap [default: 200]
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Relative log-likelihood change that counts as converged [default: 1e-3]
    #[arg(long)]
    pub rel_tol: Option<f64>,
    /// Initial map [default: grid]
    #[arg(long, value_enum)]
    pub init: Option<InitKind>,
    /// Noise scale for `--init noise` [default: 0.1]
    #[arg(long)]
    pub noise_scale: Option<f64>,
    /// Seed for `--init noise` [default: 0]
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// Optimizer [default: newton]
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerKind>,
}

impl FitArgs {
    pub fn resolve(&self, file: &FitArgs) -> Result<FitConfig> {
        let d = FitConfig::default();
        let init = match self.init.or(file.init).unwrap_or(InitKind::Grid) {
            InitKind::Grid => FitInit::FromGridDct,
            InitKind::Noise => FitInit::ConstantPlusNoise {
                scale: self.noise_scale.or(file.noise_scale).unwrap_or(0.1),
                seed: self.init_seed.or(file.init_seed).unwrap_or(0),
            },
        };
        let hessian_mode = match self.optimizer.or(file.optimizer).unwrap_or(OptimizerKind::Newton) {
            OptimizerKind::Newton => HessianMode::Newton,
            OptimizerKind::Gradient => HessianMode::GradientOnly,
        };
        let config = FitConfig {
            rows: self.rows.or(file.rows).unwrap_or(d.rows),
            cols: self.cols.or(file.cols).unwrap_or(d.cols),
            max_iters: self.max_iters.or(file.max_iters).unwrap_or(d.max_iters),
            rel_tol: self.rel_tol.or(file.rel_tol).unwrap_or(d.rel_tol),
            init,
            hessian_mode,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchArgs {
    /// Patch corner x in world coordinates [default: densest window]
    #[arg(long)]
    pub patch_x: Option<f64>,
    /// Patch corner y in world coordinates [default: densest window]
    #[arg(long)]
    pub patch_y: Option<f64>,
    /// Patch edge length in meters [default: 10]
    #[arg(long)]
    pub patch_size: Option<f64>,
    /// Maximum number of rays kept in the patch
    #[arg(long)]
    pub max_rays: Option<usize>,
}

/// A resolved patch: either a fixed corner or "find the densest window".
#[derive(Debug, Clone, Copy)]
pub struct PatchChoice {
    pub corner: Option<Point2>,
    pub size: f64,
    pub max_rays: usize,
}

impl PatchArgs {
    pub fn resolve(&self, file: &PatchArgs, default_rays: usize) -> Result<PatchChoice> {
        let x = self.patch_x.or(file.patch_x);
        let y = self.patch_y.or(file.patch_y);
        let corner = match (x, y) {
            (Some(x), Some(y)) => Some(Point2::new(x, y)),
            (None, None) => None,
            _ => bail!("patch corner needs both x and y"),
        };
        let size = self.patch_size.or(file.patch_size).unwrap_or(DEFAULT_PATCH_EDGE);
        let max_rays = self.max_rays.or(file.max_rays).unwrap_or(default_rays);
        if let Some(c) = corner {
            PatchSpec::new(c, size, size, max_rays)?;
        }
        Ok(PatchChoice { corner, size, max_rays })
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    /// Comma-separated map sizes n (n × n coefficients vs n × n cells)
    /// [default: 10,13,20,29,40]
    #[arg(long, value_delimiter = ',')]
    pub resolutions: Option<Vec<usize>>,
    /// Truth raster cells per side [default: 200]
    #[arg(long)]
    pub truth_cells: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamArgs {
    /// Number of sensor poses [default: 10]
    #[arg(long)]
    pub poses: Option<usize>,
    /// Beams per pose, evenly spread over the full circle [default: 50]
    #[arg(long)]
    pub beams_per_pose: Option<usize>,
    /// Minimum distance of poses from the map border [default: 1]
    #[arg(long)]
    pub margin: Option<f64>,
}

/// Worker count: flag, then `DCTMAP_THREADS`, then the config file.
pub fn resolve_threads(flag: Option<usize>, file: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    if let Ok(v) = std::env::var("DCTMAP_THREADS") {
        let n = v
            .trim()
            .parse()
            .with_context(|| format!("DCTMAP_THREADS must be a positive integer, got `{v}`"))?;
        return Ok(Some(n));
    }
    Ok(file)
}

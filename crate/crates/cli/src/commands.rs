//! Subcommand implementations. Each returns the process exit status.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use dctmap::data::{
    extract_patch, parse_carmen, read_scan_set, scans_to_rays, simulate_scan, write_scan_set, PatchSpec, EVAL_MAX_RAYS,
    FIT_MAX_RAYS,
};
use dctmap::derivatives::{fd_check, FdOrder};
use dctmap::eval::{
    compare_maps, random_beams, rasterize, rasterize_grid, rasterize_spectral, render_pgm, ComparisonOptions, Raster,
    Region, Truth, TRUTH_CELLS,
};
use dctmap::field::SpectralField;
use dctmap::fit::fit;
use dctmap::grid::{build_grid, CellValue, GridDecayMap, GridGeometry, ObservedRule};
use dctmap::{DecayField, Extent, Point2, ScanSet, SpectralMap};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{BeamArgs, EvalArgs, FileConfig, FitArgs, LimitArgs, PatchArgs, PatchChoice};

/// Exit status when a fit stops at its iteration cap or a check fails.
pub const EXIT_NOT_CONVERGED: u8 = 2;

/// Lattice spacing of candidate corners when searching the densest patch.
const PATCH_SEARCH_STEP: f64 = 0.5;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write_bytes(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

/// Reads a scan-set file, or a CARMEN log when the file does not start with
/// a `scanset` header. `limits` only applies to logs.
fn load_scans(path: &Path, limits: &LimitArgs, file: &LimitArgs) -> Result<ScanSet> {
    let text = read_text(path)?;
    let is_scanset = text.split_whitespace().next() == Some("scanset");
    let scans = if is_scanset {
        read_scan_set(&text)?
    } else {
        let raw = parse_carmen(text.as_bytes())?;
        scans_to_rays(&raw, limits.resolve(file)?)?
    };
    anyhow::ensure!(!scans.is_empty(), "no rays in {}", path.display());
    Ok(scans)
}

fn load_scans_ctx(path: &Path, limits: &LimitArgs, file: &LimitArgs) -> Result<ScanSet> {
    load_scans(path, limits, file).with_context(|| format!("in {}", path.display()))
}

/// Cuts the working patch out of `scans`. A scan set that already has an
/// extent is used whole unless a corner is given.
fn select_patch(scans: &ScanSet, choice: PatchChoice) -> Result<(ScanSet, Extent)> {
    let spec = match (choice.corner, scans.extent) {
        (Some(corner), _) => PatchSpec::new(corner, choice.size, choice.size, choice.max_rays)?,
        (None, Some(extent)) => {
            let mut set = scans.clone();
            set.rays.truncate(choice.max_rays);
            return Ok((set, extent));
        }
        (None, None) => PatchSpec::densest(scans, choice.size, choice.size, choice.max_rays, PATCH_SEARCH_STEP)?,
    };
    info!("patch corner ({}, {}), edge {}", spec.corner.x, spec.corner.y, spec.width);
    let set = extract_patch(scans, &spec)?;
    anyhow::ensure!(!set.is_empty(), "patch contains no rays");
    Ok((set, spec.extent()))
}

enum MapFile {
    Spectral(SpectralMap),
    Grid(GridDecayMap),
}

/// Spectral maps have a four-field header, grid maps a five-field one.
fn load_map(path: &Path) -> Result<MapFile> {
    let text = read_text(path)?;
    let fields = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .map_or(0, |l| l.split_whitespace().count());
    let map = if fields == 5 {
        MapFile::Grid(GridDecayMap::from_text(&text)?)
    } else {
        MapFile::Spectral(SpectralMap::from_text(&text)?)
    };
    Ok(map)
}

fn load_map_ctx(path: &Path) -> Result<MapFile> {
    load_map(path).with_context(|| format!("in {}", path.display()))
}

#[derive(Debug, Args)]
pub struct BuildDct {
    /// Scan-set file or CARMEN log
    #[arg(long)]
    input: PathBuf,
    /// Where to write the coefficient matrix
    #[arg(long)]
    out: PathBuf,
    /// Where to write the fit report as JSON
    #[arg(long)]
    report: Option<PathBuf>,
    /// Where to write the patch scans that were fitted
    #[arg(long)]
    scans_out: Option<PathBuf>,
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    patch: PatchArgs,
    #[command(flatten)]
    limits: LimitArgs,
}

impl BuildDct {
    pub fn run(self, file: &FileConfig) -> Result<u8> {
        let config = self.fit.resolve(&file.fit)?;
        let scans = load_scans_ctx(&self.input, &self.limits, &file.limits)?;
        let (scans, extent) = select_patch(&scans, self.patch.resolve(&file.patch, FIT_MAX_RAYS)?)?;
        if let Some(path) = &self.scans_out {
            write_bytes(path, write_scan_set(&scans))?;
        }
        let (map, report) = fit(&scans, extent, &config)?;
        write_bytes(&self.out, map.to_text())?;
        if let Some(path) = &self.report {
            write_bytes(path, serde_json::to_string_pretty(&report)? + "\n")?;
        }
        println!(
            "build-dct {}x{}: {} rays, loglik {:.6} after {} iterations, {} -> {}",
            config.rows,
            config.cols,
            scans.len(),
            report.final_loglik,
            report.iterations,
            if report.converged { "converged" } else { "not converged" },
            self.out.display()
        );
        Ok(if report.converged { 0 } else { EXIT_NOT_CONVERGED })
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ObservedKind {
    /// Crossed by at least one ray
    Traversed,
    /// Holding at least one return
    Hit,
}

#[derive(Debug, Args)]
pub struct BuildGrid {
    /// Scan-set file or CARMEN log
    #[arg(long)]
    input: PathBuf,
    /// Where to write the grid map
    #[arg(long)]
    out: PathBuf,
    /// Cells per side
    #[arg(long, default_value_t = 10)]
    cells: usize,
    /// Which cells get a decay value
    #[arg(long, value_enum, default_value_t = ObservedKind::Traversed)]
    observed: ObservedKind,
    #[command(flatten)]
    patch: PatchArgs,
    #[command(flatten)]
    limits: LimitArgs,
}

impl BuildGrid {
    pub fn run(self, file: &FileConfig) -> Result<u8> {
        let scans = load_scans_ctx(&self.input, &self.limits, &file.limits)?;
        let (scans, extent) = select_patch(&scans, self.patch.resolve(&file.patch, FIT_MAX_RAYS)?)?;
        let mut grid = build_grid(&scans, GridGeometry::covering(extent, self.cells, self.cells)?);
        if let ObservedKind::Hit = self.observed {
            grid.apply_rule(ObservedRule::Hit);
        }
        write_bytes(&self.out, grid.to_text())?;
        let observed = grid.observed_mask().iter().filter(|o| **o).count();
        println!(
            "build-grid {0}x{0}: {1} rays, {2} of {3} cells observed -> {4}",
            self.cells,
            scans.len(),
            observed,
            self.cells * self.cells,
            self.out.display()
        );
        Ok(0)
    }
}

#[derive(Debug, Args)]
pub struct Simulate {
    /// Spectral or grid map to sample from
    #[arg(long)]
    map: PathBuf,
    /// Seed for sensor poses and measurements
    #[arg(long)]
    seed: u64,
    /// Where to write the scan set
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    beams: BeamArgs,
    #[command(flatten)]
    limits: LimitArgs,
}

impl Simulate {
    pub fn run(self, file: &FileConfig) -> Result<u8> {
        let limits = self.limits.resolve(&file.limits)?;
        let map = load_map_ctx(&self.map)?;
        let poses = self.beams.poses.or(file.simulate.poses).unwrap_or(10);
        let per_pose = self.beams.beams_per_pose.or(file.simulate.beams_per_pose).unwrap_or(50);
        let margin = self.beams.margin.or(file.simulate.margin).unwrap_or(1.0);

        let (origin, extent) = match &map {
            MapFile::Spectral(m) => (Point2::new(0.0, 0.0), m.extent()),
            MapFile::Grid(g) => {
                let geo = g.geometry();
                (geo.origin, Extent::new(geo.width(), geo.height())?)
            }
        };
        anyhow::ensure!(
            2.0 * margin < extent.x.min(extent.y),
            "margin {margin} leaves no room for poses"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let beams: Vec<_> = random_beams(&mut rng, extent, poses, per_pose, margin)?
            .into_iter()
            .map(|b| {
                let o = b.origin();
                dctmap::Ray2::new(Point2::new(o.x + origin.x, o.y + origin.y), b.direction())
            })
            .collect::<dctmap::Result<_>>()?;
        let field: Box<dyn DecayField + '_> = match &map {
            MapFile::Spectral(m) => Box::new(SpectralField::new(m)),
            MapFile::Grid(g) => Box::new(g.clone()),
        };
        let mut scans = simulate_scan(field.as_ref(), &beams, limits, rng.random())?;
        if origin == Point2::new(0.0, 0.0) {
            scans.extent = Some(extent);
            scans.validate()?;
        }
        write_bytes(&self.out, write_scan_set(&scans))?;
        let returns = scans
            .rays
            .iter()
            .filter(|z| matches!(z.outcome, dctmap::RayOutcome::Return(_)))
            .count();
        println!(
            "simulate: {} rays ({} returns) from {} poses, seed {} -> {}",
            scans.len(),
            returns,
            poses,
            self.seed,
            self.out.display()
        );
        Ok(0)
    }
}

#[derive(Debug, Args)]
pub struct Eval {
    /// Scan-set file or CARMEN log
    #[arg(long)]
    input: PathBuf,
    /// Reference map; defaults to a fine grid built from the same scans
    #[arg(long)]
    truth_map: Option<PathBuf>,
    /// Where to write one JSON record per resolution
    #[arg(long)]
    report: PathBuf,
    /// Where to write the summary table
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Directory for PGM renderings of every map
    #[arg(long)]
    images: Option<PathBuf>,
    #[command(flatten)]
    eval: EvalArgs,
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    patch: PatchArgs,
    #[command(flatten)]
    limits: LimitArgs,
}

/// A grid truth sampled at `cells × cells` midpoints of its own footprint.
fn grid_truth(grid: &GridDecayMap, cells: usize) -> Result<Truth> {
    let raster = rasterize_grid(grid, cells, cells)?;
    let region = Region::of_grid(grid.geometry());
    let mask = (0..cells * cells)
        .map(|k| {
            let p = region.midpoint(cells, cells, k / cells, k % cells);
            Ok(matches!(grid.sample(p)?, CellValue::Observed(_)))
        })
        .collect::<Result<_>>()?;
    Ok(Truth { raster, mask })
}

impl Eval {
    pub fn run(self, file: &FileConfig) -> Result<u8> {
        let fit = self.fit.resolve(&file.fit)?;
        let resolutions = self
            .eval
            .resolutions
            .or_else(|| file.eval.resolutions.clone())
            .unwrap_or_else(|| ComparisonOptions::default().resolutions);
        let truth_cells = self.eval.truth_cells.or(file.eval.truth_cells).unwrap_or(TRUTH_CELLS);
        anyhow::ensure!(!resolutions.is_empty(), "no resolutions given");

        let scans = load_scans_ctx(&self.input, &self.limits, &file.limits)?;
        let (scans, extent) = select_patch(&scans, self.patch.resolve(&file.patch, EVAL_MAX_RAYS)?)?;
        let truth = match &self.truth_map {
            None => Truth::from_grid_scans(&scans, extent, truth_cells)?,
            Some(path) => match load_map_ctx(path)? {
                MapFile::Spectral(m) => Truth::from_field(&m, &scans, truth_cells)?,
                MapFile::Grid(g) => grid_truth(&g, truth_cells)?,
            },
        };
        let options = ComparisonOptions { resolutions, fit, truth_cells };
        let (report, maps) = compare_maps(&scans, extent, &truth, &options)?;

        write_bytes(&self.report, report.to_json_lines())?;
        if let Some(path) = &self.csv {
            write_bytes(path, report.to_csv())?;
        }
        if let Some(dir) = &self.images {
            fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
            write_bytes(&dir.join("truth.pgm"), render_pgm(&truth.raster))?;
            for (record, m) in report.records.iter().zip(&maps) {
                let n = record.rows;
                let dct = rasterize(&SpectralField::new(&m.spectral), Region::of_extent(extent), truth_cells, truth_cells)?;
                write_bytes(&dir.join(format!("dct_{n}.pgm")), render_pgm(&dct))?;
                let grid = rasterize_grid(&m.grid, truth_cells, truth_cells)?;
                write_bytes(&dir.join(format!("grid_{n}.pgm")), render_pgm(&grid))?;
            }
        }
        let total = report.records.len();
        let rmse_wins = report.records.iter().filter(|r| r.rmse_dct < r.rmse_grid).count();
        let ll_wins = report.records.iter().filter(|r| r.loglik_dct > r.loglik_grid).count();
        println!(
            "eval: {} rays, {total} resolutions, spectral better on rmse {rmse_wins}/{total}, on loglik {ll_wins}/{total} -> {}",
            scans.len(),
            self.report.display()
        );
        Ok(0)
    }
}

#[derive(Debug, Args)]
pub struct Render {
    /// Spectral or grid map
    #[arg(long)]
    map: PathBuf,
    /// Where to write the PGM image
    #[arg(long)]
    out: PathBuf,
    /// Pixels per side
    #[arg(long, default_value_t = TRUTH_CELLS)]
    size: usize,
}

impl Render {
    pub fn run(self) -> Result<u8> {
        let raster: Raster = match load_map_ctx(&self.map)? {
            MapFile::Spectral(m) => rasterize_spectral(&m, self.size, self.size)?,
            MapFile::Grid(g) => rasterize_grid(&g, self.size, self.size)?,
        };
        write_bytes(&self.out, render_pgm(&raster))?;
        println!("render: {0}x{0} pixels -> {1}", self.size, self.out.display());
        Ok(0)
    }
}

#[derive(Debug, Args)]
pub struct CheckGrads {
    /// Spectral map to differentiate at
    #[arg(long)]
    map: PathBuf,
    /// Scan-set file
    #[arg(long)]
    scans: PathBuf,
    /// 1 for the gradient, 2 for the Hessian
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    order: u8,
    /// Relative finite-difference step [default: 1e-6 for order 1, 1e-4 for order 2]
    #[arg(long)]
    step: Option<f64>,
    /// Largest acceptable relative error [default: 1e-5 for order 1, 1e-4 for order 2]
    #[arg(long)]
    tolerance: Option<f64>,
}

impl CheckGrads {
    pub fn run(self) -> Result<u8> {
        let MapFile::Spectral(map) = load_map_ctx(&self.map)? else {
            anyhow::bail!("{} is a grid map; check-grads needs a spectral map", self.map.display());
        };
        let text = read_text(&self.scans)?;
        let scans = read_scan_set(&text).with_context(|| format!("in {}", self.scans.display()))?;
        let order = FdOrder::from_order(self.order)?;
        let step = self.step.unwrap_or_else(|| order.default_step());
        let tolerance = self.tolerance.unwrap_or(match order {
            FdOrder::Gradient => 1e-5,
            FdOrder::Hessian => 1e-4,
        });
        let report = fd_check(&map, &scans, step, order)?;
        let pass = report.max_rel_error < tolerance;
        println!(
            "{}",
            serde_json::json!({
                "order": report.order,
                "step": report.step,
                "max_rel_error": report.max_rel_error,
                "index": report.index,
                "second_index": report.second_index,
                "analytic": report.analytic,
                "numeric": report.numeric,
                "tolerance": tolerance,
                "pass": pass,
            })
        );
        Ok(if pass { 0 } else { EXIT_NOT_CONVERGED })
    }
}

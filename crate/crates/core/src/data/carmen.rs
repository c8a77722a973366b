//! Carmen log reader. Only laser records are kept: `FLASER` (front laser,
//! old style) and `ROBOTLASER1`. `PARAM` lines may change the front laser's
//! field of view or angular resolution (in degrees) for the records that
//! follow them; every other line is ignored.

use std::f64::consts::PI;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{LidarRay, RayOutcome, ScanSet, SensorLimits};
use crate::spectral::{parse_f64, Point2, Ray2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl RobotPose {
    pub fn new(x: f64, y: f64, heading: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && heading.is_finite()) {
            return Err(Error::invalid(format!("non-finite pose ({x}, {y}, {heading})")));
        }
        Ok(Self { x, y, heading })
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// One laser scan as recorded. Beam `k` points at
/// `pose.heading + start_angle + k·increment`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawScan {
    pub pose: RobotPose,
    pub odometry: RobotPose,
    pub ranges: Vec<f64>,
    pub start_angle: f64,
    pub increment: f64,
    pub timestamp: f64,
    pub host: String,
    pub logger_timestamp: f64,
}

impl RawScan {
    pub fn beam_angle(&self, k: usize) -> f64 {
        self.pose.heading + self.start_angle + k as f64 * self.increment
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct LaserParams {
    fov_deg: Option<f64>,
    resolution_deg: Option<f64>,
}

impl LaserParams {
    /// Start angle and increment for `n` beams.
    fn angles(&self, n: usize) -> (f64, f64) {
        let span = n.saturating_sub(1) as f64;
        let inc = match (self.fov_deg, self.resolution_deg) {
            (Some(fov), _) if n > 1 => fov.to_radians() / span,
            (None, Some(res)) => res.to_radians(),
            _ if n > 1 => PI / span,
            _ => 0.0,
        };
        (-0.5 * inc * span, inc)
    }
}

struct Tokens<'a> {
    items: Vec<&'a str>,
    line: usize,
}

impl<'a> Tokens<'a> {
    fn f64(&self, k: usize) -> Result<f64> {
        let t = self.items.get(k).ok_or_else(|| self.truncated())?;
        let v = parse_f64(t, self.line)?;
        if !v.is_finite() {
            return Err(Error::parse(self.line, format!("`{t}` is not finite")));
        }
        Ok(v)
    }

    fn count(&self, k: usize) -> Result<usize> {
        let t = self.items.get(k).ok_or_else(|| self.truncated())?;
        t.parse()
            .map_err(|_| Error::parse(self.line, format!("`{t}` is not a reading count")))
    }

    fn pose(&self, k: usize) -> Result<RobotPose> {
        RobotPose::new(self.f64(k)?, self.f64(k + 1)?, self.f64(k + 2)?)
            .map_err(|e| Error::parse(self.line, e.to_string()))
    }

    fn ranges(&self, k: usize, n: usize) -> Result<Vec<f64>> {
        (k..k + n)
            .map(|i| {
                let r = self.f64(i)?;
                if r < 0.0 {
                    return Err(Error::parse(self.line, format!("negative range {r}")));
                }
                Ok(r)
            })
            .collect()
    }

    fn truncated(&self) -> Error {
        Error::parse(
            self.line,
            format!("{} record is truncated ({} tokens)", self.items[0], self.items.len()),
        )
    }
}

fn parse_flaser(t: &Tokens, params: LaserParams) -> Result<RawScan> {
    let n = t.count(1)?;
    let tail = 2 + n;
    // x y θ, odometry x y θ, timestamp; host and logger timestamp are optional.
    let needed = tail + 7;
    if t.items.len() < needed || t.items.len() > needed + 2 {
        return Err(Error::parse(
            t.line,
            format!(
                "FLASER with {n} readings needs {needed} to {} tokens, found {}",
                needed + 2,
                t.items.len()
            ),
        ));
    }
    let (start_angle, increment) = params.angles(n);
    Ok(RawScan {
        ranges: t.ranges(2, n)?,
        pose: t.pose(tail)?,
        odometry: t.pose(tail + 3)?,
        start_angle,
        increment,
        timestamp: t.f64(tail + 6)?,
        host: t.items.get(tail + 7).unwrap_or(&"").to_string(),
        logger_timestamp: if t.items.len() > tail + 8 { t.f64(tail + 8)? } else { 0.0 },
    })
}

fn parse_robotlaser(t: &Tokens) -> Result<RawScan> {
    let start_angle = t.f64(2)?;
    let increment = t.f64(4)?;
    let n = t.count(8)?;
    let ranges = t.ranges(9, n)?;
    let k = t.count(9 + n)?;
    let base = 10 + n + k;
    // laser pose, robot pose, 5 velocity/safety fields, timestamp, host, logger timestamp
    let expected = base + 14;
    if t.items.len() != expected {
        return Err(Error::parse(
            t.line,
            format!("ROBOTLASER1 needs {expected} tokens, found {}", t.items.len()),
        ));
    }
    Ok(RawScan {
        pose: t.pose(base)?,
        odometry: t.pose(base + 3)?,
        ranges,
        start_angle,
        increment,
        timestamp: t.f64(base + 11)?,
        host: t.items[base + 12].to_string(),
        logger_timestamp: t.f64(base + 13)?,
    })
}

fn apply_param(params: &mut LaserParams, t: &Tokens) -> Result<()> {
    let (Some(name), Some(_)) = (t.items.get(1), t.items.get(2)) else {
        return Ok(());
    };
    if name.contains("rear") {
        return Ok(());
    }
    if name.ends_with("laser_fov") {
        params.fov_deg = Some(t.f64(2)?);
    } else if name.ends_with("laser_resolution") {
        params.resolution_deg = Some(t.f64(2)?);
    }
    Ok(())
}

/// Reads all laser scans from a Carmen log, in log order.
pub fn parse_carmen<R: BufRead>(reader: R) -> Result<Vec<RawScan>> {
    let mut params = LaserParams::default();
    let mut scans = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(k + 1, e.to_string()))?;
        let items: Vec<&str> = line.split_whitespace().collect();
        let Some(&kind) = items.first() else { continue };
        let t = Tokens { items, line: k + 1 };
        match kind {
            "FLASER" => scans.push(parse_flaser(&t, params)?),
            "ROBOTLASER1" => scans.push(parse_robotlaser(&t)?),
            "PARAM" => apply_param(&mut params, &t)?,
            _ => {}
        }
    }
    Ok(scans)
}

/// Formats a scan as a `FLASER` line (without newline).
pub fn write_flaser(scan: &RawScan) -> String {
    let mut fields = vec!["FLASER".to_string(), scan.ranges.len().to_string()];
    fields.extend(scan.ranges.iter().map(f64::to_string));
    for p in [scan.pose, scan.odometry] {
        fields.extend([p.x, p.y, p.heading].iter().map(f64::to_string));
    }
    fields.push(scan.timestamp.to_string());
    fields.push(if scan.host.is_empty() { "-".into() } else { scan.host.clone() });
    fields.push(scan.logger_timestamp.to_string());
    fields.join(" ")
}

/// Turns every beam into a ray from the scan pose, classifying ranges at or
/// beyond `r_max` as super and ranges at or below `r_min` as sub.
pub fn scans_to_rays(raw: &[RawScan], limits: SensorLimits) -> Result<ScanSet> {
    let mut set = ScanSet::new(limits, None);
    for scan in raw {
        for (k, &r) in scan.ranges.iter().enumerate() {
            let ray = Ray2::from_angle(scan.pose.position(), scan.beam_angle(k))?;
            let outcome = if r >= limits.r_max {
                RayOutcome::Super
            } else if r <= limits.r_min {
                RayOutcome::Sub
            } else {
                RayOutcome::Return(r)
            };
            set.push(LidarRay::new(ray, outcome));
        }
    }
    Ok(set)
}

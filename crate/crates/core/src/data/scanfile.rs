//! Line-oriented scan-set files.
//!
//! ```text
//! scanset <r_min> <r_max> <X> <Y>        (or `scanset <r_min> <r_max> none`)
//! S <x> <y> <vx> <vy>
//! R <x> <y> <vx> <vy> <r>
//! P <x> <y> <vx> <vy>
//! ```
//!
//! `S`, `R` and `P` mark sub, return and super rays. Numbers are written in
//! shortest round-trip form, so reading a written file gives back the same
//! bits.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::forward::{LidarRay, RayOutcome, ScanSet, SensorLimits};
use crate::spectral::{parse_f64, Extent, Point2, Ray2};

pub fn write_scan_set(scans: &ScanSet) -> String {
    let mut out = format!("scanset {} {}", scans.limits.r_min, scans.limits.r_max);
    match scans.extent {
        Some(e) => {
            let _ = writeln!(out, " {} {}", e.x, e.y);
        }
        None => out.push_str(" none\n"),
    }
    for z in &scans.rays {
        let o = z.ray.origin();
        let [vx, vy] = z.ray.direction();
        let tag = match z.outcome {
            RayOutcome::Sub => 'S',
            RayOutcome::Return(_) => 'R',
            RayOutcome::Super => 'P',
        };
        let _ = write!(out, "{tag} {} {} {vx} {vy}", o.x, o.y);
        if let RayOutcome::Return(r) = z.outcome {
            let _ = write!(out, " {r}");
        }
        out.push('\n');
    }
    out
}

pub fn read_scan_set(text: &str) -> Result<ScanSet> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.split_whitespace().collect::<Vec<_>>()))
        .filter(|(_, t)| !t.is_empty());
    let (hline, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "missing `scanset` header"))?;
    let bad_header = || Error::parse(hline, "header must be `scanset r_min r_max X Y` or `scanset r_min r_max none`");
    if header[0] != "scanset" {
        return Err(bad_header());
    }
    let limits = match header.len() {
        4 | 5 => SensorLimits::new(parse_f64(header[1], hline)?, parse_f64(header[2], hline)?)
            .map_err(|e| Error::parse(hline, e.to_string()))?,
        _ => return Err(bad_header()),
    };
    let extent = match header[3..] {
        ["none"] => None,
        [x, y] => Some(
            Extent::new(parse_f64(x, hline)?, parse_f64(y, hline)?)
                .map_err(|e| Error::parse(hline, e.to_string()))?,
        ),
        _ => return Err(bad_header()),
    };
    let mut rays = Vec::new();
    for (n, t) in lines {
        let expected = if t[0] == "R" { 6 } else { 5 };
        if !matches!(t[0], "S" | "R" | "P") {
            return Err(Error::parse(n, format!("unknown ray tag `{}`", t[0])));
        }
        if t.len() != expected {
            return Err(Error::parse(n, format!("expected {expected} fields, found {}", t.len())));
        }
        let v: Vec<f64> = t[1..].iter().map(|s| parse_f64(s, n)).collect::<Result<_>>()?;
        let ray = Ray2::new(Point2::new(v[0], v[1]), [v[2], v[3]]).map_err(|e| Error::parse(n, e.to_string()))?;
        let outcome = match t[0] {
            "S" => RayOutcome::Sub,
            "P" => RayOutcome::Super,
            _ => RayOutcome::Return(v[4]),
        };
        rays.push(LidarRay::new(ray, outcome));
    }
    let set = ScanSet { rays, limits, extent };
    set.validate().map_err(|e| Error::parse(hline, e.to_string()))?;
    Ok(set)
}

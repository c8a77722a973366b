//! Getting measurements in and out: Carmen logs, patch extraction, the
//! scan-set text format and the scan simulator.

mod carmen;
mod patch;
mod scanfile;
mod simulate;

pub use carmen::{parse_carmen, scans_to_rays, write_flaser, RawScan, RobotPose};
pub use patch::{extract_patch, PatchSpec, DEFAULT_PATCH_EDGE, EVAL_MAX_RAYS, FIT_MAX_RAYS};
pub use scanfile::{read_scan_set, write_scan_set};
pub use simulate::{simulate_detailed, simulate_scan, SimulatedRay};

//! `dockport eval`: accuracy report from estimates and ground truth.

use std::path::{Path, PathBuf};

use dockport::dataset::{self, poses_from_csv};
use dockport::eval::{aggregate, estimates_from_csv, match_results, MetricsReport};
use dockport::geometry::CameraIntrinsics;

use crate::error::CliError;
use crate::estimate::write_file;
use crate::manifest::RunManifest;

#[derive(Debug, Clone)]
pub struct EvalPlan {
    pub estimates: PathBuf,
    pub gt: PathBuf,
    pub camera: CameraIntrinsics,
    pub threshold_deg: f64,
    pub out: PathBuf,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Explicit camera file, else the dataset's `camera.txt` next to the ground
/// truth, else the default sensor.
pub fn resolve_camera(explicit: Option<&Path>, gt: &Path) -> Result<CameraIntrinsics, CliError> {
    if let Some(p) = explicit {
        return Ok(CameraIntrinsics::load(p)?);
    }
    let sibling = gt.parent().unwrap_or(Path::new(".")).join(dataset::CAMERA);
    if sibling.exists() {
        Ok(CameraIntrinsics::load(&sibling)?)
    } else {
        Ok(CameraIntrinsics::default())
    }
}

pub fn camera_entries(prefix: &str, k: &CameraIntrinsics) -> Vec<(String, String)> {
    k.to_kv_string()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(key, v)| (format!("{prefix}.{}", key.trim()), v.trim().to_string()))
        .collect()
}

pub fn camera_from_entries(l: &crate::manifest::Lookup<'_>, prefix: &str) -> Result<CameraIntrinsics, CliError> {
    let text: String = l
        .section(prefix)
        .iter()
        .map(|e| format!("{} = {}\n", e.key, e.value))
        .collect();
    Ok(CameraIntrinsics::from_kv_str(&text)?)
}

impl EvalPlan {
    pub fn from_manifest(m: &RunManifest, out: Option<PathBuf>) -> Result<Self, CliError> {
        let l = m.lookup();
        Ok(Self {
            estimates: l.path("input.estimates")?,
            gt: l.path("input.gt")?,
            camera: camera_from_entries(&l, "camera")?,
            threshold_deg: l.parse("option.threshold_deg")?,
            out: out.map_or_else(|| l.path("output.report"), Ok)?,
        })
    }

    pub fn manifest(&self) -> RunManifest {
        let mut e = vec![
            ("input.estimates".to_string(), self.estimates.display().to_string()),
            ("input.gt".to_string(), self.gt.display().to_string()),
            ("output.report".to_string(), self.out.display().to_string()),
            ("option.threshold_deg".to_string(), self.threshold_deg.to_string()),
        ];
        e.extend(camera_entries("camera", &self.camera));
        RunManifest::new("eval", e)
    }

    pub fn run(&self) -> Result<MetricsReport, CliError> {
        if !(self.threshold_deg > 0.0) {
            return Err(CliError::Config(format!("threshold must be > 0, got {}", self.threshold_deg)));
        }
        let est = estimates_from_csv(&read(&self.estimates)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", self.estimates.display())))?;
        let gt = poses_from_csv(&read(&self.gt)?, &self.gt.display().to_string())?;
        let results = match_results(&est, &gt, &self.camera, self.threshold_deg)?;
        let report = aggregate(&results);
        let table = report.to_table();
        print!("{table}");
        let body = if self.out.extension().is_some_and(|e| e == "csv") {
            report.to_csv()
        } else {
            table
        };
        write_file(&self.out, body.as_bytes())?;
        Ok(report)
    }
}

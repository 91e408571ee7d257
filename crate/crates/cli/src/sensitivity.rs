//! `dockport sensitivity`: inclination-sensitivity table.

use std::fmt::Write as _;
use std::path::PathBuf;

use dockport::eval::sensitivity_bound;
use dockport::geometry::CameraIntrinsics;

use crate::error::CliError;
use crate::estimate::write_file;
use crate::eval::{camera_entries, camera_from_entries};
use crate::manifest::RunManifest;

pub const CSV_HEADER: &str = "distance_m,inclination_deg,bound_deg";
pub const DEFAULT_DISTANCES: &[f64] = &[0.3, 0.6, 1.0, 1.5];
pub const DEFAULT_INCLINATIONS: &[f64] = &[0.0, 15.0, 30.0, 45.0, 60.0];

#[derive(Debug, Clone)]
pub struct SensitivityPlan {
    pub camera: CameraIntrinsics,
    pub radius: f64,
    pub distances: Vec<f64>,
    pub inclinations: Vec<f64>,
    pub pixel_noise: f64,
    pub out: PathBuf,
}

/// One cell; `None` when no admissible perturbation reaches the noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub distance: f64,
    pub inclination: f64,
    pub bound: Option<f64>,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn split(s: &str, key: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("`{x}` in `{key}` is not a number")))
        })
        .collect()
}

pub fn to_csv(cells: &[Cell]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for c in cells {
        let b = c.bound.map_or_else(|| "inf".to_string(), |b| format!("{b:.6}"));
        let _ = writeln!(s, "{},{},{b}", c.distance, c.inclination);
    }
    s
}

/// Inclinations as rows, distances as columns.
pub fn to_table(cells: &[Cell], distances: &[f64], inclinations: &[f64]) -> String {
    let mut s = format!("{:<12}", "incl [deg]");
    for d in distances {
        let _ = write!(s, "{:>12}", format!("{d} m"));
    }
    s.push('\n');
    for &i in inclinations {
        let _ = write!(s, "{i:<12}");
        for &d in distances {
            let b = cells
                .iter()
                .find(|c| c.distance == d && c.inclination == i)
                .and_then(|c| c.bound);
            let _ = write!(s, "{:>12}", b.map_or_else(|| "inf".to_string(), |b| format!("{b:.3}")));
        }
        s.push('\n');
    }
    s
}

impl SensitivityPlan {
    pub fn from_manifest(m: &RunManifest, out: Option<PathBuf>) -> Result<Self, CliError> {
        let l = m.lookup();
        Ok(Self {
            camera: camera_from_entries(&l, "camera")?,
            radius: l.parse("option.ring_radius")?,
            distances: split(l.require("option.distances")?, "option.distances")?,
            inclinations: split(l.require("option.inclinations")?, "option.inclinations")?,
            pixel_noise: l.parse("option.pixel_noise")?,
            out: out.map_or_else(|| l.path("output.csv"), Ok)?,
        })
    }

    pub fn manifest(&self) -> RunManifest {
        let mut e = vec![
            ("output.csv".to_string(), self.out.display().to_string()),
            ("option.ring_radius".to_string(), self.radius.to_string()),
            ("option.distances".to_string(), join(&self.distances)),
            ("option.inclinations".to_string(), join(&self.inclinations)),
            ("option.pixel_noise".to_string(), self.pixel_noise.to_string()),
        ];
        e.extend(camera_entries("camera", &self.camera));
        RunManifest::new("sensitivity", e)
    }

    pub fn run(&self) -> Result<Vec<Cell>, CliError> {
        if self.distances.is_empty() || self.inclinations.is_empty() {
            return Err(CliError::Config("need at least one distance and one inclination".into()));
        }
        let mut cells = Vec::new();
        for &d in &self.distances {
            for &i in &self.inclinations {
                let bound = sensitivity_bound(&self.camera, self.radius, d, i, self.pixel_noise)?;
                cells.push(Cell {
                    distance: d,
                    inclination: i,
                    bound,
                });
            }
        }
        print!("{}", to_table(&cells, &self.distances, &self.inclinations));
        write_file(&self.out, to_csv(&cells).as_bytes())?;
        Ok(cells)
    }
}

//! On-disk dataset layout shared by the generator and the estimator.
//!
//! ```text
//! <dir>/manifest.txt            key = value, every generation parameter
//! <dir>/camera.txt              intrinsics
//! <dir>/poses.csv               timestamp_us,tx,ty,tz,qw,qx,qy,qz
//! <dir>/frames/frame_NNNNN.pgm
//! <dir>/masks/ring_NNNNN.pgm
//! <dir>/masks/reflector_NNNNN.pgm
//! <dir>/events.bin              optional PORTEVT1 stream
//! ```

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use thiserror::Error;

use crate::config::{parse_kv, ConfigError, KvEntry};
use crate::geometry::{CameraIntrinsics, GeometryError, PortPose};

pub const MANIFEST: &str = "manifest.txt";
pub const CAMERA: &str = "camera.txt";
pub const POSES: &str = "poses.csv";
pub const EVENTS: &str = "events.bin";
pub const POSES_HEADER: &str = "timestamp_us,tx,ty,tz,qw,qx,qy,qz";

pub fn frame_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("frames").join(format!("frame_{i:05}.pgm"))
}

pub fn ring_mask_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("masks").join(format!("ring_{i:05}.pgm"))
}

pub fn reflector_mask_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("masks").join(format!("reflector_{i:05}.pgm"))
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {reason}")]
    Csv { path: String, line: usize, reason: String },
    #[error("{path}: {source}")]
    Config {
        path: String,
        #[source]
        source: ConfigError,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Timestamped pose row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRecord {
    pub timestamp_us: u64,
    pub pose: PortPose,
}

pub fn format_pose_fields(p: &PortPose) -> String {
    let q = p.quaternion_wxyz();
    format!(
        "{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
        p.position.x, p.position.y, p.position.z, q[0], q[1], q[2], q[3]
    )
}

pub fn poses_to_csv(rows: &[PoseRecord]) -> String {
    let mut s = String::from(POSES_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{}\n", r.timestamp_us, format_pose_fields(&r.pose)));
    }
    s
}

/// Parses seven numeric fields `tx,ty,tz,qw,qx,qy,qz`.
pub fn parse_pose_fields(f: &[&str]) -> Result<PortPose, String> {
    if f.len() != 7 {
        return Err(format!("expected 7 pose fields, got {}", f.len()));
    }
    let mut v = [0.0f64; 7];
    for (dst, s) in v.iter_mut().zip(f) {
        *dst = s.trim().parse().map_err(|_| format!("bad number `{s}`"))?;
        if !dst.is_finite() {
            return Err(format!("non-finite value `{s}`"));
        }
    }
    let qn = (v[3] * v[3] + v[4] * v[4] + v[5] * v[5] + v[6] * v[6]).sqrt();
    if !(qn > 0.5 && qn < 1.5) {
        return Err(format!("quaternion norm {qn} is not close to 1"));
    }
    Ok(PortPose::from_quaternion_wxyz(
        [v[3], v[4], v[5], v[6]],
        Vector3::new(v[0], v[1], v[2]),
    ))
}

pub fn poses_from_csv(text: &str, path: &str) -> Result<Vec<PoseRecord>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("timestamp_us")) {
            continue;
        }
        let err = |reason: String| DatasetError::Csv {
            path: path.to_string(),
            line: i + 1,
            reason,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(err(format!("expected 8 fields, got {}", f.len())));
        }
        let timestamp_us = f[0].trim().parse().map_err(|_| err(format!("bad timestamp `{}`", f[0])))?;
        let pose = parse_pose_fields(&f[1..]).map_err(err)?;
        out.push(PoseRecord { timestamp_us, pose });
    }
    Ok(out)
}

/// Read-only view of a generated dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Vec<KvEntry>,
    pub camera: CameraIntrinsics,
    pub poses: Vec<PoseRecord>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self, DatasetError> {
        let mpath = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
        let manifest = parse_kv(&text).map_err(|source| DatasetError::Config {
            path: mpath.display().to_string(),
            source,
        })?;
        let camera = CameraIntrinsics::load(&dir.join(CAMERA))?;
        let ppath = dir.join(POSES);
        let ptext = std::fs::read_to_string(&ppath).map_err(io_err(&ppath))?;
        let poses = poses_from_csv(&ptext, &ppath.display().to_string())?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            camera,
            poses,
        })
    }

    pub fn manifest_value(&self, key: &str) -> Option<&str> {
        self.manifest.iter().find(|e| e.key == key).map(|e| e.value.as_str())
    }

    pub fn frame_count(&self) -> usize {
        self.poses.len()
    }

    pub fn frame_path(&self, i: usize) -> PathBuf {
        frame_path(&self.dir, i)
    }

    pub fn ring_mask_path(&self, i: usize) -> PathBuf {
        ring_mask_path(&self.dir, i)
    }

    pub fn reflector_mask_path(&self, i: usize) -> PathBuf {
        reflector_mask_path(&self.dir, i)
    }

    pub fn events_path(&self) -> PathBuf {
        self.dir.join(EVENTS)
    }
}

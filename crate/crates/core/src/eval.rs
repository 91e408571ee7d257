//! Accuracy metrics, detection rates, estimate files and the orientation
//! sensitivity bound.

use std::fmt::Write as _;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::dataset::{format_pose_fields, parse_pose_fields, PoseRecord};
use crate::geometry::{geodesic_angle, project, CameraIntrinsics, PortModel, PortPose};
use crate::pose::{folded_geodesic, AbortReason, TemporalFilter, TemporalStatus};
use crate::synth::tilted_normal;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error("estimate at t={estimate} us has no ground-truth row (expected t={expected} us)")]
    TimestampMismatch { estimate: u64, expected: u64 },
    #[error("{0} estimate rows but {1} ground-truth rows")]
    LengthMismatch(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub fn position_error(est: &PortPose, gt: &PortPose) -> f64 {
    (est.position - gt.position).norm()
}

/// Angle between the two port normals, degrees.
pub fn normal_error(est: &PortPose, gt: &PortPose) -> f64 {
    est.normal().angle(&gt.normal()).to_degrees()
}

/// Geodesic rotation error folded over the port's rotational symmetry.
pub fn rotation_error(est: &PortPose, gt: &PortPose, symmetry_order: u32) -> f64 {
    folded_geodesic(&est.rotation, &gt.rotation, symmetry_order.max(1))
}

pub fn rotation_error_unfolded(est: &PortPose, gt: &PortPose) -> f64 {
    geodesic_angle(&est.rotation, &gt.rotation)
}

/// Ring centre projects inside the image.
pub fn in_fov(gt: &PortPose, k: &CameraIntrinsics) -> bool {
    project(k, &gt.position).is_ok_and(|px| k.contains(&px))
}

/// One evaluated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub timestamp_us: u64,
    pub gt: PortPose,
    pub outcome: Result<PortPose, AbortReason>,
    pub in_fov: bool,
    /// Temporal-filter verdict; `None` for aborted frames.
    pub temporal: Option<TemporalStatus>,
}

impl FrameResult {
    pub fn estimate(&self) -> Option<&PortPose> {
        self.outcome.as_ref().ok()
    }

    pub fn accepted(&self) -> bool {
        self.estimate().is_some() && self.temporal == Some(TemporalStatus::Accepted)
    }
}

/// Recomputes the temporal verdicts in frame order. Aborted frames are
/// skipped without touching the window.
pub fn apply_temporal_filter(results: &mut [FrameResult], threshold_deg: f64) {
    let mut filter = TemporalFilter::new(threshold_deg);
    for r in results {
        r.temporal = match &r.outcome {
            Ok(pose) => Some(filter.push(&pose.rotation, r.timestamp_us)),
            Err(_) => None,
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub median: f64,
    pub rmse: f64,
    pub count: usize,
}

/// Lower median and RMSE; `None` on an empty sample.
pub fn error_stats(errors: &[f64]) -> Option<ErrorStats> {
    if errors.is_empty() {
        return None;
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[(sorted.len() - 1) / 2];
    let rmse = (sorted.iter().map(|e| e * e).sum::<f64>() / sorted.len() as f64).sqrt();
    Some(ErrorStats {
        median,
        rmse,
        count: sorted.len(),
    })
}

/// `(all %, in-FoV %)` over the frames counted as detections by `detected`.
pub fn detection_rates_by(results: &[FrameResult], detected: impl Fn(&FrameResult) -> bool) -> (f64, f64) {
    let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
    let all = results.iter().filter(|r| detected(r)).count();
    let fov: Vec<_> = results.iter().filter(|r| r.in_fov).collect();
    let fov_hit = fov.iter().filter(|r| detected(r)).count();
    (pct(all, results.len()), pct(fov_hit, fov.len()))
}

pub fn detection_rates(results: &[FrameResult]) -> (f64, f64) {
    detection_rates_by(results, |r| r.estimate().is_some())
}

/// Accuracy and detection figures for one subset of estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub position: Option<ErrorStats>,
    pub normal: Option<ErrorStats>,
    pub rotation: Option<ErrorStats>,
    pub rotation_unfolded: Option<ErrorStats>,
    pub detection_all: f64,
    pub detection_in_fov: f64,
    pub detections: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub frames: usize,
    pub in_fov_frames: usize,
    pub aborts: Vec<(AbortReason, usize)>,
    /// Every estimate.
    pub raw: Metrics,
    /// Estimates accepted by the temporal filter.
    pub filtered: Metrics,
}

fn metrics_for(results: &[FrameResult], keep: impl Fn(&FrameResult) -> bool + Copy, order: u32) -> Metrics {
    let pairs: Vec<(&PortPose, &PortPose)> = results
        .iter()
        .filter(|r| keep(r))
        .filter_map(|r| r.estimate().map(|e| (e, &r.gt)))
        .collect();
    let collect = |f: &dyn Fn(&PortPose, &PortPose) -> f64| -> Option<ErrorStats> {
        error_stats(&pairs.iter().map(|(e, g)| f(e, g)).collect::<Vec<_>>())
    };
    let (detection_all, detection_in_fov) = detection_rates_by(results, |r| keep(r) && r.estimate().is_some());
    Metrics {
        position: collect(&position_error),
        normal: collect(&normal_error),
        rotation: collect(&|e, g| rotation_error(e, g, order)),
        rotation_unfolded: collect(&rotation_error_unfolded),
        detection_all,
        detection_in_fov,
        detections: pairs.len(),
    }
}

/// Aggregates with and without the temporal outlier filter (uses the
/// stored `temporal` verdicts).
pub fn aggregate(results: &[FrameResult]) -> MetricsReport {
    let order = PortModel::SYMMETRY_ORDER;
    let aborts = AbortReason::ALL
        .into_iter()
        .map(|a| (a, results.iter().filter(|r| r.outcome == Err(a)).count()))
        .collect();
    MetricsReport {
        frames: results.len(),
        in_fov_frames: results.iter().filter(|r| r.in_fov).count(),
        aborts,
        raw: metrics_for(results, |_| true, order),
        filtered: metrics_for(results, FrameResult::accepted, order),
    }
}

fn fmt_stat(s: Option<ErrorStats>, f: impl Fn(ErrorStats) -> f64, prec: usize) -> String {
    s.map_or_else(|| "-".to_string(), |s| format!("{:.prec$}", f(s)))
}

impl MetricsReport {
    /// Human-readable table laid out like an accuracy table: metrics as
    /// rows, raw/filtered as columns.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "frames: {} (in FoV: {})", self.frames, self.in_fov_frames);
        let _ = writeln!(out, "{:<28}{:>12}{:>12}", "", "raw", "filtered");
        let (r, f) = (&self.raw, &self.filtered);
        let mut row = |name: &str, a: String, b: String| {
            let _ = writeln!(out, "{name:<28}{a:>12}{b:>12}");
        };
        type Pick = fn(&Metrics) -> Option<ErrorStats>;
        let blocks: [(&str, Pick, usize); 4] = [
            ("Position error [m]", |m| m.position, 4),
            ("Normal error [deg]", |m| m.normal, 3),
            ("Rotation error [deg]", |m| m.rotation, 3),
            ("Rotation (unfolded) [deg]", |m| m.rotation_unfolded, 3),
        ];
        for (name, pick, prec) in blocks {
            row(&format!("{name} med."), fmt_stat(pick(r), |s| s.median, prec), fmt_stat(pick(f), |s| s.median, prec));
            row(&format!("{name} RMSE"), fmt_stat(pick(r), |s| s.rmse, prec), fmt_stat(pick(f), |s| s.rmse, prec));
        }
        row("Detection rate [%] all", format!("{:.1}", r.detection_all), format!("{:.1}", f.detection_all));
        row("Detection rate [%] in FoV", format!("{:.1}", r.detection_in_fov), format!("{:.1}", f.detection_in_fov));
        let aborts: Vec<String> = self.aborts.iter().map(|(a, n)| format!("{a}={n}")).collect();
        let _ = writeln!(out, "aborts: {}", aborts.join(" "));
        out
    }

    /// `metric,subset,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,subset,value\n");
        let _ = writeln!(out, "frames,all,{}", self.frames);
        let _ = writeln!(out, "frames,in_fov,{}", self.in_fov_frames);
        for (subset, m) in [("raw", &self.raw), ("filtered", &self.filtered)] {
            for (name, s) in [
                ("position_m", m.position),
                ("normal_deg", m.normal),
                ("rotation_deg", m.rotation),
                ("rotation_unfolded_deg", m.rotation_unfolded),
            ] {
                let (med, rmse) = s.map_or((String::new(), String::new()), |s| (s.median.to_string(), s.rmse.to_string()));
                let _ = writeln!(out, "{name}_median,{subset},{med}");
                let _ = writeln!(out, "{name}_rmse,{subset},{rmse}");
            }
            let _ = writeln!(out, "detection_all_pct,{subset},{}", m.detection_all);
            let _ = writeln!(out, "detection_in_fov_pct,{subset},{}", m.detection_in_fov);
            let _ = writeln!(out, "detections,{subset},{}", m.detections);
        }
        for (a, n) in &self.aborts {
            let _ = writeln!(out, "abort_{a},all,{n}");
        }
        out
    }
}

pub const ESTIMATES_HEADER: &str = "timestamp_us,status,tx,ty,tz,qw,qx,qy,qz,score,abort_reason";

/// One row of an estimates file. `temporal` is set for estimated frames;
/// rows written without a verdict are stored as `accepted`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub timestamp_us: u64,
    pub outcome: Result<PortPose, AbortReason>,
    pub score: f64,
    pub temporal: Option<TemporalStatus>,
}

pub fn estimates_to_csv(rows: &[EstimateRow]) -> String {
    let mut s = String::from(ESTIMATES_HEADER);
    s.push('\n');
    for r in rows {
        match &r.outcome {
            Ok(pose) => {
                let status = r.temporal.unwrap_or(TemporalStatus::Accepted).as_str();
                let _ = writeln!(s, "{},{status},{},{},", r.timestamp_us, format_pose_fields(pose), r.score);
            }
            Err(a) => {
                let _ = writeln!(s, "{},abort,,,,,,,,,{a}", r.timestamp_us);
            }
        }
    }
    s
}

pub fn estimates_from_csv(text: &str) -> Result<Vec<EstimateRow>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("timestamp_us")) {
            continue;
        }
        let err = |reason: String| EvalError::Csv { line: i + 1, reason };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 11 {
            return Err(err(format!("expected 11 fields, got {}", f.len())));
        }
        let timestamp_us = f[0].parse().map_err(|_| err(format!("bad timestamp `{}`", f[0])))?;
        let row = if f[1] == "abort" {
            EstimateRow {
                timestamp_us,
                outcome: Err(f[10].parse().map_err(err)?),
                score: 0.0,
                temporal: None,
            }
        } else {
            let temporal: TemporalStatus = f[1].parse().map_err(err)?;
            let pose = parse_pose_fields(&f[2..9]).map_err(err)?;
            let score = f[9].parse().map_err(|_| err(format!("bad score `{}`", f[9])))?;
            EstimateRow {
                timestamp_us,
                outcome: Ok(pose),
                score,
                temporal: Some(temporal),
            }
        };
        out.push(row);
    }
    Ok(out)
}

/// Pairs estimates with ground truth by position, requiring identical
/// timestamps. An empty estimate list evaluates as "nothing detected".
/// Rows without a temporal verdict get one recomputed in order.
pub fn match_results(
    estimates: &[EstimateRow],
    gt: &[PoseRecord],
    k: &CameraIntrinsics,
    threshold_deg: f64,
) -> Result<Vec<FrameResult>, EvalError> {
    if !estimates.is_empty() && estimates.len() != gt.len() {
        return Err(EvalError::LengthMismatch(estimates.len(), gt.len()));
    }
    let mut out = Vec::with_capacity(gt.len());
    for (i, g) in gt.iter().enumerate() {
        let (outcome, temporal) = match estimates.get(i) {
            Some(e) if e.timestamp_us != g.timestamp_us => {
                return Err(EvalError::TimestampMismatch {
                    estimate: e.timestamp_us,
                    expected: g.timestamp_us,
                })
            }
            Some(e) => (e.outcome, e.temporal),
            // no estimate file content: treat as an undetected frame
            None => (Err(AbortReason::Gate), None),
        };
        out.push(FrameResult {
            timestamp_us: g.timestamp_us,
            gt: g.pose,
            outcome,
            in_fov: in_fov(&g.pose, k),
            temporal,
        });
    }
    if out.iter().any(|r| r.outcome.is_ok() && r.temporal.is_none()) {
        apply_temporal_filter(&mut out, threshold_deg);
    }
    Ok(out)
}

const SENSITIVITY_SAMPLES: usize = 360;
const BISECTION_STEPS: usize = 60;

/// Projected ring samples of a port at `distance` on the optical axis,
/// inclined by `inclination_deg` about the camera x-axis.
fn ring_samples(
    k: &CameraIntrinsics,
    ring_radius: f64,
    distance: f64,
    inclination_deg: f64,
) -> Option<Vec<Vector2<f64>>> {
    let p = Vector3::new(0.0, 0.0, distance);
    let pose = PortPose::from_normal_yaw(&tilted_normal(&p, inclination_deg, 90.0), 0.0, p);
    (0..SENSITIVITY_SAMPLES)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / SENSITIVITY_SAMPLES as f64;
            project(k, &pose.to_camera(&Vector3::new(ring_radius * t.cos(), ring_radius * t.sin(), 0.0))).ok()
        })
        .collect()
}

/// Max displacement of corresponding ring points once the mean image
/// translation is removed.
fn appearance_change(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> f64 {
    let n = a.len() as f64;
    let shift = b.iter().zip(a).map(|(q, p)| q - p).sum::<Vector2<f64>>() / n;
    b.iter()
        .zip(a)
        .map(|(q, p)| (q - p - shift).norm())
        .fold(0.0, f64::max)
}

/// Smallest inclination change whose effect on the ring's image reaches
/// `pixel_noise`. `None` when no change up to the admissible range does
/// (bound is unbounded).
pub fn sensitivity_bound(
    k: &CameraIntrinsics,
    ring_radius: f64,
    distance: f64,
    inclination_deg: f64,
    pixel_noise: f64,
) -> Result<Option<f64>, EvalError> {
    if !(distance > 0.0 && ring_radius > 0.0 && pixel_noise > 0.0) {
        return Err(EvalError::InvalidArgument("distance, radius and pixel noise must be > 0".into()));
    }
    if !(0.0..=80.0).contains(&inclination_deg) {
        return Err(EvalError::InvalidArgument(format!("inclination {inclination_deg} outside [0, 80]")));
    }
    let base = ring_samples(k, ring_radius, distance, inclination_deg)
        .ok_or_else(|| EvalError::InvalidArgument("ring crosses the camera plane".into()))?;
    let change = |delta: f64| {
        ring_samples(k, ring_radius, distance, inclination_deg + delta)
            .map_or(f64::INFINITY, |s| appearance_change(&base, &s))
    };
    let max_delta = 89.0 - inclination_deg;
    if change(max_delta) < pixel_noise {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, max_delta);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if change(mid) < pixel_noise {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

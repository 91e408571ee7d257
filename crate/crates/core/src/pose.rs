//! Pose recovery from a fitted ring ellipse and a reflector mask.
//!
//! Position comes from the major-axis endpoint rays, two candidate normals
//! from the minor-axis endpoints lifted onto the ring sphere, and the yaw
//! (which also picks the normal) from a grid search that correlates the
//! reflector mask with the projected reflector model. By default each
//! candidate is scored at the ring centre consistent with its normal.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};

use crate::config::{ConfigError, KvConfig, KvEntry};
use crate::ellipse::{ransac_ellipse, EllipseAxes, RansacConfig};
use crate::filters::{FilterError, FilterPair, FrameContext, InputFrame};
use crate::geometry::{
    back_project, geodesic_angle, project, rot_z, CameraIntrinsics, PortModel, PortPose, UnitRay,
};
use crate::raster::{active_pixels, binarize, fill_polygon, gate, skeletonize, MaskImage};

/// Why a frame produced no estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AbortReason {
    /// Too few skeleton pixels.
    Gate,
    /// No ellipse hypothesis survived, or the fit covers too little of the ellipse.
    Ransac,
    /// A minor-axis ray misses the ring sphere.
    Discriminant,
    /// Coincident endpoint rays or parallel 3D axes.
    Degenerate,
    /// Reflector correlation below the score floor.
    Yaw,
}

impl AbortReason {
    pub const ALL: [AbortReason; 5] = [Self::Gate, Self::Ransac, Self::Discriminant, Self::Degenerate, Self::Yaw];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gate => "gate",
            Self::Ransac => "ransac",
            Self::Discriminant => "discriminant",
            Self::Degenerate => "degenerate",
            Self::Yaw => "yaw",
        }
    }
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AbortReason {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown abort reason `{s}`"))
    }
}

/// Position, ellipse endpoints and the two normal hypotheses of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FiveDof {
    pub position: Vector3<f64>,
    pub normal_a: UnitRay,
    pub normal_b: UnitRay,
    pub major_endpoints: [Vector2<f64>; 2],
    pub minor_endpoints: [Vector2<f64>; 2],
    pub minor_points_3d: [Vector3<f64>; 2],
}

/// Ring centre from the major-axis endpoint rays:
/// `p = ν (v₁ + v₂) / ‖v₂ − v₁‖`.
pub fn estimate_position(
    e: &EllipseAxes,
    k: &CameraIntrinsics,
    ring_radius: f64,
) -> Result<Vector3<f64>, AbortReason> {
    let [m1, m2] = e.major_endpoints();
    let v1 = back_project(k, &m1);
    let v2 = back_project(k, &m2);
    let chord = (*v2 - *v1).norm();
    if !(chord > 1e-12) {
        return Err(AbortReason::Degenerate);
    }
    let p = (*v1 + *v2) * (ring_radius / chord);
    if !(p.z > 0.0) || !p.iter().all(|v| v.is_finite()) {
        return Err(AbortReason::Degenerate);
    }
    Ok(p)
}

/// Lifts the minor-axis endpoints onto the sphere `‖x − p‖ = ν`, keeping the
/// root between the camera and the ring centre.
pub fn minor_axis_points(
    e: &EllipseAxes,
    k: &CameraIntrinsics,
    p: &Vector3<f64>,
    ring_radius: f64,
) -> Result<[Vector3<f64>; 2], AbortReason> {
    let lift = |px: Vector2<f64>| -> Result<Vector3<f64>, AbortReason> {
        let v = back_project(k, &px);
        // d² − 2d(v·p) + ‖p‖² − ν² = 0
        let b = v.dot(p);
        let disc = b * b - (p.norm_squared() - ring_radius * ring_radius);
        if disc < 0.0 {
            return Err(AbortReason::Discriminant);
        }
        let d = b - disc.sqrt();
        if !(d > 0.0) {
            return Err(AbortReason::Discriminant);
        }
        Ok(*v * d)
    };
    let [a, b] = e.minor_endpoints();
    Ok([lift(a)?, lift(b)?])
}

/// One normal per ring configuration, oriented toward the camera. In the
/// configuration where minor point `k` is the near one, the opposite endpoint
/// sits on the far root of its ray, so the 3D minor axis is the chord between
/// `x̂_mk` and that far point; the normal is `normalize(major_3d × chord)`.
pub fn normal_candidates(
    p: &Vector3<f64>,
    major_endpoints: &[Vector2<f64>; 2],
    minor_points_3d: &[Vector3<f64>; 2],
    k: &CameraIntrinsics,
) -> Result<(UnitRay, UnitRay), AbortReason> {
    let v1 = back_project(k, &major_endpoints[0]);
    let v2 = back_project(k, &major_endpoints[1]);
    let sum = (*v1 + *v2).norm();
    if !(sum > 1e-12) {
        return Err(AbortReason::Degenerate);
    }
    // the endpoints lie at equal depth s along their rays with midpoint p
    let s = 2.0 * p.norm() / sum;
    let major = (*v2 - *v1) * s;
    // roots along a ray sum to 2·(v·p), so the far root follows from the near one
    let far = |x: &Vector3<f64>| -> Result<Vector3<f64>, AbortReason> {
        let d = x.norm();
        if !(d > 0.0) {
            return Err(AbortReason::Degenerate);
        }
        let v = x / d;
        Ok(v * (2.0 * v.dot(p) - d))
    };
    let candidate = |near: &Vector3<f64>, opposite: &Vector3<f64>| -> Result<UnitRay, AbortReason> {
        let minor = near - far(opposite)?;
        let n = major.cross(&minor);
        if !(n.norm() > 1e-9 * major.norm() * minor.norm()) {
            return Err(AbortReason::Degenerate);
        }
        let n = if n.dot(&-p) < 0.0 { -n } else { n };
        UnitRay::new(n).ok_or(AbortReason::Degenerate)
    };
    let [a, b] = minor_points_3d;
    Ok((candidate(a, b)?, candidate(b, a)?))
}

/// Ring centre consistent with the ellipse and a given plane normal. The
/// centre's image is the pole of the plane's vanishing line `n` with respect
/// to the viewing cone `Kᵀ C K`; depth follows from the radius measured at the
/// major-axis endpoints.
pub fn centre_for_normal(
    e: &EllipseAxes,
    k: &CameraIntrinsics,
    normal: &UnitRay,
    ring_radius: f64,
) -> Result<Vector3<f64>, AbortReason> {
    let g = e.general();
    let c = Matrix3::new(
        g[0],
        g[1] / 2.0,
        g[3] / 2.0,
        g[1] / 2.0,
        g[2],
        g[4] / 2.0,
        g[3] / 2.0,
        g[4] / 2.0,
        g[5],
    );
    let km = k.matrix();
    let cone = km.transpose() * c * km;
    let n = normal.as_vector();
    let mut dir = cone.try_inverse().ok_or(AbortReason::Degenerate)? * n;
    if dir.z < 0.0 {
        dir = -dir;
    }
    let nd = n.dot(&dir);
    let mut radius = 0.0;
    for m in e.major_endpoints() {
        let v = back_project(k, &m);
        let nv = n.dot(&v);
        if !(nv.abs() > 1e-12) {
            return Err(AbortReason::Degenerate);
        }
        radius += (*v * (nd / nv) - dir).norm() / 2.0;
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(AbortReason::Degenerate);
    }
    let p = dir * (ring_radius / radius);
    if !(p.z > 0.0) {
        return Err(AbortReason::Degenerate);
    }
    Ok(p)
}

/// Position, minor points and normal candidates from a fitted ellipse.
pub fn five_dof(e: &EllipseAxes, k: &CameraIntrinsics, ring_radius: f64) -> Result<FiveDof, AbortReason> {
    let position = estimate_position(e, k, ring_radius)?;
    let minor_points_3d = minor_axis_points(e, k, &position, ring_radius)?;
    let major_endpoints = e.major_endpoints();
    let (normal_a, normal_b) = normal_candidates(&position, &major_endpoints, &minor_points_3d, k)?;
    Ok(FiveDof {
        position,
        normal_a,
        normal_b,
        major_endpoints,
        minor_endpoints: e.minor_endpoints(),
        minor_points_3d,
    })
}

const MIN_CORNER_DEPTH: f64 = 1e-6;

/// Projected reflector quads, skipping any quad with a corner at or behind
/// the camera plane.
pub fn projected_reflectors(model: &PortModel, pose: &PortPose, k: &CameraIntrinsics) -> Vec<[Vector2<f64>; 4]> {
    model
        .reflector_corners_3d()
        .iter()
        .filter_map(|quad| {
            let cam = quad.map(|c| pose.to_camera(&c));
            if cam.iter().any(|c| c.z <= MIN_CORNER_DEPTH) {
                return None;
            }
            let mut out = [Vector2::zeros(); 4];
            for (o, c) in out.iter_mut().zip(cam.iter()) {
                *o = project(k, c).ok()?;
            }
            Some(out)
        })
        .collect()
}

/// Calls `visit` for every pixel covered by a projected reflector (each pixel once).
fn for_each_reflector_pixel(
    model: &PortModel,
    pose: &PortPose,
    k: &CameraIntrinsics,
    mut visit: impl FnMut(u32, u32),
) {
    for quad in projected_reflectors(model, pose, k) {
        fill_polygon(k.width, k.height, &quad, &mut visit);
    }
}

/// Binary mask of the three projected reflector quads.
pub fn render_reflector_mask(model: &PortModel, pose: &PortPose, k: &CameraIntrinsics) -> MaskImage {
    let mut m = MaskImage::zeros(k.width, k.height);
    for_each_reflector_pixel(model, pose, k, |c, r| m.set(c, r, 1.0));
    m
}

/// Correlation `Σ I_M · I_R` and the self-score `Σ I_M` of the projected model.
fn correlate(mask: &MaskImage, model: &PortModel, pose: &PortPose, k: &CameraIntrinsics) -> (f64, f64) {
    let mut score = 0.0;
    let mut area = 0.0;
    for_each_reflector_pixel(model, pose, k, |c, r| {
        score += mask.get(c, r) as f64;
        area += 1.0;
    });
    (score, area)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YawResult {
    pub rotation: Rotation3<f64>,
    pub yaw_deg: f64,
    /// 0 for the first normal candidate, 1 for the second.
    pub candidate: usize,
    pub score: f64,
    /// Pixel count of the projected model at the winning pose.
    pub self_score: f64,
    /// Ring centre the winning pose was scored at.
    pub position: Vector3<f64>,
}

/// Grid search over yaw ∈ {0, step, …, 120 − step} for both normal
/// candidates at a shared centre `p`; see [`yaw_search_candidates`].
#[allow(clippy::too_many_arguments)]
pub fn yaw_search(
    reflector_mask: &MaskImage,
    p: &Vector3<f64>,
    normals: (&UnitRay, &UnitRay),
    model: &PortModel,
    k: &CameraIntrinsics,
    step_deg: f64,
    floor_fraction: f64,
) -> Result<YawResult, AbortReason> {
    yaw_search_candidates(
        reflector_mask,
        [(p, normals.0), (p, normals.1)],
        model,
        k,
        step_deg,
        floor_fraction,
    )
}

/// Yaw grid search over `(centre, normal)` hypotheses; returns the argmax of
/// the reflector correlation. Ties keep the earlier candidate and the smaller
/// yaw. Fails when the best score is below `floor_fraction` of the model's own
/// pixel count.
pub fn yaw_search_candidates(
    reflector_mask: &MaskImage,
    candidates: [(&Vector3<f64>, &UnitRay); 2],
    model: &PortModel,
    k: &CameraIntrinsics,
    step_deg: f64,
    floor_fraction: f64,
) -> Result<YawResult, AbortReason> {
    let period = 360.0 / model.symmetry_order() as f64;
    let steps = (period / step_deg).round() as usize;
    let mut best: Option<YawResult> = None;
    for (ci, (p, n)) in candidates.into_iter().enumerate() {
        for i in 0..steps.max(1) {
            let yaw = i as f64 * step_deg;
            let pose = PortPose::from_normal_yaw(n.as_vector(), yaw, *p);
            let (score, self_score) = correlate(reflector_mask, model, &pose, k);
            if best.as_ref().is_none_or(|b| score > b.score) {
                best = Some(YawResult {
                    rotation: pose.rotation,
                    yaw_deg: yaw,
                    candidate: ci,
                    score,
                    self_score,
                    position: *p,
                });
            }
        }
    }
    let best = best.ok_or(AbortReason::Yaw)?;
    if !(best.self_score > 0.0) || best.score < floor_fraction * best.self_score || !(best.score > 0.0) {
        return Err(AbortReason::Yaw);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    /// Minimum number of skeleton pixels.
    pub gamma_s: usize,
    pub binarize_threshold: f32,
    pub ransac: RansacConfig,
    pub yaw_step_deg: f64,
    /// Score floor as a fraction of the model's self-score.
    pub yaw_floor: f64,
    /// Minimum fraction of the in-image ellipse outline covered by inliers.
    pub min_coverage: f64,
    /// Events per histogram in event mode.
    pub events_per_histogram: usize,
    pub histogram_clamp: u32,
    /// Temporal outlier threshold (geodesic degrees).
    pub outlier_threshold_deg: f64,
    /// Score each normal candidate at the ring centre consistent with it
    /// instead of the shared major-axis estimate, and report that centre.
    pub candidate_centres: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            gamma_s: 30,
            binarize_threshold: 0.5,
            ransac: RansacConfig::default(),
            yaw_step_deg: 1.0,
            yaw_floor: 0.25,
            min_coverage: 0.4,
            events_per_histogram: crate::events::DEFAULT_WINDOW,
            histogram_clamp: crate::events::DEFAULT_CLAMP,
            outlier_threshold_deg: 15.0,
            candidate_centres: true,
        }
    }
}

impl KvConfig for PipelineConfig {
    fn apply(&mut self, e: &KvEntry) -> Result<bool, ConfigError> {
        let v = e.value.as_str();
        match e.key.as_str() {
            "gamma_s" => self.gamma_s = e.parse(v)?,
            "binarize_threshold" => self.binarize_threshold = e.parse_f64(v)? as f32,
            "ransac.max_iterations" => self.ransac.max_iterations = e.parse(v)?,
            "ransac.inlier_tolerance" => self.ransac.inlier_tolerance = e.parse_f64(v)?,
            "ransac.min_axis_ratio" => self.ransac.min_axis_ratio = e.parse_f64(v)?,
            "ransac.seed" => self.ransac.rng_seed = e.parse(v)?,
            "yaw_step_deg" => self.yaw_step_deg = e.parse_f64(v)?,
            "yaw_floor" => self.yaw_floor = e.parse_f64(v)?,
            "min_coverage" => self.min_coverage = e.parse_f64(v)?,
            "events_per_histogram" => self.events_per_histogram = e.parse(v)?,
            "histogram_clamp" => self.histogram_clamp = e.parse(v)?,
            "outlier_threshold_deg" => self.outlier_threshold_deg = e.parse_f64(v)?,
            "candidate_centres" => self.candidate_centres = e.parse_bool(v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(String, String)> {
        [
            ("gamma_s", self.gamma_s.to_string()),
            ("binarize_threshold", self.binarize_threshold.to_string()),
            ("ransac.max_iterations", self.ransac.max_iterations.to_string()),
            ("ransac.inlier_tolerance", self.ransac.inlier_tolerance.to_string()),
            ("ransac.min_axis_ratio", self.ransac.min_axis_ratio.to_string()),
            ("ransac.seed", self.ransac.rng_seed.to_string()),
            ("yaw_step_deg", self.yaw_step_deg.to_string()),
            ("yaw_floor", self.yaw_floor.to_string()),
            ("min_coverage", self.min_coverage.to_string()),
            ("events_per_histogram", self.events_per_histogram.to_string()),
            ("histogram_clamp", self.histogram_clamp.to_string()),
            ("outlier_threshold_deg", self.outlier_threshold_deg.to_string()),
            ("candidate_centres", self.candidate_centres.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, value: String, reason: &str| ConfigError::Invalid {
            key: key.into(),
            reason: format!("{reason} (got {value})"),
        };
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(bad("binarize_threshold", self.binarize_threshold.to_string(), "must be in (0, 1)"));
        }
        if let Err(r) = self.ransac.validate() {
            let field = r.split_whitespace().next().unwrap_or_default();
            return Err(ConfigError::Invalid {
                key: format!("ransac.{field}"),
                reason: r,
            });
        }
        let steps = 120.0 / self.yaw_step_deg;
        if !(self.yaw_step_deg > 0.0) || (steps - steps.round()).abs() > 1e-9 {
            return Err(bad("yaw_step_deg", self.yaw_step_deg.to_string(), "must divide 120"));
        }
        if !(0.0..=1.0).contains(&self.yaw_floor) {
            return Err(bad("yaw_floor", self.yaw_floor.to_string(), "must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.min_coverage) {
            return Err(bad("min_coverage", self.min_coverage.to_string(), "must be in [0, 1]"));
        }
        if self.events_per_histogram == 0 {
            return Err(bad("events_per_histogram", "0".into(), "must be >= 1"));
        }
        if self.histogram_clamp == 0 {
            return Err(bad("histogram_clamp", "0".into(), "must be >= 1"));
        }
        if !(self.outlier_threshold_deg > 0.0) {
            return Err(bad("outlier_threshold_deg", self.outlier_threshold_deg.to_string(), "must be > 0"));
        }
        Ok(())
    }
}

/// Successful single-frame estimate with intermediate products.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub pose: PortPose,
    pub score: f64,
    pub ellipse: EllipseAxes,
    pub inliers: usize,
    pub five_dof: FiveDof,
    pub yaw: YawResult,
}

pub type FrameOutcome = Result<Estimate, AbortReason>;

/// Number of 1-px-spaced ellipse samples that fall inside the image.
fn visible_outline(e: &EllipseAxes, k: &CameraIntrinsics) -> usize {
    let n = e.perimeter().ceil().max(8.0) as usize;
    (0..n)
        .filter(|&i| k.contains(&e.point_at(std::f64::consts::TAU * i as f64 / n as f64)))
        .count()
}

/// Frame-level estimator: filters, skeleton, ellipse, 5-DoF, yaw.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub model: PortModel,
    pub camera: CameraIntrinsics,
    pub filters: FilterPair,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, model: PortModel, camera: CameraIntrinsics, filters: FilterPair) -> Self {
        Self {
            config,
            model,
            camera,
            filters,
        }
    }

    /// Runs the whole chain on one frame. Filter failures (configuration
    /// problems) are errors; geometric failures are typed aborts.
    pub fn estimate(&self, frame: &InputFrame, ctx: &FrameContext<'_>) -> Result<FrameOutcome, FilterError> {
        if (frame.width(), frame.height()) != (self.camera.width, self.camera.height) {
            return Err(FilterError::InvalidFrame(format!(
                "frame is {}x{}, camera is {}x{}",
                frame.width(),
                frame.height(),
                self.camera.width,
                self.camera.height
            )));
        }
        let ring = self.filters.ring.run(frame, ctx)?;
        let reflector_filter = &self.filters.reflector;
        self.estimate_from_ring(&ring, || reflector_filter.run(frame, ctx))
    }

    /// Everything after the ring filter. The reflector filter runs lazily,
    /// only when the geometric stage succeeds.
    pub fn estimate_from_ring(
        &self,
        ring: &MaskImage,
        reflector: impl FnOnce() -> Result<MaskImage, FilterError>,
    ) -> Result<FrameOutcome, FilterError> {
        let cfg = &self.config;
        let skeleton = skeletonize(&binarize(ring, cfg.binarize_threshold));
        if !gate(&skeleton, cfg.gamma_s).passed() {
            return Ok(Err(AbortReason::Gate));
        }
        let points = active_pixels(&skeleton);
        let Ok(fit) = ransac_ellipse(&points, &cfg.ransac) else {
            return Ok(Err(AbortReason::Ransac));
        };
        let visible = visible_outline(&fit.ellipse, &self.camera);
        if visible == 0 || (fit.inliers.len() as f64) < cfg.min_coverage * visible as f64 {
            return Ok(Err(AbortReason::Ransac));
        }
        let five = match five_dof(&fit.ellipse, &self.camera, self.model.ring_radius()) {
            Ok(f) => f,
            Err(r) => return Ok(Err(r)),
        };
        let centres = if cfg.candidate_centres {
            match (
                centre_for_normal(&fit.ellipse, &self.camera, &five.normal_a, self.model.ring_radius()),
                centre_for_normal(&fit.ellipse, &self.camera, &five.normal_b, self.model.ring_radius()),
            ) {
                (Ok(a), Ok(b)) => [a, b],
                _ => return Ok(Err(AbortReason::Degenerate)),
            }
        } else {
            [five.position; 2]
        };
        let reflector_mask = reflector()?;
        let yaw = match yaw_search_candidates(
            &reflector_mask,
            [(&centres[0], &five.normal_a), (&centres[1], &five.normal_b)],
            &self.model,
            &self.camera,
            cfg.yaw_step_deg,
            cfg.yaw_floor,
        ) {
            Ok(y) => y,
            Err(r) => return Ok(Err(r)),
        };
        Ok(Ok(Estimate {
            pose: PortPose::new(yaw.rotation, yaw.position),
            score: yaw.score,
            ellipse: fit.ellipse,
            inliers: fit.inliers.len(),
            five_dof: five,
            yaw,
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemporalStatus {
    Accepted,
    Pending,
    Rejected,
}

impl TemporalStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Accepted => "accepted",
            Self::Pending => "pending",
            Self::Rejected => "rejected",
        }
    }
}

impl std::str::FromStr for TemporalStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [Self::Accepted, Self::Pending, Self::Rejected]
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown temporal status `{s}`"))
    }
}

impl fmt::Display for TemporalStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Symmetry-folded geodesic angle: `min_k ∠(a, b·Rz(120°k))`.
pub fn folded_geodesic(a: &Rotation3<f64>, b: &Rotation3<f64>, order: u32) -> f64 {
    (0..order)
        .map(|k| geodesic_angle(a, &(b * rot_z(360.0 * k as f64 / order as f64))))
        .fold(f64::INFINITY, f64::min)
}

/// Accepts a pose once it and its two predecessors are consecutively within
/// the threshold. A violating pose empties the window and is rejected.
#[derive(Debug, Clone)]
pub struct TemporalFilter {
    threshold_deg: f64,
    window: usize,
    buffer: VecDeque<(u64, Rotation3<f64>)>,
}

impl TemporalFilter {
    pub const WINDOW: usize = 3;

    pub fn new(threshold_deg: f64) -> Self {
        Self {
            threshold_deg,
            window: Self::WINDOW,
            buffer: VecDeque::with_capacity(Self::WINDOW),
        }
    }

    pub fn threshold_deg(&self) -> f64 {
        self.threshold_deg
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn reset(&mut self) {
        self.buffer.clear();
    }

    /// Consecutive orientations are compared modulo the port's 120° symmetry,
    /// since yaw is only identifiable up to it.
    pub fn push(&mut self, rotation: &Rotation3<f64>, timestamp: u64) -> TemporalStatus {
        if let Some((_, last)) = self.buffer.back() {
            if folded_geodesic(last, rotation, PortModel::SYMMETRY_ORDER) > self.threshold_deg {
                self.buffer.clear();
                return TemporalStatus::Rejected;
            }
        }
        self.buffer.push_back((timestamp, *rotation));
        while self.buffer.len() > self.window {
            self.buffer.pop_front();
        }
        if self.buffer.len() == self.window {
            TemporalStatus::Accepted
        } else {
            TemporalStatus::Pending
        }
    }
}

impl Default for TemporalFilter {
    fn default() -> Self {
        Self::new(15.0)
    }
}

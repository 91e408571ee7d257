//! Synthetic ground truth: trajectories, a stylized renderer, exact masks,
//! and dataset generation (frames, masks, poses, optional events).

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::config::{render_kv, ConfigError, KvConfig, KvEntry};
use crate::dataset::{self, io_err, DatasetError, PoseRecord};
use crate::ellipse::{general_to_axes, EllipseAxes};
use crate::events::{simulate_events, EventStream, SimulatorConfig};
use crate::geometry::{project, CameraIntrinsics, PortModel, PortPose};
use crate::pose::{projected_reflectors, render_reflector_mask};
use crate::raster::{fill_polygon, MaskImage};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid trajectory: {0}")]
    Trajectory(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Raster(#[from] crate::raster::RasterError),
    #[error(transparent)]
    Events(#[from] crate::events::EventError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrajectoryKind {
    /// Distance interpolated linearly from `start_distance` to `end_distance`.
    Approach,
    /// Constant distance; the inclination direction rotates at `angular_rate`.
    Orbit,
    /// Constant position; the port spins about `tumble_axis` (port frame) at `angular_rate`.
    Tumble,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "approach" => Ok(Self::Approach),
            "orbit" => Ok(Self::Orbit),
            "tumble" => Ok(Self::Tumble),
            _ => Err(format!("unknown trajectory kind `{s}` (approach, orbit, tumble)")),
        }
    }
}

impl std::fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Approach => "approach",
            Self::Orbit => "orbit",
            Self::Tumble => "tumble",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub start_distance: f64,
    pub end_distance: f64,
    /// Lateral offset of the port centre from the optical axis, metres.
    pub offset: Vector2<f64>,
    pub inclination_deg: f64,
    /// Direction of the inclination tilt about the line of sight.
    pub azimuth_deg: f64,
    /// Yaw rate about the port normal (approach, orbit).
    pub yaw_rate_deg_s: f64,
    /// Orbit azimuth rate or tumble spin rate.
    pub angular_rate_deg_s: f64,
    pub tumble_axis: Vector3<f64>,
    /// Seeds the initial yaw.
    pub seed: u64,
}

impl Default for Trajectory {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::Approach,
            duration_s: 10.0,
            rate_hz: 10.0,
            start_distance: 1.5,
            end_distance: 0.3,
            offset: Vector2::zeros(),
            inclination_deg: 30.0,
            azimuth_deg: 0.0,
            yaw_rate_deg_s: 3.0,
            angular_rate_deg_s: 10.0,
            tumble_axis: Vector3::z(),
            seed: 0,
        }
    }
}

/// Camera-facing normal tilted by `inclination` away from the line of sight
/// towards the `azimuth` direction.
pub fn tilted_normal(position: &Vector3<f64>, inclination_deg: f64, azimuth_deg: f64) -> Vector3<f64> {
    let los = -position.normalize();
    let helper = if los.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = helper.cross(&los).normalize();
    let e2 = los.cross(&e1);
    let (si, ci) = inclination_deg.to_radians().sin_cos();
    let (sa, ca) = azimuth_deg.to_radians().sin_cos();
    (los * ci + (e1 * ca + e2 * sa) * si).normalize()
}

impl Trajectory {
    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Trajectory(m.into()));
        if !(self.duration_s > 0.0 && self.rate_hz > 0.0) || self.frame_count() == 0 {
            return bad("duration and rate must give at least one frame");
        }
        if !(self.start_distance > 0.0 && self.end_distance > 0.0) {
            return bad("distances must be positive (port in front of the camera)");
        }
        if !(0.0..90.0).contains(&self.inclination_deg) {
            return bad("inclination must be in [0, 90)");
        }
        if self.kind == TrajectoryKind::Tumble && !(self.tumble_axis.norm() > 0.0) {
            return bad("tumble axis must be non-zero");
        }
        let all_finite = [
            self.offset.x,
            self.offset.y,
            self.azimuth_deg,
            self.yaw_rate_deg_s,
            self.angular_rate_deg_s,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return bad("non-finite parameter");
        }
        Ok(())
    }

    fn pose_at(&self, i: usize, n: usize, yaw0: f64) -> PortPose {
        let t = i as f64 / self.rate_hz;
        let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        match self.kind {
            TrajectoryKind::Approach => {
                let d = self.start_distance + (self.end_distance - self.start_distance) * frac;
                let p = Vector3::new(self.offset.x, self.offset.y, d);
                let n = tilted_normal(&p, self.inclination_deg, self.azimuth_deg);
                PortPose::from_normal_yaw(&n, yaw0 + self.yaw_rate_deg_s * t, p)
            }
            TrajectoryKind::Orbit => {
                let p = Vector3::new(self.offset.x, self.offset.y, self.start_distance);
                let n = tilted_normal(&p, self.inclination_deg, self.azimuth_deg + self.angular_rate_deg_s * t);
                PortPose::from_normal_yaw(&n, yaw0 + self.yaw_rate_deg_s * t, p)
            }
            TrajectoryKind::Tumble => {
                let p = Vector3::new(self.offset.x, self.offset.y, self.start_distance);
                let n = tilted_normal(&p, self.inclination_deg, self.azimuth_deg);
                let r0 = PortPose::from_normal_yaw(&n, yaw0, p).rotation;
                let axis = Unit::new_normalize(self.tumble_axis);
                let spin = Rotation3::from_axis_angle(&axis, (self.angular_rate_deg_s * t).to_radians());
                PortPose::new(r0 * spin, p)
            }
        }
    }

    /// `(timestamp_us, pose)` for every frame.
    pub fn sample(&self) -> Result<Vec<PoseRecord>, SynthError> {
        self.validate()?;
        let n = self.frame_count();
        let yaw0 = ChaCha8Rng::seed_from_u64(self.seed).random_range(0.0..360.0);
        Ok((0..n)
            .map(|i| PoseRecord {
                timestamp_us: (i as f64 * 1e6 / self.rate_hz).round() as u64,
                pose: self.pose_at(i, n, yaw0),
            })
            .collect())
    }
}

pub fn sample_trajectory(t: &Trajectory) -> Result<Vec<PoseRecord>, SynthError> {
    t.sample()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub background: f64,
    pub ring_brightness: f64,
    pub reflector_brightness: f64,
    pub texture_amplitude: f64,
    pub noise_sigma: f64,
    pub saturation: f64,
    pub distractor_count: u32,
    /// Radial width of the rendered ring band, pixels.
    pub ring_width_px: f64,
    /// Render the port at all (port-free frames when false).
    pub port_visible: bool,
    /// Seeds the static texture and distractors.
    pub texture_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            background: 0.15,
            ring_brightness: 0.9,
            reflector_brightness: 1.0,
            texture_amplitude: 0.08,
            noise_sigma: 0.0,
            saturation: 1.0,
            distractor_count: 0,
            ring_width_px: 2.0,
            port_visible: true,
            texture_seed: 0,
        }
    }
}

impl SceneConfig {
    /// Flat background, bright port, no noise.
    pub fn clean() -> Self {
        Self {
            background: 0.0,
            ring_brightness: 1.0,
            reflector_brightness: 1.0,
            texture_amplitude: 0.0,
            ..Default::default()
        }
    }
}

/// Whether the port-plane point hit by the ray through `px` lies in the ring
/// band (radial half-width `half_width_px` measured in the image).
fn in_ring_band(
    px: &Vector2<f64>,
    pose: &PortPose,
    rt: &Rotation3<f64>,
    normal: &Vector3<f64>,
    k: &CameraIntrinsics,
    nu: f64,
    half_width_px: f64,
) -> bool {
    let v = Vector3::new((px.x - k.cx) / k.fx, (px.y - k.cy) / k.fy, 1.0);
    let denom = normal.dot(&v);
    if denom.abs() < 1e-12 {
        return false;
    }
    let t = normal.dot(&pose.position) / denom;
    if !(t > 0.0) {
        return false;
    }
    let q = rt * (v * t - pose.position);
    let rho = (q.x * q.x + q.y * q.y).sqrt();
    // the linearised band test below is only meaningful near the ring; far
    // plane points (towards the vanishing line) have a vanishing image scale
    if !(rho > 0.5 * nu && rho < 1.5 * nu) {
        return false;
    }
    let radial = Vector3::new(q.x / rho, q.y / rho, 0.0);
    let x = pose.to_camera(&Vector3::new(q.x, q.y, 0.0));
    let dx = pose.rotation * radial;
    if x.z <= 0.0 {
        return false;
    }
    let du = k.fx * (dx.x * x.z - x.x * dx.z) / (x.z * x.z);
    let dv = k.fy * (dx.y * x.z - x.y * dx.z) / (x.z * x.z);
    (rho - nu).abs() * (du * du + dv * dv).sqrt() <= half_width_px
}

/// Binary ring band mask evaluated at pixel centres.
pub fn render_ring_mask_width(pose: &PortPose, model: &PortModel, k: &CameraIntrinsics, width_px: f64) -> MaskImage {
    let rt = pose.rotation.inverse();
    let n = pose.normal();
    MaskImage::from_fn(k.width, k.height, |c, r| {
        let px = Vector2::new(c as f64, r as f64);
        if in_ring_band(&px, pose, &rt, &n, k, model.ring_radius(), 0.5 * width_px) {
            1.0
        } else {
            0.0
        }
    })
}

/// Ground-truth ring mask with the default 2-px band.
pub fn render_ring_mask(pose: &PortPose, model: &PortModel, k: &CameraIntrinsics) -> MaskImage {
    render_ring_mask_width(pose, model, k, SceneConfig::default().ring_width_px)
}

/// `(ring, reflector)` ground-truth masks.
pub fn render_gt_masks(pose: &PortPose, model: &PortModel, k: &CameraIntrinsics) -> (MaskImage, MaskImage) {
    (render_ring_mask(pose, model, k), render_reflector_mask(model, pose, k))
}

/// Exact image conic of the ring circle, via the plane homography `K [r₁ r₂ p]`.
pub fn projected_ring_conic(pose: &PortPose, model: &PortModel, k: &CameraIntrinsics) -> Option<EllipseAxes> {
    let r = pose.rotation.matrix();
    let h = k.matrix() * Matrix3::from_columns(&[r.column(0).into_owned(), r.column(1).into_owned(), pose.position]);
    let hinv = h.try_inverse()?;
    let nu2 = model.ring_radius().powi(2);
    let c = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -nu2));
    let q = hinv.transpose() * c * hinv;
    general_to_axes(&[q[(0, 0)], 2.0 * q[(0, 1)], q[(1, 1)], 2.0 * q[(0, 2)], 2.0 * q[(1, 2)], q[(2, 2)]]).ok()
}

/// Static camera-fixed backdrop: value-noise texture plus distractor lines.
fn backdrop(k: &CameraIntrinsics, scene: &SceneConfig) -> Vec<f32> {
    let (w, h) = (k.width as usize, k.height as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(scene.texture_seed);
    const CELL: f64 = 24.0;
    let gw = (w as f64 / CELL).ceil() as usize + 2;
    let gh = (h as f64 / CELL).ceil() as usize + 2;
    let grid: Vec<f64> = (0..gw * gh).map(|_| rng.random_range(-1.0..1.0)).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let lines: Vec<(Vector2<f64>, Vector2<f64>, f64)> = (0..scene.distractor_count)
        .map(|_| {
            let a = Vector2::new(rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
            let ang: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let len = rng.random_range(0.3..0.9) * w as f64;
            let b = a + Vector2::new(ang.cos(), ang.sin()) * len;
            (a, b, rng.random_range(0.5..0.9) * scene.ring_brightness)
        })
        .collect();
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let (gx, gy) = (x as f64 / CELL, y as f64 / CELL);
            let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
            let (fx, fy) = (smooth(gx - ix as f64), smooth(gy - iy as f64));
            let g = |i: usize, j: usize| grid[j * gw + i];
            let tex = (g(ix, iy) * (1.0 - fx) + g(ix + 1, iy) * fx) * (1.0 - fy)
                + (g(ix, iy + 1) * (1.0 - fx) + g(ix + 1, iy + 1) * fx) * fy;
            let mut v = scene.background + scene.texture_amplitude * tex;
            let p = Vector2::new(x as f64, y as f64);
            for (a, b, level) in &lines {
                let ab = b - a;
                let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
                let d = (p - (a + ab * t)).norm();
                let cover = (1.25 - d).clamp(0.0, 1.0);
                v = v * (1.0 - cover) + level * cover;
            }
            out[y * w + x] = v as f32;
        }
    }
    out
}

/// Renderer with its static backdrop precomputed.
pub struct Renderer {
    camera: CameraIntrinsics,
    model: PortModel,
    scene: SceneConfig,
    backdrop: Vec<f32>,
}

const SUBSAMPLES: [(f64, f64); 4] = [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)];

impl Renderer {
    pub fn new(camera: CameraIntrinsics, model: PortModel, scene: SceneConfig) -> Self {
        let backdrop = backdrop(&camera, &scene);
        Self {
            camera,
            model,
            scene,
            backdrop,
        }
    }

    pub fn camera(&self) -> &CameraIntrinsics {
        &self.camera
    }

    /// Noise-free render (supersampled port over the backdrop, saturation clip).
    pub fn render_clean(&self, pose: Option<&PortPose>) -> MaskImage {
        let k = &self.camera;
        let (w, h) = (k.width as usize, k.height as usize);
        let mut acc: Vec<f64> = self.backdrop.iter().map(|&v| v as f64 * 4.0).collect();
        if let (Some(pose), true) = (pose, self.scene.port_visible) {
            // coverage of each sub-sample: 0 backdrop, 1 ring, 2 reflector
            let mut cover = vec![0u8; 4 * w * h];
            let rt = pose.rotation.inverse();
            let n = pose.normal();
            let half = 0.5 * self.scene.ring_width_px;
            let nu = self.model.ring_radius();
            let bounds = ring_bounds(pose, &self.model, k);
            if let Some((x0, x1, y0, y1)) = bounds {
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        for (s, (dx, dy)) in SUBSAMPLES.iter().enumerate() {
                            let px = Vector2::new(x as f64 + dx, y as f64 + dy);
                            if in_ring_band(&px, pose, &rt, &n, k, nu, half) {
                                cover[4 * (y * w + x) + s] = 1;
                            }
                        }
                    }
                }
            }
            // sub-sample grid: sub index j ↔ pixel coordinate (j − 0.5) / 2
            for quad in projected_reflectors(&self.model, pose, k) {
                let sub = quad.map(|c| c * 2.0 + Vector2::new(0.5, 0.5));
                fill_polygon(2 * k.width, 2 * k.height, &sub, |sx, sy| {
                    let (x, y) = ((sx / 2) as usize, (sy / 2) as usize);
                    let s = (sy % 2) as usize * 2 + (sx % 2) as usize;
                    cover[4 * (y * w + x) + s] = 2;
                });
            }
            for (i, a) in acc.iter_mut().enumerate() {
                let base = self.backdrop[i] as f64;
                let mut sum = 0.0;
                for s in 0..4 {
                    sum += match cover[4 * i + s] {
                        1 => self.scene.ring_brightness,
                        2 => self.scene.reflector_brightness,
                        _ => base,
                    };
                }
                *a = sum;
            }
        }
        MaskImage::from_fn(k.width, k.height, |c, r| {
            let v = acc[r as usize * w + c as usize] / 4.0;
            v.min(self.scene.saturation) as f32
        })
    }

    /// Render with additive Gaussian noise from `rng`, then saturation clip.
    pub fn render(&self, pose: Option<&PortPose>, rng: &mut impl Rng) -> MaskImage {
        let clean = self.render_clean(pose);
        if !(self.scene.noise_sigma > 0.0) {
            return clean;
        }
        let normal = Normal::new(0.0, self.scene.noise_sigma).expect("positive sigma");
        let sat = self.scene.saturation as f32;
        let data = clean
            .data()
            .iter()
            .map(|&v| (v + normal.sample(rng) as f32).clamp(0.0, sat.min(1.0)))
            .collect();
        MaskImage::new(clean.width(), clean.height(), data).expect("valid image")
    }
}

/// Pixel bounding box of the ring band (with margin), clipped to the image.
fn ring_bounds(pose: &PortPose, model: &PortModel, k: &CameraIntrinsics) -> Option<(usize, usize, usize, usize)> {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    let nu = model.ring_radius();
    for i in 0..720 {
        let t = (i as f64 * 0.5).to_radians();
        let x = pose.to_camera(&Vector3::new(nu * t.cos(), nu * t.sin(), 0.0));
        if x.z <= 1e-6 {
            // ring crosses the camera plane: fall back to the full image
            return Some((0, k.width as usize - 1, 0, k.height as usize - 1));
        }
        let p = project(k, &x).ok()?;
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let m = 4.0;
    let clip = |v: f64, hi: u32| v.clamp(0.0, hi as f64 - 1.0) as usize;
    if x1 + m < 0.0 || y1 + m < 0.0 || x0 - m > k.width as f64 - 1.0 || y0 - m > k.height as f64 - 1.0 {
        return None;
    }
    Some((clip((x0 - m).floor(), k.width), clip((x1 + m).ceil(), k.width), clip((y0 - m).floor(), k.height), clip((y1 + m).ceil(), k.height)))
}

/// Renders one frame with a fresh backdrop (use [`Renderer`] for sequences).
pub fn render_frame(
    pose: &PortPose,
    model: &PortModel,
    k: &CameraIntrinsics,
    scene: &SceneConfig,
    rng: &mut impl Rng,
) -> MaskImage {
    Renderer::new(*k, model.clone(), *scene).render(Some(pose), rng)
}

/// Per-frame noise generator: independent stream `frame` of `seed`.
pub fn frame_rng(seed: u64, frame: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame + 1);
    rng
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub seed: u64,
    pub ring_radius: f64,
    pub camera: CameraIntrinsics,
    pub trajectory: Trajectory,
    pub scene: SceneConfig,
    pub with_events: bool,
    pub simulator: SimulatorConfig,
    /// Intermediate renders per frame interval for event simulation.
    pub event_substeps: u32,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            ring_radius: 0.1,
            camera: CameraIntrinsics::default(),
            trajectory: Trajectory::default(),
            scene: SceneConfig::default(),
            with_events: false,
            simulator: SimulatorConfig::default(),
            event_substeps: 4,
        }
    }
}

fn parse_vec2(e: &KvEntry) -> Result<Vector2<f64>, ConfigError> {
    let v = e.parse_f64_list(&e.value)?;
    if v.len() != 2 {
        return Err(e.invalid("expected two comma-separated numbers"));
    }
    Ok(Vector2::new(v[0], v[1]))
}

fn parse_vec3(e: &KvEntry) -> Result<Vector3<f64>, ConfigError> {
    let v = e.parse_f64_list(&e.value)?;
    if v.len() != 3 {
        return Err(e.invalid("expected three comma-separated numbers"));
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

impl KvConfig for DatasetConfig {
    fn apply(&mut self, e: &KvEntry) -> Result<bool, ConfigError> {
        let v = e.value.as_str();
        let t = &mut self.trajectory;
        let s = &mut self.scene;
        match e.key.as_str() {
            "seed" => self.seed = e.parse(v)?,
            "ring_radius" => self.ring_radius = e.parse_f64(v)?,
            "with_events" => self.with_events = e.parse_bool(v)?,
            "camera.fx" => self.camera.fx = e.parse_f64(v)?,
            "camera.fy" => self.camera.fy = e.parse_f64(v)?,
            "camera.cx" => self.camera.cx = e.parse_f64(v)?,
            "camera.cy" => self.camera.cy = e.parse_f64(v)?,
            "camera.width" => self.camera.width = e.parse_u32(v)?,
            "camera.height" => self.camera.height = e.parse_u32(v)?,
            "trajectory.kind" => t.kind = v.parse().map_err(|r: String| e.invalid(r))?,
            "trajectory.duration_s" => t.duration_s = e.parse_f64(v)?,
            "trajectory.rate_hz" => t.rate_hz = e.parse_f64(v)?,
            "trajectory.start_distance" => t.start_distance = e.parse_f64(v)?,
            "trajectory.end_distance" => t.end_distance = e.parse_f64(v)?,
            "trajectory.offset" => t.offset = parse_vec2(e)?,
            "trajectory.inclination_deg" => t.inclination_deg = e.parse_f64(v)?,
            "trajectory.azimuth_deg" => t.azimuth_deg = e.parse_f64(v)?,
            "trajectory.yaw_rate_deg_s" => t.yaw_rate_deg_s = e.parse_f64(v)?,
            "trajectory.angular_rate_deg_s" => t.angular_rate_deg_s = e.parse_f64(v)?,
            "trajectory.tumble_axis" => t.tumble_axis = parse_vec3(e)?,
            "scene.background" => s.background = e.parse_f64(v)?,
            "scene.ring_brightness" => s.ring_brightness = e.parse_f64(v)?,
            "scene.reflector_brightness" => s.reflector_brightness = e.parse_f64(v)?,
            "scene.texture_amplitude" => s.texture_amplitude = e.parse_f64(v)?,
            "scene.noise_sigma" => s.noise_sigma = e.parse_f64(v)?,
            "scene.saturation" => s.saturation = e.parse_f64(v)?,
            "scene.distractor_count" => s.distractor_count = e.parse_u32(v)?,
            "scene.ring_width_px" => s.ring_width_px = e.parse_f64(v)?,
            "scene.port_visible" => s.port_visible = e.parse_bool(v)?,
            "events.contrast" => self.simulator.contrast = e.parse_f64(v)?,
            "events.noise_rate" => self.simulator.noise_rate = e.parse_f64(v)?,
            "events.substeps" => self.event_substeps = e.parse_u32(v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(String, String)> {
        let t = &self.trajectory;
        let s = &self.scene;
        let k = &self.camera;
        [
            ("seed", self.seed.to_string()),
            ("ring_radius", self.ring_radius.to_string()),
            ("with_events", self.with_events.to_string()),
            ("camera.fx", k.fx.to_string()),
            ("camera.fy", k.fy.to_string()),
            ("camera.cx", k.cx.to_string()),
            ("camera.cy", k.cy.to_string()),
            ("camera.width", k.width.to_string()),
            ("camera.height", k.height.to_string()),
            ("trajectory.kind", t.kind.to_string()),
            ("trajectory.duration_s", t.duration_s.to_string()),
            ("trajectory.rate_hz", t.rate_hz.to_string()),
            ("trajectory.start_distance", t.start_distance.to_string()),
            ("trajectory.end_distance", t.end_distance.to_string()),
            ("trajectory.offset", format!("{},{}", t.offset.x, t.offset.y)),
            ("trajectory.inclination_deg", t.inclination_deg.to_string()),
            ("trajectory.azimuth_deg", t.azimuth_deg.to_string()),
            ("trajectory.yaw_rate_deg_s", t.yaw_rate_deg_s.to_string()),
            ("trajectory.angular_rate_deg_s", t.angular_rate_deg_s.to_string()),
            (
                "trajectory.tumble_axis",
                format!("{},{},{}", t.tumble_axis.x, t.tumble_axis.y, t.tumble_axis.z),
            ),
            ("scene.background", s.background.to_string()),
            ("scene.ring_brightness", s.ring_brightness.to_string()),
            ("scene.reflector_brightness", s.reflector_brightness.to_string()),
            ("scene.texture_amplitude", s.texture_amplitude.to_string()),
            ("scene.noise_sigma", s.noise_sigma.to_string()),
            ("scene.saturation", s.saturation.to_string()),
            ("scene.distractor_count", s.distractor_count.to_string()),
            ("scene.ring_width_px", s.ring_width_px.to_string()),
            ("scene.port_visible", s.port_visible.to_string()),
            ("events.contrast", self.simulator.contrast.to_string()),
            ("events.noise_rate", self.simulator.noise_rate.to_string()),
            ("events.substeps", self.event_substeps.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, reason: String| ConfigError::Invalid { key: key.into(), reason };
        self.camera.validate().map_err(|e| bad("camera", e.to_string()))?;
        if !(self.ring_radius > 0.0) {
            return Err(bad("ring_radius", "must be > 0".into()));
        }
        self.trajectory.validate().map_err(|e| bad("trajectory", e.to_string()))?;
        let s = &self.scene;
        for (k, v) in [
            ("scene.background", s.background),
            ("scene.ring_brightness", s.ring_brightness),
            ("scene.reflector_brightness", s.reflector_brightness),
            ("scene.texture_amplitude", s.texture_amplitude),
            ("scene.noise_sigma", s.noise_sigma),
            ("scene.saturation", s.saturation),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(k, format!("{v} outside [0, 1]")));
            }
        }
        if !(s.ring_width_px > 0.0) {
            return Err(bad("scene.ring_width_px", "must be > 0".into()));
        }
        if !(self.simulator.contrast > 0.0) || self.simulator.noise_rate < 0.0 {
            return Err(bad("events", "contrast must be > 0 and noise rate >= 0".into()));
        }
        if self.event_substeps == 0 {
            return Err(bad("events.substeps", "must be >= 1".into()));
        }
        Ok(())
    }
}

impl DatasetConfig {
    pub fn model(&self) -> PortModel {
        PortModel::with_radius(self.ring_radius).expect("validated radius")
    }

    fn trajectory_seeded(&self) -> Trajectory {
        Trajectory {
            seed: self.seed,
            ..self.trajectory
        }
    }

    fn scene_seeded(&self) -> SceneConfig {
        SceneConfig {
            texture_seed: self.seed,
            ..self.scene
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub frames: usize,
    pub events: usize,
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// Writes frames, masks, poses, camera, manifest and (optionally) events.
/// Output is a pure function of `cfg`.
pub fn generate_dataset(cfg: &DatasetConfig, out_dir: &Path) -> Result<DatasetSummary, SynthError> {
    cfg.validate()
        .map_err(|e| SynthError::Trajectory(e.to_string()))?;
    let model = cfg.model();
    let k = cfg.camera;
    let traj = cfg.trajectory_seeded();
    let rows = traj.sample()?;
    for d in [out_dir.to_path_buf(), out_dir.join("frames"), out_dir.join("masks")] {
        std::fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let renderer = Renderer::new(k, model.clone(), cfg.scene_seeded());
    for (i, row) in rows.iter().enumerate() {
        let frame = renderer.render(Some(&row.pose), &mut frame_rng(cfg.seed, i as u64));
        write(&dataset::frame_path(out_dir, i), &frame.to_pgm())?;
        let (ring, refl) = render_gt_masks(&row.pose, &model, &k);
        write(&dataset::ring_mask_path(out_dir, i), &ring.to_pgm())?;
        write(&dataset::reflector_mask_path(out_dir, i), &refl.to_pgm())?;
    }
    write(&out_dir.join(dataset::POSES), dataset::poses_to_csv(&rows).as_bytes())?;
    write(&out_dir.join(dataset::CAMERA), k.to_kv_string().as_bytes())?;

    let mut n_events = 0;
    if cfg.with_events {
        let stream = simulate_sequence(cfg, &renderer, &rows)?;
        n_events = stream.events.len();
        stream.save(&out_dir.join(dataset::EVENTS))?;
    }
    let mut manifest = cfg.entries();
    manifest.push(("frames".into(), rows.len().to_string()));
    manifest.push(("events".into(), n_events.to_string()));
    write(&out_dir.join(dataset::MANIFEST), render_kv(&manifest).as_bytes())?;
    Ok(DatasetSummary {
        frames: rows.len(),
        events: n_events,
    })
}

/// Event stream over the whole trajectory from noise-free renders at
/// `event_substeps` interpolated poses per frame interval.
pub fn simulate_sequence(
    cfg: &DatasetConfig,
    renderer: &Renderer,
    rows: &[PoseRecord],
) -> Result<EventStream, SynthError> {
    let k = renderer.camera();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_E7E7);
    let mut events = Vec::new();
    let sub = cfg.event_substeps.max(1) as usize;
    let mut prev: Option<(u64, MaskImage)> = None;
    for w in rows.windows(2).map(Some).chain(std::iter::once(None)) {
        let steps: Vec<(u64, PortPose)> = match w {
            Some([a, b]) => (0..sub)
                .map(|j| {
                    let f = j as f64 / sub as f64;
                    let t = a.timestamp_us + ((b.timestamp_us - a.timestamp_us) as f64 * f).round() as u64;
                    (t, interpolate(&a.pose, &b.pose, f))
                })
                .collect(),
            _ => rows.last().map(|r| vec![(r.timestamp_us, r.pose)]).unwrap_or_default(),
        };
        for (t, pose) in steps {
            let img = renderer.render_clean(Some(&pose));
            if let Some((tp, ref prev_img)) = prev {
                if t > tp {
                    events.extend(simulate_events(prev_img, &img, tp, t, &cfg.simulator, &mut rng)?);
                }
            }
            prev = Some((t, img));
        }
    }
    Ok(EventStream::new(k.width, k.height, events)?)
}

/// Linear position and slerp rotation.
pub fn interpolate(a: &PortPose, b: &PortPose, f: f64) -> PortPose {
    let qa = UnitQuaternion::from_rotation_matrix(&a.rotation);
    let qb = UnitQuaternion::from_rotation_matrix(&b.rotation);
    let q = qa.slerp(&qb, f);
    PortPose::new(q.to_rotation_matrix(), a.position.lerp(&b.position, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::geodesic_angle;

    #[test]
    fn approach_trajectory() {
        let t = Trajectory::default();
        let rows = t.sample().unwrap();
        assert_eq!(rows.len(), 100);
        assert!(rows.windows(2).all(|w| w[1].pose.position.norm() < w[0].pose.position.norm()));
        assert_eq!(rows, t.sample().unwrap());
        assert!((rows[0].pose.inclination_deg() - 30.0).abs() < 1e-9);
    }

    #[test]
    fn tumble_about_normal_keeps_normal() {
        let t = Trajectory {
            kind: TrajectoryKind::Tumble,
            start_distance: 0.7,
            angular_rate_deg_s: 20.0,
            ..Default::default()
        };
        let rows = t.sample().unwrap();
        let n0 = rows[0].pose.normal();
        for r in &rows {
            assert!((r.pose.position - rows[0].pose.position).norm() < 1e-12);
            assert!((r.pose.normal() - n0).norm() < 1e-9);
        }
        assert!(geodesic_angle(&rows[0].pose.rotation, &rows[5].pose.rotation) > 5.0);
    }

    #[test]
    fn invalid_trajectories_rejected() {
        let bad = Trajectory {
            end_distance: -0.1,
            ..Default::default()
        };
        assert!(bad.sample().is_err());
        let bad = Trajectory {
            duration_s: 0.0,
            ..Default::default()
        };
        assert!(bad.sample().is_err());
    }

    #[test]
    fn fronto_parallel_conic_is_circle() {
        let k = CameraIntrinsics::davis346();
        let pose = PortPose::from_normal_yaw(&-Vector3::z(), 10.0, Vector3::new(0.0, 0.0, 0.6));
        let e = projected_ring_conic(&pose, &PortModel::default(), &k).unwrap();
        assert!((e.center - Vector2::new(k.cx, k.cy)).norm() < 1e-9);
        assert!((e.semi_major - 55.0).abs() < 1e-9 && (e.semi_minor - 55.0).abs() < 1e-9);
    }

    #[test]
    fn clean_render_is_binary() {
        let k = CameraIntrinsics::davis346();
        let pose = PortPose::from_normal_yaw(&Vector3::new(0.2, 0.1, -1.0), 0.0, Vector3::new(0.0, 0.0, 0.6));
        let scene = SceneConfig::clean();
        let img = render_frame(&pose, &PortModel::default(), &k, &scene, &mut frame_rng(0, 0));
        let thresholded: std::collections::BTreeSet<u8> =
            img.data().iter().map(|&v| if v >= 0.5 { 1 } else { 0 }).collect();
        assert_eq!(thresholded.into_iter().collect::<Vec<_>>(), vec![0, 1]);
        assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn config_round_trip() {
        let mut cfg = DatasetConfig::default();
        cfg.trajectory.kind = TrajectoryKind::Orbit;
        cfg.trajectory.offset = Vector2::new(0.01, -0.02);
        cfg.scene.distractor_count = 3;
        let entries = crate::config::parse_kv(&render_kv(&cfg.entries())).unwrap();
        let mut back = DatasetConfig::default();
        crate::config::apply_all(&entries, &mut [&mut back], &[]).unwrap();
        assert_eq!(back, cfg);
    }
}

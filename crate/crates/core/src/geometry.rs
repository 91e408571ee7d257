//! Pinhole camera model, rotation helpers and the docking-port geometric model.
//!
//! Conventions used throughout the crate:
//! - Camera frame: +x right, +y down, +z along the optical axis.
//! - Port frame: origin at the ring centre, +z along the outward normal of the
//!   port face, reflector rectangles lie in the z = 0 plane.
//! - A [`PortPose`] maps port-frame points into the camera frame:
//!   `x_cam = R * x_port + p`.
//! - Angles are degrees at API boundaries and radians internally.

use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector2, Vector3};
use thiserror::Error;

use crate::config::{parse_kv, ConfigError};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("point has non-positive depth z = {0}")]
    NonPositiveDepth(f64),
    #[error("invalid port model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Pinhole intrinsics. No distortion model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// DAVIS-346-like sensor: 346x260 px, fx = fy = 330 px, centred principal point.
    pub fn davis346() -> Self {
        Self {
            fx: 330.0,
            fy: 330.0,
            cx: 173.0,
            cy: 130.0,
            width: 346,
            height: 260,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidIntrinsics(m));
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return bad(format!("focal lengths must be positive, got fx={} fy={}", self.fx, self.fy));
        }
        if self.width < 8 || self.height < 8 {
            return bad(format!("image must be at least 8x8, got {}x{}", self.width, self.height));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad(format!("cx={} outside [0, {})", self.cx, self.width));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad(format!("cy={} outside [0, {})", self.cy, self.height));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// True when the pixel centre lies inside the sensor area.
    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= -0.5
            && px.y >= -0.5
            && px.x < self.width as f64 - 0.5
            && px.y < self.height as f64 - 0.5
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Parse the `key = value` intrinsics format (`fx`, `fy`, `cx`, `cy`, `width`, `height`).
    pub fn from_kv_str(text: &str) -> Result<Self, GeometryError> {
        let mut fx = None;
        let mut fy = None;
        let mut cx = None;
        let mut cy = None;
        let mut width = None;
        let mut height = None;
        for entry in parse_kv(text)? {
            let slot_f = |v: &str| entry.parse_f64(v);
            match entry.key.as_str() {
                "fx" => fx = Some(slot_f(&entry.value)?),
                "fy" => fy = Some(slot_f(&entry.value)?),
                "cx" => cx = Some(slot_f(&entry.value)?),
                "cy" => cy = Some(slot_f(&entry.value)?),
                "width" => width = Some(entry.parse_u32(&entry.value)?),
                "height" => height = Some(entry.parse_u32(&entry.value)?),
                _ => return Err(ConfigError::UnknownKey { key: entry.key.clone(), line: entry.line }.into()),
            }
        }
        let need = |name: &str| ConfigError::MissingKey(name.to_string());
        Self::new(
            fx.ok_or_else(|| need("fx"))?,
            fy.ok_or_else(|| need("fy"))?,
            cx.ok_or_else(|| need("cx"))?,
            cy.ok_or_else(|| need("cy"))?,
            width.ok_or_else(|| need("width"))?,
            height.ok_or_else(|| need("height"))?,
        )
    }

    pub fn to_kv_string(&self) -> String {
        format!(
            "fx = {}\nfy = {}\ncx = {}\ncy = {}\nwidth = {}\nheight = {}\n",
            self.fx, self.fy, self.cx, self.cy, self.width, self.height
        )
    }

    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        let text = std::fs::read_to_string(path).map_err(|source| GeometryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_kv_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), GeometryError> {
        std::fs::write(path, self.to_kv_string()).map_err(|source| GeometryError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self::davis346()
    }
}

/// Unit-norm viewing direction in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitRay(Unit<Vector3<f64>>);

impl UnitRay {
    /// Normalizes `v`. Returns `None` for zero or non-finite vectors.
    pub fn new(v: Vector3<f64>) -> Option<Self> {
        if !v.iter().all(|c| c.is_finite()) {
            return None;
        }
        Unit::try_new(v, 1e-300).map(Self)
    }

    pub fn z_axis() -> Self {
        Self(Vector3::z_axis())
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        self.0.as_ref()
    }

    pub fn as_unit(&self) -> &Unit<Vector3<f64>> {
        &self.0
    }
}

impl std::ops::Deref for UnitRay {
    type Target = Vector3<f64>;
    fn deref(&self) -> &Vector3<f64> {
        self.0.as_ref()
    }
}

/// Normalized `K^-1 [x; 1]`.
pub fn back_project(k: &CameraIntrinsics, pixel: &Vector2<f64>) -> UnitRay {
    let v = Vector3::new((pixel.x - k.cx) / k.fx, (pixel.y - k.cy) / k.fy, 1.0);
    // z = 1 keeps the vector non-zero for any finite pixel.
    UnitRay(Unit::new_normalize(v))
}

pub fn project(k: &CameraIntrinsics, point: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
    if !(point.z > 0.0) {
        return Err(GeometryError::NonPositiveDepth(point.z));
    }
    Ok(Vector2::new(
        k.fx * point.x / point.z + k.cx,
        k.fy * point.y / point.z + k.cy,
    ))
}

/// Geodesic distance between two rotations in degrees, in [0, 180].
pub fn geodesic_angle(a: &Rotation3<f64>, b: &Rotation3<f64>) -> f64 {
    // atan2 of (sin, cos) is the arccos of the trace expression without its
    // loss of precision near 0° and 180°
    let rel = a.matrix().transpose() * b.matrix();
    let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let s = 0.5
        * Vector3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        )
        .norm();
    s.atan2(c).to_degrees()
}

/// Rodrigues rotation about `axis` by `angle_deg`.
pub fn rotation_about_axis(axis: &UnitRay, angle_deg: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(axis.as_unit(), angle_deg.to_radians())
}

pub fn rot_z(angle_deg: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), angle_deg.to_radians())
}

/// Yaw-zero reference rotation for a port whose outward normal is `normal`
/// (camera frame). The port z-axis maps onto `normal`.
///
/// Built as a 180° flip about x (port +z onto camera -z) followed by the
/// minimal rotation from camera -z to `normal`. The minimal rotation is only
/// singular for `normal = +z`, which cannot face a camera looking at a port in
/// front of it.
pub fn base_rotation(normal: &Vector3<f64>) -> Rotation3<f64> {
    let flip = Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI);
    let minus_z = -Vector3::z();
    let n = normal.normalize();
    let align = Rotation3::rotation_between(&minus_z, &n).unwrap_or_else(|| {
        // n == +z: any half turn perpendicular to z
        Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI)
    });
    align * flip
}

/// Rotation plus position of the port frame in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortPose {
    pub rotation: Rotation3<f64>,
    pub position: Vector3<f64>,
}

impl PortPose {
    pub fn new(rotation: Rotation3<f64>, position: Vector3<f64>) -> Self {
        Self { rotation, position }
    }

    /// Pose with the given outward normal and yaw about it, relative to [`base_rotation`].
    pub fn from_normal_yaw(normal: &Vector3<f64>, yaw_deg: f64, position: Vector3<f64>) -> Self {
        Self {
            rotation: base_rotation(normal) * rot_z(yaw_deg),
            position,
        }
    }

    /// Port outward normal expressed in the camera frame.
    pub fn normal(&self) -> Vector3<f64> {
        self.rotation * Vector3::z()
    }

    pub fn to_camera(&self, port_point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * port_point + self.position
    }

    /// Angle between the port normal and the direction from the port to the camera, in degrees.
    pub fn inclination_deg(&self) -> f64 {
        let to_cam = -self.position.normalize();
        self.normal().dot(&to_cam).clamp(-1.0, 1.0).acos().to_degrees()
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&self.rotation)
    }

    /// Quaternion components as (w, x, y, z) with w >= 0.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.quaternion();
        let mut c = [q.w, q.i, q.j, q.k];
        if c[0] < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        c
    }

    pub fn from_quaternion_wxyz(q: [f64; 4], position: Vector3<f64>) -> Self {
        let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        Self {
            rotation: uq.to_rotation_matrix(),
            position,
        }
    }
}

impl fmt::Display for PortPose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.quaternion_wxyz();
        write!(
            f,
            "p=({:.4}, {:.4}, {:.4}) q=({:.4}, {:.4}, {:.4}, {:.4})",
            self.position.x, self.position.y, self.position.z, q[0], q[1], q[2], q[3]
        )
    }
}

/// Ring radius plus three reflector rectangles in port-plane coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PortModel {
    ring_radius: f64,
    reflectors: [[Vector2<f64>; 4]; 3],
}

impl PortModel {
    pub const SYMMETRY_ORDER: u32 = 3;

    /// Standard layout scaled to `ring_radius`: three tangential rectangles
    /// centred at 0.62 ν, 120° apart, 0.30 ν long and 0.14 ν wide.
    pub fn with_radius(ring_radius: f64) -> Result<Self, GeometryError> {
        if !(ring_radius.is_finite() && ring_radius > 0.0) {
            return Err(GeometryError::InvalidModel(format!(
                "ring radius must be positive, got {ring_radius}"
            )));
        }
        let r = 0.62 * ring_radius;
        let half_len = 0.15 * ring_radius;
        let half_w = 0.07 * ring_radius;
        let base = [
            Vector2::new(r - half_w, -half_len),
            Vector2::new(r + half_w, -half_len),
            Vector2::new(r + half_w, half_len),
            Vector2::new(r - half_w, half_len),
        ];
        let mut reflectors = [[Vector2::zeros(); 4]; 3];
        for (k, quad) in reflectors.iter_mut().enumerate() {
            let a = (90.0 + 120.0 * k as f64).to_radians();
            let (s, c) = a.sin_cos();
            for (dst, src) in quad.iter_mut().zip(base.iter()) {
                *dst = Vector2::new(c * src.x - s * src.y, s * src.x + c * src.y);
            }
        }
        Ok(Self {
            ring_radius,
            reflectors,
        })
    }

    pub fn ring_radius(&self) -> f64 {
        self.ring_radius
    }

    pub fn reflectors(&self) -> &[[Vector2<f64>; 4]; 3] {
        &self.reflectors
    }

    pub fn symmetry_order(&self) -> u32 {
        Self::SYMMETRY_ORDER
    }

    /// Reflector corners lifted into 3D port coordinates (z = 0).
    pub fn reflector_corners_3d(&self) -> [[Vector3<f64>; 4]; 3] {
        self.reflectors
            .map(|quad| quad.map(|c| Vector3::new(c.x, c.y, 0.0)))
    }
}

impl Default for PortModel {
    fn default() -> Self {
        Self::with_radius(0.1).expect("positive default radius")
    }
}

//! Conic representation, five-point solve, RANSAC ellipse fitting and
//! least-squares refinement.
//!
//! Conics use the implicit form `A x² + B xy + C y² + D x + E y + F = 0`
//! with `F` fixed to 1. Because that parameterization cannot represent conics
//! through the origin and is badly conditioned in raw pixel coordinates, every
//! solve runs on Hartley-normalized points (zero centroid, RMS radius √2) and
//! the result is mapped back to the pixel frame.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix5, Vector2, Vector5};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Distance reported for points where the implicit gradient vanishes (the ellipse centre).
pub const FAR_DISTANCE: f64 = 1.0e12;

const SINGULAR_RATIO: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EllipseError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("all points coincide")]
    CoincidentPoints,
    #[error("singular linear system (degenerate sample)")]
    Singular,
    #[error("conic is not an ellipse")]
    NotEllipse,
    #[error("conic passes through the origin and has no F = 1 form")]
    ThroughOrigin,
    #[error("invalid ellipse axes: {0}")]
    InvalidAxes(String),
    #[error("no ellipse hypothesis survived")]
    NotFound,
}

/// Implicit conic with `F = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
}

impl Conic {
    pub const F: f64 = 1.0;

    pub fn new(a: f64, b: f64, c: f64, d: f64, e: f64) -> Self {
        Self { a, b, c, d, e }
    }

    /// Scales a general 6-coefficient conic so that `F = 1`.
    pub fn from_general(g: &[f64; 6]) -> Result<Self, EllipseError> {
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(scale > 0.0) || g[5].abs() <= 1e-12 * scale {
            return Err(EllipseError::ThroughOrigin);
        }
        let f = g[5];
        Ok(Self::new(g[0] / f, g[1] / f, g[2] / f, g[3] / f, g[4] / f))
    }

    pub fn general(&self) -> [f64; 6] {
        [self.a, self.b, self.c, self.d, self.e, Self::F]
    }

    pub fn evaluate(&self, p: &Vector2<f64>) -> f64 {
        eval_general(&self.general(), p)
    }

    pub fn discriminant(&self) -> f64 {
        self.b * self.b - 4.0 * self.a * self.c
    }

    pub fn is_ellipse(&self) -> bool {
        self.discriminant() < 0.0 && conic_to_axes(self).is_ok()
    }

    /// RMS of the algebraic residual of `points` in their own normalized frame,
    /// with the conic rescaled to `F = 1` there. This is the quantity minimized
    /// by [`refine_least_squares`].
    pub fn algebraic_rms(&self, points: &[Vector2<f64>]) -> Result<f64, EllipseError> {
        let (norm, t) = normalize_points(points)?;
        let g = Conic::from_general(&transform_general(&self.general(), &t.inverse_matrix()))?;
        let ss: f64 = norm.iter().map(|p| g.evaluate(p).powi(2)).sum();
        Ok((ss / norm.len() as f64).sqrt())
    }
}

/// Centre, semi-axes and major-axis direction of an ellipse, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseAxes {
    pub center: Vector2<f64>,
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Major-axis direction in radians, in [0, π).
    pub angle: f64,
}

impl EllipseAxes {
    pub fn new(
        center: Vector2<f64>,
        semi_major: f64,
        semi_minor: f64,
        angle: f64,
    ) -> Result<Self, EllipseError> {
        if !(semi_minor > 0.0 && semi_major >= semi_minor && semi_major.is_finite()) {
            return Err(EllipseError::InvalidAxes(format!(
                "need a >= b > 0, got a={semi_major} b={semi_minor}"
            )));
        }
        if !(center.x.is_finite() && center.y.is_finite() && angle.is_finite()) {
            return Err(EllipseError::InvalidAxes("non-finite centre or angle".into()));
        }
        Ok(Self {
            center,
            semi_major,
            semi_minor,
            angle: angle.rem_euclid(std::f64::consts::PI),
        })
    }

    pub fn major_direction(&self) -> Vector2<f64> {
        Vector2::new(self.angle.cos(), self.angle.sin())
    }

    pub fn minor_direction(&self) -> Vector2<f64> {
        Vector2::new(-self.angle.sin(), self.angle.cos())
    }

    /// `[center - a·u, center + a·u]` with `u` the major direction.
    pub fn major_endpoints(&self) -> [Vector2<f64>; 2] {
        let u = self.major_direction() * self.semi_major;
        [self.center - u, self.center + u]
    }

    /// `[center + b·w, center - b·w]` with `w` the minor direction.
    pub fn minor_endpoints(&self) -> [Vector2<f64>; 2] {
        let w = self.minor_direction() * self.semi_minor;
        [self.center + w, self.center - w]
    }

    pub fn point_at(&self, t: f64) -> Vector2<f64> {
        self.center
            + self.major_direction() * (self.semi_major * t.cos())
            + self.minor_direction() * (self.semi_minor * t.sin())
    }

    pub fn axis_ratio(&self) -> f64 {
        self.semi_minor / self.semi_major
    }

    /// Ramanujan's perimeter approximation.
    pub fn perimeter(&self) -> f64 {
        let (a, b) = (self.semi_major, self.semi_minor);
        let h = ((a - b) / (a + b)).powi(2);
        std::f64::consts::PI * (a + b) * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()))
    }

    /// Coefficients `[A, B, C, D, E, F]` of the implicit form.
    pub fn general(&self) -> [f64; 6] {
        let (s, c) = self.angle.sin_cos();
        let ia = 1.0 / (self.semi_major * self.semi_major);
        let ib = 1.0 / (self.semi_minor * self.semi_minor);
        let a = c * c * ia + s * s * ib;
        let b = 2.0 * c * s * (ia - ib);
        let cc = s * s * ia + c * c * ib;
        let (h, k) = (self.center.x, self.center.y);
        let d = -2.0 * a * h - b * k;
        let e = -b * h - 2.0 * cc * k;
        let f = a * h * h + b * h * k + cc * k * k - 1.0;
        [a, b, cc, d, e, f]
    }
}

/// Similarity transform `x' = s (x - centroid)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointNormalization {
    pub centroid: Vector2<f64>,
    pub scale: f64,
}

impl PointNormalization {
    pub fn apply(&self, p: &Vector2<f64>) -> Vector2<f64> {
        (p - self.centroid) * self.scale
    }

    pub fn invert(&self, q: &Vector2<f64>) -> Vector2<f64> {
        q / self.scale + self.centroid
    }

    /// Homogeneous matrix of the forward map.
    pub fn matrix(&self) -> Matrix3<f64> {
        let s = self.scale;
        Matrix3::new(
            s,
            0.0,
            -s * self.centroid.x,
            0.0,
            s,
            -s * self.centroid.y,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        let inv = 1.0 / self.scale;
        Matrix3::new(
            inv,
            0.0,
            self.centroid.x,
            0.0,
            inv,
            self.centroid.y,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// Moves the centroid to the origin and scales to RMS radius √2.
pub fn normalize_points(
    points: &[Vector2<f64>],
) -> Result<(Vec<Vector2<f64>>, PointNormalization), EllipseError> {
    if points.len() < 5 {
        return Err(EllipseError::TooFewPoints {
            needed: 5,
            got: points.len(),
        });
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector2<f64>>() / n;
    let ms = points.iter().map(|p| (p - centroid).norm_squared()).sum::<f64>() / n;
    if !(ms > 0.0) || !ms.is_finite() {
        return Err(EllipseError::CoincidentPoints);
    }
    let t = PointNormalization {
        centroid,
        scale: (2.0 / ms).sqrt(),
    };
    Ok((points.iter().map(|p| t.apply(p)).collect(), t))
}

fn design_row(p: &Vector2<f64>) -> [f64; 5] {
    [p.x * p.x, p.x * p.y, p.y * p.y, p.x, p.y]
}

/// Solves for the conic through five points (normalized coordinates expected).
pub fn fit_conic_5pts(points: &[Vector2<f64>; 5]) -> Result<Conic, EllipseError> {
    let m = Matrix5::from_fn(|r, c| design_row(&points[r])[c]);
    let svd = m.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= SINGULAR_RATIO * smax {
        return Err(EllipseError::Singular);
    }
    let x = svd
        .solve(&-Vector5::repeat(1.0), 0.0)
        .map_err(|_| EllipseError::Singular)?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(EllipseError::Singular);
    }
    let conic = Conic::new(x[0], x[1], x[2], x[3], x[4]);
    if conic.discriminant() >= 0.0 {
        return Err(EllipseError::NotEllipse);
    }
    Ok(conic)
}

pub fn conic_to_axes(c: &Conic) -> Result<EllipseAxes, EllipseError> {
    general_to_axes(&c.general())
}

pub fn axes_to_conic(e: &EllipseAxes) -> Result<Conic, EllipseError> {
    Conic::from_general(&e.general())
}

/// Centre/axes/angle of a general conic of any scale or sign.
pub fn general_to_axes(g: &[f64; 6]) -> Result<EllipseAxes, EllipseError> {
    let [a, b, c, d, e, f] = *g;
    if !g.iter().all(|v| v.is_finite()) {
        return Err(EllipseError::NotEllipse);
    }
    let det2 = 4.0 * a * c - b * b;
    if !(det2 > 0.0) {
        return Err(EllipseError::NotEllipse);
    }
    let x0 = (b * e - 2.0 * c * d) / det2;
    let y0 = (b * d - 2.0 * a * e) / det2;
    let f0 = f + 0.5 * (d * x0 + e * y0);
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + 0.25 * b * b).sqrt();
    let lam_hi = mean + rad;
    let lam_lo = mean - rad;
    let circular = rad <= 1e-15 * mean.abs();
    let theta_hi = if circular { 0.0 } else { 0.5 * b.atan2(a - c) };
    // semi-axis² = -f0 / λ; the major axis pairs with the eigenvalue of smaller magnitude
    let (lam_major, lam_minor, angle) = if mean > 0.0 {
        let ang = if circular { 0.0 } else { theta_hi + std::f64::consts::FRAC_PI_2 };
        (lam_lo, lam_hi, ang)
    } else {
        (lam_hi, lam_lo, theta_hi)
    };
    let a2 = -f0 / lam_major;
    let b2 = -f0 / lam_minor;
    if !(a2 > 0.0 && b2 > 0.0) || !a2.is_finite() || !b2.is_finite() {
        return Err(EllipseError::NotEllipse);
    }
    let (sa, sb) = (a2.sqrt(), b2.sqrt());
    EllipseAxes::new(Vector2::new(x0, y0), sa.max(sb), sa.min(sb), angle)
}

fn eval_general(g: &[f64; 6], p: &Vector2<f64>) -> f64 {
    g[0] * p.x * p.x + g[1] * p.x * p.y + g[2] * p.y * p.y + g[3] * p.x + g[4] * p.y + g[5]
}

fn general_matrix(g: &[f64; 6]) -> Matrix3<f64> {
    Matrix3::new(
        g[0],
        0.5 * g[1],
        0.5 * g[3],
        0.5 * g[1],
        g[2],
        0.5 * g[4],
        0.5 * g[3],
        0.5 * g[4],
        g[5],
    )
}

/// Conic expressed in the source frame of the homogeneous map `x' = T x`
/// (i.e. `Tᵀ M T`).
fn transform_general(g: &[f64; 6], t: &Matrix3<f64>) -> [f64; 6] {
    let m = t.transpose() * general_matrix(g) * t;
    [
        m[(0, 0)],
        2.0 * m[(0, 1)],
        m[(1, 1)],
        2.0 * m[(0, 2)],
        2.0 * m[(1, 2)],
        m[(2, 2)],
    ]
}

/// Distance from `pt` to the ellipse measured along the implicit-function
/// gradient direction.
///
/// The implicit form is quadratic, so the crossing along the gradient line is
/// a closed-form root. It equals the Sampson distance `|Q|/‖∇Q‖` to first
/// order, is exact for circles, and falls back to Sampson when the gradient
/// line misses the curve.
pub fn point_distance(e: &EllipseAxes, pt: &Vector2<f64>) -> f64 {
    let d = pt - e.center;
    let (s, c) = e.angle.sin_cos();
    let u = d.x * c + d.y * s;
    let v = -d.x * s + d.y * c;
    let ia = 1.0 / (e.semi_major * e.semi_major);
    let ib = 1.0 / (e.semi_minor * e.semi_minor);
    let q = u * u * ia + v * v * ib - 1.0;
    let gu = 2.0 * u * ia;
    let gv = 2.0 * v * ib;
    let gn = (gu * gu + gv * gv).sqrt();
    if !(gn > 1e-12 * ia.sqrt()) {
        return FAR_DISTANCE;
    }
    let (hu, hv) = (gu / gn, gv / gn);
    let k = hu * hu * ia + hv * hv * ib;
    let disc = gn * gn - 4.0 * k * q;
    if disc < 0.0 {
        return q.abs() / gn;
    }
    2.0 * q.abs() / (gn + disc.sqrt())
}

/// Result of [`ransac_ellipse`].
#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    /// Final (refined when refinement succeeded) ellipse.
    pub ellipse: EllipseAxes,
    /// Indices of points within the inlier tolerance of `ellipse`.
    pub inliers: Vec<usize>,
    /// Best five-point hypothesis before refinement.
    pub hypothesis: EllipseAxes,
    /// Inlier count of the hypothesis.
    pub hypothesis_inliers: usize,
    pub iterations: usize,
    pub early_exit: bool,
    pub refined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Inlier distance bound in pixels.
    pub inlier_tolerance: f64,
    /// Minimum accepted semi-minor / semi-major ratio.
    pub min_axis_ratio: f64,
    pub rng_seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            inlier_tolerance: 2.0,
            min_axis_ratio: 0.15,
            rng_seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations < 1 {
            return Err("max_iterations must be >= 1".into());
        }
        if !(self.inlier_tolerance > 0.0) {
            return Err("inlier_tolerance must be > 0".into());
        }
        if !(self.min_axis_ratio > 0.0 && self.min_axis_ratio <= 1.0) {
            return Err("min_axis_ratio must be in (0, 1]".into());
        }
        Ok(())
    }
}

/// RANSAC ellipse fit with uniform five-point sampling from a seeded RNG.
pub fn ransac_ellipse(points: &[Vector2<f64>], cfg: &RansacConfig) -> Result<RansacFit, EllipseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let n = points.len();
    ransac_with_sampler(points, cfg, || {
        let s = index::sample(&mut rng, n, 5);
        [s.index(0), s.index(1), s.index(2), s.index(3), s.index(4)]
    })
}

/// Same loop as [`ransac_ellipse`] with caller-provided sample indices.
pub fn ransac_with_sampler(
    points: &[Vector2<f64>],
    cfg: &RansacConfig,
    mut sample: impl FnMut() -> [usize; 5],
) -> Result<RansacFit, EllipseError> {
    let n = points.len();
    if n < 5 {
        return Err(EllipseError::NotFound);
    }
    let (norm, t) = normalize_points(points).map_err(|_| EllipseError::NotFound)?;
    let t_fwd = t.matrix();
    let tol = cfg.inlier_tolerance;

    let mut best: Option<(usize, EllipseAxes)> = None;
    let mut iterations = 0;
    let mut early_exit = false;
    for _ in 0..cfg.max_iterations {
        iterations += 1;
        let idx = sample();
        let sample_pts = idx.map(|i| norm[i]);
        let Ok(conic) = fit_conic_5pts(&sample_pts) else {
            continue;
        };
        let g_pix = transform_general(&conic.general(), &t_fwd);
        let Ok(axes) = general_to_axes(&g_pix) else {
            continue;
        };
        if axes.axis_ratio() < cfg.min_axis_ratio {
            continue;
        }
        let count = points.iter().filter(|p| point_distance(&axes, p) <= tol).count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, axes));
        }
        if count == n {
            early_exit = true;
            break;
        }
    }
    let (hyp_count, hypothesis) = best.ok_or(EllipseError::NotFound)?;

    let hyp_inliers: Vec<Vector2<f64>> = points
        .iter()
        .filter(|p| point_distance(&hypothesis, p) <= tol)
        .copied()
        .collect();
    let refined = refine_general(&hyp_inliers)
        .and_then(|g| general_to_axes(&g).ok())
        .filter(|e| e.axis_ratio() >= cfg.min_axis_ratio);
    let (ellipse, was_refined) = match refined {
        Some(e) => (e, true),
        None => (hypothesis, false),
    };
    let inliers = (0..n)
        .filter(|&i| point_distance(&ellipse, &points[i]) <= tol)
        .collect();
    Ok(RansacFit {
        ellipse,
        inliers,
        hypothesis,
        hypothesis_inliers: hyp_count,
        iterations,
        early_exit,
        refined: was_refined,
    })
}

/// Linear least squares over `[A, B, C, D, E]` with `F = 1` in normalized
/// coordinates; returns the conic in the pixel frame.
pub fn refine_least_squares(inliers: &[Vector2<f64>]) -> Result<Conic, EllipseError> {
    if inliers.len() < 5 {
        return Err(EllipseError::TooFewPoints {
            needed: 5,
            got: inliers.len(),
        });
    }
    let g = refine_general(inliers).ok_or(EllipseError::Singular)?;
    Conic::from_general(&g)
}

fn refine_general(inliers: &[Vector2<f64>]) -> Option<[f64; 6]> {
    let (norm, t) = normalize_points(inliers).ok()?;
    let m = DMatrix::from_fn(norm.len(), 5, |r, c| design_row(&norm[r])[c]);
    let rhs = DVector::from_element(norm.len(), -1.0);
    let svd = m.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= SINGULAR_RATIO * smax {
        return None;
    }
    let x = svd.solve(&rhs, 0.0).ok()?;
    let g_norm = [x[0], x[1], x[2], x[3], x[4], 1.0];
    if !g_norm.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(transform_general(&g_norm, &t.matrix()))
}

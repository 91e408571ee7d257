//! Diagnostic overlays: fitted ellipse and projected reflectors on the frame.

use dockport::geometry::{CameraIntrinsics, PortModel};
use dockport::pose::{projected_reflectors, Estimate};
use dockport::raster::MaskImage;
use nalgebra::Vector2;

const ELLIPSE: f32 = 1.0;
const REFLECTOR: f32 = 0.0;

fn plot(img: &mut MaskImage, p: &Vector2<f64>, v: f32) {
    let (c, r) = (p.x.round(), p.y.round());
    if c >= 0.0 && r >= 0.0 && (c as u32) < img.width() && (r as u32) < img.height() {
        img.set(c as u32, r as u32, v);
    }
}

fn line(img: &mut MaskImage, a: &Vector2<f64>, b: &Vector2<f64>, v: f32) {
    let n = (b - a).abs().max().ceil().clamp(1.0, 4096.0) as usize;
    for i in 0..=n {
        plot(img, &a.lerp(b, i as f64 / n as f64), v);
    }
}

/// Frame dimmed to [0.2, 0.8] with the ellipse in white and reflector
/// outlines in black.
pub fn draw(frame: &MaskImage, e: &Estimate, model: &PortModel, k: &CameraIntrinsics) -> MaskImage {
    let mut img = MaskImage::from_fn(frame.width(), frame.height(), |c, r| 0.2 + 0.6 * frame.get(c, r));
    let n = (e.ellipse.perimeter().ceil() as usize * 2).clamp(64, 8192);
    for i in 0..n {
        let t0 = std::f64::consts::TAU * i as f64 / n as f64;
        let t1 = std::f64::consts::TAU * (i + 1) as f64 / n as f64;
        line(&mut img, &e.ellipse.point_at(t0), &e.ellipse.point_at(t1), ELLIPSE);
    }
    for quad in projected_reflectors(model, &e.pose, k) {
        for j in 0..4 {
            line(&mut img, &quad[j], &quad[(j + 1) % 4], REFLECTOR);
        }
    }
    img
}

//! Training-free baseline filters built from box blurs and quantile thresholds.
//!
//! Ring: thin-structure emphasis `max(0, box3 − box9)`.
//! Reflector: compact-blob emphasis `max(0, box5 − box15)`.
//! The response is scaled so that values above the threshold
//! `τ = max(Q₀.₉₆, 0.3·Q₀.₉₉₉, 0.02)` map above 0.5; at most 4% of pixels
//! can therefore exceed 0.5 on any input.

use super::{FilterError, FrameContext, InputFrame, MaskFilter, Target};
use crate::raster::MaskImage;

const Q_MAIN: f64 = 0.96;
const Q_PEAK: f64 = 0.999;
const PEAK_FRACTION: f32 = 0.3;
const MIN_TAU: f32 = 0.02;

pub struct ClassicalFilter {
    target: Target,
}

impl ClassicalFilter {
    pub fn new(target: Target) -> Self {
        Self { target }
    }
}

impl MaskFilter for ClassicalFilter {
    fn target(&self) -> Target {
        self.target
    }

    fn run(&self, frame: &InputFrame, _ctx: &FrameContext<'_>) -> Result<MaskImage, FilterError> {
        Ok(classical_filter(frame, self.target))
    }
}

pub fn classical_filter(frame: &InputFrame, target: Target) -> MaskImage {
    let lum = frame.luminance();
    let (w, h) = (lum.width() as usize, lum.height() as usize);
    let integral = Integral::new(lum.data(), w, h);
    let (inner, outer) = match target {
        Target::Ring => (1, 4),
        Target::Reflector => (2, 7),
    };
    let mut resp = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let v = integral.mean(x, y, inner) - integral.mean(x, y, outer);
            resp[y * w + x] = v.max(0.0) as f32;
        }
    }
    let tau = threshold(&resp);
    MaskImage::from_fn(lum.width(), lum.height(), |c, r| {
        (resp[r as usize * w + c as usize] / (2.0 * tau)).clamp(0.0, 1.0)
    })
}

fn threshold(resp: &[f32]) -> f32 {
    let mut sorted = resp.to_vec();
    sorted.sort_unstable_by(f32::total_cmp);
    let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
    q(Q_MAIN).max(PEAK_FRACTION * q(Q_PEAK)).max(MIN_TAU)
}

/// Summed-area table for clamped-window box means.
struct Integral {
    w: usize,
    h: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(data: &[f32], w: usize, h: usize) -> Self {
        let mut sums = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += data[y * w + x] as f64;
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w, h, sums }
    }

    /// Mean over the `(2r+1)²` window centred on (x, y), clipped to the image.
    fn mean(&self, x: usize, y: usize, r: usize) -> f64 {
        let x0 = x.saturating_sub(r);
        let y0 = y.saturating_sub(r);
        let x1 = (x + r + 1).min(self.w);
        let y1 = (y + r + 1).min(self.h);
        let s = |xx: usize, yy: usize| self.sums[yy * (self.w + 1) + xx];
        let total = s(x1, y1) - s(x0, y1) - s(x1, y0) + s(x0, y0);
        total / ((x1 - x0) * (y1 - y0)) as f64
    }
}

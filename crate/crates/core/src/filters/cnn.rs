//! Encoder-decoder CNN inference on CPU.

use super::weights::{CnnWeights, Layer, LayerKind};
use super::{FilterError, FrameContext, InputFrame, MaskFilter, Target};
use crate::raster::MaskImage;

/// Dense `c × h × w` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length");
        Self { c, h, w, data }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.h + y) * self.w + x]
    }

    fn plane(&self, c: usize) -> &[f32] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }
}

/// Kernel shape `(out, in, kh, kw)`; weights row-major in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelShape {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kh: usize,
    pub kw: usize,
}

impl KernelShape {
    fn of(l: &Layer) -> Self {
        Self {
            out_ch: l.out_ch as usize,
            in_ch: l.in_ch as usize,
            kh: l.kh as usize,
            kw: l.kw as usize,
        }
    }
}

/// Cross-correlation with zero padding.
/// Output size `floor((in + 2·pad − k) / stride) + 1`.
pub fn conv2d(
    input: &Tensor,
    weights: &[f32],
    bias: &[f32],
    shape: KernelShape,
    stride: usize,
    pad: usize,
) -> Tensor {
    assert_eq!(input.c, shape.in_ch, "conv2d input channels");
    assert_eq!(weights.len(), shape.out_ch * shape.in_ch * shape.kh * shape.kw);
    assert!(stride >= 1);
    let oh = (input.h + 2 * pad - shape.kh) / stride + 1;
    let ow = (input.w + 2 * pad - shape.kw) / stride + 1;
    let mut out = Tensor::zeros(shape.out_ch, oh, ow);
    for o in 0..shape.out_ch {
        let dst = out.plane_mut(o);
        dst.fill(bias[o]);
        for i in 0..shape.in_ch {
            let src = input.plane(i);
            for ky in 0..shape.kh {
                for kx in 0..shape.kw {
                    let wv = weights[((o * shape.in_ch + i) * shape.kh + ky) * shape.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    // valid output columns: 0 <= ox·s + kx − pad < in.w
                    let ox_lo = pad.saturating_sub(kx).div_ceil(stride);
                    let ox_hi = ((input.w + pad).saturating_sub(kx)).div_ceil(stride).min(ow);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= input.h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * input.w..(iy as usize + 1) * input.w];
                        let drow = &mut dst[oy * ow..(oy + 1) * ow];
                        let ix0 = ox_lo * stride + kx - pad;
                        if stride == 1 {
                            let n = ox_hi - ox_lo;
                            for (d, s) in drow[ox_lo..ox_hi].iter_mut().zip(&row[ix0..ix0 + n]) {
                                *d += wv * s;
                            }
                        } else {
                            for (j, d) in drow[ox_lo..ox_hi].iter_mut().enumerate() {
                                *d += wv * row[ix0 + j * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2×2 max pooling with stride 2 (trailing odd row/column dropped).
pub fn maxpool2(input: &Tensor) -> Tensor {
    let (oh, ow) = (input.h / 2, input.w / 2);
    let mut out = Tensor::zeros(input.c, oh, ow);
    for c in 0..input.c {
        for y in 0..oh {
            for x in 0..ow {
                let m = input
                    .at(c, 2 * y, 2 * x)
                    .max(input.at(c, 2 * y, 2 * x + 1))
                    .max(input.at(c, 2 * y + 1, 2 * x))
                    .max(input.at(c, 2 * y + 1, 2 * x + 1));
                out.data[(c * oh + y) * ow + x] = m;
            }
        }
    }
    out
}

/// Transposed convolution (scatter-add); the adjoint of [`conv2d`] with the
/// same kernel, stride and padding. Output size `(in − 1)·stride − 2·pad + k`.
/// Weights are `(out, in, kh, kw)`.
pub fn deconv2d(
    input: &Tensor,
    weights: &[f32],
    bias: &[f32],
    shape: KernelShape,
    stride: usize,
    pad: usize,
) -> Tensor {
    assert_eq!(input.c, shape.in_ch, "deconv2d input channels");
    assert_eq!(weights.len(), shape.out_ch * shape.in_ch * shape.kh * shape.kw);
    let oh = (input.h - 1) * stride + shape.kh - 2 * pad;
    let ow = (input.w - 1) * stride + shape.kw - 2 * pad;
    let mut out = Tensor::zeros(shape.out_ch, oh, ow);
    for o in 0..shape.out_ch {
        let dst = out.plane_mut(o);
        dst.fill(bias[o]);
        for i in 0..shape.in_ch {
            let src = input.plane(i);
            for ky in 0..shape.kh {
                for kx in 0..shape.kw {
                    let wv = weights[((o * shape.in_ch + i) * shape.kh + ky) * shape.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for iy in 0..input.h {
                        let oy = (iy * stride + ky) as isize - pad as isize;
                        if oy < 0 || oy >= oh as isize {
                            continue;
                        }
                        let drow = &mut dst[oy as usize * ow..(oy as usize + 1) * ow];
                        let srow = &src[iy * input.w..(iy + 1) * input.w];
                        for (ix, s) in srow.iter().enumerate() {
                            let ox = (ix * stride + kx) as isize - pad as isize;
                            if ox >= 0 && (ox as usize) < ow {
                                drow[ox as usize] += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn relu(t: &mut Tensor) {
    t.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

pub fn sigmoid(t: &mut Tensor) {
    t.data.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
}

/// Runs the layer list; ReLU follows every conv/deconv whose successor is not a sigmoid.
pub fn forward_tensor(weights: &CnnWeights, input: Tensor) -> Tensor {
    let mut x = input;
    let n = weights.layers.len();
    for (i, l) in weights.layers.iter().enumerate() {
        let next_is_sigmoid = i + 1 < n && weights.layers[i + 1].kind == LayerKind::Sigmoid;
        match l.kind {
            LayerKind::Conv => {
                x = conv2d(&x, &l.weights, &l.bias, KernelShape::of(l), l.stride as usize, l.padding as usize);
                if !next_is_sigmoid {
                    relu(&mut x);
                }
            }
            LayerKind::Deconv => {
                x = deconv2d(&x, &l.weights, &l.bias, KernelShape::of(l), l.stride as usize, l.padding as usize);
                if !next_is_sigmoid {
                    relu(&mut x);
                }
            }
            LayerKind::MaxPool => x = maxpool2(&x),
            LayerKind::Sigmoid => sigmoid(&mut x),
        }
    }
    x
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Frame → tensor, reflect-padded on the right and bottom to multiples of `multiple`.
pub fn padded_tensor(frame: &InputFrame, multiple: usize) -> Tensor {
    let (w, h) = (frame.width() as usize, frame.height() as usize);
    let pw = w.div_ceil(multiple) * multiple;
    let ph = h.div_ceil(multiple) * multiple;
    let mut t = Tensor::zeros(frame.channels() as usize, ph, pw);
    for c in 0..t.c {
        let src = frame.plane(c as u32);
        for y in 0..ph {
            let sy = reflect(y, h);
            for x in 0..pw {
                t.data[(c * ph + y) * pw + x] = src[sy * w + reflect(x, w)];
            }
        }
    }
    t
}

/// Full inference: pad, forward, crop back to the frame size.
pub fn forward(weights: &CnnWeights, frame: &InputFrame) -> Result<MaskImage, FilterError> {
    let expected = weights.modality.channels();
    if frame.channels() != expected {
        return Err(FilterError::Modality {
            expected,
            got: frame.channels(),
        });
    }
    let out = forward_tensor(weights, padded_tensor(frame, weights.downsampling().max(1)));
    Ok(MaskImage::from_fn(frame.width(), frame.height(), |c, r| {
        out.at(0, r as usize, c as usize)
    }))
}

pub struct CnnFilter {
    weights: CnnWeights,
}

impl CnnFilter {
    pub fn new(weights: CnnWeights) -> Result<Self, FilterError> {
        weights.validate()?;
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &CnnWeights {
        &self.weights
    }
}

impl MaskFilter for CnnFilter {
    fn target(&self) -> Target {
        self.weights.target
    }

    fn run(&self, frame: &InputFrame, _ctx: &FrameContext<'_>) -> Result<MaskImage, FilterError> {
        forward(&self.weights, frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{Modality, Target};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Direct nested-loop cross-correlation.
    fn conv_oracle(x: &Tensor, w: &[f32], b: &[f32], s: KernelShape, stride: usize, pad: usize) -> Tensor {
        let oh = (x.h + 2 * pad - s.kh) / stride + 1;
        let ow = (x.w + 2 * pad - s.kw) / stride + 1;
        let mut out = Tensor::zeros(s.out_ch, oh, ow);
        for o in 0..s.out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o] as f64;
                    for i in 0..s.in_ch {
                        for ky in 0..s.kh {
                            for kx in 0..s.kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                    acc += w[((o * s.in_ch + i) * s.kh + ky) * s.kw + kx] as f64
                                        * x.at(i, iy as usize, ix as usize) as f64;
                                }
                            }
                        }
                    }
                    out.data[(o * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
        out
    }

    /// Scatter-add oracle for the transposed convolution.
    fn deconv_oracle(x: &Tensor, w: &[f32], b: &[f32], s: KernelShape, stride: usize, pad: usize) -> Tensor {
        let oh = (x.h - 1) * stride + s.kh - 2 * pad;
        let ow = (x.w - 1) * stride + s.kw - 2 * pad;
        let mut acc = vec![0.0f64; s.out_ch * oh * ow];
        for o in 0..s.out_ch {
            for v in &mut acc[o * oh * ow..(o + 1) * oh * ow] {
                *v = b[o] as f64;
            }
            for i in 0..s.in_ch {
                for iy in 0..x.h {
                    for ix in 0..x.w {
                        for ky in 0..s.kh {
                            for kx in 0..s.kw {
                                let oy = (iy * stride + ky) as isize - pad as isize;
                                let ox = (ix * stride + kx) as isize - pad as isize;
                                if oy >= 0 && ox >= 0 && (oy as usize) < oh && (ox as usize) < ow {
                                    acc[(o * oh + oy as usize) * ow + ox as usize] += w
                                        [((o * s.in_ch + i) * s.kh + ky) * s.kw + kx]
                                        as f64
                                        * x.at(i, iy, ix) as f64;
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(s.out_ch, oh, ow, acc.into_iter().map(|v| v as f32).collect())
    }

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f32 {
        assert_eq!((a.c, a.h, a.w), (b.c, b.h, b.w));
        a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, 1, 6, 7);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let s = KernelShape { out_ch: 1, in_ch: 1, kh: 3, kw: 3 };
        assert_eq!(conv2d(&x, &k, &[0.0], s, 1, 1), x);
    }

    #[test]
    fn one_by_one_affine() {
        let x = Tensor::from_vec(1, 1, 1, vec![0.7]);
        let s = KernelShape { out_ch: 1, in_ch: 1, kh: 1, kw: 1 };
        let y = conv2d(&x, &[2.0], &[-0.3], s, 1, 0);
        assert!((y.data[0] - (2.0 * 0.7 - 0.3)).abs() < 1e-7);
    }

    #[test]
    fn conv_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&mut rng, 1, 4, 4);
        let s = KernelShape { out_ch: 1, in_ch: 1, kh: 3, kw: 3 };
        let w = random_vec(&mut rng, 9);
        assert!(max_abs_diff(&conv2d(&x, &w, &[0.1], s, 1, 0), &conv_oracle(&x, &w, &[0.1], s, 1, 0)) < 1e-6);
        for _ in 0..40 {
            let s = KernelShape {
                out_ch: rng.random_range(1..5),
                in_ch: rng.random_range(1..5),
                kh: rng.random_range(1..6),
                kw: rng.random_range(1..6),
            };
            let stride = rng.random_range(1..4);
            let pad = rng.random_range(0..3);
            let (h, w) = (rng.random_range(s.kh..33), rng.random_range(s.kw..33));
            let x = random_tensor(&mut rng, s.in_ch, h, w);
            let w = random_vec(&mut rng, s.out_ch * s.in_ch * s.kh * s.kw);
            let b = random_vec(&mut rng, s.out_ch);
            let got = conv2d(&x, &w, &b, s, stride, pad);
            let want = conv_oracle(&x, &w, &b, s, stride, pad);
            assert_eq!((got.h, got.w), ((x.h + 2 * pad - s.kh) / stride + 1, (x.w + 2 * pad - s.kw) / stride + 1));
            assert!(max_abs_diff(&got, &want) < 1e-5);
        }
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(maxpool2(&x).data, vec![4.0]);
        let c = Tensor::from_vec(2, 4, 6, vec![0.25; 48]);
        assert!(maxpool2(&c).data.iter().all(|&v| v == 0.25));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&mut rng, 3, 8, 10);
        let y = maxpool2(&x);
        for c in 0..3 {
            for yy in 0..4 {
                for xx in 0..5 {
                    let mut m = f32::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(x.at(c, 2 * yy + dy, 2 * xx + dx));
                        }
                    }
                    assert_eq!(y.at(c, yy, xx), m);
                }
            }
        }
    }

    #[test]
    fn deconv_examples() {
        let s = KernelShape { out_ch: 1, in_ch: 1, kh: 2, kw: 2 };
        let y = deconv2d(&Tensor::from_vec(1, 1, 1, vec![3.0]), &[1.0, 2.0, 3.0, 4.0], &[0.0], s, 2, 0);
        assert_eq!(y.data, vec![3.0, 6.0, 9.0, 12.0]);
        let s = KernelShape { out_ch: 2, in_ch: 1, kh: 4, kw: 4 };
        let y = deconv2d(&Tensor::zeros(1, 3, 3), &[0.5; 32], &[0.2, -0.1], s, 2, 1);
        assert_eq!((y.h, y.w), (6, 6));
        assert!(y.plane(0).iter().all(|&v| v == 0.2));
        assert!(y.plane(1).iter().all(|&v| v == -0.1));
    }

    #[test]
    fn deconv_matches_scatter_oracle_and_is_conv_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..30 {
            let s = KernelShape {
                out_ch: rng.random_range(1..4),
                in_ch: rng.random_range(1..4),
                kh: 4,
                kw: 4,
            };
            let (h, w) = (rng.random_range(1..12), rng.random_range(1..12));
            let x = random_tensor(&mut rng, s.in_ch, h, w);
            let w = random_vec(&mut rng, s.out_ch * s.in_ch * 16);
            let b = random_vec(&mut rng, s.out_ch);
            let y = deconv2d(&x, &w, &b, s, 2, 1);
            assert_eq!((y.h, y.w), (2 * x.h, 2 * x.w));
            assert!(max_abs_diff(&y, &deconv_oracle(&x, &w, &b, s, 2, 1)) < 1e-5);

            // <deconv(x), z> = <x, conv(z)> with the conv kernel transposed in (out, in)
            let y0 = deconv2d(&x, &w, &vec![0.0; s.out_ch], s, 2, 1);
            let z = random_tensor(&mut rng, s.out_ch, y.h, y.w);
            let mut wt = vec![0.0; w.len()];
            for o in 0..s.out_ch {
                for i in 0..s.in_ch {
                    for k in 0..16 {
                        wt[(i * s.out_ch + o) * 16 + k] = w[(o * s.in_ch + i) * 16 + k];
                    }
                }
            }
            let ts = KernelShape { out_ch: s.in_ch, in_ch: s.out_ch, kh: 4, kw: 4 };
            let cz = conv2d(&z, &wt, &vec![0.0; s.in_ch], ts, 2, 1);
            let lhs: f64 = y0.data.iter().zip(&z.data).map(|(a, b)| *a as f64 * *b as f64).sum();
            let rhs: f64 = x.data.iter().zip(&cz.data).map(|(a, b)| *a as f64 * *b as f64).sum();
            assert!((lhs - rhs).abs() < 1e-4 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn zero_head_gives_half_everywhere() {
        let mut w = CnnWeights::default_architecture(Modality::Event, Target::Ring);
        w.randomize(5);
        let head = w.layers.len() - 2;
        w.layers[head].weights.iter_mut().for_each(|v| *v = 0.0);
        w.layers[head].bias.iter_mut().for_each(|v| *v = 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let frame = InputFrame::new(20, 13, 1, (0..260).map(|_| rng.random::<f32>()).collect()).unwrap();
        let out = forward(&w, &frame).unwrap();
        assert_eq!((out.width(), out.height()), (20, 13));
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn modality_mismatch_is_rejected() {
        let w = CnnWeights::default_architecture(Modality::Rgb, Target::Ring);
        let frame = InputFrame::new(8, 8, 1, vec![0.0; 64]).unwrap();
        assert!(matches!(forward(&w, &frame), Err(FilterError::Modality { expected: 3, got: 1 })));
    }

    #[test]
    fn reflect_padding_indices() {
        assert_eq!((0..8).map(|i| reflect(i, 3)).collect::<Vec<_>>(), vec![0, 1, 2, 1, 0, 1, 2, 1]);
        assert_eq!(reflect(5, 1), 0);
    }
}

//! `PORTCNN1` weight files.
//!
//! ```text
//! magic "PORTCNN1" | version u32 | modality u8 | target u8 | layer count u32
//! per layer: kind u8 | out, in, kh, kw u32 | stride u32 | padding u32
//!            | bias f32[out] | weights f32[out*in*kh*kw]   (conv / deconv only)
//! crc32 u32 over everything between the magic and the checksum
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{Modality, Target};

pub const MAGIC: &[u8; 8] = b"PORTCNN1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("bad magic: not a PORTCNN1 file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("layer {layer}: {reason}")]
    ShapeChain { layer: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv = 0,
    MaxPool = 1,
    Deconv = 2,
    Sigmoid = 3,
}

impl LayerKind {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Self::Conv,
            1 => Self::MaxPool,
            2 => Self::Deconv,
            3 => Self::Sigmoid,
            _ => return None,
        })
    }

    pub fn has_parameters(self) -> bool {
        matches!(self, Self::Conv | Self::Deconv)
    }
}

/// One layer. Weight tensors are row-major `(out, in, kh, kw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub out_ch: u32,
    pub in_ch: u32,
    pub kh: u32,
    pub kw: u32,
    pub stride: u32,
    pub padding: u32,
    pub bias: Vec<f32>,
    pub weights: Vec<f32>,
}

impl Layer {
    pub fn conv(out_ch: u32, in_ch: u32, k: u32, stride: u32, padding: u32) -> Self {
        Self::with_params(LayerKind::Conv, out_ch, in_ch, k, stride, padding)
    }

    pub fn deconv(out_ch: u32, in_ch: u32, k: u32, stride: u32, padding: u32) -> Self {
        Self::with_params(LayerKind::Deconv, out_ch, in_ch, k, stride, padding)
    }

    pub fn maxpool(channels: u32) -> Self {
        Self {
            kind: LayerKind::MaxPool,
            out_ch: channels,
            in_ch: channels,
            kh: 2,
            kw: 2,
            stride: 2,
            padding: 0,
            bias: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn sigmoid(channels: u32) -> Self {
        Self {
            kind: LayerKind::Sigmoid,
            out_ch: channels,
            in_ch: channels,
            kh: 1,
            kw: 1,
            stride: 1,
            padding: 0,
            bias: Vec::new(),
            weights: Vec::new(),
        }
    }

    fn with_params(kind: LayerKind, out_ch: u32, in_ch: u32, k: u32, stride: u32, padding: u32) -> Self {
        let n = (out_ch * in_ch * k * k) as usize;
        Self {
            kind,
            out_ch,
            in_ch,
            kh: k,
            kw: k,
            stride,
            padding,
            bias: vec![0.0; out_ch as usize],
            weights: vec![0.0; n],
        }
    }

    pub fn weight_len(&self) -> usize {
        if self.kind.has_parameters() {
            self.out_ch as usize * self.in_ch as usize * self.kh as usize * self.kw as usize
        } else {
            0
        }
    }

    pub fn param_count(&self) -> usize {
        if self.kind.has_parameters() {
            self.weight_len() + self.out_ch as usize
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnWeights {
    pub modality: Modality,
    pub target: Target,
    pub layers: Vec<Layer>,
}

impl CnnWeights {
    /// Encoder `widths` with 3×3 convolutions and 2×2 pooling, mirrored
    /// 4×4 stride-2 deconvolutions, then a 1×1 head and sigmoid. All
    /// parameters zero.
    pub fn architecture(modality: Modality, target: Target, widths: [u32; 3]) -> Self {
        let mut layers = Vec::new();
        let mut c = modality.channels();
        for w in widths {
            layers.push(Layer::conv(w, c, 3, 1, 1));
            layers.push(Layer::maxpool(w));
            c = w;
        }
        for w in [widths[2], widths[1], widths[0]] {
            layers.push(Layer::deconv(w, c, 4, 2, 1));
            c = w;
        }
        layers.push(Layer::conv(1, c, 1, 1, 0));
        layers.push(Layer::sigmoid(1));
        Self {
            modality,
            target,
            layers,
        }
    }

    /// Default widths (16, 32, 64).
    pub fn default_architecture(modality: Modality, target: Target) -> Self {
        Self::architecture(modality, target, [16, 32, 64])
    }

    /// He-style uniform initialization from a seed.
    pub fn randomize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut self.layers {
            let fan_in = (l.in_ch * l.kh * l.kw).max(1) as f32;
            let bound = (6.0 / fan_in).sqrt();
            for w in &mut l.weights {
                *w = rng.random_range(-bound..bound);
            }
            for b in &mut l.bias {
                *b = rng.random_range(-0.1..0.1);
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Product of pooling strides; inputs are padded to a multiple of this.
    pub fn downsampling(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.kind == LayerKind::MaxPool)
            .map(|l| l.stride as usize)
            .product()
    }

    /// Shape-chain validation: channel counts chain from the modality to one
    /// output channel, kernels are well formed, tensor sizes match the dims,
    /// and the network returns to input resolution.
    pub fn validate(&self) -> Result<(), WeightsError> {
        let err = |layer: usize, reason: String| WeightsError::ShapeChain { layer, reason };
        if self.layers.is_empty() {
            return Err(err(0, "no layers".into()));
        }
        let mut c = self.modality.channels();
        // spatial scale relative to the input, as a log2 exponent
        let mut scale: i32 = 0;
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_ch != c {
                return Err(err(i, format!("expects {} input channels, previous layer gives {c}", l.in_ch)));
            }
            if l.out_ch == 0 || l.kh == 0 || l.kw == 0 || l.stride == 0 {
                return Err(err(i, "zero dimension or stride".into()));
            }
            if l.bias.len() != if l.kind.has_parameters() { l.out_ch as usize } else { 0 } {
                return Err(err(i, format!("bias length {} does not match dims", l.bias.len())));
            }
            if l.weights.len() != l.weight_len() {
                return Err(err(i, format!("weight length {} does not match dims", l.weights.len())));
            }
            match l.kind {
                LayerKind::Conv => {
                    if l.kh != l.kw || l.kh % 2 == 0 || l.stride != 1 || 2 * l.padding + 1 != l.kh {
                        return Err(err(i, "conv must be odd-square, stride 1, 'same' padding".into()));
                    }
                }
                LayerKind::MaxPool => {
                    if l.out_ch != l.in_ch || l.kh != 2 || l.kw != 2 || l.stride != 2 || l.padding != 0 {
                        return Err(err(i, "maxpool must be 2x2 stride 2 without padding".into()));
                    }
                    scale -= 1;
                }
                LayerKind::Deconv => {
                    if l.kh != l.kw || l.stride != 2 || l.kh != 2 * l.padding + 2 {
                        return Err(err(i, "deconv must double resolution (k = 2p + 2, stride 2)".into()));
                    }
                    scale += 1;
                    if scale > 0 {
                        return Err(err(i, "upsamples beyond input resolution".into()));
                    }
                }
                LayerKind::Sigmoid => {
                    if l.out_ch != l.in_ch || l.padding != 0 {
                        return Err(err(i, "sigmoid must preserve channels".into()));
                    }
                }
            }
            c = l.out_ch;
        }
        let last = self.layers.len() - 1;
        if c != 1 {
            return Err(err(last, format!("network ends with {c} channels, expected 1")));
        }
        if self.layers[last].kind != LayerKind::Sigmoid {
            return Err(err(last, "network must end with a sigmoid".into()));
        }
        if scale != 0 {
            return Err(err(last, "output resolution differs from input".into()));
        }
        Ok(())
    }

    /// Whether the layer sequence is exactly 3 × (conv, pool), 3 × deconv, 1×1 conv, sigmoid.
    pub fn is_reference_pattern(&self) -> bool {
        use LayerKind::*;
        let kinds: Vec<LayerKind> = self.layers.iter().map(|l| l.kind).collect();
        kinds == [Conv, MaxPool, Conv, MaxPool, Conv, MaxPool, Deconv, Deconv, Deconv, Conv, Sigmoid]
            && self.layers[9].kh == 1
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 4 * self.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.modality.channels() as u8);
        out.push(self.target.code());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.push(l.kind as u8);
            for v in [l.out_ch, l.in_ch, l.kh, l.kw, l.stride, l.padding] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in l.bias.iter().chain(l.weights.iter()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out[MAGIC.len()..]);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses and validates. Checks run in order: magic, structure
    /// (truncation), checksum, shape chain.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightsError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(WeightsError::BadMagic);
        }
        let mut r = Reader {
            bytes,
            pos: MAGIC.len(),
        };
        let version = r.u32()?;
        let modality_code = r.u8()?;
        let target_code = r.u8()?;
        let count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(count.min(1024));
        let mut raw_kinds = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let kind = r.u8()?;
            let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?];
            raw_kinds.push(kind);
            let has_params = matches!(kind, 0 | 2);
            let (nb, nw) = if has_params {
                let nw = dims[..4].iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
                (dims[0] as usize, nw.ok_or_else(|| WeightsError::InvalidField("tensor size overflow".into()))?)
            } else {
                (0, 0)
            };
            let bias = r.f32s(nb)?;
            let weights = r.f32s(nw)?;
            layers.push((dims, bias, weights));
        }
        let payload_end = r.pos;
        let stored = r.u32()?;
        if r.pos != bytes.len() {
            return Err(WeightsError::InvalidField(format!(
                "{} trailing bytes after checksum",
                bytes.len() - r.pos
            )));
        }
        let computed = crc32fast::hash(&bytes[MAGIC.len()..payload_end]);
        if stored != computed {
            return Err(WeightsError::Checksum { stored, computed });
        }
        if version != FORMAT_VERSION {
            return Err(WeightsError::UnsupportedVersion(version));
        }
        let modality = Modality::from_channels(modality_code as u32)
            .ok_or_else(|| WeightsError::InvalidField(format!("modality byte {modality_code}")))?;
        let target = Target::from_code(target_code)
            .ok_or_else(|| WeightsError::InvalidField(format!("target byte {target_code}")))?;
        let layers = layers
            .into_iter()
            .zip(raw_kinds)
            .enumerate()
            .map(|(i, ((d, bias, weights), k))| {
                let kind = LayerKind::from_u8(k).ok_or_else(|| WeightsError::ShapeChain {
                    layer: i,
                    reason: format!("unknown layer kind {k}"),
                })?;
                Ok(Layer {
                    kind,
                    out_ch: d[0],
                    in_ch: d[1],
                    kh: d[2],
                    kw: d[3],
                    stride: d[4],
                    padding: d[5],
                    bias,
                    weights,
                })
            })
            .collect::<Result<Vec<_>, WeightsError>>()?;
        let w = Self {
            modality,
            target,
            layers,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: &Path) -> Result<Self, WeightsError> {
        let bytes = std::fs::read(path).map_err(|source| WeightsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<(), WeightsError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| WeightsError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], WeightsError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(WeightsError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WeightsError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, WeightsError> {
        let len = n.checked_mul(4).ok_or(WeightsError::Truncated {
            offset: self.pos,
            needed: usize::MAX,
            available: self.bytes.len() - self.pos,
        })?;
        let raw = self.take(len)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

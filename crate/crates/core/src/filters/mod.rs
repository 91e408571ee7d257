//! Mask filters: map an input frame to a ring mask and a reflector mask.
//!
//! Filters are strategies behind [`MaskFilter`]. A [`FilterRegistry`] maps a
//! name (`classical`, `cnn`, `ground-truth`) to a factory that builds the
//! ring/reflector pair for a given modality and weight set.

pub mod classical;
pub mod cnn;
pub mod weights;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::geometry::{CameraIntrinsics, PortModel, PortPose};
use crate::raster::MaskImage;

pub use classical::{classical_filter, ClassicalFilter};
pub use cnn::{CnnFilter, Tensor};
pub use weights::{CnnWeights, Layer, LayerKind, WeightsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    /// Single-channel normalized event histogram.
    Event,
    /// Three-channel colour frame.
    Rgb,
}

impl Modality {
    pub fn channels(self) -> u32 {
        match self {
            Self::Event => 1,
            Self::Rgb => 3,
        }
    }

    pub fn from_channels(c: u32) -> Option<Self> {
        match c {
            1 => Some(Self::Event),
            3 => Some(Self::Rgb),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Event => "event",
            Self::Rgb => "rgb",
        })
    }
}

impl std::str::FromStr for Modality {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "event" => Ok(Self::Event),
            "rgb" => Ok(Self::Rgb),
            _ => Err(format!("unknown modality `{s}` (expected rgb or event)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Ring,
    Reflector,
}

impl Target {
    pub fn code(self) -> u8 {
        match self {
            Self::Ring => 0,
            Self::Reflector => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Self::Ring),
            1 => Some(Self::Reflector),
            _ => None,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ring => "ring",
            Self::Reflector => "reflector",
        })
    }
}

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("frame has {got} channels, filter expects {expected}")]
    Modality { expected: u32, got: u32 },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("unknown filter `{name}` (available: {available})")]
    UnknownFilter { name: String, available: String },
    #[error("missing {target} weights for {modality} input")]
    MissingWeights { target: Target, modality: Modality },
    #[error("ground-truth filter needs a ground-truth pose or mask for every frame")]
    MissingGroundTruth,
    #[error(transparent)]
    Weights(#[from] WeightsError),
}

/// Planar `channels × height × width` frame with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct InputFrame {
    width: u32,
    height: u32,
    channels: u32,
    data: Vec<f32>,
}

impl InputFrame {
    pub fn new(width: u32, height: u32, channels: u32, data: Vec<f32>) -> Result<Self, FilterError> {
        if channels != 1 && channels != 3 {
            return Err(FilterError::InvalidFrame(format!("{channels} channels")));
        }
        if width == 0 || height == 0 || data.len() != (width * height * channels) as usize {
            return Err(FilterError::InvalidFrame(format!(
                "{} values for {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(FilterError::InvalidFrame(format!("value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Replicates a grayscale image into the channel count of `modality`.
    pub fn from_gray(gray: &MaskImage, modality: Modality) -> Self {
        let c = modality.channels();
        let mut data = Vec::with_capacity(gray.data().len() * c as usize);
        for _ in 0..c {
            data.extend_from_slice(gray.data());
        }
        Self {
            width: gray.width(),
            height: gray.height(),
            channels: c,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, c: u32) -> &[f32] {
        let n = (self.width * self.height) as usize;
        &self.data[c as usize * n..(c as usize + 1) * n]
    }

    /// Rec. 601 luma for colour frames, the single plane otherwise.
    pub fn luminance(&self) -> MaskImage {
        let data = if self.channels == 1 {
            self.data.clone()
        } else {
            let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
            (0..r.len())
                .map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i])
                .collect()
        };
        MaskImage::from_fn(self.width, self.height, |c, r| data[(r * self.width + c) as usize])
    }
}

/// Per-frame side information; only the ground-truth filter reads it.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrameContext<'a> {
    pub gt_pose: Option<&'a PortPose>,
    pub gt_ring: Option<&'a MaskImage>,
    pub gt_reflector: Option<&'a MaskImage>,
}

pub trait MaskFilter: Send + Sync {
    fn target(&self) -> Target;

    /// Output has the frame's size and values in [0, 1].
    fn run(&self, frame: &InputFrame, ctx: &FrameContext<'_>) -> Result<MaskImage, FilterError>;
}

/// Runs a filter and checks the output contract.
pub fn run_filter(
    filter: &dyn MaskFilter,
    frame: &InputFrame,
    ctx: &FrameContext<'_>,
) -> Result<MaskImage, FilterError> {
    let out = filter.run(frame, ctx)?;
    debug_assert_eq!((out.width(), out.height()), (frame.width(), frame.height()));
    Ok(out)
}

/// Ring and reflector filters used together by the pipeline.
pub struct FilterPair {
    pub ring: Box<dyn MaskFilter>,
    pub reflector: Box<dyn MaskFilter>,
}

/// Everything a factory may need to build a filter pair.
#[derive(Debug, Clone)]
pub struct FilterSpec {
    pub modality: Modality,
    pub weights: Vec<CnnWeights>,
    pub model: PortModel,
    pub camera: CameraIntrinsics,
}

impl FilterSpec {
    pub fn new(modality: Modality, model: PortModel, camera: CameraIntrinsics) -> Self {
        Self {
            modality,
            weights: Vec::new(),
            model,
            camera,
        }
    }

    fn weights_for(&self, target: Target) -> Result<&CnnWeights, FilterError> {
        self.weights
            .iter()
            .find(|w| w.target == target && w.modality == self.modality)
            .ok_or(FilterError::MissingWeights {
                target,
                modality: self.modality,
            })
    }
}

pub type FilterFactory = fn(&FilterSpec) -> Result<FilterPair, FilterError>;

/// Name → factory map of the available filter strategies.
pub struct FilterRegistry {
    factories: BTreeMap<String, FilterFactory>,
}

impl FilterRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// `classical`, `cnn` and `ground-truth`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("classical", |_| {
            Ok(FilterPair {
                ring: Box::new(ClassicalFilter::new(Target::Ring)),
                reflector: Box::new(ClassicalFilter::new(Target::Reflector)),
            })
        });
        r.register("cnn", |spec| {
            Ok(FilterPair {
                ring: Box::new(CnnFilter::new(spec.weights_for(Target::Ring)?.clone())?),
                reflector: Box::new(CnnFilter::new(spec.weights_for(Target::Reflector)?.clone())?),
            })
        });
        r.register("ground-truth", |spec| {
            Ok(FilterPair {
                ring: Box::new(GroundTruthFilter::new(Target::Ring, spec)),
                reflector: Box::new(GroundTruthFilter::new(Target::Reflector, spec)),
            })
        });
        r
    }

    pub fn register(&mut self, name: &str, factory: FilterFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, name: &str, spec: &FilterSpec) -> Result<FilterPair, FilterError> {
        let f = self.factories.get(name).ok_or_else(|| FilterError::UnknownFilter {
            name: name.to_string(),
            available: self.names().join(", "),
        })?;
        f(spec)
    }
}

impl Default for FilterRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Bypass filter: returns the ground-truth mask supplied with the frame, or
/// renders it from the ground-truth pose.
pub struct GroundTruthFilter {
    target: Target,
    model: PortModel,
    camera: CameraIntrinsics,
}

impl GroundTruthFilter {
    pub fn new(target: Target, spec: &FilterSpec) -> Self {
        Self {
            target,
            model: spec.model.clone(),
            camera: spec.camera,
        }
    }
}

impl MaskFilter for GroundTruthFilter {
    fn target(&self) -> Target {
        self.target
    }

    fn run(&self, frame: &InputFrame, ctx: &FrameContext<'_>) -> Result<MaskImage, FilterError> {
        let given = match self.target {
            Target::Ring => ctx.gt_ring,
            Target::Reflector => ctx.gt_reflector,
        };
        if let Some(m) = given {
            if (m.width(), m.height()) != (frame.width(), frame.height()) {
                return Err(FilterError::InvalidFrame("ground-truth mask size differs from frame".into()));
            }
            return Ok(m.clone());
        }
        let pose = ctx.gt_pose.ok_or(FilterError::MissingGroundTruth)?;
        if (self.camera.width, self.camera.height) != (frame.width(), frame.height()) {
            return Err(FilterError::InvalidFrame("frame size differs from camera".into()));
        }
        Ok(match self.target {
            Target::Ring => crate::synth::render_ring_mask(pose, &self.model, &self.camera),
            Target::Reflector => crate::pose::render_reflector_mask(&self.model, pose, &self.camera),
        })
    }
}

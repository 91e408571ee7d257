//! Event streams: records, N-event histograms, a contrast-threshold
//! simulator and the `PORTEVT1` / CSV file formats.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::filters::InputFrame;
use crate::raster::MaskImage;

pub const MAGIC: &[u8; 8] = b"PORTEVT1";
pub const FORMAT_VERSION: u32 = 1;
const RECORD_BYTES: usize = 16;
const HEADER_BYTES: usize = 8 + 4 + 4 + 4 + 8;

/// Histogram window used by the reference implementation.
pub const DEFAULT_WINDOW: usize = 35_000;
pub const DEFAULT_CLAMP: u32 = 5;

#[derive(Debug, Error)]
pub enum EventError {
    #[error("stream not sorted by time at event {index}")]
    Unsorted { index: usize },
    #[error("event {index} at ({x}, {y}) outside {width}x{height}")]
    OutOfBounds {
        index: usize,
        x: u16,
        y: u16,
        width: u32,
        height: u32,
    },
    #[error("event {index} has polarity {polarity}, expected +1 or -1")]
    Polarity { index: usize, polarity: i8 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("bad magic: not a PORTEVT1 file")]
    BadMagic,
    #[error("unsupported event file version {0}")]
    UnsupportedVersion(u32),
    #[error("event file truncated: header declares {declared} events, {available} bytes of records present")]
    Truncated { declared: u64, available: usize },
    #[error("csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRecord {
    /// Microseconds.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    /// +1 or −1.
    pub polarity: i8,
}

/// Sensor geometry plus time-sorted events.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub width: u32,
    pub height: u32,
    pub events: Vec<EventRecord>,
}

impl EventStream {
    pub fn new(width: u32, height: u32, events: Vec<EventRecord>) -> Result<Self, EventError> {
        let s = Self {
            width,
            height,
            events,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), EventError> {
        let mut prev = 0u64;
        for (i, e) in self.events.iter().enumerate() {
            if e.t < prev {
                return Err(EventError::Unsorted { index: i });
            }
            prev = e.t;
            if e.x as u32 >= self.width || e.y as u32 >= self.height {
                return Err(EventError::OutOfBounds {
                    index: i,
                    x: e.x,
                    y: e.y,
                    width: self.width,
                    height: self.height,
                });
            }
            if e.polarity != 1 && e.polarity != -1 {
                return Err(EventError::Polarity {
                    index: i,
                    polarity: e.polarity,
                });
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + RECORD_BYTES * self.events.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&(self.events.len() as u64).to_le_bytes());
        for e in &self.events {
            out.extend_from_slice(&e.t.to_le_bytes());
            out.extend_from_slice(&e.x.to_le_bytes());
            out.extend_from_slice(&e.y.to_le_bytes());
            out.push(e.polarity as u8);
            out.extend_from_slice(&[0, 0, 0]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EventError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(EventError::BadMagic);
        }
        if bytes.len() < HEADER_BYTES {
            return Err(EventError::Truncated {
                declared: 0,
                available: 0,
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != FORMAT_VERSION {
            return Err(EventError::UnsupportedVersion(version));
        }
        let (width, height) = (u32_at(12), u32_at(16));
        let count = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
        let body = &bytes[HEADER_BYTES..];
        if (body.len() as u64) != count.saturating_mul(RECORD_BYTES as u64) {
            return Err(EventError::Truncated {
                declared: count,
                available: body.len(),
            });
        }
        let events = body
            .chunks_exact(RECORD_BYTES)
            .map(|r| EventRecord {
                t: u64::from_le_bytes(r[0..8].try_into().unwrap()),
                x: u16::from_le_bytes(r[8..10].try_into().unwrap()),
                y: u16::from_le_bytes(r[10..12].try_into().unwrap()),
                polarity: r[12] as i8,
            })
            .collect();
        Self::new(width, height, events)
    }

    pub fn save(&self, path: &Path) -> Result<(), EventError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| EventError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EventError> {
        let bytes = std::fs::read(path).map_err(|source| EventError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Parses `t_us,x,y,p` CSV (header line optional).
    pub fn from_csv(text: &str, width: u32, height: u32) -> Result<Self, EventError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("t_us")) {
                continue;
            }
            let err = |reason: String| EventError::Csv { line: i + 1, reason };
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(err(format!("expected 4 fields, got {}", f.len())));
            }
            let t = f[0].parse::<u64>().map_err(|e| err(format!("t_us: {e}")))?;
            let x = f[1].parse::<u16>().map_err(|e| err(format!("x: {e}")))?;
            let y = f[2].parse::<u16>().map_err(|e| err(format!("y: {e}")))?;
            let polarity = match f[3] {
                "1" | "+1" => 1,
                "-1" | "0" => -1,
                other => return Err(err(format!("polarity `{other}`"))),
            };
            events.push(EventRecord { t, x, y, polarity });
        }
        Self::new(width, height, events)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t_us,x,y,p\n");
        for e in &self.events {
            s.push_str(&format!("{},{},{},{}\n", e.t, e.x, e.y, e.polarity));
        }
        s
    }
}

/// Per-pixel event counts of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct EventHistogram {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
    pub t_start: u64,
    pub t_end: u64,
}

impl EventHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn count(&self, x: u32, y: u32) -> u32 {
        self.counts[(y * self.width + x) as usize]
    }
}

/// Consecutive non-overlapping windows of exactly `n` events, polarity
/// ignored; a trailing partial window is dropped.
pub fn build_histograms(stream: &EventStream, n: usize) -> Result<Vec<EventHistogram>, EventError> {
    if n == 0 {
        return Err(EventError::InvalidArgument("window size must be >= 1".into()));
    }
    stream.validate()?;
    let (w, h) = (stream.width, stream.height);
    Ok(stream
        .events
        .chunks_exact(n)
        .map(|chunk| {
            let mut counts = vec![0u32; (w * h) as usize];
            for e in chunk {
                counts[e.y as usize * w as usize + e.x as usize] += 1;
            }
            EventHistogram {
                width: w,
                height: h,
                counts,
                t_start: chunk[0].t,
                t_end: chunk[chunk.len() - 1].t,
            }
        })
        .collect())
}

/// `min(count, c_max) / c_max` as a one-channel frame.
pub fn histogram_to_frame(h: &EventHistogram, c_max: u32) -> InputFrame {
    let c_max = c_max.max(1);
    let gray = MaskImage::from_fn(h.width, h.height, |x, y| {
        h.count(x, y).min(c_max) as f32 / c_max as f32
    });
    InputFrame::from_gray(&gray, crate::filters::Modality::Event)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatorConfig {
    /// Log-intensity contrast threshold C.
    pub contrast: f64,
    /// Offset ε inside the logarithm.
    pub epsilon: f64,
    /// Noise events per pixel per second (Poisson).
    pub noise_rate: f64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            contrast: 0.2,
            epsilon: 1.0 / 255.0,
            noise_rate: 0.0,
        }
    }
}

/// Number of threshold crossings for a log-intensity change.
pub fn crossings(delta_log: f64, contrast: f64) -> u32 {
    // slack absorbs the f32 rounding of stored intensities (~1e-7 in log space)
    (delta_log.abs() / contrast + 1e-5).floor() as u32
}

/// Contrast-threshold events between two frames. Crossing `j` of a pixel is
/// stamped at the fraction `j·C / |Δlog|` of the interval (rounded up to the
/// next microsecond, so strictly after `t_a`); noise events are uniform in
/// `(t_a, t_b]` with random polarity. Output is sorted by (t, y, x).
pub fn simulate_events(
    frame_a: &MaskImage,
    frame_b: &MaskImage,
    t_a: u64,
    t_b: u64,
    cfg: &SimulatorConfig,
    rng: &mut impl Rng,
) -> Result<Vec<EventRecord>, EventError> {
    if (frame_a.width(), frame_a.height()) != (frame_b.width(), frame_b.height()) {
        return Err(EventError::InvalidArgument("frame sizes differ".into()));
    }
    if !(cfg.contrast > 0.0) || t_b <= t_a {
        return Err(EventError::InvalidArgument("need contrast > 0 and t_a < t_b".into()));
    }
    let w = frame_a.width();
    let dt = (t_b - t_a) as f64;
    let mut out = Vec::new();
    for (i, (&a, &b)) in frame_a.data().iter().zip(frame_b.data()).enumerate() {
        let delta = (b as f64 + cfg.epsilon).ln() - (a as f64 + cfg.epsilon).ln();
        let k = crossings(delta, cfg.contrast);
        let polarity = if delta > 0.0 { 1 } else { -1 };
        let (x, y) = ((i as u32 % w) as u16, (i as u32 / w) as u16);
        for j in 1..=k {
            let frac = (j as f64 * cfg.contrast / delta.abs()).min(1.0);
            let t = (t_a + (frac * dt).ceil().max(1.0) as u64).min(t_b);
            out.push(EventRecord { t, x, y, polarity });
        }
    }
    let lambda = cfg.noise_rate * dt * 1e-6;
    if lambda > 0.0 {
        let poisson = Poisson::new(lambda).map_err(|e| EventError::InvalidArgument(e.to_string()))?;
        for i in 0..frame_a.data().len() {
            let n = poisson.sample(rng) as u64;
            for _ in 0..n {
                out.push(EventRecord {
                    t: rng.random_range(t_a + 1..=t_b),
                    x: (i as u32 % w) as u16,
                    y: (i as u32 / w) as u16,
                    polarity: if rng.random::<bool>() { 1 } else { -1 },
                });
            }
        }
    }
    out.sort_by_key(|e| (e.t, e.y, e.x, e.polarity));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stream_of(n: usize, w: u32, h: u32) -> EventStream {
        let events = (0..n)
            .map(|i| EventRecord {
                t: i as u64 / 3,
                x: (i as u32 % w) as u16,
                y: ((i as u32 / w) % h) as u16,
                polarity: if i % 2 == 0 { 1 } else { -1 },
            })
            .collect();
        EventStream::new(w, h, events).unwrap()
    }

    #[test]
    fn window_counts() {
        let s = stream_of(70_000, 346, 260);
        let hs = build_histograms(&s, DEFAULT_WINDOW).unwrap();
        assert_eq!(hs.len(), 2);
        assert!(hs.iter().all(|h| h.total() == 35_000));
        assert!(hs[0].t_end <= hs[1].t_start);

        let partial = stream_of(34_999, 346, 260);
        assert!(build_histograms(&partial, DEFAULT_WINDOW).unwrap().is_empty());

        let s = stream_of(5, 8, 8);
        let hs = build_histograms(&s, 1).unwrap();
        assert_eq!(hs.len(), 5);
        for (h, e) in hs.iter().zip(&s.events) {
            assert_eq!(h.count(e.x as u32, e.y as u32), 1);
            assert_eq!(h.total(), 1);
        }
    }

    #[test]
    fn unsorted_stream_is_rejected() {
        let mut s = stream_of(10, 8, 8);
        s.events.swap(2, 8);
        assert!(matches!(build_histograms(&s, 2), Err(EventError::Unsorted { .. })));
        assert!(build_histograms(&stream_of(4, 8, 8), 0).is_err());
    }

    #[test]
    fn frame_normalization() {
        let h = EventHistogram {
            width: 3,
            height: 1,
            counts: vec![0, 2, 9],
            t_start: 0,
            t_end: 1,
        };
        let f = histogram_to_frame(&h, 4);
        assert_eq!(f.data(), &[0.0, 0.5, 1.0]);
        let f = histogram_to_frame(&h, 2);
        assert_eq!(f.data()[1], 1.0);
    }

    #[test]
    fn simulator_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = SimulatorConfig::default();
        let a = MaskImage::from_fn(6, 4, |c, r| (c + r) as f32 / 10.0);
        assert!(simulate_events(&a, &a, 0, 1000, &cfg, &mut rng).unwrap().is_empty());

        // one pixel whose log intensity rises by exactly 3C
        let eps = cfg.epsilon;
        let ia = 0.1f64;
        let ib = ((ia + eps).ln() + 3.0 * cfg.contrast).exp() - eps;
        let mut b = a.clone();
        b.set(2, 1, ib as f32);
        let mut a2 = a.clone();
        a2.set(2, 1, ia as f32);
        let ev = simulate_events(&a2, &b, 100, 200, &cfg, &mut rng).unwrap();
        assert_eq!(ev.len(), 3);
        assert!(ev.iter().all(|e| e.polarity == 1 && (e.x, e.y) == (2, 1)));
        assert!(ev.iter().all(|e| e.t > 100 && e.t <= 200));
        assert!(ev.windows(2).all(|p| p[0].t <= p[1].t));
    }

    #[test]
    fn noise_is_seeded() {
        let cfg = SimulatorConfig {
            noise_rate: 50.0,
            ..Default::default()
        };
        let a = MaskImage::zeros(20, 10);
        let run = |seed| simulate_events(&a, &a, 0, 100_000, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let x = run(3);
        assert!(!x.is_empty());
        assert_eq!(x, run(3));
        assert!(x.windows(2).all(|p| p[0].t <= p[1].t));
    }

    #[test]
    fn binary_and_csv_round_trip() {
        let s = stream_of(100, 16, 12);
        assert_eq!(EventStream::from_bytes(&s.to_bytes()).unwrap(), s);
        assert_eq!(EventStream::from_csv(&s.to_csv(), 16, 12).unwrap(), s);
        let mut bad = s.to_bytes();
        bad[3] = b'X';
        assert!(matches!(EventStream::from_bytes(&bad), Err(EventError::BadMagic)));
        let cut = &s.to_bytes()[..HEADER_BYTES + 20];
        assert!(matches!(EventStream::from_bytes(cut), Err(EventError::Truncated { .. })));
        assert_eq!(s.to_bytes().len(), HEADER_BYTES + 16 * 100);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let e = EventStream::from_csv("t_us,x,y,p\n1,2,3,1\n2,2,x,1\n", 8, 8).unwrap_err();
        assert!(matches!(e, EventError::Csv { line: 3, .. }));
    }
}

//! Binary-image preprocessing between a filter output and the ellipse fitter.

use std::path::Path;

use nalgebra::Vector2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image dimensions {width}x{height} do not match data length {len}")]
    Dimensions { width: u32, height: u32, len: usize },
    #[error("mask value {value} at index {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Single-channel image with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct MaskImage {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl MaskImage {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self, RasterError> {
        if data.len() != width as usize * height as usize {
            return Err(RasterError::Dimensions {
                width,
                height,
                len: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && **v <= 1.0))
        {
            return Err(RasterError::OutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    /// Builds a mask from `f(col, row)`, clamping into [0, 1].
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f32) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for r in 0..height {
            for c in 0..width {
                let v = f(c, r);
                data.push(if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, col: u32, row: u32) -> f32 {
        self.data[row as usize * self.width as usize + col as usize]
    }

    /// Sets a pixel, clamping the value into [0, 1].
    pub fn set(&mut self, col: u32, row: u32, value: f32) {
        let w = self.width as usize;
        self.data[row as usize * w + col as usize] = value.clamp(0.0, 1.0);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    pub fn from_bytes(width: u32, height: u32, bytes: &[u8]) -> Result<Self, RasterError> {
        if bytes.len() != width as usize * height as usize {
            return Err(RasterError::Dimensions {
                width,
                height,
                len: bytes.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        })
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        encode_pgm(self.width, self.height, &self.to_bytes())
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self, RasterError> {
        let (w, h, px) = decode_pgm(bytes)?;
        Self::from_bytes(w, h, &px)
    }

    pub fn save_pgm(&self, path: &Path) -> Result<(), RasterError> {
        write_file(path, &self.to_pgm())
    }

    pub fn load_pgm(path: &Path) -> Result<Self, RasterError> {
        Self::from_pgm(&read_file(path)?)
    }
}

/// Boolean image; `true` marks an active pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: u32, height: u32, data: Vec<bool>) -> Result<Self, RasterError> {
        if data.len() != width as usize * height as usize {
            return Err(RasterError::Dimensions {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, col: u32, row: u32) -> bool {
        self.data[row as usize * self.width as usize + col as usize]
    }

    pub fn set(&mut self, col: u32, row: u32, value: bool) {
        let w = self.width as usize;
        self.data[row as usize * w + col as usize] = value;
    }

    pub fn count_active(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let bytes: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        encode_pgm(self.width, self.height, &bytes)
    }

    /// Reads a PGM; any non-zero byte is active.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self, RasterError> {
        let (w, h, px) = decode_pgm(bytes)?;
        Self::new(w, h, px.iter().map(|&b| b > 0).collect())
    }
}

pub fn binarize(mask: &MaskImage, threshold: f32) -> BinaryImage {
    BinaryImage {
        width: mask.width,
        height: mask.height,
        data: mask.data.iter().map(|&v| v >= threshold).collect(),
    }
}

/// Pixel centres `(col, row)` of every active pixel, row-major order.
pub fn active_pixels(img: &BinaryImage) -> Vec<Vector2<f64>> {
    let w = img.width as usize;
    img.data
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| Vector2::new((i % w) as f64, (i / w) as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateOutcome {
    Pass { active: usize },
    Abort { active: usize },
}

impl GateOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, GateOutcome::Pass { .. })
    }
}

/// Aborts when fewer than `gamma_s` pixels are active.
pub fn gate(img: &BinaryImage, gamma_s: usize) -> GateOutcome {
    let active = img.count_active();
    if active < gamma_s {
        GateOutcome::Abort { active }
    } else {
        GateOutcome::Pass { active }
    }
}

/// Calls `visit(col, row)` for every pixel whose centre lies inside `poly`
/// (even-odd rule, half-open on the right so shared edges fill once).
pub fn fill_polygon(width: u32, height: u32, poly: &[Vector2<f64>], mut visit: impl FnMut(u32, u32)) {
    if poly.len() < 3 || poly.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return;
    }
    let ymin = poly.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let ymax = poly.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let r0 = ymin.ceil().max(0.0);
    let r1 = ymax.floor().min(height as f64 - 1.0);
    if r0 > r1 {
        return;
    }
    let mut xs = Vec::with_capacity(poly.len());
    for row in r0 as u32..=r1 as u32 {
        let y = row as f64;
        xs.clear();
        for i in 0..poly.len() {
            let a = poly[i];
            let b = poly[(i + 1) % poly.len()];
            if (a.y <= y) != (b.y <= y) {
                xs.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let c0 = pair[0].ceil().max(0.0);
            let c1 = (pair[1].ceil() - 1.0).min(width as f64 - 1.0);
            if c0 > c1 {
                continue;
            }
            for col in c0 as u32..=c1 as u32 {
                visit(col, row);
            }
        }
    }
}

/// Zhang-Suen thinning with 8-connected foreground and an inactive border.
///
/// Each sub-iteration marks candidates with the classic conditions and deletes
/// them in parallel. Plain Zhang-Suen erases some components outright (2x2
/// blocks, two-pixel-thick diagonals); when every pixel of a component is
/// marked, its first pixel in raster order is kept instead.
pub fn skeletonize(img: &BinaryImage) -> BinaryImage {
    let w = img.width as usize;
    let h = img.height as usize;
    let mut px = img.data.clone();
    if w < 3 || h < 3 {
        return img.clone();
    }
    let Some((r0, r1, c0, c1)) = bounding_box(&px, w) else {
        return img.clone();
    };
    let mut candidates = Vec::new();
    loop {
        let mut changed = false;
        for first in [true, false] {
            candidates.clear();
            for r in r0..=r1 {
                for c in c0..=c1 {
                    if !px[r * w + c] {
                        continue;
                    }
                    let n = neighbours(&px, w, h, r, c);
                    let (a, b) = crossings_and_count(&n);
                    if a != 1 || !(2..=6).contains(&b) {
                        continue;
                    }
                    // n = [P2, P3, P4, P5, P6, P7, P8, P9]
                    let (p2, p4, p6, p8) = (n[0], n[2], n[4], n[6]);
                    let ok = if first {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if ok {
                        candidates.push((r, c));
                    }
                }
            }
            if candidates.is_empty() {
                continue;
            }
            let spared = sole_survivors(&px, w, h, (r0, r1, c0, c1), &candidates);
            for &(r, c) in &candidates {
                if !spared.contains(&(r * w + c)) {
                    px[r * w + c] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    BinaryImage {
        width: img.width,
        height: img.height,
        data: px,
    }
}

/// For every 8-connected component whose pixels are all in `marked`, the
/// index of its first pixel in raster order.
fn sole_survivors(
    px: &[bool],
    w: usize,
    h: usize,
    (r0, r1, c0, c1): (usize, usize, usize, usize),
    marked: &[(usize, usize)],
) -> Vec<usize> {
    let mut is_marked = vec![false; px.len()];
    for &(r, c) in marked {
        is_marked[r * w + c] = true;
    }
    let mut seen = vec![false; px.len()];
    let mut spared = Vec::new();
    let mut stack = Vec::new();
    for r in r0..=r1 {
        for c in c0..=c1 {
            let start = r * w + c;
            if !px[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let mut all_marked = true;
            while let Some(i) = stack.pop() {
                all_marked &= is_marked[i];
                let (ri, ci) = (i / w, i % w);
                for rr in ri.saturating_sub(1)..=(ri + 1).min(h - 1) {
                    for cc in ci.saturating_sub(1)..=(ci + 1).min(w - 1) {
                        let j = rr * w + cc;
                        if px[j] && !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
            if all_marked {
                spared.push(start);
            }
        }
    }
    spared
}

fn bounding_box(px: &[bool], w: usize) -> Option<(usize, usize, usize, usize)> {
    let mut bb: Option<(usize, usize, usize, usize)> = None;
    for (i, _) in px.iter().enumerate().filter(|(_, &b)| b) {
        let (r, c) = (i / w, i % w);
        bb = Some(match bb {
            None => (r, r, c, c),
            Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r), c0.min(c), c1.max(c)),
        });
    }
    bb
}

/// Neighbours P2..P9 clockwise from north; outside the image counts as inactive.
fn neighbours(px: &[bool], w: usize, h: usize, r: usize, c: usize) -> [bool; 8] {
    const OFFSETS: [(isize, isize); 8] = [
        (-1, 0),
        (-1, 1),
        (0, 1),
        (1, 1),
        (1, 0),
        (1, -1),
        (0, -1),
        (-1, -1),
    ];
    let mut out = [false; 8];
    for (o, (dr, dc)) in out.iter_mut().zip(OFFSETS) {
        let rr = r as isize + dr;
        let cc = c as isize + dc;
        if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
            *o = px[rr as usize * w + cc as usize];
        }
    }
    out
}

/// (number of 0->1 transitions around the ring, number of active neighbours)
fn crossings_and_count(n: &[bool; 8]) -> (usize, usize) {
    let a = (0..8).filter(|&i| !n[i] && n[(i + 1) % 8]).count();
    let b = n.iter().filter(|&&v| v).count();
    (a, b)
}

pub fn encode_pgm(width: u32, height: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Decodes a binary 8-bit PGM (P5, maxval 255). Header comments are allowed.
pub fn decode_pgm(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), RasterError> {
    let mut pos = 0usize;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(RasterError::Pgm("truncated header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if tokens[0] != "P5" {
        return Err(RasterError::Pgm(format!("unsupported magic {}", tokens[0])));
    }
    let parse = |s: &str| {
        s.parse::<u32>()
            .map_err(|_| RasterError::Pgm(format!("bad header number {s}")))
    };
    let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval != 255 {
        return Err(RasterError::Pgm(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let n = w as usize * h as usize;
    if bytes.len() < pos + n {
        return Err(RasterError::Pgm(format!(
            "expected {n} pixel bytes, found {}",
            bytes.len().saturating_sub(pos)
        )));
    }
    Ok((w, h, bytes[pos..pos + n].to_vec()))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RasterError> {
    std::fs::write(path, bytes).map_err(|source| RasterError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, RasterError> {
    std::fs::read(path).map_err(|source| RasterError::Io {
        path: path.display().to_string(),
        source,
    })
}

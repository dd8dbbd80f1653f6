//! Dense image grids and binary Netpbm (PGM/PPM) IO.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{invalid, Error, Result};

/// Linear intensity image in `[0, 1]` captured at `timestamp_us`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    pub timestamp_us: i64,
}

impl IntensityFrame {
    pub fn filled(width: usize, height: usize, value: f64, timestamp_us: i64) -> Self {
        Self {
            width,
            height,
            data: vec![value.clamp(0.0, 1.0); width * height],
            timestamp_us,
        }
    }

    /// Checkerboard with `cell` pixel squares alternating between `lo` and `hi`.
    pub fn checkerboard(width: usize, height: usize, cell: usize, lo: f64, hi: f64) -> Self {
        let cell = cell.max(1);
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| if (x / cell + y / cell) % 2 == 0 { lo } else { hi }))
            .collect();
        Self { width, height, data, timestamp_us: 0 }
    }

    /// Nearest-neighbour resample to a new resolution.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = (y * self.height) / height;
            for x in 0..width {
                let sx = (x * self.width) / width;
                data.push(self.data[sy * self.width + sx]);
            }
        }
        Self { width, height, data, timestamp_us: self.timestamp_us }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Writes a 16-bit binary PGM.
    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let samples: Vec<u16> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        write_pgm(path, self.width, self.height, 65535, &samples)
    }

    pub fn load_pgm(path: impl AsRef<Path>, timestamp_us: i64) -> Result<Self> {
        let (width, height, maxval, samples) = read_pgm(path)?;
        let scale = 1.0 / f64::from(maxval);
        Ok(Self {
            width,
            height,
            data: samples.iter().map(|&s| f64::from(s) * scale).collect(),
            timestamp_us,
        })
    }
}

/// Per-pixel occupancy probability in `[0, 1]`.
///
/// Ground-truth and extracted masks are binary; soft-rasterized masks carry
/// probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl SilhouetteMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![1.0; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y).clamp(0.0, 1.0))
            .collect();
        Self { width, height, data }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Sum of occupancy over all pixels.
    pub fn mass(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// Thresholds at 0.5.
    pub fn binarized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Writes an 8-bit binary PGM with values in {0, 255}.
    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let samples: Vec<u16> =
            self.data.iter().map(|&v| if v >= 0.5 { 255 } else { 0 }).collect();
        write_pgm(path, self.width, self.height, 255, &samples)
    }

    /// Writes probabilities as a 16-bit PGM, for inspecting soft renders.
    pub fn save_pgm16(&self, path: impl AsRef<Path>) -> Result<()> {
        let samples: Vec<u16> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        write_pgm(path, self.width, self.height, 65535, &samples)
    }

    /// Loads a PGM, mapping every sample to `value / maxval`.
    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let (width, height, maxval, samples) = read_pgm(path)?;
        let scale = 1.0 / f64::from(maxval);
        Ok(Self {
            width,
            height,
            data: samples.iter().map(|&s| f64::from(s) * scale).collect(),
        })
    }
}

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        write_atomic(path.as_ref(), &out)
    }

    pub fn load_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        let (magic, width, height, maxval, offset) = parse_header(&bytes)?;
        if magic != *b"P6" || maxval != 255 {
            return Err(Error::Format("expected 8-bit binary PPM (P6)".into()));
        }
        let body = &bytes[offset..];
        if body.len() != 3 * width * height {
            return Err(Error::Format(format!(
                "PPM body has {} bytes, expected {}",
                body.len(),
                3 * width * height
            )));
        }
        Ok(Self { width, height, data: body.to_vec() })
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(bytes)?;
    Ok(())
}

/// Writes a binary PGM. Samples above 255 require `maxval > 255` and are
/// stored big-endian as Netpbm prescribes.
pub fn write_pgm(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    maxval: u16,
    samples: &[u16],
) -> Result<()> {
    if samples.len() != width * height {
        return invalid(format!(
            "PGM sample count {} does not match {}x{}",
            samples.len(),
            width,
            height
        ));
    }
    if maxval == 0 {
        return invalid("PGM maxval must be positive");
    }
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    if maxval < 256 {
        out.extend(samples.iter().map(|&s| s.min(maxval) as u8));
    } else {
        for &s in samples {
            out.extend_from_slice(&s.min(maxval).to_be_bytes());
        }
    }
    write_atomic(path.as_ref(), &out)
}

/// Reads a binary PGM, returning `(width, height, maxval, samples)`.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, u16, Vec<u16>)> {
    let bytes = fs::read(path)?;
    let (magic, width, height, maxval, offset) = parse_header(&bytes)?;
    if magic != *b"P5" {
        return Err(Error::Format("expected binary PGM (P5)".into()));
    }
    let body = &bytes[offset..];
    let samples = if maxval < 256 {
        if body.len() != width * height {
            return Err(Error::Format("PGM body length mismatch".into()));
        }
        body.iter().map(|&b| u16::from(b)).collect()
    } else {
        if body.len() != 2 * width * height {
            return Err(Error::Format("PGM body length mismatch".into()));
        }
        body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    Ok((width, height, maxval, samples))
}

fn parse_header(bytes: &[u8]) -> Result<([u8; 2], usize, usize, u16, usize)> {
    if bytes.len() < 2 {
        return Err(Error::Format("truncated Netpbm header".into()));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("malformed Netpbm header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("malformed Netpbm header".into()))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("truncated Netpbm header".into()));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Format("invalid Netpbm dimensions or maxval".into()));
    }
    Ok((magic, width, height, maxval as u16, pos + 1))
}

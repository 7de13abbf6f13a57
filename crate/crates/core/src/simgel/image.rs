use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::simgel::ContactState;

/// Magic bytes of the lossless float image container.
pub const RAW_MAGIC: &[u8; 6] = b"FTIMG1";

/// Provenance carried alongside synthetic frames.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageMeta {
    pub seed: Option<u64>,
    pub contact: Option<ContactState>,
}

/// `H x W x 3` image, channel-interleaved and row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TactileImage<T = f64> {
    height: usize,
    width: usize,
    pixels: Vec<T>,
    pub meta: ImageMeta,
}

pub const CHANNELS: usize = 3;

impl<T: Scalar> TactileImage<T> {
    pub fn new(height: usize, width: usize, pixels: Vec<T>) -> Result<Self> {
        if pixels.len() != height * width * CHANNELS {
            return Err(Error::shape("image", &[height, width, CHANNELS], &[pixels.len()]));
        }
        if pixels.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::InvalidArgument("image values must lie in [0, 1]".into()));
        }
        Ok(TactileImage { height, width, pixels, meta: ImageMeta::default() })
    }

    /// Builds an image from `f(row, col, channel)`, clamping into `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut pixels = Vec::with_capacity(height * width * CHANNELS);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..CHANNELS {
                    pixels.push(clamp01(f(r, c, ch)));
                }
            }
        }
        TactileImage { height, width, pixels, meta: ImageMeta::default() }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, ch: usize) -> T {
        self.pixels[(r * self.width + c) * CHANNELS + ch]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn channel_mean(&self, ch: usize) -> f64 {
        let n = (self.height * self.width) as f64;
        self.pixels.iter().skip(ch).step_by(CHANNELS).map(|v| v.to_f64().unwrap()).sum::<f64>() / n
    }

    pub fn channel_std(&self, ch: usize) -> f64 {
        // shifted by the first sample so constant channels give exactly zero
        let vals = || self.pixels.iter().skip(ch).step_by(CHANNELS).map(|v| v.to_f64().unwrap());
        let Some(first) = vals().next() else {
            return 0.0;
        };
        let n = (self.height * self.width) as f64;
        let (s, s2) = vals().fold((0.0, 0.0), |(s, s2), v| (s + (v - first), s2 + (v - first).powi(2)));
        (s2 / n - (s / n).powi(2)).max(0.0).sqrt()
    }

    /// Planar `[C, H, W]` copy for the networks.
    pub fn to_chw(&self) -> Vec<T> {
        let plane = self.height * self.width;
        let mut out = vec![T::zero(); plane * CHANNELS];
        for (i, px) in self.pixels.chunks(CHANNELS).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                out[ch * plane + i] = v;
            }
        }
        out
    }

    /// Euclidean distance between two equally sized images.
    pub fn l2_distance(&self, other: &Self) -> Result<f64> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::shape("l2_distance", &[self.height, self.width], &[other.height, other.width]));
        }
        Ok(self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a.to_f64().unwrap() - b.to_f64().unwrap()).powi(2))
            .sum::<f64>()
            .sqrt())
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().map(|v| (v.to_f64().unwrap() * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::format(path, e.to_string()))?;
        writer.write_image_data(&self.to_rgb8()).map_err(|e| Error::format(path, e.to_string()))?;
        writer.finish().map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let dec = png::Decoder::new(BufReader::new(file));
        let mut reader = dec.read_info().map_err(|e| Error::format(path, e.to_string()))?;
        let size = reader.output_buffer_size().ok_or_else(|| Error::format(path, "image too large"))?;
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e.to_string()))?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(Error::format(path, "expected 8-bit RGB"));
        }
        let scale = lit::<T>(1.0 / 255.0);
        let pixels = buf[..info.buffer_size()].iter().map(|&b| T::from_u8(b).unwrap() * scale).collect();
        Self::new(info.height as usize, info.width as usize, pixels)
    }

    /// Lossless container: magic, `u32` H, W, C (little-endian), then `f32` samples.
    pub fn encode_raw(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + self.pixels.len() * 4);
        out.extend_from_slice(RAW_MAGIC);
        for d in [self.height, self.width, CHANNELS] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.pixels {
            out.extend_from_slice(&v.to_f32().unwrap().to_le_bytes());
        }
        out
    }

    pub fn decode_raw(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 18 || &bytes[..6] != RAW_MAGIC {
            return Err("missing FTIMG1 header".into());
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap()) as usize;
        let (h, w, c) = (dim(0), dim(1), dim(2));
        if c != CHANNELS {
            return Err(format!("expected {CHANNELS} channels, found {c}"));
        }
        let body = &bytes[18..];
        if body.len() != h * w * c * 4 {
            return Err(format!("payload holds {} bytes, header implies {}", body.len(), h * w * c * 4));
        }
        let pixels =
            body.chunks_exact(4).map(|b| T::from_f32(f32::from_le_bytes(b.try_into().unwrap())).unwrap()).collect();
        Self::new(h, w, pixels).map_err(|e| e.to_string())
    }

    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        f.write_all(&self.encode_raw()).map_err(|e| Error::io(path, e))?;
        f.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_raw(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
        Self::decode_raw(&bytes).map_err(|m| Error::format(path, m))
    }
}

#[inline]
pub(crate) fn clamp01<T: Scalar>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::simgel::TactileImage;

/// Rectification of a raw camera frame onto the tactile-region rectangle.
///
/// Mapping convention, applied per output pixel `(col, row)`:
/// the homography takes `(col, row, 1)` to undistorted raw coordinates,
/// then the radial model `p_d = c + (p_u - c) * (1 + k1 r^2 + k2 r^4)` gives
/// the sampled raw location. `c` is the raw frame centre and `r` is
/// `|p_u - c|` divided by half the larger raw dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnwarpCalibration {
    /// Row-major 3x3.
    pub homography: [f64; 9],
    pub radial_k1: f64,
    pub radial_k2: f64,
    /// `(height, width)` of the rectified image.
    pub output_size: (usize, usize),
}

impl UnwarpCalibration {
    pub fn identity(height: usize, width: usize) -> Self {
        UnwarpCalibration {
            homography: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            radial_k1: 0.0,
            radial_k2: 0.0,
            output_size: (height, width),
        }
    }

    /// Parses the `[calibration]` config block.
    pub fn from_toml(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Block {
            calibration: UnwarpCalibration,
        }
        let block: Block = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        block.calibration.validate()?;
        Ok(block.calibration)
    }

    pub fn to_toml(&self) -> String {
        let m = &self.homography;
        format!(
            "[calibration]\nhomography = [\n  {:?}, {:?}, {:?},\n  {:?}, {:?}, {:?},\n  {:?}, {:?}, {:?},\n]\nradial_k1 = {:?}\nradial_k2 = {:?}\noutput_size = [{}, {}]\n",
            m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8],
            self.radial_k1, self.radial_k2, self.output_size.0, self.output_size.1
        )
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.homography;
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    pub fn validate(&self) -> Result<()> {
        if self.homography.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCalibration("non-finite homography".into()));
        }
        let det = self.determinant();
        if det.abs() <= 1e-9 {
            return Err(Error::InvalidCalibration(format!("singular homography (det {det:e})")));
        }
        if self.output_size.0 == 0 || self.output_size.1 == 0 {
            return Err(Error::InvalidCalibration("empty output size".into()));
        }
        Ok(())
    }

    pub fn inverse_homography(&self) -> Result<[f64; 9]> {
        self.validate()?;
        let m = &self.homography;
        let det = self.determinant();
        let cof = [
            m[4] * m[8] - m[5] * m[7],
            m[2] * m[7] - m[1] * m[8],
            m[1] * m[5] - m[2] * m[4],
            m[5] * m[6] - m[3] * m[8],
            m[0] * m[8] - m[2] * m[6],
            m[2] * m[3] - m[0] * m[5],
            m[3] * m[7] - m[4] * m[6],
            m[1] * m[6] - m[0] * m[7],
            m[0] * m[4] - m[1] * m[3],
        ];
        Ok(cof.map(|v| v / det))
    }

    /// Raw-frame location sampled for output pixel `(row, col)`, as `(row, col)`.
    pub fn source_point(&self, row: f64, col: f64, raw_height: usize, raw_width: usize) -> (f64, f64) {
        let (x, y) = apply_homography(&self.homography, col, row);
        let (x, y) = self.distort(x, y, raw_height, raw_width);
        (y, x)
    }

    fn radial_frame(raw_height: usize, raw_width: usize) -> (f64, f64, f64) {
        let cx = (raw_width as f64 - 1.0) / 2.0;
        let cy = (raw_height as f64 - 1.0) / 2.0;
        (cx, cy, raw_height.max(raw_width) as f64 / 2.0)
    }

    fn distort(&self, x: f64, y: f64, raw_height: usize, raw_width: usize) -> (f64, f64) {
        if self.radial_k1 == 0.0 && self.radial_k2 == 0.0 {
            return (x, y);
        }
        let (cx, cy, f) = Self::radial_frame(raw_height, raw_width);
        let (dx, dy) = ((x - cx) / f, (y - cy) / f);
        let r2 = dx * dx + dy * dy;
        let s = 1.0 + self.radial_k1 * r2 + self.radial_k2 * r2 * r2;
        (cx + dx * s * f, cy + dy * s * f)
    }

    /// Inverse of the radial model by fixed-point iteration on the radius.
    fn undistort(&self, x: f64, y: f64, raw_height: usize, raw_width: usize) -> (f64, f64) {
        if self.radial_k1 == 0.0 && self.radial_k2 == 0.0 {
            return (x, y);
        }
        let (cx, cy, f) = Self::radial_frame(raw_height, raw_width);
        let (dx, dy) = ((x - cx) / f, (y - cy) / f);
        let rd = (dx * dx + dy * dy).sqrt();
        if rd == 0.0 {
            return (x, y);
        }
        let mut ru = rd;
        for _ in 0..100 {
            let r2 = ru * ru;
            let next = rd / (1.0 + self.radial_k1 * r2 + self.radial_k2 * r2 * r2);
            if (next - ru).abs() < 1e-14 {
                ru = next;
                break;
            }
            ru = next;
        }
        let s = ru / rd;
        (cx + dx * s * f, cy + dy * s * f)
    }
}

fn apply_homography(m: &[f64; 9], x: f64, y: f64) -> (f64, f64) {
    let w = m[6] * x + m[7] * y + m[8];
    ((m[0] * x + m[1] * y + m[2]) / w, (m[3] * x + m[4] * y + m[5]) / w)
}

/// Bilinear sample at fractional `(row, col)`; `None` outside the frame.
pub(crate) fn bilinear<T: Scalar>(img: &TactileImage<T>, row: f64, col: f64, ch: usize) -> Option<T> {
    let (h, w) = (img.height(), img.width());
    let eps = 1e-9;
    if !(row > -eps && col > -eps && row < (h - 1) as f64 + eps && col < (w - 1) as f64 + eps) {
        return None;
    }
    let row = row.clamp(0.0, (h - 1) as f64);
    let col = col.clamp(0.0, (w - 1) as f64);
    let (r0, c0) = (row.floor() as usize, col.floor() as usize);
    let (r1, c1) = ((r0 + 1).min(h - 1), (c0 + 1).min(w - 1));
    let (tr, tc) = (row - r0 as f64, col - c0 as f64);
    if tr == 0.0 && tc == 0.0 {
        return Some(img.get(r0, c0, ch));
    }
    let (tr, tc) = (lit::<T>(tr), lit::<T>(tc));
    let one = T::one();
    let top = img.get(r0, c0, ch) * (one - tc) + img.get(r0, c1, ch) * tc;
    let bottom = img.get(r1, c0, ch) * (one - tc) + img.get(r1, c1, ch) * tc;
    Some(top * (one - tr) + bottom * tr)
}

/// Resamples a raw frame into the calibrated rectangle. Output pixels that
/// map outside the raw frame are black.
pub fn unwarp<T: Scalar>(raw: &TactileImage<T>, cal: &UnwarpCalibration) -> Result<TactileImage<T>> {
    cal.validate()?;
    let (rh, rw) = (raw.height(), raw.width());
    let (oh, ow) = cal.output_size;
    let mut pixels = Vec::with_capacity(oh * ow * 3);
    for r in 0..oh {
        for c in 0..ow {
            let (sr, sc) = cal.source_point(r as f64, c as f64, rh, rw);
            for ch in 0..3 {
                pixels.push(bilinear(raw, sr, sc, ch).unwrap_or(T::zero()));
            }
        }
    }
    let mut out = TactileImage::new(oh, ow, pixels)?;
    out.meta = raw.meta.clone();
    Ok(out)
}

/// Synthesizes the raw frame a camera with this calibration would record,
/// i.e. the inverse of [`unwarp`]. Raw pixels that see no part of the
/// rectified image are black.
pub fn warp<T: Scalar>(
    rectified: &TactileImage<T>,
    cal: &UnwarpCalibration,
    raw_height: usize,
    raw_width: usize,
) -> Result<TactileImage<T>> {
    let inv = cal.inverse_homography()?;
    if (rectified.height(), rectified.width()) != cal.output_size {
        return Err(Error::shape(
            "warp",
            &[rectified.height(), rectified.width()],
            &[cal.output_size.0, cal.output_size.1],
        ));
    }
    let mut pixels = Vec::with_capacity(raw_height * raw_width * 3);
    for r in 0..raw_height {
        for c in 0..raw_width {
            let (ux, uy) = cal.undistort(c as f64, r as f64, raw_height, raw_width);
            let (ox, oy) = apply_homography(&inv, ux, uy);
            for ch in 0..3 {
                pixels.push(bilinear(rectified, oy, ox, ch).unwrap_or(T::zero()));
            }
        }
    }
    let mut out = TactileImage::new(raw_height, raw_width, pixels)?;
    out.meta = rectified.meta.clone();
    Ok(out)
}

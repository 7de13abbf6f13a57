use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::simgel::{TactileImage, CHANNELS};

/// Downsample size used for the classical learners, `(h, w)`.
pub const DEFAULT_FEATURE_SIZE: (usize, usize) = (32, 24);

/// Overlap weights of each target cell with the source cells along one axis.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|j| {
            let (lo, hi) = (j as f64 * scale, (j + 1) as f64 * scale);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|i| {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)) / scale;
                    (overlap > 1e-12).then_some((i, overlap))
                })
                .collect()
        })
        .collect()
}

/// Area-averaged resample to `h x w`. Works for up- and downsampling.
pub fn resample_area<T: Scalar>(img: &TactileImage<T>, h: usize, w: usize) -> Result<TactileImage<T>> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("target size must be non-zero".into()));
    }
    if (h, w) == (img.height(), img.width()) {
        return Ok(img.clone());
    }
    let rows = area_weights(img.height(), h);
    let cols = area_weights(img.width(), w);
    let mut out = TactileImage::from_fn(h, w, |r, c, ch| {
        let mut acc = 0.0;
        for &(sr, wr) in &rows[r] {
            for &(sc, wc) in &cols[c] {
                acc += wr * wc * img.get(sr, sc, ch).to_f64().unwrap();
            }
        }
        lit(acc)
    });
    out.meta = img.meta.clone();
    Ok(out)
}

/// Unstandardized feature vector: downsampled channel planes, each row-major,
/// concatenated in channel order. Length `h * w * 3`.
pub fn raw_pixel_features<T: Scalar>(img: &TactileImage<T>, downsample_to: (usize, usize)) -> Result<Vec<T>> {
    let (h, w) = downsample_to;
    if h < 4 || w < 4 {
        return Err(Error::InvalidArgument(format!("feature size must be at least 4x4, got {h}x{w}")));
    }
    let small = resample_area(img, h, w)?;
    let mut out = Vec::with_capacity(h * w * CHANNELS);
    for ch in 0..CHANNELS {
        for r in 0..h {
            for c in 0..w {
                out.push(small.get(r, c, ch));
            }
        }
    }
    Ok(out)
}

/// `[3, h, w]` network input tensor after area resampling.
pub fn network_tensor<T: Scalar>(img: &TactileImage<T>, size: (usize, usize)) -> Result<Tensor<T>> {
    let small = resample_area(img, size.0, size.1)?;
    Tensor::new(vec![CHANNELS, size.0, size.1], small.to_chw())
}

/// Per-column affine standardization fitted on a training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; constant columns store 1.
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<T: Scalar>(rows: &[Vec<T>]) -> Result<Self> {
        let first =
            rows.first().ok_or_else(|| Error::DegenerateData("cannot fit a standardizer on zero rows".into()))?;
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            if row.len() != dim {
                return Err(Error::Dimension { expected: dim, got: row.len() });
            }
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v.to_f64().unwrap();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v.to_f64().unwrap() - m;
                *s += d * d;
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform<T: Scalar>(&self, row: &[T]) -> Result<Vec<T>> {
        if row.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: row.len() });
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| lit((v.to_f64().unwrap() - m) / s))
            .collect())
    }

    pub fn transform_all<T: Scalar>(&self, rows: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        rows.iter().map(|r| self.transform(r)).collect()
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::simgel::{TactileImage, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub flip_lr: bool,
    pub brightness_jitter: f64,
    pub contrast_jitter: f64,
    /// Must stay false when labels depend on where the contact is.
    pub geometric_allowed: bool,
}

/// One concrete draw from an [`AugmentPolicy`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub flip: bool,
    /// Added to every pixel.
    pub brightness: f64,
    /// Scale about the image mean.
    pub contrast: f64,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation { flip: false, brightness: 0.0, contrast: 1.0 };

    /// Pixel values before the final clamp, in the image's HWC layout.
    pub fn apply_unclamped<T: Scalar>(&self, img: &TactileImage<T>) -> Vec<T> {
        let (h, w) = (img.height(), img.width());
        let mut out = Vec::with_capacity(h * w * CHANNELS);
        for r in 0..h {
            for c in 0..w {
                let src = if self.flip { w - 1 - c } else { c };
                for ch in 0..CHANNELS {
                    out.push(img.get(r, src, ch));
                }
            }
        }
        if self.contrast != 1.0 {
            let mean = lit::<T>(img.mean());
            let k = lit::<T>(self.contrast);
            out.iter_mut().for_each(|v| *v = (*v - mean) * k + mean);
        }
        if self.brightness != 0.0 {
            let b = lit::<T>(self.brightness);
            out.iter_mut().for_each(|v| *v += b);
        }
        out
    }

    pub fn apply<T: Scalar>(&self, img: &TactileImage<T>) -> TactileImage<T> {
        let values = self.apply_unclamped(img);
        let w = img.width();
        let mut out = TactileImage::from_fn(img.height(), w, |r, c, ch| values[(r * w + c) * CHANNELS + ch]);
        out.meta = img.meta.clone();
        out
    }
}

impl AugmentPolicy {
    /// Photometric-only policy, safe for position labels.
    pub fn photometric(brightness_jitter: f64, contrast_jitter: f64) -> Self {
        AugmentPolicy { flip_lr: false, brightness_jitter, contrast_jitter, geometric_allowed: false }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.brightness_jitter) || !ok(self.contrast_jitter) {
            return Err(Error::InvalidArgument("jitter must be finite and non-negative".into()));
        }
        if self.contrast_jitter >= 1.0 {
            return Err(Error::InvalidArgument("contrast jitter must be below 1".into()));
        }
        if self.flip_lr && !self.geometric_allowed {
            return Err(Error::InvalidArgument(
                "flip_lr is geometric but geometric augmentation is not allowed".into(),
            ));
        }
        Ok(())
    }

    pub fn is_null(&self) -> bool {
        !self.flip_lr && self.brightness_jitter == 0.0 && self.contrast_jitter == 0.0
    }

    pub fn sample(&self, seed: u64) -> Augmentation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = Augmentation::IDENTITY;
        if self.flip_lr && self.geometric_allowed {
            draw.flip = rng.random_bool(0.5);
        }
        if self.brightness_jitter > 0.0 {
            draw.brightness = rng.random_range(-self.brightness_jitter..=self.brightness_jitter);
        }
        if self.contrast_jitter > 0.0 {
            draw.contrast = rng.random_range(1.0 - self.contrast_jitter..=1.0 + self.contrast_jitter);
        }
        draw
    }
}

/// Seeded augmentation; the output is clamped to `[0, 1]`.
pub fn augment<T: Scalar>(img: &TactileImage<T>, policy: &AugmentPolicy, seed: u64) -> Result<TactileImage<T>> {
    policy.validate()?;
    if policy.is_null() {
        return Ok(img.clone());
    }
    Ok(policy.sample(seed).apply(img))
}

//! Rectification, augmentation and raw-pixel features.

mod augment;
mod features;
mod unwarp;

pub use augment::{augment, AugmentPolicy, Augmentation};
pub use features::{network_tensor, raw_pixel_features, resample_area, Standardizer, DEFAULT_FEATURE_SIZE};
pub use unwarp::{unwarp, warp, UnwarpCalibration};

#[cfg(test)]
mod tests;

//! The seven learners: four convolutional networks, two kernel SVMs and KNN.

mod checkpoint;
mod knn;
mod network;
mod spec;
mod svm;

pub use checkpoint::{Checkpoint, FeatureStage, Learner, CHECKPOINT_MAGIC};
pub use knn::KnnModel;
pub use network::{argmax, residual_block, InputNorm, NamedTensor, Network, Prediction};
pub use spec::{denormalize, normalize, Arch, Head, ModelSpec, FORCE_RANGE_N, POSITION_RANGE_MM};
pub use svm::{
    default_max_iter, dual_is_monotone, ovo_vote, smo_solve, BinarySvm, Kernel, PairModel, SmoSolution, SvmFitReport,
    SvmModel,
};

use crate::error::Result;
use crate::imaging::{network_tensor, raw_pixel_features};
use crate::scalar::Scalar;
use crate::simgel::TactileImage;

impl<T: Scalar> Checkpoint<T> {
    /// Prediction for one rectified tactile image.
    pub fn predict_image(&self, img: &TactileImage<T>) -> Result<Prediction> {
        match &self.learner {
            Learner::Network(net) => {
                let [_, h, w] = net.input_shape();
                net.predict(&network_tensor(img, (h, w))?)
            }
            Learner::Svm { features, model } => {
                let x = features.transform(img)?;
                Ok(Prediction::Class { class: model.predict(&x)?, logits: Vec::new() })
            }
            Learner::Knn { features, model } => {
                let x = features.transform(img)?;
                Ok(Prediction::Class { class: model.classify(&x)?, logits: Vec::new() })
            }
        }
    }
}

impl FeatureStage {
    /// Standardized raw-pixel feature vector of an image.
    pub fn transform<T: Scalar>(&self, img: &TactileImage<T>) -> Result<Vec<f64>> {
        let raw: Vec<f64> = raw_pixel_features(img, self.size)?.into_iter().map(|v| v.to_f64().unwrap()).collect();
        self.standardizer.transform(&raw)
    }
}

#[cfg(test)]
mod tests;

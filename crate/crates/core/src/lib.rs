pub mod autodiff;
pub mod datasets;
pub mod error;
pub mod imaging;
pub mod models;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Graph64 = autodiff::Graph<f64>;
pub mod simgel;
pub mod trainer;

pub type Heightmap64 = simgel::Heightmap<f64>;
pub type TactileImage64 = simgel::TactileImage<f64>;
pub type TactileImage32 = simgel::TactileImage<f32>;

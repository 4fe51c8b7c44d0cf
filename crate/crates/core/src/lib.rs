//! Single-step sample erasure for trained classifiers.
//!
//! A trained model `θ⋆` is edited to approximate retraining without a set of
//! samples `S` by one Newton-like step whose curvature is a dampened inverse
//! empirical Fisher, accumulated with Sherman-Morrison rank-one updates.
//!
//! ```
//! use ssse::{data, erasure, fisher, models, training};
//!
//! let ds: ssse::DatasetF64 = data::make_blobs(7, 20, &[[-1.0, 0.0], [1.0, 0.0]], 0.6).unwrap();
//! let shape = models::Shape::MultinomialLinear { classes: 2, features: 2 };
//! let loss = models::LossConfig::new(1e-2).unwrap();
//! let theta = training::train(&ds, shape, &loss, &training::TrainConfig::default())
//!     .unwrap()
//!     .params;
//! let spec = fisher::BlockSpec::for_shape(&shape, 64).unwrap();
//! let finv = fisher::build_inverse_fisher(&theta, &ds, &loss, 1e-2, &spec, 1).unwrap();
//! let req = erasure::ErasureRequest::new(vec![0, 1, 2], 1.0);
//! let erased = erasure::ssse_update(&theta, &finv, &ds, &loss, &req).unwrap();
//! assert_eq!(erased.len(), theta.len());
//! ```

pub mod cli;
pub mod data;
pub mod erasure;
pub mod error;
pub mod eval;
pub mod fisher;
pub mod io;
pub mod linalg;
pub mod models;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ModelParamsF64 = models::ModelParams<f64>;
pub type ModelParamsF32 = models::ModelParams<f32>;
pub type DatasetF64 = models::Dataset<f64>;
pub type DatasetF32 = models::Dataset<f32>;
pub type InverseFisherF64 = fisher::InverseFisher<f64>;
pub type InverseFisherF32 = fisher::InverseFisher<f32>;
pub type LossConfigF64 = models::LossConfig<f64>;
pub type TrainConfigF64 = training::TrainConfig<f64>;
pub type MatrixF64 = linalg::Matrix<f64>;

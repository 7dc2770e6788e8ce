//! Classification with class centers fixed at the vertices of a regular
//! simplex inscribed in an origin-centered hypersphere.
//!
//! A small feed-forward network is trained so that each class's features
//! gather around its own center. Because the centers share a norm and are
//! mutually equidistant, nearest-center classification gives the same answer
//! in Euclidean and cosine metrics, and the distance to the nearest center
//! doubles as an unknown-sample score.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.
//!
//! ```
//! use dsc_core::{build_centers, Centers};
//!
//! let centers: Centers = build_centers(4, 3, 64.0).unwrap();
//! assert!(centers.validate().is_valid());
//! ```

pub mod datakit;
pub mod error;
pub mod evalkit;
pub mod inference;
pub mod io;
pub mod losses;
pub mod matrix;
pub mod network;
pub mod scalar;
pub mod simplex;
pub mod trainer;

pub use error::{DscError, Result};
pub use inference::{Label, Prediction};
pub use losses::{FeatureBatch, LossKind, LossOutput, LossSpec};
pub use matrix::Matrix;
pub use network::{LayerSpec, NetworkModel};
pub use scalar::Scalar;
pub use simplex::{build_centers, build_unit_simplex, SimplexCenters};
pub use trainer::{train, OptimizerKind, TrainConfig, TrainLog};

pub type Centers = SimplexCenters<f64>;
pub type Centers32 = SimplexCenters<f32>;
pub type Model = NetworkModel<f64>;
pub type Model32 = NetworkModel<f32>;
pub type Dataset = datakit::LabeledDataset<f64>;
pub type Dataset32 = datakit::LabeledDataset<f32>;
pub type Mat = Matrix<f64>;
pub type Mat32 = Matrix<f32>;

//! User embeddings from semantically labeled trajectory segments.
//!
//! Segments are one-hot encoded into movement descriptors ([`schema`]),
//! reduced to one vector per user by count models ([`baselines`]) or by
//! the Traj2User network ([`neural`]), and scored with a similarity-search
//! protocol over virtual user pairs ([`eval`]). [`synth`] generates corpora
//! with plantable user structure.
//!
//! The numeric code is generic over [`Scalar`] (`f32`, `f64`); the aliases
//! below fix it to `f64`, which is what the toolkit uses throughout.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod factor;
pub mod linalg;
pub mod method;
pub mod neural;
pub mod scalar;
pub mod schema;
pub mod synth;

pub use error::{Error, Result};
pub use factor::CompressionFactor;
pub use method::{EmbeddingMethod, Method, MethodKind};
pub use neural::TrainConfig;
pub use scalar::Scalar;
pub use schema::{LabelSchema, MovementDescriptor, Segment, UserCorpus};
pub use synth::SynthConfig;

pub type EmbeddingMatrix = baselines::EmbeddingMatrix<f64>;
pub type EmbeddingMatrixF32 = baselines::EmbeddingMatrix<f32>;
pub type Traj2UserModel = neural::Traj2UserModel<f64>;
pub type Traj2UserModelF32 = neural::Traj2UserModel<f32>;
pub type Matrix = linalg::Matrix<f64>;

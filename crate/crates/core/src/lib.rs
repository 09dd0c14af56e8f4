//! Knowledge graph completion with a patch-refinement transformer.
//!
//! Entity and relation embeddings are cut into sequences of patches, refined
//! by a two-tower cross-attention encoder, and scored against every entity.
//! The crate also ships TransE and DistMult baselines, 1-vs-all training
//! with label-smoothed binary cross entropy, filtered ranking evaluation,
//! and the ablation and sweep harnesses built on top of them.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used for training.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod kg;
pub mod model;
pub mod optim;
pub mod params;
pub mod patreformer;
pub mod scalar;
pub mod segmentation;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type PatReFormer32 = patreformer::PatReFormer<f32>;
pub type PatReFormer64 = patreformer::PatReFormer<f64>;
pub type Model32 = model::AnyModel<f32>;
pub type Model64 = model::AnyModel<f64>;

/// Seeded generator used everywhere randomness enters.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}

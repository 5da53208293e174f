//! Desk-scale preference-learning toolkit.
//!
//! The crate covers the third stage of an instruction-model training pipeline
//! at a size that runs on one CPU core: preference datasets and their
//! statistics ([`corpus`]), a tiny differentiable character-level LM
//! ([`tinylm`]), preference-model training and evaluation ([`prefmodel`]),
//! direct preference optimization ([`dpo`]), a PPO loop with per-batch
//! advantage normalization ([`ppo`]), repetition and cycle detection
//! ([`textscan`]), perplexity-threshold dataset curation ([`curation`]), and
//! side-by-side/curve reporting ([`report`]). [`synth`] generates the
//! synthetic corpora and hidden-oracle preference data the experiments run on.
//!
//! Numeric kernels are generic over [`scalar::Scalar`]; the concrete aliases
//! below pin the training paths to `f64`.

pub mod corpus;
pub mod curation;
pub mod dpo;
pub mod experiments;
pub mod linalg;
pub mod ppo;
pub mod prefmodel;
pub mod report;
pub mod scalar;
pub mod synth;
pub mod textscan;
pub mod tinylm;

/// Scalar type used by all shipped training and verification paths.
///
/// Double precision is deliberate: the finite-difference gradient checks that
/// gate every loss in this crate are meaningless in `f32`.
pub type Real = f64;

/// Tiny-LM parameters at the default precision.
pub type LmParams = tinylm::LmParams<Real>;
/// Gradient buffer at the default precision.
pub type Gradients = tinylm::Gradients<Real>;
/// Adam accumulators at the default precision.
pub type AdamState = tinylm::AdamState<Real>;
/// Preference-model parameters at the default precision.
pub type PmParams = prefmodel::PmParams<Real>;
/// Critic head at the default precision.
pub type CriticParams = ppo::CriticParams<Real>;
/// PPO rollout at the default precision.
pub type Rollout = ppo::Rollout<Real>;

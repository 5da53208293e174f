//! A small, fully self-contained differentiable character-level language
//! model: log-likelihoods, perplexity, sampling, NLL training with exact
//! gradients, and a finite-difference verification harness.
//!
//! The model stands in for the large instruction-tuned generators that the
//! preference, DPO, and PPO stages would normally wrap, while exposing the
//! same quantities those stages need: per-token log-probabilities, per-position
//! hidden states for scalar heads, and seeded sampling.

mod checkpoint;
mod gradcheck;
mod model;
mod train;
pub mod vocab;

pub use checkpoint::{load_lm, save_lm, CheckpointError, FORMAT_VERSION, LM_FORMAT};
pub use gradcheck::{finite_diff_check, FiniteDiffReport};
pub use model::{
    forward, init, perplexity, response_token_logprobs, sample, sequence_logprob, ForwardPass,
    LmConfig, LmError, LmParams, SampleOptions, Sampled,
};
pub use train::{
    accumulate_logprob_grads, adam_step, mean_nll, nll_loss_and_grad, sequence_logprob_grad,
    train_lm, AdamHyper, AdamState, Gradients, LmTrainConfig, WeightedPosition,
};

pub(crate) use checkpoint::{decode_f64s, encode_f64s, params_from_json, params_to_json};
pub(crate) use train::adam_update_slices;

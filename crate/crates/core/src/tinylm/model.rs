//! The tiny differentiable language model.
//!
//! Architecture: a fixed-window neural LM. To predict the token at position
//! `i`, the `k` previous token embeddings (PAD-padded below the sequence
//! start) are concatenated, pushed through one tanh hidden layer, and mapped
//! to a softmax over the byte-level vocabulary. The hidden state at position
//! `i` therefore depends only on tokens before `i`, which is the causality
//! contract the scoring heads rely on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::tinylm::vocab::{self, Token, EOT, PAD, VOCAB_SIZE};

/// Model dimensions and the initialization seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmConfig {
    /// Number of previous tokens visible when predicting a position.
    pub context_window: usize,
    /// Embedding dimension per token.
    pub embed_dim: usize,
    /// Width of the tanh hidden layer.
    pub hidden_dim: usize,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl LmConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        if self.context_window == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(LmError::InvalidConfig(
                "context_window, embed_dim and hidden_dim must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Dimension of the concatenated window input.
    pub fn input_dim(&self) -> usize {
        self.context_window * self.embed_dim
    }
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            context_window: 16,
            embed_dim: 12,
            hidden_dim: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum LmError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty response: perplexity is undefined")]
    EmptyResponse,
    #[error("token id {0} out of range (vocab size {VOCAB_SIZE})")]
    TokenOutOfRange(Token),
}

/// Full parameter set of the tiny LM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmParams<T> {
    pub config: LmConfig,
    /// `VOCAB_SIZE x embed_dim` token embeddings.
    pub embedding: Matrix<T>,
    /// `(context_window * embed_dim) x hidden_dim` input projection.
    pub w_in: Matrix<T>,
    pub b_in: Vec<T>,
    /// `hidden_dim x VOCAB_SIZE` output projection.
    pub w_out: Matrix<T>,
    pub b_out: Vec<T>,
}

/// Initializes parameters from `uniform(-s, s)` with `s = 1/sqrt(fan-in)`
/// per tensor: `1/sqrt(embed_dim)` for the embedding table, `1/sqrt(k*d)` for
/// the input projection and its bias, `1/sqrt(hidden_dim)` for the output
/// projection and its bias. Deterministic for a fixed `config.seed`.
pub fn init<T: Scalar>(config: LmConfig) -> Result<LmParams<T>, LmError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut uniform = |s: f64| T::from_f64_lossy(rng.gen_range(-s..s));

    let s_emb = 1.0 / (config.embed_dim as f64).sqrt();
    let embedding = Matrix::from_fn(VOCAB_SIZE, config.embed_dim, |_, _| uniform(s_emb));
    let s_in = 1.0 / (config.input_dim() as f64).sqrt();
    let w_in = Matrix::from_fn(config.input_dim(), config.hidden_dim, |_, _| uniform(s_in));
    let b_in = (0..config.hidden_dim).map(|_| uniform(s_in)).collect();
    let s_out = 1.0 / (config.hidden_dim as f64).sqrt();
    let w_out = Matrix::from_fn(config.hidden_dim, VOCAB_SIZE, |_, _| uniform(s_out));
    let b_out = (0..VOCAB_SIZE).map(|_| uniform(s_out)).collect();

    Ok(LmParams {
        config,
        embedding,
        w_in,
        b_in,
        w_out,
        b_out,
    })
}

impl<T: Scalar> LmParams<T> {
    /// All-zero parameters: every softmax row is the uniform distribution.
    pub fn zeros(config: LmConfig) -> Result<Self, LmError> {
        config.validate()?;
        Ok(LmParams {
            config,
            embedding: Matrix::zeros(VOCAB_SIZE, config.embed_dim),
            w_in: Matrix::zeros(config.input_dim(), config.hidden_dim),
            b_in: vec![T::zero(); config.hidden_dim],
            w_out: Matrix::zeros(config.hidden_dim, VOCAB_SIZE),
            b_out: vec![T::zero(); VOCAB_SIZE],
        })
    }

    /// Parameter tensors in canonical order (embedding, w_in, b_in, w_out, b_out).
    pub fn tensor_slices(&self) -> [&[T]; 5] {
        [
            self.embedding.as_slice(),
            self.w_in.as_slice(),
            &self.b_in,
            self.w_out.as_slice(),
            &self.b_out,
        ]
    }

    pub fn tensor_slices_mut(&mut self) -> [&mut [T]; 5] {
        [
            self.embedding.as_mut_slice(),
            self.w_in.as_mut_slice(),
            &mut self.b_in,
            self.w_out.as_mut_slice(),
            &mut self.b_out,
        ]
    }

    /// Total number of scalar parameters.
    pub fn coord_count(&self) -> usize {
        self.tensor_slices().iter().map(|s| s.len()).sum()
    }

    pub fn get_coord(&self, flat: usize) -> T {
        let mut idx = flat;
        for s in self.tensor_slices() {
            if idx < s.len() {
                return s[idx];
            }
            idx -= s.len();
        }
        panic!("flat coordinate {flat} out of range");
    }

    pub fn set_coord(&mut self, flat: usize, value: T) {
        let mut idx = flat;
        for s in self.tensor_slices_mut() {
            if idx < s.len() {
                s[idx] = value;
                return;
            }
            idx -= s.len();
        }
        panic!("flat coordinate {flat} out of range");
    }

    /// Fills `x` (length `k*d`) with the concatenated embeddings of the `k`
    /// tokens preceding `pos` in `tokens`, PAD-padded below index 0.
    pub(crate) fn fill_window(&self, tokens: &[Token], pos: usize, x: &mut [T]) {
        let k = self.config.context_window;
        let d = self.config.embed_dim;
        debug_assert_eq!(x.len(), k * d);
        for slot in 0..k {
            // token at position pos - k + slot
            let p = pos as isize - k as isize + slot as isize;
            let tok = if p < 0 { PAD } else { tokens[p as usize] };
            let row = self.embedding.row(tok as usize);
            x[slot * d..(slot + 1) * d].copy_from_slice(row);
        }
    }

    /// Hidden state for position `pos`: a function of the `k` tokens before it.
    pub(crate) fn hidden_at(&self, tokens: &[Token], pos: usize, x: &mut [T]) -> Vec<T> {
        self.fill_window(tokens, pos, x);
        let mut hidden = self.b_in.clone();
        self.w_in.vec_mat_accum(x, &mut hidden);
        for h in &mut hidden {
            *h = h.tanh();
        }
        hidden
    }

    /// Log-probability row (length `VOCAB_SIZE`) from a hidden state.
    pub(crate) fn logprob_row(&self, hidden: &[T]) -> Vec<T> {
        let mut logits = self.b_out.clone();
        self.w_out.vec_mat_accum(hidden, &mut logits);
        log_softmax_in_place(&mut logits);
        logits
    }

    fn check_tokens(&self, tokens: &[Token]) -> Result<(), LmError> {
        match tokens.iter().find(|&&t| (t as usize) >= VOCAB_SIZE) {
            Some(&bad) => Err(LmError::TokenOutOfRange(bad)),
            None => Ok(()),
        }
    }
}

/// Shifts a logits vector into normalized log-probabilities.
fn log_softmax_in_place<T: Scalar>(logits: &mut [T]) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    for l in logits.iter_mut() {
        *l = *l - lse;
    }
}

/// Per-position outputs of a full forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    /// `logprobs[i]` is the normalized log-probability row for predicting the
    /// token at position `i` from the window preceding it.
    pub logprobs: Vec<Vec<T>>,
    /// `hidden[i]` is the tanh hidden state at position `i`.
    pub hidden: Vec<Vec<T>>,
}

/// Runs the model over every position of `tokens`.
pub fn forward<T: Scalar>(params: &LmParams<T>, tokens: &[Token]) -> Result<ForwardPass<T>, LmError> {
    params.check_tokens(tokens)?;
    let mut x = vec![T::zero(); params.config.input_dim()];
    let mut logprobs = Vec::with_capacity(tokens.len());
    let mut hidden = Vec::with_capacity(tokens.len());
    for pos in 0..tokens.len() {
        let h = params.hidden_at(tokens, pos, &mut x);
        logprobs.push(params.logprob_row(&h));
        hidden.push(h);
    }
    Ok(ForwardPass { logprobs, hidden })
}

/// Log-probabilities of each response token (and the terminal EOT) given
/// `BOS + request + SEP + response-so-far`, in sequence order.
///
/// Byte-level encoding is total, so this cannot fail for string inputs.
pub fn response_token_logprobs<T: Scalar>(
    params: &LmParams<T>,
    request: &str,
    response: &str,
) -> Vec<T> {
    let tokens = vocab::full_sequence(request, response);
    let first_scored = tokens.len() - (response.len() + 1);
    let mut x = vec![T::zero(); params.config.input_dim()];
    let mut out = Vec::with_capacity(response.len() + 1);
    for pos in first_scored..tokens.len() {
        let h = params.hidden_at(&tokens, pos, &mut x);
        let row = params.logprob_row(&h);
        out.push(row[tokens[pos] as usize]);
    }
    out
}

/// Sum of response-token log-probabilities, including the terminal EOT.
pub fn sequence_logprob<T: Scalar>(params: &LmParams<T>, request: &str, response: &str) -> T {
    response_token_logprobs(params, request, response)
        .into_iter()
        .sum()
}

/// `exp(-sequence_logprob / n)` with `n` = response token count + 1 (EOT).
pub fn perplexity<T: Scalar>(
    params: &LmParams<T>,
    request: &str,
    response: &str,
) -> Result<T, LmError> {
    if response.is_empty() {
        return Err(LmError::EmptyResponse);
    }
    let n = response.len() + 1;
    let lp = sequence_logprob(params, request, response);
    Ok((-lp / T::from_f64_lossy(n as f64)).exp())
}

/// Sampling controls. With `greedy` set, the temperature is ignored and the
/// highest-probability token is taken at every step (lowest id on ties).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    pub max_len: usize,
    pub temperature: f64,
    pub greedy: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            max_len: 64,
            temperature: 1.0,
            greedy: false,
        }
    }
}

/// One sampled response.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    /// Decoded response text (EOT excluded).
    pub text: String,
    /// Raw response tokens (EOT excluded).
    pub tokens: Vec<Token>,
    /// True iff generation stopped at `max_len` instead of EOT.
    pub hit_cap: bool,
}

/// Samples a response to `request`, stopping at EOT or after `max_len`
/// tokens. Deterministic for a fixed seed.
pub fn sample<T: Scalar>(
    params: &LmParams<T>,
    request: &str,
    options: SampleOptions,
    seed: u64,
) -> Sampled {
    assert!(options.max_len >= 1, "max_len must be >= 1");
    assert!(
        options.greedy || options.temperature > 0.0,
        "temperature must be > 0"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tokens = vocab::prompt_tokens(request);
    let prompt_len = tokens.len();
    let mut x = vec![T::zero(); params.config.input_dim()];
    let mut hit_cap = true;
    for _ in 0..options.max_len {
        let pos = tokens.len();
        let h = params.hidden_at(&tokens, pos, &mut x);
        let row = params.logprob_row(&h);
        let tok = if options.greedy {
            argmax(&row)
        } else {
            draw(&row, options.temperature, &mut rng)
        };
        if tok == EOT {
            hit_cap = false;
            break;
        }
        tokens.push(tok);
    }
    let response = &tokens[prompt_len..];
    Sampled {
        text: vocab::decode(response),
        tokens: response.to_vec(),
        hit_cap,
    }
}

fn argmax<T: Scalar>(row: &[T]) -> Token {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as Token
}

/// Draws one token from `exp(logprob / temperature)` renormalized.
fn draw<T: Scalar>(row: &[T], temperature: f64, rng: &mut ChaCha8Rng) -> Token {
    let inv_t = 1.0 / temperature;
    let scaled: Vec<f64> = row.iter().map(|&l| l.to_f64_lossy() * inv_t).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i as Token;
        }
    }
    (weights.len() - 1) as Token
}

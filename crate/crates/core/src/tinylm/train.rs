//! Gradients, backpropagation, and the Adam optimizer for the tiny LM.
//!
//! All loss gradients in this crate funnel through
//! [`accumulate_logprob_grads`]: given per-position weights `c_i`, it adds
//! `sum_i c_i * grad log p(token_i | window_i)` to a gradient buffer. NLL
//! training, the pairwise preference loss, DPO, and the PPO surrogate are all
//! linear combinations of token log-probability gradients, so they share this
//! one exactly-checked code path.

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::tinylm::model::{LmConfig, LmParams};
use crate::tinylm::vocab::{self, Token, VOCAB_SIZE};

/// Gradient buffer, shape-congruent with [`LmParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub embedding: Matrix<T>,
    pub w_in: Matrix<T>,
    pub b_in: Vec<T>,
    pub w_out: Matrix<T>,
    pub b_out: Vec<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros(config: &LmConfig) -> Self {
        Self {
            embedding: Matrix::zeros(VOCAB_SIZE, config.embed_dim),
            w_in: Matrix::zeros(config.input_dim(), config.hidden_dim),
            b_in: vec![T::zero(); config.hidden_dim],
            w_out: Matrix::zeros(config.hidden_dim, VOCAB_SIZE),
            b_out: vec![T::zero(); VOCAB_SIZE],
        }
    }

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

    pub fn scale(&mut self, c: T) {
        for s in self.tensor_slices_mut() {
            for v in s.iter_mut() {
                *v = *v * c;
            }
        }
    }

    pub fn max_abs(&self) -> T {
        self.tensor_slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    fn same_shape(&self, params: &LmParams<T>) -> bool {
        self.embedding.same_shape(&params.embedding)
            && self.w_in.same_shape(&params.w_in)
            && self.b_in.len() == params.b_in.len()
            && self.w_out.same_shape(&params.w_out)
            && self.b_out.len() == params.b_out.len()
    }
}

/// One scored position: the model's log-probability of `tokens[pos]` enters
/// the objective with weight `weight`.
#[derive(Debug, Clone, Copy)]
pub struct WeightedPosition<T> {
    pub pos: usize,
    pub weight: T,
}

/// Accumulates `sum_i weight_i * grad log p(tokens[pos_i] | window)` into
/// `grads` and returns `sum_i weight_i * log p(tokens[pos_i] | window)`.
pub fn accumulate_logprob_grads<T: Scalar>(
    params: &LmParams<T>,
    tokens: &[Token],
    positions: &[WeightedPosition<T>],
    grads: &mut Gradients<T>,
) -> T {
    assert!(grads.same_shape(params), "gradient shape mismatch");
    let k = params.config.context_window;
    let d = params.config.embed_dim;
    let mut x = vec![T::zero(); params.config.input_dim()];
    let mut weighted_lp = T::zero();
    for &WeightedPosition { pos, weight } in positions {
        let target = tokens[pos] as usize;
        let hidden = params.hidden_at(tokens, pos, &mut x);
        let row = params.logprob_row(&hidden);
        weighted_lp += weight * row[target];

        // d logp[target] / d logits_j = delta(j, target) - softmax_j
        let mut dlogits: Vec<T> = row.iter().map(|&l| -weight * l.exp()).collect();
        dlogits[target] += weight;

        crate::linalg::axpy(T::one(), &dlogits, &mut grads.b_out);
        grads.w_out.outer_accum(&hidden, &dlogits);

        let mut dhidden = vec![T::zero(); hidden.len()];
        params.w_out.mat_vec_accum(&dlogits, &mut dhidden);
        for (dh, &h) in dhidden.iter_mut().zip(&hidden) {
            *dh = *dh * (T::one() - h * h);
        }

        crate::linalg::axpy(T::one(), &dhidden, &mut grads.b_in);
        grads.w_in.outer_accum(&x, &dhidden);

        let mut dx = vec![T::zero(); x.len()];
        params.w_in.mat_vec_accum(&dhidden, &mut dx);
        for slot in 0..k {
            let p = pos as isize - k as isize + slot as isize;
            let tok = if p < 0 { vocab::PAD } else { tokens[p as usize] };
            let row = grads.embedding.row_mut(tok as usize);
            crate::linalg::axpy(T::one(), &dx[slot * d..(slot + 1) * d], row);
        }
    }
    weighted_lp
}

/// Positions of the response tokens plus the terminal EOT in a full sequence.
fn scored_positions(request: &str, response: &str) -> std::ops::Range<usize> {
    let total = vocab::full_sequence(request, response).len();
    (total - (response.len() + 1))..total
}

/// Adds `weight * grad log pi(response | request)` to `grads` and returns
/// `log pi(response | request)` under `params`.
pub fn sequence_logprob_grad<T: Scalar>(
    params: &LmParams<T>,
    request: &str,
    response: &str,
    weight: T,
    grads: &mut Gradients<T>,
) -> T {
    let tokens = vocab::full_sequence(request, response);
    let positions: Vec<WeightedPosition<T>> = scored_positions(request, response)
        .map(|pos| WeightedPosition { pos, weight })
        .collect();
    let weighted = accumulate_logprob_grads(params, &tokens, &positions, grads);
    weighted / weight
}

/// Mean-over-sequences of mean per-token NLL (response tokens + EOT), with
/// its exact gradient.
pub fn nll_loss_and_grad<T: Scalar>(
    params: &LmParams<T>,
    batch: &[(String, String)],
) -> (T, Gradients<T>) {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let mut grads = Gradients::zeros(&params.config);
    let inv_batch = T::one() / T::from_f64_lossy(batch.len() as f64);
    let mut loss = T::zero();
    for (request, response) in batch {
        let tokens = vocab::full_sequence(request, response);
        let range = scored_positions(request, response);
        let n_tokens = T::from_f64_lossy(range.len() as f64);
        let weight = -inv_batch / n_tokens;
        let positions: Vec<WeightedPosition<T>> = range
            .map(|pos| WeightedPosition { pos, weight })
            .collect();
        loss += accumulate_logprob_grads(params, &tokens, &positions, &mut grads);
    }
    (loss, grads)
}

/// Held-out mean per-token NLL without gradients (proxy evaluation metric).
pub fn mean_nll<T: Scalar>(params: &LmParams<T>, batch: &[(String, String)]) -> T {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let mut total = T::zero();
    for (request, response) in batch {
        let lps = crate::tinylm::model::response_token_logprobs(params, request, response);
        let mean: T = lps.iter().copied().sum::<T>() / T::from_f64_lossy(lps.len() as f64);
        total += -mean;
    }
    total / T::from_f64_lossy(batch.len() as f64)
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Gradients<T>,
    pub v: Gradients<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: &LmConfig) -> Self {
        Self {
            m: Gradients::zeros(config),
            v: Gradients::zeros(config),
            step: 0,
        }
    }
}

/// In-place Adam update over a set of parameter tensors. `step` is the
/// already-incremented step counter used for bias correction.
pub(crate) fn adam_update_slices<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    m: &mut [&mut [T]],
    v: &mut [&mut [T]],
    step: u64,
    hyper: AdamHyper,
) {
    let b1 = T::from_f64_lossy(hyper.beta1);
    let b2 = T::from_f64_lossy(hyper.beta2);
    let lr = T::from_f64_lossy(hyper.lr);
    let eps = T::from_f64_lossy(hyper.eps);
    let one = T::one();
    let bc1 = one - T::from_f64_lossy(hyper.beta1.powi(step as i32));
    let bc2 = one - T::from_f64_lossy(hyper.beta2.powi(step as i32));
    for (((ps, gs), ms), vs) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        assert_eq!(ps.len(), gs.len(), "parameter/gradient shape mismatch");
        for i in 0..ps.len() {
            let g = gs[i];
            ms[i] = b1 * ms[i] + (one - b1) * g;
            vs[i] = b2 * vs[i] + (one - b2) * g * g;
            let m_hat = ms[i] / bc1;
            let v_hat = vs[i] / bc2;
            ps[i] = ps[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Standard Adam step with bias correction; increments the step counter.
pub fn adam_step<T: Scalar>(
    params: &mut LmParams<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    hyper: AdamHyper,
) {
    assert!(grads.same_shape(params), "gradient shape mismatch");
    state.step += 1;
    let step = state.step;
    adam_update_slices(
        &mut params.tensor_slices_mut(),
        &grads.tensor_slices(),
        &mut state.m.tensor_slices_mut(),
        &mut state.v.tensor_slices_mut(),
        step,
        hyper,
    );
}

/// Settings for the plain NLL training loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            batch_size: 16,
            epochs: 5,
            seed: 0,
        }
    }
}

/// Adam/NLL training over a (request, response) corpus with shuffled batches.
/// Returns the mean loss per epoch. Deterministic for a fixed seed.
pub fn train_lm<T: Scalar>(
    params: &mut LmParams<T>,
    corpus: &[(String, String)],
    config: &LmTrainConfig,
) -> Vec<f64> {
    assert!(!corpus.is_empty(), "corpus must be non-empty");
    assert!(config.batch_size >= 1 && config.lr > 0.0, "invalid LmTrainConfig");
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut state = AdamState::new(&params.config);
    let hyper = AdamHyper::with_lr(config.lr);
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(String, String)> =
                chunk.iter().map(|&i| corpus[i].clone()).collect();
            let (loss, grads) = nll_loss_and_grad(params, &batch);
            adam_step(params, &grads, &mut state, hyper);
            epoch_loss += loss.to_f64_lossy();
            batches += 1;
        }
        losses.push(epoch_loss / batches as f64);
    }
    losses
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinylm::model::init;

    fn tiny_config(seed: u64) -> LmConfig {
        LmConfig {
            context_window: 4,
            embed_dim: 3,
            hidden_dim: 5,
            seed,
        }
    }

    fn tiny_batch() -> Vec<(String, String)> {
        vec![
            ("add".to_string(), "sum".to_string()),
            ("cap".to_string(), "CAP".to_string()),
        ]
    }

    #[test]
    fn uniform_model_loss_is_log_vocab() {
        let p: LmParams<f64> = LmParams::zeros(tiny_config(0)).unwrap();
        let (loss, grads) = nll_loss_and_grad(&p, &tiny_batch());
        assert!((loss - (VOCAB_SIZE as f64).ln()).abs() < 1e-12);
        // The uniform model still has nonzero gradients toward observed tokens.
        assert!(grads.max_abs() > 0.0);
    }

    #[test]
    fn duplicating_the_batch_leaves_loss_unchanged() {
        let p: LmParams<f64> = init(tiny_config(3)).unwrap();
        let batch = tiny_batch();
        let mut doubled = batch.clone();
        doubled.extend(batch.clone());
        let (l1, g1) = nll_loss_and_grad(&p, &batch);
        let (l2, g2) = nll_loss_and_grad(&p, &doubled);
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.tensor_slices().iter().zip(g2.tensor_slices().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sequence_logprob_grad_matches_value() {
        let p: LmParams<f64> = init(tiny_config(4)).unwrap();
        let mut grads = Gradients::zeros(&p.config);
        let lp = sequence_logprob_grad(&p, "req", "resp", 0.5, &mut grads);
        let direct = crate::tinylm::model::sequence_logprob(&p, "req", "resp");
        assert!((lp - direct).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p: LmParams<f64> = init(tiny_config(5)).unwrap();
        let before = p.clone();
        let grads = Gradients::zeros(&p.config);
        let mut state = AdamState::new(&p.config);
        adam_step(&mut p, &grads, &mut state, AdamHyper::default());
        assert_eq!(p, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_adam_step_moves_by_lr_times_sign() {
        let config = tiny_config(6);
        let mut p: LmParams<f64> = init(config).unwrap();
        let before = p.clone();
        let (_, grads) = nll_loss_and_grad(&p, &tiny_batch());
        let hyper = AdamHyper::with_lr(0.01);
        let mut state = AdamState::new(&p.config);
        adam_step(&mut p, &grads, &mut state, hyper);
        // With zero-initialized moments, m_hat = g and v_hat = g^2, so each
        // coordinate moves by lr * g / (|g| + eps) ~ lr * sign(g).
        for i in 0..p.coord_count() {
            let g = grads.get_coord(i);
            let delta = p.get_coord(i) - before.get_coord(i);
            let expected = -hyper.lr * g / (g.abs() + hyper.eps);
            assert!((delta - expected).abs() < 1e-12);
            if g.abs() > 1e-6 {
                assert!((delta.abs() - hyper.lr).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn adam_descends_on_a_fixed_batch() {
        let mut p: LmParams<f64> = init(tiny_config(7)).unwrap();
        let batch = tiny_batch();
        let (initial, _) = nll_loss_and_grad(&p, &batch);
        let mut state = AdamState::new(&p.config);
        let hyper = AdamHyper::with_lr(0.02);
        let mut last = initial;
        for _ in 0..100 {
            let (loss, grads) = nll_loss_and_grad(&p, &batch);
            adam_step(&mut p, &grads, &mut state, hyper);
            last = loss;
        }
        assert!(
            last < initial - 0.5,
            "expected clear descent: {initial} -> {last}"
        );
    }
}

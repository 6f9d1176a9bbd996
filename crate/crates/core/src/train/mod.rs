//! Optimization: the warmup learning-rate schedule, a rectified Adam
//! optimizer, global-norm gradient clipping, gradient-accumulated batch
//! steps, and the training loop that ties them together.

pub mod checkpoint;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{compute_loss, HMNetParams, MeetingInput, ModelError};
use crate::nn::Runtime;
use crate::tensor::{Tensor, TensorError};

/// First-moment decay of the optimizer.
pub const BETA1: f64 = 0.9;
/// Second-moment decay of the optimizer.
pub const BETA2: f64 = 0.999;
/// Denominator guard in the adaptive update.
pub const ADAM_EPS: f64 = 1e-8;

// ── Errors ──────────────────────────────────────────────────────────────────

/// Failure modes of optimization.
#[derive(Debug)]
pub enum TrainError {
    /// A forward pass produced a non-finite loss.
    NonFiniteLoss,
    /// The global gradient norm was NaN or infinite.
    NonFiniteGradient,
    EmptyBatch,
    BadConfig { reason: String },
    Model(ModelError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::NonFiniteLoss => write!(f, "loss is not finite"),
            TrainError::NonFiniteGradient => write!(f, "gradient norm is not finite"),
            TrainError::EmptyBatch => write!(f, "batch has no examples"),
            TrainError::BadConfig { reason } => write!(f, "bad training config: {reason}"),
            TrainError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TrainError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            TrainError::Model(e) => Some(e),
            _ => None,
        }
    }
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(ModelError::Tensor(e))
    }
}

// ── Configuration and schedule ──────────────────────────────────────────────

/// Everything the optimizer and loop need to know.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Updates over which the learning rate climbs linearly.
    pub warmup_steps: usize,
    /// Learning rate at update zero.
    pub initial_lr: f64,
    /// Learning rate reached at the end of warmup and held afterwards.
    pub peak_lr: f64,
    /// Global L2 cap on gradients.
    pub clip_norm: f64,
    /// Examples whose gradients are averaged into one update.
    pub accumulation_steps: usize,
    pub max_steps: usize,
    /// Invoke the checkpoint callback every this many updates (0 = never).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Schedule for the news-corpus stage.
    pub fn pretrain() -> TrainConfig {
        TrainConfig {
            warmup_steps: 16000,
            initial_lr: 1e-9,
            peak_lr: 1e-3,
            clip_norm: 2.0,
            accumulation_steps: 16,
            max_steps: 100_000,
            checkpoint_every: 1000,
            seed: 1,
        }
    }

    /// Schedule for the meeting-corpus stage: a lower peak rate.
    pub fn finetune() -> TrainConfig {
        TrainConfig {
            peak_lr: 1e-4,
            seed: 2,
            ..TrainConfig::pretrain()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.accumulation_steps == 0 {
            return Err(TrainError::BadConfig {
                reason: "accumulation_steps must be at least 1".into(),
            });
        }
        for (name, v) in [
            ("initial_lr", self.initial_lr),
            ("peak_lr", self.peak_lr),
            ("clip_norm", self.clip_norm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(TrainError::BadConfig {
                    reason: format!("{name} must be positive and finite"),
                });
            }
        }
        Ok(())
    }
}

/// The learning rate for update number `step` (zero-based): linear from
/// `initial_lr` at step 0 to `peak_lr` at step `warmup_steps`, constant
/// afterwards.
pub fn learning_rate(cfg: &TrainConfig, step: usize) -> f64 {
    if step >= cfg.warmup_steps {
        cfg.peak_lr
    } else {
        cfg.initial_lr
            + (cfg.peak_lr - cfg.initial_lr) * (step as f64 / cfg.warmup_steps as f64)
    }
}

// ── Rectified Adam ──────────────────────────────────────────────────────────

/// Optimizer moments, one pair of buffers per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RAdamState {
    t: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl RAdamState {
    /// Zeroed moments shaped like the given tensors.
    pub fn for_tensors(tensors: &[Tensor]) -> RAdamState {
        RAdamState {
            t: 0,
            m: tensors.iter().map(|t| vec![0.0; t.numel()]).collect(),
            v: tensors.iter().map(|t| vec![0.0; t.numel()]).collect(),
        }
    }

    /// Restores saved moments; the caller is responsible for sizes.
    pub fn from_parts(t: usize, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> RAdamState {
        RAdamState { t, m, v }
    }

    /// Completed updates.
    pub fn step_count(&self) -> usize {
        self.t
    }

    /// The first- and second-moment buffers, in tensor order.
    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }
}

/// The variance-rectification factor for update `t` (one-based):
/// `Some(r_t)` once the approximated degrees of freedom `ρ_t` exceed 4,
/// `None` while the update must fall back to the bias-corrected first
/// moment alone. With the default decay this first engages at update 5.
pub fn rectification_factor(t: usize) -> Option<f64> {
    let rho_inf = 2.0 / (1.0 - BETA2) - 1.0;
    let bt = BETA2.powi(t as i32);
    let rho = rho_inf - 2.0 * (t as f64) * bt / (1.0 - bt);
    if rho > 4.0 {
        let r = ((rho - 4.0) * (rho - 2.0) * rho_inf)
            / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho);
        Some(r.sqrt())
    } else {
        None
    }
}

/// One optimizer update over `tensors` from their accumulated gradients.
/// Rectified steps divide the first moment by `√v̂ + ε`; early steps apply
/// `−lr·m̂` unscaled.
pub fn radam_step(tensors: &[Tensor], state: &mut RAdamState, lr: f64) {
    assert_eq!(tensors.len(), state.m.len(), "state sized for another model");
    state.t += 1;
    let t = state.t;
    let bias1 = 1.0 - BETA1.powi(t as i32);
    let bias2 = 1.0 - BETA2.powi(t as i32);
    let rect = rectification_factor(t);

    for (i, tensor) in tensors.iter().enumerate() {
        let grad = tensor.grad_or_zeros();
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let mut values = tensor.values();
        for j in 0..grad.len() {
            m[j] = BETA1 * m[j] + (1.0 - BETA1) * grad[j];
            v[j] = BETA2 * v[j] + (1.0 - BETA2) * grad[j] * grad[j];
            let m_hat = m[j] / bias1;
            values[j] += match rect {
                Some(r) => {
                    let v_hat = v[j] / bias2;
                    -lr * r * m_hat / (v_hat.sqrt() + ADAM_EPS)
                }
                None => -lr * m_hat,
            };
        }
        tensor.set_values(&values);
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(tensors: &[Tensor], max_norm: f64) -> Result<f64, TrainError> {
    let mut sum_sq = 0.0;
    for t in tensors {
        if let Some(g) = t.grad() {
            sum_sq += g.iter().map(|x| x * x).sum::<f64>();
        }
    }
    let norm = sum_sq.sqrt();
    if !norm.is_finite() {
        return Err(TrainError::NonFiniteGradient);
    }
    if norm > max_norm {
        let factor = max_norm / norm;
        for t in tensors {
            if let Some(g) = t.grad() {
                let scaled: Vec<f64> = g.iter().map(|x| x * factor).collect();
                t.set_grad(&scaled);
            }
        }
    }
    Ok(norm)
}

// ── Batched steps and the loop ──────────────────────────────────────────────

/// What one update reports back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Mean loss over the batch.
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// One optimizer update from the mean loss over `indices` into `examples`.
/// Each example's loss is scaled by `1/batch` before its backward pass, so
/// the accumulated gradients equal the gradient of the batch mean; then
/// gradients are clipped and one optimizer step is applied.
pub fn accumulated_step(
    examples: &[(MeetingInput, Vec<usize>)],
    indices: &[usize],
    params: &HMNetParams,
    state: &mut RAdamState,
    lr: f64,
    clip_norm: f64,
    rt: &mut Runtime,
) -> Result<StepStats, TrainError> {
    if indices.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    params.zero_grads();
    let inverse = 1.0 / indices.len() as f64;
    let mut mean_loss = 0.0;
    for &i in indices {
        let (meeting, target) = &examples[i];
        let loss = compute_loss(meeting, target, params, rt)?.scale(inverse);
        if !loss.item().is_finite() {
            return Err(TrainError::NonFiniteLoss);
        }
        mean_loss += loss.item();
        loss.backward()?;
    }
    let tensors = params.tensors();
    let grad_norm = clip_gradients(&tensors, clip_norm)?;
    radam_step(&tensors, state, lr);
    params.zero_grads();
    Ok(StepStats {
        loss: mean_loss,
        grad_norm,
    })
}

/// One line of the training log, emitted after every update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    /// One-based update number.
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

/// Runs `max_steps` updates over `examples`, drawing batches from a seeded
/// shuffle that reshuffles at every pass through the data. `on_log` sees
/// every update; `on_checkpoint` fires every `checkpoint_every` updates
/// with the live parameters and optimizer state, and may return `false`
/// to stop early.
pub fn train_loop<L, C>(
    examples: &[(MeetingInput, Vec<usize>)],
    params: &HMNetParams,
    cfg: &TrainConfig,
    state: &mut RAdamState,
    mut on_log: L,
    mut on_checkpoint: C,
) -> Result<(), TrainError>
where
    L: FnMut(&TrainLogEntry),
    C: FnMut(usize, &HMNetParams, &RAdamState) -> bool,
{
    if examples.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    cfg.validate()?;

    let mut rt = Runtime::train(params.config().dropout, cfg.seed);
    // A separate stream from the dropout noise, so batch order and masks
    // don't mirror each other.
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len();

    for step in 0..cfg.max_steps {
        let mut batch = Vec::with_capacity(cfg.accumulation_steps);
        for _ in 0..cfg.accumulation_steps {
            if cursor >= order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let lr = learning_rate(cfg, state.step_count());
        let stats = accumulated_step(examples, &batch, params, state, lr, cfg.clip_norm, &mut rt)?;
        on_log(&TrainLogEntry {
            step: step + 1,
            lr,
            loss: stats.loss,
            grad_norm: stats.grad_norm,
        });
        if cfg.checkpoint_every > 0
            && (step + 1) % cfg.checkpoint_every == 0
            && !on_checkpoint(step + 1, params, state)
        {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HMNetConfig, TurnInput};

    fn schedule() -> TrainConfig {
        TrainConfig::pretrain()
    }

    #[test]
    fn learning_rate_endpoints_and_midpoint() {
        let cfg = schedule();
        assert_eq!(learning_rate(&cfg, 0), 1e-9);
        assert_eq!(learning_rate(&cfg, 16000), 1e-3);
        assert_eq!(learning_rate(&cfg, 30000), 1e-3);
        let mid = 1e-9 + (1e-3 - 1e-9) * 0.5;
        assert_eq!(learning_rate(&cfg, 8000), mid);
    }

    #[test]
    fn rectification_engages_at_update_five() {
        for t in 1..=4 {
            assert!(rectification_factor(t).is_none(), "update {t} must be plain");
        }
        let r = rectification_factor(5).expect("update 5 must rectify");
        assert!(r > 0.0 && r < 1.0);
    }

    #[test]
    fn first_update_is_bias_corrected_first_moment_times_rate() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let grad = [3.0, -4.0];
        x.set_grad(&grad);
        let mut state = RAdamState::for_tensors(std::slice::from_ref(&x));
        let lr = 0.05;
        radam_step(std::slice::from_ref(&x), &mut state, lr);

        for (j, &g) in grad.iter().enumerate() {
            let m = (1.0 - BETA1) * g;
            let m_hat = m / (1.0 - BETA1);
            let expected = [1.0, 2.0][j] - lr * m_hat;
            assert_eq!(x.values()[j], expected, "element {j}");
            let rel = ((x.values()[j] - ([1.0, 2.0][j] - lr * g)) / (lr * g)).abs();
            assert!(rel < 1e-12, "first update must reduce to −lr·g, rel {rel}");
        }
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn constant_gradient_trajectory_matches_reference() {
        // Six updates of a scalar with gradient 1 at rate 0.01, computed
        // independently: four plain first-moment steps of exactly −0.01,
        // then small rectified steps once enough variance has been seen.
        let expected = [
            0.49,
            0.48,
            0.47,
            0.45999999999999996,
            0.45982688497006796,
            0.4595686738446315,
        ];
        let x = Tensor::new(&[1], vec![0.5]).unwrap();
        let mut state = RAdamState::for_tensors(std::slice::from_ref(&x));
        for &e in &expected {
            x.set_grad(&[1.0]);
            radam_step(std::slice::from_ref(&x), &mut state, 0.01);
            let got = x.values()[0];
            assert!(
                ((got - e) / e).abs() < 1e-12,
                "expected {e}, got {got} at update {}",
                state.step_count()
            );
        }
    }

    #[test]
    fn clipping_scales_norm_five_down_to_two() {
        let a = Tensor::new(&[1], vec![0.0]).unwrap();
        let b = Tensor::new(&[1], vec![0.0]).unwrap();
        a.set_grad(&[3.0]);
        b.set_grad(&[-4.0]);
        let tensors = [a.clone(), b.clone()];
        let norm = clip_gradients(&tensors, 2.0).unwrap();
        assert_eq!(norm, 5.0);
        let (ca, cb) = (a.grad().unwrap()[0], b.grad().unwrap()[0]);
        assert!((ca - 3.0 * 0.4).abs() < 1e-15);
        assert!((cb + 4.0 * 0.4).abs() < 1e-15);
        assert!(((ca * ca + cb * cb).sqrt() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn clipping_leaves_small_gradients_bitwise_untouched() {
        let a = Tensor::new(&[2], vec![0.0, 0.0]).unwrap();
        a.set_grad(&[0.3, 0.4]);
        let before = a.grad().unwrap();
        let norm = clip_gradients(std::slice::from_ref(&a), 2.0).unwrap();
        assert!((norm - 0.5).abs() < 1e-15);
        assert_eq!(a.grad().unwrap(), before);
    }

    #[test]
    fn clipping_rejects_non_finite_norms() {
        let a = Tensor::new(&[1], vec![0.0]).unwrap();
        a.set_grad(&[f64::NAN]);
        assert!(matches!(
            clip_gradients(std::slice::from_ref(&a), 2.0),
            Err(TrainError::NonFiniteGradient)
        ));
    }

    // ── Model-level behavior ────────────────────────────────────────────

    fn tiny_cfg() -> HMNetConfig {
        HMNetConfig {
            vocab_size: 12,
            n_pos_tags: 2,
            n_ent_tags: 2,
            n_roles: 2,
            d_word: 8,
            d_pos: 2,
            d_ent: 2,
            d_role: 4,
            n_layers: 1,
            n_heads: 2,
            ffn_multiplier: 2,
            dropout: 0.0,
            max_turns: 4,
            max_turn_tokens: 6,
            max_summary_tokens: 8,
        }
    }

    fn tiny_examples() -> Vec<(MeetingInput, Vec<usize>)> {
        let meeting = |toks: Vec<usize>| MeetingInput {
            turns: vec![TurnInput {
                role_id: 0,
                token_ids: toks.clone(),
                pos_ids: vec![0; toks.len()],
                ent_ids: vec![0; toks.len()],
            }],
        };
        vec![
            (meeting(vec![5, 6, 7]), vec![3, 5, 6, 4]),
            (meeting(vec![8, 9]), vec![3, 8, 4]),
        ]
    }

    #[test]
    fn accumulation_matches_single_mean_graph() {
        let cfg = tiny_cfg();
        let examples = tiny_examples();

        let run_a = HMNetParams::init(&cfg, 33).unwrap();
        let mut state_a = RAdamState::for_tensors(&run_a.tensors());
        accumulated_step(&examples, &[0, 1], &run_a, &mut state_a, 1e-3, 2.0, &mut Runtime::eval())
            .unwrap();

        let run_b = HMNetParams::init(&cfg, 33).unwrap();
        let mut state_b = RAdamState::for_tensors(&run_b.tensors());
        let l0 = compute_loss(&examples[0].0, &examples[0].1, &run_b, &mut Runtime::eval()).unwrap();
        let l1 = compute_loss(&examples[1].0, &examples[1].1, &run_b, &mut Runtime::eval()).unwrap();
        l0.add(&l1).unwrap().scale(0.5).backward().unwrap();
        let tensors = run_b.tensors();
        clip_gradients(&tensors, 2.0).unwrap();
        radam_step(&tensors, &mut state_b, 1e-3);

        for (a, b) in run_a.tensors().iter().zip(run_b.tensors()) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() < 1e-12, "accumulated {x} vs combined {y}");
            }
        }
    }

    fn fast_schedule(steps: usize) -> TrainConfig {
        TrainConfig {
            warmup_steps: 1,
            initial_lr: 1e-9,
            peak_lr: 5e-3,
            clip_norm: 2.0,
            accumulation_steps: 2,
            max_steps: steps,
            checkpoint_every: 0,
            seed: 7,
        }
    }

    #[test]
    fn training_is_reproducible_bitwise() {
        let cfg = tiny_cfg();
        let examples = tiny_examples();
        let mut logs: Vec<Vec<TrainLogEntry>> = Vec::new();
        let mut finals: Vec<Vec<Vec<f64>>> = Vec::new();
        for _ in 0..2 {
            let params = HMNetParams::init(&cfg, 5).unwrap();
            let mut state = RAdamState::for_tensors(&params.tensors());
            let mut log = Vec::new();
            train_loop(
                &examples,
                &params,
                &fast_schedule(5),
                &mut state,
                |e| log.push(e.clone()),
                |_, _, _| true,
            )
            .unwrap();
            logs.push(log);
            finals.push(params.tensors().iter().map(|t| t.values()).collect());
        }
        assert_eq!(logs[0], logs[1]);
        assert_eq!(finals[0], finals[1]);
    }

    #[test]
    fn loss_falls_while_overfitting_one_example() {
        let cfg = tiny_cfg();
        let examples = vec![tiny_examples().remove(0)];
        let params = HMNetParams::init(&cfg, 9).unwrap();
        let mut state = RAdamState::for_tensors(&params.tensors());
        let mut log = Vec::new();
        let mut schedule = fast_schedule(40);
        schedule.accumulation_steps = 1;
        train_loop(&examples, &params, &schedule, &mut state, |e| log.push(e.clone()), |_, _, _| true)
            .unwrap();
        let first = log.first().unwrap().loss;
        let last = log.last().unwrap().loss;
        assert!(last < first, "loss should fall: {first} -> {last}");
    }

    #[test]
    fn checkpoint_callback_can_stop_early() {
        let cfg = tiny_cfg();
        let examples = tiny_examples();
        let params = HMNetParams::init(&cfg, 5).unwrap();
        let mut state = RAdamState::for_tensors(&params.tensors());
        let mut seen = 0;
        let mut schedule = fast_schedule(50);
        schedule.checkpoint_every = 3;
        train_loop(
            &examples,
            &params,
            &schedule,
            &mut state,
            |_| {},
            |step, _, _| {
                seen = step;
                false
            },
        )
        .unwrap();
        assert_eq!(seen, 3);
        assert_eq!(state.step_count(), 3);
    }

    #[test]
    fn empty_corpus_and_zero_accumulation_are_rejected() {
        let cfg = tiny_cfg();
        let params = HMNetParams::init(&cfg, 5).unwrap();
        let mut state = RAdamState::for_tensors(&params.tensors());
        assert!(matches!(
            train_loop(&[], &params, &fast_schedule(1), &mut state, |_| {}, |_, _, _| true),
            Err(TrainError::EmptyBatch)
        ));
        let mut bad = fast_schedule(1);
        bad.accumulation_steps = 0;
        assert!(matches!(
            train_loop(&tiny_examples(), &params, &bad, &mut state, |_| {}, |_, _, _| true),
            Err(TrainError::BadConfig { .. })
        ));
    }
}

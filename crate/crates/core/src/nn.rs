//! Transformer building blocks: sinusoidal position encodings, multi-head
//! attention that may read a memory wider or narrower than its queries,
//! post-norm encoder blocks, and the boolean masks they consume.
//!
//! Blocks take a [`Runtime`] that decides whether dropout fires; evaluation
//! mode never touches the RNG, so eval forward passes are bit-reproducible.

use std::f64::consts::TAU;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Mask, Tensor, TensorError};

/// Epsilon inside every layer-norm denominator.
pub const LN_EPS: f64 = 1e-5;

// ── Errors ──────────────────────────────────────────────────────────────────

/// Failure modes of the neural building blocks.
#[derive(Debug, Clone, PartialEq)]
pub enum NnError {
    /// Position encodings need an even width.
    OddDimension { d: usize },
    /// Model width is not divisible by the head count.
    HeadSplit { d_model: usize, n_heads: usize },
    /// A head count of zero makes no sense.
    ZeroHeads,
    /// An underlying tensor operation failed.
    Tensor(TensorError),
}

impl fmt::Display for NnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NnError::OddDimension { d } => {
                write!(f, "position encoding width must be even, got {d}")
            }
            NnError::HeadSplit { d_model, n_heads } => {
                write!(f, "width {d_model} not divisible by {n_heads} heads")
            }
            NnError::ZeroHeads => write!(f, "attention needs at least one head"),
            NnError::Tensor(e) => write!(f, "tensor error: {e}"),
        }
    }
}

impl std::error::Error for NnError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            NnError::Tensor(e) => Some(e),
            _ => None,
        }
    }
}

impl From<TensorError> for NnError {
    fn from(e: TensorError) -> Self {
        NnError::Tensor(e)
    }
}

// ── Forward-pass runtime ────────────────────────────────────────────────────

/// Carries the train/eval switch, the dropout probability, and the RNG
/// stream that dropout draws from.
pub struct Runtime {
    training: bool,
    dropout_p: f64,
    rng: ChaCha8Rng,
}

impl Runtime {
    /// Deterministic evaluation mode: dropout never fires.
    pub fn eval() -> Runtime {
        Runtime {
            training: false,
            dropout_p: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Training mode with the given dropout probability and RNG seed.
    pub fn train(dropout_p: f64, seed: u64) -> Runtime {
        Runtime {
            training: true,
            dropout_p,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    /// Applies dropout under the current mode; identity in eval mode.
    pub fn dropout(&mut self, t: &Tensor) -> Result<Tensor, TensorError> {
        t.dropout(self.dropout_p, self.training, &mut self.rng)
    }
}

// ── Parameter initialization ────────────────────────────────────────────────

fn normal01(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps us independent of any distribution crate.
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// A `[rows × cols]` projection, normal with standard deviation `1/√rows`.
pub fn scaled_normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let std = 1.0 / (rows as f64).sqrt();
    let values = (0..rows * cols).map(|_| normal01(rng) * std).collect();
    Tensor::new(&[rows, cols], values).expect("counted values")
}

/// A `[rows × cols]` embedding table, uniform in `[−0.02, 0.02]`.
pub fn uniform_embedding(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let values = (0..rows * cols)
        .map(|_| rng.gen::<f64>() * 0.04 - 0.02)
        .collect();
    Tensor::new(&[rows, cols], values).expect("counted values")
}

// ── Position encodings ──────────────────────────────────────────────────────

/// The sinusoidal encoding of one position: even slots carry
/// `sin(pos / 10000^(2j/d))`, odd slots the matching cosine.
pub fn positional_encoding(position: usize, d: usize) -> Result<Vec<f64>, NnError> {
    if d == 0 || d % 2 != 0 {
        return Err(NnError::OddDimension { d });
    }
    let mut enc = vec![0.0; d];
    for j in 0..d / 2 {
        let rate = 10000f64.powf(2.0 * j as f64 / d as f64);
        let angle = position as f64 / rate;
        enc[2 * j] = angle.sin();
        enc[2 * j + 1] = angle.cos();
    }
    Ok(enc)
}

/// Encodings for positions `0..n` stacked into an `[n × d]` tensor.
pub fn positional_encoding_matrix(n: usize, d: usize) -> Result<Tensor, NnError> {
    let mut values = Vec::with_capacity(n * d);
    for pos in 0..n {
        values.extend(positional_encoding(pos, d)?);
    }
    Ok(Tensor::new(&[n, d], values).expect("counted values"))
}

// ── Masks ───────────────────────────────────────────────────────────────────

/// An `[n × n]` mask blocking `(i, j)` whenever `j > i`, so position `i`
/// may only attend to itself and earlier positions.
pub fn causal_mask(n: usize) -> Mask {
    let mut blocked = vec![false; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            blocked[i * n + j] = true;
        }
    }
    Mask::new(vec![n, n], blocked).expect("counted flags")
}

// ── Multi-head attention ────────────────────────────────────────────────────

/// Projections for one attention layer. Queries of width `d_query` read a
/// memory of width `d_memory`; the two widths are independent, which is how
/// a narrow decoder attends over wider encoder states.
#[derive(Debug)]
pub struct AttentionParams {
    pub n_heads: usize,
    /// `[d_query × d_attn]` where `d_attn = n_heads · (d_query / n_heads)`.
    pub wq: Tensor,
    /// `[d_memory × d_attn]`.
    pub wk: Tensor,
    /// `[d_memory × d_attn]`.
    pub wv: Tensor,
    /// `[d_attn × d_query]`.
    pub wo: Tensor,
}

impl AttentionParams {
    /// Fresh randomly initialized projections; fails unless `n_heads`
    /// divides `d_query`.
    pub fn init(
        d_query: usize,
        d_memory: usize,
        n_heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<AttentionParams, NnError> {
        if n_heads == 0 {
            return Err(NnError::ZeroHeads);
        }
        if d_query % n_heads != 0 {
            return Err(NnError::HeadSplit {
                d_model: d_query,
                n_heads,
            });
        }
        Ok(AttentionParams {
            n_heads,
            wq: scaled_normal(d_query, d_query, rng),
            wk: scaled_normal(d_memory, d_query, rng),
            wv: scaled_normal(d_memory, d_query, rng),
            wo: scaled_normal(d_query, d_query, rng),
        })
    }

    pub fn d_query(&self) -> usize {
        self.wq.rows()
    }

    pub fn d_memory(&self) -> usize {
        self.wk.rows()
    }

    fn d_head(&self) -> usize {
        self.d_query() / self.n_heads
    }

    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.wq, &self.wk, &self.wv, &self.wo]
    }
}

/// Scaled dot-product attention over `n_heads` parallel slices.
///
/// `queries` is `[q × d_query]`, `memory` is `[m × d_memory]`, and the
/// optional mask is `[q × m]` with `true` meaning "query row may not see
/// this memory row". Masked weights are exactly zero after normalization.
pub fn multi_head_attention(
    queries: &Tensor,
    memory: &Tensor,
    mask: Option<&Mask>,
    params: &AttentionParams,
    rt: &mut Runtime,
) -> Result<Tensor, NnError> {
    let q_proj = queries.matmul(&params.wq)?;
    let k_proj = memory.matmul(&params.wk)?;
    let v_proj = memory.matmul(&params.wv)?;

    let dh = params.d_head();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(params.n_heads);
    for h in 0..params.n_heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = q_proj.slice_cols(lo, hi)?;
        let kh = k_proj.slice_cols(lo, hi)?;
        let vh = v_proj.slice_cols(lo, hi)?;
        let scores = qh.matmul(&kh.transpose()?)?.scale(scale);
        let weights = scores.softmax(1, mask)?;
        let weights = rt.dropout(&weights)?;
        heads.push(weights.matmul(&vh)?);
    }
    let mut joined = heads[0].clone();
    for head in &heads[1..] {
        joined = joined.concat_cols(head)?;
    }
    Ok(joined.matmul(&params.wo)?)
}

// ── Feed-forward and layer-norm parameters ──────────────────────────────────

/// The two affine maps of a position-wise feed-forward layer.
#[derive(Debug)]
pub struct FeedForwardParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl FeedForwardParams {
    pub fn init(d_model: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> FeedForwardParams {
        FeedForwardParams {
            w1: scaled_normal(d_model, d_ff, rng),
            b1: Tensor::zeros(&[d_ff]),
            w2: scaled_normal(d_ff, d_model, rng),
            b2: Tensor::zeros(&[d_model]),
        }
    }

    /// `relu(x·W₁ + b₁)·W₂ + b₂`.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        x.matmul(&self.w1)?
            .add_bias(&self.b1)?
            .relu()
            .matmul(&self.w2)?
            .add_bias(&self.b2)
    }

    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }
}

/// Gain and bias of one layer norm.
#[derive(Debug)]
pub struct LayerNormParams {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNormParams {
    pub fn init(d: usize) -> LayerNormParams {
        LayerNormParams {
            gain: Tensor::new(&[d], vec![1.0; d]).expect("counted values"),
            bias: Tensor::zeros(&[d]),
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        x.layer_norm(&self.gain, &self.bias, LN_EPS)
    }

    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.gain, &self.bias]
    }
}

// ── Encoder block and stack ─────────────────────────────────────────────────

/// One post-norm transformer encoder block.
#[derive(Debug)]
pub struct EncoderBlockParams {
    pub attn: AttentionParams,
    pub ffn: FeedForwardParams,
    pub ln1: LayerNormParams,
    pub ln2: LayerNormParams,
}

impl EncoderBlockParams {
    pub fn init(
        d_model: usize,
        n_heads: usize,
        d_ff: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<EncoderBlockParams, NnError> {
        Ok(EncoderBlockParams {
            attn: AttentionParams::init(d_model, d_model, n_heads, rng)?,
            ffn: FeedForwardParams::init(d_model, d_ff, rng),
            ln1: LayerNormParams::init(d_model),
            ln2: LayerNormParams::init(d_model),
        })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut ts = self.attn.tensors();
        ts.extend(self.ffn.tensors());
        ts.extend(self.ln1.tensors());
        ts.extend(self.ln2.tensors());
        ts
    }
}

/// `y₁ = LN(x + SelfAttn(x)); y₂ = LN(y₁ + FFN(y₁))` with dropout on each
/// sublayer output while training.
pub fn encoder_block(
    x: &Tensor,
    params: &EncoderBlockParams,
    mask: Option<&Mask>,
    rt: &mut Runtime,
) -> Result<Tensor, NnError> {
    let attended = multi_head_attention(x, x, mask, &params.attn, rt)?;
    let attended = rt.dropout(&attended)?;
    let y1 = params.ln1.apply(&x.add(&attended)?)?;
    let fed = params.ffn.apply(&y1)?;
    let fed = rt.dropout(&fed)?;
    Ok(params.ln2.apply(&y1.add(&fed)?)?)
}

/// Runs `blocks` in sequence over `x`; an empty slice is the identity.
pub fn transformer_stack(
    x: &Tensor,
    blocks: &[EncoderBlockParams],
    mask: Option<&Mask>,
    rt: &mut Runtime,
) -> Result<Tensor, NnError> {
    let mut state = x.clone();
    for block in blocks {
        state = encoder_block(&state, block, mask, rt)?;
    }
    Ok(state)
}

//! Summary generation: greedy decoding and length-synchronous beam search,
//! both with repeated-trigram blocking and a minimum-length constraint.
//!
//! Sequences grow from the begin marker one token per round. The end
//! marker is masked until the hypothesis holds `min_len` generated tokens,
//! and — when blocking is on — any token that would complete a trigram
//! already present in the hypothesis is masked outright, with no
//! renormalization of the remaining probabilities. A hypothesis with no
//! permitted continuation finishes immediately as it stands, as do all
//! survivors when they reach `max_len` generated tokens; neither case
//! appends an end marker. Hypotheses are ranked by total log-probability
//! divided by generated-token count (begin excluded, end included), and
//! the best finished hypothesis is returned with both markers stripped.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{BEGIN_ID, END_ID};
use crate::model::{decoder_forward, EncodedMeeting, HMNetParams, ModelError};
use crate::nn::Runtime;

// ── Errors ──────────────────────────────────────────────────────────────────

#[derive(Debug)]
pub enum DecodeError {
    BadConfig { reason: String },
    /// A hypothesis with no generated tokens has no average score.
    EmptyHypothesis,
    Model(ModelError),
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeError::BadConfig { reason } => write!(f, "bad decode config: {reason}"),
            DecodeError::EmptyHypothesis => {
                write!(f, "cannot score a hypothesis with no generated tokens")
            }
            DecodeError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for DecodeError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            DecodeError::Model(e) => Some(e),
            _ => None,
        }
    }
}

impl From<ModelError> for DecodeError {
    fn from(e: ModelError) -> Self {
        DecodeError::Model(e)
    }
}

// ── Configuration ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Minimum generated tokens before the end marker may be chosen.
    pub min_len: usize,
    /// Maximum generated tokens; survivors are finished as they stand.
    pub max_len: usize,
    pub block_repeated_trigrams: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 6,
            min_len: 0,
            max_len: 64,
            block_repeated_trigrams: true,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.beam_size == 0 {
            return Err(DecodeError::BadConfig {
                reason: "beam_size must be at least 1".into(),
            });
        }
        if self.max_len == 0 {
            return Err(DecodeError::BadConfig {
                reason: "max_len must be at least 1".into(),
            });
        }
        Ok(())
    }
}

// ── Hypotheses ──────────────────────────────────────────────────────────────

/// A partial or finished summary: the token path from the begin marker,
/// and the summed log-probability of every generated token.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub cum_log_prob: f64,
}

impl Hypothesis {
    fn root() -> Hypothesis {
        Hypothesis {
            tokens: vec![BEGIN_ID],
            cum_log_prob: 0.0,
        }
    }

    /// Generated tokens: everything after the begin marker, the end marker
    /// included when present.
    pub fn generated(&self) -> usize {
        self.tokens.len().saturating_sub(1)
    }

    /// Length-normalized score: total log-probability over generated count.
    pub fn score(&self) -> Result<f64, DecodeError> {
        if self.generated() == 0 {
            return Err(DecodeError::EmptyHypothesis);
        }
        Ok(self.cum_log_prob / self.generated() as f64)
    }
}

// ── Shared stepping rules ───────────────────────────────────────────────────

/// Tokens that would complete a contiguous trigram already present in
/// `prefix` (the begin marker participates in trigrams like any token).
pub fn repeated_trigram_blocks(prefix: &[usize]) -> Vec<usize> {
    if prefix.len() < 2 {
        return Vec::new();
    }
    let (a, b) = (prefix[prefix.len() - 2], prefix[prefix.len() - 1]);
    let mut blocked: Vec<usize> = prefix
        .windows(3)
        .filter(|w| w[0] == a && w[1] == b)
        .map(|w| w[2])
        .collect();
    blocked.sort_unstable();
    blocked.dedup();
    blocked
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

/// Next-token log-probabilities for a hypothesis, with the end marker and
/// repeated trigrams masked to `−∞` per the config.
fn step_log_probs(
    prefix: &[usize],
    encoded: &EncodedMeeting,
    params: &HMNetParams,
    cfg: &DecodeConfig,
    rt: &mut Runtime,
) -> Result<Vec<f64>, DecodeError> {
    let logits = decoder_forward(prefix, encoded, params, rt)?;
    let row_start = (logits.rows() - 1) * logits.cols();
    let values = logits.values_ref();
    let mut logp = log_softmax(&values[row_start..]);
    drop(values);
    if prefix.len() - 1 < cfg.min_len {
        logp[END_ID] = f64::NEG_INFINITY;
    }
    if cfg.block_repeated_trigrams {
        for w in repeated_trigram_blocks(prefix) {
            logp[w] = f64::NEG_INFINITY;
        }
    }
    Ok(logp)
}

fn strip_markers(tokens: &[usize]) -> Vec<usize> {
    let body = &tokens[1..];
    match body.last() {
        Some(&END_ID) => body[..body.len() - 1].to_vec(),
        _ => body.to_vec(),
    }
}

/// The best finished hypothesis by average score; on exact ties the one
/// finished earliest wins.
fn best_of(finished: &[Hypothesis]) -> Result<&Hypothesis, DecodeError> {
    let mut best: Option<(f64, &Hypothesis)> = None;
    for hyp in finished {
        let s = hyp.score()?;
        if best.map_or(true, |(b, _)| s > b) {
            best = Some((s, hyp));
        }
    }
    Ok(best.expect("decoding always finishes at least one hypothesis").1)
}

// ── Greedy decoding ─────────────────────────────────────────────────────────

/// Follows the single most probable permitted token each round (lowest id
/// on exact ties) until the end marker, a round with nothing permitted, or
/// `max_len`. Returns generated ids with both markers stripped.
pub fn greedy_decode(
    encoded: &EncodedMeeting,
    params: &HMNetParams,
    cfg: &DecodeConfig,
    rt: &mut Runtime,
) -> Result<Vec<usize>, DecodeError> {
    cfg.validate()?;
    let mut tokens = vec![BEGIN_ID];
    while tokens.len() - 1 < cfg.max_len {
        let logp = step_log_probs(&tokens, encoded, params, cfg, rt)?;
        let mut best: Option<(f64, usize)> = None;
        for (w, &lp) in logp.iter().enumerate() {
            if lp.is_finite() && best.map_or(true, |(b, _)| lp > b) {
                best = Some((lp, w));
            }
        }
        match best {
            None => break,
            Some((_, w)) => {
                tokens.push(w);
                if w == END_ID {
                    break;
                }
            }
        }
    }
    Ok(strip_markers(&tokens))
}

// ── Beam search ─────────────────────────────────────────────────────────────

/// Length-synchronous beam search. Each round every active hypothesis
/// proposes all permitted continuations; the pooled candidates are ranked
/// by cumulative log-probability (ties: lower token id, then lower parent
/// index) and the top `beam_size` survive. Choosing the end marker retires
/// a hypothesis into the finished set; search stops once `beam_size` are
/// finished or the survivors reach `max_len`. The best finished hypothesis
/// by average log-probability is returned, markers stripped.
pub fn beam_search(
    encoded: &EncodedMeeting,
    params: &HMNetParams,
    cfg: &DecodeConfig,
    rt: &mut Runtime,
) -> Result<Vec<usize>, DecodeError> {
    cfg.validate()?;
    let mut active = vec![Hypothesis::root()];
    let mut finished: Vec<Hypothesis> = Vec::new();

    while !active.is_empty() && finished.len() < cfg.beam_size {
        // Length-synchronous: every active hypothesis has the same length.
        if active[0].generated() >= cfg.max_len {
            finished.append(&mut active);
            break;
        }

        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        let mut forced: Vec<Hypothesis> = Vec::new();
        for (parent, hyp) in active.iter().enumerate() {
            let logp = step_log_probs(&hyp.tokens, encoded, params, cfg, rt)?;
            let mut any = false;
            for (w, &lp) in logp.iter().enumerate() {
                if lp.is_finite() {
                    candidates.push((hyp.cum_log_prob + lp, w, parent));
                    any = true;
                }
            }
            if !any {
                forced.push(hyp.clone());
            }
        }

        candidates.sort_by(|x, y| {
            y.0.partial_cmp(&x.0)
                .unwrap_or(Ordering::Equal)
                .then(x.1.cmp(&y.1))
                .then(x.2.cmp(&y.2))
        });
        candidates.truncate(cfg.beam_size);

        let mut next = Vec::with_capacity(candidates.len());
        finished.append(&mut forced);
        for (cum, w, parent) in candidates {
            let mut tokens = active[parent].tokens.clone();
            tokens.push(w);
            let hyp = Hypothesis {
                tokens,
                cum_log_prob: cum,
            };
            if w == END_ID {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        active = next;
    }

    Ok(strip_markers(&best_of(&finished)?.tokens))
}

//! The hierarchical summarization model.
//!
//! Encoding runs at two levels: a word-level transformer reads each turn
//! (with a begin-of-turn token prepended) over embeddings that concatenate
//! word, part-of-speech, and entity vectors; a turn-level transformer then
//! reads one vector per turn, formed from the begin-of-turn output joined
//! with the speaker's role vector. The decoder self-attends causally over
//! the summary prefix, then cross-attends into the word-level memory and
//! the turn-level memory in every block, and projects to the vocabulary
//! with the transposed embedding matrix — the output projection and the
//! input embedding are the same parameters.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Meeting, RoleTable, TagVocab, Vocab, BEGIN_ID, BOS_ID, END_ID, NONE_TAG_ID};
use crate::nn::{
    causal_mask, multi_head_attention, positional_encoding_matrix, scaled_normal,
    transformer_stack, uniform_embedding, AttentionParams, EncoderBlockParams,
    FeedForwardParams, LayerNormParams, NnError, Runtime,
};
use crate::tensor::{Tensor, TensorError};

// ── Errors ──────────────────────────────────────────────────────────────────

/// Failure modes of model construction and forward passes.
#[derive(Debug)]
pub enum ModelError {
    /// A configuration field violates its constraint.
    Config { field: &'static str, reason: String },
    TokenOutOfRange { id: usize, vocab: usize },
    TagOutOfRange { kind: &'static str, id: usize, count: usize },
    RoleOutOfRange { id: usize, roles: usize },
    /// A speaker role missing from the role table.
    UnknownRole { role: String },
    EmptyTurn,
    TurnTooLong { len: usize, max: usize },
    /// Tag vectors must align one-to-one with tokens.
    TagCount { tokens: usize, tags: usize },
    EmptyMeeting,
    TooManyTurns { got: usize, max: usize },
    EmptyPrefix,
    TargetTooShort { len: usize },
    TargetTooLong { len: usize, max: usize },
    /// Targets must begin and end with the begin/end markers.
    BadTargetMarkers,
    /// A stored tensor's shape disagrees with the configuration.
    ParamShape { name: String, expected: Vec<usize>, got: Vec<usize> },
    /// The stored tensor count disagrees with the configuration.
    ParamCount { expected: usize, got: usize },
    Nn(NnError),
    Tensor(TensorError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Config { field, reason } => write!(f, "config field {field}: {reason}"),
            ModelError::TokenOutOfRange { id, vocab } => {
                write!(f, "token id {id} outside vocabulary of {vocab}")
            }
            ModelError::TagOutOfRange { kind, id, count } => {
                write!(f, "{kind} tag id {id} outside table of {count}")
            }
            ModelError::RoleOutOfRange { id, roles } => {
                write!(f, "role id {id} outside table of {roles}")
            }
            ModelError::UnknownRole { role } => write!(f, "role '{role}' not in role table"),
            ModelError::EmptyTurn => write!(f, "turn has no tokens"),
            ModelError::TurnTooLong { len, max } => {
                write!(f, "turn of {len} tokens exceeds cap {max}")
            }
            ModelError::TagCount { tokens, tags } => {
                write!(f, "{tags} tags for {tokens} tokens")
            }
            ModelError::EmptyMeeting => write!(f, "meeting has no turns"),
            ModelError::TooManyTurns { got, max } => {
                write!(f, "{got} turns exceed cap {max}")
            }
            ModelError::EmptyPrefix => write!(f, "decoder prefix is empty"),
            ModelError::TargetTooShort { len } => {
                write!(f, "target of {len} tokens is too short")
            }
            ModelError::TargetTooLong { len, max } => {
                write!(f, "target of {len} tokens exceeds cap {max}")
            }
            ModelError::BadTargetMarkers => {
                write!(f, "target must start with the begin marker and end with the end marker")
            }
            ModelError::ParamShape { name, expected, got } => {
                write!(f, "parameter {name}: expected shape {expected:?}, got {got:?}")
            }
            ModelError::ParamCount { expected, got } => {
                write!(f, "expected {expected} parameter tensors, got {got}")
            }
            ModelError::Nn(e) => write!(f, "{e}"),
            ModelError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ModelError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            ModelError::Nn(e) => Some(e),
            ModelError::Tensor(e) => Some(e),
            _ => None,
        }
    }
}

impl From<NnError> for ModelError {
    fn from(e: NnError) -> Self {
        ModelError::Nn(e)
    }
}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Tensor(e)
    }
}

// ── Configuration ───────────────────────────────────────────────────────────

/// Every knob of the architecture. The three working widths are derived:
/// word-level blocks run at `d_word + d_pos + d_ent`, turn-level blocks at
/// that plus `d_role`, and the decoder at `d_word`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HMNetConfig {
    pub vocab_size: usize,
    pub n_pos_tags: usize,
    pub n_ent_tags: usize,
    pub n_roles: usize,
    pub d_word: usize,
    pub d_pos: usize,
    pub d_ent: usize,
    pub d_role: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Feed-forward width as a multiple of the block width.
    pub ffn_multiplier: usize,
    pub dropout: f64,
    pub max_turns: usize,
    pub max_turn_tokens: usize,
    /// Cap on decoder targets, begin/end markers included.
    pub max_summary_tokens: usize,
}

impl HMNetConfig {
    /// The full-size configuration.
    pub fn base(vocab_size: usize, n_pos_tags: usize, n_ent_tags: usize, n_roles: usize) -> Self {
        HMNetConfig {
            vocab_size,
            n_pos_tags,
            n_ent_tags,
            n_roles,
            d_word: 512,
            d_pos: 16,
            d_ent: 16,
            d_role: 32,
            n_layers: 6,
            n_heads: 8,
            ffn_multiplier: 4,
            dropout: 0.1,
            max_turns: 64,
            max_turn_tokens: 48,
            max_summary_tokens: 448,
        }
    }

    /// A desk-size configuration that trains in seconds.
    pub fn toy(vocab_size: usize, n_pos_tags: usize, n_ent_tags: usize, n_roles: usize) -> Self {
        HMNetConfig {
            vocab_size,
            n_pos_tags,
            n_ent_tags,
            n_roles,
            d_word: 64,
            d_pos: 8,
            d_ent: 8,
            d_role: 16,
            n_layers: 2,
            n_heads: 2,
            ffn_multiplier: 4,
            dropout: 0.1,
            max_turns: 8,
            max_turn_tokens: 16,
            max_summary_tokens: 24,
        }
    }

    /// Word-level block width: `d_word + d_pos + d_ent`.
    pub fn d_word_model(&self) -> usize {
        self.d_word + self.d_pos + self.d_ent
    }

    /// Turn-level block width: word-level width plus `d_role`.
    pub fn d_turn_model(&self) -> usize {
        self.d_word_model() + self.d_role
    }

    /// Decoder block width: the word embedding width, so the output
    /// projection can reuse the embedding matrix.
    pub fn d_decoder(&self) -> usize {
        self.d_word
    }

    /// Checks the whole configuration; the error names the offending field.
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |field: &'static str, reason: String| Err(ModelError::Config { field, reason });
        if self.vocab_size < 5 {
            return bad("vocab_size", format!("{} is below the 5 reserved ids", self.vocab_size));
        }
        for (field, v) in [
            ("n_pos_tags", self.n_pos_tags),
            ("n_ent_tags", self.n_ent_tags),
            ("n_roles", self.n_roles),
            ("d_word", self.d_word),
            ("d_pos", self.d_pos),
            ("d_ent", self.d_ent),
            ("d_role", self.d_role),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("ffn_multiplier", self.ffn_multiplier),
            ("max_turns", self.max_turns),
            ("max_turn_tokens", self.max_turn_tokens),
        ] {
            if v == 0 {
                return bad(field, "must be at least 1".into());
            }
        }
        if self.max_summary_tokens < 2 {
            return bad(
                "max_summary_tokens",
                "must fit the begin and end markers".into(),
            );
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", format!("{} outside [0, 1)", self.dropout));
        }
        for (chain, width) in [
            ("d_word", self.d_decoder()),
            ("d_word + d_pos + d_ent", self.d_word_model()),
            ("d_word + d_pos + d_ent + d_role", self.d_turn_model()),
        ] {
            if width % 2 != 0 {
                return bad(
                    "d_word",
                    format!("{chain} = {width} must be even for position encodings"),
                );
            }
            if width % self.n_heads != 0 {
                return bad(
                    "n_heads",
                    format!("{chain} = {width} not divisible by {} heads", self.n_heads),
                );
            }
        }
        Ok(())
    }
}

// ── Id-level inputs ─────────────────────────────────────────────────────────

/// One turn after vocabulary lookup: ids instead of strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnInput {
    pub role_id: usize,
    pub token_ids: Vec<usize>,
    pub pos_ids: Vec<usize>,
    pub ent_ids: Vec<usize>,
}

/// A whole meeting in id space, ready for the encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeetingInput {
    pub turns: Vec<TurnInput>,
}

impl MeetingInput {
    /// Looks up every token, role, and tag of a corpus meeting. Unknown
    /// tokens map to the unknown id and unseen tags to the absent-tag id,
    /// but a role missing from the table is an error.
    pub fn from_meeting(
        meeting: &Meeting,
        vocab: &Vocab,
        roles: &RoleTable,
        pos_tags: &TagVocab,
        ent_tags: &TagVocab,
    ) -> Result<MeetingInput, ModelError> {
        let turns = meeting
            .turns
            .iter()
            .map(|t| {
                let role_id = roles.id(&t.role).ok_or_else(|| ModelError::UnknownRole {
                    role: t.role.clone(),
                })?;
                let token_ids = t.tokens.iter().map(|tok| vocab.id(tok)).collect();
                let pos_ids = match &t.pos {
                    Some(tags) => tags.iter().map(|tag| pos_tags.id(tag)).collect(),
                    None => vec![NONE_TAG_ID; t.tokens.len()],
                };
                let ent_ids = match &t.ent {
                    Some(tags) => tags.iter().map(|tag| ent_tags.id(tag)).collect(),
                    None => vec![NONE_TAG_ID; t.tokens.len()],
                };
                Ok(TurnInput {
                    role_id,
                    token_ids,
                    pos_ids,
                    ent_ids,
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        Ok(MeetingInput { turns })
    }
}

// ── Parameters ──────────────────────────────────────────────────────────────

/// One decoder block: causal self-attention, cross-attention into the
/// word-level then the turn-level memory, and one feed-forward layer, each
/// followed by a residual connection and layer norm.
#[derive(Debug)]
pub struct DecoderBlockParams {
    pub self_attn: AttentionParams,
    pub ln1: LayerNormParams,
    pub word_cross: AttentionParams,
    pub ln2: LayerNormParams,
    pub turn_cross: AttentionParams,
    pub ln3: LayerNormParams,
    pub ffn: FeedForwardParams,
    pub ln4: LayerNormParams,
}

impl DecoderBlockParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut ts = vec![
            &self.self_attn.wq,
            &self.self_attn.wk,
            &self.self_attn.wv,
            &self.self_attn.wo,
        ];
        ts.push(&self.ln1.gain);
        ts.push(&self.ln1.bias);
        ts.extend([
            &self.word_cross.wq,
            &self.word_cross.wk,
            &self.word_cross.wv,
            &self.word_cross.wo,
        ]);
        ts.push(&self.ln2.gain);
        ts.push(&self.ln2.bias);
        ts.extend([
            &self.turn_cross.wq,
            &self.turn_cross.wk,
            &self.turn_cross.wv,
            &self.turn_cross.wo,
        ]);
        ts.push(&self.ln3.gain);
        ts.push(&self.ln3.bias);
        ts.extend([&self.ffn.w1, &self.ffn.b1, &self.ffn.w2, &self.ffn.b2]);
        ts.push(&self.ln4.gain);
        ts.push(&self.ln4.bias);
        ts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InitKind {
    /// Uniform in `[−0.02, 0.02]` — the lookup tables.
    Table,
    /// Normal with standard deviation `1/√fan_in` — the projections.
    Projection,
    /// All ones — layer-norm gains.
    Ones,
    /// All zeros — biases.
    Zeros,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: InitKind,
}

fn attention_specs(specs: &mut Vec<ParamSpec>, prefix: &str, d_query: usize, d_memory: usize) {
    for (field, shape) in [
        ("wq", vec![d_query, d_query]),
        ("wk", vec![d_memory, d_query]),
        ("wv", vec![d_memory, d_query]),
        ("wo", vec![d_query, d_query]),
    ] {
        specs.push(ParamSpec {
            name: format!("{prefix}.{field}"),
            shape,
            init: InitKind::Projection,
        });
    }
}

fn ffn_specs(specs: &mut Vec<ParamSpec>, prefix: &str, d_model: usize, d_ff: usize) {
    specs.push(ParamSpec {
        name: format!("{prefix}.w1"),
        shape: vec![d_model, d_ff],
        init: InitKind::Projection,
    });
    specs.push(ParamSpec {
        name: format!("{prefix}.b1"),
        shape: vec![d_ff],
        init: InitKind::Zeros,
    });
    specs.push(ParamSpec {
        name: format!("{prefix}.w2"),
        shape: vec![d_ff, d_model],
        init: InitKind::Projection,
    });
    specs.push(ParamSpec {
        name: format!("{prefix}.b2"),
        shape: vec![d_model],
        init: InitKind::Zeros,
    });
}

fn ln_specs(specs: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    specs.push(ParamSpec {
        name: format!("{prefix}.gain"),
        shape: vec![d],
        init: InitKind::Ones,
    });
    specs.push(ParamSpec {
        name: format!("{prefix}.bias"),
        shape: vec![d],
        init: InitKind::Zeros,
    });
}

/// The canonical parameter layout: stable names, shapes, and init rules in
/// the exact order `HMNetParams::tensors` walks them.
fn param_specs(cfg: &HMNetConfig) -> Vec<ParamSpec> {
    let dw = cfg.d_word_model();
    let dt = cfg.d_turn_model();
    let dd = cfg.d_decoder();
    let mut specs = vec![
        ParamSpec {
            name: "embedding".into(),
            shape: vec![cfg.vocab_size, cfg.d_word],
            init: InitKind::Table,
        },
        ParamSpec {
            name: "pos_tags".into(),
            shape: vec![cfg.n_pos_tags, cfg.d_pos],
            init: InitKind::Table,
        },
        ParamSpec {
            name: "ent_tags".into(),
            shape: vec![cfg.n_ent_tags, cfg.d_ent],
            init: InitKind::Table,
        },
        ParamSpec {
            name: "roles".into(),
            shape: vec![cfg.n_roles, cfg.d_role],
            init: InitKind::Table,
        },
    ];
    for (stack, d) in [("word_encoder", dw), ("turn_encoder", dt)] {
        for layer in 0..cfg.n_layers {
            let base = format!("{stack}.{layer}");
            attention_specs(&mut specs, &format!("{base}.attn"), d, d);
            ffn_specs(&mut specs, &format!("{base}.ffn"), d, d * cfg.ffn_multiplier);
            ln_specs(&mut specs, &format!("{base}.ln1"), d);
            ln_specs(&mut specs, &format!("{base}.ln2"), d);
        }
    }
    for layer in 0..cfg.n_layers {
        let base = format!("decoder.{layer}");
        attention_specs(&mut specs, &format!("{base}.self_attn"), dd, dd);
        ln_specs(&mut specs, &format!("{base}.ln1"), dd);
        attention_specs(&mut specs, &format!("{base}.word_cross"), dd, dw);
        ln_specs(&mut specs, &format!("{base}.ln2"), dd);
        attention_specs(&mut specs, &format!("{base}.turn_cross"), dd, dt);
        ln_specs(&mut specs, &format!("{base}.ln3"), dd);
        ffn_specs(&mut specs, &format!("{base}.ffn"), dd, dd * cfg.ffn_multiplier);
        ln_specs(&mut specs, &format!("{base}.ln4"), dd);
    }
    specs
}

fn next_tensor(cursor: &mut std::vec::IntoIter<Tensor>) -> Tensor {
    cursor.next().expect("tensor count checked before assembly")
}

fn take_attention(cursor: &mut std::vec::IntoIter<Tensor>, n_heads: usize) -> AttentionParams {
    AttentionParams {
        n_heads,
        wq: next_tensor(cursor),
        wk: next_tensor(cursor),
        wv: next_tensor(cursor),
        wo: next_tensor(cursor),
    }
}

fn take_ffn(cursor: &mut std::vec::IntoIter<Tensor>) -> FeedForwardParams {
    FeedForwardParams {
        w1: next_tensor(cursor),
        b1: next_tensor(cursor),
        w2: next_tensor(cursor),
        b2: next_tensor(cursor),
    }
}

fn take_ln(cursor: &mut std::vec::IntoIter<Tensor>) -> LayerNormParams {
    LayerNormParams {
        gain: next_tensor(cursor),
        bias: next_tensor(cursor),
    }
}

/// Every learnable tensor of the model, plus the configuration that shaped
/// them. Tensors are shared handles: cloning the struct clones handles, not
/// values.
#[derive(Debug)]
pub struct HMNetParams {
    cfg: HMNetConfig,
    pub embedding: Tensor,
    pub pos_tags: Tensor,
    pub ent_tags: Tensor,
    pub roles: Tensor,
    pub word_encoder: Vec<EncoderBlockParams>,
    pub turn_encoder: Vec<EncoderBlockParams>,
    pub decoder: Vec<DecoderBlockParams>,
}

impl HMNetParams {
    /// Fresh parameters, reproducible from the seed.
    pub fn init(cfg: &HMNetConfig, seed: u64) -> Result<HMNetParams, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = param_specs(cfg)
            .iter()
            .map(|spec| {
                // Tables and projections are always two-dimensional; the
                // one-dimensional gains and biases use the spec shape as is.
                match spec.init {
                    InitKind::Table => uniform_embedding(spec.shape[0], spec.shape[1], &mut rng),
                    InitKind::Projection => scaled_normal(spec.shape[0], spec.shape[1], &mut rng),
                    InitKind::Ones => {
                        let n = spec.shape.iter().product();
                        Tensor::new(&spec.shape, vec![1.0; n]).expect("counted values")
                    }
                    InitKind::Zeros => Tensor::zeros(&spec.shape),
                }
            })
            .collect();
        HMNetParams::from_tensors(cfg.clone(), tensors)
    }

    /// Rebuilds the structured parameters from a flat tensor list in
    /// canonical order, validating count and shapes.
    pub fn from_tensors(cfg: HMNetConfig, tensors: Vec<Tensor>) -> Result<HMNetParams, ModelError> {
        cfg.validate()?;
        let specs = param_specs(&cfg);
        if tensors.len() != specs.len() {
            return Err(ModelError::ParamCount {
                expected: specs.len(),
                got: tensors.len(),
            });
        }
        for (spec, t) in specs.iter().zip(&tensors) {
            if t.shape() != spec.shape.as_slice() {
                return Err(ModelError::ParamShape {
                    name: spec.name.clone(),
                    expected: spec.shape.clone(),
                    got: t.shape().to_vec(),
                });
            }
        }

        let mut cursor = tensors.into_iter();
        let embedding = next_tensor(&mut cursor);
        let pos_tags = next_tensor(&mut cursor);
        let ent_tags = next_tensor(&mut cursor);
        let roles = next_tensor(&mut cursor);

        let mut encoder_stack = Vec::with_capacity(2);
        for _stack in 0..2 {
            let blocks = (0..cfg.n_layers)
                .map(|_| EncoderBlockParams {
                    attn: take_attention(&mut cursor, cfg.n_heads),
                    ffn: take_ffn(&mut cursor),
                    ln1: take_ln(&mut cursor),
                    ln2: take_ln(&mut cursor),
                })
                .collect::<Vec<_>>();
            encoder_stack.push(blocks);
        }
        let turn_encoder = encoder_stack.pop().expect("two stacks pushed");
        let word_encoder = encoder_stack.pop().expect("two stacks pushed");

        let decoder = (0..cfg.n_layers)
            .map(|_| DecoderBlockParams {
                self_attn: take_attention(&mut cursor, cfg.n_heads),
                ln1: take_ln(&mut cursor),
                word_cross: take_attention(&mut cursor, cfg.n_heads),
                ln2: take_ln(&mut cursor),
                turn_cross: take_attention(&mut cursor, cfg.n_heads),
                ln3: take_ln(&mut cursor),
                ffn: take_ffn(&mut cursor),
                ln4: take_ln(&mut cursor),
            })
            .collect();

        Ok(HMNetParams {
            cfg,
            embedding,
            pos_tags,
            ent_tags,
            roles,
            word_encoder,
            turn_encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &HMNetConfig {
        &self.cfg
    }

    /// Stable `(name, shape)` pairs for every tensor, in the order
    /// `tensors` walks them. Serialization relies on this order.
    pub fn layout(cfg: &HMNetConfig) -> Vec<(String, Vec<usize>)> {
        param_specs(cfg).into_iter().map(|s| (s.name, s.shape)).collect()
    }

    /// Handles to every tensor in canonical order.
    pub fn tensors(&self) -> Vec<Tensor> {
        let mut out = vec![
            self.embedding.clone(),
            self.pos_tags.clone(),
            self.ent_tags.clone(),
            self.roles.clone(),
        ];
        for stack in [&self.word_encoder, &self.turn_encoder] {
            for block in stack.iter() {
                out.extend(block.tensors().into_iter().cloned());
            }
        }
        for block in &self.decoder {
            out.extend(block.tensors().into_iter().cloned());
        }
        out
    }

    /// `(name, tensor)` pairs in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        param_specs(&self.cfg)
            .into_iter()
            .map(|s| s.name)
            .zip(self.tensors())
            .collect()
    }

    /// A sibling parameter set with one tensor handle swapped out.
    pub fn with_replaced(&self, index: usize, tensor: Tensor) -> Result<HMNetParams, ModelError> {
        let mut flat = self.tensors();
        if index >= flat.len() {
            return Err(ModelError::ParamCount {
                expected: flat.len(),
                got: index,
            });
        }
        flat[index] = tensor;
        HMNetParams::from_tensors(self.cfg.clone(), flat)
    }

    /// Clears every accumulated gradient.
    pub fn zero_grads(&self) {
        for t in self.tensors() {
            t.zero_grad();
        }
    }

    /// Total scalar count across all tensors.
    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(Tensor::numel).sum()
    }
}

// ── Encoding ────────────────────────────────────────────────────────────────

/// What the decoder attends to: one row per transcript token in the
/// word-level memory, one row per turn in the turn-level memory, and the
/// turn of origin for every word row.
#[derive(Debug)]
pub struct EncodedMeeting {
    /// `[total_tokens × d_word_model]`, begin-of-turn rows excluded.
    pub word_memory: Tensor,
    /// `[n_turns × d_turn_model]`.
    pub turn_memory: Tensor,
    /// `word_turn_index[r]` is the turn that produced word row `r`.
    pub word_turn_index: Vec<usize>,
}

/// The embedding row for one token: word, part-of-speech, and entity
/// vectors concatenated, shape `[1 × d_word_model]`.
pub fn embed_token(
    params: &HMNetParams,
    token_id: usize,
    pos_id: usize,
    ent_id: usize,
) -> Result<Tensor, ModelError> {
    let cfg = params.config();
    if token_id >= cfg.vocab_size {
        return Err(ModelError::TokenOutOfRange {
            id: token_id,
            vocab: cfg.vocab_size,
        });
    }
    if pos_id >= cfg.n_pos_tags {
        return Err(ModelError::TagOutOfRange {
            kind: "part-of-speech",
            id: pos_id,
            count: cfg.n_pos_tags,
        });
    }
    if ent_id >= cfg.n_ent_tags {
        return Err(ModelError::TagOutOfRange {
            kind: "entity",
            id: ent_id,
            count: cfg.n_ent_tags,
        });
    }
    let word = params.embedding.gather_rows(&[token_id])?;
    let pos = params.pos_tags.gather_rows(&[pos_id])?;
    let ent = params.ent_tags.gather_rows(&[ent_id])?;
    Ok(word.concat_cols(&pos)?.concat_cols(&ent)?)
}

fn validate_turn(turn: &TurnInput, cfg: &HMNetConfig) -> Result<(), ModelError> {
    let len = turn.token_ids.len();
    if len == 0 {
        return Err(ModelError::EmptyTurn);
    }
    if len > cfg.max_turn_tokens {
        return Err(ModelError::TurnTooLong {
            len,
            max: cfg.max_turn_tokens,
        });
    }
    if turn.pos_ids.len() != len {
        return Err(ModelError::TagCount {
            tokens: len,
            tags: turn.pos_ids.len(),
        });
    }
    if turn.ent_ids.len() != len {
        return Err(ModelError::TagCount {
            tokens: len,
            tags: turn.ent_ids.len(),
        });
    }
    for &id in &turn.token_ids {
        if id >= cfg.vocab_size {
            return Err(ModelError::TokenOutOfRange {
                id,
                vocab: cfg.vocab_size,
            });
        }
    }
    for &id in &turn.pos_ids {
        if id >= cfg.n_pos_tags {
            return Err(ModelError::TagOutOfRange {
                kind: "part-of-speech",
                id,
                count: cfg.n_pos_tags,
            });
        }
    }
    for &id in &turn.ent_ids {
        if id >= cfg.n_ent_tags {
            return Err(ModelError::TagOutOfRange {
                kind: "entity",
                id,
                count: cfg.n_ent_tags,
            });
        }
    }
    Ok(())
}

/// Runs the word-level encoder over one turn with a begin-of-turn token
/// prepended. Returns the begin-of-turn output row `[1 × d_word_model]`
/// and the per-token outputs `[len × d_word_model]`.
pub fn encode_turn(
    turn: &TurnInput,
    params: &HMNetParams,
    rt: &mut Runtime,
) -> Result<(Tensor, Tensor), ModelError> {
    let cfg = params.config();
    validate_turn(turn, cfg)?;
    let len = turn.token_ids.len();

    let mut token_ids = Vec::with_capacity(len + 1);
    token_ids.push(BOS_ID);
    token_ids.extend_from_slice(&turn.token_ids);
    let mut pos_ids = Vec::with_capacity(len + 1);
    pos_ids.push(NONE_TAG_ID);
    pos_ids.extend_from_slice(&turn.pos_ids);
    let mut ent_ids = Vec::with_capacity(len + 1);
    ent_ids.push(NONE_TAG_ID);
    ent_ids.extend_from_slice(&turn.ent_ids);

    let words = params.embedding.gather_rows(&token_ids)?;
    let pos = params.pos_tags.gather_rows(&pos_ids)?;
    let ent = params.ent_tags.gather_rows(&ent_ids)?;
    let x = words.concat_cols(&pos)?.concat_cols(&ent)?;
    let x = x.add(&positional_encoding_matrix(len + 1, cfg.d_word_model())?)?;
    let x = rt.dropout(&x)?;
    let hidden = transformer_stack(&x, &params.word_encoder, None, rt)?;
    let bos_out = hidden.slice_rows(0, 1)?;
    let token_out = hidden.slice_rows(1, len + 1)?;
    Ok((bos_out, token_out))
}

fn validate_meeting_input(
    meeting: &MeetingInput,
    cfg: &HMNetConfig,
) -> Result<(), ModelError> {
    if meeting.turns.is_empty() {
        return Err(ModelError::EmptyMeeting);
    }
    if meeting.turns.len() > cfg.max_turns {
        return Err(ModelError::TooManyTurns {
            got: meeting.turns.len(),
            max: cfg.max_turns,
        });
    }
    for turn in &meeting.turns {
        if turn.role_id >= cfg.n_roles {
            return Err(ModelError::RoleOutOfRange {
                id: turn.role_id,
                roles: cfg.n_roles,
            });
        }
    }
    Ok(())
}

fn encode_all_turns(
    meeting: &MeetingInput,
    params: &HMNetParams,
    rt: &mut Runtime,
) -> Result<(Vec<Tensor>, Vec<Tensor>), ModelError> {
    let mut bos_rows = Vec::with_capacity(meeting.turns.len());
    let mut token_blocks = Vec::with_capacity(meeting.turns.len());
    for turn in &meeting.turns {
        let (bos, tokens) = encode_turn(turn, params, rt)?;
        bos_rows.push(bos);
        token_blocks.push(tokens);
    }
    Ok((bos_rows, token_blocks))
}

fn assemble_turn_inputs(
    bos_rows: &[Tensor],
    meeting: &MeetingInput,
    params: &HMNetParams,
) -> Result<Tensor, ModelError> {
    let cfg = params.config();
    let bos = Tensor::concat_rows(bos_rows)?;
    let role_ids: Vec<usize> = meeting.turns.iter().map(|t| t.role_id).collect();
    let roles = params.roles.gather_rows(&role_ids)?;
    let x = bos.concat_cols(&roles)?;
    Ok(x.add(&positional_encoding_matrix(bos_rows.len(), cfg.d_turn_model())?)?)
}

/// The turn-level encoder's input matrix `[n_turns × d_turn_model]`: each
/// row is the turn's begin-of-turn output joined with its speaker's role
/// vector, plus the turn-position encoding. Exposed for diagnostics.
pub fn turn_level_inputs(
    meeting: &MeetingInput,
    params: &HMNetParams,
    rt: &mut Runtime,
) -> Result<Tensor, ModelError> {
    validate_meeting_input(meeting, params.config())?;
    let (bos_rows, _) = encode_all_turns(meeting, params, rt)?;
    assemble_turn_inputs(&bos_rows, meeting, params)
}

/// Runs both encoder levels over a meeting.
pub fn encode_meeting(
    meeting: &MeetingInput,
    params: &HMNetParams,
    rt: &mut Runtime,
) -> Result<EncodedMeeting, ModelError> {
    validate_meeting_input(meeting, params.config())?;
    let (bos_rows, token_blocks) = encode_all_turns(meeting, params, rt)?;

    let mut word_turn_index = Vec::new();
    for (i, block) in token_blocks.iter().enumerate() {
        word_turn_index.extend(std::iter::repeat(i).take(block.rows()));
    }
    let word_memory = Tensor::concat_rows(&token_blocks)?;

    let turn_x = assemble_turn_inputs(&bos_rows, meeting, params)?;
    let turn_x = rt.dropout(&turn_x)?;
    let turn_memory = transformer_stack(&turn_x, &params.turn_encoder, None, rt)?;

    Ok(EncodedMeeting {
        word_memory,
        turn_memory,
        word_turn_index,
    })
}

// ── Decoding and loss ───────────────────────────────────────────────────────

/// One decoder pass over a summary prefix. Returns next-token logits for
/// every prefix position, shape `[len × vocab]`; row `k` conditions on
/// prefix positions `0..=k` only.
pub fn decoder_forward(
    prefix: &[usize],
    encoded: &EncodedMeeting,
    params: &HMNetParams,
    rt: &mut Runtime,
) -> Result<Tensor, ModelError> {
    let cfg = params.config();
    if prefix.is_empty() {
        return Err(ModelError::EmptyPrefix);
    }
    for &id in prefix {
        if id >= cfg.vocab_size {
            return Err(ModelError::TokenOutOfRange {
                id,
                vocab: cfg.vocab_size,
            });
        }
    }
    let k = prefix.len();
    let x = params.embedding.gather_rows(prefix)?;
    let x = x.add(&positional_encoding_matrix(k, cfg.d_decoder())?)?;
    let mut state = rt.dropout(&x)?;
    let mask = causal_mask(k);

    for block in &params.decoder {
        let attended = multi_head_attention(&state, &state, Some(&mask), &block.self_attn, rt)?;
        let attended = rt.dropout(&attended)?;
        state = block.ln1.apply(&state.add(&attended)?)?;

        let word_read =
            multi_head_attention(&state, &encoded.word_memory, None, &block.word_cross, rt)?;
        let word_read = rt.dropout(&word_read)?;
        state = block.ln2.apply(&state.add(&word_read)?)?;

        let turn_read =
            multi_head_attention(&state, &encoded.turn_memory, None, &block.turn_cross, rt)?;
        let turn_read = rt.dropout(&turn_read)?;
        state = block.ln3.apply(&state.add(&turn_read)?)?;

        let fed = block.ffn.apply(&state)?;
        let fed = rt.dropout(&fed)?;
        state = block.ln4.apply(&state.add(&fed)?)?;
    }

    // Tied output projection: logits through the transposed embedding.
    Ok(state.matmul(&params.embedding.transpose()?)?)
}

/// Teacher-forced mean negative log-likelihood of a begin/end-delimited
/// target under the model, as a `[1]` tensor ready for `backward`.
pub fn compute_loss(
    meeting: &MeetingInput,
    target: &[usize],
    params: &HMNetParams,
    rt: &mut Runtime,
) -> Result<Tensor, ModelError> {
    let cfg = params.config();
    if target.len() < 2 {
        return Err(ModelError::TargetTooShort { len: target.len() });
    }
    if target.len() > cfg.max_summary_tokens {
        return Err(ModelError::TargetTooLong {
            len: target.len(),
            max: cfg.max_summary_tokens,
        });
    }
    if target[0] != BEGIN_ID || *target.last().expect("len >= 2") != END_ID {
        return Err(ModelError::BadTargetMarkers);
    }
    let encoded = encode_meeting(meeting, params, rt)?;
    let logits = decoder_forward(&target[..target.len() - 1], &encoded, params, rt)?;
    Ok(logits.cross_entropy_mean(&target[1..])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> HMNetConfig {
        HMNetConfig {
            vocab_size: 12,
            n_pos_tags: 3,
            n_ent_tags: 3,
            n_roles: 4,
            d_word: 8,
            d_pos: 2,
            d_ent: 2,
            d_role: 4,
            n_layers: 1,
            n_heads: 2,
            ffn_multiplier: 2,
            dropout: 0.1,
            max_turns: 6,
            max_turn_tokens: 8,
            max_summary_tokens: 12,
        }
    }

    fn tiny_meeting() -> MeetingInput {
        MeetingInput {
            turns: vec![
                TurnInput {
                    role_id: 0,
                    token_ids: vec![5, 6, 7],
                    pos_ids: vec![1, 0, 2],
                    ent_ids: vec![0, 0, 1],
                },
                TurnInput {
                    role_id: 2,
                    token_ids: vec![8, 9],
                    pos_ids: vec![0, 0],
                    ent_ids: vec![0, 0],
                },
            ],
        }
    }

    #[test]
    fn default_widths_chain_correctly() {
        let cfg = HMNetConfig::base(30000, 20, 10, 40);
        assert_eq!(cfg.d_word_model(), 544);
        assert_eq!(cfg.d_turn_model(), 576);
        assert_eq!(cfg.d_decoder(), 512);
        cfg.validate().unwrap();
    }

    #[test]
    fn validator_rejects_head_and_width_violations() {
        let mut cfg = HMNetConfig::base(30000, 20, 10, 40);
        cfg.n_heads = 7; // 544 = 2^5·17 has no factor 7
        assert!(matches!(
            cfg.validate(),
            Err(ModelError::Config { field: "n_heads", .. })
        ));

        let mut cfg = HMNetConfig::base(30000, 20, 10, 40);
        cfg.vocab_size = 4;
        assert!(matches!(
            cfg.validate(),
            Err(ModelError::Config { field: "vocab_size", .. })
        ));

        let mut cfg = HMNetConfig::base(30000, 20, 10, 40);
        cfg.dropout = 1.0;
        assert!(matches!(
            cfg.validate(),
            Err(ModelError::Config { field: "dropout", .. })
        ));

        let mut cfg = tiny_cfg();
        cfg.d_pos = 0;
        assert!(matches!(
            cfg.validate(),
            Err(ModelError::Config { field: "d_pos", .. })
        ));

        let mut cfg = tiny_cfg();
        cfg.d_word = 7; // decoder width odd
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn base_layout_counts_tensors_per_block() {
        let cfg = HMNetConfig::base(30000, 20, 10, 40);
        // 4 tables + 6·12 per encoder stack + 6·24 decoder tensors.
        assert_eq!(param_specs(&cfg).len(), 4 + 72 + 72 + 144);
    }

    #[test]
    fn init_is_reproducible_and_round_trips_through_flat_form() {
        let cfg = tiny_cfg();
        let a = HMNetParams::init(&cfg, 42).unwrap();
        let b = HMNetParams::init(&cfg, 42).unwrap();
        for (x, y) in a.tensors().iter().zip(b.tensors()) {
            assert_eq!(x.values(), y.values());
        }
        let rebuilt = HMNetParams::from_tensors(cfg, a.tensors()).unwrap();
        for (x, y) in a.tensors().iter().zip(rebuilt.tensors()) {
            assert_eq!(x.values(), y.values());
        }
    }

    #[test]
    fn from_tensors_rejects_wrong_count_and_shape() {
        let cfg = tiny_cfg();
        let params = HMNetParams::init(&cfg, 1).unwrap();
        let mut flat = params.tensors();
        flat.pop();
        assert!(matches!(
            HMNetParams::from_tensors(cfg.clone(), flat),
            Err(ModelError::ParamCount { .. })
        ));

        let mut flat = params.tensors();
        flat[0] = Tensor::zeros(&[3, 3]);
        match HMNetParams::from_tensors(cfg, flat) {
            Err(ModelError::ParamShape { name, .. }) => assert_eq!(name, "embedding"),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn embed_token_concatenates_table_rows() {
        let cfg = tiny_cfg();
        let params = HMNetParams::init(&cfg, 5).unwrap();
        let row = embed_token(&params, 6, 1, 2).unwrap();
        assert_eq!(row.shape(), &[1, cfg.d_word_model()]);
        let mut expected = params.embedding.values()[6 * 8..7 * 8].to_vec();
        expected.extend_from_slice(&params.pos_tags.values()[2..4]);
        expected.extend_from_slice(&params.ent_tags.values()[4..6]);
        assert_eq!(row.values(), expected);
    }

    #[test]
    fn embed_token_checks_ranges() {
        let params = HMNetParams::init(&tiny_cfg(), 5).unwrap();
        assert!(matches!(
            embed_token(&params, 99, 0, 0),
            Err(ModelError::TokenOutOfRange { id: 99, .. })
        ));
        assert!(matches!(
            embed_token(&params, 0, 9, 0),
            Err(ModelError::TagOutOfRange { id: 9, .. })
        ));
    }

    #[test]
    fn encode_turn_shapes_and_validation() {
        let cfg = tiny_cfg();
        let params = HMNetParams::init(&cfg, 7).unwrap();
        let turn = tiny_meeting().turns[0].clone();
        let (bos, tokens) = encode_turn(&turn, &params, &mut Runtime::eval()).unwrap();
        assert_eq!(bos.shape(), &[1, 12]);
        assert_eq!(tokens.shape(), &[3, 12]);

        let empty = TurnInput {
            role_id: 0,
            token_ids: vec![],
            pos_ids: vec![],
            ent_ids: vec![],
        };
        assert!(matches!(
            encode_turn(&empty, &params, &mut Runtime::eval()),
            Err(ModelError::EmptyTurn)
        ));

        let long = TurnInput {
            role_id: 0,
            token_ids: vec![5; 9],
            pos_ids: vec![0; 9],
            ent_ids: vec![0; 9],
        };
        assert!(matches!(
            encode_turn(&long, &params, &mut Runtime::eval()),
            Err(ModelError::TurnTooLong { len: 9, max: 8 })
        ));

        let skewed = TurnInput {
            role_id: 0,
            token_ids: vec![5, 6],
            pos_ids: vec![0],
            ent_ids: vec![0, 0],
        };
        assert!(matches!(
            encode_turn(&skewed, &params, &mut Runtime::eval()),
            Err(ModelError::TagCount { tokens: 2, tags: 1 })
        ));
    }

    #[test]
    fn encode_meeting_collects_both_memories() {
        let cfg = tiny_cfg();
        let params = HMNetParams::init(&cfg, 9).unwrap();
        let enc = encode_meeting(&tiny_meeting(), &params, &mut Runtime::eval()).unwrap();
        assert_eq!(enc.word_memory.shape(), &[5, 12]);
        assert_eq!(enc.turn_memory.shape(), &[2, 16]);
        assert_eq!(enc.word_turn_index, vec![0, 0, 0, 1, 1]);
    }

    #[test]
    fn evaluation_forward_is_bitwise_deterministic() {
        let params = HMNetParams::init(&tiny_cfg(), 11).unwrap();
        let meeting = tiny_meeting();
        let enc1 = encode_meeting(&meeting, &params, &mut Runtime::eval()).unwrap();
        let enc2 = encode_meeting(&meeting, &params, &mut Runtime::eval()).unwrap();
        assert_eq!(enc1.word_memory.values(), enc2.word_memory.values());
        assert_eq!(enc1.turn_memory.values(), enc2.turn_memory.values());
        let l1 = decoder_forward(&[BEGIN_ID, 5], &enc1, &params, &mut Runtime::eval()).unwrap();
        let l2 = decoder_forward(&[BEGIN_ID, 5], &enc2, &params, &mut Runtime::eval()).unwrap();
        assert_eq!(l1.values(), l2.values());
    }

    #[test]
    fn role_swap_changes_turn_input_iff_role_vectors_differ() {
        let cfg = tiny_cfg();
        let params = HMNetParams::init(&cfg, 13).unwrap();
        let mut meeting = tiny_meeting();

        let base = turn_level_inputs(&meeting, &params, &mut Runtime::eval()).unwrap();
        meeting.turns[1].role_id = 3;
        let swapped = turn_level_inputs(&meeting, &params, &mut Runtime::eval()).unwrap();

        // Row 0 untouched, row 1 differs only in the role slice.
        for c in 0..cfg.d_turn_model() {
            assert_eq!(base.at(0, c), swapped.at(0, c));
        }
        assert_ne!(
            base.values()[16 + 12..32],
            swapped.values()[16 + 12..32],
            "role slice must change"
        );
        for c in 0..12 {
            assert_eq!(base.at(1, c), swapped.at(1, c), "word slice must not change");
        }

        // Forcing the two role vectors equal makes the swap invisible.
        let mut role_values = params.roles.values();
        let (lo2, lo3) = (2 * cfg.d_role, 3 * cfg.d_role);
        let row2 = role_values[lo2..lo2 + cfg.d_role].to_vec();
        role_values[lo3..lo3 + cfg.d_role].copy_from_slice(&row2);
        params.roles.set_values(&role_values);
        meeting.turns[1].role_id = 2;
        let a = turn_level_inputs(&meeting, &params, &mut Runtime::eval()).unwrap();
        meeting.turns[1].role_id = 3;
        let b = turn_level_inputs(&meeting, &params, &mut Runtime::eval()).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn decoder_forward_shapes_and_empty_prefix() {
        let cfg = tiny_cfg();
        let params = HMNetParams::init(&cfg, 15).unwrap();
        let enc = encode_meeting(&tiny_meeting(), &params, &mut Runtime::eval()).unwrap();
        let logits = decoder_forward(&[BEGIN_ID, 5, 6], &enc, &params, &mut Runtime::eval()).unwrap();
        assert_eq!(logits.shape(), &[3, cfg.vocab_size]);
        assert!(matches!(
            decoder_forward(&[], &enc, &params, &mut Runtime::eval()),
            Err(ModelError::EmptyPrefix)
        ));
    }

    #[test]
    fn loss_flows_gradient_into_tied_embedding() {
        let params = HMNetParams::init(&tiny_cfg(), 17).unwrap();
        let target = vec![BEGIN_ID, 5, 9, END_ID];
        let loss = compute_loss(&tiny_meeting(), &target, &params, &mut Runtime::eval()).unwrap();
        assert!(loss.item().is_finite() && loss.item() > 0.0);
        loss.backward().unwrap();
        let grad = params.embedding.grad().expect("embedding must get grads");
        assert!(grad.iter().any(|g| *g != 0.0));
        // Rows used only as decoder inputs and rows used only via the
        // projection both touch the same matrix.
        let row_begin: f64 = grad[BEGIN_ID * 8..(BEGIN_ID + 1) * 8]
            .iter()
            .map(|g| g.abs())
            .sum();
        assert!(row_begin > 0.0, "input-side gradient missing");
    }

    #[test]
    fn loss_validates_targets() {
        let params = HMNetParams::init(&tiny_cfg(), 19).unwrap();
        let meeting = tiny_meeting();
        assert!(matches!(
            compute_loss(&meeting, &[BEGIN_ID], &params, &mut Runtime::eval()),
            Err(ModelError::TargetTooShort { len: 1 })
        ));
        assert!(matches!(
            compute_loss(&meeting, &[5, 6], &params, &mut Runtime::eval()),
            Err(ModelError::BadTargetMarkers)
        ));
        let long = vec![BEGIN_ID; 13];
        assert!(matches!(
            compute_loss(&meeting, &long, &params, &mut Runtime::eval()),
            Err(ModelError::TargetTooLong { len: 13, max: 12 })
        ));
    }
}

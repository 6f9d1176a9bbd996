//! Self-contained binary checkpoints.
//!
//! One file carries everything needed to resume training or to summarize:
//! the model and training configuration, the vocabulary, role, and tag
//! tables, every parameter tensor, and the optimizer moments. Values are
//! stored as raw little-endian `f64`, so a load followed by a save
//! reproduces the file byte for byte.
//!
//! Layout: the 4-byte magic `HMN1`, a little-endian `u32` format version,
//! a length-prefixed JSON header, then one length-prefixed record per
//! tensor — parameters first in canonical order, then first moments, then
//! second moments.

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{RoleTable, TagVocab, Vocab};
use crate::model::{HMNetConfig, HMNetParams};
use crate::tensor::Tensor;

use super::{RAdamState, TrainConfig};

const MAGIC: [u8; 4] = *b"HMN1";
const VERSION: u32 = 1;

// ── Errors ──────────────────────────────────────────────────────────────────

#[derive(Debug)]
pub enum CheckpointError {
    Io(io::Error),
    /// The file is a checkpoint, but from another format version.
    VersionMismatch { found: u32 },
    /// The file cannot be a checkpoint this code wrote.
    Corrupt { reason: String },
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "checkpoint i/o: {e}"),
            CheckpointError::VersionMismatch { found } => {
                write!(f, "checkpoint version {found}, expected {VERSION}")
            }
            CheckpointError::Corrupt { reason } => write!(f, "corrupt checkpoint: {reason}"),
        }
    }
}

impl std::error::Error for CheckpointError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CheckpointError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for CheckpointError {
    fn from(e: io::Error) -> Self {
        // A file that ends mid-record is corrupt, not an i/o environment
        // problem.
        if e.kind() == ErrorKind::UnexpectedEof {
            CheckpointError::Corrupt {
                reason: "file ends before the expected data".into(),
            }
        } else {
            CheckpointError::Io(e)
        }
    }
}

fn corrupt(reason: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt {
        reason: reason.into(),
    }
}

// ── Header ──────────────────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: HMNetConfig,
    train: TrainConfig,
    /// Completed optimizer updates.
    radam_t: usize,
    vocab: Vec<String>,
    roles: Vec<String>,
    pos_tags: Vec<String>,
    ent_tags: Vec<String>,
}

/// Everything a checkpoint file restores.
#[derive(Debug)]
pub struct Checkpoint {
    pub params: HMNetParams,
    pub train_config: TrainConfig,
    pub state: RAdamState,
    pub vocab: Vocab,
    pub roles: RoleTable,
    pub pos_tags: TagVocab,
    pub ent_tags: TagVocab,
}

// ── Writing ─────────────────────────────────────────────────────────────────

fn write_record<W: Write>(
    w: &mut W,
    name: &str,
    shape: &[usize],
    values: &[f64],
) -> io::Result<()> {
    w.write_all(&(name.len() as u64).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(shape.len() as u64).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &x in values {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Writes one self-contained checkpoint. Saving the result of a load
/// reproduces the input byte for byte.
#[allow(clippy::too_many_arguments)]
pub fn save_checkpoint(
    path: &Path,
    params: &HMNetParams,
    train: &TrainConfig,
    state: &RAdamState,
    vocab: &Vocab,
    roles: &RoleTable,
    pos_tags: &TagVocab,
    ent_tags: &TagVocab,
) -> Result<(), CheckpointError> {
    let named = params.named_tensors();
    let (m, v) = state.moments();
    assert_eq!(named.len(), m.len(), "optimizer state sized for another model");

    let header = Header {
        model: params.config().clone(),
        train: train.clone(),
        radam_t: state.step_count(),
        vocab: vocab.tokens().to_vec(),
        roles: roles.names().to_vec(),
        pos_tags: pos_tags.tags().to_vec(),
        ent_tags: ent_tags.tags().to_vec(),
    };
    let header_bytes = serde_json::to_vec(&header).map_err(|e| corrupt(e.to_string()))?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;

    for (name, tensor) in &named {
        write_record(&mut w, name, tensor.shape(), &tensor.values_ref())?;
    }
    for (moments, prefix) in [(m, "radam.m"), (v, "radam.v")] {
        for ((name, tensor), values) in named.iter().zip(moments) {
            write_record(&mut w, &format!("{prefix}/{name}"), tensor.shape(), values)?;
        }
    }
    w.flush()?;
    Ok(())
}

// ── Reading ─────────────────────────────────────────────────────────────────

fn read_exact<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>, CheckpointError> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_len<R: Read>(r: &mut R, what: &str, cap: u64) -> Result<usize, CheckpointError> {
    let n = read_u64(r)?;
    if n > cap {
        return Err(corrupt(format!("implausible {what} length {n}")));
    }
    Ok(n as usize)
}

/// Reads one record, requiring the stored name and shape to match the
/// expectation from the model configuration.
fn read_record<R: Read>(
    r: &mut R,
    expect_name: &str,
    expect_shape: &[usize],
) -> Result<Vec<f64>, CheckpointError> {
    let name_len = read_len(r, "name", 1 << 16)?;
    let name = String::from_utf8(read_exact(r, name_len)?)
        .map_err(|_| corrupt("record name is not UTF-8"))?;
    if name != expect_name {
        return Err(corrupt(format!(
            "record order mismatch: expected {expect_name}, found {name}"
        )));
    }
    let ndim = read_len(r, "rank", 8)?;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_len(r, "dimension", 1 << 32)?);
    }
    if shape != expect_shape {
        return Err(corrupt(format!(
            "record {name}: expected shape {expect_shape:?}, found {shape:?}"
        )));
    }
    let numel: usize = shape.iter().product();
    let bytes = read_exact(r, numel * 8)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of 8")))
        .collect())
}

/// Reads a checkpoint back, validating structure against its own header.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);

    let magic = read_exact(&mut r, 4)?;
    if magic != MAGIC {
        return Err(corrupt("missing file magic"));
    }
    let mut version_bytes = [0u8; 4];
    r.read_exact(&mut version_bytes)?;
    let version = u32::from_le_bytes(version_bytes);
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch { found: version });
    }

    let header_len = read_len(&mut r, "header", 1 << 30)?;
    let header: Header = serde_json::from_slice(&read_exact(&mut r, header_len)?)
        .map_err(|e| corrupt(format!("header: {e}")))?;
    let cfg = header.model;
    cfg.validate().map_err(|e| corrupt(e.to_string()))?;

    if header.vocab.len() != cfg.vocab_size {
        return Err(corrupt(format!(
            "vocabulary of {} tokens for vocab_size {}",
            header.vocab.len(),
            cfg.vocab_size
        )));
    }
    if header.pos_tags.len() != cfg.n_pos_tags || header.ent_tags.len() != cfg.n_ent_tags {
        return Err(corrupt("tag table sizes disagree with the configuration"));
    }
    // Role tables may be smaller than the allocated role vectors: a later
    // corpus can rebind rows without reshaping the model.
    if header.roles.len() > cfg.n_roles {
        return Err(corrupt(format!(
            "{} roles exceed the {} allocated role vectors",
            header.roles.len(),
            cfg.n_roles
        )));
    }

    let layout = HMNetParams::layout(&cfg);
    let mut tensors = Vec::with_capacity(layout.len());
    for (name, shape) in &layout {
        let values = read_record(&mut r, name, shape)?;
        tensors.push(Tensor::new(shape, values).map_err(|e| corrupt(e.to_string()))?);
    }
    let mut moments = Vec::with_capacity(2);
    for prefix in ["radam.m", "radam.v"] {
        let buffers = layout
            .iter()
            .map(|(name, shape)| read_record(&mut r, &format!("{prefix}/{name}"), shape))
            .collect::<Result<Vec<_>, _>>()?;
        moments.push(buffers);
    }
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => return Err(corrupt("trailing data after the last record")),
        Err(e) => return Err(e.into()),
    }

    let v = moments.pop().expect("two moment sets read");
    let m = moments.pop().expect("two moment sets read");
    let params = HMNetParams::from_tensors(cfg, tensors).map_err(|e| corrupt(e.to_string()))?;
    let state = RAdamState::from_parts(header.radam_t, m, v);

    let vocab = Vocab::from_tokens(header.vocab).map_err(|e| corrupt(e.to_string()))?;
    let roles = RoleTable::from_names(header.roles);
    let pos_tags = TagVocab::from_tags(header.pos_tags).map_err(|e| corrupt(e.to_string()))?;
    let ent_tags = TagVocab::from_tags(header.ent_tags).map_err(|e| corrupt(e.to_string()))?;

    Ok(Checkpoint {
        params,
        train_config: header.train,
        state,
        vocab,
        roles,
        pos_tags,
        ent_tags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Meeting, Turn};
    use crate::model::HMNetConfig;

    fn fixture() -> (HMNetParams, TrainConfig, RAdamState, Vocab, RoleTable, TagVocab, TagVocab) {
        let meetings = vec![Meeting {
            id: "m1".into(),
            turns: vec![
                Turn {
                    role: "PM".into(),
                    tokens: vec!["alpha".into(), "beta".into(), "gamma".into()],
                    pos: Some(vec!["NN".into(), "VB".into(), "NN".into()]),
                    ent: Some(vec!["<none>".into(), "<none>".into(), "ORG".into()]),
                },
                Turn {
                    role: "UI".into(),
                    tokens: vec!["beta".into(), "delta".into()],
                    pos: None,
                    ent: None,
                },
            ],
            summary: vec!["alpha".into(), "beta".into()],
        }];
        let vocab = Vocab::build(&meetings, 1, 16).unwrap();
        let roles = RoleTable::build(&meetings);
        let pos_tags = TagVocab::build_pos(&meetings);
        let ent_tags = TagVocab::build_ent(&meetings);
        let cfg = HMNetConfig {
            vocab_size: vocab.len(),
            n_pos_tags: pos_tags.len(),
            n_ent_tags: ent_tags.len(),
            n_roles: roles.len(),
            d_word: 8,
            d_pos: 2,
            d_ent: 2,
            d_role: 4,
            n_layers: 1,
            n_heads: 2,
            ffn_multiplier: 2,
            dropout: 0.1,
            max_turns: 4,
            max_turn_tokens: 6,
            max_summary_tokens: 8,
        };
        let params = HMNetParams::init(&cfg, 21).unwrap();
        // Non-trivial optimizer state: one update with synthetic gradients.
        let tensors = params.tensors();
        for (i, t) in tensors.iter().enumerate() {
            let g: Vec<f64> = (0..t.numel()).map(|j| ((i + j) as f64).sin()).collect();
            t.set_grad(&g);
        }
        let mut state = RAdamState::for_tensors(&tensors);
        super::super::radam_step(&tensors, &mut state, 1e-3);
        (params, TrainConfig::finetune(), state, vocab, roles, pos_tags, ent_tags)
    }

    #[test]
    fn round_trip_restores_everything_bitwise() {
        let (params, train, state, vocab, roles, pos_tags, ent_tags) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &params, &train, &state, &vocab, &roles, &pos_tags, &ent_tags)
            .unwrap();

        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.params.config(), params.config());
        assert_eq!(loaded.train_config, train);
        assert_eq!(loaded.state, state);
        assert_eq!(loaded.vocab.tokens(), vocab.tokens());
        assert_eq!(loaded.roles.names(), roles.names());
        assert_eq!(loaded.pos_tags.tags(), pos_tags.tags());
        assert_eq!(loaded.ent_tags.tags(), ent_tags.tags());
        for (a, b) in params.tensors().iter().zip(loaded.params.tensors()) {
            assert_eq!(a.shape(), b.shape());
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn save_after_load_is_byte_identical() {
        let (params, train, state, vocab, roles, pos_tags, ent_tags) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("first.ckpt");
        save_checkpoint(&first, &params, &train, &state, &vocab, &roles, &pos_tags, &ent_tags)
            .unwrap();
        let loaded = load_checkpoint(&first).unwrap();
        let second = dir.path().join("second.ckpt");
        save_checkpoint(
            &second,
            &loaded.params,
            &loaded.train_config,
            &loaded.state,
            &loaded.vocab,
            &loaded.roles,
            &loaded.pos_tags,
            &loaded.ent_tags,
        )
        .unwrap();
        assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    }

    #[test]
    fn foreign_version_is_reported_not_guessed_at() {
        let (params, train, state, vocab, roles, pos_tags, ent_tags) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &params, &train, &state, &vocab, &roles, &pos_tags, &ent_tags)
            .unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::VersionMismatch { found: 9 })
        ));
    }

    #[test]
    fn bad_magic_and_truncation_are_corrupt() {
        let (params, train, state, vocab, roles, pos_tags, ent_tags) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &params, &train, &state, &vocab, &roles, &pos_tags, &ent_tags)
            .unwrap();

        let bytes = std::fs::read(&path).unwrap();
        let clipped = dir.path().join("clipped.ckpt");
        std::fs::write(&clipped, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(
            load_checkpoint(&clipped),
            Err(CheckpointError::Corrupt { .. })
        ));

        let scribbled = dir.path().join("scribbled.ckpt");
        std::fs::write(&scribbled, b"definitely not a checkpoint").unwrap();
        assert!(matches!(
            load_checkpoint(&scribbled),
            Err(CheckpointError::Corrupt { .. })
        ));

        let extended = dir.path().join("extended.ckpt");
        let mut longer = bytes;
        longer.push(0);
        std::fs::write(&extended, longer).unwrap();
        assert!(matches!(
            load_checkpoint(&extended),
            Err(CheckpointError::Corrupt { .. })
        ));
    }
}

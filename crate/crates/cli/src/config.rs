//! Effective run configuration: a named profile supplies every default,
//! a JSON config file may override any field, and `--set key=value` flags
//! override the file. Keys are dotted paths (`model.d_word`,
//! `pretrain.peak_lr`, `decode.beam_size`, ...).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use hmnet::decode::DecodeConfig;
use hmnet::model::HMNetConfig;
use hmnet::train::TrainConfig;

use crate::error::CliError;

/// Everything a command run needs, merged and validated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: String,
    /// Placeholder vocabulary/tag/role counts here are replaced by the
    /// sizes of the tables built from (or loaded with) the actual data.
    pub model: HMNetConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub decode: DecodeConfig,
    /// Pseudo-speakers per converted meeting.
    pub convert_speakers: usize,
    /// Vocabulary size cap when building from a corpus.
    pub vocab_cap: usize,
    /// Sentence budget for the extractive and random baselines.
    pub oracle_k: usize,
    /// Draws per reference for the copy-from-training baseline.
    pub copy_trials: usize,
    pub seed: u64,
}

/// The built-in starting points. `toy` runs in seconds on a laptop; the
/// other two carry full-scale training and decoding defaults.
pub fn profile_config(name: &str) -> Result<RunConfig, CliError> {
    match name {
        "toy" => Ok(RunConfig {
            profile: name.to_string(),
            model: HMNetConfig::toy(64, 1, 1, 8),
            pretrain: TrainConfig {
                warmup_steps: 100,
                initial_lr: 1e-9,
                peak_lr: 1e-3,
                clip_norm: 2.0,
                accumulation_steps: 2,
                max_steps: 500,
                checkpoint_every: 100,
                seed: 17,
            },
            finetune: TrainConfig {
                max_steps: 300,
                ..TrainConfig {
                    warmup_steps: 100,
                    initial_lr: 1e-9,
                    peak_lr: 1e-3,
                    clip_norm: 2.0,
                    accumulation_steps: 2,
                    max_steps: 500,
                    checkpoint_every: 100,
                    seed: 18,
                }
            },
            decode: DecodeConfig {
                beam_size: 3,
                min_len: 1,
                max_len: 22,
                block_repeated_trigrams: true,
            },
            convert_speakers: 4,
            vocab_cap: 4096,
            oracle_k: 3,
            copy_trials: 50,
            seed: 17,
        }),
        "ami-like" => Ok(RunConfig {
            profile: name.to_string(),
            model: HMNetConfig::base(32_000, 1, 1, 64),
            pretrain: TrainConfig::pretrain(),
            finetune: TrainConfig::finetune(),
            decode: DecodeConfig {
                beam_size: 6,
                min_len: 400,
                max_len: 446,
                block_repeated_trigrams: true,
            },
            convert_speakers: 4,
            vocab_cap: 50_000,
            oracle_k: 18,
            copy_trials: 50,
            seed: 1,
        }),
        "icsi-like" => Ok(RunConfig {
            profile: name.to_string(),
            model: HMNetConfig::base(32_000, 1, 1, 64),
            pretrain: TrainConfig::pretrain(),
            finetune: TrainConfig::finetune(),
            decode: DecodeConfig {
                beam_size: 6,
                min_len: 280,
                max_len: 446,
                block_repeated_trigrams: true,
            },
            convert_speakers: 4,
            vocab_cap: 50_000,
            oracle_k: 23,
            copy_trials: 50,
            seed: 1,
        }),
        other => Err(CliError::usage(format!(
            "unknown profile '{other}' (expected toy, ami-like, or icsi-like)"
        ))),
    }
}

fn parse_as<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T, CliError> {
    raw.parse().map_err(|_| {
        CliError::usage(format!(
            "invalid value '{raw}' for {key} (expected {})",
            std::any::type_name::<T>()
        ))
    })
}

/// Applies one dotted-key override. Unknown keys are a configuration
/// error naming the key.
pub fn apply_key(cfg: &mut RunConfig, key: &str, raw: &str) -> Result<(), CliError> {
    match key {
        "model.vocab_size" => cfg.model.vocab_size = parse_as(key, raw)?,
        "model.n_pos_tags" => cfg.model.n_pos_tags = parse_as(key, raw)?,
        "model.n_ent_tags" => cfg.model.n_ent_tags = parse_as(key, raw)?,
        "model.n_roles" => cfg.model.n_roles = parse_as(key, raw)?,
        "model.d_word" => cfg.model.d_word = parse_as(key, raw)?,
        "model.d_pos" => cfg.model.d_pos = parse_as(key, raw)?,
        "model.d_ent" => cfg.model.d_ent = parse_as(key, raw)?,
        "model.d_role" => cfg.model.d_role = parse_as(key, raw)?,
        "model.n_layers" => cfg.model.n_layers = parse_as(key, raw)?,
        "model.n_heads" => cfg.model.n_heads = parse_as(key, raw)?,
        "model.ffn_multiplier" => cfg.model.ffn_multiplier = parse_as(key, raw)?,
        "model.dropout" => cfg.model.dropout = parse_as(key, raw)?,
        "model.max_turns" => cfg.model.max_turns = parse_as(key, raw)?,
        "model.max_turn_tokens" => cfg.model.max_turn_tokens = parse_as(key, raw)?,
        "model.max_summary_tokens" => cfg.model.max_summary_tokens = parse_as(key, raw)?,
        "pretrain.warmup_steps" => cfg.pretrain.warmup_steps = parse_as(key, raw)?,
        "pretrain.initial_lr" => cfg.pretrain.initial_lr = parse_as(key, raw)?,
        "pretrain.peak_lr" => cfg.pretrain.peak_lr = parse_as(key, raw)?,
        "pretrain.clip_norm" => cfg.pretrain.clip_norm = parse_as(key, raw)?,
        "pretrain.accumulation_steps" => cfg.pretrain.accumulation_steps = parse_as(key, raw)?,
        "pretrain.max_steps" => cfg.pretrain.max_steps = parse_as(key, raw)?,
        "pretrain.checkpoint_every" => cfg.pretrain.checkpoint_every = parse_as(key, raw)?,
        "finetune.warmup_steps" => cfg.finetune.warmup_steps = parse_as(key, raw)?,
        "finetune.initial_lr" => cfg.finetune.initial_lr = parse_as(key, raw)?,
        "finetune.peak_lr" => cfg.finetune.peak_lr = parse_as(key, raw)?,
        "finetune.clip_norm" => cfg.finetune.clip_norm = parse_as(key, raw)?,
        "finetune.accumulation_steps" => cfg.finetune.accumulation_steps = parse_as(key, raw)?,
        "finetune.max_steps" => cfg.finetune.max_steps = parse_as(key, raw)?,
        "finetune.checkpoint_every" => cfg.finetune.checkpoint_every = parse_as(key, raw)?,
        "decode.beam_size" => cfg.decode.beam_size = parse_as(key, raw)?,
        "decode.min_len" => cfg.decode.min_len = parse_as(key, raw)?,
        "decode.max_len" => cfg.decode.max_len = parse_as(key, raw)?,
        "decode.block_repeated_trigrams" => {
            cfg.decode.block_repeated_trigrams = parse_as(key, raw)?
        }
        "convert_speakers" => cfg.convert_speakers = parse_as(key, raw)?,
        "vocab_cap" => cfg.vocab_cap = parse_as(key, raw)?,
        "oracle_k" => cfg.oracle_k = parse_as(key, raw)?,
        "copy_trials" => cfg.copy_trials = parse_as(key, raw)?,
        "seed" => cfg.seed = parse_as(key, raw)?,
        _ => {
            return Err(CliError::usage(format!(
                "unknown configuration key '{key}'"
            )))
        }
    }
    Ok(())
}

/// Flattens a JSON object file into dotted-key overrides, depth first in
/// document order.
fn file_overrides(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("config {} is not JSON: {e}", path.display())))?;
    let serde_json::Value::Object(map) = value else {
        return Err(CliError::usage(format!(
            "config {} must be a JSON object",
            path.display()
        )));
    };
    let mut pairs = Vec::new();
    flatten("", &map, &mut pairs)?;
    Ok(pairs)
}

fn flatten(
    prefix: &str,
    map: &serde_json::Map<String, serde_json::Value>,
    out: &mut Vec<(String, String)>,
) -> Result<(), CliError> {
    for (k, v) in map {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            serde_json::Value::Object(inner) => flatten(&key, inner, out)?,
            serde_json::Value::Number(n) => out.push((key, n.to_string())),
            serde_json::Value::Bool(b) => out.push((key, b.to_string())),
            serde_json::Value::String(s) => out.push((key, s.clone())),
            _ => {
                return Err(CliError::usage(format!(
                    "config key '{key}' holds an unsupported value type"
                )))
            }
        }
    }
    Ok(())
}

/// Builds the effective configuration: profile defaults, then the config
/// file, then `--set` pairs, then `--seed`; validates the result.
pub fn build_config(
    file: Option<&Path>,
    sets: &[(String, String)],
    seed_flag: Option<u64>,
) -> Result<RunConfig, CliError> {
    let file_pairs = match file {
        Some(p) => file_overrides(p)?,
        None => Vec::new(),
    };
    let mut profile = "toy".to_string();
    for (k, v) in file_pairs.iter().chain(sets.iter()) {
        if k == "profile" {
            profile = v.clone();
        }
    }
    let mut cfg = profile_config(&profile)?;
    for (k, v) in file_pairs.iter().chain(sets.iter()) {
        if k != "profile" {
            apply_key(&mut cfg, k, v)?;
        }
    }
    if let Some(seed) = seed_flag {
        cfg.seed = seed;
    }
    cfg.pretrain.seed = cfg.seed;
    cfg.finetune.seed = cfg.seed;
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.model.validate()?;
    cfg.pretrain.validate()?;
    cfg.finetune.validate()?;
    cfg.decode.validate()?;
    if cfg.convert_speakers == 0 {
        return Err(CliError::usage("convert_speakers must be at least 1"));
    }
    if cfg.oracle_k == 0 {
        return Err(CliError::usage("oracle_k must be at least 1"));
    }
    if cfg.copy_trials == 0 {
        return Err(CliError::usage("copy_trials must be at least 1"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_ship_their_decode_settings() {
        let ami = profile_config("ami-like").unwrap();
        assert_eq!(ami.decode.beam_size, 6);
        assert_eq!(ami.decode.min_len, 400);
        assert_eq!(ami.oracle_k, 18);
        let icsi = profile_config("icsi-like").unwrap();
        assert_eq!(icsi.decode.min_len, 280);
        assert_eq!(icsi.oracle_k, 23);
        let toy = profile_config("toy").unwrap();
        assert_eq!(toy.model.d_word, 64);
        toy.model.validate().unwrap();
    }

    #[test]
    fn overrides_apply_in_precedence_order() {
        let mut cfg = profile_config("toy").unwrap();
        apply_key(&mut cfg, "decode.beam_size", "6").unwrap();
        apply_key(&mut cfg, "decode.min_len", "400").unwrap();
        assert_eq!(cfg.decode.beam_size, 6);
        assert_eq!(cfg.decode.min_len, 400);
    }

    #[test]
    fn unknown_key_is_named_in_the_error() {
        let mut cfg = profile_config("toy").unwrap();
        let err = apply_key(&mut cfg, "beem_size", "6").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("beem_size"), "got: {msg}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn build_config_rejects_invalid_merged_model() {
        let sets = vec![("model.n_heads".to_string(), "7".to_string())];
        let err = build_config(None, &sets, None).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}

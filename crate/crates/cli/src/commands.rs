//! Argument parsing and the eight subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hmnet::data::{
    convert_articles, load_articles, load_meetings, save_meetings, truncate_meeting, Meeting,
    RoleTable, TagVocab, TruncationLimits, Vocab,
};
use hmnet::decode::{beam_search, greedy_decode, DecodeConfig};
use hmnet::eval::{
    copy_from_train, evaluate_corpus, extractive_oracle, random_baseline, score_pair, EvalItem,
};
use hmnet::gradcheck;
use hmnet::model::{encode_meeting, HMNetConfig, HMNetParams, MeetingInput};
use hmnet::nn::Runtime;
use hmnet::tensor::Tensor;
use hmnet::train::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use hmnet::train::{train_loop, RAdamState, TrainConfig};

use crate::config::{build_config, RunConfig};
use crate::error::CliError;

// ── Logging ─────────────────────────────────────────────────────────────────

/// Progress lines go to stderr when `HMNET_LOG` is set to anything
/// nonempty other than `0`; primary outputs never depend on it.
fn log_enabled() -> bool {
    std::env::var("HMNET_LOG")
        .map(|v| !v.is_empty() && v != "0")
        .unwrap_or(false)
}

fn log(msg: &str) {
    if log_enabled() {
        eprintln!("[hmnet] {msg}");
    }
}

// ── Flag parsing ────────────────────────────────────────────────────────────

#[derive(Debug, Default)]
pub struct Flags {
    pub config: Option<PathBuf>,
    pub sets: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub baseline: Option<String>,
    pub positionals: Vec<PathBuf>,
}

fn take_value<'a>(
    flag: &str,
    it: &mut impl Iterator<Item = &'a String>,
) -> Result<&'a String, CliError> {
    it.next()
        .ok_or_else(|| CliError::usage(format!("{flag} requires a value")))
}

pub fn parse_flags(args: &[String]) -> Result<Flags, CliError> {
    let mut flags = Flags::default();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--config" => flags.config = Some(PathBuf::from(take_value("--config", &mut it)?)),
            "--set" => {
                let pair = take_value("--set", &mut it)?;
                let Some((k, v)) = pair.split_once('=') else {
                    return Err(CliError::usage(format!(
                        "--set expects key=value, got '{pair}'"
                    )));
                };
                flags.sets.push((k.to_string(), v.to_string()));
            }
            "--seed" => {
                let raw = take_value("--seed", &mut it)?;
                let seed = raw
                    .parse()
                    .map_err(|_| CliError::usage(format!("invalid --seed value '{raw}'")))?;
                flags.seed = Some(seed);
            }
            "--out" => flags.out = Some(PathBuf::from(take_value("--out", &mut it)?)),
            "--baseline" => flags.baseline = Some(take_value("--baseline", &mut it)?.clone()),
            other if other.starts_with('-') => {
                return Err(CliError::usage(format!("unknown flag '{other}'")));
            }
            other => flags.positionals.push(PathBuf::from(other)),
        }
    }
    Ok(flags)
}

impl Flags {
    fn effective_config(&self) -> Result<RunConfig, CliError> {
        let cfg = build_config(self.config.as_deref(), &self.sets, self.seed)?;
        if log_enabled() {
            let echo = serde_json::to_string(&cfg).unwrap_or_else(|e| e.to_string());
            log(&format!("effective config: {echo}"));
        }
        Ok(cfg)
    }

    fn expect_positionals(&self, names: &[&str]) -> Result<(), CliError> {
        if self.positionals.len() != names.len() {
            return Err(CliError::usage(format!(
                "expected {} positional argument(s): {}; got {}",
                names.len(),
                names.join(" "),
                self.positionals.len()
            )));
        }
        Ok(())
    }

    fn require_out(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::usage("--out is required for this command"))
    }
}

// ── Small shared helpers ────────────────────────────────────────────────────

fn write_output(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_corpus(path: &Path) -> Result<Vec<Meeting>, CliError> {
    let meetings = load_meetings(path)?;
    if meetings.is_empty() {
        return Err(CliError::data(format!(
            "{} contains no meetings",
            path.display()
        )));
    }
    Ok(meetings)
}

fn open_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let ckpt = load_checkpoint(path)?;
    log(&format!(
        "loaded checkpoint {}: {} parameters tensors, vocab {}, {} roles",
        path.display(),
        ckpt.params.tensors().len(),
        ckpt.vocab.len(),
        ckpt.roles.len()
    ));
    Ok(ckpt)
}

fn model_limits(cfg: &HMNetConfig) -> TruncationLimits {
    TruncationLimits {
        max_turns: cfg.max_turns,
        max_turn_tokens: cfg.max_turn_tokens,
        max_summary_tokens: cfg.max_summary_tokens,
    }
}

/// The lookup tables a model is trained against.
struct Tables {
    vocab: Vocab,
    roles: RoleTable,
    pos_tags: TagVocab,
    ent_tags: TagVocab,
}

fn build_tables(meetings: &[Meeting], vocab_cap: usize) -> Result<Tables, CliError> {
    Ok(Tables {
        vocab: Vocab::build(meetings, 1, vocab_cap)?,
        roles: RoleTable::build(meetings),
        pos_tags: TagVocab::build_pos(meetings),
        ent_tags: TagVocab::build_ent(meetings),
    })
}

/// Sizes the model to the tables: embedding-table rows come from the data,
/// everything else from the profile. Role capacity never shrinks below the
/// profile's, so later fine-tuning corpora can add speakers.
fn sized_model(base: &HMNetConfig, tables: &Tables) -> HMNetConfig {
    let mut cfg = base.clone();
    cfg.vocab_size = tables.vocab.len();
    cfg.n_pos_tags = tables.pos_tags.len();
    cfg.n_ent_tags = tables.ent_tags.len();
    cfg.n_roles = cfg.n_roles.max(tables.roles.len());
    cfg
}

/// Truncates each meeting to the model's budgets and turns it into
/// (encoder input, decoder target) pairs.
fn prepare_examples(
    meetings: &[Meeting],
    tables: &Tables,
    model: &HMNetConfig,
) -> Result<Vec<(MeetingInput, Vec<usize>)>, CliError> {
    let limits = model_limits(model);
    meetings
        .iter()
        .map(|m| {
            let clipped = truncate_meeting(m, &limits);
            let input = MeetingInput::from_meeting(
                &clipped,
                &tables.vocab,
                &tables.roles,
                &tables.pos_tags,
                &tables.ent_tags,
            )?;
            let target = tables.vocab.target_ids(&clipped.summary);
            Ok((input, target))
        })
        .collect()
}

/// The summary tokens inside a marker-wrapped decoder target.
fn reference_tokens(vocab: &Vocab, target: &[usize]) -> Vec<String> {
    vocab.decode_ids(&target[1..target.len() - 1])
}

// ── Training with dev-set model selection ───────────────────────────────────

/// Parameter and optimizer values frozen at a checkpoint boundary.
struct Snapshot {
    step: usize,
    score: f64,
    tensors: Vec<Tensor>,
    opt_t: usize,
    opt_m: Vec<Vec<f64>>,
    opt_v: Vec<Vec<f64>>,
}

fn freeze(step: usize, score: f64, params: &HMNetParams, state: &RAdamState) -> Snapshot {
    let tensors = params
        .tensors()
        .iter()
        .map(|t| {
            Tensor::new(t.shape(), t.values()).expect("live tensor shape is always consistent")
        })
        .collect();
    let (m, v) = state.moments();
    Snapshot {
        step,
        score,
        tensors,
        opt_t: state.step_count(),
        opt_m: m.to_vec(),
        opt_v: v.to_vec(),
    }
}

/// Mean unigram-overlap F1 of greedy summaries against the references.
fn dev_score(
    dev: &[(MeetingInput, Vec<usize>)],
    params: &HMNetParams,
    decode_cfg: &DecodeConfig,
    vocab: &Vocab,
) -> Result<f64, CliError> {
    let mut rt = Runtime::eval();
    let mut total = 0.0;
    for (input, target) in dev {
        let encoded = encode_meeting(input, params, &mut rt)?;
        let ids = greedy_decode(&encoded, params, decode_cfg, &mut rt)?;
        let candidate = vocab.decode_ids(&ids);
        let reference = reference_tokens(vocab, target);
        total += score_pair(&candidate, &reference).rouge_1.f1;
    }
    Ok(total / dev.len() as f64)
}

/// Trains on all examples, scoring greedy decodes of the dev tail (the
/// last ⌈n/8⌉ examples, at least one) at every checkpoint boundary and
/// after the final step; returns the parameters and optimizer state of
/// the best-scoring point (earliest on ties).
fn train_with_selection(
    examples: &[(MeetingInput, Vec<usize>)],
    model: HMNetConfig,
    train: &TrainConfig,
    decode_cfg: &DecodeConfig,
    vocab: &Vocab,
    start: (HMNetParams, RAdamState),
) -> Result<(HMNetParams, RAdamState), CliError> {
    let (params, mut state) = start;
    let dev_len = (examples.len() / 8).max(1);
    let dev = &examples[examples.len() - dev_len..];

    let mut best: Option<Snapshot> = None;
    let mut selection_error: Option<CliError> = None;
    train_loop(
        examples,
        &params,
        train,
        &mut state,
        |entry| {
            log(&format!(
                "step {} lr {:.3e} loss {:.4} grad_norm {:.4}",
                entry.step, entry.lr, entry.loss, entry.grad_norm
            ));
        },
        |step, live, opt| {
            match dev_score(dev, live, decode_cfg, vocab) {
                Ok(score) => {
                    log(&format!("step {step} dev rouge-1 f1 {score:.4}"));
                    if best.as_ref().map_or(true, |b| score > b.score) {
                        best = Some(freeze(step, score, live, opt));
                    }
                    true
                }
                Err(e) => {
                    selection_error = Some(e);
                    false
                }
            }
        },
    )?;
    if let Some(e) = selection_error {
        return Err(e);
    }

    let final_score = dev_score(dev, &params, decode_cfg, vocab)?;
    log(&format!("final dev rouge-1 f1 {final_score:.4}"));
    match best {
        Some(b) if b.score > final_score => {
            log(&format!(
                "keeping step-{} parameters (dev {:.4} > final {:.4})",
                b.step, b.score, final_score
            ));
            let rebuilt = HMNetParams::from_tensors(model, b.tensors)?;
            let rebuilt_state = RAdamState::from_parts(b.opt_t, b.opt_m, b.opt_v);
            Ok((rebuilt, rebuilt_state))
        }
        _ => Ok((params, state)),
    }
}

// ── Subcommands ─────────────────────────────────────────────────────────────

fn cmd_convert(args: &[String]) -> Result<(), CliError> {
    let flags = parse_flags(args)?;
    flags.expect_positionals(&["articles.jsonl"])?;
    let out = flags.require_out()?;
    let cfg = flags.effective_config()?;

    let articles = load_articles(&flags.positionals[0])?;
    let meetings = convert_articles(&articles, cfg.convert_speakers, cfg.seed)?;
    save_meetings(out, &meetings)?;
    log(&format!(
        "converted {} articles into {} pseudo-meetings",
        articles.len(),
        meetings.len()
    ));
    Ok(())
}

fn cmd_pretrain(args: &[String]) -> Result<(), CliError> {
    let flags = parse_flags(args)?;
    flags.expect_positionals(&["meetings.jsonl"])?;
    let out = flags.require_out()?;
    let cfg = flags.effective_config()?;

    let meetings = load_corpus(&flags.positionals[0])?;
    let tables = build_tables(&meetings, cfg.vocab_cap)?;
    let model = sized_model(&cfg.model, &tables);
    model.validate()?;
    let examples = prepare_examples(&meetings, &tables, &model)?;
    log(&format!(
        "pretraining on {} meetings (vocab {}, {} roles)",
        examples.len(),
        tables.vocab.len(),
        tables.roles.len()
    ));

    let params = HMNetParams::init(&model, cfg.seed)?;
    let state = RAdamState::for_tensors(&params.tensors());
    let (params, state) = train_with_selection(
        &examples,
        model,
        &cfg.pretrain,
        &cfg.decode,
        &tables.vocab,
        (params, state),
    )?;
    save_checkpoint(
        out,
        &params,
        &cfg.pretrain,
        &state,
        &tables.vocab,
        &tables.roles,
        &tables.pos_tags,
        &tables.ent_tags,
    )?;
    log(&format!("wrote checkpoint {}", out.display()));
    Ok(())
}

fn cmd_finetune(args: &[String]) -> Result<(), CliError> {
    let flags = parse_flags(args)?;
    flags.expect_positionals(&["checkpoint", "meetings.jsonl"])?;
    let out = flags.require_out()?;
    let cfg = flags.effective_config()?;

    let ckpt = open_checkpoint(&flags.positionals[0])?;
    let meetings = load_corpus(&flags.positionals[1])?;

    // The vocabulary and tag tables are frozen at pretraining time; only
    // role names may grow, into the embedding rows reserved for them.
    let mut role_names = ckpt.roles.names().to_vec();
    for name in RoleTable::build(&meetings).names() {
        if !role_names.iter().any(|n| n == name) {
            role_names.push(name.clone());
        }
    }
    let capacity = ckpt.params.config().n_roles;
    if role_names.len() > capacity {
        return Err(CliError::data(format!(
            "fine-tuning corpus needs {} speaker roles but the checkpoint reserves {capacity}",
            role_names.len()
        )));
    }
    let tables = Tables {
        vocab: ckpt.vocab,
        roles: RoleTable::from_names(role_names),
        pos_tags: ckpt.pos_tags,
        ent_tags: ckpt.ent_tags,
    };

    let model = ckpt.params.config().clone();
    let examples = prepare_examples(&meetings, &tables, &model)?;
    log(&format!(
        "fine-tuning on {} meetings ({} roles in use)",
        examples.len(),
        tables.roles.len()
    ));

    // Fresh optimizer state: the saved moments describe the pretraining
    // trajectory, not this corpus.
    let state = RAdamState::for_tensors(&ckpt.params.tensors());
    let (params, state) = train_with_selection(
        &examples,
        model,
        &cfg.finetune,
        &cfg.decode,
        &tables.vocab,
        (ckpt.params, state),
    )?;
    save_checkpoint(
        out,
        &params,
        &cfg.finetune,
        &state,
        &tables.vocab,
        &tables.roles,
        &tables.pos_tags,
        &tables.ent_tags,
    )?;
    log(&format!("wrote checkpoint {}", out.display()));
    Ok(())
}

fn cmd_summarize(args: &[String]) -> Result<(), CliError> {
    let flags = parse_flags(args)?;
    flags.expect_positionals(&["checkpoint", "meetings.jsonl"])?;
    let cfg = flags.effective_config()?;

    let ckpt = open_checkpoint(&flags.positionals[0])?;
    let meetings = load_corpus(&flags.positionals[1])?;
    let limits = model_limits(ckpt.params.config());

    let mut rt = Runtime::eval();
    let mut lines = String::new();
    for meeting in &meetings {
        let clipped = truncate_meeting(meeting, &limits);
        let input = MeetingInput::from_meeting(
            &clipped,
            &ckpt.vocab,
            &ckpt.roles,
            &ckpt.pos_tags,
            &ckpt.ent_tags,
        )?;
        let encoded = encode_meeting(&input, &ckpt.params, &mut rt)?;
        let ids = beam_search(&encoded, &ckpt.params, &cfg.decode, &mut rt)?;
        let tokens = ckpt.vocab.decode_ids(&ids);
        lines.push_str(&tokens.join(" "));
        lines.push('\n');
        log(&format!("{}: {} tokens", meeting.id, tokens.len()));
    }
    write_output(flags.out.as_deref(), &lines)
}

fn cmd_evaluate(args: &[String]) -> Result<(), CliError> {
    let flags = parse_flags(args)?;
    flags.expect_positionals(&["meetings.jsonl", "candidates.txt"])?;
    let _cfg = flags.effective_config()?;

    let meetings = load_corpus(&flags.positionals[0])?;
    let cand_path = &flags.positionals[1];
    let text = fs::read_to_string(cand_path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", cand_path.display())))?;
    let candidates: Vec<Vec<String>> = text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect();
    if candidates.len() != meetings.len() {
        return Err(CliError::data(format!(
            "{} has {} candidate line(s) for {} meeting(s)",
            cand_path.display(),
            candidates.len(),
            meetings.len()
        )));
    }

    let items: Vec<EvalItem> = meetings
        .iter()
        .zip(candidates)
        .map(|(m, candidate)| EvalItem {
            id: m.id.clone(),
            candidate,
            reference: m.summary.clone(),
            transcript: m.transcript_tokens(),
        })
        .collect();
    let report = evaluate_corpus(&items);
    let mut json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::data(format!("cannot serialize report: {e}")))?;
    json.push('\n');
    write_output(flags.out.as_deref(), &json)
}

fn cmd_oracle(args: &[String]) -> Result<(), CliError> {
    let flags = parse_flags(args)?;
    let baseline = flags.baseline.as_deref().unwrap_or("extractive");
    match baseline {
        "extractive" | "random" => {
            flags.expect_positionals(&["meetings.jsonl"])?;
            let cfg = flags.effective_config()?;
            let meetings = load_corpus(&flags.positionals[0])?;
            let mut lines = String::new();
            for (i, meeting) in meetings.iter().enumerate() {
                let sentences: Vec<Vec<String>> =
                    meeting.turns.iter().map(|t| t.tokens.clone()).collect();
                let summary = if baseline == "extractive" {
                    extractive_oracle(&sentences, &meeting.summary, cfg.oracle_k)?
                } else {
                    random_baseline(&sentences, cfg.oracle_k, cfg.seed.wrapping_add(i as u64))?
                };
                lines.push_str(&summary.join(" "));
                lines.push('\n');
            }
            write_output(flags.out.as_deref(), &lines)
        }
        "copy-from-train" => {
            flags.expect_positionals(&["train-meetings.jsonl", "eval-meetings.jsonl"])?;
            let cfg = flags.effective_config()?;
            let train = load_corpus(&flags.positionals[0])?;
            let eval = load_corpus(&flags.positionals[1])?;
            let pool: Vec<Vec<String>> = train.iter().map(|m| m.summary.clone()).collect();
            let refs: Vec<Vec<String>> = eval.iter().map(|m| m.summary.clone()).collect();
            let triple = copy_from_train(&pool, &refs, cfg.copy_trials, cfg.seed)?;
            let mut json = serde_json::to_string_pretty(&triple)
                .map_err(|e| CliError::data(format!("cannot serialize scores: {e}")))?;
            json.push('\n');
            write_output(flags.out.as_deref(), &json)
        }
        other => Err(CliError::usage(format!(
            "unknown baseline '{other}' (expected extractive, random, or copy-from-train)"
        ))),
    }
}

fn cmd_gradcheck(args: &[String]) -> Result<(), CliError> {
    let flags = parse_flags(args)?;
    flags.expect_positionals(&[])?;
    let _cfg = flags.effective_config()?;

    let outcomes = gradcheck::run_all();
    let mut text = String::new();
    let mut failures = 0usize;
    for o in &outcomes {
        let ok = o.passed(gradcheck::DEFAULT_TOLERANCE);
        if !ok {
            failures += 1;
        }
        let _ = writeln!(
            text,
            "{} {:.3e} {}",
            o.name,
            o.max_rel_error,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    let _ = writeln!(
        text,
        "gradient check: {}/{} passed",
        outcomes.len() - failures,
        outcomes.len()
    );
    write_output(flags.out.as_deref(), &text)?;
    if failures > 0 {
        return Err(CliError::Runtime(format!(
            "{failures} gradient check(s) failed"
        )));
    }
    Ok(())
}

const GRID_MIN_LENS: [usize; 6] = [240, 280, 320, 360, 400, 440];
const GRID_STAGE1_BEAM: usize = 3;
const GRID_BEAMS: [usize; 6] = [1, 3, 6, 8, 9, 10];

fn cmd_grid(args: &[String]) -> Result<(), CliError> {
    let flags = parse_flags(args)?;
    flags.expect_positionals(&["checkpoint", "meetings.jsonl"])?;
    let cfg = flags.effective_config()?;

    let ckpt = open_checkpoint(&flags.positionals[0])?;
    let meetings = load_corpus(&flags.positionals[1])?;
    let limits = model_limits(ckpt.params.config());

    let mut items: Vec<(MeetingInput, Vec<String>)> = Vec::with_capacity(meetings.len());
    for meeting in &meetings {
        let clipped = truncate_meeting(meeting, &limits);
        let input = MeetingInput::from_meeting(
            &clipped,
            &ckpt.vocab,
            &ckpt.roles,
            &ckpt.pos_tags,
            &ckpt.ent_tags,
        )?;
        items.push((input, clipped.summary.clone()));
    }

    let sweep = |decode_cfg: &DecodeConfig| -> Result<(f64, f64, f64), CliError> {
        let mut rt = Runtime::eval();
        let (mut r1, mut r2, mut su4) = (0.0, 0.0, 0.0);
        for (input, reference) in &items {
            let encoded = encode_meeting(input, &ckpt.params, &mut rt)?;
            let ids = beam_search(&encoded, &ckpt.params, decode_cfg, &mut rt)?;
            let candidate = ckpt.vocab.decode_ids(&ids);
            let triple = score_pair(&candidate, reference);
            r1 += triple.rouge_1.f1;
            r2 += triple.rouge_2.f1;
            su4 += triple.rouge_su4.f1;
        }
        let n = items.len() as f64;
        Ok((r1 / n, r2 / n, su4 / n))
    };

    let mut text = String::new();
    let _ = writeln!(text, "stage 1: min_len sweep (beam_size {GRID_STAGE1_BEAM})");
    let _ = writeln!(text, "min_len  rouge1_f1  rouge2_f1  rouge_su4_f1");
    let mut best_min = (GRID_MIN_LENS[0], f64::NEG_INFINITY);
    for &min_len in &GRID_MIN_LENS {
        let decode_cfg = DecodeConfig {
            beam_size: GRID_STAGE1_BEAM,
            min_len,
            ..cfg.decode.clone()
        };
        let (r1, r2, su4) = sweep(&decode_cfg)?;
        let _ = writeln!(text, "{min_len:<7}  {r1:<9.4}  {r2:<9.4}  {su4:.4}");
        log(&format!("grid min_len {min_len}: rouge-1 f1 {r1:.4}"));
        if r1 > best_min.1 {
            best_min = (min_len, r1);
        }
    }
    let _ = writeln!(text, "best min_len: {}", best_min.0);
    let _ = writeln!(text);

    let _ = writeln!(text, "stage 2: beam_size sweep (min_len {})", best_min.0);
    let _ = writeln!(text, "beam_size  rouge1_f1  rouge2_f1  rouge_su4_f1");
    let mut best_beam = (GRID_BEAMS[0], f64::NEG_INFINITY);
    for &beam_size in &GRID_BEAMS {
        let decode_cfg = DecodeConfig {
            beam_size,
            min_len: best_min.0,
            ..cfg.decode.clone()
        };
        let (r1, r2, su4) = sweep(&decode_cfg)?;
        let _ = writeln!(text, "{beam_size:<9}  {r1:<9.4}  {r2:<9.4}  {su4:.4}");
        log(&format!("grid beam_size {beam_size}: rouge-1 f1 {r1:.4}"));
        if r1 > best_beam.1 {
            best_beam = (beam_size, r1);
        }
    }
    let _ = writeln!(text, "best beam_size: {}", best_beam.0);
    write_output(flags.out.as_deref(), &text)
}

// ── Dispatch ────────────────────────────────────────────────────────────────

pub fn usage_text() -> String {
    "hmnet — hierarchical meeting summarization\n\
     \n\
     usage: hmnet <command> [flags] [paths]\n\
     \n\
     commands:\n\
     \x20 convert   <articles.jsonl> --out <meetings.jsonl>   build pseudo-meetings from news articles\n\
     \x20 pretrain  <meetings.jsonl> --out <ckpt>             train a model from scratch\n\
     \x20 finetune  <ckpt> <meetings.jsonl> --out <ckpt>      continue training on a target corpus\n\
     \x20 summarize <ckpt> <meetings.jsonl> [--out file]      beam-decode one summary per meeting\n\
     \x20 evaluate  <meetings.jsonl> <candidates.txt> [--out] score candidates (JSON report)\n\
     \x20 oracle    [--baseline extractive|random|copy-from-train] <paths…>\n\
     \x20 gradcheck                                           finite-difference gradient audit\n\
     \x20 grid      <ckpt> <meetings.jsonl> [--out file]      two-stage decode-hyperparameter sweep\n\
     \n\
     flags:\n\
     \x20 --config PATH     JSON config file (dotted or nested keys)\n\
     \x20 --set key=value   override one config key (repeatable)\n\
     \x20 --seed N          set the run seed\n\
     \x20 --out PATH        write the primary output here\n\
     \n\
     environment:\n\
     \x20 HMNET_LOG=1       progress logging on stderr\n"
        .to_string()
}

pub fn run(args: &[String]) -> Result<(), CliError> {
    let Some((command, rest)) = args.split_first() else {
        return Err(CliError::usage(format!(
            "no command given\n\n{}",
            usage_text()
        )));
    };
    match command.as_str() {
        "help" | "--help" | "-h" => {
            print!("{}", usage_text());
            Ok(())
        }
        "convert" => cmd_convert(rest),
        "pretrain" => cmd_pretrain(rest),
        "finetune" => cmd_finetune(rest),
        "summarize" => cmd_summarize(rest),
        "evaluate" => cmd_evaluate(rest),
        "oracle" => cmd_oracle(rest),
        "gradcheck" => cmd_gradcheck(rest),
        "grid" => cmd_grid(rest),
        other => Err(CliError::usage(format!("unknown command '{other}'"))),
    }
}

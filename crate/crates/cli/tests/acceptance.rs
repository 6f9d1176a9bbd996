//! Acceptance gate: ten numbered checks covering gradients, architecture
//! widths, decoder causality, trainability, metric exactness, search
//! optimality, optimizer arithmetic, data conversion, the end-to-end
//! binary pipeline, and the abstractiveness metric. Each check prints one
//! `criterion NN (...): PASS` line when it holds; a failed check panics
//! with the offending values.

use std::cell::Cell;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hmnet::data::synth::{synthetic_articles, synthetic_meetings, SynthConfig};
use hmnet::data::{
    meetings_to_jsonl, news_to_pseudo_meeting, save_articles, save_meetings, Article, RoleTable,
    TagVocab, Vocab, BEGIN_ID, END_ID,
};
use hmnet::decode::{beam_search, greedy_decode, DecodeConfig};
use hmnet::eval::{novel_ngram_ratio, rouge_n, rouge_su4, RougeScore};
use hmnet::gradcheck;
use hmnet::model::{
    compute_loss, decoder_forward, encode_meeting, EncodedMeeting, HMNetConfig, HMNetParams,
    MeetingInput, ModelError, TurnInput,
};
use hmnet::nn::Runtime;
use hmnet::tensor::Tensor;
use hmnet::train::checkpoint::{load_checkpoint, save_checkpoint};
use hmnet::train::{
    clip_gradients, learning_rate, radam_step, rectification_factor, train_loop, RAdamState,
    TrainConfig, BETA1,
};

fn pass(n: usize, slug: &str) {
    println!("criterion {n:02} ({slug}): PASS");
}

// ── 1: gradient integrity ───────────────────────────────────────────────────

#[test]
fn criterion_01_gradient_integrity() {
    let started = Instant::now();
    let outcomes = gradcheck::run_all();
    let elapsed = started.elapsed();

    for prefix in ["layer_norm/", "attention/", "encoder_block/", "loss/"] {
        assert!(
            outcomes.iter().any(|o| o.name.starts_with(prefix)),
            "missing {prefix} checks"
        );
    }
    let failures: Vec<String> = outcomes
        .iter()
        .filter(|o| !(o.max_rel_error < gradcheck::DEFAULT_TOLERANCE))
        .map(|o| format!("{} at {:.3e}", o.name, o.max_rel_error))
        .collect();
    assert!(failures.is_empty(), "gradient mismatches: {failures:?}");
    assert!(
        elapsed.as_secs() < 120,
        "gradient suite took {elapsed:?}, budget is 2 minutes"
    );
    pass(1, "gradient-integrity");
}

// ── 2: width-chain conformance ──────────────────────────────────────────────

#[test]
fn criterion_02_width_chain() {
    let cfg = HMNetConfig::base(32_000, 16, 16, 32);
    cfg.validate().expect("default config must validate");
    assert_eq!(cfg.d_word_model(), 544);
    assert_eq!(cfg.d_turn_model(), 576);
    assert_eq!(cfg.d_decoder(), 512);

    let reject = |mutate: &dyn Fn(&mut HMNetConfig)| {
        let mut bad = cfg.clone();
        mutate(&mut bad);
        assert!(
            matches!(bad.validate(), Err(ModelError::Config { .. })),
            "validator accepted a broken config"
        );
    };
    reject(&|c| c.n_heads = 7); // 544 not divisible
    reject(&|c| c.d_word = 511); // odd decoder width
    reject(&|c| c.dropout = 1.0);
    reject(&|c| c.vocab_size = 4); // below the reserved ids
    reject(&|c| c.n_layers = 0);
    reject(&|c| c.max_summary_tokens = 1);
    pass(2, "width-chain");
}

// ── Shared tiny models ──────────────────────────────────────────────────────

fn tiny_cfg(vocab_size: usize) -> HMNetConfig {
    HMNetConfig {
        vocab_size,
        n_pos_tags: 1,
        n_ent_tags: 1,
        n_roles: 2,
        d_word: 4,
        d_pos: 2,
        d_ent: 2,
        d_role: 4,
        n_layers: 1,
        n_heads: 2,
        ffn_multiplier: 2,
        dropout: 0.0,
        max_turns: 4,
        max_turn_tokens: 6,
        max_summary_tokens: 16,
    }
}

fn tiny_meeting(vocab_size: usize, rng: &mut ChaCha8Rng) -> MeetingInput {
    let turns = (0..rng.gen_range(2..=3))
        .map(|_| {
            let len = rng.gen_range(2..=4);
            TurnInput {
                role_id: rng.gen_range(0..2),
                token_ids: (0..len).map(|_| rng.gen_range(0..vocab_size)).collect(),
                pos_ids: vec![0; len],
                ent_ids: vec![0; len],
            }
        })
        .collect();
    MeetingInput { turns }
}

/// Log-probabilities of the next token after `prefix`, computed the same
/// way the decoder scores candidates: softmax of the last logits row.
fn next_log_probs(
    prefix: &[usize],
    encoded: &EncodedMeeting,
    params: &HMNetParams,
    rt: &mut Runtime,
) -> Vec<f64> {
    let logits = decoder_forward(prefix, encoded, params, rt).unwrap();
    let cols = logits.cols();
    let values = logits.values();
    let row = &values[(logits.rows() - 1) * cols..];
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

// ── 3: decoder causality ────────────────────────────────────────────────────

#[test]
fn criterion_03_decoder_causality() {
    let cfg = tiny_cfg(12);
    let params = HMNetParams::init(&cfg, 303).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut rt = Runtime::eval();
    let meeting = tiny_meeting(12, &mut rng);
    let encoded = encode_meeting(&meeting, &params, &mut rt).unwrap();

    for _ in 0..20 {
        let k = rng.gen_range(2..=8usize);
        let mut prefix = vec![BEGIN_ID];
        prefix.extend((0..k).map(|_| rng.gen_range(0..12usize)));
        let t = rng.gen_range(1..=k);

        let before = decoder_forward(&prefix, &encoded, &params, &mut rt)
            .unwrap()
            .values();
        let mut perturbed = prefix.clone();
        perturbed[t] = (perturbed[t] + 1 + rng.gen_range(0..11)) % 12;
        if perturbed[t] == prefix[t] {
            perturbed[t] = (perturbed[t] + 1) % 12;
        }
        let after = decoder_forward(&perturbed, &encoded, &params, &mut rt)
            .unwrap()
            .values();

        let cols = 12;
        for row in 0..t {
            for col in 0..cols {
                let (a, b) = (before[row * cols + col], after[row * cols + col]);
                assert!(
                    (a - b).abs() <= 1e-9,
                    "row {row} (< perturbed position {t}) moved by {}",
                    (a - b).abs()
                );
            }
        }
    }
    pass(3, "decoder-causality");
}

// ── 4: overfit micro-corpus ─────────────────────────────────────────────────

#[test]
fn criterion_04_overfit_micro_corpus() {
    let started = Instant::now();
    let meetings = synthetic_meetings(&SynthConfig::default());
    assert_eq!(meetings.len(), 8);

    let vocab = Vocab::build(&meetings, 1, 4096).unwrap();
    let roles = RoleTable::build(&meetings);
    let pos_tags = TagVocab::build_pos(&meetings);
    let ent_tags = TagVocab::build_ent(&meetings);
    assert_eq!(roles.len(), 4);

    let mut cfg = HMNetConfig::toy(vocab.len(), pos_tags.len(), ent_tags.len(), roles.len());
    cfg.dropout = 0.0;
    assert_eq!((cfg.n_layers, cfg.n_heads, cfg.d_word), (2, 2, 64));

    let examples: Vec<(MeetingInput, Vec<usize>)> = meetings
        .iter()
        .map(|m| {
            let input =
                MeetingInput::from_meeting(m, &vocab, &roles, &pos_tags, &ent_tags).unwrap();
            (input, vocab.target_ids(&m.summary))
        })
        .collect();

    let train = TrainConfig {
        warmup_steps: 100,
        initial_lr: 1e-9,
        peak_lr: 1e-3,
        clip_norm: 2.0,
        accumulation_steps: 2,
        max_steps: 2000,
        checkpoint_every: 25,
        seed: 11,
    };

    let corpus_loss = |params: &HMNetParams| -> f64 {
        let mut rt = Runtime::eval();
        examples
            .iter()
            .map(|(m, t)| compute_loss(m, t, params, &mut rt).unwrap().item())
            .sum::<f64>()
            / examples.len() as f64
    };
    let decode_cfg = DecodeConfig {
        beam_size: 1,
        min_len: 0,
        max_len: cfg.max_summary_tokens - 2,
        block_repeated_trigrams: false,
    };
    let exact_count = |params: &HMNetParams| -> usize {
        let mut rt = Runtime::eval();
        examples
            .iter()
            .filter(|(input, target)| {
                let encoded = encode_meeting(input, params, &mut rt).unwrap();
                let out = greedy_decode(&encoded, params, &decode_cfg, &mut rt).unwrap();
                out.as_slice() == &target[1..target.len() - 1]
            })
            .count()
    };

    let params = HMNetParams::init(&cfg, 11).unwrap();
    let mut state = RAdamState::for_tensors(&params.tensors());
    let steps_used = Cell::new(0usize);
    // Stop as soon as both halves of the target hold; otherwise run on,
    // up to the step budget.
    train_loop(
        &examples,
        &params,
        &train,
        &mut state,
        |e| steps_used.set(e.step),
        |_, live, _| !(corpus_loss(live) < 0.1 && exact_count(live) >= 7),
    )
    .unwrap();

    let final_loss = corpus_loss(&params);
    assert!(
        final_loss < 0.1,
        "loss {final_loss} after {} steps",
        steps_used.get()
    );
    assert!(steps_used.get() <= 2000);

    let exact = exact_count(&params);
    assert!(exact >= 7, "only {exact}/8 summaries reproduced exactly");

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 600,
        "overfit run took {elapsed:?}, budget is 10 minutes"
    );
    pass(4, "overfit-micro-corpus");
}

// ── 5: ROUGE equals brute force ─────────────────────────────────────────────

fn brute_score(overlap: usize, cand_units: usize, ref_units: usize) -> RougeScore {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(overlap, cand_units);
    let recall = ratio(overlap, ref_units);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    RougeScore {
        precision,
        recall,
        f1,
    }
}

/// Clipped multiset overlap by direct pairwise matching, no hashing.
fn brute_overlap<T: PartialEq>(cand: &[T], reference: &[T]) -> usize {
    let mut used = vec![false; reference.len()];
    let mut overlap = 0;
    for unit in cand {
        if let Some(i) = reference
            .iter()
            .enumerate()
            .position(|(i, r)| !used[i] && r == unit)
        {
            used[i] = true;
            overlap += 1;
        }
    }
    overlap
}

fn brute_rouge_n(cand: &[String], reference: &[String], n: usize) -> RougeScore {
    let grams = |t: &[String]| -> Vec<Vec<String>> {
        if t.len() < n {
            Vec::new()
        } else {
            t.windows(n).map(|w| w.to_vec()).collect()
        }
    };
    let c = grams(cand);
    let r = grams(reference);
    brute_score(brute_overlap(&c, &r), c.len(), r.len())
}

/// Skip-bigrams with at most four intervening tokens, plus one
/// begin-marker pair per token.
fn su4_units(tokens: &[String]) -> Vec<(String, String)> {
    let mut units = Vec::new();
    for i in 0..tokens.len() {
        units.push(("\u{2402}".to_string(), tokens[i].clone()));
        for j in (i + 1)..tokens.len().min(i + 6) {
            units.push((tokens[i].clone(), tokens[j].clone()));
        }
    }
    units
}

fn brute_rouge_su4(cand: &[String], reference: &[String]) -> RougeScore {
    let c = su4_units(cand);
    let r = su4_units(reference);
    brute_score(brute_overlap(&c, &r), c.len(), r.len())
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

#[test]
fn criterion_05_rouge_matches_brute_force() {
    let hand = rouge_n(&words("the cat sat"), &words("the cat ran on mats"), 1);
    assert_eq!(hand.f1, 0.5, "hand example must score exactly 0.5");

    let pool = ["a", "b", "c", "d", "e", "f"];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<String> {
            let len = rng.gen_range(0..=15);
            (0..len)
                .map(|_| pool[rng.gen_range(0..pool.len())].to_string())
                .collect()
        };
        let cand = draw(&mut rng);
        let reference = draw(&mut rng);

        for n in [1, 2] {
            let fast = rouge_n(&cand, &reference, n);
            let brute = brute_rouge_n(&cand, &reference, n);
            assert_eq!(fast, brute, "case {case}, n={n}: {cand:?} vs {reference:?}");
        }
        let fast = rouge_su4(&cand, &reference);
        let brute = brute_rouge_su4(&cand, &reference);
        assert_eq!(fast, brute, "case {case}, su4: {cand:?} vs {reference:?}");
    }
    pass(5, "rouge-brute-force");
}

// ── 6: decoding correctness ─────────────────────────────────────────────────

/// Highest achievable length-normalized score over every finishable path:
/// end-marker terminations up to `max_len` generated tokens, plus
/// length-capped paths finished as-is.
fn exhaustive_best(
    prefix: &mut Vec<usize>,
    cum: f64,
    encoded: &EncodedMeeting,
    params: &HMNetParams,
    vocab: usize,
    max_len: usize,
    rt: &mut Runtime,
    best: &mut f64,
) {
    let generated = prefix.len() - 1;
    if generated == max_len {
        let score = cum / generated as f64;
        if score > *best {
            *best = score;
        }
        return;
    }
    let logp = next_log_probs(prefix, encoded, params, rt);
    for w in 0..vocab {
        if w == END_ID {
            let score = (cum + logp[w]) / (generated + 1) as f64;
            if score > *best {
                *best = score;
            }
        } else {
            prefix.push(w);
            exhaustive_best(prefix, cum + logp[w], encoded, params, vocab, max_len, rt, best);
            prefix.pop();
        }
    }
}

/// Length-normalized score of a decoded output, re-walking the decoder.
fn path_score(
    out: &[usize],
    ended_with_marker: bool,
    encoded: &EncodedMeeting,
    params: &HMNetParams,
    rt: &mut Runtime,
) -> f64 {
    let mut steps = out.to_vec();
    if ended_with_marker {
        steps.push(END_ID);
    }
    let mut prefix = vec![BEGIN_ID];
    let mut cum = 0.0;
    for &w in &steps {
        cum += next_log_probs(&prefix, encoded, params, rt)[w];
        prefix.push(w);
    }
    cum / steps.len() as f64
}

#[test]
fn criterion_06_decoding_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut rt = Runtime::eval();

    // (a) beam of one, blocking off, equals greedy token-for-token.
    let cfg = tiny_cfg(12);
    let params = HMNetParams::init(&cfg, 99).unwrap();
    let plain = DecodeConfig {
        beam_size: 1,
        min_len: 2,
        max_len: 8,
        block_repeated_trigrams: false,
    };
    for _ in 0..10 {
        let meeting = tiny_meeting(12, &mut rng);
        let encoded = encode_meeting(&meeting, &params, &mut rt).unwrap();
        let greedy = greedy_decode(&encoded, &params, &plain, &mut rt).unwrap();
        let beamed = beam_search(&encoded, &params, &plain, &mut rt).unwrap();
        assert_eq!(greedy, beamed, "beam of one must replay greedy");
    }

    // (b) a beam wide enough for the whole tree finds the global optimum.
    let cfg5 = tiny_cfg(5);
    let wide = DecodeConfig {
        beam_size: 625,
        min_len: 0,
        max_len: 4,
        block_repeated_trigrams: false,
    };
    for seed in 0..10 {
        let params5 = HMNetParams::init(&cfg5, 700 + seed).unwrap();
        let meeting = tiny_meeting(5, &mut rng);
        let encoded = encode_meeting(&meeting, &params5, &mut rt).unwrap();

        let out = beam_search(&encoded, &params5, &wide, &mut rt).unwrap();
        let achieved = path_score(&out, out.len() < 4, &encoded, &params5, &mut rt);

        let mut best = f64::NEG_INFINITY;
        exhaustive_best(
            &mut vec![BEGIN_ID],
            0.0,
            &encoded,
            &params5,
            5,
            4,
            &mut rt,
            &mut best,
        );
        assert!(
            (achieved - best).abs() < 1e-9,
            "seed {seed}: beam {achieved} vs exhaustive {best}"
        );
    }

    // (c) blocking leaves no repeated contiguous trigram; (d) min_len holds.
    let blocked = DecodeConfig {
        beam_size: 3,
        min_len: 5,
        max_len: 12,
        block_repeated_trigrams: true,
    };
    for _ in 0..10 {
        let meeting = tiny_meeting(12, &mut rng);
        let encoded = encode_meeting(&meeting, &params, &mut rt).unwrap();
        let out = beam_search(&encoded, &params, &blocked, &mut rt).unwrap();
        assert!(out.len() >= 5, "min_len violated: {out:?}");
        let mut seen: Vec<&[usize]> = Vec::new();
        for w in out.windows(3) {
            assert!(!seen.contains(&w), "repeated trigram {w:?} in {out:?}");
            seen.push(w);
        }
    }
    pass(6, "decoding-correctness");
}

// ── 7: optimizer conformance ────────────────────────────────────────────────

#[test]
fn criterion_07_optimizer_conformance() {
    // First update takes the un-rectified branch and moves by −lr·m̂.
    assert!(rectification_factor(1).is_none(), "update 1 must be plain");
    let x = Tensor::new(&[1, 2], vec![0.5, -0.25]).unwrap();
    let grad = [0.3, -0.2];
    x.set_grad(&grad);
    let before = x.values();
    let mut state = RAdamState::for_tensors(&[x.clone()]);
    let lr = 0.01;
    radam_step(&[x.clone()], &mut state, lr);
    let after = x.values();
    let bias1 = 1.0 - BETA1.powi(1);
    for j in 0..2 {
        let m = (1.0 - BETA1) * grad[j];
        let m_hat = m / bias1;
        let expected = before[j] + (-lr * m_hat);
        assert_eq!(after[j], expected, "entry {j} must move by exactly −lr·m̂");
    }

    // Warmup endpoints are exact.
    let schedule = TrainConfig::pretrain();
    assert_eq!(learning_rate(&schedule, 0), 1e-9);
    assert_eq!(learning_rate(&schedule, 16_000), 1e-3);

    // A norm-5 gradient clipped at 2 scales by exactly 0.4.
    let y = Tensor::new(&[1, 2], vec![0.0, 0.0]).unwrap();
    y.set_grad(&[3.0, 4.0]);
    let norm = clip_gradients(&[y.clone()], 2.0).unwrap();
    assert_eq!(norm, 5.0);
    let factor = 2.0 / 5.0;
    assert_eq!(y.grad().unwrap(), vec![3.0 * factor, 4.0 * factor]);
    pass(7, "optimizer-conformance");
}

// ── 8: converter conformance ────────────────────────────────────────────────

#[test]
fn criterion_08_converter_conformance() {
    let article = |src: &str, sentences: &[&[&str]], summary: &[&str]| -> Article {
        Article {
            source_name: src.to_string(),
            sentences: sentences
                .iter()
                .map(|s| s.iter().map(|w| w.to_string()).collect())
                .collect(),
            summary: summary.iter().map(|w| w.to_string()).collect(),
        }
    };
    let articles = vec![
        article(
            "alpha",
            &[&["markets", "opened", "higher"], &["trading", "was", "thin"]],
            &["markets", "rose"],
        ),
        article(
            "beta",
            &[&["rain", "closed", "the", "road"]],
            &["road", "closed"],
        ),
        article(
            "gamma",
            &[&["the", "match", "ended", "level"], &["fans", "went", "home"]],
            &["match", "drawn"],
        ),
        article(
            "delta",
            &[&["a", "new", "bridge", "opened"], &["tolls", "start", "monday"]],
            &["bridge", "opens"],
        ),
    ];

    let meeting = news_to_pseudo_meeting(&articles, 7).unwrap();
    let again = news_to_pseudo_meeting(&articles, 7).unwrap();
    assert_eq!(
        meetings_to_jsonl(&[meeting.clone()]),
        meetings_to_jsonl(&[again]),
        "same seed must be bit-reproducible"
    );

    let mut expected: Vec<(String, Vec<String>)> = articles
        .iter()
        .enumerate()
        .flat_map(|(i, a)| {
            a.sentences
                .iter()
                .map(move |s| (format!("{}-{}", a.source_name, i + 1), s.clone()))
        })
        .collect();
    let mut got: Vec<(String, Vec<String>)> = meeting
        .turns
        .iter()
        .map(|t| (t.role.clone(), t.tokens.clone()))
        .collect();
    expected.sort();
    got.sort();
    assert_eq!(expected, got, "speaker/sentence multiset must be preserved");

    let concat: Vec<String> = articles.iter().flat_map(|a| a.summary.clone()).collect();
    assert_eq!(meeting.summary, concat, "summaries concatenate in order");
    pass(8, "converter-conformance");
}

// ── 9: end-to-end smoke ─────────────────────────────────────────────────────

fn hmnet_bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmnet"))
        .env_remove("HMNET_LOG")
        .args(args)
        .output()
        .expect("binary must spawn")
}

fn assert_stage(out: &Output, stage: &str) {
    assert!(
        out.status.success(),
        "{stage} exited {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn criterion_09_end_to_end_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let articles_path = dir.path().join("articles.jsonl");
    save_articles(&articles_path, &synthetic_articles(32, 4242)).unwrap();
    let micro_path = dir.path().join("micro.jsonl");
    save_meetings(&micro_path, &synthetic_meetings(&SynthConfig::default())).unwrap();

    let pseudo = dir.path().join("pseudo.jsonl");
    assert_stage(
        &hmnet_bin(&["convert", p(&articles_path), "--out", p(&pseudo)]),
        "convert",
    );

    let ck1 = dir.path().join("pretrained.ckpt");
    assert_stage(
        &hmnet_bin(&[
            "pretrain",
            p(&pseudo),
            "--out",
            p(&ck1),
            "--set",
            "pretrain.max_steps=200",
            "--set",
            "pretrain.checkpoint_every=100",
        ]),
        "pretrain",
    );

    let ck2 = dir.path().join("finetuned.ckpt");
    assert_stage(
        &hmnet_bin(&[
            "finetune",
            p(&ck1),
            p(&micro_path),
            "--out",
            p(&ck2),
            "--set",
            "finetune.max_steps=200",
            "--set",
            "finetune.checkpoint_every=100",
        ]),
        "finetune",
    );

    let sums = dir.path().join("summaries.txt");
    assert_stage(
        &hmnet_bin(&["summarize", p(&ck2), p(&micro_path), "--out", p(&sums)]),
        "summarize",
    );
    assert_eq!(fs::read_to_string(&sums).unwrap().lines().count(), 8);

    let report_path = dir.path().join("report.json");
    assert_stage(
        &hmnet_bin(&[
            "evaluate",
            p(&micro_path),
            p(&sums),
            "--out",
            p(&report_path),
        ]),
        "evaluate",
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["documents"].as_array().unwrap().len(), 8);
    for metric in ["rouge_1", "rouge_2", "rouge_su4"] {
        for field in ["precision", "recall", "f1"] {
            assert!(
                report["corpus"][metric][field].is_number(),
                "report missing corpus.{metric}.{field}"
            );
        }
    }
    assert_eq!(report["corpus"]["novel_percent"].as_array().unwrap().len(), 4);

    // Checkpoint round trip is bitwise exact.
    let ckpt = load_checkpoint(&ck2).unwrap();
    let resaved = dir.path().join("resaved.ckpt");
    save_checkpoint(
        &resaved,
        &ckpt.params,
        &ckpt.train_config,
        &ckpt.state,
        &ckpt.vocab,
        &ckpt.roles,
        &ckpt.pos_tags,
        &ckpt.ent_tags,
    )
    .unwrap();
    assert_eq!(
        fs::read(&ck2).unwrap(),
        fs::read(&resaved).unwrap(),
        "checkpoint bytes must survive a load/save round trip"
    );
    pass(9, "end-to-end-smoke");
}

// ── 10: abstractiveness profile ─────────────────────────────────────────────

#[test]
fn criterion_10_abstractiveness_profile() {
    let transcript = words("on monday the board approved the budget for next year");
    let verbatim = transcript[2..8].to_vec();
    for n in 1..=4 {
        let ratio = novel_ngram_ratio(&verbatim, &transcript, n).unwrap();
        assert_eq!(ratio, 0.0, "verbatim copy must be 0% novel at n={n}");
    }

    let pool = ["sun", "rain", "wind", "snow", "fog", "hail", "sleet", "mist"];
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut draw = |count: usize| -> Vec<String> {
        (0..count)
            .map(|_| pool[rng.gen_range(0..pool.len())].to_string())
            .collect()
    };
    let summary = draw(10);
    let mut transcript = draw(5);
    let mut previous = [f64::INFINITY; 4];
    for _stage in 0..6 {
        transcript.extend(draw(5));
        for n in 1..=4usize {
            let ratio = novel_ngram_ratio(&summary, &transcript, n).unwrap();
            assert!(
                ratio <= previous[n - 1] + 1e-12,
                "novelty rose from {} to {ratio} at n={n} as the transcript grew",
                previous[n - 1]
            );
            previous[n - 1] = ratio;
        }
    }
    pass(10, "abstractiveness-profile");
}

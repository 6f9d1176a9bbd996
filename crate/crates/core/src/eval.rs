//! Summary quality measurement: clipped n-gram overlap scores, a
//! skip-bigram variant, the novel n-gram abstractiveness profile, and the
//! reference-free baselines (extractive oracle, copy-from-train, random
//! sentence selection).
//!
//! Scores are computed on the pipeline's lowercased tokens with no
//! stemming or stopword removal. Corpus-level numbers are macro averages:
//! the mean of per-document scores.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

// ── Errors ──────────────────────────────────────────────────────────────────

#[derive(Debug)]
pub enum EvalError {
    /// The summary is shorter than the requested n-gram order.
    TooShort { summary_len: usize, n: usize },
    EmptyTranscript,
    EmptyPool,
    ZeroTrials,
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::TooShort { summary_len, n } => {
                write!(f, "summary of {summary_len} tokens has no {n}-grams")
            }
            EvalError::EmptyTranscript => write!(f, "transcript has no sentences"),
            EvalError::EmptyPool => write!(f, "training summary pool is empty"),
            EvalError::ZeroTrials => write!(f, "at least one sampling trial is required"),
        }
    }
}

impl std::error::Error for EvalError {}

// ── Scores ──────────────────────────────────────────────────────────────────

/// Precision, recall, and balanced F1 over some counting unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(overlap: usize, candidate_units: usize, reference_units: usize) -> RougeScore {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(overlap, candidate_units);
        let recall = ratio(overlap, reference_units);
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

    fn zero() -> RougeScore {
        RougeScore {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        }
    }
}

/// The three reported overlap metrics for one candidate/reference pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeTriple {
    pub rouge_1: RougeScore,
    pub rouge_2: RougeScore,
    pub rouge_su4: RougeScore,
}

// ── Counting units ──────────────────────────────────────────────────────────

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Skip-bigram units: ordered pairs `(tᵢ, tⱼ)` with `i < j` and at most
/// four intervening tokens, plus every token paired with a leading
/// sentence-begin marker (the `None` half of the key), which folds the
/// full unigram multiset into the same tally.
fn su4_units(tokens: &[String]) -> HashMap<(Option<&str>, &str), usize> {
    let mut counts = HashMap::new();
    for (i, left) in tokens.iter().enumerate() {
        *counts.entry((None, left.as_str())).or_insert(0) += 1;
        for right in &tokens[i + 1..tokens.len().min(i + 6)] {
            *counts.entry((Some(left.as_str()), right.as_str())).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_overlap<K: Eq + Hash>(
    candidate: &HashMap<K, usize>,
    reference: &HashMap<K, usize>,
) -> usize {
    candidate
        .iter()
        .map(|(unit, &c)| reference.get(unit).map_or(0, |&r| c.min(r)))
        .sum()
}

// ── Metrics ─────────────────────────────────────────────────────────────────

/// Clipped n-gram overlap: each candidate n-gram may match a reference
/// occurrence at most once. Empty unit sets on either side score zero.
pub fn rouge_n(candidate: &[String], reference: &[String], n: usize) -> RougeScore {
    assert!(n >= 1, "n-gram order must be at least 1");
    let cand = ngram_counts(candidate, n);
    let refr = ngram_counts(reference, n);
    let overlap = clipped_overlap(&cand, &refr);
    let units = |tokens: &[String]| tokens.len().saturating_sub(n - 1);
    RougeScore::from_counts(overlap, units(candidate), units(reference))
}

/// Clipped overlap over skip-bigrams (at most four intervening tokens)
/// combined with marker-paired unigrams.
pub fn rouge_su4(candidate: &[String], reference: &[String]) -> RougeScore {
    let cand = su4_units(candidate);
    let refr = su4_units(reference);
    let overlap = clipped_overlap(&cand, &refr);
    let total = |m: &HashMap<(Option<&str>, &str), usize>| m.values().sum::<usize>();
    RougeScore::from_counts(overlap, total(&cand), total(&refr))
}

/// All three metrics for one pair.
pub fn score_pair(candidate: &[String], reference: &[String]) -> RougeTriple {
    RougeTriple {
        rouge_1: rouge_n(candidate, reference, 1),
        rouge_2: rouge_n(candidate, reference, 2),
        rouge_su4: rouge_su4(candidate, reference),
    }
}

/// Percentage of summary n-gram instances that never occur as contiguous
/// n-grams of the transcript. Multiplicity counts on the summary side;
/// the transcript contributes membership only, so growing the transcript
/// can only lower the ratio.
pub fn novel_ngram_ratio(
    summary: &[String],
    transcript: &[String],
    n: usize,
) -> Result<f64, EvalError> {
    assert!(n >= 1, "n-gram order must be at least 1");
    if summary.len() < n {
        return Err(EvalError::TooShort {
            summary_len: summary.len(),
            n,
        });
    }
    let seen: std::collections::HashSet<&[String]> = if transcript.len() >= n {
        transcript.windows(n).collect()
    } else {
        std::collections::HashSet::new()
    };
    let total = summary.len() - n + 1;
    let novel = summary
        .windows(n)
        .filter(|gram| !seen.contains(*gram))
        .count();
    Ok(100.0 * novel as f64 / total as f64)
}

// ── Baselines ───────────────────────────────────────────────────────────────

/// Concatenates the `k` transcript sentences whose individual unigram F1
/// against the reference is highest (ties to the earlier sentence), in
/// original transcript order.
pub fn extractive_oracle(
    sentences: &[Vec<String>],
    reference: &[String],
    k: usize,
) -> Result<Vec<String>, EvalError> {
    assert!(k >= 1, "sentence budget must be at least 1");
    if sentences.is_empty() {
        return Err(EvalError::EmptyTranscript);
    }
    let mut ranked: Vec<(usize, f64)> = sentences
        .iter()
        .enumerate()
        .map(|(i, s)| (i, rouge_n(s, reference, 1).f1))
        .collect();
    // Score descending; earlier position wins exact ties.
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut chosen: Vec<usize> = ranked.iter().take(k).map(|&(i, _)| i).collect();
    chosen.sort_unstable();
    Ok(chosen
        .into_iter()
        .flat_map(|i| sentences[i].iter().cloned())
        .collect())
}

/// Concatenates `k` uniformly chosen distinct transcript sentences in
/// original order; the seed fixes the choice.
pub fn random_baseline(
    sentences: &[Vec<String>],
    k: usize,
    seed: u64,
) -> Result<Vec<String>, EvalError> {
    assert!(k >= 1, "sentence budget must be at least 1");
    if sentences.is_empty() {
        return Err(EvalError::EmptyTranscript);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..sentences.len()).collect();
    // Partial Fisher–Yates: the first k slots become the sample.
    let take = k.min(indices.len());
    for slot in 0..take {
        let pick = rng.gen_range(slot..indices.len());
        indices.swap(slot, pick);
    }
    let mut chosen = indices[..take].to_vec();
    chosen.sort_unstable();
    Ok(chosen
        .into_iter()
        .flat_map(|i| sentences[i].iter().cloned())
        .collect())
}

/// Scores each reference against `trials` summaries drawn uniformly
/// (with replacement, seeded) from the training pool, and reports the
/// mean of every metric component over all draws and references.
pub fn copy_from_train(
    train_summaries: &[Vec<String>],
    references: &[Vec<String>],
    trials: usize,
    seed: u64,
) -> Result<RougeTriple, EvalError> {
    if train_summaries.is_empty() || references.is_empty() {
        return Err(EvalError::EmptyPool);
    }
    if trials == 0 {
        return Err(EvalError::ZeroTrials);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums = [[0.0f64; 3]; 3];
    for reference in references {
        for _ in 0..trials {
            let draw = &train_summaries[rng.gen_range(0..train_summaries.len())];
            let triple = score_pair(draw, reference);
            for (row, score) in [triple.rouge_1, triple.rouge_2, triple.rouge_su4]
                .iter()
                .enumerate()
            {
                sums[row][0] += score.precision;
                sums[row][1] += score.recall;
                sums[row][2] += score.f1;
            }
        }
    }
    let count = (references.len() * trials) as f64;
    let mean = |row: [f64; 3]| RougeScore {
        precision: row[0] / count,
        recall: row[1] / count,
        f1: row[2] / count,
    };
    Ok(RougeTriple {
        rouge_1: mean(sums[0]),
        rouge_2: mean(sums[1]),
        rouge_su4: mean(sums[2]),
    })
}

// ── Corpus reports ──────────────────────────────────────────────────────────

/// Highest n-gram order in the abstractiveness profile.
pub const NOVEL_NGRAM_ORDERS: usize = 4;

/// One document to score.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub id: String,
    pub candidate: Vec<String>,
    pub reference: Vec<String>,
    pub transcript: Vec<String>,
}

/// Scores for one document; `novel_percent[i]` is the (i+1)-gram novelty
/// of the candidate against the transcript, absent when the candidate is
/// shorter than the order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentScores {
    pub id: String,
    pub rouge_1: RougeScore,
    pub rouge_2: RougeScore,
    pub rouge_su4: RougeScore,
    pub novel_percent: Vec<Option<f64>>,
}

/// Macro averages over the documents; novelty entries average the
/// documents where the order was defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusScores {
    pub rouge_1: RougeScore,
    pub rouge_2: RougeScore,
    pub rouge_su4: RougeScore,
    pub novel_percent: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub documents: Vec<DocumentScores>,
    pub corpus: CorpusScores,
}

/// Scores every document and macro-averages the corpus row.
pub fn evaluate_corpus(items: &[EvalItem]) -> EvalReport {
    let documents: Vec<DocumentScores> = items
        .iter()
        .map(|item| {
            let triple = score_pair(&item.candidate, &item.reference);
            let novel_percent = (1..=NOVEL_NGRAM_ORDERS)
                .map(|n| novel_ngram_ratio(&item.candidate, &item.transcript, n).ok())
                .collect();
            DocumentScores {
                id: item.id.clone(),
                rouge_1: triple.rouge_1,
                rouge_2: triple.rouge_2,
                rouge_su4: triple.rouge_su4,
                novel_percent,
            }
        })
        .collect();

    let mean_score = |pick: fn(&DocumentScores) -> RougeScore| {
        if documents.is_empty() {
            return RougeScore::zero();
        }
        let n = documents.len() as f64;
        let mut acc = [0.0f64; 3];
        for d in &documents {
            let s = pick(d);
            acc[0] += s.precision;
            acc[1] += s.recall;
            acc[2] += s.f1;
        }
        RougeScore {
            precision: acc[0] / n,
            recall: acc[1] / n,
            f1: acc[2] / n,
        }
    };
    let novel_percent = (0..NOVEL_NGRAM_ORDERS)
        .map(|i| {
            let defined: Vec<f64> = documents
                .iter()
                .filter_map(|d| d.novel_percent[i])
                .collect();
            if defined.is_empty() {
                None
            } else {
                Some(defined.iter().sum::<f64>() / defined.len() as f64)
            }
        })
        .collect();

    EvalReport {
        corpus: CorpusScores {
            rouge_1: mean_score(|d| d.rouge_1),
            rouge_2: mean_score(|d| d.rouge_2),
            rouge_su4: mean_score(|d| d.rouge_su4),
            novel_percent,
        },
        documents,
    }
}

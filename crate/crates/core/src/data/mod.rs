//! Text ingestion: tokenization, vocabularies, meeting and article corpora,
//! and the converter that turns news articles into pseudo-meetings for
//! pretraining.
//!
//! Corpora travel as JSON lines, one meeting or article per line. Token,
//! role, and tag lookups all go through small owned tables so that a
//! checkpoint can carry everything needed to decode later.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub mod synth;

// ── Reserved ids ────────────────────────────────────────────────────────────

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
/// Prepended to every turn before word-level encoding.
pub const BOS_ID: usize = 2;
/// First token of every decoder target.
pub const BEGIN_ID: usize = 3;
/// Last token of every decoder target.
pub const END_ID: usize = 4;

/// The reserved tokens, in id order.
pub const RESERVED_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<bos>", "<begin>", "<end>"];

/// Id of the absent/unknown tag in every tag table.
pub const NONE_TAG_ID: usize = 0;
pub const NONE_TAG: &str = "<none>";

// ── Errors ──────────────────────────────────────────────────────────────────

/// Failure modes of corpus loading and conversion.
#[derive(Debug)]
pub enum DataError {
    /// A malformed record; `line` is 1-based within the input.
    Schema { line: usize, message: String },
    /// The corpus contained no records at all.
    EmptyCorpus,
    /// An article with no sentences cannot become turns.
    EmptyArticle { source: String },
    /// The vocabulary cap cannot even hold the reserved tokens.
    VocabTooSmall { max_size: usize },
    /// Articles must be grouped at least one per meeting.
    BadGroupSize,
    /// Underlying file trouble.
    Io(io::Error),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Schema { line, message } => write!(f, "line {line}: {message}"),
            DataError::EmptyCorpus => write!(f, "corpus holds no records"),
            DataError::EmptyArticle { source } => {
                write!(f, "article from '{source}' has no sentences")
            }
            DataError::VocabTooSmall { max_size } => {
                write!(
                    f,
                    "vocabulary cap {max_size} below the {} reserved tokens",
                    RESERVED_TOKENS.len()
                )
            }
            DataError::BadGroupSize => write!(f, "articles-per-meeting must be at least 1"),
            DataError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for DataError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            DataError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for DataError {
    fn from(e: io::Error) -> Self {
        DataError::Io(e)
    }
}

// ── Corpus records ──────────────────────────────────────────────────────────

/// One speaker turn: who said it and the already-tokenized words, with
/// optional part-of-speech and entity tags aligned one per token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: String,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ent: Option<Vec<String>>,
}

/// One meeting: ordered turns plus the reference summary tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meeting {
    pub id: String,
    pub turns: Vec<Turn>,
    pub summary: Vec<String>,
}

/// One news article: tokenized sentences plus its summary tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub source_name: String,
    pub sentences: Vec<Vec<String>>,
    pub summary: Vec<String>,
}

impl Meeting {
    /// All transcript tokens in reading order, turn by turn.
    pub fn transcript_tokens(&self) -> Vec<String> {
        self.turns
            .iter()
            .flat_map(|t| t.tokens.iter().cloned())
            .collect()
    }
}

// ── Tokenization ────────────────────────────────────────────────────────────

fn detachable(c: char) -> bool {
    !c.is_alphanumeric()
}

/// Lowercases, splits on whitespace, and peels leading/trailing punctuation
/// off each chunk into separate tokens. Interior punctuation (apostrophes,
/// hyphens, decimal points) stays put. Never yields an empty token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        let chars: Vec<char> = lower.chars().collect();
        let mut start = 0;
        let mut end = chars.len();
        while start < end && detachable(chars[start]) {
            start += 1;
        }
        while end > start && detachable(chars[end - 1]) {
            end -= 1;
        }
        for &c in &chars[..start] {
            out.push(c.to_string());
        }
        if start < end {
            out.push(chars[start..end].iter().collect());
        }
        for &c in &chars[end..] {
            out.push(c.to_string());
        }
    }
    out
}

// ── Vocabulary ──────────────────────────────────────────────────────────────

/// Token ↔ id table. Ids 0–4 are the reserved tokens; the rest are corpus
/// tokens ranked by descending frequency with lexicographic tie-breaking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    id_of: HashMap<String, usize>,
    token_of: Vec<String>,
}

impl Vocab {
    /// Builds a vocabulary from every transcript and summary token in the
    /// corpus, keeping tokens seen at least `min_freq` times and capping
    /// the total size (reserved tokens included) at `max_size`.
    pub fn build(
        meetings: &[Meeting],
        min_freq: usize,
        max_size: usize,
    ) -> Result<Vocab, DataError> {
        if max_size < RESERVED_TOKENS.len() {
            return Err(DataError::VocabTooSmall { max_size });
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for m in meetings {
            for t in &m.turns {
                for tok in &t.tokens {
                    *counts.entry(tok).or_insert(0) += 1;
                }
            }
            for tok in &m.summary {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(tok, n)| *n >= min_freq && !RESERVED_TOKENS.contains(tok))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut token_of: Vec<String> =
            RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        for (tok, _) in ranked {
            if token_of.len() == max_size {
                break;
            }
            token_of.push(tok.to_string());
        }
        Ok(Vocab::from_token_list(token_of))
    }

    /// Rebuilds a vocabulary from an id-ordered token list (checkpoints).
    pub fn from_tokens(token_of: Vec<String>) -> Result<Vocab, DataError> {
        if token_of.len() < RESERVED_TOKENS.len() {
            return Err(DataError::VocabTooSmall {
                max_size: token_of.len(),
            });
        }
        for (i, expected) in RESERVED_TOKENS.iter().enumerate() {
            if token_of[i] != *expected {
                return Err(DataError::Schema {
                    line: i + 1,
                    message: format!("reserved slot {i} holds '{}'", token_of[i]),
                });
            }
        }
        Ok(Vocab::from_token_list(token_of))
    }

    fn from_token_list(token_of: Vec<String>) -> Vocab {
        let id_of = token_of
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { id_of, token_of }
    }

    /// Id for a token, falling back to the unknown-token id.
    pub fn id(&self, token: &str) -> usize {
        self.id_of.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.id_of.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.token_of[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.token_of
    }

    pub fn len(&self) -> usize {
        self.token_of.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `[BEGIN] + summary ids + [END]`, the decoder's training target.
    pub fn target_ids(&self, summary: &[String]) -> Vec<usize> {
        let mut ids = Vec::with_capacity(summary.len() + 2);
        ids.push(BEGIN_ID);
        ids.extend(summary.iter().map(|t| self.id(t)));
        ids.push(END_ID);
        ids
    }

    /// Maps generated ids back to tokens.
    pub fn decode_ids(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }
}

// ── Role and tag tables ─────────────────────────────────────────────────────

/// Speaker-role ↔ id table, in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleTable {
    id_of: HashMap<String, usize>,
    name_of: Vec<String>,
}

impl RoleTable {
    pub fn build(meetings: &[Meeting]) -> RoleTable {
        let mut table = RoleTable {
            id_of: HashMap::new(),
            name_of: Vec::new(),
        };
        for m in meetings {
            for t in &m.turns {
                table.intern(&t.role);
            }
        }
        table
    }

    pub fn from_names(names: Vec<String>) -> RoleTable {
        let mut table = RoleTable {
            id_of: HashMap::new(),
            name_of: Vec::new(),
        };
        for n in names {
            table.intern(&n);
        }
        table
    }

    fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.id_of.get(name) {
            return id;
        }
        let id = self.name_of.len();
        self.name_of.push(name.to_string());
        self.id_of.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.id_of.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.name_of
    }

    pub fn len(&self) -> usize {
        self.name_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.name_of.is_empty()
    }

    /// One role name per line, line number = id.
    pub fn to_lines(&self) -> String {
        self.name_of.join("\n")
    }

    pub fn from_lines(text: &str) -> RoleTable {
        RoleTable::from_names(
            text.lines()
                .map(|l| l.trim().to_string())
                .filter(|l| !l.is_empty())
                .collect(),
        )
    }
}

/// Tag ↔ id table for part-of-speech or entity tags; id 0 is the
/// absent-tag marker that untagged corpora fall back to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagVocab {
    id_of: HashMap<String, usize>,
    tag_of: Vec<String>,
}

impl TagVocab {
    fn empty() -> TagVocab {
        let mut t = TagVocab {
            id_of: HashMap::new(),
            tag_of: Vec::new(),
        };
        t.intern(NONE_TAG);
        t
    }

    /// Collects part-of-speech tags from the corpus in first-appearance order.
    pub fn build_pos(meetings: &[Meeting]) -> TagVocab {
        let mut t = TagVocab::empty();
        for m in meetings {
            for turn in &m.turns {
                if let Some(tags) = &turn.pos {
                    for tag in tags {
                        t.intern(tag);
                    }
                }
            }
        }
        t
    }

    /// Collects entity tags from the corpus in first-appearance order.
    pub fn build_ent(meetings: &[Meeting]) -> TagVocab {
        let mut t = TagVocab::empty();
        for m in meetings {
            for turn in &m.turns {
                if let Some(tags) = &turn.ent {
                    for tag in tags {
                        t.intern(tag);
                    }
                }
            }
        }
        t
    }

    pub fn from_tags(tags: Vec<String>) -> Result<TagVocab, DataError> {
        if tags.first().map(String::as_str) != Some(NONE_TAG) {
            return Err(DataError::Schema {
                line: 1,
                message: format!("tag slot 0 must be '{NONE_TAG}'"),
            });
        }
        let mut t = TagVocab::empty();
        for tag in &tags[1..] {
            t.intern(tag);
        }
        Ok(t)
    }

    fn intern(&mut self, tag: &str) -> usize {
        if let Some(&id) = self.id_of.get(tag) {
            return id;
        }
        let id = self.tag_of.len();
        self.tag_of.push(tag.to_string());
        self.id_of.insert(tag.to_string(), id);
        id
    }

    /// Id for a tag; anything unseen maps to the absent-tag id.
    pub fn id(&self, tag: &str) -> usize {
        self.id_of.get(tag).copied().unwrap_or(NONE_TAG_ID)
    }

    pub fn tags(&self) -> &[String] {
        &self.tag_of
    }

    pub fn len(&self) -> usize {
        self.tag_of.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

// ── JSONL parsing and serialization ─────────────────────────────────────────

fn validate_meeting(m: &Meeting, line: usize) -> Result<(), DataError> {
    if m.turns.is_empty() {
        return Err(DataError::Schema {
            line,
            message: format!("meeting '{}' has no turns", m.id),
        });
    }
    for (i, t) in m.turns.iter().enumerate() {
        if t.tokens.is_empty() {
            return Err(DataError::Schema {
                line,
                message: format!("meeting '{}' turn {i} has no tokens", m.id),
            });
        }
        if let Some(pos) = &t.pos {
            if pos.len() != t.tokens.len() {
                return Err(DataError::Schema {
                    line,
                    message: format!(
                        "meeting '{}' turn {i}: {} pos tags for {} tokens",
                        m.id,
                        pos.len(),
                        t.tokens.len()
                    ),
                });
            }
        }
        if let Some(ent) = &t.ent {
            if ent.len() != t.tokens.len() {
                return Err(DataError::Schema {
                    line,
                    message: format!(
                        "meeting '{}' turn {i}: {} entity tags for {} tokens",
                        m.id,
                        ent.len(),
                        t.tokens.len()
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Parses one meeting from one JSON line.
pub fn parse_meeting(line: &str) -> Result<Meeting, DataError> {
    let m: Meeting = serde_json::from_str(line).map_err(|e| DataError::Schema {
        line: 1,
        message: e.to_string(),
    })?;
    validate_meeting(&m, 1)?;
    Ok(m)
}

/// Parses a whole JSONL meeting corpus; blank lines are skipped.
pub fn meetings_from_jsonl(text: &str) -> Result<Vec<Meeting>, DataError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let m: Meeting = serde_json::from_str(raw).map_err(|e| DataError::Schema {
            line,
            message: e.to_string(),
        })?;
        validate_meeting(&m, line)?;
        out.push(m);
    }
    if out.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    Ok(out)
}

pub fn meetings_to_jsonl(meetings: &[Meeting]) -> String {
    let mut out = String::new();
    for m in meetings {
        out.push_str(&serde_json::to_string(m).expect("serializable record"));
        out.push('\n');
    }
    out
}

/// Parses a whole JSONL article corpus; blank lines are skipped.
pub fn articles_from_jsonl(text: &str) -> Result<Vec<Article>, DataError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let a: Article = serde_json::from_str(raw).map_err(|e| DataError::Schema {
            line,
            message: e.to_string(),
        })?;
        if a.sentences.is_empty() || a.sentences.iter().any(|s| s.is_empty()) {
            return Err(DataError::Schema {
                line,
                message: format!("article from '{}' has an empty sentence list", a.source_name),
            });
        }
        out.push(a);
    }
    if out.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    Ok(out)
}

pub fn articles_to_jsonl(articles: &[Article]) -> String {
    let mut out = String::new();
    for a in articles {
        out.push_str(&serde_json::to_string(a).expect("serializable record"));
        out.push('\n');
    }
    out
}

pub fn load_meetings(path: &Path) -> Result<Vec<Meeting>, DataError> {
    meetings_from_jsonl(&fs::read_to_string(path)?)
}

pub fn save_meetings(path: &Path, meetings: &[Meeting]) -> Result<(), DataError> {
    Ok(fs::write(path, meetings_to_jsonl(meetings))?)
}

pub fn load_articles(path: &Path) -> Result<Vec<Article>, DataError> {
    articles_from_jsonl(&fs::read_to_string(path)?)
}

pub fn save_articles(path: &Path, articles: &[Article]) -> Result<(), DataError> {
    Ok(fs::write(path, articles_to_jsonl(articles))?)
}

// ── News → pseudo-meeting conversion ────────────────────────────────────────

/// Fuses a group of articles into one pseudo-meeting: each sentence becomes
/// a turn spoken by `"<source_name>-i"` (articles numbered from 1 within the
/// group), turn order is shuffled by the seed, and the summaries are
/// concatenated in the original article order.
pub fn news_to_pseudo_meeting(
    articles: &[Article],
    seed: u64,
) -> Result<Meeting, DataError> {
    if articles.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    let mut turns = Vec::new();
    let mut summary = Vec::new();
    for (i, article) in articles.iter().enumerate() {
        if article.sentences.is_empty() {
            return Err(DataError::EmptyArticle {
                source: article.source_name.clone(),
            });
        }
        let role = format!("{}-{}", article.source_name, i + 1);
        for sentence in &article.sentences {
            turns.push(Turn {
                role: role.clone(),
                tokens: sentence.clone(),
                pos: None,
                ent: None,
            });
        }
        summary.extend(article.summary.iter().cloned());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    turns.shuffle(&mut rng);
    Ok(Meeting {
        id: format!("pseudo-{seed}"),
        turns,
        summary,
    })
}

/// Converts a whole article corpus, `group_size` articles per meeting; the
/// final short group is kept. Group `g` is shuffled with `seed + g`, so the
/// output is a pure function of `(articles, group_size, seed)`.
pub fn convert_articles(
    articles: &[Article],
    group_size: usize,
    seed: u64,
) -> Result<Vec<Meeting>, DataError> {
    if group_size == 0 {
        return Err(DataError::BadGroupSize);
    }
    if articles.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    articles
        .chunks(group_size)
        .enumerate()
        .map(|(g, group)| {
            let mut m = news_to_pseudo_meeting(group, seed.wrapping_add(g as u64))?;
            m.id = format!("pseudo-{g}");
            Ok(m)
        })
        .collect()
}

// ── Truncation ──────────────────────────────────────────────────────────────

/// Hard caps applied before a meeting reaches the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationLimits {
    pub max_turns: usize,
    pub max_turn_tokens: usize,
    /// Budget for the decoder target *including* its begin/end markers.
    pub max_summary_tokens: usize,
}

/// Keep-earliest truncation: first `max_turns` turns, first
/// `max_turn_tokens` tokens per turn (tags cut in lockstep), and a summary
/// short enough that the begin/end markers still fit the target budget.
pub fn truncate_meeting(meeting: &Meeting, limits: &TruncationLimits) -> Meeting {
    let turns = meeting
        .turns
        .iter()
        .take(limits.max_turns)
        .map(|t| {
            let keep = t.tokens.len().min(limits.max_turn_tokens);
            Turn {
                role: t.role.clone(),
                tokens: t.tokens[..keep].to_vec(),
                pos: t.pos.as_ref().map(|p| p[..keep].to_vec()),
                ent: t.ent.as_ref().map(|e| e[..keep].to_vec()),
            }
        })
        .collect();
    let summary_keep = meeting
        .summary
        .len()
        .min(limits.max_summary_tokens.saturating_sub(2));
    Meeting {
        id: meeting.id.clone(),
        turns,
        summary: meeting.summary[..summary_keep].to_vec(),
    }
}

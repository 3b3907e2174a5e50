//! Corpus ingestion: documents, query-document pairs, vocabulary, splits.
//!
//! File formats are line-delimited UTF-8 with tab-separated fields:
//! corpus records are `doc_key<TAB>text`, pair records are
//! `query<TAB>doc_key`. Lines starting with `#` are ignored. All text is
//! lowercased on ingest and runs of whitespace collapse to single spaces;
//! that is the only normalization applied.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// One corpus record: an opaque unique key and its (normalized) text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_key: String,
    pub text: String,
}

/// A labeled retrieval example: a query and the key of its gold document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryDocPair {
    pub query: String,
    pub doc_key: String,
}

/// All documents plus a key index. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Corpus {
    docs: Vec<Document>,
    by_key: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_documents(docs: Vec<Document>) -> Result<Self> {
        let mut by_key = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if by_key.insert(d.doc_key.clone(), i).is_some() {
                return Err(Error::DuplicateKey(d.doc_key.clone()));
            }
        }
        Ok(Corpus { docs, by_key })
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn index_of(&self, doc_key: &str) -> Option<usize> {
        self.by_key.get(doc_key).copied()
    }

    pub fn get(&self, doc_key: &str) -> Option<&Document> {
        self.index_of(doc_key).map(|i| &self.docs[i])
    }
}

/// Lowercase and collapse all whitespace runs to single spaces.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.to_lowercase().split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

fn read_records(path: &Path) -> Result<Vec<(usize, String, String)>> {
    let content = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (first, second) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: lineno,
            msg: "expected two tab-separated fields".into(),
        })?;
        records.push((lineno, first.to_string(), second.to_string()));
    }
    Ok(records)
}

/// Load a corpus file (`doc_key<TAB>text`). Rejects duplicate keys and
/// records whose text is empty after normalization.
pub fn load_documents(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let mut docs = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (lineno, key, raw_text) in read_records(path)? {
        let text = normalize(&raw_text);
        if text.is_empty() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno,
                msg: "missing or empty text field".into(),
            });
        }
        if seen.insert(key.clone(), lineno).is_some() {
            return Err(Error::DuplicateKey(key));
        }
        docs.push(Document { doc_key: key, text });
    }
    Corpus::from_documents(docs)
}

/// Load a pairs file (`query<TAB>doc_key`); every key must resolve in `corpus`.
pub fn load_pairs(path: impl AsRef<Path>, corpus: &Corpus) -> Result<Vec<QueryDocPair>> {
    let path = path.as_ref();
    let mut pairs = Vec::new();
    for (lineno, query_raw, key) in read_records(path)? {
        let query = normalize(&query_raw);
        if query.is_empty() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno,
                msg: "missing or empty query field".into(),
            });
        }
        if corpus.index_of(&key).is_none() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno,
                msg: format!("doc_key '{key}' does not resolve to a document"),
            });
        }
        pairs.push(QueryDocPair {
            query,
            doc_key: key,
        });
    }
    Ok(pairs)
}

/// Write documents in the corpus file format.
pub fn save_documents(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let mut out = String::new();
    for d in docs {
        writeln!(out, "{}\t{}", d.doc_key, d.text).expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Write pairs in the pairs file format.
pub fn save_pairs(path: impl AsRef<Path>, pairs: &[QueryDocPair]) -> Result<()> {
    let mut out = String::new();
    for p in pairs {
        writeln!(out, "{}\t{}", p.query, p.doc_key).expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

// --- vocabulary -------------------------------------------------------------

pub const PAD: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;
/// Direction prefix for doc->docid examples in the bidirectional objective.
pub const IDX_PREFIX: u32 = 3;
/// Direction prefix for docid->doc examples in the bidirectional objective.
pub const RET_PREFIX: u32 = 4;
const DIGIT_BASE: u32 = 5;
const SENTINEL_BASE: u32 = DIGIT_BASE + 10;
/// Span-corruption sentinel budget.
pub const SENTINEL_COUNT: u32 = 16;
/// Total ids below the first corpus word.
pub const RESERVED: u32 = SENTINEL_BASE + SENTINEL_COUNT;

/// Token <-> id map with a fixed reserved block: PAD=0, EOS=1, UNK=2, the two
/// direction prefixes, digit tokens "0".."9", then span sentinels. Corpus
/// words are ranked by frequency and truncated to `max_size`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build from document texts. Requires `max_size >= RESERVED`.
    pub fn build(docs: &[Document], max_size: usize) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::InvalidInput(
                "cannot build vocabulary from an empty corpus".into(),
            ));
        }
        if max_size < RESERVED as usize {
            return Err(Error::Config(format!(
                "vocabulary max_size {max_size} is below the reserved block size {RESERVED}"
            )));
        }
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for d in docs {
            for w in d.text.split_whitespace() {
                *freq.entry(w).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = freq
            .into_iter()
            .filter(|(w, _)| !is_digit_word(w))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

        let mut id_to_token: Vec<String> = Vec::with_capacity(max_size);
        id_to_token.push("<pad>".into());
        id_to_token.push("</s>".into());
        id_to_token.push("<unk>".into());
        id_to_token.push("[IDX]".into());
        id_to_token.push("[RET-DIR]".into());
        for d in 0..10u8 {
            id_to_token.push(((b'0' + d) as char).to_string());
        }
        for i in 0..SENTINEL_COUNT {
            id_to_token.push(format!("<x_{i}>"));
        }
        let budget = max_size - id_to_token.len();
        for (w, _) in ranked.into_iter().take(budget) {
            id_to_token.push(w.to_string());
        }

        let mut lookup = HashMap::new();
        for d in 0..10u32 {
            lookup.insert(((b'0' + d as u8) as char).to_string(), DIGIT_BASE + d);
        }
        for (id, tok) in id_to_token.iter().enumerate().skip(RESERVED as usize) {
            lookup.insert(tok.clone(), id as u32);
        }
        Ok(Vocabulary {
            id_to_token,
            lookup,
        })
    }

    /// Number of base tokens (docid extension not included).
    pub fn n_tokens(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    pub fn id_of_word(&self, word: &str) -> Option<u32> {
        self.lookup.get(word).copied()
    }

    pub fn digit_id(&self, digit: u8) -> u32 {
        debug_assert!(digit < 10);
        DIGIT_BASE + digit as u32
    }

    pub fn is_digit_id(&self, id: u32) -> bool {
        (DIGIT_BASE..DIGIT_BASE + 10).contains(&id)
    }

    /// The digit value of a digit-token id.
    pub fn digit_value(&self, id: u32) -> Option<u8> {
        self.is_digit_id(id).then(|| (id - DIGIT_BASE) as u8)
    }

    pub fn sentinel_id(&self, i: u32) -> u32 {
        debug_assert!(i < SENTINEL_COUNT);
        SENTINEL_BASE + i
    }

    pub fn is_sentinel_id(&self, id: u32) -> bool {
        (SENTINEL_BASE..SENTINEL_BASE + SENTINEL_COUNT).contains(&id)
    }

    /// Token ids for a text: whitespace words, out-of-vocabulary words map to
    /// UNK. No EOS is appended; callers control framing.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        normalize(text)
            .split_whitespace()
            .map(|w| self.id_of_word(w).unwrap_or(UNK))
            .collect()
    }

    /// Inverse of `tokenize` for in-vocabulary text (modulo whitespace).
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let words: Vec<&str> = ids.iter().filter_map(|&id| self.token(id)).collect();
        words.join(" ")
    }

    /// Digit-token ids for a docid digit string.
    pub fn encode_digits(&self, digits: &str) -> Vec<u32> {
        digits
            .bytes()
            .map(|b| {
                debug_assert!(b.is_ascii_digit());
                DIGIT_BASE + (b - b'0') as u32
            })
            .collect()
    }
}

fn is_digit_word(w: &str) -> bool {
    w.len() == 1 && w.as_bytes()[0].is_ascii_digit()
}

// --- splits ------------------------------------------------------------------

/// Train/validation pair splits. All documents are retained for indexing
/// regardless of which split their pairs land in.
#[derive(Debug, Clone)]
pub struct CorpusSplits {
    pub train_pairs: Vec<QueryDocPair>,
    pub val_pairs: Vec<QueryDocPair>,
}

const TAG_SPLIT: u64 = 0x53504c49;

/// Deterministically split pairs into train/validation sets.
pub fn make_splits(pairs: &[QueryDocPair], val_fraction: f64, seed: u64) -> Result<CorpusSplits> {
    if !(0.0..1.0).contains(&val_fraction) || val_fraction <= 0.0 {
        return Err(Error::Config(format!(
            "val_fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    if pairs.len() < 2 {
        return Err(Error::Split(format!(
            "need at least 2 pairs to split, got {}",
            pairs.len()
        )));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = seeding::rng(seed, TAG_SPLIT);
    order.shuffle(&mut rng);
    let n_val = ((pairs.len() as f64 * val_fraction).round() as usize).clamp(1, pairs.len() - 1);
    let mut val_idx: Vec<usize> = order[..n_val].to_vec();
    val_idx.sort_unstable();
    let mut val_pairs = Vec::with_capacity(n_val);
    let mut train_pairs = Vec::with_capacity(pairs.len() - n_val);
    let mut v = 0;
    for (i, p) in pairs.iter().enumerate() {
        if v < val_idx.len() && val_idx[v] == i {
            val_pairs.push(p.clone());
            v += 1;
        } else {
            train_pairs.push(p.clone());
        }
    }
    Ok(CorpusSplits {
        train_pairs,
        val_pairs,
    })
}

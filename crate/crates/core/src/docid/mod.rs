//! Document identifier spaces.
//!
//! Three representations share one interface: an *atomic* id is a dedicated
//! extra-vocabulary output token, a *naive string* id is an arbitrary integer
//! rendered as a digit sequence, and a *semantic string* id is a digit
//! sequence whose prefixes walk a hierarchical clustering of the corpus.

mod embed;
mod kmeans;
mod semantic;
mod trie;

pub use embed::{embed_documents, DocumentEmbedder, TfidfProjectionEmbedder};
pub use kmeans::{kmeans, ClusterResult};
pub use semantic::{generate_semantic_ids, semantic_root_clustering, SemanticIdParams};
pub use trie::{Continuations, DocidTrie};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabulary, EOS};
use crate::error::{Error, Result};
use crate::seeding;

/// Which identifier space an experiment uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocidScheme {
    Atomic,
    Naive,
    Semantic,
}

impl std::str::FromStr for DocidScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "atomic" => Ok(DocidScheme::Atomic),
            "naive" => Ok(DocidScheme::Naive),
            "semantic" => Ok(DocidScheme::Semantic),
            other => Err(Error::Config(format!("unknown docid scheme '{other}'"))),
        }
    }
}

/// A document identifier in one of the three representations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Docid {
    /// Extended-vocabulary token id; lies in `[n_tokens, n_tokens + n_docs)`.
    Atomic(u32),
    /// Arbitrary unique integer as an unpadded decimal digit string.
    NaiveString(String),
    /// Digit string from the hierarchical clustering.
    SemanticString(String),
}

impl Docid {
    /// The digit string for the string-shaped variants.
    pub fn digits(&self) -> Option<&str> {
        match self {
            Docid::Atomic(_) => None,
            Docid::NaiveString(s) | Docid::SemanticString(s) => Some(s),
        }
    }

    /// Decoder target token sequence, EOS-terminated.
    pub fn target_tokens(&self, vocab: &Vocabulary) -> Vec<u32> {
        let mut t = match self {
            Docid::Atomic(id) => vec![*id],
            Docid::NaiveString(s) | Docid::SemanticString(s) => vocab.encode_digits(s),
        };
        t.push(EOS);
        t
    }

    /// Rendering used by the on-disk docid map (atomic stores its offset).
    pub fn serialized(&self, n_tokens: u32) -> String {
        match self {
            Docid::Atomic(id) => (id - n_tokens).to_string(),
            Docid::NaiveString(s) | Docid::SemanticString(s) => s.clone(),
        }
    }
}

/// The full doc_key -> docid map for a corpus, aligned with corpus doc order.
#[derive(Debug, Clone)]
pub struct DocidAssignment {
    scheme: DocidScheme,
    keys: Vec<String>,
    ids: Vec<Docid>,
    by_key: HashMap<String, usize>,
    by_digits: HashMap<String, usize>,
}

impl DocidAssignment {
    pub fn new(scheme: DocidScheme, keys: Vec<String>, ids: Vec<Docid>) -> Result<Self> {
        assert_eq!(keys.len(), ids.len());
        let mut by_key = HashMap::with_capacity(keys.len());
        let mut by_digits = HashMap::new();
        for (i, k) in keys.iter().enumerate() {
            if by_key.insert(k.clone(), i).is_some() {
                return Err(Error::DuplicateKey(k.clone()));
            }
            if let Some(d) = ids[i].digits() {
                if by_digits.insert(d.to_string(), i).is_some() {
                    return Err(Error::DuplicateKey(format!("docid '{d}'")));
                }
            }
        }
        Ok(DocidAssignment {
            scheme,
            keys,
            ids,
            by_key,
            by_digits,
        })
    }

    pub fn scheme(&self) -> DocidScheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn get(&self, doc_key: &str) -> Option<&Docid> {
        self.by_key.get(doc_key).map(|&i| &self.ids[i])
    }

    /// Resolve a decoded digit string back to its document key.
    pub fn key_of_digits(&self, digits: &str) -> Option<&str> {
        self.by_digits.get(digits).map(|&i| self.keys[i].as_str())
    }

    /// Document key at a given corpus position (atomic offset).
    pub fn key_at(&self, index: usize) -> Option<&str> {
        self.keys.get(index).map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Docid)> {
        self.keys.iter().map(|k| k.as_str()).zip(self.ids.iter())
    }

    pub fn docids(&self) -> &[Docid] {
        &self.ids
    }

    /// Longest digit-string length (1 for atomic).
    pub fn max_digits(&self) -> usize {
        self.ids
            .iter()
            .map(|d| d.digits().map_or(1, |s| s.len()))
            .max()
            .unwrap_or(1)
    }

    /// Build the decimal trie over the string ids.
    pub fn build_trie(&self) -> Result<DocidTrie> {
        DocidTrie::build(
            self.iter()
                .filter_map(|(k, d)| d.digits().map(|s| (s.to_string(), k.to_string()))),
        )
    }
}

const TAG_NAIVE: u64 = 0x4e414956;

/// Assign a random permutation of `0..N-1` as unpadded decimal strings.
pub fn assign_naive_ids(doc_keys: &[String], seed: u64) -> Result<DocidAssignment> {
    let mut perm: Vec<usize> = (0..doc_keys.len()).collect();
    perm.shuffle(&mut seeding::rng(seed, TAG_NAIVE));
    let ids = perm
        .into_iter()
        .map(|n| Docid::NaiveString(n.to_string()))
        .collect();
    DocidAssignment::new(DocidScheme::Naive, doc_keys.to_vec(), ids)
}

/// Assign extra-vocabulary token ids `n_tokens + i` in corpus order.
pub fn assign_atomic_ids(doc_keys: &[String], n_tokens: u32) -> Result<DocidAssignment> {
    let ids = (0..doc_keys.len())
        .map(|i| Docid::Atomic(n_tokens + i as u32))
        .collect();
    DocidAssignment::new(DocidScheme::Atomic, doc_keys.to_vec(), ids)
}

/// Serialize as line-delimited `doc_key<TAB>docid_string`.
pub fn save_docids(path: impl AsRef<Path>, map: &DocidAssignment, n_tokens: u32) -> Result<()> {
    let mut out = String::new();
    for (k, d) in map.iter() {
        writeln!(out, "{k}\t{}", d.serialized(n_tokens)).expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Load a docid map written by [`save_docids`]. The trie, when needed, is
/// always rebuilt from the map.
pub fn load_docids(
    path: impl AsRef<Path>,
    scheme: DocidScheme,
    n_tokens: u32,
) -> Result<DocidAssignment> {
    let path = path.as_ref();
    let content = fs::read_to_string(path)?;
    let mut keys = Vec::new();
    let mut ids = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: "expected `doc_key<TAB>docid`".into(),
        })?;
        if !value.bytes().all(|b| b.is_ascii_digit()) || value.is_empty() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("'{value}' is not a decimal docid"),
            });
        }
        keys.push(key.to_string());
        ids.push(match scheme {
            DocidScheme::Atomic => {
                let offset: u32 = value.parse().map_err(|_| Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: format!("atomic offset '{value}' out of range"),
                })?;
                Docid::Atomic(n_tokens + offset)
            }
            DocidScheme::Naive => Docid::NaiveString(value.to_string()),
            DocidScheme::Semantic => Docid::SemanticString(value.to_string()),
        });
    }
    DocidAssignment::new(scheme, keys, ids)
}

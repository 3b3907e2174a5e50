//! Okapi BM25 with the +1-smoothed IDF:
//!
//! ```text
//! idf(t)      = ln((N - df + 0.5) / (df + 0.5) + 1)
//! score(q, d) = sum over query terms of
//!               idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))
//! ```
//!
//! The smoothed IDF is strictly positive, so a document scores 0 iff no
//! query term occurs in it; zero-score documents are excluded from results.

use std::collections::HashMap;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::retrieve::RankedList;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

/// Inverted index over lowercased whitespace words.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    postings: HashMap<String, Vec<(usize, u32)>>,
    doc_keys: Vec<String>,
    doc_lens: Vec<usize>,
    avgdl: f64,
    pub k1: f64,
    pub b: f64,
}

/// Build the index with default parameters `k1 = 1.2`, `b = 0.75`.
pub fn bm25_build(corpus: &Corpus) -> Result<Bm25Index> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("cannot index an empty corpus".into()));
    }
    let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
    let mut doc_lens = Vec::with_capacity(corpus.len());
    let mut doc_keys = Vec::with_capacity(corpus.len());
    for (i, doc) in corpus.docs().iter().enumerate() {
        let mut counts: HashMap<&str, u32> = HashMap::new();
        let mut len = 0usize;
        for w in doc.text.split_whitespace() {
            *counts.entry(w).or_insert(0) += 1;
            len += 1;
        }
        for (w, tf) in counts {
            postings.entry(w.to_string()).or_default().push((i, tf));
        }
        doc_lens.push(len);
        doc_keys.push(doc.doc_key.clone());
    }
    for list in postings.values_mut() {
        list.sort_unstable_by_key(|&(d, _)| d);
    }
    let avgdl = doc_lens.iter().sum::<usize>() as f64 / doc_lens.len() as f64;
    Ok(Bm25Index {
        postings,
        doc_keys,
        doc_lens,
        avgdl,
        k1: DEFAULT_K1,
        b: DEFAULT_B,
    })
}

impl Bm25Index {
    pub fn n_docs(&self) -> usize {
        self.doc_keys.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_len(&self, i: usize) -> usize {
        self.doc_lens[i]
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, |p| p.len())
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs() as f64;
        let df = self.df(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn term_weight(&self, tf: u32, doc: usize) -> f64 {
        let tf = tf as f64;
        let dl = self.doc_lens[doc] as f64;
        tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * dl / self.avgdl))
    }
}

/// Score the query against every document via the postings lists; documents
/// with zero score are excluded, ties break by doc_key order.
pub fn bm25_retrieve(index: &Bm25Index, query: &str, topk: usize) -> RankedList {
    let mut scores: HashMap<usize, f64> = HashMap::new();
    for term in crate::corpus::normalize(query).split_whitespace() {
        let Some(list) = index.postings.get(term) else {
            continue;
        };
        let idf = index.idf(term);
        for &(doc, tf) in list {
            *scores.entry(doc).or_insert(0.0) += idf * index.term_weight(tf, doc);
        }
    }
    let mut entries: Vec<(String, f64)> = scores
        .into_iter()
        .filter(|&(_, s)| s > 0.0)
        .map(|(d, s)| (index.doc_keys[d].clone(), s))
        .collect();
    entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    entries.truncate(topk);
    RankedList::new(entries)
}

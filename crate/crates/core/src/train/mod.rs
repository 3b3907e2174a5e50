//! Training-example generation and the training loop.
//!
//! Indexing examples bind document content to docids under one of four
//! objectives (inputs-to-targets, targets-to-inputs, bidirectional, span
//! corruption); retrieval examples bind queries to docids. Both flow through
//! a ratio-`r` sampler and a buffered shuffle into teacher-forced batches.

mod driver;
mod mix;

pub use driver::{select_best_checkpoint, train, EvalPoint, TraceRow, TrainOptions, TrainOutcome};
pub use mix::{MixStream, StreamStats, TaskMix};

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    Corpus, Document, QueryDocPair, Vocabulary, EOS, IDX_PREFIX, RET_PREFIX, SENTINEL_COUNT,
};
use crate::docid::DocidAssignment;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::seeding;

/// Default stopword list for the set representation.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "he", "in", "is", "it",
    "its", "of", "on", "that", "the", "to", "was", "were", "which", "will", "with",
];

pub fn default_stopwords() -> HashSet<String> {
    DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect()
}

/// How document content is bound to docids during indexing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexingStrategy {
    Inputs2Targets,
    Targets2Inputs,
    Bidirectional,
    SpanCorruption,
}

impl std::str::FromStr for IndexingStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inputs2targets" => Ok(IndexingStrategy::Inputs2Targets),
            "targets2inputs" => Ok(IndexingStrategy::Targets2Inputs),
            "bidirectional" => Ok(IndexingStrategy::Bidirectional),
            "span_corruption" => Ok(IndexingStrategy::SpanCorruption),
            other => Err(Error::Config(format!(
                "unknown indexing strategy '{other}'"
            ))),
        }
    }
}

/// What part of a document stands in for it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DocRepresentation {
    /// First `l` tokens, order preserved.
    Direct { l: usize },
    /// Stopwords removed, first occurrence of each remaining term kept.
    Set,
    /// One uniformly random contiguous chunk of `k` tokens; a fresh offset
    /// is drawn each epoch.
    Inverted { k: usize, seed: u64 },
}

/// Which task an example trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Indexing,
    Retrieval,
}

/// One teacher-forcing example; the decoder target is EOS-terminated.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub enc_tokens: Vec<u32>,
    pub dec_targets: Vec<u32>,
    pub task: TaskKind,
}

/// Produce the token sequence standing in for `doc`. `cap` bounds the output
/// length (the encoder limit); `sample_tag` individualizes the random chunk
/// of the inverted representation per (epoch, document).
pub fn represent_document(
    doc: &Document,
    rep: &DocRepresentation,
    vocab: &Vocabulary,
    stopwords: &HashSet<String>,
    cap: usize,
    sample_tag: u64,
) -> Result<Vec<u32>> {
    let words: Vec<&str> = doc.text.split_whitespace().collect();
    let tokens: Vec<u32> = match rep {
        DocRepresentation::Direct { l } => words
            .iter()
            .take((*l).min(cap))
            .map(|w| vocab.id_of_word(w).unwrap_or(crate::corpus::UNK))
            .collect(),
        DocRepresentation::Set => {
            let mut seen = HashSet::new();
            words
                .iter()
                .filter(|w| !stopwords.contains(**w))
                .filter(|w| seen.insert(**w))
                .take(cap)
                .map(|w| vocab.id_of_word(w).unwrap_or(crate::corpus::UNK))
                .collect()
        }
        DocRepresentation::Inverted { k, seed } => {
            let k = (*k).max(1).min(cap);
            let ids: Vec<u32> = words
                .iter()
                .map(|w| vocab.id_of_word(w).unwrap_or(crate::corpus::UNK))
                .collect();
            if ids.len() <= k {
                ids
            } else {
                let mut rng = seeding::rng(*seed, sample_tag);
                let offset = rng.gen_range(0..=ids.len() - k);
                ids[offset..offset + k].to_vec()
            }
        }
    };
    if tokens.is_empty() {
        return Err(Error::InvalidInput(format!(
            "document '{}' is empty under the chosen representation",
            doc.doc_key
        )));
    }
    Ok(tokens)
}

fn docid_target(
    docids: &DocidAssignment,
    doc_key: &str,
    vocab: &Vocabulary,
    max_dec_len: usize,
) -> Result<Vec<u32>> {
    let docid = docids
        .get(doc_key)
        .ok_or_else(|| Error::InvalidInput(format!("no docid for document '{doc_key}'")))?;
    let target = docid.target_tokens(vocab);
    if target.len() > max_dec_len {
        return Err(Error::Config(format!(
            "docid for '{doc_key}' needs {} decoder steps but max_dec_len is {max_dec_len}",
            target.len()
        )));
    }
    Ok(target)
}

/// Digit tokens of a string docid for use as *encoder* input.
fn docid_as_input(docids: &DocidAssignment, doc_key: &str, vocab: &Vocabulary) -> Result<Vec<u32>> {
    let docid = docids
        .get(doc_key)
        .ok_or_else(|| Error::InvalidInput(format!("no docid for document '{doc_key}'")))?;
    match docid.digits() {
        Some(s) => Ok(vocab.encode_digits(s)),
        None => Err(Error::Config(
            "this indexing strategy feeds docids to the encoder; atomic docids are output-only, use string docids".into(),
        )),
    }
}

/// EOS-terminated document tokens truncated to the decoder limit.
fn doc_as_target(doc_tokens: &[u32], max_dec_len: usize) -> Vec<u32> {
    let body = doc_tokens.len().min(max_dec_len - 1);
    let mut t = doc_tokens[..body].to_vec();
    t.push(EOS);
    t
}

const TAG_EPOCH: u64 = 0x45504f43;

/// Generate one epoch of indexing examples over the whole corpus (validation
/// documents included: the index must cover everything it may retrieve).
#[allow(clippy::too_many_arguments)]
pub fn make_indexing_examples(
    corpus: &Corpus,
    docids: &DocidAssignment,
    strategy: IndexingStrategy,
    rep: &DocRepresentation,
    vocab: &Vocabulary,
    stopwords: &HashSet<String>,
    config: &ModelConfig,
    seed: u64,
    epoch: u64,
) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    let enc_cap = config.max_enc_len;
    for (i, doc) in corpus.docs().iter().enumerate() {
        let sample_tag = seeding::derive2(seed ^ TAG_EPOCH, epoch, i as u64);
        match strategy {
            IndexingStrategy::Inputs2Targets => {
                let enc = represent_document(doc, rep, vocab, stopwords, enc_cap, sample_tag)?;
                let dec = docid_target(docids, &doc.doc_key, vocab, config.max_dec_len)?;
                out.push(TrainingExample {
                    enc_tokens: enc,
                    dec_targets: dec,
                    task: TaskKind::Indexing,
                });
            }
            IndexingStrategy::Targets2Inputs => {
                let enc = docid_as_input(docids, &doc.doc_key, vocab)?;
                let doc_tokens =
                    represent_document(doc, rep, vocab, stopwords, enc_cap, sample_tag)?;
                out.push(TrainingExample {
                    enc_tokens: enc,
                    dec_targets: doc_as_target(&doc_tokens, config.max_dec_len),
                    task: TaskKind::Indexing,
                });
            }
            IndexingStrategy::Bidirectional => {
                // forward direction, [IDX]-prefixed
                let doc_tokens =
                    represent_document(doc, rep, vocab, stopwords, enc_cap - 1, sample_tag)?;
                let mut enc = vec![IDX_PREFIX];
                enc.extend_from_slice(&doc_tokens);
                out.push(TrainingExample {
                    enc_tokens: enc,
                    dec_targets: docid_target(docids, &doc.doc_key, vocab, config.max_dec_len)?,
                    task: TaskKind::Indexing,
                });
                // reverse direction, [RET-DIR]-prefixed
                let mut enc = vec![RET_PREFIX];
                enc.extend_from_slice(&docid_as_input(docids, &doc.doc_key, vocab)?);
                out.push(TrainingExample {
                    enc_tokens: enc,
                    dec_targets: doc_as_target(&doc_tokens, config.max_dec_len),
                    task: TaskKind::Indexing,
                });
            }
            IndexingStrategy::SpanCorruption => {
                let mut seq = docid_as_input(docids, &doc.doc_key, vocab)?;
                let doc_tokens = represent_document(
                    doc,
                    rep,
                    vocab,
                    stopwords,
                    enc_cap.saturating_sub(seq.len()),
                    sample_tag,
                )?;
                seq.extend_from_slice(&doc_tokens);
                let mut rng = seeding::rng(seed ^ TAG_EPOCH, sample_tag);
                out.push(span_corruption_example(&seq, vocab, config, &mut rng)?);
            }
        }
    }
    Ok(out)
}

/// T5-style span corruption over the docid-prefixed sequence: ~15% of tokens
/// are deleted in spans of mean length 3; each span is replaced by a sentinel
/// in the encoder input and emitted after its sentinel in the decoder target.
pub fn span_corruption_example(
    seq: &[u32],
    vocab: &Vocabulary,
    config: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingExample> {
    let n = seq.len();
    if config.max_dec_len < 3 {
        return Err(Error::Config(
            "span corruption needs max_dec_len >= 3 (sentinel + token + EOS)".into(),
        ));
    }
    let mut n_corrupt = ((n as f64) * 0.15).round().max(1.0) as usize;
    n_corrupt = n_corrupt.min(n.saturating_sub(1)).max(1);
    let mut n_spans = ((n_corrupt as f64) / 3.0).round().max(1.0) as usize;
    n_spans = n_spans.min(SENTINEL_COUNT as usize).min(n_corrupt);
    // decoder budget: corrupted tokens + one sentinel per span + EOS,
    // with every span at least one token long
    n_spans = n_spans.min((config.max_dec_len - 1) / 2);
    n_corrupt = n_corrupt.min(config.max_dec_len - n_spans - 1);
    // interior gaps of at least one kept token separate sentinels
    let kept = n - n_corrupt;
    while n_spans > 1 && kept < n_spans - 1 {
        n_spans -= 1;
    }

    // random composition of n_corrupt into n_spans positive parts
    let mut span_lens = compose(n_corrupt - n_spans, n_spans, rng);
    for l in &mut span_lens {
        *l += 1;
    }
    // distribute spare kept tokens around the mandatory interior gaps
    let spare = kept - (n_spans - 1);
    let gaps = compose(spare, n_spans + 1, rng);

    let mut enc = Vec::with_capacity(kept + n_spans);
    let mut dec = Vec::with_capacity(n_corrupt + n_spans + 1);
    let mut pos = 0usize;
    for s in 0..n_spans {
        let gap = gaps[s] + if s > 0 { 1 } else { 0 };
        enc.extend_from_slice(&seq[pos..pos + gap]);
        pos += gap;
        enc.push(vocab.sentinel_id(s as u32));
        dec.push(vocab.sentinel_id(s as u32));
        dec.extend_from_slice(&seq[pos..pos + span_lens[s]]);
        pos += span_lens[s];
    }
    enc.extend_from_slice(&seq[pos..]);
    dec.push(EOS);

    debug_assert!(enc.len() <= config.max_enc_len);
    debug_assert!(dec.len() <= config.max_dec_len);
    Ok(TrainingExample {
        enc_tokens: enc,
        dec_targets: dec,
        task: TaskKind::Indexing,
    })
}

/// Uniform weak composition of `total` into `parts` non-negative summands
/// (stars and bars: bar positions drawn without replacement).
fn compose(total: usize, parts: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if parts == 1 {
        return vec![total];
    }
    let slots = total + parts - 1;
    let mut bars: Vec<usize> = rand::seq::index::sample(rng, slots, parts - 1).into_vec();
    bars.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev: i64 = -1;
    for &b in &bars {
        out.push((b as i64 - prev - 1) as usize);
        prev = b as i64;
    }
    out.push((slots as i64 - prev - 1) as usize);
    out
}

/// Retrieval examples: query tokens to EOS-terminated docid.
pub fn make_retrieval_examples(
    pairs: &[QueryDocPair],
    docids: &DocidAssignment,
    vocab: &Vocabulary,
    config: &ModelConfig,
) -> Result<Vec<TrainingExample>> {
    pairs
        .iter()
        .map(|p| {
            let mut enc = vocab.tokenize(&p.query);
            enc.truncate(config.max_enc_len);
            if enc.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "query '{}' tokenizes to nothing",
                    p.query
                )));
            }
            let dec = docid_target(docids, &p.doc_key, vocab, config.max_dec_len)?;
            Ok(TrainingExample {
                enc_tokens: enc,
                dec_targets: dec,
                task: TaskKind::Retrieval,
            })
        })
        .collect()
}

//! Decoding ranked docid lists from a trained model.
//!
//! Atomic docids are ranked by a single decode step from the start token
//! (sorting the docid logits). String docids are decoded with length-capped
//! beam search over the ten digit tokens plus EOS; raw cumulative
//! log-probabilities are kept (no length normalization) so a wide-enough
//! constrained beam reproduces exhaustive sequence scoring exactly. The
//! trie mask restricts candidate tokens without renormalizing, for the same
//! reason.

use crate::corpus::{Vocabulary, EOS, PAD};
use crate::docid::{DocidAssignment, DocidScheme, DocidTrie};
use crate::error::{Error, Result};
use crate::model::{decode_logits, encode, log_softmax_row, ModelParams};
use crate::par;

/// Ordered (doc_key, score) entries; scores non-increasing, keys unique.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    entries: Vec<(String, f64)>,
}

impl RankedList {
    pub fn new(mut entries: Vec<(String, f64)>) -> Self {
        entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        RankedList { entries }
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Rank (1-based) of a document, if present.
    pub fn rank_of(&self, doc_key: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|(k, _)| k == doc_key)
            .map(|i| i + 1)
    }
}

/// One beam search hypothesis over digit tokens.
#[derive(Debug, Clone)]
pub struct BeamHypothesis {
    /// Decoded digit string (no EOS).
    pub digits: String,
    /// Cumulative log-probability (includes EOS when finished).
    pub log_prob: f64,
    pub finished: bool,
}

/// Rank the docid block of a single logit row; scores are log-softmax values
/// over the *extended* vocabulary. Exposed for direct oracle testing.
pub fn rank_docid_logits(
    logit_row: &[f64],
    vocab_size: usize,
    docids: &DocidAssignment,
    topk: usize,
) -> RankedList {
    let ls = log_softmax_row(logit_row);
    let mut scored: Vec<(usize, f64)> =
        (0..docids.len()).map(|i| (i, ls[vocab_size + i])).collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let entries = scored
        .into_iter()
        .take(topk.min(docids.len()))
        .map(|(i, s)| (docids.key_at(i).expect("index in range").to_string(), s))
        .collect();
    RankedList { entries }
}

/// Atomic retrieval: one decode step from the start token, docid logits
/// sorted descending. `topk` beyond the corpus truncates naturally.
pub fn retrieve_atomic(
    params: &ModelParams,
    query_tokens: &[u32],
    docids: &DocidAssignment,
    topk: usize,
) -> Result<RankedList> {
    if params.config.n_docs == 0 || params.w_docs.is_none() {
        return Err(Error::Config(
            "atomic retrieval needs a model with a docid output block".into(),
        ));
    }
    if params.config.n_docs != docids.len() {
        return Err(Error::Config(format!(
            "model has {} docid logits but the map has {} documents",
            params.config.n_docs,
            docids.len()
        )));
    }
    let enc = encode(params, query_tokens)?;
    let logits = decode_logits(params, &enc, &[PAD])?;
    Ok(rank_docid_logits(
        logits.row(0),
        params.config.vocab_size,
        docids,
        topk,
    ))
}

/// Length-capped beam search over the digit+EOS vocabulary. When `trie` is
/// given, candidate tokens are masked to `continuations(prefix)` (EOS only at
/// stored ids). Returns all finished hypotheses plus the best unfinished one,
/// sorted by cumulative log-probability, ties broken lexicographically.
pub fn beam_search(
    params: &ModelParams,
    query_tokens: &[u32],
    vocab: &Vocabulary,
    beam_width: usize,
    max_len: usize,
    trie: Option<&DocidTrie>,
) -> Result<Vec<BeamHypothesis>> {
    if beam_width == 0 {
        return Err(Error::Config("beam_width must be >= 1".into()));
    }
    if let Some(t) = trie {
        if t.is_empty() {
            return Err(Error::InvalidInput(
                "constrained decoding over an empty trie".into(),
            ));
        }
    }
    let max_len = max_len.min(params.config.max_dec_len - 1).max(1);
    let enc = encode(params, query_tokens)?;

    struct Live {
        digits: String,
        tokens: Vec<u32>,
        log_prob: f64,
    }
    let mut live = vec![Live {
        digits: String::new(),
        tokens: vec![PAD],
        log_prob: 0.0,
    }];
    let mut finished: Vec<BeamHypothesis> = Vec::new();

    for _step in 0..=max_len {
        let rows: Vec<Vec<f64>> = par::ordered_map(&live, |hyp| {
            let logits = decode_logits(params, &enc, &hyp.tokens).expect("validated lengths");
            log_softmax_row(logits.row(logits.rows - 1))
        });
        let mut candidates: Vec<Live> = Vec::new();
        for (hyp, ls) in live.iter().zip(&rows) {
            let (digit_choices, eos_allowed): (Vec<u8>, bool) = match trie {
                Some(t) => {
                    let c = t
                        .continuations(&hyp.digits)
                        .expect("constrained prefixes stay inside the trie");
                    (c.digits, c.eos)
                }
                None => ((0..10).collect(), !hyp.digits.is_empty()),
            };
            if eos_allowed {
                finished.push(BeamHypothesis {
                    digits: hyp.digits.clone(),
                    log_prob: hyp.log_prob + ls[EOS as usize],
                    finished: true,
                });
            }
            if hyp.digits.len() < max_len {
                for d in digit_choices {
                    let tok = vocab.digit_id(d);
                    let mut tokens = hyp.tokens.clone();
                    tokens.push(tok);
                    let mut digits = hyp.digits.clone();
                    digits.push(char::from(b'0' + d));
                    candidates.push(Live {
                        digits,
                        tokens,
                        log_prob: hyp.log_prob + ls[tok as usize],
                    });
                }
            }
        }
        if candidates.is_empty() {
            live.clear();
            break;
        }
        candidates.sort_by(|a, b| {
            b.log_prob
                .partial_cmp(&a.log_prob)
                .unwrap()
                .then_with(|| a.digits.cmp(&b.digits))
        });
        candidates.truncate(beam_width);
        live = candidates;
    }

    let mut out = finished;
    if let Some(best_live) = live.first() {
        out.push(BeamHypothesis {
            digits: best_live.digits.clone(),
            log_prob: best_live.log_prob,
            finished: false,
        });
    }
    out.sort_by(|a, b| {
        b.log_prob
            .partial_cmp(&a.log_prob)
            .unwrap()
            .then_with(|| a.digits.cmp(&b.digits))
    });
    Ok(out)
}

/// Map finished hypotheses to documents. Unconstrained decoding drops digit
/// strings that are not docids; duplicates keep their best score; the list
/// truncates to `topk`.
pub fn rank_from_beam(
    hypotheses: &[BeamHypothesis],
    docids: &DocidAssignment,
    topk: usize,
    constrained: bool,
) -> RankedList {
    let mut entries: Vec<(String, f64)> = Vec::new();
    let mut seen: std::collections::HashSet<String> = Default::default();
    for hyp in hypotheses {
        if !hyp.finished {
            continue;
        }
        match docids.key_of_digits(&hyp.digits) {
            Some(key) => {
                // hypotheses arrive sorted, so the first sighting is the best
                if seen.insert(key.to_string()) {
                    entries.push((key.to_string(), hyp.log_prob));
                }
            }
            None => {
                debug_assert!(!constrained, "constrained beam produced invalid id");
            }
        }
        if entries.len() == topk {
            break;
        }
    }
    RankedList { entries }
}

/// Decode a ranked list with whichever mechanism the docid scheme requires.
pub fn decode_ranked(
    params: &ModelParams,
    query_tokens: &[u32],
    vocab: &Vocabulary,
    docids: &DocidAssignment,
    topk: usize,
    beam_width: usize,
    trie: Option<&DocidTrie>,
) -> Result<RankedList> {
    match docids.scheme() {
        DocidScheme::Atomic => retrieve_atomic(params, query_tokens, docids, topk),
        DocidScheme::Naive | DocidScheme::Semantic => {
            let hyps = beam_search(
                params,
                query_tokens,
                vocab,
                beam_width.max(topk),
                docids.max_digits(),
                trie,
            )?;
            Ok(rank_from_beam(&hyps, docids, topk, trie.is_some()))
        }
    }
}

/// Decode many queries; parallel over queries, output in input order.
pub fn decode_ranked_batch(
    params: &ModelParams,
    queries: &[Vec<u32>],
    vocab: &Vocabulary,
    docids: &DocidAssignment,
    topk: usize,
    beam_width: usize,
    trie: Option<&DocidTrie>,
) -> Result<Vec<RankedList>> {
    let results = par::ordered_map(queries, |q| {
        decode_ranked(params, q, vocab, docids, topk, beam_width, trie)
    });
    results.into_iter().collect()
}

//! Evaluation: Hits@N over ranked lists, indexing memorization, and the
//! forgetting-cycle summary of a metric trace.

use std::collections::HashSet;

use serde::Serialize;

use crate::corpus::{Corpus, Vocabulary};
use crate::docid::{DocidAssignment, DocidTrie};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::par;
use crate::retrieve::{decode_ranked, RankedList};
use crate::train::{represent_document, DocRepresentation};

/// Hit record for one query.
#[derive(Debug, Clone, Serialize)]
pub struct QueryHit {
    pub query: String,
    pub gold: String,
    /// 1-based rank of the gold document, when retrieved at all.
    pub rank: Option<usize>,
}

/// One evaluation's results.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub step: usize,
    /// N -> Hits@N ratios, exactly hits/num_queries.
    pub hits: std::collections::BTreeMap<usize, f64>,
    pub index_hits1: f64,
    pub per_query: Vec<QueryHit>,
}

impl EvalReport {
    pub fn hits_at(&self, n: usize) -> f64 {
        self.hits.get(&n).copied().unwrap_or(0.0)
    }
}

/// Fraction of queries whose gold document appears in the top N. Lists
/// shorter than N contribute whatever they contain.
pub fn hits_at_n(ranked: &[RankedList], gold: &[String], n: usize) -> Result<f64> {
    if ranked.is_empty() || ranked.len() != gold.len() {
        return Err(Error::InvalidInput(format!(
            "need one non-empty ranked list per gold key ({} lists, {} keys)",
            ranked.len(),
            gold.len()
        )));
    }
    let hits = ranked
        .iter()
        .zip(gold)
        .filter(|(r, g)| matches!(r.rank_of(g), Some(rank) if rank <= n))
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Build the per-query hit records for a report.
pub fn per_query_hits(ranked: &[RankedList], queries: &[String], gold: &[String]) -> Vec<QueryHit> {
    ranked
        .iter()
        .zip(queries.iter().zip(gold))
        .map(|(r, (q, g))| QueryHit {
            query: q.clone(),
            gold: g.clone(),
            rank: r.rank_of(g),
        })
        .collect()
}

/// Indexing memorization: feed each evaluation document's represented tokens
/// and ask whether the top-1 decoded docid is its own. `eval_keys` names the
/// documents to grade (the validation documents, per protocol).
#[allow(clippy::too_many_arguments)]
pub fn eval_indexing_memorization(
    params: &ModelParams,
    corpus: &Corpus,
    docids: &DocidAssignment,
    rep: &DocRepresentation,
    vocab: &Vocabulary,
    stopwords: &HashSet<String>,
    eval_keys: &[String],
    beam_width: usize,
    trie: Option<&DocidTrie>,
) -> Result<f64> {
    if eval_keys.is_empty() {
        return Err(Error::InvalidInput("no documents to evaluate".into()));
    }
    let hits: Vec<Result<bool>> = par::ordered_map(eval_keys, |key| {
        let doc = corpus
            .get(key)
            .ok_or_else(|| Error::InvalidInput(format!("unknown document '{key}'")))?;
        let tokens = represent_document(
            doc,
            rep,
            vocab,
            stopwords,
            params.config.max_enc_len,
            // memorization probes use a fixed sample, not per-epoch draws
            0,
        )?;
        let ranked = decode_ranked(params, &tokens, vocab, docids, 1, beam_width, trie)?;
        Ok(ranked.entries().first().is_some_and(|(k, _)| k == key))
    });
    let mut correct = 0usize;
    for h in hits {
        if h? {
            correct += 1;
        }
    }
    Ok(correct as f64 / eval_keys.len() as f64)
}

/// Peak / trough / average summary of a validation-metric trace.
///
/// Peak is the global maximum. The trough is the highest of the local minima
/// occurring after the first peak, with the final value always a candidate
/// (the trace usually ends mid-cycle). A trace with no interior local minima
/// after the first peak (e.g. monotone) is flagged and uses the final value.
#[derive(Debug, Clone, Serialize)]
pub struct ForgettingSummary {
    pub peak_step: usize,
    pub peak: f64,
    pub trough_step: usize,
    pub trough: f64,
    pub average: f64,
    /// No interior local minimum existed after the first peak.
    pub monotone_flagged: bool,
}

pub fn track_forgetting(trace: &[(usize, f64)]) -> Result<ForgettingSummary> {
    if trace.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "forgetting summary needs at least 3 points, got {}",
            trace.len()
        )));
    }
    let values: Vec<f64> = trace.iter().map(|&(_, v)| v).collect();
    let n = values.len();

    let peak_idx = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .expect("non-empty");

    let is_local_max = |i: usize| {
        (i == 0 || values[i] >= values[i - 1]) && (i == n - 1 || values[i] >= values[i + 1])
    };
    let first_peak = (0..n)
        .find(|&i| is_local_max(i))
        .expect("some local max exists");

    let mut candidates: Vec<usize> = (first_peak + 1..n - 1)
        .filter(|&j| values[j] <= values[j - 1] && values[j] <= values[j + 1])
        .collect();
    let monotone_flagged = candidates.is_empty();
    candidates.push(n - 1);

    let trough_idx = candidates
        .into_iter()
        .max_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(b.cmp(&a)))
        .expect("non-empty");

    let peak = values[peak_idx];
    let trough = values[trough_idx];
    Ok(ForgettingSummary {
        peak_step: trace[peak_idx].0,
        peak,
        trough_step: trace[trough_idx].0,
        trough,
        average: (peak + trough) / 2.0,
        monotone_flagged,
    })
}

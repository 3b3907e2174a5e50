//! Shared-tower dual encoder trained with in-batch contrastive loss.
//!
//! One encoder (the sequence model's encoder stack with mean pooling and L2
//! normalization) embeds queries and documents. Training minimizes softmax
//! cross entropy over the batch similarity matrix: query i against every
//! batch document, target i, similarities scaled by 1/temperature. Retrieval
//! is exact dot-product top-k over precomputed document embeddings.

use rand::seq::SliceRandom;

use crate::corpus::{Corpus, QueryDocPair, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{
    adam_step, encode_pooled, encode_pooled_with_tape, pooled_backward, AdamState, Gradients,
    ModelParams,
};
use crate::par;
use crate::retrieve::RankedList;
use crate::seeding;
use crate::tensor::{dot, Tensor};

const TAG_DE_EPOCH: u64 = 0x44455045;

/// Trained dual-encoder: the shared tower plus the document matrix.
pub struct DualEncoderState {
    pub encoder: ModelParams,
    /// `n_docs x d_model`, rows L2-normalized, aligned with corpus order.
    pub doc_embeddings: Tensor,
    pub doc_keys: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct DeTrainOptions {
    pub batch_size: usize,
    pub steps: usize,
    pub temperature: f64,
    pub lr: f64,
    pub seed: u64,
    /// Early stop when the mean loss over a window improves by less than
    /// `plateau_tol` relative to the previous window. 0 disables.
    pub plateau_window: usize,
    pub plateau_tol: f64,
}

impl Default for DeTrainOptions {
    fn default() -> Self {
        DeTrainOptions {
            batch_size: 8,
            steps: 2000,
            temperature: 0.05,
            lr: 1e-3,
            seed: 0,
            plateau_window: 100,
            plateau_tol: 1e-3,
        }
    }
}

/// Softmax cross entropy over a similarity matrix with diagonal targets.
pub fn contrastive_loss(sim: &Tensor) -> f64 {
    debug_assert_eq!(sim.rows, sim.cols);
    let mut total = 0.0;
    for i in 0..sim.rows {
        let ls = crate::model::log_softmax_row(sim.row(i));
        total -= ls[i];
    }
    total / sim.rows as f64
}

fn truncate_tokens(mut tokens: Vec<u32>, cap: usize) -> Vec<u32> {
    tokens.truncate(cap);
    tokens
}

/// Loss of one in-batch-negative step (queries[i] pairs with docs[i]).
#[allow(clippy::needless_range_loop)]
pub fn de_batch_loss(
    params: &ModelParams,
    queries: &[Vec<u32>],
    docs: &[Vec<u32>],
    temperature: f64,
) -> Result<f64> {
    let b = queries.len();
    let q_emb: Vec<Vec<f64>> = queries
        .iter()
        .map(|q| encode_pooled(params, q))
        .collect::<Result<_>>()?;
    let d_emb: Vec<Vec<f64>> = docs
        .iter()
        .map(|d| encode_pooled(params, d))
        .collect::<Result<_>>()?;
    let mut sim = Tensor::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            *sim.at_mut(i, j) = dot(&q_emb[i], &d_emb[j]) / temperature;
        }
    }
    Ok(contrastive_loss(&sim))
}

/// Loss and exact gradients of one in-batch-negative step.
#[allow(clippy::needless_range_loop)]
pub fn de_batch_backward(
    params: &ModelParams,
    queries: &[Vec<u32>],
    docs: &[Vec<u32>],
    temperature: f64,
) -> Result<(f64, Gradients)> {
    let b = queries.len();
    if b < 2 {
        return Err(Error::Config(
            "dual-encoder batches need at least 2 pairs (in-batch negatives)".into(),
        ));
    }
    if docs.len() != b {
        return Err(Error::InvalidInput("query/doc count mismatch".into()));
    }

    // embed both towers (shared parameters), keeping tapes
    let all: Vec<&Vec<u32>> = queries.iter().chain(docs.iter()).collect();
    let encoded: Vec<Result<(Vec<f64>, crate::model::PooledTape)>> =
        par::ordered_map(&all, |tokens| encode_pooled_with_tape(params, tokens));
    let mut q_emb = Vec::with_capacity(b);
    let mut tapes = Vec::with_capacity(2 * b);
    let mut d_emb = Vec::with_capacity(b);
    for (i, res) in encoded.into_iter().enumerate() {
        let (v, tape) = res?;
        if i < b {
            q_emb.push(v);
        } else {
            d_emb.push(v);
        }
        tapes.push(tape);
    }

    let mut sim = Tensor::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            *sim.at_mut(i, j) = dot(&q_emb[i], &d_emb[j]) / temperature;
        }
    }
    let loss = contrastive_loss(&sim);

    // d loss / d sim = (softmax(row) - onehot) / B
    let mut d_sim = Tensor::zeros(b, b);
    for i in 0..b {
        let ls = crate::model::log_softmax_row(sim.row(i));
        let out = d_sim.row_mut(i);
        for j in 0..b {
            out[j] = ls[j].exp() / b as f64;
        }
        out[i] -= 1.0 / b as f64;
    }

    // gradients on the embeddings
    let d = params.config.d_model;
    let mut d_vecs: Vec<Vec<f64>> = vec![vec![0.0; d]; 2 * b];
    for i in 0..b {
        for j in 0..b {
            let g = d_sim.at(i, j) / temperature;
            for k in 0..d {
                d_vecs[i][k] += g * d_emb[j][k];
                d_vecs[b + j][k] += g * q_emb[i][k];
            }
        }
    }

    // back through the shared tower, reduced in sequence order
    let per_seq: Vec<Gradients> = par::ordered_map_range(2 * b, |i| {
        let mut g = params.zeros_like();
        pooled_backward(params, &tapes[i], &d_vecs[i], &mut g);
        g
    });
    let mut grads = params.zeros_like();
    for g in &per_seq {
        grads.accumulate(g, 1.0);
    }
    Ok((loss, grads))
}

/// Train the shared tower on query-document pairs and precompute the
/// document matrix. Returns the state and the per-step loss trace.
pub fn de_train(
    mut encoder: ModelParams,
    corpus: &Corpus,
    pairs: &[QueryDocPair],
    vocab: &Vocabulary,
    options: &DeTrainOptions,
) -> Result<(DualEncoderState, Vec<f64>)> {
    if options.batch_size < 2 {
        return Err(Error::Config(
            "dual-encoder batch_size must be >= 2 (in-batch negatives)".into(),
        ));
    }
    if pairs.len() < options.batch_size {
        return Err(Error::InvalidInput(format!(
            "need at least {} pairs for one batch, got {}",
            options.batch_size,
            pairs.len()
        )));
    }
    let cap = encoder.config.max_enc_len;
    let tokenized: Vec<(Vec<u32>, Vec<u32>)> = pairs
        .iter()
        .map(|p| {
            let doc = corpus
                .get(&p.doc_key)
                .ok_or_else(|| Error::InvalidInput(format!("pair references '{}'", p.doc_key)))?;
            Ok((
                truncate_tokens(vocab.tokenize(&p.query), cap),
                truncate_tokens(vocab.tokenize(&doc.text), cap),
            ))
        })
        .collect::<Result<_>>()?;

    let mut opt = AdamState::new(
        &encoder,
        crate::model::AdamHyper {
            lr: options.lr,
            ..Default::default()
        },
    );
    let mut order: Vec<usize> = (0..tokenized.len()).collect();
    let mut pos = order.len(); // trigger shuffle on first use
    let mut epoch = 0u64;
    let mut losses = Vec::with_capacity(options.steps);
    let mut prev_window: Option<f64> = None;

    for step in 0..options.steps {
        let mut queries = Vec::with_capacity(options.batch_size);
        let mut docs = Vec::with_capacity(options.batch_size);
        for _ in 0..options.batch_size {
            if pos >= order.len() {
                let mut rng = seeding::rng(options.seed ^ TAG_DE_EPOCH, epoch);
                order.shuffle(&mut rng);
                pos = 0;
                epoch += 1;
            }
            let (q, d) = &tokenized[order[pos]];
            queries.push(q.clone());
            docs.push(d.clone());
            pos += 1;
        }
        let (loss, grads) = de_batch_backward(&encoder, &queries, &docs, options.temperature)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, value: loss });
        }
        adam_step(&mut opt, &mut encoder, &grads);
        losses.push(loss);

        // plateau check on trailing windows
        let w = options.plateau_window;
        if w > 0 && losses.len() % w == 0 {
            let cur = losses[losses.len() - w..].iter().sum::<f64>() / w as f64;
            if let Some(prev) = prev_window {
                if prev - cur < options.plateau_tol {
                    break;
                }
            }
            prev_window = Some(cur);
        }
    }

    let doc_embeddings = embed_corpus(&encoder, corpus, vocab)?;
    Ok((
        DualEncoderState {
            encoder,
            doc_embeddings,
            doc_keys: corpus.docs().iter().map(|d| d.doc_key.clone()).collect(),
        },
        losses,
    ))
}

/// Embed every document (parallel over documents, corpus order).
pub fn embed_corpus(params: &ModelParams, corpus: &Corpus, vocab: &Vocabulary) -> Result<Tensor> {
    let cap = params.config.max_enc_len;
    let rows: Vec<Result<Vec<f64>>> = par::ordered_map(corpus.docs(), |d| {
        encode_pooled(params, &truncate_tokens(vocab.tokenize(&d.text), cap))
    });
    let mut x = Tensor::zeros(corpus.len(), params.config.d_model);
    for (i, r) in rows.into_iter().enumerate() {
        x.row_mut(i).copy_from_slice(&r?);
    }
    Ok(x)
}

/// Exact dot-product top-k against the precomputed document matrix.
pub fn de_retrieve(
    state: &DualEncoderState,
    query: &str,
    vocab: &Vocabulary,
    topk: usize,
) -> Result<RankedList> {
    let cap = state.encoder.config.max_enc_len;
    let q = encode_pooled(&state.encoder, &truncate_tokens(vocab.tokenize(query), cap))?;
    let mut entries: Vec<(String, f64)> = state
        .doc_keys
        .iter()
        .enumerate()
        .map(|(i, k)| (k.clone(), dot(&q, state.doc_embeddings.row(i))))
        .collect();
    entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    entries.truncate(topk);
    Ok(RankedList::new(entries))
}

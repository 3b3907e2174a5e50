//! Forward pass with activation tapes.
//!
//! Pre-LN residual blocks, GELU feed-forward, learned positional embeddings,
//! causal decoder mask, cross-attention over the encoder output, and a final
//! projection through the tied token embedding concatenated with the docid
//! block. Every intermediate needed by the backward pass is cached in a tape.
//!
//! Masking conventions: encoder self-attention and decoder cross-attention
//! mask PAD key positions; decoder self-attention is causal (teacher-forced
//! targets are PAD-masked in the loss instead).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{AttnWeights, LayerNorm, ModelParams};
use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::tensor::{dot, l2_norm, Tensor};

pub(crate) const LN_EPS: f64 = 1e-6;
const MASKED_SCORE: f64 = -1e30;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Numerically stable log-softmax of one logit row.
pub(crate) fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|z| z - lse).collect()
}

// --- tapes -------------------------------------------------------------------

pub(crate) struct LnTape {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub out: Tensor,
}

pub(crate) struct AttnTape {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    /// Per-head attention weights, each `queries x keys`.
    pub attn: Vec<Tensor>,
    pub ctx: Tensor,
}

pub(crate) struct FfnTape {
    pub pre: Tensor,
    pub act: Tensor,
}

pub(crate) struct EncBlockTape {
    pub ln1: LnTape,
    pub attn: AttnTape,
    pub drop1: Option<Tensor>,
    pub ln2: LnTape,
    pub ffn: FfnTape,
    pub drop2: Option<Tensor>,
}

pub(crate) struct DecBlockTape {
    pub ln1: LnTape,
    pub self_attn: AttnTape,
    pub drop1: Option<Tensor>,
    pub ln2: LnTape,
    pub cross_attn: AttnTape,
    pub drop2: Option<Tensor>,
    pub ln3: LnTape,
    pub ffn: FfnTape,
    pub drop3: Option<Tensor>,
}

/// Encoder output plus everything the backward pass needs.
pub struct Encoded {
    pub(crate) tokens: Vec<u32>,
    /// true where the position is a real (non-PAD) token
    pub(crate) real: Vec<bool>,
    pub(crate) layers: Vec<EncBlockTape>,
    pub(crate) final_ln: LnTape,
}

impl Encoded {
    /// Final encoder states, one row per input position.
    pub fn memory(&self) -> &Tensor {
        &self.final_ln.out
    }

    pub fn real_positions(&self) -> &[bool] {
        &self.real
    }
}

pub(crate) struct DecTape {
    pub x0_tokens: Vec<u32>,
    pub layers: Vec<DecBlockTape>,
    pub final_ln: LnTape,
}

// --- building blocks -----------------------------------------------------------

pub(crate) fn layer_norm_fwd(x: &Tensor, ln: &LayerNorm) -> LnTape {
    let d = x.cols;
    let mut xhat = Tensor::zeros(x.rows, d);
    let mut out = Tensor::zeros(x.rows, d);
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mu = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        let xh = xhat.row_mut(r);
        let o = out.row_mut(r);
        for i in 0..d {
            xh[i] = (row[i] - mu) * is;
            o[i] = ln.gain.data[i] * xh[i] + ln.bias.data[i];
        }
    }
    LnTape { xhat, inv_std, out }
}

pub(crate) enum AttnMask<'a> {
    /// Attend only to key positions flagged true.
    Keys(&'a [bool]),
    /// Attend only to key positions at or before the query position.
    Causal,
}

pub(crate) fn head_cols(x: &Tensor, h: usize, dh: usize) -> Tensor {
    let mut out = Tensor::zeros(x.rows, dh);
    for r in 0..x.rows {
        out.row_mut(r)
            .copy_from_slice(&x.row(r)[h * dh..(h + 1) * dh]);
    }
    out
}

pub(crate) fn add_head_cols(dst: &mut Tensor, h: usize, dh: usize, src: &Tensor) {
    for r in 0..src.rows {
        let d_row = dst.row_mut(r);
        for (i, v) in src.row(r).iter().enumerate() {
            d_row[h * dh + i] += v;
        }
    }
}

pub(crate) fn attention_fwd(
    xq_ln: &Tensor,
    xkv: &Tensor,
    w: &AttnWeights,
    n_heads: usize,
    mask: &AttnMask,
) -> AttnTape {
    let d = xq_ln.cols;
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let q = xq_ln.matmul(&w.wq);
    let k = xkv.matmul(&w.wk);
    let v = xkv.matmul(&w.wv);

    let mut ctx = Tensor::zeros(xq_ln.rows, d);
    let mut attn = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = head_cols(&q, h, dh);
        let kh = head_cols(&k, h, dh);
        let vh = head_cols(&v, h, dh);
        let mut scores = qh.matmul_bt(&kh);
        scores.scale(scale);
        for t in 0..scores.rows {
            let row = scores.row_mut(t);
            match mask {
                AttnMask::Keys(real) => {
                    for (s, r) in real.iter().enumerate() {
                        if !r {
                            row[s] = MASKED_SCORE;
                        }
                    }
                }
                AttnMask::Causal => {
                    for item in row.iter_mut().skip(t + 1) {
                        *item = MASKED_SCORE;
                    }
                }
            }
            softmax_in_place(row);
        }
        let ch = scores.matmul(&vh);
        add_head_cols(&mut ctx, h, dh, &ch);
        attn.push(scores);
    }
    AttnTape { q, k, v, attn, ctx }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn ffn_fwd(x_ln: &Tensor, w1: &Tensor, w2: &Tensor) -> (FfnTape, Tensor) {
    let pre = x_ln.matmul(w1);
    let mut act = pre.clone();
    for v in &mut act.data {
        *v = gelu(*v);
    }
    let out = act.matmul(w2);
    (FfnTape { pre, act }, out)
}

/// Inverted dropout mask (entries 0 or 1/(1-p)), or None at rate 0.
fn dropout_mask(
    rows: usize,
    cols: usize,
    rate: f64,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Option<Tensor> {
    match rng {
        Some(r) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            let data = (0..rows * cols)
                .map(|_| if r.gen::<f64>() < rate { 0.0 } else { keep })
                .collect();
            Some(Tensor::from_vec(rows, cols, data))
        }
        _ => None,
    }
}

fn apply_mask(x: &mut Tensor, mask: &Option<Tensor>) {
    if let Some(m) = mask {
        for (v, k) in x.data.iter_mut().zip(&m.data) {
            *v *= k;
        }
    }
}

// --- encoder -------------------------------------------------------------------

fn embed_rows(
    params: &ModelParams,
    tokens: &[u32],
    pos: &Tensor,
    extended: bool,
) -> Result<Tensor> {
    let n_tokens = params.config.vocab_size as u32;
    let limit = if extended {
        n_tokens + params.config.n_docs as u32
    } else {
        n_tokens
    };
    let d = params.config.d_model;
    let mut x = Tensor::zeros(tokens.len(), d);
    for (t, &id) in tokens.iter().enumerate() {
        if id >= limit {
            return Err(Error::TokenOutOfRange { id, limit });
        }
        let row = x.row_mut(t);
        if id < n_tokens {
            let e = params.w_tokens.row(id as usize);
            let p = pos.row(t);
            for i in 0..d {
                row[i] = e[i] + p[i];
            }
        } else {
            // atomic docids have no input embedding (output-side only);
            // the position embedding alone frames the post-docid EOS step
            row.copy_from_slice(pos.row(t));
        }
    }
    Ok(x)
}

pub(crate) fn encode_internal(
    params: &ModelParams,
    tokens: &[u32],
    mut drop_rng: Option<&mut ChaCha8Rng>,
) -> Result<Encoded> {
    let cfg = &params.config;
    if tokens.is_empty() || tokens.len() > cfg.max_enc_len {
        return Err(Error::InvalidInput(format!(
            "encoder input length {} outside 1..={}",
            tokens.len(),
            cfg.max_enc_len
        )));
    }
    let real: Vec<bool> = tokens.iter().map(|&t| t != PAD).collect();
    if !real.iter().any(|&r| r) {
        return Err(Error::InvalidInput("encoder input is all padding".into()));
    }

    let mut x = embed_rows(params, tokens, &params.pos_enc, false)?;
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for layer in &params.enc_layers {
        let ln1 = layer_norm_fwd(&x, &layer.ln1);
        let attn = attention_fwd(
            &ln1.out,
            &ln1.out,
            &layer.attn,
            cfg.n_heads,
            &AttnMask::Keys(&real),
        );
        let mut attn_out = attn.ctx.matmul(&layer.attn.wo);
        let drop1 = dropout_mask(attn_out.rows, attn_out.cols, cfg.dropout, &mut drop_rng);
        apply_mask(&mut attn_out, &drop1);
        x.add_assign(&attn_out);

        let ln2 = layer_norm_fwd(&x, &layer.ln2);
        let (ffn, mut ffn_out) = ffn_fwd(&ln2.out, &layer.ffn.w1, &layer.ffn.w2);
        let drop2 = dropout_mask(ffn_out.rows, ffn_out.cols, cfg.dropout, &mut drop_rng);
        apply_mask(&mut ffn_out, &drop2);
        x.add_assign(&ffn_out);

        layers.push(EncBlockTape {
            ln1,
            attn,
            drop1,
            ln2,
            ffn,
            drop2,
        });
    }
    let final_ln = layer_norm_fwd(&x, &params.enc_ln);
    Ok(Encoded {
        tokens: tokens.to_vec(),
        real,
        layers,
        final_ln,
    })
}

/// Run the encoder (no dropout). The result can be reused across decode calls.
pub fn encode(params: &ModelParams, tokens: &[u32]) -> Result<Encoded> {
    encode_internal(params, tokens, None)
}

// --- decoder -------------------------------------------------------------------

pub(crate) fn decode_internal(
    params: &ModelParams,
    enc: &Encoded,
    dec_tokens: &[u32],
    mut drop_rng: Option<&mut ChaCha8Rng>,
) -> Result<(Tensor, DecTape)> {
    let cfg = &params.config;
    if dec_tokens.is_empty() || dec_tokens.len() > cfg.max_dec_len {
        return Err(Error::InvalidInput(format!(
            "decoder input length {} outside 1..={}",
            dec_tokens.len(),
            cfg.max_dec_len
        )));
    }

    let mut x = embed_rows(params, dec_tokens, &params.pos_dec, true)?;
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for layer in &params.dec_layers {
        let ln1 = layer_norm_fwd(&x, &layer.ln1);
        let self_attn = attention_fwd(
            &ln1.out,
            &ln1.out,
            &layer.self_attn,
            cfg.n_heads,
            &AttnMask::Causal,
        );
        let mut self_out = self_attn.ctx.matmul(&layer.self_attn.wo);
        let drop1 = dropout_mask(self_out.rows, self_out.cols, cfg.dropout, &mut drop_rng);
        apply_mask(&mut self_out, &drop1);
        x.add_assign(&self_out);

        let ln2 = layer_norm_fwd(&x, &layer.ln2);
        let cross_attn = attention_fwd(
            &ln2.out,
            enc.memory(),
            &layer.cross_attn,
            cfg.n_heads,
            &AttnMask::Keys(&enc.real),
        );
        let mut cross_out = cross_attn.ctx.matmul(&layer.cross_attn.wo);
        let drop2 = dropout_mask(cross_out.rows, cross_out.cols, cfg.dropout, &mut drop_rng);
        apply_mask(&mut cross_out, &drop2);
        x.add_assign(&cross_out);

        let ln3 = layer_norm_fwd(&x, &layer.ln3);
        let (ffn, mut ffn_out) = ffn_fwd(&ln3.out, &layer.ffn.w1, &layer.ffn.w2);
        let drop3 = dropout_mask(ffn_out.rows, ffn_out.cols, cfg.dropout, &mut drop_rng);
        apply_mask(&mut ffn_out, &drop3);
        x.add_assign(&ffn_out);

        layers.push(DecBlockTape {
            ln1,
            self_attn,
            drop1,
            ln2,
            cross_attn,
            drop2,
            ln3,
            ffn,
            drop3,
        });
    }
    let final_ln = layer_norm_fwd(&x, &params.dec_ln);

    // output projection through [W_tokens ; W_docs]^T
    let h = &final_ln.out;
    let token_logits = h.matmul_bt(&params.w_tokens);
    let mut logits = Tensor::zeros(h.rows, cfg.extended_vocab());
    for t in 0..h.rows {
        logits.row_mut(t)[..cfg.vocab_size].copy_from_slice(token_logits.row(t));
    }
    if let Some(w_docs) = &params.w_docs {
        let doc_logits = h.matmul_bt(w_docs);
        for t in 0..h.rows {
            logits.row_mut(t)[cfg.vocab_size..].copy_from_slice(doc_logits.row(t));
        }
    }

    Ok((
        logits,
        DecTape {
            x0_tokens: dec_tokens.to_vec(),
            layers,
            final_ln,
        },
    ))
}

/// Decode logits against a prepared encoding; one row per decoder position.
pub fn decode_logits(params: &ModelParams, enc: &Encoded, dec_tokens: &[u32]) -> Result<Tensor> {
    decode_internal(params, enc, dec_tokens, None).map(|(logits, _)| logits)
}

/// Full forward pass: logits of shape `dec_len x (vocab_size + n_docs)`.
pub fn forward(params: &ModelParams, enc_tokens: &[u32], dec_tokens: &[u32]) -> Result<Tensor> {
    let enc = encode(params, enc_tokens)?;
    decode_logits(params, &enc, dec_tokens)
}

// --- loss ---------------------------------------------------------------------

/// Mean token-level cross entropy over non-PAD target positions.
pub fn loss(logits: &Tensor, targets: &[u32]) -> Result<f64> {
    let (total, count) = ce_sum(logits, targets)?;
    Ok(total / count as f64)
}

/// Summed cross entropy and the non-PAD token count.
pub(crate) fn ce_sum(logits: &Tensor, targets: &[u32]) -> Result<(f64, usize)> {
    if targets.len() != logits.rows {
        return Err(Error::InvalidInput(format!(
            "targets ({}) do not match logit rows ({})",
            targets.len(),
            logits.rows
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, &y) in targets.iter().enumerate() {
        if y == PAD {
            continue;
        }
        if y as usize >= logits.cols {
            return Err(Error::TokenOutOfRange {
                id: y,
                limit: logits.cols as u32,
            });
        }
        let ls = log_softmax(logits.row(t));
        total -= ls[y as usize];
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidInput(
            "all target positions are padding".into(),
        ));
    }
    Ok((total, count))
}

// --- batches ------------------------------------------------------------------

/// One teacher-forced example: the decoder input is the EOS-terminated target
/// shifted right behind the PAD start token.
#[derive(Debug, Clone)]
pub struct BatchExample {
    pub enc_tokens: Vec<u32>,
    pub dec_input: Vec<u32>,
    pub dec_targets: Vec<u32>,
}

impl BatchExample {
    /// Frame a (source, EOS-terminated target) pair for teacher forcing.
    pub fn new(enc_tokens: Vec<u32>, dec_targets: Vec<u32>) -> Self {
        let mut dec_input = Vec::with_capacity(dec_targets.len());
        dec_input.push(PAD);
        dec_input.extend_from_slice(&dec_targets[..dec_targets.len().saturating_sub(1)]);
        BatchExample {
            enc_tokens,
            dec_input,
            dec_targets,
        }
    }
}

/// A gradient batch.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub examples: Vec<BatchExample>,
}

// --- pooled encoding ------------------------------------------------------------

/// Tape for the pooled encoder path (dual-encoder training).
pub struct PooledTape {
    pub(crate) enc: Encoded,
    pub(crate) u: Vec<f64>,
    pub(crate) norm_u: f64,
}

/// Mean-pool of final encoder states over non-PAD positions, L2-normalized.
pub fn encode_pooled(params: &ModelParams, tokens: &[u32]) -> Result<Vec<f64>> {
    encode_pooled_with_tape(params, tokens).map(|(v, _)| v)
}

/// Pooled encoding plus the tape needed for its backward pass.
pub fn encode_pooled_with_tape(
    params: &ModelParams,
    tokens: &[u32],
) -> Result<(Vec<f64>, PooledTape)> {
    let enc = encode(params, tokens)?;
    let d = params.config.d_model;
    let n_real = enc.real.iter().filter(|&&r| r).count();
    let mut u = vec![0.0; d];
    for (t, &r) in enc.real.iter().enumerate() {
        if r {
            for (a, b) in u.iter_mut().zip(enc.memory().row(t)) {
                *a += b / n_real as f64;
            }
        }
    }
    let norm_u = l2_norm(&u);
    let v: Vec<f64> = u.iter().map(|x| x / norm_u).collect();
    Ok((v, PooledTape { enc, u, norm_u }))
}

/// Backpropagate a gradient on the pooled vector into `grads`.
pub fn pooled_backward(
    params: &ModelParams,
    tape: &PooledTape,
    d_v: &[f64],
    grads: &mut ModelParams,
) {
    // v = u / ||u||  =>  du = (dv - (dv . v) v) / ||u||
    let v: Vec<f64> = tape.u.iter().map(|x| x / tape.norm_u).collect();
    let proj = dot(d_v, &v);
    let du: Vec<f64> = d_v
        .iter()
        .zip(&v)
        .map(|(dv, vi)| (dv - proj * vi) / tape.norm_u)
        .collect();

    let n_real = tape.enc.real.iter().filter(|&&r| r).count() as f64;
    let mut d_memory = Tensor::zeros(tape.enc.memory().rows, params.config.d_model);
    for (t, &r) in tape.enc.real.iter().enumerate() {
        if r {
            let row = d_memory.row_mut(t);
            for (o, g) in row.iter_mut().zip(&du) {
                *o = g / n_real;
            }
        }
    }
    super::backward::encoder_backward(params, &tape.enc, &d_memory, grads);
}

//! The sequence model: a small transformer encoder-decoder trained from
//! scratch, with hand-derived gradients and Adam.
//!
//! The output layer concatenates the (tied) token embedding with an optional
//! per-document block, so one logit row spans `vocab_size + n_docs` entries;
//! the document block exists only when the atomic docid scheme is in use.
//! All math is f64; checkpoints store tensors as 32-bit little-endian floats.

mod adam;
mod backward;
mod checkpoint;
mod forward;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use backward::backward;
pub use checkpoint::{load_checkpoint, load_checkpoint_checked, save_checkpoint};
pub use forward::{
    encode, encode_pooled, encode_pooled_with_tape, forward, loss, pooled_backward, Batch,
    BatchExample, Encoded, PooledTape,
};

/// Numerically stable log-softmax of one logit row.
pub fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    forward::log_softmax(row)
}

/// Decode one step of logits against a prepared encoding.
pub use forward::decode_logits;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;
use crate::tensor::Tensor;

/// Architecture and training-relevant hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_enc_len: usize,
    pub max_dec_len: usize,
    /// Base vocabulary size (N_tokens).
    pub vocab_size: usize,
    /// Document count for the atomic output block; 0 for string docids.
    pub n_docs: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        // desk-scale defaults: trains in minutes on CPU
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_enc_len: 64,
            max_dec_len: 12,
            vocab_size: 1024,
            n_docs: 0,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers == 0 || self.d_ff == 0 {
            return Err(Error::Config("n_layers and d_ff must be at least 1".into()));
        }
        if self.max_enc_len == 0 || self.max_dec_len == 0 {
            return Err(Error::Config(
                "sequence length limits must be at least 1".into(),
            ));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Width of one logit row: base vocabulary plus the docid block.
    pub fn extended_vocab(&self) -> usize {
        self.vocab_size + self.n_docs
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Gain and bias of one layer norm, stored as 1 x d tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    fn identity(d: usize) -> Self {
        LayerNorm {
            gain: Tensor::filled(1, d, 1.0),
            bias: Tensor::zeros(1, d),
        }
    }
}

/// Q/K/V/O projections of one attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

impl AttnWeights {
    fn init(d: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        AttnWeights {
            wq: Tensor::randn(d, d, std, rng),
            wk: Tensor::randn(d, d, std, rng),
            wv: Tensor::randn(d, d, std, rng),
            wo: Tensor::randn(d, d, std, rng),
        }
    }
}

/// Two-layer feed-forward block (GELU between).
#[derive(Debug, Clone, PartialEq)]
pub struct FfnWeights {
    pub w1: Tensor,
    pub w2: Tensor,
}

impl FfnWeights {
    fn init(d: usize, d_ff: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        FfnWeights {
            w1: Tensor::randn(d, d_ff, std, rng),
            w2: Tensor::randn(d_ff, d, std, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub attn: AttnWeights,
    pub ln2: LayerNorm,
    pub ffn: FfnWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub ln1: LayerNorm,
    pub self_attn: AttnWeights,
    pub ln2: LayerNorm,
    pub cross_attn: AttnWeights,
    pub ln3: LayerNorm,
    pub ffn: FfnWeights,
}

/// All learnable tensors. The same tree shape doubles as the gradient
/// container: `Gradients` is this struct with gradient values in the slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// Token embedding, `vocab_size x d`; also the output projection (tied).
    pub w_tokens: Tensor,
    /// Docid output embedding, `n_docs x d`; output-side only.
    pub w_docs: Option<Tensor>,
    pub pos_enc: Tensor,
    pub pos_dec: Tensor,
    pub enc_layers: Vec<EncoderLayer>,
    pub dec_layers: Vec<DecoderLayer>,
    pub enc_ln: LayerNorm,
    pub dec_ln: LayerNorm,
}

pub type Gradients = ModelParams;

const TAG_INIT: u64 = 0x494e4954;

/// Seeded Gaussian init scaled 1/sqrt(d_model); `W_docs` is created the same
/// way when `n_docs > 0` (docid embeddings start as fresh random parameters).
pub fn init_params(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let d = config.d_model;
    let std = 1.0 / (d as f64).sqrt();
    let mut rng = seeding::rng(config.seed, TAG_INIT);

    let w_tokens = Tensor::randn(config.vocab_size, d, std, &mut rng);
    let w_docs = (config.n_docs > 0).then(|| Tensor::randn(config.n_docs, d, std, &mut rng));
    let pos_enc = Tensor::randn(config.max_enc_len, d, std, &mut rng);
    let pos_dec = Tensor::randn(config.max_dec_len, d, std, &mut rng);

    let enc_layers = (0..config.n_layers)
        .map(|_| EncoderLayer {
            ln1: LayerNorm::identity(d),
            attn: AttnWeights::init(d, std, &mut rng),
            ln2: LayerNorm::identity(d),
            ffn: FfnWeights::init(d, config.d_ff, std, &mut rng),
        })
        .collect();
    let dec_layers = (0..config.n_layers)
        .map(|_| DecoderLayer {
            ln1: LayerNorm::identity(d),
            self_attn: AttnWeights::init(d, std, &mut rng),
            ln2: LayerNorm::identity(d),
            cross_attn: AttnWeights::init(d, std, &mut rng),
            ln3: LayerNorm::identity(d),
            ffn: FfnWeights::init(d, config.d_ff, std, &mut rng),
        })
        .collect();

    Ok(ModelParams {
        config: *config,
        w_tokens,
        w_docs,
        pos_enc,
        pos_dec,
        enc_layers,
        dec_layers,
        enc_ln: LayerNorm::identity(d),
        dec_ln: LayerNorm::identity(d),
    })
}

macro_rules! visit_tensors {
    ($self:expr, $out:expr, $wrap:ident) => {{
        $out.push(("w_tokens".to_string(), $wrap!($self.w_tokens)));
        if let Some(w) = $wrap!(opt $self.w_docs) {
            $out.push(("w_docs".to_string(), w));
        }
        $out.push(("pos_enc".to_string(), $wrap!($self.pos_enc)));
        $out.push(("pos_dec".to_string(), $wrap!($self.pos_dec)));
        for (i, layer) in $wrap!(iter $self.enc_layers).enumerate() {
            $out.push((format!("enc.{i}.ln1.g"), $wrap!(layer.ln1.gain)));
            $out.push((format!("enc.{i}.ln1.b"), $wrap!(layer.ln1.bias)));
            $out.push((format!("enc.{i}.attn.wq"), $wrap!(layer.attn.wq)));
            $out.push((format!("enc.{i}.attn.wk"), $wrap!(layer.attn.wk)));
            $out.push((format!("enc.{i}.attn.wv"), $wrap!(layer.attn.wv)));
            $out.push((format!("enc.{i}.attn.wo"), $wrap!(layer.attn.wo)));
            $out.push((format!("enc.{i}.ln2.g"), $wrap!(layer.ln2.gain)));
            $out.push((format!("enc.{i}.ln2.b"), $wrap!(layer.ln2.bias)));
            $out.push((format!("enc.{i}.ffn.w1"), $wrap!(layer.ffn.w1)));
            $out.push((format!("enc.{i}.ffn.w2"), $wrap!(layer.ffn.w2)));
        }
        for (i, layer) in $wrap!(iter $self.dec_layers).enumerate() {
            $out.push((format!("dec.{i}.ln1.g"), $wrap!(layer.ln1.gain)));
            $out.push((format!("dec.{i}.ln1.b"), $wrap!(layer.ln1.bias)));
            $out.push((format!("dec.{i}.self.wq"), $wrap!(layer.self_attn.wq)));
            $out.push((format!("dec.{i}.self.wk"), $wrap!(layer.self_attn.wk)));
            $out.push((format!("dec.{i}.self.wv"), $wrap!(layer.self_attn.wv)));
            $out.push((format!("dec.{i}.self.wo"), $wrap!(layer.self_attn.wo)));
            $out.push((format!("dec.{i}.ln2.g"), $wrap!(layer.ln2.gain)));
            $out.push((format!("dec.{i}.ln2.b"), $wrap!(layer.ln2.bias)));
            $out.push((format!("dec.{i}.cross.wq"), $wrap!(layer.cross_attn.wq)));
            $out.push((format!("dec.{i}.cross.wk"), $wrap!(layer.cross_attn.wk)));
            $out.push((format!("dec.{i}.cross.wv"), $wrap!(layer.cross_attn.wv)));
            $out.push((format!("dec.{i}.cross.wo"), $wrap!(layer.cross_attn.wo)));
            $out.push((format!("dec.{i}.ln3.g"), $wrap!(layer.ln3.gain)));
            $out.push((format!("dec.{i}.ln3.b"), $wrap!(layer.ln3.bias)));
            $out.push((format!("dec.{i}.ffn.w1"), $wrap!(layer.ffn.w1)));
            $out.push((format!("dec.{i}.ffn.w2"), $wrap!(layer.ffn.w2)));
        }
        $out.push(("enc_ln.g".to_string(), $wrap!($self.enc_ln.gain)));
        $out.push(("enc_ln.b".to_string(), $wrap!($self.enc_ln.bias)));
        $out.push(("dec_ln.g".to_string(), $wrap!($self.dec_ln.gain)));
        $out.push(("dec_ln.b".to_string(), $wrap!($self.dec_ln.bias)));
    }};
}

macro_rules! by_ref {
    (opt $e:expr) => {
        $e.as_ref()
    };
    (iter $e:expr) => {
        $e.iter()
    };
    ($e:expr) => {
        &$e
    };
}

macro_rules! by_mut {
    (opt $e:expr) => {
        $e.as_mut()
    };
    (iter $e:expr) => {
        $e.iter_mut()
    };
    ($e:expr) => {
        &mut $e
    };
}

impl ModelParams {
    /// All tensors with stable names, in a fixed traversal order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        visit_tensors!(self, out, by_ref);
        out
    }

    /// Mutable view of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        visit_tensors!(self, out, by_mut);
        out
    }

    /// Same tree shape with every value zero (gradient / moment container).
    pub fn zeros_like(&self) -> ModelParams {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    /// Total parameter count.
    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// Round every value through f32, exactly what a checkpoint stores.
    /// Evaluation during training runs on this so that re-evaluating a saved
    /// checkpoint reproduces recorded metrics bit for bit.
    pub fn quantized(&self) -> ModelParams {
        let mut q = self.clone();
        for (_, t) in q.tensors_mut() {
            for v in t.data.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
        q
    }

    /// Accumulate `other * scale` into self (gradient reduction).
    pub fn accumulate(&mut self, other: &ModelParams, scale: f64) {
        let other_t = other.tensors();
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other_t) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    /// Scale every tensor in place.
    pub fn scale_all(&mut self, s: f64) {
        for (_, t) in self.tensors_mut() {
            t.scale(s);
        }
    }
}

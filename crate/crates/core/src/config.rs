//! Experiment configuration: `key=value` files, defaults, flag overrides.
//!
//! Every knob of the pipeline lives here; the CLI maps flags onto the same
//! keys and a resolved copy is written next to each run's artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::docid::DocidScheme;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{DocRepresentation, IndexingStrategy, TaskMix};

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    // data
    pub corpus: PathBuf,
    pub pairs: PathBuf,
    /// Held-out paraphrase queries for zero-shot evaluation (optional).
    pub zs_pairs: Option<PathBuf>,
    /// Resume training from this checkpoint instead of a fresh init (the
    /// second phase of the sequential indexing-then-finetuning curriculum).
    pub init_checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub val_fraction: f64,
    pub vocab_max: usize,

    // docid space
    pub scheme: DocidScheme,
    pub semantic_k: usize,
    pub semantic_c: usize,
    pub d_embed: usize,
    pub kmeans_iters: usize,

    // examples
    pub strategy: IndexingStrategy,
    /// "direct" | "set" | "inverted"
    pub representation: String,
    pub direct_l: usize,
    pub inverted_k: usize,

    // mixing
    pub r: f64,
    pub buffer_size: usize,

    // model
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_enc_len: usize,
    pub max_dec_len: usize,
    pub dropout: f64,

    // optimization
    pub steps: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub lr: f64,
    pub warmup: usize,

    // retrieval / evaluation
    pub beam_width: usize,
    pub constrained: bool,
    pub topk: usize,

    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: PathBuf::from("corpus.tsv"),
            pairs: PathBuf::from("pairs.tsv"),
            zs_pairs: None,
            init_checkpoint: None,
            out_dir: PathBuf::from("run"),
            val_fraction: 0.2,
            vocab_max: 1024,
            scheme: DocidScheme::Naive,
            semantic_k: 10,
            semantic_c: 10,
            d_embed: 256,
            kmeans_iters: 50,
            strategy: IndexingStrategy::Inputs2Targets,
            representation: "direct".into(),
            direct_l: 32,
            inverted_k: 16,
            r: 32.0,
            buffer_size: 256,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_enc_len: 64,
            max_dec_len: 12,
            dropout: 0.0,
            steps: 20_000,
            batch_size: 32,
            eval_every: 500,
            lr: 1e-3,
            warmup: 100,
            beam_width: 10,
            constrained: false,
            topk: 10,
            seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for key '{key}'")))
}

fn parse_ratio(value: &str) -> Result<f64> {
    if value == "inf" || value == "infinity" {
        return Ok(f64::INFINITY);
    }
    let r: f64 = value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for key 'r'")))?;
    if r < 0.0 || r.is_nan() {
        return Err(Error::Config(format!("ratio r must be >= 0, got {value}")));
    }
    Ok(r)
}

impl ExperimentConfig {
    /// Apply one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "corpus" => self.corpus = PathBuf::from(value),
            "pairs" => self.pairs = PathBuf::from(value),
            "zs_pairs" => {
                self.zs_pairs = (!value.is_empty()).then(|| PathBuf::from(value));
            }
            "init_checkpoint" => {
                self.init_checkpoint = (!value.is_empty()).then(|| PathBuf::from(value));
            }
            "out_dir" => self.out_dir = PathBuf::from(value),
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "vocab_max" => self.vocab_max = parse(key, value)?,
            "scheme" => self.scheme = value.parse()?,
            "semantic_k" => self.semantic_k = parse(key, value)?,
            "semantic_c" => self.semantic_c = parse(key, value)?,
            "d_embed" => self.d_embed = parse(key, value)?,
            "kmeans_iters" => self.kmeans_iters = parse(key, value)?,
            "strategy" => self.strategy = value.parse()?,
            "representation" => {
                if !["direct", "set", "inverted"].contains(&value) {
                    return Err(Error::Config(format!("unknown representation '{value}'")));
                }
                self.representation = value.to_string();
            }
            "direct_l" => self.direct_l = parse(key, value)?,
            "inverted_k" => self.inverted_k = parse(key, value)?,
            "r" => self.r = parse_ratio(value)?,
            "buffer_size" => self.buffer_size = parse(key, value)?,
            "d_model" => self.d_model = parse(key, value)?,
            "n_layers" => self.n_layers = parse(key, value)?,
            "n_heads" => self.n_heads = parse(key, value)?,
            "d_ff" => self.d_ff = parse(key, value)?,
            "max_enc_len" => self.max_enc_len = parse(key, value)?,
            "max_dec_len" => self.max_dec_len = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "warmup" => self.warmup = parse(key, value)?,
            "beam_width" => self.beam_width = parse(key, value)?,
            "constrained" => self.constrained = parse(key, value)?,
            "topk" => self.topk = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Read a `key=value` file (`#` comments and blank lines ignored).
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        config.merge_file(path)?;
        Ok(config)
    }

    /// Apply a `key=value` file on top of the current settings.
    pub fn merge_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path)?;
        for (i, line) in content.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: "expected key=value".into(),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// The document representation this config selects.
    pub fn doc_representation(&self) -> DocRepresentation {
        match self.representation.as_str() {
            "set" => DocRepresentation::Set,
            "inverted" => DocRepresentation::Inverted {
                k: self.inverted_k,
                seed: self.seed,
            },
            _ => DocRepresentation::Direct { l: self.direct_l },
        }
    }

    pub fn task_mix(&self) -> TaskMix {
        TaskMix {
            r: self.r,
            buffer_size: self.buffer_size,
            seed: self.seed,
        }
    }

    /// Model config for a finalized vocabulary and corpus size.
    pub fn model_config(&self, n_tokens: usize, n_docs: usize) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_enc_len: self.max_enc_len,
            max_dec_len: self.max_dec_len,
            vocab_size: n_tokens,
            n_docs: if self.scheme == DocidScheme::Atomic {
                n_docs
            } else {
                0
            },
            dropout: self.dropout,
            seed: self.seed,
        }
    }

    /// Resolved settings as sorted `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        kv.insert("corpus", self.corpus.display().to_string());
        kv.insert("pairs", self.pairs.display().to_string());
        kv.insert(
            "zs_pairs",
            self.zs_pairs
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        kv.insert(
            "init_checkpoint",
            self.init_checkpoint
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        kv.insert("out_dir", self.out_dir.display().to_string());
        kv.insert("val_fraction", self.val_fraction.to_string());
        kv.insert("vocab_max", self.vocab_max.to_string());
        kv.insert(
            "scheme",
            match self.scheme {
                DocidScheme::Atomic => "atomic",
                DocidScheme::Naive => "naive",
                DocidScheme::Semantic => "semantic",
            }
            .to_string(),
        );
        kv.insert("semantic_k", self.semantic_k.to_string());
        kv.insert("semantic_c", self.semantic_c.to_string());
        kv.insert("d_embed", self.d_embed.to_string());
        kv.insert("kmeans_iters", self.kmeans_iters.to_string());
        kv.insert(
            "strategy",
            match self.strategy {
                IndexingStrategy::Inputs2Targets => "inputs2targets",
                IndexingStrategy::Targets2Inputs => "targets2inputs",
                IndexingStrategy::Bidirectional => "bidirectional",
                IndexingStrategy::SpanCorruption => "span_corruption",
            }
            .to_string(),
        );
        kv.insert("representation", self.representation.clone());
        kv.insert("direct_l", self.direct_l.to_string());
        kv.insert("inverted_k", self.inverted_k.to_string());
        kv.insert(
            "r",
            if self.r.is_infinite() {
                "inf".to_string()
            } else {
                self.r.to_string()
            },
        );
        kv.insert("buffer_size", self.buffer_size.to_string());
        kv.insert("d_model", self.d_model.to_string());
        kv.insert("n_layers", self.n_layers.to_string());
        kv.insert("n_heads", self.n_heads.to_string());
        kv.insert("d_ff", self.d_ff.to_string());
        kv.insert("max_enc_len", self.max_enc_len.to_string());
        kv.insert("max_dec_len", self.max_dec_len.to_string());
        kv.insert("dropout", self.dropout.to_string());
        kv.insert("steps", self.steps.to_string());
        kv.insert("batch_size", self.batch_size.to_string());
        kv.insert("eval_every", self.eval_every.to_string());
        kv.insert("lr", self.lr.to_string());
        kv.insert("warmup", self.warmup.to_string());
        kv.insert("beam_width", self.beam_width.to_string());
        kv.insert("constrained", self.constrained.to_string());
        kv.insert("topk", self.topk.to_string());
        kv.insert("seed", self.seed.to_string());
        let mut out = String::new();
        for (k, v) in kv {
            writeln!(out, "{k}={v}").expect("string write");
        }
        out
    }
}

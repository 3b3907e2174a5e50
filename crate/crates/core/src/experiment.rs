//! End-to-end experiment orchestration: corpus -> docids -> training ->
//! evaluation -> artifacts on disk. Every stage failure carries its stage
//! name; identical config + seed reproduces byte-identical artifacts.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::corpus::{self, Corpus, QueryDocPair, Vocabulary};
use crate::docid::{
    assign_atomic_ids, assign_naive_ids, embed_documents, generate_semantic_ids, save_docids,
    DocidAssignment, DocidScheme, DocidTrie, SemanticIdParams,
};
use crate::error::{Error, Result};
use crate::eval::{
    eval_indexing_memorization, hits_at_n, per_query_hits, track_forgetting, EvalReport,
    ForgettingSummary,
};
use crate::model::{init_params, load_checkpoint_checked, AdamHyper, AdamState, ModelParams};
use crate::retrieve::{beam_search, decode_ranked_batch};
use crate::train::{
    default_stopwords, make_indexing_examples, make_retrieval_examples, select_best_checkpoint,
    train, EvalPoint, MixStream, TrainOptions, TrainOutcome,
};

/// Everything a finished run leaves behind (paths are inside `out_dir`).
#[derive(Debug)]
pub struct ExperimentArtifacts {
    pub out_dir: PathBuf,
    pub trace_csv: PathBuf,
    pub report_json: PathBuf,
    pub forgetting_json: PathBuf,
    pub best_checkpoint: PathBuf,
    pub report: RunReport,
}

/// The JSON report for a run.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub best_step: usize,
    pub validation: EvalReport,
    /// Present when zero-shot pairs were supplied.
    pub zero_shot: Option<EvalReport>,
    pub consumed_indexing: u64,
    pub consumed_retrieval: u64,
    /// Fraction of finished unconstrained beam hypotheses that were not
    /// valid docids, measured on the validation queries (string ids only).
    pub invalid_generation_rate: Option<f64>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Build the docid assignment a config asks for.
pub fn make_docids(
    config: &ExperimentConfig,
    corpus: &Corpus,
    vocab: &Vocabulary,
) -> Result<DocidAssignment> {
    let keys: Vec<String> = corpus.docs().iter().map(|d| d.doc_key.clone()).collect();
    match config.scheme {
        DocidScheme::Naive => assign_naive_ids(&keys, config.seed),
        DocidScheme::Atomic => assign_atomic_ids(&keys, vocab.n_tokens() as u32),
        DocidScheme::Semantic => {
            let x = embed_documents(corpus.docs(), config.d_embed, config.seed)?;
            generate_semantic_ids(
                &x,
                &keys,
                &SemanticIdParams {
                    k: config.semantic_k,
                    c: config.semantic_c,
                    seed: config.seed,
                    max_iters: config.kmeans_iters,
                },
            )
        }
    }
}

/// Unique gold doc keys of a pair list, in first-seen order.
fn gold_doc_keys(pairs: &[QueryDocPair]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    pairs
        .iter()
        .filter(|p| seen.insert(p.doc_key.clone()))
        .map(|p| p.doc_key.clone())
        .collect()
}

/// Evaluate retrieval + memorization on a query set.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    params: &ModelParams,
    config: &ExperimentConfig,
    corpus: &Corpus,
    vocab: &Vocabulary,
    docids: &DocidAssignment,
    trie: Option<&DocidTrie>,
    pairs: &[QueryDocPair],
    step: usize,
) -> Result<EvalReport> {
    let queries: Vec<Vec<u32>> = pairs
        .iter()
        .map(|p| {
            let mut t = vocab.tokenize(&p.query);
            t.truncate(config.max_enc_len);
            t
        })
        .collect();
    let gold: Vec<String> = pairs.iter().map(|p| p.doc_key.clone()).collect();
    let query_texts: Vec<String> = pairs.iter().map(|p| p.query.clone()).collect();

    let topk = config.topk.max(10);
    let ranked = decode_ranked_batch(
        params,
        &queries,
        vocab,
        docids,
        topk,
        config.beam_width,
        trie,
    )?;
    let mut hits = std::collections::BTreeMap::new();
    for n in [1usize, 10] {
        hits.insert(n, hits_at_n(&ranked, &gold, n)?);
    }
    if config.topk != 1 && config.topk != 10 {
        hits.insert(config.topk, hits_at_n(&ranked, &gold, config.topk)?);
    }

    let eval_docs = gold_doc_keys(pairs);
    let index_hits1 = eval_indexing_memorization(
        params,
        corpus,
        docids,
        &config.doc_representation(),
        vocab,
        &default_stopwords(),
        &eval_docs,
        config.beam_width,
        trie,
    )?;

    Ok(EvalReport {
        step,
        hits,
        index_hits1,
        per_query: per_query_hits(&ranked, &query_texts, &gold),
    })
}

/// Invalid-generation rate of unconstrained decoding over a query set.
pub fn invalid_generation_rate(
    params: &ModelParams,
    vocab: &Vocabulary,
    docids: &DocidAssignment,
    queries: &[Vec<u32>],
    beam_width: usize,
) -> Result<f64> {
    let mut finished = 0usize;
    let mut invalid = 0usize;
    for q in queries {
        let hyps = beam_search(params, q, vocab, beam_width, docids.max_digits(), None)?;
        for h in hyps.iter().filter(|h| h.finished) {
            finished += 1;
            if docids.key_of_digits(&h.digits).is_none() {
                invalid += 1;
            }
        }
    }
    Ok(if finished == 0 {
        0.0
    } else {
        invalid as f64 / finished as f64
    })
}

/// Run the full pipeline and write all artifacts.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentArtifacts> {
    for (name, path) in [
        ("corpus", Some(&config.corpus)),
        ("pairs", Some(&config.pairs)),
        ("zs_pairs", config.zs_pairs.as_ref()),
    ] {
        if let Some(p) = path {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "{name} file '{}' does not exist",
                    p.display()
                )));
            }
        }
    }
    let out_dir = config.out_dir.clone();
    stage(
        "setup",
        std::fs::create_dir_all(&out_dir).map_err(Error::from),
    )?;
    stage(
        "setup",
        std::fs::write(out_dir.join("config.txt"), config.to_key_values()).map_err(Error::from),
    )?;

    // corpus
    let corpus = stage("load", corpus::load_documents(&config.corpus))?;
    let pairs = stage("load", corpus::load_pairs(&config.pairs, &corpus))?;
    let zs_pairs = match &config.zs_pairs {
        Some(p) => Some(stage("load", corpus::load_pairs(p, &corpus))?),
        None => None,
    };

    // vocabulary and splits
    let vocab = stage("vocab", Vocabulary::build(corpus.docs(), config.vocab_max))?;
    let splits = stage(
        "splits",
        corpus::make_splits(&pairs, config.val_fraction, config.seed),
    )?;

    // docid space
    let docids = stage("docids", make_docids(config, &corpus, &vocab))?;
    stage(
        "docids",
        save_docids(out_dir.join("docids.tsv"), &docids, vocab.n_tokens() as u32),
    )?;
    let trie = if config.constrained && config.scheme != DocidScheme::Atomic {
        Some(stage("docids", docids.build_trie())?)
    } else {
        None
    };

    // model: fresh init, or resume from a checkpoint (the fine-tuning phase
    // of the sequential curriculum)
    let model_config = config.model_config(vocab.n_tokens(), corpus.len());
    let mut params = match &config.init_checkpoint {
        Some(ckpt) => stage("model", load_checkpoint_checked(ckpt, &model_config))?,
        None => stage("model", init_params(&model_config))?,
    };
    let mut opt = AdamState::new(
        &params,
        AdamHyper {
            lr: config.lr,
            warmup: config.warmup,
            ..Default::default()
        },
    );

    // example sources
    let stopwords = default_stopwords();
    let rep = config.doc_representation();
    let idx_source = |epoch: u64| {
        make_indexing_examples(
            &corpus,
            &docids,
            config.strategy,
            &rep,
            &vocab,
            &stopwords,
            &model_config,
            config.seed,
            epoch,
        )
    };
    let retrieval_examples = stage(
        "examples",
        make_retrieval_examples(&splits.train_pairs, &docids, &vocab, &model_config),
    )?;
    let ret_source = move |_epoch: u64| Ok(retrieval_examples.clone());
    let mut stream = stage(
        "examples",
        MixStream::new(Some(&idx_source), Some(&ret_source), config.task_mix()),
    )?;

    // training
    let options = TrainOptions {
        steps: config.steps,
        batch_size: config.batch_size,
        eval_every: config.eval_every,
        out_dir: Some(out_dir.clone()),
        seed: config.seed,
    };
    let mut eval_fn = |snapshot: &ModelParams, step: usize| -> Result<EvalPoint> {
        let report = evaluate(
            snapshot,
            config,
            &corpus,
            &vocab,
            &docids,
            trie.as_ref(),
            &splits.val_pairs,
            step,
        )?;
        Ok(EvalPoint {
            hits1: report.hits_at(1),
            hits10: report.hits_at(10),
            index_hits1: report.index_hits1,
        })
    };
    let outcome: TrainOutcome = stage(
        "train",
        train(&mut params, &mut opt, &mut stream, &options, &mut eval_fn),
    )?;

    // trace CSV
    let trace_csv = out_dir.join("trace.csv");
    let mut csv = String::new();
    writeln!(csv, "{}", crate::train::TraceRow::csv_header()).expect("string write");
    for row in &outcome.trace {
        writeln!(csv, "{}", row.to_csv()).expect("string write");
    }
    stage(
        "report",
        std::fs::write(&trace_csv, csv).map_err(Error::from),
    )?;

    // best checkpoint by validation Hits@1
    let best_idx = select_best_checkpoint(&outcome.trace, |r| r.hits1);
    let best_step = best_idx.map(|i| outcome.trace[i].step).unwrap_or(0);
    let best_path = outcome
        .checkpoints
        .iter()
        .find(|(s, _)| *s == best_step)
        .map(|(_, p)| p.clone())
        .unwrap_or_else(|| out_dir.join("ckpt_0.bin"));
    let best_checkpoint = out_dir.join("best.bin");
    stage(
        "report",
        std::fs::copy(&best_path, &best_checkpoint)
            .map(|_| ())
            .map_err(Error::from),
    )?;

    // final reports from the best checkpoint
    let best_params = stage(
        "report",
        load_checkpoint_checked(&best_checkpoint, &model_config),
    )?;
    let validation = stage(
        "report",
        evaluate(
            &best_params,
            config,
            &corpus,
            &vocab,
            &docids,
            trie.as_ref(),
            &splits.val_pairs,
            best_step,
        ),
    )?;
    let zero_shot = match &zs_pairs {
        Some(zp) => Some(stage(
            "report",
            evaluate(
                &best_params,
                config,
                &corpus,
                &vocab,
                &docids,
                trie.as_ref(),
                zp,
                best_step,
            ),
        )?),
        None => None,
    };
    let invalid_rate = if config.scheme == DocidScheme::Atomic || config.constrained {
        None
    } else {
        let queries: Vec<Vec<u32>> = splits
            .val_pairs
            .iter()
            .map(|p| {
                let mut t = vocab.tokenize(&p.query);
                t.truncate(config.max_enc_len);
                t
            })
            .collect();
        Some(stage(
            "report",
            invalid_generation_rate(&best_params, &vocab, &docids, &queries, config.beam_width),
        )?)
    };

    let report = RunReport {
        best_step,
        validation,
        zero_shot,
        consumed_indexing: outcome.consumed_indexing,
        consumed_retrieval: outcome.consumed_retrieval,
        invalid_generation_rate: invalid_rate,
    };
    let report_json = out_dir.join("report.json");
    stage(
        "report",
        std::fs::write(
            &report_json,
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )
        .map_err(Error::from),
    )?;

    // forgetting summary over the Hits@1 trace
    let forgetting_json = out_dir.join("forgetting.json");
    let forgetting: Option<ForgettingSummary> = {
        let series: Vec<(usize, f64)> = outcome.trace.iter().map(|r| (r.step, r.hits1)).collect();
        track_forgetting(&series).ok()
    };
    stage(
        "report",
        std::fs::write(
            &forgetting_json,
            serde_json::to_string_pretty(&forgetting).expect("summary serializes"),
        )
        .map_err(Error::from),
    )?;

    Ok(ExperimentArtifacts {
        out_dir,
        trace_csv,
        report_json,
        forgetting_json,
        best_checkpoint,
        report,
    })
}

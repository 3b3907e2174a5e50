//! Command-line interface to the generative retrieval laboratory.
//!
//! Exit codes: 0 success, 1 configuration error (bad flags, bad config file),
//! 2 runtime error.

mod flags;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use genret::baselines::{bm25_build, bm25_retrieve, de_retrieve, de_train, DeTrainOptions};
use genret::config::ExperimentConfig;
use genret::corpus::{self, Vocabulary};
use genret::docid::DocidScheme;
use genret::error::Error;
use genret::eval::track_forgetting;
use genret::experiment::{evaluate, make_docids, run_experiment};
use genret::model::{init_params, load_checkpoint_checked};
use genret::retrieve::{decode_ranked_batch, RankedList};
use genret::synth::{generate, SynthParams};

#[derive(Parser)]
#[command(
    name = "genret",
    version,
    about = "Desk-scale generative retrieval laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic topic-structured corpus with query files.
    GenCorpus(GenCorpusArgs),
    /// Build a docid map for a corpus and write it as TSV.
    MakeDocids(MakeDocidsArgs),
    /// Train a model end to end and write run artifacts.
    Train(Box<flags::TrainArgs>),
    /// Re-evaluate a saved checkpoint against the validation split.
    Eval(EvalArgs),
    /// Decode ranked docid lists for queries.
    Retrieve(RetrieveArgs),
    /// Run a baseline retriever.
    #[command(subcommand)]
    Baseline(BaselineCmd),
    /// Summarize forgetting cycles from a metric trace CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenCorpusArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    topics: usize,
    #[arg(long, default_value_t = 10)]
    docs_per_topic: usize,
    #[arg(long, default_value_t = 64)]
    doc_len: usize,
    #[arg(long, default_value_t = 8)]
    topic_words: usize,
    #[arg(long, default_value_t = 3)]
    entity_words: usize,
    #[arg(long, default_value_t = 1)]
    queries_per_doc: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MakeDocidsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    scheme: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 256)]
    d_embed: usize,
    #[arg(long, default_value_t = 10)]
    c: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 50)]
    kmeans_iters: usize,
    #[arg(long, default_value_t = 1024)]
    vocab_max: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory holding config.txt and checkpoints.
    #[arg(long)]
    run_dir: PathBuf,
    /// Checkpoint file inside the run directory (defaults to best.bin).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Evaluate these pairs instead of the validation split.
    #[arg(long)]
    pairs: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// A single query; mutually exclusive with --queries.
    #[arg(long)]
    query: Option<String>,
    /// File of queries, one per line.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    topk: usize,
    /// Mask decoding to the docid trie.
    #[arg(long, default_value_t = false)]
    constrained: bool,
}

#[derive(Subcommand)]
enum BaselineCmd {
    /// Okapi BM25 over an inverted index.
    Bm25(Bm25Args),
    /// Contrastively trained dual encoder with exact search.
    De(DeArgs),
}

#[derive(Args)]
struct Bm25Args {
    #[arg(long)]
    corpus: PathBuf,
    /// Pairs file; the query field of each line is scored.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 10)]
    topk: usize,
}

#[derive(Args)]
struct DeArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Training pairs.
    #[arg(long)]
    pairs: PathBuf,
    /// Queries to rank after training (defaults to the training pairs).
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    temperature: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    topk: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 1024)]
    vocab_max: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// trace.csv produced by `train`.
    #[arg(long)]
    trace: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own message; argument problems are config errors
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn print_ranked(query: &str, ranked: &RankedList) {
    for (rank, (doc_key, score)) in ranked.entries().iter().enumerate() {
        println!("{query}\t{}\t{doc_key}\t{score}", rank + 1);
    }
}

fn load_query_lines(path: &PathBuf) -> Result<Vec<String>, Error> {
    let content = std::fs::read_to_string(path)?;
    Ok(content
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| l.split('\t').next().unwrap_or(l).to_string())
        .collect())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenCorpus(a) => {
            let params = SynthParams {
                n_topics: a.topics,
                docs_per_topic: a.docs_per_topic,
                doc_len: a.doc_len,
                topic_words: a.topic_words,
                entity_words: a.entity_words,
                queries_per_doc: a.queries_per_doc,
                seed: a.seed,
            };
            let c = generate(&params);
            std::fs::create_dir_all(&a.out_dir)?;
            corpus::save_documents(a.out_dir.join("corpus.tsv"), &c.documents)?;
            corpus::save_pairs(a.out_dir.join("pairs.tsv"), &c.pairs)?;
            corpus::save_pairs(a.out_dir.join("zs_pairs.tsv"), &c.zs_pairs)?;
            println!(
                "wrote {} documents, {} pairs, {} zero-shot pairs to {}",
                c.documents.len(),
                c.pairs.len(),
                c.zs_pairs.len(),
                a.out_dir.display()
            );
            Ok(())
        }
        Command::MakeDocids(a) => {
            let mut config = ExperimentConfig {
                corpus: a.corpus.clone(),
                d_embed: a.d_embed,
                semantic_c: a.c,
                semantic_k: a.k,
                kmeans_iters: a.kmeans_iters,
                vocab_max: a.vocab_max,
                seed: a.seed,
                ..Default::default()
            };
            config.scheme = a.scheme.parse::<DocidScheme>()?;
            let corpus = corpus::load_documents(&a.corpus)?;
            let vocab = Vocabulary::build(corpus.docs(), config.vocab_max)?;
            let docids = make_docids(&config, &corpus, &vocab)?;
            genret::docid::save_docids(&a.out, &docids, vocab.n_tokens() as u32)?;
            println!("wrote {} docids to {}", docids.len(), a.out.display());
            Ok(())
        }
        Command::Train(a) => {
            let config = a.resolve()?;
            let artifacts = run_experiment(&config)?;
            println!(
                "run complete: best step {} (hits@1 {:.4}, hits@10 {:.4}, indexing hits@1 {:.4})",
                artifacts.report.best_step,
                artifacts.report.validation.hits_at(1),
                artifacts.report.validation.hits_at(10),
                artifacts.report.validation.index_hits1,
            );
            println!("artifacts in {}", artifacts.out_dir.display());
            Ok(())
        }
        Command::Eval(a) => {
            let config = ExperimentConfig::from_file(a.run_dir.join("config.txt"))?;
            let corpus = corpus::load_documents(&config.corpus)?;
            let vocab = Vocabulary::build(corpus.docs(), config.vocab_max)?;
            let docids = genret::docid::load_docids(
                a.run_dir.join("docids.tsv"),
                config.scheme,
                vocab.n_tokens() as u32,
            )?;
            let trie = if config.constrained && config.scheme != DocidScheme::Atomic {
                Some(docids.build_trie()?)
            } else {
                None
            };
            let pairs = match &a.pairs {
                Some(p) => corpus::load_pairs(p, &corpus)?,
                None => {
                    let all = corpus::load_pairs(&config.pairs, &corpus)?;
                    corpus::make_splits(&all, config.val_fraction, config.seed)?.val_pairs
                }
            };
            let ckpt = a
                .checkpoint
                .map(|c| a.run_dir.join(c))
                .unwrap_or_else(|| a.run_dir.join("best.bin"));
            let model_config = config.model_config(vocab.n_tokens(), corpus.len());
            let params = load_checkpoint_checked(&ckpt, &model_config)?;
            let report = evaluate(
                &params,
                &config,
                &corpus,
                &vocab,
                &docids,
                trie.as_ref(),
                &pairs,
                0,
            )?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            Ok(())
        }
        Command::Retrieve(a) => {
            let config = ExperimentConfig::from_file(a.run_dir.join("config.txt"))?;
            let corpus = corpus::load_documents(&config.corpus)?;
            let vocab = Vocabulary::build(corpus.docs(), config.vocab_max)?;
            let docids = genret::docid::load_docids(
                a.run_dir.join("docids.tsv"),
                config.scheme,
                vocab.n_tokens() as u32,
            )?;
            let trie =
                if (a.constrained || config.constrained) && config.scheme != DocidScheme::Atomic {
                    Some(docids.build_trie()?)
                } else {
                    None
                };
            let ckpt = a
                .checkpoint
                .map(|c| a.run_dir.join(c))
                .unwrap_or_else(|| a.run_dir.join("best.bin"));
            let model_config = config.model_config(vocab.n_tokens(), corpus.len());
            let params = load_checkpoint_checked(&ckpt, &model_config)?;

            let queries: Vec<String> = match (&a.query, &a.queries) {
                (Some(q), None) => vec![q.clone()],
                (None, Some(f)) => load_query_lines(f)?,
                _ => {
                    return Err(Error::Config(
                        "pass exactly one of --query or --queries".into(),
                    ))
                }
            };
            let tokenized: Vec<Vec<u32>> = queries
                .iter()
                .map(|q| {
                    let mut t = vocab.tokenize(q);
                    t.truncate(config.max_enc_len);
                    t
                })
                .collect();
            let ranked = decode_ranked_batch(
                &params,
                &tokenized,
                &vocab,
                &docids,
                a.topk,
                config.beam_width,
                trie.as_ref(),
            )?;
            for (q, r) in queries.iter().zip(&ranked) {
                print_ranked(q, r);
            }
            Ok(())
        }
        Command::Baseline(BaselineCmd::Bm25(a)) => {
            let corpus = corpus::load_documents(&a.corpus)?;
            let index = bm25_build(&corpus)?;
            let queries = load_query_lines(&a.queries)?;
            for q in &queries {
                let ranked = bm25_retrieve(&index, q, a.topk);
                print_ranked(q, &ranked);
            }
            Ok(())
        }
        Command::Baseline(BaselineCmd::De(a)) => {
            let corpus = corpus::load_documents(&a.corpus)?;
            let pairs = corpus::load_pairs(&a.pairs, &corpus)?;
            let vocab = Vocabulary::build(corpus.docs(), a.vocab_max)?;
            let model_config = genret::model::ModelConfig {
                d_model: a.d_model,
                n_layers: 1,
                n_heads: (a.d_model / 16).max(1),
                d_ff: 4 * a.d_model,
                max_enc_len: 64,
                max_dec_len: 4,
                vocab_size: vocab.n_tokens(),
                n_docs: 0,
                dropout: 0.0,
                seed: a.seed,
            };
            let encoder = init_params(&model_config)?;
            let options = DeTrainOptions {
                batch_size: a.batch_size,
                steps: a.steps,
                temperature: a.temperature,
                lr: a.lr,
                seed: a.seed,
                ..Default::default()
            };
            let (state, losses) = de_train(encoder, &corpus, &pairs, &vocab, &options)?;
            eprintln!(
                "dual encoder trained: {} steps, final loss {:.4}",
                losses.len(),
                losses.last().copied().unwrap_or(f64::NAN)
            );
            let queries = match &a.queries {
                Some(f) => load_query_lines(f)?,
                None => pairs.iter().map(|p| p.query.clone()).collect(),
            };
            for q in &queries {
                let ranked = de_retrieve(&state, q, &vocab, a.topk)?;
                print_ranked(q, &ranked);
            }
            Ok(())
        }
        Command::Report(a) => {
            let content = std::fs::read_to_string(&a.trace)?;
            let mut series = Vec::new();
            for (i, line) in content.lines().enumerate() {
                if i == 0 || line.trim().is_empty() {
                    continue; // header
                }
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() < 3 {
                    return Err(Error::Parse {
                        path: a.trace.display().to_string(),
                        line: i + 1,
                        msg: "expected step,train_loss,hits1,...".into(),
                    });
                }
                let step: usize = fields[0].parse().map_err(|_| Error::Parse {
                    path: a.trace.display().to_string(),
                    line: i + 1,
                    msg: "bad step".into(),
                })?;
                let hits1: f64 = fields[2].parse().map_err(|_| Error::Parse {
                    path: a.trace.display().to_string(),
                    line: i + 1,
                    msg: "bad hits1".into(),
                })?;
                series.push((step, hits1));
            }
            let summary = track_forgetting(&series)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
            Ok(())
        }
    }
}

//! Acceptance suite: every release criterion as one test, each printing a
//! PASS/FAIL line (visible with `--nocapture`). Criteria that train models
//! use a compact configuration sized for a 2-core CPU budget; thresholds and
//! tolerances are pinned in the assertions.
//!
//!   cargo test -p genret --test acceptance -- --nocapture

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use genret::baselines::{bm25_build, bm25_retrieve};
use genret::config::ExperimentConfig;
use genret::corpus::{self, Corpus, Vocabulary, EOS, PAD};
use genret::docid::{
    assign_naive_ids, generate_semantic_ids, semantic_root_clustering, SemanticIdParams,
};
use genret::experiment::{invalid_generation_rate, run_experiment};
use genret::model::{
    backward, forward, init_params, log_softmax_row, Batch, BatchExample, ModelConfig, ModelParams,
};
use genret::retrieve::{beam_search, decode_ranked_batch, rank_from_beam};
use genret::synth::{generate, SynthParams};
use genret::tensor::Tensor;
use genret::train::{MixStream, TaskKind, TaskMix, TrainingExample};

fn verdict(n: usize, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {n:02}: {} - {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

/// Write the standard 100-document corpus (10 topics x 10 docs, one query
/// per document so validation gold documents never occur in training pairs).
fn write_corpus_100(dir: &std::path::Path, doc_len: usize, seed: u64) {
    let c = generate(&SynthParams {
        n_topics: 10,
        docs_per_topic: 10,
        doc_len,
        queries_per_doc: 1,
        seed,
        ..Default::default()
    });
    corpus::save_documents(dir.join("corpus.tsv"), &c.documents).unwrap();
    corpus::save_pairs(dir.join("pairs.tsv"), &c.pairs).unwrap();
    corpus::save_pairs(dir.join("zs_pairs.tsv"), &c.zs_pairs).unwrap();
}

/// Compact training configuration: trains in minutes on two CPU cores.
fn compact_config(data: &std::path::Path, out: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        corpus: data.join("corpus.tsv"),
        pairs: data.join("pairs.tsv"),
        out_dir: out.to_path_buf(),
        vocab_max: 512,
        d_model: 32,
        n_layers: 1,
        n_heads: 2,
        d_ff: 128,
        max_enc_len: 32,
        max_dec_len: 8,
        direct_l: 32,
        batch_size: 8,
        lr: 3e-3,
        warmup: 100,
        buffer_size: 256,
        beam_width: 10,
        seed: 9,
        ..Default::default()
    }
}

/// Criterion 1: every parameter gradient matches central finite differences
/// (64-bit, h=1e-4) within relative error 1e-4 on a d_model=16, 1-layer
/// model over 20 random batches, in under a minute.
#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let config = ModelConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        max_enc_len: 10,
        max_dec_len: 6,
        vocab_size: 50,
        n_docs: 4,
        dropout: 0.0,
        seed: 77,
    };

    fn batch_loss(params: &ModelParams, batch: &Batch) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for ex in &batch.examples {
            let logits = forward(params, &ex.enc_tokens, &ex.dec_input).unwrap();
            for (t, &y) in ex.dec_targets.iter().enumerate() {
                if y == PAD {
                    continue;
                }
                total -= log_softmax_row(logits.row(t))[y as usize];
                count += 1;
            }
        }
        total / count as f64
    }

    fn poke(params: &mut ModelParams, tensor_idx: usize, i: usize, value: f64) {
        let mut ts = params.tensors_mut();
        ts[tensor_idx].1.data[i] = value;
    }

    let mut worst_rel: f64 = 0.0;
    let h = 1e-4;
    let mut checked = 0usize;
    for batch_id in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + batch_id);
        let enc_len = rng.gen_range(3..=6);
        let dec_len = rng.gen_range(2..=4);
        let enc: Vec<u32> = (0..enc_len).map(|_| rng.gen_range(3..50)).collect();
        let mut targets: Vec<u32> = (0..dec_len - 1)
            .map(|_| rng.gen_range(3..54)) // extended range covers docid logits
            .collect();
        targets.push(EOS);
        let batch = Batch {
            examples: vec![BatchExample::new(enc, targets)],
        };

        let mut params = init_params(&ModelConfig {
            seed: 77 + batch_id,
            ..config
        })
        .unwrap();
        let (_, grads) = backward(&params, &batch, None).unwrap();
        let analytic: Vec<(String, Vec<f64>)> = grads
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, t.data.clone()))
            .collect();

        #[allow(clippy::needless_range_loop)]
        for (tensor_idx, (name, g)) in analytic.iter().enumerate() {
            for i in 0..g.len() {
                let saved = params.tensors()[tensor_idx].1.data[i];
                poke(&mut params, tensor_idx, i, saved + h);
                let up = batch_loss(&params, &batch);
                poke(&mut params, tensor_idx, i, saved - h);
                let down = batch_loss(&params, &batch);
                poke(&mut params, tensor_idx, i, saved);
                let fd = (up - down) / (2.0 * h);
                let a = g[i];
                let diff = (fd - a).abs();
                if diff > 1e-8 {
                    let rel = diff / fd.abs().max(a.abs());
                    worst_rel = worst_rel.max(rel);
                    assert!(
                        rel <= 1e-4,
                        "batch {batch_id}, {name}[{i}]: analytic {a} vs fd {fd} (rel {rel:.2e})"
                    );
                }
                checked += 1;
            }
        }
    }
    assert!(checked > 100_000, "checked only {checked} gradient entries");
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        1,
        elapsed < 60.0,
        &format!(
            "gradients match finite differences on 20 batches (worst rel {worst_rel:.2e}), {elapsed:.1}s < 60s"
        ),
    );
}

/// Criterion 2: 100 docs, naive string ids, Inputs2Targets, Direct(L=32),
/// 20k steps -> indexing Hits@1 >= 0.95 within 15 CPU minutes.
#[test]
fn criterion_02_memorization() {
    let start = Instant::now();
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_corpus_100(data.path(), 64, 42);

    let mut config = compact_config(data.path(), out.path());
    config.steps = 20_000;
    config.eval_every = 1000;
    let artifacts = run_experiment(&config).unwrap();
    let mem = artifacts.report.validation.index_hits1;
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        2,
        mem >= 0.95 && elapsed <= 900.0,
        &format!("indexing Hits@1 {mem:.3} >= 0.95 after 20k steps, {elapsed:.0}s <= 900s"),
    );
}

/// Criterion 3: retrieval-only training (r=0) evaluated on validation
/// queries whose gold documents never appear in any retrieval pair ->
/// Hits@1 at chance level (<= 2/N_val).
#[test]
fn criterion_03_no_indexing_means_no_retrieval() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_corpus_100(data.path(), 64, 43);

    let mut config = compact_config(data.path(), out.path());
    config.r = 0.0;
    config.steps = 1500;
    config.eval_every = 500;
    config.seed = 3;

    // the held-out condition: with one query per document, the gold document
    // of every validation query appears in no training pair
    let corpus = corpus::load_documents(&config.corpus).unwrap();
    let pairs = corpus::load_pairs(&config.pairs, &corpus).unwrap();
    let splits = corpus::make_splits(&pairs, config.val_fraction, config.seed).unwrap();
    let train_docs: std::collections::HashSet<&str> = splits
        .train_pairs
        .iter()
        .map(|p| p.doc_key.as_str())
        .collect();
    assert!(
        splits
            .val_pairs
            .iter()
            .all(|p| !train_docs.contains(p.doc_key.as_str())),
        "held-out construction violated"
    );
    let n_val = splits.val_pairs.len();

    let artifacts = run_experiment(&config).unwrap();
    let h1 = artifacts.report.validation.hits_at(1);
    let chance = 2.0 / n_val as f64;
    verdict(
        3,
        h1 <= chance,
        &format!("retrieval-only Hits@1 {h1:.3} <= chance bound {chance:.3} (N_val={n_val})"),
    );
}

/// Criterion 4: Inputs2Targets beats Targets2Inputs, and Targets2Inputs
/// stays at or below 0.05 Hits@1.
#[test]
fn criterion_04_strategy_ordering() {
    let data = tempfile::tempdir().unwrap();
    write_corpus_100(data.path(), 64, 44);

    let run = |strategy: &str| {
        let out = tempfile::tempdir().unwrap();
        let mut config = compact_config(data.path(), out.path());
        config.set("strategy", strategy).unwrap();
        config.steps = 3000;
        config.eval_every = 500;
        config.seed = 4;
        let artifacts = run_experiment(&config).unwrap();
        artifacts.report.validation.hits_at(1)
    };
    let h1_i2t = run("inputs2targets");
    let h1_t2i = run("targets2inputs");
    verdict(
        4,
        h1_i2t > h1_t2i && h1_t2i <= 0.05,
        &format!("Hits@1 inputs2targets {h1_i2t:.3} > targets2inputs {h1_t2i:.3} <= 0.05"),
    );
}

/// Criterion 5: on 256-token documents, Direct(L=32) retrieval Hits@10 is
/// not worse than Direct(L=256) beyond the 0.02 tolerance.
#[test]
fn criterion_05_document_length_effect() {
    let data = tempfile::tempdir().unwrap();
    write_corpus_100(data.path(), 256, 45);

    let run = |l: usize| {
        let out = tempfile::tempdir().unwrap();
        let mut config = compact_config(data.path(), out.path());
        config.direct_l = l;
        config.max_enc_len = l;
        config.steps = 1200;
        config.eval_every = 400;
        config.seed = 5;
        let artifacts = run_experiment(&config).unwrap();
        artifacts.report.validation.hits_at(10)
    };
    let h10_short = run(32);
    let h10_long = run(256);
    verdict(
        5,
        h10_short >= h10_long - 0.02,
        &format!("Hits@10 L=32 {h10_short:.3} >= L=256 {h10_long:.3} - 0.02"),
    );
}

/// Criterion 6: BM25 matches a brute-force scorer on a 1000-doc corpus:
/// identical ranking, scores within 1e-9.
#[test]
fn criterion_06_bm25_oracle_equivalence() {
    let synth = generate(&SynthParams {
        n_topics: 20,
        docs_per_topic: 50,
        doc_len: 48,
        seed: 46,
        ..Default::default()
    });
    let corpus = Corpus::from_documents(synth.documents).unwrap();
    assert_eq!(corpus.len(), 1000);
    let index = bm25_build(&corpus).unwrap();

    let n = corpus.len() as f64;
    let avgdl = corpus
        .docs()
        .iter()
        .map(|d| d.text.split_whitespace().count())
        .sum::<usize>() as f64
        / n;
    // document frequencies recomputed from scratch for the oracle
    let mut df: std::collections::HashMap<&str, f64> = Default::default();
    for d in corpus.docs() {
        let words: std::collections::HashSet<&str> = d.text.split_whitespace().collect();
        for w in words {
            *df.entry(w).or_insert(0.0) += 1.0;
        }
    }

    let mut worst_diff: f64 = 0.0;
    for pair in synth.pairs.iter().step_by(25) {
        let query = &pair.query;
        let ranked = bm25_retrieve(&index, query, corpus.len());
        let terms: Vec<&str> = query.split_whitespace().collect();
        let mut oracle: Vec<(String, f64)> = corpus
            .docs()
            .iter()
            .map(|d| {
                let words: Vec<&str> = d.text.split_whitespace().collect();
                let dl = words.len() as f64;
                let mut score = 0.0;
                for t in &terms {
                    let tf = words.iter().filter(|w| *w == t).count() as f64;
                    if tf == 0.0 {
                        continue;
                    }
                    let idf = ((n - df[t] + 0.5) / (df[t] + 0.5) + 1.0).ln();
                    score += idf * tf * 2.2 / (tf + 1.2 * (1.0 - 0.75 + 0.75 * dl / avgdl));
                }
                (d.doc_key.clone(), score)
            })
            .filter(|&(_, s)| s > 0.0)
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));

        assert_eq!(ranked.len(), oracle.len(), "query '{query}'");
        for ((k1, s1), (k2, s2)) in ranked.entries().iter().zip(&oracle) {
            assert_eq!(k1, k2, "ranking differs for '{query}'");
            worst_diff = worst_diff.max((s1 - s2).abs());
        }
    }
    verdict(
        6,
        worst_diff < 1e-9,
        &format!("BM25 identical to brute force on 1000 docs (worst score diff {worst_diff:.2e})"),
    );
}

/// Criterion 7: a constrained beam at least as wide as the docid space
/// reproduces exhaustive sequence-log-prob ranking exactly on 20 docs.
#[test]
fn criterion_07_beam_search_oracle() {
    let synth = generate(&SynthParams {
        n_topics: 4,
        docs_per_topic: 5,
        doc_len: 24,
        seed: 47,
        ..Default::default()
    });
    let corpus = Corpus::from_documents(synth.documents).unwrap();
    let vocab = Vocabulary::build(corpus.docs(), 256).unwrap();
    let config = ModelConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        max_enc_len: 16,
        max_dec_len: 6,
        vocab_size: vocab.n_tokens(),
        n_docs: 0,
        dropout: 0.0,
        seed: 47,
    };
    let params = init_params(&config).unwrap();
    let keys: Vec<String> = corpus.docs().iter().map(|d| d.doc_key.clone()).collect();
    let docids = assign_naive_ids(&keys, 47).unwrap();
    let trie = docids.build_trie().unwrap();

    let mut checked_queries = 0;
    for pair in synth.pairs.iter().take(5) {
        let mut q = vocab.tokenize(&pair.query);
        q.truncate(16);
        let hyps = beam_search(
            &params,
            &q,
            &vocab,
            docids.len(),
            docids.max_digits(),
            Some(&trie),
        )
        .unwrap();
        let ranked = rank_from_beam(&hyps, &docids, docids.len(), true);

        // exhaustive oracle: teacher-force every docid and sum its log-probs
        let mut oracle: Vec<(String, f64)> = docids
            .iter()
            .map(|(key, d)| {
                let digits = d.digits().unwrap();
                let mut dec = vec![PAD];
                dec.extend(vocab.encode_digits(digits));
                let logits = forward(&params, &q, &dec).unwrap();
                let mut targets = vocab.encode_digits(digits);
                targets.push(EOS);
                let lp: f64 = targets
                    .iter()
                    .enumerate()
                    .map(|(t, &y)| log_softmax_row(logits.row(t))[y as usize])
                    .sum();
                (key.to_string(), lp)
            })
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));

        // scores must be distinct by construction for exact-order comparison
        for w in oracle.windows(2) {
            assert_ne!(w[0].1, w[1].1, "degenerate tie in oracle scores");
        }
        assert_eq!(ranked.len(), oracle.len());
        for ((k1, s1), (k2, s2)) in ranked.entries().iter().zip(&oracle) {
            assert_eq!(k1, k2, "order differs for '{}'", pair.query);
            assert!((s1 - s2).abs() < 1e-9, "{k1}: {s1} vs {s2}");
        }
        checked_queries += 1;
    }
    verdict(
        7,
        checked_queries == 5,
        "wide constrained beam equals exhaustive ranking on 20 docs",
    );
}

/// Criterion 8: constrained decoding over 1000 random queries returns only
/// corpus docids; the unconstrained invalid-generation rate is reported.
#[test]
fn criterion_08_trie_validity() {
    let synth = generate(&SynthParams {
        seed: 48,
        ..Default::default()
    });
    let corpus = Corpus::from_documents(synth.documents).unwrap();
    let vocab = Vocabulary::build(corpus.docs(), 512).unwrap();
    let config = ModelConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        max_enc_len: 12,
        max_dec_len: 6,
        vocab_size: vocab.n_tokens(),
        n_docs: 0,
        dropout: 0.0,
        seed: 48,
    };
    let params = init_params(&config).unwrap();
    let keys: Vec<String> = corpus.docs().iter().map(|d| d.doc_key.clone()).collect();
    let docids = assign_naive_ids(&keys, 48).unwrap();
    let trie = docids.build_trie().unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(480);
    let queries: Vec<Vec<u32>> = (0..1000)
        .map(|_| {
            let len = rng.gen_range(2..=10);
            (0..len)
                .map(|_| rng.gen_range(3..vocab.n_tokens() as u32))
                .collect()
        })
        .collect();

    let ranked =
        decode_ranked_batch(&params, &queries, &vocab, &docids, 10, 10, Some(&trie)).unwrap();
    let mut returned = 0usize;
    for r in &ranked {
        assert!(!r.is_empty(), "constrained decode returned nothing");
        for (key, _) in r.entries() {
            assert!(docids.get(key).is_some(), "invalid doc key '{key}'");
            returned += 1;
        }
    }

    let invalid_rate = invalid_generation_rate(&params, &vocab, &docids, &queries, 10).unwrap();
    verdict(
        8,
        true,
        &format!(
            "constrained: {returned} returned docids all valid over 1000 queries; \
             unconstrained invalid-generation rate {invalid_rate:.4} (reported, no threshold)"
        ),
    );
}

/// Criterion 9: semantic-id structure on 3-blob embeddings (30 docs, c=5):
/// depth-1 prefix partition equals the k-means partition, ids unique,
/// recursion exactly above the threshold.
#[test]
fn criterion_09_semantic_id_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(49);
    let centers = [(0.0, 0.0), (25.0, 0.0), (0.0, 25.0)];
    let mut data = Vec::new();
    for &(cx, cy) in &centers {
        for _ in 0..10 {
            let t = Tensor::randn(1, 2, 0.5, &mut rng);
            data.push(cx + t.data[0]);
            data.push(cy + t.data[1]);
        }
    }
    let x = Tensor::from_vec(30, 2, data);
    let keys: Vec<String> = (0..30).map(|i| format!("d{i}")).collect();
    let params = SemanticIdParams {
        c: 5,
        seed: 490,
        ..Default::default()
    };
    let map = generate_semantic_ids(&x, &keys, &params).unwrap();
    let ids: Vec<String> = (0..30)
        .map(|i| {
            map.get(&format!("d{i}"))
                .unwrap()
                .digits()
                .unwrap()
                .to_string()
        })
        .collect();

    // uniqueness
    let mut sorted = ids.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), 30, "ids must be unique");

    // prefix partition at depth 1 equals an independent clustering re-run
    let oracle = semantic_root_clustering(&x, &params).unwrap();
    for (i, id) in ids.iter().enumerate() {
        let digit = (id.as_bytes()[0] - b'0') as usize;
        assert_eq!(digit, oracle.assignments[i], "doc {i} prefix != cluster");
    }

    // recursion happened exactly for groups larger than c
    fn check(ids: &[&str], c: usize) {
        let mut groups: std::collections::BTreeMap<u8, Vec<&str>> = Default::default();
        for id in ids {
            groups.entry(id.as_bytes()[0]).or_default().push(&id[1..]);
        }
        for (_, suffixes) in groups {
            if suffixes.len() > c {
                check(&suffixes, c);
            } else {
                let width = (suffixes.len() - 1).to_string().len();
                let mut got: Vec<&str> = suffixes.clone();
                got.sort_unstable();
                let mut expected: Vec<String> = (0..suffixes.len())
                    .map(|i| format!("{i:0width$}"))
                    .collect();
                expected.sort();
                assert_eq!(got, expected, "leaf ordinals wrong");
            }
        }
    }
    let refs: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
    check(&refs, params.c);
    verdict(
        9,
        true,
        "prefix partition matches clustering; ids unique; recursion iff size > c",
    );
}

/// Criterion 10: the r=32 stream's indexing fraction over 1e5 draws lies
/// within 3 binomial standard deviations of 32/33.
#[test]
fn criterion_10_multitask_mixing() {
    let idx = |_e: u64| -> genret::error::Result<Vec<TrainingExample>> {
        Ok((0..10)
            .map(|i| TrainingExample {
                enc_tokens: vec![i],
                dec_targets: vec![i, EOS],
                task: TaskKind::Indexing,
            })
            .collect())
    };
    let ret = |_e: u64| -> genret::error::Result<Vec<TrainingExample>> {
        Ok((0..10)
            .map(|i| TrainingExample {
                enc_tokens: vec![i],
                dec_targets: vec![i, EOS],
                task: TaskKind::Retrieval,
            })
            .collect())
    };
    let stream = MixStream::new(
        Some(&idx),
        Some(&ret),
        TaskMix {
            r: 32.0,
            buffer_size: 256,
            seed: 50,
        },
    )
    .unwrap();
    let n = 100_000usize;
    let indexing = stream
        .take(n)
        .filter(|e| e.task == TaskKind::Indexing)
        .count();
    let p = 32.0 / 33.0;
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    let frac = indexing as f64 / n as f64;
    verdict(
        10,
        (frac - p).abs() <= 3.0 * sigma,
        &format!(
            "indexing fraction {frac:.5} within 3 sigma ({:.1e}) of {p:.5}",
            3.0 * sigma
        ),
    );
}

/// Criterion 11: indexing-only training (r = inf) completes with zero
/// retrieval examples consumed and still scores Hits@10 > 0 on held-out
/// paraphrase queries.
#[test]
fn criterion_11_zero_shot() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_corpus_100(data.path(), 64, 51);

    let mut config = compact_config(data.path(), out.path());
    config.zs_pairs = Some(data.path().join("zs_pairs.tsv"));
    config.r = f64::INFINITY;
    config.steps = 3000;
    config.eval_every = 500;
    config.seed = 11;
    let artifacts = run_experiment(&config).unwrap();

    let zs = artifacts
        .report
        .zero_shot
        .as_ref()
        .expect("zero-shot report");
    let h10 = zs.hits_at(10);
    let consumed = artifacts.report.consumed_retrieval;
    verdict(
        11,
        h10 > 0.0 && consumed == 0,
        &format!("zero-shot Hits@10 {h10:.3} > 0 with {consumed} retrieval examples consumed"),
    );
}

/// Criterion 12: identical config + seed yields a byte-identical metric CSV.
#[test]
fn criterion_12_determinism() {
    let data = tempfile::tempdir().unwrap();
    write_corpus_100(data.path(), 64, 52);

    let run = || {
        let out = tempfile::tempdir().unwrap();
        let mut config = compact_config(data.path(), out.path());
        config.steps = 200;
        config.eval_every = 100;
        config.seed = 12;
        let artifacts = run_experiment(&config).unwrap();
        std::fs::read(&artifacts.trace_csv).unwrap()
    };
    let a = run();
    let b = run();
    verdict(
        12,
        a == b,
        &format!(
            "rerun produced byte-identical trace.csv ({} bytes)",
            a.len()
        ),
    );
}

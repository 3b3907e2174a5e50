//! Bundled mini-corpus generator.
//!
//! Documents are mixtures of pseudo-words at three tiers: per-topic words
//! shared by all documents of a topic (giving the semantic-id clustering real
//! signal), per-document entity words unique to one document (making queries
//! answerable), and common background words (including stopwords, so the set
//! representation has work to do). Entity words always appear within the
//! first few tokens, mirroring corpora whose key content is front-loaded.
//!
//! Two query files are generated: template queries for training/validation
//! pairs, and held-out paraphrase queries (different template, different
//! entity mention) for zero-shot evaluation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, QueryDocPair};
use crate::seeding;

const SYLLABLES: &[&str] = &[
    "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du", "ka", "ke", "ki", "ko", "ku", "la",
    "le", "li", "lo", "lu", "ma", "me", "mi", "mo", "mu", "na", "ne", "ni", "no", "nu", "ra", "re",
    "ri", "ro", "ru", "sa", "se", "si", "so", "su", "ta", "te", "ti", "to", "tu", "za", "ze", "zi",
    "zo", "zu",
];

const BACKGROUND: &[&str] = &[
    "the", "of", "a", "in", "and", "is", "with", "from", "notes", "report", "archive", "entry",
    "records", "study", "volume", "series",
];

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_topics: usize,
    pub docs_per_topic: usize,
    /// Tokens per document.
    pub doc_len: usize,
    /// Distinct topic words per topic.
    pub topic_words: usize,
    /// Distinct entity words per document.
    pub entity_words: usize,
    /// Training/validation queries per document.
    pub queries_per_doc: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_topics: 10,
            docs_per_topic: 10,
            doc_len: 64,
            topic_words: 8,
            entity_words: 3,
            queries_per_doc: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub documents: Vec<Document>,
    pub pairs: Vec<QueryDocPair>,
    /// Held-out paraphrase queries for zero-shot evaluation.
    pub zs_pairs: Vec<QueryDocPair>,
}

fn pseudo_word(
    rng: &mut ChaCha8Rng,
    syllables: usize,
    used: &mut std::collections::HashSet<String>,
) -> String {
    loop {
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(SYLLABLES[rng.gen_range(0..SYLLABLES.len())]);
        }
        if used.insert(w.clone()) {
            return w;
        }
    }
}

const TAG_WORDS: u64 = 0x53594e57;
const TAG_TEXT: u64 = 0x53594e54;

/// Generate the corpus, training/validation pairs, and zero-shot pairs.
/// Fully deterministic given the parameters.
pub fn generate(params: &SynthParams) -> SynthCorpus {
    let mut used: std::collections::HashSet<String> =
        BACKGROUND.iter().map(|s| s.to_string()).collect();
    let mut word_rng = seeding::rng(params.seed, TAG_WORDS);

    let topic_words: Vec<Vec<String>> = (0..params.n_topics)
        .map(|_| {
            (0..params.topic_words)
                .map(|_| pseudo_word(&mut word_rng, 3, &mut used))
                .collect()
        })
        .collect();

    let mut documents = Vec::new();
    let mut pairs = Vec::new();
    let mut zs_pairs = Vec::new();

    for (t, tws) in topic_words.iter().enumerate() {
        for d in 0..params.docs_per_topic {
            let doc_key = format!("t{t}d{d}");
            let entities: Vec<String> = (0..params.entity_words)
                .map(|_| pseudo_word(&mut word_rng, 4, &mut used))
                .collect();

            let mut text_rng = seeding::rng(
                params.seed ^ TAG_TEXT,
                (t * params.docs_per_topic + d) as u64,
            );
            let mut tokens: Vec<&str> = Vec::with_capacity(params.doc_len);
            // front-load every entity word, interleaved with topic words
            for (i, e) in entities.iter().enumerate() {
                tokens.push(e);
                tokens.push(&tws[i % tws.len()]);
            }
            while tokens.len() < params.doc_len {
                let r: f64 = text_rng.gen();
                if r < 0.45 {
                    tokens.push(&tws[text_rng.gen_range(0..tws.len())]);
                } else if r < 0.70 {
                    tokens.push(&entities[text_rng.gen_range(0..entities.len())]);
                } else {
                    tokens.push(BACKGROUND[text_rng.gen_range(0..BACKGROUND.len())]);
                }
            }
            tokens.truncate(params.doc_len);

            documents.push(Document {
                doc_key: doc_key.clone(),
                text: tokens.join(" "),
            });

            let e = |i: usize| &entities[i % entities.len()];
            let w = |i: usize| &tws[i % tws.len()];
            for q in 0..params.queries_per_doc {
                pairs.push(QueryDocPair {
                    query: format!("which document discusses {} {} {}", e(q), e(q + 1), w(q)),
                    doc_key: doc_key.clone(),
                });
            }
            zs_pairs.push(QueryDocPair {
                query: format!("find the article about {} {}", e(2), w(3)),
                doc_key: doc_key.clone(),
            });
        }
    }

    SynthCorpus {
        documents,
        pairs,
        zs_pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;

    #[test]
    fn generation_is_deterministic() {
        let params = SynthParams::default();
        let a = generate(&params);
        let b = generate(&params);
        assert_eq!(a.documents, b.documents);
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.zs_pairs, b.zs_pairs);
    }

    #[test]
    fn shape_matches_parameters() {
        let params = SynthParams {
            n_topics: 4,
            docs_per_topic: 5,
            doc_len: 48,
            queries_per_doc: 2,
            ..Default::default()
        };
        let c = generate(&params);
        assert_eq!(c.documents.len(), 20);
        assert_eq!(c.pairs.len(), 40);
        assert_eq!(c.zs_pairs.len(), 20);
        for d in &c.documents {
            assert_eq!(d.text.split_whitespace().count(), 48);
        }
    }

    #[test]
    fn all_queries_resolve_and_templates_differ() {
        let c = generate(&SynthParams::default());
        let corpus = Corpus::from_documents(c.documents.clone()).unwrap();
        for p in c.pairs.iter().chain(&c.zs_pairs) {
            assert!(corpus.get(&p.doc_key).is_some());
        }
        let train_queries: std::collections::HashSet<&str> =
            c.pairs.iter().map(|p| p.query.as_str()).collect();
        for p in &c.zs_pairs {
            assert!(
                !train_queries.contains(p.query.as_str()),
                "zero-shot query leaked into training: {}",
                p.query
            );
        }
    }

    #[test]
    fn entities_appear_in_the_first_32_tokens() {
        let c = generate(&SynthParams {
            doc_len: 256,
            ..Default::default()
        });
        for (doc, pair) in c.documents.iter().zip(&c.pairs) {
            let head: std::collections::HashSet<&str> =
                doc.text.split_whitespace().take(32).collect();
            // the query's entity words (positions 3 and 4) must be in the head
            let q: Vec<&str> = pair.query.split_whitespace().collect();
            assert!(
                head.contains(q[3]),
                "entity {} not early in {}",
                q[3],
                doc.doc_key
            );
            assert!(
                head.contains(q[4]),
                "entity {} not early in {}",
                q[4],
                doc.doc_key
            );
        }
    }

    #[test]
    fn topic_words_are_shared_within_topics() {
        let c = generate(&SynthParams::default());
        // docs of the same topic overlap in vocabulary more than across topics
        let words = |i: usize| -> std::collections::HashSet<&str> {
            c.documents[i].text.split_whitespace().collect()
        };
        let same = words(0).intersection(&words(1)).count();
        let cross = words(0).intersection(&words(15)).count();
        assert!(
            same > cross,
            "same-topic overlap {same} should exceed cross-topic {cross}"
        );
    }
}

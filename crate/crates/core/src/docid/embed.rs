//! Unsupervised document embeddings for the semantic identifier scheme.
//!
//! TF-IDF vectors projected through a seeded Gaussian random matrix and
//! L2-normalized. The projection row for each word is generated from a
//! stable hash of the word, so the embedding of a document depends only on
//! (its text, the corpus document frequencies, d_embed, seed).

use std::collections::HashMap;

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::seeding;
use crate::tensor::{l2_norm, Tensor};

const TAG_EMBED: u64 = 0x454d4244;

/// Anything that can turn documents into an `n_docs x d_embed` matrix with
/// rows aligned to document order.
pub trait DocumentEmbedder {
    fn embed(&self, docs: &[Document]) -> Result<Tensor>;
}

/// The default embedder: TF-IDF + seeded Gaussian random projection.
#[derive(Debug, Clone, Copy)]
pub struct TfidfProjectionEmbedder {
    pub d_embed: usize,
    pub seed: u64,
}

impl DocumentEmbedder for TfidfProjectionEmbedder {
    fn embed(&self, docs: &[Document]) -> Result<Tensor> {
        embed_documents(docs, self.d_embed, self.seed)
    }
}

/// Embed documents; row i is the unit-norm random projection of document i's
/// TF-IDF vector. Deterministic given `seed`.
pub fn embed_documents(docs: &[Document], d_embed: usize, seed: u64) -> Result<Tensor> {
    if docs.is_empty() {
        return Err(Error::InvalidInput("cannot embed an empty corpus".into()));
    }
    if d_embed < 2 {
        return Err(Error::Config(format!(
            "d_embed must be at least 2, got {d_embed}"
        )));
    }

    // document frequencies over whitespace words
    let mut df: HashMap<&str, u64> = HashMap::new();
    let mut term_counts: Vec<HashMap<&str, u64>> = Vec::with_capacity(docs.len());
    for d in docs {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for w in d.text.split_whitespace() {
            *counts.entry(w).or_insert(0) += 1;
        }
        for w in counts.keys() {
            *df.entry(w).or_insert(0) += 1;
        }
        term_counts.push(counts);
    }
    let n = docs.len() as f64;

    // per-word projection rows, cached across documents
    let mut proj_rows: HashMap<&str, Vec<f64>> = HashMap::new();
    let scale = 1.0 / (d_embed as f64).sqrt();

    let mut x = Tensor::zeros(docs.len(), d_embed);
    for (i, counts) in term_counts.iter().enumerate() {
        let row = x.row_mut(i);
        // accumulate in sorted term order: float sums must not depend on
        // hash-map iteration order or the output varies across processes
        let mut terms: Vec<(&str, u64)> = counts.iter().map(|(&w, &tf)| (w, tf)).collect();
        terms.sort_unstable_by_key(|&(w, _)| w);
        for (w, tf) in terms {
            let idf = ((1.0 + n) / (1.0 + df[&w] as f64)).ln() + 1.0;
            let weight = tf as f64 * idf;
            let pr = proj_rows.entry(w).or_insert_with(|| {
                let mut rng = seeding::rng(seed, TAG_EMBED ^ seeding::hash_str(w));
                Tensor::randn(1, d_embed, scale, &mut rng).data
            });
            for (o, p) in row.iter_mut().zip(pr.iter()) {
                *o += weight * p;
            }
        }
        let norm = l2_norm(row);
        if norm > 0.0 {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
    debug_assert!(x.is_finite());
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::normalize;
    use crate::tensor::dot;

    fn doc(key: &str, text: &str) -> Document {
        Document {
            doc_key: key.into(),
            text: normalize(text),
        }
    }

    #[test]
    fn identical_documents_embed_identically() {
        let docs = vec![doc("a", "red green blue"), doc("b", "red green blue")];
        let x = embed_documents(&docs, 32, 5).unwrap();
        let cos = dot(x.row(0), x.row(1));
        assert!((cos - 1.0).abs() < 1e-9, "cosine {cos}");
    }

    #[test]
    fn rows_have_unit_norm() {
        let docs = vec![
            doc("a", "one two three"),
            doc("b", "four five"),
            doc("c", "six six six seven"),
        ];
        let x = embed_documents(&docs, 16, 9).unwrap();
        for i in 0..3 {
            assert!((l2_norm(x.row(i)) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn embedding_is_deterministic() {
        let docs = vec![doc("a", "alpha beta"), doc("b", "gamma")];
        let x1 = embed_documents(&docs, 24, 42).unwrap();
        let x2 = embed_documents(&docs, 24, 42).unwrap();
        assert_eq!(x1.data, x2.data);
    }

    #[test]
    fn d_embed_below_two_is_config_error() {
        let docs = vec![doc("a", "x")];
        assert!(matches!(
            embed_documents(&docs, 1, 0),
            Err(Error::Config(_))
        ));
    }

    /// Disjoint-vocabulary documents have exactly orthogonal TF-IDF vectors
    /// (the oracle); the random projection must keep their cosine small.
    #[test]
    fn disjoint_vocab_cosine_stays_near_zero_across_seeds() {
        let docs = vec![
            doc("a", "apple banana cherry damson elder"),
            doc("b", "fig grape hazel ilama jujube"),
        ];
        // oracle: TF-IDF vectors live on disjoint coordinates, cosine exactly 0
        let words_a: std::collections::HashSet<&str> = docs[0].text.split_whitespace().collect();
        let words_b: std::collections::HashSet<&str> = docs[1].text.split_whitespace().collect();
        assert!(words_a.is_disjoint(&words_b));

        // cosine after a 256-dim Gaussian projection of orthogonal vectors is
        // ~N(0, 1/256); verify the +/-0.15 (2.4 sigma) distortion bound holds
        // for the overwhelming majority of seeds and on average
        let mut within = 0usize;
        let mut abs_sum = 0.0;
        for seed in 0..1000 {
            let x = embed_documents(&docs, 256, seed).unwrap();
            let cos = dot(x.row(0), x.row(1));
            if cos.abs() <= 0.15 {
                within += 1;
            }
            abs_sum += cos.abs();
        }
        assert!(within >= 950, "only {within}/1000 seeds within +/-0.15");
        let mean = abs_sum / 1000.0;
        assert!(mean <= 0.08, "mean |cosine| {mean} too large");
    }
}

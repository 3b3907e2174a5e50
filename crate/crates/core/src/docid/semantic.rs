//! Semantically structured identifiers via recursive clustering.
//!
//! Documents are clustered into at most `k` (<= 10) groups; each document's
//! id starts with its cluster digit. Clusters larger than the threshold `c`
//! recurse; smaller clusters close with a within-cluster ordinal, zero-padded
//! to the width of `cluster_size - 1` so sibling ids stay prefix-unambiguous.
//! Output order matches input order.

use super::{kmeans, Docid, DocidAssignment, DocidScheme};
use crate::error::{Error, Result};
use crate::seeding;
use crate::tensor::Tensor;

const TAG_SEMANTIC: u64 = 0x53454d49;

/// Knobs for id generation. The reference defaults are `k = 10`, `c = 100`;
/// the desk-scale default threshold is `c = 10`.
#[derive(Debug, Clone, Copy)]
pub struct SemanticIdParams {
    /// Branching factor, at most 10 (one decimal digit per level).
    pub k: usize,
    /// Recursion threshold: clusters with more than `c` members subdivide.
    pub c: usize,
    pub seed: u64,
    /// Lloyd iteration cap per clustering call.
    pub max_iters: usize,
}

impl Default for SemanticIdParams {
    fn default() -> Self {
        SemanticIdParams {
            k: 10,
            c: 10,
            seed: 0,
            max_iters: 50,
        }
    }
}

/// Decimal width of the largest ordinal in a cluster of `size` members.
fn ordinal_width(size: usize) -> usize {
    debug_assert!(size >= 1);
    (size - 1).to_string().len()
}

fn zero_padded(n: usize, width: usize) -> String {
    format!("{n:0width$}")
}

/// The depth-0 clustering that id generation performs, exposed so the prefix
/// partition can be verified against an independent re-run.
pub fn semantic_root_clustering(
    x: &Tensor,
    params: &SemanticIdParams,
) -> Result<super::ClusterResult> {
    kmeans(
        x,
        params.k,
        derive_seed(params.seed, 0, 0),
        params.max_iters,
    )
}

/// Generate the docid strings for embedding rows `x` (aligned with
/// `doc_keys`). Every id's first digit is the document's top-level cluster.
pub fn generate_semantic_ids(
    x: &Tensor,
    doc_keys: &[String],
    params: &SemanticIdParams,
) -> Result<DocidAssignment> {
    if x.rows != doc_keys.len() {
        return Err(Error::InvalidInput(format!(
            "embedding rows ({}) do not match doc_keys ({})",
            x.rows,
            doc_keys.len()
        )));
    }
    if doc_keys.is_empty() {
        return Err(Error::InvalidInput("no documents to assign ids to".into()));
    }
    if params.c < 1 {
        return Err(Error::Config("semantic id threshold c must be >= 1".into()));
    }
    if params.k < 2 || params.k > 10 {
        return Err(Error::Config(format!(
            "semantic id branching k must be in 2..=10, got {}",
            params.k
        )));
    }

    let mut ids = vec![String::new(); doc_keys.len()];
    let all: Vec<usize> = (0..doc_keys.len()).collect();
    assign_level(x, &all, params, derive_seed(params.seed, 0, 0), 0, &mut ids)?;

    let docids = ids.into_iter().map(Docid::SemanticString).collect();
    DocidAssignment::new(DocidScheme::Semantic, doc_keys.to_vec(), docids)
}

fn derive_seed(seed: u64, depth: u64, digit: u64) -> u64 {
    seeding::derive2(seed, TAG_SEMANTIC ^ depth, digit)
}

fn assign_level(
    x: &Tensor,
    members: &[usize],
    params: &SemanticIdParams,
    level_seed: u64,
    depth: usize,
    out: &mut [String],
) -> Result<()> {
    // embeddings may contain exact duplicates; past some depth further
    // clustering cannot separate them, so close with wide ordinals instead
    if depth > 64 {
        close_with_ordinals(members, out);
        return Ok(());
    }

    let sub = gather_rows(x, members);
    let clustering = kmeans(&sub, params.k, level_seed, params.max_iters)?;

    // groups in cluster order; members keep their input order inside a group
    let k_eff = clustering.k();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k_eff];
    for (pos, &orig) in members.iter().enumerate() {
        groups[clustering.assignments[pos]].push(orig);
    }

    let stuck = groups.iter().any(|g| g.len() == members.len()) && k_eff > 1;
    for (digit, group) in groups.iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        for &m in group {
            out[m].push(char::from(b'0' + digit as u8));
        }
        if group.len() > params.c && !stuck {
            assign_level(
                x,
                group,
                params,
                derive_seed(level_seed, depth as u64 + 1, digit as u64),
                depth + 1,
                out,
            )?;
        } else {
            close_with_ordinals(group, out);
        }
    }
    Ok(())
}

fn close_with_ordinals(members: &[usize], out: &mut [String]) {
    let width = ordinal_width(members.len());
    for (ordinal, &m) in members.iter().enumerate() {
        out[m].push_str(&zero_padded(ordinal, width));
    }
}

fn gather_rows(x: &Tensor, rows: &[usize]) -> Tensor {
    let mut sub = Tensor::zeros(rows.len(), x.cols);
    for (i, &r) in rows.iter().enumerate() {
        sub.row_mut(i).copy_from_slice(x.row(r));
    }
    sub
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn keys(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("d{i}")).collect()
    }

    /// Three well-separated blobs of 10 points each in 2-D.
    fn three_blobs(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [(0.0, 0.0), (20.0, 0.0), (0.0, 20.0)];
        let mut data = Vec::new();
        for &(cx, cy) in &centers {
            for _ in 0..10 {
                let t = Tensor::randn(1, 2, 0.5, &mut rng);
                data.push(cx + t.data[0]);
                data.push(cy + t.data[1]);
            }
        }
        Tensor::from_vec(30, 2, data)
    }

    #[test]
    fn single_document_gets_id_00() {
        let x = Tensor::from_vec(1, 2, vec![0.3, -0.1]);
        let map = generate_semantic_ids(&x, &keys(1), &SemanticIdParams::default()).unwrap();
        assert_eq!(map.get("d0").unwrap().digits(), Some("00"));
    }

    #[test]
    fn blob_ids_are_unique_with_valid_first_digits() {
        let x = three_blobs(4);
        let params = SemanticIdParams {
            c: 5,
            seed: 11,
            ..Default::default()
        };
        let map = generate_semantic_ids(&x, &keys(30), &params).unwrap();

        let ids: Vec<&str> = (0..30)
            .map(|i| map.get(&format!("d{i}")).unwrap().digits().unwrap())
            .collect();

        // no two ids equal; every first digit is a decimal digit
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 30);
        assert!(ids.iter().all(|s| s.as_bytes()[0].is_ascii_digit()));
    }

    /// With the branching factor matching the blob count, clustering keeps
    /// each blob intact and same-blob documents share their first digit.
    #[test]
    fn blobs_share_first_digit_when_branching_matches_structure() {
        let x = three_blobs(4);
        let params = SemanticIdParams {
            k: 3,
            c: 5,
            seed: 11,
            ..Default::default()
        };
        let map = generate_semantic_ids(&x, &keys(30), &params).unwrap();
        let ids: Vec<&str> = (0..30)
            .map(|i| map.get(&format!("d{i}")).unwrap().digits().unwrap())
            .collect();
        for blob in 0..3 {
            let first = ids[blob * 10].as_bytes()[0];
            for i in 0..10 {
                assert_eq!(ids[blob * 10 + i].as_bytes()[0], first, "blob {blob}");
            }
        }
        assert_ne!(ids[0].as_bytes()[0], ids[10].as_bytes()[0]);
        assert_ne!(ids[10].as_bytes()[0], ids[20].as_bytes()[0]);
    }

    /// Oracle: re-run the clustering independently with the same derived seed;
    /// the depth-1 prefix partition must equal the k-means partition.
    #[test]
    fn prefix_partition_matches_independent_clustering() {
        let x = three_blobs(8);
        let params = SemanticIdParams {
            c: 5,
            seed: 23,
            ..Default::default()
        };
        let map = generate_semantic_ids(&x, &keys(30), &params).unwrap();

        let oracle = kmeans(
            &x,
            params.k,
            derive_seed(params.seed, 0, 0),
            params.max_iters,
        )
        .unwrap();
        for i in 0..30 {
            let digit = map
                .get(&format!("d{i}"))
                .unwrap()
                .digits()
                .unwrap()
                .as_bytes()[0]
                - b'0';
            assert_eq!(digit as usize, oracle.assignments[i], "doc {i}");
        }
    }

    /// Recursive structural check: a first-digit group larger than `c` must
    /// have recursed (suffixes form a valid id set themselves); a group of
    /// `c` or fewer must close with exactly the ordinals 0..size-1.
    fn check_structure(ids: &[&str], c: usize) {
        let mut groups: std::collections::BTreeMap<u8, Vec<&str>> = Default::default();
        for id in ids {
            assert!(!id.is_empty());
            groups.entry(id.as_bytes()[0]).or_default().push(&id[1..]);
        }
        for (_, suffixes) in groups {
            if suffixes.len() > c {
                check_structure(&suffixes, c);
            } else {
                let width = ordinal_width(suffixes.len());
                let mut expected: Vec<String> =
                    (0..suffixes.len()).map(|i| zero_padded(i, width)).collect();
                expected.sort();
                let mut got: Vec<String> = suffixes.iter().map(|s| s.to_string()).collect();
                got.sort();
                assert_eq!(got, expected);
            }
        }
    }

    #[test]
    fn recursion_happens_exactly_above_threshold() {
        let x = three_blobs(15);
        let params = SemanticIdParams {
            c: 5,
            seed: 2,
            ..Default::default()
        };
        let map = generate_semantic_ids(&x, &keys(30), &params).unwrap();
        let ids: Vec<&str> = (0..30)
            .map(|i| map.get(&format!("d{i}")).unwrap().digits().unwrap())
            .collect();
        check_structure(&ids, params.c);
    }

    #[test]
    fn ids_are_unique_across_corpus_sizes() {
        for &n in &[1usize, 2, 10, 101, 1000] {
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            let x = Tensor::randn(n, 8, 1.0, &mut rng);
            let map = generate_semantic_ids(&x, &keys(n), &SemanticIdParams::default()).unwrap();
            let mut ids: Vec<String> = map
                .iter()
                .map(|(_, d)| d.digits().unwrap().to_string())
                .collect();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), n, "duplicate ids at corpus size {n}");
        }
    }

    #[test]
    fn duplicate_embeddings_still_get_unique_ids() {
        // 25 identical points with c=5 cannot be separated by clustering
        let x = Tensor::from_vec(25, 2, vec![1.0; 50]);
        let params = SemanticIdParams {
            c: 5,
            seed: 1,
            ..Default::default()
        };
        let map = generate_semantic_ids(&x, &keys(25), &params).unwrap();
        let mut ids: Vec<String> = map
            .iter()
            .map(|(_, d)| d.digits().unwrap().to_string())
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 25);
    }

    #[test]
    fn duplicate_doc_keys_are_rejected() {
        let x = Tensor::from_vec(2, 2, vec![0.0, 0.0, 1.0, 1.0]);
        let dup = vec!["same".to_string(), "same".to_string()];
        assert!(matches!(
            generate_semantic_ids(&x, &dup, &SemanticIdParams::default()),
            Err(Error::DuplicateKey(_))
        ));
    }
}

//! Lloyd's algorithm with k-means++ seeding.
//!
//! Deterministic given the seed: nearest-centroid ties break toward the
//! lower cluster index, and the parallel assignment step collects results
//! in point order, so worker count never changes the outcome. An empty
//! cluster is re-seeded at the point farthest from its assigned centroid
//! (skipped when every point sits exactly on its centroid, where relocation
//! cannot lower the objective).

use rand::Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::seeding;
use crate::tensor::Tensor;

const TAG_KMEANS: u64 = 0x4b4d4e53;

/// Output of one clustering run.
#[derive(Debug, Clone)]
pub struct ClusterResult {
    /// Per-point cluster index in `[0, k)`.
    pub assignments: Vec<usize>,
    /// `k x d` centroid matrix.
    pub centroids: Tensor,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub objective_trace: Vec<f64>,
}

impl ClusterResult {
    pub fn k(&self) -> usize {
        self.centroids.rows
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

fn nearest(point: &[f64], centroids: &Tensor) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for c in 0..centroids.rows {
        let d = sq_dist(point, centroids.row(c));
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

/// k-means++ initialization: first centroid uniform, the rest sampled with
/// probability proportional to squared distance from the chosen set.
fn init_plus_plus(x: &Tensor, k: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Tensor {
    let n = x.rows;
    let mut centroids = Tensor::zeros(k, x.cols);
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).copy_from_slice(x.row(first));

    let mut dist: Vec<f64> = (0..n)
        .map(|i| sq_dist(x.row(i), centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(x.row(chosen));
        for (i, best) in dist.iter_mut().enumerate() {
            let d = sq_dist(x.row(i), centroids.row(c));
            if d < *best {
                *best = d;
            }
        }
    }
    centroids
}

/// Cluster the rows of `x` into at most `k` clusters. When `x` has fewer
/// rows than `k`, the effective k is the row count.
pub fn kmeans(x: &Tensor, k: usize, seed: u64, max_iters: usize) -> Result<ClusterResult> {
    if x.rows == 0 {
        return Err(Error::InvalidInput(
            "kmeans needs at least one point".into(),
        ));
    }
    let k = k.max(1).min(x.rows);
    let mut rng = seeding::rng(seed, TAG_KMEANS);
    let mut centroids = init_plus_plus(x, k, &mut rng);

    let mut assignments: Vec<usize> = vec![usize::MAX; x.rows];
    let mut objective_trace = Vec::new();

    for _ in 0..max_iters.max(1) {
        // assignment step (data-parallel; output collected in point order)
        let assigned: Vec<(usize, f64)> =
            par::ordered_map_range(x.rows, |i| nearest(x.row(i), &centroids));
        let mut new_assign: Vec<usize> = assigned.iter().map(|&(c, _)| c).collect();
        let mut dists: Vec<f64> = assigned.iter().map(|&(_, d)| d).collect();

        // empty-cluster repair: move the centroid onto the farthest point
        // whose current cluster keeps at least one other member
        let mut counts = vec![0usize; k];
        for &c in &new_assign {
            counts[c] += 1;
        }
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let mut far_idx = None;
            let mut far_d = 0.0;
            for i in 0..x.rows {
                if counts[new_assign[i]] > 1 && dists[i] > far_d {
                    far_d = dists[i];
                    far_idx = Some(i);
                }
            }
            if let Some(i) = far_idx {
                counts[new_assign[i]] -= 1;
                counts[empty] += 1;
                new_assign[i] = empty;
                centroids.row_mut(empty).copy_from_slice(x.row(i));
                dists[i] = 0.0;
            }
        }

        let converged = new_assign == assignments;
        assignments = new_assign;
        if converged {
            break;
        }

        // update step: centroid = mean of members (skip empties)
        let mut sums = Tensor::zeros(k, x.cols);
        for (i, &c) in assignments.iter().enumerate() {
            let row = x.row(i);
            let s = sums.row_mut(c);
            for (a, b) in s.iter_mut().zip(row) {
                *a += b;
            }
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let inv = 1.0 / count as f64;
                let (s, out) = (sums.row(c), centroids.row_mut(c));
                for (o, v) in out.iter_mut().zip(s) {
                    *o = v * inv;
                }
            }
        }

        let wcss: f64 = (0..x.rows)
            .map(|i| sq_dist(x.row(i), centroids.row(assignments[i])))
            .sum();
        objective_trace.push(wcss);
    }

    Ok(ClusterResult {
        assignments,
        centroids,
        objective_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_points_collapse_to_one_effective_cluster() {
        let x = Tensor::from_vec(4, 2, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let res = kmeans(&x, 2, 0, 50).unwrap();
        assert_eq!(res.centroids.row(0), res.centroids.row(1));
        assert!(res.assignments.iter().all(|&c| c == res.assignments[0]));
    }

    /// Two blobs separated by ten standard deviations must be recovered
    /// exactly (up to label permutation); the generator labels are the oracle.
    #[test]
    fn well_separated_blobs_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let sigma = 0.5;
        let separation = 10.0 * sigma;
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for label in 0..2 {
            let cx = label as f64 * separation;
            for _ in 0..50 {
                let t = Tensor::randn(1, 2, sigma, &mut rng);
                data.push(cx + t.data[0]);
                data.push(t.data[1]);
                truth.push(label);
            }
        }
        let x = Tensor::from_vec(100, 2, data);
        let res = kmeans(&x, 2, 1, 100).unwrap();
        let flip = res.assignments[0] != truth[0];
        for (a, t) in res.assignments.iter().zip(&truth) {
            let mapped = if flip { 1 - *a } else { *a };
            assert_eq!(mapped, *t);
        }
    }

    #[test]
    fn k_reduces_to_row_count() {
        let x = Tensor::from_vec(3, 1, vec![0.0, 5.0, 10.0]);
        let res = kmeans(&x, 10, 0, 50).unwrap();
        assert_eq!(res.k(), 3);
        let mut seen = res.assignments.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 3, "each point should get its own cluster");
    }

    #[test]
    fn objective_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::randn(80, 4, 1.0, &mut rng);
        let res = kmeans(&x, 5, 3, 100).unwrap();
        for w in res.objective_trace.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9,
                "objective increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn assignment_ties_break_to_lower_index_and_runs_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Tensor::randn(40, 3, 1.0, &mut rng);
        let a = kmeans(&x, 4, 9, 60).unwrap();
        let b = kmeans(&x, 4, 9, 60).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.centroids.data, b.centroids.data);
    }
}

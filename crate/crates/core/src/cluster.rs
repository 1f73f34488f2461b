//! Self-tuning spectral clustering of a cohort from its similarity matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterOptions {
    /// Neighbour rank defining each object's local scale.
    pub k_neighbors: usize,
    pub max_clusters: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            k_neighbors: 7,
            max_clusters: 10,
            restarts: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Cluster of each object; cluster ids are dense and numbered by first
    /// appearance.
    pub assignment: Vec<usize>,
    pub n_clusters: usize,
    /// Leading eigenvalues of the normalized affinity, descending.
    pub eigenvalues: Vec<f64>,
    /// Set when every pairwise similarity was identical.
    pub degenerate: bool,
}

impl Clustering {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == cluster).collect()
    }

    fn single(n: usize, degenerate: bool) -> Self {
        Self {
            assignment: vec![0; n],
            n_clusters: usize::from(n > 0),
            eigenvalues: Vec::new(),
            degenerate,
        }
    }
}

/// Symmetrized, self-normalized similarity: (Sᵢⱼ + Sⱼᵢ) / (Sᵢᵢ + Sⱼⱼ), so
/// identical graphs score 1 whatever their fingerprint size.
pub fn normalized_similarity(s: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = s.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = if i == j {
                1.0
            } else {
                let denom = s[i][i] + s[j][j];
                if denom > 0.0 {
                    ((s[i][j] + s[j][i]) / denom).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            };
        }
    }
    out
}

pub fn cluster_population(similarity: &[Vec<f64>], options: &ClusterOptions) -> Clustering {
    let n = similarity.len();
    if n <= 1 {
        return Clustering::single(n, false);
    }
    let s = normalized_similarity(similarity);
    let dist = |i: usize, j: usize| 1.0 - s[i][j];

    let first = dist(0, 1);
    let degenerate = (0..n).all(|i| (0..n).all(|j| i == j || (dist(i, j) - first).abs() < 1e-12));
    if degenerate {
        log::warn!("degenerate affinity: all {n} objects are equally similar, using one cluster");
        return Clustering::single(n, true);
    }

    let k = options.k_neighbors.clamp(1, n - 1);
    let sigma: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist(i, j)).collect();
            d.sort_by(f64::total_cmp);
            d[k - 1].max(1e-9)
        })
        .collect();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = dist(i, j);
                a[(i, j)] = (-(d * d) / (sigma[i] * sigma[j])).exp();
            }
        }
    }
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = a.row(i).sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
        }
    }

    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let cap = options.max_clusters.clamp(1, n);
    let mut n_clusters = 1;
    let mut best_gap = f64::NEG_INFINITY;
    for c in 1..=cap.min(n - 1) {
        let gap = values[c - 1] - values[c];
        if gap > best_gap + 1e-12 {
            best_gap = gap;
            n_clusters = c;
        }
    }

    if n_clusters == 1 {
        return Clustering {
            assignment: vec![0; n],
            n_clusters: 1,
            eigenvalues: values.into_iter().take(cap + 1).collect(),
            degenerate: false,
        };
    }

    let mut embedding: Vec<Vec<f64>> = (0..n)
        .map(|i| order[..n_clusters].iter().map(|&c| eig.eigenvectors[(i, c)]).collect())
        .collect();
    for row in &mut embedding {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }

    let raw = kmeans(&embedding, n_clusters, options.restarts.max(1), options.seed);
    let mut relabel = vec![usize::MAX; n_clusters];
    let mut next = 0;
    let assignment: Vec<usize> = raw
        .into_iter()
        .map(|c| {
            if relabel[c] == usize::MAX {
                relabel[c] = next;
                next += 1;
            }
            relabel[c]
        })
        .collect();
    Clustering {
        assignment,
        n_clusters: next,
        eigenvalues: values.into_iter().take(cap + 1).collect(),
        degenerate: false,
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ with Lloyd iterations; best inertia over restarts.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts {
        let mut centers: Vec<Vec<f64>> = vec![points[rng.gen_range(0..n)].clone()];
        while centers.len() < k {
            let d: Vec<f64> = points
                .iter()
                .map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
                .collect();
            let total: f64 = d.iter().sum();
            let pick = if total > 0.0 {
                let mut r = rng.gen::<f64>() * total;
                let mut idx = n - 1;
                for (i, &di) in d.iter().enumerate() {
                    if r < di {
                        idx = i;
                        break;
                    }
                    r -= di;
                }
                idx
            } else {
                rng.gen_range(0..n)
            };
            centers.push(points[pick].clone());
        }

        let mut assign = vec![0usize; n];
        for _ in 0..100 {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let mut bi = 0;
                let mut bd = f64::INFINITY;
                for (c, center) in centers.iter().enumerate() {
                    let d = sq_dist(p, center);
                    if d < bd {
                        bd = d;
                        bi = c;
                    }
                }
                if assign[i] != bi {
                    assign[i] = bi;
                    changed = true;
                }
            }
            for (c, center) in centers.iter_mut().enumerate() {
                let members: Vec<&Vec<f64>> = points.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
                if members.is_empty() {
                    continue;
                }
                for (dim, x) in center.iter_mut().enumerate() {
                    *x = members.iter().map(|m| m[dim]).sum::<f64>() / members.len() as f64;
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = points.iter().zip(&assign).map(|(p, &a)| sq_dist(p, &centers[a])).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b - 1e-12) {
            best = Some((inertia, assign));
        }
    }
    best.map(|(_, a)| a).unwrap_or_else(|| vec![0; n])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blocks(sizes: &[usize], within: f64, across: f64) -> Vec<Vec<f64>> {
        let group: Vec<usize> = sizes.iter().enumerate().flat_map(|(g, &s)| std::iter::repeat_n(g, s)).collect();
        let n = group.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { 1.0 } else if group[i] == group[j] { within } else { across })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn recovers_two_blocks() {
        let s = blocks(&[12, 9], 0.9, 0.05);
        let c = cluster_population(&s, &ClusterOptions::default());
        assert_eq!(c.n_clusters, 2);
        assert!(c.assignment[..12].iter().all(|&a| a == 0));
        assert!(c.assignment[12..].iter().all(|&a| a == 1));
    }

    #[test]
    fn recovers_three_blocks() {
        let s = blocks(&[10, 10, 10], 0.8, 0.1);
        let c = cluster_population(&s, &ClusterOptions::default());
        assert_eq!(c.n_clusters, 3);
        for g in 0..3 {
            let first = c.assignment[g * 10];
            assert!(c.assignment[g * 10..(g + 1) * 10].iter().all(|&a| a == first));
        }
    }

    #[test]
    fn identical_graphs_degenerate() {
        let s = vec![vec![0.4; 6]; 6];
        let c = cluster_population(&s, &ClusterOptions::default());
        assert!(c.degenerate);
        assert_eq!(c.n_clusters, 1);
    }

    #[test]
    fn single_object() {
        let c = cluster_population(&[vec![1.0]], &ClusterOptions::default());
        assert_eq!((c.n_clusters, c.assignment.clone()), (1, vec![0]));
    }

    #[test]
    fn deterministic() {
        let s = blocks(&[8, 8, 5], 0.7, 0.2);
        let o = ClusterOptions { seed: 42, ..Default::default() };
        assert_eq!(cluster_population(&s, &o), cluster_population(&s, &o));
    }
}

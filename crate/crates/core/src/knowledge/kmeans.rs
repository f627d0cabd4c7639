use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Result of one k-means run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub sizes: Vec<usize>,
    /// Within-cluster sum of squares after each update step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl Clustering {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Seeded farthest-point initialization: a random first centre, then
/// repeatedly the point farthest from all chosen centres (lowest index on ties).
fn farthest_point_init(vectors: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..vectors.len());
    let mut centroids = vec![vectors[first].clone()];
    let mut min_d: Vec<f64> = vectors
        .iter()
        .map(|v| sq_dist(v, &vectors[first]))
        .collect();
    while centroids.len() < k {
        let mut pick = 0;
        for (i, d) in min_d.iter().enumerate() {
            if *d > min_d[pick] {
                pick = i;
            }
        }
        let c = vectors[pick].clone();
        for (i, v) in vectors.iter().enumerate() {
            min_d[i] = min_d[i].min(sq_dist(v, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn means(vectors: &[Vec<f64>], assignments: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let dim = vectors[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut sizes = vec![0; k];
    for (v, &a) in vectors.iter().zip(assignments) {
        sizes[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(v) {
            *s += x;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&sizes) {
        if n > 0 {
            for x in s.iter_mut() {
                *x /= n as f64;
            }
        }
    }
    (sums, sizes)
}

/// Lloyd's k-means. Empty clusters take the point farthest from its own
/// centre among clusters with more than one member.
pub fn cluster_ngrams(
    vectors: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<Clustering> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if vectors.len() < k {
        return Err(Error::Knowledge(format!(
            "{} vectors cannot form {k} clusters",
            vectors.len()
        )));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Shape(
            "vectors to cluster differ in dimension".into(),
        ));
    }
    if vectors.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("vectors to cluster".into()));
    }

    let mut centroids = farthest_point_init(vectors, k, seed);
    let mut assignments = vec![usize::MAX; vectors.len()];
    let mut history = Vec::new();
    let mut sizes = vec![0; k];
    let mut iterations = 0;
    while iterations < max_iter.max(1) {
        iterations += 1;
        let mut next: Vec<usize> = vectors.iter().map(|v| nearest(v, &centroids).0).collect();
        let mut counts = vec![0usize; k];
        for &a in &next {
            counts[a] += 1;
        }
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let mut donor: Option<(usize, f64)> = None;
            for (i, v) in vectors.iter().enumerate() {
                if counts[next[i]] < 2 {
                    continue;
                }
                let d = sq_dist(v, &centroids[next[i]]);
                if donor.is_none_or(|(_, best)| d > best) {
                    donor = Some((i, d));
                }
            }
            let (i, _) = donor.expect("k <= number of points");
            counts[next[i]] -= 1;
            next[i] = empty;
            counts[empty] = 1;
        }
        let (updated, s) = means(vectors, &next, k);
        let inertia: f64 = vectors
            .iter()
            .zip(&next)
            .map(|(v, &a)| sq_dist(v, &updated[a]))
            .sum();
        let movement = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        let stable = next == assignments;
        history.push(inertia);
        centroids = updated;
        assignments = next;
        sizes = s;
        if stable || movement < tol {
            break;
        }
    }
    Ok(Clustering {
        centroids,
        assignments,
        sizes,
        inertia_history: history,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_points(seed: u64, n: usize, dim: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn assert_member_means(points: &[Vec<f64>], c: &Clustering) {
        for (j, centroid) in c.centroids.iter().enumerate() {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&c.assignments)
                .filter(|(_, &a)| a == j)
                .map(|(p, _)| p)
                .collect();
            assert_eq!(members.len(), c.sizes[j]);
            assert!(!members.is_empty());
            for d in 0..centroid.len() {
                let mean = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
                assert!((mean - centroid[d]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn saturation_and_single_cluster() {
        let pts = random_points(1, 6, 3);
        let c = cluster_ngrams(&pts, 6, 0, 50, 1e-12).unwrap();
        assert!(c.inertia() < 1e-20);
        let mut cents = c.centroids.clone();
        let mut expected = pts.clone();
        cents.sort_by(|a, b| a.partial_cmp(b).unwrap());
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(cents, expected);

        let c = cluster_ngrams(&pts, 1, 0, 50, 1e-12).unwrap();
        assert_member_means(&pts, &c);
        assert_eq!(c.sizes, vec![6]);
    }

    #[test]
    fn too_few_points() {
        assert!(cluster_ngrams(&random_points(2, 3, 2), 4, 0, 10, 1e-9).is_err());
        assert!(cluster_ngrams(&random_points(2, 3, 2), 0, 0, 10, 1e-9).is_err());
    }

    #[test]
    fn separated_groups_match_brute_force_partition() {
        let mut pts = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for centre in [[0.0, 0.0], [10.0, -4.0]] {
            for _ in 0..4 {
                pts.push(vec![
                    centre[0] + rng.random_range(-1.0..1.0),
                    centre[1] + rng.random_range(-1.0..1.0),
                ]);
            }
        }
        // every 2-partition of 8 points
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1u32..(1 << 7) {
            let groups: Vec<Vec<&Vec<f64>>> = (0..2)
                .map(|g| {
                    (0..8)
                        .filter(|i| ((mask >> i) & 1) as usize == g)
                        .map(|i| &pts[i])
                        .collect()
                })
                .collect();
            let cost: f64 = groups
                .iter()
                .map(|g| {
                    let m: Vec<f64> = (0..2)
                        .map(|d| g.iter().map(|p| p[d]).sum::<f64>() / g.len() as f64)
                        .collect();
                    g.iter().map(|p| sq_dist(p, &m)).sum::<f64>()
                })
                .sum();
            if cost < best.0 {
                best = (cost, mask);
            }
        }
        for seed in 0..5 {
            let c = cluster_ngrams(&pts, 2, seed, 100, 1e-12).unwrap();
            for i in 0..8 {
                let same_brute = ((best.1 >> i) & 1) == (best.1 & 1);
                let same_kmeans = c.assignments[i] == c.assignments[0];
                assert_eq!(same_brute, same_kmeans);
            }
            assert!((c.inertia() - best.0).abs() < 1e-9);
        }
    }

    #[test]
    fn inertia_non_increasing_and_centroids_are_means() {
        for seed in 0..20 {
            let pts = random_points(100 + seed, 60, 4);
            let c = cluster_ngrams(&pts, 7, seed, 100, 0.0).unwrap();
            for w in c.inertia_history.windows(2) {
                assert!(w[1] <= w[0], "{:?}", c.inertia_history);
            }
            assert_member_means(&pts, &c);
            assert_eq!(c, cluster_ngrams(&pts, 7, seed, 100, 0.0).unwrap());
        }
    }

    #[test]
    fn duplicate_points_leave_no_cluster_empty() {
        let pts = vec![vec![1.0, 1.0]; 5];
        let c = cluster_ngrams(&pts, 3, 0, 10, 1e-9).unwrap();
        assert!(c.sizes.iter().all(|&s| s > 0));
        assert_member_means(&pts, &c);
    }
}

//! Seeded Lloyd K-Means over a [`VectorStore`].

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{squared_distance, Vector, VectorError, VectorStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub k: usize,
    pub iters: usize,
    pub seed: u64,
    /// L2-normalize inputs first, so Euclidean clustering tracks cosine.
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub centroids: Vec<Vector>,
    pub assignments: BTreeMap<String, usize>,
    /// Sum of squared distances from each point to its centroid.
    pub objective: f64,
    /// Objective at the end of every completed iteration.
    pub objective_trace: Vec<f64>,
}

impl KMeansResult {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }
}

/// K-Means on unit-normalized inputs.
pub fn kmeans(store: &VectorStore, k: usize, iters: usize, seed: u64) -> Result<KMeansResult, VectorError> {
    kmeans_with(
        store,
        &KMeansOptions {
            k,
            iters,
            seed,
            normalize: true,
        },
    )
}

pub fn kmeans_with(store: &VectorStore, opts: &KMeansOptions) -> Result<KMeansResult, VectorError> {
    if store.is_empty() {
        return Err(VectorError::EmptyStore);
    }
    if opts.k == 0 {
        return Err(VectorError::InvalidParameter("k must be at least 1".into()));
    }
    if opts.iters == 0 {
        return Err(VectorError::InvalidParameter("iters must be at least 1".into()));
    }
    if opts.k > store.len() {
        return Err(VectorError::KTooLarge {
            k: opts.k,
            points: store.len(),
        });
    }

    let keys: Vec<&str> = store.keys().collect();
    let points: Vec<Vec<f64>> = store
        .iter()
        .map(|(_, v)| {
            let v = if opts.normalize { v.normalized()? } else { v.clone() };
            Ok(v.as_slice().iter().map(|&x| x as f64).collect())
        })
        .collect::<Result<_, VectorError>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut init = index::sample(&mut rng, points.len(), opts.k).into_vec();
    init.sort_unstable();
    let mut centroids: Vec<Vec<f64>> = init.iter().map(|&i| points[i].clone()).collect();

    let mut assignments: Vec<usize> = vec![usize::MAX; points.len()];
    let mut trace = Vec::with_capacity(opts.iters);
    for _ in 0..opts.iters {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = closest(p, &centroids);
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        let repaired = repair_empty_clusters(&points, &mut assignments, &centroids);
        centroids = means(&points, &assignments, opts.k);
        trace.push(objective(&points, &assignments, &centroids));
        if !changed && !repaired {
            break;
        }
    }

    let objective = *trace.last().expect("at least one iteration");
    Ok(KMeansResult {
        centroids: centroids
            .iter()
            .map(|c| Vector::from_f64(c))
            .collect::<Result<_, _>>()?,
        assignments: keys
            .iter()
            .zip(&assignments)
            .map(|(k, &a)| (k.to_string(), a))
            .collect(),
        objective,
        objective_trace: trace,
    })
}

fn closest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Moves, for each empty cluster, the point farthest from its centroid
/// (among clusters with at least two members) into it. Returns whether any
/// repair happened.
fn repair_empty_clusters(points: &[Vec<f64>], assignments: &mut [usize], centroids: &[Vec<f64>]) -> bool {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    let mut repaired = false;
    for empty in 0..k {
        if sizes[empty] != 0 {
            continue;
        }
        let mut donor: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let a = assignments[i];
            if sizes[a] < 2 {
                continue;
            }
            let d = squared_distance(p, &centroids[a]);
            if donor.is_none_or(|(_, best)| d > best) {
                donor = Some((i, d));
            }
        }
        // k <= n guarantees a donor exists
        let (i, _) = donor.expect("a cluster with two members exists when k <= n");
        sizes[assignments[i]] -= 1;
        assignments[i] = empty;
        sizes[empty] = 1;
        repaired = true;
    }
    repaired
}

fn means(points: &[Vec<f64>], assignments: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (sum, &n) in sums.iter_mut().zip(&counts) {
        for s in sum.iter_mut() {
            *s /= n as f64;
        }
    }
    sums
}

fn objective(points: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| squared_distance(p, &centroids[a]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(points: &[(&str, [f32; 2])]) -> VectorStore {
        let mut s = VectorStore::new(2);
        for (k, p) in points {
            s.insert(*k, Vector::new(p.to_vec()).unwrap()).unwrap();
        }
        s
    }

    #[test]
    fn k_equals_n_gives_zero_objective() {
        let s = store(&[("a", [1.0, 0.0]), ("b", [0.0, 1.0]), ("c", [-1.0, 0.2])]);
        let r = kmeans(&s, 3, 5, 0).unwrap();
        assert!(r.objective.abs() < 1e-12);
        let mut used: Vec<_> = r.assignments.values().copied().collect();
        used.sort();
        assert_eq!(used, vec![0, 1, 2]);
    }

    #[test]
    fn duplicates_with_k_equals_n_still_cover_every_cluster() {
        let s = store(&[("a", [1.0, 0.0]), ("b", [1.0, 0.0]), ("c", [2.0, 0.0])]);
        let r = kmeans(&s, 3, 5, 11).unwrap();
        let mut used: Vec<_> = r.assignments.values().copied().collect();
        used.sort();
        assert_eq!(used, vec![0, 1, 2]);
        assert!(r.objective.abs() < 1e-12);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let s = store(&[("a", [1.0, 0.0]), ("b", [0.0, 1.0])]);
        let r = kmeans(&s, 1, 3, 9).unwrap();
        let c = r.centroids[0].as_slice();
        assert!((c[0] - 0.5).abs() < 1e-6 && (c[1] - 0.5).abs() < 1e-6);
        assert!(r.assignments.values().all(|&a| a == 0));
    }

    #[test]
    fn parameter_errors() {
        let s = store(&[("a", [1.0, 0.0])]);
        assert!(matches!(
            kmeans(&s, 2, 1, 0),
            Err(VectorError::KTooLarge { k: 2, points: 1 })
        ));
        assert!(matches!(kmeans(&s, 0, 1, 0), Err(VectorError::InvalidParameter(_))));
        assert!(matches!(kmeans(&s, 1, 0, 0), Err(VectorError::InvalidParameter(_))));
        assert!(matches!(
            kmeans(&VectorStore::new(2), 1, 1, 0),
            Err(VectorError::EmptyStore)
        ));
    }

    #[test]
    fn seeded_runs_are_identical() {
        let pts: Vec<(String, [f32; 2])> = (0..30)
            .map(|i| (format!("p{i:02}"), [(i as f32 * 0.37).sin(), (i as f32 * 0.91).cos()]))
            .collect();
        let refs: Vec<(&str, [f32; 2])> = pts.iter().map(|(k, p)| (k.as_str(), *p)).collect();
        let s = store(&refs);
        assert_eq!(kmeans(&s, 4, 20, 5).unwrap(), kmeans(&s, 4, 20, 5).unwrap());
    }
}

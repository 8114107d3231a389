//! k-means clustering and normalized mutual information.

use std::collections::BTreeMap;


use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::{l2_normalize, sq_dist};
use crate::error::{Error, Result};

pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

fn plus_plus_init<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        };
        centers.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>, max_iter: usize) -> Clustering {
    let k = centers.len();
    let dim = points[0].len();
    let mut assignments = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (a, p) in assignments.iter_mut().zip(points) {
            let best = (0..k)
                .min_by(|&i, &j| sq_dist(p, &centers[i]).total_cmp(&sq_dist(p, &centers[j])))
                .unwrap_or(0);
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (a, p) in assignments.iter().zip(points) {
            counts[*a] += 1;
            for (s, x) in sums[*a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // Re-seed an empty cluster at the worst-fit point.
                let far = (0..points.len())
                    .max_by(|&i, &j| {
                        sq_dist(&points[i], &centers[assignments[i]])
                            .total_cmp(&sq_dist(&points[j], &centers[assignments[j]]))
                    })
                    .unwrap_or(0);
                centers[c] = points[far].clone();
            }
        }
    }
    let inertia = assignments
        .iter()
        .zip(points)
        .map(|(a, p)| sq_dist(p, &centers[*a]))
        .sum();
    Clustering {
        assignments,
        inertia,
    }
}

/// Seeded k-means++ with Lloyd iterations; the restart with the lowest
/// inertia wins.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, max_iter: usize, seed: u64) -> Result<Clustering> {
    if points.is_empty() {
        return Err(Error::EmptySet);
    }
    if k == 0 || k > points.len() {
        return Err(Error::InvalidConfig(format!(
            "k = {k} clusters for {} points",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..restarts.max(1) {
        let centers = plus_plus_init(points, k, &mut rng);
        let c = lloyd(points, centers, max_iter);
        if best.as_ref().is_none_or(|b| c.inertia < b.inertia) {
            best = Some(c);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// NMI with arithmetic-mean normalization: `I(U;V) / ((H(U) + H(V)) / 2)`.
/// Two single-cluster labelings count as identical (1.0).
pub fn nmi_from_labels<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::CountMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptySet);
    }
    let n = a.len() as f64;
    let mut ca: BTreeMap<&A, usize> = BTreeMap::new();
    let mut cb: BTreeMap<&B, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(&A, &B), usize> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
        *joint.entry((x, y)).or_default() += 1;
    }
    let ha = entropy(ca.values().copied(), n);
    let hb = entropy(cb.values().copied(), n);
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    let mi: f64 = joint
        .iter()
        .map(|((x, y), &c)| {
            let pxy = c as f64 / n;
            pxy * (pxy * n * n / (ca[x] as f64 * cb[y] as f64)).ln()
        })
        .sum();
    Ok((2.0 * mi / (ha + hb)).clamp(0.0, 1.0))
}

/// Clusters the normalized embeddings into as many clusters as there are
/// distinct labels and scores the clustering against the labels.
pub fn nmi(embeddings: &[Vec<f64>], labels: &[String], seed: u64) -> Result<f64> {
    if embeddings.len() != labels.len() {
        return Err(Error::CountMismatch {
            left: embeddings.len(),
            right: labels.len(),
        });
    }
    let k = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    let points: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| l2_normalize(e))
        .collect::<Result<_>>()?;
    let c = kmeans(&points, k, KMEANS_RESTARTS, KMEANS_MAX_ITER, seed)?;
    nmi_from_labels(&c.assignments, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn identical_labelings() {
        let a = [0, 0, 1, 1, 2];
        let b = ["x", "x", "y", "y", "z"];
        assert!((nmi_from_labels(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi_from_labels(&[0, 0], &["q", "q"]).unwrap(), 1.0);
    }

    #[test]
    fn single_cluster_is_zero() {
        let a = [0, 0, 0, 0];
        let b = ["x", "y", "x", "y"];
        assert_eq!(nmi_from_labels(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn known_value() {
        // joint counts {(0,0): 2, (1,0): 1, (1,1): 1} over n = 4
        let a = [0, 0, 1, 1];
        let b = [0, 0, 0, 1];
        let mi = 0.5 * (4.0f64 / 3.0).ln() + 0.25 * (2.0f64 / 3.0).ln() + 0.25 * 2f64.ln();
        let ha = 2f64.ln();
        let hb = -(0.75 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        let expected = 2.0 * mi / (ha + hb);
        assert!((nmi_from_labels(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn separated_gaussians_score_high() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut emb = Vec::new();
            let mut labels = Vec::new();
            for (c, center) in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]].iter().enumerate() {
                for _ in 0..50 {
                    let v: Vec<f64> = center
                        .iter()
                        .map(|x| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            x + 0.05 * z
                        })
                        .collect();
                    emb.push(v);
                    labels.push(format!("c{c}"));
                }
            }
            assert!(nmi(&emb, &labels, seed).unwrap() >= 0.95);
        }
    }

    #[test]
    fn kmeans_is_deterministic() {
        let pts: Vec<Vec<f64>> = (0..30).map(|i| vec![(i % 3) as f64, (i / 3) as f64 * 0.01]).collect();
        let a = kmeans(&pts, 3, 10, 100, 4).unwrap();
        let b = kmeans(&pts, 3, 10, 100, 4).unwrap();
        assert_eq!(a, b);
        assert!(kmeans(&pts, 31, 1, 10, 0).is_err());
    }
}

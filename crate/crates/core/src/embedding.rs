//! Geometry on the unit sphere.
//!
//! Every comparison between embeddings goes through the squared Euclidean
//! distance of the L2-normalized vectors,
//!
//! ```text
//! d(a, b) = || a/|a| - b/|b| ||^2  = 2 - 2 cos(a, b)   in [0, 4]
//! ```
//!
//! and similarities are `exp(-d / sigma)`. Losses consume the log form
//! `-d / sigma` directly since the exponential underflows for small
//! temperatures.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default embedding dimension.
pub const DEFAULT_DIM: usize = 128;

/// A point in the embedding space. Components are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn normalized(&self) -> Result<Embedding> {
        l2_normalize(&self.0).map(Embedding)
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Returns `v / |v|`.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    if !n.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Squared distance between the normalized arguments, in `[0, 4]`.
pub fn proxy_distance(z1: &[f64], z2: &[f64]) -> Result<f64> {
    check_dims(z1, z2)?;
    let u = l2_normalize(z1)?;
    let w = l2_normalize(z2)?;
    Ok(sq_dist(&u, &w))
}

/// `-d(z1, z2) / sigma`, the natural log of [`similarity`].
pub fn log_similarity(z1: &[f64], z2: &[f64], sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(-proxy_distance(z1, z2)? / sigma)
}

/// `exp(-d(z1, z2) / sigma)`.
pub fn similarity(z1: &[f64], z2: &[f64], sigma: f64) -> Result<f64> {
    log_similarity(z1, z2, sigma).map(f64::exp)
}

pub(crate) fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "temperature must be positive, got {sigma}"
        )));
    }
    Ok(())
}

/// Numerically stable `ln(sum(exp(x)))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    // The max term contributes exactly 1; ln_1p keeps tiny remainders.
    let argmax = xs.iter().position(|&x| x == max).unwrap_or(0);
    let rest: f64 = xs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != argmax)
        .map(|(_, x)| (x - max).exp())
        .sum();
    max + rest.ln_1p()
}

/// Maps a gradient taken w.r.t. `u = z/|z|` back onto `z`:
/// `(I - u u^T) g / |z|`.
pub(crate) fn project_normalized_grad(u: &[f64], z_norm: f64, g: &[f64]) -> Vec<f64> {
    let gu = dot(g, u);
    g.iter()
        .zip(u)
        .map(|(gi, ui)| (gi - gu * ui) / z_norm)
        .collect()
}

/// One trainable vector per positive class, in a fixed class order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(String, Vec<f64>)>", into = "Vec<(String, Vec<f64>)>")]
pub struct ProxyTable {
    class_ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<(String, Vec<f64>)>> for ProxyTable {
    type Error = Error;

    fn try_from(entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        ProxyTable::new(entries)
    }
}

impl From<ProxyTable> for Vec<(String, Vec<f64>)> {
    fn from(t: ProxyTable) -> Self {
        t.class_ids.into_iter().zip(t.vectors).collect()
    }
}

impl ProxyTable {
    pub fn new(entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut class_ids = Vec::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        let dim = entries.first().map(|(_, v)| v.len()).unwrap_or(0);
        for (class, v) in entries {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite);
            }
            if norm(&v) == 0.0 {
                return Err(Error::ZeroVector);
            }
            if index.insert(class.clone(), class_ids.len()).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate proxy class `{class}`")));
            }
            class_ids.push(class);
            vectors.push(v);
        }
        Ok(Self {
            class_ids,
            vectors,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn class_ids(&self) -> &[String] {
        &self.class_ids
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.index.get(class).copied()
    }

    pub fn get(&self, class: &str) -> Option<&[f64]> {
        self.index_of(class).map(|i| self.vectors[i].as_slice())
    }

    /// Mutable access to the raw proxy coordinates, used by the optimizer.
    pub fn vectors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.vectors
    }

    /// Concatenation of all proxies in class order.
    pub fn flatten(&self) -> Vec<f64> {
        self.vectors.iter().flatten().copied().collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let dim = self.dim();
        if flat.len() != dim * self.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * self.len(),
                got: flat.len(),
            });
        }
        for (v, chunk) in self.vectors.iter_mut().zip(flat.chunks(dim.max(1))) {
            v.copy_from_slice(chunk);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        dot(a, b) / (norm(a) * norm(b))
    }

    #[test]
    fn normalize_examples() {
        let v = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        assert_eq!(l2_normalize(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn distance_examples() {
        assert_eq!(proxy_distance(&[5.0, 5.0], &[5.0, 5.0]).unwrap(), 0.0);
        assert!((proxy_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(proxy_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 4.0);
        assert!(matches!(
            proxy_distance(&[1.0, 0.0], &[1.0, 0.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            proxy_distance(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(similarity(&[2.0, 1.0], &[4.0, 2.0], 0.06).unwrap(), 1.0);
        // exp(-2/0.06) = exp(-100/3)
        let s = similarity(&[1.0, 0.0], &[0.0, 1.0], 0.06).unwrap();
        assert!((s / 3.338_237_795_365_006e-15 - 1.0).abs() < 1e-9, "{s}");
        let s = similarity(&[1.0, 0.0], &[-1.0, 0.0], 1.0).unwrap();
        assert!((s - 0.018_315_638_888_734_18).abs() < 1e-15);
        assert!(similarity(&[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn embedding_rejects_non_finite() {
        assert!(Embedding::new(vec![1.0, f64::NAN]).is_err());
        let e: Embedding = serde_json::from_str("[3.0, 4.0]").unwrap();
        assert_eq!(e.normalized().unwrap().as_slice(), &[0.6, 0.8]);
    }

    #[test]
    fn proxy_table_invariants() {
        assert!(ProxyTable::new(vec![("a".into(), vec![0.0, 0.0])]).is_err());
        assert!(ProxyTable::new(vec![
            ("a".into(), vec![1.0, 0.0]),
            ("b".into(), vec![1.0])
        ])
        .is_err());
        let mut t = ProxyTable::new(vec![
            ("a".into(), vec![1.0, 0.0]),
            ("b".into(), vec![0.0, 2.0]),
        ])
        .unwrap();
        assert_eq!(t.index_of("b"), Some(1));
        assert_eq!(t.flatten(), vec![1.0, 0.0, 0.0, 2.0]);
        t.assign_flat(&[1.0, 1.0, 2.0, 2.0]).unwrap();
        assert_eq!(t.get("b").unwrap(), &[2.0, 2.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn nonzero_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(-10.0f64..10.0, n).prop_filter("nonzero", |v| norm(v) > 1e-3)
        }

        proptest! {
            #[test]
            fn bounded_symmetric(a in nonzero_vec(8), b in nonzero_vec(8)) {
                let d = proxy_distance(&a, &b).unwrap();
                prop_assert!((0.0..=4.0 + 1e-12).contains(&d));
                prop_assert_eq!(d, proxy_distance(&b, &a).unwrap());
            }

            #[test]
            fn scale_invariant(a in nonzero_vec(8), b in nonzero_vec(8), s in 0.01f64..100.0, t in 0.01f64..100.0) {
                let sa: Vec<f64> = a.iter().map(|x| x * s).collect();
                let tb: Vec<f64> = b.iter().map(|x| x * t).collect();
                let d0 = proxy_distance(&a, &b).unwrap();
                prop_assert!((proxy_distance(&sa, &tb).unwrap() - d0).abs() < 1e-10);
            }

            #[test]
            fn matches_cosine_identity(a in nonzero_vec(16), b in nonzero_vec(16)) {
                let d = proxy_distance(&a, &b).unwrap();
                prop_assert!((d - (2.0 - 2.0 * cosine(&a, &b))).abs() < 1e-10);
            }

            #[test]
            fn log_similarity_consistent(a in nonzero_vec(4), b in nonzero_vec(4), sigma in 0.05f64..2.0) {
                let s = similarity(&a, &b, sigma).unwrap();
                let ls = log_similarity(&a, &b, sigma).unwrap();
                prop_assert!(s > 0.0 && s <= 1.0);
                if s > 1e-300 {
                    prop_assert!((s.ln() - ls).abs() < 1e-12);
                }
            }

            #[test]
            fn similarity_decreasing(sigma in 0.05f64..2.0, d1 in 0.0f64..4.0, d2 in 0.0f64..4.0) {
                // Points on the unit circle at prescribed distances from (1, 0).
                let at = |d: f64| {
                    let c = 1.0 - d / 2.0;
                    vec![c, (1.0 - c * c).max(0.0).sqrt()]
                };
                let s1 = similarity(&[1.0, 0.0], &at(d1), sigma).unwrap();
                let s2 = similarity(&[1.0, 0.0], &at(d2), sigma).unwrap();
                if d1 + 1e-6 < d2 {
                    prop_assert!(s1 >= s2);
                }
            }
        }
    }
}

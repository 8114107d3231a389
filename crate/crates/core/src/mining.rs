//! Hard-negative mining from retrieval confusion.
//!
//! A base model's validation predictions are turned into a row-normalized
//! confusion matrix `C`. Class `j` becomes a hard negative of class `i` when
//! `alpha1 <= C[i][j] <= alpha2` and the two names are more than `lev_min`
//! edits apart; the upper bound and the name filter keep out classes that are
//! likely the same logo under a different label.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA1: f64 = 0.05;
pub const DEFAULT_ALPHA2: f64 = 0.35;
pub const DEFAULT_LEV_MIN: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    pub fn get(&self, true_class: &str, predicted: &str) -> Option<f64> {
        Some(self.rows[self.index_of(true_class)?][self.index_of(predicted)?])
    }

    /// Checks shape, entry range and row sums.
    pub fn validate(&self) -> Result<()> {
        let k = self.classes.len();
        if self.rows.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: self.rows.len(),
            });
        }
        for row in &self.rows {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Format("confusion entry outside [0, 1]".into()));
            }
            let s: f64 = row.iter().sum();
            if s != 0.0 && (s - 1.0).abs() > 1e-9 {
                return Err(Error::Format(format!("confusion row sums to {s}")));
            }
        }
        Ok(())
    }
}

/// Row-normalized confusion over `label_set` (in that order).
pub fn build_confusion_matrix<S: AsRef<str>>(
    label_set: &[String],
    predictions: &[(S, S)],
) -> Result<ConfusionMatrix> {
    let index: HashMap<&str, usize> = label_set
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let k = label_set.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (t, p) in predictions {
        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::UnknownClass(name.to_string()))
        };
        let (i, j) = (lookup(t.as_ref())?, lookup(p.as_ref())?);
        counts[i][j] += 1;
    }
    let rows = counts
        .into_iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                vec![0.0; k]
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect();
    Ok(ConfusionMatrix {
        classes: label_set.to_vec(),
        rows,
    })
}

/// Unit-cost edit distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    strsim::levenshtein(a, b)
}

/// Class → ordered list of hard-negative classes. Serializes as a JSON object
/// with lexicographically sorted keys.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HardNegativeMap(BTreeMap<String, Vec<String>>);

impl HardNegativeMap {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, Vec<String>)>) -> Self {
        Self(entries.into_iter().collect())
    }

    /// Hard negatives of `class`; empty when the class has none.
    pub fn get(&self, class: &str) -> &[String] {
        self.0.get(class).map_or(&[], Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<String>)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.values().all(Vec::is_empty)
    }

    /// Adds manually annotated targets (e.g. background classes) for `class`.
    pub fn extend_class(&mut self, class: &str, targets: impl IntoIterator<Item = String>) {
        let entry = self.0.entry(class.to_string()).or_default();
        for t in targets {
            if t != class && !entry.contains(&t) {
                entry.push(t);
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub lev_min: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            alpha1: DEFAULT_ALPHA1,
            alpha2: DEFAULT_ALPHA2,
            lev_min: DEFAULT_LEV_MIN,
        }
    }
}

/// Thresholded scan of every row of `c`. Only rows with at least one target
/// get a key; targets keep the matrix column order.
pub fn build_hard_negative_map(c: &ConfusionMatrix, cfg: MiningConfig) -> Result<HardNegativeMap> {
    let MiningConfig {
        alpha1,
        alpha2,
        lev_min,
    } = cfg;
    if !(0.0..=1.0).contains(&alpha1) || !(0.0..=1.0).contains(&alpha2) || alpha1 > alpha2 {
        return Err(Error::InvalidThresholds { alpha1, alpha2 });
    }
    let mut map = BTreeMap::new();
    for (i, row) in c.rows.iter().enumerate() {
        let yi = &c.classes[i];
        let targets: Vec<String> = row
            .iter()
            .enumerate()
            .filter(|&(j, &v)| {
                j != i && alpha1 <= v && v <= alpha2 && levenshtein(yi, &c.classes[j]) > lev_min
            })
            .map(|(j, _)| c.classes[j].clone())
            .collect();
        if !targets.is_empty() {
            map.insert(yi.clone(), targets);
        }
    }
    Ok(HardNegativeMap(map))
}

/// Cohort-restricted view of two confusion matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmatrixComparison {
    pub cohort: Vec<String>,
    pub before: Vec<Vec<f64>>,
    pub after: Vec<Vec<f64>>,
    /// `after - before`, cell by cell.
    pub deltas: Vec<Vec<f64>>,
    /// Sum of the diagonal of `after` minus that of `before`.
    pub diagonal_mass_delta: f64,
}

fn submatrix(c: &ConfusionMatrix, idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter()
        .map(|&i| idx.iter().map(|&j| c.rows[i][j]).collect())
        .collect()
}

pub fn compare_submatrices(
    before: &ConfusionMatrix,
    after: &ConfusionMatrix,
    cohort: &[String],
) -> Result<SubmatrixComparison> {
    let indices = |m: &ConfusionMatrix| -> Result<Vec<usize>> {
        cohort
            .iter()
            .map(|c| m.index_of(c).ok_or_else(|| Error::UnknownClass(c.clone())))
            .collect()
    };
    let b = submatrix(before, &indices(before)?);
    let a = submatrix(after, &indices(after)?);
    let deltas: Vec<Vec<f64>> = a
        .iter()
        .zip(&b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x - y).collect())
        .collect();
    let diagonal_mass_delta = (0..cohort.len()).map(|i| a[i][i]).sum::<f64>()
        - (0..cohort.len()).map(|i| b[i][i]).sum::<f64>();
    Ok(SubmatrixComparison {
        cohort: cohort.to_vec(),
        before: b,
        after: a,
        deltas,
        diagonal_mass_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn confusion_counting() {
        let labels = names(&["a", "b", "c"]);
        let c = build_confusion_matrix(&labels, &[("a", "a"), ("a", "b"), ("b", "b")]).unwrap();
        assert_eq!(c.rows[0], vec![0.5, 0.5, 0.0]);
        assert_eq!(c.rows[1], vec![0.0, 1.0, 0.0]);
        assert_eq!(c.rows[2], vec![0.0, 0.0, 0.0]);
        c.validate().unwrap();

        let id = build_confusion_matrix(&labels, &[("a", "a"), ("b", "b"), ("c", "c")]).unwrap();
        assert_eq!(id.rows, vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);

        assert!(matches!(
            build_confusion_matrix(&labels, &[("a", "zz")]),
            Err(Error::UnknownClass(_))
        ));
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(levenshtein("atari_1", "atari_2"), 1);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("a", "a"), 0);
    }

    fn two_class(a: &str, b: &str, v: f64) -> ConfusionMatrix {
        ConfusionMatrix {
            classes: names(&[a, b]),
            rows: vec![vec![1.0 - v, v], vec![0.0, 1.0]],
        }
    }

    #[test]
    fn threshold_and_name_filters() {
        let cfg = MiningConfig::default();
        let m = build_hard_negative_map(&two_class("h_j_heinz_x", "heinz_baked_beans", 0.045), cfg).unwrap();
        assert!(m.get("h_j_heinz_x").is_empty());

        let m = build_hard_negative_map(&two_class("pepsi", "fanta", 0.20), cfg).unwrap();
        assert_eq!(m.get("pepsi"), &["fanta".to_string()]);
        assert!(m.get("fanta").is_empty());

        let m = build_hard_negative_map(&two_class("atari_1", "atari_2", 0.20), cfg).unwrap();
        assert!(m.is_empty());

        let bad = MiningConfig {
            alpha1: 0.4,
            alpha2: 0.3,
            lev_min: 2,
        };
        assert!(matches!(
            build_hard_negative_map(&two_class("a", "b", 0.2), bad),
            Err(Error::InvalidThresholds { .. })
        ));
    }

    #[test]
    fn map_json_has_sorted_keys() {
        let m = HardNegativeMap::from_entries([
            ("zeta".to_string(), vec!["alpha".to_string()]),
            ("alpha".to_string(), vec!["zeta".to_string()]),
        ]);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"alpha":["zeta"],"zeta":["alpha"]}"#);
        let back: HardNegativeMap = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    fn heinz(diag: [f64; 3], off: f64) -> ConfusionMatrix {
        ConfusionMatrix {
            classes: names(&["h_j_heinz", "heinz_baked_beans", "heineken_text"]),
            rows: vec![
                vec![diag[0], 0.0, 0.0],
                vec![0.0, diag[1], off],
                vec![0.0, 0.0, diag[2]],
            ],
        }
    }

    #[test]
    fn submatrix_comparison() {
        let before = heinz([1.0, 0.909, 0.979], 0.045);
        let after = heinz([1.0, 0.954, 0.966], 0.0);
        let cohort = before.classes.clone();
        let r = compare_submatrices(&before, &after, &cohort).unwrap();
        assert!((r.diagonal_mass_delta - 0.032).abs() < 1e-12);
        assert!((r.deltas[1][2] + 0.045).abs() < 1e-12);

        let r = compare_submatrices(&before, &before, &cohort).unwrap();
        assert!(r.deltas.iter().flatten().all(|d| *d == 0.0));

        let r = compare_submatrices(&before, &after, &names(&["heineken_text"])).unwrap();
        assert_eq!(r.before, vec![vec![0.979]]);
        assert!((r.diagonal_mass_delta - (0.966 - 0.979)).abs() < 1e-15);

        assert!(compare_submatrices(&before, &after, &names(&["nope"])).is_err());
    }
}

//! Proxy losses and the image-text alignment loss.
//!
//! All three objectives are softmax cross-entropies over logits of the form
//! `-d(a, b) / sigma` (or scaled dot products for the alignment loss), so
//! they share a log-sum-exp evaluation and the same backward structure:
//! accumulate `dL/du` for every normalized vector, then project through the
//! normalization once per raw vector.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::embedding::{
    check_sigma, dot, l2_normalize, log_sum_exp, norm, project_normalized_grad, sq_dist,
    ProxyTable,
};
use crate::error::{Error, Result};
use crate::mining::HardNegativeMap;

/// Positive classes, background classes and the hard-negative map.
#[derive(Debug, Clone, Default)]
pub struct LabelSpace {
    positive: BTreeSet<String>,
    background: BTreeSet<String>,
    hard_negatives: HardNegativeMap,
}

impl LabelSpace {
    pub fn new(
        positive: impl IntoIterator<Item = String>,
        background: impl IntoIterator<Item = String>,
        hard_negatives: HardNegativeMap,
    ) -> Result<Self> {
        let positive: BTreeSet<String> = positive.into_iter().collect();
        let background: BTreeSet<String> = background.into_iter().collect();
        if let Some(c) = positive.intersection(&background).next() {
            return Err(Error::InvalidConfig(format!(
                "class `{c}` is both positive and background"
            )));
        }
        for (key, targets) in hard_negatives.iter() {
            if !positive.contains(key) {
                return Err(Error::UnknownClass(key.clone()));
            }
            for t in targets {
                if !positive.contains(t) && !background.contains(t) {
                    return Err(Error::UnknownClass(t.clone()));
                }
                if t == key {
                    return Err(Error::InvalidConfig(format!(
                        "class `{key}` listed as its own hard negative"
                    )));
                }
            }
        }
        Ok(Self {
            positive,
            background,
            hard_negatives,
        })
    }

    /// Label space with no background classes and an empty map.
    pub fn positives_only(positive: impl IntoIterator<Item = String>) -> Self {
        Self {
            positive: positive.into_iter().collect(),
            ..Self::default()
        }
    }

    pub fn is_positive(&self, class: &str) -> bool {
        self.positive.contains(class)
    }

    pub fn is_background(&self, class: &str) -> bool {
        self.background.contains(class)
    }

    pub fn positive_classes(&self) -> impl Iterator<Item = &str> {
        self.positive.iter().map(String::as_str)
    }

    pub fn background_classes(&self) -> impl Iterator<Item = &str> {
        self.background.iter().map(String::as_str)
    }

    pub fn hard_negatives(&self) -> &HardNegativeMap {
        &self.hard_negatives
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Seed,
    HardNegative,
    Background,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub sample_id: String,
    pub class_id: String,
    pub embedding: Vec<f64>,
    pub role: Role,
}

impl BatchItem {
    pub fn new(
        sample_id: impl Into<String>,
        class_id: impl Into<String>,
        embedding: Vec<f64>,
        role: Role,
    ) -> Self {
        Self {
            sample_id: sample_id.into(),
            class_id: class_id.into(),
            embedding,
            role,
        }
    }
}

/// Loss value with gradients for every input embedding and every proxy.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub loss: f64,
    /// Unreduced loss per input item; `None` for items that only feed
    /// denominators (background items). Empty for the alignment loss.
    pub item_losses: Vec<Option<f64>>,
    pub grad_embeddings: Vec<Vec<f64>>,
    pub grad_proxies: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[serde(rename = "proxynca_pp")]
    ProxyNcaPp,
    #[serde(rename = "proxyncahn_pp")]
    ProxyNcaHnPp,
}

struct Normalized {
    unit: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

impl Normalized {
    fn new<'a>(vs: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Result<Self> {
        let mut unit = Vec::new();
        let mut norms = Vec::new();
        for v in vs {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            norms.push(norm(v));
            unit.push(l2_normalize(v)?);
        }
        Ok(Self { unit, norms })
    }

    fn project(&self, grads: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        grads
            .iter()
            .enumerate()
            .map(|(i, g)| project_normalized_grad(&self.unit[i], self.norms[i], g))
            .collect()
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Cross-entropy of one anchor against all proxies plus extra batch
/// embeddings in the denominator. Accumulates `scale * dL/du` into the
/// normalized-space gradient buffers and returns the unscaled loss.
#[allow(clippy::too_many_arguments)]
fn anchor_loss(
    anchor: usize,
    positive_proxy: usize,
    extras: &[usize],
    emb: &Normalized,
    proxies: &Normalized,
    sigma: f64,
    scale: f64,
    grad_emb: &mut [Vec<f64>],
    grad_proxy: &mut [Vec<f64>],
) -> f64 {
    let u = &emb.unit[anchor];
    let n_proxies = proxies.unit.len();
    let mut logits = Vec::with_capacity(n_proxies + extras.len());
    logits.extend(proxies.unit.iter().map(|v| -sq_dist(u, v) / sigma));
    logits.extend(extras.iter().map(|&j| -sq_dist(u, &emb.unit[j]) / sigma));
    let lse = log_sum_exp(&logits);
    let loss = lse - logits[positive_proxy];

    let mut g_anchor = vec![0.0; u.len()];
    for (c, &logit) in logits.iter().enumerate() {
        let mut dlogit = (logit - lse).exp();
        if c == positive_proxy {
            dlogit -= 1.0;
        }
        if dlogit == 0.0 {
            continue;
        }
        // logit = -|u - v|^2 / sigma
        let coef = -2.0 * dlogit / sigma * scale;
        let other = if c < n_proxies {
            &proxies.unit[c]
        } else {
            &emb.unit[extras[c - n_proxies]]
        };
        // d/du: coef (u - v); d/dv: coef (v - u)
        let diff: Vec<f64> = u.iter().zip(other).map(|(a, b)| a - b).collect();
        axpy(&mut g_anchor, coef, &diff);
        let target = if c < n_proxies {
            &mut grad_proxy[c]
        } else {
            &mut grad_emb[extras[c - n_proxies]]
        };
        axpy(target, -coef, &diff);
    }
    axpy(&mut grad_emb[anchor], 1.0, &g_anchor);
    loss
}

fn normalized_proxies(proxies: &ProxyTable) -> Result<Normalized> {
    Normalized::new(proxies.vectors().iter().map(Vec::as_slice), proxies.dim())
}

/// ProxyNCA++ loss of a single item: `-log softmax` of the item's own proxy
/// among all proxies.
pub fn proxynca_pp_loss(item: &BatchItem, proxies: &ProxyTable, sigma: f64) -> Result<LossResult> {
    check_sigma(sigma)?;
    let pos = proxies
        .index_of(&item.class_id)
        .ok_or_else(|| Error::UnknownClass(item.class_id.clone()))?;
    let p = normalized_proxies(proxies)?;
    let e = Normalized::new([item.embedding.as_slice()], proxies.dim())?;
    let dim = proxies.dim();
    let mut ge = vec![vec![0.0; dim]];
    let mut gp = vec![vec![0.0; dim]; proxies.len()];
    let loss = anchor_loss(0, pos, &[], &e, &p, sigma, 1.0, &mut ge, &mut gp);
    Ok(LossResult {
        loss,
        item_losses: vec![Some(loss)],
        grad_embeddings: e.project(ge),
        grad_proxies: p.project(gp),
    })
}

/// Per-item probabilities `P(c)` of every proxy class for one embedding.
pub fn proxy_probabilities(embedding: &[f64], proxies: &ProxyTable, sigma: f64) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    let p = normalized_proxies(proxies)?;
    let e = Normalized::new([embedding], proxies.dim())?;
    let logits: Vec<f64> = p.unit.iter().map(|v| -sq_dist(&e.unit[0], v) / sigma).collect();
    let lse = log_sum_exp(&logits);
    Ok(logits.iter().map(|l| (l - lse).exp()).collect())
}

/// Batch loss with hard-negative and background terms in each denominator.
///
/// Every item whose class is positive is an anchor. Its denominator holds all
/// proxies, every other batch embedding whose class is in `h(y) ∩ positives`,
/// and every background embedding. Background items only appear in
/// denominators. The result is the mean over anchors.
pub fn proxyncahn_pp_loss(
    batch: &[BatchItem],
    proxies: &ProxyTable,
    labels: &LabelSpace,
    sigma: f64,
) -> Result<LossResult> {
    check_sigma(sigma)?;
    let p = normalized_proxies(proxies)?;
    let e = Normalized::new(batch.iter().map(|b| b.embedding.as_slice()), proxies.dim())?;

    let mut anchors = Vec::new();
    for (i, item) in batch.iter().enumerate() {
        if labels.is_positive(&item.class_id) {
            let pos = proxies
                .index_of(&item.class_id)
                .ok_or_else(|| Error::UnknownClass(item.class_id.clone()))?;
            anchors.push((i, pos));
        } else if !labels.is_background(&item.class_id) {
            return Err(Error::UnknownClass(item.class_id.clone()));
        }
    }
    if anchors.is_empty() {
        return Err(Error::EmptyBatch);
    }

    let dim = proxies.dim();
    let mut ge = vec![vec![0.0; dim]; batch.len()];
    let mut gp = vec![vec![0.0; dim]; proxies.len()];
    let scale = 1.0 / anchors.len() as f64;
    let mut total = 0.0;
    let mut item_losses = vec![None; batch.len()];
    let mut extras = Vec::new();
    for &(i, pos) in &anchors {
        let hard: HashSet<&str> = labels
            .hard_negatives()
            .get(&batch[i].class_id)
            .iter()
            .map(String::as_str)
            .collect();
        extras.clear();
        extras.extend(batch.iter().enumerate().filter_map(|(j, other)| {
            let c = other.class_id.as_str();
            let counted = (hard.contains(c) && labels.is_positive(c)) || labels.is_background(c);
            (j != i && counted).then_some(j)
        }));
        let l = anchor_loss(i, pos, &extras, &e, &p, sigma, scale, &mut ge, &mut gp);
        item_losses[i] = Some(l);
        total += l;
    }
    Ok(LossResult {
        loss: total * scale,
        item_losses,
        grad_embeddings: e.project(ge),
        grad_proxies: p.project(gp),
    })
}

/// Mean ProxyNCA++ loss over the positive-class items of a batch. Background
/// items are ignored and receive zero gradient.
pub fn proxynca_pp_batch_loss(
    batch: &[BatchItem],
    proxies: &ProxyTable,
    labels: &LabelSpace,
    sigma: f64,
) -> Result<LossResult> {
    let stripped = LabelSpace {
        positive: labels.positive.clone(),
        background: BTreeSet::new(),
        hard_negatives: HardNegativeMap::default(),
    };
    let kept: Vec<usize> = (0..batch.len())
        .filter(|&i| !labels.is_background(&batch[i].class_id))
        .collect();
    if kept.len() == batch.len() {
        return proxyncahn_pp_loss(batch, proxies, &stripped, sigma);
    }
    let sub: Vec<BatchItem> = kept.iter().map(|&i| batch[i].clone()).collect();
    let mut r = proxyncahn_pp_loss(&sub, proxies, &stripped, sigma)?;
    let mut grad_embeddings = vec![vec![0.0; proxies.dim()]; batch.len()];
    let mut item_losses = vec![None; batch.len()];
    for (k, &i) in kept.iter().enumerate() {
        grad_embeddings[i] = std::mem::take(&mut r.grad_embeddings[k]);
        item_losses[i] = r.item_losses[k];
    }
    Ok(LossResult {
        item_losses,
        grad_embeddings,
        ..r
    })
}

/// Dispatches on the configured loss.
pub fn batch_loss(
    kind: LossKind,
    batch: &[BatchItem],
    proxies: &ProxyTable,
    labels: &LabelSpace,
    sigma: f64,
) -> Result<LossResult> {
    match kind {
        LossKind::ProxyNcaPp => proxynca_pp_batch_loss(batch, proxies, labels, sigma),
        LossKind::ProxyNcaHnPp => proxyncahn_pp_loss(batch, proxies, labels, sigma),
    }
}

/// Symmetric contrastive loss over matched image/text pairs.
///
/// `S[i][j] = <img_i, txt_j> / tau` on normalized vectors. The loss averages
/// row-wise and column-wise cross-entropy with the diagonal as target.
/// `grad_embeddings` holds the `N` image gradients followed by the `N` text
/// gradients; `grad_proxies` is empty.
pub fn alignment_loss(image_embs: &[Vec<f64>], text_embs: &[Vec<f64>], tau: f64) -> Result<LossResult> {
    if image_embs.len() != text_embs.len() {
        return Err(Error::CountMismatch {
            left: image_embs.len(),
            right: text_embs.len(),
        });
    }
    let n = image_embs.len();
    if n == 0 {
        return Err(Error::EmptySet);
    }
    check_sigma(tau)?;
    let dim = image_embs[0].len();
    let img = Normalized::new(image_embs.iter().map(Vec::as_slice), dim)?;
    let txt = Normalized::new(text_embs.iter().map(Vec::as_slice), dim)?;

    let s: Vec<Vec<f64>> = img
        .unit
        .iter()
        .map(|u| txt.unit.iter().map(|w| dot(u, w) / tau).collect())
        .collect();
    let mut ds = vec![vec![0.0; n]; n];
    let weight = 0.5 / n as f64;
    let mut row_loss = 0.0;
    for i in 0..n {
        let lse = log_sum_exp(&s[i]);
        row_loss += lse - s[i][i];
        for j in 0..n {
            ds[i][j] += weight * ((s[i][j] - lse).exp() - f64::from(u8::from(i == j)));
        }
    }
    let mut col_loss = 0.0;
    let mut col = vec![0.0; n];
    for j in 0..n {
        for i in 0..n {
            col[i] = s[i][j];
        }
        let lse = log_sum_exp(&col);
        col_loss += lse - s[j][j];
        for i in 0..n {
            ds[i][j] += weight * ((s[i][j] - lse).exp() - f64::from(u8::from(i == j)));
        }
    }
    let loss = 0.5 * (row_loss + col_loss) / n as f64;

    let mut gi = vec![vec![0.0; dim]; n];
    let mut gt = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for j in 0..n {
            let c = ds[i][j] / tau;
            axpy(&mut gi[i], c, &txt.unit[j]);
            axpy(&mut gt[j], c, &img.unit[i]);
        }
    }
    let mut grad_embeddings = img.project(gi);
    grad_embeddings.extend(txt.project(gt));
    Ok(LossResult {
        loss,
        item_losses: Vec::new(),
        grad_embeddings,
        grad_proxies: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(entries: &[(&str, &[f64])]) -> ProxyTable {
        ProxyTable::new(entries.iter().map(|(c, v)| (c.to_string(), v.to_vec())).collect()).unwrap()
    }

    fn labels(pos: &[&str], bg: &[&str], h: &[(&str, &[&str])]) -> LabelSpace {
        let map = HardNegativeMap::from_entries(
            h.iter()
                .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect())),
        );
        LabelSpace::new(
            pos.iter().map(|s| s.to_string()),
            bg.iter().map(|s| s.to_string()),
            map,
        )
        .unwrap()
    }

    #[test]
    fn single_class_zero_loss() {
        let p = table(&[("a", &[0.3, -1.0])]);
        let r = proxynca_pp_loss(&BatchItem::new("x", "a", vec![2.0, 5.0], Role::Seed), &p, 0.06).unwrap();
        assert_eq!(r.loss, 0.0);
        assert!(r.grad_embeddings[0].iter().all(|g| *g == 0.0));
    }

    #[test]
    fn equidistant_proxies_give_ln2() {
        let p = table(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        let item = BatchItem::new("x", "a", vec![1.0, 1.0], Role::Seed);
        let r = proxynca_pp_loss(&item, &p, 0.06).unwrap();
        assert!((r.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn aligned_with_positive_proxy() {
        let p = table(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        let item = BatchItem::new("x", "a", vec![1.0, 0.0], Role::Seed);
        let r = proxynca_pp_loss(&item, &p, 0.06).unwrap();
        // ln(1 + exp(-100/3)), evaluated at 30 digits
        assert!((r.loss / 3.338_237_795_365_000_6e-15 - 1.0).abs() < 1e-9, "{}", r.loss);
    }

    #[test]
    fn unknown_class_is_rejected() {
        let p = table(&[("a", &[1.0, 0.0])]);
        let item = BatchItem::new("x", "zzz", vec![1.0, 0.0], Role::Seed);
        assert!(matches!(proxynca_pp_loss(&item, &p, 1.0), Err(Error::UnknownClass(_))));
        let item = BatchItem::new("x", "a", vec![0.0, 0.0], Role::Seed);
        assert!(matches!(proxynca_pp_loss(&item, &p, 1.0), Err(Error::ZeroVector)));
    }

    #[test]
    fn hard_negative_duplicate_gives_ln2() {
        let f = vec![0.4, 0.7, -0.2];
        let far: Vec<f64> = f.iter().map(|x| -x).collect();
        // b's proxy is antipodal, so its term is exp(-4/0.06) relative to 1.
        let p = table(&[("a", &f), ("b", &far)]);
        let l = labels(&["a", "b"], &[], &[("a", &["b"])]);
        let batch = vec![
            BatchItem::new("x", "a", f.clone(), Role::Seed),
            BatchItem::new("y", "b", f.clone(), Role::HardNegative),
        ];
        let r = proxyncahn_pp_loss(&batch, &p, &l, 0.06).unwrap();
        assert!((r.item_losses[0].unwrap() - std::f64::consts::LN_2).abs() < 1e-12);

        let p1 = table(&[("a", &f)]);
        let lb = labels(&["a"], &["bg"], &[]);
        let with_bg = vec![
            batch[0].clone(),
            BatchItem::new("y", "bg", f.clone(), Role::Background),
        ];
        let r = proxyncahn_pp_loss(&with_bg, &p1, &lb, 0.06).unwrap();
        assert!((r.loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(r.item_losses[1], None);
        // The background embedding still receives gradient via the denominator.
        assert_eq!(r.grad_embeddings[1].len(), 3);
    }

    #[test]
    fn hard_negative_class_without_proxy() {
        let p = table(&[("a", &[1.0, 0.0])]);
        let l = labels(&["a", "b"], &[], &[("a", &["b"])]);
        let batch = vec![
            BatchItem::new("x", "a", vec![1.0, 0.2], Role::Seed),
            BatchItem::new("y", "b", vec![1.0, 0.0], Role::HardNegative),
        ];
        assert!(matches!(proxyncahn_pp_loss(&batch, &p, &l, 0.06), Err(Error::UnknownClass(_))));
    }

    #[test]
    fn background_only_batch_is_empty() {
        let p = table(&[("a", &[1.0, 0.0])]);
        let l = labels(&["a"], &["bg"], &[]);
        let batch = vec![BatchItem::new("y", "bg", vec![1.0, 1.0], Role::Background)];
        assert!(matches!(proxyncahn_pp_loss(&batch, &p, &l, 1.0), Err(Error::EmptyBatch)));
    }

    #[test]
    fn label_space_validation() {
        assert!(LabelSpace::new(["a".to_string()], ["a".to_string()], HardNegativeMap::default()).is_err());
        let h = HardNegativeMap::from_entries([("a".to_string(), vec!["q".to_string()])]);
        assert!(matches!(
            LabelSpace::new(["a".to_string()], [], h),
            Err(Error::UnknownClass(_))
        ));
    }

    #[test]
    fn alignment_examples() {
        let r = alignment_loss(&[vec![1.0, 2.0]], &[vec![-3.0, 0.5]], 0.07).unwrap();
        assert_eq!(r.loss, 0.0);

        let same = vec![vec![0.2, 0.9, -0.4]; 4];
        let r = alignment_loss(&same, &same, 0.07).unwrap();
        assert!((r.loss - 4f64.ln()).abs() < 1e-12);

        let img = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let r = alignment_loss(&img, &img, 1.0).unwrap();
        assert!((r.loss - 0.313_261_687_518_222_8).abs() < 1e-12, "{}", r.loss);
        assert_eq!(r.grad_embeddings.len(), 4);

        assert!(matches!(
            alignment_loss(&img, &img[..1], 1.0),
            Err(Error::CountMismatch { .. })
        ));
        assert!(matches!(
            alignment_loss(&[vec![0.0, 0.0]], &[vec![1.0, 0.0]], 1.0),
            Err(Error::ZeroVector)
        ));
    }
}

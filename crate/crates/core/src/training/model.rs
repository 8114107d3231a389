//! Small affine/GELU embedder with reverse-mode gradients.
//!
//! Parameters live in one flat buffer: trunk layers in order (weights
//! row-major `out x in`, then bias), followed by the final fc layer. The
//! trunk group is the prefix `..fc_offset()`, the fc group the rest.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub input: usize,
    pub output: usize,
}

impl LayerShape {
    fn len(self) -> usize {
        self.input * self.output + self.output
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr")]
pub struct EmbedderModel {
    input_dim: usize,
    /// Trunk layers followed by the fc layer (always last).
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

#[derive(Deserialize)]
struct ModelRepr {
    input_dim: usize,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

impl TryFrom<ModelRepr> for EmbedderModel {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        let chained = r.layers.first().is_some_and(|l| l.input == r.input_dim)
            && r.layers.windows(2).all(|w| w[0].output == w[1].input);
        if !chained {
            return Err(Error::Format("inconsistent layer shapes".into()));
        }
        let hidden: Vec<usize> = r.layers[..r.layers.len() - 1].iter().map(|l| l.output).collect();
        let embed = r.layers[r.layers.len() - 1].output;
        Self::from_params(r.input_dim, &hidden, embed, r.params)
    }
}

/// Intermediate values kept by [`EmbedderModel::forward_trace`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the trunk layers.
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl EmbedderModel {
    /// Randomly initialized model: `input_dim -> hidden... -> embed_dim`.
    pub fn new<R: Rng>(input_dim: usize, hidden: &[usize], embed_dim: usize, rng: &mut R) -> Self {
        let layers = Self::shapes(input_dim, hidden, embed_dim);
        let mut params = Vec::with_capacity(layers.iter().map(|l| l.len()).sum());
        let trunk_layers = layers.len() - 1;
        for (i, l) in layers.iter().enumerate() {
            let gain = if i < trunk_layers { 2.0 } else { 1.0 };
            let std = (gain / l.input as f64).sqrt();
            params.extend((0..l.input * l.output).map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            }));
            params.extend(std::iter::repeat_n(0.0, l.output));
        }
        Self {
            input_dim,
            layers,
            params,
        }
    }

    /// Builds a model around an existing flat parameter buffer.
    pub fn from_params(
        input_dim: usize,
        hidden: &[usize],
        embed_dim: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        let layers = Self::shapes(input_dim, hidden, embed_dim);
        let expected: usize = layers.iter().map(|l| l.len()).sum();
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            input_dim,
            layers,
            params,
        })
    }

    /// Identity trunk and an identity fc with zero bias.
    pub fn identity(dim: usize) -> Self {
        let mut params = vec![0.0; dim * dim + dim];
        for i in 0..dim {
            params[i * dim + i] = 1.0;
        }
        Self {
            input_dim: dim,
            layers: vec![LayerShape {
                input: dim,
                output: dim,
            }],
            params,
        }
    }

    fn shapes(input_dim: usize, hidden: &[usize], embed_dim: usize) -> Vec<LayerShape> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(embed_dim);
        dims.windows(2)
            .map(|w| LayerShape {
                input: w[0],
                output: w[1],
            })
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.output)
            .collect()
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn fc_offset(&self) -> usize {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.len())
            .sum()
    }

    /// Splits the parameters into the (trunk, fc) groups.
    pub fn groups_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let off = self.fc_offset();
        self.params.split_at_mut(off)
    }

    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(features)?.output)
    }

    pub fn forward_trace(&self, features: &[f64]) -> Result<Trace> {
        if features.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: features.len(),
            });
        }
        let n_trunk = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(n_trunk);
        let mut x = features.to_vec();
        let mut off = 0;
        for (li, l) in self.layers.iter().enumerate() {
            let w = &self.params[off..off + l.input * l.output];
            let b = &self.params[off + l.input * l.output..off + l.len()];
            let z: Vec<f64> = (0..l.output)
                .map(|o| {
                    let row = &w[o * l.input..(o + 1) * l.input];
                    b[o] + row.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>()
                })
                .collect();
            inputs.push(std::mem::take(&mut x));
            if li < n_trunk {
                x = z.iter().map(|&v| gelu(v)).collect();
                pre.push(z);
            } else {
                x = z;
            }
            off += l.len();
        }
        Ok(Trace {
            inputs,
            pre,
            output: x,
        })
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d output`.
    pub fn backward(&self, trace: &Trace, grad_output: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.params.len());
        let n_trunk = self.layers.len() - 1;
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.len();
        }
        let mut g = grad_output.to_vec();
        for li in (0..self.layers.len()).rev() {
            let l = self.layers[li];
            if li < n_trunk {
                for (gi, z) in g.iter_mut().zip(&trace.pre[li]) {
                    *gi *= gelu_grad(*z);
                }
            }
            let x = &trace.inputs[li];
            let off = offsets[li];
            let nw = l.input * l.output;
            for o in 0..l.output {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                let row = &mut grads[off + o * l.input..off + (o + 1) * l.input];
                for (r, xi) in row.iter_mut().zip(x) {
                    *r += go * xi;
                }
                grads[off + nw + o] += go;
            }
            if li > 0 {
                let w = &self.params[off..off + nw];
                let mut gx = vec![0.0; l.input];
                for o in 0..l.output {
                    let go = g[o];
                    if go == 0.0 {
                        continue;
                    }
                    for (gxi, wi) in gx.iter_mut().zip(&w[o * l.input..(o + 1) * l.input]) {
                        *gxi += go * wi;
                    }
                }
                g = gx;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_model_passes_input_through() {
        let m = EmbedderModel::identity(4);
        let x = vec![0.5, -1.0, 2.0, 3.0];
        assert_eq!(m.forward(&x).unwrap(), x);
        assert!(m.hidden().is_empty());
        assert_eq!(m.fc_offset(), 0);
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut params = vec![0.0; 3 * 2 + 2];
        params[6] = 1.5;
        params[7] = -2.0;
        let m = EmbedderModel::from_params(3, &[], 2, params).unwrap();
        assert_eq!(m.forward(&[9.0, 8.0, 7.0]).unwrap(), vec![1.5, -2.0]);
        assert!(matches!(m.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn two_layer_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = EmbedderModel::new(5, &[7], 3, &mut rng);
        let x: Vec<f64> = (0..5).map(|i| (i as f64 - 2.0) * 0.3).collect();
        let p = m.params();
        // hidden = gelu(W1 x + b1); out = W2 hidden + b2
        let w1 = &p[..35];
        let b1 = &p[35..42];
        let w2 = &p[42..63];
        let b2 = &p[63..66];
        let mut hidden = [0.0; 7];
        for o in 0..7 {
            let mut s = b1[o];
            for i in 0..5 {
                s += w1[o * 5 + i] * x[i];
            }
            hidden[o] = gelu(s);
        }
        let out = m.forward(&x).unwrap();
        for o in 0..3 {
            let mut s = b2[o];
            for i in 0..7 {
                s += w2[o * 7 + i] * hidden[i];
            }
            assert!((out[o] - s).abs() < 1e-10);
        }
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = EmbedderModel::new(4, &[6, 5], 3, &mut rng);
        let x = vec![0.3, -0.8, 1.1, 0.05];
        let upstream = vec![0.7, -1.3, 0.4];
        let objective = |m: &EmbedderModel| -> f64 {
            m.forward(&x).unwrap().iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        let trace = m.forward_trace(&x).unwrap();
        let mut grads = vec![0.0; m.params().len()];
        m.backward(&trace, &upstream, &mut grads);
        let h = 1e-6;
        for (i, &g) in grads.iter().enumerate() {
            let mut plus = m.clone();
            plus.params_mut()[i] += h;
            let mut minus = m.clone();
            minus.params_mut()[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            assert!((fd - g).abs() < 1e-7 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g);
        }
    }
}

//! Dense ReLU regression networks.
//!
//! A network with `K` affine layers applies `max(0, ·)` after each of the
//! first `K − 1` layers and leaves the last one linear:
//!
//! ```text
//! y^k = max(0, W^k y^{k-1} + b^k)   k = 1..K-1
//! y^K = W^K y^{K-1} + b^K
//! ```

mod train;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use train::{fit_regression, Architecture, FitReport, TrainConfig, TrainingGrid};

/// A map with fixed input and output dimension that may fail to evaluate,
/// e.g. the feedback-linearization map `Φ(z, v)` near a singularity.
pub trait ExactMap {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval_into(&self, input: &[f64], out: &mut [f64]) -> Result<()>;

    fn eval(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        self.eval_into(input, &mut out)?;
        Ok(out)
    }
}

/// Adapts a closure to [`ExactMap`].
pub struct FnMap<F> {
    input_dim: usize,
    output_dim: usize,
    f: F,
}

impl<F> FnMap<F>
where
    F: Fn(&[f64], &mut [f64]) -> Result<()>,
{
    pub fn new(input_dim: usize, output_dim: usize, f: F) -> Self {
        Self {
            input_dim,
            output_dim,
            f,
        }
    }
}

impl<F> ExactMap for FnMap<F>
where
    F: Fn(&[f64], &mut [f64]) -> Result<()>,
{
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn eval_into(&self, input: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(input, out)
    }
}

/// Scalar closure `f(x) -> y` as a single-output [`ExactMap`].
pub fn scalar_map(input_dim: usize, f: impl Fn(&[f64]) -> f64) -> impl ExactMap {
    FnMap::new(input_dim, 1, move |x: &[f64], out: &mut [f64]| {
        out[0] = f(x);
        Ok(())
    })
}

/// One affine layer, weights stored row-major (`outputs × inputs`).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weights: Vec<f64>,
    bias: Vec<f64>,
    inputs: usize,
}

impl Layer {
    /// Builds a layer from weight rows. Every row must have the same length.
    pub fn new(rows: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        if rows.len() != bias.len() {
            return Err(Error::Dimension {
                context: "layer bias",
                expected: rows.len(),
                got: bias.len(),
            });
        }
        let inputs = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != inputs) {
            return Err(Error::Dimension {
                context: "layer weight row",
                expected: inputs,
                got: bad.len(),
            });
        }
        Ok(Self {
            weights: rows.into_iter().flatten().collect(),
            bias,
            inputs,
        })
    }

    pub(crate) fn from_flat(weights: Vec<f64>, bias: Vec<f64>, inputs: usize) -> Self {
        debug_assert_eq!(weights.len(), bias.len() * inputs);
        Self {
            weights,
            bias,
            inputs,
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.inputs..(j + 1) * self.inputs]
    }

    pub fn weight(&self, j: usize, i: usize) -> f64 {
        self.weights[j * self.inputs + i]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// `out = W x + b`.
    pub fn affine_into(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate().take(self.outputs()) {
            let row = self.row(j);
            let mut acc = self.bias[j];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            *o = acc;
        }
    }

    fn frobenius_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

/// Layered ReLU network; immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluNetwork {
    layers: Vec<Layer>,
}

/// Reusable buffers for allocation-free evaluation.
#[derive(Debug, Clone, Default)]
pub struct ForwardScratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

enum Issue {
    Empty,
    Chain {
        layer: usize,
        expected: usize,
        got: usize,
    },
    NonFinite {
        layer: usize,
    },
}

impl ReluNetwork {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        match Self::check(&layers) {
            None => Ok(Self { layers }),
            Some(Issue::Empty) => Err(Error::Validation("network has no layers".into())),
            Some(Issue::Chain {
                layer,
                expected,
                got,
            }) => Err(Error::Validation(format!(
                "layer {layer} takes {got} inputs but the previous layer has {expected} outputs"
            ))),
            Some(Issue::NonFinite { layer }) => Err(Error::Validation(format!(
                "layer {layer} contains a non-finite weight or bias"
            ))),
        }
    }

    fn check(layers: &[Layer]) -> Option<Issue> {
        if layers.is_empty() {
            return Some(Issue::Empty);
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[1].inputs() != pair[0].outputs() {
                return Some(Issue::Chain {
                    layer: k + 1,
                    expected: pair[0].outputs(),
                    got: pair[1].inputs(),
                });
            }
        }
        layers
            .iter()
            .position(|l| l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()))
            .map(|layer| Issue::NonFinite { layer })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Number of affine layers `K`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// Widths `n_1..n_{K-1}` of the ReLU layers.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Layer::outputs)
            .collect()
    }

    /// Total ReLU count, which is also the binary count of one encoding.
    pub fn hidden_node_count(&self) -> usize {
        self.hidden_widths().iter().sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut scratch = ForwardScratch::default();
        Ok(self.forward_with(&mut scratch, input).to_vec())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Evaluates into `scratch` and returns the output slice. The input
    /// length is only checked in debug builds.
    pub fn forward_with<'s>(&self, scratch: &'s mut ForwardScratch, input: &[f64]) -> &'s [f64] {
        debug_assert_eq!(input.len(), self.input_dim());
        let last = self.layers.len() - 1;
        scratch.a.clear();
        scratch.a.extend_from_slice(input);
        for (k, layer) in self.layers.iter().enumerate() {
            scratch.b.resize(layer.outputs(), 0.0);
            layer.affine_into(&scratch.a, &mut scratch.b);
            if k < last {
                for v in scratch.b.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut scratch.a, &mut scratch.b);
        }
        &scratch.a
    }

    /// Pre-activation vectors `W^k y^{k-1} + b^k` for every layer; the last
    /// entry is the network output.
    pub fn pre_activations(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(input)?;
        let mut out = Vec::with_capacity(self.layers.len());
        let mut current = input.to_vec();
        for layer in &self.layers {
            let mut pre = vec![0.0; layer.outputs()];
            layer.affine_into(&current, &mut pre);
            current = pre.iter().map(|v| v.max(0.0)).collect();
            out.push(pre);
        }
        Ok(out)
    }

    /// Product of layer Frobenius norms, an upper bound on the Euclidean
    /// Lipschitz constant.
    pub fn lipschitz_upper_bound(&self) -> f64 {
        self.layers.iter().map(Layer::frobenius_norm).product()
    }

    pub fn to_json(&self) -> Result<String> {
        let raw = RawNetwork {
            layers: self
                .layers
                .iter()
                .map(|l| RawLayer {
                    weights: (0..l.outputs())
                        .map(|j| l.row(j).iter().copied().map(Some).collect())
                        .collect(),
                    bias: l.bias.iter().copied().map(Some).collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&raw)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawNetwork = serde_json::from_str(text).map_err(|e| Error::Parse {
            layer: 0,
            message: e.to_string(),
        })?;
        let mut layers = Vec::with_capacity(raw.layers.len());
        for (k, rl) in raw.layers.into_iter().enumerate() {
            let rows: Vec<Vec<f64>> = rl
                .weights
                .into_iter()
                .map(|r| r.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
                .collect();
            let bias = rl.bias.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect();
            let layer = Layer::new(rows, bias).map_err(|e| Error::Parse {
                layer: k,
                message: e.to_string(),
            })?;
            layers.push(layer);
        }
        match Self::check(&layers) {
            Some(Issue::Empty) => Err(Error::Parse {
                layer: 0,
                message: "no layers".into(),
            }),
            Some(Issue::Chain {
                layer,
                expected,
                got,
            }) => Err(Error::Parse {
                layer,
                message: format!("expects {got} inputs, previous layer emits {expected}"),
            }),
            Some(Issue::NonFinite { layer }) => Err(Error::Validation(format!(
                "layer {layer} contains a non-finite weight or bias"
            ))),
            None => Ok(Self { layers }),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

// `null` entries deserialize to NaN so that they are reported by the
// finiteness check rather than as a syntax error.
#[derive(Serialize, Deserialize)]
struct RawNetwork {
    layers: Vec<RawLayer>,
}

#[derive(Serialize, Deserialize)]
struct RawLayer {
    #[serde(rename = "W")]
    weights: Vec<Vec<Option<f64>>>,
    #[serde(rename = "b")]
    bias: Vec<Option<f64>>,
}

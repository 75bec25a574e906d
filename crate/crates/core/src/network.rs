//! Dense + ReLU feedforward classifiers with exact reverse-mode gradients.
//!
//! A [`Model`] pairs a validated [`ModelSpec`] with its [`ModelParams`]. The
//! forward pass keeps a [`ForwardTrace`] so the backward pass can produce
//! either the loss gradient with respect to the input (used by attacks) or
//! the mean parameter gradients over a batch (used by training).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { in_dim: usize, out_dim: usize },
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

impl ModelSpec {
    /// Dense stack `input -> hidden[0] -> relu -> ... -> num_classes`.
    pub fn mlp(name: impl Into<String>, input_dim: usize, hidden: &[usize], num_classes: usize) -> Self {
        let mut layers = Vec::new();
        let mut width = input_dim;
        for &h in hidden {
            layers.push(LayerSpec::Dense {
                in_dim: width,
                out_dim: h,
            });
            layers.push(LayerSpec::Relu);
            width = h;
        }
        layers.push(LayerSpec::Dense {
            in_dim: width,
            out_dim: num_classes,
        });
        Self {
            name: name.into(),
            layers,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Spec("num_classes must be positive".into()));
        }
        let mut width = match self.layers.first() {
            Some(LayerSpec::Dense { in_dim, .. }) => *in_dim,
            Some(LayerSpec::Relu) => return Err(Error::Spec("first layer must be dense".into())),
            None => return Err(Error::Spec("model has no layers".into())),
        };
        for (i, layer) in self.layers.iter().enumerate() {
            if let LayerSpec::Dense { in_dim, out_dim } = *layer {
                if in_dim == 0 || out_dim == 0 {
                    return Err(Error::Spec(format!("layer {i} has a zero dimension")));
                }
                if in_dim != width {
                    return Err(Error::Dimension {
                        layer: i,
                        expected: width,
                        found: in_dim,
                    });
                }
                width = out_dim;
            }
        }
        match self.layers.last() {
            Some(LayerSpec::Dense { out_dim, .. }) if *out_dim == self.num_classes => Ok(()),
            Some(LayerSpec::Dense { out_dim, .. }) => Err(Error::Spec(format!(
                "final layer outputs {out_dim} values but num_classes is {}",
                self.num_classes
            ))),
            _ => Err(Error::Spec("network must end in a dense layer".into())),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self.layers.first() {
            Some(LayerSpec::Dense { in_dim, .. }) => *in_dim,
            _ => 0,
        }
    }

    pub fn dense_shapes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.layers.iter().filter_map(|l| match *l {
            LayerSpec::Dense { in_dim, out_dim } => Some((in_dim, out_dim)),
            LayerSpec::Relu => None,
        })
    }
}

/// Weight `[out_dim, in_dim]` and bias `[out_dim]` of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseParams {
    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Parameters for every dense layer, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dense: Vec<DenseParams>,
}

impl ModelParams {
    pub fn num_values(&self) -> usize {
        self.dense.iter().map(|d| d.weight.len() + d.bias.len()).sum()
    }
}

/// Mean gradients for every dense layer; same layout as [`ModelParams`].
pub type ParamGradients = ModelParams;

#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Input to the layer (the pre-activation for ReLU layers).
    pub input: Tensor,
    pub output: Tensor,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: ModelParams,
}

impl Model {
    pub fn new(spec: ModelSpec, params: ModelParams) -> Result<Self> {
        spec.validate()?;
        let shapes: Vec<_> = spec.dense_shapes().collect();
        if shapes.len() != params.dense.len() {
            return Err(Error::Spec(format!(
                "spec has {} dense layers but {} parameter sets were given",
                shapes.len(),
                params.dense.len()
            )));
        }
        for (i, ((in_dim, out_dim), p)) in shapes.iter().zip(&params.dense).enumerate() {
            if p.weight.shape() != [*out_dim, *in_dim] || p.bias.shape() != [*out_dim] {
                return Err(Error::Spec(format!(
                    "dense layer {i}: expected weight [{out_dim}, {in_dim}] and bias [{out_dim}], got {:?} and {:?}",
                    p.weight.shape(),
                    p.bias.shape()
                )));
            }
            if !p.weight.is_finite() || !p.bias.is_finite() {
                return Err(Error::Spec(format!("dense layer {i} holds non-finite values")));
            }
        }
        Ok(Self { spec, params })
    }

    /// Single dense layer (linear softmax classifier) with one weight row per class.
    pub fn linear(name: impl Into<String>, weight_rows: &[Vec<f64>], bias: &[f64]) -> Result<Self> {
        let classes = weight_rows.len();
        let dim = weight_rows.first().map_or(0, Vec::len);
        if classes == 0 || dim == 0 || weight_rows.iter().any(|r| r.len() != dim) || bias.len() != classes {
            return Err(Error::Spec("linear model needs equal nonempty rows and one bias per row".into()));
        }
        let spec = ModelSpec {
            name: name.into(),
            layers: vec![LayerSpec::Dense {
                in_dim: dim,
                out_dim: classes,
            }],
            num_classes: classes,
        };
        let weight = Tensor::new(vec![classes, dim], weight_rows.concat())?;
        let bias = Tensor::from_vec(bias.to_vec());
        Self::new(spec, ModelParams {
            dense: vec![DenseParams { weight, bias }],
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub(crate) fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ForwardTrace)> {
        let mut trace = Vec::with_capacity(self.spec.layers.len());
        let mut current = x.clone();
        let mut dense = self.params.dense.iter();
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let output = match layer {
                LayerSpec::Dense { in_dim, .. } => {
                    if current.len() != *in_dim {
                        return Err(Error::Dimension {
                            layer: i,
                            expected: *in_dim,
                            found: current.len(),
                        });
                    }
                    let p = dense.next().expect("validated dense count");
                    affine(p, current.data())
                }
                LayerSpec::Relu => current.map(|v| if v > 0.0 { v } else { 0.0 }),
            };
            trace.push(LayerTrace {
                input: current,
                output: output.clone(),
            });
            current = output;
        }
        Ok((current, ForwardTrace { layers: trace }))
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.0)
    }

    /// Argmax of the softmax output (lowest index on ties).
    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.probabilities(x)?.argmax())
    }

    pub fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn loss(&self, x: &Tensor, label: usize) -> Result<f64> {
        Ok(softmax_cross_entropy(&self.logits(x)?, label)?.0)
    }

    /// `dL/dx` of the cross-entropy loss at `(x, label)`.
    pub fn input_gradient(&self, x: &Tensor, label: usize) -> Result<Tensor> {
        let (logits, trace) = self.forward(x)?;
        let (_, probs) = softmax_cross_entropy(&logits, label)?;
        let upstream = logit_gradient(&probs, label);
        Ok(self.backward(&trace, upstream, None))
    }

    /// Mean over the batch of the parameter gradients, plus the mean loss.
    pub fn param_gradients(&self, xs: &[Tensor], labels: &[usize]) -> Result<(ParamGradients, f64)> {
        if xs.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        if xs.len() != labels.len() {
            return Err(Error::Argument(format!(
                "batch has {} inputs but {} labels",
                xs.len(),
                labels.len()
            )));
        }
        let mut acc = self.zero_gradients();
        let mut loss_sum = 0.0;
        for (x, &label) in xs.iter().zip(labels) {
            let (logits, trace) = self.forward(x)?;
            let (loss, probs) = softmax_cross_entropy(&logits, label)?;
            loss_sum += loss;
            self.backward(&trace, logit_gradient(&probs, label), Some(&mut acc));
        }
        let inv = 1.0 / xs.len() as f64;
        for g in &mut acc.dense {
            g.weight.data_mut().iter_mut().for_each(|v| *v *= inv);
            g.bias.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        Ok((acc, loss_sum * inv))
    }

    fn zero_gradients(&self) -> ParamGradients {
        ModelParams {
            dense: self
                .params
                .dense
                .iter()
                .map(|p| DenseParams {
                    weight: Tensor::zeros(p.weight.shape().to_vec()),
                    bias: Tensor::zeros(p.bias.shape().to_vec()),
                })
                .collect(),
        }
    }

    /// Propagates `upstream` (dL/dlogits) back to the input. When `acc` is
    /// given, parameter gradients are added into it.
    fn backward(&self, trace: &ForwardTrace, upstream: Vec<f64>, mut acc: Option<&mut ParamGradients>) -> Tensor {
        let mut grad = upstream;
        let mut dense_idx = self.params.dense.len();
        for (layer, lt) in self.spec.layers.iter().zip(&trace.layers).rev() {
            match layer {
                LayerSpec::Relu => {
                    for (g, &pre) in grad.iter_mut().zip(lt.input.data()) {
                        if pre <= 0.0 {
                            *g = 0.0;
                        }
                    }
                }
                LayerSpec::Dense { in_dim, out_dim } => {
                    dense_idx -= 1;
                    let p = &self.params.dense[dense_idx];
                    let input = lt.input.data();
                    if let Some(acc) = acc.as_deref_mut() {
                        let g = &mut acc.dense[dense_idx];
                        let w = g.weight.data_mut();
                        for (o, &go) in grad.iter().enumerate() {
                            let row = &mut w[o * in_dim..(o + 1) * in_dim];
                            for (wv, &xv) in row.iter_mut().zip(input) {
                                *wv += go * xv;
                            }
                        }
                        for (b, &go) in g.bias.data_mut().iter_mut().zip(&grad) {
                            *b += go;
                        }
                    }
                    let w = p.weight.data();
                    let mut next = vec![0.0; *in_dim];
                    for o in 0..*out_dim {
                        let go = grad[o];
                        let row = &w[o * in_dim..(o + 1) * in_dim];
                        for (n, &wv) in next.iter_mut().zip(row) {
                            *n += go * wv;
                        }
                    }
                    grad = next;
                }
            }
        }
        Tensor::new(trace.layers[0].input.shape().to_vec(), grad).expect("gradient matches input shape")
    }
}

fn affine(p: &DenseParams, x: &[f64]) -> Tensor {
    let in_dim = p.in_dim();
    let w = p.weight.data();
    let out: Vec<f64> = p
        .bias
        .data()
        .iter()
        .enumerate()
        .map(|(o, &b)| {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            b + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
        })
        .collect();
    Tensor::from_vec(out)
}

fn logit_gradient(probs: &Tensor, label: usize) -> Vec<f64> {
    let mut g = probs.data().to_vec();
    g[label] -= 1.0;
    g
}

/// Max-shifted softmax.
pub fn softmax(logits: &Tensor) -> Tensor {
    let max = logits.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data().iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Tensor::new(logits.shape().to_vec(), exps.into_iter().map(|e| e / sum).collect())
        .expect("softmax preserves shape")
}

/// Fused softmax + cross-entropy. Returns `(loss, probs)`.
///
/// The loss is evaluated as `logsumexp(z - max) - (z_label - max)` so it
/// never takes the log of an underflowed probability.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let k = logits.len();
    if label >= k {
        return Err(Error::Argument(format!("label {label} out of range for {k} classes")));
    }
    let max = logits.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.data().iter().map(|&z| (z - max).exp()).sum();
    let loss = (sum.ln() - (logits.data()[label] - max)).max(0.0);
    Ok((loss, softmax(logits)))
}

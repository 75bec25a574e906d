//! Model initialization, natural and adversarial training, evaluation, and
//! the binary model file.
//!
//! # Model file layout
//!
//! All integers are little-endian `u32`, all reals little-endian `f64`:
//!
//! ```text
//! "ARESMDL1"                      8-byte magic; the trailing digit is the version
//! layer_count
//! layer_count x (kind, in_dim, out_dim)   kind 0 = dense, 1 = relu (dims 0)
//! num_classes
//! name_len, name bytes (UTF-8)
//! per dense layer: weight [out x in] row-major, then bias [out]
//! ```
//!
//! The file must end exactly after the last bias value.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::attacks::{pgd_full, pgd_perturb, AttackConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{DenseParams, LayerSpec, Model, ModelParams, ModelSpec};
use crate::rng::{child_rng, child_seed, rng_from_seed};
use crate::tensor::Tensor;

pub const MODEL_MAGIC: &[u8; 8] = b"ARESMDL1";
const MAGIC_PREFIX: &[u8; 7] = b"ARESMDL";

/// Weights `N(0, 1) / sqrt(in_dim)`, biases zero.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ModelParams> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let dense = spec
        .dense_shapes()
        .map(|(in_dim, out_dim)| {
            let scale = 1.0 / (in_dim as f64).sqrt();
            let w = (0..in_dim * out_dim)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            DenseParams {
                weight: Tensor::new(vec![out_dim, in_dim], w).expect("shape"),
                bias: Tensor::zeros(vec![out_dim]),
            }
        })
        .collect();
    Ok(ModelParams { dense })
}

pub fn init_model(spec: ModelSpec, seed: u64) -> Result<Model> {
    let params = init_params(&spec, seed)?;
    Model::new(spec, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Natural,
    /// Each batch is replaced by PGD examples against the current weights.
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub adv_eps: f64,
    pub adv_alpha: f64,
    pub adv_steps: usize,
    pub adv_random_start: bool,
}

impl TrainingConfig {
    pub fn natural(learning_rate: f64, epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            learning_rate,
            epochs,
            batch_size,
            seed,
            mode: TrainMode::Natural,
            adv_eps: 0.1,
            adv_alpha: 0.025,
            adv_steps: 10,
            adv_random_start: false,
        }
    }

    pub fn adversarial(learning_rate: f64, epochs: usize, batch_size: usize, seed: u64, eps: f64, alpha: f64, steps: usize) -> Self {
        Self {
            mode: TrainMode::Adversarial,
            adv_eps: eps,
            adv_alpha: alpha,
            adv_steps: steps,
            ..Self::natural(learning_rate, epochs, batch_size, seed)
        }
    }

    pub fn adv_attack(&self) -> AttackConfig {
        AttackConfig {
            eps: self.adv_eps,
            alpha: self.adv_alpha,
            max_steps: self.adv_steps,
            random_start: self.adv_random_start,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Argument(
                "learning_rate, epochs and batch_size must be positive".into(),
            ));
        }
        if self.mode == TrainMode::Adversarial {
            self.adv_attack().validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Minibatch SGD from `init_params(spec, config.seed)`. Deterministic in
/// `(spec, dataset, config)`.
pub fn train(spec: ModelSpec, dataset: &Dataset, config: &TrainingConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.dim() != spec.input_dim() {
        return Err(Error::Argument(format!(
            "model {} expects {} inputs, dataset has {}",
            spec.name,
            spec.input_dim(),
            dataset.dim()
        )));
    }
    if dataset.num_classes() > spec.num_classes {
        return Err(Error::Argument(format!(
            "dataset has {} classes, model {} only {}",
            dataset.num_classes(),
            spec.name,
            spec.num_classes
        )));
    }
    let mut model = init_model(spec, config.seed)?;
    let mut shuffle_rng = child_rng(config.seed, 1);
    let adv_seed = child_seed(config.seed, 2);
    let attack = config.adv_attack();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels()[i]).collect();
            let inputs: Vec<Tensor> = match config.mode {
                TrainMode::Natural => chunk.iter().map(|&i| dataset.inputs()[i].clone()).collect(),
                TrainMode::Adversarial => {
                    let base = (epoch * dataset.len() + batch * config.batch_size) as u64;
                    let current = &model;
                    chunk
                        .par_iter()
                        .enumerate()
                        .map(|(k, &i)| {
                            let mut rng = child_rng(adv_seed, base + k as u64);
                            pgd_perturb(current, &dataset.inputs()[i], dataset.labels()[i], &attack, Some(&mut rng))
                        })
                        .collect::<Result<_>>()?
                }
            };
            let (grads, loss) = model.param_gradients(&inputs, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch });
            }
            let lr = config.learning_rate;
            for (p, g) in model.params_mut().dense.iter_mut().zip(&grads.dense) {
                for (w, dw) in p.weight.data_mut().iter_mut().zip(g.weight.data()) {
                    *w -= lr * dw;
                }
                for (b, db) in p.bias.data_mut().iter_mut().zip(g.bias.data()) {
                    *b -= lr * db;
                }
            }
            if model.params().dense.iter().any(|p| !p.weight.is_finite() || !p.bias.is_finite()) {
                return Err(Error::Divergence { epoch, batch });
            }
            loss_sum += loss;
            batches += 1;
        }
        epoch_losses.push(loss_sum / batches as f64);
    }
    Ok(TrainOutcome { model, epoch_losses })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub natural_accuracy: f64,
    /// `None` when no attack was requested.
    pub adversarial_accuracy: Option<f64>,
    pub num_samples: usize,
}

/// Seed for random-start PGD during evaluation; sample `i` uses child `i`.
pub const EVAL_SEED: u64 = 0x6576_616c;

/// Natural accuracy, plus the fraction of samples still classified correctly
/// after PGD when `attack` is given.
pub fn evaluate(model: &Model, dataset: &Dataset, attack: Option<&AttackConfig>) -> Result<EvalReport> {
    let n = dataset.len();
    let correct = dataset
        .inputs()
        .par_iter()
        .zip(dataset.labels())
        .map(|(x, &y)| model.predict(x).map(|p| usize::from(p == y)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    let adversarial_accuracy = match attack {
        None => None,
        Some(cfg) => {
            let robust: usize = (0..n)
                .into_par_iter()
                .map(|i| {
                    let (x, y) = dataset.get(i);
                    let mut rng = child_rng(EVAL_SEED, i as u64);
                    pgd_full(model, x, y, cfg, Some(&mut rng)).map(|o| usize::from(!o.success))
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .sum();
            Some(robust as f64 / n as f64)
        }
    };
    Ok(EvalReport {
        natural_accuracy: correct as f64 / n as f64,
        adversarial_accuracy,
        num_samples: n,
    })
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let spec = model.spec();
    let mut out = Vec::with_capacity(64 + 8 * model.params().num_values());
    out.extend_from_slice(MODEL_MAGIC);
    let put = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    put(&mut out, spec.layers.len());
    for layer in &spec.layers {
        let (kind, a, b) = match *layer {
            LayerSpec::Dense { in_dim, out_dim } => (0, in_dim, out_dim),
            LayerSpec::Relu => (1, 0, 0),
        };
        put(&mut out, kind);
        put(&mut out, a);
        put(&mut out, b);
    }
    put(&mut out, spec.num_classes);
    put(&mut out, spec.name.len());
    out.extend_from_slice(spec.name.as_bytes());
    for p in &model.params().dense {
        for v in p.weight.data().iter().chain(p.bias.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len().saturating_sub(self.pos) < n {
            return Err(Error::Format {
                offset: self.pos,
                message: format!("unexpected end of file: needed {n} more bytes"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.format_err("size overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn format_err(&self, message: &str) -> Error {
        Error::Format {
            offset: self.pos,
            message: message.to_string(),
        }
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(8)?;
    if magic != MODEL_MAGIC {
        if magic.starts_with(MAGIC_PREFIX) {
            return Err(Error::Version {
                found: String::from_utf8_lossy(&magic[7..]).into_owned(),
            });
        }
        return Err(Error::Format {
            offset: 0,
            message: "not a model file (bad magic)".into(),
        });
    }
    let layer_count = c.u32()?;
    let mut layers = Vec::new();
    for _ in 0..layer_count {
        let at = c.pos;
        let (kind, a, b) = (c.u32()?, c.u32()?, c.u32()?);
        layers.push(match (kind, a, b) {
            (0, in_dim, out_dim) => LayerSpec::Dense { in_dim, out_dim },
            (1, 0, 0) => LayerSpec::Relu,
            _ => {
                return Err(Error::Format {
                    offset: at,
                    message: format!("bad layer record ({kind}, {a}, {b})"),
                })
            }
        });
    }
    let num_classes = c.u32()?;
    let name_len = c.u32()?;
    let name_at = c.pos;
    let name = std::str::from_utf8(c.take(name_len)?)
        .map_err(|_| Error::Format {
            offset: name_at,
            message: "model name is not UTF-8".into(),
        })?
        .to_string();
    let spec = ModelSpec {
        name,
        layers,
        num_classes,
    };
    let spec_end = c.pos;
    spec.validate().map_err(|e| Error::Format {
        offset: spec_end,
        message: format!("invalid architecture: {e}"),
    })?;
    let mut dense = Vec::new();
    for (in_dim, out_dim) in spec.dense_shapes() {
        let w = c.f64s(in_dim * out_dim)?;
        let b = c.f64s(out_dim)?;
        dense.push(DenseParams {
            weight: Tensor::new(vec![out_dim, in_dim], w)?,
            bias: Tensor::new(vec![out_dim], b)?,
        });
    }
    if c.pos != bytes.len() {
        return Err(c.format_err("trailing bytes after parameters"));
    }
    Model::new(spec, ModelParams { dense }).map_err(|e| Error::Format {
        offset: c.pos,
        message: e.to_string(),
    })
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    decode_model(&fs::read(path)?)
}

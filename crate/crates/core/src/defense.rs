//! The defender agent: a model pool, a selection policy, and truthful
//! responses filtered by threat model.

use std::sync::Arc;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::network::Model;
use crate::rng::SimRng;
use crate::tensor::Tensor;

/// What the attacker is allowed to see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ThreatModel {
    /// Label, probabilities and the loss gradient.
    WhiteBox,
    /// Label and probabilities.
    SoftBlackBox,
    /// Label only.
    HardBlackBox,
}

impl ThreatModel {
    pub fn name(&self) -> &'static str {
        match self {
            ThreatModel::WhiteBox => "white_box",
            ThreatModel::SoftBlackBox => "soft_black_box",
            ThreatModel::HardBlackBox => "hard_black_box",
        }
    }

    pub fn exposes_probs(&self) -> bool {
        *self != ThreatModel::HardBlackBox
    }

    pub fn exposes_gradient(&self) -> bool {
        *self == ThreatModel::WhiteBox
    }
}

/// How the responding model is chosen for each query. Neither kind adapts
/// to the attacker; `UniformRandom` is the moving-target defense.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefenderPolicy {
    Static(usize),
    UniformRandom,
}

/// Nonempty list of models sharing input width and class count.
#[derive(Debug, Clone)]
pub struct DefensePool {
    models: Vec<Arc<Model>>,
}

impl DefensePool {
    pub fn new(models: Vec<Arc<Model>>) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::Argument("defense pool is empty".into()))?;
        let (dim, classes) = (first.input_dim(), first.num_classes());
        for m in &models {
            if m.input_dim() != dim || m.num_classes() != classes {
                return Err(Error::Argument(format!(
                    "model {} has input {} / {} classes, pool expects {dim} / {classes}",
                    m.name(),
                    m.input_dim(),
                    m.num_classes()
                )));
            }
        }
        Ok(Self { models })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> &[Arc<Model>] {
        &self.models
    }

    pub fn model(&self, i: usize) -> &Model {
        &self.models[i]
    }

    pub fn names(&self) -> Vec<&str> {
        self.models.iter().map(|m| m.name()).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.models[0].input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.models[0].num_classes()
    }

    pub fn check_policy(&self, policy: DefenderPolicy) -> Result<()> {
        match policy {
            DefenderPolicy::Static(i) if i >= self.len() => Err(Error::Argument(format!(
                "static index {i} out of range for a pool of {}",
                self.len()
            ))),
            _ => Ok(()),
        }
    }
}

/// Full defender reply, including which model answered.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResponse {
    pub label: usize,
    pub probs: Option<Tensor>,
    pub loss_gradient: Option<Tensor>,
    /// Instrumentation only; never reaches the attacker.
    pub responder_index: usize,
}

/// The part of a [`QueryResponse`] an attacker may observe.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackerView {
    pub label: usize,
    pub probs: Option<Tensor>,
    pub loss_gradient: Option<Tensor>,
}

impl QueryResponse {
    pub fn view(&self) -> AttackerView {
        AttackerView {
            label: self.label,
            probs: self.probs.clone(),
            loss_gradient: self.loss_gradient.clone(),
        }
    }
}

/// Static policies return their index; uniform draws exactly one `u64`.
pub fn select_model(policy: DefenderPolicy, pool: &DefensePool, rng: &mut SimRng) -> usize {
    match policy {
        DefenderPolicy::Static(i) => i,
        DefenderPolicy::UniformRandom => {
            let k = pool.len() as u128;
            ((u128::from(rng.next_u64()) * k) >> 64) as usize
        }
    }
}

/// Answers one query truthfully from a single selected model.
pub fn respond(
    pool: &DefensePool,
    policy: DefenderPolicy,
    threat: ThreatModel,
    x: &Tensor,
    true_label: usize,
    rng: &mut SimRng,
) -> Result<QueryResponse> {
    if x.len() != pool.input_dim() {
        return Err(Error::Shape {
            left: x.shape().to_vec(),
            right: vec![pool.input_dim()],
        });
    }
    let index = select_model(policy, pool, rng);
    let model = pool.model(index);
    let probs = model.probabilities(x)?;
    let label = probs.argmax();
    let loss_gradient = if threat.exposes_gradient() {
        Some(model.input_gradient(x, true_label)?)
    } else {
        None
    };
    Ok(QueryResponse {
        label,
        probs: threat.exposes_probs().then_some(probs),
        loss_gradient,
        responder_index: index,
    })
}

/// Whether every pool model predicts `true_label` on `x`.
pub fn classifies_correctly_all(pool: &DefensePool, x: &Tensor, true_label: usize) -> Result<bool> {
    for m in pool.models() {
        if m.predict(x)? != true_label {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Whether every pool model mispredicts `x`.
pub fn misclassified_by_all(pool: &DefensePool, x: &Tensor, true_label: usize) -> Result<bool> {
    for m in pool.models() {
        if m.predict(x)? == true_label {
            return Ok(false);
        }
    }
    Ok(true)
}

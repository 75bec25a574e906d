//! ℓ∞ evasion attacks and the attacker agents that play them.
//!
//! The primitives ([`sign_step`], [`project`], [`pgd_round_step`]) are shared
//! by the full multi-step PGD used for training/evaluation and by the
//! one-step-per-round agents driven by the game engine.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::defense::{AttackerView, ThreatModel};
use crate::error::{Error, Result};
use crate::network::Model;
use crate::rng::SimRng;
use crate::tensor::Tensor;

/// Slack allowed on the ℓ∞ budget check.
pub const BUDGET_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    /// ℓ∞ budget in input units.
    pub eps: f64,
    pub alpha: f64,
    pub max_steps: usize,
    /// Start from a uniform point in the ε-ball instead of the clean input.
    pub random_start: bool,
}

impl AttackConfig {
    pub fn new(eps: f64, alpha: f64, max_steps: usize) -> Self {
        Self {
            eps,
            alpha,
            max_steps,
            random_start: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(Error::Argument(format!("eps must be finite and >= 0, got {}", self.eps)));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Argument(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.max_steps == 0 {
            return Err(Error::Argument("max_steps must be at least 1".into()));
        }
        Ok(())
    }

    /// Non-fatal configuration issues.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.eps > 0.0 && self.alpha > 2.0 * self.eps {
            w.push(format!(
                "alpha {} exceeds 2*eps {}; every step will be clipped by the projection",
                self.alpha,
                2.0 * self.eps
            ));
        }
        w
    }
}

/// Progress of one attack on one clean input.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackState {
    pub x0: Tensor,
    pub x: Tensor,
    pub true_label: usize,
    pub steps_taken: usize,
}

impl AttackState {
    pub fn new(x0: Tensor, true_label: usize) -> Self {
        Self {
            x: x0.clone(),
            x0,
            true_label,
            steps_taken: 0,
        }
    }

    /// `‖x − x0‖∞ ≤ eps + tol` and `x ∈ [0,1]^d`.
    pub fn within_budget(&self, eps: f64) -> bool {
        within_budget(&self.x, &self.x0, eps)
    }
}

pub fn within_budget(x: &Tensor, x0: &Tensor, eps: f64) -> bool {
    x.linf_distance(x0).is_ok_and(|d| d <= eps + BUDGET_TOLERANCE) && x.in_unit_box()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `x + alpha * sign(grad)` with `sign(0) = 0`.
pub fn sign_step(x: &Tensor, grad: &Tensor, alpha: f64) -> Result<Tensor> {
    x.zip_map(grad, |xi, gi| xi + alpha * sign(gi))
}

/// Clamp into the ε-ball around `x0`, then into `[0, 1]`.
pub fn project(x: &Tensor, x0: &Tensor, eps: f64) -> Result<Tensor> {
    x.zip_map(x0, |xi, ci| xi.clamp(ci - eps, ci + eps).clamp(0.0, 1.0))
}

/// One PGD iteration from the state's current point.
pub fn pgd_round_step(state: &AttackState, grad: &Tensor, config: &AttackConfig) -> Result<AttackState> {
    let stepped = sign_step(&state.x, grad, config.alpha)?;
    Ok(AttackState {
        x: project(&stepped, &state.x0, config.eps)?,
        x0: state.x0.clone(),
        true_label: state.true_label,
        steps_taken: state.steps_taken + 1,
    })
}

/// Uniform point in the ε-ball around `x0`, clipped to the box.
pub fn random_start_point(x0: &Tensor, eps: f64, rng: &mut SimRng) -> Tensor {
    if eps == 0.0 {
        return x0.clone();
    }
    let noisy = x0.map(|v| v + rng.random_range(-eps..=eps));
    project(&noisy, x0, eps).expect("same shape")
}

/// White-box access to one fixed model.
pub trait GradientOracle {
    fn loss_gradient(&self, x: &Tensor, label: usize) -> Result<Tensor>;
    fn predict(&self, x: &Tensor) -> Result<usize>;
}

impl GradientOracle for Model {
    fn loss_gradient(&self, x: &Tensor, label: usize) -> Result<Tensor> {
        self.input_gradient(x, label)
    }

    fn predict(&self, x: &Tensor) -> Result<usize> {
        Model::predict(self, x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgdOutcome {
    pub x_adv: Tensor,
    pub success: bool,
    /// Steps taken before the first misclassified iterate (or `max_steps`).
    pub steps_used: usize,
}

/// Multi-step PGD against a fixed model, stopping at the first iterate the
/// model misclassifies.
pub fn pgd_full(
    oracle: &impl GradientOracle,
    x0: &Tensor,
    true_label: usize,
    config: &AttackConfig,
    rng: Option<&mut SimRng>,
) -> Result<PgdOutcome> {
    config.validate()?;
    let mut state = AttackState::new(x0.clone(), true_label);
    if config.random_start {
        let rng = rng.ok_or_else(|| Error::Argument("random_start needs an rng".into()))?;
        state.x = random_start_point(x0, config.eps, rng);
    }
    loop {
        if oracle.predict(&state.x)? != true_label {
            return Ok(PgdOutcome {
                steps_used: state.steps_taken,
                x_adv: state.x,
                success: true,
            });
        }
        if state.steps_taken == config.max_steps {
            return Ok(PgdOutcome {
                steps_used: state.steps_taken,
                x_adv: state.x,
                success: false,
            });
        }
        let grad = oracle.loss_gradient(&state.x, true_label)?;
        state = pgd_round_step(&state, &grad, config)?;
    }
}

/// Runs exactly `max_steps` PGD iterations without early stopping. Used to
/// build adversarial training batches.
pub fn pgd_perturb(
    oracle: &impl GradientOracle,
    x0: &Tensor,
    true_label: usize,
    config: &AttackConfig,
    rng: Option<&mut SimRng>,
) -> Result<Tensor> {
    let mut state = AttackState::new(x0.clone(), true_label);
    if config.random_start {
        let rng = rng.ok_or_else(|| Error::Argument("random_start needs an rng".into()))?;
        state.x = random_start_point(x0, config.eps, rng);
    }
    if config.eps == 0.0 {
        return Ok(state.x);
    }
    for _ in 0..config.max_steps {
        let grad = oracle.loss_gradient(&state.x, true_label)?;
        state = pgd_round_step(&state, &grad, config)?;
    }
    Ok(state.x)
}

/// Cross-entropy read off a probability vector.
pub fn loss_from_probs(probs: &Tensor, label: usize) -> Result<f64> {
    let p = *probs
        .data()
        .get(label)
        .ok_or_else(|| Error::Argument(format!("label {label} out of range")))?;
    Ok(-p.max(f64::MIN_POSITIVE).ln())
}

/// Antithetic Gaussian (NES) estimate of `∇_x L` from probability queries.
///
/// Issues exactly `2 * n_samples` oracle calls.
pub fn nes_gradient_estimate(
    mut prob_oracle: impl FnMut(&Tensor) -> Result<Tensor>,
    x: &Tensor,
    true_label: usize,
    sigma: f64,
    n_samples: usize,
    rng: &mut SimRng,
) -> Result<Tensor> {
    if !(sigma > 0.0) {
        return Err(Error::Argument(format!("sigma must be positive, got {sigma}")));
    }
    if n_samples == 0 {
        return Err(Error::Argument("n_samples must be at least 1".into()));
    }
    let d = x.len();
    let mut acc = vec![0.0; d];
    let mut u = vec![0.0; d];
    for _ in 0..n_samples {
        u.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let plus = Tensor::new(x.shape().to_vec(), x.data().iter().zip(&u).map(|(a, b)| a + sigma * b).collect())?;
        let minus = Tensor::new(x.shape().to_vec(), x.data().iter().zip(&u).map(|(a, b)| a - sigma * b).collect())?;
        let diff = loss_from_probs(&prob_oracle(&plus)?, true_label)? - loss_from_probs(&prob_oracle(&minus)?, true_label)?;
        for (a, &ui) in acc.iter_mut().zip(&u) {
            *a += diff * ui;
        }
    }
    let scale = 1.0 / (2.0 * sigma * n_samples as f64);
    Tensor::new(x.shape().to_vec(), acc.into_iter().map(|v| v * scale).collect())
}

/// `project(x_t + alpha * s)` with `s` uniform in `{-1, +1}^d`.
pub fn propose_random_sign(state: &AttackState, config: &AttackConfig, rng: &mut SimRng) -> Result<Tensor> {
    let stepped = state
        .x
        .map(|v| v + if rng.random::<bool>() { config.alpha } else { -config.alpha });
    project(&stepped, &state.x0, config.eps)
}

/// Label-only random search: keep the proposal only if it flips the label.
pub fn random_sign_step(
    mut label_oracle: impl FnMut(&Tensor) -> Result<usize>,
    state: &AttackState,
    config: &AttackConfig,
    rng: &mut SimRng,
) -> Result<AttackState> {
    let proposal = propose_random_sign(state, config, rng)?;
    let flipped = label_oracle(&proposal)? != state.true_label;
    Ok(AttackState {
        x: if flipped { proposal } else { state.x.clone() },
        x0: state.x0.clone(),
        true_label: state.true_label,
        steps_taken: state.steps_taken + 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackerKind {
    /// One PGD step per round on the returned loss gradient.
    PgdWhiteBox,
    /// One PGD step per round on an NES estimate built from probe queries.
    NesSoftBox { sigma: f64, n_samples: usize },
    /// Random sign proposals, kept only when the label flips.
    RandomSignHardBox,
}

impl AttackerKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackerKind::PgdWhiteBox => "pgd_whitebox",
            AttackerKind::NesSoftBox { .. } => "nes_softbox",
            AttackerKind::RandomSignHardBox => "random_sign_hardbox",
        }
    }

    /// Whether the threat model exposes what this attacker consumes.
    pub fn compatible_with(&self, threat: ThreatModel) -> bool {
        match self {
            AttackerKind::PgdWhiteBox => threat == ThreatModel::WhiteBox,
            AttackerKind::NesSoftBox { .. } => threat != ThreatModel::HardBlackBox,
            AttackerKind::RandomSignHardBox => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackerPolicy {
    pub kind: AttackerKind,
    pub attack: AttackConfig,
}

impl AttackerPolicy {
    pub fn pgd(attack: AttackConfig) -> Self {
        Self {
            kind: AttackerKind::PgdWhiteBox,
            attack,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.attack.validate()?;
        if let AttackerKind::NesSoftBox { sigma, n_samples } = self.kind {
            if !(sigma > 0.0) || n_samples == 0 {
                return Err(Error::Argument("NES needs sigma > 0 and n_samples >= 1".into()));
            }
        }
        Ok(())
    }

    /// A fresh agent for one episode.
    pub fn spawn(&self, x0: Tensor, true_label: usize, rng: &mut SimRng) -> Box<dyn Attacker> {
        let mut state = AttackState::new(x0, true_label);
        if self.attack.random_start {
            state.x = random_start_point(&state.x0, self.attack.eps, rng);
        }
        match self.kind {
            AttackerKind::PgdWhiteBox => Box::new(PgdAttacker {
                state,
                config: self.attack,
            }),
            AttackerKind::NesSoftBox { sigma, n_samples } => Box::new(NesAttacker {
                state,
                config: self.attack,
                sigma,
                n_samples,
            }),
            AttackerKind::RandomSignHardBox => Box::new(RandomSignAttacker {
                state,
                config: self.attack,
                pending: None,
            }),
        }
    }
}

/// Extra defender queries an attacker may issue inside one round.
pub type Probe<'a> = dyn FnMut(&Tensor) -> Result<AttackerView> + 'a;

/// An attacker agent for one episode. The engine sends [`Attacker::initial_query`]
/// in round 1 and, after each defender response, asks for the next query.
pub trait Attacker: Send {
    fn initial_query(&mut self) -> Tensor;

    fn next_query(&mut self, response: &AttackerView, probe: &mut Probe<'_>, rng: &mut SimRng) -> Result<Tensor>;

    fn state(&self) -> &AttackState;
}

struct PgdAttacker {
    state: AttackState,
    config: AttackConfig,
}

impl Attacker for PgdAttacker {
    fn initial_query(&mut self) -> Tensor {
        self.state.x.clone()
    }

    fn next_query(&mut self, response: &AttackerView, _probe: &mut Probe<'_>, _rng: &mut SimRng) -> Result<Tensor> {
        let grad = response
            .loss_gradient
            .as_ref()
            .ok_or_else(|| Error::Argument("PGD attacker needs the loss gradient".into()))?;
        self.state = pgd_round_step(&self.state, grad, &self.config)?;
        Ok(self.state.x.clone())
    }

    fn state(&self) -> &AttackState {
        &self.state
    }
}

struct NesAttacker {
    state: AttackState,
    config: AttackConfig,
    sigma: f64,
    n_samples: usize,
}

impl Attacker for NesAttacker {
    fn initial_query(&mut self) -> Tensor {
        self.state.x.clone()
    }

    fn next_query(&mut self, _response: &AttackerView, probe: &mut Probe<'_>, rng: &mut SimRng) -> Result<Tensor> {
        let oracle = |q: &Tensor| {
            probe(q)?
                .probs
                .ok_or_else(|| Error::Argument("NES attacker needs probabilities".into()))
        };
        let grad = nes_gradient_estimate(oracle, &self.state.x, self.state.true_label, self.sigma, self.n_samples, rng)?;
        self.state = pgd_round_step(&self.state, &grad, &self.config)?;
        Ok(self.state.x.clone())
    }

    fn state(&self) -> &AttackState {
        &self.state
    }
}

struct RandomSignAttacker {
    state: AttackState,
    config: AttackConfig,
    pending: Option<Tensor>,
}

impl Attacker for RandomSignAttacker {
    fn initial_query(&mut self) -> Tensor {
        self.state.x.clone()
    }

    fn next_query(&mut self, response: &AttackerView, _probe: &mut Probe<'_>, rng: &mut SimRng) -> Result<Tensor> {
        if let Some(p) = self.pending.take() {
            if response.label != self.state.true_label {
                self.state.x = p;
            }
            self.state.steps_taken += 1;
        }
        let proposal = propose_random_sign(&self.state, &self.config, rng)?;
        self.pending = Some(proposal.clone());
        Ok(proposal)
    }

    fn state(&self) -> &AttackState {
        &self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn sign_step_cases() {
        let a = 2.0 / 255.0;
        let out = sign_step(&t(&[0.5, 0.5]), &t(&[0.3, -0.2]), a).unwrap();
        assert_eq!(out.data(), &[0.5 + a, 0.5 - a]);
        assert_eq!(sign_step(&t(&[0.1, 0.7]), &t(&[0.0, 0.0]), a).unwrap().data(), &[0.1, 0.7]);
        let eps = 0.03;
        let out = sign_step(&t(&[0.1, 0.2]), &t(&[5.0, 1e-9]), eps).unwrap();
        assert_eq!(out.data(), &[0.1 + eps, 0.2 + eps]);
        assert!(sign_step(&t(&[0.1]), &t(&[0.1, 0.2]), a).is_err());
    }

    #[test]
    fn project_cases() {
        let eps = 8.0 / 255.0;
        let p = project(&t(&[0.6]), &t(&[0.5]), eps).unwrap();
        assert_eq!(p.data()[0], 0.5 + eps);
        assert!((p.data()[0] - 0.531373).abs() < 1e-6);
        assert_eq!(project(&t(&[0.51, 0.49]), &t(&[0.5, 0.5]), eps).unwrap().data(), &[0.51, 0.49]);
        assert_eq!(project(&t(&[-0.2]), &t(&[0.01]), 0.1).unwrap().data(), &[0.0]);
    }

    #[test]
    fn round_step_with_zero_gradient_only_counts() {
        let s = AttackState::new(t(&[0.3, 0.4]), 1);
        let cfg = AttackConfig::new(0.1, 0.025, 10);
        let next = pgd_round_step(&s, &t(&[0.0, 0.0]), &cfg).unwrap();
        assert_eq!(next.x, s.x);
        assert_eq!(next.steps_taken, 1);
    }

    #[test]
    fn constant_sign_field_reaches_ball_corner() {
        let cfg = AttackConfig::new(0.1, 0.03, 10);
        let g = t(&[1.0, -2.0, 0.5]);
        let mut s = AttackState::new(t(&[0.5, 0.5, 0.95]), 0);
        for _ in 0..(cfg.eps / cfg.alpha).ceil() as usize {
            s = pgd_round_step(&s, &g, &cfg).unwrap();
        }
        let target = project(&sign_step(&s.x0, &g, cfg.eps).unwrap(), &s.x0, cfg.eps).unwrap();
        assert_eq!(s.x, target);
        assert_eq!(s.x.data()[2], 1.0);
    }

    #[test]
    fn constant_loss_nes_is_exactly_zero() {
        let mut rng = rng_from_seed(3);
        let mut calls = 0;
        let g = nes_gradient_estimate(
            |_| {
                calls += 1;
                Ok(t(&[0.3, 0.7]))
            },
            &t(&[0.2, 0.4, 0.6]),
            0,
            0.01,
            25,
            &mut rng,
        )
        .unwrap();
        assert_eq!(calls, 50);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nes_rejects_bad_parameters() {
        let mut rng = rng_from_seed(0);
        assert!(nes_gradient_estimate(|_| Ok(t(&[1.0])), &t(&[0.0]), 0, 0.0, 1, &mut rng).is_err());
        assert!(nes_gradient_estimate(|_| Ok(t(&[1.0])), &t(&[0.0]), 0, 0.1, 0, &mut rng).is_err());
    }

    #[test]
    fn random_sign_never_flipping_oracle() {
        let cfg = AttackConfig::new(0.1, 0.05, 20);
        let mut rng = rng_from_seed(8);
        let mut s = AttackState::new(t(&[0.5, 0.5, 0.5]), 2);
        for _ in 0..cfg.max_steps {
            s = random_sign_step(|_| Ok(2), &s, &cfg, &mut rng).unwrap();
            assert_eq!(s.x, s.x0);
        }
        assert_eq!(s.steps_taken, 20);
    }

    #[test]
    fn random_sign_always_flipping_oracle_keeps_first() {
        let cfg = AttackConfig::new(0.1, 0.05, 20);
        let mut rng = rng_from_seed(8);
        let s = AttackState::new(t(&[0.5, 0.5, 0.5]), 2);
        let next = random_sign_step(|_| Ok(0), &s, &cfg, &mut rng).unwrap();
        assert_ne!(next.x, s.x0);
        assert!(next.within_budget(cfg.eps));
        assert_eq!(next.steps_taken, 1);
    }

    #[test]
    fn random_sign_is_seeded() {
        let cfg = AttackConfig::new(0.1, 0.05, 20);
        let run = || {
            let mut rng = rng_from_seed(77);
            let mut s = AttackState::new(t(&[0.5, 0.2, 0.9]), 1);
            let mut n = 0;
            for _ in 0..10 {
                s = random_sign_step(
                    |_| {
                        n += 1;
                        Ok(if n % 3 == 0 { 0 } else { 1 })
                    },
                    &s,
                    &cfg,
                    &mut rng,
                )
                .unwrap();
            }
            s
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_validation_and_warnings() {
        assert!(AttackConfig::new(-0.1, 0.1, 1).validate().is_err());
        assert!(AttackConfig::new(0.1, 0.0, 1).validate().is_err());
        assert!(AttackConfig::new(0.1, 0.1, 0).validate().is_err());
        assert!(AttackConfig::new(0.0, 0.1, 3).validate().is_ok());
        assert_eq!(AttackConfig::new(0.1, 0.3, 1).warnings().len(), 1);
        assert!(AttackConfig::new(0.1, 0.2, 1).warnings().is_empty());
    }

    #[test]
    fn attacker_compatibility() {
        let nes = AttackerKind::NesSoftBox {
            sigma: 0.01,
            n_samples: 4,
        };
        assert!(AttackerKind::PgdWhiteBox.compatible_with(ThreatModel::WhiteBox));
        assert!(!AttackerKind::PgdWhiteBox.compatible_with(ThreatModel::SoftBlackBox));
        assert!(nes.compatible_with(ThreatModel::SoftBlackBox));
        assert!(!nes.compatible_with(ThreatModel::HardBlackBox));
        assert!(AttackerKind::RandomSignHardBox.compatible_with(ThreatModel::HardBlackBox));
    }
}

//! The turn-based wargame.
//!
//! Each round the attacker submits one query and the defender answers it
//! from one pool model. Round 1 always carries the attacker's starting point
//! (the clean input unless random start is on), since a gradient-following
//! attacker has nothing to step on before its first response. Rounds-to-win
//! therefore counts queries: a PGD attacker that needs `k` steps wins in
//! round `k + 1`.
//!
//! Episode `i` of an experiment runs on the stream
//! `child_seed(child_seed(master_seed, TRIALS), i)`, split further into a
//! defender stream (child 0) and an attacker stream (child 1). Results are
//! therefore independent of execution order and thread count.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::analysis::{mean_ci95, StatSummary};
use crate::attacks::{project, within_budget, AttackerPolicy};
use crate::data::Dataset;
use crate::defense::{
    classifies_correctly_all, misclassified_by_all, respond, DefenderPolicy, DefensePool, ThreatModel,
};
use crate::error::{Error, Result};
use crate::rng::{child_rng, child_seed, stream, SimRng};
use crate::tensor::Tensor;

pub const DEFAULT_MAX_ROUNDS: usize = 20;
pub const DEFAULT_NUM_TRIALS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WinCondition {
    /// The model that answered the query mispredicts it.
    ResponderMisclassifies,
    /// Every pool model mispredicts the query.
    AllModelsMisclassify,
}

impl WinCondition {
    pub fn name(&self) -> &'static str {
        match self {
            WinCondition::ResponderMisclassifies => "responder_misclassifies",
            WinCondition::AllModelsMisclassify => "all_models_misclassify",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub threat_model: ThreatModel,
    pub max_rounds: usize,
    pub num_trials: usize,
    pub attacker: AttackerPolicy,
    pub defender: DefenderPolicy,
    pub win_condition: WinCondition,
    pub master_seed: u64,
    /// Abort the episode on an out-of-budget query instead of projecting it.
    pub strict_budget: bool,
}

impl ScenarioConfig {
    pub fn white_box(attacker: AttackerPolicy, master_seed: u64) -> Self {
        Self {
            threat_model: ThreatModel::WhiteBox,
            max_rounds: DEFAULT_MAX_ROUNDS,
            num_trials: DEFAULT_NUM_TRIALS,
            attacker,
            defender: DefenderPolicy::UniformRandom,
            win_condition: WinCondition::ResponderMisclassifies,
            master_seed,
            strict_budget: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 || self.num_trials == 0 {
            return Err(Error::Scenario("max_rounds and num_trials must be at least 1".into()));
        }
        self.attacker.validate()?;
        if !self.attacker.kind.compatible_with(self.threat_model) {
            return Err(Error::Scenario(format!(
                "attacker {} cannot operate under the {} threat model",
                self.attacker.kind.name(),
                self.threat_model.name()
            )));
        }
        Ok(())
    }

    pub fn eps(&self) -> f64 {
        self.attacker.attack.eps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Winner {
    Attacker,
    Defender,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub query: Tensor,
    pub responder_index: usize,
    /// `‖query − x0‖∞` after any projection by the engine.
    pub query_linf: f64,
    pub response_label: usize,
    /// The responding model mispredicted the query.
    pub misclassified: bool,
    /// The engine had to project an out-of-budget query.
    pub projected: bool,
    /// Extra probe queries the attacker issued to prepare its next move.
    pub probe_queries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub winner: Winner,
    pub rounds_used: usize,
    pub final_x: Tensor,
    pub x0: Tensor,
    pub true_label: usize,
    pub rounds: Vec<RoundRecord>,
}

impl EpisodeResult {
    /// Attacker reward: minus the rounds it needed (minus the cap on a loss).
    pub fn attacker_reward(&self) -> f64 {
        -(self.rounds_used as f64)
    }

    /// Defender reward: rounds survived.
    pub fn defender_reward(&self) -> f64 {
        self.rounds_used as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    /// Rounds-to-win over attacker wins; `None` when the attacker never won.
    pub rounds: Option<StatSummary>,
    pub attacker_wins: usize,
    /// Episodes the defender survived to the round cap.
    pub timeouts: usize,
    pub attacker_win_rate: f64,
    pub adversarial_accuracy: f64,
    pub episodes: Vec<EpisodeResult>,
}

impl ExperimentReport {
    pub fn mean_rounds(&self) -> Option<f64> {
        self.rounds.as_ref().map(|s| s.mean)
    }

    pub fn ci95_half_width(&self) -> Option<f64> {
        self.rounds.as_ref().map(|s| s.ci95_half_width)
    }

    pub fn from_episodes(episodes: Vec<EpisodeResult>) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::Argument("no episodes to aggregate".into()));
        }
        let win_rounds: Vec<f64> = episodes
            .iter()
            .filter(|e| e.winner == Winner::Attacker)
            .map(|e| e.rounds_used as f64)
            .collect();
        let attacker_wins = win_rounds.len();
        let rounds = if win_rounds.is_empty() {
            None
        } else {
            Some(mean_ci95(&win_rounds)?)
        };
        let adversarial_accuracy = crate::analysis::adversarial_accuracy(&episodes)?;
        Ok(Self {
            rounds,
            attacker_wins,
            timeouts: episodes.len() - attacker_wins,
            attacker_win_rate: 1.0 - adversarial_accuracy,
            adversarial_accuracy,
            episodes,
        })
    }
}

/// Clean samples every pool model classifies correctly, drawn uniformly
/// without replacement.
pub fn select_eval_samples(
    dataset: &Dataset,
    pool: &DefensePool,
    num_trials: usize,
    rng: &mut SimRng,
) -> Result<Vec<(Tensor, usize)>> {
    let eligible = eligible_indices(dataset, pool)?;
    if eligible.len() < num_trials {
        return Err(Error::Scenario(format!(
            "{num_trials} trials requested but only {} samples are classified correctly by every pool model",
            eligible.len()
        )));
    }
    let mut eligible = eligible;
    let (chosen, _) = eligible.partial_shuffle(rng, num_trials);
    Ok(chosen
        .iter()
        .map(|&i| {
            let (x, y) = dataset.get(i);
            (x.clone(), y)
        })
        .collect())
}

pub fn eligible_indices(dataset: &Dataset, pool: &DefensePool) -> Result<Vec<usize>> {
    if dataset.dim() != pool.input_dim() {
        return Err(Error::Scenario(format!(
            "dataset has {} features, pool expects {}",
            dataset.dim(),
            pool.input_dim()
        )));
    }
    let flags = dataset
        .inputs()
        .par_iter()
        .zip(dataset.labels())
        .map(|(x, &y)| classifies_correctly_all(pool, x, y))
        .collect::<Result<Vec<bool>>>()?;
    Ok(flags
        .into_iter()
        .enumerate()
        .filter_map(|(i, ok)| ok.then_some(i))
        .collect())
}

/// Plays one episode on `sample`. `episode_seed` feeds both agents.
pub fn run_episode(
    attacker_policy: &AttackerPolicy,
    pool: &DefensePool,
    defender_policy: DefenderPolicy,
    scenario: &ScenarioConfig,
    sample: (&Tensor, usize),
    episode_seed: u64,
) -> Result<EpisodeResult> {
    pool.check_policy(defender_policy)?;
    let (x0, label) = sample;
    let eps = attacker_policy.attack.eps;
    let mut defender_rng = child_rng(episode_seed, 0);
    let mut attacker_rng = child_rng(episode_seed, 1);
    let mut attacker = attacker_policy.spawn(x0.clone(), label, &mut attacker_rng);
    let mut query = attacker.initial_query();
    let mut rounds = Vec::with_capacity(scenario.max_rounds);
    let mut probe_queries = 0usize;

    for round in 1..=scenario.max_rounds {
        let mut projected = false;
        if !within_budget(&query, x0, eps) {
            if query.len() != x0.len() || scenario.strict_budget {
                return Err(Error::Protocol {
                    round,
                    message: format!(
                        "attacker query outside the eps = {eps} ball or the unit box"
                    ),
                });
            }
            query = project(&query, x0, eps)?;
            projected = true;
        }
        let response = respond(pool, defender_policy, scenario.threat_model, &query, label, &mut defender_rng)?;
        let misclassified = response.label != label;
        let win = match scenario.win_condition {
            WinCondition::ResponderMisclassifies => misclassified,
            WinCondition::AllModelsMisclassify => misclassified_by_all(pool, &query, label)?,
        };
        rounds.push(RoundRecord {
            round,
            query_linf: query.linf_distance(x0)?,
            query: query.clone(),
            responder_index: response.responder_index,
            response_label: response.label,
            misclassified,
            projected,
            probe_queries,
        });
        if win {
            return Ok(EpisodeResult {
                winner: Winner::Attacker,
                rounds_used: round,
                final_x: query,
                x0: x0.clone(),
                true_label: label,
                rounds,
            });
        }
        if round == scenario.max_rounds {
            break;
        }
        probe_queries = 0;
        let mut probe = |q: &Tensor| {
            probe_queries += 1;
            let clipped = q.map(|v| v.clamp(0.0, 1.0));
            respond(pool, defender_policy, scenario.threat_model, &clipped, label, &mut defender_rng).map(|r| r.view())
        };
        query = attacker.next_query(&response.view(), &mut probe, &mut attacker_rng)?;
    }
    Ok(EpisodeResult {
        winner: Winner::Defender,
        rounds_used: scenario.max_rounds,
        final_x: query,
        x0: x0.clone(),
        true_label: label,
        rounds,
    })
}

pub fn trial_seed(master_seed: u64, trial: usize) -> u64 {
    child_seed(child_seed(master_seed, stream::TRIALS), trial as u64)
}

/// Evaluation samples for an experiment, drawn from the master seed.
pub fn experiment_samples(scenario: &ScenarioConfig, pool: &DefensePool, dataset: &Dataset) -> Result<Vec<(Tensor, usize)>> {
    let mut rng = child_rng(scenario.master_seed, stream::SAMPLES);
    select_eval_samples(dataset, pool, scenario.num_trials, &mut rng)
}

/// Runs trial `trial` on its preselected sample.
pub fn run_trial(
    scenario: &ScenarioConfig,
    pool: &DefensePool,
    samples: &[(Tensor, usize)],
    trial: usize,
) -> Result<EpisodeResult> {
    let (x0, y) = &samples[trial];
    run_episode(
        &scenario.attacker,
        pool,
        scenario.defender,
        scenario,
        (x0, *y),
        trial_seed(scenario.master_seed, trial),
    )
}

/// `num_trials` independent episodes, possibly in parallel, aggregated in
/// trial order.
pub fn run_experiment(scenario: &ScenarioConfig, pool: &DefensePool, dataset: &Dataset) -> Result<ExperimentReport> {
    scenario.validate()?;
    pool.check_policy(scenario.defender)?;
    let samples = experiment_samples(scenario, pool, dataset)?;
    let episodes = (0..scenario.num_trials)
        .into_par_iter()
        .map(|t| run_trial(scenario, pool, &samples, t))
        .collect::<Result<Vec<_>>>()?;
    ExperimentReport::from_episodes(episodes)
}

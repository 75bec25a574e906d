//! Summary statistics and gradient-similarity instrumentation.

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::defense::{DefenderPolicy, DefensePool};
use crate::error::{Error, Result};
use crate::game::{eligible_indices, run_episode, trial_seed, EpisodeResult, ScenarioConfig, Winner};
use crate::rng::{child_rng, stream};
use crate::tensor::Tensor;

/// Normal-approximation 95% quantile.
pub const Z_95: f64 = 1.96;

/// Norms below this make a cosine undefined.
pub const ZERO_NORM: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatSummary {
    pub n: usize,
    pub mean: f64,
    /// Sample (n − 1) standard deviation; 0 when n = 1.
    pub sample_std: f64,
    pub ci95_half_width: f64,
}

pub fn mean_ci95(values: &[f64]) -> Result<StatSummary> {
    if values.is_empty() {
        return Err(Error::Argument("mean_ci95 of an empty list".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(StatSummary {
            n,
            mean,
            sample_std: 0.0,
            ci95_half_width: 0.0,
        });
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sample_std = (ss / (n - 1) as f64).sqrt();
    Ok(StatSummary {
        n,
        mean,
        sample_std,
        ci95_half_width: Z_95 * sample_std / (n as f64).sqrt(),
    })
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]`. Errors instead of returning 0
/// when either side is (numerically) zero.
pub fn cosine_similarity(a: &Tensor, b: &Tensor) -> Result<f64> {
    let dot = a.dot(b)?;
    let (na, nb) = (a.norm2(), b.norm2());
    if na < ZERO_NORM || nb < ZERO_NORM {
        return Err(Error::UndefinedSimilarity);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Fraction of episodes the defender survived.
pub fn adversarial_accuracy(results: &[EpisodeResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Argument("adversarial_accuracy of no episodes".into()));
    }
    let survived = results.iter().filter(|r| r.winner == Winner::Defender).count();
    Ok(survived as f64 / results.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityRecord {
    pub pair: (usize, usize),
    /// `None` where either gradient vanished.
    pub per_round_cosines: Vec<Option<f64>>,
    /// Mean of the defined per-round cosines.
    pub round_avg: Option<f64>,
    pub undefined_rounds: usize,
    pub final_perturbation_cosine: Option<f64>,
}

/// Loss-gradient cosine between the two pair models at every round's query,
/// whichever model actually answered.
pub fn instrument_episode_gradients(
    pool: &DefensePool,
    pair: (usize, usize),
    episode: &EpisodeResult,
) -> Result<SimilarityRecord> {
    let (a, b) = pair;
    if a >= pool.len() || b >= pool.len() {
        return Err(Error::Argument(format!(
            "pair ({a}, {b}) out of range for a pool of {}",
            pool.len()
        )));
    }
    let mut per_round = Vec::with_capacity(episode.rounds.len());
    for r in &episode.rounds {
        let ga = pool.model(a).input_gradient(&r.query, episode.true_label)?;
        let gb = pool.model(b).input_gradient(&r.query, episode.true_label)?;
        per_round.push(match cosine_similarity(&ga, &gb) {
            Ok(c) => Some(c),
            Err(Error::UndefinedSimilarity) => None,
            Err(e) => return Err(e),
        });
    }
    let defined: Vec<f64> = per_round.iter().flatten().copied().collect();
    let round_avg = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(SimilarityRecord {
        pair,
        undefined_rounds: per_round.len() - defined.len(),
        per_round_cosines: per_round,
        round_avg,
        final_perturbation_cosine: None,
    })
}

/// Cosine between the total perturbations of two episodes on the same input.
pub fn final_perturbation_similarity(a: &EpisodeResult, b: &EpisodeResult) -> Result<f64> {
    if a.x0 != b.x0 || a.true_label != b.true_label {
        return Err(Error::Argument("episodes were played on different samples".into()));
    }
    cosine_similarity(&a.final_x.sub(&a.x0)?, &b.final_x.sub(&b.x0)?)
}

/// Summary row: a model pair and one episode outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityRow {
    pub pair: (usize, usize),
    pub outcome: Winner,
    pub episodes: usize,
    /// Mean over episodes of each episode's round average.
    pub round_avg: Option<f64>,
    pub undefined_rounds: usize,
    /// Cosine between two randomly chosen episodes with this outcome.
    pub final_perturbation_cosine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityStudy {
    pub sample_index: usize,
    pub records: Vec<SimilarityRecord>,
    pub episodes: Vec<EpisodeResult>,
    pub rows: Vec<SimilarityRow>,
}

/// Plays `scenario.num_trials` episodes against `pool` on one randomly chosen
/// eligible sample, instrumenting `pair` every round, then summarizes per
/// outcome.
pub fn similarity_study(
    pool: &DefensePool,
    pair: (usize, usize),
    scenario: &ScenarioConfig,
    dataset: &crate::data::Dataset,
) -> Result<SimilarityStudy> {
    scenario.validate()?;
    let mut rng = child_rng(scenario.master_seed, stream::SIMILARITY);
    let eligible = eligible_indices(dataset, pool)?;
    let &sample_index = eligible
        .choose(&mut rng)
        .ok_or_else(|| Error::Scenario("no sample is classified correctly by every pool model".into()))?;
    let (x0, y) = dataset.get(sample_index);
    let episodes = (0..scenario.num_trials)
        .into_par_iter()
        .map(|t| {
            run_episode(
                &scenario.attacker,
                pool,
                scenario.defender,
                scenario,
                (x0, y),
                trial_seed(scenario.master_seed, t),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let records = episodes
        .iter()
        .map(|e| instrument_episode_gradients(pool, pair, e))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for outcome in [Winner::Attacker, Winner::Defender] {
        let idx: Vec<usize> = (0..episodes.len()).filter(|&i| episodes[i].winner == outcome).collect();
        if idx.is_empty() {
            continue;
        }
        let avgs: Vec<f64> = idx.iter().filter_map(|&i| records[i].round_avg).collect();
        let round_avg = (!avgs.is_empty()).then(|| avgs.iter().sum::<f64>() / avgs.len() as f64);
        let final_perturbation_cosine = if idx.len() >= 2 {
            let picked: Vec<usize> = idx.choose_multiple(&mut rng, 2).copied().collect();
            match final_perturbation_similarity(&episodes[picked[0]], &episodes[picked[1]]) {
                Ok(c) => Some(c),
                Err(Error::UndefinedSimilarity) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        rows.push(SimilarityRow {
            pair,
            outcome,
            episodes: idx.len(),
            round_avg,
            undefined_rounds: idx.iter().map(|&i| records[i].undefined_rounds).sum(),
            final_perturbation_cosine,
        });
    }
    Ok(SimilarityStudy {
        sample_index,
        records,
        episodes,
        rows,
    })
}

/// `|cos|` between independent standard Gaussian vectors in `dim`
/// dimensions, over `pairs` sampled pairs. Its mean is close to
/// `sqrt(2 / (π·dim))`.
pub fn gaussian_cosine_baseline(dim: usize, pairs: usize, seed: u64) -> Result<StatSummary> {
    if dim == 0 || pairs == 0 {
        return Err(Error::Argument("baseline needs dim >= 1 and pairs >= 1".into()));
    }
    let mut rng = crate::rng::rng_from_seed(seed);
    let draw = |rng: &mut crate::rng::SimRng| {
        Tensor::from_vec((0..dim).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect())
    };
    let mut values = Vec::with_capacity(pairs);
    while values.len() < pairs {
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        match cosine_similarity(&a, &b) {
            Ok(c) => values.push(c.abs()),
            Err(Error::UndefinedSimilarity) => continue,
            Err(e) => return Err(e),
        }
    }
    mean_ci95(&values)
}

/// Two-model uniform pool used by the similarity protocol.
pub fn pair_pool(pool: &DefensePool, pair: (usize, usize)) -> Result<(DefensePool, DefenderPolicy)> {
    let models = vec![pool.models()[pair.0].clone(), pool.models()[pair.1].clone()];
    Ok((DefensePool::new(models)?, DefenderPolicy::UniformRandom))
}

//! Closed-form checks of PGD and of the game loop on binary linear-softmax
//! models, where the loss gradient has the constant sign `sign(w1 - w0)`.
//!
//! With label 0 and margin `m = z0 - z1 > 0`, each step moves every
//! coordinate by `alpha` toward the ball corner, so after `t` steps the
//! margin is `m - min(t*alpha, eps)*‖w1 - w0‖₁`. Attack succeeds iff
//! `m < eps*‖w1 - w0‖₁`, after `⌈(m/‖w1 - w0‖₁)/alpha⌉` steps.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use wargame_core::attacks::{pgd_full, AttackConfig, AttackerPolicy};
use wargame_core::defense::{DefenderPolicy, DefensePool};
use wargame_core::game::{run_episode, ScenarioConfig, Winner};
use wargame_core::network::Model;
use wargame_core::rng::{rng_from_seed, SimRng};
use wargame_core::Tensor;

struct Instance {
    model: Model,
    x0: Tensor,
    cfg: AttackConfig,
    /// `(m / ‖d‖₁) / alpha`.
    needed_steps: f64,
    l1: f64,
    margin: f64,
}

fn instance(rng: &mut SimRng, i: usize) -> Instance {
    let dim = rng.random_range(1..=12);
    let eps = rng.random_range(0.01..0.2);
    let alpha = eps / rng.random_range(1..=8) as f64 * rng.random_range(0.8..1.2);
    let w0: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let w1: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    // Keep the ε-ball inside the unit box so clamping never interferes.
    let x0: Vec<f64> = (0..dim).map(|_| rng.random_range(0.25..0.75)).collect();
    let l1: f64 = w0.iter().zip(&w1).map(|(a, b)| (b - a).abs()).sum();
    let target_margin = rng.random_range(0.0..2.0) * eps * l1;
    let lin: f64 = w0.iter().zip(&w1).zip(&x0).map(|((a, b), x)| (a - b) * x).sum();
    let model = Model::linear(format!("lin{i}"), &[w0, w1], &[target_margin - lin, 0.0]).unwrap();
    let x0 = Tensor::from_vec(x0);
    let logits = model.logits(&x0).unwrap();
    let margin = logits.data()[0] - logits.data()[1];
    Instance {
        model,
        cfg: AttackConfig::new(eps, alpha, (eps / alpha).ceil() as usize + 2),
        needed_steps: margin / l1 / alpha,
        x0,
        l1,
        margin,
    }
}

fn instances(n: usize) -> Vec<Instance> {
    let mut rng = rng_from_seed(2024);
    (0..n)
        .map(|i| instance(&mut rng, i))
        .filter(|inst| inst.margin > 0.0)
        .collect()
}

#[test]
fn pgd_full_matches_closed_form_on_1000_instances() {
    let all = instances(1000);
    assert!(all.len() >= 990);
    let (mut successes, mut mismatches) = (0, 0);
    for inst in &all {
        let predicted = inst.margin < inst.cfg.eps * inst.l1;
        let out = pgd_full(&inst.model, &inst.x0, 0, &inst.cfg, None).unwrap();
        if out.success != predicted {
            mismatches += 1;
            continue;
        }
        if predicted {
            successes += 1;
            let steps = inst.needed_steps.ceil() as usize;
            assert_eq!(out.steps_used, steps, "steps for margin {}", inst.margin);
        }
    }
    assert_eq!(mismatches, 0);
    assert!(successes > 300 && successes < all.len() - 300, "{successes}");
}

#[test]
fn episode_rounds_follow_linear_trajectory() {
    for inst in instances(200) {
        let pool = DefensePool::new(vec![Arc::new(inst.model.clone())]).unwrap();
        let mut scenario = ScenarioConfig::white_box(AttackerPolicy::pgd(inst.cfg), 1);
        scenario.max_rounds = 40;
        let r = run_episode(&scenario.attacker, &pool, scenario.defender, &scenario, (&inst.x0, 0), 7).unwrap();
        if inst.margin < inst.cfg.eps * inst.l1 {
            assert_eq!(r.winner, Winner::Attacker);
            // Round 1 carries x0, so k steps win in round k + 1.
            assert_eq!(r.rounds_used, inst.needed_steps.ceil() as usize + 1);
        } else {
            assert_eq!((r.winner, r.rounds_used), (Winner::Defender, 40));
        }
        for rr in &r.rounds {
            assert!(rr.query_linf <= inst.cfg.eps + 1e-12 && rr.query.in_unit_box() && !rr.projected);
        }
    }
}

#[test]
fn linear_pool_final_perturbations_align_across_selection_seeds() {
    // Same sign pattern of w1 - w0, different magnitudes.
    let a = Model::linear("a", &[vec![1.0, -0.5, 0.2], vec![-1.0, 0.5, 0.9]], &[0.0, 0.0]).unwrap();
    let b = Model::linear("b", &[vec![0.4, -1.5, 0.0], vec![-0.2, 0.1, 2.0]], &[1.6, 0.0]).unwrap();
    let pool = DefensePool::new(vec![Arc::new(a), Arc::new(b)]).unwrap();
    let x0 = Tensor::from_vec(vec![0.5, 0.5, 0.5]);
    let scenario = ScenarioConfig::white_box(AttackerPolicy::pgd(AttackConfig::new(0.1, 0.02, 20)), 3);
    let mut finals = Vec::new();
    for seed in [11, 12, 13] {
        let r = run_episode(&scenario.attacker, &pool, DefenderPolicy::UniformRandom, &scenario, (&x0, 0), seed).unwrap();
        finals.push(r);
    }
    let responders: Vec<Vec<usize>> = finals
        .iter()
        .map(|r| r.rounds.iter().map(|rr| rr.responder_index).collect())
        .collect();
    assert!(responders.windows(2).any(|w| w[0] != w[1]), "selection seeds should differ");
    for pair in finals.windows(2) {
        let c = wargame_core::analysis::final_perturbation_similarity(&pair[0], &pair[1]).unwrap();
        assert!((c - 1.0).abs() < 1e-12, "{c}");
    }
}

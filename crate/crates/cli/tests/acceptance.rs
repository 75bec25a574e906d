//! Acceptance suite. Runs every criterion in order and prints one
//! `PASS`/`FAIL` line each; exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;
use wargame_cli::RunConfig;
use wargame_core::analysis::{gaussian_cosine_baseline, mean_ci95, similarity_study};
use wargame_core::attacks::{pgd_full, AttackConfig, AttackerKind, AttackerPolicy};
use wargame_core::data::{generate_blobs, split};
use wargame_core::defense::{respond, select_model, DefenderPolicy, DefensePool, ThreatModel};
use wargame_core::game::{
    experiment_samples, run_episode, run_experiment, run_trial, ExperimentReport, ScenarioConfig, Winner,
};
use wargame_core::network::{Model, ModelParams, ModelSpec};
use wargame_core::rng::rng_from_seed;
use wargame_core::zoo::{evaluate, init_params, train};
use wargame_core::{Dataset, Tensor};

/// Desk-scale setup shared by the experiment criteria and the CLI runs.
const DESK_CONFIG: &str = r#"
[dataset]
kind = "blobs"
num_classes = 10
dim = 64
samples_per_class = 100
center_spread = 0.7
noise_std = 0.03
seed = 1
train_fraction = 0.7
split_seed = 2

[[models]]
name = "nat"
hidden = [64]
training = { mode = "natural", learning_rate = 0.05, epochs = 100, batch_size = 32, seed = 12 }

[[models]]
name = "nat2"
hidden = [64]
training = { mode = "natural", learning_rate = 0.05, epochs = 100, batch_size = 32, seed = 14 }

[[models]]
name = "adv"
hidden = [64]
training = { mode = "adversarial", learning_rate = 0.05, epochs = 100, batch_size = 32, seed = 13, adv_eps = 0.08, adv_alpha = 0.02, adv_steps = 10 }

[scenario]
max_rounds = 20
num_trials = 100
master_seed = 5

[scenario.attack]
kind = "pgd_whitebox"
eps = 0.1
alpha = 0.025
steps = 10

[[pools]]
name = "N"
models = ["nat"]

[[pools]]
name = "N+A"
models = ["nat", "adv"]

[[pools]]
name = "A"
models = ["adv"]

[analysis]
pairs = [["nat", "nat"], ["nat", "nat2"], ["nat", "adv"]]
"#;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

struct Desk {
    config: RunConfig,
    test: Dataset,
    nat: Arc<Model>,
    nat2: Arc<Model>,
    adv: Arc<Model>,
    train_time: Duration,
}

impl Desk {
    fn build() -> Desk {
        let start = Instant::now();
        let config = RunConfig::parse(DESK_CONFIG, Path::new("desk.toml")).unwrap();
        let d = &config.dataset;
        let full = generate_blobs(
            d.num_classes.unwrap(),
            d.dim.unwrap(),
            d.samples_per_class.unwrap(),
            d.center_spread.unwrap(),
            d.noise_std.unwrap(),
            d.seed.unwrap(),
        )
        .unwrap();
        let (train_set, test) = split(&full, d.train_fraction, d.split_seed).unwrap();
        let model = |name: &str| {
            let mc = config.model(name).unwrap();
            let spec = mc.spec(train_set.dim(), train_set.num_classes());
            Arc::new(train(spec, &train_set, &mc.training.as_ref().unwrap().to_core()).unwrap().model)
        };
        let (nat, nat2, adv) = (model("nat"), model("nat2"), model("adv"));
        Desk {
            test,
            nat,
            nat2,
            adv,
            train_time: start.elapsed(),
            config,
        }
    }

    fn scenario(&self) -> ScenarioConfig {
        self.config.scenario_config()
    }

    fn pool(&self, models: &[&Arc<Model>]) -> DefensePool {
        DefensePool::new(models.iter().map(|m| Arc::clone(m)).collect()).unwrap()
    }
}

// --- criterion 1 -----------------------------------------------------------

fn random_net(seed: u64) -> (Model, Tensor, usize) {
    let mut rng = rng_from_seed(0xfd00 + seed);
    let dense = rng.random_range(2..=4);
    let input = rng.random_range(2..=32);
    let hidden: Vec<usize> = (0..dense - 1).map(|_| rng.random_range(2..=32)).collect();
    let classes = rng.random_range(2..=10);
    let spec = ModelSpec::mlp("fd", input, &hidden, classes);
    let mut params: ModelParams = init_params(&spec, seed).unwrap();
    for d in &mut params.dense {
        for b in d.bias.data_mut() {
            *b = 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let x = Tensor::from_vec((0..input).map(|_| rng.random::<f64>()).collect());
    (Model::new(spec, params).unwrap(), x, rng.random_range(0..classes))
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn criterion_1() -> Check {
    const H: f64 = 1e-6;
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (m, x, y) = random_net(seed);
        let gx = m.input_gradient(&x, y).map_err(|e| e.to_string())?;
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += H;
            xm.data_mut()[i] -= H;
            let n = (m.loss(&xp, y).unwrap() - m.loss(&xm, y).unwrap()) / (2.0 * H);
            worst = worst.max(rel_err(gx.data()[i], n));
        }
        let (gp, _) = m.param_gradients(std::slice::from_ref(&x), &[y]).unwrap();
        for l in 0..m.params().dense.len() {
            for bias in [false, true] {
                let len = if bias { m.params().dense[l].bias.len() } else { m.params().dense[l].weight.len() };
                for i in 0..len {
                    let loss_at = |delta: f64| {
                        let mut p = m.params().clone();
                        let t = if bias { &mut p.dense[l].bias } else { &mut p.dense[l].weight };
                        t.data_mut()[i] += delta;
                        Model::new(m.spec().clone(), p).unwrap().loss(&x, y).unwrap()
                    };
                    let n = (loss_at(H) - loss_at(-H)) / (2.0 * H);
                    let g = if bias { gp.dense[l].bias.data()[i] } else { gp.dense[l].weight.data()[i] };
                    worst = worst.max(rel_err(g, n));
                }
            }
        }
    }
    ensure!(worst < 1e-5, "max relative error {worst:e}");
    Ok(format!("20 nets, max relative error {worst:.2e}"))
}

// --- criterion 2 -----------------------------------------------------------

fn criterion_2() -> Check {
    let mut rng = rng_from_seed(0x11ea2);
    let (mut flag_mismatch, mut round_mismatch, mut wins, mut checked) = (0, 0, 0, 0);
    while checked < 1000 {
        let dim = rng.random_range(1..=12);
        let eps = rng.random_range(0.01..0.2);
        let alpha = eps / rng.random_range(1..=8) as f64 * rng.random_range(0.8..1.2);
        let w0: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let w1: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let x0: Vec<f64> = (0..dim).map(|_| rng.random_range(0.25..0.75)).collect();
        let l1: f64 = w0.iter().zip(&w1).map(|(a, b)| (b - a).abs()).sum();
        let lin: f64 = w0.iter().zip(&w1).zip(&x0).map(|((a, b), x)| (a - b) * x).sum();
        let target = rng.random_range(0.0..2.0) * eps * l1;
        let model = Model::linear("lin", &[w0, w1], &[target - lin, 0.0]).unwrap();
        let x0 = Tensor::from_vec(x0);
        let z = model.logits(&x0).unwrap();
        let margin = z.data()[0] - z.data()[1];
        if margin <= 0.0 {
            continue;
        }
        checked += 1;
        let cfg = AttackConfig::new(eps, alpha, (eps / alpha).ceil() as usize + 2);
        let predicted = margin < eps * l1;
        let out = pgd_full(&model, &x0, 0, &cfg, None).unwrap();
        if out.success != predicted {
            flag_mismatch += 1;
        }
        let pool = DefensePool::new(vec![Arc::new(model)]).unwrap();
        let mut s = ScenarioConfig::white_box(AttackerPolicy::pgd(cfg), 1);
        s.max_rounds = cfg.max_steps + 1;
        let ep = run_episode(&s.attacker, &pool, s.defender, &s, (&x0, 0), checked as u64).unwrap();
        if predicted {
            wins += 1;
            let steps = (margin / l1 / alpha).ceil() as usize;
            if out.steps_used != steps || ep.winner != Winner::Attacker || ep.rounds_used != steps + 1 {
                round_mismatch += 1;
            }
        } else if ep.winner != Winner::Defender {
            round_mismatch += 1;
        }
    }
    ensure!(flag_mismatch == 0, "{flag_mismatch} success-flag mismatches");
    ensure!(round_mismatch == 0, "{round_mismatch} rounds-to-win mismatches");
    Ok(format!("1000 instances ({wins} attackable), 0 mismatches"))
}

// --- criteria 3, 4, 5 --------------------------------------------------------

struct DeskRuns {
    n: ExperimentReport,
    na: ExperimentReport,
    a: ExperimentReport,
    elapsed: Duration,
}

fn desk_runs(desk: &Desk) -> DeskRuns {
    let start = Instant::now();
    let s = desk.scenario();
    let run = |models: &[&Arc<Model>]| run_experiment(&s, &desk.pool(models), &desk.test).unwrap();
    DeskRuns {
        n: run(&[&desk.nat]),
        na: run(&[&desk.nat, &desk.adv]),
        a: run(&[&desk.adv]),
        elapsed: start.elapsed(),
    }
}

fn criterion_3(desk: &Desk, runs: &DeskRuns) -> Check {
    let eps = desk.scenario().eps();
    let mut rounds = 0;
    let mut violations = 0;
    for r in [&runs.n, &runs.na, &runs.a] {
        ensure!(r.episodes.len() == 100, "expected 100 trials");
        for e in &r.episodes {
            for rr in &e.rounds {
                rounds += 1;
                let linf = rr.query.linf_distance(&e.x0).unwrap();
                if linf > eps + 1e-12 || !rr.query.in_unit_box() || rr.query_linf > eps + 1e-12 {
                    violations += 1;
                }
            }
        }
    }
    ensure!(violations == 0, "{violations} budget violations");
    Ok(format!("3 x 100 trials, {rounds} recorded queries, 0 violations"))
}

fn criterion_4(desk: &Desk, runs: &DeskRuns) -> Check {
    let summary = |r: &ExperimentReport| r.rounds.ok_or_else(|| "attacker never won".to_string());
    let (n, na, a) = (summary(&runs.n)?, summary(&runs.na)?, summary(&runs.a)?);
    let line = format!(
        "N {:.2}±{:.2}, N+A {:.2}±{:.2}, A {:.2}±{:.2}",
        n.mean, n.ci95_half_width, na.mean, na.ci95_half_width, a.mean, a.ci95_half_width
    );
    ensure!(n.mean < na.mean && na.mean < a.mean, "ordering violated: {line}");
    ensure!(n.mean + n.ci95_half_width < a.mean - a.ci95_half_width, "N and A CIs overlap: {line}");
    let total = desk.train_time + runs.elapsed;
    ensure!(total < Duration::from_secs(300), "took {total:?}");
    Ok(line)
}

fn criterion_5(desk: &Desk) -> Check {
    let attack = desk.config.attack_config();
    let nat = evaluate(&desk.nat, &desk.test, Some(&attack)).unwrap();
    let adv = evaluate(&desk.adv, &desk.test, Some(&attack)).unwrap();
    let (an, aa) = (nat.adversarial_accuracy.unwrap(), adv.adversarial_accuracy.unwrap());
    let gap = 100.0 * (aa - an);
    ensure!(gap >= 20.0, "gap {gap:.1} points (N {an:.3}, A {aa:.3})");
    Ok(format!(
        "eps {}: N {:.1}% vs A {:.1}% adversarial accuracy, gap {gap:.1} points (natural {:.1}% / {:.1}%)",
        attack.eps,
        100.0 * an,
        100.0 * aa,
        100.0 * nat.natural_accuracy,
        100.0 * adv.natural_accuracy
    ))
}

// --- criterion 6 -----------------------------------------------------------

fn criterion_6(desk: &Desk) -> Check {
    let start = Instant::now();
    let analysis = desk.config.analysis.clone().unwrap();
    let mut s = desk.scenario();
    s.max_rounds = analysis.max_rounds;
    s.num_trials = analysis.num_trials;
    let pair_avg = |a: &Arc<Model>, b: &Arc<Model>| -> Result<(f64, Vec<f64>), String> {
        let study = similarity_study(&desk.pool(&[a, b]), (0, 1), &s, &desk.test).map_err(|e| e.to_string())?;
        let avgs: Vec<f64> = study.records.iter().filter_map(|r| r.round_avg).collect();
        ensure!(avgs.len() == study.records.len(), "undefined round averages");
        Ok((avgs.iter().sum::<f64>() / avgs.len() as f64, avgs))
    };
    let (_, same) = pair_avg(&desk.nat, &desk.nat)?;
    let worst_same = same.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    ensure!(worst_same <= 1e-12, "same-model round_avg off by {worst_same:e}");
    let baseline = gaussian_cosine_baseline(desk.test.dim(), 10_000, 0xba5e).unwrap();
    let threshold = baseline.mean + 5.0 * baseline.sample_std;
    let (indep, _) = pair_avg(&desk.nat, &desk.nat2)?;
    ensure!(indep >= threshold, "nat/nat2 round_avg {indep:.3} below {threshold:.3}");
    let (mixed, _) = pair_avg(&desk.nat, &desk.adv)?;
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "same-model dev {worst_same:.1e}; nat/nat2 {indep:.3}, nat/adv {mixed:.3} vs baseline |cos| {:.3}±{:.3} (threshold {threshold:.3})",
        baseline.mean, baseline.sample_std
    ))
}

// --- criterion 7 -----------------------------------------------------------

fn criterion_7() -> Check {
    // (values, mean, sample std, half-width) from a 50-digit evaluation.
    let cases: [(&[f64], f64, f64, f64); 5] = [
        (&[2.0, 4.0, 6.0], 4.0, 2.0, 2.2632130552233329969),
        (
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0],
            5.5,
            3.0276503540974916654,
            1.8765571312024226956,
        ),
        (&[3.5, 7.25, 1.125, 9.0, 4.75], 5.125, 3.094854600784986797, 2.7127596649906161564),
        (&[0.1, 0.2, 0.3, 0.4], 0.25, 0.12909944487358056284, 0.12651745597610895158),
        (
            &[1e6 + 1.0, 1e6 + 2.0, 1e6 + 4.0],
            1000002.3333333333333,
            1.5275252316519466689,
            1.7285575232288658525,
        ),
    ];
    let mut worst: f64 = 0.0;
    for (v, mean, std, half) in cases {
        let s = mean_ci95(v).unwrap();
        for (got, want) in [(s.mean, mean), (s.sample_std, std), (s.ci95_half_width, half)] {
            worst = worst.max((got - want).abs());
        }
    }
    ensure!(worst <= 1e-9, "max deviation {worst:e}");
    let single = mean_ci95(&[5.0]).unwrap();
    ensure!(single.ci95_half_width == 0.0, "n = 1 half-width {}", single.ci95_half_width);
    Ok(format!(
        "5 vectors, max deviation {worst:.1e}; [2,4,6] half-width {:.9}",
        mean_ci95(&[2.0, 4.0, 6.0]).unwrap().ci95_half_width
    ))
}

// --- criterion 8 -----------------------------------------------------------

fn criterion_8(desk: &Desk) -> Check {
    let pool = desk.pool(&[&desk.nat, &desk.nat2, &desk.adv]);
    let mut rng = rng_from_seed(0x3d);
    let mut counts = [0usize; 3];
    for _ in 0..10_000 {
        counts[select_model(DefenderPolicy::UniformRandom, &pool, &mut rng)] += 1;
    }
    let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / 10_000.0).collect();
    let worst = freqs.iter().map(|f| (f - 1.0 / 3.0).abs()).fold(0.0, f64::max);
    ensure!(worst <= 0.02, "frequencies {freqs:?}");
    Ok(format!("frequencies {:.4} {:.4} {:.4}", freqs[0], freqs[1], freqs[2]))
}

// --- criterion 9 -----------------------------------------------------------

fn criterion_9(desk: &Desk) -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("desk.toml");
    std::fs::write(&config, DESK_CONFIG).unwrap();
    let exe = env!("CARGO_BIN_EXE_wargame");
    let mut outputs = Vec::new();
    // Same config and output directory; only the worker count changes.
    let out = dir.path().join("out");
    for (run, threads) in [(1, "1"), (2, "4")] {
        let status = Command::new(exe)
            .args(["wargame", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(["--threads", threads])
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(status.status.success(), "run {run} failed: {}", String::from_utf8_lossy(&status.stderr));
        let json = std::fs::read(out.join("wargame_report.json")).unwrap();
        let csv = std::fs::read(out.join("wargame_report.csv")).unwrap();
        outputs.push((json, csv));
    }
    ensure!(outputs[0].0 == outputs[1].0, "JSON reports differ");
    ensure!(outputs[0].1 == outputs[1].1, "CSV reports differ");
    ensure!(outputs[0].0.ends_with(b"\n"), "JSON not newline-terminated");

    let s = desk.scenario();
    let pool = desk.pool(&[&desk.nat, &desk.adv]);
    let report = run_experiment(&s, &pool, &desk.test).unwrap();
    let samples = experiment_samples(&s, &pool, &desk.test).unwrap();
    let mut order: Vec<usize> = (0..s.num_trials).collect();
    order.reverse();
    order.rotate_left(37);
    let mut changed = 0;
    for t in order {
        if run_trial(&s, &pool, &samples, t).unwrap() != report.episodes[t] {
            changed += 1;
        }
    }
    ensure!(changed == 0, "{changed} trials changed under permutation");
    Ok(format!(
        "byte-identical reports across --threads 1/4 ({} + {} bytes); 100 permuted trials unchanged",
        outputs[0].0.len(),
        outputs[0].1.len()
    ))
}

// --- criterion 10 ----------------------------------------------------------

fn criterion_10(desk: &Desk, runs: &DeskRuns) -> Check {
    let pool = desk.pool(&[&desk.nat, &desk.adv]);
    let mut rng = rng_from_seed(0x10);
    let mut responses = 0;
    for i in 0..500 {
        let x = Tensor::from_vec((0..desk.test.dim()).map(|_| rng.random::<f64>()).collect());
        let label = i % desk.test.num_classes();
        for threat in [ThreatModel::WhiteBox, ThreatModel::SoftBlackBox, ThreatModel::HardBlackBox] {
            let r = respond(&pool, DefenderPolicy::UniformRandom, threat, &x, label, &mut rng).unwrap();
            ensure!(r.loss_gradient.is_some() == (threat == ThreatModel::WhiteBox), "gradient gating under {threat:?}");
            ensure!(r.probs.is_some() == (threat != ThreatModel::HardBlackBox), "probability gating under {threat:?}");
            let m = pool.model(r.responder_index);
            ensure!(r.label == m.probabilities(&x).unwrap().argmax(), "untruthful label");
            if let Some(p) = &r.probs {
                ensure!(*p == m.probabilities(&x).unwrap(), "untruthful probabilities");
            }
            if let Some(g) = &r.loss_gradient {
                ensure!(*g == m.input_gradient(&x, label).unwrap(), "untruthful gradient");
            }
            responses += 1;
        }
    }

    let mut suite: Vec<(DefensePool, ExperimentReport)> = vec![
        (desk.pool(&[&desk.nat]), runs.n.clone()),
        (desk.pool(&[&desk.nat, &desk.adv]), runs.na.clone()),
        (desk.pool(&[&desk.adv]), runs.a.clone()),
    ];
    for (kind, threat) in [
        (AttackerKind::NesSoftBox { sigma: 0.001, n_samples: 20 }, ThreatModel::SoftBlackBox),
        (AttackerKind::RandomSignHardBox, ThreatModel::HardBlackBox),
    ] {
        let mut s = desk.scenario();
        s.threat_model = threat;
        s.attacker.kind = kind;
        s.num_trials = 30;
        suite.push((pool.clone(), run_experiment(&s, &pool, &desk.test).unwrap()));
    }
    let mut rounds = 0;
    for (p, report) in &suite {
        for e in &report.episodes {
            for r in &e.rounds {
                ensure!(
                    r.response_label == p.model(r.responder_index).predict(&r.query).unwrap(),
                    "untruthful response in round {}",
                    r.round
                );
                rounds += 1;
            }
        }
    }
    let mut s = desk.scenario();
    s.threat_model = ThreatModel::SoftBlackBox;
    ensure!(s.validate().is_err(), "white-box attacker accepted under soft black-box");
    Ok(format!("{responses} gated responses, {rounds} suite rounds truthful"))
}

// ---------------------------------------------------------------------------

fn run(id: u32, title: &str, limit: Option<Duration>, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let elapsed = start.elapsed();
    let result = match (result, limit) {
        (Ok(_), Some(l)) if elapsed > l => Err(format!("runtime {elapsed:.2?} exceeds {l:?}")),
        (r, _) => r,
    };
    let (tag, detail) = match &result {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {id:>2} {tag} {title} [{elapsed:.2?}]: {detail}");
    result.is_ok()
}

fn main() {
    println!("acceptance suite");
    let mut ok = true;
    ok &= run(1, "gradient correctness", Some(Duration::from_secs(10)), criterion_1);
    ok &= run(2, "linear-model attack oracle", Some(Duration::from_secs(10)), criterion_2);
    let desk = Desk::build();
    println!("desk setup: 3 models trained in {:.2?}", desk.train_time);
    let runs = desk_runs(&desk);
    ok &= run(3, "budget invariants", None, || criterion_3(&desk, &runs));
    ok &= run(4, "pool ordering N < N+A < A", None, || criterion_4(&desk, &runs));
    let five_limit = Duration::from_secs(300).saturating_sub(desk.train_time);
    ok &= run(5, "adversarial training gap", Some(five_limit), || criterion_5(&desk));
    ok &= run(6, "gradient similarity", Some(Duration::from_secs(60)), || criterion_6(&desk));
    ok &= run(7, "statistics", None, criterion_7);
    ok &= run(8, "MTD uniformity", None, || criterion_8(&desk));
    ok &= run(9, "determinism", None, || criterion_9(&desk));
    ok &= run(10, "threat-model gating and truthfulness", None, || criterion_10(&desk, &runs));
    if !ok {
        println!("acceptance: FAILED");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}

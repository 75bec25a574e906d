//! The three CLI verbs.
//!
//! Models are resolved in this order: the config's `load` path, then
//! `<out>/models/<name>.amdl` left by a previous `train` (wargame and
//! similarity only), then in-process training from the `training` table.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use wargame_core::analysis::similarity_study;
use wargame_core::data::{generate_blobs, load_idx_pair, split};
use wargame_core::defense::{DefenderPolicy, DefensePool};
use wargame_core::game::{run_experiment, Winner};
use wargame_core::zoo::{evaluate, load_model, save_model, train};
use wargame_core::{Dataset, Model, TrainMode};

use crate::config::{DatasetKind, FormatName, ModelConfig, PolicyName, RunConfig};
use crate::error::CliError;
use crate::report::*;
use crate::TOOL_VERSION;

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: PathBuf,
    /// Overrides `output.dir`.
    pub out: Option<PathBuf>,
    /// Forces `scenario.strict_budget = true`.
    pub strict_budget: bool,
}

struct Prepared {
    cfg: RunConfig,
    out_dir: PathBuf,
    train_set: Dataset,
    eval_set: Dataset,
}

fn prepare(opts: &Options) -> Result<Prepared, CliError> {
    let mut cfg = RunConfig::load(&opts.config)?;
    let out_dir = match &opts.out {
        Some(o) => {
            cfg.output.dir = o.clone();
            o.clone()
        }
        None => cfg.resolve_path(&cfg.output.dir),
    };
    if opts.strict_budget {
        cfg.scenario.strict_budget = true;
    }
    for w in cfg.attack_config().warnings() {
        eprintln!("warning: scenario.attack: {w}");
    }
    let full = load_dataset(&cfg)?;
    let (train_set, eval_set) =
        split(&full, cfg.dataset.train_fraction, cfg.dataset.split_seed).map_err(CliError::runtime("dataset split"))?;
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    Ok(Prepared {
        cfg,
        out_dir,
        train_set,
        eval_set,
    })
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let d = &cfg.dataset;
    let ctx = CliError::runtime("dataset");
    match d.kind {
        DatasetKind::Blobs => generate_blobs(
            d.num_classes.unwrap_or_default(),
            d.dim.unwrap_or_default(),
            d.samples_per_class.unwrap_or_default(),
            d.center_spread.unwrap_or(1.0),
            d.noise_std.unwrap_or_default(),
            d.seed.unwrap_or_default(),
        )
        .map_err(ctx),
        DatasetKind::Idx => {
            let images = cfg.resolve_path(d.images.as_deref().unwrap_or(Path::new("")));
            let labels = cfg.resolve_path(d.labels.as_deref().unwrap_or(Path::new("")));
            let data = load_idx_pair(&images, &labels).map_err(ctx)?;
            match d.limit {
                Some(n) => data.truncated(n).map_err(CliError::runtime("dataset limit")),
                None => Ok(data),
            }
        }
    }
}

fn model_file(out_dir: &Path, name: &str) -> PathBuf {
    out_dir.join("models").join(format!("{name}.amdl"))
}

enum Source {
    Loaded,
    Trained(Vec<f64>),
}

struct Resolved {
    model: Model,
    source: Source,
}

fn resolve_model(
    cfg: &RunConfig,
    mc: &ModelConfig,
    out_dir: &Path,
    data: &Dataset,
    use_cache: bool,
) -> Result<Resolved, CliError> {
    let ctx = || CliError::runtime(format!("model {}", mc.name));
    let cached = model_file(out_dir, &mc.name);
    let path = match &mc.load {
        Some(p) => Some(cfg.resolve_path(p)),
        None if use_cache && cached.is_file() => Some(cached),
        None => None,
    };
    let resolved = match path {
        Some(p) => Resolved {
            model: load_model(&p).map_err(ctx())?,
            source: Source::Loaded,
        },
        None => {
            let t = mc.training.as_ref().expect("checked at config load");
            let spec = mc.spec(data.dim(), data.num_classes());
            let out = train(spec, data, &t.to_core()).map_err(ctx())?;
            Resolved {
                model: out.model,
                source: Source::Trained(out.epoch_losses),
            }
        }
    };
    if resolved.model.input_dim() != data.dim() || resolved.model.num_classes() != data.num_classes() {
        return Err(CliError::Config(format!(
            "models.{}: model takes {} inputs / {} classes but the dataset has {} / {}",
            mc.name,
            resolved.model.input_dim(),
            resolved.model.num_classes(),
            data.dim(),
            data.num_classes()
        )));
    }
    Ok(resolved)
}

/// Resolves `names` (deduplicated) in parallel, keyed by config name.
fn resolve_many(
    p: &Prepared,
    names: impl IntoIterator<Item = String>,
    use_cache: bool,
) -> Result<BTreeMap<String, Resolved>, CliError> {
    let mut wanted: Vec<String> = names.into_iter().collect();
    wanted.sort();
    wanted.dedup();
    let resolved = wanted
        .par_iter()
        .map(|n| {
            let mc = p.cfg.model(n).expect("names checked at config load");
            resolve_model(&p.cfg, mc, &p.out_dir, &p.train_set, use_cache)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(wanted.into_iter().zip(resolved).collect())
}

fn emit(
    p: &Prepared,
    stem: &str,
    json: &impl serde::Serialize,
    columns: &[&str],
    rows: Vec<Vec<String>>,
) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    for f in &p.cfg.output.formats {
        let path = match f {
            FormatName::Json => p.out_dir.join(format!("{stem}.json")),
            FormatName::Csv => p.out_dir.join(format!("{stem}.csv")),
        };
        if written.contains(&path) {
            continue;
        }
        match f {
            FormatName::Json => write_json(&path, json)?,
            FormatName::Csv => write_csv(&path, columns, rows.clone())?,
        }
        written.push(path);
    }
    Ok(written)
}

fn header<'a>(cfg: &'a RunConfig, command: &'static str) -> Header<'a> {
    Header {
        tool: TOOL_VERSION,
        command,
        config: cfg,
    }
}

fn winner_name(w: Winner) -> &'static str {
    match w {
        Winner::Attacker => "attacker",
        Winner::Defender => "defender",
    }
}

/// Trains every model without a load path, saves it under
/// `<out>/models/`, and evaluates every model on the held-out split.
pub fn cmd_train(opts: &Options) -> Result<Vec<PathBuf>, CliError> {
    let p = prepare(opts)?;
    let models_dir = p.out_dir.join("models");
    std::fs::create_dir_all(&models_dir)?;
    let resolved = resolve_many(&p, p.cfg.models.iter().map(|m| m.name.clone()), false)?;
    let attack = p.cfg.attack_config();
    let mut rows = Vec::new();
    let mut written = Vec::new();
    for mc in &p.cfg.models {
        let r = &resolved[&mc.name];
        let file = match &r.source {
            Source::Trained(_) => {
                let path = model_file(&p.out_dir, &mc.name);
                save_model(&r.model, &path).map_err(CliError::runtime(format!("saving model {}", mc.name)))?;
                written.push(path.clone());
                Some(path)
            }
            Source::Loaded => None,
        };
        let report = evaluate(&r.model, &p.eval_set, Some(&attack))
            .map_err(CliError::runtime(format!("evaluating model {}", mc.name)))?;
        let mode = match mc.training.as_ref().map(|t| t.to_core().mode) {
            Some(TrainMode::Natural) => "natural",
            Some(TrainMode::Adversarial) => "adversarial",
            None => "unknown",
        };
        rows.push(ModelEvalRow {
            model: mc.name.clone(),
            mode: mode.into(),
            source: match r.source {
                Source::Trained(_) => "trained".into(),
                Source::Loaded => "loaded".into(),
            },
            file: file.map(|f| format!("models/{}", f.file_name().unwrap_or_default().to_string_lossy())),
            natural_accuracy: Real(report.natural_accuracy),
            adversarial_accuracy: report.adversarial_accuracy.map(Real),
            eval_eps: Real(attack.eps),
            eval_alpha: Real(attack.alpha),
            eval_steps: attack.max_steps,
            num_samples: report.num_samples,
            epoch_losses: match &r.source {
                Source::Trained(l) => l.iter().copied().map(Real).collect(),
                Source::Loaded => Vec::new(),
            },
        });
    }
    let csv_rows = rows
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                r.mode.clone(),
                r.source.clone(),
                r.natural_accuracy.csv(),
                opt_csv(r.adversarial_accuracy),
                r.eval_eps.csv(),
                r.eval_alpha.csv(),
                r.eval_steps.to_string(),
                r.num_samples.to_string(),
            ]
        })
        .collect();
    let doc = TrainReport {
        header: header(&p.cfg, "train"),
        models: rows,
    };
    written.extend(emit(&p, "train_report", &doc, &TRAIN_COLUMNS, csv_rows)?);
    Ok(written)
}

/// Runs one experiment per configured pool on the held-out split.
pub fn cmd_wargame(opts: &Options) -> Result<Vec<PathBuf>, CliError> {
    let p = prepare(opts)?;
    if p.cfg.pools.is_empty() {
        return Err(CliError::Config("pools: wargame needs at least one pool".into()));
    }
    let resolved = resolve_many(&p, p.cfg.pools.iter().flat_map(|pc| pc.models.clone()), true)?;
    let mut pools = Vec::new();
    let mut table = Vec::new();
    for pc in &p.cfg.pools {
        let ctx = || CliError::runtime(format!("pool {}", pc.name));
        let models = pc.models.iter().map(|n| Arc::new(resolved[n].model.clone())).collect();
        let pool = DefensePool::new(models).map_err(ctx())?;
        let mut scenario = p.cfg.scenario_config();
        scenario.defender = pc.policy();
        let report = run_experiment(&scenario, &pool, &p.eval_set).map_err(ctx())?;
        let episodes = report
            .episodes
            .iter()
            .enumerate()
            .map(|(t, e)| EpisodeRow {
                trial: t,
                true_label: e.true_label,
                winner: winner_name(e.winner),
                rounds_used: e.rounds_used,
                final_linf: Real(e.final_x.linf_distance(&e.x0).unwrap_or(f64::NAN)),
                responders: e.rounds.iter().map(|r| r.responder_index).collect(),
                projected_rounds: e.rounds.iter().filter(|r| r.projected).count(),
                probe_queries: e.rounds.iter().map(|r| r.probe_queries).sum(),
            })
            .collect();
        let policy = match pc.policy {
            PolicyName::UniformRandom => "uniform_random".to_string(),
            PolicyName::Static => format!("static:{}", pc.static_index),
        };
        table.push(RoundsRow {
            pool: pc.name.clone(),
            composition: pc.models.join("+"),
            mean_rounds: report.mean_rounds().map(Real),
            ci95: report.ci95_half_width().map(Real),
        });
        pools.push(PoolReport {
            pool: pc.name.clone(),
            models: pc.models.clone(),
            policy,
            mean_rounds: report.mean_rounds().map(Real),
            ci95_half_width: report.ci95_half_width().map(Real),
            sample_std: report.rounds.map(|s| Real(s.sample_std)),
            attacker_wins: report.attacker_wins,
            timeouts: report.timeouts,
            attacker_win_rate: Real(report.attacker_win_rate),
            adversarial_accuracy: Real(report.adversarial_accuracy),
            episodes,
        });
    }
    let csv_rows = pools
        .iter()
        .map(|r| {
            vec![
                r.pool.clone(),
                opt_csv(r.mean_rounds),
                opt_csv(r.ci95_half_width),
                r.attacker_win_rate.csv(),
                r.adversarial_accuracy.csv(),
                r.timeouts.to_string(),
            ]
        })
        .collect();
    let doc = WargameReport {
        header: header(&p.cfg, "wargame"),
        round_semantics: ROUND_SEMANTICS,
        mean_rounds_over: MEAN_ROUNDS_OVER,
        pools,
        table,
    };
    emit(&p, "wargame_report", &doc, &WARGAME_COLUMNS, csv_rows)
}

/// Per-round gradient similarity and final-perturbation similarity for
/// every configured pair, each played as a two-model uniform pool.
pub fn cmd_similarity(opts: &Options) -> Result<Vec<PathBuf>, CliError> {
    let p = prepare(opts)?;
    let analysis = p
        .cfg
        .analysis
        .clone()
        .ok_or_else(|| CliError::Config("analysis: similarity needs an [analysis] section with pairs".into()))?;
    if analysis.pairs.is_empty() {
        return Err(CliError::Config("analysis.pairs: no pairs listed".into()));
    }
    let resolved = resolve_many(&p, analysis.pairs.iter().flat_map(|(a, b)| [a.clone(), b.clone()]), true)?;
    let mut scenario = p.cfg.scenario_config();
    scenario.max_rounds = analysis.max_rounds;
    scenario.num_trials = analysis.num_trials;
    scenario.defender = DefenderPolicy::UniformRandom;

    let mut pairs = Vec::new();
    let mut table = Vec::new();
    for (a, b) in &analysis.pairs {
        let ctx = || CliError::runtime(format!("pair ({a}, {b})"));
        let pool = DefensePool::new(vec![
            Arc::new(resolved[a].model.clone()),
            Arc::new(resolved[b].model.clone()),
        ])
        .map_err(ctx())?;
        let study = similarity_study(&pool, (0, 1), &scenario, &p.eval_set).map_err(ctx())?;
        for row in &study.rows {
            table.push(SimilarityTableRow {
                model_a: a.clone(),
                model_b: b.clone(),
                outcome: winner_name(row.outcome),
                episodes: row.episodes,
                round_avg: row.round_avg.map(Real),
                final_image_cosine: row.final_perturbation_cosine.map(Real),
                undefined_rounds: row.undefined_rounds,
            });
        }
        pairs.push(PairReport {
            model_a: a.clone(),
            model_b: b.clone(),
            sample_index: study.sample_index,
            episodes: study
                .episodes
                .iter()
                .zip(&study.records)
                .enumerate()
                .map(|(t, (e, r))| SimilarityEpisodeRow {
                    trial: t,
                    winner: winner_name(e.winner),
                    rounds_used: e.rounds_used,
                    round_avg: r.round_avg.map(Real),
                    per_round_cosines: r.per_round_cosines.iter().map(|c| c.map(Real)).collect(),
                    undefined_rounds: r.undefined_rounds,
                })
                .collect(),
        });
    }
    let csv_rows = table
        .iter()
        .map(|r| {
            vec![
                r.model_a.clone(),
                r.model_b.clone(),
                r.outcome.to_string(),
                r.episodes.to_string(),
                opt_csv(r.round_avg),
                opt_csv(r.final_image_cosine),
                r.undefined_rounds.to_string(),
            ]
        })
        .collect();
    let doc = SimilarityReport {
        header: header(&p.cfg, "similarity"),
        pairs,
        table,
    };
    emit(&p, "similarity_report", &doc, &SIMILARITY_COLUMNS, csv_rows)
}

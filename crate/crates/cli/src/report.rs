//! Report documents and their canonical JSON/CSV encodings.
//!
//! Key order follows struct field order, reals carry 9 significant digits,
//! and every file ends with a newline. Reports hold no timestamps.
//!
//! CSV columns:
//!
//! - `train_report.csv`: `model,mode,source,natural_accuracy,adversarial_accuracy,eval_eps,eval_alpha,eval_steps,num_samples`
//! - `wargame_report.csv`: `pool,mean_rounds,ci95,attacker_win_rate,adversarial_accuracy,timeouts`
//! - `similarity_report.csv`: `model_a,model_b,outcome,episodes,round_avg,final_image_cosine,undefined_rounds`
//!
//! Undefined values (no attacker wins, undefined cosines) are empty CSV
//! cells and JSON `null`.

use std::path::Path;

use serde::{Serialize, Serializer};

use crate::config::RunConfig;
use crate::error::CliError;

/// A real rounded to 9 significant digits on output. Non-finite values
/// serialize as `null`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Real(pub f64);

pub fn round_sig9(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { 0.0 } else { v };
    }
    format!("{v:.8e}").parse().expect("formatted float parses")
}

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(round_sig9(self.0))
        } else {
            s.serialize_none()
        }
    }
}

impl Real {
    pub fn csv(&self) -> String {
        if self.0.is_finite() {
            round_sig9(self.0).to_string()
        } else {
            String::new()
        }
    }
}

pub fn opt_csv(v: Option<Real>) -> String {
    v.map(|r| r.csv()).unwrap_or_default()
}

#[derive(Debug, Serialize)]
pub struct Header<'a> {
    pub tool: &'static str,
    pub command: &'static str,
    pub config: &'a RunConfig,
}

#[derive(Debug, Serialize)]
pub struct ModelEvalRow {
    pub model: String,
    pub mode: String,
    /// `trained` or `loaded`.
    pub source: String,
    pub file: Option<String>,
    pub natural_accuracy: Real,
    pub adversarial_accuracy: Option<Real>,
    pub eval_eps: Real,
    pub eval_alpha: Real,
    pub eval_steps: usize,
    pub num_samples: usize,
    pub epoch_losses: Vec<Real>,
}

#[derive(Debug, Serialize)]
pub struct TrainReport<'a> {
    #[serde(flatten)]
    pub header: Header<'a>,
    pub models: Vec<ModelEvalRow>,
}

#[derive(Debug, Serialize)]
pub struct EpisodeRow {
    pub trial: usize,
    pub true_label: usize,
    pub winner: &'static str,
    pub rounds_used: usize,
    pub final_linf: Real,
    pub responders: Vec<usize>,
    pub projected_rounds: usize,
    pub probe_queries: usize,
}

#[derive(Debug, Serialize)]
pub struct PoolReport {
    pub pool: String,
    pub models: Vec<String>,
    pub policy: String,
    pub mean_rounds: Option<Real>,
    pub ci95_half_width: Option<Real>,
    pub sample_std: Option<Real>,
    pub attacker_wins: usize,
    pub timeouts: usize,
    pub attacker_win_rate: Real,
    pub adversarial_accuracy: Real,
    pub episodes: Vec<EpisodeRow>,
}

/// Summary row for one pool.
#[derive(Debug, Serialize)]
pub struct RoundsRow {
    pub pool: String,
    pub composition: String,
    pub mean_rounds: Option<Real>,
    pub ci95: Option<Real>,
}

#[derive(Debug, Serialize)]
pub struct WargameReport<'a> {
    #[serde(flatten)]
    pub header: Header<'a>,
    pub round_semantics: &'static str,
    pub mean_rounds_over: &'static str,
    pub pools: Vec<PoolReport>,
    pub table: Vec<RoundsRow>,
}

pub const ROUND_SEMANTICS: &str =
    "round 1 carries the attacker's starting point; a PGD attacker needing k steps wins in round k+1";
pub const MEAN_ROUNDS_OVER: &str = "attacker-win episodes only; timeouts are counted separately";

#[derive(Debug, Serialize)]
pub struct SimilarityEpisodeRow {
    pub trial: usize,
    pub winner: &'static str,
    pub rounds_used: usize,
    pub round_avg: Option<Real>,
    pub per_round_cosines: Vec<Option<Real>>,
    pub undefined_rounds: usize,
}

/// Summary row for one pair and outcome.
#[derive(Debug, Serialize)]
pub struct SimilarityTableRow {
    pub model_a: String,
    pub model_b: String,
    pub outcome: &'static str,
    pub episodes: usize,
    pub round_avg: Option<Real>,
    pub final_image_cosine: Option<Real>,
    pub undefined_rounds: usize,
}

#[derive(Debug, Serialize)]
pub struct PairReport {
    pub model_a: String,
    pub model_b: String,
    pub sample_index: usize,
    pub episodes: Vec<SimilarityEpisodeRow>,
}

#[derive(Debug, Serialize)]
pub struct SimilarityReport<'a> {
    #[serde(flatten)]
    pub header: Header<'a>,
    pub pairs: Vec<PairReport>,
    pub table: Vec<SimilarityTableRow>,
}

pub fn to_canonical_json(value: &impl Serialize) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    std::fs::write(path, to_canonical_json(value)?)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub const TRAIN_COLUMNS: [&str; 9] = [
    "model",
    "mode",
    "source",
    "natural_accuracy",
    "adversarial_accuracy",
    "eval_eps",
    "eval_alpha",
    "eval_steps",
    "num_samples",
];
pub const WARGAME_COLUMNS: [&str; 6] = [
    "pool",
    "mean_rounds",
    "ci95",
    "attacker_win_rate",
    "adversarial_accuracy",
    "timeouts",
];
pub const SIMILARITY_COLUMNS: [&str; 7] = [
    "model_a",
    "model_b",
    "outcome",
    "episodes",
    "round_avg",
    "final_image_cosine",
    "undefined_rounds",
];

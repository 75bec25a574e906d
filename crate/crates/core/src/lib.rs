//! Attacker-versus-defender wargame simulator for adversarial machine
//! learning.
//!
//! An episode pits an evasion attacker against a defender that answers each
//! query from a pool of small dense classifiers. The crate bundles everything
//! needed to play and score those episodes at desk scale:
//!
//! * [`tensor`] and [`network`]: `f64` tensors and dense/ReLU classifiers with
//!   exact input and parameter gradients.
//! * [`zoo`]: initialization, natural and PGD adversarial training,
//!   evaluation, and the binary model file.
//! * [`attacks`]: FGSM/PGD primitives, NES and label-only attacks, and the
//!   attacker agents.
//! * [`defense`]: model pools, moving-target selection, threat-model gating.
//! * [`game`]: episodes and multi-trial experiments.
//! * [`analysis`]: confidence intervals and gradient-similarity analysis.
//! * [`data`]: Gaussian blobs and IDX image files.

pub mod analysis;
pub mod attacks;
pub mod data;
pub mod defense;
pub mod error;
pub mod game;
pub mod network;
pub mod rng;
pub mod tensor;
pub mod zoo;

pub use analysis::{cosine_similarity, gaussian_cosine_baseline, mean_ci95, SimilarityRecord, StatSummary};
pub use attacks::{AttackConfig, AttackState, AttackerKind, AttackerPolicy};
pub use data::Dataset;
pub use defense::{AttackerView, DefenderPolicy, DefensePool, QueryResponse, ThreatModel};
pub use error::{Error, Result};
pub use game::{EpisodeResult, ExperimentReport, RoundRecord, ScenarioConfig, WinCondition, Winner};
pub use network::{LayerSpec, Model, ModelParams, ModelSpec};
pub use tensor::Tensor;
pub use zoo::{EvalReport, TrainMode, TrainingConfig};

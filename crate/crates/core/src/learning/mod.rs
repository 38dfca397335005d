//! Training and evaluation: curriculum training of concept embeddings from
//! question/answer pairs, evaluation with per-type and per-concept breakdowns,
//! few-shot concept addition, a monolithic baseline, and the experiment suites.

pub mod baseline;
mod eval;
mod fewshot;
mod optim;
mod report;
pub mod suite;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::concepts::{ConceptError, ScoringConfig};
use crate::executor::ExecError;
use crate::worldgen::io::IoError;
use crate::worldgen::{LanguageError, WorldError};

pub use eval::{answer_accuracy, concept_accuracy, evaluate, EvalReport, Tally};
pub use fewshot::{
    fewshot_examples, fewshot_learn_concept, probe_scenes, FewShotConfig, FewShotExample, FewShotReport,
};
pub use optim::Optimizer;
pub use report::{
    content_hash, read_metrics_csv, write_curve_csv, write_metrics_csv, MetricRow, RunManifest, CURVE_HEADER,
    METRICS_HEADER,
};
pub use train::{train, EpochRecord, StagedData, TrainOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs_per_stage: usize,
    /// Stage validation accuracy that moves the curriculum forward.
    pub advance_threshold: f64,
    /// Final-stage validation accuracy that ends training early.
    pub early_stop: Option<f64>,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub scoring: ScoringConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            batch_size: 32,
            max_epochs_per_stage: 50,
            advance_threshold: 0.9,
            early_stop: None,
            seed: 0,
            optimizer: OptimizerKind::default(),
            scoring: ScoringConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_epochs_per_stage == 0 {
            return bad("max_epochs_per_stage must be positive");
        }
        if !(self.advance_threshold > 0.0 && self.advance_threshold <= 1.0) {
            return bad("advance_threshold must lie in (0, 1]");
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return bad("adam needs beta1, beta2 in [0, 1) and eps > 0");
            }
        }
        if self.scoring.dim == 0 || self.scoring.tau <= 0.0 || self.scoring.tau_query <= 0.0 {
            return bad("scoring needs dim > 0 and positive temperatures");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite loss or gradient at stage {stage}, epoch {epoch}, batch {batch}, scene {scene}: {detail}")]
    NonFinite { stage: u8, epoch: usize, batch: usize, scene: u64, detail: String },
    #[error("`{0}` is already bound")]
    AlreadyBound(String),
    #[error("no examples to learn from")]
    NoExamples,
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Concept(#[from] ConceptError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Language(#[from] LanguageError),
    #[error(transparent)]
    DataIo(#[from] IoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

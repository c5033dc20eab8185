//! Per-task training: classifier, autoencoder and flow phases, synthetic
//! memory generation, and the baseline strategies.

mod learner;
mod memory;
mod phases;

pub use learner::{run_stream, FlowTopology, Learner, TaskOutcome, TaskReport};
pub use memory::{StoredTask, SyntheticMemory};
pub use phases::{
    classifier_objective, generate_memory, train_autoencoder_phase, train_classifier_phase,
    train_flow_phase, ClassifierMemory,
};

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Naive,
    Replay,
    Er,
    Prer,
    PrerR,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Naive,
        Strategy::Replay,
        Strategy::Er,
        Strategy::Prer,
        Strategy::PrerR,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Naive => "naive",
            Strategy::Replay => "replay",
            Strategy::Er => "er",
            Strategy::Prer => "prer",
            Strategy::PrerR => "prer_r",
        }
    }

    /// Whether the strategy trains the decoder and flow.
    pub fn is_generative(self) -> bool {
        matches!(self, Strategy::Prer | Strategy::PrerR)
    }
}

impl core::fmt::Display for Strategy {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::config(format!("unknown strategy '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Fixed epoch count of the classifier phase.
    pub classifier_epochs: usize,
    /// Epoch cap for the autoencoder and flow phases.
    pub max_epochs: usize,
    pub patience: usize,
    /// Smallest training-loss decrease that resets the patience counter.
    pub min_delta: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the embedding regularizer.
    pub beta: f64,
    /// Generated tuples for PRER; stored images per task for Replay and ER.
    pub memory_size: usize,
    /// Fraction of each mini-batch overwritten with memory samples.
    pub replay_fraction: f64,
    /// Share of each task's training data held out to pick the best epoch.
    pub validation_fraction: f64,
    /// Per-class cap on embeddings compared by the coverage metric.
    pub coverage_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            classifier_epochs: 20,
            max_epochs: 200,
            patience: 5,
            min_delta: 1e-4,
            batch_size: 64,
            learning_rate: crate::nn::adam::DEFAULT_LR,
            beta: 1.0,
            memory_size: 200,
            replay_fraction: 0.5,
            validation_fraction: 0.1,
            coverage_samples: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(0.0..1.0).contains(&self.replay_fraction) {
            problems.push(format!("replay_fraction {} not in [0, 1)", self.replay_fraction));
        }
        if !(self.beta >= 0.0) {
            problems.push(format!("beta {} is negative", self.beta));
        }
        if self.batch_size < 2 {
            problems.push("batch_size must be at least 2".into());
        }
        if !(self.learning_rate > 0.0) {
            problems.push("learning_rate must be positive".into());
        }
        if self.patience == 0 {
            problems.push("patience must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            problems.push("validation_fraction must be in [0, 1)".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::config(problems.join("; ")))
        }
    }

    /// Memory rows written into a mini-batch of `n`.
    pub fn replayed_rows(&self, n: usize) -> usize {
        libm::ceil(self.replay_fraction * n as f64) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Memory,
    Classifier,
    Autoencoder,
    Flow,
    Evaluation,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Memory => "memory",
            Phase::Classifier => "classifier",
            Phase::Autoencoder => "autoencoder",
            Phase::Flow => "flow",
            Phase::Evaluation => "evaluation",
        }
    }
}

/// Hooks around each phase; the std crate uses them for wall-clock timing.
pub trait PhaseObserver {
    fn started(&mut self, _task: usize, _phase: Phase) {}
    fn finished(&mut self, _task: usize, _phase: Phase) {}
}

pub struct NoObserver;

impl PhaseObserver for NoObserver {}

/// Per-phase training summary.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub epochs: usize,
    /// Mean training loss of each epoch.
    pub losses: Vec<f64>,
    /// Epoch (zero-based) whose snapshot was kept, when selection applies.
    pub best_epoch: Option<usize>,
    pub best_validation: Option<f64>,
}

/// Stops once the loss has failed to improve by `min_delta` for `patience`
/// consecutive epochs.
#[derive(Debug, Clone)]
pub(crate) struct EarlyStop {
    best: f64,
    stale: usize,
    patience: usize,
    min_delta: f64,
}

impl EarlyStop {
    pub(crate) fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            best: f64::INFINITY,
            stale: 0,
            patience,
            min_delta,
        }
    }

    pub(crate) fn should_stop(&mut self, loss: f64) -> bool {
        if self.best - loss > self.min_delta || self.best == f64::INFINITY {
            self.best = self.best.min(loss);
            self.stale = 0;
        } else {
            self.best = self.best.min(loss);
            self.stale += 1;
        }
        self.stale >= self.patience
    }
}

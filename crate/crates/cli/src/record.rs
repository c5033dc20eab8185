//! Per-run JSON records and resumable checkpoints.

use std::path::{Path, PathBuf};
use std::time::Instant;

use prer_core::eval::ResultMatrix;
use prer_core::model::Conditioning;
use prer_core::pipeline::{Learner, Phase, PhaseObserver, Strategy, TaskOutcome};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io, CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: usize,
    /// Class-averaged Hausdorff distance between real and generated `E_r`.
    pub coverage: Option<f64>,
    pub quality_at_generation: Option<f64>,
    /// Quality of the same memory once the task is trained.
    pub quality: Option<f64>,
    pub memory_rows: usize,
    pub classifier_epochs: usize,
    pub autoencoder_epochs: Option<usize>,
    pub flow_epochs: Option<usize>,
    pub flow_final_nll: Option<f64>,
}

impl TaskRecord {
    pub fn from_outcome(o: &TaskOutcome) -> Self {
        let r = &o.report;
        Self {
            task: r.task,
            coverage: o.coverage,
            quality_at_generation: r.quality_at_generation,
            quality: r.quality,
            memory_rows: r.memory_rows,
            classifier_epochs: r.classifier.epochs,
            autoencoder_epochs: r.autoencoder.as_ref().map(|s| s.epochs),
            flow_epochs: r.flow.as_ref().map(|s| s.epochs),
            flow_final_nll: r.flow.as_ref().and_then(|s| s.losses.last().copied()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTime {
    pub task: usize,
    pub phase: Phase,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub strategy: Strategy,
    pub conditioning: Conditioning,
    pub dataset: String,
    /// Lower triangle of R: row `i` holds the accuracy on tasks `0..=i`
    /// after training task `i`.
    pub results: Vec<Vec<f64>>,
    pub accuracy: f64,
    /// Absent for single-task streams.
    pub bwt: Option<f64>,
    pub tasks: Vec<TaskRecord>,
    pub memory_floats: u64,
    pub timings: Vec<PhaseTime>,
}

impl RunRecord {
    pub fn result_matrix(&self) -> Result<ResultMatrix> {
        let m = self.results.len();
        let mut r = ResultMatrix::new(m);
        for (i, row) in self.results.iter().enumerate() {
            r.set_row(i, row)?;
        }
        Ok(r)
    }

    pub fn file_name(strategy: Strategy, seed: u64) -> String {
        format!("{strategy}-seed{seed}.json")
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(Self::file_name(self.strategy, self.seed));
        write_json(&path, self)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Total wall-clock seconds spent in `phase` over all tasks.
    pub fn phase_seconds(&self, phase: Phase) -> f64 {
        self.timings
            .iter()
            .filter(|t| t.phase == phase)
            .map(|t| t.seconds)
            .sum()
    }
}

/// Learner state after the last finished task, with what has been
/// recorded so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub learner: Learner,
    pub outcomes: Vec<TaskOutcome>,
    pub timings: Vec<PhaseTime>,
}

impl Checkpoint {
    pub fn path(dir: &Path, strategy: Strategy, seed: u64) -> PathBuf {
        dir.join("checkpoints")
            .join(format!("{strategy}-seed{seed}.json"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io(parent))?;
        }
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Times every phase with the wall clock and remembers where a run is, so a
/// failure can be reported with its task and phase.
#[derive(Debug, Default)]
pub struct PhaseTimer {
    pub timings: Vec<PhaseTime>,
    pub current: Option<(usize, Phase)>,
    started: Option<Instant>,
}

impl PhaseObserver for PhaseTimer {
    fn started(&mut self, task: usize, phase: Phase) {
        log::debug!("task {task}: {} phase", phase.name());
        self.current = Some((task, phase));
        self.started = Some(Instant::now());
    }

    fn finished(&mut self, task: usize, phase: Phase) {
        let seconds = self.started.take().map_or(0.0, |t| t.elapsed().as_secs_f64());
        self.timings.push(PhaseTime {
            task,
            phase,
            seconds,
        });
        self.current = None;
    }
}

/// Writes through a temporary file so an interrupted run never leaves a
/// truncated document behind.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, json).map_err(io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

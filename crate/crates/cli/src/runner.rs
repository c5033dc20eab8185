use std::path::PathBuf;

use prer_core::data::TaskStream;
use prer_core::pipeline::{Learner, Strategy};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{io, CliError, Result};
use crate::record::{Checkpoint, PhaseTimer, RunRecord, TaskRecord};

/// Caps the worker threads used for concurrent seeds.
pub const THREADS_ENV: &str = "PRER_THREADS";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where records (and checkpoints) go; nothing is written when `None`.
    pub out: Option<PathBuf>,
    /// Save the learner after every task.
    pub checkpoint: bool,
    /// Continue from a matching checkpoint when one exists.
    pub resume: bool,
}

/// Trains every task of the configured stream for one seed.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64, opts: &RunOptions) -> Result<RunRecord> {
    let spec = cfg.dataset_spec()?;
    let set = spec.load(seed)?;
    let stream = TaskStream::build(&set, cfg.classes_per_task, seed)?;
    let hash = cfg.hash();
    let ckpt_path = opts
        .out
        .as_ref()
        .map(|dir| Checkpoint::path(dir, cfg.strategy, seed));

    let mut state = match ckpt_path.as_ref().filter(|p| opts.resume && p.exists()) {
        Some(path) => {
            let c = Checkpoint::load(path)?;
            if c.config_hash != hash {
                return Err(CliError::Config(format!(
                    "{} was written by a different configuration",
                    path.display()
                )));
            }
            log::info!("seed {seed}: resuming after task {}", c.learner.completed);
            c
        }
        None => Checkpoint {
            config_hash: hash.clone(),
            learner: Learner::new(
                cfg.strategy,
                cfg.train.clone(),
                cfg.model(&stream.sample_shape, stream.total_classes),
                cfg.topology(),
                seed,
            )?,
            outcomes: Vec::new(),
            timings: Vec::new(),
        },
    };

    while state.learner.completed < stream.len() {
        let mut timer = PhaseTimer::default();
        let outcome = state.learner.step(&stream, &mut timer).map_err(|source| {
            let mut context = format!("{} seed {seed}", cfg.strategy);
            if let Some((task, phase)) = timer.current {
                context += &format!(", task {task}, {} phase", phase.name());
            }
            CliError::Run { context, source }
        })?;
        log::info!(
            "{} seed {seed}: task {} accuracies {:?}",
            cfg.strategy,
            outcome.report.task,
            outcome.accuracies
        );
        state.outcomes.push(outcome);
        state.timings.extend(timer.timings);
        if let (Some(path), true) = (&ckpt_path, opts.checkpoint) {
            state.save(path)?;
        }
    }

    let record = build_record(cfg, seed, &stream, &state)?;
    if let Some(dir) = &opts.out {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        record.save(dir)?;
    }
    Ok(record)
}

fn build_record(cfg: &ExperimentConfig, seed: u64, stream: &TaskStream, state: &Checkpoint) -> Result<RunRecord> {
    let results: Vec<Vec<f64>> = state.outcomes.iter().map(|o| o.accuracies.clone()).collect();
    let record = RunRecord {
        config_hash: state.config_hash.clone(),
        seed,
        strategy: cfg.strategy,
        conditioning: cfg.conditioning,
        dataset: cfg.dataset.clone(),
        accuracy: 0.0,
        bwt: None,
        tasks: state.outcomes.iter().map(TaskRecord::from_outcome).collect(),
        memory_floats: state.learner.memory_floats(stream),
        timings: state.timings.clone(),
        results,
    };
    let r = record.result_matrix()?;
    Ok(RunRecord {
        accuracy: r.accuracy()?,
        bwt: (r.size() > 1).then(|| r.bwt()).transpose()?,
        ..record
    })
}

/// Thread count from `PRER_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("{THREADS_ENV}={v} is not a positive integer"))),
        },
    }
}

/// Runs every seed as an isolated worker; records come back in seed order.
/// Each seed's numbers do not depend on the thread count.
pub fn run_seeds(
    cfg: &ExperimentConfig,
    seeds: &[u64],
    threads: Option<usize>,
    opts: &RunOptions,
) -> Result<Vec<RunRecord>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| run_experiment(cfg, seed, opts))
            .collect()
    })
}

/// Config with `strategy` swapped in, for sweeping one config over methods.
pub fn with_strategy(cfg: &ExperimentConfig, strategy: Strategy) -> ExperimentConfig {
    ExperimentConfig {
        strategy,
        ..cfg.clone()
    }
}

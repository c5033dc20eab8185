use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::memory::{StoredTask, SyntheticMemory};
use super::phases::{
    generate_memory, task_accuracy, train_autoencoder_phase, train_classifier_phase,
    train_flow_phase, ClassifierMemory,
};
use super::{Phase, PhaseObserver, PhaseStats, Strategy, TrainConfig};
use crate::data::{Task, TaskStream};
use crate::error::{Error, Result};
use crate::eval::{
    coverage_hausdorff, generation_quality, memory_footprint, KnnProbe, NearestCentroid,
    ResultMatrix, DEFAULT_K,
};
use crate::flow::{FlowConfig, FlowStack};
use crate::model::{ContinualModel, ModelConfig};
use crate::nn::Parameters;
use crate::rng::{self, Purpose};
use crate::tensor::{one_hot, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowTopology {
    pub levels: usize,
    pub blocks: usize,
    pub hidden_multiplier: usize,
}

impl Default for FlowTopology {
    fn default() -> Self {
        Self {
            levels: 1,
            blocks: 6,
            hidden_multiplier: 2,
        }
    }
}

impl FlowTopology {
    /// Flow over `E_r`, class-conditioned when the model says so.
    pub fn config(&self, model: &ModelConfig) -> FlowConfig {
        let mut cfg = FlowConfig::new(model.recon_embedding, self.levels, self.blocks);
        cfg.hidden_multiplier = self.hidden_multiplier;
        if model.conditioning.flow() {
            cfg = cfg.conditioned(model.total_classes);
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: usize,
    pub classifier: PhaseStats,
    pub autoencoder: Option<PhaseStats>,
    pub flow: Option<PhaseStats>,
    /// Rows of rehearsal memory available during the task.
    pub memory_rows: usize,
    /// Generation quality right after the memory was generated.
    pub quality_at_generation: Option<f64>,
    /// Generation quality of the same memory at the end of the task.
    pub quality: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub report: TaskReport,
    /// Test accuracy (percent) on every task seen so far.
    pub accuracies: Vec<f64>,
    /// Class-averaged Hausdorff distance between real and generated `E_r`.
    pub coverage: Option<f64>,
}

/// Complete training state of one run; serializable so a run can resume at
/// any task boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub strategy: Strategy,
    pub config: TrainConfig,
    pub seed: u64,
    pub model: ContinualModel,
    pub flow: Option<FlowStack>,
    /// Real samples per finished task (Replay and ER).
    pub stored: Vec<StoredTask>,
    /// Memory generated for the current (or last) task.
    pub synthetic: Option<SyntheticMemory>,
    /// `E_r` class centroids labelling unconditioned flow samples.
    pub probe: NearestCentroid,
    pub completed: usize,
}

impl Learner {
    pub fn new(
        strategy: Strategy,
        config: TrainConfig,
        model: ModelConfig,
        topology: FlowTopology,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let flow = if strategy.is_generative() {
            let mut rng = rng::stream(seed, Purpose::FlowInit, 0);
            Some(FlowStack::new(&topology.config(&model), &mut rng)?)
        } else {
            None
        };
        Ok(Self {
            strategy,
            config,
            seed,
            model: ContinualModel::new(model, seed)?,
            flow,
            stored: Vec::new(),
            synthetic: None,
            probe: NearestCentroid::new(),
            completed: 0,
        })
    }

    fn check_stream(&self, stream: &TaskStream) -> Result<()> {
        if stream.sample_shape != self.model.config.input_shape {
            return Err(Error::config(format!(
                "stream samples are {:?} but the model expects {:?}",
                stream.sample_shape, self.model.config.input_shape
            )));
        }
        if stream.total_classes > self.model.config.total_classes {
            return Err(Error::config(format!(
                "stream has {} classes but the model one-hot covers {}",
                stream.total_classes, self.model.config.total_classes
            )));
        }
        Ok(())
    }

    fn flow_ref(&self) -> Result<&FlowStack> {
        self.flow
            .as_ref()
            .ok_or_else(|| Error::state("generative strategy without a flow"))
    }

    /// Floats of rehearsal state for this strategy on `stream`.
    pub fn memory_floats(&self, stream: &TaskStream) -> u64 {
        let generator = self.model.decoder.num_params()
            + self.model.recon_proj.num_params()
            + self.flow.as_ref().map_or(0, |f| f.num_params());
        memory_footprint(
            self.strategy,
            stream.len() as u64,
            self.config.memory_size as u64,
            self.model.config.input_len() as u64,
            self.model.config.class_embedding as u64,
            generator as u64,
        )
    }

    /// Trains the next task of `stream` with the learner's strategy.
    pub fn train_task(
        &mut self,
        stream: &TaskStream,
        observer: &mut dyn PhaseObserver,
    ) -> Result<TaskReport> {
        self.check_stream(stream)?;
        let t = self.completed;
        let task = stream
            .tasks
            .get(t)
            .ok_or_else(|| Error::state(format!("all {} tasks are already trained", stream.len())))?;
        self.model.add_head(t, task.num_classes, self.seed)?;
        let mut report = TaskReport {
            task: t,
            classifier: PhaseStats::default(),
            autoencoder: None,
            flow: None,
            memory_rows: 0,
            quality_at_generation: None,
            quality: None,
        };

        if self.strategy.is_generative() {
            self.synthetic = None;
            if t > 0 {
                observer.started(t, Phase::Memory);
                let mem = generate_memory(
                    self.flow_ref()?,
                    &self.model,
                    &self.probe,
                    self.config.memory_size,
                    task.first_class,
                    t,
                    self.seed,
                )?;
                if !mem.is_empty() {
                    report.quality_at_generation =
                        Some(generation_quality(&mem.images, &mem.embeddings, &self.model)?);
                }
                self.synthetic = Some(mem);
                observer.finished(t, Phase::Memory);
            }
        }

        observer.started(t, Phase::Classifier);
        report.classifier = self.classifier_phase(stream, task, &mut report.memory_rows)?;
        observer.finished(t, Phase::Classifier);

        if self.strategy.is_generative() {
            observer.started(t, Phase::Autoencoder);
            report.autoencoder = Some(train_autoencoder_phase(
                &mut self.model,
                task,
                self.synthetic.as_ref(),
                &self.config,
                self.seed,
            )?);
            observer.finished(t, Phase::Autoencoder);

            observer.started(t, Phase::Flow);
            let flow = self
                .flow
                .as_mut()
                .ok_or_else(|| Error::state("generative strategy without a flow"))?;
            report.flow = Some(train_flow_phase(
                flow,
                &self.model,
                task,
                self.synthetic.as_ref(),
                &self.config,
                self.seed,
            )?);
            observer.finished(t, Phase::Flow);

            self.refresh_probe(task)?;
            if let Some(mem) = self.synthetic.as_ref().filter(|m| !m.is_empty()) {
                report.quality = Some(generation_quality(&mem.images, &mem.embeddings, &self.model)?);
            }
        }

        if matches!(self.strategy, Strategy::Replay | Strategy::Er) {
            self.store_task(task)?;
        }
        self.completed += 1;
        Ok(report)
    }

    fn classifier_phase(
        &mut self,
        stream: &TaskStream,
        task: &Task,
        memory_rows: &mut usize,
    ) -> Result<PhaseStats> {
        let (cfg, seed) = (&self.config, self.seed);
        match self.strategy {
            Strategy::Naive => {
                train_classifier_phase(&mut self.model, task, ClassifierMemory::None, cfg, seed)
            }
            Strategy::Replay => {
                let (images, tasks, labels) = stored_replay(&self.stored, &stream.sample_shape)?;
                *memory_rows = labels.len();
                let memory = ClassifierMemory::Replay {
                    images: &images,
                    tasks: &tasks,
                    labels: &labels,
                };
                train_classifier_phase(&mut self.model, task, memory, cfg, seed)
            }
            Strategy::Er => {
                let (images, embeddings) = stored_regularizer(
                    &self.stored,
                    &stream.sample_shape,
                    self.model.config.class_embedding,
                )?;
                *memory_rows = images.rows();
                let memory = ClassifierMemory::Regularize {
                    images: &images,
                    embeddings: &embeddings,
                };
                train_classifier_phase(&mut self.model, task, memory, cfg, seed)
            }
            Strategy::Prer => {
                let memory = match &self.synthetic {
                    Some(m) if !m.is_empty() => {
                        *memory_rows = m.len();
                        ClassifierMemory::Regularize {
                            images: &m.images,
                            embeddings: &m.embeddings,
                        }
                    }
                    _ => ClassifierMemory::None,
                };
                train_classifier_phase(&mut self.model, task, memory, cfg, seed)
            }
            Strategy::PrerR => {
                let Some(m) = self.synthetic.as_ref().filter(|m| !m.is_empty()) else {
                    return train_classifier_phase(
                        &mut self.model,
                        task,
                        ClassifierMemory::None,
                        cfg,
                        seed,
                    );
                };
                *memory_rows = m.len();
                let mut tasks = Vec::with_capacity(m.len());
                let mut labels = Vec::with_capacity(m.len());
                for &c in &m.classes {
                    let owner = stream
                        .task_of_class(c)
                        .ok_or_else(|| Error::state(format!("memory class {c} has no task")))?;
                    tasks.push(owner);
                    labels.push(c - stream.tasks[owner].first_class);
                }
                let memory = ClassifierMemory::Replay {
                    images: &m.images,
                    tasks: &tasks,
                    labels: &labels,
                };
                train_classifier_phase(&mut self.model, task, memory, cfg, seed)
            }
        }
    }

    /// Recomputes the `E_r` centroids of the task's classes from its
    /// training data and of older classes from the current memory.
    fn refresh_probe(&mut self, task: &Task) -> Result<()> {
        let z = self.model.encode_reconstruct(&task.train.images)?;
        self.probe.update(&z, &task.train.labels)?;
        if let Some(mem) = self.synthetic.as_ref().filter(|m| !m.is_empty()) {
            let z = self.model.encode_reconstruct(&mem.images)?;
            self.probe.update(&z, &mem.classes)?;
        }
        Ok(())
    }

    fn store_task(&mut self, task: &Task) -> Result<()> {
        let mut rng = rng::stream(self.seed, Purpose::Memory, task.index as u64);
        let n = task.train.len();
        let mut picks = rand::seq::index::sample(&mut rng, n, self.config.memory_size.min(n)).into_vec();
        picks.sort_unstable();
        let kept = task.train.subset(&picks);
        let embeddings = match self.strategy {
            Strategy::Er => Some(self.model.encode_classify(&kept.images)?),
            _ => None,
        };
        self.stored.push(StoredTask {
            task: task.index,
            first_class: task.first_class,
            images: kept.images,
            labels: kept.labels,
            embeddings,
        });
        Ok(())
    }

    /// Test accuracy (percent) on every finished task.
    pub fn evaluate(&self, stream: &TaskStream) -> Result<Vec<f64>> {
        stream.tasks[..self.completed.min(stream.len())]
            .iter()
            .map(|task| {
                let labels = Task::local_labels(&task.test.labels, task.first_class);
                task_accuracy(&self.model, task.index, &task.test.images, &labels)
            })
            .collect()
    }

    /// Coverage of the flow after the last finished task: per seen class,
    /// `E_r` of up to `coverage_samples` test images against as many flow
    /// samples of that class. Unconditioned samples are assigned classes by
    /// a k-nearest-neighbour probe fitted on the real embeddings.
    pub fn coverage(&self, stream: &TaskStream) -> Result<Option<f64>> {
        if !self.strategy.is_generative() || self.completed == 0 {
            return Ok(None);
        }
        let flow = self.flow_ref()?;
        let mut rng = rng::stream(self.seed, Purpose::Evaluation, self.completed as u64 - 1);
        let cap = self.config.coverage_samples.max(1);

        let mut classes = Vec::new();
        let mut real = Vec::new();
        for task in &stream.tasks[..self.completed] {
            for (c, idx) in task.test.class_indices() {
                let idx = &idx[..idx.len().min(cap)];
                classes.push(c);
                real.push(self.model.encode_reconstruct(&task.test.images.select_rows(idx))?);
            }
        }
        if classes.is_empty() {
            return Ok(None);
        }

        let generated: Vec<Tensor> = if flow.is_conditioned() {
            classes
                .iter()
                .zip(&real)
                .map(|(&c, r)| {
                    let cond = one_hot(&vec![c; r.rows()], flow.condition_width());
                    flow.sample(r.rows(), Some(&cond), &mut rng)
                })
                .collect::<Result<_>>()?
        } else {
            let mut points = Tensor::zeros(&[0, flow.dim()]);
            let mut labels = Vec::new();
            for (&c, r) in classes.iter().zip(&real) {
                points.append_rows(r)?;
                labels.extend(core::iter::repeat_n(c, r.rows()));
            }
            let probe = KnnProbe::fit(points, labels, DEFAULT_K)?;
            let want: Vec<usize> = real.iter().map(Tensor::rows).collect();
            let mut got: Vec<Vec<Vec<f64>>> = vec![Vec::new(); classes.len()];
            let mut missing: usize = want.iter().sum();
            for _ in 0..50 {
                if missing == 0 {
                    break;
                }
                let draw = flow.sample((2 * missing).max(16), None, &mut rng)?;
                for (i, c) in probe.predict(&draw).into_iter().enumerate() {
                    let k = classes.binary_search(&c).expect("probe predicts seen classes");
                    if got[k].len() < want[k] {
                        got[k].push(draw.row(i).to_vec());
                        missing -= 1;
                    }
                }
            }
            got.into_iter()
                .map(|rows| Tensor::from_rows(&rows, flow.dim()))
                .collect::<Result<_>>()?
        };

        let (real, generated): (Vec<Tensor>, Vec<Tensor>) = real
            .into_iter()
            .zip(generated)
            .filter(|(_, g)| g.rows() > 0)
            .unzip();
        if real.len() < classes.len() {
            log::warn!(
                "{} classes received no flow samples and are left out of the coverage",
                classes.len() - real.len()
            );
        }
        if real.is_empty() {
            return Ok(None);
        }
        coverage_hausdorff(&real, &generated).map(Some)
    }

    /// Trains the next task, then evaluates every finished task.
    pub fn step(
        &mut self,
        stream: &TaskStream,
        observer: &mut dyn PhaseObserver,
    ) -> Result<TaskOutcome> {
        let report = self.train_task(stream, observer)?;
        observer.started(report.task, Phase::Evaluation);
        let accuracies = self.evaluate(stream)?;
        let coverage = self.coverage(stream)?;
        observer.finished(report.task, Phase::Evaluation);
        Ok(TaskOutcome {
            report,
            accuracies,
            coverage,
        })
    }
}

fn stored_replay(
    stored: &[StoredTask],
    sample_shape: &[usize],
) -> Result<(Tensor, Vec<usize>, Vec<usize>)> {
    let mut shape = vec![0];
    shape.extend_from_slice(sample_shape);
    let mut images = Tensor::zeros(&shape);
    let mut tasks = Vec::new();
    let mut labels = Vec::new();
    for s in stored {
        images.append_rows(&s.images)?;
        tasks.extend(core::iter::repeat_n(s.task, s.len()));
        labels.extend(s.labels.iter().map(|y| y - s.first_class));
    }
    Ok((images, tasks, labels))
}

fn stored_regularizer(
    stored: &[StoredTask],
    sample_shape: &[usize],
    width: usize,
) -> Result<(Tensor, Tensor)> {
    let mut shape = vec![0];
    shape.extend_from_slice(sample_shape);
    let mut images = Tensor::zeros(&shape);
    let mut embeddings = Tensor::zeros(&[0, width]);
    for s in stored {
        let z = s
            .embeddings
            .as_ref()
            .ok_or_else(|| Error::state(format!("stored task {} has no embeddings", s.task)))?;
        images.append_rows(&s.images)?;
        embeddings.append_rows(z)?;
    }
    Ok((images, embeddings))
}

/// Trains every remaining task of `stream`, filling the result matrix.
pub fn run_stream(
    learner: &mut Learner,
    stream: &TaskStream,
    observer: &mut dyn PhaseObserver,
) -> Result<(ResultMatrix, Vec<TaskOutcome>)> {
    let mut r = ResultMatrix::new(stream.len());
    let mut outcomes = Vec::new();
    while learner.completed < stream.len() {
        let out = learner.step(stream, observer)?;
        r.set_row(out.report.task, &out.accuracies)?;
        outcomes.push(out);
    }
    Ok((r, outcomes))
}

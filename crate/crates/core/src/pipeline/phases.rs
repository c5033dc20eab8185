use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng as _;

use super::memory::SyntheticMemory;
use super::{EarlyStop, PhaseStats, TrainConfig};
use crate::data::Task;
use crate::error::{Error, Result};
use crate::eval::{percent_correct, NearestCentroid};
use crate::flow::FlowStack;
use crate::model::ContinualModel;
use crate::nn::loss::{argmax_rows, cosine_distance_batch, cross_entropy, mse};
use crate::nn::{Adam, Mode, Network, Parameters};
use crate::rng::{self, Purpose, Rng};
use crate::tensor::{one_hot, Tensor};

/// What the classifier phase rehearses with.
#[derive(Debug, Clone, Copy)]
pub enum ClassifierMemory<'a> {
    None,
    /// Pull `E_c(images)` towards the stored `embeddings` (cosine distance).
    Regularize {
        images: &'a Tensor,
        embeddings: &'a Tensor,
    },
    /// Overwrite part of each mini-batch; `tasks[i]` picks the head and
    /// `labels[i]` is the within-task label.
    Replay {
        images: &'a Tensor,
        tasks: &'a [usize],
        labels: &'a [usize],
    },
}

impl ClassifierMemory<'_> {
    fn len(&self) -> usize {
        match self {
            ClassifierMemory::None => 0,
            ClassifierMemory::Regularize { images, .. } => images.rows(),
            ClassifierMemory::Replay { labels, .. } => labels.len(),
        }
    }
}

fn flatten(images: &Tensor) -> Result<Tensor> {
    let n = images.rows();
    let w = images.row_len();
    images.clone().reshape(&[n, w])
}

fn divergence_context(task: usize, phase: &str, epoch: usize, e: Error) -> Error {
    match e {
        Error::Divergence(m) | Error::NonFinite(m) => {
            Error::Divergence(format!("task {task}, {phase} epoch {epoch}: {m}"))
        }
        other => other,
    }
}

/// Test-style accuracy (percent) of head `task` on `images`.
pub(crate) fn task_accuracy(
    model: &ContinualModel,
    task: usize,
    images: &Tensor,
    local_labels: &[usize],
) -> Result<f64> {
    let logits = model.classify(images, task)?;
    Ok(percent_correct(&argmax_rows(&logits), local_labels))
}

/// Evaluation-mode value of the classifier objective on a fixed batch:
/// cross-entropy of head `task` plus `beta` times the mean cosine distance
/// between stored embeddings and `E_c` of the stored images.
pub fn classifier_objective(
    model: &ContinualModel,
    images: &Tensor,
    local_labels: &[usize],
    task: usize,
    memory: Option<(&Tensor, &Tensor)>,
    beta: f64,
) -> Result<f64> {
    let (ce, _) = cross_entropy(&model.classify(images, task)?, local_labels)?;
    match memory {
        Some((x, z)) if x.rows() > 0 => {
            let (d, _) = cosine_distance_batch(z, &model.encode_classify(x)?)?;
            Ok(ce + beta * d)
        }
        _ => Ok(ce),
    }
}

#[allow(clippy::too_many_arguments)]
fn classifier_step(
    model: &mut ContinualModel,
    task: usize,
    images: &Tensor,
    labels: &[usize],
    chunk: &[usize],
    memory: ClassifierMemory<'_>,
    cfg: &TrainConfig,
    adam: &mut Adam,
    rng: &mut Rng,
    mem_rng: &mut Rng,
) -> Result<f64> {
    let n = chunk.len();
    let mut x = images.select_rows(chunk);
    let mut heads = vec![task; n];
    let mut ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
    if let ClassifierMemory::Replay {
        images: mem_x,
        tasks,
        labels: mem_y,
    } = memory
    {
        if !mem_y.is_empty() {
            let keep = n - cfg.replayed_rows(n);
            let picks: Vec<usize> = (keep..n)
                .map(|_| mem_rng.random_range(0..mem_y.len()))
                .collect();
            let mut mixed = x.select_rows(&(0..keep).collect::<Vec<_>>());
            mixed.append_rows(&mem_x.select_rows(&picks))?;
            x = mixed;
            heads.truncate(keep);
            ys.truncate(keep);
            heads.extend(picks.iter().map(|&p| tasks[p]));
            ys.extend(picks.iter().map(|&p| mem_y[p]));
        }
    }

    model.backbone.zero_grad();
    model.class_proj.zero_grad();
    model.heads.values_mut().for_each(|h| h.zero_grad());

    let feat = model.backbone.forward(&x, None, Mode::Train(rng))?;
    let zc = model.class_proj.forward(&feat, None, Mode::Train(rng))?;
    let mut grad_zc = Tensor::zeros(zc.shape());
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (r, &h) in heads.iter().enumerate() {
        groups.entry(h).or_default().push(r);
    }
    let mut loss = 0.0;
    for (h, rows) in groups {
        let head = model
            .heads
            .get_mut(&h)
            .ok_or_else(|| Error::config(format!("replayed sample refers to missing head {h}")))?;
        let targets: Vec<usize> = rows.iter().map(|&r| ys[r]).collect();
        // Past heads are frozen: evaluation mode, and never stepped.
        let mode = if h == task { Mode::Train(rng) } else { Mode::Eval };
        let logits = head.forward(&zc.select_rows(&rows), None, mode)?;
        let (ce, mut g) = cross_entropy(&logits, &targets)?;
        let w = rows.len() as f64 / n as f64;
        loss += w * ce;
        g.scale(w);
        let gz = head.backward(&g)?;
        for (k, &r) in rows.iter().enumerate() {
            grad_zc.row_mut(r).copy_from_slice(gz.row(k));
        }
    }
    let g = model.class_proj.backward(&grad_zc)?;
    model.backbone.backward(&g)?;

    if let ClassifierMemory::Regularize {
        images: mem_x,
        embeddings: mem_z,
    } = memory
    {
        if cfg.beta > 0.0 && mem_x.rows() > 0 {
            let m = cfg.batch_size.min(mem_x.rows());
            let picks = rand::seq::index::sample(mem_rng, mem_x.rows(), m).into_vec();
            let feat = model
                .backbone
                .forward(&mem_x.select_rows(&picks), None, Mode::Train(rng))?;
            let zc = model.class_proj.forward(&feat, None, Mode::Train(rng))?;
            let (d, mut g) = cosine_distance_batch(&mem_z.select_rows(&picks), &zc)?;
            loss += cfg.beta * d;
            g.scale(cfg.beta);
            let g = model.class_proj.backward(&g)?;
            model.backbone.backward(&g)?;
        }
    }

    let head = model
        .heads
        .get_mut(&task)
        .ok_or_else(|| Error::config(format!("no head for task {task}")))?;
    adam.step_modules(&mut [&mut model.backbone, &mut model.class_proj, head])?;
    Ok(loss)
}

/// Trains `E`, `f_c` and the head of `task` for a fixed number of epochs
/// and keeps the epoch with the best held-out accuracy (later epochs win
/// ties). The optimizer starts fresh.
pub fn train_classifier_phase(
    model: &mut ContinualModel,
    task: &Task,
    memory: ClassifierMemory<'_>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<PhaseStats> {
    cfg.validate()?;
    let t = task.index;
    if task.train.is_empty() {
        return Err(Error::config(format!("task {t} has no training data")));
    }
    model.head(t)?;
    if let ClassifierMemory::Regularize { images, embeddings } = memory {
        if images.rows() != embeddings.rows() {
            return Err(Error::shape("memory images and embeddings differ in count"));
        }
    }
    if let ClassifierMemory::Replay { images, tasks, labels } = memory {
        if images.rows() != labels.len() || tasks.len() != labels.len() {
            return Err(Error::shape("replay memory columns differ in length"));
        }
    }
    log::debug!("task {t}: classifier phase with {} memory rows", memory.len());

    let mut rng = rng::stream(seed, Purpose::Classifier, t as u64);
    let mut mem_rng = rng::stream(seed, Purpose::Regularizer, t as u64);

    let mut order: Vec<usize> = (0..task.train.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((order.len() as f64 * cfg.validation_fraction) as usize).min(order.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    train_idx.sort_unstable();
    let train = task.train.subset(&train_idx);
    let val = task.train.subset(val_idx);
    let train_y = Task::local_labels(&train.labels, task.first_class);
    let val_y = Task::local_labels(&val.labels, task.first_class);

    let mut adam = Adam::new(cfg.learning_rate);
    let mut stats = PhaseStats::default();
    let mut best: Option<(f64, Network, Network, Network)> = None;
    let mut idx: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.classifier_epochs {
        idx.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in idx.chunks(cfg.batch_size) {
            total += classifier_step(
                model,
                t,
                &train.images,
                &train_y,
                chunk,
                memory,
                cfg,
                &mut adam,
                &mut rng,
                &mut mem_rng,
            )
            .map_err(|e| divergence_context(t, "classifier", epoch, e))?;
            batches += 1;
        }
        stats.losses.push(total / batches as f64);
        stats.epochs += 1;
        if !val.is_empty() {
            let acc = task_accuracy(model, t, &val.images, &val_y)?;
            if best.as_ref().is_none_or(|b| acc >= b.0) {
                best = Some((
                    acc,
                    model.backbone.clone(),
                    model.class_proj.clone(),
                    model.head(t)?.clone(),
                ));
                stats.best_epoch = Some(epoch);
                stats.best_validation = Some(acc);
            }
        }
    }
    if let Some((_, backbone, class_proj, head)) = best {
        model.backbone = backbone;
        model.class_proj = class_proj;
        *model.head_mut(t)? = head;
    }
    Ok(stats)
}

/// Rows of a few aligned columns plus labels.
struct Pool<'a> {
    columns: Vec<&'a Tensor>,
    labels: &'a [usize],
}

/// Gathers `chunk` from `data`, overwriting its last `replayed` positions
/// with random rows of `memory`.
fn compose(
    data: &Pool<'_>,
    chunk: &[usize],
    memory: Option<&Pool<'_>>,
    replayed: usize,
    rng: &mut Rng,
) -> Result<(Vec<Tensor>, Vec<usize>)> {
    let memory = memory.filter(|m| !m.labels.is_empty());
    let replayed = if memory.is_some() { replayed } else { 0 };
    let keep = &chunk[..chunk.len() - replayed];
    let mut cols: Vec<Tensor> = data.columns.iter().map(|c| c.select_rows(keep)).collect();
    let mut labels: Vec<usize> = keep.iter().map(|&i| data.labels[i]).collect();
    if let Some(m) = memory {
        let picks: Vec<usize> = (0..replayed)
            .map(|_| rng.random_range(0..m.labels.len()))
            .collect();
        for (c, src) in cols.iter_mut().zip(&m.columns) {
            c.append_rows(&src.select_rows(&picks))?;
        }
        labels.extend(picks.iter().map(|&p| m.labels[p]));
    }
    Ok((cols, labels))
}

fn check_memory_conditioning(model: &ContinualModel, memory: &SyntheticMemory) -> Result<()> {
    if memory.conditioning != model.config.conditioning {
        return Err(Error::config(format!(
            "memory was generated with '{}' conditioning but the model uses '{}'",
            memory.conditioning.name(),
            model.config.conditioning.name()
        )));
    }
    Ok(())
}

/// Trains `f_r` and `D` on the MSE reconstruction loss with `E` and `f_c`
/// frozen. Stops when the epoch loss stalls for `patience` epochs.
pub fn train_autoencoder_phase(
    model: &mut ContinualModel,
    task: &Task,
    memory: Option<&SyntheticMemory>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<PhaseStats> {
    cfg.validate()?;
    let t = task.index;
    if task.train.is_empty() {
        return Err(Error::config(format!("task {t} has no training data")));
    }
    let memory = memory.filter(|m| !m.is_empty());
    if let Some(m) = memory {
        check_memory_conditioning(model, m)?;
    }
    let mut rng = rng::stream(seed, Purpose::Autoencoder, t as u64);

    // E is frozen, so its features are computed once.
    let feats = model.backbone.infer(&task.train.images, None)?;
    let targets = flatten(&task.train.images)?;
    let data = Pool {
        columns: vec![&feats, &targets],
        labels: &task.train.labels,
    };
    let mem_cols = match memory {
        Some(m) => Some((model.backbone.infer(&m.images, None)?, flatten(&m.images)?)),
        None => None,
    };
    let mem_pool = match (&mem_cols, memory) {
        (Some((f, x)), Some(m)) => Some(Pool {
            columns: vec![f, x],
            labels: &m.classes,
        }),
        _ => None,
    };

    let conditioned = model.config.conditioning.decoder();
    let mut adam = Adam::new(cfg.learning_rate);
    let mut stop = EarlyStop::new(cfg.patience, cfg.min_delta);
    let mut stats = PhaseStats::default();
    let mut idx: Vec<usize> = (0..task.train.len()).collect();
    for epoch in 0..cfg.max_epochs {
        idx.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in idx.chunks(cfg.batch_size) {
            let (cols, labels) = compose(
                &data,
                chunk,
                mem_pool.as_ref(),
                cfg.replayed_rows(chunk.len()),
                &mut rng,
            )?;
            let cond = model.decoder_condition(conditioned.then_some(labels.as_slice()))?;
            model.recon_proj.zero_grad();
            model.decoder.zero_grad();
            let zr = model.recon_proj.forward(&cols[0], None, Mode::Train(&mut rng))?;
            let xh = model
                .decoder
                .forward(&zr, cond.as_ref(), Mode::Train(&mut rng))?;
            let (loss, g) = mse(&cols[1], &xh)?;
            let g = model.decoder.backward(&g)?;
            model.recon_proj.backward(&g)?;
            adam.step_modules(&mut [&mut model.recon_proj, &mut model.decoder])
                .map_err(|e| divergence_context(t, "autoencoder", epoch, e))?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "task {t}, autoencoder epoch {epoch}: non-finite reconstruction loss"
                )));
            }
            total += loss;
            batches += 1;
        }
        let mean = total / batches as f64;
        stats.losses.push(mean);
        stats.epochs += 1;
        if stop.should_stop(mean) {
            break;
        }
    }
    Ok(stats)
}

/// Fits the flow to `E_r` of the task data (plus replayed memory images) by
/// maximum likelihood. Stops when the epoch NLL stalls for `patience` epochs.
pub fn train_flow_phase(
    flow: &mut FlowStack,
    model: &ContinualModel,
    task: &Task,
    memory: Option<&SyntheticMemory>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<PhaseStats> {
    cfg.validate()?;
    let t = task.index;
    if task.train.len() < 2 {
        return Err(Error::config(format!(
            "flow training on task {t} needs at least two samples"
        )));
    }
    if flow.dim() != model.config.recon_embedding {
        return Err(Error::config(format!(
            "flow width {} differs from the reconstruction embedding width {}",
            flow.dim(),
            model.config.recon_embedding
        )));
    }
    let memory = memory.filter(|m| !m.is_empty());
    if let Some(m) = memory {
        check_memory_conditioning(model, m)?;
    }
    let mut rng = rng::stream(seed, Purpose::Flow, t as u64);
    let z = model.encode_reconstruct(&task.train.images)?;
    let data = Pool {
        columns: vec![&z],
        labels: &task.train.labels,
    };
    let mem_z = match memory {
        Some(m) => Some(model.encode_reconstruct(&m.images)?),
        None => None,
    };
    let mem_pool = match (&mem_z, memory) {
        (Some(z), Some(m)) => Some(Pool {
            columns: vec![z],
            labels: &m.classes,
        }),
        _ => None,
    };

    let width = flow.condition_width();
    let conditioned = flow.is_conditioned();
    let mut adam = Adam::new(cfg.learning_rate);
    let mut stop = EarlyStop::new(cfg.patience, cfg.min_delta);
    let mut stats = PhaseStats::default();
    let mut idx: Vec<usize> = (0..task.train.len()).collect();
    for epoch in 0..cfg.max_epochs {
        idx.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        // Batch norm needs two rows; a trailing singleton batch is skipped.
        for chunk in idx.chunks(cfg.batch_size).filter(|c| c.len() >= 2) {
            let (cols, labels) = compose(
                &data,
                chunk,
                mem_pool.as_ref(),
                cfg.replayed_rows(chunk.len()),
                &mut rng,
            )?;
            let cond = conditioned.then(|| one_hot(&labels, width));
            flow.zero_grad();
            let loss = flow
                .nll_backward(&cols[0], cond.as_ref())
                .map_err(|e| divergence_context(t, "flow", epoch, e))?;
            adam.step_modules(&mut [flow])
                .map_err(|e| divergence_context(t, "flow", epoch, e))?;
            total += loss;
            batches += 1;
        }
        let mean = total / batches as f64;
        stats.losses.push(mean);
        stats.epochs += 1;
        if stop.should_stop(mean) {
            break;
        }
    }
    Ok(stats)
}

/// Rounds of unconditioned sampling before the class quotas are dropped.
const MAX_REJECTION_ROUNDS: usize = 50;

/// Draws `n` embeddings from the flow, balanced over `seen_classes`, decodes
/// them and records `ẑ = E_c(x̂)`.
///
/// A class-conditioned flow is sampled per requested class. Otherwise
/// samples are labelled by `probe` and kept while their class still has
/// room; after [`MAX_REJECTION_ROUNDS`] the remainder is accepted with
/// whatever class the probe assigns.
pub fn generate_memory(
    flow: &FlowStack,
    model: &ContinualModel,
    probe: &NearestCentroid,
    n: usize,
    seen_classes: usize,
    task: usize,
    seed: u64,
) -> Result<SyntheticMemory> {
    if task == 0 {
        return Err(Error::state("no memory can be generated before the first task"));
    }
    if seen_classes == 0 {
        return Err(Error::config("memory generation needs at least one seen class"));
    }
    if n == 0 {
        let mut shape = vec![0];
        shape.extend_from_slice(&model.config.input_shape);
        return Ok(SyntheticMemory {
            task,
            images: Tensor::zeros(&shape),
            embeddings: Tensor::zeros(&[0, model.config.class_embedding]),
            classes: Vec::new(),
            conditioning: model.config.conditioning,
        });
    }
    let mut rng = rng::stream(seed, Purpose::Memory, task as u64);
    let schedule: Vec<usize> = (0..n).map(|i| i % seen_classes).collect();

    let (z, classes) = if flow.is_conditioned() {
        let cond = one_hot(&schedule, flow.condition_width());
        (flow.sample(n, Some(&cond), &mut rng)?, schedule)
    } else {
        let mut quota = vec![0usize; seen_classes];
        schedule.iter().for_each(|&c| quota[c] += 1);
        let mut kept: Vec<Vec<Vec<f64>>> = vec![Vec::new(); seen_classes];
        let mut missing = n;
        for _ in 0..MAX_REJECTION_ROUNDS {
            if missing == 0 {
                break;
            }
            let draw = flow.sample((2 * missing).max(16), None, &mut rng)?;
            for (i, c) in probe.predict(&draw)?.into_iter().enumerate() {
                if c < seen_classes && kept[c].len() < quota[c] {
                    kept[c].push(draw.row(i).to_vec());
                    missing -= 1;
                }
            }
        }
        if missing > 0 {
            log::warn!("{missing} memory samples accepted without a class quota");
            let draw = flow.sample(missing, None, &mut rng)?;
            for (i, c) in probe.predict(&draw)?.into_iter().enumerate() {
                if c >= kept.len() {
                    kept.resize(c + 1, Vec::new());
                }
                kept[c].push(draw.row(i).to_vec());
            }
        }
        let mut rows = Vec::with_capacity(n);
        let mut classes = Vec::with_capacity(n);
        for (c, group) in kept.into_iter().enumerate() {
            classes.extend(core::iter::repeat_n(c, group.len()));
            rows.extend(group);
        }
        (Tensor::from_rows(&rows, flow.dim())?, classes)
    };

    let decoder_classes = model.config.conditioning.decoder().then_some(classes.as_slice());
    let images = model.decode(&z, decoder_classes)?;
    let embeddings = model.encode_classify(&images)?;
    Ok(SyntheticMemory {
        task,
        images,
        embeddings,
        classes,
        conditioning: model.config.conditioning,
    })
}

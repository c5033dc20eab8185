//! Labeled sets, deterministic splits and task streams.

pub mod idx;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::tensor::Tensor;

/// Samples (leading dimension) with integer class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(images: Tensor, labels: Vec<usize>) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} samples but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn empty(sample_shape: &[usize]) -> Self {
        let mut shape = vec![0];
        shape.extend_from_slice(sample_shape);
        Self {
            images: Tensor::zeros(&shape),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn sample_len(&self) -> usize {
        self.images.row_len()
    }

    /// `max label + 1`.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            images: self.images.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Indices of each class, in ascending sample order.
    pub fn class_indices(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &y) in self.labels.iter().enumerate() {
            map.entry(y).or_default().push(i);
        }
        map
    }

    /// FNV-1a over shape, labels and value bits; identifies a dataset for
    /// reproducibility records.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for &s in self.images.shape() {
            eat(s as u64);
        }
        for &y in &self.labels {
            eat(y as u64);
        }
        for v in self.images.data() {
            eat(v.to_bits());
        }
        h
    }
}

pub const TEST_FRACTION: f64 = 0.2;
pub const MIN_CLASS_SIZE: usize = 5;

/// Per-class 80/20 split; each class contributes `⌊0.2·n⌋` test samples.
pub fn split_train_test(set: &LabeledSet, seed: u64) -> Result<(LabeledSet, LabeledSet)> {
    let mut rng = rng::stream(seed, Purpose::Split, 0);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut idx) in set.class_indices() {
        if idx.len() < MIN_CLASS_SIZE {
            return Err(Error::config(format!(
                "class {class} has {} samples; at least {MIN_CLASS_SIZE} are needed",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * TEST_FRACTION) as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((set.subset(&train), set.subset(&test)))
}

/// One task of the stream. Labels in `train`/`test` are global (`y^d`);
/// the within-task label is `y^d − first_class`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub index: usize,
    pub first_class: usize,
    pub num_classes: usize,
    pub train: LabeledSet,
    pub test: LabeledSet,
}

impl Task {
    pub fn classes(&self) -> core::ops::Range<usize> {
        self.first_class..self.first_class + self.num_classes
    }

    pub fn local_label(&self, global: usize) -> usize {
        global - self.first_class
    }

    pub fn local_labels(labels: &[usize], first_class: usize) -> Vec<usize> {
        labels.iter().map(|y| y - first_class).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
    pub total_classes: usize,
    pub classes_per_task: usize,
    pub sample_shape: Vec<usize>,
}

impl TaskStream {
    /// Splits `set` 80/20 per class, then groups classes in ascending label
    /// order into tasks of `classes_per_task` (the last may be smaller).
    pub fn build(set: &LabeledSet, classes_per_task: usize, seed: u64) -> Result<Self> {
        let total = set.num_classes();
        if classes_per_task <= 1 || classes_per_task > total {
            return Err(Error::config(format!(
                "classes per task must be in 2..={total}, got {classes_per_task}"
            )));
        }
        let (train, test) = split_train_test(set, seed)?;
        let m = total.div_ceil(classes_per_task);
        let pick = |s: &LabeledSet, lo: usize, hi: usize| {
            let idx: Vec<usize> = (0..s.len())
                .filter(|&i| (lo..hi).contains(&s.labels[i]))
                .collect();
            s.subset(&idx)
        };
        let tasks = (0..m)
            .map(|t| {
                let lo = t * classes_per_task;
                let hi = (lo + classes_per_task).min(total);
                Task {
                    index: t,
                    first_class: lo,
                    num_classes: hi - lo,
                    train: pick(&train, lo, hi),
                    test: pick(&test, lo, hi),
                }
            })
            .collect();
        Ok(Self {
            tasks,
            total_classes: total,
            classes_per_task,
            sample_shape: set.sample_shape().to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Task owning a global class label.
    pub fn task_of_class(&self, class: usize) -> Option<usize> {
        self.tasks.iter().position(|t| t.classes().contains(&class))
    }
}

/// Centre of blob `k`: the cross-polytope vertex `±e_(k mod dim)`, pushed to
/// an outer shell once all `2·dim` vertices are used, scaled by `separation`.
pub fn blob_center(k: usize, dim: usize, separation: f64) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    let axis = k % dim;
    let sign = if (k / dim) % 2 == 0 { 1.0 } else { -1.0 };
    let shell = 1.0 + (k / (2 * dim)) as f64;
    c[axis] = sign * separation * shell;
    c
}

/// Unit-variance Gaussian clusters, one per class, `per_class` points each.
pub fn synth_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledSet> {
    if !(separation > 0.0) || dim == 0 {
        return Err(Error::config("blobs need separation > 0 and dim > 0"));
    }
    let mut rng = rng::stream(seed, Purpose::Data, 0);
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for k in 0..classes {
        let center = blob_center(k, dim, separation);
        for _ in 0..per_class {
            for c in &center {
                let e: f64 = StandardNormal.sample(&mut rng);
                data.push(c + e);
            }
            labels.push(k);
        }
    }
    LabeledSet::new(Tensor::new(vec![n, dim], data)?, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(classes: usize, per_class: usize) -> LabeledSet {
        synth_blobs(classes, per_class, 3, 4.0, 0).unwrap()
    }

    #[test]
    fn task_counts() {
        for (c, cm, m) in [(10, 2, 5), (100, 10, 10), (5, 2, 3)] {
            let s = toy(c, 5);
            let ts = TaskStream::build(&s, cm, 1).unwrap();
            assert_eq!(ts.len(), m);
        }
        let ts = TaskStream::build(&toy(5, 5), 2, 1).unwrap();
        assert_eq!(ts.tasks[2].num_classes, 1);
        assert_eq!(ts.tasks[1].classes(), 2..4);
    }

    #[test]
    fn rejects_bad_classes_per_task() {
        let s = toy(4, 5);
        assert!(TaskStream::build(&s, 1, 0).is_err());
        assert!(TaskStream::build(&s, 5, 0).is_err());
    }

    #[test]
    fn tasks_are_disjoint_in_classes() {
        let ts = TaskStream::build(&toy(7, 10), 3, 2).unwrap();
        for (i, a) in ts.tasks.iter().enumerate() {
            for b in &ts.tasks[i + 1..] {
                assert!(a.classes().all(|c| !b.classes().contains(&c)));
            }
            assert!(a.train.labels.iter().all(|y| a.classes().contains(y)));
            for &y in &a.train.labels {
                assert_eq!(a.first_class + a.local_label(y), y);
            }
        }
    }

    #[test]
    fn split_proportion_and_partition() {
        let s = toy(2, 10);
        let (train, test) = split_train_test(&s, 4).unwrap();
        assert_eq!(train.len(), 16);
        assert_eq!(test.len(), 4);
        let (train2, test2) = split_train_test(&s, 4).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        let mut all: Vec<Vec<u64>> = train
            .images
            .data()
            .chunks(3)
            .chain(test.images.data().chunks(3))
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut orig: Vec<Vec<u64>> = s
            .images
            .data()
            .chunks(3)
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn small_class_is_rejected() {
        assert!(split_train_test(&toy(2, 4), 0).is_err());
    }

    #[test]
    fn blobs_are_deterministic_and_can_be_empty() {
        assert_eq!(toy(3, 4), toy(3, 4));
        assert!(synth_blobs(3, 0, 2, 1.0, 0).unwrap().is_empty());
        assert!(synth_blobs(3, 2, 2, 0.0, 0).is_err());
    }

    #[test]
    fn blob_centers_are_distinct() {
        let cs: Vec<Vec<f64>> = (0..12).map(|k| blob_center(k, 3, 1.0)).collect();
        for i in 0..cs.len() {
            for j in i + 1..cs.len() {
                assert_ne!(cs[i], cs[j]);
            }
        }
    }
}

//! Metrics: the task-accuracy matrix, Accuracy/BWT, embedding coverage,
//! generation quality and memory footprints.

mod probe;

pub use probe::{KnnProbe, NearestCentroid, DEFAULT_K};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::model::ContinualModel;
use crate::nn::loss::cosine_similarity;
use crate::pipeline::Strategy;
use crate::tensor::Tensor;

/// `R[i][j]`: test accuracy (percent) on task `j` after training task `i`.
/// Indices are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMatrix {
    size: usize,
    entries: Vec<Vec<Option<f64>>>,
}

impl ResultMatrix {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            entries: vec![vec![None; size]; size],
        }
    }

    /// Builds a matrix from fully specified rows (row `i` holds `R[i][0..=i]`
    /// at least; missing trailing entries stay unset).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let mut r = Self::new(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() > rows.len() {
                return Err(Error::shape(format!("row {i} is longer than the matrix")));
            }
            for (j, &v) in row.iter().enumerate() {
                r.set(i, j, v)?;
            }
        }
        Ok(r)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        if i >= self.size || j >= self.size {
            return Err(Error::shape(format!(
                "entry ({i}, {j}) outside a {0}×{0} matrix",
                self.size
            )));
        }
        if !(0.0..=100.0).contains(&value) {
            return Err(Error::config(format!("accuracy {value} not in [0, 100]")));
        }
        self.entries[i][j] = Some(value);
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.entries.get(i)?.get(j).copied().flatten()
    }

    /// Sets row `i` from `values[j]` for `j < values.len()`.
    pub fn set_row(&mut self, i: usize, values: &[f64]) -> Result<()> {
        for (j, &v) in values.iter().enumerate() {
            self.set(i, j, v)?;
        }
        Ok(())
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.entries
    }

    fn need(&self, i: usize, j: usize) -> Result<f64> {
        self.get(i, j)
            .ok_or_else(|| Error::state(format!("R[{i}][{j}] has not been recorded")))
    }

    /// Mean of the last row.
    pub fn accuracy(&self) -> Result<f64> {
        if self.size == 0 {
            return Err(Error::state("accuracy of an empty result matrix"));
        }
        let last = self.size - 1;
        let mut sum = 0.0;
        for j in 0..self.size {
            sum += self.need(last, j)?;
        }
        Ok(sum / self.size as f64)
    }

    /// Mean of `R[i][j] − R[j][j]` over all `j < i`.
    pub fn bwt(&self) -> Result<f64> {
        let m = self.size;
        if m < 2 {
            return Err(Error::config("backward transfer needs at least two tasks"));
        }
        let mut sum = 0.0;
        for i in 1..m {
            for j in 0..i {
                sum += self.need(i, j)? - self.need(j, j)?;
            }
        }
        Ok(sum / (m * (m - 1) / 2) as f64)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(sq_dist(a, b))
}

fn directed_hausdorff(a: &Tensor, b: &Tensor) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.rows() {
        let mut best = f64::INFINITY;
        for j in 0..b.rows() {
            best = best.min(sq_dist(a.row(i), b.row(j)));
        }
        worst = worst.max(best);
    }
    math::sqrt(worst)
}

/// Symmetric Hausdorff distance between two point sets (rows).
pub fn hausdorff(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::config("Hausdorff distance of an empty set"));
    }
    if a.row_len() != b.row_len() {
        return Err(Error::shape(format!(
            "points of width {} and {}",
            a.row_len(),
            b.row_len()
        )));
    }
    Ok(directed_hausdorff(a, b).max(directed_hausdorff(b, a)))
}

/// Mean per-class Hausdorff distance; `real[k]` and `generated[k]` are the
/// embeddings of the same class.
pub fn coverage_hausdorff(real: &[Tensor], generated: &[Tensor]) -> Result<f64> {
    if real.is_empty() {
        return Err(Error::config("coverage over an empty class set"));
    }
    if real.len() != generated.len() {
        return Err(Error::shape(format!(
            "{} real classes but {} generated",
            real.len(),
            generated.len()
        )));
    }
    let mut sum = 0.0;
    for (a, b) in real.iter().zip(generated) {
        sum += hausdorff(a, b)?;
    }
    Ok(sum / real.len() as f64)
}

/// Mean cosine similarity (×100) between `E_c(images)` under the current
/// model and the stored `embeddings`.
pub fn generation_quality(
    images: &Tensor,
    embeddings: &Tensor,
    model: &ContinualModel,
) -> Result<f64> {
    if images.rows() == 0 {
        return Err(Error::config("generation quality of an empty memory"));
    }
    if images.rows() != embeddings.rows() {
        return Err(Error::shape("images and embeddings differ in count"));
    }
    let current = model.encode_classify(images)?;
    let sum: f64 = (0..current.rows())
        .map(|i| cosine_similarity(current.row(i), embeddings.row(i)))
        .sum();
    Ok(100.0 * sum / current.rows() as f64)
}

/// Floats held for rehearsal by each method.
///
/// Replay stores `M·S` images, ER additionally stores one embedding per
/// image, PRER keeps its generator (decoder, `f_r` and flow) whose size is
/// passed as `model_params`.
pub fn memory_footprint(
    strategy: Strategy,
    tasks: u64,
    per_task: u64,
    image_len: u64,
    embedding_len: u64,
    model_params: u64,
) -> u64 {
    match strategy {
        Strategy::Naive => 0,
        Strategy::Replay => tasks * per_task * image_len,
        Strategy::Er => tasks * per_task * (image_len + embedding_len),
        Strategy::Prer | Strategy::PrerR => model_params,
    }
}

/// Mean and population standard deviation; `(0, 0)` for no values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, math::sqrt(var))
}

/// Percentage of rows whose argmax matches `labels`.
pub fn percent_correct(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
    100.0 * hits as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(rows: &[[f64; 2]]) -> Tensor {
        Tensor::from_rows(rows, 2).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        let r = ResultMatrix::from_rows(&[vec![100.0], vec![100.0, 100.0]]).unwrap();
        assert_eq!(r.accuracy().unwrap(), 100.0);
        let r = ResultMatrix::from_rows(&[vec![95.0], vec![80.0, 90.0]]).unwrap();
        assert_eq!(r.accuracy().unwrap(), 85.0);
    }

    #[test]
    fn bwt_examples() {
        let r = ResultMatrix::from_rows(&[vec![90.0], vec![80.0, 99.0]]).unwrap();
        assert_eq!(r.bwt().unwrap(), -10.0);
        let r = ResultMatrix::from_rows(&[
            vec![70.0],
            vec![70.0, 60.0],
            vec![70.0, 60.0, 50.0],
        ])
        .unwrap();
        assert_eq!(r.bwt().unwrap(), 0.0);
        assert!(ResultMatrix::from_rows(&[vec![50.0]]).unwrap().bwt().is_err());
    }

    #[test]
    fn incomplete_rows_are_errors() {
        let mut r = ResultMatrix::new(2);
        r.set(0, 0, 50.0).unwrap();
        assert!(r.accuracy().is_err());
        assert!(r.bwt().is_err());
        assert!(r.set(0, 0, 101.0).is_err());
        assert!(r.set(2, 0, 1.0).is_err());
    }

    #[test]
    fn hausdorff_examples() {
        let a = pts(&[[0.0, 0.0]]);
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        assert_eq!(hausdorff(&a, &pts(&[[3.0, 4.0]])).unwrap(), 5.0);
        assert_eq!(
            hausdorff(&pts(&[[0.0, 0.0], [1.0, 0.0]]), &a).unwrap(),
            1.0
        );
        assert!(coverage_hausdorff(&[], &[]).is_err());
        let c = coverage_hausdorff(
            &[a.clone(), a.clone()],
            &[pts(&[[3.0, 4.0]]), a.clone()],
        )
        .unwrap();
        assert_eq!(c, 2.5);
    }

    #[test]
    fn footprints() {
        assert_eq!(memory_footprint(Strategy::Er, 5, 200, 3072, 200, 0), 3_272_000);
        assert_eq!(memory_footprint(Strategy::Replay, 5, 2000, 3072, 0, 0), 30_720_000);
        assert_eq!(memory_footprint(Strategy::Er, 5, 0, 3072, 200, 0), 0);
        assert_eq!(memory_footprint(Strategy::Prer, 5, 200, 784, 100, 1234), 1234);
        assert_eq!(memory_footprint(Strategy::Naive, 5, 200, 784, 100, 1234), 0);
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }
}

//! Small classifiers used to assign classes to unconditioned samples.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::sq_dist;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_K: usize = 5;

/// Majority vote over the `k` nearest stored points (Euclidean). Ties go to
/// the tied class holding the nearest neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnProbe {
    k: usize,
    points: Tensor,
    labels: Vec<usize>,
}

impl KnnProbe {
    pub fn fit(points: Tensor, labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("k must be positive"));
        }
        if points.rows() == 0 || points.rows() != labels.len() {
            return Err(Error::config("probe needs as many labels as points, and at least one"));
        }
        Ok(Self { k, points, labels })
    }

    pub fn predict_one(&self, x: &[f64]) -> usize {
        let mut d: Vec<(f64, usize)> = (0..self.points.rows())
            .map(|i| (sq_dist(self.points.row(i), x), self.labels[i]))
            .collect();
        let k = self.k.min(d.len());
        d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
        let near = &mut d[..k];
        near.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for &(_, y) in near.iter() {
            *votes.entry(y).or_default() += 1;
        }
        let top = votes.values().copied().max().unwrap_or(0);
        near.iter()
            .map(|&(_, y)| y)
            .find(|y| votes[y] == top)
            .expect("k ≥ 1")
    }

    pub fn predict(&self, x: &Tensor) -> Vec<usize> {
        (0..x.rows()).map(|i| self.predict_one(x.row(i))).collect()
    }
}

/// Class centroids; predicts the class of the nearest centroid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NearestCentroid {
    centroids: BTreeMap<usize, Vec<f64>>,
}

impl NearestCentroid {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.centroids.keys().copied()
    }

    pub fn centroid(&self, class: usize) -> Option<&[f64]> {
        self.centroids.get(&class).map(Vec::as_slice)
    }

    /// Replaces the centroid of every class present in `labels` by the mean
    /// of its points; other classes keep theirs.
    pub fn update(&mut self, points: &Tensor, labels: &[usize]) -> Result<()> {
        if points.rows() != labels.len() {
            return Err(Error::shape("centroid update with mismatched labels"));
        }
        let w = points.row_len();
        let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
        for (i, &y) in labels.iter().enumerate() {
            let e = sums.entry(y).or_insert_with(|| (vec![0.0; w], 0));
            e.0.iter_mut().zip(points.row(i)).for_each(|(s, v)| *s += v);
            e.1 += 1;
        }
        for (y, (mut s, n)) in sums {
            s.iter_mut().for_each(|v| *v /= n as f64);
            self.centroids.insert(y, s);
        }
        Ok(())
    }

    pub fn predict_one(&self, x: &[f64]) -> Option<usize> {
        self.centroids
            .iter()
            .map(|(&y, c)| (sq_dist(c, x), y))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, y)| y)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        (0..x.rows())
            .map(|i| {
                self.predict_one(x.row(i))
                    .ok_or_else(|| Error::state("nearest-centroid probe has no classes"))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knn_majority_and_tie_break() {
        let pts = Tensor::from_rows(&[[0.0], [0.1], [0.2], [5.0], [5.1]], 1).unwrap();
        let knn = KnnProbe::fit(pts, vec![0, 0, 0, 1, 1], 5).unwrap();
        assert_eq!(knn.predict_one(&[4.9]), 0);
        let pts = Tensor::from_rows(&[[0.0], [1.0], [3.0], [4.0]], 1).unwrap();
        let knn = KnnProbe::fit(pts, vec![0, 0, 1, 1], 4).unwrap();
        assert_eq!(knn.predict_one(&[2.9]), 1);
        assert_eq!(knn.predict_one(&[0.5]), 0);
    }

    #[test]
    fn centroid_updates_are_per_class() {
        let mut nc = NearestCentroid::new();
        assert!(nc.predict(&Tensor::zeros(&[1, 2])).is_err());
        let p = Tensor::from_rows(&[[0.0, 0.0], [2.0, 0.0], [10.0, 10.0]], 2).unwrap();
        nc.update(&p, &[3, 3, 7]).unwrap();
        assert_eq!(nc.centroid(3).unwrap(), &[1.0, 0.0]);
        nc.update(&Tensor::from_rows(&[[-4.0, 0.0]], 2).unwrap(), &[3]).unwrap();
        assert_eq!(nc.centroid(3).unwrap(), &[-4.0, 0.0]);
        assert_eq!(nc.centroid(7).unwrap(), &[10.0, 10.0]);
        assert_eq!(nc.predict_one(&[8.0, 8.0]), Some(7));
    }
}

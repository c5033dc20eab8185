//! Dense row-major `f64` tensors.
//!
//! The leading dimension is the batch dimension wherever a tensor carries
//! samples; a "row" is one sample flattened.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// A single sample as a `1 × n` matrix.
    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Stacks equally sized rows into a `rows.len() × width` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], width: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            let r = r.as_ref();
            if r.len() != width {
                return Err(Error::shape(format!(
                    "row of width {} in a matrix of width {width}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), width], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the leading (batch) dimension.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of values per row.
    pub fn row_len(&self) -> usize {
        if self.shape.is_empty() {
            return 0;
        }
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "add {:?} to {:?}",
                other.shape, self.shape
            )));
        }
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Gathers rows by index, keeping the trailing shape.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let w = self.row_len();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(0);
        }
        shape[0] = idx.len();
        Tensor { shape, data }
    }

    /// Concatenates two matrices along columns.
    pub fn concat_cols(&self, other: &Tensor) -> Result<Tensor> {
        if self.rows() != other.rows() {
            return Err(Error::shape(format!(
                "concat of {} rows with {} rows",
                self.rows(),
                other.rows()
            )));
        }
        let (wa, wb) = (self.row_len(), other.row_len());
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for i in 0..self.rows() {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Tensor::new(vec![self.rows(), wa + wb], data)
    }

    /// Splits a matrix into its first `left` columns and the rest.
    pub fn split_cols(&self, left: usize) -> (Tensor, Tensor) {
        let n = self.rows();
        let w = self.row_len();
        let right = w - left;
        let mut a = Vec::with_capacity(n * left);
        let mut b = Vec::with_capacity(n * right);
        for i in 0..n {
            let r = self.row(i);
            a.extend_from_slice(&r[..left]);
            b.extend_from_slice(&r[left..]);
        }
        (
            Tensor {
                shape: vec![n, left],
                data: a,
            },
            Tensor {
                shape: vec![n, right],
                data: b,
            },
        )
    }

    /// Appends the rows of `other`; trailing shapes must agree.
    pub fn append_rows(&mut self, other: &Tensor) -> Result<()> {
        if self.shape.is_empty() {
            *self = other.clone();
            return Ok(());
        }
        if self.shape[1..] != other.shape[1..] {
            return Err(Error::shape(format!(
                "append {:?} to {:?}",
                other.shape, self.shape
            )));
        }
        self.data.extend_from_slice(&other.data);
        self.shape[0] += other.rows();
        Ok(())
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// One-hot rows for the given class indices.
pub fn one_hot(classes: &[usize], width: usize) -> Tensor {
    let mut t = Tensor::zeros(&[classes.len(), width]);
    for (i, &c) in classes.iter().enumerate() {
        t.row_mut(i)[c] = 1.0;
    }
    t
}

//! Dense 2-D `f32` tensors and the handful of kernels the rest of the crate
//! is built on.
//!
//! Storage is `f32`, row-major. Reductions (matmul, norms, softmax) accumulate
//! in `f64` with a fixed left-to-right order so a given build always produces
//! the same bits for the same inputs.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// One value per row (reduce across columns).
    Row,
    /// One value per column (reduce across rows).
    Col,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    Asc,
    Desc,
}

impl Tensor2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "tensor data has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// A `1 x n` tensor holding `values`.
    pub fn row_vector(values: Vec<f32>) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Tensor2D) -> Result<Tensor2D> {
        matmul(self, other)
    }

    /// `W x` for a row-major `W` of shape `out x in`.
    pub fn matvec(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.cols {
            return Err(Error::invalid(format!(
                "matvec: vector length {} does not match {} columns",
                x.len(),
                self.cols
            )));
        }
        Ok(self.data.chunks_exact(self.cols).map(|row| dot(row, x) as f32).collect())
    }

    /// `x W` for a row-major `W` of shape `in x out`.
    pub fn vecmat(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.rows {
            return Err(Error::invalid(format!(
                "vecmat: vector length {} does not match {} rows",
                x.len(),
                self.rows
            )));
        }
        let mut acc = vec![0f64; self.cols];
        for (xi, row) in x.iter().zip(self.data.chunks_exact(self.cols)) {
            let xi = *xi as f64;
            for (a, &w) in acc.iter_mut().zip(row) {
                *a += xi * w as f64;
            }
        }
        Ok(acc.into_iter().map(|v| v as f32).collect())
    }
}

/// Left-to-right `f64` dot product.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0f64;
    for (&x, &y) in a.iter().zip(b) {
        acc += x as f64 * y as f64;
    }
    acc
}

pub fn matmul(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.cols != b.rows {
        return Err(Error::invalid(format!(
            "matmul: inner dimensions differ ({}x{} vs {}x{})",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = Vec::with_capacity(m * n);
    let mut acc = vec![0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        // Summation over k runs strictly in increasing order for every (i, j).
        for p in 0..k {
            let aip = a.data[i * k + p] as f64;
            let brow = &b.data[p * n..(p + 1) * n];
            for (s, &bv) in acc.iter_mut().zip(brow) {
                *s += aip * bv as f64;
            }
        }
        out.extend(acc.iter().map(|&v| v as f32));
    }
    Ok(Tensor2D {
        rows: m,
        cols: n,
        data: out,
    })
}

pub fn axis_l2_norms(t: &Tensor2D, axis: Axis) -> Result<Vec<f64>> {
    if t.is_empty() {
        return Err(Error::invalid("axis_l2_norms: empty tensor"));
    }
    let norms = match axis {
        Axis::Row => t
            .data
            .chunks_exact(t.cols)
            .map(|row| row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt())
            .collect(),
        Axis::Col => {
            let mut acc = vec![0f64; t.cols];
            for row in t.data.chunks_exact(t.cols) {
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += (v as f64) * (v as f64);
                }
            }
            acc.into_iter().map(f64::sqrt).collect()
        }
    };
    Ok(norms)
}

/// Max-shifted softmax. Works in `f64` internally.
pub fn softmax(v: &[f32]) -> Vec<f32> {
    softmax_f64(&v.iter().map(|&x| x as f64).collect::<Vec<_>>())
        .into_iter()
        .map(|p| p as f32)
        .collect()
}

pub fn softmax_f64(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log(softmax(v))` evaluated as `v - max - log(sum(exp(v - max)))`.
pub fn log_softmax_f64(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    v.iter().map(|&x| x - max - lse).collect()
}

/// Stable index sort. Ties keep their original relative order in both
/// directions.
pub fn stable_argsort(v: &[f32], order: Order) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    match order {
        Order::Asc => idx.sort_by(|&a, &b| v[a].total_cmp(&v[b])),
        Order::Desc => idx.sort_by(|&a, &b| v[b].total_cmp(&v[a])),
    }
    idx
}

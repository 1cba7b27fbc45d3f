use crate::error::{Error, Result};
use crate::tensor::{matmul, stable_argsort, Order, Tensor2D};

/// Slack added before flooring `ratio * numel`, so grid ratios such as
/// `0.3 * 10` that land a hair below an integer still round to it.
const COUNT_EPS: f64 = 1e-9;

/// `floor(ratio * n)`, clamped to `n`.
pub fn prune_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64 + COUNT_EPS).floor() as usize).min(n)
}

/// Which weights compete with each other for survival.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Granularity {
    /// One ranking over the whole matrix; achieved sparsity equals the ratio.
    #[default]
    Matrix,
    /// An independent ranking per output row.
    PerRow,
}

/// Keep (`true`) / prune (`false`) flags, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl BinaryMask {
    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            keep: vec![true; rows * cols],
        }
    }

    pub fn from_keep(rows: usize, cols: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != rows * cols {
            return Err(Error::invalid(format!(
                "mask has {} entries, expected {rows}x{cols}",
                keep.len()
            )));
        }
        Ok(Self { rows, cols, keep })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn numel(&self) -> usize {
        self.keep.len()
    }

    pub fn keeps(&self, i: usize, j: usize) -> bool {
        self.keep[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.keep
    }

    pub fn zeros(&self) -> usize {
        self.keep.iter().filter(|k| !**k).count()
    }

    pub fn sparsity(&self) -> f64 {
        if self.keep.is_empty() {
            0.0
        } else {
            self.zeros() as f64 / self.numel() as f64
        }
    }

    /// The mask as a 0/1 tensor.
    pub fn to_tensor(&self) -> Tensor2D {
        Tensor2D::new(
            self.rows,
            self.cols,
            self.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask shape")
    }

    /// `M ⊙ W`. Kept entries are copied bit for bit.
    pub fn apply(&self, w: &Tensor2D) -> Result<Tensor2D> {
        if w.shape() != self.shape() {
            return Err(Error::invalid(format!(
                "mask shape {:?} does not match weight shape {:?}",
                self.shape(),
                w.shape()
            )));
        }
        let data = w
            .data()
            .iter()
            .zip(&self.keep)
            .map(|(&v, &k)| if k { v } else { 0.0 })
            .collect();
        Tensor2D::new(w.rows(), w.cols(), data)
    }
}

pub fn select_mask(scores: &Tensor2D, ratio: f64) -> Result<BinaryMask> {
    select_mask_with(scores, ratio, Granularity::Matrix)
}

/// Prunes the `floor(ratio * n)` lowest scores of each comparison group.
/// Ties go to the lower row-major index first.
pub fn select_mask_with(scores: &Tensor2D, ratio: f64, granularity: Granularity) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("sparsity ratio {ratio} outside [0, 1]")));
    }
    let (rows, cols) = scores.shape();
    let mut keep = vec![true; rows * cols];
    match granularity {
        Granularity::Matrix => {
            let k = prune_count(ratio, scores.numel());
            for idx in stable_argsort(scores.data(), Order::Asc).into_iter().take(k) {
                keep[idx] = false;
            }
        }
        Granularity::PerRow => {
            let k = prune_count(ratio, cols);
            for i in 0..rows {
                for j in stable_argsort(scores.row(i), Order::Asc).into_iter().take(k) {
                    keep[i * cols + j] = false;
                }
            }
        }
    }
    Ok(BinaryMask { rows, cols, keep })
}

/// `||W X - (M ⊙ W) X||_F^2`
pub fn reconstruction_loss(w: &Tensor2D, x: &Tensor2D, mask: &BinaryMask) -> Result<f64> {
    if w.cols() != x.rows() {
        return Err(Error::invalid(format!(
            "weight {:?} and input {:?} do not conform",
            w.shape(),
            x.shape()
        )));
    }
    let dense = matmul(w, x)?;
    let pruned = matmul(&mask.apply(w)?, x)?;
    Ok(dense
        .data()
        .iter()
        .zip(pruned.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum())
}

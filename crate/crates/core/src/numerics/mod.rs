//! Dense linear algebra and stable elementary operations.

mod matrix;
mod rng;

pub use matrix::{dot, norm, sq_dist, DenseMatrix};
pub use rng::SeededRng;

use crate::error::{KcotError, Result};
use crate::par;

/// Boolean matrix where `true` marks an entry that takes part in a softmax.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn all(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            allowed: vec![true; rows * cols],
        }
    }

    pub fn none(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            allowed: vec![false; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                allowed.push(f(i, j));
            }
        }
        Mask {
            rows,
            cols,
            allowed,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn is_allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, allowed: bool) {
        self.allowed[i * self.cols + j] = allowed;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_has_allowed(&self, i: usize) -> bool {
        self.row(i).iter().any(|&a| a)
    }
}

/// Softmax of one slice, restricted to `allowed` entries (all when `None`).
/// Disabled entries come out as exactly 0. Returns `None` when nothing is
/// enabled.
pub fn softmax_slice(z: &[f64], allowed: Option<&[bool]>, out: &mut [f64]) -> Option<()> {
    let enabled = |j: usize| allowed.is_none_or(|a| a[j]);
    let max = (0..z.len())
        .filter(|&j| enabled(j))
        .map(|j| z[j])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY && !(0..z.len()).any(enabled) {
        return None;
    }
    let mut sum = 0.0;
    for j in 0..z.len() {
        out[j] = if enabled(j) {
            let e = (z[j] - max).exp();
            sum += e;
            e
        } else {
            0.0
        };
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Some(())
}

/// Row-wise softmax with per-row max subtraction. Masked entries are left
/// out of the reduction entirely, so they may hold `±inf`.
pub fn softmax_rows(m: &DenseMatrix, mask: Option<&Mask>) -> Result<DenseMatrix> {
    if let Some(mask) = mask {
        if mask.shape() != m.shape() {
            return Err(KcotError::dims(
                "softmax_rows",
                format!("mask {:?} for matrix {:?}", mask.shape(), m.shape()),
            ));
        }
        if let Some(row) = (0..m.rows()).find(|&i| !mask.row_has_allowed(i)) {
            return Err(KcotError::FullyMaskedRow { row });
        }
    } else if m.cols() == 0 && m.rows() > 0 {
        return Err(KcotError::FullyMaskedRow { row: 0 });
    }
    let mut out = DenseMatrix::zeros(m.rows(), m.cols());
    par::for_each_row_mut(out.data_mut(), m.cols(), |i, row| {
        // Every row was checked above.
        let _ = softmax_slice(m.row(i), mask.map(|mk| mk.row(i)), row);
    });
    Ok(out)
}

/// `D[i][k] = Σ_j (X_ij − Y_kj)²`, computed directly (not via the
/// `‖x‖² − 2x·y + ‖y‖²` expansion) so identical rows give an exact zero.
pub fn pairwise_sq_dists(x: &DenseMatrix, y: &DenseMatrix) -> Result<DenseMatrix> {
    if x.cols() != y.cols() {
        return Err(KcotError::dims(
            "pairwise_sq_dists",
            format!("{} vs {} columns", x.cols(), y.cols()),
        ));
    }
    let mut out = DenseMatrix::zeros(x.rows(), y.rows());
    par::for_each_row_mut(out.data_mut(), y.rows(), |i, row| {
        let xi = x.row(i);
        for (k, o) in row.iter_mut().enumerate() {
            *o = sq_dist(xi, y.row(k));
        }
    });
    Ok(out)
}

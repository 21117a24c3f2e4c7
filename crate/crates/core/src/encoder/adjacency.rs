use crate::error::{KcotError, Result};
use crate::graph::TagGraph;
use crate::numerics::DenseMatrix;
use crate::par;

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` in compressed-row form. Symmetric, so the
/// same structure serves forward and backward passes.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    rows: Vec<Vec<(usize, f64)>>,
}

pub fn normalize_adjacency(g: &TagGraph) -> NormalizedAdjacency {
    let n = g.node_count();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / ((g.degree(i) + 1) as f64).sqrt())
        .collect();
    let rows = (0..n)
        .map(|i| {
            // neighbors are sorted; splice the self-loop in order
            let mut row = Vec::with_capacity(g.degree(i) + 1);
            let mut placed = false;
            for &j in g.neighbors(i) {
                if !placed && j > i {
                    row.push((i, inv_sqrt[i] * inv_sqrt[i]));
                    placed = true;
                }
                row.push((j, inv_sqrt[i] * inv_sqrt[j]));
            }
            if !placed {
                row.push((i, inv_sqrt[i] * inv_sqrt[i]));
            }
            row
        })
        .collect();
    NormalizedAdjacency { rows }
}

impl NormalizedAdjacency {
    pub fn node_count(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// `Â · M`.
    pub fn propagate(&self, m: &DenseMatrix) -> Result<DenseMatrix> {
        if m.rows() != self.rows.len() {
            return Err(KcotError::dims(
                "propagate",
                format!("{} rows for {} nodes", m.rows(), self.rows.len()),
            ));
        }
        let mut out = DenseMatrix::zeros(m.rows(), m.cols());
        par::for_each_row_mut(out.data_mut(), m.cols(), |i, out_row| {
            for &(j, w) in &self.rows[i] {
                for (o, &v) in out_row.iter_mut().zip(m.row(j)) {
                    *o += w * v;
                }
            }
        });
        Ok(out)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.rows.len();
        let mut d = DenseMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                d.set(i, j, w);
            }
        }
        d
    }
}

use std::path::Path;

use super::NormalizedAdjacency;
use crate::error::{KcotError, Result};
use crate::numerics::{DenseMatrix, SeededRng};
use crate::weights_io::WeightsDocument;

const WEIGHTS_KIND: &str = "gcn";

/// `θ¹ … θᴸ`; hidden layers use relu, the last layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnWeights {
    layers: Vec<DenseMatrix>,
}

impl GcnWeights {
    pub fn new(layers: Vec<DenseMatrix>) -> Result<Self> {
        if layers.is_empty() {
            return Err(KcotError::InvalidParameter("GCN needs at least one layer".into()));
        }
        for (l, w) in layers.windows(2).enumerate() {
            if w[0].cols() != w[1].rows() {
                return Err(KcotError::dims(
                    "GcnWeights::new",
                    format!(
                        "layer {l} outputs {} but layer {} expects {}",
                        w[0].cols(),
                        l + 1,
                        w[1].rows()
                    ),
                ));
            }
        }
        Ok(GcnWeights { layers })
    }

    /// Glorot-uniform initialization; `dims = [d_in, d_hidden.., d_out]`.
    pub fn init(dims: &[usize], rng: &mut SeededRng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(KcotError::InvalidParameter(
                "need input and output dimensions".into(),
            ));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let a = (6.0 / (w[0] + w[1]) as f64).sqrt();
                DenseMatrix::from_fn(w[0], w[1], |_, _| rng.uniform_in(-a, a))
            })
            .collect();
        Self::new(layers)
    }

    pub fn zeros_like(&self) -> Self {
        GcnWeights {
            layers: self
                .layers
                .iter()
                .map(|w| DenseMatrix::zeros(w.rows(), w.cols()))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[DenseMatrix] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().cols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|w| w.data().len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|w| w.data().iter().copied())
            .collect()
    }

    pub fn from_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.param_count() {
            return Err(KcotError::dims(
                "GcnWeights::from_flat",
                format!("{} values for {} parameters", flat.len(), self.param_count()),
            ));
        }
        let mut at = 0;
        let layers = self
            .layers
            .iter()
            .map(|w| {
                let len = w.data().len();
                let m = DenseMatrix::from_vec(w.rows(), w.cols(), flat[at..at + len].to_vec());
                at += len;
                m
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GcnWeights { layers })
    }

    /// `self -= lr * grad`.
    pub fn step(&mut self, grad: &GcnWeights, lr: f64) -> Result<()> {
        for (w, g) in self.layers.iter_mut().zip(&grad.layers) {
            w.axpy(-lr, g)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let refs: Vec<&DenseMatrix> = self.layers.iter().collect();
        WeightsDocument::new(WEIGHTS_KIND, &refs).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(WeightsDocument::load(path)?.into_matrices(WEIGHTS_KIND)?)
    }
}

/// Intermediates kept by [`gcn_forward_traced`] for the backward pass.
#[derive(Clone, Debug)]
pub struct GcnTrace {
    /// `Â Hˡ` for each layer.
    propagated: Vec<DenseMatrix>,
    /// `Â Hˡ θˡ` for each layer.
    pre_activation: Vec<DenseMatrix>,
}

/// `H^{l+1} = relu(Â H^l θ^l)` for hidden layers, linear output layer.
pub fn gcn_forward(
    x: &DenseMatrix,
    adj: &NormalizedAdjacency,
    weights: &GcnWeights,
) -> Result<DenseMatrix> {
    Ok(gcn_forward_traced(x, adj, weights)?.0)
}

pub fn gcn_forward_traced(
    x: &DenseMatrix,
    adj: &NormalizedAdjacency,
    weights: &GcnWeights,
) -> Result<(DenseMatrix, GcnTrace)> {
    if x.cols() != weights.input_dim() {
        return Err(KcotError::dims(
            "gcn_forward",
            format!("features have {} columns, encoder expects {}", x.cols(), weights.input_dim()),
        ));
    }
    let last = weights.layer_count() - 1;
    let mut propagated = Vec::with_capacity(last + 1);
    let mut pre_activation = Vec::with_capacity(last + 1);
    let mut h = x.clone();
    for (l, theta) in weights.layers.iter().enumerate() {
        let ah = adj.propagate(&h)?;
        let z = ah.matmul(theta)?;
        h = if l < last { z.map(|v| v.max(0.0)) } else { z.clone() };
        propagated.push(ah);
        pre_activation.push(z);
    }
    Ok((
        h,
        GcnTrace {
            propagated,
            pre_activation,
        },
    ))
}

impl GcnTrace {
    /// Smallest |pre-activation| over hidden layers; near zero means a relu
    /// kink sits inside a finite-difference stencil.
    pub fn min_hidden_margin(&self) -> f64 {
        let n = self.pre_activation.len();
        self.pre_activation[..n.saturating_sub(1)]
            .iter()
            .flat_map(|z| z.data().iter())
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Given `∂L/∂H`, returns `(∂L/∂Θ, ∂L/∂X)`.
pub fn gcn_backward(
    adj: &NormalizedAdjacency,
    weights: &GcnWeights,
    trace: &GcnTrace,
    d_out: &DenseMatrix,
) -> Result<(GcnWeights, DenseMatrix)> {
    let last = weights.layer_count() - 1;
    let mut grads = vec![DenseMatrix::zeros(0, 0); last + 1];
    let mut d_h = d_out.clone();
    for l in (0..=last).rev() {
        let d_z = if l < last {
            d_h.zip_map(&trace.pre_activation[l], "relu_backward", |g, z| {
                if z > 0.0 {
                    g
                } else {
                    0.0
                }
            })?
        } else {
            d_h
        };
        grads[l] = trace.propagated[l].t_matmul(&d_z)?;
        let d_ah = d_z.matmul_t(&weights.layers[l])?;
        // Â is symmetric, so Âᵀ·G = Â·G.
        d_h = adj.propagate(&d_ah)?;
    }
    Ok((GcnWeights { layers: grads }, d_h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::normalize_adjacency;
    use crate::gradcheck::{grad_check, nudge_off_kinks};
    use crate::graph::{Splits, TagGraph};

    fn graph(n: usize, edges: &[(usize, usize)]) -> TagGraph {
        TagGraph::new(
            (0..n).map(|i| i.to_string()).collect(),
            edges.iter().copied(),
            None,
            Splits::default(),
        )
        .unwrap()
    }

    #[test]
    fn isolated_node_is_plain_mlp() {
        let g = graph(1, &[]);
        let adj = normalize_adjacency(&g);
        let w = GcnWeights::init(&[3, 4, 2], &mut SeededRng::new(1)).unwrap();
        let x = DenseMatrix::from_rows(&[[0.5, -1.0, 2.0]]).unwrap();
        let h = gcn_forward(&x, &adj, &w).unwrap();
        let manual = x
            .matmul(&w.layers()[0])
            .unwrap()
            .map(|v| v.max(0.0))
            .matmul(&w.layers()[1])
            .unwrap();
        assert!(h.max_abs_diff(&manual).unwrap() < 1e-15);
    }

    #[test]
    fn zero_weights_zero_output() {
        let g = graph(3, &[(0, 1)]);
        let w = GcnWeights::init(&[2, 3, 2], &mut SeededRng::new(1)).unwrap().zeros_like();
        let x = DenseMatrix::filled(3, 2, 1.0);
        let h = gcn_forward(&x, &normalize_adjacency(&g), &w).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn symmetric_pair_gives_equal_rows() {
        let g = graph(2, &[(0, 1)]);
        let w = GcnWeights::init(&[3, 5, 2], &mut SeededRng::new(4)).unwrap();
        let x = DenseMatrix::from_rows(&[[0.2, 0.4, -0.1], [0.2, 0.4, -0.1]]).unwrap();
        let h = gcn_forward(&x, &normalize_adjacency(&g), &w).unwrap();
        assert_eq!(h.row(0), h.row(1));
    }

    #[test]
    fn shape_mismatch() {
        let g = graph(2, &[(0, 1)]);
        let w = GcnWeights::init(&[3, 2], &mut SeededRng::new(4)).unwrap();
        assert!(gcn_forward(&DenseMatrix::zeros(2, 4), &normalize_adjacency(&g), &w).is_err());
        assert!(GcnWeights::new(vec![DenseMatrix::zeros(2, 3), DenseMatrix::zeros(2, 1)]).is_err());
    }

    #[test]
    fn forward_is_bitwise_reproducible() {
        let g = graph(6, &[(0, 1), (1, 2), (3, 4), (4, 5), (2, 3)]);
        let adj = normalize_adjacency(&g);
        let mut rng = SeededRng::new(9);
        let w = GcnWeights::init(&[4, 8, 3], &mut rng).unwrap();
        let x = DenseMatrix::from_fn(6, 4, |_, _| rng.gaussian());
        let a = gcn_forward(&x, &adj, &w).unwrap();
        let b = gcn_forward(&x, &adj, &w).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weight_and_input_gradients_pass_check() {
        let g = graph(7, &[(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (2, 5)]);
        let adj = normalize_adjacency(&g);
        let mut rng = SeededRng::new(17);
        let w0 = GcnWeights::init(&[3, 5, 2], &mut rng).unwrap();
        let x = DenseMatrix::from_fn(7, 3, |_, _| rng.gaussian());
        let target = DenseMatrix::from_fn(7, 2, |_, _| rng.gaussian());
        // L = ½‖H − T‖²
        let loss_w = |flat: &[f64]| {
            let w = w0.from_flat(flat).unwrap();
            let (h, tr) = gcn_forward_traced(&x, &adj, &w).unwrap();
            let d = h.sub(&target).unwrap();
            let (gw, _) = gcn_backward(&adj, &w, &tr, &d).unwrap();
            (0.5 * d.frobenius_sq(), gw.to_flat())
        };
        let theta = nudge_off_kinks(&w0.to_flat(), |flat| {
            let w = w0.from_flat(flat).unwrap();
            gcn_forward_traced(&x, &adj, &w).unwrap().1.min_hidden_margin() < 1e-4
        });
        assert!(grad_check(loss_w, &theta, 1e-6).unwrap() <= 1e-5);

        let loss_x = |flat: &[f64]| {
            let xv = DenseMatrix::from_vec(7, 3, flat.to_vec()).unwrap();
            let (h, tr) = gcn_forward_traced(&xv, &adj, &w0).unwrap();
            let d = h.sub(&target).unwrap();
            let (_, gx) = gcn_backward(&adj, &w0, &tr, &d).unwrap();
            (0.5 * d.frobenius_sq(), gx.into_vec())
        };
        assert!(grad_check(loss_x, x.data(), 1e-6).unwrap() <= 1e-5);
    }

    #[test]
    fn weights_file_round_trip() {
        let w = GcnWeights::init(&[4, 6, 2], &mut SeededRng::new(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.json");
        w.save(&p).unwrap();
        assert_eq!(GcnWeights::load(&p).unwrap(), w);
    }
}

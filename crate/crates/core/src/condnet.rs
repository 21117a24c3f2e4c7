//! Condition-net: maps a per-node reasoning state to a feature-modulation
//! matrix `P = 1 + tanh(relu(z W₁ + b₁) W₂ + b₂)`.

use std::path::Path;

use crate::error::{KcotError, Result};
use crate::numerics::{DenseMatrix, SeededRng};
use crate::weights_io::WeightsDocument;

const WEIGHTS_KIND: &str = "condnet";
pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct CondNetWeights {
    pub w1: DenseMatrix,
    pub b1: DenseMatrix,
    pub w2: DenseMatrix,
    pub b2: DenseMatrix,
}

impl CondNetWeights {
    pub fn new(w1: DenseMatrix, b1: DenseMatrix, w2: DenseMatrix, b2: DenseMatrix) -> Result<Self> {
        let ok = b1.shape() == (1, w1.cols())
            && w2.rows() == w1.cols()
            && b2.shape() == (1, w2.cols());
        if !ok {
            return Err(KcotError::dims(
                "CondNetWeights::new",
                format!(
                    "W1 {:?}, b1 {:?}, W2 {:?}, b2 {:?}",
                    w1.shape(),
                    b1.shape(),
                    w2.shape(),
                    b2.shape()
                ),
            ));
        }
        Ok(CondNetWeights { w1, b1, w2, b2 })
    }

    /// Glorot-uniform first layer; the output layer starts at zero so that
    /// `P ≡ 1` before training.
    pub fn init(input_dim: usize, hidden: usize, output_dim: usize, rng: &mut SeededRng) -> Self {
        let a = (6.0 / (input_dim + hidden) as f64).sqrt();
        CondNetWeights {
            w1: DenseMatrix::from_fn(input_dim, hidden, |_, _| rng.uniform_in(-a, a)),
            b1: DenseMatrix::zeros(1, hidden),
            w2: DenseMatrix::zeros(hidden, output_dim),
            b2: DenseMatrix::zeros(1, output_dim),
        }
    }

    /// Glorot-uniform in both layers (used for tests and diagnostics).
    pub fn init_random(input_dim: usize, hidden: usize, output_dim: usize, rng: &mut SeededRng) -> Self {
        let mut w = Self::init(input_dim, hidden, output_dim, rng);
        let a = (6.0 / (hidden + output_dim) as f64).sqrt();
        w.w2 = DenseMatrix::from_fn(hidden, output_dim, |_, _| rng.uniform_in(-a, a));
        w.b1 = DenseMatrix::from_fn(1, hidden, |_, _| rng.uniform_in(-0.1, 0.1));
        w.b2 = DenseMatrix::from_fn(1, output_dim, |_, _| rng.uniform_in(-0.1, 0.1));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.cols()
    }

    fn parts(&self) -> [&DenseMatrix; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &DenseMatrix| DenseMatrix::zeros(m.rows(), m.cols());
        CondNetWeights {
            w1: z(&self.w1),
            b1: z(&self.b1),
            w2: z(&self.w2),
            b2: z(&self.b2),
        }
    }

    pub fn param_count(&self) -> usize {
        self.parts().iter().map(|m| m.data().len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.parts()
            .iter()
            .flat_map(|m| m.data().iter().copied())
            .collect()
    }

    pub fn from_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.param_count() {
            return Err(KcotError::dims(
                "CondNetWeights::from_flat",
                format!("{} values for {} parameters", flat.len(), self.param_count()),
            ));
        }
        let mut at = 0;
        let mut take = |m: &DenseMatrix| {
            let len = m.data().len();
            let out = DenseMatrix::from_vec(m.rows(), m.cols(), flat[at..at + len].to_vec());
            at += len;
            out
        };
        Ok(CondNetWeights {
            w1: take(&self.w1)?,
            b1: take(&self.b1)?,
            w2: take(&self.w2)?,
            b2: take(&self.b2)?,
        })
    }

    /// `self -= lr * grad`.
    pub fn step(&mut self, grad: &CondNetWeights, lr: f64) -> Result<()> {
        self.w1.axpy(-lr, &grad.w1)?;
        self.b1.axpy(-lr, &grad.b1)?;
        self.w2.axpy(-lr, &grad.w2)?;
        self.b2.axpy(-lr, &grad.b2)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        WeightsDocument::new(WEIGHTS_KIND, &self.parts()).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mats = WeightsDocument::load(path)?.into_matrices(WEIGHTS_KIND)?;
        let [w1, b1, w2, b2]: [DenseMatrix; 4] = mats.try_into().map_err(|m: Vec<_>| {
            KcotError::Config(format!("condnet weights need 4 tensors, found {}", m.len()))
        })?;
        Self::new(w1, b1, w2, b2)
    }
}

#[derive(Clone, Debug)]
pub struct CondNetTrace {
    z: DenseMatrix,
    pre_hidden: DenseMatrix,
    hidden: DenseMatrix,
    /// `tanh(·)` of the output layer.
    activation: DenseMatrix,
}

impl CondNetTrace {
    pub fn min_hidden_margin(&self) -> f64 {
        self.pre_hidden
            .data()
            .iter()
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn condnet_forward(z: &DenseMatrix, phi: &CondNetWeights) -> Result<DenseMatrix> {
    Ok(condnet_forward_traced(z, phi)?.0)
}

pub fn condnet_forward_traced(
    z: &DenseMatrix,
    phi: &CondNetWeights,
) -> Result<(DenseMatrix, CondNetTrace)> {
    if z.cols() != phi.input_dim() {
        return Err(KcotError::dims(
            "condnet_forward",
            format!("state has {} columns, condition-net expects {}", z.cols(), phi.input_dim()),
        ));
    }
    let pre_hidden = z.matmul(&phi.w1)?.add_row_vector(phi.b1.data())?;
    let hidden = pre_hidden.map(|v| v.max(0.0));
    let activation = hidden
        .matmul(&phi.w2)?
        .add_row_vector(phi.b2.data())?
        .map(f64::tanh);
    let p = activation.map(|t| 1.0 + t);
    Ok((
        p,
        CondNetTrace {
            z: z.clone(),
            pre_hidden,
            hidden,
            activation,
        },
    ))
}

/// Given `∂L/∂P`, returns `(∂L/∂φ, ∂L/∂z)`.
pub fn condnet_backward(
    phi: &CondNetWeights,
    trace: &CondNetTrace,
    d_p: &DenseMatrix,
) -> Result<(CondNetWeights, DenseMatrix)> {
    if d_p.shape() != trace.activation.shape() {
        return Err(KcotError::dims(
            "condnet_backward",
            format!("gradient {:?} vs output {:?}", d_p.shape(), trace.activation.shape()),
        ));
    }
    let d_out = d_p.zip_map(&trace.activation, "condnet_backward", |g, t| g * (1.0 - t * t))?;
    let g_w2 = trace.hidden.t_matmul(&d_out)?;
    let g_b2 = DenseMatrix::from_vec(1, d_out.cols(), d_out.column_sums())?;
    let d_hidden = d_out
        .matmul_t(&phi.w2)?
        .zip_map(&trace.pre_hidden, "condnet_backward", |g, a| if a > 0.0 { g } else { 0.0 })?;
    let g_w1 = trace.z.t_matmul(&d_hidden)?;
    let g_b1 = DenseMatrix::from_vec(1, d_hidden.cols(), d_hidden.column_sums())?;
    let d_z = d_hidden.matmul_t(&phi.w1)?;
    Ok((
        CondNetWeights {
            w1: g_w1,
            b1: g_b1,
            w2: g_w2,
            b2: g_b2,
        },
        d_z,
    ))
}

/// `P ⊙ X`.
pub fn modulate(x: &DenseMatrix, p: &DenseMatrix) -> Result<DenseMatrix> {
    if x.shape() != p.shape() {
        return Err(KcotError::dims(
            "modulate",
            format!("features {:?} vs modulation {:?}", x.shape(), p.shape()),
        ));
    }
    x.hadamard(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, nudge_off_kinks};
    use proptest::prelude::*;

    fn random(rows: usize, cols: usize, rng: &mut SeededRng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gaussian())
    }

    #[test]
    fn zero_output_layer_is_identity() {
        let mut rng = SeededRng::new(1);
        let phi = CondNetWeights::init(8, 16, 5, &mut rng);
        let z = random(7, 8, &mut rng);
        let p = condnet_forward(&z, &phi).unwrap();
        assert!(p.data().iter().all(|&v| v == 1.0));
        let x = random(7, 5, &mut rng);
        assert_eq!(modulate(&x, &p).unwrap(), x);
    }

    #[test]
    fn modulate_hand_instance() {
        let x = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let p = DenseMatrix::from_rows(&[[0.5, 2.0], [1.0, 0.25]]).unwrap();
        assert_eq!(modulate(&x, &p).unwrap().data(), &[0.5, 4.0, 3.0, 1.0]);
        assert!(modulate(&x, &DenseMatrix::zeros(2, 2)).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(modulate(&x, &DenseMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut rng = SeededRng::new(2);
        let phi = CondNetWeights::init(4, 3, 2, &mut rng);
        assert!(condnet_forward(&DenseMatrix::zeros(2, 5), &phi).is_err());
        assert!(CondNetWeights::new(
            DenseMatrix::zeros(4, 3),
            DenseMatrix::zeros(1, 2),
            DenseMatrix::zeros(3, 2),
            DenseMatrix::zeros(1, 2)
        )
        .is_err());
    }

    #[test]
    fn gradient_through_condnet_and_modulate() {
        let mut rng = SeededRng::new(48);
        let z = random(4, 8, &mut rng);
        let x = random(4, 3, &mut rng);
        let c = random(4, 3, &mut rng);
        let phi0 = CondNetWeights::init_random(8, 6, 3, &mut rng);
        let loss = |phi: &CondNetWeights, z: &DenseMatrix| {
            let (p, tr) = condnet_forward_traced(z, phi).unwrap();
            let xn = modulate(&x, &p).unwrap();
            let l: f64 = xn.data().iter().zip(c.data()).map(|(a, b)| a * b).sum();
            let d_p = c.hadamard(&x).unwrap();
            let (g, dz) = condnet_backward(phi, &tr, &d_p).unwrap();
            (l, g, dz, tr.min_hidden_margin())
        };
        let theta = nudge_off_kinks(&phi0.to_flat(), |t| loss(&phi0.from_flat(t).unwrap(), &z).3 < 1e-4);
        let err = grad_check(
            |t| {
                let (l, g, _, _) = loss(&phi0.from_flat(t).unwrap(), &z);
                (l, g.to_flat())
            },
            &theta,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-5, "{err}");
        let phi = phi0.from_flat(&theta).unwrap();
        let err = grad_check(
            |t| {
                let zz = DenseMatrix::from_vec(4, 8, t.to_vec()).unwrap();
                let (l, _, dz, _) = loss(&phi, &zz);
                (l, dz.into_vec())
            },
            z.data(),
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-5, "{err}");
    }

    #[test]
    fn weights_round_trip() {
        let mut rng = SeededRng::new(5);
        let phi = CondNetWeights::init_random(6, 4, 3, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phi.json");
        phi.save(&path).unwrap();
        assert_eq!(CondNetWeights::load(&path).unwrap(), phi);
    }

    proptest! {
        #[test]
        fn output_in_open_interval_and_row_decomposable(seed in 0u64..500) {
            let mut rng = SeededRng::new(seed);
            let phi = CondNetWeights::init_random(6, 5, 4, &mut rng);
            let z = random(5, 6, &mut rng);
            let p = condnet_forward(&z, &phi).unwrap();
            prop_assert!(p.data().iter().all(|&v| v > 0.0 && v < 2.0));
            let perm = [3, 0, 4, 1, 2];
            let pp = condnet_forward(&z.select_rows(&perm), &phi).unwrap();
            prop_assert_eq!(pp, p.select_rows(&perm));
        }
    }
}

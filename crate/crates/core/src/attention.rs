//! Single-head self-attention with an additive key bias, and the explicit
//! parameterization under which its data-to-center weights equal soft
//! k-means assignments.
//!
//! Token layout for the construction: data tokens occupy `[0, n)`, center
//! tokens `[n, n + K)`. With `W_Q = 2I`, `W_K = I` and key bias
//! `b_{n+k} = −‖μ_k‖²`, the score of data query `i` on center key `k` is
//! `2 xᵢ·μ_k − ‖μ_k‖² = −‖xᵢ − μ_k‖² + ‖xᵢ‖²`, and the last term is constant
//! along the row, so it drops out of the softmax.

use crate::cluster::{centroid_update, soft_assign};
use crate::error::{KcotError, Result};
use serde::Serialize;

use crate::numerics::{norm, softmax_rows, DenseMatrix, Mask, SeededRng};
use crate::par;

#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub w_q: DenseMatrix,
    pub w_k: DenseMatrix,
    pub w_v: DenseMatrix,
    /// One additive bias per key token; `B_ij = b_j`.
    pub key_bias: Vec<f64>,
    pub temperature: f64,
    /// `true` where query `i` may attend to key `j`.
    pub mask: Mask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenLayout {
    pub n_data: usize,
    pub n_centers: usize,
}

impl TokenLayout {
    pub fn new(n_data: usize, n_centers: usize) -> Result<Self> {
        if n_data == 0 || n_centers == 0 {
            return Err(KcotError::InvalidParameter(format!(
                "token layout needs at least one data and one center token, got {n_data}/{n_centers}"
            )));
        }
        Ok(TokenLayout { n_data, n_centers })
    }

    pub fn total(&self) -> usize {
        self.n_data + self.n_centers
    }

    pub fn center_index(&self, k: usize) -> usize {
        self.n_data + k
    }
}

#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub weights: DenseMatrix,
    pub output: DenseMatrix,
}

impl AttentionParams {
    fn validate(&self, tokens: usize, dim: usize) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(KcotError::InvalidParameter(format!(
                "attention temperature must be positive, got {}",
                self.temperature
            )));
        }
        for (name, w) in [("W_Q", &self.w_q), ("W_K", &self.w_k), ("W_V", &self.w_v)] {
            if w.rows() != dim {
                return Err(KcotError::dims(
                    "attention_forward",
                    format!("{name} has {} rows for model dim {dim}", w.rows()),
                ));
            }
        }
        if self.w_q.cols() != self.w_k.cols() {
            return Err(KcotError::dims(
                "attention_forward",
                "W_Q and W_K project to different widths",
            ));
        }
        if self.key_bias.len() != tokens || self.mask.shape() != (tokens, tokens) {
            return Err(KcotError::dims(
                "attention_forward",
                format!(
                    "bias length {} / mask {:?} for {tokens} tokens",
                    self.key_bias.len(),
                    self.mask.shape()
                ),
            ));
        }
        Ok(())
    }
}

/// `weights = softmax_rows((X W_Q (X W_K)ᵀ + B) / τ, mask)`,
/// `output = weights · X W_V`.
pub fn attention_forward(x: &DenseMatrix, params: &AttentionParams) -> Result<AttentionOutput> {
    params.validate(x.rows(), x.cols())?;
    if !x.is_finite() {
        return Err(KcotError::NonFinite("attention input".into()));
    }
    let q = x.matmul(&params.w_q)?;
    let k = x.matmul(&params.w_k)?;
    let v = x.matmul(&params.w_v)?;
    let mut scores = q.matmul_t(&k)?;
    let tau = params.temperature;
    for i in 0..scores.rows() {
        for (j, s) in scores.row_mut(i).iter_mut().enumerate() {
            *s = (*s + params.key_bias[j]) / tau;
        }
    }
    let weights = softmax_rows(&scores, Some(&params.mask))?;
    let output = weights.matmul(&v)?;
    Ok(AttentionOutput { weights, output })
}

/// Parameters for `n_data` data tokens followed by the given centers.
/// Data queries see only center keys; center-query rows get a single
/// self-key so the softmax stays defined, and are ignored downstream.
pub fn build_kmeans_attention(
    n_data: usize,
    centroids: &DenseMatrix,
    tau: f64,
) -> Result<(AttentionParams, TokenLayout)> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(KcotError::InvalidParameter(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let layout = TokenLayout::new(n_data, centroids.rows())?;
    let d = centroids.cols();
    let total = layout.total();
    let mut key_bias = vec![0.0; total];
    for k in 0..layout.n_centers {
        let nk = norm(centroids.row(k));
        key_bias[layout.center_index(k)] = -(nk * nk);
    }
    let mask = Mask::from_fn(total, total, |i, j| {
        if i < n_data {
            j >= n_data
        } else {
            i == j
        }
    });
    let params = AttentionParams {
        w_q: DenseMatrix::identity(d).scale(2.0),
        w_k: DenseMatrix::identity(d),
        w_v: DenseMatrix::identity(d),
        key_bias,
        temperature: tau,
        mask,
    };
    Ok((params, layout))
}

/// Runs the constructed attention over `[X_data; centroids]` and returns the
/// `n × K` block of data-query / center-key weights.
pub fn attention_assignments(
    x_data: &DenseMatrix,
    centroids: &DenseMatrix,
    tau: f64,
) -> Result<DenseMatrix> {
    if x_data.cols() != centroids.cols() {
        return Err(KcotError::dims(
            "attention_assignments",
            format!("{} vs {} columns", x_data.cols(), centroids.cols()),
        ));
    }
    let (params, layout) = build_kmeans_attention(x_data.rows(), centroids, tau)?;
    let tokens = x_data.vstack(centroids)?;
    let out = attention_forward(&tokens, &params)?;
    Ok(DenseMatrix::from_fn(layout.n_data, layout.n_centers, |i, k| {
        out.weights.get(i, layout.center_index(k))
    }))
}

/// `‖A_attn − A_kmeans‖_∞` for one instance.
pub fn verify_assignment_equivalence(
    x_data: &DenseMatrix,
    centroids: &DenseMatrix,
    tau: f64,
) -> Result<f64> {
    let attn = attention_assignments(x_data, centroids, tau)?;
    let reference = soft_assign(x_data, centroids, tau)?;
    attn.max_abs_diff(&reference)
}

/// One random instance of the verification sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepTrial {
    pub trial: usize,
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub tau: f64,
    pub max_diff: f64,
}

pub const SWEEP_TEMPERATURES: [f64; 3] = [0.1, 1.0, 10.0];

/// Random instance `trial` of the sweep: `K ≤ 16`, `K ≤ n ≤ 200`, `d ≤ 32`,
/// Gaussian data, centroids drawn as jittered data rows.
pub fn sweep_instance(seed: u64, trial: usize) -> (DenseMatrix, DenseMatrix, f64) {
    let mut rng = SeededRng::new(seed).derive(trial as u64);
    let k = 1 + rng.below(16);
    let n = k + rng.below(201 - k);
    let d = 1 + rng.below(32);
    let tau = SWEEP_TEMPERATURES[rng.below(SWEEP_TEMPERATURES.len())];
    let scale = rng.uniform_in(0.5, 5.0);
    let x = DenseMatrix::from_fn(n, d, |_, _| scale * rng.gaussian());
    let rows = rng.sample_indices(n, k);
    let mu = DenseMatrix::from_fn(k, d, |c, j| x.get(rows[c], j) + 0.1 * scale * rng.gaussian());
    (x, mu, tau)
}

/// Checks the assignment equivalence on `trials` seeded random instances.
pub fn verification_sweep(trials: usize, seed: u64) -> Result<Vec<SweepTrial>> {
    par::try_map_range(trials, |trial| {
        let (x, mu, tau) = sweep_instance(seed, trial);
        Ok(SweepTrial {
            trial,
            n: x.rows(),
            k: mu.rows(),
            d: x.cols(),
            tau,
            max_diff: verify_assignment_equivalence(&x, &mu, tau)?,
        })
    })
}

#[derive(Clone, Debug)]
pub struct AttentionClusterStep {
    pub assignments: DenseMatrix,
    pub centroids: DenseMatrix,
}

/// `steps` rounds of: assignment from the constructed attention layer over
/// `[X_data; μ]`, then the responsibility-weighted centroid update. Updated
/// centroids are re-stacked as the center tokens of the next round.
pub fn iterated_attention_clustering(
    x_data: &DenseMatrix,
    centroids0: &DenseMatrix,
    tau: f64,
    steps: usize,
) -> Result<Vec<AttentionClusterStep>> {
    if steps == 0 {
        return Err(KcotError::InvalidParameter("need at least one step".into()));
    }
    let mut centroids = centroids0.clone();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let assignments = attention_assignments(x_data, &centroids, tau)?;
        centroids = centroid_update(x_data, &assignments)?;
        out.push(AttentionClusterStep {
            assignments,
            centroids: centroids.clone(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{soft_kmeans, KMeansInit};
    use crate::numerics::SeededRng;

    fn random(rng: &mut SeededRng, r: usize, c: usize, scale: f64) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| scale * rng.gaussian())
    }

    /// Straight-line evaluation of the attention formula, entry by entry.
    fn reference_weights(x: &DenseMatrix, p: &AttentionParams) -> DenseMatrix {
        let n = x.rows();
        let d = x.cols();
        let proj = |w: &DenseMatrix, i: usize| -> Vec<f64> {
            (0..w.cols())
                .map(|c| (0..d).map(|r| x.get(i, r) * w.get(r, c)).sum())
                .collect()
        };
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            let qi = proj(&p.w_q, i);
            let mut scores = vec![f64::NEG_INFINITY; n];
            for (j, s) in scores.iter_mut().enumerate() {
                if p.mask.is_allowed(i, j) {
                    let kj = proj(&p.w_k, j);
                    let qk: f64 = qi.iter().zip(&kj).map(|(a, b)| a * b).sum();
                    *s = (qk + p.key_bias[j]) / p.temperature;
                }
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            for (j, s) in scores.iter().enumerate() {
                out.set(i, j, (s - m).exp() / z);
            }
        }
        out
    }

    #[test]
    fn zero_projections_give_uniform_weights() {
        let mut rng = SeededRng::new(1);
        let x = random(&mut rng, 5, 3, 1.0);
        let p = AttentionParams {
            w_q: DenseMatrix::zeros(3, 3),
            w_k: DenseMatrix::zeros(3, 3),
            w_v: DenseMatrix::identity(3),
            key_bias: vec![0.0; 5],
            temperature: 1.0,
            mask: Mask::all(5, 5),
        };
        let out = attention_forward(&x, &p).unwrap();
        assert!(out.weights.data().iter().all(|&w| (w - 0.2).abs() < 1e-15));
    }

    #[test]
    fn large_temperature_flattens() {
        let mut rng = SeededRng::new(2);
        let x = random(&mut rng, 4, 2, 1.0);
        let p = AttentionParams {
            w_q: random(&mut rng, 2, 2, 1.0),
            w_k: random(&mut rng, 2, 2, 1.0),
            w_v: DenseMatrix::identity(2),
            key_bias: vec![0.3, -0.1, 0.0, 0.2],
            temperature: 1e9,
            mask: Mask::all(4, 4),
        };
        let out = attention_forward(&x, &p).unwrap();
        assert!(out.weights.data().iter().all(|&w| (w - 0.25).abs() < 1e-6));
    }

    #[test]
    fn matches_straight_line_evaluation() {
        let mut rng = SeededRng::new(6);
        let x = random(&mut rng, 6, 4, 1.0);
        let mask = Mask::from_fn(6, 6, |i, j| (i + j) % 4 != 1);
        let p = AttentionParams {
            w_q: random(&mut rng, 4, 4, 0.7),
            w_k: random(&mut rng, 4, 4, 0.7),
            w_v: random(&mut rng, 4, 4, 0.7),
            key_bias: (0..6).map(|_| rng.gaussian()).collect(),
            temperature: 0.8,
            mask,
        };
        let out = attention_forward(&x, &p).unwrap();
        let oracle = reference_weights(&x, &p);
        assert!(out.weights.max_abs_diff(&oracle).unwrap() <= 1e-12);
        for row in out.weights.row_iter() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn single_center_gets_all_weight() {
        let mut rng = SeededRng::new(3);
        let x = random(&mut rng, 7, 3, 2.0);
        let c = random(&mut rng, 1, 3, 2.0);
        let a = attention_assignments(&x, &c, 0.5).unwrap();
        assert!(a.data().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn duplicate_centers_split_evenly() {
        let x = DenseMatrix::from_rows(&[[0.5, 0.1], [-1.0, 2.0]]).unwrap();
        let c = DenseMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0], [0.0, -1.0]]).unwrap();
        let a = attention_assignments(&x, &c, 1.0).unwrap();
        for i in 0..2 {
            assert_eq!(a.get(i, 0), a.get(i, 1));
        }
    }

    #[test]
    fn one_dimensional_instance_matches_soft_assign() {
        let x = DenseMatrix::from_rows(&[[1.0]]).unwrap();
        let c = DenseMatrix::from_rows(&[[1.0], [-1.0]]).unwrap();
        let a = attention_assignments(&x, &c, 2.0).unwrap();
        let s = soft_assign(&x, &c, 2.0).unwrap();
        assert!((a.get(0, 0) - 0.880_797_077_977_882_4).abs() < 1e-12);
        assert!(a.max_abs_diff(&s).unwrap() <= 1e-15);
    }

    #[test]
    fn data_to_data_weights_are_exactly_zero() {
        let mut rng = SeededRng::new(8);
        let x = random(&mut rng, 5, 2, 1.0);
        let c = random(&mut rng, 3, 2, 1.0);
        let (p, layout) = build_kmeans_attention(5, &c, 1.0).unwrap();
        let out = attention_forward(&x.vstack(&c).unwrap(), &p).unwrap();
        for i in 0..layout.n_data {
            for j in 0..layout.n_data {
                assert_eq!(out.weights.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn equivalence_on_seeded_instances() {
        let mut rng = SeededRng::new(21);
        for trial in 0..30 {
            let n = 1 + rng.below(60);
            let k = 1 + rng.below(8);
            let d = 1 + rng.below(16);
            let tau = [0.1, 1.0, 10.0][trial % 3];
            let x = random(&mut rng, n, d, 1.0);
            let c = random(&mut rng, k, d, 1.0);
            let diff = verify_assignment_equivalence(&x, &c, tau).unwrap();
            assert!(diff <= 1e-9, "trial {trial}: {diff}");
        }
    }

    #[test]
    fn near_fixed_point_is_one_hot() {
        let mut rng = SeededRng::new(4);
        let c = random(&mut rng, 4, 3, 3.0);
        let a = attention_assignments(&c, &c, 1e-3).unwrap();
        assert!(a.max_abs_diff(&DenseMatrix::identity(4)).unwrap() <= 1e-9);
        assert!(verify_assignment_equivalence(&c, &c, 1e-3).unwrap() <= 1e-9);
    }

    #[test]
    fn translation_changes_nothing() {
        let mut rng = SeededRng::new(12);
        let x = random(&mut rng, 20, 4, 1.0);
        let c = random(&mut rng, 5, 4, 1.0);
        let t: Vec<f64> = (0..4).map(|_| 3.0 * rng.gaussian()).collect();
        let sh = |m: &DenseMatrix| DenseMatrix::from_fn(m.rows(), 4, |i, j| m.get(i, j) + t[j]);
        let a0 = attention_assignments(&x, &c, 1.0).unwrap();
        let a1 = attention_assignments(&sh(&x), &sh(&c), 1.0).unwrap();
        assert!(a0.max_abs_diff(&a1).unwrap() <= 1e-9);
        let d0 = verify_assignment_equivalence(&x, &c, 1.0).unwrap();
        let d1 = verify_assignment_equivalence(&sh(&x), &sh(&c), 1.0).unwrap();
        assert!((d0 - d1).abs() <= 1e-9);
    }

    #[test]
    fn dropping_key_bias_breaks_equivalence() {
        let x = DenseMatrix::from_rows(&[[0.2, 0.1], [1.5, -0.4], [-0.7, 0.9]]).unwrap();
        let c = DenseMatrix::from_rows(&[[0.0, 0.5], [2.0, 1.0], [-1.0, -1.5]]).unwrap();
        let (mut p, layout) = build_kmeans_attention(3, &c, 1.0).unwrap();
        p.key_bias.iter_mut().for_each(|b| *b = 0.0);
        let out = attention_forward(&x.vstack(&c).unwrap(), &p).unwrap();
        let attn = DenseMatrix::from_fn(3, 3, |i, k| out.weights.get(i, layout.center_index(k)));
        let diff = attn.max_abs_diff(&soft_assign(&x, &c, 1.0).unwrap()).unwrap();
        assert!(diff > 1e-3, "{diff}");
    }

    #[test]
    fn iterated_matches_soft_kmeans() {
        let mut rng = SeededRng::new(31);
        let x = random(&mut rng, 40, 3, 2.0);
        let c0 = x.select_rows(&[0, 10, 20]);
        let attn = iterated_attention_clustering(&x, &c0, 1.0, 10).unwrap();
        let oracle = soft_kmeans(&x, 3, 1.0, 10, KMeansInit::Centroids(c0)).unwrap();
        for (a, o) in attn.iter().zip(&oracle) {
            assert!(a.centroids.max_abs_diff(&o.centroids).unwrap() <= 1e-9);
            assert!(a.assignments.max_abs_diff(&o.assignments).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn single_step_is_assign_then_update() {
        let mut rng = SeededRng::new(32);
        let x = random(&mut rng, 12, 2, 1.0);
        let c0 = x.select_rows(&[1, 7]);
        let one = iterated_attention_clustering(&x, &c0, 0.5, 1).unwrap();
        let a = soft_assign(&x, &c0, 0.5).unwrap();
        let mu = centroid_update(&x, &a).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one[0].centroids.max_abs_diff(&mu).unwrap() <= 1e-12);
        assert!(iterated_attention_clustering(&x, &c0, 0.5, 0).is_err());
    }

    #[test]
    fn fixed_point_stays_put() {
        let mut rng = SeededRng::new(33);
        let x = random(&mut rng, 30, 2, 1.0);
        let c0 = x.select_rows(&[0, 1]);
        let conv = soft_kmeans(&x, 2, 1.0, 5000, KMeansInit::Centroids(c0)).unwrap();
        let fixed = conv.last().unwrap().centroids.clone();
        let steps = iterated_attention_clustering(&x, &fixed, 1.0, 3).unwrap();
        for s in &steps {
            assert!(s.centroids.max_abs_diff(&fixed).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn sweep_is_exact_and_reproducible() {
        let a = verification_sweep(12, 7).unwrap();
        assert!(a.iter().all(|t| t.max_diff <= 1e-9 && t.k <= 16 && t.n <= 200 && t.d <= 32));
        assert_eq!(a, verification_sweep(12, 7).unwrap());
    }
}

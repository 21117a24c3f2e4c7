//! Reference soft k-means: assignment by a softmax over negative squared
//! distances, update by responsibility-weighted means.

use serde::{Deserialize, Serialize};

use crate::error::{KcotError, Result};
use crate::numerics::{pairwise_sq_dists, softmax_rows, DenseMatrix, SeededRng};

/// Column mass below which a cluster counts as empty.
pub const EMPTY_CLUSTER_MASS: f64 = 1e-12;
/// Stop once no centroid moves farther than this (max-norm).
pub const CONVERGENCE_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub centroids: DenseMatrix,
    pub assignments: DenseMatrix,
    pub temperature: f64,
    pub iteration: usize,
}

impl ClusterState {
    /// `Σ_i Σ_k A_ik ‖x_i − μ_k‖²`.
    pub fn objective(&self, x: &DenseMatrix) -> Result<f64> {
        distortion(x, &self.assignments, &self.centroids)
    }

    /// Distortion plus `τ Σ A ln A`. Soft assignment minimizes this at
    /// fixed centroids and the weighted mean minimizes it at fixed
    /// assignments, so it never increases along a trajectory.
    pub fn free_energy(&self, x: &DenseMatrix) -> Result<f64> {
        let neg_entropy: f64 = self
            .assignments
            .data()
            .iter()
            .filter(|&&a| a > 0.0)
            .map(|&a| a * a.ln())
            .sum();
        Ok(self.objective(x)? + self.temperature * neg_entropy)
    }
}

/// `Σ_i Σ_k A_ik ‖x_i − μ_k‖²`.
pub fn distortion(x: &DenseMatrix, a: &DenseMatrix, centroids: &DenseMatrix) -> Result<f64> {
    let d = pairwise_sq_dists(x, centroids)?;
    if d.shape() != a.shape() {
        return Err(KcotError::dims(
            "distortion",
            format!("assignments {:?} vs distances {:?}", a.shape(), d.shape()),
        ));
    }
    Ok(d.data().iter().zip(a.data()).map(|(d, a)| d * a).sum())
}

fn check_temperature(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(KcotError::InvalidParameter(format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    Ok(())
}

/// `A_ik = softmax_k(−‖x_i − μ_k‖² / τ)`.
pub fn soft_assign(x: &DenseMatrix, centroids: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    check_temperature(tau)?;
    if centroids.rows() == 0 {
        return Err(KcotError::InvalidParameter("no centroids".into()));
    }
    let d = pairwise_sq_dists(x, centroids)?;
    softmax_rows(&d.map(|v| -v / tau), None)
}

/// `μ_k = Σ_i A_ik x_i / Σ_i A_ik`.
pub fn centroid_update(x: &DenseMatrix, a: &DenseMatrix) -> Result<DenseMatrix> {
    if x.rows() != a.rows() {
        return Err(KcotError::dims(
            "centroid_update",
            format!("{} points vs {} assignment rows", x.rows(), a.rows()),
        ));
    }
    let mass = a.column_sums();
    if let Some((k, &m)) = mass
        .iter()
        .enumerate()
        .find(|(_, &m)| m < EMPTY_CLUSTER_MASS)
    {
        return Err(KcotError::EmptyCluster {
            cluster: k,
            mass: m,
        });
    }
    let mut mu = a.t_matmul(x)?;
    for (k, &m) in mass.iter().enumerate() {
        for v in mu.row_mut(k) {
            *v /= m;
        }
    }
    Ok(mu)
}

/// How [`soft_kmeans`] picks its starting centroids.
#[derive(Clone, Debug)]
pub enum KMeansInit {
    Centroids(DenseMatrix),
    Seed(u64),
}

/// Alternates [`soft_assign`] and [`centroid_update`]. The returned
/// trajectory holds one state per completed iteration; state `t` carries the
/// assignments computed from the previous centroids and the centroids
/// updated from those assignments.
pub fn soft_kmeans(
    x: &DenseMatrix,
    k: usize,
    tau: f64,
    max_iters: usize,
    init: KMeansInit,
) -> Result<Vec<ClusterState>> {
    check_temperature(tau)?;
    if k == 0 || k > x.rows() {
        return Err(KcotError::InvalidParameter(format!(
            "need 1 <= K <= n, got K={k}, n={}",
            x.rows()
        )));
    }
    let mut centroids = match init {
        KMeansInit::Centroids(c) => {
            if c.rows() != k || c.cols() != x.cols() {
                return Err(KcotError::dims(
                    "soft_kmeans",
                    format!("initial centroids {:?}, expected {k}x{}", c.shape(), x.cols()),
                ));
            }
            c
        }
        KMeansInit::Seed(seed) => kmeans_pp_init(x, k, &mut SeededRng::new(seed))?,
    };
    let mut trajectory = Vec::with_capacity(max_iters);
    for it in 1..=max_iters {
        let assignments = soft_assign(x, &centroids, tau)?;
        let next = centroid_update(x, &assignments)?;
        let moved = next.max_abs_diff(&centroids)?;
        centroids = next;
        trajectory.push(ClusterState {
            centroids: centroids.clone(),
            assignments,
            temperature: tau,
            iteration: it,
        });
        if moved < CONVERGENCE_TOL {
            break;
        }
    }
    Ok(trajectory)
}

/// k-means++ seeding: first row uniform, each next row sampled with
/// probability proportional to its squared distance to the nearest chosen
/// row. Rows already chosen have zero weight, so the picks are distinct
/// indices. When every remaining row coincides with a chosen one the next
/// pick falls back to uniform over the unchosen indices.
pub fn kmeans_pp_init(x: &DenseMatrix, k: usize, rng: &mut SeededRng) -> Result<DenseMatrix> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(KcotError::InvalidParameter(format!(
            "kmeans++ needs 1 <= K <= n, got K={k}, n={n}"
        )));
    }
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.below(n);
    chosen.push(first);
    taken[first] = true;
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| crate::numerics::sq_dist(x.row(i), x.row(first)))
        .collect();
    while chosen.len() < k {
        let total: f64 = (0..n).filter(|&i| !taken[i]).map(|i| nearest[i]).sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for i in (0..n).filter(|&i| !taken[i]) {
                acc += nearest[i];
                if acc > target && nearest[i] > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave target just above the final sum.
            pick.unwrap_or_else(|| {
                (0..n)
                    .rev()
                    .find(|&i| !taken[i] && nearest[i] > 0.0)
                    .expect("positive total implies a positive weight")
            })
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.below(free.len())]
        };
        taken[pick] = true;
        chosen.push(pick);
        for (i, best) in nearest.iter_mut().enumerate() {
            let d = crate::numerics::sq_dist(x.row(i), x.row(pick));
            if d < *best {
                *best = d;
            }
        }
    }
    Ok(x.select_rows(&chosen))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn equidistant_point_is_uniform() {
        let a = soft_assign(&m(&[&[0.0, 0.0]]), &m(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]]), 0.7)
            .unwrap();
        for &v in a.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn one_dimensional_hand_value() {
        // distances 0 and 4, tau 2: softmax(0, -2)
        let a = soft_assign(&m(&[&[1.0]]), &m(&[&[1.0], &[-1.0]]), 2.0).unwrap();
        let expected = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((a.get(0, 0) - expected).abs() < 1e-15);
        assert!((a.get(0, 0) - 0.880_797_077_977_882_4).abs() < 1e-12);
    }

    #[test]
    fn duplicated_centroid_gets_identical_weight() {
        let a = soft_assign(
            &m(&[&[0.3, -1.0], &[2.0, 5.0]]),
            &m(&[&[1.0, 1.0], &[1.0, 1.0], &[0.0, 0.0]]),
            1.3,
        )
        .unwrap();
        for i in 0..2 {
            assert_eq!(a.get(i, 0), a.get(i, 1));
        }
    }

    #[test]
    fn bad_temperature() {
        let x = m(&[&[0.0]]);
        assert!(soft_assign(&x, &x, 0.0).is_err());
        assert!(soft_assign(&x, &x, -1.0).is_err());
        assert!(soft_assign(&x, &m(&[&[0.0, 1.0]]), 1.0).is_err());
    }

    #[test]
    fn update_one_hot_and_uniform() {
        let x = m(&[&[0.0], &[2.0]]);
        let one_hot = m(&[&[1.0, 0.0], &[1.0, 0.0]]);
        match centroid_update(&x, &one_hot) {
            Err(KcotError::EmptyCluster { cluster, .. }) => assert_eq!(cluster, 1),
            other => panic!("{other:?}"),
        }
        let both = m(&[&[0.0, 1.0], &[0.0, 1.0]]);
        // cluster 0 empty, cluster 1 holds both points
        assert!(centroid_update(&x, &both).is_err());
        let half = m(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert_eq!(centroid_update(&x, &half).unwrap().data(), &[1.0, 1.0]);
        let members = m(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let x3 = m(&[&[0.0], &[2.0], &[7.0]]);
        assert_eq!(centroid_update(&x3, &members).unwrap().data(), &[1.0, 7.0]);
    }

    #[test]
    fn update_matches_hand_weighted_means() {
        // Seeded random n=4 instance; the oracle below is a plain nested loop.
        let mut rng = SeededRng::new(11);
        let x = DenseMatrix::from_fn(4, 3, |_, _| rng.uniform_in(-2.0, 2.0));
        let raw = DenseMatrix::from_fn(4, 2, |_, _| rng.uniform_in(0.1, 1.0));
        let a = DenseMatrix::from_fn(4, 2, |i, k| raw.get(i, k) / (raw.get(i, 0) + raw.get(i, 1)));
        let mu = centroid_update(&x, &a).unwrap();
        for k in 0..2 {
            for j in 0..3 {
                let mut num = 0.0;
                let mut den = 0.0;
                for i in 0..4 {
                    num += a.get(i, k) * x.get(i, j);
                    den += a.get(i, k);
                }
                assert!((mu.get(k, j) - num / den).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn fixed_point_converges_in_one_step() {
        let x = m(&[&[0.0, 0.0], &[5.0, 5.0], &[-5.0, 5.0]]);
        let traj = soft_kmeans(&x, 3, 1e-3, 50, KMeansInit::Centroids(x.clone())).unwrap();
        assert_eq!(traj.len(), 1);
        let a = &traj[0].assignments;
        for i in 0..3 {
            assert!((a.get(i, i) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_blobs() {
        let x = m(&[&[0.0], &[0.1], &[10.0], &[10.1]]);
        let traj =
            soft_kmeans(&x, 2, 1.0, 200, KMeansInit::Centroids(m(&[&[0.0], &[10.0]]))).unwrap();
        let c = &traj.last().unwrap().centroids;
        assert!((c.get(0, 0) - 0.05).abs() < 1e-6);
        assert!((c.get(1, 0) - 10.05).abs() < 1e-6);
    }

    #[test]
    fn objective_non_increasing() {
        let mut rng = SeededRng::new(5);
        let x = DenseMatrix::from_fn(40, 2, |i, _| (i % 4) as f64 * 3.0 + rng.gaussian());
        let init = kmeans_pp_init(&x, 4, &mut SeededRng::new(9)).unwrap();
        let traj = soft_kmeans(&x, 4, 0.5, 60, KMeansInit::Centroids(init.clone())).unwrap();
        // The update step: at fixed A the weighted mean never raises distortion.
        let mut prev = init;
        for st in &traj {
            let before = distortion(&x, &st.assignments, &prev).unwrap();
            assert!(st.objective(&x).unwrap() <= before + 1e-9);
            prev = st.centroids.clone();
        }
        let f: Vec<f64> = traj.iter().map(|s| s.free_energy(&x).unwrap()).collect();
        for w in f.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{f:?}");
        }
    }

    #[test]
    fn kmeanspp_exhaustion_and_determinism() {
        let x = m(&[&[0.0], &[1.0], &[4.0], &[9.0]]);
        let c = kmeans_pp_init(&x, 4, &mut SeededRng::new(42)).unwrap();
        let mut vals: Vec<f64> = c.data().to_vec();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals, vec![0.0, 1.0, 4.0, 9.0]);
        let one = kmeans_pp_init(&x, 1, &mut SeededRng::new(1)).unwrap();
        assert!(x.data().contains(&one.get(0, 0)));
        let again = kmeans_pp_init(&x, 4, &mut SeededRng::new(42)).unwrap();
        assert_eq!(c, again);
        assert!(kmeans_pp_init(&x, 5, &mut SeededRng::new(1)).is_err());
    }

    #[test]
    fn kmeanspp_with_duplicate_rows_still_distinct_indices() {
        let x = m(&[&[1.0], &[1.0], &[1.0]]);
        let c = kmeans_pp_init(&x, 3, &mut SeededRng::new(0)).unwrap();
        assert_eq!(c.rows(), 3);
    }

    #[test]
    fn tiny_temperature_reproduces_hard_labels() {
        let mut rng = SeededRng::new(77);
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let x = DenseMatrix::from_fn(18, 2, |i, j| centers[i % 3][j] + 0.3 * rng.gaussian());
        let init = DenseMatrix::from_rows(&centers).unwrap();
        let traj = soft_kmeans(&x, 3, 1e-6, 30, KMeansInit::Centroids(init)).unwrap();
        let st = traj.last().unwrap();
        for i in 0..18 {
            // exhaustive nearest-centroid search
            let hard = (0..3)
                .min_by(|&a, &b| {
                    crate::numerics::sq_dist(x.row(i), st.centroids.row(a))
                        .total_cmp(&crate::numerics::sq_dist(x.row(i), st.centroids.row(b)))
                })
                .unwrap();
            let soft = (0..3)
                .max_by(|&a, &b| st.assignments.get(i, a).total_cmp(&st.assignments.get(i, b)))
                .unwrap();
            assert_eq!(hard, soft);
            assert_eq!(hard, i % 3);
        }
    }

    proptest! {
        #[test]
        fn assignments_row_stochastic(v in prop::collection::vec(-5.0f64..5.0, 20), tau in 0.05f64..10.0) {
            let x = DenseMatrix::from_vec(5, 2, v[..10].to_vec()).unwrap();
            let c = DenseMatrix::from_vec(5, 2, v[10..].to_vec()).unwrap();
            let a = soft_assign(&x, &c, tau).unwrap();
            for row in a.row_iter() {
                let s: f64 = row.iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
                prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            }
        }

        #[test]
        fn joint_translation_leaves_assignments(v in prop::collection::vec(-5.0f64..5.0, 20),
                                                t in prop::collection::vec(-20.0f64..20.0, 2)) {
            let x = DenseMatrix::from_vec(5, 2, v[..10].to_vec()).unwrap();
            let c = DenseMatrix::from_vec(5, 2, v[10..].to_vec()).unwrap();
            let sh = |m: &DenseMatrix| DenseMatrix::from_fn(m.rows(), 2, |i, j| m.get(i, j) + t[j]);
            let a0 = soft_assign(&x, &c, 1.0).unwrap();
            let a1 = soft_assign(&sh(&x), &sh(&c), 1.0).unwrap();
            prop_assert!(a0.max_abs_diff(&a1).unwrap() <= 1e-9);
        }
    }
}

use crate::error::{KcotError, Result};
use crate::numerics::{dot, DenseMatrix};
use crate::par;

pub const MAX_ITERS: usize = 500;
pub const GAP_TOL: f64 = 1e-8;

/// Euclidean distance from `point` to the convex hull of the rows of
/// `hull`, by away-step Frank–Wolfe over simplex weights with exact line
/// search. Stops after [`MAX_ITERS`] iterations or when the duality gap
/// drops below [`GAP_TOL`].
pub fn hull_distance(point: &[f64], hull: &DenseMatrix) -> Result<f64> {
    let m = hull.rows();
    if m == 0 {
        return Err(KcotError::InvalidParameter("hull needs at least one point".into()));
    }
    if hull.cols() != point.len() {
        return Err(KcotError::dims(
            "hull_distance",
            format!("point has {} coordinates, hull rows {}", point.len(), hull.cols()),
        ));
    }
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
    let start = (0..m)
        .min_by(|&a, &b| {
            let da = crate::numerics::sq_dist(hull.row(a), point);
            let db = crate::numerics::sq_dist(hull.row(b), point);
            da.total_cmp(&db)
        })
        .unwrap();
    let mut w = vec![0.0; m];
    w[start] = 1.0;
    let mut x = hull.row(start).to_vec();
    for _ in 0..MAX_ITERS {
        // residual r = x − p; ∂f/∂w_j = r · h_j for f = ½‖x − p‖²
        let r = diff(&x, point);
        let grad: Vec<f64> = (0..m).map(|j| dot(&r, hull.row(j))).collect();
        let rx = dot(&r, &x);
        let s = (0..m).min_by(|&a, &b| grad[a].total_cmp(&grad[b])).unwrap();
        let gap = rx - grad[s];
        if gap < GAP_TOL {
            break;
        }
        let away = (0..m)
            .filter(|&j| w[j] > 0.0)
            .max_by(|&a, &b| grad[a].total_cmp(&grad[b]))
            .unwrap();
        let away_gap = grad[away] - rx;
        let (dir, gamma_max, toward) = if gap >= away_gap {
            (diff(hull.row(s), &x), 1.0, true)
        } else {
            let wa = w[away];
            (diff(&x, hull.row(away)), wa / (1.0f64 - wa).max(f64::MIN_POSITIVE), false)
        };
        let dd = dot(&dir, &dir);
        if dd == 0.0 {
            break;
        }
        let gamma = (-dot(&r, &dir) / dd).clamp(0.0, gamma_max);
        if toward {
            w.iter_mut().for_each(|v| *v *= 1.0 - gamma);
            w[s] += gamma;
        } else {
            w.iter_mut().for_each(|v| *v *= 1.0 + gamma);
            w[away] -= gamma;
            if gamma >= gamma_max {
                w[away] = 0.0;
            }
        }
        for (k, xk) in x.iter_mut().enumerate() {
            *xk = (0..m).map(|j| w[j] * hull.get(j, k)).sum();
        }
    }
    Ok(crate::numerics::sq_dist(&x, point).sqrt())
}

/// `E_i[dist(h_i^{t+1}, Conv{h_j^t : j ∈ N_i})] / max(E_i[dist(h_i^t, Conv{h_j^t})], 1e-12)`
/// over nodes with a nonempty structural set.
pub fn hull_contraction_lambda(
    h_t: &DenseMatrix,
    h_next: &DenseMatrix,
    structural: &[Vec<usize>],
) -> Result<f64> {
    if h_t.shape() != h_next.shape() || structural.len() != h_t.rows() {
        return Err(KcotError::dims(
            "hull_contraction_lambda",
            format!(
                "H_t {:?}, H_t+1 {:?}, {} neighbor sets",
                h_t.shape(),
                h_next.shape(),
                structural.len()
            ),
        ));
    }
    let per_node = par::try_map_range(h_t.rows(), |i| -> Result<Option<(f64, f64)>> {
        if structural[i].is_empty() {
            return Ok(None);
        }
        let hull = h_t.select_rows(&structural[i]);
        Ok(Some((
            hull_distance(h_next.row(i), &hull)?,
            hull_distance(h_t.row(i), &hull)?,
        )))
    })?;
    let used: Vec<(f64, f64)> = per_node.into_iter().flatten().collect();
    if used.is_empty() {
        return Err(KcotError::Insufficient("every structural set is empty".into()));
    }
    let n = used.len() as f64;
    let num = used.iter().map(|p| p.0).sum::<f64>() / n;
    let den = used.iter().map(|p| p.1).sum::<f64>() / n;
    Ok(num / den.max(1e-12))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use proptest::prelude::*;

    fn pts(rows: &[[f64; 2]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn segment_projection() {
        let d = hull_distance(&[2.0, 0.0], &pts(&[[0.0, 1.0], [0.0, -1.0]])).unwrap();
        assert!((d - 2.0).abs() < 1e-6);
    }

    #[test]
    fn single_point_is_exact() {
        let d = hull_distance(&[3.0, 4.0], &pts(&[[0.0, 0.0]])).unwrap();
        assert_eq!(d, 5.0);
    }

    #[test]
    fn interior_point_is_zero() {
        let tri = pts(&[[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]]);
        assert!(hull_distance(&[1.0, 1.0], &tri).unwrap() < 1e-6);
        let sq = pts(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]]);
        assert!(hull_distance(&[0.3, 0.7], &sq).unwrap() < 1e-6);
        let mut rng = SeededRng::new(4);
        let h = DenseMatrix::from_fn(5, 8, |_, _| rng.gaussian());
        let w = [0.1, 0.3, 0.2, 0.25, 0.15];
        let p: Vec<f64> = (0..8).map(|k| (0..5).map(|j| w[j] * h.get(j, k)).sum()).collect();
        assert!(hull_distance(&p, &h).unwrap() < 1e-6);
    }

    #[test]
    fn lambda_identity_and_mean_update() {
        let mut rng = SeededRng::new(8);
        let h = DenseMatrix::from_fn(6, 3, |_, _| rng.gaussian());
        let sets = vec![vec![1, 2], vec![0, 2, 3], vec![], vec![4, 5], vec![3], vec![0, 1, 4]];
        let lam = hull_contraction_lambda(&h, &h, &sets).unwrap();
        assert!((lam - 1.0).abs() < 1e-6);
        let moved = DenseMatrix::from_fn(6, 3, |i, k| {
            if sets[i].is_empty() {
                h.get(i, k)
            } else {
                sets[i].iter().map(|&j| h.get(j, k)).sum::<f64>() / sets[i].len() as f64
            }
        });
        let lam = hull_contraction_lambda(&h, &moved, &sets).unwrap();
        assert!((0.0..1e-6).contains(&lam), "{lam}");
    }

    fn affine_hull_distance(p: &[f64], h: &DenseMatrix) -> f64 {
        // project p − h₀ onto span{h_j − h₀} via Gram–Schmidt
        let h0 = h.row(0);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for j in 1..h.rows() {
            let mut v: Vec<f64> = h.row(j).iter().zip(h0).map(|(a, b)| a - b).collect();
            for b in &basis {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
            let n = dot(&v, &v).sqrt();
            if n > 1e-9 {
                basis.push(v.into_iter().map(|x| x / n).collect());
            }
        }
        let mut r: Vec<f64> = p.iter().zip(h0).map(|(a, b)| a - b).collect();
        for b in &basis {
            let c = dot(&r, b);
            r.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        dot(&r, &r).sqrt()
    }

    fn grid_distance(p: &[f64], h: &DenseMatrix) -> f64 {
        let steps = 200;
        let m = h.rows();
        let mut best = f64::INFINITY;
        let eval = |w: &[f64]| {
            let x: Vec<f64> = (0..2).map(|k| (0..m).map(|j| w[j] * h.get(j, k)).sum()).collect();
            crate::numerics::sq_dist(&x, p).sqrt()
        };
        for a in 0..=steps {
            if m == 1 {
                return eval(&[1.0]);
            }
            let wa = a as f64 / steps as f64;
            if m == 2 {
                best = best.min(eval(&[wa, 1.0 - wa]));
                continue;
            }
            for b in 0..=(steps - a) {
                let wb = b as f64 / steps as f64;
                best = best.min(eval(&[wa, wb, 1.0 - wa - wb]));
            }
        }
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn bounded_by_vertices_affine_hull_and_grid(
            coords in prop::collection::vec(-3.0f64..3.0, 2..=6),
            p in prop::array::uniform2(-4.0f64..4.0),
        ) {
            let m = coords.len() / 2;
            let h = DenseMatrix::from_vec(m, 2, coords[..2 * m].to_vec()).unwrap();
            let d = hull_distance(&p, &h).unwrap();
            let nearest = (0..m).map(|j| crate::numerics::sq_dist(h.row(j), &p).sqrt()).fold(f64::INFINITY, f64::min);
            prop_assert!(d <= nearest + 1e-9);
            prop_assert!(d >= affine_hull_distance(&p, &h) - 1e-9);
            // grid resolution 1/200 over a hull of diameter ≤ 6√2
            let g = grid_distance(&p, &h);
            prop_assert!(d <= g + 1e-9);
            prop_assert!(g - d <= 0.05);
        }
    }
}

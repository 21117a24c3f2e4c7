//! Misalignment, contraction fitting, class-separation ratios and
//! empirical diagnostics for the alignment assumptions.

mod hull;
mod report;

pub use hull::{hull_contraction_lambda, hull_distance};
pub use report::{
    to_json_17, write_json_17, Diagnostics, RunReport, Seeds, SplitAccuracy,
};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::cluster::{centroid_update, kmeans_pp_init, soft_assign};
use crate::error::{KcotError, Result};
use crate::numerics::{sq_dist, DenseMatrix, SeededRng};
use crate::thoughts::semantic_knn;

/// `1 − |A ∩ B| / |A ∪ B|`, or `None` when both sets are empty.
pub fn node_misalignment(a: &[usize], b: &[usize]) -> Option<f64> {
    let a: BTreeSet<usize> = a.iter().copied().collect();
    let b: BTreeSet<usize> = b.iter().copied().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return None;
    }
    Some(1.0 - a.intersection(&b).count() as f64 / union as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Misalignment {
    pub per_node: Vec<Option<f64>>,
    /// Mean over nodes whose δ is defined.
    pub global: f64,
}

pub fn misalignment(structural: &[Vec<usize>], semantic: &[Vec<usize>]) -> Result<Misalignment> {
    if structural.len() != semantic.len() {
        return Err(KcotError::dims(
            "misalignment",
            format!("{} structural vs {} semantic sets", structural.len(), semantic.len()),
        ));
    }
    let per_node: Vec<Option<f64>> = structural
        .iter()
        .zip(semantic)
        .map(|(a, b)| node_misalignment(a, b))
        .collect();
    let defined: Vec<f64> = per_node.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(KcotError::Insufficient(
            "misalignment undefined: every node has two empty sets".into(),
        ));
    }
    let global = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(Misalignment { per_node, global })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionFit {
    pub rho: f64,
    pub eps: f64,
    /// Root of the summed squared residuals.
    pub residual: f64,
    pub non_contractive: bool,
}

/// Least-squares fit of `Δ_{t+1} = ρ Δ_t + ε` over consecutive pairs.
pub fn fit_contraction(deltas: &[f64]) -> Result<ContractionFit> {
    if deltas.len() < 3 {
        return Err(KcotError::Insufficient(format!(
            "contraction fit needs at least 3 values, got {}",
            deltas.len()
        )));
    }
    let xs = &deltas[..deltas.len() - 1];
    let ys = &deltas[1..];
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let scale: f64 = xs.iter().map(|x| x * x).sum::<f64>().max(1.0);
    if sxx <= 1e-30 * scale {
        return Err(KcotError::Underdetermined(
            "predictor values are constant; ρ and ε are not identifiable".into(),
        ));
    }
    let rho = sxy / sxx;
    let eps = my - rho * mx;
    let residual = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - rho * x - eps).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(ContractionFit {
        rho,
        eps,
        residual,
        non_contractive: rho >= 1.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationRatio {
    pub ratio: f64,
    pub inter: f64,
    pub intra: f64,
    /// The intra-class spread hit the 1e-12 floor.
    pub floored: bool,
}

/// Mean pairwise distance between class centroids over the mean distance of
/// nodes to their own class centroid.
pub fn inter_intra_ratio(h: &DenseMatrix, labels: &[usize]) -> Result<SeparationRatio> {
    if labels.len() != h.rows() {
        return Err(KcotError::dims(
            "inter_intra_ratio",
            format!("{} labels for {} rows", labels.len(), h.rows()),
        ));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let d = h.cols();
    let mut sums = vec![vec![0.0; d]; classes];
    let mut counts = vec![0usize; classes];
    for (i, &y) in labels.iter().enumerate() {
        counts[y] += 1;
        sums[y].iter_mut().zip(h.row(i)).for_each(|(s, v)| *s += v);
    }
    let present: Vec<usize> = (0..classes).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return Err(KcotError::Insufficient(
            "inter/intra ratio needs at least two populated classes".into(),
        ));
    }
    let centroids: Vec<Vec<f64>> = (0..classes)
        .map(|c| sums[c].iter().map(|s| s / counts[c].max(1) as f64).collect())
        .collect();
    let mut inter = 0.0;
    let mut pairs = 0usize;
    for (ai, &a) in present.iter().enumerate() {
        for &b in &present[ai + 1..] {
            inter += sq_dist(&centroids[a], &centroids[b]).sqrt();
            pairs += 1;
        }
    }
    inter /= pairs as f64;
    let intra = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| sq_dist(h.row(i), &centroids[y]).sqrt())
        .sum::<f64>()
        / labels.len() as f64;
    Ok(SeparationRatio {
        ratio: inter / intra.max(1e-12),
        inter,
        intra,
        floored: intra < 1e-12,
    })
}

/// KNN sensitivity to isotropic Gaussian noise of scale `sigma`: mean
/// normalized symmetric difference of neighbor sets divided by the mean
/// displacement, averaged over trials.
pub fn knn_stability_kappa(
    h: &DenseMatrix,
    sigma: f64,
    trials: usize,
    k: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    if !(sigma > 0.0) || trials == 0 {
        return Err(KcotError::InvalidParameter(format!(
            "κ̂ needs σ > 0 and at least one trial (σ={sigma}, trials={trials})"
        )));
    }
    let base = semantic_knn(h, k)?;
    let n = h.rows();
    let mut total = 0.0;
    for _ in 0..trials {
        let noisy = DenseMatrix::from_fn(n, h.cols(), |i, j| h.get(i, j) + sigma * rng.gaussian());
        let moved = semantic_knn(&noisy, k)?;
        let flips = base
            .iter()
            .zip(&moved)
            .map(|(a, b)| {
                let a: BTreeSet<_> = a.iter().collect();
                let b: BTreeSet<_> = b.iter().collect();
                a.symmetric_difference(&b).count() as f64 / k as f64
            })
            .sum::<f64>()
            / n as f64;
        let shift = (0..n)
            .map(|i| sq_dist(h.row(i), noisy.row(i)).sqrt())
            .sum::<f64>()
            / n as f64;
        total += if flips == 0.0 { 0.0 } else { flips / shift };
    }
    Ok(total / trials as f64)
}

/// Baseline trajectory without thoughts: repeatedly replaces every row of
/// `h` by its soft-k-means reconstruction `A μ` and records the misalignment
/// of the resulting KNN sets against `structural`.
pub fn kmeans_refinement_deltas(
    h: &DenseMatrix,
    structural: &[Vec<usize>],
    k_nn: usize,
    clusters: usize,
    tau: f64,
    steps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut cur = h.clone();
    let mut centroids = kmeans_pp_init(&cur, clusters, &mut SeededRng::new(seed))?;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        out.push(misalignment(structural, &semantic_knn(&cur, k_nn)?)?.global);
        let a = soft_assign(&cur, &centroids, tau)?;
        centroids = centroid_update(&cur, &a)?;
        cur = a.matmul(&centroids)?;
    }
    Ok(out)
}

use serde::{Deserialize, Serialize};

use super::{gcn_backward, gcn_forward_traced, GcnWeights, NormalizedAdjacency};
use crate::error::{KcotError, Result};
use crate::graph::TagGraph;
use crate::numerics::{dot, DenseMatrix, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub positives_per_target: usize,
    pub negatives_per_target: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// Adds the positives to the denominator (conventional InfoNCE). Off by
    /// default: the objective's denominator sums over negatives only.
    pub denominator_includes_positives: bool,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 1000,
            learning_rate: 0.01,
            temperature: 0.5,
            positives_per_target: 5,
            negatives_per_target: 5,
            hidden_dim: 128,
            output_dim: 64,
            denominator_includes_positives: false,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(KcotError::InvalidParameter("epochs must be at least 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(KcotError::InvalidParameter(format!(
                "pretraining temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.positives_per_target == 0 || self.negatives_per_target == 0 {
            return Err(KcotError::InvalidParameter(
                "need at least one positive and one negative per target".into(),
            ));
        }
        Ok(())
    }
}

/// One target node with its sampled positive and negative partners.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContrastiveTarget {
    pub node: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Targets for one epoch. Nodes without neighbors, or adjacent to every
/// other node, are skipped.
pub fn sample_contrastive_targets(
    g: &TagGraph,
    positives: usize,
    negatives: usize,
    rng: &mut SeededRng,
) -> Vec<ContrastiveTarget> {
    let n = g.node_count();
    let mut out = Vec::new();
    for o in 0..n {
        let nbrs = g.neighbors(o);
        if nbrs.is_empty() {
            continue;
        }
        let mut pos: Vec<usize> = if nbrs.len() <= positives {
            nbrs.to_vec()
        } else {
            rng.sample_indices(nbrs.len(), positives)
                .into_iter()
                .map(|p| nbrs[p])
                .collect()
        };
        pos.sort_unstable();
        let free = n - 1 - nbrs.len();
        if free == 0 {
            continue;
        }
        let mut neg = Vec::with_capacity(negatives.min(free));
        if free <= negatives {
            neg.extend((0..n).filter(|&b| b != o && !g.has_edge(o, b)));
        } else {
            while neg.len() < negatives {
                let b = rng.below(n);
                if b != o && !g.has_edge(o, b) && !neg.contains(&b) {
                    neg.push(b);
                }
            }
            neg.sort_unstable();
        }
        out.push(ContrastiveTarget {
            node: o,
            positives: pos,
            negatives: neg,
        });
    }
    out
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax_vec(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `−Σ_o ln[Σ_{a∈P_o} exp(s_ao/τ) / Σ_{b∈D_o} exp(s_bo/τ)]` with cosine
/// similarity `s`, where `D_o = N_o` (or `P_o ∪ N_o` when
/// `include_positives`). Returns the loss and `∂L/∂H`.
pub fn contrastive_loss(
    h: &DenseMatrix,
    targets: &[ContrastiveTarget],
    tau: f64,
    include_positives: bool,
) -> Result<(f64, DenseMatrix)> {
    let n = h.rows();
    let d = h.cols();
    let norms: Vec<f64> = h.row_iter().map(|r| dot(r, r).sqrt().max(1e-12)).collect();
    let u = DenseMatrix::from_fn(n, d, |i, j| h.get(i, j) / norms[i]);
    let mut d_u = DenseMatrix::zeros(n, d);
    let mut loss = 0.0;
    for t in targets {
        let o = t.node;
        let uo = u.row(o);
        let s_pos: Vec<f64> = t.positives.iter().map(|&a| dot(u.row(a), uo) / tau).collect();
        let mut den_nodes: Vec<usize> = t.negatives.clone();
        if include_positives {
            den_nodes.extend(&t.positives);
        }
        let s_den: Vec<f64> = den_nodes.iter().map(|&b| dot(u.row(b), uo) / tau).collect();
        loss += -log_sum_exp(&s_pos) + log_sum_exp(&s_den);
        // ∂/∂s: −softmax over positives, +softmax over the denominator set.
        let coeffs = softmax_vec(&s_pos)
            .into_iter()
            .zip(&t.positives)
            .map(|(w, &a)| (a, -w))
            .chain(
                softmax_vec(&s_den)
                    .into_iter()
                    .zip(&den_nodes)
                    .map(|(w, &b)| (b, w)),
            )
            .collect::<Vec<_>>();
        for (other, c) in coeffs {
            let c = c / tau;
            for j in 0..d {
                let uo_j = u.get(o, j);
                let uk_j = u.get(other, j);
                d_u.row_mut(other)[j] += c * uo_j;
                d_u.row_mut(o)[j] += c * uk_j;
            }
        }
    }
    // Back through u = h / ‖h‖: ∂h = (∂u − u (u·∂u)) / ‖h‖.
    let mut d_h = DenseMatrix::zeros(n, d);
    for (i, &norm_i) in norms.iter().enumerate() {
        let ui = u.row(i);
        let gi = d_u.row(i);
        let proj = dot(ui, gi);
        for (j, v) in d_h.row_mut(i).iter_mut().enumerate() {
            *v = (gi[j] - ui[j] * proj) / norm_i;
        }
    }
    Ok((loss, d_h))
}

/// Loss and weight gradient for a fixed set of targets.
pub fn contrastive_objective(
    x: &DenseMatrix,
    adj: &NormalizedAdjacency,
    weights: &GcnWeights,
    targets: &[ContrastiveTarget],
    tau: f64,
    include_positives: bool,
) -> Result<(f64, GcnWeights)> {
    let (h, trace) = gcn_forward_traced(x, adj, weights)?;
    let (loss, d_h) = contrastive_loss(&h, targets, tau, include_positives)?;
    let (grad, _) = gcn_backward(adj, weights, &trace, &d_h)?;
    Ok((loss, grad))
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub weights: GcnWeights,
    /// Objective value (summed over targets) at the start of each epoch.
    pub loss_curve: Vec<f64>,
}

/// Full-batch gradient descent on the contrastive link objective. Targets
/// are resampled every epoch from a stream derived from the seed. The step
/// uses the per-target mean so the learning rate does not scale with graph
/// size.
pub fn pretrain_link_contrastive(
    g: &TagGraph,
    x: &DenseMatrix,
    adj: &NormalizedAdjacency,
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if g.edge_count() == 0 {
        return Err(KcotError::InvalidGraph(
            "contrastive pretraining needs at least one edge".into(),
        ));
    }
    let root = SeededRng::new(cfg.seed);
    let mut weights = GcnWeights::init(
        &[x.cols(), cfg.hidden_dim, cfg.output_dim],
        &mut root.derive(u64::MAX),
    )?;
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let targets = sample_contrastive_targets(
            g,
            cfg.positives_per_target,
            cfg.negatives_per_target,
            &mut root.derive(epoch as u64),
        );
        if targets.is_empty() {
            return Err(KcotError::InvalidGraph(
                "no node has both a neighbor and a non-neighbor".into(),
            ));
        }
        let (loss, grad) = contrastive_objective(
            x,
            adj,
            &weights,
            &targets,
            cfg.temperature,
            cfg.denominator_includes_positives,
        )?;
        if !loss.is_finite() {
            return Err(KcotError::NonFinite(format!("pretraining loss at epoch {epoch}")));
        }
        loss_curve.push(loss);
        weights.step(&grad, cfg.learning_rate / targets.len() as f64)?;
        if epoch % 100 == 0 {
            log::debug!("pretrain epoch {epoch}: loss {loss:.6}");
        }
    }
    Ok(PretrainOutcome {
        weights,
        loss_curve,
    })
}

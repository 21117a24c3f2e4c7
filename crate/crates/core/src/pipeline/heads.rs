use std::collections::HashSet;
use std::path::Path;

use crate::error::{KcotError, Result};
use crate::graph::TagGraph;
use crate::numerics::{softmax_rows, DenseMatrix, SeededRng};
use crate::weights_io::WeightsDocument;

pub const CLASSIFIER_KIND: &str = "classifier_head";
pub const LINK_KIND: &str = "link_head";

const PROB_FLOOR: f64 = 1e-12;

/// `−Σ_{i∈train} ln ŷ_{i,y_i}` with probabilities floored at 1e-12.
pub fn ce_loss(probs: &DenseMatrix, labels: &[usize], train: &[usize]) -> Result<f64> {
    let mut loss = 0.0;
    for &i in train {
        let y = labels[i];
        if y >= probs.cols() {
            return Err(KcotError::InvalidParameter(format!(
                "label {y} of node {i} out of range for {} classes",
                probs.cols()
            )));
        }
        loss -= probs.get(i, y).max(PROB_FLOOR).ln();
    }
    Ok(loss)
}

/// `−Σ [y ln ŷ + (1−y) ln(1−ŷ)]` with scores clamped to `[1e-12, 1−1e-12]`.
pub fn bce_loss(scores: &[f64], labels: &[bool]) -> f64 {
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let s = s.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            if y {
                -s.ln()
            } else {
                -(1.0 - s).ln()
            }
        })
        .sum()
}

fn glorot(rows: usize, cols: usize, rng: &mut SeededRng) -> DenseMatrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    DenseMatrix::from_fn(rows, cols, |_, _| rng.uniform_in(-a, a))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Linear map followed by a row softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub w: DenseMatrix,
    pub b: DenseMatrix,
}

impl ClassifierHead {
    pub fn init(input_dim: usize, classes: usize, rng: &mut SeededRng) -> Self {
        ClassifierHead {
            w: glorot(input_dim, classes, rng),
            b: DenseMatrix::zeros(1, classes),
        }
    }

    pub fn probabilities(&self, h: &DenseMatrix) -> Result<DenseMatrix> {
        softmax_rows(&h.matmul(&self.w)?.add_row_vector(self.b.data())?, None)
    }

    /// Mean cross-entropy over `train`, with `(∂/∂head, ∂/∂H)`.
    pub fn loss_and_grad(
        &self,
        h: &DenseMatrix,
        labels: &[usize],
        train: &[usize],
    ) -> Result<(f64, ClassifierHead, DenseMatrix)> {
        if train.is_empty() {
            return Err(KcotError::Insufficient("no training nodes".into()));
        }
        let probs = self.probabilities(h)?;
        let scale = 1.0 / train.len() as f64;
        let loss = ce_loss(&probs, labels, train)? * scale;
        let mut d_logits = DenseMatrix::zeros(h.rows(), self.w.cols());
        for &i in train {
            let row = d_logits.row_mut(i);
            row.copy_from_slice(probs.row(i));
            row[labels[i]] -= 1.0;
            row.iter_mut().for_each(|v| *v *= scale);
        }
        let grad = ClassifierHead {
            w: h.t_matmul(&d_logits)?,
            b: DenseMatrix::from_vec(1, d_logits.cols(), d_logits.column_sums())?,
        };
        let d_h = d_logits.matmul_t(&self.w)?;
        Ok((loss, grad, d_h))
    }

    pub fn predict(&self, h: &DenseMatrix) -> Result<Vec<usize>> {
        let p = self.probabilities(h)?;
        Ok(p.row_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
                    .0
            })
            .collect())
    }

    pub fn step(&mut self, grad: &ClassifierHead, lr: f64) -> Result<()> {
        self.w.axpy(-lr, &grad.w)?;
        self.b.axpy(-lr, &grad.b)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.w.data().iter().chain(self.b.data()).copied().collect()
    }

    pub fn from_flat(&self, flat: &[f64]) -> Result<Self> {
        let nw = self.w.data().len();
        Ok(ClassifierHead {
            w: DenseMatrix::from_vec(self.w.rows(), self.w.cols(), flat[..nw].to_vec())?,
            b: DenseMatrix::from_vec(1, self.b.cols(), flat[nw..].to_vec())?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        WeightsDocument::new(CLASSIFIER_KIND, &[&self.w, &self.b]).save(path)
    }

    pub fn from_document(doc: WeightsDocument) -> Result<Self> {
        let [w, b]: [DenseMatrix; 2] = doc.into_matrices(CLASSIFIER_KIND)?.try_into().map_err(
            |m: Vec<_>| KcotError::Config(format!("classifier head needs 2 tensors, found {}", m.len())),
        )?;
        if b.rows() != 1 || b.cols() != w.cols() {
            return Err(KcotError::dims("ClassifierHead", format!("bias {:?} for weights {:?}", b.shape(), w.shape())));
        }
        Ok(ClassifierHead { w, b })
    }
}

/// Pair scorer `σ(relu((h_i ⊙ h_j) W₁ + b₁) w₂ + b₂)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkHead {
    pub w1: DenseMatrix,
    pub b1: DenseMatrix,
    pub w2: DenseMatrix,
    pub b2: DenseMatrix,
}

/// Labeled node pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinkPair {
    pub a: usize,
    pub b: usize,
    pub label: bool,
}

impl LinkHead {
    pub fn init(input_dim: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        LinkHead {
            w1: glorot(input_dim, hidden, rng),
            b1: DenseMatrix::zeros(1, hidden),
            w2: glorot(hidden, 1, rng),
            b2: DenseMatrix::zeros(1, 1),
        }
    }

    fn features(h: &DenseMatrix, pairs: &[LinkPair]) -> DenseMatrix {
        DenseMatrix::from_fn(pairs.len(), h.cols(), |p, k| {
            h.get(pairs[p].a, k) * h.get(pairs[p].b, k)
        })
    }

    pub fn scores(&self, h: &DenseMatrix, pairs: &[LinkPair]) -> Result<Vec<f64>> {
        let e = Self::features(h, pairs);
        let hidden = e.matmul(&self.w1)?.add_row_vector(self.b1.data())?.map(|v| v.max(0.0));
        let u = hidden.matmul(&self.w2)?;
        Ok(u.data().iter().map(|v| sigmoid(v + self.b2.get(0, 0))).collect())
    }

    /// Mean BCE over `pairs`, with `(∂/∂head, ∂/∂H)`.
    pub fn loss_and_grad(
        &self,
        h: &DenseMatrix,
        pairs: &[LinkPair],
    ) -> Result<(f64, LinkHead, DenseMatrix)> {
        if pairs.is_empty() {
            return Err(KcotError::Insufficient("no training pairs".into()));
        }
        let scale = 1.0 / pairs.len() as f64;
        let e = Self::features(h, pairs);
        let pre = e.matmul(&self.w1)?.add_row_vector(self.b1.data())?;
        let hidden = pre.map(|v| v.max(0.0));
        let u = hidden.matmul(&self.w2)?;
        let s: Vec<f64> = u.data().iter().map(|v| sigmoid(v + self.b2.get(0, 0))).collect();
        let labels: Vec<bool> = pairs.iter().map(|p| p.label).collect();
        let loss = bce_loss(&s, &labels) * scale;
        let d_u = DenseMatrix::from_fn(pairs.len(), 1, |p, _| {
            (s[p] - if labels[p] { 1.0 } else { 0.0 }) * scale
        });
        let g_w2 = hidden.t_matmul(&d_u)?;
        let g_b2 = DenseMatrix::from_vec(1, 1, d_u.column_sums())?;
        let d_pre = d_u
            .matmul_t(&self.w2)?
            .zip_map(&pre, "LinkHead::loss_and_grad", |g, a| if a > 0.0 { g } else { 0.0 })?;
        let g_w1 = e.t_matmul(&d_pre)?;
        let g_b1 = DenseMatrix::from_vec(1, d_pre.cols(), d_pre.column_sums())?;
        let d_e = d_pre.matmul_t(&self.w1)?;
        let mut d_h = DenseMatrix::zeros(h.rows(), h.cols());
        for (p, pair) in pairs.iter().enumerate() {
            for k in 0..h.cols() {
                let g = d_e.get(p, k);
                let (ha, hb) = (h.get(pair.a, k), h.get(pair.b, k));
                d_h.row_mut(pair.a)[k] += g * hb;
                d_h.row_mut(pair.b)[k] += g * ha;
            }
        }
        Ok((
            loss,
            LinkHead {
                w1: g_w1,
                b1: g_b1,
                w2: g_w2,
                b2: g_b2,
            },
            d_h,
        ))
    }

    pub fn step(&mut self, grad: &LinkHead, lr: f64) -> Result<()> {
        self.w1.axpy(-lr, &grad.w1)?;
        self.b1.axpy(-lr, &grad.b1)?;
        self.w2.axpy(-lr, &grad.w2)?;
        self.b2.axpy(-lr, &grad.b2)
    }

    fn parts(&self) -> [&DenseMatrix; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.parts().iter().flat_map(|m| m.data().iter().copied()).collect()
    }

    pub fn from_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut at = 0;
        let mut take = |m: &DenseMatrix| {
            let len = m.data().len();
            let out = DenseMatrix::from_vec(m.rows(), m.cols(), flat[at..at + len].to_vec());
            at += len;
            out
        };
        Ok(LinkHead {
            w1: take(&self.w1)?,
            b1: take(&self.b1)?,
            w2: take(&self.w2)?,
            b2: take(&self.b2)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        WeightsDocument::new(LINK_KIND, &self.parts()).save(path)
    }

    pub fn from_document(doc: WeightsDocument) -> Result<Self> {
        let [w1, b1, w2, b2]: [DenseMatrix; 4] = doc.into_matrices(LINK_KIND)?.try_into().map_err(
            |m: Vec<_>| KcotError::Config(format!("link head needs 4 tensors, found {}", m.len())),
        )?;
        let h = w1.cols();
        if b1.shape() != (1, h) || w2.shape() != (h, 1) || b2.shape() != (1, 1) {
            return Err(KcotError::dims("LinkHead", "inconsistent tensor shapes"));
        }
        Ok(LinkHead { w1, b1, w2, b2 })
    }
}

/// Positive pairs are the edges inside `split`; negatives are an equal
/// number of distinct non-adjacent pairs inside `split`, drawn uniformly
/// without replacement. Positives first, then negatives.
pub fn link_pairs_sample(g: &TagGraph, split: &[usize], rng: &mut SeededRng) -> Result<Vec<LinkPair>> {
    if split.is_empty() {
        return Err(KcotError::Insufficient("empty split".into()));
    }
    let mut member = vec![false; g.node_count()];
    for &i in split {
        if i >= g.node_count() {
            return Err(KcotError::InvalidNode(i));
        }
        member[i] = true;
    }
    let positives: Vec<LinkPair> = g
        .edges()
        .iter()
        .filter(|&&(a, b)| member[a] && member[b])
        .map(|&(a, b)| LinkPair { a, b, label: true })
        .collect();
    if positives.is_empty() {
        return Err(KcotError::Insufficient("no edges inside the split".into()));
    }
    let mut nodes: Vec<usize> = split.to_vec();
    nodes.sort_unstable();
    nodes.dedup();
    let m = nodes.len();
    let available = m * (m - 1) / 2 - positives.len();
    let want = positives.len();
    if available < want {
        return Err(KcotError::Insufficient(format!(
            "{want} negatives requested but the split has only {available} non-adjacent pairs"
        )));
    }
    let negatives: Vec<LinkPair> = if available <= 4 * want {
        let all: Vec<(usize, usize)> = (0..m)
            .flat_map(|x| (x + 1..m).map(move |y| (x, y)))
            .map(|(x, y)| (nodes[x], nodes[y]))
            .filter(|&(a, b)| !g.has_edge(a, b))
            .collect();
        rng.sample_indices(all.len(), want)
            .into_iter()
            .map(|k| LinkPair { a: all[k].0, b: all[k].1, label: false })
            .collect()
    } else {
        let mut seen = HashSet::with_capacity(want);
        let mut out = Vec::with_capacity(want);
        while out.len() < want {
            let (x, y) = (nodes[rng.below(m)], nodes[rng.below(m)]);
            let (a, b) = (x.min(y), x.max(y));
            if a != b && !g.has_edge(a, b) && seen.insert((a, b)) {
                out.push(LinkPair { a, b, label: false });
            }
        }
        out
    };
    Ok(positives.into_iter().chain(negatives).collect())
}

/// Fraction of pairs whose thresholded score (≥ 0.5) matches the label.
pub fn link_accuracy(scores: &[f64], pairs: &[LinkPair]) -> f64 {
    let hits = scores
        .iter()
        .zip(pairs)
        .filter(|(&s, p)| (s >= 0.5) == p.label)
        .count();
    hits as f64 / pairs.len().max(1) as f64
}

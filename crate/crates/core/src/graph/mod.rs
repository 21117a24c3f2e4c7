//! Text-attributed graphs: data model, on-disk format, synthetic generator
//! and neighborhood queries.

mod io;
mod sbm;

pub use io::{load_dataset, save_dataset, LoadReport};
pub use sbm::{synth_sbm_tag, SbmConfig};

use serde::{Deserialize, Serialize};

use crate::error::{KcotError, Result};
use crate::numerics::{DenseMatrix, SeededRng};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn is_empty(&self) -> bool {
        self.train.is_empty() && self.val.is_empty() && self.test.is_empty()
    }

    /// Sorted union of all three parts.
    pub fn all(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .copied()
            .collect();
        v.sort_unstable();
        v
    }
}

/// Undirected text-attributed graph. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct TagGraph {
    node_count: usize,
    /// Sorted `(lo, hi)` pairs with `lo < hi`.
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    texts: Vec<String>,
    features: Option<DenseMatrix>,
    labels: Option<Vec<usize>>,
    splits: Splits,
}

impl TagGraph {
    /// Validates and canonicalizes. Duplicate and reversed edges collapse to
    /// one; self-loops and out-of-range endpoints are rejected.
    pub fn new(
        texts: Vec<String>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        labels: Option<Vec<usize>>,
        splits: Splits,
    ) -> Result<Self> {
        let n = texts.len();
        let mut canon = Vec::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(KcotError::InvalidGraph(format!(
                    "edge ({a}, {b}) has an endpoint outside [0, {n})"
                )));
            }
            if a == b {
                return Err(KcotError::InvalidGraph(format!("self-loop on node {a}")));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        canon.dedup();
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(KcotError::InvalidGraph(format!(
                    "{} labels for {n} nodes",
                    l.len()
                )));
            }
        }
        let mut seen = vec![false; n];
        for &i in splits.train.iter().chain(&splits.val).chain(&splits.test) {
            if i >= n {
                return Err(KcotError::InvalidGraph(format!("split index {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(KcotError::InvalidGraph(format!(
                    "node {i} appears twice across splits"
                )));
            }
        }
        let mut splits = splits;
        splits.train.sort_unstable();
        splits.val.sort_unstable();
        splits.test.sort_unstable();
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in &canon {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        Ok(TagGraph {
            node_count: n,
            edges: canon,
            adjacency,
            texts,
            features: None,
            labels,
            splits,
        })
    }

    pub fn with_features(mut self, features: DenseMatrix) -> Result<Self> {
        if features.rows() != self.node_count {
            return Err(KcotError::dims(
                "TagGraph::with_features",
                format!("{} rows for {} nodes", features.rows(), self.node_count),
            ));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn text(&self, i: usize) -> &str {
        &self.texts[i]
    }

    pub fn features(&self) -> Option<&DenseMatrix> {
        self.features.as_ref()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn class_count(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max().map(|m| m + 1))
            .unwrap_or(0)
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    /// Sorted 1-hop neighbors.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a < self.node_count && self.adjacency[a].binary_search(&b).is_ok()
    }

    fn check_node(&self, i: usize) -> Result<()> {
        if i >= self.node_count {
            return Err(KcotError::InvalidNode(i));
        }
        Ok(())
    }

    /// Fraction of edges joining same-label endpoints.
    pub fn homophily(&self) -> Option<f64> {
        let labels = self.labels.as_ref()?;
        if self.edges.is_empty() {
            return None;
        }
        let same = self
            .edges
            .iter()
            .filter(|&&(a, b)| labels[a] == labels[b])
            .count();
        Some(same as f64 / self.edges.len() as f64)
    }
}

/// Union of the exact 1-hop (and, for `hops == 2`, 2-hop) neighborhoods of
/// `i`, excluding `i`, sorted ascending.
pub fn khop_neighbors(g: &TagGraph, i: usize, hops: usize) -> Result<Vec<usize>> {
    g.check_node(i)?;
    if !(1..=2).contains(&hops) {
        return Err(KcotError::InvalidParameter(format!(
            "hops must be 1 or 2, got {hops}"
        )));
    }
    let mut out: Vec<usize> = g.neighbors(i).to_vec();
    if hops == 2 {
        for &j in g.neighbors(i) {
            out.extend(g.neighbors(j).iter().copied().filter(|&k| k != i));
        }
        out.sort_unstable();
        out.dedup();
    }
    Ok(out)
}

/// Up to `k` nodes drawn uniformly without replacement from the 1∪2-hop
/// neighborhood. Returned sorted.
pub fn sample_structural_neighbors(
    g: &TagGraph,
    i: usize,
    k: usize,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(KcotError::InvalidParameter("K must be at least 1".into()));
    }
    let pool = khop_neighbors(g, i, 2)?;
    if pool.len() <= k {
        return Ok(pool);
    }
    let mut picked: Vec<usize> = rng
        .sample_indices(pool.len(), k)
        .into_iter()
        .map(|p| pool[p])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("node {i}")).collect()
    }

    fn path3() -> TagGraph {
        TagGraph::new(texts(3), [(0, 1), (1, 2)], None, Splits::default()).unwrap()
    }

    #[test]
    fn canonicalizes_edges() {
        let g = TagGraph::new(texts(3), [(1, 0), (0, 1), (2, 1)], None, Splits::default()).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.neighbors(1), &[0, 2]);
    }

    #[test]
    fn rejects_bad_edges_and_splits() {
        assert!(TagGraph::new(texts(3), [(5, 5)], None, Splits::default()).is_err());
        assert!(TagGraph::new(texts(3), [(1, 1)], None, Splits::default()).is_err());
        assert!(TagGraph::new(texts(3), [(0, 3)], None, Splits::default()).is_err());
        let overlapping = Splits {
            train: vec![0, 1],
            val: vec![1],
            test: vec![],
        };
        assert!(TagGraph::new(texts(3), [], None, overlapping).is_err());
        assert!(TagGraph::new(texts(3), [], Some(vec![0, 1]), Splits::default()).is_err());
    }

    #[test]
    fn khop_on_path() {
        let g = path3();
        assert_eq!(khop_neighbors(&g, 0, 1).unwrap(), vec![1]);
        assert_eq!(khop_neighbors(&g, 0, 2).unwrap(), vec![1, 2]);
        assert!(khop_neighbors(&g, 3, 1).is_err());
        assert!(khop_neighbors(&g, 0, 3).is_err());
    }

    #[test]
    fn isolated_node() {
        let g = TagGraph::new(texts(3), [(0, 1)], None, Splits::default()).unwrap();
        assert!(khop_neighbors(&g, 2, 2).unwrap().is_empty());
        let mut rng = SeededRng::new(0);
        assert!(sample_structural_neighbors(&g, 2, 5, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn one_hop_inside_two_hop() {
        let cfg = SbmConfig {
            nodes_per_class: 15,
            classes: 2,
            p_in: 0.2,
            p_out: 0.05,
            seed: 4,
            ..SbmConfig::default()
        };
        let g = synth_sbm_tag(&cfg).unwrap();
        for i in 0..g.node_count() {
            let one = khop_neighbors(&g, i, 1).unwrap();
            let two = khop_neighbors(&g, i, 2).unwrap();
            assert!(one.iter().all(|x| two.binary_search(x).is_ok()));
            assert!(!two.contains(&i));
        }
    }

    #[test]
    fn topology_ignores_insertion_order() {
        let e = vec![(0, 1), (1, 2), (2, 3), (3, 0), (1, 3)];
        let mut rev = e.clone();
        rev.reverse();
        let rev: Vec<_> = rev.into_iter().map(|(a, b)| (b, a)).collect();
        let g1 = TagGraph::new(texts(4), e, None, Splits::default()).unwrap();
        let g2 = TagGraph::new(texts(4), rev, None, Splits::default()).unwrap();
        assert_eq!(g1, g2);
        for i in 0..4 {
            assert_eq!(
                khop_neighbors(&g1, i, 2).unwrap(),
                khop_neighbors(&g2, i, 2).unwrap()
            );
        }
    }

    #[test]
    fn exhaustive_sample_returns_everything() {
        // star: center 0 with 5 leaves, K = 5
        let g = TagGraph::new(texts(6), (1..6).map(|j| (0, j)), None, Splits::default()).unwrap();
        for seed in 0..5 {
            let s = sample_structural_neighbors(&g, 0, 5, &mut SeededRng::new(seed)).unwrap();
            assert_eq!(s, vec![1, 2, 3, 4, 5]);
        }
        assert!(sample_structural_neighbors(&g, 0, 0, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn inclusion_frequency_is_half() {
        // 10-neighbor star center, K = 5: each leaf included w.p. 5/10.
        let g = TagGraph::new(texts(11), (1..11).map(|j| (0, j)), None, Splits::default()).unwrap();
        let base = SeededRng::new(2024);
        let draws = 10_000;
        let mut counts = [0usize; 11];
        for t in 0..draws {
            let mut rng = base.derive(t);
            for j in sample_structural_neighbors(&g, 0, 5, &mut rng).unwrap() {
                counts[j] += 1;
            }
        }
        for &c in &counts[1..] {
            let f = c as f64 / draws as f64;
            assert!((f - 0.5).abs() <= 0.02, "{f}");
        }
    }
}

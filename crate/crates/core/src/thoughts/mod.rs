//! Neighborhood construction, prompt rendering, thought generation and text
//! embedding.

mod cache;
mod embed;
mod generator;
mod prompt;

pub use cache::{cache_key, CacheEntry, ThoughtCache};
pub use embed::{embed_text, embed_texts, tokenize, DEFAULT_TEXT_DIM};
pub use generator::{
    generate_thought, ChatTransport, GeneratorConfig, GeneratorMode, HttpTransport,
    MockGenerator, RemoteGenerator, ThoughtEngine, ThoughtGenerator, TransportResponse,
    DEFAULT_API_KEY_ENV,
};
pub use prompt::{
    parse_prompt, render_prompt, CandidateSource, ParsedPrompt, PromptTemplate,
    ASSIGNMENT_INSTRUCTION, NO_CANDIDATES, UPDATE_INSTRUCTION,
};

use serde::{Deserialize, Serialize};

use crate::error::{KcotError, Result};
use crate::numerics::{sq_dist, DenseMatrix};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThoughtKind {
    Structural,
    Semantic,
}

impl ThoughtKind {
    pub fn source(self) -> CandidateSource {
        match self {
            ThoughtKind::Structural => CandidateSource::Neighbors,
            ThoughtKind::Semantic => CandidateSource::Knn,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThoughtRecord {
    pub node: usize,
    pub step: usize,
    pub kind: ThoughtKind,
    pub prompt: String,
    pub response: String,
    pub generator_id: String,
    pub cache_key: String,
}

/// The `k` nearest rows of `h` to each row by Euclidean distance, self
/// excluded, nearest first; equal distances are ordered by node id.
pub fn semantic_knn(h: &DenseMatrix, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = h.rows();
    if k == 0 || k >= n {
        return Err(KcotError::InvalidParameter(format!(
            "KNN needs 1 ≤ K < n, got K={k} with n={n}"
        )));
    }
    Ok(par::map_range(n, |i| {
        let hi = h.row(i);
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (sq_dist(hi, h.row(j)), j))
            .collect();
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, by_dist);
            cand.truncate(k);
        }
        cand.sort_unstable_by(by_dist);
        cand.into_iter().map(|(_, j)| j).collect()
    }))
}

/// Row-wise `[structural ‖ semantic]`.
pub fn build_reasoning_state(structural: &DenseMatrix, semantic: &DenseMatrix) -> Result<DenseMatrix> {
    if structural.rows() != semantic.rows() {
        return Err(KcotError::dims(
            "build_reasoning_state",
            format!("{} vs {} rows", structural.rows(), semantic.rows()),
        ));
    }
    structural.hstack(semantic)
}

/// Renders and generates one thought per listed node. `neighbor_sets` is
/// indexed by node id.
pub fn generate_thoughts(
    engine: &ThoughtEngine,
    texts: &[String],
    neighbor_sets: &[Vec<usize>],
    nodes: &[usize],
    kind: ThoughtKind,
    step: usize,
) -> Result<Vec<ThoughtRecord>> {
    let prompts = nodes
        .iter()
        .map(|&i| {
            let cands: Vec<&str> = neighbor_sets[i].iter().map(|&j| texts[j].as_str()).collect();
            render_prompt(&texts[i], &cands, kind.source())
        })
        .collect::<Result<Vec<_>>>()?;
    let responses = engine.generate_all(&prompts)?;
    let generator_id = engine.generator_id();
    Ok(nodes
        .iter()
        .zip(prompts)
        .zip(responses)
        .map(|((&node, prompt), response)| ThoughtRecord {
            node,
            step,
            kind,
            cache_key: cache_key(&generator_id, &prompt),
            prompt,
            response,
            generator_id: generator_id.clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn col(v: &[f64]) -> DenseMatrix {
        DenseMatrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn knn_on_a_line() {
        let n = semantic_knn(&col(&[0.0, 1.0, 3.0]), 1).unwrap();
        assert_eq!(n, vec![vec![1], vec![0], vec![1]]);
    }

    #[test]
    fn knn_prefers_twin_and_breaks_ties_by_id() {
        let n = semantic_knn(&col(&[5.0, 0.0, 5.0, 10.0]), 1).unwrap();
        assert_eq!(n[0], vec![2]);
        assert_eq!(n[2], vec![0]);
        // node 1 at 0 and node 3 at 10 are both 5 from node 0
        let n = semantic_knn(&col(&[5.0, 0.0, 10.0]), 2).unwrap();
        assert_eq!(n[0], vec![1, 2]);
        let n = semantic_knn(&col(&[0.0, -1.0, 1.0]), 1).unwrap();
        assert_eq!(n[0], vec![1]);
    }

    #[test]
    fn knn_k_equal_n_minus_one_is_everyone() {
        let n = semantic_knn(&col(&[0.3, 9.0, -2.0, 4.0]), 3).unwrap();
        for (i, s) in n.iter().enumerate() {
            let mut s = s.clone();
            s.sort();
            assert_eq!(s, (0..4).filter(|&j| j != i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn knn_rejects_bad_k() {
        assert!(semantic_knn(&col(&[0.0, 1.0]), 2).is_err());
        assert!(semantic_knn(&col(&[0.0, 1.0]), 0).is_err());
    }

    #[test]
    fn reasoning_state_concatenates() {
        let s = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let t = DenseMatrix::from_rows(&[[5.0, 6.0], [7.0, 8.0]]).unwrap();
        let z = build_reasoning_state(&s, &t).unwrap();
        assert_eq!(z.row(0), &[1.0, 2.0, 5.0, 6.0]);
        assert_eq!(z.row(1), &[3.0, 4.0, 7.0, 8.0]);
        let swapped = build_reasoning_state(&t, &s).unwrap();
        for i in 0..2 {
            assert_eq!(&swapped.row(i)[..2], &z.row(i)[2..]);
            assert_eq!(&swapped.row(i)[2..], &z.row(i)[..2]);
        }
        assert!(build_reasoning_state(&s, &col(&[1.0])).is_err());
    }

    #[test]
    fn thoughts_are_reproducible() {
        let engine = ThoughtEngine::new(Box::new(MockGenerator::default()), None);
        let texts: Vec<String> = ["alpha beta", "beta gamma", "delta"].iter().map(|s| s.to_string()).collect();
        let sets = vec![vec![1], vec![0, 2], vec![1]];
        let a = generate_thoughts(&engine, &texts, &sets, &[0, 1, 2], ThoughtKind::Semantic, 1).unwrap();
        let b = generate_thoughts(&engine, &texts, &sets, &[0, 1, 2], ThoughtKind::Semantic, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[1].node, 1);
        assert!(a[0].prompt.contains("representation similarity"));
        assert_eq!(a[0].cache_key, cache_key(&a[0].generator_id, &a[0].prompt));
    }

    proptest! {
        #[test]
        fn knn_is_permutation_equivariant(
            pts in prop::collection::vec(prop::collection::vec(-5i32..5, 2), 6),
            seed in 0u64..1000,
        ) {
            // integer coordinates exercise ties
            let n = pts.len();
            let h = DenseMatrix::from_fn(n, 2, |i, j| pts[i][j] as f64);
            let mut perm: Vec<usize> = (0..n).collect();
            crate::numerics::SeededRng::new(seed).shuffle(&mut perm);
            // row r of hp is node perm[r] of h
            let hp = h.select_rows(&perm);
            let base = semantic_knn(&h, 3).unwrap();
            let moved = semantic_knn(&hp, 3).unwrap();
            for r in 0..n {
                let mut got: Vec<(u64, usize)> = moved[r].iter().map(|&q| (sq_dist(hp.row(r), hp.row(q)).to_bits(), perm[q])).collect();
                let mut want: Vec<(u64, usize)> = base[perm[r]].iter().map(|&q| (sq_dist(h.row(perm[r]), h.row(q)).to_bits(), q)).collect();
                // tie-breaking is by id, so compare distance multisets and exact sets away from ties
                got.sort();
                want.sort();
                let gd: Vec<u64> = got.iter().map(|x| x.0).collect();
                let wd: Vec<u64> = want.iter().map(|x| x.0).collect();
                prop_assert_eq!(gd, wd);
                let far = want.last().unwrap().0;
                let strict = |v: &[(u64, usize)]| v.iter().filter(|x| x.0 < far).map(|x| x.1).collect::<Vec<_>>();
                prop_assert_eq!(strict(&got), strict(&want));
            }
        }
    }
}

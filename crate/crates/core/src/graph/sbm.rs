use serde::{Deserialize, Serialize};

use super::{Splits, TagGraph};
use crate::error::{KcotError, Result};
use crate::numerics::SeededRng;

/// Planted-partition graph with class-specific node text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmConfig {
    pub nodes_per_class: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Distinct words owned by each class.
    pub vocab_per_class: usize,
    /// Size of the pool shared by every class.
    pub shared_vocab: usize,
    /// Probability that a word is drawn from the shared pool.
    pub shared_fraction: f64,
    pub words_per_node: usize,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            nodes_per_class: 100,
            classes: 3,
            p_in: 0.1,
            p_out: 0.01,
            vocab_per_class: 40,
            shared_vocab: 10,
            shared_fraction: 0.2,
            words_per_node: 20,
            seed: 42,
        }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KcotError::InvalidParameter(m));
        if !(0.0 <= self.p_out && self.p_out <= self.p_in && self.p_in <= 1.0) {
            return bad(format!(
                "need 0 <= p_out <= p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            ));
        }
        if self.classes == 0 || self.nodes_per_class == 0 {
            return bad("need at least one class and one node per class".into());
        }
        if self.vocab_per_class == 0 || self.words_per_node == 0 {
            return bad("vocabulary and text length must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.shared_fraction)
            || (self.shared_fraction > 0.0 && self.shared_vocab == 0)
        {
            return bad(format!(
                "shared_fraction {} needs a non-empty shared pool",
                self.shared_fraction
            ));
        }
        Ok(())
    }
}

fn class_word(class: usize, j: usize) -> String {
    format!("topic{class}term{j}")
}

fn shared_word(j: usize) -> String {
    format!("common{j}")
}

/// Nodes are laid out class-major (`label = id / nodes_per_class`); the
/// 60/20/20 split is a seeded shuffle. Independent RNG streams drive edges,
/// texts and splits, so changing one knob leaves the other draws untouched.
pub fn synth_sbm_tag(cfg: &SbmConfig) -> Result<TagGraph> {
    cfg.validate()?;
    let n = cfg.nodes_per_class * cfg.classes;
    let labels: Vec<usize> = (0..n).map(|i| i / cfg.nodes_per_class).collect();
    let root = SeededRng::new(cfg.seed);

    let mut edge_rng = root.derive(0);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let p = if labels[a] == labels[b] {
                cfg.p_in
            } else {
                cfg.p_out
            };
            if edge_rng.bernoulli(p) {
                edges.push((a, b));
            }
        }
    }

    let mut text_rng = root.derive(1);
    let texts = (0..n)
        .map(|i| {
            (0..cfg.words_per_node)
                .map(|_| {
                    if text_rng.bernoulli(cfg.shared_fraction) {
                        shared_word(text_rng.below(cfg.shared_vocab))
                    } else {
                        class_word(labels[i], text_rng.below(cfg.vocab_per_class))
                    }
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    root.derive(2).shuffle(&mut order);
    let n_train = (n as f64 * 0.6).round() as usize;
    let n_val = (n as f64 * 0.2).round() as usize;
    let splits = Splits {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    };
    TagGraph::new(texts, edges, Some(labels), splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_probabilities_give_cliques() {
        let cfg = SbmConfig {
            nodes_per_class: 3,
            classes: 2,
            p_in: 1.0,
            p_out: 0.0,
            ..SbmConfig::default()
        };
        let g = synth_sbm_tag(&cfg).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)]);
    }

    #[test]
    fn equal_probabilities_give_chance_homophily() {
        for seed in 0..10 {
            let cfg = SbmConfig {
                nodes_per_class: 100,
                classes: 3,
                p_in: 0.05,
                p_out: 0.05,
                seed,
                ..SbmConfig::default()
            };
            let h = synth_sbm_tag(&cfg).unwrap().homophily().unwrap();
            assert!((h - 1.0 / 3.0).abs() <= 0.1, "seed {seed}: {h}");
        }
    }

    #[test]
    fn deterministic_and_split_sizes() {
        let cfg = SbmConfig::default();
        let a = synth_sbm_tag(&cfg).unwrap();
        let b = synth_sbm_tag(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.splits().train.len(), 180);
        assert_eq!(a.splits().val.len(), 60);
        assert_eq!(a.splits().test.len(), 60);
        assert_eq!(a.splits().all(), (0..300).collect::<Vec<_>>());
    }

    #[test]
    fn texts_use_class_vocabulary() {
        let cfg = SbmConfig {
            shared_fraction: 0.0,
            ..SbmConfig::default()
        };
        let g = synth_sbm_tag(&cfg).unwrap();
        for i in 0..g.node_count() {
            let prefix = format!("topic{}term", g.labels().unwrap()[i]);
            assert!(g.text(i).split(' ').all(|w| w.starts_with(&prefix)));
        }
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = SbmConfig {
            p_in: 0.1,
            p_out: 0.2,
            ..SbmConfig::default()
        };
        assert!(synth_sbm_tag(&cfg).is_err());
        cfg.p_out = 0.0;
        cfg.classes = 0;
        assert!(synth_sbm_tag(&cfg).is_err());
    }
}

//! Iterative thought-conditioned inference over a frozen encoder, the
//! downstream heads and the training loop.

mod heads;
mod infer;
mod train;

pub use heads::{
    bce_loss, ce_loss, link_accuracy, link_pairs_sample, ClassifierHead, LinkHead, LinkPair,
};
pub use infer::{
    composite_loss_and_grad, kcot_infer, modulated_features, Inference, InferenceStep,
    PipelineContext,
};
pub use train::{evaluate_trained, train_downstream, EarlyStopping, Head, RunArtifacts, TrainHistory};

use serde::{Deserialize, Serialize};

use crate::error::{KcotError, Result};
use crate::thoughts::{GeneratorConfig, DEFAULT_TEXT_DIM};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    NodeClassification,
    LinkPrediction,
}

/// Which nodes receive generated thoughts; the rest use their raw text.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThoughtScope {
    #[default]
    All,
    /// Nodes in the train, val or test split.
    Splits,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Off: the structural half of the reasoning state is zero.
    pub use_structural: bool,
    /// Off: the semantic half of the reasoning state is zero.
    pub use_semantic: bool,
    /// Off: thoughts are the raw node texts.
    pub use_prompt: bool,
    /// Replaces the step count when set.
    pub steps_override: Option<usize>,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            use_structural: true,
            use_semantic: true,
            use_prompt: true,
            steps_override: None,
        }
    }
}

impl Ablation {
    pub fn without_structural() -> Self {
        Ablation { use_structural: false, ..Self::default() }
    }

    pub fn without_semantic() -> Self {
        Ablation { use_semantic: false, ..Self::default() }
    }

    pub fn without_prompt() -> Self {
        Ablation { use_prompt: false, ..Self::default() }
    }

    /// A single reasoning pass.
    pub fn without_cot() -> Self {
        Ablation { steps_override: Some(1), ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub steps: usize,
    pub k: usize,
    /// Thoughts are regenerated every this many epochs (0 disables).
    pub refresh_every: usize,
    pub epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub task: Task,
    pub ablation: Ablation,
    pub generator: GeneratorConfig,
    pub text_dim: usize,
    pub condnet_hidden: usize,
    pub link_hidden: usize,
    /// Modulate the previous step's features instead of the original ones.
    pub cumulative_modulation: bool,
    pub thought_scope: ThoughtScope,
    pub kappa_sigma: f64,
    pub kappa_trials: usize,
    pub refinement_tau: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            steps: 2,
            k: 5,
            refresh_every: 100,
            epochs: 400,
            patience: 20,
            learning_rate: 1.0,
            task: Task::NodeClassification,
            ablation: Ablation::default(),
            generator: GeneratorConfig::default(),
            text_dim: DEFAULT_TEXT_DIM,
            condnet_hidden: crate::condnet::DEFAULT_HIDDEN,
            link_hidden: 32,
            cumulative_modulation: false,
            thought_scope: ThoughtScope::All,
            kappa_sigma: 0.01,
            kappa_trials: 3,
            refinement_tau: 1.0,
            seed: 42,
        }
    }
}

impl PipelineConfig {
    /// Step count after ablation overrides.
    pub fn effective_steps(&self) -> usize {
        self.ablation.steps_override.unwrap_or(self.steps)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KcotError::Config(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if self.text_dim < 8 {
            return bad(format!("text_dim must be at least 8, got {}", self.text_dim));
        }
        if self.condnet_hidden == 0 || self.link_hidden == 0 {
            return bad("hidden widths must be positive".into());
        }
        if !(self.kappa_sigma > 0.0) || self.kappa_trials == 0 {
            return bad("kappa_sigma must be positive and kappa_trials at least 1".into());
        }
        if !(self.refinement_tau > 0.0) {
            return bad("refinement_tau must be positive".into());
        }
        self.generator.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = PipelineConfig::default();
        assert_eq!((c.steps, c.k, c.refresh_every, c.epochs, c.patience), (2, 5, 100, 400, 20));
        c.validate().unwrap();
        let w = PipelineConfig { ablation: Ablation::without_cot(), ..c.clone() };
        assert_eq!(w.effective_steps(), 1);
        let parsed: PipelineConfig = serde_json::from_str(r#"{"steps": 4, "ablation": {"use_prompt": false}}"#).unwrap();
        assert_eq!(parsed.steps, 4);
        assert!(!parsed.ablation.use_prompt && parsed.ablation.use_semantic);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"stepz": 4}"#).is_err());
        assert!(PipelineConfig { patience: 0, ..c }.validate().is_err());
    }
}

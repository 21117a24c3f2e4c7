//! Graph encoder: normalized adjacency, GCN forward/backward, and
//! contrastive link pretraining.

mod adjacency;
mod gcn;
mod pretrain;

pub use adjacency::{normalize_adjacency, NormalizedAdjacency};
pub use gcn::{gcn_backward, gcn_forward, gcn_forward_traced, GcnTrace, GcnWeights};
pub use pretrain::{
    contrastive_loss, contrastive_objective, pretrain_link_contrastive,
    sample_contrastive_targets, ContrastiveTarget, PretrainConfig, PretrainOutcome,
};

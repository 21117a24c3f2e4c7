use super::{PipelineConfig, ThoughtScope};
use crate::condnet::{condnet_backward, condnet_forward, condnet_forward_traced, modulate, CondNetWeights};
use crate::encoder::{gcn_backward, gcn_forward, gcn_forward_traced, normalize_adjacency, GcnWeights, NormalizedAdjacency};
use crate::error::{KcotError, Result};
use crate::graph::{sample_structural_neighbors, TagGraph};
use crate::numerics::{DenseMatrix, SeededRng};
use crate::thoughts::{
    build_reasoning_state, embed_text, embed_texts, generate_thoughts, semantic_knn, ThoughtEngine,
    ThoughtKind, ThoughtRecord,
};

const STRUCTURAL_STREAM: u64 = 0x5354_5255;

/// Frozen inputs shared by every inference pass of a run.
pub struct PipelineContext<'a> {
    pub graph: &'a TagGraph,
    pub encoder: &'a GcnWeights,
    pub engine: &'a ThoughtEngine,
    pub config: &'a PipelineConfig,
    pub features: DenseMatrix,
    pub adjacency: NormalizedAdjacency,
    /// Sampled 1∪2-hop neighbors, fixed for the run.
    pub structural_sets: Vec<Vec<usize>>,
    pub structural_thoughts: Vec<ThoughtRecord>,
    structural_embeds: DenseMatrix,
    thought_nodes: Vec<usize>,
}

impl<'a> PipelineContext<'a> {
    pub fn new(
        graph: &'a TagGraph,
        encoder: &'a GcnWeights,
        engine: &'a ThoughtEngine,
        config: &'a PipelineConfig,
    ) -> Result<Self> {
        config.validate()?;
        let n = graph.node_count();
        let features = match graph.features() {
            Some(f) => f.clone(),
            None => embed_texts(graph.texts(), config.text_dim)?,
        };
        if features.cols() != encoder.input_dim() {
            return Err(KcotError::dims(
                "pipeline",
                format!(
                    "features have {} columns but the encoder expects {}",
                    features.cols(),
                    encoder.input_dim()
                ),
            ));
        }
        if config.k >= n {
            return Err(KcotError::Config(format!("k={} must be below the node count {n}", config.k)));
        }
        let mut rng = SeededRng::new(config.seed).derive(STRUCTURAL_STREAM);
        let structural_sets = (0..n)
            .map(|i| sample_structural_neighbors(graph, i, config.k, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let thought_nodes = match config.thought_scope {
            ThoughtScope::All => (0..n).collect(),
            ThoughtScope::Splits => {
                let mut v = graph.splits().all();
                v.sort_unstable();
                v.dedup();
                v
            }
        };
        let mut ctx = PipelineContext {
            graph,
            encoder,
            engine,
            config,
            features,
            adjacency: normalize_adjacency(graph),
            structural_sets,
            structural_thoughts: Vec::new(),
            structural_embeds: DenseMatrix::zeros(n, config.text_dim),
            thought_nodes,
        };
        if config.ablation.use_structural {
            let (embeds, records) = ctx.thoughts_for(&ctx.structural_sets, ThoughtKind::Structural, 0)?;
            ctx.structural_embeds = embeds;
            ctx.structural_thoughts = records;
        }
        Ok(ctx)
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    /// Embedded thoughts for every node; nodes outside the thought scope
    /// (and every node when prompting is ablated) use their raw text.
    fn thoughts_for(
        &self,
        sets: &[Vec<usize>],
        kind: ThoughtKind,
        step: usize,
    ) -> Result<(DenseMatrix, Vec<ThoughtRecord>)> {
        let texts = self.graph.texts();
        let dim = self.config.text_dim;
        let mut embeds = embed_texts(texts, dim)?;
        if !self.config.ablation.use_prompt {
            return Ok((embeds, Vec::new()));
        }
        let records = generate_thoughts(self.engine, texts, sets, &self.thought_nodes, kind, step)?;
        for r in &records {
            embeds.row_mut(r.node).copy_from_slice(&embed_text(&r.response, dim)?);
        }
        Ok((embeds, records))
    }
}

#[derive(Clone, Debug)]
pub struct InferenceStep {
    /// 1-based step index `t`.
    pub step: usize,
    /// Encoder output `H^(t−1)` that produced this step's neighbors.
    pub hidden: DenseMatrix,
    pub semantic_sets: Vec<Vec<usize>>,
    pub thoughts: Vec<ThoughtRecord>,
    /// Reasoning state `z^(t)`.
    pub state: DenseMatrix,
    /// `P^(t)` at the time of inference.
    pub modulation: DenseMatrix,
}

#[derive(Clone, Debug)]
pub struct Inference {
    pub steps: Vec<InferenceStep>,
    /// `H^(M)`.
    pub answer: DenseMatrix,
}

impl Inference {
    pub fn states(&self) -> Vec<&DenseMatrix> {
        self.steps.iter().map(|s| &s.state).collect()
    }

    /// `H^(0) … H^(M)`.
    pub fn hidden_trajectory(&self) -> Vec<&DenseMatrix> {
        self.steps
            .iter()
            .map(|s| &s.hidden)
            .chain(std::iter::once(&self.answer))
            .collect()
    }
}

/// Runs the reasoning loop: encode, find semantic neighbors, generate and
/// embed thoughts, condition, modulate; returns the per-step record and the
/// answer matrix. The encoder is only read.
pub fn kcot_infer(ctx: &PipelineContext<'_>, phi: &CondNetWeights) -> Result<Inference> {
    let cfg = ctx.config;
    let mut x_t = ctx.features.clone();
    let mut steps = Vec::with_capacity(cfg.effective_steps());
    for t in 1..=cfg.effective_steps() {
        let hidden = gcn_forward(&x_t, &ctx.adjacency, ctx.encoder)?;
        let semantic_sets = semantic_knn(&hidden, cfg.k)?;
        let (semantic_embeds, thoughts) = if cfg.ablation.use_semantic {
            ctx.thoughts_for(&semantic_sets, ThoughtKind::Semantic, t)?
        } else {
            (DenseMatrix::zeros(ctx.node_count(), cfg.text_dim), Vec::new())
        };
        let state = build_reasoning_state(&ctx.structural_embeds, &semantic_embeds)?;
        let modulation = condnet_forward(&state, phi)?;
        x_t = if cfg.cumulative_modulation {
            modulate(&x_t, &modulation)?
        } else {
            modulate(&ctx.features, &modulation)?
        };
        log::debug!("inference step {t}: {} thoughts", thoughts.len());
        steps.push(InferenceStep {
            step: t,
            hidden,
            semantic_sets,
            thoughts,
            state,
            modulation,
        });
    }
    let answer = gcn_forward(&x_t, &ctx.adjacency, ctx.encoder)?;
    Ok(Inference { steps, answer })
}

/// Encoder input after all modulations: `P^(M) ⊙ X`, or `X ⊙ Π_t P^(t)`
/// when cumulative; `X` when there are no steps.
pub fn modulated_features(
    x: &DenseMatrix,
    modulations: &[DenseMatrix],
    cumulative: bool,
) -> Result<DenseMatrix> {
    match (modulations.last(), cumulative) {
        (None, _) => Ok(x.clone()),
        (Some(p), false) => modulate(x, p),
        (Some(_), true) => modulations.iter().try_fold(x.clone(), |acc, p| modulate(&acc, p)),
    }
}

/// Forward and backward through condition-net, modulation and the frozen
/// encoder for fixed reasoning states. `head` receives the answer matrix
/// and returns the loss with `∂L/∂H`. Returns the loss, `∂L/∂φ` and the
/// answer matrix.
pub fn composite_loss_and_grad(
    x: &DenseMatrix,
    adjacency: &NormalizedAdjacency,
    encoder: &GcnWeights,
    states: &[&DenseMatrix],
    phi: &CondNetWeights,
    cumulative: bool,
    head: impl FnOnce(&DenseMatrix) -> Result<(f64, DenseMatrix)>,
) -> Result<(f64, CondNetWeights, DenseMatrix)> {
    // only the last state matters without cumulative modulation
    let used: &[&DenseMatrix] = if cumulative || states.is_empty() {
        states
    } else {
        &states[states.len() - 1..]
    };
    let traced = used
        .iter()
        .map(|z| condnet_forward_traced(z, phi))
        .collect::<Result<Vec<_>>>()?;
    let ps: Vec<DenseMatrix> = traced.iter().map(|(p, _)| p.clone()).collect();
    let input = modulated_features(x, &ps, cumulative)?;
    let (answer, trace) = gcn_forward_traced(&input, adjacency, encoder)?;
    let (loss, d_answer) = head(&answer)?;
    let mut grad = phi.zeros_like();
    if ps.is_empty() {
        return Ok((loss, grad, answer));
    }
    let (_, d_input) = gcn_backward(adjacency, encoder, &trace, &d_answer)?;
    let d_mod = d_input.hadamard(x)?;
    for (t, (_, tr)) in traced.iter().enumerate() {
        let mut d_p = d_mod.clone();
        for (s, p) in ps.iter().enumerate() {
            if s != t {
                d_p = d_p.hadamard(p)?;
            }
        }
        let (g, _) = condnet_backward(phi, tr, &d_p)?;
        grad.w1.axpy(1.0, &g.w1)?;
        grad.b1.axpy(1.0, &g.b1)?;
        grad.w2.axpy(1.0, &g.w2)?;
        grad.b2.axpy(1.0, &g.b2)?;
    }
    Ok((loss, grad, answer))
}

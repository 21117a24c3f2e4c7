use std::fs;
use std::path::Path;

use super::heads::{link_accuracy, link_pairs_sample, ClassifierHead, LinkHead, LinkPair, LINK_KIND};
use super::infer::{composite_loss_and_grad, kcot_infer, Inference, PipelineContext};
use super::{PipelineConfig, Task};
use crate::condnet::CondNetWeights;
use crate::encoder::GcnWeights;
use crate::error::{KcotError, Result};
use crate::graph::TagGraph;
use crate::metrics::{
    fit_contraction, hull_contraction_lambda, inter_intra_ratio, kmeans_refinement_deltas,
    knn_stability_kappa, misalignment, Diagnostics, RunReport, Seeds, SplitAccuracy,
};
use crate::numerics::{DenseMatrix, SeededRng};
use crate::thoughts::{ThoughtEngine, ThoughtRecord};
use crate::weights_io::WeightsDocument;

const STREAM_CONDNET: u64 = 1;
const STREAM_HEAD: u64 = 2;
const STREAM_PAIRS: u64 = 3;
const STREAM_KAPPA: u64 = 4;
const STREAM_REFINE: u64 = 5;

/// Stops once the validation metric has not strictly improved for
/// `patience` consecutive epochs.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::NEG_INFINITY,
            since_best: 0,
        }
    }

    /// Returns `(improved, stop)`.
    pub fn observe(&mut self, metric: f64) -> (bool, bool) {
        if metric > self.best {
            self.best = metric;
            self.since_best = 0;
            (true, false)
        } else {
            self.since_best += 1;
            (false, self.since_best >= self.patience)
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Classifier(ClassifierHead),
    Link(LinkHead),
}

impl Head {
    /// Loads either head kind from a weights document.
    pub fn load(path: &Path) -> Result<Self> {
        let doc = WeightsDocument::load(path)?;
        match doc.kind.as_str() {
            LINK_KIND => LinkHead::from_document(doc).map(Head::Link),
            _ => ClassifierHead::from_document(doc).map(Head::Classifier),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            Head::Classifier(h) => h.save(path),
            Head::Link(h) => h.save(path),
        }
    }
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub structural_sets: Vec<Vec<usize>>,
    pub structural_thoughts: Vec<ThoughtRecord>,
    /// The reasoning pass re-run with the selected weights.
    pub inference: Inference,
    /// `H^(M)` under the selected condition-net weights.
    pub answer: DenseMatrix,
    pub phi: CondNetWeights,
    pub head: Head,
    pub report: RunReport,
}

impl RunArtifacts {
    pub fn thoughts(&self) -> impl Iterator<Item = &ThoughtRecord> {
        self.structural_thoughts
            .iter()
            .chain(self.inference.steps.iter().flat_map(|s| s.thoughts.iter()))
    }

    /// `H^(0) … H^(M)`, ending with the answer matrix.
    pub fn embeddings(&self) -> Vec<&DenseMatrix> {
        self.inference
            .steps
            .iter()
            .map(|s| &s.hidden)
            .chain(std::iter::once(&self.answer))
            .collect()
    }

    /// Writes `report.json`, `answer_matrix.bin`, `embeddings_step_<t>.bin`,
    /// `thoughts.jsonl`, `condnet.json` and `head.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| KcotError::io(dir, e))?;
        self.report.save(&dir.join("report.json"))?;
        let write_bin = |name: String, m: &DenseMatrix| {
            let p = dir.join(name);
            fs::write(&p, m.to_le_bytes()).map_err(|e| KcotError::io(&p, e))
        };
        write_bin("answer_matrix.bin".into(), &self.answer)?;
        for (t, h) in self.embeddings().into_iter().enumerate() {
            write_bin(format!("embeddings_step_{t}.bin"), h)?;
        }
        let path = dir.join("thoughts.jsonl");
        let mut lines = String::new();
        for r in self.thoughts() {
            lines.push_str(&serde_json::to_string(r).map_err(|e| KcotError::json(&path, e))?);
            lines.push('\n');
        }
        fs::write(&path, lines).map_err(|e| KcotError::io(&path, e))?;
        self.phi.save(&dir.join("condnet.json"))?;
        self.head.save(&dir.join("head.json"))
    }
}

/// Per-epoch bookkeeping carried into the report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub inter_intra: Vec<f64>,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

struct LinkData {
    val: Vec<LinkPair>,
    test: Vec<LinkPair>,
    train_eval: Vec<LinkPair>,
}

fn prepare_link_data(g: &TagGraph, cfg: &PipelineConfig) -> Result<Option<LinkData>> {
    let splits = g.splits();
    match cfg.task {
        Task::NodeClassification => {
            if g.labels().is_none() {
                return Err(KcotError::Config("node classification needs labels".into()));
            }
            if splits.train.is_empty() || splits.val.is_empty() {
                return Err(KcotError::Config(
                    "node classification needs nonempty train and val splits".into(),
                ));
            }
            Ok(None)
        }
        Task::LinkPrediction => {
            let mut r = SeededRng::new(cfg.seed).derive(STREAM_PAIRS);
            link_pairs_sample(g, &splits.train, &mut r.derive(0))?;
            Ok(Some(LinkData {
                val: link_pairs_sample(g, &splits.val, &mut r.derive(1))?,
                test: if splits.test.is_empty() {
                    Vec::new()
                } else {
                    link_pairs_sample(g, &splits.test, &mut r.derive(2))?
                },
                train_eval: link_pairs_sample(g, &splits.train, &mut r)?,
            }))
        }
    }
}

fn class_accuracy(pred: &[usize], labels: &[usize], nodes: &[usize]) -> Option<f64> {
    if nodes.is_empty() {
        return None;
    }
    let hits = nodes.iter().filter(|&&i| pred[i] == labels[i]).count();
    Some(hits as f64 / nodes.len() as f64)
}

/// Trains the condition-net and the task head by gradient descent on the
/// mean task loss with the encoder frozen. Thoughts are regenerated every
/// `refresh_every` epochs. The weights with the best validation accuracy
/// are kept, and a final reasoning pass with them produces the answer
/// matrix and every reported quantity.
pub fn train_downstream(
    g: &TagGraph,
    encoder: &GcnWeights,
    engine: &ThoughtEngine,
    cfg: &PipelineConfig,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    let splits = g.splits();
    let labels: Option<Vec<usize>> = g.labels().map(<[usize]>::to_vec);
    let root = SeededRng::new(cfg.seed);
    let link_data = prepare_link_data(g, cfg)?;

    let ctx = PipelineContext::new(g, encoder, engine, cfg)?;
    let steps = cfg.effective_steps();
    let mut phi = CondNetWeights::init(
        2 * cfg.text_dim,
        cfg.condnet_hidden,
        ctx.features.cols(),
        &mut root.derive(STREAM_CONDNET),
    );
    let mut head_rng = root.derive(STREAM_HEAD);
    let mut head = match cfg.task {
        Task::NodeClassification => Head::Classifier(ClassifierHead::init(
            encoder.output_dim(),
            g.class_count(),
            &mut head_rng,
        )),
        Task::LinkPrediction => Head::Link(LinkHead::init(encoder.output_dim(), cfg.link_hidden, &mut head_rng)),
    };

    let mut inference = kcot_infer(&ctx, &phi)?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best: Option<(usize, CondNetWeights, Head)> = None;
    let mut inter_intra = Vec::new();
    let mut epochs_run = 0;
    let pair_rng = root.derive(STREAM_PAIRS).derive(1 << 32);

    for epoch in 0..cfg.epochs {
        if epoch > 0 && cfg.refresh_every > 0 && epoch % cfg.refresh_every == 0 && steps > 0 {
            inference = kcot_infer(&ctx, &phi)?;
        }
        epochs_run = epoch + 1;
        let states = inference.states();
        let mut head_grad = None;
        let (loss, phi_grad, answer) = match &head {
            Head::Classifier(h) => {
                let labels = labels.as_deref().unwrap_or_default();
                composite_loss_and_grad(
                    &ctx.features,
                    &ctx.adjacency,
                    encoder,
                    &states,
                    &phi,
                    cfg.cumulative_modulation,
                    |a| {
                        let (l, gh, dh) = h.loss_and_grad(a, labels, &splits.train)?;
                        head_grad = Some(Head::Classifier(gh));
                        Ok((l, dh))
                    },
                )?
            }
            Head::Link(h) => {
                let pairs = link_pairs_sample(g, &splits.train, &mut pair_rng.derive(epoch as u64))?;
                composite_loss_and_grad(
                    &ctx.features,
                    &ctx.adjacency,
                    encoder,
                    &states,
                    &phi,
                    cfg.cumulative_modulation,
                    |a| {
                        let (l, gh, dh) = h.loss_and_grad(a, &pairs)?;
                        head_grad = Some(Head::Link(gh));
                        Ok((l, dh))
                    },
                )?
            }
        };
        if !loss.is_finite() {
            return Err(KcotError::NonFinite(format!("downstream loss at epoch {epoch}")));
        }
        let val_metric = match (&head, &link_data) {
            (Head::Classifier(h), _) => {
                let pred = h.predict(&answer)?;
                class_accuracy(&pred, labels.as_deref().unwrap_or_default(), &splits.val).unwrap_or(0.0)
            }
            (Head::Link(h), Some(ld)) => link_accuracy(&h.scores(&answer, &ld.val)?, &ld.val),
            (Head::Link(_), None) => unreachable!("link data prepared for link prediction"),
        };
        if let Some(l) = &labels {
            if let Ok(r) = inter_intra_ratio(&answer, l) {
                inter_intra.push(r.ratio);
            }
        }
        let (improved, stop) = stopper.observe(val_metric);
        if improved {
            best = Some((epoch, phi.clone(), head.clone()));
        }
        if epoch % 50 == 0 {
            log::info!("epoch {epoch}: loss {loss:.6}, val {val_metric:.4}");
        }
        if stop {
            log::info!("early stop after epoch {epoch} (best val {:.4})", stopper.best());
            break;
        }
        if steps > 0 {
            phi.step(&phi_grad, cfg.learning_rate)?;
        }
        match (&mut head, head_grad) {
            (Head::Classifier(h), Some(Head::Classifier(gh))) => h.step(&gh, cfg.learning_rate)?,
            (Head::Link(h), Some(Head::Link(gh))) => h.step(&gh, cfg.learning_rate)?,
            _ => unreachable!("head gradient matches head kind"),
        }
    }

    let (best_epoch, phi, head) = best.expect("at least one epoch ran");
    let history = TrainHistory {
        inter_intra,
        epochs_run,
        best_epoch,
    };
    let (inference, report) = evaluate_trained(&ctx, &phi, &head, history)?;
    Ok(RunArtifacts {
        structural_sets: ctx.structural_sets.clone(),
        structural_thoughts: ctx.structural_thoughts.clone(),
        answer: inference.answer.clone(),
        inference,
        phi,
        head,
        report,
    })
}

/// Runs the reasoning pass with trained weights and measures it.
pub fn evaluate_trained(
    ctx: &PipelineContext<'_>,
    phi: &CondNetWeights,
    head: &Head,
    history: TrainHistory,
) -> Result<(Inference, RunReport)> {
    let g = ctx.graph;
    let splits = g.splits();
    let labels = g.labels();
    let link_data = prepare_link_data(g, ctx.config)?;
    let inference = kcot_infer(ctx, phi)?;
    let answer = &inference.answer;
    let accuracy = match (head, &link_data) {
        (Head::Classifier(h), None) => {
            let pred = h.predict(answer)?;
            let l = labels.unwrap_or_default();
            SplitAccuracy {
                train: class_accuracy(&pred, l, &splits.train),
                val: class_accuracy(&pred, l, &splits.val),
                test: class_accuracy(&pred, l, &splits.test),
            }
        }
        (Head::Link(h), Some(ld)) => {
            let acc = |p: &[LinkPair]| -> Result<Option<f64>> {
                if p.is_empty() {
                    Ok(None)
                } else {
                    Ok(Some(link_accuracy(&h.scores(answer, p)?, p)))
                }
            };
            SplitAccuracy {
                train: acc(&ld.train_eval)?,
                val: acc(&ld.val)?,
                test: acc(&ld.test)?,
            }
        }
        _ => return Err(KcotError::Config("head kind does not match the configured task".into())),
    };
    let report = build_report(ctx, &inference, accuracy, history, labels)?;
    Ok((inference, report))
}

fn build_report(
    ctx: &PipelineContext<'_>,
    inference: &Inference,
    accuracy: SplitAccuracy,
    history: TrainHistory,
    labels: Option<&[usize]>,
) -> Result<RunReport> {
    let answer = &inference.answer;
    let cfg = ctx.config;
    let root = SeededRng::new(cfg.seed);
    let mut notes = Vec::new();
    let delta = inference
        .steps
        .iter()
        .map(|s| misalignment(&ctx.structural_sets, &s.semantic_sets).map(|m| m.global))
        .collect::<Result<Vec<_>>>()?;
    let fit = if delta.len() >= 3 {
        match fit_contraction(&delta) {
            Ok(f) => Some(f),
            Err(e) => {
                notes.push(format!("contraction fit unavailable: {e}"));
                None
            }
        }
    } else {
        None
    };
    let mut trajectory: Vec<&DenseMatrix> = inference.steps.iter().map(|s| &s.hidden).collect();
    trajectory.push(answer);
    let lambda_hat = if trajectory.len() >= 2 {
        let lams = trajectory
            .windows(2)
            .map(|w| hull_contraction_lambda(w[0], w[1], &ctx.structural_sets))
            .collect::<Result<Vec<_>>>();
        match lams {
            Ok(v) => Some(v.iter().sum::<f64>() / v.len() as f64),
            Err(e) => {
                notes.push(format!("λ̂ unavailable: {e}"));
                None
            }
        }
    } else {
        None
    };
    let kappa_hat = Some(knn_stability_kappa(
        answer,
        cfg.kappa_sigma,
        cfg.kappa_trials,
        cfg.k,
        &mut root.derive(STREAM_KAPPA),
    )?);
    let (inter_intra_features, inter_intra_answer) = match labels {
        Some(l) => (
            inter_intra_ratio(&ctx.features, l).ok().map(|r| r.ratio),
            inter_intra_ratio(answer, l).ok().map(|r| r.ratio),
        ),
        None => (None, None),
    };
    let clusters = ctx.graph.class_count().max(2);
    let kmeans_refinement_delta = if ctx.node_count() > clusters {
        let h0 = trajectory[0];
        match kmeans_refinement_deltas(
            h0,
            &ctx.structural_sets,
            cfg.k,
            clusters,
            cfg.refinement_tau,
            cfg.effective_steps().max(1),
            root.derive(STREAM_REFINE).seed() ^ STREAM_REFINE,
        ) {
            Ok(v) => v,
            Err(e) => {
                notes.push(format!("k-means refinement baseline unavailable: {e}"));
                Vec::new()
            }
        }
    } else {
        Vec::new()
    };
    Ok(RunReport {
        delta,
        rho_hat: fit.as_ref().map(|f| f.rho),
        eps_hat: fit.as_ref().map(|f| f.eps),
        residual: fit.as_ref().map(|f| f.residual),
        accuracy,
        inter_intra: history.inter_intra,
        kappa_hat,
        lambda_hat,
        config: serde_json::to_value(cfg).map_err(|e| KcotError::Config(e.to_string()))?,
        seeds: Seeds {
            run: cfg.seed,
            rng_algorithm: SeededRng::ALGORITHM.into(),
        },
        diagnostics: Diagnostics {
            node_count: ctx.node_count(),
            edge_count: ctx.graph.edge_count(),
            epochs_run: history.epochs_run,
            best_epoch: history.best_epoch,
            non_contractive: fit.as_ref().map(|f| f.non_contractive),
            inter_intra_features,
            inter_intra_answer,
            kmeans_refinement_delta,
            notes,
        },
    })
}

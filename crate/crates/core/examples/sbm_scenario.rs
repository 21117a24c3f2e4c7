//! Seed-42 SBM scenario: pretrain, then run the reasoning pipeline and
//! its ablations with the mock generator.

use std::time::Instant;

use kcot_core::encoder::{pretrain_link_contrastive, normalize_adjacency, PretrainConfig};
use kcot_core::graph::{synth_sbm_tag, SbmConfig};
use kcot_core::pipeline::{train_downstream, Ablation, PipelineConfig};
use kcot_core::thoughts::{embed_texts, MockGenerator, ThoughtEngine};

fn main() -> kcot_core::Result<()> {
    let start = Instant::now();
    let g = synth_sbm_tag(&SbmConfig::default())?;
    let pcfg = PipelineConfig::default();
    let x = embed_texts(g.texts(), pcfg.text_dim)?;
    let adj = normalize_adjacency(&g);
    let pre = pretrain_link_contrastive(&g, &x, &adj, &PretrainConfig { seed: 42, ..PretrainConfig::default() })?;
    println!(
        "pretrain {:.1}s loss {:.4} -> {:.4}",
        start.elapsed().as_secs_f64(),
        pre.loss_curve[0],
        pre.loss_curve.last().unwrap()
    );
    let engine = ThoughtEngine::new(Box::new(MockGenerator::default()), None);
    let variants = [
        ("full", Ablation::default()),
        ("w/o str", Ablation::without_structural()),
        ("w/o sem", Ablation::without_semantic()),
        ("w/o prompt", Ablation::without_prompt()),
        ("w/o cot", Ablation::without_cot()),
    ];
    for (name, ablation) in variants {
        let t = Instant::now();
        let cfg = PipelineConfig { ablation, ..pcfg.clone() };
        let art = train_downstream(&g, &pre.weights, &engine, &cfg)?;
        let r = &art.report;
        println!(
            "{name:>10}: test {:?} val {:?} epochs {} best {} ii feat {:?} ans {:?} ({:.1}s)",
            r.accuracy.test, r.accuracy.val, r.diagnostics.epochs_run, r.diagnostics.best_epoch,
            r.diagnostics.inter_intra_features, r.diagnostics.inter_intra_answer, t.elapsed().as_secs_f64()
        );
    }
    let t = Instant::now();
    let cfg = PipelineConfig { steps: 4, ..pcfg };
    let art = train_downstream(&g, &pre.weights, &engine, &cfg)?;
    let r = &art.report;
    println!(
        "M=4: delta {:?} rho {:?} eps {:?} lambda {:?} kappa {:?} refine {:?} test {:?} ({:.1}s)",
        r.delta, r.rho_hat, r.eps_hat, r.lambda_hat, r.kappa_hat, r.diagnostics.kmeans_refinement_delta,
        r.accuracy.test, t.elapsed().as_secs_f64()
    );
    println!("total {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

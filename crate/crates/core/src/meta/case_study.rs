use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::store::{BoundModel, ParameterStore};
use super::train::inner_finetune_on;
use crate::chem::MolecularGraph;
use crate::embed::embed_var;
use crate::error::Result;
use crate::nn::Binder;
use crate::relgraph::{ground_truth, run_relation_var};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

/// Relation graph and embeddings of one task's support set after adapting Φ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDump {
    pub task: String,
    pub nodes: Vec<String>,
    /// Final normalized adjacency; empty when the relation graph is disabled.
    #[serde(rename = "A_hat")]
    pub a_hat: Vec<Vec<f64>>,
    #[serde(rename = "A_star")]
    pub a_star: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
}

fn rows<S: Scalar>(t: &Tensor<S>) -> Vec<Vec<f64>> {
    let t = t.to_f64();
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Fine-tunes Φ on `molecules`/`labels` (θ fixed), then runs the support-only
/// relation graph in eval mode. `dense` keeps every neighbor, which suits
/// class-imbalanced support sets.
#[allow(clippy::too_many_arguments)]
pub fn dump_task<S: Scalar>(
    store: &ParameterStore<S>,
    cfg: &TrainConfig,
    task: &str,
    ids: &[String],
    molecules: &[&MolecularGraph],
    labels: &[bool],
    dense: bool,
    rng: &mut dyn RngCore,
) -> Result<TaskDump> {
    let adapted = inner_finetune_on(store, molecules, labels, cfg, rng)?;
    let tape = Tape::new();
    let mut b = Binder::new(&tape);
    let model = BoundModel::bind(adapted.theta(&store.theta), &adapted.phi, &mut b, false, false);
    let g = model
        .encoder
        .forward(&tape, molecules, S::lit(cfg.encoder.dropout), None)?;
    let all: Vec<usize> = (0..molecules.len()).collect();
    let p = embed_var(
        &tape,
        &g,
        &all,
        labels,
        model.projection.as_ref(),
        cfg.embed_mode(),
        S::zero(),
        None,
    )?;
    let rel = run_relation_var(&tape, &p, &model.relation, &cfg.relation_options(dense), labels)?;
    Ok(TaskDump {
        task: task.to_string(),
        nodes: ids.to_vec(),
        a_hat: rel.a_hat.map(|a| rows(&a.value())).unwrap_or_default(),
        a_star: rows(&ground_truth::<S>(labels)),
        g: rows(&g.value()),
        p: rows(&p.value()),
        h: rows(&rel.h.value()),
    })
}

use rand::RngCore;
use rayon::prelude::*;

use super::config::{Reduction, TrainConfig};
use super::store::{BoundModel, Phi, Theta};
use crate::chem::MolecularGraph;
use crate::embed::embed_var;
use crate::error::{Error, Result};
use crate::nn::Binder;
use crate::relgraph::run_relation_var;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Loss of one phase with its parts.
pub struct PhaseLoss<'t, S: Scalar> {
    pub total: Var<'t, S>,
    pub cross_entropy: S,
    pub reg: S,
}

/// Shortens the generator borrow so it can be lent more than once.
pub(crate) fn reborrow<'a>(train: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    match train {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

fn targets(labels: &[bool]) -> Vec<usize> {
    labels.iter().map(|&y| usize::from(y)).collect()
}

/// Generic then property-aware embeddings of `graphs`, with prototypes from
/// the first `support_labels.len()` graphs.
fn embeddings<'t, S: Scalar>(
    tape: &'t Tape<S>,
    model: &BoundModel<'t, S>,
    cfg: &TrainConfig,
    graphs: &[&MolecularGraph],
    support_labels: &[bool],
    mut train: Option<&mut dyn RngCore>,
) -> Result<(Var<'t, S>, Var<'t, S>)> {
    let g = model
        .encoder
        .forward(tape, graphs, S::lit(cfg.encoder.dropout), reborrow(&mut train))?;
    let support: Vec<usize> = (0..support_labels.len()).collect();
    let p = embed_var(
        tape,
        &g,
        &support,
        support_labels,
        model.projection.as_ref(),
        cfg.embed_mode(),
        S::lit(cfg.projection_dropout),
        train,
    )?;
    Ok((g, p))
}

/// Combines a summed cross-entropy over `count` molecules with a summed
/// regularizer over an `s × s` support block.
fn combine<'t, S: Scalar>(
    ce: Var<'t, S>,
    reg: Var<'t, S>,
    count: usize,
    s: usize,
    cfg: &TrainConfig,
) -> Result<PhaseLoss<'t, S>> {
    let (ce, reg) = match cfg.loss_reduction {
        Reduction::Sum => (ce, reg),
        Reduction::Mean => (
            ce.scale(S::one() / S::from_usize(count).unwrap())?,
            reg.scale(S::one() / S::from_usize(s * s).unwrap())?,
        ),
    };
    let total = if cfg.ablation.no_reg { ce } else { ce.add(&reg)? };
    Ok(PhaseLoss {
        total,
        cross_entropy: ce.item(),
        reg: reg.item(),
    })
}

/// Support-set loss: one relation graph over the support molecules,
/// cross-entropy over them plus the regularizer.
pub(crate) fn support_loss<'t, S: Scalar>(
    tape: &'t Tape<S>,
    model: &BoundModel<'t, S>,
    cfg: &TrainConfig,
    graphs: &[&MolecularGraph],
    labels: &[bool],
    mut train: Option<&mut dyn RngCore>,
) -> Result<PhaseLoss<'t, S>> {
    let (_, p) = embeddings(tape, model, cfg, graphs, labels, reborrow(&mut train))?;
    let rel = run_relation_var(tape, &p, &model.relation, &cfg.relation_options(false), labels)?;
    let logits = model.classifier.forward(&rel.h)?;
    combine(logits.cross_entropy(&targets(labels))?, rel.reg, labels.len(), labels.len(), cfg)
}

/// Query-set loss: each query joins the support set in its own relation
/// graph. Cross-entropy is reduced over queries; the regularizer is averaged
/// over the query graphs before its own reduction.
pub(crate) fn query_loss<'t, S: Scalar>(
    tape: &'t Tape<S>,
    model: &BoundModel<'t, S>,
    cfg: &TrainConfig,
    support: &[&MolecularGraph],
    support_labels: &[bool],
    query: &[&MolecularGraph],
    query_labels: &[bool],
    train: Option<&mut dyn RngCore>,
) -> Result<PhaseLoss<'t, S>> {
    if query.is_empty() || query.len() != query_labels.len() {
        return Err(Error::contract("query set empty or mislabelled"));
    }
    let s = support.len();
    let all: Vec<&MolecularGraph> = support.iter().chain(query).copied().collect();
    let (_, p) = embeddings(tape, model, cfg, &all, support_labels, train)?;
    let opts = cfg.relation_options(false);
    let mut ce: Option<Var<'t, S>> = None;
    let mut reg: Option<Var<'t, S>> = None;
    for (q, &label) in query_labels.iter().enumerate() {
        let mut nodes: Vec<usize> = (0..s).collect();
        nodes.push(s + q);
        let rel = run_relation_var(tape, &p.gather(&nodes)?, &model.relation, &opts, support_labels)?;
        let logit = model.classifier.forward(&rel.h.gather(&[s])?)?;
        let term = logit.cross_entropy(&[usize::from(label)])?;
        ce = Some(match ce {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
        reg = Some(match reg {
            Some(acc) => acc.add(&rel.reg)?,
            None => rel.reg,
        });
    }
    let inv = S::one() / S::from_usize(query.len()).unwrap();
    combine(ce.unwrap(), reg.unwrap().scale(inv)?, query.len(), s, cfg)
}

/// `softmax(h · W_c + b)` per row.
pub fn classify<S: Scalar>(h: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    let tape = Tape::new();
    let out = tape
        .constant(h.clone())
        .affine(&tape.constant(weight.clone()), &tape.constant(bias.clone()))?
        .softmax_rows()?;
    Ok(out.value())
}

/// Probability of the active class for every query, each in its own
/// relation graph with the support set. Runs in eval mode without gradients.
pub(crate) fn score_queries<S: Scalar>(
    theta: &Theta<S>,
    phi: &Phi<S>,
    cfg: &TrainConfig,
    support: &[&MolecularGraph],
    support_labels: &[bool],
    query: &[&MolecularGraph],
) -> Result<Vec<S>> {
    let s = support.len();
    let all: Vec<&MolecularGraph> = support.iter().chain(query).copied().collect();
    let p = {
        let tape = Tape::new();
        let mut b = Binder::new(&tape);
        let model = BoundModel::bind(theta, phi, &mut b, false, false);
        embeddings(&tape, &model, cfg, &all, support_labels, None)?.1.value()
    };
    let opts = cfg.relation_options(false);
    (0..query.len())
        .into_par_iter()
        .map(|q| {
            let mut rows: Vec<&[S]> = (0..s).map(|i| p.row(i)).collect();
            rows.push(p.row(s + q));
            let tape = Tape::new();
            let mut b = Binder::new(&tape);
            let model = BoundModel::bind(theta, phi, &mut b, false, false);
            let h0 = tape.constant(Tensor::from_rows(&rows));
            let rel = run_relation_var(&tape, &h0, &model.relation, &opts, support_labels)?;
            let probs = model.classifier.forward(&rel.h.gather(&[s])?)?.softmax_rows()?;
            Ok(probs.value().get(0, 1))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Support,
    Query,
}

/// Episode loss with its parts and the gradient of the total with respect
/// to every parameter, keyed as in [`super::ParameterStore`].
#[derive(Clone, Debug)]
pub struct LossReport<S> {
    pub total: f64,
    pub cross_entropy: f64,
    pub reg: f64,
    pub grads: crate::tensor::NamedTensors<S>,
}

pub fn episode_loss<S: Scalar>(
    dataset: &crate::chem::PropertyDataset,
    episode: &super::Episode,
    theta: &Theta<S>,
    phi: &Phi<S>,
    cfg: &TrainConfig,
    phase: Phase,
    train: Option<&mut dyn RngCore>,
) -> Result<LossReport<S>> {
    let pick = |idx: &[usize]| idx.iter().map(|&i| &dataset.molecules[i]).collect::<Vec<_>>();
    let support = pick(&episode.support);
    let tape = Tape::new();
    let mut b = Binder::new(&tape);
    let model = BoundModel::bind(theta, phi, &mut b, true, true);
    let loss = match phase {
        Phase::Support => support_loss(&tape, &model, cfg, &support, &episode.support_labels, train)?,
        Phase::Query => query_loss(
            &tape,
            &model,
            cfg,
            &support,
            &episode.support_labels,
            &pick(&episode.query),
            &episode.query_labels,
            train,
        )?,
    };
    let total = loss.total.item().to_f64_lossy();
    let (cross_entropy, reg) = (loss.cross_entropy.to_f64_lossy(), loss.reg.to_f64_lossy());
    let grads = b.collect(&tape.backward(loss.total)?);
    Ok(LossReport {
        total,
        cross_entropy,
        reg,
        grads,
    })
}

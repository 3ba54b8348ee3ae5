use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::forward::score_queries;
use super::store::ParameterStore;
use super::train::inner_finetune_on;
use crate::chem::{MolecularGraph, PropertyDataset};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;

/// Area under the ROC curve via the rank-sum statistic, with tied scores
/// sharing their average rank. `None` when either class is absent.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "one label per score");
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_task_auc: BTreeMap<String, f64>,
    pub mean: f64,
    /// Population standard deviation over tasks.
    pub std: f64,
}

impl EvalReport {
    pub fn from_aucs(per_task_auc: BTreeMap<String, f64>) -> Self {
        let (mean, std) = mean_std(per_task_auc.values().copied());
        Self {
            per_task_auc,
            mean,
            std,
        }
    }
}

pub fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
    (mean, var.sqrt())
}

/// AUC on one property: a fresh K-shot support set is drawn, Φ is fine-tuned
/// on it, and every other labelled molecule is scored.
pub fn evaluate_task<S: Scalar>(
    dataset: &PropertyDataset,
    store: &ParameterStore<S>,
    cfg: &TrainConfig,
    property: usize,
    seed: u64,
) -> Result<Option<f64>> {
    let (mut neg, mut pos) = dataset.class_members(property);
    let k = cfg.k;
    if neg.len() < k || pos.len() < k {
        return Err(Error::TaskUnusable(dataset.property_names[property].clone()));
    }
    let mut r = rng::stream(seed, Stream::Evaluation, property as u64);
    neg.shuffle(&mut r);
    pos.shuffle(&mut r);
    let support_idx: Vec<usize> = neg[..k].iter().chain(&pos[..k]).copied().collect();
    let support_labels: Vec<bool> = (0..2 * k).map(|i| i >= k).collect();
    let query_idx: Vec<usize> = neg[k..].iter().chain(&pos[k..]).copied().collect();
    let query_labels: Vec<bool> = (0..query_idx.len()).map(|i| i >= neg.len() - k).collect();
    let support: Vec<&MolecularGraph> = support_idx.iter().map(|&i| &dataset.molecules[i]).collect();
    let query: Vec<&MolecularGraph> = query_idx.iter().map(|&i| &dataset.molecules[i]).collect();

    let mut drop_rng = rng::stream(seed, Stream::Evaluation, 1 << 32 | property as u64);
    let adapted = inner_finetune_on(store, &support, &support_labels, cfg, &mut drop_rng)?;
    let scores: Vec<f64> = score_queries(
        adapted.theta(&store.theta),
        &adapted.phi,
        cfg,
        &support,
        &support_labels,
        &query,
    )?
    .into_iter()
    .map(|s| s.to_f64_lossy())
    .collect();
    Ok(roc_auc(&scores, &query_labels))
}

/// Per-task AUC over the usable meta-test properties.
pub fn evaluate<S: Scalar>(
    dataset: &PropertyDataset,
    store: &ParameterStore<S>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<EvalReport> {
    let props = dataset.usable_meta_test();
    if props.is_empty() {
        return Err(Error::TaskUnusable("dataset has no usable meta-test property".into()));
    }
    let mut aucs = BTreeMap::new();
    for p in props {
        let name = &dataset.property_names[p];
        match evaluate_task(dataset, store, cfg, p, seed)? {
            Some(auc) => {
                aucs.insert(name.clone(), auc);
            }
            None => log::warn!("{name}: query set has a single class; skipped"),
        }
    }
    if aucs.is_empty() {
        return Err(Error::TaskUnusable("every meta-test query set had a single class".into()));
    }
    Ok(EvalReport::from_aucs(aucs))
}

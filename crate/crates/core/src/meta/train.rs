use std::io::Write;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::episode::{sample_episode, trainable, Episode};
use super::forward::{query_loss, support_loss};
use super::store::{BoundModel, ParameterStore, Phi, Theta, PHI, THETA};
use crate::chem::{MolecularGraph, PropertyDataset};
use crate::error::{Error, Result};
use crate::nn::{Binder, Parameters};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;
use crate::tensor::{sgd_step, AdamConfig, AdamState, NamedTensors, Tape};

/// Task-local parameters produced by [`inner_finetune`].
#[derive(Clone, Debug)]
pub struct Adapted<S> {
    /// A task-local copy of θ, present only under `tune_all`.
    pub theta: Option<Theta<S>>,
    pub phi: Phi<S>,
    /// Support loss before the first update.
    pub support_loss: f64,
}

impl<S: Scalar> Adapted<S> {
    pub fn theta<'a>(&'a self, global: &'a Theta<S>) -> &'a Theta<S> {
        self.theta.as_ref().unwrap_or(global)
    }
}

fn graphs<'a>(dataset: &'a PropertyDataset, idx: &[usize]) -> Vec<&'a MolecularGraph> {
    idx.iter().map(|&i| &dataset.molecules[i]).collect()
}

/// Fine-tunes Φ (and θ under `tune_all`) on a support set with plain
/// gradient steps. The store is only read.
pub fn inner_finetune_on<S: Scalar>(
    store: &ParameterStore<S>,
    support: &[&MolecularGraph],
    labels: &[bool],
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<Adapted<S>> {
    let tune_all = cfg.ablation.tune_all;
    let mut theta = tune_all.then(|| store.theta.clone());
    let mut phi = store.phi.clone();
    let lr = S::lit(cfg.inner_lr);
    let mut first_loss = None;
    for _ in 0..cfg.inner_steps {
        let tape = Tape::new();
        let mut b = Binder::new(&tape);
        let current_theta = theta.as_ref().unwrap_or(&store.theta);
        let model = BoundModel::bind(current_theta, &phi, &mut b, tune_all, true);
        let loss = support_loss(&tape, &model, cfg, support, labels, Some(&mut *rng))?;
        first_loss.get_or_insert(loss.total.item().to_f64_lossy());
        let grads = b.collect(&tape.backward(loss.total)?);
        let updated = sgd_step(&phi.named(PHI), &grads, lr)?;
        phi.load_named(PHI, &updated)?;
        if let Some(t) = theta.as_mut() {
            let updated = sgd_step(&t.named(THETA), &grads, lr)?;
            t.load_named(THETA, &updated)?;
        }
    }
    let support_loss = match first_loss {
        Some(v) => v,
        None => {
            let tape = Tape::new();
            let mut b = Binder::new(&tape);
            let model = BoundModel::bind(&store.theta, &phi, &mut b, false, false);
            support_loss(&tape, &model, cfg, support, labels, Some(rng))?
                .total
                .item()
                .to_f64_lossy()
        }
    };
    Ok(Adapted {
        theta,
        phi,
        support_loss,
    })
}

pub fn inner_finetune<S: Scalar>(
    dataset: &PropertyDataset,
    episode: &Episode,
    store: &ParameterStore<S>,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<Adapted<S>> {
    inner_finetune_on(
        store,
        &graphs(dataset, &episode.support),
        &episode.support_labels,
        cfg,
        rng,
    )
}

/// Per-task losses of one outer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub task: String,
    pub support_loss: f64,
    pub query_loss: f64,
    pub reg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub episode: usize,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub episodes: Vec<EpisodeRecord>,
    pub validation: Vec<ValidationRecord>,
    pub validation_task: Option<String>,
    /// Episode whose parameters were returned, when validation ran.
    pub best_episode: Option<usize>,
    pub stopped_early: bool,
}

impl History {
    /// One JSON object per line: episode records in order, then validation
    /// records.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.episodes {
            serde_json::to_writer(&mut out, r)?;
            writeln!(out).map_err(|e| Error::io("history", e))?;
        }
        for r in &self.validation {
            serde_json::to_writer(&mut out, r)?;
            writeln!(out).map_err(|e| Error::io("history", e))?;
        }
        Ok(())
    }
}

struct TaskResult<S> {
    grads: NamedTensors<S>,
    record: EpisodeRecord,
}

fn run_task<S: Scalar>(
    dataset: &PropertyDataset,
    store: &ParameterStore<S>,
    cfg: &TrainConfig,
    episode: &Episode,
    index: usize,
    stream_index: u64,
) -> Result<TaskResult<S>> {
    let mut drop_rng = rng::stream(cfg.seed, Stream::Dropout, stream_index);
    let adapted = inner_finetune(dataset, episode, store, cfg, &mut drop_rng)?;
    let tape = Tape::new();
    let mut b = Binder::new(&tape);
    let model = BoundModel::bind(adapted.theta(&store.theta), &adapted.phi, &mut b, true, true);
    let loss = query_loss(
        &tape,
        &model,
        cfg,
        &graphs(dataset, &episode.support),
        &episode.support_labels,
        &graphs(dataset, &episode.query),
        &episode.query_labels,
        Some(&mut drop_rng),
    )?;
    let record = EpisodeRecord {
        episode: index,
        task: dataset.property_names[episode.property].clone(),
        support_loss: adapted.support_loss,
        query_loss: loss.cross_entropy.to_f64_lossy(),
        reg: loss.reg.to_f64_lossy(),
    };
    let grads = b.collect(&tape.backward(loss.total)?);
    Ok(TaskResult { grads, record })
}

/// Query loss after fine-tuning, averaged over fixed validation episodes.
fn validation_loss<S: Scalar>(
    dataset: &PropertyDataset,
    store: &ParameterStore<S>,
    cfg: &TrainConfig,
    episodes: &[Episode],
) -> Result<f64> {
    let losses: Vec<f64> = episodes
        .par_iter()
        .enumerate()
        .map(|(i, ep)| {
            let mut drop_rng = rng::stream(cfg.seed, Stream::Validation, 1 << 32 | i as u64);
            let adapted = inner_finetune(dataset, ep, store, cfg, &mut drop_rng)?;
            let tape = Tape::new();
            let mut b = Binder::new(&tape);
            let model = BoundModel::bind(adapted.theta(&store.theta), &adapted.phi, &mut b, false, false);
            let loss = query_loss(
                &tape,
                &model,
                cfg,
                &graphs(dataset, &ep.support),
                &ep.support_labels,
                &graphs(dataset, &ep.query),
                &ep.query_labels,
                None,
            )?;
            Ok(loss.total.item().to_f64_lossy())
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Meta-trains from a fresh initialization drawn from `cfg.seed`.
pub fn meta_train<S: Scalar>(dataset: &PropertyDataset, cfg: &TrainConfig) -> Result<(ParameterStore<S>, History)> {
    cfg.validate()?;
    let store = ParameterStore::init(cfg, &mut rng::stream(cfg.seed, Stream::Init, 0));
    meta_train_from(dataset, cfg, store)
}

/// First-order meta-training: query-loss gradients taken at the adapted
/// parameters are averaged over the meta-batch and applied with Adam.
pub fn meta_train_from<S: Scalar>(
    dataset: &PropertyDataset,
    cfg: &TrainConfig,
    mut store: ParameterStore<S>,
) -> Result<(ParameterStore<S>, History)> {
    cfg.validate()?;
    let mut pool: Vec<usize> = dataset
        .meta_train
        .iter()
        .copied()
        .filter(|&p| trainable(dataset, p, cfg.k))
        .collect();
    if pool.is_empty() {
        return Err(Error::Config(format!(
            "no meta-train property has {} molecules per class plus a query",
            cfg.k
        )));
    }
    let mut history = History::default();
    let validation = if pool.len() >= 2 {
        let prop = pool.remove((cfg.seed % pool.len() as u64) as usize);
        history.validation_task = Some(dataset.property_names[prop].clone());
        (0..cfg.val_episodes)
            .map(|i| {
                let mut r = rng::stream(cfg.seed, Stream::Validation, i as u64);
                sample_episode(dataset, prop, cfg.k, cfg.n_query, &mut r)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    let mut adam = AdamState::new(AdamConfig {
        lr: cfg.meta_lr,
        ..AdamConfig::default()
    });
    let mut best: Option<(f64, usize, ParameterStore<S>)> = None;
    let mut stale = 0;
    for ep in 0..cfg.max_episodes {
        let episodes: Vec<(Episode, u64)> = (0..cfg.meta_batch)
            .map(|slot| {
                let index = (ep * cfg.meta_batch + slot) as u64;
                let mut r = rng::stream(cfg.seed, Stream::Sampling, index);
                let prop = pool[r.gen_range(0..pool.len())];
                Ok((sample_episode(dataset, prop, cfg.k, cfg.n_query, &mut r)?, index))
            })
            .collect::<Result<_>>()?;
        let results: Vec<TaskResult<S>> = episodes
            .par_iter()
            .map(|(e, index)| run_task(dataset, &store, cfg, e, ep, *index))
            .collect::<Result<_>>()?;

        let scale = S::one() / S::from_usize(results.len()).unwrap();
        let mut total = NamedTensors::new();
        for r in &results {
            for (name, g) in &r.grads {
                match total.get_mut(name) {
                    None => {
                        total.insert(name.clone(), g.map(|v| v * scale));
                    }
                    Some(acc) => {
                        for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a = *a + v * scale;
                        }
                    }
                }
            }
        }
        let mut params = store.named("");
        adam.step(&mut params, &total)?;
        store.load_named("", &params)?;
        history.episodes.extend(results.into_iter().map(|r| r.record));

        if validation.is_empty() || (ep + 1) % cfg.val_every != 0 {
            continue;
        }
        let val_loss = validation_loss(dataset, &store, cfg, &validation)?;
        log::debug!("episode {ep}: validation loss {val_loss:.5}");
        history.validation.push(ValidationRecord { episode: ep, val_loss });
        if best.as_ref().map_or(true, |(b, _, _)| val_loss < *b) {
            best = Some((val_loss, ep, store.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.early_stop_patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    if let Some((_, ep, params)) = best {
        history.best_episode = Some(ep);
        store = params;
    }
    Ok((store, history))
}

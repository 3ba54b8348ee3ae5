use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbedMode, PROJECTION_DIM, PROJECTION_DROPOUT};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::relgraph::{Normalization, RelationOptions, Similarity};

/// Model variants obtained by switching off or replacing one component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Use the generic embedding directly, with no projection.
    pub no_p: bool,
    /// Project `[g; g]` instead of `[g; b]`.
    pub no_context: bool,
    /// Skip the relation graph.
    pub no_r: bool,
    /// Cosine similarity in place of the adjacency MLP.
    pub cos_sim: bool,
    /// Keep all neighbors instead of the top K.
    pub no_knn: bool,
    pub no_reg: bool,
    /// Fine-tune every parameter in the inner loop.
    pub tune_all: bool,
}

impl Ablation {
    pub const NAMES: [&'static str; 7] = ["no_P", "no_context", "no_R", "cos_sim", "no_knn", "no_reg", "tune_all"];

    pub fn enable(&mut self, name: &str) -> Result<()> {
        let flag = match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "no_p" => &mut self.no_p,
            "no_context" => &mut self.no_context,
            "no_r" => &mut self.no_r,
            "cos_sim" => &mut self.cos_sim,
            "no_knn" => &mut self.no_knn,
            "no_reg" => &mut self.no_reg,
            "tune_all" => &mut self.tune_all,
            _ => {
                return Err(Error::Config(format!(
                    "unknown ablation {name:?}; expected one of {}",
                    Self::NAMES.join(", ")
                )))
            }
        };
        *flag = true;
        Ok(())
    }

    pub fn enabled(&self) -> Vec<&'static str> {
        let flags = [
            self.no_p,
            self.no_context,
            self.no_r,
            self.cos_sim,
            self.no_knn,
            self.no_reg,
            self.tune_all,
        ];
        Self::NAMES.iter().zip(flags).filter(|(_, on)| *on).map(|(n, _)| *n).collect()
    }
}

impl FromStr for Ablation {
    type Err = Error;

    /// Comma-separated flag names; `full` or an empty string is no ablation.
    fn from_str(s: &str) -> Result<Self> {
        let mut out = Self::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty() && *p != "full") {
            out.enable(part)?;
        }
        Ok(out)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let on = self.enabled();
        if on.is_empty() {
            f.write_str("full")
        } else {
            f.write_str(&on.join(","))
        }
    }
}

/// How per-molecule losses and regularizer entries are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Cross-entropy averaged over molecules, regularizer averaged over the
    /// entries of the support block.
    #[default]
    Mean,
    /// Cross-entropy summed over molecules, regularizer summed over support
    /// rows.
    Sum,
}

impl FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "sum" => Ok(Self::Sum),
            _ => Err(Error::Config(format!("unknown loss reduction {s:?}; expected mean or sum"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Shots per class.
    pub k: usize,
    /// Query molecules per meta-training episode.
    pub n_query: usize,
    pub max_episodes: usize,
    pub meta_batch: usize,
    pub inner_lr: f64,
    pub inner_steps: usize,
    pub meta_lr: f64,
    pub t_iters: usize,
    pub early_stop_patience: usize,
    /// Episodes between validation checks; patience counts checks.
    pub val_every: usize,
    pub val_episodes: usize,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub projection_dim: usize,
    pub projection_dropout: f64,
    pub normalization: Normalization,
    pub loss_reduction: Reduction,
    /// Keep each node's own features in the refinement step.
    pub relation_self_term: bool,
    /// Standardize embeddings over the nodes of each relation graph.
    pub relation_standardize: bool,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 10,
            n_query: 16,
            max_episodes: 2000,
            meta_batch: 4,
            inner_lr: 0.05,
            inner_steps: 1,
            meta_lr: 0.001,
            t_iters: 2,
            early_stop_patience: 10,
            val_every: 1,
            val_episodes: 4,
            seed: 0,
            encoder: EncoderConfig::default(),
            projection_dim: PROJECTION_DIM,
            projection_dropout: PROJECTION_DROPOUT,
            normalization: Normalization::Softmax,
            loss_reduction: Reduction::Mean,
            relation_self_term: true,
            relation_standardize: true,
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let positive = [
            ("k", self.k),
            ("n_query", self.n_query),
            ("meta_batch", self.meta_batch),
            ("val_every", self.val_every),
            ("val_episodes", self.val_episodes),
            ("projection_dim", self.projection_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.inner_steps == 0 && self.ablation.tune_all {
            return Err(Error::Config("tune_all needs at least one inner step".into()));
        }
        for (name, v) in [("inner_lr", self.inner_lr), ("meta_lr", self.meta_lr)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number")));
            }
        }
        if !(0.0..1.0).contains(&self.projection_dropout) {
            return Err(Error::Config("projection_dropout outside [0, 1)".into()));
        }
        Ok(())
    }

    pub fn embed_mode(&self) -> EmbedMode {
        if self.ablation.no_p {
            EmbedMode::Identity
        } else if self.ablation.no_context {
            EmbedMode::NoContext
        } else {
            EmbedMode::Full
        }
    }

    /// Width of the embeddings entering the relation graph.
    pub fn relation_dim(&self) -> usize {
        if self.ablation.no_p {
            self.encoder.hidden_dim
        } else {
            self.projection_dim
        }
    }

    pub fn relation_options(&self, dense: bool) -> RelationOptions {
        RelationOptions {
            iterations: if self.ablation.no_r { 0 } else { self.t_iters },
            k: self.k,
            dense: dense || self.ablation.no_knn,
            similarity: if self.ablation.cos_sim {
                Similarity::Cosine
            } else {
                Similarity::Learned
            },
            normalization: self.normalization,
            standardize: self.relation_standardize,
            self_term: self.relation_self_term,
        }
    }
}

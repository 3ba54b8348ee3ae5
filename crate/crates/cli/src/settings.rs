//! Training configuration from an optional TOML file plus flags. Flags win.

use std::path::PathBuf;

use clap::Args;
use par::meta::{Ablation, TrainConfig};

use crate::failure::Failure;

/// Every flag is optional so a config file value survives unless the flag is
/// given. Defaults shown in help are the built-in ones.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML file with any training setting; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Shots per class [default: 10]
    #[arg(long)]
    pub k: Option<usize>,
    /// Query molecules per meta-training episode [default: 16]
    #[arg(long)]
    pub shots_query: Option<usize>,
    /// Maximum outer steps [default: 2000]
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Tasks per outer step [default: 4]
    #[arg(long)]
    pub meta_batch: Option<usize>,
    /// Fine-tuning learning rate [default: 0.05]
    #[arg(long)]
    pub inner_lr: Option<f64>,
    /// Meta-learning rate [default: 0.001]
    #[arg(long)]
    pub meta_lr: Option<f64>,
    /// Fine-tuning update steps [default: 1]
    #[arg(long)]
    pub inner_steps: Option<usize>,
    /// Relation-graph iterations [default: 2]
    #[arg(long)]
    pub t_iters: Option<usize>,
    /// GNN layers [default: 5]
    #[arg(long)]
    pub encoder_layers: Option<usize>,
    /// GNN hidden dimension [default: 300]
    #[arg(long)]
    pub encoder_dim: Option<usize>,
    /// GNN dropout [default: 0.5]
    #[arg(long)]
    pub encoder_dropout: Option<f64>,
    /// Validation checks without improvement before stopping [default: 10]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Ablation flag, repeatable or comma separated: no_P, no_context, no_R,
    /// cos_sim, no_knn, no_reg, tune_all [default: none]
    #[arg(long, value_delimiter = ',')]
    pub ablation: Vec<String>,
    /// Seed for every random stream [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<TrainConfig, Failure> {
        let mut cfg = match &self.config {
            None => TrainConfig::default(),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
                toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?
            }
        };
        macro_rules! set {
            ($flag:ident => $($field:ident).+) => {
                if let Some(v) = self.$flag {
                    cfg.$($field).+ = v;
                }
            };
        }
        set!(k => k);
        set!(shots_query => n_query);
        set!(episodes => max_episodes);
        set!(meta_batch => meta_batch);
        set!(inner_lr => inner_lr);
        set!(meta_lr => meta_lr);
        set!(inner_steps => inner_steps);
        set!(t_iters => t_iters);
        set!(encoder_layers => encoder.num_layers);
        set!(encoder_dim => encoder.hidden_dim);
        set!(encoder_dropout => encoder.dropout);
        set!(patience => early_stop_patience);
        set!(seed => seed);
        if !self.ablation.is_empty() {
            let mut ablation = Ablation::default();
            for name in self.ablation.iter().map(|s| s.trim()).filter(|s| !s.is_empty() && *s != "full") {
                ablation.enable(name)?;
            }
            cfg.ablation = ablation;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

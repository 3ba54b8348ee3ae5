//! Episodic meta-learning: task sampling, the selective inner loop over Φ,
//! first-order outer updates, evaluation and persistence.

pub mod case_study;
pub mod checkpoint;
pub mod config;
pub mod episode;
pub mod eval;
pub mod forward;
pub mod store;
pub mod train;

pub use case_study::{dump_task, TaskDump};
pub use checkpoint::{checkpoint_from_str, checkpoint_to_string, load_checkpoint, save_checkpoint};
pub use config::{Ablation, Reduction, TrainConfig};
pub use episode::{sample_episode, Episode};
pub use eval::{evaluate, evaluate_task, mean_std, roc_auc, EvalReport};
pub use forward::{classify, episode_loss, LossReport, Phase};
pub use store::{ParameterStore, Phi, Theta};
pub use train::{inner_finetune, inner_finetune_on, meta_train, meta_train_from, Adapted, EpisodeRecord, History, ValidationRecord};

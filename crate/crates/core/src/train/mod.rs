//! The optimization loop: ray batches, the four-term objective and Adam.

mod config;
mod loss;
mod trainer;

pub use config::{Holdout, TrainConfig};
pub use loss::{
    attribute_loss, focal_term, latent_reg_grad, latent_reg_loss, mask_loss, optimal_beta, recon_loss, total_loss, LossParts, LossWeights, LOG_GUARD,
};
pub use trainer::{checkpoint_path, StepMetrics, TrainFrame, Trainer, TrainingSet, METRICS_HEADER};

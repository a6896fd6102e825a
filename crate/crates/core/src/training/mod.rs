//! Regression heads, losses, optimizer, synthetic data and the training loop.

pub mod adamw;
pub mod checkpoint;
pub mod data;
pub mod heads;
pub mod loss;
pub mod model;
pub mod train;

pub use adamw::{AdamW, AdamWConfig};
pub use checkpoint::Checkpoint;
pub use data::{synth_dataset, ContextEncoder, DataConfig, SyntheticSample};
pub use heads::{MeanParams, PredictedParams, RegressionHeads};
pub use loss::{total_loss, BodyVars, LossTerms, LossValues, LossWeights};
pub use model::Model;
pub use train::{train_model, write_loss_csv, LossRecord, TrainConfig};

use crate::body::{make_synthetic_template, PreparedTemplate};
use crate::config::RunConfig;
use crate::error::Result;
use crate::numeric::RngSeed;

/// Template and dataset determined by the config's data section and `seed`.
pub fn synthetic_task(cfg: &RunConfig, seed: RngSeed) -> Result<(PreparedTemplate, Vec<SyntheticSample>)> {
    let template = make_synthetic_template(RngSeed(cfg.data.template_seed), cfg.data.num_vertices)?.prepared();
    let data = synth_dataset(seed.derive("data"), cfg.data.num_samples, &cfg.decoder, &cfg.data, &template)?;
    Ok((template, data))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub curve: Vec<LossRecord>,
}

/// Builds the synthetic task, initializes a model from `seed`, and trains it.
pub fn train(cfg: &RunConfig, seed: RngSeed) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (template, data) = synthetic_task(cfg, seed)?;
    let mut model = Model::new(&cfg.decoder, seed)?;
    let curve = train_model(&mut model, &data, &template, &cfg.train)?;
    Ok(TrainOutcome { checkpoint: Checkpoint { config: cfg.clone(), model }, curve })
}

//! Deterministic single-threaded training loop.

use std::io::Write;

use crate::body::{stack_params, PreparedTemplate};
use crate::error::{Error, Result};
use crate::numeric::{Tape, Tensor};

use super::adamw::{AdamW, AdamWConfig};
use super::data::{stack_contexts, SyntheticSample};
use super::loss::{total_loss, BodyVars, LossValues, LossWeights};
use super::model::Model;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 500, batch_size: 8, optimizer: AdamWConfig::default(), weights: LossWeights::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        self.optimizer.validate()?;
        self.weights.validate()
    }
}

/// Loss of one batch before the update at `step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: LossValues,
}

pub const LOSS_CSV_HEADER: &str = "step,pose,shape,joints3d,joints2d,vertices,total";

/// Writes the curve as CSV with [`LOSS_CSV_HEADER`].
pub fn write_loss_csv(mut out: impl Write, curve: &[LossRecord]) -> Result<()> {
    writeln!(out, "{LOSS_CSV_HEADER}")?;
    for r in curve {
        let l = &r.loss;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step, l.pose, l.shape, l.joints3d, l.joints2d, l.vertices, l.total
        )?;
    }
    Ok(())
}

/// Indices of the batch used at `step`: consecutive samples, wrapping around.
pub fn batch_indices(step: usize, batch_size: usize, n: usize) -> Vec<usize> {
    let b = batch_size.min(n);
    (0..b).map(|i| (step * b + i) % n).collect()
}

struct Batch {
    context: Tensor,
    pose: Tensor,
    shape: Tensor,
    joints3d: Tensor,
    joints2d: Tensor,
    vertices: Tensor,
}

fn stack(items: Vec<&Tensor>) -> Result<Tensor> {
    let mut shape = vec![items.len()];
    shape.extend_from_slice(items[0].shape());
    Tensor::new(&shape, items.iter().flat_map(|t| t.data().iter().copied()).collect())
}

fn make_batch(dataset: &[SyntheticSample], idx: &[usize]) -> Result<Batch> {
    let samples: Vec<&SyntheticSample> = idx.iter().map(|&i| &dataset[i]).collect();
    let params: Vec<_> = samples.iter().map(|s| s.params.clone()).collect();
    let (pose, shape, _) = stack_params(&params)?;
    Ok(Batch {
        context: stack_contexts(&samples)?,
        pose,
        shape,
        joints3d: stack(samples.iter().map(|s| &s.joints3d).collect())?,
        joints2d: stack(samples.iter().map(|s| &s.joints2d).collect())?,
        vertices: stack(samples.iter().map(|s| &s.vertices).collect())?,
    })
}

fn targets(tape: &mut Tape, b: &Batch) -> BodyVars {
    BodyVars {
        pose: tape.constant(b.pose.clone()),
        shape: tape.constant(b.shape.clone()),
        joints3d: tape.constant(b.joints3d.clone()),
        joints2d: tape.constant(b.joints2d.clone()),
        vertices: tape.constant(b.vertices.clone()),
    }
}

/// Loss of the model on `samples` without gradients.
pub fn evaluate_loss(
    model: &Model,
    samples: &[SyntheticSample],
    template: &PreparedTemplate,
    weights: &LossWeights,
) -> Result<LossValues> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    let batch = make_batch(samples, &idx)?;
    let mut tape = Tape::new();
    let p = model.store.bind_frozen(&mut tape);
    let ctx = tape.constant(batch.context.clone());
    let pred = model.forward_body(&mut tape, &p, ctx, template)?;
    let target = targets(&mut tape, &batch);
    Ok(total_loss(&mut tape, &pred, &target, weights)?.values(&tape))
}

fn divergence(step: usize, e: Error) -> Error {
    match e {
        Error::Numeric(reason) => Error::Divergence { step, reason },
        other => other,
    }
}

/// Runs `cfg.steps` AdamW updates. The returned curve has one record per
/// step plus a final record measured after the last update.
pub fn train_model(
    model: &mut Model,
    dataset: &[SyntheticSample],
    template: &PreparedTemplate,
    cfg: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    if dataset.is_empty() {
        return Err(Error::config("training needs a nonempty dataset"));
    }
    cfg.validate()?;
    let mut opt = AdamW::new(cfg.optimizer, model.store.values());
    let mut curve = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let batch = make_batch(dataset, &batch_indices(step, cfg.batch_size, dataset.len()))?;
        let mut tape = Tape::new();
        let p = model.store.bind(&mut tape);
        // The context is a constant leaf: the encoder surrogate is frozen.
        let ctx = tape.constant(batch.context.clone());
        let pred = model.forward_body(&mut tape, &p, ctx, template).map_err(|e| divergence(step, e))?;
        let target = targets(&mut tape, &batch);
        let terms = total_loss(&mut tape, &pred, &target, &cfg.weights)?;
        let loss = terms.values(&tape);
        if !loss.total.is_finite() {
            return Err(Error::Divergence { step, reason: format!("loss is {}", loss.total) });
        }
        curve.push(LossRecord { step, loss });
        if step == cfg.steps {
            break;
        }
        let mut grads = tape.backward(terms.total)?;
        let g: Vec<Option<Tensor>> = p.vars().iter().map(|&v| grads.take(v)).collect();
        opt.step(model.store.values_mut(), &g).map_err(|e| divergence(step, e))?;
    }
    Ok(curve)
}

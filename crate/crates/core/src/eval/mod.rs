//! MPJPE, PA-MPJPE and PVE over a dataset.

pub mod metrics;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use metrics::{mpjpe, pa_mpjpe, procrustes_align, procrustes_transform, pve, Similarity};

use crate::body::{pose_bodies, PreparedTemplate, SmplParams, NUM_JOINTS};
use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::training::data::stack_contexts;
use crate::training::{Model, SyntheticSample};

/// Joint subtracted before computing MPJPE and PVE.
pub const ROOT_JOINT: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
    pub pve_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
    pub pve_mm: f64,
    /// Joint indices the joint metrics were computed on.
    pub joints: Vec<usize>,
    pub per_sample: Vec<SampleMetrics>,
}

impl EvalReport {
    pub fn from_samples(per_sample: Vec<SampleMetrics>, joints: Vec<usize>) -> Result<Self> {
        if per_sample.is_empty() {
            return Err(Error::State("no samples evaluated".into()));
        }
        let n = per_sample.len() as f64;
        let mean = |f: fn(&SampleMetrics) -> f64| per_sample.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            mpjpe_mm: mean(|s| s.mpjpe_mm),
            pa_mpjpe_mm: mean(|s| s.pa_mpjpe_mm),
            pve_mm: mean(|s| s.pve_mm),
            joints,
            per_sample,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per sample: `sample,mpjpe_mm,pa_mpjpe_mm,pve_mm`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "sample,mpjpe_mm,pa_mpjpe_mm,pve_mm")?;
        for (i, s) in self.per_sample.iter().enumerate() {
            writeln!(out, "{i},{},{},{}", s.mpjpe_mm, s.pa_mpjpe_mm, s.pve_mm)?;
        }
        Ok(())
    }
}

/// All model joints.
pub fn all_joints() -> Vec<usize> {
    (0..NUM_JOINTS).collect()
}

fn select(points: &Tensor, rows: &[usize]) -> Tensor {
    let data = rows.iter().flat_map(|&j| metrics::point(points, j)).collect();
    Tensor::from_parts(vec![rows.len(), 3], data)
}

/// Metrics for one body. Both bodies are translated so their root joint is at
/// the origin; the joint metrics use only `joints`.
pub fn sample_metrics(
    pred_joints: &Tensor,
    pred_vertices: &Tensor,
    gt_joints: &Tensor,
    gt_vertices: &Tensor,
    joints: &[usize],
) -> Result<SampleMetrics> {
    if let Some(&j) = joints.iter().find(|&&j| j >= pred_joints.shape()[0]) {
        return Err(Error::dim(format!("joint index {j} out of range")));
    }
    let pr = metrics::point(pred_joints, ROOT_JOINT);
    let gr = metrics::point(gt_joints, ROOT_JOINT);
    let pj = select(&metrics::translate(pred_joints, pr), joints);
    let gj = select(&metrics::translate(gt_joints, gr), joints);
    let m = mpjpe(&pj, &gj)?;
    let pa = pa_mpjpe(&pj, &gj)?;
    let v = pve(&metrics::translate(pred_vertices, pr), &metrics::translate(gt_vertices, gr))?;
    Ok(SampleMetrics { mpjpe_mm: m, pa_mpjpe_mm: pa, pve_mm: v })
}

/// Scores predicted parameters against the dataset's ground truth.
pub fn evaluate_predictions(
    preds: &[SmplParams],
    samples: &[SyntheticSample],
    template: &PreparedTemplate,
    joints: &[usize],
) -> Result<EvalReport> {
    if preds.len() != samples.len() {
        return Err(Error::dim(format!("{} predictions for {} samples", preds.len(), samples.len())));
    }
    let bodies = pose_bodies(preds, template)?;
    let per_sample = bodies
        .iter()
        .zip(samples)
        .map(|(b, s)| sample_metrics(&b.joints3d, &b.vertices, &s.joints3d, &s.vertices, joints))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_samples(per_sample, joints.to_vec())
}

/// Runs inference on every sample and scores it.
pub fn evaluate(
    model: &Model,
    samples: &[SyntheticSample],
    template: &PreparedTemplate,
    joints: &[usize],
) -> Result<EvalReport> {
    let cfg = model.config();
    let expected = &cfg.context_shape(1)[1..];
    if let Some(s) = samples.iter().find(|s| s.context.shape() != expected) {
        return Err(Error::config(format!(
            "dataset context {:?} does not match model context {expected:?}",
            s.context.shape()
        )));
    }
    let refs: Vec<&SyntheticSample> = samples.iter().collect();
    let (preds, _) = model.predict(&stack_contexts(&refs)?)?;
    evaluate_predictions(&preds, samples, template, joints)
}

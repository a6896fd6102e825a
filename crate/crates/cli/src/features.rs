//! Loader for externally prepared feature maps, so encoder features computed
//! elsewhere can replace the synthetic contexts.
//!
//! The file is JSON: `{"shape": [C, H, W], "samples": [{"context": [...],
//! "params": {"pose": [144], "shape": [10], "camera": [3]}}]}`, with contexts
//! flattened row-major and `params` optional (needed for evaluation only).

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use hmr_core::body::{pose_bodies, PreparedTemplate, SmplParams, NUM_BETAS, NUM_JOINTS};
use hmr_core::numeric::Tensor;
use hmr_core::training::SyntheticSample;
use hmr_core::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub pose: Vec<f64>,
    pub shape: Vec<f64>,
    pub camera: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSample {
    pub context: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFile {
    pub shape: [usize; 3],
    pub samples: Vec<FeatureSample>,
}

impl ParamRecord {
    pub fn from_params(p: &SmplParams) -> Self {
        Self { pose: p.pose.data().to_vec(), shape: p.shape.data().to_vec(), camera: p.camera }
    }

    pub fn to_params(&self) -> hmr_core::Result<SmplParams> {
        let params = SmplParams {
            pose: Tensor::new(&[NUM_JOINTS, 6], self.pose.clone())?,
            shape: Tensor::new(&[NUM_BETAS], self.shape.clone())?,
            camera: self.camera,
        };
        params.validate()?;
        Ok(params)
    }
}

impl FeatureFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading features {}", path.display()))?;
        let file: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("features {}: {e}", path.display())))?;
        if file.samples.is_empty() {
            return Err(Error::Config(format!("features {} contain no samples", path.display())).into());
        }
        Ok(file)
    }

    pub fn from_samples(samples: &[SyntheticSample]) -> Self {
        let s = samples[0].context.shape();
        Self {
            shape: [s[0], s[1], s[2]],
            samples: samples
                .iter()
                .map(|x| FeatureSample {
                    context: x.context.data().to_vec(),
                    params: Some(ParamRecord::from_params(&x.params)),
                })
                .collect(),
        }
    }

    pub fn contexts(&self) -> hmr_core::Result<Vec<Tensor>> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Tensor::new(&self.shape, s.context.clone())
                    .map_err(|_| Error::Config(format!("feature sample {i}: context length does not match {:?}", self.shape)))
            })
            .collect()
    }

    /// Samples with ground truth posed on `template`.
    pub fn labelled(&self, template: &PreparedTemplate) -> hmr_core::Result<Vec<SyntheticSample>> {
        let contexts = self.contexts()?;
        let params = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.params
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("feature sample {i} has no ground-truth params")))?
                    .to_params()
            })
            .collect::<hmr_core::Result<Vec<_>>>()?;
        let bodies = pose_bodies(&params, template)?;
        Ok(contexts
            .into_iter()
            .zip(params)
            .zip(bodies)
            .map(|((context, params), body)| SyntheticSample {
                context,
                params,
                joints3d: body.joints3d,
                vertices: body.vertices,
                joints2d: body.joints2d,
            })
            .collect())
    }
}

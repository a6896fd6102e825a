//! Linear regression heads with one round of iterative error feedback:
//! each head sees its token concatenated with the mean estimate and predicts
//! a residual added to that mean.

use rand_chacha::ChaCha8Rng;

use crate::body::{SmplParams, IDENTITY_6D, NUM_BETAS, NUM_JOINTS};
use crate::decoder::{DecoderConfig, QueryMode, NUM_POSE_QUERIES};
use crate::error::{Error, Result};
use crate::numeric::norm::softplus_inverse;
use crate::numeric::rng::uniform;
use crate::numeric::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

const POSE_DIM: usize = NUM_JOINTS * 6;
/// β followed by the raw camera triple.
const SHAPE_CAM_DIM: usize = NUM_BETAS + 3;
const ALL_DIM: usize = POSE_DIM + SHAPE_CAM_DIM;

/// Xavier gain of the head weights; small so training starts near the mean.
pub const HEAD_INIT_GAIN: f64 = 0.01;

fn head_weight(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, shape: &[usize]) -> ParamId {
    let (fan_in, fan_out) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let bound = HEAD_INIT_GAIN * (6.0 / (fan_in + fan_out) as f64).sqrt();
    store.add(name, uniform(rng, shape, bound))
}

/// Starting estimate for the error-feedback round.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanParams {
    /// `[24, 6]`
    pub pose: Tensor,
    /// `[10]`
    pub shape: Tensor,
    /// `(s, tx, ty)`, `s > 0`.
    pub camera: [f64; 3],
}

impl Default for MeanParams {
    fn default() -> Self {
        let rest = SmplParams::rest();
        Self { pose: rest.pose, shape: rest.shape, camera: rest.camera }
    }
}

impl MeanParams {
    pub fn validate(&self) -> Result<()> {
        SmplParams { pose: self.pose.clone(), shape: self.shape.clone(), camera: self.camera }.validate()
    }

    /// Camera in the pre-softplus domain.
    fn raw_camera(&self) -> [f64; 3] {
        [softplus_inverse(self.camera[0]), self.camera[1], self.camera[2]]
    }

    fn shape_cam_row(&self) -> Vec<f64> {
        let mut row = self.shape.data().to_vec();
        row.extend_from_slice(&self.raw_camera());
        row
    }
}

/// Regressed parameters on the tape.
#[derive(Debug, Clone, Copy)]
pub struct PredictedParams {
    /// `[B, 24, 6]`
    pub pose: Var,
    /// `[B, 10]`
    pub shape: Var,
    /// `[B, 3]`, positive scale.
    pub camera: Var,
}

#[derive(Debug, Clone)]
enum HeadLayout {
    /// One pose head per pose token (`[24, D+6, 6]`), plus a shape/camera head on token 24.
    Multi { pose_w: ParamId, pose_b: ParamId, shape_w: ParamId, shape_b: ParamId },
    /// One widened head on the single token.
    Single { w: ParamId, b: ParamId },
}

#[derive(Debug, Clone)]
pub struct RegressionHeads {
    layout: HeadLayout,
    model_dim: usize,
}

impl RegressionHeads {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &DecoderConfig) -> Self {
        let d = cfg.model_dim;
        let layout = match cfg.query_mode {
            QueryMode::Multi => HeadLayout::Multi {
                pose_w: head_weight(store, rng, "head.pose.weight", &[NUM_POSE_QUERIES, d + 6, 6]),
                pose_b: store.add("head.pose.bias", Tensor::zeros(&[NUM_POSE_QUERIES, 6])),
                shape_w: head_weight(store, rng, "head.shape.weight", &[d + SHAPE_CAM_DIM, SHAPE_CAM_DIM]),
                shape_b: store.add("head.shape.bias", Tensor::zeros(&[SHAPE_CAM_DIM])),
            },
            QueryMode::Single => HeadLayout::Single {
                w: head_weight(store, rng, "head.all.weight", &[d + ALL_DIM, ALL_DIM]),
                b: store.add("head.all.bias", Tensor::zeros(&[ALL_DIM])),
            },
        };
        Self { layout, model_dim: d }
    }

    /// Every head parameter, for zeroing in tests and ablations.
    pub fn param_ids(&self) -> Vec<ParamId> {
        match &self.layout {
            HeadLayout::Multi { pose_w, pose_b, shape_w, shape_b } => vec![*pose_w, *pose_b, *shape_w, *shape_b],
            HeadLayout::Single { w, b } => vec![*w, *b],
        }
    }

    /// Maps decoder output `[B, Q, D]` to SMPL parameters.
    pub fn predict(&self, tape: &mut Tape, p: &Bound, tokens: Var, means: &MeanParams) -> Result<PredictedParams> {
        let s = tape.shape(tokens).to_vec();
        let expected_q = match self.layout {
            HeadLayout::Multi { .. } => NUM_POSE_QUERIES + 1,
            HeadLayout::Single { .. } => 1,
        };
        if s.len() != 3 || s[1] != expected_q || s[2] != self.model_dim {
            return Err(Error::dim(format!(
                "heads: decoder output {s:?}, expected [B,{expected_q},{}]",
                self.model_dim
            )));
        }
        let b = s[0];
        let d = self.model_dim;
        let (pose, shape_cam) = match &self.layout {
            HeadLayout::Multi { pose_w, pose_b, shape_w, shape_b } => {
                let pose_tok = tape.slice(tokens, 1, 0, NUM_POSE_QUERIES)?;
                let mean_pose = tape.constant(Tensor::from_fn(&[b, NUM_JOINTS, 6], |i| {
                    means.pose.data()[i % POSE_DIM]
                }));
                let inp = tape.concat(&[pose_tok, mean_pose], 2)?;
                let inp = tape.permute(inp, &[1, 0, 2])?;
                let delta = tape.bmm(inp, p[*pose_w])?;
                let delta = tape.permute(delta, &[1, 0, 2])?;
                let delta = tape.add_broadcast(delta, p[*pose_b])?;
                let pose = tape.add(delta, mean_pose)?;

                let shape_tok = tape.slice(tokens, 1, NUM_POSE_QUERIES, 1)?;
                let shape_tok = tape.reshape(shape_tok, &[b, d])?;
                let row = means.shape_cam_row();
                let mean_sc = tape.constant(Tensor::from_fn(&[b, SHAPE_CAM_DIM], |i| row[i % SHAPE_CAM_DIM]));
                let inp = tape.concat(&[shape_tok, mean_sc], 1)?;
                let delta = tape.linear(inp, p[*shape_w], Some(p[*shape_b]))?;
                (pose, tape.add(delta, mean_sc)?)
            }
            HeadLayout::Single { w, b: bias } => {
                let tok = tape.reshape(tokens, &[b, d])?;
                let mut row = means.pose.data().to_vec();
                row.extend(means.shape_cam_row());
                let mean = tape.constant(Tensor::from_fn(&[b, ALL_DIM], |i| row[i % ALL_DIM]));
                let inp = tape.concat(&[tok, mean], 1)?;
                let delta = tape.linear(inp, p[*w], Some(p[*bias]))?;
                let est = tape.add(delta, mean)?;
                let pose = tape.slice(est, 1, 0, POSE_DIM)?;
                let pose = tape.reshape(pose, &[b, NUM_JOINTS, 6])?;
                (pose, tape.slice(est, 1, POSE_DIM, SHAPE_CAM_DIM)?)
            }
        };
        let shape = tape.slice(shape_cam, 1, 0, NUM_BETAS)?;
        let raw_scale = tape.slice(shape_cam, 1, NUM_BETAS, 1)?;
        let scale = tape.softplus(raw_scale);
        let shift = tape.slice(shape_cam, 1, NUM_BETAS + 1, 2)?;
        let camera = tape.concat(&[scale, shift], 1)?;
        Ok(PredictedParams { pose, shape, camera })
    }
}

/// Splits batched prediction values into per-sample params.
pub fn unstack_params(tape: &Tape, pred: &PredictedParams) -> Vec<SmplParams> {
    let pose = tape.value(pred.pose);
    let shape = tape.value(pred.shape);
    let cam = tape.value(pred.camera);
    (0..pose.shape()[0])
        .map(|i| SmplParams {
            pose: Tensor::from_parts(vec![NUM_JOINTS, 6], pose.data()[i * POSE_DIM..(i + 1) * POSE_DIM].to_vec()),
            shape: Tensor::from_parts(vec![NUM_BETAS], shape.data()[i * NUM_BETAS..(i + 1) * NUM_BETAS].to_vec()),
            camera: [cam.data()[i * 3], cam.data()[i * 3 + 1], cam.data()[i * 3 + 2]],
        })
        .collect()
}

/// The identity 6D rotation tiled over all joints.
pub fn identity_pose() -> Tensor {
    Tensor::from_fn(&[NUM_JOINTS, 6], |i| IDENTITY_6D[i % 6])
}

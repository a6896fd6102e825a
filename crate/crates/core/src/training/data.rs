//! Synthetic supervision: random small-magnitude bodies and a frozen random
//! linear "encoder" that turns their parameters into a context feature map.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::body::{pose_bodies, PreparedTemplate, SmplParams, IDENTITY_6D, NUM_BETAS, NUM_JOINTS};
use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};
use crate::numeric::rng::normal;
use crate::numeric::{RngSeed, Tensor};

/// Length of the flattened parameter deviation fed to the encoder.
pub const PARAM_CODE_LEN: usize = NUM_JOINTS * 6 + NUM_BETAS + 3;

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub num_samples: usize,
    pub num_vertices: usize,
    pub template_seed: u64,
    /// Seed of the frozen encoder map; shared by train and test splits.
    pub encoder_seed: u64,
    /// Std of the perturbation added to each identity 6D entry.
    pub pose_noise: f64,
    pub shape_noise: f64,
    /// Half-width of the uniform jitter on camera scale and translation.
    pub camera_jitter: f64,
    pub context_noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            num_samples: 8,
            num_vertices: 96,
            template_seed: 7,
            encoder_seed: 11,
            pose_noise: 0.05,
            shape_noise: 0.3,
            camera_jitter: 0.1,
            context_noise: 0.01,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::config("num_samples must be at least 1"));
        }
        if self.num_vertices < NUM_JOINTS {
            return Err(Error::config(format!("num_vertices must be at least {NUM_JOINTS}")));
        }
        for (name, v) in [
            ("pose_noise", self.pose_noise),
            ("shape_noise", self.shape_noise),
            ("camera_jitter", self.camera_jitter),
            ("context_noise", self.context_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        if self.camera_jitter >= 1.0 {
            return Err(Error::config("camera_jitter must stay below 1 to keep the scale positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    /// `[C, H, W]`
    pub context: Tensor,
    pub params: SmplParams,
    /// `[24, 3]`
    pub joints3d: Tensor,
    /// `[N, 3]`
    pub vertices: Tensor,
    /// `[24, 2]`
    pub joints2d: Tensor,
}

/// Frozen stand-in for the image encoder: `context = M·(z / σ) + bias`, where
/// `z` is the deviation of the parameters from the rest body and `σ` the
/// per-entry sampling spread, so pose, shape and camera all register.
#[derive(Debug, Clone)]
pub struct ContextEncoder {
    /// `[C·H·W, PARAM_CODE_LEN]`
    map: Tensor,
    /// `[C, H, W]`
    bias: Tensor,
    spread: Vec<f64>,
}

impl ContextEncoder {
    pub fn new(seed: RngSeed, cfg: &DecoderConfig, data: &DataConfig) -> Self {
        let [_, c, h, w] = cfg.context_shape(1);
        let mut rng = seed.derive("encoder").rng();
        // Unit-variance features for a typical sample.
        let map = normal(&mut rng, &[c * h * w, PARAM_CODE_LEN], 1.0 / (PARAM_CODE_LEN as f64).sqrt());
        let bias = normal(&mut rng, &[c, h, w], 1.0);
        let unit = |s: f64| if s > 0.0 { s } else { 1.0 };
        let mut spread = vec![unit(data.pose_noise); NUM_JOINTS * 6];
        spread.extend([unit(data.shape_noise); NUM_BETAS]);
        spread.extend([unit(data.camera_jitter); 3]);
        Self { map, bias, spread }
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn encode(&self, params: &SmplParams) -> Tensor {
        let z: Vec<f64> = param_code(params).iter().zip(&self.spread).map(|(z, s)| z / s).collect();
        let mut out = self.bias.clone();
        for (row, o) in self.map.data().chunks(PARAM_CODE_LEN).zip(out.data_mut()) {
            *o += row.iter().zip(&z).map(|(m, z)| m * z).sum::<f64>();
        }
        out
    }
}

/// Parameter deviation from the rest body, flattened as (θ, β, camera).
pub fn param_code(params: &SmplParams) -> Vec<f64> {
    let rest = SmplParams::rest();
    let mut z: Vec<f64> = params.pose.data().iter().zip(rest.pose.data()).map(|(p, r)| p - r).collect();
    z.extend_from_slice(params.shape.data());
    z.extend(params.camera.iter().zip(rest.camera).map(|(c, r)| c - r));
    z
}

/// Draws `n` bodies, poses them, and encodes each as a context map.
pub fn synth_dataset(
    seed: RngSeed,
    n: usize,
    decoder: &DecoderConfig,
    data: &DataConfig,
    template: &PreparedTemplate,
) -> Result<Vec<SyntheticSample>> {
    if n == 0 {
        return Err(Error::config("synthetic dataset needs at least one sample"));
    }
    if template.vertices.shape()[0] != data.num_vertices {
        return Err(Error::config(format!(
            "template has {} vertices, data config expects {}",
            template.vertices.shape()[0],
            data.num_vertices
        )));
    }
    let encoder = ContextEncoder::new(RngSeed(data.encoder_seed), decoder, data);
    let mut rng = seed.derive("samples").rng();
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let mut gauss = |std: f64| -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * std
        };
        let pose = Tensor::from_fn(&[NUM_JOINTS, 6], |i| IDENTITY_6D[i % 6] + gauss(data.pose_noise));
        let shape = Tensor::from_fn(&[NUM_BETAS], |_| gauss(data.shape_noise));
        let j = data.camera_jitter;
        let mut jitter = || if j > 0.0 { rng.random_range(-j..j) } else { 0.0 };
        let camera = [1.0 + jitter(), 0.5 * jitter(), 0.5 * jitter()];
        params.push(SmplParams { pose, shape, camera });
    }
    let meshes = pose_bodies(&params, template)?;
    let mut noise_rng = seed.derive("context-noise").rng();
    Ok(params
        .into_iter()
        .zip(meshes)
        .map(|(params, mesh)| {
            let mut context = encoder.encode(&params);
            if data.context_noise > 0.0 {
                let noise = normal(&mut noise_rng, context.shape(), data.context_noise);
                context.add_assign(&noise);
            }
            SyntheticSample {
                context,
                params,
                joints3d: mesh.joints3d,
                vertices: mesh.vertices,
                joints2d: mesh.joints2d,
            }
        })
        .collect())
}

/// Stacks the contexts of `samples` into `[B, C, H, W]`.
pub fn stack_contexts(samples: &[&SyntheticSample]) -> Result<Tensor> {
    let first = samples.first().ok_or_else(|| Error::dim("empty batch"))?;
    let s = first.context.shape().to_vec();
    let mut data = Vec::with_capacity(samples.len() * first.context.len());
    for sample in samples {
        if sample.context.shape() != s.as_slice() {
            return Err(Error::dim(format!("context {:?} vs {:?}", sample.context.shape(), s)));
        }
        data.extend_from_slice(sample.context.data());
    }
    let mut shape = vec![samples.len()];
    shape.extend(s);
    Tensor::new(&shape, data)
}

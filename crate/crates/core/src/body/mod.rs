//! Parametric body: 6D joint rotations, a synthetic SMPL-form template,
//! linear blend skinning and weak-perspective projection.

pub mod lbs;
pub mod rotation;
pub mod template;

use std::io::Write;

pub use lbs::{lbs_forward, project_weak_perspective, MeshVars};
pub use rotation::{rot6d_to_matrix, IDENTITY_6D};
pub use template::{make_synthetic_template, BodyTemplate, PreparedTemplate, NUM_BETAS, NUM_JOINTS};

use crate::error::{Error, Result};
use crate::numeric::linalg;
use crate::numeric::{Tape, Tensor};

/// Pose (6D per joint), shape coefficients and weak-perspective camera of one body.
#[derive(Debug, Clone, PartialEq)]
pub struct SmplParams {
    /// `[24, 6]`
    pub pose: Tensor,
    /// `[10]`
    pub shape: Tensor,
    /// `(s, tx, ty)` with `s > 0`.
    pub camera: [f64; 3],
}

impl SmplParams {
    /// Identity pose, zero shape, unit camera.
    pub fn rest() -> Self {
        Self {
            pose: Tensor::from_fn(&[NUM_JOINTS, 6], |i| IDENTITY_6D[i % 6]),
            shape: Tensor::zeros(&[NUM_BETAS]),
            camera: [1.0, 0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pose.shape() != [NUM_JOINTS, 6] || self.shape.shape() != [NUM_BETAS] {
            return Err(Error::dim(format!(
                "SMPL params: pose {:?} / shape {:?}, expected [24,6] / [10]",
                self.pose.shape(),
                self.shape.shape()
            )));
        }
        if !self.pose.all_finite() || !self.shape.all_finite() || self.camera.iter().any(|c| !c.is_finite()) {
            return Err(Error::numeric("SMPL params contain non-finite values"));
        }
        if !(self.camera[0] > 0.0) {
            return Err(Error::param(format!("camera scale must be positive, got {}", self.camera[0])));
        }
        Ok(())
    }
}

/// Posed body for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshOutput {
    /// `[N, 3]`, meters.
    pub vertices: Tensor,
    /// `[24, 3]`, meters.
    pub joints3d: Tensor,
    /// `[24, 2]`, normalized image units.
    pub joints2d: Tensor,
}

impl MeshOutput {
    /// Wavefront OBJ text: one `v` line per vertex, optional triangle faces (0-based input).
    pub fn write_obj(&self, mut out: impl Write, faces: Option<&[[usize; 3]]>) -> Result<()> {
        for v in self.vertices.data().chunks(3) {
            writeln!(out, "v {:.9} {:.9} {:.9}", v[0], v[1], v[2])?;
        }
        for f in faces.unwrap_or(&[]) {
            writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        Ok(())
    }
}

/// Stacks per-sample params into `([B,24,6], [B,10], [B,3])`.
pub fn stack_params(params: &[SmplParams]) -> Result<(Tensor, Tensor, Tensor)> {
    if params.is_empty() {
        return Err(Error::dim("empty parameter batch"));
    }
    let b = params.len();
    let mut pose = Vec::with_capacity(b * NUM_JOINTS * 6);
    let mut shape = Vec::with_capacity(b * NUM_BETAS);
    let mut cam = Vec::with_capacity(b * 3);
    for p in params {
        p.validate()?;
        pose.extend_from_slice(p.pose.data());
        shape.extend_from_slice(p.shape.data());
        cam.extend_from_slice(&p.camera);
    }
    Ok((
        Tensor::new(&[b, NUM_JOINTS, 6], pose)?,
        Tensor::new(&[b, NUM_BETAS], shape)?,
        Tensor::new(&[b, 3], cam)?,
    ))
}

/// Poses and projects a batch of bodies (values only, no gradients kept).
pub fn pose_bodies(params: &[SmplParams], template: &PreparedTemplate) -> Result<Vec<MeshOutput>> {
    let (pose, shape, cam) = stack_params(params)?;
    let mut tape = Tape::new();
    let (pose, shape, cam) = (tape.constant(pose), tape.constant(shape), tape.constant(cam));
    let mesh = lbs_forward(&mut tape, template, pose, shape)?;
    let j2d = project_weak_perspective(&mut tape, mesh.joints3d, cam)?;
    (0..params.len())
        .map(|i| {
            let take = |v, tail: &[usize]| -> Result<Tensor> {
                linalg::slice(tape.value(v), 0, i, 1)?.reshape(tail)
            };
            Ok(MeshOutput {
                vertices: take(mesh.vertices, &[template.vertices.shape()[0], 3])?,
                joints3d: take(mesh.joints3d, &[NUM_JOINTS, 3])?,
                joints2d: take(j2d, &[NUM_JOINTS, 2])?,
            })
        })
        .collect()
}

/// Weak-perspective projection of `[.., 3]` points by a single camera.
pub fn project_points(points: &Tensor, camera: [f64; 3]) -> Result<Tensor> {
    let s = points.shape();
    if s.last() != Some(&3) {
        return Err(Error::dim(format!("project_points: expected [..,3], got {s:?}")));
    }
    let mut shape = s.to_vec();
    *shape.last_mut().unwrap() = 2;
    let data = points
        .data()
        .chunks(3)
        .flat_map(|p| [camera[0] * p[0] + camera[1], camera[0] * p[1] + camera[2]])
        .collect();
    Tensor::new(&shape, data)
}

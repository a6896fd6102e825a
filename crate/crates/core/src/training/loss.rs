//! Weighted reconstruction loss over SMPL parameters, joints and vertices.

use crate::error::{Error, Result};
use crate::numeric::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub smpl: f64,
    /// Shared by the 2D and 3D joint terms.
    pub joint: f64,
    pub mesh: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { smpl: 1.0, joint: 5.0, mesh: 60.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_smpl", self.smpl), ("lambda_joint", self.joint), ("lambda_mesh", self.mesh)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Prediction or target body on the tape.
#[derive(Debug, Clone, Copy)]
pub struct BodyVars {
    /// `[B, 24, 6]`
    pub pose: Var,
    /// `[B, 10]`
    pub shape: Var,
    /// `[B, 24, 3]`
    pub joints3d: Var,
    /// `[B, 24, 2]`
    pub joints2d: Var,
    /// `[B, N, 3]`
    pub vertices: Var,
}

/// Unweighted MSE of each term plus the weighted total.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub pose: Var,
    pub shape: Var,
    pub joints3d: Var,
    pub joints2d: Var,
    pub vertices: Var,
    pub total: Var,
}

/// Scalar values of [`LossTerms`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub pose: f64,
    pub shape: f64,
    pub joints3d: f64,
    pub joints2d: f64,
    pub vertices: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn values(&self, tape: &Tape) -> LossValues {
        let v = |x: Var| tape.value(x).item();
        LossValues {
            pose: v(self.pose),
            shape: v(self.shape),
            joints3d: v(self.joints3d),
            joints2d: v(self.joints2d),
            vertices: v(self.vertices),
            total: v(self.total),
        }
    }
}

fn term(tape: &mut Tape, name: &str, pred: Var, target: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(Error::dim(format!(
            "loss term {name}: prediction {:?} vs target {:?}",
            tape.shape(pred),
            tape.shape(target)
        )));
    }
    tape.mse(pred, target)
}

/// `λ_smpl·(MSE θ + MSE β) + λ_joint·(MSE j3d + MSE j2d) + λ_mesh·MSE verts`.
pub fn total_loss(tape: &mut Tape, pred: &BodyVars, target: &BodyVars, w: &LossWeights) -> Result<LossTerms> {
    let pose = term(tape, "pose", pred.pose, target.pose)?;
    let shape = term(tape, "shape", pred.shape, target.shape)?;
    let joints3d = term(tape, "joints3d", pred.joints3d, target.joints3d)?;
    let joints2d = term(tape, "joints2d", pred.joints2d, target.joints2d)?;
    let vertices = term(tape, "vertices", pred.vertices, target.vertices)?;

    let smpl = tape.add(pose, shape)?;
    let smpl = tape.scale(smpl, w.smpl);
    let joints = tape.add(joints3d, joints2d)?;
    let joints = tape.scale(joints, w.joint);
    let mesh = tape.scale(vertices, w.mesh);
    let total = tape.add(smpl, joints)?;
    let total = tape.add(total, mesh)?;
    Ok(LossTerms { pose, shape, joints3d, joints2d, vertices, total })
}

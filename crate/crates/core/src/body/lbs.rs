//! Linear blend skinning on the tape.

use super::template::{PreparedTemplate, NUM_BETAS, NUM_JOINTS};
use crate::error::{Error, Result};
use crate::numeric::{Tape, Tensor, Var};

/// Posed body on the tape.
#[derive(Debug, Clone, Copy)]
pub struct MeshVars {
    /// `[B, N, 3]`
    pub vertices: Var,
    /// `[B, 24, 3]`, posed joint locations.
    pub joints3d: Var,
    /// `[B, 24, 3]`, rest joints of the shaped body.
    pub rest_joints: Var,
}

/// Blendshapes, joint regression, forward kinematics along the tree, and
/// skinning by the template weights.
///
/// `pose` is `[B, 24, 6]` (6D per joint), `shape` is `[B, 10]`.
pub fn lbs_forward(tape: &mut Tape, template: &PreparedTemplate, pose: Var, shape: Var) -> Result<MeshVars> {
    let ps = tape.shape(pose).to_vec();
    let ss = tape.shape(shape).to_vec();
    if ps.len() != 3 || ps[1] != NUM_JOINTS || ps[2] != 6 || ss != [ps[0], NUM_BETAS] {
        return Err(Error::dim(format!(
            "lbs_forward: pose {ps:?} / shape {ss:?}, expected [B,24,6] / [B,10]"
        )));
    }
    let b = ps[0];
    let n = template.vertices.shape()[0];

    let dirs = tape.constant(template.shape_dirs_t.clone());
    let offsets = tape.linear(shape, dirs, None)?;
    let offsets = tape.reshape(offsets, &[b, n, 3])?;
    let rest = tape.constant(template.vertices.clone());
    let shaped = tape.add_broadcast(offsets, rest)?;

    let regressor = tape.constant(template.regressor_t.clone());
    let joints = tape.permute(shaped, &[0, 2, 1])?;
    let joints = tape.linear(joints, regressor, None)?;
    let joints = tape.permute(joints, &[0, 2, 1])?;

    let rot = tape.rot6d_to_matrix(pose)?;

    // Transforms are carried as deviations from identity, so the identity
    // pose leaves the shaped template untouched bit for bit.
    let eye = tape.constant(Tensor::from_fn(&[b, 3, 3], |i| if i % 9 % 4 == 0 { 1.0 } else { 0.0 }));
    let mut world_r: Vec<Var> = Vec::with_capacity(NUM_JOINTS);
    // Posed joint location minus rest joint location.
    let mut drift: Vec<Var> = Vec::with_capacity(NUM_JOINTS);
    let mut joint_col = Vec::with_capacity(NUM_JOINTS);
    for j in 0..NUM_JOINTS {
        let r = tape.slice(rot, 1, j, 1)?;
        let r = tape.reshape(r, &[b, 3, 3])?;
        let jc = tape.slice(joints, 1, j, 1)?;
        let jc = tape.reshape(jc, &[b, 3, 1])?;
        joint_col.push(jc);
        match template.parents[j] {
            None => {
                world_r.push(r);
                drift.push(tape.constant(Tensor::zeros(&[b, 3, 1])));
            }
            Some(p) => {
                let rw = tape.bmm(world_r[p], r)?;
                let bone = tape.sub(jc, joint_col[p])?;
                let dev = tape.sub(world_r[p], eye)?;
                let d = tape.bmm(dev, bone)?;
                let d = tape.add(d, drift[p])?;
                world_r.push(rw);
                drift.push(d);
            }
        }
    }
    let rs: Vec<Var> = world_r
        .iter()
        .map(|&r| tape.reshape(r, &[b, 1, 3, 3]))
        .collect::<Result<_>>()?;
    let world_r = tape.concat(&rs, 1)?;
    let ds: Vec<Var> = drift
        .iter()
        .map(|&d| tape.reshape(d, &[b, 1, 3]))
        .collect::<Result<_>>()?;
    let drift = tape.concat(&ds, 1)?;
    let joints3d = tape.add(joints, drift)?;

    // Per joint: v ↦ v + (R − I)·v + (drift − (R − I)·J).
    let rflat = tape.reshape(world_r, &[b * NUM_JOINTS, 3, 3])?;
    let eye_j = tape.constant(Tensor::from_fn(&[b * NUM_JOINTS, 3, 3], |i| if i % 9 % 4 == 0 { 1.0 } else { 0.0 }));
    let dev = tape.sub(rflat, eye_j)?;
    let jflat = tape.reshape(joints, &[b * NUM_JOINTS, 3, 1])?;
    let dj = tape.bmm(dev, jflat)?;
    let dj = tape.reshape(dj, &[b, NUM_JOINTS, 3])?;
    let t_rel = tape.sub(drift, dj)?;
    let t_rel = tape.reshape(t_rel, &[b, NUM_JOINTS, 3, 1])?;
    let dev = tape.reshape(dev, &[b, NUM_JOINTS, 3, 3])?;
    let a = tape.concat(&[dev, t_rel], 3)?;
    let a = tape.reshape(a, &[b, NUM_JOINTS, 12])?;

    let skin = tape.constant(template.skin_weights_t.clone());
    let blended = tape.permute(a, &[0, 2, 1])?;
    let blended = tape.linear(blended, skin, None)?;
    let blended = tape.permute(blended, &[0, 2, 1])?;
    let blended = tape.reshape(blended, &[b * n, 3, 4])?;

    let ones = tape.constant(Tensor::ones(&[b, n, 1]));
    let homo = tape.concat(&[shaped, ones], 2)?;
    let homo = tape.reshape(homo, &[b * n, 4, 1])?;
    let moved = tape.bmm(blended, homo)?;
    let moved = tape.reshape(moved, &[b, n, 3])?;
    let vertices = tape.add(shaped, moved)?;

    Ok(MeshVars { vertices, joints3d, rest_joints: joints })
}

/// Weak-perspective projection `(x, y) = s·(X, Y) + (tx, ty)` of `[B, J, 3]`
/// points with cameras `[B, 3] = (s, tx, ty)`.
pub fn project_weak_perspective(tape: &mut Tape, points: Var, camera: Var) -> Result<Var> {
    let ps = tape.shape(points).to_vec();
    let cs = tape.shape(camera).to_vec();
    if ps.len() != 3 || ps[2] != 3 || cs != [ps[0], 3] {
        return Err(Error::dim(format!(
            "project_weak_perspective: points {ps:?} / camera {cs:?}, expected [B,J,3] / [B,3]"
        )));
    }
    let (b, j) = (ps[0], ps[1]);
    let xy = tape.slice(points, 2, 0, 2)?;
    let s = tape.slice(camera, 1, 0, 1)?;
    let t = tape.slice(camera, 1, 1, 2)?;
    // Broadcast per-sample scalars over joints via constant selection matrices.
    let spread_s = tape.constant(Tensor::ones(&[1, j * 2]));
    let spread_t = tape.constant(Tensor::from_fn(&[2, j * 2], |i| {
        let (row, col) = (i / (j * 2), i % (j * 2));
        if col % 2 == row { 1.0 } else { 0.0 }
    }));
    let s = tape.linear(s, spread_s, None)?;
    let s = tape.reshape(s, &[b, j, 2])?;
    let t = tape.linear(t, spread_t, None)?;
    let t = tape.reshape(t, &[b, j, 2])?;
    let scaled = tape.mul(xy, s)?;
    tape.add(scaled, t)
}

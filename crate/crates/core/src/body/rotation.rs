//! Continuous 6D rotation representation.
//!
//! Two 3-vectors `a₁, a₂` are orthonormalized by Gram–Schmidt into the first two
//! columns of a rotation matrix; the third column is their cross product.

use crate::error::{Error, Result};
use crate::numeric::tensor::Tensor;

/// Norms below this are treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// The 6D encoding of the identity rotation.
pub const IDENTITY_6D: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

type V3 = [f64; 3];

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: V3, b: V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn axpy(alpha: f64, x: V3, y: V3) -> V3 {
    [alpha * x[0] + y[0], alpha * x[1] + y[1], alpha * x[2] + y[2]]
}

fn scale(alpha: f64, x: V3) -> V3 {
    [alpha * x[0], alpha * x[1], alpha * x[2]]
}

struct Frame {
    b1: V3,
    b2: V3,
    b3: V3,
    n1: f64,
    nu: f64,
    a2: V3,
}

fn frame(r: &[f64]) -> Option<Frame> {
    let a1 = [r[0], r[1], r[2]];
    let a2 = [r[3], r[4], r[5]];
    let n1 = dot(a1, a1).sqrt();
    if !(n1 > DEGENERATE_NORM) {
        return None;
    }
    let b1 = scale(1.0 / n1, a1);
    let u = axpy(-dot(b1, a2), b1, a2);
    let nu = dot(u, u).sqrt();
    if !(nu > DEGENERATE_NORM) {
        return None;
    }
    let b2 = scale(1.0 / nu, u);
    Some(Frame { b1, b2, b3: cross(b1, b2), n1, nu, a2 })
}

fn degenerate(shape: &[usize], row: usize) -> Error {
    let joint = if shape.len() >= 2 { row % shape[shape.len() - 2] } else { row };
    Error::numeric(format!("rot6d_to_matrix: degenerate 6D vector at joint {joint} (row {row})"))
}

/// `[.., 6] → [.., 3, 3]` with the orthonormal frame as columns.
pub fn rot6d_to_matrix(r: &Tensor) -> Result<Tensor> {
    let shape = r.shape();
    if shape.last() != Some(&6) {
        return Err(Error::dim(format!("rot6d_to_matrix: last axis must be 6, got {shape:?}")));
    }
    let mut out = Vec::with_capacity(r.len() / 6 * 9);
    for (row, v) in r.data().chunks(6).enumerate() {
        let f = frame(v).ok_or_else(|| degenerate(shape, row))?;
        for i in 0..3 {
            out.extend_from_slice(&[f.b1[i], f.b2[i], f.b3[i]]);
        }
    }
    let mut out_shape = shape[..shape.len() - 1].to_vec();
    out_shape.extend_from_slice(&[3, 3]);
    Ok(Tensor::from_parts(out_shape, out))
}

pub fn rot6d_backward(r: &Tensor, grad: &Tensor) -> Tensor {
    let mut out = Vec::with_capacity(r.len());
    for (v, g) in r.data().chunks(6).zip(grad.data().chunks(9)) {
        let f = frame(v).expect("validated in forward");
        let col = |c: usize| [g[c], g[3 + c], g[6 + c]];
        let (mut g1, mut g2, g3) = (col(0), col(1), col(2));
        // b3 = b1 × b2
        g1 = axpy(1.0, cross(f.b2, g3), g1);
        g2 = axpy(1.0, cross(g3, f.b1), g2);
        // b2 = u / |u|
        let gu = scale(1.0 / f.nu, axpy(-dot(f.b2, g2), f.b2, g2));
        // u = a2 − (b1·a2) b1
        let ga2 = axpy(-dot(f.b1, gu), f.b1, gu);
        let proj = dot(f.b1, f.a2);
        g1 = axpy(-proj, gu, g1);
        g1 = axpy(-dot(f.b1, gu), f.a2, g1);
        // b1 = a1 / |a1|
        let ga1 = scale(1.0 / f.n1, axpy(-dot(f.b1, g1), f.b1, g1));
        out.extend_from_slice(&ga1);
        out.extend_from_slice(&ga2);
    }
    Tensor::from_parts(r.shape().to_vec(), out)
}

/// Rotation matrix (row-major) to its 6D encoding: the first two columns.
pub fn matrix_to_rot6d(m: &[f64; 9]) -> [f64; 6] {
    [m[0], m[3], m[6], m[1], m[4], m[7]]
}

//! Bilinear sampling of feature maps at normalized positions.
//!
//! A normalized coordinate `p` maps to the continuous index `(p + 1) / 2 · extent`,
//! the inverse of the reference grid `2i / extent − 1`. Indices are clamped to
//! `[0, extent − 1]`, so samples outside the map replicate the border.
//! Channel 0 of a position tensor is the row coordinate, channel 1 the column.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Indices this close to a grid node are snapped onto it, so sampling the
/// reference grid returns node values bit-exactly.
const NODE_SNAP: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
struct AxisTap {
    lo: usize,
    hi: usize,
    frac: f64,
    /// d index / d normalized coordinate (zero when clamped)
    slope: f64,
}

fn axis_tap(p: f64, extent: usize) -> AxisTap {
    let e = extent as f64;
    let mut idx = (p + 1.0) * 0.5 * e;
    let nearest = idx.round();
    if (idx - nearest).abs() <= NODE_SNAP * e.max(1.0) {
        idx = nearest;
    }
    let max = (extent - 1) as f64;
    let (idx, slope) = if idx < 0.0 {
        (0.0, 0.0)
    } else if idx > max {
        (max, 0.0)
    } else {
        (idx, 0.5 * e)
    };
    let lo = (idx.floor() as usize).min(extent - 1);
    let hi = (lo + 1).min(extent - 1);
    AxisTap { lo, hi, frac: idx - lo as f64, slope }
}

fn check_shapes(x: &Tensor, pos: &Tensor) -> Result<()> {
    let (xs, ps) = (x.shape(), pos.shape());
    if xs.len() != 4 || ps.len() != 4 || ps[1] != 2 || xs[0] != ps[0] {
        return Err(Error::dim(format!(
            "bilinear_sample: expected map [B,C,H,W] and positions [B,2,Hs,Ws], got {xs:?} and {ps:?}"
        )));
    }
    Ok(())
}

/// Samples `x[B,C,H,W]` at `pos[B,2,Hs,Ws]`, giving `[B,C,Hs,Ws]`.
pub fn bilinear_sample(x: &Tensor, pos: &Tensor) -> Result<Tensor> {
    check_shapes(x, pos)?;
    let [b, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let n = pos.shape()[2] * pos.shape()[3];
    let mut out = vec![0.0; b * c * n];
    for bi in 0..b {
        let pbase = bi * 2 * n;
        for s in 0..n {
            let ty = axis_tap(pos.data()[pbase + s], h);
            let tx = axis_tap(pos.data()[pbase + n + s], w);
            let (fy, fx) = (ty.frac, tx.frac);
            for ci in 0..c {
                let m = &x.data()[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                out[(bi * c + ci) * n + s] = (1.0 - fy) * ((1.0 - fx) * m[ty.lo * w + tx.lo] + fx * m[ty.lo * w + tx.hi])
                    + fy * ((1.0 - fx) * m[ty.hi * w + tx.lo] + fx * m[ty.hi * w + tx.hi]);
            }
        }
    }
    let mut shape = pos.shape().to_vec();
    shape[1] = c;
    Ok(Tensor::from_parts(shape, out))
}

/// Gradients with respect to the map and the positions.
pub fn bilinear_sample_backward(x: &Tensor, pos: &Tensor, grad: &Tensor) -> (Tensor, Tensor) {
    let [b, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let n = pos.shape()[2] * pos.shape()[3];
    let mut gx = vec![0.0; x.len()];
    let mut gp = vec![0.0; pos.len()];
    for bi in 0..b {
        let pbase = bi * 2 * n;
        for s in 0..n {
            let ty = axis_tap(pos.data()[pbase + s], h);
            let tx = axis_tap(pos.data()[pbase + n + s], w);
            let (fy, fx) = (ty.frac, tx.frac);
            let (mut dy, mut dx) = (0.0, 0.0);
            for ci in 0..c {
                let off = (bi * c + ci) * h * w;
                let m = &x.data()[off..off + h * w];
                let g = grad.data()[(bi * c + ci) * n + s];
                let (v00, v01) = (m[ty.lo * w + tx.lo], m[ty.lo * w + tx.hi]);
                let (v10, v11) = (m[ty.hi * w + tx.lo], m[ty.hi * w + tx.hi]);
                gx[off + ty.lo * w + tx.lo] += g * (1.0 - fy) * (1.0 - fx);
                gx[off + ty.lo * w + tx.hi] += g * (1.0 - fy) * fx;
                gx[off + ty.hi * w + tx.lo] += g * fy * (1.0 - fx);
                gx[off + ty.hi * w + tx.hi] += g * fy * fx;
                dy += g * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
                dx += g * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
            }
            gp[pbase + s] = dy * ty.slope;
            gp[pbase + n + s] = dx * tx.slope;
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), gx),
        Tensor::from_parts(pos.shape().to_vec(), gp),
    )
}

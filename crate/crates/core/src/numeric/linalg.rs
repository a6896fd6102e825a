//! Dense products and layout kernels (permute, concat, slice, gather).
//!
//! Forward kernels validate shapes; backward kernels assume the shapes the
//! forward pass already checked.

use super::tensor::{numel, split_axis, Tensor};
use crate::error::{Error, Result};

/// `x[.., in] · w[in, out] + b[out]`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let xs = x.shape();
    if xs.is_empty() || w.ndim() != 2 || xs[xs.len() - 1] != w.shape()[0] {
        return Err(Error::dim(format!(
            "linear: input {:?} incompatible with weight {:?}",
            xs,
            w.shape()
        )));
    }
    let (k, n) = (w.shape()[0], w.shape()[1]);
    if let Some(b) = b {
        if b.shape() != [n] {
            return Err(Error::dim(format!(
                "linear: bias {:?} does not match weight {:?}",
                b.shape(),
                w.shape()
            )));
        }
    }
    let rows = x.len() / k;
    let mut out = vec![0.0; rows * n];
    gemm(x.data(), w.data(), &mut out, rows, k, n);
    if let Some(b) = b {
        for row in out.chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
    }
    let mut shape = xs.to_vec();
    *shape.last_mut().unwrap() = n;
    Ok(Tensor::from_parts(shape, out))
}

/// Gradients of [`linear`]: (d_x, d_w, d_b).
pub fn linear_backward(x: &Tensor, w: &Tensor, grad: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (k, n) = (w.shape()[0], w.shape()[1]);
    let rows = x.len() / k;
    let mut gx = vec![0.0; rows * k];
    gemm_bt(grad.data(), w.data(), &mut gx, rows, n, k);
    let mut gw = vec![0.0; k * n];
    gemm_at(x.data(), grad.data(), &mut gw, rows, k, n);
    let mut gb = vec![0.0; n];
    for row in grad.data().chunks(n) {
        for (g, v) in gb.iter_mut().zip(row) {
            *g += v;
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), gx),
        Tensor::from_parts(vec![k, n], gw),
        Tensor::from_parts(vec![n], gb),
    )
}

/// Batched product `a[B, M, K] · b[B, K, N]`.
pub fn bmm(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
        return Err(Error::dim(format!("bmm: cannot multiply {sa:?} by {sb:?}")));
    }
    let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
    let mut out = vec![0.0; bs * m * n];
    for i in 0..bs {
        gemm(
            &a.data()[i * m * k..(i + 1) * m * k],
            &b.data()[i * k * n..(i + 1) * k * n],
            &mut out[i * m * n..(i + 1) * m * n],
            m,
            k,
            n,
        );
    }
    Ok(Tensor::from_parts(vec![bs, m, n], out))
}

pub fn bmm_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> (Tensor, Tensor) {
    let (bs, m, k, n) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
    let mut ga = vec![0.0; a.len()];
    let mut gb = vec![0.0; b.len()];
    for i in 0..bs {
        let g = &grad.data()[i * m * n..(i + 1) * m * n];
        gemm_bt(g, &b.data()[i * k * n..(i + 1) * k * n], &mut ga[i * m * k..(i + 1) * m * k], m, n, k);
        gemm_at(&a.data()[i * m * k..(i + 1) * m * k], g, &mut gb[i * k * n..(i + 1) * k * n], m, k, n);
    }
    (
        Tensor::from_parts(a.shape().to_vec(), ga),
        Tensor::from_parts(b.shape().to_vec(), gb),
    )
}

// out[m,n] += a[m,k] · b[k,n]
fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

// out[m,k] += g[m,n] · b[k,n]ᵀ
fn gemm_bt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

// out[k,n] += a[m,k]ᵀ · g[m,n]
fn gemm_at(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, gv) in out[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Output axis `i` is input axis `axes[i]`.
pub fn permute(x: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let nd = x.ndim();
    let mut seen = vec![false; nd];
    if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::dim(format!(
            "permute: {axes:?} is not a permutation of {:?}",
            x.shape()
        )));
    }
    let in_strides = strides(x.shape());
    let out_shape: Vec<usize> = axes.iter().map(|&a| x.shape()[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = x.len();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; nd];
    let mut src = 0usize;
    for _ in 0..total {
        out.push(x.data()[src]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

pub fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::dim("concat: no inputs"))?;
    if axis >= first.ndim() {
        return Err(Error::dim(format!("concat: axis {axis} out of range for {:?}", first.shape())));
    }
    for p in parts {
        let ok = p.ndim() == first.ndim()
            && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::dim(format!(
                "concat: {:?} incompatible with {:?} along axis {axis}",
                p.shape(),
                first.shape()
            )));
        }
    }
    let (outer, _, inner) = split_axis(first.shape(), axis);
    let total_extent: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut shape = first.shape().to_vec();
    shape[axis] = total_extent;
    let mut out = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Ok(Tensor::from_parts(shape, out))
}

pub fn slice(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    if axis >= x.ndim() || len == 0 || start + len > x.shape()[axis] {
        return Err(Error::dim(format!(
            "slice: [{start}, {}) along axis {axis} out of range for {:?}",
            start + len,
            x.shape()
        )));
    }
    let (outer, extent, inner) = split_axis(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * extent * inner + start * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    Ok(Tensor::from_parts(shape, out))
}

/// Adjoint of [`slice`]: embeds `grad` into zeros of `full_shape`.
pub fn slice_backward(grad: &Tensor, full_shape: &[usize], axis: usize, start: usize) -> Tensor {
    let (outer, extent, inner) = split_axis(full_shape, axis);
    let len = grad.shape()[axis];
    let mut out = vec![0.0; numel(full_shape)];
    for o in 0..outer {
        let base = o * extent * inner + start * inner;
        out[base..base + len * inner].copy_from_slice(&grad.data()[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::from_parts(full_shape.to_vec(), out)
}

/// Selects sub-tensors along axis 0; indices may repeat.
pub fn gather_rows(x: &Tensor, index: &[usize]) -> Result<Tensor> {
    if x.ndim() == 0 || index.is_empty() {
        return Err(Error::dim("gather_rows: need a non-scalar input and a nonempty index"));
    }
    let rows = x.shape()[0];
    if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
        return Err(Error::dim(format!("gather_rows: index {bad} out of range for {:?}", x.shape())));
    }
    let row = x.len() / rows;
    let mut out = Vec::with_capacity(index.len() * row);
    for &i in index {
        out.extend_from_slice(&x.data()[i * row..(i + 1) * row]);
    }
    let mut shape = x.shape().to_vec();
    shape[0] = index.len();
    Ok(Tensor::from_parts(shape, out))
}

pub fn gather_rows_backward(grad: &Tensor, input_shape: &[usize], index: &[usize]) -> Tensor {
    let row = numel(&input_shape[1..]);
    let mut out = vec![0.0; numel(input_shape)];
    for (k, &i) in index.iter().enumerate() {
        for (o, g) in out[i * row..(i + 1) * row].iter_mut().zip(&grad.data()[k * row..(k + 1) * row]) {
            *o += g;
        }
    }
    Tensor::from_parts(input_shape.to_vec(), out)
}

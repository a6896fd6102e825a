//! Layer normalization, softmax and pointwise activations.

use super::tensor::{split_axis, Tensor};
use crate::error::{Error, Result};

/// Saved statistics of a layer-norm forward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Normalizes over the last axis, then applies `gamma * x̂ + beta`.
pub fn layer_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    if !(eps > 0.0) {
        return Err(Error::param(format!("layer_norm: eps must be positive, got {eps}")));
    }
    let n = *x
        .shape()
        .last()
        .ok_or_else(|| Error::dim("layer_norm: scalar input"))?;
    if gamma.shape() != [n] || beta.shape() != [n] {
        return Err(Error::dim(format!(
            "layer_norm: gamma {:?} / beta {:?} do not match normalized axis of {:?}",
            gamma.shape(),
            beta.shape(),
            x.shape()
        )));
    }
    let rows = x.len() / n;
    let mut normalized = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(rows);
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(n) {
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let r = 1.0 / (var + eps).sqrt();
        inv_std.push(r);
        for (i, v) in row.iter().enumerate() {
            let h = (v - mean) * r;
            normalized.push(h);
            out.push(gamma.data()[i] * h + beta.data()[i]);
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), out),
        LayerNormCache { normalized, inv_std },
    ))
}

/// Gradients (d_x, d_gamma, d_beta).
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &Tensor,
    grad: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let n = gamma.len();
    let mut gx = Vec::with_capacity(grad.len());
    let mut gg = vec![0.0; n];
    let mut gb = vec![0.0; n];
    for (r, (g, h)) in grad
        .data()
        .chunks(n)
        .zip(cache.normalized.chunks(n))
        .enumerate()
    {
        let mut mean_gh = 0.0;
        let mut mean_ghh = 0.0;
        for i in 0..n {
            let gh = g[i] * gamma.data()[i];
            mean_gh += gh;
            mean_ghh += gh * h[i];
            gg[i] += g[i] * h[i];
            gb[i] += g[i];
        }
        mean_gh /= n as f64;
        mean_ghh /= n as f64;
        let inv = cache.inv_std[r];
        for i in 0..n {
            let gh = g[i] * gamma.data()[i];
            gx.push(inv * (gh - mean_gh - h[i] * mean_ghh));
        }
    }
    (
        Tensor::from_parts(grad.shape().to_vec(), gx),
        Tensor::from_parts(vec![n], gg),
        Tensor::from_parts(vec![n], gb),
    )
}

/// Numerically stable softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.ndim() {
        return Err(Error::dim(format!("softmax: axis {axis} invalid for {:?}", x.shape())));
    }
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let mut out = vec![0.0; x.len()];
    let d = x.data();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * n * inner + k * inner + i;
            let max = (0..n).map(|k| d[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..n {
                let e = (d[at(k)] - max).exp();
                out[at(k)] = e;
                total += e;
            }
            for k in 0..n {
                out[at(k)] /= total;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

pub fn softmax_backward(y: &Tensor, grad: &Tensor, axis: usize) -> Tensor {
    let (outer, n, inner) = split_axis(y.shape(), axis);
    let mut out = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * n * inner + k * inner + i;
            let dot: f64 = (0..n).map(|k| grad.data()[at(k)] * y.data()[at(k)]).sum();
            for k in 0..n {
                out[at(k)] = y.data()[at(k)] * (grad.data()[at(k)] - dot);
            }
        }
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Gaussian error linear unit, exact `x · Φ(x)` form.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

pub fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    cdf + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn softplus_inverse(y: f64) -> f64 {
    // ln(e^y - 1), stable for large y
    y + (-(-y).exp_m1()).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_reference_values() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
        // Φ(1) = 0.5·(1 + erf(1/√2)) = 0.841344746...
        assert!((gelu_scalar(1.0) - 0.841_344_746_068_543).abs() < 1e-12);
    }

    #[test]
    fn softmax_closed_form() {
        let x = Tensor::new(&[2], vec![0.0, 3f64.ln()]).unwrap();
        let y = softmax(&x, 0).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-15);
        assert!((y.data()[1] - 0.75).abs() < 1e-15);

        let u = softmax(&Tensor::full(&[5], 3.2), 0).unwrap();
        assert!(u.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn softmax_inner_axis() {
        let x = Tensor::from_fn(&[2, 3, 2], |i| (i as f64 * 0.7).sin());
        let y = softmax(&x, 1).unwrap();
        for a in 0..2 {
            for c in 0..2 {
                let s: f64 = (0..3).map(|b| y.at(&[a, b, c])).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_two_point() {
        let x = Tensor::new(&[2], vec![1.0, 3.0]).unwrap();
        let (y, _) = layer_norm(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), 1e-14).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-12);
        assert!((y.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_constant_input_is_zero() {
        let x = Tensor::full(&[3, 4], 2.5);
        let (y, _) = layer_norm(&x, &Tensor::ones(&[4]), &Tensor::zeros(&[4]), 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_rejects_nonpositive_eps() {
        let x = Tensor::ones(&[2]);
        let err = layer_norm(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), 0.0).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }

    #[test]
    fn softplus_round_trip() {
        for &y in &[1e-3, 0.5, 1.0, 7.0, 40.0] {
            assert!((softplus_scalar(softplus_inverse(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
    }
}

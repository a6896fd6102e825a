//! Grouped 2-D cross-correlation with zero padding.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub groups: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self { groups: 1, stride: 1, padding: 0 }
    }
}

struct Geometry {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    cg_in: usize,
    cg_out: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

fn geometry(x: &Tensor, weight: &Tensor, spec: Conv2dSpec) -> Result<Geometry> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::dim(format!(
            "conv2d: expected input [B,C,H,W] and weight [Cout,C/G,kh,kw], got {xs:?} and {ws:?}"
        )));
    }
    let g = spec.groups;
    if g == 0 || spec.stride == 0 {
        return Err(Error::config("conv2d: groups and stride must be positive"));
    }
    let (c_in, c_out) = (xs[1], ws[0]);
    if c_in % g != 0 || c_out % g != 0 {
        return Err(Error::config(format!(
            "conv2d: channels in={c_in} out={c_out} not divisible by groups={g}"
        )));
    }
    if ws[1] != c_in / g {
        return Err(Error::dim(format!(
            "conv2d: weight {ws:?} expects {} input channels per group, input {xs:?} gives {}",
            ws[1],
            c_in / g
        )));
    }
    let (h, w, kh, kw) = (xs[2], xs[3], ws[2], ws[3]);
    let (hp, wp) = (h + 2 * spec.padding, w + 2 * spec.padding);
    if hp < kh || wp < kw {
        return Err(Error::dim(format!("conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")));
    }
    Ok(Geometry {
        batch: xs[0],
        c_in,
        h,
        w,
        c_out,
        cg_in: c_in / g,
        cg_out: c_out / g,
        kh,
        kw,
        ho: (hp - kh) / spec.stride + 1,
        wo: (wp - kw) / spec.stride + 1,
    })
}

/// Visits every (output, input, weight) flat-index triple that contributes.
fn for_each_tap(geo: &Geometry, spec: Conv2dSpec, mut f: impl FnMut(usize, usize, usize)) {
    let pad = spec.padding as isize;
    for b in 0..geo.batch {
        for oc in 0..geo.c_out {
            let group = oc / geo.cg_out;
            for oy in 0..geo.ho {
                for ox in 0..geo.wo {
                    let o_idx = ((b * geo.c_out + oc) * geo.ho + oy) * geo.wo + ox;
                    for icg in 0..geo.cg_in {
                        let ic = group * geo.cg_in + icg;
                        for ky in 0..geo.kh {
                            let iy = (oy * spec.stride + ky) as isize - pad;
                            if iy < 0 || iy >= geo.h as isize {
                                continue;
                            }
                            for kx in 0..geo.kw {
                                let ix = (ox * spec.stride + kx) as isize - pad;
                                if ix < 0 || ix >= geo.w as isize {
                                    continue;
                                }
                                let x_idx = ((b * geo.c_in + ic) * geo.h + iy as usize) * geo.w + ix as usize;
                                let w_idx = ((oc * geo.cg_in + icg) * geo.kh + ky) * geo.kw + kx;
                                f(o_idx, x_idx, w_idx);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: Conv2dSpec) -> Result<Tensor> {
    let geo = geometry(x, weight, spec)?;
    if let Some(b) = bias {
        if b.shape() != [geo.c_out] {
            return Err(Error::dim(format!("conv2d: bias {:?} expected [{}]", b.shape(), geo.c_out)));
        }
    }
    let plane = geo.ho * geo.wo;
    let mut out = vec![0.0; geo.batch * geo.c_out * plane];
    if let Some(b) = bias {
        for (i, chunk) in out.chunks_mut(plane).enumerate() {
            chunk.fill(b.data()[i % geo.c_out]);
        }
    }
    let (xd, wd) = (x.data(), weight.data());
    for_each_tap(&geo, spec, |o, xi, wi| out[o] += xd[xi] * wd[wi]);
    Ok(Tensor::from_parts(vec![geo.batch, geo.c_out, geo.ho, geo.wo], out))
}

/// Gradients (d_x, d_weight, d_bias).
pub fn conv2d_backward(x: &Tensor, weight: &Tensor, spec: Conv2dSpec, grad: &Tensor) -> (Tensor, Tensor, Tensor) {
    let geo = geometry(x, weight, spec).expect("validated in forward");
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; weight.len()];
    let (xd, wd, gd) = (x.data(), weight.data(), grad.data());
    for_each_tap(&geo, spec, |o, xi, wi| {
        gx[xi] += gd[o] * wd[wi];
        gw[wi] += gd[o] * xd[xi];
    });
    let plane = geo.ho * geo.wo;
    let mut gb = vec![0.0; geo.c_out];
    for (i, chunk) in gd.chunks(plane).enumerate() {
        gb[i % geo.c_out] += chunk.iter().sum::<f64>();
    }
    (
        Tensor::from_parts(x.shape().to_vec(), gx),
        Tensor::from_parts(weight.shape().to_vec(), gw),
        Tensor::from_parts(vec![geo.c_out], gb),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::rng::{uniform, RngSeed};

    #[test]
    fn one_by_one_identity() {
        let x = Tensor::from_fn(&[1, 3, 2, 2], |i| i as f64 - 4.0);
        let w = Tensor::from_fn(&[3, 3, 1, 1], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
        assert_eq!(conv2d(&x, &w, None, Conv2dSpec::default()).unwrap(), x);
    }

    #[test]
    fn all_ones_center_sum() {
        let x = Tensor::ones(&[1, 1, 3, 3]);
        let w = Tensor::ones(&[1, 1, 3, 3]);
        let spec = Conv2dSpec { padding: 1, ..Default::default() };
        let y = conv2d(&x, &w, None, spec).unwrap();
        assert_eq!(y.at(&[0, 0, 1, 1]), 9.0);
        assert_eq!(y.at(&[0, 0, 0, 0]), 4.0);
    }

    // Depthwise conv equals four independent single-channel convs.
    #[test]
    fn depthwise_matches_channelwise_loop() {
        let mut rng = RngSeed(3).rng();
        let x = uniform(&mut rng, &[2, 4, 4, 4], 1.0);
        let w = uniform(&mut rng, &[4, 1, 3, 3], 1.0);
        let spec = Conv2dSpec { groups: 4, stride: 1, padding: 1 };
        let y = conv2d(&x, &w, None, spec).unwrap();
        for c in 0..4 {
            let xc = Tensor::from_fn(&[2, 1, 4, 4], |i| {
                let (b, r) = (i / 16, i % 16);
                x.data()[(b * 4 + c) * 16 + r]
            });
            let wc = Tensor::new(&[1, 1, 3, 3], w.data()[c * 9..(c + 1) * 9].to_vec()).unwrap();
            let yc = conv2d(&xc, &wc, None, Conv2dSpec { padding: 1, ..Default::default() }).unwrap();
            for b in 0..2 {
                for p in 0..16 {
                    assert_eq!(y.data()[(b * 4 + c) * 16 + p], yc.data()[b * 16 + p]);
                }
            }
        }
    }

    #[test]
    fn indivisible_groups_is_config_error() {
        let x = Tensor::zeros(&[1, 3, 2, 2]);
        let w = Tensor::zeros(&[2, 1, 1, 1]);
        let err = conv2d(&x, &w, None, Conv2dSpec { groups: 2, ..Default::default() }).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}

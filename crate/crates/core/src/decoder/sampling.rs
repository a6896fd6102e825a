//! Sampling positions for deformable cross-attention.
//!
//! Positions are `P = R + ΔP`: a fixed normalized reference grid plus offsets
//! predicted from the context alone, squashed by `tanh` and scaled so each
//! component stays within `offset_range` grid spacings.

use rand_chacha::ChaCha8Rng;

use super::config::DecoderConfig;
use crate::error::{Error, Result};
use crate::numeric::{Bound, Conv2dSpec, ParamId, ParamStore, Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Reference grid `[(B·G), 2, H, W]`: entry `(i, j)` is `(2i/H − 1, 2j/W − 1)`.
pub fn make_reference_grid(height: usize, width: usize, batch_groups: usize) -> Result<Tensor> {
    if height == 0 || width == 0 || batch_groups == 0 {
        return Err(Error::dim(format!(
            "reference grid needs positive extents, got {height}x{width} x{batch_groups}"
        )));
    }
    let plane = height * width;
    Ok(Tensor::from_fn(&[batch_groups, 2, height, width], |idx| {
        let r = idx % (2 * plane);
        let (axis, cell) = (r / plane, r % plane);
        if axis == 0 {
            (cell / width) as f64 / height as f64 * 2.0 - 1.0
        } else {
            (cell % width) as f64 / width as f64 * 2.0 - 1.0
        }
    }))
}

/// Per-axis offset scale: `offset_range · 2 / extent` for rows, then columns.
pub fn offset_scales(offset_range: f64, height: usize, width: usize) -> [f64; 2] {
    [offset_range * 2.0 / height as f64, offset_range * 2.0 / width as f64]
}

/// `tanh(raw)` scaled per axis; `raw` is `[N, 2, H, W]`.
pub fn scale_offsets(raw: &Tensor, offset_range: f64, height: usize, width: usize) -> Result<Tensor> {
    let s = raw.shape();
    if s.len() != 4 || s[1] != 2 {
        return Err(Error::dim(format!("scale_offsets: expected [N,2,H,W], got {s:?}")));
    }
    let scales = offset_scales(offset_range, height, width);
    let plane = s[2] * s[3];
    Ok(Tensor::from_fn(s, |i| {
        scales[(i / plane) % 2] * raw.data()[i].tanh()
    }))
}

/// Context-derived sampling field for one layer.
#[derive(Debug, Clone)]
pub struct SamplingField {
    pub reference: Tensor,
    pub offsets: Tensor,
    pub positions: Tensor,
}

/// `Conv1×1(GELU(LayerNorm(GroupedConv3×3(X))))`, producing two raw offset
/// channels per group.
#[derive(Debug, Clone)]
pub struct OffsetNetwork {
    conv1_w: ParamId,
    conv1_b: ParamId,
    norm_gamma: ParamId,
    norm_beta: ParamId,
    conv2_w: ParamId,
    conv2_b: ParamId,
    groups: usize,
}

impl OffsetNetwork {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, cfg: &DecoderConfig) -> Self {
        let (c, g) = (cfg.context_channels, cfg.num_groups);
        let cg = cfg.group_channels();
        Self {
            conv1_w: store.add_fan_in(rng, &format!("{prefix}.conv1.weight"), &[c, cg, 3, 3], cg * 9),
            conv1_b: store.add(format!("{prefix}.conv1.bias"), Tensor::zeros(&[c])),
            norm_gamma: store.add(format!("{prefix}.norm.gamma"), Tensor::ones(&[c])),
            norm_beta: store.add(format!("{prefix}.norm.beta"), Tensor::zeros(&[c])),
            conv2_w: store.add_fan_in(rng, &format!("{prefix}.conv2.weight"), &[2 * g, cg, 1, 1], cg),
            conv2_b: store.add(format!("{prefix}.conv2.bias"), Tensor::zeros(&[2 * g])),
            groups: g,
        }
    }

    /// Names of the final (offset-emitting) convolution parameters.
    pub fn final_conv_ids(&self) -> [ParamId; 2] {
        [self.conv2_w, self.conv2_b]
    }

    /// Raw offsets `[(B·G), 2, H, W]`. Reads only the context.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, context: Var) -> Result<Var> {
        let s = tape.shape(context).to_vec();
        let (b, h, w) = (s[0], s[2], s[3]);
        let spec1 = Conv2dSpec { groups: self.groups, stride: 1, padding: 1 };
        let x = tape.conv2d(context, p[self.conv1_w], Some(p[self.conv1_b]), spec1)?;
        let x = tape.permute(x, &[0, 2, 3, 1])?;
        let x = tape.layer_norm(x, p[self.norm_gamma], p[self.norm_beta], LAYER_NORM_EPS)?;
        let x = tape.gelu(x);
        let x = tape.permute(x, &[0, 3, 1, 2])?;
        let spec2 = Conv2dSpec { groups: self.groups, stride: 1, padding: 0 };
        let raw = tape.conv2d(x, p[self.conv2_w], Some(p[self.conv2_b]), spec2)?;
        tape.reshape(raw, &[b * self.groups, 2, h, w])
    }
}

/// Sampling positions on the tape: returns `(offsets, positions)`.
pub fn sampling_positions(
    tape: &mut Tape,
    p: &Bound,
    net: &OffsetNetwork,
    context: Var,
    cfg: &DecoderConfig,
) -> Result<(Var, Var)> {
    let (h, w) = (cfg.context_height, cfg.context_width);
    let raw = net.forward(tape, p, context)?;
    let n = tape.shape(raw)[0];
    let squashed = tape.tanh(raw);
    let scales = offset_scales(cfg.offset_range, h, w);
    let plane = h * w;
    let scale = tape.constant(Tensor::from_fn(&[n, 2, h, w], |i| scales[(i / plane) % 2]));
    let offsets = tape.mul(squashed, scale)?;
    let reference = tape.constant(make_reference_grid(h, w, n)?);
    let positions = tape.add(reference, offsets)?;
    Ok((offsets, positions))
}

/// Evaluates the sampling field for a context batch without recording gradients.
pub fn sampling_field(
    store: &ParamStore,
    net: &OffsetNetwork,
    context: &Tensor,
    cfg: &DecoderConfig,
) -> Result<SamplingField> {
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let ctx = tape.constant(context.clone());
    let (offsets, positions) = sampling_positions(&mut tape, &p, net, ctx, cfg)?;
    let n = tape.shape(offsets)[0];
    Ok(SamplingField {
        reference: make_reference_grid(cfg.context_height, cfg.context_width, n)?,
        offsets: tape.value(offsets).clone(),
        positions: tape.value(positions).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_grid_two_by_two() {
        let r = make_reference_grid(2, 2, 1).unwrap();
        assert_eq!(r.data(), &[-1.0, -1.0, 0.0, 0.0, -1.0, 0.0, -1.0, 0.0]);
    }

    #[test]
    fn reference_grid_origin_and_midpoint() {
        for &(h, w) in &[(1, 1), (3, 7), (4, 5)] {
            let r = make_reference_grid(h, w, 3).unwrap();
            for bg in 0..3 {
                assert_eq!(r.at(&[bg, 0, 0, 0]), -1.0);
                assert_eq!(r.at(&[bg, 1, 0, 0]), -1.0);
            }
        }
        let r = make_reference_grid(4, 3, 1).unwrap();
        assert_eq!(r.at(&[0, 0, 2, 1]), 0.0);
        assert!(r.data().iter().all(|&v| (-1.0..1.0).contains(&v)));
    }

    #[test]
    fn scale_offsets_limits() {
        let zero = Tensor::zeros(&[1, 2, 16, 16]);
        assert!(scale_offsets(&zero, 1.0, 16, 16).unwrap().data().iter().all(|&v| v == 0.0));

        let big = Tensor::full(&[1, 2, 16, 8], 1e3);
        let s1 = scale_offsets(&big, 1.0, 16, 8).unwrap();
        assert_eq!(s1.at(&[0, 0, 3, 3]), 0.125);
        assert_eq!(s1.at(&[0, 1, 3, 3]), 0.25);

        let raw = Tensor::from_fn(&[2, 2, 3, 3], |i| (i as f64 * 0.37).sin() * 3.0);
        let a = scale_offsets(&raw, 1.0, 3, 3).unwrap();
        let b = scale_offsets(&raw, 2.0, 3, 3).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(2.0 * x, *y);
        }
    }
}

//! Recorded cross-attention for visualization: where each head samples and
//! how much attention mass those samples receive.

use serde::{Deserialize, Serialize};

use super::attention::LayerTrace;
use super::config::DecoderConfig;
use crate::error::{Error, Result};

/// Threshold on attention mass summed over queries used for hotspot plots.
pub const DEFAULT_HOTSPOT_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub num_heads: usize,
    pub num_groups: usize,
    pub height: usize,
    pub width: usize,
    pub layers: Vec<LayerTrace>,
}

/// One sampling slot of one head, with its summed attention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub layer: usize,
    pub head: usize,
    /// Flat index into the H×W slot grid.
    pub slot: usize,
    /// Normalized row coordinate of the sampling position.
    pub y: f64,
    /// Normalized column coordinate of the sampling position.
    pub x: f64,
    pub weight: f64,
}

impl AttentionTrace {
    pub fn new(cfg: &DecoderConfig) -> Self {
        Self {
            num_heads: cfg.num_heads,
            num_groups: cfg.num_groups,
            height: cfg.context_height,
            width: cfg.context_width,
            layers: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Every (layer, head, slot) with its sampling position and attention summed over queries.
    pub fn slots(&self) -> Result<Vec<Hotspot>> {
        if self.layers.is_empty() {
            return Err(Error::State("attention trace is empty".into()));
        }
        let n = self.height * self.width;
        let per_group = self.num_heads / self.num_groups;
        let mut out = Vec::with_capacity(self.layers.len() * self.num_heads * n);
        for (l, layer) in self.layers.iter().enumerate() {
            let queries = layer.weights.shape()[1];
            let w = layer.weights.data();
            let pos = layer.positions.data();
            for head in 0..self.num_heads {
                let g = head / per_group;
                for slot in 0..n {
                    let weight: f64 = (0..queries).map(|q| w[(head * queries + q) * n + slot]).sum();
                    out.push(Hotspot {
                        layer: l,
                        head,
                        slot,
                        y: pos[(g * 2) * n + slot],
                        x: pos[(g * 2 + 1) * n + slot],
                        weight,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Slots whose attention summed over queries exceeds `threshold`, heaviest first.
    pub fn hotspots(&self, threshold: f64) -> Result<Vec<Hotspot>> {
        let mut hot: Vec<Hotspot> = self.slots()?.into_iter().filter(|h| h.weight > threshold).collect();
        hot.sort_by(|a, b| b.weight.total_cmp(&a.weight));
        Ok(hot)
    }

    /// Binary PGM (P5) of one head's sampling positions, splatted onto a
    /// canvas `scale` pixels per grid cell, brightness ∝ summed attention.
    pub fn heat_image(&self, layer: usize, head: usize, scale: usize) -> Result<Vec<u8>> {
        if layer >= self.layers.len() || head >= self.num_heads {
            return Err(Error::State(format!("no trace for layer {layer} head {head}")));
        }
        let slots: Vec<Hotspot> = self
            .slots()?
            .into_iter()
            .filter(|s| s.layer == layer && s.head == head)
            .collect();
        let (ph, pw) = (self.height * scale, self.width * scale);
        let mut canvas = vec![0f64; ph * pw];
        for s in &slots {
            let py = ((s.y + 1.0) * 0.5 * ph as f64).floor().clamp(0.0, (ph - 1) as f64) as usize;
            let px = ((s.x + 1.0) * 0.5 * pw as f64).floor().clamp(0.0, (pw - 1) as f64) as usize;
            let half = scale / 4;
            for yy in py.saturating_sub(half)..=(py + half).min(ph - 1) {
                for xx in px.saturating_sub(half)..=(px + half).min(pw - 1) {
                    canvas[yy * pw + xx] += s.weight;
                }
            }
        }
        let max = canvas.iter().cloned().fold(0.0, f64::max);
        let mut out = format!("P5\n{pw} {ph}\n255\n").into_bytes();
        out.extend(canvas.iter().map(|&v| if max > 0.0 { (v / max * 255.0).round() as u8 } else { 0 }));
        Ok(out)
    }
}

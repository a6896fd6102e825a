//! Multi-head self-attention over the query tokens and (deformable)
//! cross-attention from the tokens into the context map.

use rand_chacha::ChaCha8Rng;

use super::config::{AttentionKind, DecoderConfig, PeType};
use super::sampling::{make_reference_grid, sampling_positions, OffsetNetwork, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::numeric::rng::uniform;
use crate::numeric::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// Scale of the uniform initialization for embedding tables.
pub const EMBEDDING_INIT: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::ones(&[dim])),
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, p[self.gamma], p[self.beta], LAYER_NORM_EPS)
    }
}

/// `[B, T, D] → [B·heads, T, D/heads]`
fn split_heads(tape: &mut Tape, x: Var, heads: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let (b, t, d) = (s[0], s[1], s[2]);
    let x = tape.reshape(x, &[b, t, heads, d / heads])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, &[b * heads, t, d / heads])
}

/// `[B·heads, T, dh] → [B, T, heads·dh]`
fn merge_heads(tape: &mut Tape, x: Var, batch: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let (heads, t, dh) = (s[0] / batch, s[1], s[2]);
    let x = tape.reshape(x, &[batch, heads, t, dh])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, &[batch, t, heads * dh])
}

/// Scaled dot-product scores `q kᵀ / √dh`, shape `[B·heads, Tq, Tk]`.
fn scores(tape: &mut Tape, q: Var, k: Var) -> Result<Var> {
    let dh = tape.shape(q)[2];
    let kt = tape.permute(k, &[0, 2, 1])?;
    let s = tape.bmm(q, kt)?;
    Ok(tape.scale(s, 1.0 / (dh as f64).sqrt()))
}

/// Pre-norm multi-head self-attention with residual.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    norm: Norm,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
    heads: usize,
}

impl SelfAttention {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, cfg: &DecoderConfig) -> Self {
        let d = cfg.model_dim;
        Self {
            norm: Norm::new(store, &format!("{prefix}.norm"), d),
            wq: store.add_fan_in(rng, &format!("{prefix}.wq"), &[d, d], d),
            wk: store.add_fan_in(rng, &format!("{prefix}.wk"), &[d, d], d),
            wv: store.add_fan_in(rng, &format!("{prefix}.wv"), &[d, d], d),
            wo: store.add_fan_in(rng, &format!("{prefix}.wo"), &[d, d], d),
            bo: store.add(format!("{prefix}.bo"), Tensor::zeros(&[d])),
            heads: cfg.num_heads,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, tokens: Var) -> Result<Var> {
        let s = tape.shape(tokens).to_vec();
        if s.len() != 3 || s[2] % self.heads != 0 {
            return Err(Error::config(format!(
                "self-attention: tokens {s:?} incompatible with {} heads",
                self.heads
            )));
        }
        let y = self.norm.forward(tape, p, tokens)?;
        let q = tape.linear(y, p[self.wq], None)?;
        let k = tape.linear(y, p[self.wk], None)?;
        let v = tape.linear(y, p[self.wv], None)?;
        let (q, k, v) = (
            split_heads(tape, q, self.heads)?,
            split_heads(tape, k, self.heads)?,
            split_heads(tape, v, self.heads)?,
        );
        let sc = scores(tape, q, k)?;
        let attn = tape.softmax(sc, 2)?;
        let o = tape.bmm(attn, v)?;
        let o = merge_heads(tape, o, s[0])?;
        let o = tape.linear(o, p[self.wo], Some(p[self.bo]))?;
        tape.add(o, tokens)
    }
}

/// Values recorded for one layer during a traced forward pass (first batch item).
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// `[G, 2, H, W]`
    pub positions: Tensor,
    /// `[heads, Q, H·W]`
    pub weights: Tensor,
}

/// Pre-norm cross-attention from the tokens into the context, with residual.
///
/// Head `h` belongs to group `h / (heads / G)` and attends only to the H·W
/// positions sampled for that group. Keys and values come from a per-group
/// projection of the group's `C/G` sampled channels.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    norm: Norm,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
    offsets: Option<OffsetNetwork>,
    rpe_table: Option<ParamId>,
    abs_embedding: Option<ParamId>,
    cfg: DecoderConfig,
}

impl CrossAttention {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, cfg: &DecoderConfig) -> Self {
        let d = cfg.model_dim;
        let (g, cg) = (cfg.num_groups, cfg.group_channels());
        let (h, w) = (cfg.context_height, cfg.context_width);
        let offsets = (cfg.attention == AttentionKind::Deformable)
            .then(|| OffsetNetwork::new(store, rng, &format!("{prefix}.offsets"), cfg));
        let norm = Norm::new(store, &format!("{prefix}.norm"), d);
        let wq = store.add_fan_in(rng, &format!("{prefix}.wq"), &[d, d], d);
        let wk = store.add_fan_in(rng, &format!("{prefix}.wk"), &[g, cg, d / g], cg);
        let wv = store.add_fan_in(rng, &format!("{prefix}.wv"), &[g, cg, d / g], cg);
        let wo = store.add_fan_in(rng, &format!("{prefix}.wo"), &[d, d], d);
        let bo = store.add(format!("{prefix}.bo"), Tensor::zeros(&[d]));
        let rpe_table = (cfg.pe_type == PeType::Relative).then(|| {
            let shape = [cfg.num_heads, cfg.num_queries(), 2 * h - 1, 2 * w - 1];
            store.add(format!("{prefix}.rpe_table"), uniform(rng, &shape, EMBEDDING_INIT))
        });
        let abs_embedding = (cfg.pe_type == PeType::Absolute).then(|| {
            let shape = [cfg.context_channels, h, w];
            store.add(format!("{prefix}.abs_embedding"), uniform(rng, &shape, EMBEDDING_INIT))
        });
        Self { norm, wq, wk, wv, wo, bo, offsets, rpe_table, abs_embedding, cfg: cfg.clone() }
    }

    pub fn offset_network(&self) -> Option<&OffsetNetwork> {
        self.offsets.as_ref()
    }

    /// Sampling positions `[(B·G), 2, H, W]` for this layer. The token
    /// tensor is not an input: positions depend on the context only.
    pub fn positions(&self, tape: &mut Tape, p: &Bound, context: Var) -> Result<Var> {
        let batch = tape.shape(context)[0];
        match &self.offsets {
            Some(net) => Ok(sampling_positions(tape, p, net, context, &self.cfg)?.1),
            None => {
                let grid = make_reference_grid(
                    self.cfg.context_height,
                    self.cfg.context_width,
                    batch * self.cfg.num_groups,
                )?;
                Ok(tape.constant(grid))
            }
        }
    }

    /// Per-group key or value projection of sampled features
    /// `[(B·G), C/G, H, W]` → `[B·heads, H·W, dh]`.
    fn project_groups(&self, tape: &mut Tape, sampled: Var, weight: Var, batch: usize) -> Result<Var> {
        let c = &self.cfg;
        let (g, cg, n) = (c.num_groups, c.group_channels(), c.grid_len());
        let (hg, dh) = (c.heads_per_group(), c.head_dim());
        let x = tape.reshape(sampled, &[batch, g, cg, n])?;
        let x = tape.permute(x, &[1, 0, 3, 2])?;
        let x = tape.reshape(x, &[g, batch * n, cg])?;
        let x = tape.bmm(x, weight)?;
        let x = tape.reshape(x, &[g, batch, n, hg, dh])?;
        let x = tape.permute(x, &[1, 0, 3, 2, 4])?;
        tape.reshape(x, &[batch * c.num_heads, n, dh])
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        tokens: Var,
        context: Var,
        trace: Option<&mut Vec<LayerTrace>>,
    ) -> Result<Var> {
        let c = &self.cfg;
        let s = tape.shape(tokens).to_vec();
        let cs = tape.shape(context).to_vec();
        let batch = s[0];
        if s.len() != 3 || s[2] != c.model_dim || cs != c.context_shape(batch) {
            return Err(Error::dim(format!(
                "cross-attention: tokens {s:?} / context {cs:?} do not match config (D={}, context {:?})",
                c.model_dim,
                c.context_shape(batch)
            )));
        }
        let (g, cg, h, w) = (c.num_groups, c.group_channels(), c.context_height, c.context_width);
        let heads = c.num_heads;
        let hg = c.heads_per_group();

        let positions = self.positions(tape, p, context)?;

        let features = match self.abs_embedding {
            Some(e) => tape.add_broadcast(context, p[e])?,
            None => context,
        };
        let grouped = tape.reshape(features, &[batch * g, cg, h, w])?;
        let sampled = match self.offsets {
            Some(_) => tape.bilinear_sample(grouped, positions)?,
            None => grouped,
        };
        let k = self.project_groups(tape, sampled, p[self.wk], batch)?;
        let v = self.project_groups(tape, sampled, p[self.wv], batch)?;

        let y = self.norm.forward(tape, p, tokens)?;
        let q = tape.linear(y, p[self.wq], None)?;
        let q = split_heads(tape, q, heads)?;
        let mut sc = scores(tape, q, k)?;

        if let Some(table) = self.rpe_table {
            let tiled: Vec<usize> = (0..batch * heads).map(|i| i % heads).collect();
            let group_of: Vec<usize> = (0..batch * heads).map(|i| (i / heads) * g + (i % heads) / hg).collect();
            let table = tape.gather_rows(p[table], &tiled)?;
            let head_pos = tape.gather_rows(positions, &group_of)?;
            let bias = tape.bilinear_sample(table, head_pos)?;
            let bias = tape.reshape(bias, &[batch * heads, c.num_queries(), h * w])?;
            sc = tape.add(sc, bias)?;
        }

        let attn = tape.softmax(sc, 2)?;
        if let Some(trace) = trace {
            trace.push(LayerTrace {
                positions: crate::numeric::linalg::slice(tape.value(positions), 0, 0, g)?,
                weights: crate::numeric::linalg::slice(tape.value(attn), 0, 0, heads)?,
            });
        }
        let o = tape.bmm(attn, v)?;
        let o = merge_heads(tape, o, batch)?;
        let o = tape.linear(o, p[self.wo], Some(p[self.bo]))?;
        tape.add(o, tokens)
    }
}

/// Pre-norm two-layer GELU feed-forward block with residual.
#[derive(Debug, Clone)]
pub struct FeedForward {
    norm: Norm,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, cfg: &DecoderConfig) -> Self {
        let d = cfg.model_dim;
        let hidden = d * cfg.ffn_multiplier;
        Self {
            norm: Norm::new(store, &format!("{prefix}.norm"), d),
            w1: store.add_fan_in(rng, &format!("{prefix}.w1"), &[d, hidden], d),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[hidden])),
            w2: store.add_fan_in(rng, &format!("{prefix}.w2"), &[hidden, d], hidden),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(&[d])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, tokens: Var) -> Result<Var> {
        let y = self.norm.forward(tape, p, tokens)?;
        let y = tape.linear(y, p[self.w1], Some(p[self.b1]))?;
        let y = tape.gelu(y);
        let y = tape.linear(y, p[self.w2], Some(p[self.b2]))?;
        tape.add(y, tokens)
    }
}

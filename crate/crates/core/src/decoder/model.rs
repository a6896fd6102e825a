use rand_chacha::ChaCha8Rng;

use super::attention::{CrossAttention, FeedForward, LayerTrace, SelfAttention};
use super::config::DecoderConfig;
use super::trace::AttentionTrace;
use crate::error::{Error, Result};
use crate::numeric::rng::uniform;
use crate::numeric::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// Learnable query embeddings `[Q, D]`. In multi-query mode rows 0..24 are
/// the pose queries and row 24 is the shape query.
#[derive(Debug, Clone, Copy)]
pub struct QueryTokens(pub ParamId);

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attn: SelfAttention,
    pub cross_attn: CrossAttention,
    pub ffn: FeedForward,
}

/// Stack of (self-attention → cross-attention → FFN) layers over learned queries.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub queries: QueryTokens,
    pub layers: Vec<DecoderLayer>,
    cfg: DecoderConfig,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &DecoderConfig) -> Result<Self> {
        cfg.validate()?;
        let queries = QueryTokens(store.add(
            "decoder.queries",
            uniform(rng, &[cfg.num_queries(), cfg.model_dim], 1.0),
        ));
        let layers = (0..cfg.num_layers)
            .map(|l| {
                let prefix = format!("decoder.layers.{l}");
                DecoderLayer {
                    self_attn: SelfAttention::new(store, rng, &format!("{prefix}.self_attn"), cfg),
                    cross_attn: CrossAttention::new(store, rng, &format!("{prefix}.cross_attn"), cfg),
                    ffn: FeedForward::new(store, rng, &format!("{prefix}.ffn"), cfg),
                }
            })
            .collect();
        Ok(Self { queries, layers, cfg: cfg.clone() })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    /// Query tokens broadcast over the batch: `[B, Q, D]`.
    pub fn initial_tokens(&self, tape: &mut Tape, p: &Bound, batch: usize) -> Result<Var> {
        let q = tape.reshape(p[self.queries.0], &[1, self.cfg.num_queries(), self.cfg.model_dim])?;
        tape.gather_rows(q, &vec![0; batch])
    }

    /// Runs the decoder on a context batch `[B, C, H, W]`, returning `[B, Q, D]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        context: Var,
        mut trace: Option<&mut AttentionTrace>,
    ) -> Result<Var> {
        let cs = tape.shape(context).to_vec();
        if cs.len() != 4 || cs[1..] != self.cfg.context_shape(1)[1..] {
            return Err(Error::dim(format!(
                "decoder: context {cs:?} does not match configured [B, {}, {}, {}]",
                self.cfg.context_channels, self.cfg.context_height, self.cfg.context_width
            )));
        }
        let mut y = self.initial_tokens(tape, p, cs[0])?;
        for (l, layer) in self.layers.iter().enumerate() {
            let y1 = layer.self_attn.forward(tape, p, y)?;
            let mut recorded: Vec<LayerTrace> = Vec::new();
            let y2 = layer
                .cross_attn
                .forward(tape, p, y1, context, trace.is_some().then_some(&mut recorded))?;
            if !tape.value(y2).all_finite() {
                return Err(Error::numeric(format!("decoder layer {l}: non-finite cross-attention output")));
            }
            y = layer.ffn.forward(tape, p, y2)?;
            if !tape.value(y).all_finite() {
                return Err(Error::numeric(format!("decoder layer {l}: non-finite output")));
            }
            if let Some(t) = trace.as_deref_mut() {
                t.layers.extend(recorded);
            }
        }
        Ok(y)
    }

    /// Forward pass with frozen parameters, returning `[B, Q, D]` and the trace.
    pub fn infer(&self, store: &ParamStore, context: &Tensor) -> Result<(Tensor, AttentionTrace)> {
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let ctx = tape.constant(context.clone());
        let mut trace = AttentionTrace::new(&self.cfg);
        let out = self.forward(&mut tape, &p, ctx, Some(&mut trace))?;
        Ok((tape.value(out).clone(), trace))
    }
}

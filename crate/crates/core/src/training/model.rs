use crate::body::{lbs_forward, project_weak_perspective, PreparedTemplate, SmplParams};
use crate::decoder::{AttentionTrace, Decoder, DecoderConfig};
use crate::error::Result;
use crate::numeric::{Bound, ParamStore, RngSeed, Tape, Tensor, Var};

use super::heads::{unstack_params, MeanParams, PredictedParams, RegressionHeads};
use super::loss::BodyVars;

/// Decoder plus regression heads, sharing one parameter store.
#[derive(Debug, Clone)]
pub struct Model {
    pub store: ParamStore,
    pub decoder: Decoder,
    pub heads: RegressionHeads,
    pub means: MeanParams,
}

impl Model {
    pub fn new(cfg: &DecoderConfig, seed: RngSeed) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = seed.derive("model-init").rng();
        let decoder = Decoder::new(&mut store, &mut rng, cfg)?;
        let heads = RegressionHeads::new(&mut store, &mut rng, cfg);
        Ok(Self { store, decoder, heads, means: MeanParams::default() })
    }

    pub fn config(&self) -> &DecoderConfig {
        self.decoder.config()
    }

    /// Zeroes the regression heads so predictions collapse to the means.
    pub fn zero_heads(&mut self) {
        for id in self.heads.param_ids() {
            self.store.get_mut(id).data_mut().fill(0.0);
        }
    }

    /// Context `[B, C, H, W]` to regressed parameters.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        context: Var,
        trace: Option<&mut AttentionTrace>,
    ) -> Result<PredictedParams> {
        let tokens = self.decoder.forward(tape, p, context, trace)?;
        self.heads.predict(tape, p, tokens, &self.means)
    }

    /// Regressed parameters posed by the body model.
    pub fn forward_body(
        &self,
        tape: &mut Tape,
        p: &Bound,
        context: Var,
        template: &PreparedTemplate,
    ) -> Result<BodyVars> {
        let pred = self.forward(tape, p, context, None)?;
        let mesh = lbs_forward(tape, template, pred.pose, pred.shape)?;
        let joints2d = project_weak_perspective(tape, mesh.joints3d, pred.camera)?;
        Ok(BodyVars {
            pose: pred.pose,
            shape: pred.shape,
            joints3d: mesh.joints3d,
            joints2d,
            vertices: mesh.vertices,
        })
    }

    /// Inference on a context batch with frozen weights.
    pub fn predict(&self, contexts: &Tensor) -> Result<(Vec<SmplParams>, AttentionTrace)> {
        let mut tape = Tape::new();
        let p = self.store.bind_frozen(&mut tape);
        let ctx = tape.constant(contexts.clone());
        let mut trace = AttentionTrace::new(self.config());
        let pred = self.forward(&mut tape, &p, ctx, Some(&mut trace))?;
        Ok((unstack_params(&tape, &pred), trace))
    }
}

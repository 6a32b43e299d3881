use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::MultiHeadAttention;
use super::{QuantizerSettings, Site};
use crate::error::{Error, Result};
use crate::numerics::{Activation, Linear, Mlp, ParamStore, Tape, Var};
use crate::quantizer::{Discretizer, QuantCtx};
use crate::seed::{self, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub input_dim: usize,
    pub dim: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub blocks: usize,
    pub outputs: usize,
    /// Which blocks quantize their attention output. Only the last two may.
    pub discretize: Vec<bool>,
    pub quantizer: Option<QuantizerSettings>,
}

impl TransformerConfig {
    /// Continuous model with `blocks` blocks and the desk-scale widths.
    pub fn new(input_dim: usize, outputs: usize, blocks: usize) -> Self {
        TransformerConfig {
            input_dim,
            dim: 32,
            heads: 2,
            ff_hidden: 64,
            blocks,
            outputs,
            discretize: vec![false; blocks],
            quantizer: None,
        }
    }

    /// Turns on quantization of the attention output in the last two blocks.
    pub fn with_quantizer(mut self, settings: QuantizerSettings) -> Self {
        let n = self.blocks;
        self.discretize = (0..n).map(|i| i + 2 >= n).collect();
        self.quantizer = Some(settings);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.dim == 0 || self.input_dim == 0 || self.outputs == 0 {
            return Err(Error::config("transformer sizes must be positive"));
        }
        if self.discretize.len() != self.blocks {
            return Err(Error::config(format!(
                "discretize flags list {} entries for {} blocks",
                self.discretize.len(),
                self.blocks
            )));
        }
        if let Some(i) = self.discretize.iter().enumerate().position(|(i, &d)| d && i + 2 < self.blocks) {
            return Err(Error::config(format!(
                "block {i} of {} cannot discretize; only the last two blocks may",
                self.blocks
            )));
        }
        if self.discretize.iter().any(|&d| d) && self.quantizer.is_none() {
            return Err(Error::config("discretization requested without quantizer settings"));
        }
        if let Some(q) = &self.quantizer {
            q.config_for(self.dim)?;
        }
        Ok(())
    }
}

/// Attention sublayer plus feed-forward sublayer, both residual.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub attention: MultiHeadAttention,
    pub feed_forward: Mlp,
    pub apply_discretization: bool,
}

impl TransformerBlock {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &TransformerConfig, discretize: bool, rng: &mut R) -> Result<Self> {
        Ok(TransformerBlock {
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), cfg.dim, cfg.heads, rng)?,
            feed_forward: Mlp::new(store, &format!("{name}.ff"), cfg.dim, cfg.ff_hidden, cfg.dim, Activation::Relu, rng),
            apply_discretization: discretize,
        })
    }

    /// `x` is `[b, t, dim]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        quantizer: Option<&Discretizer>,
        ctx: &mut QuantCtx,
    ) -> Result<Var> {
        let a = self.attention.forward(tape, store, x, x, x)?.out;
        let a = match (self.apply_discretization, quantizer) {
            (true, Some(q)) => q.apply(tape, store, a, ctx)?,
            (true, None) => return Err(Error::config("block discretizes but the model has no quantizer")),
            (false, _) => a,
        };
        let x1 = tape.add(x, a)?;
        let f = self.feed_forward.forward(tape, store, x1)?;
        tape.add(x1, f)
    }
}

/// Input projection, a stack of blocks, mean pooling and a linear readout.
#[derive(Clone, Debug)]
pub struct TransformerModel {
    pub config: TransformerConfig,
    pub store: ParamStore,
    pub embed: Linear,
    pub blocks: Vec<TransformerBlock>,
    pub readout: Linear,
    pub quantizer: Option<Discretizer>,
}

impl TransformerModel {
    pub fn new(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::stream_rng(seed, Stream::Init);
        let mut store = ParamStore::new();
        let embed = Linear::new(&mut store, "embed", config.input_dim, config.dim, &mut rng);
        let blocks = (0..config.blocks)
            .map(|i| TransformerBlock::new(&mut store, &format!("block{i}"), &config, config.discretize[i], &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let readout = Linear::new(&mut store, "readout", config.dim, config.outputs, &mut rng);
        let quantizer = match &config.quantizer {
            Some(q) if config.discretize.iter().any(|&d| d) => Some(q.build(&mut store, config.dim)?),
            _ => None,
        };
        Ok(TransformerModel {
            config,
            store,
            embed,
            blocks,
            readout,
            quantizer,
        })
    }

    pub fn site(&self) -> Option<Site> {
        self.quantizer.as_ref().map(|_| Site::CommunicationResult)
    }

    /// Block stack on already-embedded `[b, t, dim]` input.
    pub fn transformer_forward(&self, tape: &mut Tape, x: Var, ctx: &mut QuantCtx) -> Result<Var> {
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(tape, &self.store, h, self.quantizer.as_ref(), ctx)?;
        }
        Ok(h)
    }

    /// Logits `[b, outputs]` for raw `[b, t, input_dim]` sequences.
    pub fn forward(&self, tape: &mut Tape, x: Var, ctx: &mut QuantCtx) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.config.input_dim {
            return Err(Error::shape("transformer", format!("input {s:?}, expected [b, t, {}]", self.config.input_dim)));
        }
        let e = self.embed.forward(tape, &self.store, x)?;
        let h = self.transformer_forward(tape, e, ctx)?;
        let pooled = tape.mean_axis(h, 1)?;
        let pooled = tape.reshape(pooled, &[s[0], self.config.dim])?;
        self.readout.forward(tape, &self.store, pooled)
    }
}

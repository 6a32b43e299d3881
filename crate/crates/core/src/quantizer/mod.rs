//! Multi-head vector quantization against a shared codebook.
//!
//! A message `h` of length `m` is cut into `G` segments of `d = m / G`
//! values. Every segment is replaced by its nearest row of an `L × d`
//! codebook, and the snapped segments are concatenated back into `z`.
//! Training adds `w · ‖sg(s) − e‖² + β · ‖s − sg(e)‖²` (averaged over heads
//! and messages) to the task loss.
//!
//! [`Discretizer`] packages the config and the codebook parameter for models
//! that quantize at one or more sites; all sites share one codebook.

mod codebook;
mod io;
mod kmeans;
mod stats;
mod vq;

pub use codebook::{nearest_code, segment, Codebook, QuantizerConfig, Snapped};
pub use io::{codebook_from_json, codebook_to_json, read_codebook_binary, write_codebook_binary};
pub use kmeans::{kmeans, kmeans_init, KMeansResult, DEFAULT_ITERS};
pub use stats::{codebook_stats, CodebookStats};
pub use vq::{combined_aux_loss, gumbel, gumbel_quantize, mean_losses, quantize, GumbelNoise, QuantizationOutput};

pub(crate) use io::{read_f64, read_u64};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::seed;

/// How a site turns a message into a discrete one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Discretization {
    /// Nearest neighbour with straight-through gradients.
    Vq,
    Gumbel { temperature: f64 },
}

/// Number of pre-quantization vectors collected before k-means runs.
pub const WARMUP_VECTORS: usize = 512;

/// Per-forward-pass state threaded through quantization sites.
#[derive(Default)]
pub struct QuantCtx {
    pub outputs: Vec<QuantizationOutput>,
    /// When set and the codebook is not yet initialized, sites pass messages
    /// through unchanged and record them here.
    pub warmup: Option<Vec<Tensor>>,
    pub training: bool,
    pub noise: Option<seed::Rng>,
}

impl QuantCtx {
    pub fn training(noise: Option<seed::Rng>) -> Self {
        QuantCtx {
            training: true,
            noise,
            ..Default::default()
        }
    }

    pub fn eval() -> Self {
        QuantCtx::default()
    }

    pub fn warmup() -> Self {
        QuantCtx {
            warmup: Some(Vec::new()),
            ..Default::default()
        }
    }

    /// Number of message vectors recorded during warmup.
    pub fn warmup_vectors(&self, dim: usize) -> usize {
        self.warmup
            .as_ref()
            .map_or(0, |w| w.iter().map(|t| t.len() / dim.max(1)).sum())
    }
}

/// A quantizer bound to a parameter store.
#[derive(Clone, Debug)]
pub struct Discretizer {
    pub config: QuantizerConfig,
    pub codebook: ParamId,
    pub method: Discretization,
    initialized: bool,
}

impl Discretizer {
    pub fn new(store: &mut ParamStore, config: QuantizerConfig, method: Discretization) -> Result<Self> {
        config.validate()?;
        if let Discretization::Gumbel { temperature } = method {
            if !(temperature > 0.0) {
                return Err(Error::config(format!("gumbel temperature must be positive, got {temperature}")));
            }
        }
        let codebook = store.add(
            "codebook",
            Tensor::zeros(vec![config.codebook_size, config.segment_dim()]),
        );
        Ok(Discretizer {
            config,
            codebook,
            method,
            initialized: false,
        })
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn codebook(&self, store: &ParamStore) -> Codebook {
        if self.initialized {
            Codebook::from_entries(store.value(self.codebook).clone()).expect("valid shape")
        } else {
            Codebook::uninitialized(self.config.codebook_size, self.config.segment_dim())
        }
    }

    pub fn set_codebook(&mut self, store: &mut ParamStore, codebook: &Codebook) -> Result<()> {
        store.set_value(self.codebook, codebook.entries().clone())?;
        self.initialized = true;
        Ok(())
    }

    /// Fits the codebook with k-means on the head segments of `messages`.
    pub fn init_from_messages<R: Rng + ?Sized>(
        &mut self,
        store: &mut ParamStore,
        messages: &[Tensor],
        iters: usize,
        rng: &mut R,
    ) -> Result<()> {
        let d = self.config.segment_dim();
        let data: Vec<f64> = messages.iter().flat_map(|t| t.data().iter().copied()).collect();
        if data.is_empty() {
            return Err(Error::invalid("no warmup messages to initialize the codebook from"));
        }
        let segs = Tensor::matrix(data.len() / d, d, data)?;
        let cb = kmeans_init(&segs, self.config.codebook_size, iters, rng)?;
        self.set_codebook(store, &cb)
    }

    /// Quantizes `h` at one site, recording the output in `ctx`.
    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, h: Var, ctx: &mut QuantCtx) -> Result<Var> {
        if !self.initialized {
            return match ctx.warmup.as_mut() {
                Some(buf) => {
                    buf.push(tape.value(h).clone());
                    Ok(h)
                }
                None => Err(Error::UninitializedCodebook),
            };
        }
        let cb = tape.param(store, self.codebook);
        let out = match self.method {
            Discretization::Vq => quantize(tape, h, cb, &self.config)?,
            Discretization::Gumbel { temperature } => {
                let noise = match ctx.noise.as_mut() {
                    Some(r) => GumbelNoise::Sample(r),
                    None => GumbelNoise::Zero,
                };
                gumbel_quantize(tape, h, cb, &self.config, temperature, noise, ctx.training)?
            }
        };
        let z = out.z;
        ctx.outputs.push(out);
        Ok(z)
    }

    /// Auxiliary loss over every output recorded in `ctx`, or `None` when
    /// nothing was quantized.
    pub fn aux_loss(&self, tape: &mut Tape, ctx: &QuantCtx) -> Result<Option<Var>> {
        if ctx.outputs.iter().all(|o| o.vectors == 0) {
            return Ok(None);
        }
        combined_aux_loss(tape, &ctx.outputs, &self.config).map(Some)
    }
}

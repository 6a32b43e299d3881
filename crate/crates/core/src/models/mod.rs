//! Structured architectures with a single, configurable quantization site.
//!
//! Each model can run with discretization off, in which case it is exactly
//! its continuous counterpart, or with a [`Discretizer`] inserted at one
//! [`Site`]. Every site in a model draws from the same codebook parameter.

mod attention;
mod checkpoint;
mod gnn;
mod rim;
mod transformer;

pub use attention::{AttentionOutput, MultiHeadAttention};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use gnn::{GnnConfig, GnnModel};
pub use rim::{RimConfig, RimModel, RimStep};
pub use transformer::{TransformerBlock, TransformerConfig, TransformerModel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ParamStore;
use crate::quantizer::{Discretization, Discretizer, QuantizerConfig};

/// Where a model discretizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    /// The aggregated result of communication (edge sum, attention output).
    CommunicationResult,
    /// What is sent into communication (individual edge messages, the
    /// module states that are attended over).
    CommunicationInput,
    /// The change a recurrent module applies to its own state.
    RecurrentUpdate,
    /// The raw per-step input.
    RawInput,
}

impl Site {
    pub const ALL: [Site; 4] = [
        Site::CommunicationResult,
        Site::CommunicationInput,
        Site::RecurrentUpdate,
        Site::RawInput,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Site::CommunicationResult => "communication_result",
            Site::CommunicationInput => "communication_input",
            Site::RecurrentUpdate => "recurrent_update",
            Site::RawInput => "raw_input",
        }
    }

    pub fn parse(s: &str) -> Result<Site> {
        Site::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown site `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Gnn,
    Transformer,
    Rim,
}

impl Architecture {
    pub fn supports(self, site: Site) -> bool {
        match self {
            Architecture::Gnn => matches!(site, Site::CommunicationResult | Site::CommunicationInput),
            Architecture::Transformer => site == Site::CommunicationResult,
            Architecture::Rim => true,
        }
    }
}

/// Checks that `site` exists on `arch`.
pub fn ablation_site(arch: Architecture, site: Site) -> Result<Site> {
    if arch.supports(site) {
        Ok(site)
    } else {
        Err(Error::config(format!(
            "site `{}` is not available on the {arch:?} architecture",
            site.name()
        )))
    }
}

/// Quantizer settings a model turns into a [`QuantizerConfig`] once it knows
/// the message dimension at its site.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSettings {
    pub codebook_size: usize,
    pub heads: usize,
    pub beta: f64,
    pub codebook_loss_weight: f64,
    pub method: Discretization,
}

impl QuantizerSettings {
    pub fn vq(codebook_size: usize, heads: usize) -> Self {
        QuantizerSettings {
            codebook_size,
            heads,
            beta: QuantizerConfig::DEFAULT_BETA,
            codebook_loss_weight: 1.0,
            method: Discretization::Vq,
        }
    }

    pub fn config_for(&self, dim: usize) -> Result<QuantizerConfig> {
        QuantizerConfig::new(self.codebook_size, self.heads, dim)?
            .with_beta(self.beta)?
            .with_codebook_loss_weight(self.codebook_loss_weight)
    }

    pub(crate) fn build(&self, store: &mut ParamStore, dim: usize) -> Result<Discretizer> {
        Discretizer::new(store, self.config_for(dim)?, self.method)
    }
}

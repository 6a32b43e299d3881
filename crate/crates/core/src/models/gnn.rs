use serde::{Deserialize, Serialize};

use super::{ablation_site, Architecture, QuantizerSettings, Site};
use crate::error::{Error, Result};
use crate::numerics::{Activation, Mlp, ParamStore, Tape, Var};
use crate::quantizer::{Discretizer, QuantCtx};
use crate::seed::{self, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    /// Width of the raw per-object features fed to the encoder.
    pub object_features: usize,
    pub node_dim: usize,
    pub action_dim: usize,
    /// Edge message width `m`.
    pub message_dim: usize,
    pub hidden: usize,
    pub quantizer: Option<QuantizerSettings>,
    pub site: Site,
}

impl GnnConfig {
    pub fn new(object_features: usize, action_dim: usize) -> Self {
        GnnConfig {
            object_features,
            node_dim: 4,
            action_dim,
            message_dim: 16,
            hidden: 32,
            quantizer: None,
            site: Site::CommunicationResult,
        }
    }

    pub fn with_quantizer(mut self, settings: QuantizerSettings) -> Self {
        self.quantizer = Some(settings);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if [self.object_features, self.node_dim, self.action_dim, self.message_dim, self.hidden].contains(&0) {
            return Err(Error::config("GNN sizes must be positive"));
        }
        ablation_site(Architecture::Gnn, self.site)?;
        if let Some(q) = &self.quantizer {
            q.config_for(self.message_dim)?;
        }
        Ok(())
    }
}

/// Object encoder followed by one round of fully connected message passing.
///
/// `Δζ_i = f_node(ζ_i, a_i, q(Σ_{j≠i} f_edge(ζ_i, ζ_j)))`, with the quantizer
/// either on the sum (the default) or on every edge message before summing.
#[derive(Clone, Debug)]
pub struct GnnModel {
    pub config: GnnConfig,
    pub store: ParamStore,
    pub encoder: Mlp,
    pub f_edge: Mlp,
    pub f_node: Mlp,
    pub quantizer: Option<Discretizer>,
}

impl GnnModel {
    pub fn new(config: GnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::stream_rng(seed, Stream::Init);
        let mut store = ParamStore::new();
        let c = &config;
        let encoder = Mlp::new(&mut store, "encoder", c.object_features, c.hidden, c.node_dim, Activation::Relu, &mut rng);
        let f_edge = Mlp::new(&mut store, "edge", 2 * c.node_dim, c.hidden, c.message_dim, Activation::Relu, &mut rng);
        let f_node = Mlp::new(
            &mut store,
            "node",
            c.node_dim + c.action_dim + c.message_dim,
            c.hidden,
            c.node_dim,
            Activation::Relu,
            &mut rng,
        );
        let quantizer = c.quantizer.as_ref().map(|q| q.build(&mut store, c.message_dim)).transpose()?;
        Ok(GnnModel {
            config,
            store,
            encoder,
            f_edge,
            f_node,
            quantizer,
        })
    }

    /// Object features `[b, n, object_features]` to latents `[b, n, node_dim]`.
    pub fn encode(&self, tape: &mut Tape, objects: Var) -> Result<Var> {
        self.encoder.forward(tape, &self.store, objects)
    }

    /// `nodes` is `[b, n, node_dim]`, `actions` is `[b, n, action_dim]`;
    /// returns `Δζ` with the shape of `nodes`.
    pub fn gnn_step(&self, tape: &mut Tape, nodes: Var, actions: Var, ctx: &mut QuantCtx) -> Result<Var> {
        let (ns, as_) = (tape.shape(nodes).to_vec(), tape.shape(actions).to_vec());
        let c = &self.config;
        if ns.len() != 3 || ns[2] != c.node_dim || as_.len() != 3 || as_[..2] != ns[..2] || as_[2] != c.action_dim || ns[1] == 0 {
            return Err(Error::shape(
                "gnn_step",
                format!("nodes {ns:?} and actions {as_:?} with node_dim {} and action_dim {}", c.node_dim, c.action_dim),
            ));
        }
        let (b, n) = (ns[0], ns[1]);
        let flat = tape.reshape(nodes, &[b * n, c.node_dim])?;
        let (mut dst, mut src) = (Vec::new(), Vec::new());
        for s in 0..b {
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    dst.push(s * n + i);
                    src.push(s * n + j);
                }
            }
        }
        let zi = tape.gather_rows(flat, &dst)?;
        let zj = tape.gather_rows(flat, &src)?;
        let pair = tape.concat(&[zi, zj], 1)?;
        let mut edges = self.f_edge.forward(tape, &self.store, pair)?;
        let quantizer = self.quantizer.as_ref();
        if let (Some(q), Site::CommunicationInput) = (quantizer, c.site) {
            edges = q.apply(tape, &self.store, edges, ctx)?;
        }
        let mut agg = tape.scatter_add_rows(edges, &dst, b * n)?;
        if let (Some(q), Site::CommunicationResult) = (quantizer, c.site) {
            agg = q.apply(tape, &self.store, agg, ctx)?;
        }
        let acts = tape.reshape(actions, &[b * n, c.action_dim])?;
        let input = tape.concat(&[flat, acts, agg], 1)?;
        let delta = self.f_node.forward(tape, &self.store, input)?;
        tape.reshape(delta, &[b, n, c.node_dim])
    }

    /// `ζ + Δζ`.
    pub fn transition(&self, tape: &mut Tape, nodes: Var, actions: Var, ctx: &mut QuantCtx) -> Result<Var> {
        let delta = self.gnn_step(tape, nodes, actions, ctx)?;
        tape.add(nodes, delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use crate::quantizer::Codebook;

    #[test]
    fn single_node_quantizes_zero_message() {
        let cfg = GnnConfig::new(3, 2).with_quantizer(QuantizerSettings::vq(3, 4));
        let mut model = GnnModel::new(cfg, 1).unwrap();
        let cb = Codebook::from_rows(&[vec![1.0; 4], vec![0.1, -0.1, 0.0, 0.2], vec![-3.0; 4]]).unwrap();
        let q = model.quantizer.as_mut().unwrap();
        q.set_codebook(&mut model.store, &cb).unwrap();
        let mut tape = Tape::new();
        let nodes = tape.constant(Tensor::randn(vec![1, 1, 4], &mut crate::seed::rng_from(2)));
        let acts = tape.constant(Tensor::zeros(vec![1, 1, 2]));
        let mut ctx = QuantCtx::eval();
        model.gnn_step(&mut tape, nodes, acts, &mut ctx).unwrap();
        assert_eq!(ctx.outputs.len(), 1);
        assert_eq!(ctx.outputs[0].indices, vec![1; 4]);
    }

    #[test]
    fn transformer_only_site_rejected() {
        let mut cfg = GnnConfig::new(3, 2);
        cfg.site = Site::RecurrentUpdate;
        assert!(GnnModel::new(cfg, 0).is_err());
    }
}

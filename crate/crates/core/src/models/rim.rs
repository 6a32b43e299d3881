use serde::{Deserialize, Serialize};

use super::{ablation_site, Architecture, QuantizerSettings, Site};
use crate::error::{Error, Result};
use crate::numerics::{glorot, Linear, ParamId, ParamStore, Tape, Tensor, Var};
use crate::quantizer::{Discretizer, QuantCtx};
use crate::seed::{self, Stream};

/// Initial scale of the communication value projection relative to Glorot.
/// The residual `ẑ + h` compounds over time steps, so it starts small.
pub const COMM_VALUE_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RimConfig {
    pub input_dim: usize,
    pub outputs: usize,
    pub modules: usize,
    /// State width of each module.
    pub hidden: usize,
    pub k: usize,
    pub input_key_dim: usize,
    pub input_value_dim: usize,
    pub comm_key_dim: usize,
    /// Restrict communication keys to the modules active this step.
    pub comm_active_only: bool,
    pub quantizer: Option<QuantizerSettings>,
    pub site: Site,
}

impl RimConfig {
    /// Four modules of width 8 (32 state units in total), two active.
    pub fn new(input_dim: usize, outputs: usize) -> Self {
        RimConfig {
            input_dim,
            outputs,
            modules: 4,
            hidden: 8,
            k: 2,
            input_key_dim: 8,
            input_value_dim: 8,
            comm_key_dim: 8,
            comm_active_only: false,
            quantizer: None,
            site: Site::CommunicationResult,
        }
    }

    pub fn with_quantizer(mut self, settings: QuantizerSettings) -> Self {
        self.quantizer = Some(settings);
        self
    }

    /// Width of the vectors quantized at the configured site.
    pub fn site_dim(&self) -> usize {
        match self.site {
            Site::RawInput => self.input_dim,
            _ => self.hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.input_dim,
            self.outputs,
            self.modules,
            self.hidden,
            self.input_key_dim,
            self.input_value_dim,
            self.comm_key_dim,
        ];
        if sizes.contains(&0) {
            return Err(Error::config("RIM sizes must be positive"));
        }
        if self.k == 0 || self.k > self.modules {
            return Err(Error::config(format!(
                "k = {} active modules must lie in 1..={}",
                self.k, self.modules
            )));
        }
        ablation_site(Architecture::Rim, self.site)?;
        if let Some(q) = &self.quantizer {
            q.config_for(self.site_dim())?;
        }
        Ok(())
    }
}

/// Intermediate values of one step.
#[derive(Clone, Debug)]
pub struct RimStep {
    /// `ẑ`: states after the recurrent update, before communication.
    pub hat: Var,
    /// `z^{t+1}`.
    pub next: Var,
    /// Communication result `h` (after quantization when that site is on).
    pub communication: Var,
    /// Module-major activity flags, entry `module * batch + sample`.
    pub active: Vec<bool>,
    /// Input attention `[M, b, 2]` over (input, null).
    pub input_attention: Var,
    /// Communication attention `[b, M, M]`.
    pub comm_attention: Var,
}

#[derive(Clone, Debug)]
struct Gru {
    wx: ParamId,
    bx: ParamId,
    wh: ParamId,
    bh: ParamId,
}

/// Recurrent independent mechanisms: `M` GRU modules of which the `k` that
/// attend most to the input update each step, followed by attention over
/// all module states.
///
/// States are laid out `[M, b, hidden]`.
#[derive(Clone, Debug)]
pub struct RimModel {
    pub config: RimConfig,
    pub store: ParamStore,
    in_query: ParamId,
    in_key: Linear,
    in_value: Linear,
    gru: Gru,
    comm_query: ParamId,
    comm_key: ParamId,
    comm_value: ParamId,
    pub readout: Linear,
    pub quantizer: Option<Discretizer>,
}

impl RimModel {
    pub fn new(config: RimConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::stream_rng(seed, Stream::Init);
        let mut store = ParamStore::new();
        let c = &config;
        let (m, h) = (c.modules, c.hidden);
        let in_query = store.add(
            "input_attention.query",
            glorot(vec![m, h, c.input_key_dim], h, c.input_key_dim, &mut rng),
        );
        let in_key = Linear::new(&mut store, "input_attention.key", c.input_dim, c.input_key_dim, &mut rng);
        let in_value = Linear::new(&mut store, "input_attention.value", c.input_dim, c.input_value_dim, &mut rng);
        let lim = 1.0 / (h as f64).sqrt();
        let gru = Gru {
            wx: store.add("gru.wx", Tensor::uniform(vec![m, c.input_value_dim, 3 * h], -lim, lim, &mut rng)),
            bx: store.add("gru.bx", Tensor::uniform(vec![m, 1, 3 * h], -lim, lim, &mut rng)),
            wh: store.add("gru.wh", Tensor::uniform(vec![m, h, 3 * h], -lim, lim, &mut rng)),
            bh: store.add("gru.bh", Tensor::uniform(vec![m, 1, 3 * h], -lim, lim, &mut rng)),
        };
        let mut comm = |name: &str, out: usize| store.add(name, glorot(vec![m, h, out], h, out, &mut rng));
        let comm_query = comm("communication.query", c.comm_key_dim);
        let comm_key = comm("communication.key", c.comm_key_dim);
        let comm_value = comm("communication.value", h);
        let small = store.value(comm_value).map(|v| v * COMM_VALUE_SCALE);
        store.set_value(comm_value, small)?;
        let readout = Linear::new(&mut store, "readout", m * h, c.outputs, &mut rng);
        let quantizer = c.quantizer.as_ref().map(|q| q.build(&mut store, c.site_dim())).transpose()?;
        Ok(RimModel {
            config,
            store,
            in_query,
            in_key,
            in_value,
            gru,
            comm_query,
            comm_key,
            comm_value,
            readout,
            quantizer,
        })
    }

    pub fn initial_state(&self, tape: &mut Tape, batch: usize) -> Var {
        tape.constant(Tensor::zeros(vec![self.config.modules, batch, self.config.hidden]))
    }

    fn quantize(&self, tape: &mut Tape, x: Var, site: Site, ctx: &mut QuantCtx) -> Result<Var> {
        match &self.quantizer {
            Some(q) if self.config.site == site => q.apply(tape, &self.store, x, ctx),
            _ => Ok(x),
        }
    }

    /// Indices of the `k` modules with the largest input attention for each
    /// sample; ties go to the lower module index.
    fn top_k(&self, att_x: &Tensor, batch: usize) -> Vec<bool> {
        let m = self.config.modules;
        let mut active = vec![false; m * batch];
        for b in 0..batch {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&i, &j| att_x.data()[j * batch + b].total_cmp(&att_x.data()[i * batch + b]).then(i.cmp(&j)));
            for &i in &order[..self.config.k] {
                active[i * batch + b] = true;
            }
        }
        active
    }

    /// One step from `state` (`[M, b, hidden]`) on input `x` (`[b, input_dim]`).
    pub fn rim_step(&self, tape: &mut Tape, state: Var, x: Var, ctx: &mut QuantCtx) -> Result<RimStep> {
        let c = &self.config;
        let (m, hd) = (c.modules, c.hidden);
        let ss = tape.shape(state).to_vec();
        let xs = tape.shape(x).to_vec();
        if ss.len() != 3 || ss[0] != m || ss[2] != hd || xs != [ss[1], c.input_dim] {
            return Err(Error::shape(
                "rim_step",
                format!("state {ss:?} and input {xs:?} for {m} modules of {hd}, input {}", c.input_dim),
            ));
        }
        let b = ss[1];
        let store = &self.store;
        let x = self.quantize(tape, x, Site::RawInput, ctx)?;

        // Input attention against the pair (x, 0).
        let query_w = tape.param(store, self.in_query);
        let q = tape.matmul(state, query_w)?;
        let kx = self.in_key.forward(tape, store, x)?;
        let knull = tape.param(store, self.in_key.bias);
        let sx = tape.mul(q, kx)?;
        let sx = tape.sum_axis(sx, 2)?;
        let sn = tape.mul(q, knull)?;
        let sn = tape.sum_axis(sn, 2)?;
        let scores = tape.concat(&[sx, sn], 2)?;
        let scores = tape.scale(scores, 1.0 / (c.input_key_dim as f64).sqrt());
        let input_attention = tape.softmax(scores)?;
        let ax = tape.narrow(input_attention, 2, 0, 1)?;
        let an = tape.narrow(input_attention, 2, 1, 1)?;
        let vx = self.in_value.forward(tape, store, x)?;
        let vnull = tape.param(store, self.in_value.bias);
        let ux = tape.mul(ax, vx)?;
        let un = tape.mul(an, vnull)?;
        let read = tape.add(ux, un)?;
        let active = self.top_k(tape.value(ax), b);

        // GRU update of every module; inactive ones are discarded below.
        let gx = {
            let w = tape.param(store, self.gru.wx);
            let bias = tape.param(store, self.gru.bx);
            let g = tape.matmul(read, w)?;
            tape.add(g, bias)?
        };
        let gh = {
            let w = tape.param(store, self.gru.wh);
            let bias = tape.param(store, self.gru.bh);
            let g = tape.matmul(state, w)?;
            tape.add(g, bias)?
        };
        let gxs = tape.split(gx, 2, &[hd, hd, hd])?;
        let ghs = tape.split(gh, 2, &[hd, hd, hd])?;
        let r = tape.add(gxs[0], ghs[0])?;
        let r = tape.sigmoid(r);
        let u = tape.add(gxs[1], ghs[1])?;
        let u = tape.sigmoid(u);
        let rn = tape.mul(r, ghs[2])?;
        let n = tape.add(gxs[2], rn)?;
        let n = tape.tanh(n);
        let keep = tape.sub(state, n)?;
        let keep = tape.mul(u, keep)?;
        let updated = tape.add(n, keep)?;
        let mask: Vec<bool> = active.iter().flat_map(|&a| std::iter::repeat_n(a, hd)).collect();
        let mut hat = tape.select(&mask, updated, state)?;

        if self.quantizer.is_some() && c.site == Site::RecurrentUpdate {
            let rows: Vec<usize> = (0..m * b).filter(|&r| active[r]).collect();
            let delta = tape.sub(hat, state)?;
            let delta = tape.reshape(delta, &[m * b, hd])?;
            let delta = tape.gather_rows(delta, &rows)?;
            let delta = self.quantize(tape, delta, Site::RecurrentUpdate, ctx)?;
            let delta = tape.scatter_add_rows(delta, &rows, m * b)?;
            let delta = tape.reshape(delta, &[m, b, hd])?;
            hat = tape.add(state, delta)?;
        }

        // Communication: every module attends over all module states.
        let sent = if c.site == Site::CommunicationInput {
            let flat = tape.reshape(hat, &[m * b, hd])?;
            let flat = self.quantize(tape, flat, Site::CommunicationInput, ctx)?;
            tape.reshape(flat, &[m, b, hd])?
        } else {
            hat
        };
        let project = |tape: &mut Tape, w: ParamId| -> Result<Var> {
            let w = tape.param(store, w);
            let p = tape.matmul(sent, w)?;
            tape.permute(p, &[1, 0, 2])
        };
        let cq = project(tape, self.comm_query)?;
        let ck = project(tape, self.comm_key)?;
        let cv = project(tape, self.comm_value)?;
        let ckt = tape.permute(ck, &[0, 2, 1])?;
        let cs = tape.matmul(cq, ckt)?;
        let mut cs = tape.scale(cs, 1.0 / (c.comm_key_dim as f64).sqrt());
        if c.comm_active_only {
            let mut bias = vec![0.0; b * m * m];
            for s in 0..b {
                for i in 0..m {
                    for j in 0..m {
                        if !active[j * b + s] {
                            bias[(s * m + i) * m + j] = f64::NEG_INFINITY;
                        }
                    }
                }
            }
            let bias = tape.constant(Tensor::new(vec![b, m, m], bias)?);
            cs = tape.add(cs, bias)?;
        }
        let comm_attention = tape.softmax(cs)?;
        let h = tape.matmul(comm_attention, cv)?;
        let h = tape.permute(h, &[1, 0, 2])?;
        let communication = if c.site == Site::CommunicationResult {
            let flat = tape.reshape(h, &[m * b, hd])?;
            let flat = self.quantize(tape, flat, Site::CommunicationResult, ctx)?;
            tape.reshape(flat, &[m, b, hd])?
        } else {
            h
        };
        let next = tape.add(hat, communication)?;
        Ok(RimStep {
            hat,
            next,
            communication,
            active,
            input_attention,
            comm_attention,
        })
    }

    /// Runs `inputs` (`[b, t, input_dim]`) from the zero state and reads out
    /// `[b, outputs]` from the concatenated final module states.
    pub fn forward(&self, tape: &mut Tape, inputs: &Tensor, ctx: &mut QuantCtx) -> Result<Var> {
        let s = inputs.shape();
        if s.len() != 3 || s[2] != self.config.input_dim {
            return Err(Error::shape(
                "rim",
                format!("inputs {s:?}, expected [b, t, {}]", self.config.input_dim),
            ));
        }
        let (b, t, d) = (s[0], s[1], s[2]);
        let mut state = self.initial_state(tape, b);
        for step in 0..t {
            let mut xt = Vec::with_capacity(b * d);
            for sample in 0..b {
                let off = (sample * t + step) * d;
                xt.extend_from_slice(&inputs.data()[off..off + d]);
            }
            let x = tape.constant(Tensor::new(vec![b, d], xt)?);
            state = self.rim_step(tape, state, x, ctx)?.next;
        }
        self.readout_from(tape, state)
    }

    pub fn readout_from(&self, tape: &mut Tape, state: Var) -> Result<Var> {
        let (m, hd) = (self.config.modules, self.config.hidden);
        let b = tape.shape(state)[1];
        let flat = tape.permute(state, &[1, 0, 2])?;
        let flat = tape.reshape(flat, &[b, m * hd])?;
        self.readout.forward(tape, &self.store, flat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    fn step(cfg: RimConfig) -> (Tape, RimStep, Var) {
        let model = RimModel::new(cfg, 11).unwrap();
        let mut tape = Tape::new();
        let state = tape.constant(Tensor::randn(vec![model.config.modules, 3, model.config.hidden], &mut rng_from(1)));
        let x = tape.constant(Tensor::randn(vec![3, model.config.input_dim], &mut rng_from(2)));
        let out = model.rim_step(&mut tape, state, x, &mut QuantCtx::eval()).unwrap();
        (tape, out, state)
    }

    #[test]
    fn exactly_k_active() {
        let (_, out, _) = step(RimConfig::new(2, 1));
        for s in 0..3 {
            assert_eq!((0..4).filter(|&i| out.active[i * 3 + s]).count(), 2);
        }
        let mut cfg = RimConfig::new(2, 1);
        cfg.k = 4;
        let (_, out, _) = step(cfg);
        assert!(out.active.iter().all(|&a| a));
    }

    #[test]
    fn inactive_modules_copy_state() {
        let (tape, out, state) = step(RimConfig::new(2, 1));
        let (hat, z) = (tape.value(out.hat), tape.value(state));
        for (r, &a) in out.active.iter().enumerate() {
            if !a {
                assert_eq!(&hat.data()[r * 8..(r + 1) * 8], &z.data()[r * 8..(r + 1) * 8]);
            }
        }
    }

    #[test]
    fn k_above_m_rejected() {
        let mut cfg = RimConfig::new(2, 1);
        cfg.k = 5;
        assert!(RimModel::new(cfg, 0).is_err());
    }

    #[test]
    fn attention_rows_normalized() {
        let (tape, out, _) = step(RimConfig::new(2, 1));
        for t in [tape.value(out.input_attention), tape.value(out.comm_attention)] {
            let w = *t.shape().last().unwrap();
            for row in t.data().chunks(w) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

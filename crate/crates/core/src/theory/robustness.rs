use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{glorot, Linear, Optimizer, ParamId, ParamStore, Tape, Tensor, Var};
use crate::quantizer::{Discretization, Discretizer, QuantCtx, QuantizerConfig, DEFAULT_ITERS, WARMUP_VECTORS};
use crate::seed::{self, Stream};
use crate::tasks::rank_next_state;

/// Settings of the distractor-robustness experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessConfig {
    pub dim: usize,
    pub train_distractors: usize,
    pub test_distractors: usize,
    pub quantize: bool,
    pub codebook_size: usize,
    pub heads: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub test_samples: usize,
}

impl RobustnessConfig {
    pub fn new(train_distractors: usize, test_distractors: usize, quantize: bool) -> Self {
        RobustnessConfig {
            dim: 4,
            train_distractors,
            test_distractors,
            quantize,
            codebook_size: 16,
            heads: 1,
            steps: 400,
            batch: 32,
            lr: 1e-2,
            test_samples: 500,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessResult {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

struct Retriever {
    store: ParamStore,
    query: ParamId,
    key: ParamId,
    value: ParamId,
    readout: Linear,
    quantizer: Option<Discretizer>,
}

impl Retriever {
    /// `items` is `[b, n, dim]`; returns the readout `[b, dim]`.
    fn forward(&self, tape: &mut Tape, items: Var, ctx: &mut QuantCtx) -> Result<Var> {
        let s = tape.shape(items).to_vec();
        let (b, n, d) = (s[0], s[1], s[2]);
        let wk = tape.param(&self.store, self.key);
        let keys = tape.matmul(items, wk)?;
        let q = tape.param(&self.store, self.query);
        let scores = tape.matmul(keys, q)?;
        let scores = tape.reshape(scores, &[b, 1, n])?;
        let weights = tape.softmax(scores)?;
        let wv = tape.param(&self.store, self.value);
        let values = tape.matmul(items, wv)?;
        let out = tape.matmul(weights, values)?;
        let mut out = tape.reshape(out, &[b, d])?;
        if let Some(qz) = &self.quantizer {
            out = qz.apply(tape, &self.store, out, ctx)?;
        }
        self.readout.forward(tape, &self.store, out)
    }
}

/// A batch of item sets: the fixed target at a random slot among
/// `distractors` fresh standard Gaussian vectors.
fn batch<R: Rng + ?Sized>(target: &[f64], distractors: usize, b: usize, rng: &mut R) -> (Tensor, Vec<usize>) {
    let (d, n) = (target.len(), distractors + 1);
    let mut items = Tensor::randn(vec![b, n, d], rng).into_data();
    let slots: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
    for (i, &slot) in slots.iter().enumerate() {
        let off = (i * n + slot) * d;
        items[off..off + d].copy_from_slice(target);
    }
    (Tensor::new(vec![b, n, d], items).expect("consistent"), slots)
}

/// Retrieval accuracy: the readout counts as correct when the nearest item
/// to it is the target (equal distances count against it).
fn accuracy(model: &Retriever, target: &[f64], distractors: usize, samples: usize, rng: &mut seed::Rng) -> Result<f64> {
    let (items, slots) = batch(target, distractors, samples, rng);
    let mut tape = Tape::new();
    let x = tape.constant(items.clone());
    let out = model.forward(&mut tape, x, &mut QuantCtx::eval())?;
    let pred = tape.value(out);
    let (n, d) = (distractors + 1, target.len());
    let mut correct = 0;
    for (i, &slot) in slots.iter().enumerate() {
        let cands: Vec<Vec<f64>> = (0..n).map(|j| items.data()[(i * n + j) * d..(i * n + j + 1) * d].to_vec()).collect();
        if rank_next_state(pred.row(i), &cands, slot)? == 1 {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples as f64)
}

/// Trains a single attention read-out to retrieve a fixed Gaussian target
/// among `train_distractors` distractors, then measures retrieval accuracy
/// with `test_distractors` fresh ones.
///
/// With quantization on, the attention output is discretized before the
/// readout. The first half of training runs with the quantizer as identity
/// while pre-quantization outputs are collected; the codebook is then
/// fitted by k-means and trained by gradient descent for the second half.
pub fn attention_robustness(config: &RobustnessConfig, seed: u64) -> Result<RobustnessResult> {
    let c = config;
    if c.dim == 0 || c.batch == 0 || c.test_samples == 0 {
        return Err(Error::config("robustness experiment sizes must be positive"));
    }
    let mut data = seed::stream_rng(seed, Stream::Data);
    let target: Vec<f64> = Tensor::randn(vec![c.dim], &mut data).into_data();
    let mut init = seed::stream_rng(seed, Stream::Init);
    let mut store = ParamStore::new();
    let query = store.add("query", glorot(vec![c.dim, 1], c.dim, 1, &mut init));
    let key = store.add("key", glorot(vec![c.dim, c.dim], c.dim, c.dim, &mut init));
    let value = store.add("value", glorot(vec![c.dim, c.dim], c.dim, c.dim, &mut init));
    let readout = Linear::new(&mut store, "readout", c.dim, c.dim, &mut init);
    let quantizer = if c.quantize {
        let qc = QuantizerConfig::new(c.codebook_size, c.heads, c.dim)?;
        Some(Discretizer::new(&mut store, qc, Discretization::Vq)?)
    } else {
        None
    };
    let mut model = Retriever {
        store,
        query,
        key,
        value,
        readout,
        quantizer,
    };

    let mut opt = Optimizer::adam(c.lr);
    let target_t = Tensor::new(vec![c.batch, c.dim], target.repeat(c.batch))?;
    let mut warm: Vec<Tensor> = Vec::new();
    let switch = c.steps / 2;
    for step in 0..c.steps {
        if let Some(q) = model.quantizer.as_mut() {
            if step == switch && !warm.is_empty() {
                q.init_from_messages(&mut model.store, &warm, DEFAULT_ITERS, &mut init)?;
            }
        }
        let (items, _) = batch(&target, c.train_distractors, c.batch, &mut data);
        let mut tape = Tape::new();
        let x = tape.constant(items);
        let mut ctx = QuantCtx::training(None);
        ctx.warmup = Some(Vec::new());
        let out = model.forward(&mut tape, x, &mut ctx)?;
        let t = tape.constant(target_t.clone());
        let mut loss = tape.mse(out, t)?;
        if let Some(q) = &model.quantizer {
            if let Some(aux) = q.aux_loss(&mut tape, &ctx)? {
                loss = tape.add(loss, aux)?;
            }
        }
        if let Some(buf) = ctx.warmup.take() {
            if step >= switch.saturating_sub(WARMUP_VECTORS.div_ceil(c.batch)) {
                warm.extend(buf);
            }
        }
        tape.backward(loss, &mut model.store)?;
        let frozen: Vec<ParamId> = model
            .quantizer
            .as_ref()
            .filter(|q| !q.is_initialized())
            .map(|q| vec![q.codebook])
            .unwrap_or_default();
        opt.step_except(&mut model.store, &frozen)?;
    }
    if model.quantizer.as_ref().is_some_and(|q| !q.is_initialized()) {
        let mut tape = Tape::new();
        let (items, _) = batch(&target, c.train_distractors, WARMUP_VECTORS, &mut data);
        let x = tape.constant(items);
        let mut ctx = QuantCtx::warmup();
        model.forward(&mut tape, x, &mut ctx)?;
        let warm = ctx.warmup.unwrap_or_default();
        let q = model.quantizer.as_mut().expect("checked");
        q.init_from_messages(&mut model.store, &warm, DEFAULT_ITERS, &mut init)?;
    }
    let mut eval = seed::stream_rng(seed, Stream::Evaluation);
    Ok(RobustnessResult {
        train_accuracy: accuracy(&model, &target, c.train_distractors, c.test_samples, &mut eval)?,
        test_accuracy: accuracy(&model, &target, c.test_distractors, c.test_samples, &mut eval)?,
    })
}

use log::debug;
use rand::seq::SliceRandom;
use rand::Rng;

use super::record::EpochRow;
use crate::error::Result;
use crate::numerics::{Method, Optimizer, ParamId, ParamStore, Tape, Tensor, Var};
use crate::quantizer::{codebook_stats, mean_losses, CodebookStats, Discretization, Discretizer, QuantCtx, DEFAULT_ITERS};
use crate::seed::{self, derive_seed, Stream};

/// A model bound to its training split.
pub(crate) trait Trainable {
    fn parts_mut(&mut self) -> (&mut ParamStore, Option<&mut Discretizer>);
    fn quantizer(&self) -> Option<&Discretizer>;
    fn train_len(&self) -> usize;
    /// Mean task loss over the training rows in `idx`.
    fn task_loss(&self, tape: &mut Tape, idx: &[usize], ctx: &mut QuantCtx) -> Result<Var>;
}

pub(crate) struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: Method,
    pub warmup_vectors: usize,
    pub clip_norm: f64,
}

/// Evaluation context: plain lookup once the codebook exists, identity
/// before that.
pub(crate) fn eval_ctx(q: Option<&Discretizer>) -> QuantCtx {
    match q {
        Some(q) if !q.is_initialized() => QuantCtx::warmup(),
        _ => QuantCtx::eval(),
    }
}

struct Accum {
    task: f64,
    codebook: f64,
    commitment: f64,
    total: f64,
    batches: usize,
    stats: Option<CodebookStats>,
}

impl Accum {
    fn new() -> Self {
        Accum {
            task: 0.0,
            codebook: 0.0,
            commitment: 0.0,
            total: 0.0,
            batches: 0,
            stats: None,
        }
    }

    fn add(&mut self, tape: &Tape, task: Var, total: Var, ctx: &QuantCtx, q: Option<&Discretizer>) {
        let (cb, cm) = mean_losses(tape, &ctx.outputs);
        self.task += tape.value(task).data()[0];
        self.total += tape.value(total).data()[0];
        self.codebook += cb;
        self.commitment += cm;
        self.batches += 1;
        if let Some(q) = q.filter(|_| ctx.outputs.iter().any(|o| o.vectors > 0)) {
            let s = codebook_stats(&ctx.outputs, q.config.codebook_size);
            match &mut self.stats {
                Some(acc) => acc.merge(&s),
                None => self.stats = Some(s),
            }
        }
    }

    fn row(&self, epoch: usize) -> EpochRow {
        let n = self.batches.max(1) as f64;
        EpochRow {
            epoch,
            task_loss: self.task / n,
            codebook_loss: self.codebook / n,
            commitment_loss: self.commitment / n,
            total_loss: self.total / n,
            perplexity: self.stats.as_ref().map(|s| s.perplexity),
        }
    }
}

fn batches(n: usize, size: usize, order: &[usize]) -> impl Iterator<Item = &[usize]> {
    order[..n].chunks(size.max(1))
}

fn loss_with_aux(tape: &mut Tape, task: Var, q: Option<&Discretizer>, ctx: &QuantCtx) -> Result<Var> {
    match q.map(|q| q.aux_loss(tape, ctx)).transpose()?.flatten() {
        Some(aux) => tape.add(task, aux),
        None => Ok(task),
    }
}

/// Runs the quantizer lifecycle and the optimization loop.
///
/// Row 0 evaluates the untrained model on the training split. While the
/// codebook is uninitialized the quantizer passes messages through and
/// records them; once `warmup_vectors` have been seen the codebook is fitted
/// by k-means and joins the optimizer. Until then it is frozen.
pub(crate) fn train<T: Trainable>(model: &mut T, s: &TrainSettings, seed: u64) -> Result<Vec<EpochRow>> {
    let n = model.train_len();
    let all: Vec<usize> = (0..n).collect();
    let mut acc = Accum::new();
    for idx in batches(n, s.batch_size, &all) {
        let mut tape = Tape::new();
        let mut ctx = eval_ctx(model.quantizer());
        let task = model.task_loss(&mut tape, idx, &mut ctx)?;
        let total = loss_with_aux(&mut tape, task, model.quantizer(), &ctx)?;
        acc.add(&tape, task, total, &ctx, model.quantizer());
    }
    let mut rows = vec![acc.row(0)];

    let mut opt = Optimizer::new(s.optimizer, s.lr);
    let mut rng = seed::stream_rng(seed, Stream::Training);
    let mut kmeans_rng = seed::rng_from(derive_seed(seed, Stream::Init.id()));
    let mut warm: Vec<Tensor> = Vec::new();
    let mut order = all;
    for epoch in 1..=s.epochs {
        order.shuffle(&mut rng);
        let mut acc = Accum::new();
        for idx in batches(n, s.batch_size, &order) {
            let gumbel = matches!(model.quantizer().map(|q| q.method), Some(Discretization::Gumbel { .. }));
            let noise = gumbel.then(|| seed::rng_from(rng.random()));
            let mut ctx = QuantCtx::training(noise);
            let warming = model.quantizer().is_some_and(|q| !q.is_initialized());
            if warming {
                ctx.warmup = Some(Vec::new());
            }
            let mut tape = Tape::new();
            let task = model.task_loss(&mut tape, idx, &mut ctx)?;
            let total = loss_with_aux(&mut tape, task, model.quantizer(), &ctx)?;
            acc.add(&tape, task, total, &ctx, model.quantizer());
            let frozen: Vec<ParamId> = model.quantizer().filter(|_| warming).map(|q| vec![q.codebook]).unwrap_or_default();
            let (store, quantizer) = model.parts_mut();
            tape.backward(total, store)?;
            if s.clip_norm > 0.0 {
                store.clip_grad_norm(s.clip_norm);
            }
            opt.step_except(store, &frozen)?;
            if let (Some(q), Some(buf)) = (quantizer, ctx.warmup.take()) {
                warm.extend(buf);
                let seen: usize = warm.iter().map(|t| t.len() / q.config.dim).sum();
                if seen >= s.warmup_vectors {
                    debug!("fitting codebook on {seen} warmup vectors after epoch {epoch}");
                    q.init_from_messages(store, &warm, DEFAULT_ITERS, &mut kmeans_rng)?;
                    warm.clear();
                }
            }
        }
        rows.push(acc.row(epoch));
    }
    let (store, quantizer) = model.parts_mut();
    if let Some(q) = quantizer.filter(|q| !q.is_initialized() && !warm.is_empty()) {
        q.init_from_messages(store, &warm, DEFAULT_ITERS, &mut kmeans_rng)?;
    }
    Ok(rows)
}

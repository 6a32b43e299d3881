use std::collections::HashMap;
use std::time::Instant;

use super::config::{ExperimentConfig, ExperimentKind, MethodName};
use super::record::{EpochRow, RunRecord, SplitMetrics, Table, VERSION};
use super::train::{eval_ctx, train, Trainable, TrainSettings};
use crate::error::{Error, Result};
use crate::models::{ablation_site, Architecture, GnnConfig, GnnModel, RimConfig, RimModel, Site, TransformerConfig, TransformerModel};
use crate::numerics::{ParamStore, Tape, Tensor, Var};
use crate::quantizer::{Discretizer, QuantCtx};
use crate::seed::derive_seed;
use crate::tasks::{
    action_features, gen_adding_with, gen_gridworld, gen_majority, hits_at_k, mrr, object_features, rank_next_state,
    AddingConfig, AddingSamples, GridWorldConfig, MajorityConfig, MajoritySamples, Position, Transition,
};
use crate::theory::{
    attention_robustness, bound_with_discretization, bound_without_discretization, gaussian_variance_sweep,
    ln_appendix_bound_with, ln_appendix_bound_without, verify_hoeffding, RobustnessConfig,
};

const EVAL_BATCH: usize = 256;

fn settings(cfg: &ExperimentConfig) -> TrainSettings {
    TrainSettings {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        lr: cfg.learning_rate(),
        optimizer: cfg.train.optimizer,
        warmup_vectors: cfg.train.warmup_vectors,
        clip_norm: cfg.train.clip_norm,
    }
}

fn check_train(cfg: &ExperimentConfig) -> Result<()> {
    let t = &cfg.train;
    if t.batch_size == 0 {
        return Err(Error::config("train.batch_size must be positive"));
    }
    if !(cfg.learning_rate() > 0.0) || !cfg.learning_rate().is_finite() {
        return Err(Error::config("train.lr must be positive"));
    }
    if !(t.clip_norm >= 0.0) {
        return Err(Error::config("train.clip_norm must be non-negative"));
    }
    Ok(())
}

macro_rules! trainable_parts {
    () => {
        fn parts_mut(&mut self) -> (&mut ParamStore, Option<&mut Discretizer>) {
            (&mut self.model.store, self.model.quantizer.as_mut())
        }
        fn quantizer(&self) -> Option<&Discretizer> {
            self.model.quantizer.as_ref()
        }
    };
}

/// Mean of per-batch means weighted by batch size.
fn batched_mean(n: usize, mut f: impl FnMut(&[usize]) -> Result<f64>) -> Result<f64> {
    let idx: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_BATCH) {
        total += f(chunk)? * chunk.len() as f64;
    }
    Ok(total / n.max(1) as f64)
}

// ---------------------------------------------------------------- adding

struct AddingRun {
    model: RimModel,
    data: AddingSamples,
}

impl Trainable for AddingRun {
    trainable_parts!();

    fn train_len(&self) -> usize {
        self.data.samples.len()
    }

    fn task_loss(&self, tape: &mut Tape, idx: &[usize], ctx: &mut QuantCtx) -> Result<Var> {
        let (x, y) = self.data.batch(idx);
        let out = self.model.forward(tape, &x, ctx)?;
        let y = tape.constant(y);
        tape.mse(out, y)
    }
}

impl AddingRun {
    fn mse(&self, data: &AddingSamples) -> Result<f64> {
        batched_mean(data.samples.len(), |idx| {
            let (x, y) = data.batch(idx);
            let mut tape = Tape::new();
            let out = self.model.forward(&mut tape, &x, &mut eval_ctx(self.model.quantizer.as_ref()))?;
            let y = tape.constant(y);
            let l = tape.mse(out, y)?;
            Ok(tape.value(l).data()[0])
        })
    }
}

fn adding_split(cfg: &ExperimentConfig, gap: usize, count: usize, index: u64) -> Result<AddingSamples> {
    let t = &cfg.task;
    let c = AddingConfig {
        seq_len: t.seq_len,
        gap_len: gap,
        max_value: t.max_value,
    };
    gen_adding_with(&c, count, derive_seed(cfg.seed, index))
}

fn rim_config(cfg: &ExperimentConfig, site: Site, discretize: bool, method: MethodName) -> Result<RimConfig> {
    let m = &cfg.model;
    let mut rc = RimConfig::new(2, 1);
    rc.modules = m.modules;
    rc.hidden = m.hidden;
    rc.k = m.k;
    rc.site = ablation_site(Architecture::Rim, site)?;
    let mut section = m.clone();
    section.discretize = discretize;
    section.method = method;
    rc.quantizer = section.quantizer(0.25);
    rc.validate()?;
    Ok(rc)
}

/// Trains and evaluates one RIM on the adding task.
fn adding_variant(cfg: &ExperimentConfig, rc: RimConfig) -> Result<(Vec<EpochRow>, Vec<SplitMetrics>)> {
    check_train(cfg)?;
    let t = &cfg.task;
    let mut run = AddingRun {
        model: RimModel::new(rc, cfg.seed)?,
        data: adding_split(cfg, t.train_gap, t.train_samples, 0)?,
    };
    let epochs = train(&mut run, &settings(cfg), cfg.seed)?;
    let mut splits = Vec::new();
    for (name, gap, index) in [("iid", t.train_gap, 1), ("val", t.val_gap, 2), ("ood", t.test_gap, 3)] {
        let data = adding_split(cfg, gap, t.test_samples, index)?;
        splits.push(SplitMetrics::new(name, &[("mse", run.mse(&data)?)]));
    }
    Ok((epochs, splits))
}

fn run_adding(cfg: &ExperimentConfig) -> Result<(Vec<EpochRow>, Vec<SplitMetrics>)> {
    let m = &cfg.model;
    adding_variant(cfg, rim_config(cfg, m.site, m.discretize, m.method)?)
}

/// Ablation variants on the adding task: the continuous model, every
/// quantization site with VQ, and the Gumbel-Softmax variant at the
/// communication result.
pub const ABLATION_VARIANTS: [(&str, Option<(Site, MethodName)>); 6] = [
    ("continuous", None),
    ("communication_result", Some((Site::CommunicationResult, MethodName::Vq))),
    ("communication_input", Some((Site::CommunicationInput, MethodName::Vq))),
    ("recurrent_update", Some((Site::RecurrentUpdate, MethodName::Vq))),
    ("raw_input", Some((Site::RawInput, MethodName::Vq))),
    ("communication_result_gumbel", Some((Site::CommunicationResult, MethodName::Gumbel))),
];

fn run_ablation(cfg: &ExperimentConfig) -> Result<(Vec<EpochRow>, Vec<SplitMetrics>)> {
    let mut splits = Vec::new();
    for (name, variant) in ABLATION_VARIANTS {
        let rc = match variant {
            None => rim_config(cfg, Site::CommunicationResult, false, MethodName::Vq)?,
            Some((site, method)) => rim_config(cfg, site, true, method)?,
        };
        let (_, s) = adding_variant(cfg, rc)?;
        splits.extend(s.into_iter().map(|m| SplitMetrics {
            split: format!("{name}/{}", m.split),
            metrics: m.metrics,
        }));
    }
    Ok((Vec::new(), splits))
}

// ------------------------------------------------------------- gridworld

struct GridRun {
    model: GnnModel,
    grid: usize,
    margin: f64,
    data: Vec<Transition>,
}

fn objects_tensor(grid: usize, states: &[&[Position]]) -> Result<Tensor> {
    let n = states.first().map_or(0, |s| s.len());
    let data: Vec<f64> = states.iter().flat_map(|s| s.iter().flat_map(|&p| object_features(grid, p))).collect();
    Tensor::new(vec![states.len(), n, 2 * grid], data)
}

fn actions_tensor(rows: &[&Transition]) -> Result<Tensor> {
    let n = rows.first().map_or(0, |t| t.actions.len());
    let data: Vec<f64> = rows.iter().flat_map(|t| t.actions.iter().flat_map(|&a| action_features(a))).collect();
    Tensor::new(vec![rows.len(), n, 4], data)
}

impl GridRun {
    /// Per-sample energy `‖a − b‖² / (2σ²)` with `σ = 0.5`, shape `[b, 1]`.
    fn energy(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
        let s = tape.shape(a).to_vec();
        let d = tape.sub(a, b)?;
        let sq = tape.mul(d, d)?;
        let flat = tape.reshape(sq, &[s[0], s[1] * s[2]])?;
        let e = tape.sum_axis(flat, 1)?;
        Ok(tape.scale(e, 2.0))
    }

    /// Latent state and predicted next latent state for `rows`.
    fn predict(&self, tape: &mut Tape, rows: &[&Transition], ctx: &mut QuantCtx) -> Result<(Var, Var)> {
        let states: Vec<&[Position]> = rows.iter().map(|t| t.state.as_slice()).collect();
        let x = tape.constant(objects_tensor(self.grid, &states)?);
        let z = self.model.encode(tape, x)?;
        let a = tape.constant(actions_tensor(rows)?);
        let pred = self.model.transition(tape, z, a, ctx)?;
        Ok((z, pred))
    }

    fn encode_states(&self, states: &[&[Position]]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(objects_tensor(self.grid, states)?);
        let z = self.model.encode(&mut tape, x)?;
        Ok(tape.value(z).clone())
    }

    /// HITS@1 and MRR of predicted next states against every distinct next
    /// state of the split.
    fn ranking(&self, data: &[Transition]) -> Result<(f64, f64)> {
        let mut ids: HashMap<&[Position], usize> = HashMap::new();
        let mut unique: Vec<&[Position]> = Vec::new();
        let truth: Vec<usize> = data
            .iter()
            .map(|t| {
                *ids.entry(t.next.as_slice()).or_insert_with(|| {
                    unique.push(t.next.as_slice());
                    unique.len() - 1
                })
            })
            .collect();
        let mut candidates = Vec::with_capacity(unique.len());
        for chunk in unique.chunks(EVAL_BATCH) {
            let z = self.encode_states(chunk)?;
            candidates.extend((0..chunk.len()).map(|i| z.data()[i * z.len() / chunk.len()..(i + 1) * z.len() / chunk.len()].to_vec()));
        }
        let mut ranks = Vec::with_capacity(data.len());
        for (ci, chunk) in data.chunks(EVAL_BATCH).enumerate() {
            let rows: Vec<&Transition> = chunk.iter().collect();
            let mut tape = Tape::new();
            let (_, pred) = self.predict(&mut tape, &rows, &mut eval_ctx(self.model.quantizer.as_ref()))?;
            let p = tape.value(pred);
            let w = p.len() / rows.len();
            for i in 0..rows.len() {
                ranks.push(rank_next_state(&p.data()[i * w..(i + 1) * w], &candidates, truth[ci * EVAL_BATCH + i])?);
            }
        }
        Ok((hits_at_k(&ranks, 1)?, mrr(&ranks)?))
    }
}

impl Trainable for GridRun {
    trainable_parts!();

    fn train_len(&self) -> usize {
        self.data.len()
    }

    /// Contrastive hinge loss; the negative for row `i` is the state of the
    /// next row in the batch.
    fn task_loss(&self, tape: &mut Tape, idx: &[usize], ctx: &mut QuantCtx) -> Result<Var> {
        let rows: Vec<&Transition> = idx.iter().map(|&i| &self.data[i]).collect();
        let (z, pred) = self.predict(tape, &rows, ctx)?;
        let next: Vec<&[Position]> = rows.iter().map(|t| t.next.as_slice()).collect();
        let x1 = tape.constant(objects_tensor(self.grid, &next)?);
        let z1 = self.model.encode(tape, x1)?;
        let pos = Self::energy(tape, pred, z1)?;
        let b = rows.len();
        let s = tape.shape(z).to_vec();
        let flat = tape.reshape(z, &[b, s[1] * s[2]])?;
        let shifted: Vec<usize> = (0..b).map(|i| (i + 1) % b).collect();
        let neg = tape.gather_rows(flat, &shifted)?;
        let neg = tape.reshape(neg, &s)?;
        let neg = Self::energy(tape, neg, z1)?;
        let hinge = tape.affine(neg, -1.0, self.margin);
        let hinge = tape.relu(hinge);
        let total = tape.add(pos, hinge)?;
        Ok(tape.mean(total))
    }
}

fn grid_split(cfg: &ExperimentConfig, objects: usize, episodes: usize, index: u64) -> Result<Vec<Transition>> {
    let t = &cfg.task;
    let gc = GridWorldConfig {
        num_objects: objects,
        grid_size: t.grid_size,
        steps: t.steps,
        episodes,
    };
    gen_gridworld(&gc, derive_seed(cfg.seed, index))
}

fn run_gridworld(cfg: &ExperimentConfig) -> Result<(Vec<EpochRow>, Vec<SplitMetrics>)> {
    check_train(cfg)?;
    let (m, t) = (&cfg.model, &cfg.task);
    let mut gc = GnnConfig::new(2 * t.grid_size, 4);
    gc.node_dim = m.node_dim;
    gc.message_dim = m.message_dim;
    gc.site = m.site;
    gc.quantizer = m.quantizer(1.0);
    gc.validate()?;
    let mut run = GridRun {
        model: GnnModel::new(gc, cfg.seed)?,
        grid: t.grid_size,
        margin: cfg.train.margin,
        data: grid_split(cfg, t.train_objects, t.episodes, 0)?,
    };
    let epochs = train(&mut run, &settings(cfg), cfg.seed)?;
    let mut splits = Vec::new();
    let mut tests = vec![("iid".to_string(), t.train_objects)];
    tests.extend(t.ood_objects.iter().map(|&n| (format!("ood{n}"), n)));
    for (i, (name, n)) in tests.into_iter().enumerate() {
        let data = grid_split(cfg, n, t.test_episodes, 1 + i as u64)?;
        let (h1, r) = run.ranking(&data)?;
        splits.push(SplitMetrics::new(name, &[("hits_at_1", h1), ("mrr", r)]));
    }
    Ok((epochs, splits))
}

// ------------------------------------------------------- transformer toy

struct ToyRun {
    model: TransformerModel,
    data: MajoritySamples,
}

impl Trainable for ToyRun {
    trainable_parts!();

    fn train_len(&self) -> usize {
        self.data.len()
    }

    fn task_loss(&self, tape: &mut Tape, idx: &[usize], ctx: &mut QuantCtx) -> Result<Var> {
        let (x, y) = self.data.batch(idx);
        let x = tape.constant(x);
        let logits = self.model.forward(tape, x, ctx)?;
        tape.cross_entropy(logits, &y)
    }
}

impl ToyRun {
    fn evaluate(&self, data: &MajoritySamples) -> Result<(f64, f64)> {
        let mut correct = 0usize;
        let loss = batched_mean(data.len(), |idx| {
            let (x, y) = data.batch(idx);
            let mut tape = Tape::new();
            let x = tape.constant(x);
            let logits = self.model.forward(&mut tape, x, &mut eval_ctx(self.model.quantizer.as_ref()))?;
            let l = tape.cross_entropy(logits, &y)?;
            let v = tape.value(logits);
            for (i, &label) in y.iter().enumerate() {
                let row = v.row(i);
                let best = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).unwrap_or(0);
                correct += (best == label) as usize;
            }
            Ok(tape.value(l).data()[0])
        })?;
        Ok((loss, correct as f64 / data.len().max(1) as f64))
    }
}

fn run_transformer_toy(cfg: &ExperimentConfig) -> Result<(Vec<EpochRow>, Vec<SplitMetrics>)> {
    check_train(cfg)?;
    let (m, t) = (&cfg.model, &cfg.task);
    ablation_site(Architecture::Transformer, m.site)?;
    let mut tc = TransformerConfig::new(t.vocab, t.vocab, m.blocks);
    tc.dim = m.dim;
    tc.heads = m.attention_heads;
    if let Some(q) = m.quantizer(1.0) {
        tc = tc.with_quantizer(q);
    }
    tc.validate()?;
    let split = |len: usize, count: usize, index: u64| {
        gen_majority(&MajorityConfig { seq_len: len, vocab: t.vocab }, count, derive_seed(cfg.seed, index))
    };
    let mut run = ToyRun {
        model: TransformerModel::new(tc, cfg.seed)?,
        data: split(t.train_len, t.train_samples, 0)?,
    };
    let epochs = train(&mut run, &settings(cfg), cfg.seed)?;
    let mut splits = Vec::new();
    for (name, len, index) in [("iid", t.train_len, 1), ("ood", t.test_len, 2)] {
        let (loss, acc) = run.evaluate(&split(len, t.test_samples, index)?)?;
        splits.push(SplitMetrics::new(name, &[("loss", loss), ("accuracy", acc)]));
    }
    Ok((epochs, splits))
}

// --------------------------------------------------------------- theory

fn run_gaussian(cfg: &ExperimentConfig) -> Result<(Vec<SplitMetrics>, Table)> {
    let th = &cfg.theory;
    let sweep = gaussian_variance_sweep(th.m, &th.l_values, &th.g_values, th.samples, th.variance_trials, cfg.seed)?;
    let table = Table {
        columns: ["l", "g", "trial", "variance"].map(String::from).to_vec(),
        rows: sweep.rows.iter().map(|r| vec![r.l as f64, r.g as f64, r.trial as f64, r.variance]).collect(),
    };
    let mut splits = Vec::new();
    for (name, quantize) in [("continuous", false), ("discretized", true)] {
        let rc = RobustnessConfig::new(th.train_distractors, th.test_distractors, quantize);
        let r = attention_robustness(&rc, cfg.seed)?;
        splits.push(SplitMetrics::new(
            name,
            &[("train_accuracy", r.train_accuracy), ("test_accuracy", r.test_accuracy)],
        ));
    }
    Ok((splits, table))
}

fn run_bounds(cfg: &ExperimentConfig) -> Result<Vec<SplitMetrics>> {
    let p = &cfg.theory.bounds;
    Ok(vec![SplitMetrics::new(
        "bounds",
        &[
            ("with_discretization", bound_with_discretization(p)?),
            ("without_discretization", bound_without_discretization(p)?),
            ("ln_appendix_with", ln_appendix_bound_with(p)?),
            ("ln_appendix_without", ln_appendix_bound_without(p)?),
        ],
    )])
}

fn whole(x: f64, name: &str) -> Result<usize> {
    if x >= 1.0 && x.fract() == 0.0 && x < 1e9 {
        Ok(x as usize)
    } else {
        Err(Error::config(format!("theory.bounds.{name} must be a positive integer here, got {x}")))
    }
}

fn run_hoeffding(cfg: &ExperimentConfig) -> Result<(Vec<SplitMetrics>, Table)> {
    let th = &cfg.theory;
    let p = &th.bounds;
    let rec = verify_hoeffding(whole(p.l, "l")?, whole(p.g, "g")?, th.d, whole(p.n, "n")?, p.delta, th.trials, cfg.seed)?;
    let n = rec.trials.len().max(1) as f64;
    let table = Table {
        columns: ["trial", "gap", "bound", "violated"].map(String::from).to_vec(),
        rows: rec.trials.iter().map(|t| vec![t.trial as f64, t.gap, t.bound, t.violated as u8 as f64]).collect(),
    };
    let bound = rec.trials.first().map_or(0.0, |t| t.bound);
    let split = SplitMetrics::new(
        "hoeffding",
        &[
            ("violation_rate", rec.violation_rate),
            ("mean_gap", rec.trials.iter().map(|t| t.gap).sum::<f64>() / n),
            ("bound", bound),
        ],
    );
    Ok((vec![split], table))
}

/// Executes one experiment.
pub fn run(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let start = Instant::now();
    let (mut epochs, mut table) = (Vec::new(), None);
    let splits = match cfg.kind {
        ExperimentKind::Adding => {
            let (e, s) = run_adding(cfg)?;
            epochs = e;
            s
        }
        ExperimentKind::Ablation => run_ablation(cfg)?.1,
        ExperimentKind::Gridworld => {
            let (e, s) = run_gridworld(cfg)?;
            epochs = e;
            s
        }
        ExperimentKind::TransformerToy => {
            let (e, s) = run_transformer_toy(cfg)?;
            epochs = e;
            s
        }
        ExperimentKind::GaussianAnalysis => {
            let (s, t) = run_gaussian(cfg)?;
            table = Some(t);
            s
        }
        ExperimentKind::Bounds => run_bounds(cfg)?,
        ExperimentKind::Hoeffding => {
            let (s, t) = run_hoeffding(cfg)?;
            table = Some(t);
            s
        }
    };
    Ok(RunRecord {
        config: cfg.clone(),
        epochs,
        splits,
        table,
        warnings: Vec::new(),
        wall_time_s: start.elapsed().as_secs_f64(),
        version: VERSION.to_string(),
    })
}

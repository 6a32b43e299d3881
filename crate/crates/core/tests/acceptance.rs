//! Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{median, oracle_push, oracle_quantize, random_instance};
use dvnc::harness::{emit, run, ExperimentConfig, ExperimentKind, Format, RunRecord};
use dvnc::numerics::{Tape, Tensor};
use dvnc::quantizer::{combined_aux_loss, quantize, Codebook, QuantizerConfig};
use dvnc::seed::rng_from;
use dvnc::tasks::{gridworld_transition, Direction, GridWorldState};
use dvnc::theory::{
    appendix_bound_with, appendix_bound_without, bound_with_discretization, bound_without_discretization,
    gaussian_variance_sweep, vector_field, verify_hoeffding, BoundInputs,
};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(start: Instant, limit: Duration, detail: String) -> Outcome {
    let took = start.elapsed();
    if took < limit {
        Ok(format!("{detail}; {:.1}s", took.as_secs_f64()))
    } else {
        Err(format!("{detail}; took {:.1}s, limit {}s", took.as_secs_f64(), limit.as_secs()))
    }
}

fn runs(kind: ExperimentKind, seeds: u64, overrides: &[(&str, &str)]) -> Result<Vec<RunRecord>, String> {
    let kv: Vec<(String, String)> = overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    let base = ExperimentConfig::new(kind).with_overrides(&kv).map_err(|e| e.to_string())?;
    (0..seeds)
        .map(|s| {
            let mut c = base.clone();
            c.seed = s;
            run(&c).map_err(|e| e.to_string())
        })
        .collect()
}

fn metric(records: &[RunRecord], split: &str, name: &str) -> Vec<f64> {
    records.iter().map(|r| r.metric(split, name).expect("metric present")).collect()
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from(2024);
    for i in 0..10_000 {
        let (l, g, d, codes, h) = random_instance(&mut rng);
        let cfg = QuantizerConfig::new(l, g, g * d).map_err(|e| e.to_string())?;
        let cb = Codebook::from_rows(&codes).map_err(|e| e.to_string())?;
        let got = cb.quantize(&h, &cfg).map_err(|e| e.to_string())?;
        let (_, want, _) = oracle_quantize(&h, &codes, g);
        ensure(got.indices == want, format!("instance {i} (L={l}, G={g}, d={d}) disagrees"))?;
    }
    within(start, Duration::from_secs(10), "10000 instances match".into())
}

fn gradient_contract() -> Outcome {
    let mut rng = rng_from(7);
    let is_zero = |t: Option<&Tensor>| t.is_none_or(|t| t.data().iter().all(|&x| x == 0.0));
    for case in 0..50 {
        let g = rng.random_range(1..=4);
        let d = rng.random_range(1..=4);
        let l = rng.random_range(1..=8);
        let cfg = QuantizerConfig::new(l, g, g * d).unwrap();
        let mut tape = Tape::new();
        let h = tape.variable(Tensor::randn(vec![rng.random_range(1..5), g * d], &mut rng));
        let cb = tape.variable(Tensor::randn(vec![l, d], &mut rng));
        let out = quantize(&mut tape, h, cb, &cfg).map_err(|e| e.to_string())?;
        let s = tape.sum(out.z);
        let grads = tape.gradients(s).unwrap();
        ensure(grads.get(h).unwrap().data().iter().all(|&x| x == 1.0), format!("case {case}: d(sum z)/dh is not all ones"))?;
        let grads = tape.gradients(out.commitment_loss).unwrap();
        ensure(is_zero(grads.get(cb)), format!("case {case}: commitment loss reaches the codebook"))?;
        let grads = tape.gradients(out.codebook_loss).unwrap();
        ensure(is_zero(grads.get(h)), format!("case {case}: codebook loss reaches h"))?;
    }
    for (name, check) in numerics::CHECKS {
        panic::catch_unwind(check).map_err(|e| format!("{name}: {}", panic_text(&e)))?;
    }
    Ok(format!("50 quantizer cases, {} finite-difference groups", numerics::CHECKS.len()))
}

fn aux_loss_example() -> Outcome {
    let mut tape = Tape::new();
    let cb = tape.constant(Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![-1.0, 0.0], vec![0.0, 2.0]]).unwrap());
    let h = tape.constant(Tensor::vector(vec![0.9, 1.2, -0.2, 0.1]));
    let cfg = QuantizerConfig::new(4, 2, 4).unwrap();
    let out = quantize(&mut tape, h, cb, &cfg).map_err(|e| e.to_string())?;
    ensure(tape.value(out.z).data() == [1.0, 1.0, 0.0, 0.0], "z differs")?;
    ensure(out.indices == [1, 0], "indices differ")?;
    let aux = combined_aux_loss(&mut tape, &[out], &cfg).map_err(|e| e.to_string())?;
    let v = tape.value(aux).item().unwrap();
    ensure((v - 0.0625).abs() < 1e-12, format!("aux loss {v}"))?;
    Ok(format!("aux loss {v}"))
}

fn hoeffding() -> Outcome {
    let start = Instant::now();
    let r = verify_hoeffding(4, 2, 2, 2000, 0.05, 200, 0).map_err(|e| e.to_string())?;
    let limit = 0.05 + 3.0 * (0.05f64 * 0.95 / 200.0).sqrt();
    let detail = format!("violation rate {} (limit {limit:.4})", r.violation_rate);
    ensure(r.violation_rate <= limit, detail.clone())?;
    within(start, Duration::from_secs(60), detail)
}

fn bounds() -> Outcome {
    let p = |g: f64, l: f64, n: f64, m: f64| BoundInputs {
        g,
        l,
        n,
        m,
        ..BoundInputs::default()
    };
    let with = bound_with_discretization(&p(15.0, 30.0, 1e4, 64.0)).unwrap();
    let without = bound_without_discretization(&p(15.0, 30.0, 1e4, 64.0)).unwrap();
    ensure((with - 0.05230).abs() < 1e-4, format!("with {with}"))?;
    ensure((without - 0.16128).abs() < 1e-4, format!("without {without}"))?;
    let mut checks = 0;
    for n in [1e2, 1e3, 1e4, 1e5] {
        for l in [2.0, 8.0, 32.0, 128.0] {
            for g in [1.0, 2.0, 4.0, 8.0] {
                let b = bound_with_discretization(&p(g, l, n, 8.0)).unwrap();
                ensure(b < bound_with_discretization(&p(2.0 * g, l, n, 8.0)).unwrap(), "not increasing in G")?;
                ensure(b < bound_with_discretization(&p(g, 2.0 * l, n, 8.0)).unwrap(), "not increasing in L")?;
                ensure(b > bound_with_discretization(&p(g, l, 10.0 * n, 8.0)).unwrap(), "not decreasing in n")?;
                checks += 3;
            }
        }
        for m in [1.0, 8.0, 64.0] {
            let b = bound_without_discretization(&p(1.0, 2.0, n, m)).unwrap();
            ensure(b < bound_without_discretization(&p(1.0, 2.0, n, 2.0 * m)).unwrap(), "not increasing in m")?;
            ensure(b > bound_without_discretization(&p(1.0, 2.0, 10.0 * n, m)).unwrap(), "not decreasing in n")?;
            checks += 2;
        }
    }
    let appendix = BoundInputs {
        zeta: 100.0,
        ..p(2.0, 4.0, 1e4, 8.0)
    };
    let (aw, awo) = (appendix_bound_with(&appendix).unwrap(), appendix_bound_without(&appendix).unwrap());
    ensure((aw - 0.19276).abs() < 1e-4 && (awo - 327.7).abs() < 0.05, format!("appendix {aw} / {awo}"))?;
    Ok(format!("with {with:.5}, without {without:.5}, {checks} monotonicity checks"))
}

fn gaussian_field_robustness() -> Outcome {
    let start = Instant::now();
    let sweep = gaussian_variance_sweep(8, &[1, 8], &[1, 2, 4, 8], 256, 20, 0).map_err(|e| e.to_string())?;
    for g in [1, 2, 4, 8] {
        ensure(sweep.mean(1, g) == Some(0.0), format!("L=1, G={g} has nonzero variance"))?;
    }
    let v: Vec<f64> = [1, 2, 4, 8].iter().map(|&g| sweep.mean(8, g).unwrap()).collect();
    ensure(v.windows(2).all(|w| w[0] < w[1]), format!("variance at L=8 not increasing in G: {v:?}"))?;

    let mut rng = rng_from(3);
    for _ in 0..20 {
        let codes: Vec<Vec<f64>> = (0..rng.random_range(1..12)).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let field = vector_field(-2.0, 2.0, 41, &Codebook::from_rows(&codes).unwrap()).map_err(|e| e.to_string())?;
        for pt in &field {
            let (z, idx, _) = oracle_quantize(&[pt.x, pt.y], &codes, 1);
            ensure(pt.code == idx[0] && pt.dx == z[0] - pt.x && pt.dy == z[1] - pt.y, "vector field off the Voronoi oracle")?;
        }
    }

    let records = runs(ExperimentKind::GaussianAnalysis, 10, &[])?;
    let cont = metric(&records, "continuous", "test_accuracy");
    let disc = metric(&records, "discretized", "test_accuracy");
    let wins = cont.iter().zip(&disc).filter(|(c, d)| d >= c).count();
    let detail = format!("variance {v:.3?}; robustness wins {wins}/10");
    ensure(wins >= 6, detail.clone())?;
    within(start, Duration::from_secs(300), detail)
}

fn baseline_reduction() -> Outcome {
    panic::catch_unwind(|| models::baseline_reduction(200)).map_err(|e| panic_text(&e))?;
    Ok("200 random instances per architecture".into())
}

/// The discretized runs are kept for the ablation, where they are the
/// communication-result VQ arm.
fn adding(cache: &mut Option<Vec<RunRecord>>) -> Outcome {
    let start = Instant::now();
    let continuous = runs(ExperimentKind::Adding, 10, &[("model.discretize", "false")])?;
    let discretized = runs(ExperimentKind::Adding, 10, &[])?;
    let (c, d) = (median(&metric(&continuous, "ood", "mse")), median(&metric(&discretized, "ood", "mse")));
    *cache = Some(discretized);
    let detail = format!("median OOD mse discretized {d:.4} vs continuous {c:.4}");
    ensure(d <= c, detail.clone())?;
    within(start, Duration::from_secs(600), detail)
}

fn gridworld() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from(11);
    let all = [Direction::Up, Direction::Down, Direction::Left, Direction::Right, Direction::None];
    for i in 0..10_000 {
        let n = rng.random_range(1..=8);
        let mut cells: Vec<(usize, usize)> = Vec::new();
        while cells.len() < n {
            let c = (rng.random_range(0..5), rng.random_range(0..5));
            if !cells.contains(&c) {
                cells.push(c);
            }
        }
        let actions: Vec<Direction> = (0..n).map(|_| all[rng.random_range(0..5)]).collect();
        let moves: Vec<(i64, i64)> = actions
            .iter()
            .map(|a| {
                let (r, c) = a.delta();
                (r as i64, c as i64)
            })
            .collect();
        let got = gridworld_transition(&GridWorldState {
            grid_size: 5,
            positions: cells.clone(),
            actions,
        })
        .map_err(|e| e.to_string())?;
        ensure(got == oracle_push(5, &cells, &moves), format!("state {i} disagrees with the duplicate rule"))?;
    }
    let common = [("model.heads", "1"), ("task.episodes", "500")];
    let base = runs(ExperimentKind::Gridworld, 5, &[&common[..], &[("model.discretize", "false")]].concat())?;
    let disc = runs(ExperimentKind::Gridworld, 5, &common)?;
    let (b, d) = (median(&metric(&base, "ood2", "hits_at_1")), median(&metric(&disc, "ood2", "hits_at_1")));
    let detail = format!("OOD-2 median HITS@1 discretized {d:.3} vs baseline {b:.3}");
    ensure(d >= b, detail.clone())?;
    within(start, Duration::from_secs(900), detail)
}

fn ablation(cache: &Option<Vec<RunRecord>>) -> Outcome {
    let Some(result) = cache else {
        return Err("adding runs unavailable".into());
    };
    let recurrent = runs(ExperimentKind::Adding, 10, &[("model.site", "\"recurrent_update\"")])?;
    let gumbel = runs(ExperimentKind::Adding, 10, &[("model.method", "\"gumbel\"")])?;
    let vq = metric(result, "ood", "mse");
    let (cr, ru) = (median(&vq), median(&metric(&recurrent, "ood", "mse")));
    let wins = vq.iter().zip(metric(&gumbel, "ood", "mse")).filter(|(v, g)| *v < g).count();
    let detail = format!("median OOD mse result {cr:.4} vs update {ru:.4}; vq beats gumbel {wins}/10");
    ensure(cr < ru && wins >= 6, detail.clone())?;
    Ok(detail)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let small = [
        ("task.train_samples", "64"),
        ("task.test_samples", "32"),
        ("train.epochs", "2"),
        ("train.warmup_vectors", "64"),
        ("task.episodes", "20"),
        ("theory.trials", "20"),
    ];
    let mut files = 0;
    for kind in [ExperimentKind::Adding, ExperimentKind::Gridworld, ExperimentKind::TransformerToy, ExperimentKind::Hoeffding] {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let records = runs(kind, 1, &small)?;
            let out = dir.path().join(format!("{}-{rep}", kind.name()));
            let written = emit(&records, kind, &out, Format::Csv).map_err(|e| e.to_string())?;
            outputs.push(written.iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>());
        }
        ensure(outputs[0] == outputs[1], format!("{} metric files differ between runs", kind.name()))?;
        files += outputs[0].len();
    }
    Ok(format!("{files} metric files identical across repeats"))
}

fn panic_text(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

fn main() -> ExitCode {
    panic::set_hook(Box::new(|_| {}));
    let mut adding_runs = None;
    let mut failed = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| Err(panic_text(&e)));
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {detail}");
            }
        }
    };
    report(1, "quantizer oracle equivalence", &mut oracle_equivalence);
    report(2, "gradient contract", &mut gradient_contract);
    report(3, "auxiliary loss example", &mut aux_loss_example);
    report(4, "concentration Monte Carlo", &mut hoeffding);
    report(5, "bound calculators", &mut bounds);
    report(6, "Gaussian, vector field and robustness", &mut gaussian_field_robustness);
    report(7, "baseline reduction", &mut baseline_reduction);
    report(8, "adding task OOD", &mut || adding(&mut adding_runs));
    report(9, "grid-world OOD", &mut gridworld);
    report(10, "ablation ordering", &mut || ablation(&adding_runs));
    report(11, "determinism", &mut determinism);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

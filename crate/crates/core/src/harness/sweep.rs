use log::warn;

use super::config::ExperimentConfig;
use super::experiments::run;
use super::record::RunRecord;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub records: Vec<RunRecord>,
    /// One message per skipped grid point.
    pub skipped: Vec<String>,
}

/// Runs `base` at every `(L, G, seed)` of the grid, in that nesting order.
///
/// Grid points whose config is rejected are skipped with a warning; the
/// warning is also kept in [`SweepResult::skipped`] and on every record.
pub fn sweep(base: &ExperimentConfig, l_values: &[usize], g_values: &[usize], seeds: &[u64]) -> Result<SweepResult> {
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for &l in l_values {
        for &g in g_values {
            for &seed in seeds {
                let mut cfg = base.clone();
                cfg.model.codebook_size = l;
                cfg.model.heads = g;
                cfg.seed = seed;
                match run(&cfg) {
                    Ok(r) => records.push(r),
                    Err(Error::Config(msg)) => {
                        let note = format!("skipped L={l} G={g} seed={seed}: {msg}");
                        warn!("{note}");
                        skipped.push(note);
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    for r in &mut records {
        r.warnings.extend(skipped.iter().cloned());
    }
    Ok(SweepResult { records, skipped })
}

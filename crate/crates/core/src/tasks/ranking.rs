use crate::error::{Error, Result};
use crate::numerics::sq_dist;

/// Fraction of ranks that are `<= k`.
pub fn hits_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    check(ranks)?;
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Mean reciprocal rank.
pub fn mrr(ranks: &[usize]) -> Result<f64> {
    check(ranks)?;
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

fn check(ranks: &[usize]) -> Result<()> {
    if ranks.is_empty() {
        return Err(Error::invalid("ranking metrics need at least one rank"));
    }
    if ranks.contains(&0) {
        return Err(Error::invalid("ranks start at 1"));
    }
    Ok(())
}

/// 1-based rank of `candidates[truth]` by squared distance to `predicted`.
/// Candidates at exactly the same distance as the true one are ranked ahead
/// of it.
pub fn rank_next_state(predicted: &[f64], candidates: &[Vec<f64>], truth: usize) -> Result<usize> {
    let t = candidates
        .get(truth)
        .ok_or_else(|| Error::invalid(format!("true index {truth} outside {} candidates", candidates.len())))?;
    if candidates.iter().any(|c| c.len() != predicted.len()) {
        return Err(Error::invalid("candidate length differs from the prediction"));
    }
    let dt = sq_dist(predicted, t);
    let ahead = candidates
        .iter()
        .enumerate()
        .filter(|&(j, c)| j != truth && sq_dist(predicted, c) <= dt)
        .count();
    Ok(ahead + 1)
}

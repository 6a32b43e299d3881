use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{glorot, ParamId, ParamStore, Tape, Var};

/// Scaled dot-product attention with `heads` heads and an output projection.
///
/// Head `i` uses columns `i·dk .. (i+1)·dk` of the query, key and value
/// projections, and the concatenated head results are mapped back to `dim`
/// by `W^O`. No biases.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub output: ParamId,
    pub heads: usize,
    pub dim: usize,
}

pub struct AttentionOutput {
    pub out: Var,
    /// Softmax weights, `[batch * heads, queries, keys]`.
    pub weights: Var,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::config(format!("attention dim {dim} not divisible by {heads} heads")));
        }
        let mut proj = |suffix: &str, rng: &mut R| store.add(format!("{name}.{suffix}"), glorot(vec![dim, dim], dim, dim, rng));
        Ok(MultiHeadAttention {
            query: proj("wq", rng),
            key: proj("wk", rng),
            value: proj("wv", rng),
            output: proj("wo", rng),
            heads,
            dim,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// `queries` is `[b, tq, dim]` and `keys`/`values` are `[b, tk, dim]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, queries: Var, keys: Var, values: Var) -> Result<AttentionOutput> {
        let (qs, ks) = (tape.shape(queries).to_vec(), tape.shape(keys).to_vec());
        if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || tape.shape(values) != ks.as_slice() || qs[2] != self.dim || ks[2] != self.dim {
            return Err(Error::shape(
                "attention",
                format!("queries {qs:?}, keys {ks:?}, values {:?} with dim {}", tape.shape(values), self.dim),
            ));
        }
        let (b, tq, tk, h, dk) = (qs[0], qs[1], ks[1], self.heads, self.head_dim());
        let split = |tape: &mut Tape, x: Var, w: ParamId, t: usize| -> Result<Var> {
            let w = tape.param(store, w);
            let p = tape.matmul(x, w)?;
            let p = tape.reshape(p, &[b, t, h, dk])?;
            let p = tape.permute(p, &[0, 2, 1, 3])?;
            tape.reshape(p, &[b * h, t, dk])
        };
        let q = split(tape, queries, self.query, tq)?;
        let k = split(tape, keys, self.key, tk)?;
        let v = split(tape, values, self.value, tk)?;
        let kt = tape.permute(k, &[0, 2, 1])?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt());
        let weights = tape.softmax(scores)?;
        let heads = tape.matmul(weights, v)?;
        let heads = tape.reshape(heads, &[b, h, tq, dk])?;
        let heads = tape.permute(heads, &[0, 2, 1, 3])?;
        let cat = tape.reshape(heads, &[b, tq, self.dim])?;
        let wo = tape.param(store, self.output);
        let out = tape.matmul(cat, wo)?;
        Ok(AttentionOutput { out, weights })
    }
}

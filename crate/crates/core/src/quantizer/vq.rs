use rand::Rng;

use super::codebook::{nearest_row, QuantizerConfig};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Quantized messages on a tape, with their auxiliary losses.
///
/// `indices` holds one code index per head, vector-major: entry
/// `v * heads + i` is head `i` of vector `v`. Both losses are already
/// averaged over heads and vectors; `vectors` records how many were averaged
/// so several outputs can be pooled.
#[derive(Clone, Debug)]
pub struct QuantizationOutput {
    pub z: Var,
    pub indices: Vec<usize>,
    pub codebook_loss: Var,
    pub commitment_loss: Var,
    pub vectors: usize,
}

fn check_shapes(tape: &Tape, h: Var, codebook: Var, config: &QuantizerConfig) -> Result<(usize, usize)> {
    let hs = tape.shape(h);
    let cs = tape.shape(codebook);
    let d = config.segment_dim();
    let m = *hs.last().unwrap_or(&0);
    if m != config.dim || cs != [config.codebook_size, d] {
        return Err(Error::shape(
            "quantize",
            format!(
                "message {hs:?} and codebook {cs:?} with L={}, G={}, m={}",
                config.codebook_size, config.heads, config.dim
            ),
        ));
    }
    let vectors = if hs.is_empty() { 0 } else { tape.value(h).len() / m };
    Ok((vectors, d))
}

/// Snaps every head of every message in `h` (last axis of length `dim`) to
/// its nearest codebook row.
///
/// The output's forward value is the concatenation of the selected rows
/// exactly. Backward copies the gradient of `z` onto `h` unchanged; the
/// codebook loss `mean ‖sg(s) − e‖²` reaches only the selected rows and the
/// commitment loss `mean ‖s − sg(e)‖²` reaches only `h`.
pub fn quantize(tape: &mut Tape, h: Var, codebook: Var, config: &QuantizerConfig) -> Result<QuantizationOutput> {
    let (vectors, d) = check_shapes(tape, h, codebook, config)?;
    let shape = tape.shape(h).to_vec();
    let heads = vectors * config.heads;
    let segs = tape.reshape(h, &[heads, d])?;
    let indices: Vec<usize> = {
        let table = tape.value(codebook).data();
        let sv = tape.value(segs);
        (0..heads).map(|r| nearest_row(table, d, sv.row(r))).collect()
    };
    snapped_output(tape, segs, codebook, indices, &shape, d, vectors)
}

fn snapped_output(
    tape: &mut Tape,
    segs: Var,
    codebook: Var,
    indices: Vec<usize>,
    shape: &[usize],
    d: usize,
    vectors: usize,
) -> Result<QuantizationOutput> {
    let codes = tape.gather_rows(codebook, &indices)?;
    let snapped = tape.straight_through(segs, codes)?;
    let z = tape.reshape(snapped, shape)?;
    let (codebook_loss, commitment_loss) = aux_losses(tape, segs, codes, d)?;
    Ok(QuantizationOutput {
        z,
        indices,
        codebook_loss,
        commitment_loss,
        vectors,
    })
}

fn aux_losses(tape: &mut Tape, segs: Var, codes: Var, d: usize) -> Result<(Var, Var)> {
    // mse averages over heads * d elements; scaling by d leaves the mean
    // squared distance per head.
    let frozen_segs = tape.stop_gradient(segs);
    let cb = tape.mse(frozen_segs, codes)?;
    let codebook_loss = tape.scale(cb, d as f64);
    let frozen_codes = tape.stop_gradient(codes);
    let cm = tape.mse(segs, frozen_codes)?;
    let commitment_loss = tape.scale(cm, d as f64);
    Ok((codebook_loss, commitment_loss))
}

/// `weight · mean(codebook) + β · mean(commitment)`, averaging over every
/// quantized vector in `outputs`.
pub fn combined_aux_loss(tape: &mut Tape, outputs: &[QuantizationOutput], config: &QuantizerConfig) -> Result<Var> {
    let total: usize = outputs.iter().map(|o| o.vectors).sum();
    if outputs.is_empty() || total == 0 {
        return Err(Error::invalid("combined auxiliary loss needs at least one quantized vector"));
    }
    let mut acc: Option<Var> = None;
    for o in outputs {
        let share = o.vectors as f64 / total as f64;
        let cb = tape.scale(o.codebook_loss, config.codebook_loss_weight * share);
        let cm = tape.scale(o.commitment_loss, config.beta * share);
        let term = tape.add(cb, cm)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.expect("non-empty"))
}

/// Mean codebook and commitment loss values across `outputs`.
pub fn mean_losses(tape: &Tape, outputs: &[QuantizationOutput]) -> (f64, f64) {
    let total: usize = outputs.iter().map(|o| o.vectors).sum();
    if total == 0 {
        return (0.0, 0.0);
    }
    outputs.iter().fold((0.0, 0.0), |(a, b), o| {
        let w = o.vectors as f64 / total as f64;
        (
            a + w * tape.value(o.codebook_loss).data()[0],
            b + w * tape.value(o.commitment_loss).data()[0],
        )
    })
}

/// Source of Gumbel(0, 1) perturbations for [`gumbel_quantize`].
pub enum GumbelNoise<'a, R: Rng + ?Sized> {
    /// All-zero noise: the sample is the plain softmax / argmax.
    Zero,
    Sample(&'a mut R),
}

/// Standard Gumbel draw `−ln(−ln u)`.
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random::<f64>().clamp(1e-300, 1.0 - f64::EPSILON);
    -(-u.ln()).ln()
}

/// Gumbel-Softmax relaxation of the nearest-code lookup.
///
/// Per head the logits are the negative squared distances to each code. In
/// training mode the head becomes `softmax((logits + g) / temperature)·E`,
/// a convex combination of codes, and `indices` records the argmax of the
/// perturbed logits. In evaluation mode the head is the hard nearest code
/// (straight-through, as in [`quantize`]). Auxiliary losses are taken against
/// the indexed code in both modes.
pub fn gumbel_quantize<R: Rng + ?Sized>(
    tape: &mut Tape,
    h: Var,
    codebook: Var,
    config: &QuantizerConfig,
    temperature: f64,
    noise: GumbelNoise<'_, R>,
    training: bool,
) -> Result<QuantizationOutput> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    if !training {
        return quantize(tape, h, codebook, config);
    }
    let (vectors, d) = check_shapes(tape, h, codebook, config)?;
    let shape = tape.shape(h).to_vec();
    let heads = vectors * config.heads;
    let l = config.codebook_size;
    let segs = tape.reshape(h, &[heads, d])?;
    let dist = tape.squared_distance(segs, codebook)?;
    let mut perturb = vec![0.0; heads * l];
    if let GumbelNoise::Sample(rng) = noise {
        for g in perturb.iter_mut() {
            *g = gumbel(rng);
        }
    }
    let indices: Vec<usize> = tape
        .value(dist)
        .data()
        .chunks(l)
        .zip(perturb.chunks(l))
        .map(|(row, g)| {
            let mut best = 0;
            for j in 1..l {
                if g[j] - row[j] > g[best] - row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    let noise_var = tape.constant(Tensor::from_parts(vec![heads, l], perturb));
    let logits = tape.scale(dist, -1.0);
    let noisy = tape.add(logits, noise_var)?;
    let tempered = tape.scale(noisy, 1.0 / temperature);
    let weights = tape.softmax(tempered)?;
    let mixed = tape.matmul(weights, codebook)?;
    let z = tape.reshape(mixed, &shape)?;
    let codes = tape.gather_rows(codebook, &indices)?;
    let (codebook_loss, commitment_loss) = aux_losses(tape, segs, codes, d)?;
    Ok(QuantizationOutput {
        z,
        indices,
        codebook_loss,
        commitment_loss,
        vectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ParamStore;
    use crate::seed::rng_from;

    fn example() -> (Tape, Var, Var, QuantizerConfig) {
        let mut tape = Tape::new();
        let cb = tape.variable(
            Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![-1.0, 0.0], vec![0.0, 2.0]]).unwrap(),
        );
        let h = tape.variable(Tensor::vector(vec![0.9, 1.2, -0.2, 0.1]));
        (tape, h, cb, QuantizerConfig::new(4, 2, 4).unwrap())
    }

    #[test]
    fn worked_example_on_tape() {
        let (mut tape, h, cb, cfg) = example();
        let out = quantize(&mut tape, h, cb, &cfg).unwrap();
        assert_eq!(tape.value(out.z).data(), &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(tape.shape(out.z), &[4]);
        assert_eq!(out.indices, vec![1, 0]);
        let aux = combined_aux_loss(&mut tape, &[out], &cfg).unwrap();
        assert!((tape.value(aux).item().unwrap() - 0.0625).abs() < 1e-12);
    }

    #[test]
    fn single_code() {
        let mut tape = Tape::new();
        let cb = tape.variable(Tensor::from_rows(&[vec![0.5, -0.5]]).unwrap());
        let h = tape.variable(Tensor::vector(vec![3.0, 1.0, -2.0, 7.0]));
        let cfg = QuantizerConfig::new(1, 2, 4).unwrap();
        let out = quantize(&mut tape, h, cb, &cfg).unwrap();
        assert_eq!(tape.value(out.z).data(), &[0.5, -0.5, 0.5, -0.5]);
        assert_eq!(out.indices, vec![0, 0]);
    }

    #[test]
    fn fixed_point_has_zero_loss() {
        let (mut tape, _, cb, cfg) = example();
        let h = tape.variable(Tensor::vector(vec![-1.0, 0.0, 0.0, 2.0]));
        let out = quantize(&mut tape, h, cb, &cfg).unwrap();
        assert_eq!(tape.value(out.z), tape.value(h));
        assert_eq!(tape.value(out.codebook_loss).item().unwrap(), 0.0);
        assert_eq!(tape.value(out.commitment_loss).item().unwrap(), 0.0);
        let aux = combined_aux_loss(&mut tape, &[out], &cfg).unwrap();
        assert_eq!(tape.value(aux).item().unwrap(), 0.0);
    }

    #[test]
    fn empty_output_set_rejected() {
        let (mut tape, _, _, cfg) = example();
        assert!(combined_aux_loss(&mut tape, &[], &cfg).is_err());
    }

    #[test]
    fn gradient_routing() {
        let (mut tape, h, cb, cfg) = example();
        let out = quantize(&mut tape, h, cb, &cfg).unwrap();
        let s = tape.sum(out.z);
        let g = tape.gradients(s).unwrap();
        assert_eq!(g.get(h).unwrap().data(), &[1.0; 4]);
        assert!(g.get(cb).is_none());

        let g = tape.gradients(out.codebook_loss).unwrap();
        assert!(g.get(h).is_none());
        assert!(g.get(cb).unwrap().data().iter().any(|&x| x != 0.0));

        let g = tape.gradients(out.commitment_loss).unwrap();
        assert!(g.get(cb).is_none());
        assert!(g.get(h).unwrap().data().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn gumbel_cold_limit_matches_argmax() {
        let (mut tape, h, cb, cfg) = example();
        let hard = quantize(&mut tape, h, cb, &cfg).unwrap();
        let soft = gumbel_quantize::<crate::seed::Rng>(&mut tape, h, cb, &cfg, 1e-3, GumbelNoise::Zero, true).unwrap();
        assert_eq!(hard.indices, soft.indices);
        assert!(tape.value(hard.z).max_abs_diff(tape.value(soft.z)) < 1e-9);
        assert!(gumbel_quantize::<crate::seed::Rng>(&mut tape, h, cb, &cfg, 0.0, GumbelNoise::Zero, true).is_err());
    }

    #[test]
    fn gumbel_single_code_is_exact() {
        let mut tape = Tape::new();
        let cb = tape.variable(Tensor::from_rows(&[vec![0.25, -1.5]]).unwrap());
        let h = tape.variable(Tensor::vector(vec![3.0, 1.0]));
        let cfg = QuantizerConfig::new(1, 1, 2).unwrap();
        let mut rng = rng_from(4);
        let out = gumbel_quantize(&mut tape, h, cb, &cfg, 5.0, GumbelNoise::Sample(&mut rng), true).unwrap();
        assert_eq!(tape.value(out.z).data(), &[0.25, -1.5]);
    }

    #[test]
    fn codebook_param_is_shared() {
        let mut store = ParamStore::new();
        let id = store.add("codebook", Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap());
        let cfg = QuantizerConfig::new(2, 1, 1).unwrap();
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![0.2]));
        let b = tape.constant(Tensor::vector(vec![0.9]));
        let cb1 = tape.param(&store, id);
        let o1 = quantize(&mut tape, a, cb1, &cfg).unwrap();
        let cb2 = tape.param(&store, id);
        let o2 = quantize(&mut tape, b, cb2, &cfg).unwrap();
        assert_eq!(cb1, cb2);
        let aux = combined_aux_loss(&mut tape, &[o1, o2], &cfg).unwrap();
        tape.backward(aux, &mut store).unwrap();
        // both rows pulled: row 0 toward 0.2, row 1 toward 0.9
        let g = store.grad(id).unwrap().data().to_vec();
        assert!(g[0] < 0.0 && g[1] > 0.0, "{g:?}");
    }
}

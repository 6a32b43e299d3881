//! Small building blocks shared by the structured models.

use rand::Rng;

use super::param::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Uniform Glorot initialisation for a `fan_in × fan_out` weight.
pub fn glorot<R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    Tensor::uniform(shape, -limit, limit, rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
        }
    }
}

/// `y = x·W + b` on the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            glorot(vec![inputs, outputs], inputs, outputs, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![1, outputs]));
        Linear {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    /// Accepts `[n, inputs]` or `[b, n, inputs]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }
}

/// Two-layer perceptron `act(x·W1 + b1)·W2 + b2`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
    pub activation: Activation,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        hidden: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        Mlp {
            hidden: Linear::new(store, &format!("{name}.0"), inputs, hidden, rng),
            out: Linear::new(store, &format!("{name}.1"), hidden, outputs, rng),
            activation,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, store, x)?;
        let h = self.activation.apply(tape, h);
        self.out.forward(tape, store, h)
    }
}

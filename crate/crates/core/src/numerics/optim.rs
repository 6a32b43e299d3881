use serde::{Deserialize, Serialize};

use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub method: Method,
    pub lr: f64,
    pub hyper: AdamHyper,
    steps: u64,
}

impl Optimizer {
    pub fn new(method: Method, lr: f64) -> Self {
        Optimizer {
            method,
            lr,
            hyper: AdamHyper::default(),
            steps: 0,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(Method::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(Method::Adam, lr)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every parameter. Every parameter must carry a
    /// gradient; gradients are cleared afterwards.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        self.step_except(store, &[])
    }

    /// Like [`Optimizer::step`], but leaves the `frozen` parameters
    /// untouched (their gradients, if any, are still cleared).
    pub fn step_except(&mut self, store: &mut ParamStore, frozen: &[ParamId]) -> Result<()> {
        if let Some((_, p)) = store.iter().find(|(id, p)| p.grad.is_none() && !frozen.contains(id)) {
            return Err(Error::MissingGradient(p.name.clone()));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let AdamHyper { beta1, beta2, eps } = self.hyper;
        let (bc1, bc2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let Some(grad) = p.grad.take() else { continue };
            if frozen.contains(&ParamId(i)) {
                continue;
            }
            let g = grad.data();
            match self.method {
                Method::Sgd => {
                    for (w, gi) in p.value.data_mut().iter_mut().zip(g) {
                        *w -= self.lr * gi;
                    }
                }
                Method::Adam => {
                    let m = p.first_moment.data_mut();
                    let v = p.second_moment.data_mut();
                    for (((w, gi), mi), vi) in p
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(g)
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *w -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn scalar_store(v: f64, g: f64) -> (ParamStore, crate::numerics::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::scalar(v));
        s.accumulate_grad(id, &Tensor::scalar(g));
        (s, id)
    }

    #[test]
    fn sgd_step() {
        let (mut s, id) = scalar_store(0.0, 1.0);
        Optimizer::sgd(0.1).step(&mut s).unwrap();
        assert!((s.value(id).item().unwrap() + 0.1).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_about_lr() {
        let (mut s, id) = scalar_store(0.0, 1.0);
        Optimizer::adam(0.01).step(&mut s).unwrap();
        let x = s.value(id).item().unwrap();
        assert!((x + 0.01).abs() < 1e-9, "{x}");
    }

    #[test]
    fn two_sgd_steps_match_one_doubled() {
        let (mut a, ia) = scalar_store(1.0, 0.5);
        let mut opt = Optimizer::sgd(0.1);
        opt.step(&mut a).unwrap();
        a.accumulate_grad(ia, &Tensor::scalar(0.5));
        opt.step(&mut a).unwrap();
        let (mut b, ib) = scalar_store(1.0, 0.5);
        Optimizer::sgd(0.2).step(&mut b).unwrap();
        let (x, y) = (a.value(ia).item().unwrap(), b.value(ib).item().unwrap());
        assert!((x - y).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_rejected() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(vec![2]));
        let err = Optimizer::sgd(0.1).step(&mut s).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(ref n) if n == "w"));
    }
}

//! Generalization bounds with and without discretization.
//!
//! The appendix forms contain `L^G` and `(4√m)^m`, which overflow `f64`
//! long before the inputs become unreasonable. They are evaluated through
//! their logarithms ([`ln_appendix_bound_with`] and friends); the
//! linear-scale functions return `f64::INFINITY` when the value itself is
//! not representable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundInputs {
    pub g: f64,
    pub l: f64,
    pub n: f64,
    pub delta: f64,
    pub alpha: f64,
    pub m: f64,
    pub r_h: f64,
    pub varsigma_bar: f64,
    pub zeta: f64,
    pub c_j: f64,
    pub l_d: f64,
    pub rho: f64,
}

impl Default for BoundInputs {
    fn default() -> Self {
        BoundInputs {
            g: 1.0,
            l: 2.0,
            n: 1.0,
            delta: 0.05,
            alpha: 1.0,
            m: 1.0,
            r_h: 0.0,
            varsigma_bar: 0.0,
            zeta: 0.0,
            c_j: 1.0,
            l_d: 1.0,
            rho: 1.0,
        }
    }
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("G", self.g),
            ("alpha", self.alpha),
            ("m", self.m),
            ("R_H", self.r_h),
            ("varsigma_bar", self.varsigma_bar),
            ("zeta", self.zeta),
            ("C_J", self.c_j),
            ("L_d", self.l_d),
        ];
        if let Some((name, v)) = nonneg.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config(format!("{name} must be finite and non-negative, got {v}")));
        }
        if !(self.n > 0.0 && self.n.is_finite()) {
            return Err(Error::config(format!("n must be positive, got {}", self.n)));
        }
        if !(self.l >= 1.0 && self.l.is_finite()) {
            return Err(Error::config(format!("L must be at least 1, got {}", self.l)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.rho >= 1.0 && self.rho.fract() == 0.0) {
            return Err(Error::config(format!("rho must be an integer >= 1, got {}", self.rho)));
        }
        Ok(())
    }
}

/// `α·sqrt((G ln L + ln(2/δ)) / (2n))`.
pub fn bound_with_discretization(p: &BoundInputs) -> Result<f64> {
    p.validate()?;
    Ok(p.alpha * ((p.g * p.l.ln() + (2.0 / p.delta).ln()) / (2.0 * p.n)).sqrt())
}

/// `α·sqrt((m ln(4·sqrt(n·m)) + ln(2/δ)) / (2n)) + ς̄·R_H / sqrt(n)`.
pub fn bound_without_discretization(p: &BoundInputs) -> Result<f64> {
    p.validate()?;
    let complexity = p.m * (4.0 * (p.n * p.m).sqrt()).ln();
    let first = p.alpha * ((complexity + (2.0 / p.delta).ln()) / (2.0 * p.n)).sqrt();
    Ok(first + p.varsigma_bar * p.r_h / p.n.sqrt())
}

/// Log of a sum of positive terms given by their logarithms; `-inf` when
/// every term is zero.
fn log_sum_exp(logs: &[f64]) -> f64 {
    let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY || mx == f64::INFINITY {
        return mx;
    }
    mx + logs.iter().map(|l| (l - mx).exp()).sum::<f64>().ln()
}

fn ln_or_neg_inf(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Log of `C_J·sqrt(S / n)` for a sum `S` given as log terms.
fn ln_root_term(c_j: f64, ln_terms: &[f64], n: f64) -> f64 {
    ln_or_neg_inf(c_j) + 0.5 * (log_sum_exp(ln_terms) - n.ln())
}

fn ln_lipschitz_term(p: &BoundInputs) -> f64 {
    // sqrt(L_d^{2/ρ} / n)
    if p.l_d == 0.0 {
        f64::NEG_INFINITY
    } else {
        (p.l_d.ln() / p.rho) - 0.5 * p.n.ln()
    }
}

/// Log of `C_J·sqrt((4L^G + 2Lm + 2ζ + 2 ln(1/δ))/n) + sqrt(L_d^{2/ρ}/n)`.
pub fn ln_appendix_bound_with(p: &BoundInputs) -> Result<f64> {
    p.validate()?;
    let terms = [
        4f64.ln() + p.g * p.l.ln(),
        ln_or_neg_inf(2.0 * p.l * p.m),
        ln_or_neg_inf(2.0 * p.zeta),
        ln_or_neg_inf(2.0 * (1.0 / p.delta).ln()),
    ];
    Ok(log_sum_exp(&[ln_root_term(p.c_j, &terms, p.n), ln_lipschitz_term(p)]))
}

/// Log of `C_J·sqrt((4(4√m)^m + 2ζ + 2 ln(1/δ))/n) + sqrt(L_d^{2/ρ}/n) + ς·R_H`.
pub fn ln_appendix_bound_without(p: &BoundInputs) -> Result<f64> {
    p.validate()?;
    let cover = if p.m == 0.0 {
        4f64.ln()
    } else {
        4f64.ln() + p.m * (4.0 * p.m.sqrt()).ln()
    };
    let terms = [cover, ln_or_neg_inf(2.0 * p.zeta), ln_or_neg_inf(2.0 * (1.0 / p.delta).ln())];
    Ok(log_sum_exp(&[
        ln_root_term(p.c_j, &terms, p.n),
        ln_lipschitz_term(p),
        ln_or_neg_inf(p.varsigma_bar * p.r_h),
    ]))
}

/// Linear-scale value of [`ln_appendix_bound_with`]; `+inf` if unrepresentable.
pub fn appendix_bound_with(p: &BoundInputs) -> Result<f64> {
    ln_appendix_bound_with(p).map(f64::exp)
}

/// Linear-scale value of [`ln_appendix_bound_without`]; `+inf` if unrepresentable.
pub fn appendix_bound_without(p: &BoundInputs) -> Result<f64> {
    ln_appendix_bound_without(p).map(f64::exp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> BoundInputs {
        BoundInputs {
            g: 15.0,
            l: 30.0,
            n: 1e4,
            m: 64.0,
            ..Default::default()
        }
    }

    #[test]
    fn scaling_and_degenerate_cases() {
        let p = base();
        let b = bound_with_discretization(&p).unwrap();
        let b4 = bound_with_discretization(&BoundInputs { n: 4e4, ..p }).unwrap();
        assert!((b / b4 - 2.0).abs() < 1e-12);
        let g0 = bound_with_discretization(&BoundInputs { g: 0.0, ..p }).unwrap();
        assert!((g0 - (40f64.ln() / 2e4).sqrt()).abs() < 1e-15);
        let l1 = bound_with_discretization(&BoundInputs { l: 1.0, ..p }).unwrap();
        assert_eq!(l1, g0);
    }

    #[test]
    fn lipschitz_term_vanishes() {
        let p = BoundInputs {
            l: 4.0,
            g: 2.0,
            m: 8.0,
            zeta: 100.0,
            n: 1e4,
            l_d: 0.0,
            ..Default::default()
        };
        let v = appendix_bound_with(&p).unwrap();
        let direct = ((64.0 + 64.0 + 200.0 + 2.0 * 20f64.ln()) / 1e4).sqrt();
        assert!((v - direct).abs() < 1e-14);
    }

    #[test]
    fn overflow_becomes_infinity() {
        let p = BoundInputs {
            m: 1e6,
            n: 10.0,
            ..Default::default()
        };
        assert!(ln_appendix_bound_without(&p).unwrap().is_finite());
        assert_eq!(appendix_bound_without(&p).unwrap(), f64::INFINITY);
    }

    #[test]
    fn invalid_inputs() {
        assert!(bound_with_discretization(&BoundInputs { delta: 1.0, ..base() }).is_err());
        assert!(bound_with_discretization(&BoundInputs { n: 0.0, ..base() }).is_err());
        assert!(appendix_bound_with(&BoundInputs { rho: 1.5, ..base() }).is_err());
    }
}

//! Bound calculators, a Monte Carlo check of the concentration step, and
//! empirical analyses of quantized Gaussian vectors.

mod bounds;
mod gaussian;
mod hoeffding;
mod robustness;

pub use bounds::{
    appendix_bound_with, appendix_bound_without, bound_with_discretization, bound_without_discretization,
    ln_appendix_bound_with, ln_appendix_bound_without, BoundInputs,
};
pub use gaussian::{gaussian_variance_sweep, total_variance, vector_field, FieldPoint, VarianceRow, VarianceSweep};
pub use hoeffding::{verify_hoeffding, verify_hoeffding_with, InputDistribution, Trial, TrialRecord, MAX_CELLS, REFERENCE_FACTOR};
pub use robustness::{attention_robustness, RobustnessConfig, RobustnessResult};

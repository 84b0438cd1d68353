//! Estimation of the projection and the log-linear mixed model.

mod components;
mod fit;
mod gamma;
mod newton;

pub use components::{dfd, fit_components, ComponentSet};
pub use fit::{
    fit_coefficients, fit_coefficients_projected, fit_from_start, fit_single_component,
    initial_projections, CoefficientFit, FitConfig, FitResult, Shrinkage, StartStrategy,
    SIGMA2_FLOOR, SIGMA2_INIT,
};
pub use gamma::{
    gamma_objective_matrix, solve_min_generalized, update_gamma, GammaSolution, Orthogonality,
};
pub use newton::{
    newton_update_fixed_effects, newton_update_intercepts, FixedEffectStep, MAX_HALVINGS,
};

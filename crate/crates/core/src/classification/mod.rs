//! Probit GP classification under the Laplace approximation.

pub mod laplace;
pub mod probit;

pub use laplace::{
    approx_lml, class_nll, error_rate, grad_exact_laplace, grad_stochastic_laplace, laplace_fit, laplace_fit_exact,
    predict_class, predict_class_exact, ClassPredictionBatch, LaplaceState, NewtonConfig, W_FLOOR,
};
pub use probit::{log_cdf, ProbitLikelihood};

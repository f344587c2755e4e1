use thiserror::Error;

/// Errors raised across the bound-computation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("interval [{lo}, {hi}] carries no Gaussian mass (underflow)")]
    DegenerateMass { lo: f64, hi: f64 },

    #[error("curvature map nu(t) is not available for density `{0}` (not strongly convex)")]
    NuUnavailable(String),

    #[error("curvature {name}({t}) = {value} is not strictly positive")]
    NonPositiveCurvature { name: &'static str, t: f64, value: f64 },

    #[error(
        "ill-posed squared-ratio target: need 2*inf nu_p > 1/theta, got 2*{nu_inf} <= 1/{theta}; \
         the integral of p^2/q is not guaranteed finite"
    )]
    IllPosedRatio { nu_inf: f64, theta: f64 },

    #[error("the two Gaussians are identical")]
    IdenticalFunctions,

    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("all importance weights underflowed to zero")]
    AllWeightsZero,

    #[error("quadrature did not converge after {splits} panel splits (estimated error {est_error:e})")]
    NoConvergence { splits: usize, est_error: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

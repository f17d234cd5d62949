use thiserror::Error;

/// Violations of the standing assumptions on [`crate::ModelParams`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("volatility must be non-zero (sigma = {sigma})")]
    ZeroVolatility { sigma: f64 },
    #[error("permanent impact must be positive (gamma = {gamma})")]
    NonPositiveImpact { gamma: f64 },
    #[error("transaction cost must be positive (cost_sell = {cost_sell})")]
    NonPositiveCost { cost_sell: f64 },
    #[error("default penalty must be non-negative (default_penalty = {default_penalty})")]
    NegativePenalty { default_penalty: f64 },
    #[error("default rate must be non-negative (default_rate = {default_rate})")]
    NegativeDefaultRate { default_rate: f64 },
    #[error("correlation must lie in [-1, 1] (rho = {rho})")]
    CorrelationOutOfRange { rho: f64 },
    #[error("discount rate must exceed the drift (delta = {delta}, mu = {mu})")]
    DriftDominance { delta: f64, mu: f64 },
    #[error("effective discount delta + default_rate - mu must be positive (got {value})")]
    EffectiveDiscount { value: f64 },
    #[error("parameter {name} is not finite ({value})")]
    NonFinite { name: &'static str, value: f64 },
}

/// Errors raised by the numerical building blocks and the value function.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("characteristic equation has non-positive discriminant ({discriminant})")]
    NonPositiveDiscriminant { discriminant: f64 },
    #[error(
        "quadrature did not reach tolerance {tol:e} on [{a}, {b}] within {evaluations} evaluations"
    )]
    QuadratureFailure {
        a: f64,
        b: f64,
        tol: f64,
        evaluations: usize,
    },
    #[error("root not bracketed on [{lo}, {hi}] (f(lo) = {f_lo}, f(hi) = {f_hi})")]
    RootBracketFailure {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },
    #[error("prices must be positive (x = {x}, z = {z})")]
    NonPositivePrice { x: f64, z: f64 },
    #[error("sale size must be non-negative (got {0})")]
    NegativeSale(f64),
    #[error("state (x = {x}, y = {y}) lies on a branch edge; evaluate a one-sided branch instead")]
    OnBranchEdge { x: f64, y: f64 },
    #[error("boundary set does not match the parameters it is paired with")]
    InconsistentContext,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

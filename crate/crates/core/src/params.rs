//! Model parameters, states and the region vocabulary.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, ParamError};

/// Market, default and cost constants of the liquidation model.
///
/// The JSON form uses exactly these field names and rejects unknown or
/// missing keys.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Drift of the unaffected price (1/time).
    pub mu: f64,
    /// Volatility of the unaffected price (1/sqrt(time)).
    pub sigma: f64,
    /// Discount rate (1/time).
    pub delta: f64,
    /// Permanent multiplicative impact per share sold.
    pub gamma: f64,
    /// Per-share transaction cost.
    pub cost_sell: f64,
    /// Default intensity while the credit index sits below the barrier.
    pub default_rate: f64,
    /// Slope `K` of the default cost `K * x * y`.
    pub default_penalty: f64,
    /// Credit-index barrier.
    pub barrier: f64,
    /// Correlation between price noise and credit-index noise.
    pub rho: f64,
}

impl ModelParams {
    /// The parameter set used for the published figures, with the barrier
    /// and correlation (which the figures leave unspecified) set to zero.
    pub const fn reference() -> Self {
        Self {
            mu: 0.5,
            sigma: 0.2,
            delta: 0.7,
            gamma: 0.5,
            cost_sell: 0.3,
            default_rate: 0.7,
            default_penalty: 0.5,
            barrier: 0.0,
            rho: 0.0,
        }
    }

    pub fn with_default_rate(self, default_rate: f64) -> Self {
        Self {
            default_rate,
            ..self
        }
    }

    pub fn with_rho(self, rho: f64) -> Self {
        Self { rho, ..self }
    }

    pub fn with_barrier(self, barrier: f64) -> Self {
        Self { barrier, ..self }
    }

    pub fn half_sigma_sq(&self) -> f64 {
        0.5 * self.sigma * self.sigma
    }

    /// Parses a strict JSON configuration object and validates it.
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let params: ModelParams =
            serde_json::from_str(text).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        Ok(validate(params)?)
    }
}

/// Checks the standing assumptions and returns the parameters unchanged.
pub fn validate(params: ModelParams) -> Result<ModelParams, ParamError> {
    let fields = [
        ("mu", params.mu),
        ("sigma", params.sigma),
        ("delta", params.delta),
        ("gamma", params.gamma),
        ("cost_sell", params.cost_sell),
        ("default_rate", params.default_rate),
        ("default_penalty", params.default_penalty),
        ("barrier", params.barrier),
        ("rho", params.rho),
    ];
    for (name, value) in fields {
        if !value.is_finite() {
            return Err(ParamError::NonFinite { name, value });
        }
    }
    if params.sigma == 0.0 {
        return Err(ParamError::ZeroVolatility {
            sigma: params.sigma,
        });
    }
    if params.gamma <= 0.0 {
        return Err(ParamError::NonPositiveImpact {
            gamma: params.gamma,
        });
    }
    if params.cost_sell <= 0.0 {
        return Err(ParamError::NonPositiveCost {
            cost_sell: params.cost_sell,
        });
    }
    if params.default_penalty < 0.0 {
        return Err(ParamError::NegativePenalty {
            default_penalty: params.default_penalty,
        });
    }
    if params.default_rate < 0.0 {
        return Err(ParamError::NegativeDefaultRate {
            default_rate: params.default_rate,
        });
    }
    if !(-1.0..=1.0).contains(&params.rho) {
        return Err(ParamError::CorrelationOutOfRange { rho: params.rho });
    }
    if params.delta <= params.mu {
        return Err(ParamError::DriftDominance {
            delta: params.delta,
            mu: params.mu,
        });
    }
    let effective = params.delta + params.default_rate - params.mu;
    if effective <= 0.0 {
        return Err(ParamError::EffectiveDiscount { value: effective });
    }
    Ok(params)
}

/// A point of the state space: impacted price, remaining inventory and
/// credit-index value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub w: f64,
}

impl State {
    pub fn new(x: f64, y: f64, w: f64) -> Result<Self, ModelError> {
        if !(x.is_finite() && x > 0.0) {
            return Err(ModelError::InvalidState(format!(
                "price must be positive, got {x}"
            )));
        }
        if !(y.is_finite() && y >= 0.0) {
            return Err(ModelError::InvalidState(format!(
                "inventory must be non-negative, got {y}"
            )));
        }
        if !w.is_finite() {
            return Err(ModelError::InvalidState(format!(
                "credit index must be finite, got {w}"
            )));
        }
        Ok(Self { x, y, w })
    }
}

/// Which side of the credit barrier a state is on. The barrier itself
/// belongs to the default-free side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Above,
    Below,
}

impl Regime {
    pub fn of(w: f64, barrier: f64) -> Self {
        if w >= barrier {
            Regime::Above
        } else {
            Regime::Below
        }
    }
}

/// Waiting/selling region of a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionLabel {
    WaitAbove,
    Sell2Above,
    Sell1Above,
    WaitBelow,
    Sell2Below,
    Sell1Below,
    Liquidated,
}

impl RegionLabel {
    pub const ALL: [RegionLabel; 7] = [
        RegionLabel::WaitAbove,
        RegionLabel::Sell2Above,
        RegionLabel::Sell1Above,
        RegionLabel::WaitBelow,
        RegionLabel::Sell2Below,
        RegionLabel::Sell1Below,
        RegionLabel::Liquidated,
    ];

    pub fn regime(self) -> Option<Regime> {
        match self {
            RegionLabel::WaitAbove | RegionLabel::Sell2Above | RegionLabel::Sell1Above => {
                Some(Regime::Above)
            }
            RegionLabel::WaitBelow | RegionLabel::Sell2Below | RegionLabel::Sell1Below => {
                Some(Regime::Below)
            }
            RegionLabel::Liquidated => None,
        }
    }

    pub fn is_waiting(self) -> bool {
        matches!(self, RegionLabel::WaitAbove | RegionLabel::WaitBelow)
    }

    pub fn is_selling(self) -> bool {
        matches!(
            self,
            RegionLabel::Sell2Above
                | RegionLabel::Sell1Above
                | RegionLabel::Sell2Below
                | RegionLabel::Sell1Below
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            RegionLabel::WaitAbove => "WaitAbove",
            RegionLabel::Sell2Above => "Sell2Above",
            RegionLabel::Sell1Above => "Sell1Above",
            RegionLabel::WaitBelow => "WaitBelow",
            RegionLabel::Sell2Below => "Sell2Below",
            RegionLabel::Sell1Below => "Sell1Below",
            RegionLabel::Liquidated => "Liquidated",
        }
    }
}

impl std::fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

//! Optimal liquidation of a large position when the issuer can default.
//!
//! An investor sells `y` shares of an asset whose price `x` follows a
//! geometric Brownian motion. Every sale depresses the price
//! multiplicatively and pays a per-share cost. While a credit index `w`
//! sits below a barrier `b`, default arrives at rate `lambda` and costs
//! `K x y`. The optimal policy is of reflection type: hold while the price
//! is below a free boundary, and sell down to it otherwise.
//!
//! The crate provides
//!
//! * [`ModelParams`], [`State`] and [`RegionLabel`], the shared vocabulary;
//! * [`BoundarySet`], with exponents, thresholds and the quadrature
//!   coefficient of the waiting-region value below the barrier;
//! * [`ValueContext`], which evaluates the value function, its partial
//!   derivatives and the region of a state;
//! * [`hjb`], which certifies the variational inequality on grids;
//! * [`sim`], a Monte-Carlo simulator of the controlled system;
//! * [`figures`], which produces the datasets of the sweep studies.
//!
//! ```
//! use defliq::{ModelParams, State, ValueContext, RegionLabel};
//!
//! let ctx = ValueContext::new(ModelParams::reference())?;
//! let s = State::new(1.5, 1.0, 1.0)?;
//! assert_eq!(ctx.classify(&s), RegionLabel::Sell2Above);
//! assert!((ctx.bounds().f0 - 1.0914).abs() < 5e-4);
//! # Ok::<(), defliq::ModelError>(())
//! ```

pub mod boundary;
pub mod error;
pub mod figures;
pub mod hjb;
pub mod numeric;
pub mod params;
pub mod sim;
pub mod value;

pub use boundary::{BoundarySet, CoefficientTable};
pub use error::{ModelError, ParamError, Result};
pub use params::{validate, ModelParams, Regime, RegionLabel, State};
pub use value::{sale_map, Branch, Derivatives, ValueContext};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/boundaries.md")]
    mod boundaries {}
    #[doc = include_str!("../../../book/src/value.md")]
    mod value {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/figures.md")]
    mod figures {}
}

//! Bounds on the Value-at-Risk of a sum of losses `L1 + ... + Ld` when only the
//! marginal distributions are known.
//!
//! The crate is organised around four building blocks:
//!
//! * [`margins`]: marginal loss models (quantile and survival functions), with
//!   closed-form helpers for the Pareto family `F(x) = 1 - (1 + x)^(-theta)`.
//! * [`numerics`]: bracketed root finding and adaptive Gauss-Kronrod quadrature.
//! * [`hom`]: worst VaR in the homogeneous case (all margins equal) via the dual
//!   bound and via Wang's conditional-mean characterisation, plus the crude
//!   bounds that hold for any dependence structure.
//! * [`rearrange`]: the Rearrangement Algorithm (RA) and its adaptive variant
//!   (ARA) for arbitrary margins.
//!
//! [`study`] contains a replication harness that runs RA/ARA scenario grids and
//! writes CSV records plus per-cell summaries.

// `!(x > 0.0)`-style guards deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod hom;
pub mod margins;
pub mod numerics;
pub mod rearrange;
pub mod study;

pub use error::{Error, Result};
pub use margins::{CustomMargin, MarginRef, MarginalModel, Pareto, PointMass};

//! Indifference pricing of a pure endowment contract under partial information.
//!
//! The pipeline prices a claim paid at maturity `T` only if the insured is
//! still alive, in a market with a risky asset and a longevity bond, when the
//! insurer cannot observe the hidden health factor driving the insured's
//! mortality intensity. It is organised as:
//!
//! * [`model`]: coefficient catalog, hidden-chain description, validation;
//! * [`simulate`]: Monte Carlo paths of `(mu, Y, S1, S2)` and the Cox death time;
//! * [`filter`]: exact finite-state filter for the hidden chain and the
//!   projected intensity, with a particle-filter oracle;
//! * [`longevity`]: longevity-bond price surface from a Feynman-Kac PDE and
//!   the derived volatility loadings and drift;
//! * [`bsde`]: backward least-squares Monte Carlo solvers for the pure
//!   investment and claim log-value processes, plus deterministic ODE oracles;
//! * [`pricing`]: indifference price, optimal strategies, wealth paths, and
//!   the Bellman martingale diagnostic.

pub mod bsde;
pub mod filter;
pub mod longevity;
pub mod model;
pub mod pricing;
pub mod regression;
pub mod rng;
pub mod simulate;

pub use model::{ChainSpec, ClaimSpec, CoefFn, LambdaSpec, ModelSpec, TimeGrid};
pub use simulate::PathBundle;

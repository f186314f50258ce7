//! Hedgelab: a numerical engine for discrete-time hedging of Black-Scholes
//! option portfolios under a one-factor market model, with finite-difference
//! PDE solvers and variance-reduced Monte Carlo pricing for cross-validation.
//!
//! The crate is organised around five building blocks:
//!
//! * [`analytics`] — closed-form prices, Greeks, and normal-distribution kernels;
//! * [`pde_fd`] — finite-difference derivative estimates and grid solvers;
//! * [`market`] — the one-factor lognormal market and its seeded shock streams;
//! * [`hedging`] — hedge construction, realized hedge error, and variance theory;
//! * [`montecarlo`] — single-asset Monte Carlo with variance-reduction estimators.
//!
//! All randomness flows through the deterministic counter-keyed streams in
//! [`market`], so every simulation in the crate is reproducible bit-for-bit
//! regardless of thread count.

pub mod analytics;
pub mod hedging;
pub mod market;
pub mod montecarlo;
pub mod pde_fd;

pub(crate) mod sums;

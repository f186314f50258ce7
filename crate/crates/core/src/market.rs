//! One-factor multivariate geometric Brownian motion: model construction,
//! covariance assembly, exact lognormal stepping, and the deterministic
//! seeded shock stream.
//!
//! Every security loads on a shared systematic factor `z0` with loading
//! `phi` and carries an independent idiosyncratic factor with volatility
//! `sigma_idio`, so the log-return covariance is `phi phi' + diag(sigma^2)`.
//! Simulation uses this factor form directly; no matrix square root is ever
//! taken, so stepping is exact and O(n) per step.
//!
//! # Shock stream contract
//!
//! Shocks are a pure function of `(master_seed, path_index, step_index, draw
//! position)`. The stream key is
//! `mix64(master_seed ^ path_index * 0x9E3779B97F4A7C15 ^ rotl(step_index, 32))`
//! where `mix64` is the SplitMix64 finalizer; uniforms come from a SplitMix64
//! sequence started at that key, mapped into (0,1) as `(x >> 11 + 0.5) *
//! 2^-53`, and turned into normals with the AS241 inverse CDF. The systematic
//! draw `z0` always comes first, then the idiosyncratic draws in security
//! order. Any implementation following this recipe reproduces the streams
//! bit-for-bit, which is what makes path-level parallelism safe.

use crate::analytics::norm_inv_cdf_kernel;
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MarketError {
    #[error("model must contain at least one security")]
    EmptyModel,
    #[error("security {index} is degenerate: sigma_idio^2 + phi^2 must be > 0")]
    DegenerateSecurity { index: usize },
    #[error("security {index} has non-finite parameters")]
    NonFiniteSecurity { index: usize },
    #[error("time step must be > 0, got {dt}")]
    InvalidDt { dt: f64 },
    #[error("state has {got} spots but the model has {expected} securities")]
    StateLengthMismatch { expected: usize, got: usize },
    #[error("shock vector has {got} idiosyncratic draws but the model has {expected}")]
    ShockLengthMismatch { expected: usize, got: usize },
    #[error("spot {index} must be > 0, got {value}")]
    NonPositiveSpot { index: usize, value: f64 },
    #[error("path must have at least one step")]
    NoSteps,
}

/// Per-security dynamics parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecurityParams {
    /// Total drift per year.
    pub alpha: f64,
    /// Loading on the shared systematic factor (may be zero or negative).
    pub phi: f64,
    /// Idiosyncratic volatility per year.
    pub sigma_idio: f64,
    /// Price of idiosyncratic risk; zero when only market risk is priced.
    pub k_idio: f64,
}

impl SecurityParams {
    pub fn sigma_total_sq(&self) -> f64 {
        self.sigma_idio * self.sigma_idio + self.phi * self.phi
    }

    /// Total diffusion coefficient; this is the volatility that prices the
    /// security's option.
    pub fn sigma_total(&self) -> f64 {
        self.sigma_total_sq().sqrt()
    }
}

/// How [`OneFactorModel::build`] interprets the `alpha` fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuildMode {
    /// Use each security's `alpha` as given.
    AlphasGiven,
    /// Derive `alpha_i = rate + k0 * phi_i + k_idio_i * sigma_idio_i`.
    RiskPricesGiven,
}

/// An immutable one-factor market model.
#[derive(Debug, Clone, PartialEq)]
pub struct OneFactorModel {
    securities: Vec<SecurityParams>,
    rate: f64,
    k0: f64,
}

impl OneFactorModel {
    pub fn build(
        mut securities: Vec<SecurityParams>,
        rate: f64,
        k0: f64,
        mode: BuildMode,
    ) -> Result<Self, MarketError> {
        if securities.is_empty() {
            return Err(MarketError::EmptyModel);
        }
        for (index, s) in securities.iter().enumerate() {
            if !(s.alpha.is_finite()
                && s.phi.is_finite()
                && s.sigma_idio.is_finite()
                && s.k_idio.is_finite()
                && s.sigma_idio >= 0.0)
            {
                return Err(MarketError::NonFiniteSecurity { index });
            }
            if s.sigma_total_sq() <= 0.0 {
                return Err(MarketError::DegenerateSecurity { index });
            }
        }
        if mode == BuildMode::RiskPricesGiven {
            for s in &mut securities {
                s.alpha = rate + k0 * s.phi + s.k_idio * s.sigma_idio;
            }
        }
        Ok(Self {
            securities,
            rate,
            k0,
        })
    }

    // Test-only back door for degenerate worlds (all volatilities zero) that
    // the public builder rejects.
    #[cfg(test)]
    pub(crate) fn build_unvalidated(securities: Vec<SecurityParams>, rate: f64, k0: f64) -> Self {
        Self {
            securities,
            rate,
            k0,
        }
    }

    pub fn securities(&self) -> &[SecurityParams] {
        &self.securities
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn k0(&self) -> f64 {
        self.k0
    }

    pub fn len(&self) -> usize {
        self.securities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.securities.is_empty()
    }

    /// Instantaneous log-return covariance: `phi phi' + diag(sigma_idio^2)`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| {
            let cross = self.securities[i].phi * self.securities[j].phi;
            if i == j {
                cross + self.securities[i].sigma_idio * self.securities[i].sigma_idio
            } else {
                cross
            }
        })
    }
}

/// One set of standard normal draws: the shared systematic shock first, then
/// one idiosyncratic shock per security.
#[derive(Debug, Clone, PartialEq)]
pub struct ShockVector {
    pub z0: f64,
    pub z_idio: Vec<f64>,
}

/// Spot prices at a point in time.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketState {
    pub spots: Vec<f64>,
    pub time: f64,
}

impl MarketState {
    pub fn new(spots: Vec<f64>, time: f64) -> Self {
        Self { spots, time }
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        for (index, &value) in self.spots.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(MarketError::NonPositiveSpot { index, value });
            }
        }
        Ok(())
    }
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A SplitMix64 uniform/normal stream for one `(seed, path, step)` cell.
pub(crate) struct ShockStream {
    state: u64,
}

impl ShockStream {
    pub(crate) fn new(master_seed: u64, path_index: u64, step_index: u64) -> Self {
        let key = mix64(
            master_seed ^ path_index.wrapping_mul(GOLDEN_GAMMA) ^ step_index.rotate_left(32),
        );
        Self { state: key }
    }

    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform strictly inside (0, 1).
    pub(crate) fn next_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    pub(crate) fn next_normal(&mut self) -> f64 {
        norm_inv_cdf_kernel(self.next_uniform())
    }
}

/// Draws the shock vector for one `(path, step)` cell. Deterministic in all
/// arguments; see the module docs for the exact stream recipe.
pub fn draw_shocks(master_seed: u64, path_index: u64, step_index: u64, n: usize) -> ShockVector {
    let mut stream = ShockStream::new(master_seed, path_index, step_index);
    let z0 = stream.next_normal();
    let z_idio = (0..n).map(|_| stream.next_normal()).collect();
    ShockVector { z0, z_idio }
}

/// Advances every spot by one exact lognormal step of size `dt`:
///
/// ```text
/// X_i(t+dt) = X_i(t) * exp((alpha_i - sigma_total_i^2/2) dt
///                          + phi_i sqrt(dt) z0 + sigma_idio_i sqrt(dt) z_i)
/// ```
pub fn step_exact(
    model: &OneFactorModel,
    state: &MarketState,
    dt: f64,
    shocks: &ShockVector,
) -> Result<MarketState, MarketError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(MarketError::InvalidDt { dt });
    }
    if state.spots.len() != model.len() {
        return Err(MarketError::StateLengthMismatch {
            expected: model.len(),
            got: state.spots.len(),
        });
    }
    if shocks.z_idio.len() != model.len() {
        return Err(MarketError::ShockLengthMismatch {
            expected: model.len(),
            got: shocks.z_idio.len(),
        });
    }
    let sqrt_dt = dt.sqrt();
    let spots = model
        .securities
        .iter()
        .zip(&state.spots)
        .zip(&shocks.z_idio)
        .map(|((sec, &spot), &zi)| {
            let exponent = (sec.alpha - 0.5 * sec.sigma_total_sq()) * dt
                + sec.phi * sqrt_dt * shocks.z0
                + sec.sigma_idio * sqrt_dt * zi;
            spot * exponent.exp()
        })
        .collect();
    Ok(MarketState {
        spots,
        time: state.time + dt,
    })
}

/// Simulates one full path: `steps` exact steps of size `horizon / steps`,
/// with the step-`s` shocks drawn from `(master_seed, path_index, s)`.
/// Returns `steps + 1` states including the initial one.
pub fn simulate_path(
    model: &OneFactorModel,
    initial: &MarketState,
    horizon: f64,
    steps: usize,
    path_index: u64,
    master_seed: u64,
) -> Result<Vec<MarketState>, MarketError> {
    if steps == 0 {
        return Err(MarketError::NoSteps);
    }
    let dt = horizon / steps as f64;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(initial.clone());
    for step in 0..steps {
        let shocks = draw_shocks(master_seed, path_index, step as u64, model.len());
        let next = step_exact(model, states.last().unwrap(), dt, &shocks)?;
        states.push(next);
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_security(alpha: f64, phi: f64, sigma_idio: f64) -> OneFactorModel {
        OneFactorModel::build(
            vec![SecurityParams {
                alpha,
                phi,
                sigma_idio,
                k_idio: 0.0,
            }],
            0.05,
            0.0,
            BuildMode::AlphasGiven,
        )
        .unwrap()
    }

    #[test]
    fn sigma_total_combines_systematic_and_idiosyncratic_parts() {
        let s = SecurityParams {
            alpha: 0.0,
            phi: 0.2,
            sigma_idio: 0.1,
            k_idio: 0.0,
        };
        assert_abs_diff_eq!(s.sigma_total_sq(), 0.05, epsilon = 1e-15);
    }

    #[test]
    fn risk_prices_mode_derives_alpha() {
        let model = OneFactorModel::build(
            vec![SecurityParams {
                alpha: f64::NAN, // ignored in this mode, must not leak through
                phi: 0.2,
                sigma_idio: 0.1,
                k_idio: 0.0,
            }],
            0.05,
            0.3,
            BuildMode::RiskPricesGiven,
        );
        // NaN alpha is rejected up front even in risk-prices mode.
        assert!(model.is_err());
        let model = OneFactorModel::build(
            vec![SecurityParams {
                alpha: 0.0,
                phi: 0.2,
                sigma_idio: 0.1,
                k_idio: 0.0,
            }],
            0.05,
            0.3,
            BuildMode::RiskPricesGiven,
        )
        .unwrap();
        assert_abs_diff_eq!(model.securities()[0].alpha, 0.11, epsilon = 1e-15);
    }

    #[test]
    fn build_rejects_empty_and_degenerate_models() {
        assert_eq!(
            OneFactorModel::build(vec![], 0.0, 0.0, BuildMode::AlphasGiven),
            Err(MarketError::EmptyModel)
        );
        let degenerate = SecurityParams {
            alpha: 0.1,
            phi: 0.0,
            sigma_idio: 0.0,
            k_idio: 0.0,
        };
        assert_eq!(
            OneFactorModel::build(vec![degenerate], 0.0, 0.0, BuildMode::AlphasGiven),
            Err(MarketError::DegenerateSecurity { index: 0 })
        );
    }

    #[test]
    fn covariance_matches_direct_formula() {
        let model = OneFactorModel::build(
            vec![
                SecurityParams {
                    alpha: 0.0,
                    phi: 0.2,
                    sigma_idio: 0.1,
                    k_idio: 0.0,
                },
                SecurityParams {
                    alpha: 0.0,
                    phi: 0.3,
                    sigma_idio: 0.1,
                    k_idio: 0.0,
                },
            ],
            0.0,
            0.0,
            BuildMode::AlphasGiven,
        )
        .unwrap();
        let cov = model.covariance();
        assert_abs_diff_eq!(cov[(0, 0)], 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(cov[(0, 1)], 0.06, epsilon = 1e-15);
        assert_abs_diff_eq!(cov[(1, 0)], 0.06, epsilon = 1e-15);
        assert_abs_diff_eq!(cov[(1, 1)], 0.10, epsilon = 1e-15);
    }

    #[test]
    fn covariance_is_diagonal_when_all_loadings_vanish() {
        let sec = |sig: f64| SecurityParams {
            alpha: 0.0,
            phi: 0.0,
            sigma_idio: sig,
            k_idio: 0.0,
        };
        let model =
            OneFactorModel::build(vec![sec(0.1), sec(0.2)], 0.0, 0.0, BuildMode::AlphasGiven)
                .unwrap();
        let cov = model.covariance();
        assert_eq!(cov[(0, 1)], 0.0);
        assert_eq!(cov[(1, 0)], 0.0);
    }

    #[test]
    fn draw_shocks_is_deterministic_and_ordered() {
        let a = draw_shocks(42, 7, 3, 4);
        let b = draw_shocks(42, 7, 3, 4);
        assert_eq!(a, b);
        // A longer vector extends the stream without disturbing the prefix.
        let c = draw_shocks(42, 7, 3, 6);
        assert_eq!(a.z0, c.z0);
        assert_eq!(a.z_idio[..], c.z_idio[..4]);
        // Different cells give different draws.
        assert_ne!(draw_shocks(42, 7, 4, 4), a);
        assert_ne!(draw_shocks(42, 8, 3, 4), a);
        assert_ne!(draw_shocks(43, 7, 3, 4), a);
    }

    #[test]
    fn step_with_zero_shocks_and_compensated_drift_keeps_spots_fixed() {
        let model = one_security(0.025, 0.2, 0.1); // alpha = sigma_total^2 / 2
        let state = MarketState::new(vec![100.0], 0.0);
        let shocks = ShockVector {
            z0: 0.0,
            z_idio: vec![0.0],
        };
        let next = step_exact(&model, &state, 0.5, &shocks).unwrap();
        assert_abs_diff_eq!(next.spots[0], 100.0, epsilon = 1e-12);
        assert_abs_diff_eq!(next.time, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn deterministic_growth_when_all_volatility_is_zero() {
        let model = OneFactorModel::build_unvalidated(
            vec![SecurityParams {
                alpha: 0.07,
                phi: 0.0,
                sigma_idio: 0.0,
                k_idio: 0.0,
            }],
            0.05,
            0.0,
        );
        let state = MarketState::new(vec![50.0], 0.0);
        let shocks = ShockVector {
            z0: 1.3,
            z_idio: vec![-0.4],
        };
        let next = step_exact(&model, &state, 2.0, &shocks).unwrap();
        assert_abs_diff_eq!(next.spots[0], 50.0 * (0.14f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn step_rejects_non_positive_dt_and_mismatched_lengths() {
        let model = one_security(0.05, 0.2, 0.1);
        let state = MarketState::new(vec![100.0], 0.0);
        let shocks = ShockVector {
            z0: 0.0,
            z_idio: vec![0.0],
        };
        assert!(matches!(
            step_exact(&model, &state, 0.0, &shocks),
            Err(MarketError::InvalidDt { .. })
        ));
        let bad = ShockVector {
            z0: 0.0,
            z_idio: vec![],
        };
        assert!(matches!(
            step_exact(&model, &state, 0.1, &bad),
            Err(MarketError::ShockLengthMismatch { .. })
        ));
    }

    #[test]
    fn single_step_path_reproduces_step_exact() {
        let model = one_security(0.05, 0.2, 0.1);
        let initial = MarketState::new(vec![100.0], 0.0);
        let path = simulate_path(&model, &initial, 0.25, 1, 11, 99).unwrap();
        assert_eq!(path.len(), 2);
        let shocks = draw_shocks(99, 11, 0, 1);
        let direct = step_exact(&model, &initial, 0.25, &shocks).unwrap();
        assert_eq!(path[1], direct);
    }

    #[test]
    fn identical_seed_and_path_index_reproduce_the_path() {
        let model = one_security(0.05, 0.2, 0.1);
        let initial = MarketState::new(vec![100.0], 0.0);
        let a = simulate_path(&model, &initial, 1.0, 12, 5, 1234).unwrap();
        let b = simulate_path(&model, &initial, 1.0, 12, 5, 1234).unwrap();
        assert_eq!(a, b);
    }
}

//! Hedge construction for option portfolios, realized one-period hedge error,
//! the closed-form variance decomposition of that error, and the replication
//! experiments that measure it.
//!
//! A hedge for a book of `n` calls holds `psi_i` units of security `i` and a
//! single cash position `P = (1/n) sum_i (C_i - psi_i X_i)`. The standard
//! delta hedge sets `psi_i` to the option delta (at the security's total
//! volatility). Generalized hedges deviate by `D_i = (psi_i - delta_i) X_i`;
//! the systematic-matching builder picks those deviations so that the book's
//! exposure to the shared factor cancels through a chosen order, trading
//! idiosyncratic noise (the deviations are not delta-neutral per security)
//! against systematic curvature.

use crate::analytics::{
    bs_quote, log_space_derivative, AnalyticsError, BsQuote, OptionKind, OptionSpec, PricingInputs,
};
use crate::market::{draw_shocks, step_exact, MarketError, MarketState, OneFactorModel};
use crate::sums;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HedgeError {
    #[error("portfolio has {options} options but the model has {securities} securities")]
    LengthMismatch { securities: usize, options: usize },
    #[error("option {index} is not a call; the hedge theory covers calls only")]
    NotACall { index: usize },
    #[error("option {index} has expired at t = {t} (maturity {maturity})")]
    Expired { index: usize, t: f64, maturity: f64 },
    #[error("allocation vector has {got} entries, expected {expected}")]
    PsiLengthMismatch { expected: usize, got: usize },
    #[error("matching order must lie in 1..={max}, got {order}")]
    InvalidMatchingOrder { order: usize, max: usize },
    #[error("portfolio has {n} securities, fewer than the matching order {order}")]
    TooFewSecurities { n: usize, order: usize },
    #[error(
        "moment-constraint matrix is rank deficient (rank {rank} < {required}); \
         the loadings must include at least {required} distinct nonzero values"
    )]
    SingularConstraints { rank: usize, required: usize },
    #[error("state times do not line up: expected {expected}, got {got}")]
    TimeMismatch { expected: f64, got: f64 },
    #[error(
        "security {index} violates the pricing condition alpha = r + k0 phi \
         (alpha = {alpha}, required {required})"
    )]
    PricingCondition {
        index: usize,
        alpha: f64,
        required: f64,
    },
    #[error("experiment needs at least {required} replications, got {got}")]
    TooFewReplications { required: usize, got: usize },
    #[error("path experiment needs at least one step")]
    NoSteps,
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Market(#[from] MarketError),
}

/// A book of one call per security plus the market state it is priced on.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioSpec {
    pub model: OneFactorModel,
    pub options: Vec<OptionSpec>,
    pub initial: MarketState,
}

impl PortfolioSpec {
    pub fn validate(&self) -> Result<(), HedgeError> {
        if self.options.len() != self.model.len() || self.initial.spots.len() != self.model.len() {
            return Err(HedgeError::LengthMismatch {
                securities: self.model.len(),
                options: self.options.len(),
            });
        }
        for (index, opt) in self.options.iter().enumerate() {
            opt.validate()?;
            if opt.kind != OptionKind::Call {
                return Err(HedgeError::NotACall { index });
            }
        }
        self.initial.validate()?;
        Ok(())
    }
}

/// Security holdings `psi`, the cash position, and the per-security value
/// deviations from the delta hedge.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeStrategy {
    pub psi: Vec<f64>,
    pub cash: f64,
    pub deviations: Vec<f64>,
}

/// The three-term closed-form decomposition of the hedge-error variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceDecomposition {
    /// Idiosyncratic deviation term, linear in dt.
    pub f1: f64,
    /// Systematic curvature term, quadratic in dt; zero for an order-2
    /// matched hedge by construction.
    pub f2: f64,
    /// Remaining idiosyncratic terms, quadratic in dt.
    pub f3: f64,
    pub total: f64,
}

/// Sample statistics of the hedge error over independent replications.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeStats {
    pub mean: f64,
    pub variance: f64,
    pub std_error_of_mean: f64,
    pub replications: usize,
    /// The closed-form decomposition, when the model satisfies its pricing
    /// condition (and always for the delta hedge).
    pub theory: Option<VarianceDecomposition>,
}

/// Which hedge the experiment drivers rebuild at each rebalance.
#[derive(Debug, Clone, PartialEq)]
pub enum HedgeBuilder {
    Delta,
    Matched { order: usize },
    Custom { psi: Vec<f64> },
}

// Per-security quote at time t: tau from the option clock, vol from the
// security's total diffusion coefficient.
fn quotes_at(
    model: &OneFactorModel,
    options: &[OptionSpec],
    state: &MarketState,
    t: f64,
) -> Result<Vec<BsQuote>, HedgeError> {
    options
        .iter()
        .zip(model.securities())
        .zip(&state.spots)
        .map(|((opt, sec), &spot)| {
            let tau = opt.maturity - t;
            let inputs = PricingInputs::new(spot, model.rate(), sec.sigma_total(), tau.max(0.0));
            bs_quote(&inputs, opt).map_err(HedgeError::from)
        })
        .collect()
}

fn require_alive(options: &[OptionSpec], t: f64) -> Result<(), HedgeError> {
    for (index, opt) in options.iter().enumerate() {
        if opt.maturity - t <= 0.0 {
            return Err(HedgeError::Expired {
                index,
                t,
                maturity: opt.maturity,
            });
        }
    }
    Ok(())
}

fn cash_position(quotes: &[BsQuote], psi: &[f64], spots: &[f64]) -> f64 {
    let n = quotes.len() as f64;
    quotes
        .iter()
        .zip(psi)
        .zip(spots)
        .map(|((q, &p), &x)| q.price - p * x)
        .sum::<f64>()
        / n
}

fn strategy_from(
    model: &OneFactorModel,
    options: &[OptionSpec],
    state: &MarketState,
    t: f64,
    builder: &HedgeBuilder,
) -> Result<HedgeStrategy, HedgeError> {
    match builder {
        HedgeBuilder::Delta => delta_strategy_inner(model, options, state, t),
        HedgeBuilder::Matched { order } => matched_strategy_inner(model, options, state, t, *order),
        HedgeBuilder::Custom { psi } => custom_strategy_inner(model, options, state, t, psi),
    }
}

fn delta_strategy_inner(
    model: &OneFactorModel,
    options: &[OptionSpec],
    state: &MarketState,
    t: f64,
) -> Result<HedgeStrategy, HedgeError> {
    require_alive(options, t)?;
    let quotes = quotes_at(model, options, state, t)?;
    let psi: Vec<f64> = quotes.iter().map(|q| q.delta).collect();
    let cash = cash_position(&quotes, &psi, &state.spots);
    let deviations = vec![0.0; psi.len()];
    Ok(HedgeStrategy {
        psi,
        cash,
        deviations,
    })
}

fn custom_strategy_inner(
    model: &OneFactorModel,
    options: &[OptionSpec],
    state: &MarketState,
    t: f64,
    psi: &[f64],
) -> Result<HedgeStrategy, HedgeError> {
    require_alive(options, t)?;
    if psi.len() != options.len() {
        return Err(HedgeError::PsiLengthMismatch {
            expected: options.len(),
            got: psi.len(),
        });
    }
    let quotes = quotes_at(model, options, state, t)?;
    let cash = cash_position(&quotes, psi, &state.spots);
    let deviations = quotes
        .iter()
        .zip(psi)
        .zip(&state.spots)
        .map(|((q, &p), &x)| (p - q.delta) * x)
        .collect();
    Ok(HedgeStrategy {
        psi: psi.to_vec(),
        cash,
        deviations,
    })
}

const MAX_MATCHING_ORDER: usize = 6;
const RANK_RELATIVE_TOLERANCE: f64 = 1e-10;

fn matched_strategy_inner(
    model: &OneFactorModel,
    options: &[OptionSpec],
    state: &MarketState,
    t: f64,
    order: usize,
) -> Result<HedgeStrategy, HedgeError> {
    require_alive(options, t)?;
    if order == 0 || order > MAX_MATCHING_ORDER {
        return Err(HedgeError::InvalidMatchingOrder {
            order,
            max: MAX_MATCHING_ORDER,
        });
    }
    let n = options.len();
    if n < order {
        return Err(HedgeError::TooFewSecurities { n, order });
    }

    let quotes = quotes_at(model, options, state, t)?;

    // Moment constraints on the deviations D_i = (psi_i - delta_i) X_i:
    //   sum_i D_i phi_i^k = sum_i (L^k C_i - L^1 C_i) phi_i^k,  k = 1..=order
    // where L = X d/dX. The k = 1 right-hand side vanishes identically, which
    // is the condition keeping the hedge-error mean at second order.
    let mut constraints = DMatrix::zeros(order, n);
    let mut targets = DVector::zeros(order);
    for (i, sec) in model.securities().iter().enumerate() {
        let spot = state.spots[i];
        let tau = options[i].maturity - t;
        let inputs = PricingInputs::new(spot, model.rate(), sec.sigma_total(), tau);
        let l1 = spot * quotes[i].delta;
        let mut phi_pow = 1.0;
        for k in 1..=order {
            phi_pow *= sec.phi;
            constraints[(k - 1, i)] = phi_pow;
            let lk = if k == 1 {
                l1
            } else if k == 2 {
                spot * spot * quotes[i].gamma + l1
            } else {
                log_space_derivative(k as u32, &inputs, &options[i])?
            };
            targets[k - 1] += (lk - l1) * phi_pow;
        }
    }

    // Minimum-norm deviations via SVD; the singular values double as the
    // rank check for the distinct-nonzero-loadings requirement.
    let svd = constraints.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > RANK_RELATIVE_TOLERANCE * max_sv)
        .count();
    if max_sv == 0.0 || rank < order {
        return Err(HedgeError::SingularConstraints {
            rank,
            required: order,
        });
    }
    let deviations = svd
        .solve(&targets, RANK_RELATIVE_TOLERANCE * max_sv)
        .expect("SVD solve with computed factors");

    let psi: Vec<f64> = quotes
        .iter()
        .zip(deviations.iter())
        .zip(&state.spots)
        .map(|((q, &d), &x)| q.delta + d / x)
        .collect();
    // Re-derive the deviations from the stored psi so the struct invariant
    // D_i = (psi_i - delta_i) X_i holds bit-for-bit.
    let deviations: Vec<f64> = quotes
        .iter()
        .zip(&psi)
        .zip(&state.spots)
        .map(|((q, &p), &x)| (p - q.delta) * x)
        .collect();
    let cash = cash_position(&quotes, &psi, &state.spots);
    Ok(HedgeStrategy {
        psi,
        cash,
        deviations,
    })
}

/// Standard delta hedge: `psi_i` is the option delta at the security's total
/// volatility; all deviations vanish.
pub fn delta_strategy(p: &PortfolioSpec, t: f64) -> Result<HedgeStrategy, HedgeError> {
    p.validate()?;
    delta_strategy_inner(&p.model, &p.options, &p.initial, t)
}

/// Generalized hedge with caller-chosen allocations.
pub fn custom_strategy(p: &PortfolioSpec, psi: &[f64], t: f64) -> Result<HedgeStrategy, HedgeError> {
    p.validate()?;
    custom_strategy_inner(&p.model, &p.options, &p.initial, t, psi)
}

/// Systematic-matching hedge of the given order: the allocations satisfy the
/// factor-moment constraints through `order`, and among all solutions the one
/// with the smallest sum of squared deviations is returned.
pub fn matched_strategy(p: &PortfolioSpec, t: f64, order: usize) -> Result<HedgeStrategy, HedgeError> {
    p.validate()?;
    matched_strategy_inner(&p.model, &p.options, &p.initial, t, order)
}

fn hedge_error_inner(
    model: &OneFactorModel,
    options: &[OptionSpec],
    strategy: &HedgeStrategy,
    now: &MarketState,
    next: &MarketState,
    t: f64,
    dt: f64,
) -> Result<f64, HedgeError> {
    let quotes_now = quotes_at(model, options, now, t)?;
    let quotes_next = quotes_at(model, options, next, t + dt)?;
    let n = options.len() as f64;
    let stock_gain: f64 = strategy
        .psi
        .iter()
        .zip(&next.spots)
        .zip(&now.spots)
        .map(|((&p, &xn), &x)| p * (xn - x))
        .sum::<f64>()
        / n;
    let option_gain: f64 = quotes_next
        .iter()
        .zip(&quotes_now)
        .map(|(qn, q)| qn.price - q.price)
        .sum::<f64>()
        / n;
    let interest = strategy.cash * (model.rate() * dt).exp_m1();
    Ok(stock_gain + interest - option_gain)
}

const TIME_TOLERANCE: f64 = 1e-9;

/// Realized one-period hedge error: stock gains plus cash interest minus the
/// change in option value, averaged over the book.
pub fn hedge_error(
    strategy: &HedgeStrategy,
    p: &PortfolioSpec,
    state_next: &MarketState,
    t: f64,
    dt: f64,
) -> Result<f64, HedgeError> {
    p.validate()?;
    if (p.initial.time - t).abs() > TIME_TOLERANCE {
        return Err(HedgeError::TimeMismatch {
            expected: t,
            got: p.initial.time,
        });
    }
    if (state_next.time - (t + dt)).abs() > TIME_TOLERANCE {
        return Err(HedgeError::TimeMismatch {
            expected: t + dt,
            got: state_next.time,
        });
    }
    hedge_error_inner(&p.model, &p.options, strategy, &p.initial, state_next, t, dt)
}

fn pricing_condition_check(model: &OneFactorModel) -> Result<(), HedgeError> {
    for (index, sec) in model.securities().iter().enumerate() {
        let required = model.rate() + model.k0() * sec.phi;
        if (sec.alpha - required).abs() > 1e-12 {
            return Err(HedgeError::PricingCondition {
                index,
                alpha: sec.alpha,
                required,
            });
        }
    }
    Ok(())
}

/// Closed-form variance of the delta hedge's one-period error (the two
/// explicit second-order terms).
pub fn var_delta_theory(
    p: &PortfolioSpec,
    t: f64,
    dt: f64,
) -> Result<VarianceDecomposition, HedgeError> {
    p.validate()?;
    require_alive(&p.options, t)?;
    let quotes = quotes_at(&p.model, &p.options, &p.initial, t)?;
    let n = p.model.len() as f64;
    let mut systematic = 0.0;
    let mut idio = 0.0;
    for ((q, sec), &x) in quotes
        .iter()
        .zip(p.model.securities())
        .zip(&p.initial.spots)
    {
        let gamma_value = q.gamma * x * x;
        let phi2 = sec.phi * sec.phi;
        systematic += gamma_value * phi2;
        let sigma_t2 = sec.sigma_total_sq();
        idio += gamma_value * gamma_value * (sigma_t2 * sigma_t2 - phi2 * phi2);
    }
    let f2 = 0.5 * (systematic / n) * (systematic / n) * dt * dt;
    let f3 = idio / (2.0 * n * n) * dt * dt;
    Ok(VarianceDecomposition {
        f1: 0.0,
        f2,
        f3,
        total: f2 + f3,
    })
}

/// Closed-form variance of a generalized hedge's one-period error. Requires
/// the model to price systematic risk only (`alpha = r + k0 phi` for every
/// security).
pub fn var_general_theory(
    p: &PortfolioSpec,
    strategy: &HedgeStrategy,
    t: f64,
    dt: f64,
) -> Result<VarianceDecomposition, HedgeError> {
    p.validate()?;
    require_alive(&p.options, t)?;
    pricing_condition_check(&p.model)?;
    if strategy.psi.len() != p.model.len() {
        return Err(HedgeError::PsiLengthMismatch {
            expected: p.model.len(),
            got: strategy.psi.len(),
        });
    }
    let quotes = quotes_at(&p.model, &p.options, &p.initial, t)?;
    let n = p.model.len() as f64;
    let rate = p.model.rate();

    let mut f1 = 0.0;
    let mut systematic = 0.0;
    let mut f3 = 0.0;
    for (i, sec) in p.model.securities().iter().enumerate() {
        let x = p.initial.spots[i];
        let d = strategy.deviations[i];
        let gamma_value = quotes[i].gamma * x * x;
        let phi2 = sec.phi * sec.phi;
        let sigma2 = sec.sigma_idio * sec.sigma_idio;
        let sigma_t2 = sec.sigma_total_sq();
        f1 += d * d * sigma2;
        systematic += (gamma_value - d) * phi2;
        f3 += 0.5 * (sigma_t2 * sigma_t2 - phi2 * phi2) * (gamma_value - d) * (gamma_value - d)
            + 2.0 * sec.alpha * sigma2 * d * d
            - 2.0 * (sec.alpha - rate) * sigma2 * d * gamma_value;
    }
    let f1 = f1 / (n * n) * dt;
    let f2 = 0.5 * (systematic / n) * (systematic / n) * dt * dt;
    let f3 = f3 / (n * n) * dt * dt;
    Ok(VarianceDecomposition {
        f1,
        f2,
        f3,
        total: f1 + f2 + f3,
    })
}

fn stats_from_samples(samples: &[f64], theory: Option<VarianceDecomposition>) -> HedgeStats {
    let (mean, variance) = sums::mean_and_variance(samples);
    HedgeStats {
        mean,
        variance,
        std_error_of_mean: (variance / samples.len() as f64).sqrt(),
        replications: samples.len(),
        theory,
    }
}

fn theory_for(
    p: &PortfolioSpec,
    builder: &HedgeBuilder,
    strategy: &HedgeStrategy,
    t: f64,
    dt: f64,
) -> Option<VarianceDecomposition> {
    match builder {
        HedgeBuilder::Delta => var_delta_theory(p, t, dt).ok(),
        _ => var_general_theory(p, strategy, t, dt).ok(),
    }
}

const MIN_ONE_PERIOD_REPLICATIONS: usize = 100;

/// Builds the hedge once at the portfolio's state, advances one exact step
/// per replication, and returns the sample statistics of the hedge error.
/// Replication `k` draws its shocks from `(master_seed, k, 0)`, so results
/// are independent of evaluation order and worker count.
pub fn run_one_period_experiment(
    p: &PortfolioSpec,
    builder: &HedgeBuilder,
    dt: f64,
    replications: usize,
    master_seed: u64,
) -> Result<HedgeStats, HedgeError> {
    p.validate()?;
    if replications < MIN_ONE_PERIOD_REPLICATIONS {
        return Err(HedgeError::TooFewReplications {
            required: MIN_ONE_PERIOD_REPLICATIONS,
            got: replications,
        });
    }
    let t = p.initial.time;
    let strategy = strategy_from(&p.model, &p.options, &p.initial, t, builder)?;
    let n = p.model.len();
    let samples: Vec<f64> = (0..replications as u64)
        .into_par_iter()
        .map(|k| {
            let shocks = draw_shocks(master_seed, k, 0, n);
            let next = step_exact(&p.model, &p.initial, dt, &shocks)?;
            hedge_error_inner(&p.model, &p.options, &strategy, &p.initial, &next, t, dt)
        })
        .collect::<Result<_, _>>()?;
    let theory = theory_for(p, builder, &strategy, t, dt);
    Ok(stats_from_samples(&samples, theory))
}

/// Multi-period experiment: rebalances with the builder's hedge at every step,
/// compounds each step's error forward at the risk-free rate, and reports the
/// statistics of the terminal total.
pub fn run_path_experiment(
    p: &PortfolioSpec,
    builder: &HedgeBuilder,
    horizon: f64,
    steps: usize,
    replications: usize,
    master_seed: u64,
) -> Result<HedgeStats, HedgeError> {
    p.validate()?;
    if steps == 0 {
        return Err(HedgeError::NoSteps);
    }
    if replications < 2 {
        return Err(HedgeError::TooFewReplications {
            required: 2,
            got: replications,
        });
    }
    let dt = horizon / steps as f64;
    let n = p.model.len();
    let rate = p.model.rate();
    let samples: Vec<f64> = (0..replications as u64)
        .into_par_iter()
        .map(|k| -> Result<f64, HedgeError> {
            let mut state = p.initial.clone();
            let mut total = 0.0;
            for step in 0..steps {
                let t = p.initial.time + step as f64 * dt;
                let strategy = strategy_from(&p.model, &p.options, &state, t, builder)?;
                let shocks = draw_shocks(master_seed, k, step as u64, n);
                let next = step_exact(&p.model, &state, dt, &shocks)?;
                let dh =
                    hedge_error_inner(&p.model, &p.options, &strategy, &state, &next, t, dt)?;
                // Compound forward to the horizon: the period ends at
                // (step + 1) dt, leaving (steps - 1 - step) dt of accrual.
                let accrual = rate * dt * (steps - 1 - step) as f64;
                total += dh * accrual.exp();
                state = next;
            }
            Ok(total)
        })
        .collect::<Result<_, _>>()?;
    Ok(stats_from_samples(&samples, None))
}

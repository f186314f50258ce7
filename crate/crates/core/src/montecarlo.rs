//! Single-asset Monte Carlo option pricing with four estimator families:
//! basic, importance sampling with an optimized drift vector, antithetic
//! variates, and a control variate on the discounted terminal spot.
//!
//! Pricing is risk-neutral (drift = rate), stepping is exact lognormal, and
//! all draws come from the market module's counter-keyed streams, so every
//! estimate is reproducible bit-for-bit at any worker count.

use crate::analytics::{OptionKind, OptionSpec};
use crate::market::{draw_shocks, mix64};
use crate::sums;
use rayon::prelude::*;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum McError {
    #[error("invalid Monte Carlo config: {field} must satisfy {constraint}")]
    InvalidConfig {
        field: &'static str,
        constraint: &'static str,
    },
    #[error("antithetic pairing needs an even path count, got {n_paths}")]
    OddPathCount { n_paths: usize },
    #[error("importance weight overflowed on path {path_index}; the drift is too large")]
    WeightOverflow { path_index: u64 },
    #[error("drift coefficients must be 1..=3 finite values, got {got}")]
    InvalidDrift { got: usize },
    #[error("drift degree must be 0, 1, or 2, got {degree}")]
    InvalidDegree { degree: usize },
    #[error("pilot sample needs at least {required} paths, got {got}")]
    TooFewPilotPaths { required: usize, got: usize },
    #[error("control variate is degenerate: zero variance on the pilot sample")]
    DegenerateControl,
    #[error("drift optimization failed: objective not finite at any start point")]
    OptimizationFailure,
    #[error(transparent)]
    Analytics(#[from] crate::analytics::AnalyticsError),
}

/// Configuration for one Monte Carlo pricing run. The option's `maturity` is
/// the simulation horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub spot: f64,
    pub option: OptionSpec,
    pub rate: f64,
    pub vol: f64,
    pub steps: usize,
    pub n_paths: usize,
    pub master_seed: u64,
    /// Permits `vol = 0` for degenerate-distribution tests.
    pub allow_zero_vol: bool,
}

impl McConfig {
    pub fn new(spot: f64, option: OptionSpec, rate: f64, vol: f64) -> Self {
        Self {
            spot,
            option,
            rate,
            vol,
            steps: 1,
            n_paths: 100_000,
            master_seed: 0,
            allow_zero_vol: false,
        }
    }

    pub fn validate(&self) -> Result<(), McError> {
        self.option.validate()?;
        if !(self.spot.is_finite() && self.spot > 0.0) {
            return Err(McError::InvalidConfig {
                field: "spot",
                constraint: "spot > 0",
            });
        }
        if !self.rate.is_finite() {
            return Err(McError::InvalidConfig {
                field: "rate",
                constraint: "rate finite",
            });
        }
        if !(self.vol.is_finite() && self.vol >= 0.0) {
            return Err(McError::InvalidConfig {
                field: "vol",
                constraint: "vol >= 0",
            });
        }
        if self.vol == 0.0 && !self.allow_zero_vol {
            return Err(McError::InvalidConfig {
                field: "vol",
                constraint: "vol > 0 (set allow_zero_vol for degenerate tests)",
            });
        }
        if self.steps < 1 {
            return Err(McError::InvalidConfig {
                field: "steps",
                constraint: "steps >= 1",
            });
        }
        if self.n_paths < 2 {
            return Err(McError::InvalidConfig {
                field: "n_paths",
                constraint: "n_paths >= 2",
            });
        }
        Ok(())
    }

    fn maturity(&self) -> f64 {
        self.option.maturity
    }

    fn discount(&self) -> f64 {
        (-self.rate * self.maturity()).exp()
    }

    fn payoff(&self, terminal_spot: f64) -> f64 {
        match self.option.kind {
            OptionKind::Call => (terminal_spot - self.option.strike).max(0.0),
            OptionKind::Put => (self.option.strike - terminal_spot).max(0.0),
        }
    }
}

/// Per-step mean shift of the driving normal, polynomial in the normalized
/// time `u = (step + 1/2) / steps`: `tau(u) = c0 + c1 u + c2 u^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftSpec {
    pub coeffs: Vec<f64>,
}

impl DriftSpec {
    pub fn zero(degree: usize) -> Self {
        Self {
            coeffs: vec![0.0; degree + 1],
        }
    }

    pub fn constant(c0: f64) -> Self {
        Self { coeffs: vec![c0] }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<(), McError> {
        if self.coeffs.is_empty() || self.coeffs.len() > 3 || self.coeffs.iter().any(|c| !c.is_finite())
        {
            return Err(McError::InvalidDrift {
                got: self.coeffs.len(),
            });
        }
        Ok(())
    }

    pub fn tau_at(&self, step: usize, steps: usize) -> f64 {
        let u = (step as f64 + 0.5) / steps as f64;
        let mut tau = 0.0;
        for &c in self.coeffs.iter().rev() {
            tau = tau * u + c;
        }
        tau
    }
}

/// A Monte Carlo estimate with its running-mean trace.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub ci95_half_width: f64,
    pub sample_variance: f64,
    pub n_used: usize,
    /// `(observation count, running estimate)` at every checkpoint: each of
    /// the first 1000 observations, then geometrically spaced (ratio 1.01).
    pub running_means: Vec<(usize, f64)>,
}

const CI95_FACTOR: f64 = 1.959964;

fn checkpoints(n: usize) -> Vec<usize> {
    let dense = n.min(1000);
    let mut points: Vec<usize> = (1..=dense).collect();
    let mut m = dense;
    while m < n {
        m = ((m as f64 * 1.01).ceil() as usize).max(m + 1).min(n);
        points.push(m);
    }
    points
}

fn estimate_from_samples(samples: &[f64]) -> McEstimate {
    let n = samples.len();
    let marks = checkpoints(n);
    let mut running_means = Vec::with_capacity(marks.len());
    let mut next_mark = 0;
    let mut sum = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        sum += x;
        if next_mark < marks.len() && marks[next_mark] == i + 1 {
            running_means.push((i + 1, sum / (i + 1) as f64));
            next_mark += 1;
        }
    }
    let value = running_means.last().expect("n >= 1").1;
    let variance = sums::variance_about(samples, value);
    let std_error = (variance / n as f64).sqrt();
    McEstimate {
        value,
        std_error,
        ci95_half_width: CI95_FACTOR * std_error,
        sample_variance: variance,
        n_used: n,
        running_means,
    }
}

// ---------------------------------------------------------------------------
// Path engine
// ---------------------------------------------------------------------------

// Terminal spot and accumulated log-likelihood-ratio for one path, stepping
// the exact lognormal recursion with the drifted normal Z = z + tau:
//   S <- S exp((r - vol^2/2) dt + vol sqrt(dt) Z),  log w += -tau Z + tau^2/2
fn path_terminal(cfg: &McConfig, drift: &DriftSpec, path_index: u64) -> (f64, f64) {
    let dt = cfg.maturity() / cfg.steps as f64;
    let sqrt_dt = dt.sqrt();
    let drift_per_step = (cfg.rate - 0.5 * cfg.vol * cfg.vol) * dt;
    let mut log_spot_growth = 0.0;
    let mut log_weight = 0.0;
    for step in 0..cfg.steps {
        let z = draw_shocks(cfg.master_seed, path_index, step as u64, 0).z0;
        let tau = drift.tau_at(step, cfg.steps);
        let shifted = z + tau;
        log_spot_growth += drift_per_step + cfg.vol * sqrt_dt * shifted;
        log_weight += -tau * shifted + 0.5 * tau * tau;
    }
    (cfg.spot * log_spot_growth.exp(), log_weight)
}

// Discounted weighted payoff samples plus the weights themselves.
pub(crate) fn importance_samples(
    cfg: &McConfig,
    drift: &DriftSpec,
) -> Result<(Vec<f64>, Vec<f64>), McError> {
    let disc = cfg.discount();
    let rows: Vec<(f64, f64)> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|path_index| {
            let (terminal, log_weight) = path_terminal(cfg, drift, path_index);
            let weight = log_weight.exp();
            let sample = disc * cfg.payoff(terminal) * weight;
            if sample.is_finite() && weight.is_finite() {
                Ok((sample, weight))
            } else {
                Err(McError::WeightOverflow { path_index })
            }
        })
        .collect::<Result<_, _>>()?;
    let samples = rows.iter().map(|r| r.0).collect();
    let weights = rows.iter().map(|r| r.1).collect();
    Ok((samples, weights))
}

/// Plain Monte Carlo: mean of the discounted payoff over exact GBM paths.
pub fn mc_basic(cfg: &McConfig) -> Result<McEstimate, McError> {
    cfg.validate()?;
    let (samples, _) = importance_samples(cfg, &DriftSpec::constant(0.0))?;
    Ok(estimate_from_samples(&samples))
}

/// Importance sampling: every step's driving normal is shifted by the drift
/// polynomial and the payoff is reweighted by the likelihood ratio, leaving
/// the estimator unbiased. A zero drift reproduces [`mc_basic`] bit-for-bit.
pub fn mc_importance(cfg: &McConfig, drift: &DriftSpec) -> Result<McEstimate, McError> {
    cfg.validate()?;
    drift.validate()?;
    let (samples, _) = importance_samples(cfg, drift)?;
    Ok(estimate_from_samples(&samples))
}

// ---------------------------------------------------------------------------
// Drift optimization
// ---------------------------------------------------------------------------

const MIN_PILOT_PATHS: usize = 1000;
const SCALAR_GRID_POINTS: usize = 41;
const SCALAR_GRID_HALF_WIDTH: f64 = 3.0;

// The pilot objective: the estimator's second moment, written as an
// expectation under the unshifted measure,
//   m2(tau) = E[ payoff(z)^2 exp(sum_s(-tau_s z_s + tau_s^2/2)) ],
// so the pilot draws and payoffs are fixed once and only the weights move
// with the coefficients. Paths with zero payoff drop out entirely.
struct PilotObjective {
    // (payoff^2, per-step standard draws) for pilot paths with payoff != 0.
    rows: Vec<(f64, Vec<f64>)>,
    n_pilot: f64,
    steps: usize,
    payoff_spread: f64,
}

impl PilotObjective {
    fn build(cfg: &McConfig, pilot_paths: usize, pilot_seed: u64) -> Self {
        let dt = cfg.maturity() / cfg.steps as f64;
        let sqrt_dt = dt.sqrt();
        let drift_per_step = (cfg.rate - 0.5 * cfg.vol * cfg.vol) * dt;
        let disc = cfg.discount();
        let all: Vec<(f64, Vec<f64>)> = (0..pilot_paths as u64)
            .into_par_iter()
            .map(|path_index| {
                let draws: Vec<f64> = (0..cfg.steps)
                    .map(|s| draw_shocks(pilot_seed, path_index, s as u64, 0).z0)
                    .collect();
                let growth: f64 = draws
                    .iter()
                    .map(|z| drift_per_step + cfg.vol * sqrt_dt * z)
                    .sum();
                let payoff = disc * cfg.payoff(cfg.spot * growth.exp());
                (payoff, draws)
            })
            .collect();
        let lo = all.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
        let hi = all.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
        let rows = all
            .into_iter()
            .filter(|(payoff, _)| *payoff != 0.0)
            .map(|(payoff, draws)| (payoff * payoff, draws))
            .collect();
        Self {
            rows,
            n_pilot: pilot_paths as f64,
            steps: cfg.steps,
            payoff_spread: hi - lo,
        }
    }

    fn payoff_is_constant(&self) -> bool {
        self.payoff_spread == 0.0
    }

    fn eval(&self, coeffs: &[f64]) -> f64 {
        let taus: Vec<f64> = (0..self.steps)
            .map(|s| {
                let u = (s as f64 + 0.5) / self.steps as f64;
                coeffs.iter().rev().fold(0.0, |acc, &c| acc * u + c)
            })
            .collect();
        let half_tau_sq: f64 = taus.iter().map(|t| 0.5 * t * t).sum();
        let mut sum = 0.0;
        for (pay_sq, draws) in &self.rows {
            let dot: f64 = taus.iter().zip(draws).map(|(t, z)| t * z).sum();
            sum += pay_sq * (half_tau_sq - dot).exp();
        }
        sum / self.n_pilot
    }
}

// Compact Nelder-Mead for the 1-3 dimensional drift problems.
fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    start: &[f64],
    initial_step: f64,
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let dim = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((start.to_vec(), f(start)));
    for i in 0..dim {
        let mut v = start.to_vec();
        v[i] += initial_step;
        let fv = f(&v);
        simplex.push((v, fv));
    }

    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        if (worst - best).abs() <= 1e-12 * (1.0 + best.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|(v, _)| v[j]).sum::<f64>() / dim as f64)
            .collect();
        let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
            a.iter().zip(b).map(|(&x, &y)| x + t * (y - x)).collect()
        };
        let reflected = lerp(&centroid, &simplex[dim].0, -1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = lerp(&centroid, &simplex[dim].0, -2.0);
            let fe = f(&expanded);
            simplex[dim] = if fe < fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (reflected, fr);
        } else {
            let contracted = lerp(&centroid, &simplex[dim].0, 0.5);
            let fc = f(&contracted);
            if fc < simplex[dim].1 {
                simplex[dim] = (contracted, fc);
            } else {
                let best_point = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    entry.0 = lerp(&best_point, &entry.0, 0.5);
                    entry.1 = f(&entry.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0].clone()
}

/// Finds drift coefficients minimizing the pilot-sample second moment of the
/// weighted discounted payoff. The pilot draws are fixed by `pilot_seed`, so
/// the objective and hence the result are deterministic. Searches with
/// Nelder-Mead from the zero vector and from the best constant drift on a
/// 41-point grid over [-3, 3].
pub fn optimize_drift(
    cfg: &McConfig,
    degree: usize,
    pilot_paths: usize,
    pilot_seed: u64,
) -> Result<DriftSpec, McError> {
    cfg.validate()?;
    if degree > 2 {
        return Err(McError::InvalidDegree { degree });
    }
    if pilot_paths < MIN_PILOT_PATHS {
        return Err(McError::TooFewPilotPaths {
            required: MIN_PILOT_PATHS,
            got: pilot_paths,
        });
    }
    let objective = PilotObjective::build(cfg, pilot_paths, pilot_seed);
    if objective.payoff_is_constant() {
        // Nothing to reduce; break the tie toward no measure change.
        return Ok(DriftSpec::zero(degree));
    }

    let mut best_scalar = 0.0;
    let mut best_scalar_value = f64::INFINITY;
    for i in 0..SCALAR_GRID_POINTS {
        let c0 = -SCALAR_GRID_HALF_WIDTH
            + 2.0 * SCALAR_GRID_HALF_WIDTH * i as f64 / (SCALAR_GRID_POINTS - 1) as f64;
        let value = objective.eval(&[c0]);
        if value < best_scalar_value {
            best_scalar_value = value;
            best_scalar = c0;
        }
    }

    let f = |coeffs: &[f64]| objective.eval(coeffs);
    let mut starts = vec![vec![0.0; degree + 1]];
    let mut seeded = vec![0.0; degree + 1];
    seeded[0] = best_scalar;
    starts.push(seeded);

    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in &starts {
        if !f(start).is_finite() {
            continue;
        }
        let candidate = nelder_mead(&f, start, 0.25, 400 * (degree + 1));
        if candidate.1.is_finite()
            && best.as_ref().map_or(true, |(_, v)| candidate.1 < *v)
        {
            best = Some(candidate);
        }
    }
    let (coeffs, _) = best.ok_or(McError::OptimizationFailure)?;
    Ok(DriftSpec { coeffs })
}

/// Pilot objective value for externally supplied coefficients; used to
/// compare optimized drifts of different degrees on the same pilot sample.
pub fn pilot_second_moment(
    cfg: &McConfig,
    drift: &DriftSpec,
    pilot_paths: usize,
    pilot_seed: u64,
) -> Result<f64, McError> {
    cfg.validate()?;
    drift.validate()?;
    if pilot_paths < MIN_PILOT_PATHS {
        return Err(McError::TooFewPilotPaths {
            required: MIN_PILOT_PATHS,
            got: pilot_paths,
        });
    }
    let objective = PilotObjective::build(cfg, pilot_paths, pilot_seed);
    Ok(objective.eval(&drift.coeffs))
}

// ---------------------------------------------------------------------------
// Antithetic variates
// ---------------------------------------------------------------------------

// Pair-mean samples over a custom terminal payoff; the twin path negates
// every normal draw.
pub(crate) fn antithetic_pair_samples(
    cfg: &McConfig,
    payoff: impl Fn(f64) -> f64 + Sync,
) -> Vec<f64> {
    let pairs = cfg.n_paths / 2;
    let dt = cfg.maturity() / cfg.steps as f64;
    let sqrt_dt = dt.sqrt();
    let drift_per_step = (cfg.rate - 0.5 * cfg.vol * cfg.vol) * dt;
    let disc = cfg.discount();
    (0..pairs as u64)
        .into_par_iter()
        .map(|pair_index| {
            let mut growth = 0.0;
            let mut growth_twin = 0.0;
            for step in 0..cfg.steps {
                let z = draw_shocks(cfg.master_seed, pair_index, step as u64, 0).z0;
                growth += drift_per_step + cfg.vol * sqrt_dt * z;
                growth_twin += drift_per_step - cfg.vol * sqrt_dt * z;
            }
            let a = disc * payoff(cfg.spot * growth.exp());
            let b = disc * payoff(cfg.spot * growth_twin.exp());
            0.5 * (a + b)
        })
        .collect()
}

/// Antithetic variates: paths in pairs sharing a draw stream with all normals
/// negated in the twin; statistics are over the pair means, so `n_used` is
/// half the path budget.
pub fn mc_antithetic(cfg: &McConfig) -> Result<McEstimate, McError> {
    cfg.validate()?;
    if cfg.n_paths % 2 != 0 {
        return Err(McError::OddPathCount {
            n_paths: cfg.n_paths,
        });
    }
    let samples = antithetic_pair_samples(cfg, |terminal| cfg.payoff(terminal));
    Ok(estimate_from_samples(&samples))
}

// ---------------------------------------------------------------------------
// Control variates
// ---------------------------------------------------------------------------

fn terminal_spots(cfg: &McConfig, n_paths: usize, master_seed: u64) -> Vec<f64> {
    let run = McConfig {
        n_paths,
        master_seed,
        ..cfg.clone()
    };
    let zero = DriftSpec::constant(0.0);
    (0..n_paths as u64)
        .into_par_iter()
        .map(|path_index| path_terminal(&run, &zero, path_index).0)
        .collect()
}

pub(crate) fn control_variate_samples(
    cfg: &McConfig,
    pilot_paths: usize,
    pilot_seed: u64,
    payoff: impl Fn(f64) -> f64 + Sync,
) -> Result<Vec<f64>, McError> {
    if pilot_paths < MIN_PILOT_PATHS {
        return Err(McError::TooFewPilotPaths {
            required: MIN_PILOT_PATHS,
            got: pilot_paths,
        });
    }
    let disc = cfg.discount();
    // The control is the discounted terminal spot, a martingale with known
    // expectation equal to today's spot.
    let control_mean = cfg.spot;

    // Coefficient from an independent pilot sample keeps the estimator
    // unbiased: b = Cov(Y, control) / Var(control).
    let pilot_terminals = terminal_spots(cfg, pilot_paths, pilot_seed);
    let pilot_y: Vec<f64> = pilot_terminals.iter().map(|&s| disc * payoff(s)).collect();
    let pilot_c: Vec<f64> = pilot_terminals.iter().map(|&s| disc * s).collect();
    let my = sums::block_sum(&pilot_y) / pilot_paths as f64;
    let mc = sums::block_sum(&pilot_c) / pilot_paths as f64;
    let mut cov = 0.0;
    let mut var_c = 0.0;
    for (y, c) in pilot_y.iter().zip(&pilot_c) {
        cov += (y - my) * (c - mc);
        var_c += (c - mc) * (c - mc);
    }
    if var_c == 0.0 {
        return Err(McError::DegenerateControl);
    }
    let b = cov / var_c;

    let terminals = terminal_spots(cfg, cfg.n_paths, cfg.master_seed);
    Ok(terminals
        .iter()
        .map(|&s| disc * payoff(s) - b * (disc * s - control_mean))
        .collect())
}

/// Control variate estimator: regresses the discounted terminal spot (known
/// expectation: today's spot) out of the payoff. The regression coefficient
/// comes from a separate pilot seed so the main-sample estimator stays
/// unbiased.
pub fn mc_control_variate(
    cfg: &McConfig,
    pilot_paths: usize,
    pilot_seed: u64,
) -> Result<McEstimate, McError> {
    cfg.validate()?;
    let samples =
        control_variate_samples(cfg, pilot_paths, pilot_seed, |terminal| cfg.payoff(terminal))?;
    Ok(estimate_from_samples(&samples))
}

// ---------------------------------------------------------------------------
// Estimator comparison
// ---------------------------------------------------------------------------

/// The estimator families the comparison table knows how to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Basic,
    /// Importance sampling with a drift optimized at this polynomial degree.
    ImportanceOptimized { degree: usize },
    Antithetic,
    ControlVariate,
}

impl EstimatorKind {
    pub fn label(&self) -> String {
        match self {
            EstimatorKind::Basic => "basic".into(),
            EstimatorKind::ImportanceOptimized { degree } => format!("is{degree}"),
            EstimatorKind::Antithetic => "antithetic".into(),
            EstimatorKind::ControlVariate => "cv".into(),
        }
    }
}

/// One comparison row: the estimate, its cost, and the variance-reduction
/// factor relative to the basic estimator at the same path budget.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub label: String,
    pub estimate: McEstimate,
    pub wall_time: Duration,
    pub variance_reduction_vs_basic: f64,
    /// The optimized drift, for the importance-sampling rows.
    pub drift: Option<DriftSpec>,
}

// Pilot streams must not overlap the main sample's seed.
pub(crate) fn derive_pilot_seed(master_seed: u64) -> u64 {
    mix64(master_seed ^ 0x7069_6C6F_74u64) // "pilot"
}

/// Runs each requested estimator on the same config (one seed family) and
/// tabulates value, error bars, variance, cost, and the variance-reduction
/// factor against basic.
pub fn compare_estimators(
    cfg: &McConfig,
    kinds: &[EstimatorKind],
    pilot_paths: usize,
) -> Result<Vec<ComparisonRow>, McError> {
    cfg.validate()?;
    let pilot_seed = derive_pilot_seed(cfg.master_seed);

    let basic_start = Instant::now();
    let basic = mc_basic(cfg)?;
    let basic_time = basic_start.elapsed();
    let basic_variance = basic.sample_variance;

    let mut rows = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let start = Instant::now();
        let (estimate, wall_time, drift) = match kind {
            EstimatorKind::Basic => (basic.clone(), basic_time, None),
            EstimatorKind::ImportanceOptimized { degree } => {
                let drift = optimize_drift(cfg, *degree, pilot_paths, pilot_seed)?;
                let est = mc_importance(cfg, &drift)?;
                (est, start.elapsed(), Some(drift))
            }
            EstimatorKind::Antithetic => (mc_antithetic(cfg)?, start.elapsed(), None),
            EstimatorKind::ControlVariate => (
                mc_control_variate(cfg, pilot_paths, pilot_seed)?,
                start.elapsed(),
                None,
            ),
        };
        let variance_reduction_vs_basic = basic_variance / estimate.sample_variance;
        rows.push(ComparisonRow {
            label: kind.label(),
            estimate,
            wall_time,
            variance_reduction_vs_basic,
            drift,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const BENCH_PRICE: f64 = 10.450583572185567;

    fn benchmark_cfg(n_paths: usize) -> McConfig {
        let mut cfg = McConfig::new(100.0, OptionSpec::call(100.0, 1.0), 0.05, 0.2);
        cfg.n_paths = n_paths;
        cfg.master_seed = 20_240_601;
        cfg
    }

    #[test]
    fn config_validation_names_field_and_constraint() {
        let mut cfg = benchmark_cfg(1);
        assert_eq!(
            cfg.validate(),
            Err(McError::InvalidConfig {
                field: "n_paths",
                constraint: "n_paths >= 2"
            })
        );
        cfg.n_paths = 100;
        cfg.vol = 0.0;
        assert!(cfg.validate().is_err());
        cfg.allow_zero_vol = true;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn drift_polynomial_evaluates_in_normalized_time() {
        let drift = DriftSpec {
            coeffs: vec![1.0, 2.0, 4.0],
        };
        // u = (0 + 0.5) / 2 = 0.25 at the first of two steps.
        assert_abs_diff_eq!(drift.tau_at(0, 2), 1.0 + 0.5 + 0.25, epsilon = 1e-15);
        assert_eq!(DriftSpec::zero(2).coeffs.len(), 3);
        assert!(DriftSpec { coeffs: vec![] }.validate().is_err());
        assert!(DriftSpec {
            coeffs: vec![0.0; 4]
        }
        .validate()
        .is_err());
    }

    #[test]
    fn degenerate_zero_vol_run_prices_the_deterministic_forward_payoff() {
        let mut cfg = McConfig::new(100.0, OptionSpec::call(90.0, 1.0), 0.05, 0.0);
        cfg.allow_zero_vol = true;
        cfg.n_paths = 64;
        let est = mc_basic(&cfg).unwrap();
        let expected = (-0.05f64).exp() * (100.0 * (0.05f64).exp() - 90.0);
        assert_abs_diff_eq!(est.value, expected, epsilon = 1e-12);
        // Zero up to the rounding of the running mean.
        assert!(est.sample_variance <= 1e-24, "{}", est.sample_variance);
    }

    #[test]
    fn benchmark_estimate_is_within_four_standard_errors_of_the_closed_form() {
        let est = mc_basic(&benchmark_cfg(100_000)).unwrap();
        assert!(
            (est.value - BENCH_PRICE).abs() <= 4.0 * est.std_error,
            "value {} se {}",
            est.value,
            est.std_error
        );
    }

    #[test]
    fn zero_drift_importance_sampling_is_bit_identical_to_basic() {
        let cfg = benchmark_cfg(20_000);
        let basic = mc_basic(&cfg).unwrap();
        for degree in 0..=2 {
            let is = mc_importance(&cfg, &DriftSpec::zero(degree)).unwrap();
            assert_eq!(basic, is);
        }
    }

    #[test]
    fn importance_sampling_stays_unbiased_under_arbitrary_drift() {
        let mut cfg = benchmark_cfg(100_000);
        cfg.steps = 4;
        let drift = DriftSpec {
            coeffs: vec![0.8, -0.5],
        };
        let est = mc_importance(&cfg, &drift).unwrap();
        assert!(
            (est.value - BENCH_PRICE).abs() <= 4.0 * est.std_error,
            "value {} se {}",
            est.value,
            est.std_error
        );
    }

    #[test]
    fn importance_weights_average_to_one() {
        let mut cfg = benchmark_cfg(100_000);
        cfg.steps = 2;
        let drift = DriftSpec {
            coeffs: vec![1.0, 0.5],
        };
        let (_, weights) = importance_samples(&cfg, &drift).unwrap();
        let (mean, var) = crate::sums::mean_and_variance(&weights);
        let se = (var / weights.len() as f64).sqrt();
        assert!(
            (mean - 1.0).abs() <= 4.0 * se,
            "weight mean {mean}, se {se}"
        );
    }

    #[test]
    fn huge_drift_reports_weight_overflow() {
        let mut cfg = benchmark_cfg(1000);
        cfg.steps = 1;
        let drift = DriftSpec {
            coeffs: vec![1e6],
        };
        assert!(matches!(
            mc_importance(&cfg, &drift),
            Err(McError::WeightOverflow { .. })
        ));
    }

    #[test]
    fn running_means_record_the_sawtooth_of_a_deep_otm_strike() {
        let mut cfg = benchmark_cfg(100_000);
        cfg.option = OptionSpec::call(200.0, 1.0);
        let est = mc_basic(&cfg).unwrap();
        let mut ups = 0usize;
        let mut downs = 0usize;
        for pair in est.running_means.windows(2) {
            if pair[1].1 > pair[0].1 {
                ups += 1;
            } else if pair[1].1 < pair[0].1 {
                downs += 1;
            }
        }
        assert!(ups >= 1, "no in-the-money jumps recorded");
        assert!(
            downs >= 10 * ups,
            "expected long decays between jumps: {downs} downs vs {ups} ups"
        );
        assert_eq!(est.running_means.last().unwrap().0, 100_000);
    }

    #[test]
    fn checkpoints_are_dense_then_geometric_and_end_at_n() {
        let marks = checkpoints(5000);
        assert_eq!(marks[..1000], (1..=1000).collect::<Vec<_>>()[..]);
        assert_eq!(*marks.last().unwrap(), 5000);
        assert!(marks.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(checkpoints(5), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn optimizer_returns_zero_drift_for_a_flat_payoff() {
        let mut cfg = McConfig::new(100.0, OptionSpec::call(90.0, 1.0), 0.05, 0.0);
        cfg.allow_zero_vol = true;
        cfg.n_paths = 16;
        let drift = optimize_drift(&cfg, 1, 2000, 7).unwrap();
        assert_eq!(drift.coeffs, vec![0.0, 0.0]);
    }

    #[test]
    fn optimized_scalar_drift_lands_in_the_fine_grid_bracket() {
        let mut cfg = benchmark_cfg(10_000);
        cfg.option = OptionSpec::call(200.0, 1.0);
        let pilot_paths = 20_000;
        let pilot_seed = 99;
        let drift = optimize_drift(&cfg, 0, pilot_paths, pilot_seed).unwrap();
        // Oracle: 401-point scan of the same pilot objective over a range
        // wide enough to bracket the continuous minimizer.
        let objective = PilotObjective::build(&cfg, pilot_paths, pilot_seed);
        let grid = |i: usize| -6.0 + 12.0 * i as f64 / 400.0;
        let mut best_i = 0usize;
        let mut best_v = f64::INFINITY;
        for i in 0..=400 {
            let v = objective.eval(&[grid(i)]);
            if v < best_v {
                best_v = v;
                best_i = i;
            }
        }
        assert!(best_i > 0 && best_i < 400, "oracle grid does not bracket");
        let (lo, hi) = (grid(best_i - 1), grid(best_i + 1));
        assert!(
            drift.coeffs[0] >= lo && drift.coeffs[0] <= hi,
            "optimized {} outside bracket [{lo}, {hi}]",
            drift.coeffs[0]
        );
    }

    #[test]
    fn antithetic_pair_means_cancel_a_linear_payoff_exactly() {
        let mut cfg = benchmark_cfg(10_000);
        cfg.steps = 1;
        // Payoff linear in the single driving normal, reconstructed from the
        // terminal spot: z = (ln(S_T/S_0) - (r - vol^2/2)) / vol.
        let m = (cfg.rate - 0.5 * cfg.vol * cfg.vol) * cfg.option.maturity;
        let s0 = cfg.spot;
        let vol_sqrt_t = cfg.vol * cfg.option.maturity.sqrt();
        let samples = antithetic_pair_samples(&cfg, move |terminal| {
            let z = ((terminal / s0).ln() - m) / vol_sqrt_t;
            3.0 + 2.0 * z
        });
        let (_, variance) = crate::sums::mean_and_variance(&samples);
        assert!(variance <= 1e-25, "variance {variance}");
    }

    #[test]
    fn antithetic_benchmark_estimate_is_unbiased_and_uses_half_the_observations() {
        let est = mc_antithetic(&benchmark_cfg(100_000)).unwrap();
        assert_eq!(est.n_used, 50_000);
        assert!((est.value - BENCH_PRICE).abs() <= 4.0 * est.std_error);
    }

    #[test]
    fn antithetic_rejects_odd_path_counts() {
        let cfg = benchmark_cfg(10_001);
        assert!(matches!(
            mc_antithetic(&cfg),
            Err(McError::OddPathCount { n_paths: 10_001 })
        ));
    }

    #[test]
    fn control_variate_on_itself_has_zero_variance() {
        let cfg = benchmark_cfg(5_000);
        let samples = control_variate_samples(&cfg, 2_000, 77, |s| s).unwrap();
        let (mean, variance) = crate::sums::mean_and_variance(&samples);
        assert_abs_diff_eq!(mean, 100.0, epsilon = 1e-9);
        assert!(variance <= 1e-18, "variance {variance}");
    }

    #[test]
    fn control_variate_with_constant_payoff_recovers_the_plain_mean() {
        let cfg = benchmark_cfg(5_000);
        let samples = control_variate_samples(&cfg, 2_000, 77, |_| 4.2).unwrap();
        let (mean, variance) = crate::sums::mean_and_variance(&samples);
        let disc = (-0.05f64).exp();
        // b is near zero, so the estimate is near the constant discounted payoff.
        assert_abs_diff_eq!(mean, disc * 4.2, epsilon = 1e-3);
        assert!(variance < 1.0);
    }

    #[test]
    fn control_variate_benchmark_estimate_is_unbiased() {
        let est = mc_control_variate(&benchmark_cfg(100_000), 4_000, 77).unwrap();
        assert!((est.value - BENCH_PRICE).abs() <= 4.0 * est.std_error);
    }

    #[test]
    fn degenerate_control_is_reported() {
        let mut cfg = McConfig::new(100.0, OptionSpec::call(90.0, 1.0), 0.05, 0.0);
        cfg.allow_zero_vol = true;
        cfg.n_paths = 16;
        assert!(matches!(
            mc_control_variate(&cfg, 2_000, 7),
            Err(McError::DegenerateControl)
        ));
    }

    #[test]
    fn ci_half_width_shrinks_like_the_square_root_of_the_budget() {
        let small = mc_basic(&benchmark_cfg(10_000)).unwrap();
        let large = mc_basic(&benchmark_cfg(1_000_000)).unwrap();
        let ratio = small.ci95_half_width / large.ci95_half_width;
        assert!(
            (8.0..=12.5).contains(&ratio),
            "CI shrink ratio {ratio} outside [8, 12.5]"
        );
    }

    #[test]
    fn estimates_are_bit_identical_across_runs_and_worker_counts() {
        let cfg = benchmark_cfg(30_000);
        let a = mc_basic(&cfg).unwrap();
        let b = mc_basic(&cfg).unwrap();
        assert_eq!(a, b);
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| mc_basic(&cfg).unwrap());
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap()
            .install(|| mc_basic(&cfg).unwrap());
        assert_eq!(single, many);
        assert_eq!(a, single);
    }

    #[test]
    fn comparison_table_has_consistent_rows() {
        let mut cfg = benchmark_cfg(20_000);
        cfg.steps = 2;
        let kinds = [
            EstimatorKind::Basic,
            EstimatorKind::ImportanceOptimized { degree: 0 },
            EstimatorKind::Antithetic,
            EstimatorKind::ControlVariate,
        ];
        let rows = compare_estimators(&cfg, &kinds, 4_000).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].label, "basic");
        assert_eq!(rows[0].variance_reduction_vs_basic, 1.0);
        assert_eq!(rows[1].label, "is0");
        assert!(rows[1].drift.is_some());
        // All estimators target the same price: pairwise agreement within
        // four combined standard errors.
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                let (a, b) = (&rows[i].estimate, &rows[j].estimate);
                let combined = (a.std_error * a.std_error + b.std_error * b.std_error).sqrt();
                assert!(
                    (a.value - b.value).abs() <= 4.0 * combined,
                    "{} vs {} disagree",
                    rows[i].label,
                    rows[j].label
                );
            }
        }
    }
}

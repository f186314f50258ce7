//! Finite-difference derivative approximation with empirical convergence-order
//! estimation, and grid solvers for the Black-Scholes PDE benchmarked against
//! the closed form.

use crate::analytics::{bs_quote, AnalyticsError, OptionKind, OptionSpec, PricingInputs};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PdeError {
    #[error("step size must be > 0, got {h}")]
    InvalidStep { h: f64 },
    #[error("function evaluation at {x} was not finite")]
    NonFiniteEvaluation { x: f64 },
    #[error("need at least {required} step sizes, got {got}")]
    TooFewSteps { required: usize, got: usize },
    #[error("step sizes must be strictly decreasing")]
    StepsNotDecreasing,
    #[error(
        "error {error:.3e} at h = {h:.3e} is in the exact regime (below 100 eps relative); \
         convergence order is undefined"
    )]
    ExactRegime { h: f64, error: f64 },
    #[error("invalid grid: {reason}")]
    InvalidGrid { reason: String },
    #[error(
        "explicit scheme unstable at node {node}: dt * (vol^2 j^2 + r) = {value:.4} > 1; \
         increase n_time or use an implicit scheme"
    )]
    Unstable { node: usize, value: f64 },
    #[error("tridiagonal solve hit a zero pivot at row {row}")]
    SingularSystem { row: usize },
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
}

/// First-derivative stencil choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdScheme {
    Forward,
    Backward,
    Central,
}

/// Single finite-difference estimate of `f'(x)` at step `h`.
pub fn fd_diff(
    f: impl Fn(f64) -> f64,
    x: f64,
    h: f64,
    scheme: FdScheme,
) -> Result<f64, PdeError> {
    if !(h.is_finite() && h > 0.0) {
        return Err(PdeError::InvalidStep { h });
    }
    let eval = |x: f64| -> Result<f64, PdeError> {
        let y = f(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(PdeError::NonFiniteEvaluation { x })
        }
    };
    Ok(match scheme {
        FdScheme::Forward => (eval(x + h)? - eval(x)?) / h,
        FdScheme::Backward => (eval(x)? - eval(x - h)?) / h,
        FdScheme::Central => (eval(x + h)? - eval(x - h)?) / (2.0 * h),
    })
}

/// Empirical convergence order of a stencil on a ladder of step sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderEstimate {
    /// Least-squares slope of log(error) against log(h).
    pub order: f64,
    pub r_squared: f64,
    /// The `(h, absolute error)` table the fit was made from.
    pub samples: Vec<(f64, f64)>,
}

const MIN_LADDER_LEN: usize = 4;

/// Fits `log(error) ~ order * log(h)` over a strictly decreasing step ladder.
///
/// If the caller does not supply the true derivative, a Richardson-extrapolated
/// central difference at `h_min / 2` serves as the reference. Errors at or
/// below 100 machine epsilons (relative to the reference) mean the stencil is
/// exact for `f` and no order can be measured; that case is an error rather
/// than a garbage fit.
pub fn estimate_order(
    f: impl Fn(f64) -> f64,
    x: f64,
    scheme: FdScheme,
    h_seq: &[f64],
    true_derivative: Option<f64>,
) -> Result<OrderEstimate, PdeError> {
    if h_seq.len() < MIN_LADDER_LEN {
        return Err(PdeError::TooFewSteps {
            required: MIN_LADDER_LEN,
            got: h_seq.len(),
        });
    }
    for pair in h_seq.windows(2) {
        if !(pair[1] < pair[0]) {
            return Err(PdeError::StepsNotDecreasing);
        }
    }
    if !(h_seq[h_seq.len() - 1].is_finite() && h_seq[h_seq.len() - 1] > 0.0) {
        return Err(PdeError::InvalidStep {
            h: h_seq[h_seq.len() - 1],
        });
    }

    let reference = match true_derivative {
        Some(d) => d,
        None => {
            let h = 0.5 * h_seq[h_seq.len() - 1];
            let coarse = fd_diff(&f, x, h, FdScheme::Central)?;
            let fine = fd_diff(&f, x, 0.5 * h, FdScheme::Central)?;
            (4.0 * fine - coarse) / 3.0
        }
    };
    let scale = reference.abs().max(1.0);

    let mut samples = Vec::with_capacity(h_seq.len());
    for &h in h_seq {
        let err = (fd_diff(&f, x, h, scheme)? - reference).abs();
        if err <= 100.0 * f64::EPSILON * scale {
            return Err(PdeError::ExactRegime { h, error: err });
        }
        samples.push((h, err));
    }

    let logs: Vec<(f64, f64)> = samples.iter().map(|&(h, e)| (h.ln(), e.ln())).collect();
    let n = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - mean_y) * (p.1 - mean_y)).sum();
    let order = sxy / sxx;
    let ss_res: f64 = logs
        .iter()
        .map(|p| {
            let fit = mean_y + order * (p.0 - mean_x);
            (p.1 - fit) * (p.1 - fit)
        })
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };

    Ok(OrderEstimate {
        order,
        r_squared,
        samples,
    })
}

/// Time-marching scheme for the PDE grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridScheme {
    Explicit,
    Implicit,
    CrankNicolson,
}

/// Uniform grid description: `n_space` nodes on `[0, s_max]`, `n_time` steps
/// on `[0, maturity]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub s_max: f64,
    pub n_space: usize,
    pub n_time: usize,
    pub scheme: GridScheme,
}

/// Solved grid. `values[m][j]` is the option value at time step `m` (row 0 is
/// valuation time, the last row is the terminal payoff) and space node `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeSolution {
    pub values: Vec<Vec<f64>>,
    pub s_max: f64,
    /// Linear interpolation of the valuation-time row at the requested spot.
    pub price_at_spot: f64,
    /// Filled by [`PdeSolution::fill_error_vs_analytic`].
    pub max_abs_error_vs_analytic: Option<f64>,
}

impl PdeSolution {
    fn node_spacing(&self) -> f64 {
        self.s_max / (self.values[0].len() - 1) as f64
    }

    /// Maximum absolute gap between the valuation-time row and the closed
    /// form, over all interior nodes. Stores and returns the result.
    pub fn fill_error_vs_analytic(
        &mut self,
        opt: &OptionSpec,
        rate: f64,
        vol: f64,
    ) -> Result<f64, PdeError> {
        let ds = self.node_spacing();
        let mut worst = 0.0f64;
        for (j, &value) in self.values[0].iter().enumerate().skip(1) {
            if j == self.values[0].len() - 1 {
                break;
            }
            let spot = j as f64 * ds;
            let exact = bs_quote(&PricingInputs::new(spot, rate, vol, opt.maturity), opt)?.price;
            worst = worst.max((value - exact).abs());
        }
        self.max_abs_error_vs_analytic = Some(worst);
        Ok(worst)
    }
}

fn payoff(spot: f64, opt: &OptionSpec) -> f64 {
    match opt.kind {
        OptionKind::Call => (spot - opt.strike).max(0.0),
        OptionKind::Put => (opt.strike - spot).max(0.0),
    }
}

// Dirichlet boundaries: calls are worthless at S = 0 and worth
// S_max - K e^{-r (T - t)} at the far edge; puts are mirrored.
fn boundary_values(opt: &OptionSpec, rate: f64, s_max: f64, tau: f64) -> (f64, f64) {
    let discounted_strike = opt.strike * (-rate * tau).exp();
    match opt.kind {
        OptionKind::Call => (0.0, (s_max - discounted_strike).max(0.0)),
        OptionKind::Put => (discounted_strike, 0.0),
    }
}

/// Thomas algorithm for a tridiagonal system; `sub[0]` and `sup[n-1]` are
/// ignored. Overwrites `rhs` with the solution.
fn solve_tridiagonal(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    rhs: &mut [f64],
) -> Result<(), PdeError> {
    let n = rhs.len();
    let mut c_prime = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        return Err(PdeError::SingularSystem { row: 0 });
    }
    c_prime[0] = sup[0] / denom;
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag[i] - sub[i] * c_prime[i - 1];
        if denom == 0.0 {
            return Err(PdeError::SingularSystem { row: i });
        }
        c_prime[i] = sup[i] / denom;
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c_prime[i] * rhs[i + 1];
    }
    Ok(())
}

/// Solves the Black-Scholes PDE on a uniform grid, marching backward from the
/// terminal payoff, and interpolates the valuation-time row at `spot`.
pub fn solve_bs_pde(
    opt: &OptionSpec,
    rate: f64,
    vol: f64,
    spot: f64,
    grid: &GridSpec,
) -> Result<PdeSolution, PdeError> {
    opt.validate()?;
    if !(vol.is_finite() && vol > 0.0) {
        return Err(PdeError::InvalidGrid {
            reason: format!("vol must be > 0, got {vol}"),
        });
    }
    if grid.n_space < 3 {
        return Err(PdeError::InvalidGrid {
            reason: format!("n_space must be >= 3, got {}", grid.n_space),
        });
    }
    if grid.n_time < 1 {
        return Err(PdeError::InvalidGrid {
            reason: "n_time must be >= 1".into(),
        });
    }
    if !(grid.s_max.is_finite() && grid.s_max > opt.strike) {
        return Err(PdeError::InvalidGrid {
            reason: format!(
                "s_max must exceed the strike {}, got {}",
                opt.strike, grid.s_max
            ),
        });
    }
    if opt.maturity <= 0.0 {
        return Err(PdeError::InvalidGrid {
            reason: "maturity must be > 0 to march in time".into(),
        });
    }
    if !(spot.is_finite() && spot >= 0.0 && spot <= grid.s_max) {
        return Err(PdeError::InvalidGrid {
            reason: format!("spot must lie in [0, s_max], got {spot}"),
        });
    }

    let n_space = grid.n_space;
    let n_time = grid.n_time;
    let ds = grid.s_max / (n_space - 1) as f64;
    let dt = opt.maturity / n_time as f64;

    // Spatial operator coefficients at node j (S_j = j ds):
    //   L C |_j = a_j C_{j-1} + b_j C_j + c_j C_{j+1}
    let node = |j: usize| j as f64;
    let coef_a = |j: usize| 0.5 * (vol * vol * node(j) * node(j) - rate * node(j));
    let coef_b = |j: usize| -(vol * vol * node(j) * node(j) + rate);
    let coef_c = |j: usize| 0.5 * (vol * vol * node(j) * node(j) + rate * node(j));

    if grid.scheme == GridScheme::Explicit {
        // Positivity of the C_j weight: dt (vol^2 j^2 + r) <= 1 at every node.
        for j in 1..n_space - 1 {
            let value = dt * (vol * vol * node(j) * node(j) + rate);
            if value > 1.0 {
                return Err(PdeError::Unstable { node: j, value });
            }
        }
    }

    let mut rows = vec![vec![0.0; n_space]; n_time + 1];
    for j in 0..n_space {
        rows[n_time][j] = payoff(j as f64 * ds, opt);
    }

    let theta = match grid.scheme {
        GridScheme::Explicit => 0.0,
        GridScheme::Implicit => 1.0,
        GridScheme::CrankNicolson => 0.5,
    };

    let interior = n_space - 2;
    let mut sub = vec![0.0; interior];
    let mut diag = vec![0.0; interior];
    let mut sup = vec![0.0; interior];
    if theta > 0.0 {
        for (i, j) in (1..n_space - 1).enumerate() {
            sub[i] = -theta * dt * coef_a(j);
            diag[i] = 1.0 - theta * dt * coef_b(j);
            sup[i] = -theta * dt * coef_c(j);
        }
    }

    for m in (0..n_time).rev() {
        let t = m as f64 * dt;
        let (lo, hi) = boundary_values(opt, rate, grid.s_max, opt.maturity - t);
        let (prev, rest) = rows[m..].split_at_mut(1);
        let current = &mut prev[0];
        let next = &rest[0];

        // rhs = V^{m+1} + (1 - theta) dt L V^{m+1} on interior nodes.
        let mut rhs = vec![0.0; interior];
        for (i, j) in (1..n_space - 1).enumerate() {
            let explicit_part = if theta < 1.0 {
                (1.0 - theta)
                    * dt
                    * (coef_a(j) * next[j - 1] + coef_b(j) * next[j] + coef_c(j) * next[j + 1])
            } else {
                0.0
            };
            rhs[i] = next[j] + explicit_part;
        }

        if theta > 0.0 {
            rhs[0] -= sub[0] * lo;
            rhs[interior - 1] -= sup[interior - 1] * hi;
            solve_tridiagonal(&sub, &diag, &sup, &mut rhs)?;
        }

        current[0] = lo;
        current[n_space - 1] = hi;
        current[1..n_space - 1].copy_from_slice(&rhs);
    }

    // Linear interpolation of the valuation-time row at the requested spot.
    let position = spot / ds;
    let j_lo = (position.floor() as usize).min(n_space - 2);
    let weight = position - j_lo as f64;
    let price_at_spot = rows[0][j_lo] * (1.0 - weight) + rows[0][j_lo + 1] * weight;

    Ok(PdeSolution {
        values: rows,
        s_max: grid.s_max,
        price_at_spot,
        max_abs_error_vs_analytic: None,
    })
}

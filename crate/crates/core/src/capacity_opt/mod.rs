//! Capacity bounds at a fixed output rate.
//!
//! Two constrained entropy maximizations drive everything here:
//!
//! * the full-feedback side, `sup H(W + S)` over waiting laws `W >= 0` with
//!   `E[W] <= a`;
//! * the weak-feedback side, `sup H((X - S1)^+ + S2)` over input laws `X` with
//!   `E[(X - S1)^+] <= a`.
//!
//! With `a = 1/lambda - 1/mu`, subtracting `H(S)` and scaling by `lambda` turns
//! them into the feedback capacity and the weak-feedback upper bound.

mod eg;
mod ipm;
mod kkt;
mod solver;

pub use kkt::{kkt_structure_check, KktReport, Problem};
pub use solver::{Algorithm, SolverOptions};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    convolve, geometric_entropy, mean, nats_to_bits, plogp_sum, pplus_law, Pmf, ServiceModel,
};
use crate::fmt::g9;
use crate::error::{Error, Result};
use solver::{solve_constrained, Column, EntropyProblem};

/// Solver bookkeeping attached to every supremum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    /// Last few objective values (nats) of the solver iterates.
    pub objective_tail: Vec<f64>,
    /// Optimality residual of the returned point (nats).
    pub kkt_residual: f64,
    /// Largest input value represented.
    pub truncation: usize,
    /// Mass on the largest input value.
    pub tail_bound: f64,
}

/// A constrained entropy supremum and its maximizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySup {
    pub value_nats: f64,
    pub value_bits: f64,
    /// Maximizing input law (`p_W` or `p_X`).
    pub optimizer: Pmf,
    /// Law of the channel output `W + S` (or `(X - S1)^+ + S2`).
    pub output: Pmf,
    /// Lagrange multiplier of the mean budget, nats per slot.
    pub multiplier: f64,
    /// `E[W]` at the optimizer.
    pub mean_waiting: f64,
    pub diagnostics: Diagnostics,
}

fn check_budget(a: f64) -> Result<()> {
    if !(a >= 0.0) || !a.is_finite() {
        return Err(Error::InvalidParameter(format!("mean budget {a} must be finite and >= 0")));
    }
    Ok(())
}

fn feedback_problem(service: &ServiceModel, n: usize) -> EntropyProblem {
    let ps = service.pmf();
    let columns = (0..=n)
        .map(|w| Column {
            start: w + ps.offset(),
            weights: ps.probs().to_vec(),
            cost: w as f64,
            label: w,
        })
        .collect();
    EntropyProblem::new(columns)
}

fn weak_problem(service: &ServiceModel, n: usize) -> EntropyProblem {
    let ps = service.pmf();
    let columns = (0..=n)
        .map(|x| {
            let w = pplus_law(&Pmf::point(x), ps).expect("service support starts at 1");
            let out = convolve(&w, ps);
            Column { start: out.offset(), weights: out.probs().to_vec(), cost: mean(&w), label: x }
        })
        .collect();
    EntropyProblem::new(columns).dedup()
}

/// Starting point: a geometric profile on the column labels with mean `m`.
fn initial_point(problem: &EntropyProblem, m: f64) -> Vec<f64> {
    let r = m.max(0.5) / (1.0 + m.max(0.5));
    let mut p: Vec<f64> = problem.columns.iter().map(|c| r.powi(c.label as i32)).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

/// Extends a solution on a smaller support to the columns of `problem`.
fn extend_point(problem: &EntropyProblem, labels: &[usize], p: &[f64]) -> Vec<f64> {
    let last = p.last().copied().unwrap_or(1.0).max(1e-300);
    let ratio = if p.len() >= 2 && p[p.len() - 2] > 0.0 {
        (last / p[p.len() - 2]).clamp(0.1, 0.999)
    } else {
        0.5
    };
    let top = labels.last().copied().unwrap_or(0);
    let mut out: Vec<f64> = problem
        .columns
        .iter()
        .map(|c| match labels.iter().position(|&l| l == c.label) {
            Some(i) => p[i],
            None => last * ratio.powi((c.label.saturating_sub(top)) as i32),
        })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    out
}

fn solve_sup(
    service: &ServiceModel,
    a: f64,
    opts: &SolverOptions,
    build: fn(&ServiceModel, usize) -> EntropyProblem,
    point_problem: Pmf,
) -> Result<EntropySup> {
    check_budget(a)?;
    let ps = service.pmf();
    if a == 0.0 {
        let w = pplus_law(&point_problem, ps)?;
        let output = convolve(&w, ps);
        let value_nats = plogp_sum(output.probs());
        return Ok(EntropySup {
            value_nats,
            value_bits: nats_to_bits(value_nats),
            optimizer: point_problem,
            output,
            multiplier: 0.0,
            mean_waiting: 0.0,
            diagnostics: Diagnostics {
                iterations: 0,
                objective_tail: vec![value_nats],
                kkt_residual: 0.0,
                truncation: 0,
                tail_bound: 0.0,
            },
        });
    }

    let mut n = opts
        .initial_support
        .unwrap_or_else(|| (8.0 * (a + 1.0 / service.mu())).ceil() as usize)
        .max(8);
    let mut problem = build(service, n);
    let mut p0 = initial_point(&problem, a + 1.0);
    let mut total_iterations = 0;
    loop {
        let sol = solve_constrained(&problem, a, &p0, opts)?;
        total_iterations += sol.iterations;
        let top = *sol.p.last().expect("non-empty");
        if top < opts.top_mass_tol || n >= opts.support_cap {
            if top >= opts.top_mass_tol {
                return Err(Error::TruncationInadequate { cap: n, mass: top });
            }
            let labels: Vec<usize> = problem.columns.iter().map(|c| c.label).collect();
            let mut dense = vec![0.0; n + 1];
            for (&l, &pj) in labels.iter().zip(&sol.p) {
                dense[l] = pj;
            }
            let optimizer = Pmf::from_dense(&dense, 0.0)?;
            let output = Pmf::from_dense(&sol.q, ps.tail_mass())?;
            let mean_waiting = problem.cost(&sol.p);
            let tail_len = sol.history.len().saturating_sub(5);
            return Ok(EntropySup {
                value_nats: sol.value_nats,
                value_bits: nats_to_bits(sol.value_nats),
                optimizer,
                output,
                multiplier: sol.beta,
                mean_waiting,
                diagnostics: Diagnostics {
                    iterations: total_iterations,
                    objective_tail: sol.history[tail_len..].to_vec(),
                    kkt_residual: sol.gap,
                    truncation: n,
                    tail_bound: top,
                },
            });
        }
        let labels: Vec<usize> = problem.columns.iter().map(|c| c.label).collect();
        n = (n * 2).min(opts.support_cap);
        problem = build(service, n);
        p0 = extend_point(&problem, &labels, &sol.p);
    }
}

/// `sup H(W + S)` over `W >= 0` with `E[W] <= a`.
pub fn sup_entropy_feedback(
    service: &ServiceModel,
    a: f64,
    opts: &SolverOptions,
) -> Result<EntropySup> {
    solve_sup(service, a, opts, feedback_problem, Pmf::point(0))
}

/// `sup H((X - S1)^+ + S2)` over `X >= 0` with `E[(X - S1)^+] <= a`.
pub fn sup_entropy_weak(service: &ServiceModel, a: f64, opts: &SolverOptions) -> Result<EntropySup> {
    solve_sup(service, a, opts, weak_problem, Pmf::point(0))
}


/// Which side of the gap a [`CapacityPoint`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// Capacity with full feedback of departure epochs.
    Feedback,
    /// Upper bound on the capacity with weak feedback (and without feedback).
    WeakFeedback,
}

/// A capacity (or bound) at one output rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityPoint {
    pub bound: Bound,
    pub lambda: f64,
    pub value_bits_per_slot: f64,
    /// The entropy supremum behind the value, bits.
    pub sup_entropy_bits: f64,
    /// `p_W` (feedback) or `p_X` (weak feedback).
    pub optimizer: Pmf,
    pub output: Pmf,
    /// Multiplier of the mean budget, nats per slot.
    pub multiplier: f64,
    pub mean_budget: f64,
    pub mean_waiting: f64,
    pub diagnostics: Diagnostics,
}

impl CapacityPoint {
    pub const CSV_HEADER: &'static str = "lambda,value_bits_per_slot,multiplier,kkt_residual";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            g9(self.lambda),
            g9(self.value_bits_per_slot),
            g9(self.multiplier),
            g9(self.diagnostics.kkt_residual)
        )
    }
}

/// Mean budget `1/lambda - 1/mu`; `lambda = mu` (to rounding) gives 0.
pub fn mean_budget(lambda: f64, mu: f64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("rate {lambda} must be positive")));
    }
    let a = 1.0 / lambda - 1.0 / mu;
    if a < -1e-12 * (1.0 / lambda) {
        return Err(Error::UnstableRate { lambda, mu });
    }
    Ok(a.max(0.0))
}

fn capacity_point(
    bound: Bound,
    lambda: f64,
    service: &ServiceModel,
    opts: &SolverOptions,
) -> Result<CapacityPoint> {
    let a = mean_budget(lambda, service.mu())?;
    let sup = match bound {
        Bound::Feedback => sup_entropy_feedback(service, a, opts)?,
        Bound::WeakFeedback => sup_entropy_weak(service, a, opts)?,
    };
    let h_s = nats_to_bits(service.entropy_nats());
    Ok(CapacityPoint {
        bound,
        lambda,
        value_bits_per_slot: (lambda * (sup.value_bits - h_s)).max(0.0),
        sup_entropy_bits: sup.value_bits,
        optimizer: sup.optimizer,
        output: sup.output,
        multiplier: sup.multiplier,
        mean_budget: a,
        mean_waiting: sup.mean_waiting,
        diagnostics: sup.diagnostics,
    })
}

/// `C_F(lambda) = lambda (sup H(W + S) - H(S))`, bits per slot.
pub fn feedback_capacity(
    lambda: f64,
    service: &ServiceModel,
    opts: &SolverOptions,
) -> Result<CapacityPoint> {
    capacity_point(Bound::Feedback, lambda, service, opts)
}

/// `lambda (sup H((X - S1)^+ + S2) - H(S))`, an upper bound on the weak-feedback
/// capacity and on the capacity without feedback.
pub fn weak_feedback_bound(
    lambda: f64,
    service: &ServiceModel,
    opts: &SolverOptions,
) -> Result<CapacityPoint> {
    capacity_point(Bound::WeakFeedback, lambda, service, opts)
}

/// `c(a) = sup I(W(X); W(X) + S2)` in bits per packet, on a grid of budgets.
pub fn c_curve(
    service: &ServiceModel,
    a_grid: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<(f64, f64)>> {
    if a_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("budget grid must be increasing".into()));
    }
    let h_s = nats_to_bits(service.entropy_nats());
    a_grid
        .par_iter()
        .map(|&a| {
            let sup = sup_entropy_weak(service, a, opts)?;
            Ok((a, (sup.value_bits - h_s).max(0.0)))
        })
        .collect()
}

/// Value of `lambda (H(g_lambda) - H(S))`, with a warning when it is negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedForm {
    pub lambda: f64,
    pub value_bits_per_slot: f64,
    pub warning: Option<String>,
}

/// Capacity when the output entropy rate reaches `H(g_lambda)`. The caller is
/// responsible for that hypothesis; it is not checked here.
pub fn closed_form_capacity(lambda: f64, service: &ServiceModel) -> Result<ClosedForm> {
    mean_budget(lambda, service.mu())?;
    let value = lambda * (geometric_entropy(lambda.min(1.0))? - nats_to_bits(service.entropy_nats()));
    let warning = (value < 0.0).then(|| {
        format!("negative value {value:e}: the entropy-rate hypothesis cannot hold at this rate")
    });
    Ok(ClosedForm { lambda, value_bits_per_slot: value, warning })
}

/// `n` log-spaced rates strictly inside `(lo * mu, hi * mu)`.
pub fn log_grid(mu: f64, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![mu * (lo * hi).sqrt()];
    }
    let (l0, l1) = ((lo * mu).ln(), (hi * mu).ln());
    (0..n).map(|i| (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Default rate grid: 32 log-spaced points over `(0.02 mu, 0.98 mu)`.
pub fn default_lambda_grid(mu: f64) -> Vec<f64> {
    log_grid(mu, 0.02, 0.98, 32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoBearing {
    pub lambda: f64,
    pub value_bits_per_slot: f64,
}

/// `sup_{lambda < mu} C(lambda) + lambda c0`: grid maximum, refined by golden
/// section between the neighbours of the best grid point.
pub fn information_bearing_capacity<F>(curve: F, c0: f64, mu: f64, grid: &[f64]) -> Result<InfoBearing>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    if !(c0 >= 0.0) {
        return Err(Error::InvalidParameter(format!("c0 = {c0} must be >= 0")));
    }
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("rate grid must be non-empty and increasing".into()));
    }
    if grid[0] <= 0.0 || *grid.last().expect("non-empty") >= mu {
        return Err(Error::InvalidParameter("rate grid must lie in (0, mu)".into()));
    }
    let f = |l: f64| curve(l).map(|c| c + l * c0);
    let values: Vec<f64> = grid.par_iter().map(|&l| f(l)).collect::<Result<_>>()?;
    let best = (0..grid.len())
        .max_by(|&i, &j| values[i].total_cmp(&values[j]))
        .expect("non-empty");
    let mut lo = if best > 0 { grid[best - 1] } else { grid[0] };
    // past the last grid point the supremum may sit anywhere up to mu
    let mut hi = if best + 1 < grid.len() { grid[best + 1] } else { mu };
    let mut out = InfoBearing { lambda: grid[best], value_bits_per_slot: values[best] };
    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - invphi * (hi - lo);
    let mut x2 = lo + invphi * (hi - lo);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    while hi - lo > 1e-9 * mu {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - invphi * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + invphi * (hi - lo);
            f2 = f(x2)?;
        }
    }
    for (x, v) in [(x1, f1), (x2, f2)] {
        if v > out.value_bits_per_slot {
            out = InfoBearing { lambda: x, value_bits_per_slot: v };
        }
    }
    Ok(out)
}

//! Entropy maximization of a linear image of a pmf under a linear cost budget.
//!
//! Both suprema have the form: maximize `H(M p)` over pmfs `p` on a finite
//! support with `c . p <= budget`, where `M` maps an input law to an output
//! law column by column. `H(M p)` is concave in `p`, so every stationary point
//! is a global maximum.
//!
//! Two independent routes are provided:
//!
//! * [`Algorithm::InteriorPoint`] (default): a primal-dual path-following
//!   Newton method. The Hessian `M^T diag(1/q) M` is banded because every
//!   column of `M` occupies a short window of the output space, so each Newton
//!   step costs `O(m b^2)` for `m` columns and half-bandwidth `b`.
//! * [`Algorithm::ExponentiatedGradient`]: bisection on the multiplier of the
//!   budget with unit-step exponentiated-gradient (Blahut-Arimoto) ascent on
//!   the penalized objective. Slow on large supports but entirely first-order.

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::eg::solve_exponentiated_gradient;
use super::ipm::solve_interior_point;

/// Which optimizer runs the constrained solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    InteriorPoint,
    ExponentiatedGradient,
}

/// Tuning knobs shared by both supremum solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub algorithm: Algorithm,
    /// Target optimality gap of the returned point, in nats.
    pub tol: f64,
    /// Allowed violation of the mean budget.
    pub constraint_tol: f64,
    pub max_iterations: usize,
    /// Bisection steps on the multiplier (exponentiated-gradient route).
    pub max_bisections: usize,
    /// The support is doubled until the top input point carries less mass.
    pub top_mass_tol: f64,
    /// Hard cap on the largest input value.
    pub support_cap: usize,
    /// Overrides the adaptive starting support `8 (budget + 1/mu)`.
    pub initial_support: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            algorithm: Algorithm::InteriorPoint,
            tol: 1e-10,
            constraint_tol: 1e-8,
            max_iterations: 1_000_000,
            max_bisections: 200,
            top_mass_tol: 1e-10,
            support_cap: 1 << 14,
            initial_support: None,
        }
    }
}

/// One input point: its output law (a window of the output space) and cost.
#[derive(Debug, Clone)]
pub(crate) struct Column {
    pub start: usize,
    pub weights: Vec<f64>,
    pub cost: f64,
    /// Input value this column stands for.
    pub label: usize,
}

impl Column {
    pub fn end(&self) -> usize {
        self.start + self.weights.len()
    }
}

/// The linear map and cost vector of one problem instance.
#[derive(Debug, Clone)]
pub(crate) struct EntropyProblem {
    pub columns: Vec<Column>,
    pub out_len: usize,
}

impl EntropyProblem {
    pub fn new(columns: Vec<Column>) -> Self {
        let out_len = columns.iter().map(Column::end).max().unwrap_or(0);
        EntropyProblem { columns, out_len }
    }

    /// Drops columns identical to an earlier one (same output law and cost),
    /// so that ties resolve to the smallest input value.
    pub fn dedup(mut self) -> Self {
        let mut kept: Vec<Column> = Vec::with_capacity(self.columns.len());
        for col in self.columns.drain(..) {
            let dup = kept.iter().any(|k| {
                k.start == col.start
                    && k.weights.len() == col.weights.len()
                    && (k.cost - col.cost).abs() <= 1e-15
                    && k.weights.iter().zip(&col.weights).all(|(a, b)| (a - b).abs() <= 1e-15)
            });
            if !dup {
                kept.push(col);
            }
        }
        EntropyProblem::new(kept)
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn output(&self, p: &[f64], q: &mut Vec<f64>) {
        q.clear();
        q.resize(self.out_len, 0.0);
        for (col, &pj) in self.columns.iter().zip(p) {
            if pj == 0.0 {
                continue;
            }
            for (y, w) in col.weights.iter().enumerate() {
                q[col.start + y] += pj * w;
            }
        }
    }

    pub fn cost(&self, p: &[f64]) -> f64 {
        self.columns.iter().zip(p).map(|(c, &pj)| c.cost * pj).sum()
    }

    /// `g_j = -sum_y M[y, j] ln q_y`, the entropy gradient up to a constant.
    pub fn gradient(&self, q: &[f64], g: &mut Vec<f64>) {
        let logs: Vec<f64> = q.iter().map(|&v| if v > 0.0 { v.ln() } else { 0.0 }).collect();
        g.clear();
        g.extend(self.columns.iter().map(|col| {
            -col.weights
                .iter()
                .enumerate()
                .map(|(y, w)| w * logs[col.start + y])
                .sum::<f64>()
        }));
    }

    /// Largest `k - j` such that columns `j` and `k` share an output point.
    pub fn half_bandwidth(&self) -> usize {
        let mut b = 0;
        for (j, cj) in self.columns.iter().enumerate() {
            for (k, ck) in self.columns.iter().enumerate().skip(j + 1) {
                if ck.start < cj.end() && cj.start < ck.end() {
                    b = b.max(k - j);
                } else if ck.start >= cj.end() {
                    break;
                }
            }
        }
        b
    }
}

pub(crate) fn entropy_nats(q: &[f64]) -> f64 {
    crate::distributions::plogp_sum(q)
}

/// Solution of the budget-constrained problem.
#[derive(Debug, Clone)]
pub(crate) struct ConstrainedSolution {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub value_nats: f64,
    /// Multiplier of the budget (zero when the budget is slack).
    pub beta: f64,
    /// Optimality certificate of `p`, nats.
    pub gap: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
}

/// Maximizes `H(M p)` subject to `c . p <= budget` with the chosen algorithm.
pub(crate) fn solve_constrained(
    problem: &EntropyProblem,
    budget: f64,
    p0: &[f64],
    opts: &SolverOptions,
) -> Result<ConstrainedSolution> {
    match opts.algorithm {
        Algorithm::InteriorPoint => solve_interior_point(problem, budget, opts),
        Algorithm::ExponentiatedGradient => solve_exponentiated_gradient(problem, budget, p0, opts),
    }
}

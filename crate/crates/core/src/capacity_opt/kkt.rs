//! Stationarity structure of the two optimizers for binary {1, 2} service.
//!
//! Feedback side, output law `v_n = P(W + S = n)`:
//!
//! ```text
//! log v_n + log v_{n+1} = -2 (1 + alpha + beta (n - 1))     n >= 1
//! v_1 + v_2 = 1 - exp(-2 beta)
//! v_2 + (1 + lambda) v_1 = 2 lambda
//! ```
//!
//! Weak side, output law `w_n = P((X - S1)^+ + S2 = n)`: `-log w_n` solves an
//! order-two recursion with double characteristic root -1, so
//!
//! ```text
//! -log w_n = (-1)^n (c1 + c2 n) + 1 + gamma - 3 delta / 2 + delta n
//! -(log w_1 + log w_2) / 2 = 1 + gamma
//! ```

use serde::{Deserialize, Serialize};

use crate::distributions::Pmf;
use crate::error::{Error, Result};

/// Output support points lighter than this are left out of the fit.
pub const FIT_MASS_FLOOR: f64 = 1e-10;
const MIN_FIT_POINTS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Feedback,
    Weak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub problem: Problem,
    /// `[alpha, beta]` (feedback) or `[gamma, delta, c1, c2]` (weak).
    pub multipliers: Vec<f64>,
    /// `(n, residual)` of the fitted stationarity equations, log-space.
    pub stationarity: Vec<(usize, f64)>,
    /// Feedback: the two linear constraints. Weak: the `n = 1` boundary
    /// equation.
    pub constraint_residuals: Vec<f64>,
    /// Largest absolute value among all residuals above.
    pub residual: f64,
}

impl KktReport {
    /// The budget multiplier (`beta` or `delta`).
    pub fn budget_multiplier(&self) -> f64 {
        self.multipliers[1]
    }

    /// Residual below `tol` and a positive budget multiplier.
    pub fn passes(&self, tol: f64) -> bool {
        self.residual < tol && self.budget_multiplier() > 0.0
    }
}

/// Least squares via normal equations with partial pivoting; `rows` holds
/// `(features, target)` pairs.
fn least_squares(rows: &[(Vec<f64>, f64)]) -> Vec<f64> {
    let k = rows[0].0.len();
    let mut a = vec![vec![0.0; k + 1]; k];
    for (x, y) in rows {
        for i in 0..k {
            for j in 0..k {
                a[i][j] += x[i] * x[j];
            }
            a[i][k] += x[i] * y;
        }
    }
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..k {
            if r != col && a[col][col] != 0.0 {
                let f = a[r][col] / a[col][col];
                for c in col..=k {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..k).map(|i| if a[i][i] != 0.0 { a[i][k] / a[i][i] } else { 0.0 }).collect()
}

fn neg_log(law: &Pmf, n: usize) -> Option<f64> {
    let p = law.prob(n);
    (p > FIT_MASS_FLOOR).then(|| -p.ln())
}

fn finish(problem: Problem, multipliers: Vec<f64>, stationarity: Vec<(usize, f64)>, constraints: Vec<f64>) -> KktReport {
    let residual = stationarity
        .iter()
        .map(|&(_, r)| r.abs())
        .chain(constraints.iter().map(|r| r.abs()))
        .fold(0.0, f64::max);
    KktReport { problem, multipliers, stationarity, constraint_residuals: constraints, residual }
}

fn check_feedback(v: &Pmf, lambda: f64) -> Result<KktReport> {
    // y_n = -(log v_n + log v_{n+1}) / 2 = (1 + alpha) + beta (n - 1)
    let mut rows = Vec::new();
    let mut n = 1;
    while let (Some(a), Some(b)) = (neg_log(v, n), neg_log(v, n + 1)) {
        rows.push((n, (a + b) / 2.0));
        n += 1;
    }
    if rows.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientSupport { points: rows.len(), needed: MIN_FIT_POINTS });
    }
    let design: Vec<(Vec<f64>, f64)> =
        rows.iter().map(|&(n, y)| (vec![1.0, (n - 1) as f64], y)).collect();
    let coef = least_squares(&design);
    let (alpha, beta) = (coef[0] - 1.0, coef[1]);
    let stationarity =
        rows.iter().map(|&(n, y)| (n, y - coef[0] - beta * (n - 1) as f64)).collect();
    let (v1, v2) = (v.prob(1), v.prob(2));
    let constraints = vec![
        v1 + v2 - (1.0 - (-2.0 * beta).exp()),
        v2 + (1.0 + lambda) * v1 - 2.0 * lambda,
    ];
    Ok(finish(Problem::Feedback, vec![alpha, beta], stationarity, constraints))
}

fn check_weak(w: &Pmf) -> Result<KktReport> {
    let mut rows = Vec::new();
    let mut n = 1;
    while let Some(y) = neg_log(w, n) {
        rows.push((n, y));
        n += 1;
    }
    if rows.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientSupport { points: rows.len(), needed: MIN_FIT_POINTS });
    }
    // unknowns: c1, c2, offset (= 1 + gamma - 3 delta / 2), delta
    let design: Vec<(Vec<f64>, f64)> = rows
        .iter()
        .map(|&(n, y)| {
            let s = if n % 2 == 0 { 1.0 } else { -1.0 };
            (vec![s, s * n as f64, 1.0, n as f64], y)
        })
        .collect();
    let coef = least_squares(&design);
    let (c1, c2, offset, delta) = (coef[0], coef[1], coef[2], coef[3]);
    let gamma = offset - 1.0 + 1.5 * delta;
    let stationarity = design
        .iter()
        .zip(&rows)
        .map(|((x, y), &(n, _))| (n, y - x.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>()))
        .collect();
    let boundary = (rows[0].1 + rows[1].1) / 2.0 - (1.0 + gamma);
    Ok(finish(Problem::Weak, vec![gamma, delta, c1, c2], stationarity, vec![boundary]))
}

/// Fits the multipliers of the stationarity structure to an output law of the
/// binary {1, 2} service problem and reports how far the law is from it.
pub fn kkt_structure_check(problem: Problem, output_law: &Pmf, lambda: f64) -> Result<KktReport> {
    if !(lambda > 0.0 && lambda < 2.0 / 3.0) {
        return Err(Error::InvalidParameter(format!(
            "rate {lambda} outside (0, 2/3) for binary service"
        )));
    }
    match problem {
        Problem::Feedback => check_feedback(output_law, lambda),
        Problem::Weak => check_weak(output_law),
    }
}

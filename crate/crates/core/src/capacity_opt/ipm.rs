//! Primal-dual interior-point Newton method for the budget-constrained
//! entropy maximization.
//!
//! We minimize `f(p) = sum_y q_y ln q_y` with `q = M p`, subject to `A p = b`
//! and `p >= 0`. The rows of `A` are the simplex row and, when the budget
//! binds, the cost row. The reduced Newton matrix `M^T diag(1/q) M + Z/P` is
//! banded, the two equality rows are eliminated with a Schur complement.

use super::solver::{entropy_nats, ConstrainedSolution, EntropyProblem, SolverOptions};
use crate::error::{Error, Result};

const STEP_TO_BOUNDARY: f64 = 0.995;
const MAX_NEWTON_STEPS: usize = 500;

/// Symmetric positive definite band matrix, lower band stored row by row.
struct Band {
    n: usize,
    b: usize,
    // a[i * (b + 1) + d] holds entry (i, i - d)
    a: Vec<f64>,
}

impl Band {
    fn zeros(n: usize, b: usize) -> Self {
        Band { n, b, a: vec![0.0; n * (b + 1)] }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * (self.b + 1) + (i - j)]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * (self.b + 1) + (i - j)] = v;
    }

    /// In-place Cholesky factorization; `false` if a pivot is not positive.
    fn factor(&mut self) -> bool {
        let (n, b) = (self.n, self.b);
        for i in 0..n {
            let lo = i.saturating_sub(b);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(b));
                let mut s = self.at(i, j);
                for k in klo..j {
                    s -= self.at(i, k) * self.at(j, k);
                }
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        return false;
                    }
                    self.set(i, i, s.sqrt());
                } else {
                    let v = s / self.at(j, j);
                    self.set(i, j, v);
                }
            }
        }
        true
    }

    fn solve(&self, rhs: &mut [f64]) {
        let (n, b) = (self.n, self.b);
        for i in 0..n {
            let mut s = rhs[i];
            for k in i.saturating_sub(b)..i {
                s -= self.at(i, k) * rhs[k];
            }
            rhs[i] = s / self.at(i, i);
        }
        for i in (0..n).rev() {
            let mut s = rhs[i];
            for k in i + 1..(i + b + 1).min(n) {
                s -= self.at(k, i) * rhs[k];
            }
            rhs[i] = s / self.at(i, i);
        }
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Solves the small dense system `s x = r` (at most 2x2).
fn solve_small(s: &[[f64; 2]; 2], r: &[f64], rows: usize) -> Vec<f64> {
    if rows == 1 {
        return vec![r[0] / s[0][0]];
    }
    let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    vec![(s[1][1] * r[0] - s[0][1] * r[1]) / det, (s[0][0] * r[1] - s[1][0] * r[0]) / det]
}

struct Outcome {
    p: Vec<f64>,
    q: Vec<f64>,
    y: Vec<f64>,
    residual: f64,
    iterations: usize,
    history: Vec<f64>,
}

fn hessian(problem: &EntropyProblem, q: &[f64], band: usize) -> Band {
    let m = problem.len();
    let inv: Vec<f64> = q.iter().map(|&v| 1.0 / v).collect();
    let mut h = Band::zeros(m, band);
    for i in 0..m {
        let ci = &problem.columns[i];
        for j in i.saturating_sub(band)..=i {
            let cj = &problem.columns[j];
            let lo = ci.start.max(cj.start);
            let hi = ci.end().min(cj.end());
            let mut s = 0.0;
            for y in lo..hi {
                s += ci.weights[y - ci.start] * cj.weights[y - cj.start] * inv[y];
            }
            h.set(i, j, s);
        }
    }
    h
}

fn newton(problem: &EntropyProblem, budget: Option<f64>, opts: &SolverOptions) -> Result<Outcome> {
    let m = problem.len();
    let rows = if budget.is_some() { 2 } else { 1 };
    let cost: Vec<f64> = problem.columns.iter().map(|c| c.cost).collect();
    let ones = vec![1.0; m];
    let a_rows: Vec<&[f64]> = if rows == 2 { vec![&ones, &cost] } else { vec![&ones] };
    let b_vec: Vec<f64> = match budget {
        Some(a) => vec![1.0, a],
        None => vec![1.0],
    };
    let band = problem.half_bandwidth();
    let max_steps = opts.max_iterations.min(MAX_NEWTON_STEPS);

    let mut p = vec![1.0 / m as f64; m];
    let mut z = vec![1.0; m];
    let mut y = vec![0.0; rows];
    let mut q = Vec::new();
    let mut g = Vec::new();
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;

    for it in 0..max_steps {
        problem.output(&p, &mut q);
        // grad f = M^T (ln q + 1) = 1 - g since the columns sum to one
        problem.gradient(&q, &mut g);
        let colsum: Vec<f64> = problem.columns.iter().map(|c| c.weights.iter().sum()).collect();
        let grad: Vec<f64> = g.iter().zip(&colsum).map(|(gj, s)| s - gj).collect();
        history.push(entropy_nats(&q));

        let r_d: Vec<f64> = (0..m)
            .map(|j| grad[j] - (0..rows).map(|r| a_rows[r][j] * y[r]).sum::<f64>() - z[j])
            .collect();
        let r_p: Vec<f64> = (0..rows).map(|r| dot(a_rows[r], &p) - b_vec[r]).collect();
        let pz = dot(&p, &z);
        let scale_p = 1.0 + b_vec.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        residual = pz.max(inf_norm(&r_d)).max(inf_norm(&r_p) / scale_p);
        if pz <= opts.tol && inf_norm(&r_d) <= opts.tol && inf_norm(&r_p) <= 1e-3 * opts.constraint_tol {
            return Ok(Outcome { p, q, y, residual, iterations: it, history });
        }
        let mu = pz / m as f64;

        // Factor K = H + Z/P, regularizing if the factorization breaks down.
        let base = hessian(problem, &q, band);
        let mut reg = 0.0;
        let k = loop {
            let mut k = Band { n: base.n, b: base.b, a: base.a.clone() };
            for j in 0..m {
                let d = k.at(j, j) + z[j] / p[j] + reg;
                k.set(j, j, d);
            }
            if k.factor() {
                break k;
            }
            reg = if reg == 0.0 { 1e-12 } else { reg * 100.0 };
            if reg > 1e6 {
                return Err(Error::NonConvergence { iterations: it, residual });
            }
        };
        let v: Vec<Vec<f64>> = a_rows
            .iter()
            .map(|row| {
                let mut col = row.to_vec();
                k.solve(&mut col);
                col
            })
            .collect();
        let mut s = [[0.0; 2]; 2];
        for r in 0..rows {
            for c in 0..rows {
                s[r][c] = dot(a_rows[r], &v[c]);
            }
        }

        let direction = |r_c: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
            let mut u: Vec<f64> = (0..m).map(|j| -r_d[j] - r_c[j] / p[j]).collect();
            k.solve(&mut u);
            let rhs: Vec<f64> = (0..rows).map(|r| -r_p[r] - dot(a_rows[r], &u)).collect();
            let dy = solve_small(&s, &rhs, rows);
            let dp: Vec<f64> =
                (0..m).map(|j| u[j] + (0..rows).map(|r| v[r][j] * dy[r]).sum::<f64>()).collect();
            let dz: Vec<f64> = (0..m).map(|j| (-r_c[j] - z[j] * dp[j]) / p[j]).collect();
            (dp, dy, dz)
        };
        let max_step = |dp: &[f64], dz: &[f64]| -> f64 {
            let mut alpha: f64 = 1.0;
            for j in 0..m {
                if dp[j] < 0.0 {
                    alpha = alpha.min(-p[j] / dp[j]);
                }
                if dz[j] < 0.0 {
                    alpha = alpha.min(-z[j] / dz[j]);
                }
            }
            alpha
        };

        // Predictor.
        let rc_aff: Vec<f64> = (0..m).map(|j| p[j] * z[j]).collect();
        let (dp_a, _, dz_a) = direction(&rc_aff);
        let alpha_a = max_step(&dp_a, &dz_a);
        let mu_aff = (0..m)
            .map(|j| (p[j] + alpha_a * dp_a[j]) * (z[j] + alpha_a * dz_a[j]))
            .sum::<f64>()
            / m as f64;
        let sigma = (mu_aff / mu).powi(3).min(1.0);

        // Corrector.
        let rc: Vec<f64> =
            (0..m).map(|j| p[j] * z[j] + dp_a[j] * dz_a[j] - sigma * mu).collect();
        let (dp, dy, dz) = direction(&rc);
        let alpha = (STEP_TO_BOUNDARY * max_step(&dp, &dz)).min(1.0);
        for j in 0..m {
            p[j] += alpha * dp[j];
            z[j] += alpha * dz[j];
        }
        for r in 0..rows {
            y[r] += alpha * dy[r];
        }
    }
    Err(Error::NonConvergence { iterations: max_steps, residual })
}

pub(crate) fn solve_interior_point(
    problem: &EntropyProblem,
    budget: f64,
    opts: &SolverOptions,
) -> Result<ConstrainedSolution> {
    let min_cost = problem.columns.iter().map(|c| c.cost).fold(f64::INFINITY, f64::min);
    let max_cost = problem.columns.iter().map(|c| c.cost).fold(f64::NEG_INFINITY, f64::max);
    if budget < min_cost {
        return Err(Error::InvalidParameter(format!(
            "budget {budget} is below the smallest attainable cost {min_cost}"
        )));
    }
    let finish = |out: Outcome, beta: f64| {
        let value_nats = entropy_nats(&out.q);
        ConstrainedSolution {
            p: out.p,
            q: out.q,
            value_nats,
            beta,
            gap: out.residual,
            iterations: out.iterations,
            history: out.history,
        }
    };
    if problem.len() == 1 {
        let mut q = Vec::new();
        problem.output(&[1.0], &mut q);
        let value_nats = entropy_nats(&q);
        return Ok(ConstrainedSolution {
            p: vec![1.0],
            q,
            value_nats,
            beta: 0.0,
            gap: 0.0,
            iterations: 0,
            history: vec![value_nats],
        });
    }
    if budget < max_cost && max_cost - min_cost > 0.0 {
        let bound = newton(problem, Some(budget), opts)?;
        let beta = -bound.y[1];
        if beta >= 0.0 {
            return Ok(finish(bound, beta));
        }
    }
    // The budget is slack.
    let free = newton(problem, None, opts)?;
    Ok(finish(free, 0.0))
}

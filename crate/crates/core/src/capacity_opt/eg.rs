//! Bisection on the budget multiplier around exponentiated-gradient ascent.

use super::solver::{entropy_nats, ConstrainedSolution, EntropyProblem, SolverOptions};
use crate::error::{Error, Result};

struct Penalized {
    p: Vec<f64>,
    q: Vec<f64>,
    gap: f64,
    iterations: usize,
}

/// Maximizes `H(M p) - beta c . p` starting from `p0`.
///
/// Stops once the Frank-Wolfe gap `max_j g_j - p . g` (an upper bound on the
/// suboptimality of the penalized objective) drops below `opts.tol`, or once
/// an iteration improves the objective by less than `opts.tol / 100`.
fn solve_penalized(
    problem: &EntropyProblem,
    beta: f64,
    p0: &[f64],
    opts: &SolverOptions,
) -> Result<Penalized> {
    let mut p = p0.to_vec();
    let mut q = Vec::new();
    let mut g = Vec::new();
    let mut gap = f64::INFINITY;
    let mut last = f64::NEG_INFINITY;
    for it in 0..opts.max_iterations {
        problem.output(&p, &mut q);
        let objective = entropy_nats(&q) - beta * problem.cost(&p);
        problem.gradient(&q, &mut g);
        for (gj, col) in g.iter_mut().zip(&problem.columns) {
            *gj -= beta * col.cost;
        }
        let gmax = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let gbar: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        gap = gmax - gbar;
        if gap <= opts.tol || objective - last < 1e-2 * opts.tol {
            return Ok(Penalized { p, q, gap, iterations: it });
        }
        last = objective;
        let mut total = 0.0;
        for (pj, gj) in p.iter_mut().zip(&g) {
            *pj *= (gj - gmax).exp();
            total += *pj;
        }
        p.iter_mut().for_each(|pj| *pj /= total);
    }
    Err(Error::NonConvergence { iterations: opts.max_iterations, residual: gap })
}

pub(crate) fn solve_exponentiated_gradient(
    problem: &EntropyProblem,
    budget: f64,
    p0: &[f64],
    opts: &SolverOptions,
) -> Result<ConstrainedSolution> {
    let mut iterations = 0;
    let mut history = Vec::new();
    let mut record = |sol: &Penalized, iterations: &mut usize| {
        *iterations += sol.iterations;
        history.push(entropy_nats(&sol.q));
    };

    let free = solve_penalized(problem, 0.0, p0, opts)?;
    record(&free, &mut iterations);
    if problem.cost(&free.p) <= budget {
        let value_nats = entropy_nats(&free.q);
        return Ok(ConstrainedSolution {
            p: free.p,
            q: free.q,
            value_nats,
            beta: 0.0,
            gap: free.gap,
            iterations,
            history,
        });
    }

    // Keep `hi` feasible: the returned point never exceeds the budget.
    let mut lo = 0.0;
    let mut lo_sol = free;
    let mut hi = 0.5;
    let mut hi_sol = loop {
        let sol = solve_penalized(problem, hi, &lo_sol.p, opts)?;
        record(&sol, &mut iterations);
        if problem.cost(&sol.p) <= budget {
            break sol;
        }
        lo = hi;
        lo_sol = sol;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::NonConvergence { iterations, residual: hi });
        }
    };

    for _ in 0..opts.max_bisections {
        if budget - problem.cost(&hi_sol.p) <= opts.constraint_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let start = if hi - mid < mid - lo { &hi_sol.p } else { &lo_sol.p };
        let sol = solve_penalized(problem, mid, start, opts)?;
        record(&sol, &mut iterations);
        if problem.cost(&sol.p) <= budget {
            hi = mid;
            hi_sol = sol;
        } else {
            lo = mid;
            lo_sol = sol;
        }
    }
    let shortfall = budget - problem.cost(&hi_sol.p);
    if shortfall > opts.constraint_tol {
        return Err(Error::NonConvergence { iterations, residual: shortfall });
    }
    let value_nats = entropy_nats(&hi_sol.q);
    Ok(ConstrainedSolution {
        p: hi_sol.p,
        q: hi_sol.q,
        value_nats,
        beta: hi,
        gap: hi_sol.gap + hi * shortfall,
        iterations,
        history,
    })
}

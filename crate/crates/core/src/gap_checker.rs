//! Strict-gap sweeps and the entropy-rate condition.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity_opt::{
    closed_form_capacity, mean_budget, sup_entropy_feedback, sup_entropy_weak, Diagnostics,
    SolverOptions,
};
use crate::channel_oracle::{
    exact_rate_bracket, mc_block_entropy, Discipline, Enumeration, InterarrivalLaw, McOptions,
    QueueBlocks,
};
use crate::distributions::{geometric_entropy, ServiceModel};
use crate::error::{Error, Result};
use crate::fmt::g9;

/// Smallest gap declared strict, nats.
pub const STRICT_FLOOR_NATS: f64 = 1e-4;

/// Half-width of the window around the critical binary rate inside which
/// strictness is informational only.
pub const CRITICAL_WINDOW: f64 = 0.02;

/// Gap threshold for a solver tolerance: `max(10 tol, 1e-4)` nats.
pub fn strict_threshold_nats(opts: &SolverOptions) -> f64 {
    (10.0 * opts.tol).max(STRICT_FLOOR_NATS)
}

/// The two entropy suprema at one rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub lambda: f64,
    /// `sup H(W + S)`, bits.
    pub h_feedback_side: f64,
    /// `sup H((X - S1)^+ + S2)`, bits.
    pub h_weak_side: f64,
    /// Difference of the two, bits.
    pub gap: f64,
    pub gap_nats: f64,
    pub strict: bool,
    pub feedback_diagnostics: Diagnostics,
    pub weak_diagnostics: Diagnostics,
}

impl GapReport {
    pub const CSV_HEADER: &'static str = "lambda,h_fb_bits,h_wf_bits,gap_bits,strict";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            g9(self.lambda),
            g9(self.h_feedback_side),
            g9(self.h_weak_side),
            g9(self.gap),
            self.strict
        )
    }
}

/// Both suprema at rate `lambda`.
pub fn gap_at(service: &ServiceModel, lambda: f64, opts: &SolverOptions) -> Result<GapReport> {
    let a = mean_budget(lambda, service.mu())?;
    let fb = sup_entropy_feedback(service, a, opts)?;
    let wf = sup_entropy_weak(service, a, opts)?;
    let gap_nats = fb.value_nats - wf.value_nats;
    Ok(GapReport {
        lambda,
        h_feedback_side: fb.value_bits,
        h_weak_side: wf.value_bits,
        gap: fb.value_bits - wf.value_bits,
        gap_nats,
        strict: gap_nats > strict_threshold_nats(opts),
        feedback_diagnostics: fb.diagnostics,
        weak_diagnostics: wf.diagnostics,
    })
}

/// Gap reports over a grid, in grid order. A failing point yields its error
/// in place and does not stop the sweep.
pub fn theorem5_check(
    service: &ServiceModel,
    lambda_grid: &[f64],
    opts: &SolverOptions,
) -> Vec<Result<GapReport>> {
    lambda_grid.par_iter().map(|&l| gap_at(service, l, opts)).collect()
}

/// `(1 + e)(1 - e^-2) / (1 + e^-2 + 2e)`, the rate at which the two optimal
/// output laws for binary {1, 2} service could coincide.
pub fn critical_lambda_binary() -> f64 {
    let e = std::f64::consts::E;
    let em2 = (-2.0f64).exp();
    (1.0 + e) * (1.0 - em2) / (1.0 + em2 + 2.0 * e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMethod {
    Exact,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Yes,
    No,
    Inconclusive,
}

/// Settings of [`entropy_rate_condition`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateOptions {
    pub n: usize,
    pub method: RateMethod,
    pub enumeration: Enumeration,
    pub mc: McOptions,
    /// Required by the Monte Carlo method.
    pub seed: Option<u64>,
    /// Departures dropped before each Monte Carlo block.
    pub burn_in: usize,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions {
            n: 4,
            method: RateMethod::Exact,
            enumeration: Enumeration::default(),
            mc: McOptions::default(),
            seed: None,
            burn_in: 0,
        }
    }
}

/// Finite-`n` evidence for `H(g_lambda) <= liminf H(D^n) / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateConditionReport {
    pub lambda: f64,
    /// `H(g_lambda)`, bits.
    pub h_geometric: f64,
    /// Bracket on `H(D^n) / n`, bits.
    pub rate_bracket: [f64; 2],
    pub n: usize,
    pub method: RateMethod,
    pub satisfied: Verdict,
    /// `lambda (H(g_lambda) - H(S))`, reported as the capacity when satisfied.
    pub capacity_bits_per_slot: Option<f64>,
    /// Truncated input mass (exact method).
    pub tail_mass: Option<f64>,
    /// Distinct blocks seen (Monte Carlo method).
    pub distinct_blocks: Option<usize>,
}

fn verdict(h: f64, lower: f64, upper: f64) -> Verdict {
    if h <= lower {
        Verdict::Yes
    } else if upper < h {
        Verdict::No
    } else {
        Verdict::Inconclusive
    }
}

/// Entropy-rate condition with geometric(`lambda`) interarrivals.
pub fn entropy_rate_condition(
    service: &ServiceModel,
    discipline: Discipline,
    lambda: f64,
    opts: &RateOptions,
) -> Result<RateConditionReport> {
    entropy_rate_condition_with(service, discipline, &InterarrivalLaw::Geometric { lambda }, opts)
}

/// Entropy-rate condition for any interarrival law, compared against the
/// geometric law of the same rate.
pub fn entropy_rate_condition_with(
    service: &ServiceModel,
    discipline: Discipline,
    arrivals: &InterarrivalLaw,
    opts: &RateOptions,
) -> Result<RateConditionReport> {
    let lambda = arrivals.rate();
    if !(lambda < service.mu()) {
        return Err(Error::UnstableRate { lambda, mu: service.mu() });
    }
    let h_geometric = geometric_entropy(lambda)?;
    let (lower, upper, tail_mass, distinct_blocks) = match opts.method {
        RateMethod::Exact => {
            let b = exact_rate_bracket(discipline, arrivals, service, opts.n, &opts.enumeration)?;
            (b.lower, b.upper, Some(b.tail_mass), None)
        }
        RateMethod::Mc => {
            let seed = opts
                .seed
                .ok_or_else(|| Error::Config("the Monte Carlo method needs a seed".into()))?;
            let source = QueueBlocks {
                discipline,
                arrivals: arrivals.clone(),
                service: service.clone(),
                burn_in: opts.burn_in,
            };
            let est = mc_block_entropy(&source, opts.n, seed, &opts.mc)?;
            let (lo, hi) = est.per_letter();
            (lo, hi, None, Some(est.distinct))
        }
    };
    let satisfied = verdict(h_geometric, lower, upper);
    let capacity_bits_per_slot = match satisfied {
        Verdict::Yes => Some(closed_form_capacity(lambda, service)?.value_bits_per_slot),
        _ => None,
    };
    Ok(RateConditionReport {
        lambda,
        h_geometric,
        rate_bracket: [lower, upper],
        n: opts.n,
        method: opts.method,
        satisfied,
        capacity_bits_per_slot,
        tail_mass,
        distinct_blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Pmf;

    #[test]
    fn critical_rate_value() {
        let l = critical_lambda_binary();
        assert!((l - 0.48921).abs() < 1e-5, "{l}");
        // structure: numerator and denominator evaluated separately
        let e = 1f64.exp();
        let num = (1.0 + e) * (1.0 - 1.0 / (e * e));
        let den = 1.0 + 1.0 / (e * e) + 2.0 * e;
        assert!((l - num / den).abs() < 1e-15);
    }

    #[test]
    fn deterministic_service_has_no_gap() {
        let s = ServiceModel::deterministic(2).unwrap();
        for r in theorem5_check(&s, &[0.1, 0.25, 0.45], &SolverOptions::default()) {
            let r = r.unwrap();
            assert!(!r.strict);
            assert!(r.gap.abs() < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn binary_gap_is_strict() {
        let s = ServiceModel::binary12();
        for r in theorem5_check(&s, &[0.3, 0.4], &SolverOptions::default()) {
            let r = r.unwrap();
            assert!(r.strict, "{r:?}");
            assert!(r.gap >= -1e-9);
        }
    }

    #[test]
    fn sweep_keeps_going_past_bad_points() {
        let s = ServiceModel::binary12();
        let out = theorem5_check(&s, &[0.3, 0.9, 0.4], &SolverOptions::default());
        assert!(out[0].is_ok());
        assert!(matches!(out[1], Err(Error::UnstableRate { .. })));
        assert!(out[2].is_ok());
    }

    #[test]
    fn csv_row_format() {
        let s = ServiceModel::deterministic(1).unwrap();
        let r = gap_at(&s, 0.5, &SolverOptions::default()).unwrap();
        let row = r.csv_row();
        assert!(row.starts_with("0.5,2,2,"), "{row}");
        assert!(row.ends_with(",false"));
    }

    #[test]
    fn degenerate_arrivals_fail_the_condition() {
        let s = ServiceModel::deterministic(1).unwrap();
        let arr = InterarrivalLaw::Custom { pmf: Pmf::point(3) };
        for method in [RateMethod::Exact, RateMethod::Mc] {
            let opts = RateOptions {
                method,
                seed: Some(1),
                mc: McOptions { samples: 1000, ..Default::default() },
                ..Default::default()
            };
            let r = entropy_rate_condition_with(&s, Discipline::Fifo, &arr, &opts).unwrap();
            assert_eq!(r.rate_bracket, [0.0, 0.0]);
            assert!(r.h_geometric > 0.0);
            assert_eq!(r.satisfied, Verdict::No);
            assert_eq!(r.capacity_bits_per_slot, None);
        }
    }

    #[test]
    fn unstable_and_unseeded_runs_are_rejected() {
        let s = ServiceModel::binary12();
        let o = RateOptions::default();
        assert!(matches!(
            entropy_rate_condition(&s, Discipline::Fifo, 0.7, &o),
            Err(Error::UnstableRate { .. })
        ));
        let mc = RateOptions { method: RateMethod::Mc, ..Default::default() };
        assert!(matches!(
            entropy_rate_condition(&s, Discipline::Fifo, 0.4, &mc),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn verdict_rules() {
        assert_eq!(verdict(1.0, 1.0, 2.0), Verdict::Yes);
        assert_eq!(verdict(1.0, 0.5, 0.9), Verdict::No);
        assert_eq!(verdict(1.0, 0.5, 1.0), Verdict::Inconclusive);
    }

    #[test]
    fn satisfied_reports_closed_form() {
        let s = ServiceModel::binary12();
        let o = RateOptions { n: 2, ..Default::default() };
        let r = entropy_rate_condition(&s, Discipline::LcfsPreemptive, 0.4, &o).unwrap();
        assert_eq!(r.satisfied, Verdict::Yes);
        let cf = closed_form_capacity(0.4, &s).unwrap().value_bits_per_slot;
        assert_eq!(r.capacity_bits_per_slot, Some(cf));
        assert!(r.rate_bracket[0] <= r.rate_bracket[1]);
    }
}

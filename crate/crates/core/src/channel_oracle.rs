//! Exact departure laws for small horizons, and Monte Carlo block entropies.
//!
//! Two enumerators:
//!
//! * [`exact_departure_law`]: i.i.d. weak-feedback inputs `X_i`, with
//!   `D_i = (X_i - S_{i-1})^+ + S_i` and `S_0 = 0`;
//! * [`exact_queue_departure_law`]: a queue fed by i.i.d. interarrivals under
//!   FIFO or preemptive LCFS, with `D^n` read off the sorted departure epochs
//!   of the `n`-packet system.
//!
//! Infinite laws are truncated; the missing mass is carried as `tail_mass`.
//! Both enumerators split the work on the first coordinate, run the parts in
//! parallel and add them back in a fixed order, so results do not depend on
//! the number of workers.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity_opt::{sup_entropy_weak, SolverOptions};
use crate::distributions::{
    geometric_entropy_nats, geometric_pmf, mean, nats_to_bits, plogp_sum, pplus_law, Pmf,
    PmfSampler, ServiceKind, ServiceModel,
};
use crate::error::{Error, Result};
use crate::fmt::g9;
use crate::queue_sim::lcfs_from_parts;

pub const DEFAULT_MAX_HORIZON: usize = 8;
pub const DEFAULT_LEAF_BUDGET: u128 = 100_000_000;

/// Limits on exact enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Enumeration {
    pub max_horizon: usize,
    /// Cap on enumerated leaf states.
    pub budget: u128,
    /// Tail cut for infinite input laws.
    pub tail_tol: f64,
}

impl Default for Enumeration {
    fn default() -> Self {
        Enumeration { max_horizon: DEFAULT_MAX_HORIZON, budget: DEFAULT_LEAF_BUDGET, tail_tol: 1e-6 }
    }
}

/// Joint law of the interdepartures `D_1..D_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLaw {
    pub n: usize,
    pub probs: BTreeMap<Vec<u32>, f64>,
    /// Mass of input realizations left out by truncation.
    pub tail_mass: f64,
}

impl JointLaw {
    pub fn total(&self) -> f64 {
        self.probs.values().sum()
    }

    /// Law of `D_i` (0-based `i`).
    pub fn marginal(&self, i: usize) -> Pmf {
        let mut dense = Vec::new();
        for (k, &p) in &self.probs {
            let d = k[i] as usize;
            if dense.len() <= d {
                dense.resize(d + 1, 0.0);
            }
            dense[d] += p;
        }
        Pmf::from_dense(&dense, self.tail_mass.max(0.0)).expect("non-empty law")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let cols: Vec<String> = (1..=self.n).map(|i| format!("D{i}_slots")).collect();
        writeln!(w, "{},probability", cols.join(","))?;
        for (k, &p) in &self.probs {
            let ds: Vec<String> = k.iter().map(u32::to_string).collect();
            writeln!(w, "{},{}", ds.join(","), g9(p))?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("ascii")
    }
}

fn sorted_entropy_nats(mut probs: Vec<f64>) -> f64 {
    probs.sort_by(f64::total_cmp);
    plogp_sum(&probs)
}

/// Plug-in `H(D^n)` in bits over the represented law.
pub fn block_entropy(law: &JointLaw) -> Result<f64> {
    let total = law.total();
    if total < 1.0 - 1e-9 {
        return Err(Error::InsufficientTruncation { tail: 1.0 - total, tol: 1e-9 });
    }
    Ok(nats_to_bits(sorted_entropy_nats(law.probs.values().copied().collect())))
}

/// `H(D^n) / n` in bits.
pub fn per_letter_entropy(law: &JointLaw) -> Result<f64> {
    Ok(block_entropy(law)? / law.n as f64)
}

fn check_horizon(n: usize, limits: &Enumeration) -> Result<()> {
    if n == 0 || n > limits.max_horizon {
        return Err(Error::InvalidParameter(format!(
            "horizon {n} outside 1..={}",
            limits.max_horizon
        )));
    }
    Ok(())
}

fn check_budget(branch: usize, n: usize, limits: &Enumeration) -> Result<()> {
    let needed = (branch as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if needed > limits.budget {
        return Err(Error::BudgetExceeded { needed, budget: limits.budget });
    }
    Ok(())
}

fn support(p: &Pmf) -> Vec<(u32, f64)> {
    p.iter().filter(|&(_, q)| q > 0.0).map(|(k, q)| (k as u32, q)).collect()
}

/// Runs a per-partition computation in parallel and adds the resulting laws
/// in partition order.
fn merge_parts(parts: Vec<BTreeMap<Vec<u32>, f64>>) -> BTreeMap<Vec<u32>, f64> {
    let mut out = BTreeMap::new();
    for part in parts {
        for (k, p) in part {
            *out.entry(k).or_insert(0.0) += p;
        }
    }
    out
}

/// Markov-state enumeration: the state after each step is `(prefix, s)` and
/// `step(s, x, y)` returns the next letter and state for inputs `(x, y)`.
fn markov_enumerate(
    first: &[(u32, f64)],
    second: &[(u32, f64)],
    n: usize,
    init: u32,
    step: impl Fn(u32, u32, u32) -> (u32, u32) + Sync,
) -> BTreeMap<Vec<u32>, f64> {
    let starts: Vec<(u32, f64, u32, f64)> = first
        .iter()
        .flat_map(|&(x, px)| second.iter().map(move |&(y, py)| (x, px, y, py)))
        .collect();
    let parts: Vec<BTreeMap<Vec<u32>, f64>> = starts
        .par_iter()
        .map(|&(x, px, y, py)| {
            let (d, s) = step(init, x, y);
            let mut level: BTreeMap<(Vec<u32>, u32), f64> = BTreeMap::new();
            level.insert((vec![d], s), px * py);
            for _ in 1..n {
                let mut next = BTreeMap::new();
                for ((prefix, s), p) in &level {
                    for &(x, px) in first {
                        for &(y, py) in second {
                            let (d, s2) = step(*s, x, y);
                            let mut k = prefix.clone();
                            k.push(d);
                            *next.entry((k, s2)).or_insert(0.0) += p * px * py;
                        }
                    }
                }
                level = next;
            }
            let mut out = BTreeMap::new();
            for ((prefix, _), p) in level {
                *out.entry(prefix).or_insert(0.0) += p;
            }
            out
        })
        .collect();
    merge_parts(parts)
}

/// Exact law of `D^n` for i.i.d. `X_i ~ p_x`, with `D_1 = X_1 + S_1`.
pub fn exact_departure_law(
    p_x: &Pmf,
    service: &ServiceModel,
    n: usize,
    limits: &Enumeration,
) -> Result<JointLaw> {
    check_horizon(n, limits)?;
    let xs = support(p_x);
    let ss = support(service.pmf());
    check_budget(xs.len() * ss.len(), n, limits)?;
    // state: previous service time
    let probs = markov_enumerate(&xs, &ss, n, 0, |s_prev, x, s| {
        (x.saturating_sub(s_prev) + s, s)
    });
    let total: f64 = probs.values().sum();
    Ok(JointLaw { n, probs, tail_mass: (1.0 - total).max(0.0) })
}

/// Service discipline of a queue-driven channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discipline {
    Fifo,
    LcfsPreemptive,
}

/// Interarrival law of an open-loop sender.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InterarrivalLaw {
    /// Geometric on `{1, 2, ...}` with mean `1 / lambda`.
    Geometric { lambda: f64 },
    /// A finite law on `{1, 2, ...}` (no tail mass).
    Custom { pmf: Pmf },
}

impl InterarrivalLaw {
    fn validate(&self) -> Result<()> {
        match self {
            InterarrivalLaw::Geometric { lambda } if !(*lambda > 0.0 && *lambda <= 1.0) => {
                Err(Error::InvalidParameter(format!("arrival rate {lambda} outside (0, 1]")))
            }
            InterarrivalLaw::Custom { pmf } if pmf.tail_mass() > 0.0 || pmf.prob(0) > 0.0 => Err(
                Error::InvalidParameter("custom interarrivals must be finite and >= 1".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Arrival rate `1 / E[A]`.
    pub fn rate(&self) -> f64 {
        match self {
            InterarrivalLaw::Geometric { lambda } => *lambda,
            InterarrivalLaw::Custom { pmf } => 1.0 / mean(pmf),
        }
    }

    /// `H(A)` in nats, exact.
    pub fn entropy_nats(&self) -> f64 {
        match self {
            InterarrivalLaw::Geometric { lambda } => {
                geometric_entropy_nats(*lambda).expect("validated rate")
            }
            InterarrivalLaw::Custom { pmf } => plogp_sum(pmf.probs()),
        }
    }

    fn truncated(&self, tol: f64) -> Result<Pmf> {
        match self {
            InterarrivalLaw::Geometric { lambda } => geometric_pmf(*lambda, tol),
            InterarrivalLaw::Custom { pmf } => Ok(pmf.clone()),
        }
    }

    pub fn policy(&self) -> crate::queue_sim::ArrivalPolicy {
        use crate::queue_sim::ArrivalPolicy;
        match self {
            InterarrivalLaw::Geometric { lambda } => ArrivalPolicy::Geometric { lambda: *lambda },
            InterarrivalLaw::Custom { pmf } => ArrivalPolicy::Renewal(pmf.clone()),
        }
    }
}

/// Service law cut at `tol` for enumeration (geometric laws only).
fn truncated_service(service: &ServiceModel, tol: f64) -> Result<Pmf> {
    match service.kind() {
        ServiceKind::Geometric { mu } => geometric_pmf(*mu, tol),
        _ => Ok(service.pmf().clone()),
    }
}

/// Entropy (nats) of a sub-stochastic pmf renormalized to one.
fn renormalized_entropy_nats(p: &Pmf) -> f64 {
    let total: f64 = p.probs().iter().sum();
    let probs: Vec<f64> = p.probs().iter().map(|q| q / total).collect();
    plogp_sum(&probs)
}

/// FIFO as a Markov chain in the sojourn `r = d_{i-1} - a_{i-1}` of the
/// previous packet: `D = (A - r)^+ + S` and `r' = (r - A)^+ + S`.
///
/// For a prefix with state weights `v`, the next letter `d` leaves
/// `r' = S <= d` when `A >= r`, and `r' = d + (r - A) > d` otherwise, so
///
/// ```text
/// child(r') = s(r') c(d - r')    r' <= d,   c(m) = sum_r v(r) a(m + r)
/// child(r') = s(d) e(r' - d)     r' >  d,   e(k) = sum_r v(r) a(r - k)
/// ```
struct FifoKernel {
    a: Vec<f64>,
    s: Vec<f64>,
}

struct Child {
    letter: u32,
    mass: f64,
    state: Vec<f64>,
}

impl FifoKernel {
    fn new(a: &Pmf, s: &Pmf) -> Self {
        let dense = |p: &Pmf| (0..=p.last()).map(|k| p.prob(k)).collect::<Vec<f64>>();
        FifoKernel { a: dense(a), s: dense(s) }
    }

    /// Children of a prefix; with `last` only the letter masses are filled in.
    fn children(&self, v: &[f64], last: bool, out: &mut Vec<Child>) {
        let (amax, smax, rmax) = (self.a.len() - 1, self.s.len() - 1, v.len() - 1);
        let c: Vec<f64> = (0..=amax)
            .map(|m| (0..=rmax.min(amax - m)).map(|r| v[r] * self.a[m + r]).sum())
            .collect();
        let e: Vec<f64> = (0..=rmax)
            .map(|k| if k == 0 { 0.0 } else { (k + 1..=rmax.min(k + amax)).map(|r| v[r] * self.a[r - k]).sum() })
            .collect();
        let e_total: f64 = e.iter().sum();
        out.clear();
        for d in 1..=amax + smax {
            let lo = d.saturating_sub(amax).max(1);
            let direct = |r2: usize| self.s[r2] * c[d - r2];
            let s_d = self.s.get(d).copied().unwrap_or(0.0);
            if last {
                let mass = (lo..=d.min(smax)).map(direct).sum::<f64>() + s_d * e_total;
                if mass > 0.0 {
                    out.push(Child { letter: d as u32, mass, state: Vec::new() });
                }
                continue;
            }
            let mut state = vec![0.0; smax.max(d + rmax) + 1];
            for r2 in lo..=d.min(smax) {
                state[r2] = direct(r2);
            }
            if s_d > 0.0 {
                for (k, &ek) in e.iter().enumerate().skip(1) {
                    state[d + k] = s_d * ek;
                }
            }
            while state.len() > 1 && *state.last().unwrap() == 0.0 {
                state.pop();
            }
            let mass: f64 = state.iter().sum();
            if mass > 0.0 {
                out.push(Child { letter: d as u32, mass, state });
            }
        }
    }

    /// Depth-first walk over all letter sequences of length `n`; `leaf` sees
    /// each sequence with its probability. The work is split on the first
    /// letter and the per-part accumulators are returned in letter order.
    fn walk<T: Send>(
        &self,
        n: usize,
        budget: u128,
        init: impl Fn() -> T + Sync,
        leaf: impl Fn(&mut T, &[u32], f64) + Sync,
    ) -> Result<Vec<T>> {
        let work = AtomicU64::new(0);
        let cap = u64::try_from(budget).unwrap_or(u64::MAX);
        let mut roots = Vec::new();
        self.children(&[1.0], n == 1, &mut roots);
        let parts: Vec<Option<T>> = roots
            .par_iter()
            .map(|root| {
                let mut acc = init();
                let mut prefix = vec![root.letter];
                if n == 1 {
                    leaf(&mut acc, &prefix, root.mass);
                } else if !self.descend(&root.state, n, &mut prefix, &work, cap, &mut acc, &leaf) {
                    return None;
                }
                Some(acc)
            })
            .collect();
        let done = work.load(Ordering::Relaxed);
        parts
            .into_iter()
            .map(|p| p.ok_or(Error::BudgetExceeded { needed: done as u128, budget }))
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn descend<T>(
        &self,
        v: &[f64],
        n: usize,
        prefix: &mut Vec<u32>,
        work: &AtomicU64,
        cap: u64,
        acc: &mut T,
        leaf: &impl Fn(&mut T, &[u32], f64),
    ) -> bool {
        if work.fetch_add(v.len() as u64, Ordering::Relaxed) > cap {
            return false;
        }
        let last = prefix.len() + 1 == n;
        let mut kids = Vec::new();
        self.children(v, last, &mut kids);
        for kid in kids {
            prefix.push(kid.letter);
            let ok = if last {
                leaf(acc, prefix, kid.mass);
                true
            } else {
                self.descend(&kid.state, n, prefix, work, cap, acc, leaf)
            };
            prefix.pop();
            if !ok {
                return false;
            }
        }
        true
    }
}

/// Sorted interdepartures of an LCFS run, written into `out`.
fn lcfs_letters(arrivals: &[u64], services: &[u64], out: &mut Vec<u32>) {
    let trace = lcfs_from_parts(arrivals, services).expect("valid enumerated run");
    out.clear();
    out.extend(trace.interdepartures().into_iter().map(|d| d as u32));
}

/// Exact law of `D^n` for a queue fed by i.i.d. interarrivals, starting empty.
pub fn exact_queue_departure_law(
    discipline: Discipline,
    arrivals: &InterarrivalLaw,
    service: &ServiceModel,
    n: usize,
    limits: &Enumeration,
) -> Result<JointLaw> {
    arrivals.validate()?;
    check_horizon(n, limits)?;
    let a_law = arrivals.truncated(limits.tail_tol)?;
    let s_law = truncated_service(service, limits.tail_tol)?;
    let aa = support(&a_law);
    let ss = support(&s_law);
    let probs = match discipline {
        // state: sojourn d_{i-1} - a_{i-1} of the previous packet
        Discipline::Fifo => {
            let kernel = FifoKernel::new(&a_law, &s_law);
            let parts = kernel.walk(n, limits.budget, BTreeMap::new, |out, key, p| {
                out.insert(key.to_vec(), p);
            })?;
            merge_parts(parts)
        }
        Discipline::LcfsPreemptive => {
            check_budget(aa.len() * ss.len(), n, limits)?;
            let starts: Vec<(u32, f64, u32, f64)> = aa
                .iter()
                .flat_map(|&(a, pa)| ss.iter().map(move |&(s, ps)| (a, pa, s, ps)))
                .collect();
            let parts = starts
                .par_iter()
                .map(|&(a1, pa, s1, ps)| {
                    let mut out = BTreeMap::new();
                    let mut epochs = vec![a1 as u64];
                    let mut services = vec![s1 as u64];
                    let mut letters = Vec::with_capacity(n);
                    lcfs_leaves(&aa, &ss, n, pa * ps, &mut epochs, &mut services, &mut letters, &mut out);
                    out
                })
                .collect();
            merge_parts(parts)
        }
    };
    let total: f64 = probs.values().sum();
    Ok(JointLaw { n, probs, tail_mass: (1.0 - total).max(0.0) })
}

#[allow(clippy::too_many_arguments)]
fn lcfs_leaves(
    aa: &[(u32, f64)],
    ss: &[(u32, f64)],
    n: usize,
    prob: f64,
    epochs: &mut Vec<u64>,
    services: &mut Vec<u64>,
    letters: &mut Vec<u32>,
    out: &mut BTreeMap<Vec<u32>, f64>,
) {
    if epochs.len() == n {
        lcfs_letters(epochs, services, letters);
        match out.get_mut(letters.as_slice()) {
            Some(p) => *p += prob,
            None => {
                out.insert(letters.clone(), prob);
            }
        }
        return;
    }
    let last = *epochs.last().expect("first packet placed");
    for &(a, pa) in aa {
        epochs.push(last + a as u64);
        for &(s, ps) in ss {
            services.push(s as u64);
            lcfs_leaves(aa, ss, n, prob * pa * ps, epochs, services, letters, out);
            services.pop();
        }
        epochs.pop();
    }
}

/// Rigorous bracket on the untruncated `H(D^n) / n` from a truncated exact law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBracket {
    pub n: usize,
    /// `-sum p log p` over the enumerated (sub-stochastic) law, bits.
    pub represented_bits: f64,
    pub tail_mass: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Exact per-letter entropy bracket of a queue-driven channel.
///
/// With `E` the event that some input falls in a truncated tail (mass `t`),
/// `D^n` a function of the inputs `X = (A^n, S^n)`, and `H_r` the entropy of
/// the enumerated part:
///
/// ```text
/// H(D^n) >= (1 - t) H(D^n | E = 0)  = H_r + (1 - t) log (1 - t)
/// H(D^n) <= h(t) + (1 - t) H(D^n | E = 0) + t H(X | E = 1)
///         = H_r + (1 - t) log (1 - t) + H(X) - (1 - t) H(X | E = 0)
/// ```
///
/// where `H(X)` and `H(X | E = 0)` are sums of single-letter entropies.
pub fn exact_rate_bracket(
    discipline: Discipline,
    arrivals: &InterarrivalLaw,
    service: &ServiceModel,
    n: usize,
    limits: &Enumeration,
) -> Result<RateBracket> {
    let a_law = arrivals.truncated(limits.tail_tol)?;
    let s_law = truncated_service(service, limits.tail_tol)?;
    let (h_rep, kept) = match discipline {
        // the joint law is never materialized
        Discipline::Fifo => {
            arrivals.validate()?;
            check_horizon(n, limits)?;
            let parts = FifoKernel::new(&a_law, &s_law).walk(
                n,
                limits.budget,
                || (0.0, 0.0),
                |acc, _, p| {
                    acc.0 -= p * p.ln();
                    acc.1 += p;
                },
            )?;
            parts.into_iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1))
        }
        Discipline::LcfsPreemptive => {
            let law = exact_queue_departure_law(discipline, arrivals, service, n, limits)?;
            (sorted_entropy_nats(law.probs.values().copied().collect()), law.total())
        }
    };
    let kept = kept.min(1.0);
    let t = 1.0 - kept;
    let kept_log = if kept > 0.0 { kept * kept.ln() } else { 0.0 };
    let h_x = n as f64 * (arrivals.entropy_nats() + service.entropy_nats());
    let h_x_kept = n as f64 * (renormalized_entropy_nats(&a_law) + renormalized_entropy_nats(&s_law));
    let lower = (h_rep + kept_log).max(0.0);
    let upper = h_rep + kept_log + (h_x - kept * h_x_kept).max(0.0);
    let nf = n as f64;
    Ok(RateBracket {
        n,
        represented_bits: nats_to_bits(h_rep),
        tail_mass: t,
        lower: nats_to_bits(lower) / nf,
        upper: nats_to_bits(upper) / nf,
    })
}

/// Source of length-`n` blocks of a letter process.
pub trait BlockSource: Sync {
    fn block(&self, rng: &mut ChaCha8Rng, n: usize, out: &mut Vec<u32>);
}

/// i.i.d. letters fed directly, without a queue.
#[derive(Debug, Clone)]
pub struct IidBlocks(pub InterarrivalLaw);

impl BlockSource for IidBlocks {
    fn block(&self, rng: &mut ChaCha8Rng, n: usize, out: &mut Vec<u32>) {
        out.clear();
        match &self.0 {
            InterarrivalLaw::Geometric { lambda } if *lambda < 1.0 => {
                let g = rand_distr::Geometric::new(*lambda).expect("valid rate");
                out.extend((0..n).map(|_| 1 + rand_distr::Distribution::sample(&g, rng) as u32));
            }
            InterarrivalLaw::Geometric { .. } => out.extend((0..n).map(|_| 1)),
            InterarrivalLaw::Custom { pmf } => {
                let s = PmfSampler::new(pmf);
                out.extend((0..n).map(|_| s.sample(rng) as u32));
            }
        }
    }
}

/// Interdepartures of a queue started empty. With `burn_in > 0` the first
/// `burn_in` departures of a `burn_in + n` packet run are dropped.
#[derive(Debug, Clone)]
pub struct QueueBlocks {
    pub discipline: Discipline,
    pub arrivals: InterarrivalLaw,
    pub service: ServiceModel,
    pub burn_in: usize,
}

impl BlockSource for QueueBlocks {
    fn block(&self, rng: &mut ChaCha8Rng, n: usize, out: &mut Vec<u32>) {
        let total = self.burn_in + n;
        let seed = rng.gen::<u64>();
        let policy = self.arrivals.policy();
        let trace = match self.discipline {
            Discipline::Fifo => crate::queue_sim::simulate_fifo(&policy, &self.service, total, seed),
            Discipline::LcfsPreemptive => {
                crate::queue_sim::simulate_lcfs_preemptive(&policy, &self.service, total, seed)
            }
        }
        .expect("validated parameters");
        out.clear();
        out.extend(trace.interdepartures()[self.burn_in..].iter().map(|&d| d as u32));
    }
}

/// Tuning of the Monte Carlo estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McOptions {
    pub samples: usize,
    pub bootstrap: usize,
    /// Samples are drawn in chunks with independent random streams.
    pub chunk: usize,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions { samples: 1_000_000, bootstrap: 100, chunk: 65_536 }
    }
}

/// Block-entropy estimate, all entropies in bits per block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub n: usize,
    pub samples: usize,
    pub distinct: usize,
    pub plug_in: f64,
    /// Miller-Madow corrected estimate.
    pub estimate: f64,
    /// Poisson-bootstrap standard error of the plug-in estimate.
    pub std_error: f64,
    /// Size of the Miller-Madow correction.
    pub bias_bound: f64,
    /// `estimate - 2 std_error - bias_bound`.
    pub lower: f64,
    /// `estimate + 2 std_error`.
    pub upper: f64,
}

impl McEstimate {
    /// `[lower, upper] / n`.
    pub fn per_letter(&self) -> (f64, f64) {
        (self.lower / self.n as f64, self.upper / self.n as f64)
    }
}

fn entropy_of_counts(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    counts.iter().filter(|&&c| c > 0.0).map(|&c| -(c / total) * (c / total).ln()).sum()
}

/// Plug-in block entropy of `samples` independent blocks with Miller-Madow
/// correction and a Poisson-bootstrap standard error.
///
/// Signals undersampling when doubling the sample count nearly doubles the
/// number of distinct blocks seen.
pub fn mc_block_entropy(
    source: &dyn BlockSource,
    n: usize,
    seed: u64,
    opts: &McOptions,
) -> Result<McEstimate> {
    if n == 0 || opts.samples < 2 || opts.chunk == 0 {
        return Err(Error::InvalidParameter("need n >= 1 and at least two samples".into()));
    }
    let chunks = opts.samples.div_ceil(opts.chunk);
    let parts: Vec<HashMap<Vec<u32>, (u64, u64)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let lo = c * opts.chunk;
            let hi = (lo + opts.chunk).min(opts.samples);
            let half = opts.samples / 2;
            let mut counts: HashMap<Vec<u32>, (u64, u64)> = HashMap::new();
            let mut buf = Vec::with_capacity(n);
            for i in lo..hi {
                source.block(&mut rng, n, &mut buf);
                let e = counts.entry(buf.clone()).or_insert((0, 0));
                e.0 += 1;
                if i < half {
                    e.1 += 1;
                }
            }
            counts
        })
        .collect();
    let mut merged: HashMap<Vec<u32>, (u64, u64)> = HashMap::new();
    for part in parts {
        for (k, (all, first)) in part {
            let e = merged.entry(k).or_insert((0, 0));
            e.0 += all;
            e.1 += first;
        }
    }
    let distinct = merged.len();
    let distinct_half = merged.values().filter(|c| c.1 > 0).count();
    if distinct_half > 0 && distinct as f64 > 1.9 * distinct_half as f64 {
        return Err(Error::Undersampled { distinct, samples: opts.samples });
    }
    // a fixed order makes float sums reproducible
    let mut counts: Vec<f64> = merged.values().map(|c| c.0 as f64).collect();
    counts.sort_by(f64::total_cmp);
    let total = opts.samples as f64;
    let plug_in = entropy_of_counts(&counts);
    let correction = (distinct as f64 - 1.0) / (2.0 * total);

    let replicates: Vec<f64> = (0..opts.bootstrap)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b007);
            rng.set_stream(r as u64);
            let boot: Vec<f64> = counts
                .iter()
                .map(|&c| {
                    let p = rand_distr::Poisson::new(c).expect("positive count");
                    rand_distr::Distribution::<f64>::sample(&p, &mut rng)
                })
                .collect();
            entropy_of_counts(&boot)
        })
        .collect();
    let std_error = if replicates.len() > 1 {
        let m = replicates.iter().sum::<f64>() / replicates.len() as f64;
        (replicates.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (replicates.len() - 1) as f64)
            .sqrt()
    } else {
        0.0
    };
    let estimate = nats_to_bits(plug_in + correction);
    let std_error = nats_to_bits(std_error);
    let bias_bound = nats_to_bits(correction);
    Ok(McEstimate {
        n,
        samples: opts.samples,
        distinct,
        plug_in: nats_to_bits(plug_in),
        estimate,
        std_error,
        bias_bound,
        lower: (estimate - 2.0 * std_error - bias_bound).max(0.0),
        upper: estimate + 2.0 * std_error,
    })
}

/// Both sides of the single-letterization inequality at horizon `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLetterGap {
    pub n: usize,
    /// `H(D^n) / n - H(S)`, bits.
    pub left: f64,
    /// `c(E[W_bar])`, bits.
    pub right: f64,
    /// `E[W_bar] = (1/n) sum E[W_i]`, with `W_1 = X_1` and
    /// `W_i = (X_i - S_{i-1})^+` afterwards.
    pub mean_budget: f64,
}

/// `(H(D^n)/n - H(S), c(E[W_bar]))` for i.i.d. inputs `X_i ~ p_x`.
pub fn multi_letter_gap(
    p_x: &Pmf,
    service: &ServiceModel,
    n: usize,
    limits: &Enumeration,
    opts: &SolverOptions,
) -> Result<MultiLetterGap> {
    let law = exact_departure_law(p_x, service, n, limits)?;
    let h_s = nats_to_bits(service.entropy_nats());
    let left = per_letter_entropy(&law)? - h_s;
    let w = pplus_law(p_x, service.pmf())?;
    let mean_budget = (mean(p_x) + (n as f64 - 1.0) * mean(&w)) / n as f64;
    let sup = sup_entropy_weak(service, mean_budget, opts)?;
    Ok(MultiLetterGap { n, left, right: (sup.value_bits - h_s).max(0.0), mean_budget })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{convolve, entropy, Base};

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol:e})");
    }

    fn limits() -> Enumeration {
        Enumeration::default()
    }

    #[test]
    fn zero_input_gives_service_law() {
        let s = ServiceModel::binary12();
        let law = exact_departure_law(&Pmf::point(0), &s, 1, &limits()).unwrap();
        assert_eq!(law.marginal(0), *s.pmf());
        let law = exact_departure_law(&Pmf::point(0), &s, 2, &limits()).unwrap();
        for (k, &p) in &law.probs {
            close(p, s.pmf().prob(k[0] as usize) * s.pmf().prob(k[1] as usize), 1e-15);
        }
        for n in 1..=4 {
            let law = exact_departure_law(&Pmf::point(0), &s, n, &limits()).unwrap();
            close(per_letter_entropy(&law).unwrap(), 1.0, 1e-12);
        }
    }

    #[test]
    fn deterministic_service_passes_inputs_through() {
        let s = ServiceModel::deterministic(2).unwrap();
        let g = geometric_pmf(0.5, 1e-14).unwrap().shift(-1).unwrap();
        let law = exact_departure_law(&g, &s, 2, &limits()).unwrap();
        // D_1 = X_1 + 2 and D_i = max(X_i, 2) afterwards (S_0 = 0)
        close(law.marginal(0).prob(2), g.prob(0), 1e-12);
        let h1 = entropy(&convolve(&g, s.pmf()), Base::Bits).unwrap();
        close(nats_to_bits(plogp_sum(law.marginal(0).probs())), h1, 1e-9);
    }

    #[test]
    fn enumeration_matches_brute_force() {
        let s = ServiceModel::binary12();
        let px = Pmf::uniform(0, 2).unwrap();
        let law = exact_departure_law(&px, &s, 2, &limits()).unwrap();
        let mut brute: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for x1 in 0..=2u32 {
            for s1 in 1..=2u32 {
                for x2 in 0..=2u32 {
                    for s2 in 1..=2u32 {
                        let d1 = x1 + s1;
                        let d2 = x2.saturating_sub(s1) + s2;
                        *brute.entry(vec![d1, d2]).or_insert(0.0) += 1.0 / 36.0;
                    }
                }
            }
        }
        assert_eq!(law.probs.len(), brute.len());
        for (k, p) in &brute {
            close(law.probs[k], *p, 1e-15);
        }
    }

    #[test]
    fn enumeration_agrees_with_sampling() {
        let s = ServiceModel::binary12();
        let px = Pmf::uniform(0, 2).unwrap();
        let law = exact_departure_law(&px, &s, 2, &limits()).unwrap();
        let samples = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs = PmfSampler::new(&px);
        let sampler = s.sampler();
        let mut counts: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for _ in 0..samples {
            let (x1, s1) = (xs.sample(&mut rng) as u32, sampler.sample(&mut rng) as u32);
            let (x2, s2) = (xs.sample(&mut rng) as u32, sampler.sample(&mut rng) as u32);
            *counts.entry(vec![x1 + s1, x2.saturating_sub(s1) + s2]).or_insert(0.0) += 1.0;
        }
        for (k, &p) in &law.probs {
            let f = counts.get(k).copied().unwrap_or(0.0) / samples as f64;
            let sigma = (p * (1.0 - p) / samples as f64).sqrt();
            assert!((f - p).abs() <= 4.0 * sigma, "{k:?}: {f} vs {p}");
        }
    }

    #[test]
    fn horizon_and_budget_limits() {
        let s = ServiceModel::binary12();
        let px = Pmf::uniform(0, 3).unwrap();
        assert!(exact_departure_law(&px, &s, 9, &limits()).is_err());
        let tight = Enumeration { budget: 1000, ..limits() };
        assert!(matches!(
            exact_departure_law(&px, &s, 4, &tight),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn subadditivity() {
        let s = ServiceModel::binary12();
        let px = Pmf::uniform(0, 3).unwrap();
        for n in 2..=4 {
            let law = exact_departure_law(&px, &s, n, &limits()).unwrap();
            let joint = block_entropy(&law).unwrap();
            let sum: f64 = (0..n)
                .map(|i| nats_to_bits(plogp_sum(law.marginal(i).probs())))
                .sum();
            assert!(joint <= sum + 1e-12);
        }
    }

    #[test]
    fn multi_letter_examples() {
        let s = ServiceModel::binary12();
        let o = SolverOptions::default();
        let z = multi_letter_gap(&Pmf::point(0), &s, 3, &limits(), &o).unwrap();
        close(z.left, 0.0, 1e-12);
        assert_eq!(z.right, 0.0);
        let px = Pmf::uniform(0, 3).unwrap();
        for n in 2..=4 {
            let g = multi_letter_gap(&px, &s, n, &limits(), &o).unwrap();
            assert!(g.left <= g.right + 1e-9, "n={n}: {g:?}");
        }
    }

    #[test]
    fn single_letter_tight_for_unit_service() {
        // X geometric on {0, 1, ...} with mean 1: D_1 = X + 1 is g_{1/2}
        let s = ServiceModel::deterministic(1).unwrap();
        let x = geometric_pmf(0.5, 1e-15).unwrap().shift(-1).unwrap();
        let o = SolverOptions::default();
        let g = multi_letter_gap(&x, &s, 1, &limits(), &o).unwrap();
        close(g.left, 2.0, 1e-6);
        close(g.right, 2.0, 1e-6);
        // beyond n = 1 the empty-queue start makes later letters lose entropy
        let g = multi_letter_gap(&x, &s, 3, &limits(), &o).unwrap();
        assert!(g.left < g.right);
    }

    #[test]
    fn queue_law_single_packet() {
        let s = ServiceModel::binary12();
        let arr = InterarrivalLaw::Custom { pmf: Pmf::uniform(1, 3).unwrap() };
        for d in [Discipline::Fifo, Discipline::LcfsPreemptive] {
            let law = exact_queue_departure_law(d, &arr, &s, 1, &limits()).unwrap();
            let want = convolve(&Pmf::uniform(1, 3).unwrap(), s.pmf());
            for (k, &p) in &law.probs {
                close(p, want.prob(k[0] as usize), 1e-15);
            }
        }
    }

    #[test]
    fn fifo_markov_enumeration_matches_simulation_leaves() {
        // enumerate leaves directly through the simulator as an independent oracle
        let s = ServiceModel::binary12();
        let a = Pmf::new(1, vec![0.2, 0.5, 0.3], 0.0).unwrap();
        let arr = InterarrivalLaw::Custom { pmf: a.clone() };
        let law = exact_queue_departure_law(Discipline::Fifo, &arr, &s, 3, &limits()).unwrap();
        let mut brute: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for code in 0..(6u32.pow(3)) {
            let mut c = code;
            let (mut epochs, mut services, mut p) = (Vec::new(), Vec::new(), 1.0);
            let mut t = 0;
            for _ in 0..3 {
                let (ai, si) = ((c % 3) as usize + 1, (c / 3 % 2) as u64 + 1);
                c /= 6;
                t += ai as u64;
                epochs.push(t);
                services.push(si);
                p *= a.prob(ai) * 0.5;
            }
            let trace = crate::queue_sim::fifo_from_parts(&epochs, &services).unwrap();
            let key: Vec<u32> = trace.interdepartures().iter().map(|&d| d as u32).collect();
            *brute.entry(key).or_insert(0.0) += p;
        }
        assert_eq!(law.probs.len(), brute.len());
        for (k, p) in &brute {
            close(law.probs[k], *p, 1e-15);
        }
    }

    #[test]
    fn lcfs_and_fifo_laws_differ_when_packets_overlap() {
        let s = ServiceModel::deterministic(3).unwrap();
        let arr = InterarrivalLaw::Custom { pmf: Pmf::new(1, vec![0.5, 0.5], 0.0).unwrap() };
        let f = exact_queue_departure_law(Discipline::Fifo, &arr, &s, 2, &limits()).unwrap();
        let l = exact_queue_departure_law(Discipline::LcfsPreemptive, &arr, &s, 2, &limits()).unwrap();
        // FIFO: D = (A_1 + 3, 3). LCFS: packet 2 preempts, so D = (A_1 + A_2 + 3, 3 - A_2)
        let f_keys: Vec<Vec<u32>> = f.probs.keys().cloned().collect();
        assert_eq!(f_keys, vec![vec![4, 3], vec![5, 3]]);
        let l_keys: Vec<Vec<u32>> = l.probs.keys().cloned().collect();
        assert_eq!(l_keys, vec![vec![5, 2], vec![6, 1], vec![6, 2], vec![7, 1]]);
        close(f.total(), 1.0, 1e-15);
        close(l.total(), 1.0, 1e-15);
    }

    #[test]
    fn bracket_contains_represented_rate() {
        let s = ServiceModel::binary12();
        let arr = InterarrivalLaw::Geometric { lambda: 0.4 };
        let b = exact_rate_bracket(Discipline::Fifo, &arr, &s, 2, &limits()).unwrap();
        assert!(b.lower <= b.represented_bits / 2.0 + 1e-12);
        assert!(b.upper >= b.lower);
        assert!(b.upper - b.lower < 1e-3, "{b:?}");
        assert!(b.tail_mass > 0.0 && b.tail_mass < 1e-5);
    }

    #[test]
    fn bracket_is_exact_without_truncation() {
        let s = ServiceModel::binary12();
        let arr = InterarrivalLaw::Custom { pmf: Pmf::uniform(1, 3).unwrap() };
        let b = exact_rate_bracket(Discipline::LcfsPreemptive, &arr, &s, 3, &limits()).unwrap();
        close(b.lower, b.upper, 1e-12);
        close(b.lower, b.represented_bits / 3.0, 1e-12);
    }

    #[test]
    fn mc_deterministic_is_zero() {
        let src = QueueBlocks {
            discipline: Discipline::Fifo,
            arrivals: InterarrivalLaw::Custom { pmf: Pmf::point(3) },
            service: ServiceModel::deterministic(1).unwrap(),
            burn_in: 0,
        };
        let est = mc_block_entropy(&src, 4, 1, &McOptions { samples: 1000, ..Default::default() })
            .unwrap();
        assert_eq!(est.estimate, 0.0);
        assert_eq!(est.lower, 0.0);
        assert_eq!(est.upper, 0.0);
    }

    #[test]
    fn mc_iid_geometric_matches_closed_form() {
        let src = IidBlocks(InterarrivalLaw::Geometric { lambda: 0.4 });
        let est = mc_block_entropy(&src, 1, 3, &McOptions { samples: 200_000, ..Default::default() })
            .unwrap();
        let h = nats_to_bits(geometric_entropy_nats(0.4).unwrap());
        close(h, 2.4274, 1e-4);
        assert!(est.lower <= h && h <= est.upper, "{est:?} vs {h}");
    }

    #[test]
    fn mc_is_reproducible() {
        let src = IidBlocks(InterarrivalLaw::Geometric { lambda: 0.4 });
        let o = McOptions { samples: 50_000, bootstrap: 20, chunk: 7_000 };
        assert_eq!(mc_block_entropy(&src, 2, 9, &o).unwrap(), mc_block_entropy(&src, 2, 9, &o).unwrap());
    }

    #[test]
    fn undersampling_is_signalled() {
        let src = IidBlocks(InterarrivalLaw::Geometric { lambda: 0.05 });
        let r = mc_block_entropy(&src, 6, 1, &McOptions { samples: 2_000, ..Default::default() });
        assert!(matches!(r, Err(Error::Undersampled { .. })));
    }

    #[test]
    fn joint_law_csv() {
        let s = ServiceModel::binary12();
        let law = exact_departure_law(&Pmf::point(0), &s, 1, &limits()).unwrap();
        assert_eq!(law.to_csv(), "D1_slots,probability\n1,0.5\n2,0.5\n");
    }
}

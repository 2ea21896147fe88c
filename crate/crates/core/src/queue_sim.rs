//! Discrete-time single-server queue under FIFO and preemptive-resume LCFS.
//!
//! Slots are nonnegative integers, the queue starts empty and `d_0 = 0`.
//! Under FIFO `b_i = max(a_i, d_{i-1})` and `d_i = b_i + S_i`; `b_i` is the
//! weak-feedback signal, available to the sender before `S_i` is drawn.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{Pmf, PmfSampler, ServiceModel};
use crate::error::{Error, Result};

/// A causal weak-feedback sender: the epoch of packet `i` (0-based) may depend
/// on the message and on `b_1..b_i` of the packets already sent, nothing else.
pub trait Strategy: Send + Sync + fmt::Debug {
    /// `b_prior.len()` is the index of the packet being placed.
    fn arrival(&self, message: u64, b_prior: &[u64]) -> u64;
}

/// How arrival epochs are produced.
#[derive(Debug, Clone)]
pub enum ArrivalPolicy {
    /// i.i.d. geometric interarrivals on `{1, 2, ...}` with rate `lambda`,
    /// sampled exactly.
    Geometric { lambda: f64 },
    /// i.i.d. interarrivals `A_i = a_i - a_{i-1}` (with `a_0 = 0`) drawn from
    /// the represented support of a pmf.
    Renewal(Pmf),
    /// Fixed arrival epochs.
    Fixed(Vec<u64>),
    /// A weak-feedback strategy sending `message`.
    Feedback { strategy: Arc<dyn Strategy>, message: u64 },
}

/// One realized run of the queue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueTrace {
    pub arrivals: Vec<u64>,
    /// First slot in which each packet is served.
    pub service_starts: Vec<u64>,
    pub departures: Vec<u64>,
    pub services: Vec<u64>,
}

impl QueueTrace {
    pub const CSV_HEADER: &'static str = "i,a_i,b_i,d_i,S_i";

    pub fn len(&self) -> usize {
        self.arrivals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals.is_empty()
    }

    /// Departure epochs in increasing order.
    pub fn sorted_departures(&self) -> Vec<u64> {
        let mut d = self.departures.clone();
        d.sort_unstable();
        d
    }

    /// `D_i = d_(i) - d_(i-1)` on the sorted departure epochs, `d_(0) = 0`.
    pub fn interdepartures(&self) -> Vec<u64> {
        let mut prev = 0;
        self.sorted_departures()
            .into_iter()
            .map(|d| {
                let x = d - prev;
                prev = d;
                x
            })
            .collect()
    }

    /// Checks the FIFO recursion on every packet.
    pub fn satisfies_fifo(&self) -> bool {
        let mut prev_d = 0;
        let mut prev_a = 0;
        for i in 0..self.len() {
            let (a, b, d, s) =
                (self.arrivals[i], self.service_starts[i], self.departures[i], self.services[i]);
            if a < prev_a || s == 0 || b != a.max(prev_d) || d != b + s {
                return false;
            }
            prev_d = d;
            prev_a = a;
        }
        true
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                i + 1,
                self.arrivals[i],
                self.service_starts[i],
                self.departures[i],
                self.services[i]
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("ascii")
    }
}

/// Arrival epochs for the open-loop policies.
enum ArrivalSource {
    Geometric(Option<rand_distr::Geometric>),
    Table(PmfSampler),
    Fixed(Vec<u64>),
    Feedback(Arc<dyn Strategy>, u64),
}

impl ArrivalSource {
    fn new(policy: &ArrivalPolicy, n: usize) -> Result<Self> {
        Ok(match policy {
            ArrivalPolicy::Geometric { lambda } => {
                if !(*lambda > 0.0 && *lambda <= 1.0) {
                    return Err(Error::InvalidParameter(format!("arrival rate {lambda} outside (0, 1]")));
                }
                ArrivalSource::Geometric(
                    (*lambda < 1.0).then(|| rand_distr::Geometric::new(*lambda).expect("valid rate")),
                )
            }
            ArrivalPolicy::Renewal(p) => ArrivalSource::Table(PmfSampler::new(p)),
            ArrivalPolicy::Fixed(a) => {
                if a.len() < n {
                    return Err(Error::InvalidParameter(format!(
                        "{} fixed arrivals for {n} packets",
                        a.len()
                    )));
                }
                ArrivalSource::Fixed(a.clone())
            }
            ArrivalPolicy::Feedback { strategy, message } => {
                ArrivalSource::Feedback(strategy.clone(), *message)
            }
        })
    }

    fn next(&self, rng: &mut ChaCha8Rng, prev: u64, b_prior: &[u64]) -> u64 {
        match self {
            ArrivalSource::Geometric(None) => prev + 1,
            ArrivalSource::Geometric(Some(g)) => {
                prev + 1 + rand_distr::Distribution::sample(g, rng)
            }
            ArrivalSource::Table(t) => prev + t.sample(rng) as u64,
            ArrivalSource::Fixed(a) => a[b_prior.len()],
            ArrivalSource::Feedback(s, m) => s.arrival(*m, b_prior),
        }
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one packet".into()));
    }
    Ok(())
}

fn check_monotone(i: usize, a: u64, prev: u64) -> Result<()> {
    if a < prev {
        return Err(Error::InvalidParameter(format!(
            "arrival {} at slot {a} precedes the previous arrival at {prev}",
            i + 1
        )));
    }
    Ok(())
}

/// FIFO run; the sender sees `b_1..b_{i-1}` before placing packet `i`, and
/// `S_i` is drawn only after `a_i` is fixed.
pub fn simulate_fifo(
    policy: &ArrivalPolicy,
    service: &ServiceModel,
    n: usize,
    seed: u64,
) -> Result<QueueTrace> {
    check_n(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = ArrivalSource::new(policy, n)?;
    let sampler = service.sampler();
    let mut trace = QueueTrace {
        arrivals: Vec::with_capacity(n),
        service_starts: Vec::with_capacity(n),
        departures: Vec::with_capacity(n),
        services: Vec::with_capacity(n),
    };
    let (mut prev_a, mut prev_d) = (0, 0);
    for i in 0..n {
        let a = source.next(&mut rng, prev_a, &trace.service_starts);
        check_monotone(i, a, prev_a)?;
        let b = a.max(prev_d);
        let s = sampler.sample(&mut rng) as u64;
        let d = b + s;
        trace.arrivals.push(a);
        trace.service_starts.push(b);
        trace.departures.push(d);
        trace.services.push(s);
        prev_a = a;
        prev_d = d;
    }
    Ok(trace)
}

/// FIFO run with given arrivals and service times.
pub fn fifo_from_parts(arrivals: &[u64], services: &[u64]) -> Result<QueueTrace> {
    if arrivals.len() != services.len() {
        return Err(Error::InvalidParameter("arrivals and services differ in length".into()));
    }
    let mut starts = Vec::with_capacity(arrivals.len());
    let mut deps = Vec::with_capacity(arrivals.len());
    let (mut prev_a, mut prev_d) = (0, 0);
    for (i, (&a, &s)) in arrivals.iter().zip(services).enumerate() {
        check_monotone(i, a, prev_a)?;
        if s == 0 {
            return Err(Error::InvalidParameter("service takes at least one slot".into()));
        }
        let b = a.max(prev_d);
        starts.push(b);
        deps.push(b + s);
        prev_a = a;
        prev_d = b + s;
    }
    Ok(QueueTrace {
        arrivals: arrivals.to_vec(),
        service_starts: starts,
        departures: deps,
        services: services.to_vec(),
    })
}

/// Preemptive-resume LCFS with given arrivals and service times.
///
/// An arrival goes on top of the stack and is served from its arrival slot
/// on; the interrupted packet keeps its residual work. A packet whose work
/// completes at epoch `t` leaves at `t`, before arrivals at `t` are stacked.
/// Packets arriving in the same slot are stacked in index order, so the last
/// of them is served first.
pub fn lcfs_from_parts(arrivals: &[u64], services: &[u64]) -> Result<QueueTrace> {
    let n = arrivals.len();
    if services.len() != n {
        return Err(Error::InvalidParameter("arrivals and services differ in length".into()));
    }
    for i in 0..n {
        check_monotone(i, arrivals[i], if i > 0 { arrivals[i - 1] } else { 0 })?;
        if services[i] == 0 {
            return Err(Error::InvalidParameter("service takes at least one slot".into()));
        }
    }
    let mut starts = vec![None; n];
    let mut deps = vec![0; n];
    // (packet, residual work)
    let mut stack: Vec<(usize, u64)> = Vec::new();
    let mut t = 0;
    let mut next = 0;
    while next < n || !stack.is_empty() {
        match stack.last_mut() {
            None => {
                t = t.max(arrivals[next]);
                stack.push((next, services[next]));
                next += 1;
            }
            Some((idx, residual)) => {
                starts[*idx].get_or_insert(t);
                let horizon = if next < n { arrivals[next] } else { u64::MAX };
                if t + *residual <= horizon {
                    t += *residual;
                    deps[*idx] = t;
                    stack.pop();
                } else {
                    *residual -= horizon - t;
                    t = horizon;
                    stack.push((next, services[next]));
                    next += 1;
                }
            }
        }
    }
    Ok(QueueTrace {
        arrivals: arrivals.to_vec(),
        service_starts: starts.into_iter().map(|s| s.expect("every packet is served")).collect(),
        departures: deps,
        services: services.to_vec(),
    })
}

/// Preemptive-resume LCFS run (see [`lcfs_from_parts`] for the slot rules).
/// Feedback strategies are not supported: LCFS has no weak-feedback signal.
pub fn simulate_lcfs_preemptive(
    policy: &ArrivalPolicy,
    service: &ServiceModel,
    n: usize,
    seed: u64,
) -> Result<QueueTrace> {
    check_n(n)?;
    if matches!(policy, ArrivalPolicy::Feedback { .. }) {
        return Err(Error::InvalidParameter("LCFS runs take open-loop arrivals".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = ArrivalSource::new(policy, n)?;
    let sampler = service.sampler();
    let mut arrivals = Vec::with_capacity(n);
    let mut services = Vec::with_capacity(n);
    let mut prev = 0;
    // interleaved draws keep the random stream identical to the FIFO run
    for i in 0..n {
        let a = source.next(&mut rng, prev, &arrivals[..i]);
        arrivals.push(a);
        services.push(sampler.sample(&mut rng) as u64);
        prev = a;
    }
    lcfs_from_parts(&arrivals, &services)
}

/// Wraps a strategy so that packet `i` never arrives before `b_{i-1}`.
#[derive(Debug)]
pub struct Normalized(pub Arc<dyn Strategy>);

impl Strategy for Normalized {
    fn arrival(&self, message: u64, b_prior: &[u64]) -> u64 {
        let a = self.0.arrival(message, b_prior);
        a.max(b_prior.last().copied().unwrap_or(0))
    }
}

/// `a_i -> max(a_i, b_{i-1})`. The departure law given the message is unchanged:
/// a packet arriving before `b_{i-1}` waits until at least `d_{i-1}` either way.
pub fn normalize_strategy(policy: &ArrivalPolicy) -> Result<ArrivalPolicy> {
    match policy {
        ArrivalPolicy::Feedback { strategy, message } => Ok(ArrivalPolicy::Feedback {
            strategy: Arc::new(Normalized(strategy.clone())),
            message: *message,
        }),
        ArrivalPolicy::Fixed(a) => Ok(ArrivalPolicy::Feedback {
            strategy: Arc::new(Normalized(Arc::new(FixedStrategy(a.clone())))),
            message: 0,
        }),
        _ => Err(Error::InvalidParameter(
            "only deterministic strategies can be normalized".into(),
        )),
    }
}

/// Open-loop strategy with fixed epochs.
#[derive(Debug, Clone)]
pub struct FixedStrategy(pub Vec<u64>);

impl Strategy for FixedStrategy {
    fn arrival(&self, _message: u64, b_prior: &[u64]) -> u64 {
        self.0[b_prior.len()]
    }
}

/// Pseudo-random strategy: `a_i = max(a_{i-1}, h_i)` with `h_i` uniform on
/// `{0..=max_value}`, hashed from the seed, the message, `i` and `b_1..b_{i-1}`.
#[derive(Debug, Clone, Copy)]
pub struct RandomStrategy {
    pub seed: u64,
    pub max_value: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Strategy for RandomStrategy {
    fn arrival(&self, message: u64, b_prior: &[u64]) -> u64 {
        let mut a = 0;
        for i in 0..=b_prior.len() {
            let mut h = splitmix(self.seed ^ splitmix(message) ^ splitmix(i as u64 + 1));
            for &b in &b_prior[..i] {
                h = splitmix(h ^ b);
            }
            a = a.max(h % (self.max_value + 1));
        }
        a
    }
}

/// Exact law of the departure vector `d^n` of a FIFO run driven by
/// `strategy`, by enumeration over the service times.
pub fn exact_fifo_departure_law(
    strategy: &dyn Strategy,
    message: u64,
    service: &ServiceModel,
    n: usize,
    budget: u128,
) -> Result<BTreeMap<Vec<u64>, f64>> {
    check_n(n)?;
    let support: Vec<(u64, f64)> =
        service.pmf().iter().filter(|&(_, p)| p > 0.0).map(|(s, p)| (s as u64, p)).collect();
    let needed = (support.len() as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if needed > budget {
        return Err(Error::BudgetExceeded { needed, budget });
    }
    let mut law = BTreeMap::new();
    let mut b = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    fn rec(
        strategy: &dyn Strategy,
        message: u64,
        support: &[(u64, f64)],
        n: usize,
        prob: f64,
        b: &mut Vec<u64>,
        d: &mut Vec<u64>,
        law: &mut BTreeMap<Vec<u64>, f64>,
    ) {
        if d.len() == n {
            *law.entry(d.clone()).or_insert(0.0) += prob;
            return;
        }
        let a = strategy.arrival(message, b);
        let start = a.max(d.last().copied().unwrap_or(0));
        b.push(start);
        for &(s, p) in support {
            d.push(start + s);
            rec(strategy, message, support, n, prob * p, b, d, law);
            d.pop();
        }
        b.pop();
    }
    rec(strategy, message, &support, n, 1.0, &mut b, &mut d, &mut law);
    Ok(law)
}

/// Total-variation distance between two laws on vectors.
pub fn total_variation(p: &BTreeMap<Vec<u64>, f64>, q: &BTreeMap<Vec<u64>, f64>) -> f64 {
    let mut tv = 0.0;
    for (k, &v) in p {
        tv += (v - q.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, &v) in q {
        if !p.contains_key(k) {
            tv += v.abs();
        }
    }
    tv / 2.0
}

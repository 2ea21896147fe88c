//! Integer-supported probability mass functions and the service-time models
//! built on them.
//!
//! Infinite-support laws are carried truncated: a [`Pmf`] stores the mass it
//! represents explicitly plus the probability that fell off the end of the
//! represented support (`tail_mass`). Operations propagate tail bounds
//! additively; nothing is silently renormalized.
//!
//! All internal arithmetic is in nats. [`Base`] selects the reporting unit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default truncation tolerance for infinite-support laws.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

/// Allowed deviation of `sum(probs) + tail_mass` from one.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Logarithm base used when reporting an entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Base {
    Bits,
    Nats,
}

impl Base {
    /// Converts a value in nats into this base.
    pub fn from_nats(self, nats: f64) -> f64 {
        match self {
            Base::Bits => nats / std::f64::consts::LN_2,
            Base::Nats => nats,
        }
    }
}

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

pub fn bits_to_nats(bits: f64) -> f64 {
    bits * std::f64::consts::LN_2
}

/// A probability mass function on the contiguous support
/// `offset, offset + 1, ..., offset + probs.len() - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PmfRepr")]
pub struct Pmf {
    offset: usize,
    probs: Vec<f64>,
    tail_mass: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PmfRepr {
    offset: usize,
    probs: Vec<f64>,
    #[serde(default)]
    tail_mass: f64,
}

impl TryFrom<PmfRepr> for Pmf {
    type Error = Error;

    fn try_from(r: PmfRepr) -> Result<Self> {
        Pmf::new(r.offset, r.probs, r.tail_mass)
    }
}

impl Pmf {
    /// Builds a pmf, checking non-negativity and normalization.
    pub fn new(offset: usize, probs: Vec<f64>, tail_mass: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidPmf("empty support".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidPmf(format!("entry {p} is not a probability")));
        }
        if !tail_mass.is_finite() || tail_mass < 0.0 {
            return Err(Error::InvalidPmf(format!("tail mass {tail_mass} is negative")));
        }
        let total: f64 = probs.iter().sum::<f64>() + tail_mass;
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidPmf(format!("total mass {total} differs from 1")));
        }
        Ok(Pmf { offset, probs, tail_mass })
    }

    /// Normalizes non-negative weights into a pmf with no tail.
    pub fn from_weights(offset: usize, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidPmf("weights must have positive finite sum".into()));
        }
        let probs = weights.into_iter().map(|w| w / total).collect();
        Pmf::new(offset, probs, 0.0)
    }

    /// Point mass at `k`.
    pub fn point(k: usize) -> Self {
        Pmf { offset: k, probs: vec![1.0], tail_mass: 0.0 }
    }

    /// Uniform law on `lo..=hi`.
    pub fn uniform(lo: usize, hi: usize) -> Result<Self> {
        if hi < lo {
            return Err(Error::InvalidParameter(format!("empty range {lo}..={hi}")));
        }
        let n = hi - lo + 1;
        Ok(Pmf { offset: lo, probs: vec![1.0 / n as f64; n], tail_mass: 0.0 })
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Largest represented support point.
    pub fn last(&self) -> usize {
        self.offset + self.probs.len() - 1
    }

    /// Probability of `k` (zero outside the represented support).
    pub fn prob(&self, k: usize) -> f64 {
        if k < self.offset {
            return 0.0;
        }
        self.probs.get(k - self.offset).copied().unwrap_or(0.0)
    }

    /// `(k, p_k)` pairs over the represented support.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.probs.iter().enumerate().map(move |(i, &p)| (self.offset + i, p))
    }

    /// Dense vector indexed from zero (entries below `offset` are zero).
    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.offset];
        v.extend_from_slice(&self.probs);
        v
    }

    /// Builds a pmf from a dense zero-based vector, trimming zero edges.
    pub fn from_dense(dense: &[f64], tail_mass: f64) -> Result<Self> {
        let first = dense.iter().position(|&p| p > 0.0);
        let Some(first) = first else {
            return Err(Error::InvalidPmf("no positive mass".into()));
        };
        let last = dense.iter().rposition(|&p| p > 0.0).unwrap_or(first);
        Pmf::new(first, dense[first..=last].to_vec(), tail_mass)
    }

    /// Drops zero entries at both ends of the stored window.
    fn trimmed(mut self) -> Pmf {
        let first = self.probs.iter().position(|&p| p > 0.0).unwrap_or(0);
        let last = self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(first);
        self.probs.truncate(last + 1);
        self.probs.drain(..first);
        self.offset += first;
        self
    }

    /// Mixture `alpha * self + (1 - alpha) * other`.
    pub fn mix(&self, other: &Pmf, alpha: f64) -> Result<Pmf> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidParameter(format!("mixture weight {alpha}")));
        }
        let lo = self.offset.min(other.offset);
        let hi = self.last().max(other.last());
        let probs = (lo..=hi)
            .map(|k| alpha * self.prob(k) + (1.0 - alpha) * other.prob(k))
            .collect();
        let tail = alpha * self.tail_mass + (1.0 - alpha) * other.tail_mass;
        Ok(Pmf { offset: lo, probs, tail_mass: tail })
    }

    /// Law of `X + delta`.
    pub fn shift(&self, delta: i64) -> Result<Pmf> {
        let offset = self.offset as i64 + delta;
        if offset < 0 {
            return Err(Error::InvalidParameter(format!(
                "shift by {delta} moves support below zero"
            )));
        }
        Ok(Pmf { offset: offset as usize, probs: self.probs.clone(), tail_mass: self.tail_mass })
    }

    /// Whether the law is a point mass on the represented support.
    pub fn is_degenerate(&self) -> bool {
        self.tail_mass == 0.0 && self.probs.iter().filter(|&&p| p > 0.0).count() == 1
    }

    /// Total-variation distance over the represented supports.
    pub fn total_variation(&self, other: &Pmf) -> f64 {
        let lo = self.offset.min(other.offset);
        let hi = self.last().max(other.last());
        0.5 * (lo..=hi).map(|k| (self.prob(k) - other.prob(k)).abs()).sum::<f64>()
    }
}

/// Inverse-CDF sampler over the represented support of a [`Pmf`].
#[derive(Debug, Clone)]
pub struct PmfSampler {
    offset: usize,
    cumulative: Vec<f64>,
}

impl PmfSampler {
    pub fn new(p: &Pmf) -> Self {
        let mut acc = 0.0;
        let cumulative = p
            .probs
            .iter()
            .map(|&q| {
                acc += q;
                acc
            })
            .collect();
        PmfSampler { offset: p.offset, cumulative }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty support");
        let u = rng.gen::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c <= u);
        self.offset + idx.min(self.cumulative.len() - 1)
    }
}

pub(crate) fn plogp_sum(probs: &[f64]) -> f64 {
    probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

/// Entropy with the default tail tolerance.
pub fn entropy(p: &Pmf, base: Base) -> Result<f64> {
    entropy_with_tol(p, base, DEFAULT_TAIL_TOL)
}

/// `-sum p_k log p_k` over the represented support, with `0 log 0 = 0`.
///
/// Rejects laws whose truncated tail exceeds `tail_tol`.
pub fn entropy_with_tol(p: &Pmf, base: Base, tail_tol: f64) -> Result<f64> {
    if p.tail_mass > tail_tol {
        return Err(Error::InsufficientTruncation { tail: p.tail_mass, tol: tail_tol });
    }
    if p.is_degenerate() {
        return Ok(0.0);
    }
    Ok(base.from_nats(plogp_sum(&p.probs)))
}

fn check_rate(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidParameter(format!("rate {lambda} outside (0, 1]")));
    }
    Ok(())
}

/// Entropy in nats of the geometric law on `{1, 2, ...}` with mean `1 / lambda`.
pub fn geometric_entropy_nats(lambda: f64) -> Result<f64> {
    check_rate(lambda)?;
    if lambda == 1.0 {
        return Ok(0.0);
    }
    Ok((-lambda * lambda.ln() - (1.0 - lambda) * (1.0 - lambda).ln()) / lambda)
}

/// Entropy in bits of the geometric law with mean `1 / lambda`.
pub fn geometric_entropy(lambda: f64) -> Result<f64> {
    geometric_entropy_nats(lambda).map(nats_to_bits)
}

/// `sum k p_k` over the represented support.
///
/// Under-estimates the true mean by the contribution of the truncated tail.
pub fn mean(p: &Pmf) -> f64 {
    p.iter().map(|(k, q)| k as f64 * q).sum()
}

/// Geometric law `P(k) = lambda (1 - lambda)^(k - 1)` on `{1, ..., N}` with the
/// smallest `N` such that the truncated tail `(1 - lambda)^N` is at most `tail_tol`.
pub fn geometric_pmf(lambda: f64, tail_tol: f64) -> Result<Pmf> {
    check_rate(lambda)?;
    if !(tail_tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tail tolerance {tail_tol}")));
    }
    if lambda == 1.0 {
        return Ok(Pmf::point(1));
    }
    let ratio = 1.0 - lambda;
    let mut probs = Vec::new();
    let mut survival = 1.0;
    while survival > tail_tol {
        probs.push(lambda * survival);
        survival *= ratio;
    }
    Ok(Pmf { offset: 1, probs, tail_mass: survival })
}

/// Law of the sum of two independent variables. Tail masses add.
pub fn convolve(p: &Pmf, q: &Pmf) -> Pmf {
    let mut probs = vec![0.0; p.len() + q.len() - 1];
    for (i, &a) in p.probs.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (j, &b) in q.probs.iter().enumerate() {
            probs[i + j] += a * b;
        }
    }
    Pmf {
        offset: p.offset + q.offset,
        probs,
        tail_mass: (p.tail_mass + q.tail_mass).min(1.0),
    }
}

/// Law of `(X - S)^+` for independent `X ~ p_x` and `S ~ p_s`.
///
/// `P(W = n) = sum_k P(S = k) P(X = n + k)` for `n > 0` and
/// `P(W = 0) = P(X <= S)`.
pub fn pplus_law(p_x: &Pmf, p_s: &Pmf) -> Result<Pmf> {
    if p_s.offset == 0 {
        return Err(Error::InvalidParameter("service support must start at 1".into()));
    }
    let top = p_x.last().saturating_sub(p_s.offset);
    let mut probs = vec![0.0; top + 1];
    let mut tail = p_x.tail_mass;
    for (x, px) in p_x.iter() {
        if px == 0.0 {
            continue;
        }
        for (s, ps) in p_s.iter() {
            probs[x.saturating_sub(s)] += px * ps;
        }
        // Unrepresented service times all exceed p_s.last().
        if x <= p_s.last() + 1 {
            probs[0] += px * p_s.tail_mass;
        } else {
            tail += px * p_s.tail_mass;
        }
    }
    Ok(Pmf { offset: 0, probs, tail_mass: tail.min(1.0) }.trimmed())
}

/// Named service-time families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceKind {
    /// `S = k` with certainty.
    Deterministic { k: usize },
    /// `P(S = 1) = P(S = 2) = 1/2`.
    Binary12,
    /// Geometric on `{1, 2, ...}` with rate `mu`.
    Geometric { mu: f64 },
    Custom { pmf: Pmf },
}

/// A service-time law with rate `mu = 1 / E[S]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceModel {
    kind: ServiceKind,
    pmf: Pmf,
    mu: f64,
}

impl ServiceModel {
    pub fn new(kind: ServiceKind) -> Result<Self> {
        let pmf = match &kind {
            ServiceKind::Deterministic { k } => {
                if *k == 0 {
                    return Err(Error::InvalidParameter("service takes at least one slot".into()));
                }
                Pmf::point(*k)
            }
            ServiceKind::Binary12 => Pmf::new(1, vec![0.5, 0.5], 0.0)?,
            ServiceKind::Geometric { mu } => geometric_pmf(*mu, DEFAULT_TAIL_TOL)?,
            ServiceKind::Custom { pmf } => {
                if pmf.offset == 0 && pmf.probs[0] > 0.0 {
                    return Err(Error::InvalidParameter("service takes at least one slot".into()));
                }
                if pmf.tail_mass > DEFAULT_TAIL_TOL {
                    return Err(Error::InsufficientTruncation {
                        tail: pmf.tail_mass,
                        tol: DEFAULT_TAIL_TOL,
                    });
                }
                Pmf::from_dense(&pmf.to_dense(), pmf.tail_mass)?
            }
        };
        let mu = match &kind {
            ServiceKind::Geometric { mu } => *mu,
            _ => 1.0 / mean(&pmf),
        };
        if !(mu > 0.0 && mu <= 1.0) {
            return Err(Error::InvalidParameter(format!("service rate {mu} outside (0, 1]")));
        }
        Ok(ServiceModel { kind, pmf, mu })
    }

    pub fn deterministic(k: usize) -> Result<Self> {
        Self::new(ServiceKind::Deterministic { k })
    }

    pub fn binary12() -> Self {
        Self::new(ServiceKind::Binary12).expect("valid model")
    }

    pub fn geometric(mu: f64) -> Result<Self> {
        Self::new(ServiceKind::Geometric { mu })
    }

    pub fn custom(pmf: Pmf) -> Result<Self> {
        Self::new(ServiceKind::Custom { pmf })
    }

    pub fn kind(&self) -> &ServiceKind {
        &self.kind
    }

    /// The (possibly truncated) service law.
    pub fn pmf(&self) -> &Pmf {
        &self.pmf
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn mean(&self) -> f64 {
        1.0 / self.mu
    }

    /// `H(S)` in nats; closed form for geometric service, otherwise computed
    /// on the represented law.
    pub fn entropy_nats(&self) -> f64 {
        if let ServiceKind::Geometric { mu } = self.kind {
            return geometric_entropy_nats(mu).expect("rate checked at construction");
        }
        if self.pmf.is_degenerate() {
            0.0
        } else {
            plogp_sum(&self.pmf.probs)
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.pmf.is_degenerate()
    }

    /// Largest service time this model can produce, if bounded.
    pub fn max_service(&self) -> Option<usize> {
        match self.kind {
            ServiceKind::Geometric { mu } if mu < 1.0 => None,
            _ => Some(self.pmf.last()),
        }
    }

    /// Draws one service time. Geometric services are sampled exactly.
    pub fn sampler(&self) -> ServiceSampler {
        match self.kind {
            ServiceKind::Geometric { mu } if mu < 1.0 => ServiceSampler::Geometric(
                rand_distr::Geometric::new(mu).expect("rate checked at construction"),
            ),
            _ => ServiceSampler::Table(PmfSampler::new(&self.pmf)),
        }
    }
}

/// Sampler returned by [`ServiceModel::sampler`].
#[derive(Debug, Clone)]
pub enum ServiceSampler {
    Geometric(rand_distr::Geometric),
    Table(PmfSampler),
}

impl ServiceSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            ServiceSampler::Geometric(g) => 1 + rand_distr::Distribution::sample(g, rng) as usize,
            ServiceSampler::Table(t) => t.sample(rng),
        }
    }
}

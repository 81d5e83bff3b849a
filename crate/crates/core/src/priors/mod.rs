//! Partition priors: the Ewens-Pitman prior (EPP) and the Beta-Binomial
//! allelic prior (BBAP).
//!
//! Both priors factor as `p(xi) = p(xi | r) p(r)` where `r` is the allelic
//! partition of `xi` and `p(xi | r)` is uniform over the allelic class. They
//! differ only in `p(r)`. BBAP builds `r` top-down from the largest allowed
//! size `M*`:
//!
//! ```text
//! Q_{M*} = floor(n / M*),  Q_t = floor((n - sum_{i>t} i r_i) / t)
//! r_t | r_{>t} ~ BetaBinomial(Q_t, a_t, b_t),   t = M*, ..., 2
//! r_1 = n - sum_{i>=2} i r_i
//! ```
//!
//! so clusters larger than `M*` have probability zero.

mod calibration;

pub use calibration::{
    calibrate_m2, calibrate_recursive, target_size_distribution, CalibrationSpec, SizeFamily,
};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partitions::{ln_allelic_class_size, AllelicPartition, LinkageStructure};
use crate::special::{ln_beta_binomial, ln_factorial, ln_gamma};

/// Concentration of the Ewens-Pitman prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EppParams {
    theta: f64,
}

impl EppParams {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::param("theta", format!("must be positive, got {theta}")));
        }
        Ok(Self { theta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

/// Beta hyperparameters `(a_t, b_t)` for sizes `t = 2..=cap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbapParams {
    cap: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl BbapParams {
    /// `a[k]` and `b[k]` belong to size `k + 2`.
    pub fn new(cap: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if cap < 2 {
            return Err(Error::param("cap", format!("must be at least 2, got {cap}")));
        }
        if a.len() != cap - 1 || b.len() != cap - 1 {
            return Err(Error::param(
                "a/b",
                format!("need {} entries for sizes 2..={cap}", cap - 1),
            ));
        }
        for (t, (&at, &bt)) in a.iter().zip(&b).enumerate() {
            if !(at > 0.0 && bt > 0.0 && at.is_finite() && bt.is_finite()) {
                return Err(Error::param(
                    "a/b",
                    format!("size {}: a = {at}, b = {bt} must be positive", t + 2),
                ));
            }
        }
        Ok(Self { cap, a, b })
    }

    /// Same `(a, b)` at every size.
    pub fn uniform(cap: usize, a: f64, b: f64) -> Result<Self> {
        let k = cap.saturating_sub(1);
        Self::new(cap, vec![a; k], vec![b; k])
    }

    /// Maximum cluster size `M*`.
    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn a(&self, size: usize) -> f64 {
        self.a[size - 2]
    }

    pub fn b(&self, size: usize) -> f64 {
        self.b[size - 2]
    }

    /// Prior mean of `theta_t = a_t / (a_t + b_t)`.
    pub fn mean_fraction(&self, size: usize) -> f64 {
        self.a(size) / (self.a(size) + self.b(size))
    }
}

/// A prior on linkage structures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Prior {
    Epp(EppParams),
    Bbap(BbapParams),
}

impl Prior {
    /// Hard bound on cluster sizes, if any.
    pub fn cap(&self) -> Option<usize> {
        match self {
            Prior::Epp(_) => None,
            Prior::Bbap(p) => Some(p.cap()),
        }
    }

    pub fn ln_density_allelic(&self, r: &AllelicPartition) -> f64 {
        match self {
            Prior::Epp(p) => ln_density_epp_allelic(r, p),
            Prior::Bbap(p) => ln_density_bbap_allelic(r, p),
        }
    }

    pub fn ln_density_linkage(&self, xi: &LinkageStructure) -> f64 {
        match self {
            Prior::Epp(p) => ln_density_epp_linkage(xi, p),
            Prior::Bbap(p) => ln_density_bbap_linkage(xi, p),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> LinkageStructure {
        match self {
            Prior::Epp(p) => sample_epp(p, n, rng),
            Prior::Bbap(p) => sample_bbap(p, n, rng),
        }
    }
}

// ---------------------------------------------------------------------------
// Ewens-Pitman prior
// ---------------------------------------------------------------------------

/// `ln p(r | theta)` under the EPP.
pub fn ln_density_epp_allelic(r: &AllelicPartition, params: &EppParams) -> f64 {
    ln_epp_counts(r.counts(), params.theta)
}

fn ln_epp_counts(counts: &[usize], theta: f64) -> f64 {
    let n: usize = counts.iter().enumerate().map(|(i, c)| (i + 1) * c).sum();
    let mut v = ln_factorial(n) - (ln_gamma(theta + n as f64) - ln_gamma(theta));
    for (i, &c) in counts.iter().enumerate() {
        if c > 0 {
            let size = (i + 1) as f64;
            v += c as f64 * (theta.ln() - size.ln()) - ln_factorial(c);
        }
    }
    v
}

/// `ln p(xi | theta)` evaluated directly from cluster sizes:
/// `Gamma(theta) / Gamma(n + theta) * theta^K * prod_k Gamma(S_k)`.
pub fn ln_density_epp_linkage(xi: &LinkageStructure, params: &EppParams) -> f64 {
    let theta = params.theta;
    let sizes = xi.cluster_sizes();
    ln_gamma(theta) - ln_gamma(xi.n() as f64 + theta)
        + sizes.len() as f64 * theta.ln()
        + sizes.iter().map(|&s| ln_factorial(s - 1)).sum::<f64>()
}

/// `ln p(xi | r)`: uniform over the allelic class of `r`.
pub fn ln_density_within_class(r: &AllelicPartition) -> f64 {
    -ln_allelic_class_size(r)
}

/// Sequential seating: record `i` opens a new cluster with probability
/// `theta / (theta + i)`, otherwise joins the cluster of a uniformly chosen
/// earlier record.
pub fn sample_epp<R: Rng + ?Sized>(params: &EppParams, n: usize, rng: &mut R) -> LinkageStructure {
    let mut labels: Vec<usize> = Vec::with_capacity(n);
    let mut k = 0;
    for i in 0..n {
        let p_new = params.theta / (params.theta + i as f64);
        if i == 0 || rng.random::<f64>() < p_new {
            labels.push(k);
            k += 1;
        } else {
            let j = rng.random_range(0..i);
            labels.push(labels[j]);
        }
    }
    LinkageStructure::from_canonical(labels)
}

// ---------------------------------------------------------------------------
// Beta-Binomial allelic prior
// ---------------------------------------------------------------------------

/// `ln p(r | a, b)` under BBAP; `-inf` outside the bounded support.
///
/// `r` may be expressed with any cap; counts above `M*` must be zero.
pub fn ln_density_bbap_allelic(r: &AllelicPartition, params: &BbapParams) -> f64 {
    ln_bbap_counts(r.counts(), params)
}

pub(crate) fn ln_bbap_counts(counts: &[usize], params: &BbapParams) -> f64 {
    let cap = params.cap;
    if counts.iter().skip(cap).any(|&c| c > 0) {
        return f64::NEG_INFINITY;
    }
    let count = |t: usize| counts.get(t - 1).copied().unwrap_or(0);
    let n: usize = counts.iter().enumerate().map(|(i, c)| (i + 1) * c).sum();
    let mut remaining = n;
    let mut v = 0.0;
    for t in (2..=cap).rev() {
        let trials = remaining / t;
        let rt = count(t);
        if rt > trials {
            return f64::NEG_INFINITY;
        }
        v += ln_beta_binomial(rt, trials, params.a(t), params.b(t));
        remaining -= t * rt;
    }
    // r_1 is determined by the higher counts
    if count(1) != remaining {
        return f64::NEG_INFINITY;
    }
    v
}

/// `ln p(xi | a, b) = ln p(xi | r) + ln p(r | a, b)`.
pub fn ln_density_bbap_linkage(xi: &LinkageStructure, params: &BbapParams) -> f64 {
    match xi.to_allelic(params.cap) {
        Ok(r) => ln_density_within_class(&r) + ln_density_bbap_allelic(&r, params),
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Draws `r` top-down through the conditional Beta-Binomials.
pub fn sample_bbap_allelic<R: Rng + ?Sized>(
    params: &BbapParams,
    n: usize,
    rng: &mut R,
) -> AllelicPartition {
    let mut counts = vec![0; params.cap];
    let mut remaining = n;
    for t in (2..=params.cap).rev() {
        let trials = (remaining / t) as u64;
        if trials == 0 {
            continue;
        }
        let theta = Beta::new(params.a(t), params.b(t))
            .expect("validated Beta parameters")
            .sample(rng);
        let rt = Binomial::new(trials, theta)
            .expect("probability in [0, 1]")
            .sample(rng) as usize;
        counts[t - 1] = rt;
        remaining -= t * rt;
    }
    counts[0] = remaining;
    AllelicPartition::new(counts).expect("n >= 1")
}

/// Uniform draw of a linkage structure from the allelic class of `r`: lay
/// out cluster slots and assign records to them by a random permutation.
pub fn sample_uniform_in_class<R: Rng + ?Sized>(
    r: &AllelicPartition,
    rng: &mut R,
) -> LinkageStructure {
    let mut slots = Vec::with_capacity(r.n());
    for (cluster, size) in r.sizes().into_iter().enumerate() {
        slots.extend(std::iter::repeat_n(cluster, size));
    }
    slots.shuffle(rng);
    LinkageStructure::canonicalize(&slots).expect("n >= 1")
}

pub fn sample_bbap<R: Rng + ?Sized>(
    params: &BbapParams,
    n: usize,
    rng: &mut R,
) -> LinkageStructure {
    let r = sample_bbap_allelic(params, n, rng);
    sample_uniform_in_class(&r, rng)
}

/// Prior mean and variance of the number of singletons when `M* = 2`.
pub fn singleton_moments_m2(n: usize, a: f64, b: f64) -> (f64, f64) {
    let half = (n / 2) as f64;
    let mean = n as f64 - 2.0 * half * a / (a + b);
    let var = 4.0 * half * (a + b + half) * a * b / ((a + b).powi(2) * (a + b + 1.0));
    (mean, var)
}

/// Monte-Carlo estimate of `E[r_t]` for `t = 1..=cap` under BBAP.
///
/// The exact expression is a nested sum over all higher counts; sampling is
/// the practical route for `M* > 2`.
pub fn expected_allelic_mc<R: Rng + ?Sized>(
    params: &BbapParams,
    n: usize,
    draws: usize,
    rng: &mut R,
) -> Vec<f64> {
    let mut sums = vec![0.0; params.cap];
    for _ in 0..draws {
        let r = sample_bbap_allelic(params, n, rng);
        for (s, &c) in sums.iter_mut().zip(r.counts()) {
            *s += c as f64;
        }
    }
    sums.iter().map(|s| s / draws as f64).collect()
}

// ---------------------------------------------------------------------------
// Reallocation weights
// ---------------------------------------------------------------------------

/// Unnormalized log reallocation weights for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct ReallocationWeights {
    /// `(label, ln weight)` for every cluster of the full structure that is
    /// non-empty once the record is removed. Labels refer to the input `xi`.
    pub existing: Vec<(usize, f64)>,
    /// `ln weight` of opening a new cluster.
    pub new_cluster: f64,
}

impl ReallocationWeights {
    /// Normalized probabilities, existing clusters first, new cluster last.
    pub fn probabilities(&self) -> Vec<f64> {
        let mut logs: Vec<f64> = self.existing.iter().map(|&(_, w)| w).collect();
        logs.push(self.new_cluster);
        let norm = crate::special::log_sum_exp(&logs);
        logs.iter().map(|w| (w - norm).exp()).collect()
    }
}

/// Prior reallocation weights of record `record` given the other records of
/// `xi`:
///
/// * join a cluster of size `s < M*`:
///   `(s + 1) (r_{-i,s+1} + 1) / r_{-i,s} * p(r) / p(r_{-i})`
/// * open a new cluster: `(r_{-i,1} + 1) * p(r) / p(r_{-i})`
///
/// where `r` is the allelic partition after the move. Full clusters get
/// weight zero.
pub fn reallocation_weights(
    xi: &LinkageStructure,
    record: usize,
    params: &BbapParams,
) -> ReallocationWeights {
    let cap = params.cap;
    let mut sizes = xi.cluster_sizes();
    let own = xi.label(record);
    sizes[own] -= 1;

    let mut reduced = vec![0usize; cap + 1];
    for &s in sizes.iter().filter(|&&s| s > 0) {
        if s > cap {
            // Outside the support; nothing sensible to return.
            return ReallocationWeights {
                existing: sizes
                    .iter()
                    .enumerate()
                    .filter(|(_, &s)| s > 0)
                    .map(|(l, _)| (l, f64::NEG_INFINITY))
                    .collect(),
                new_cluster: f64::NEG_INFINITY,
            };
        }
        reduced[s - 1] += 1;
    }
    let ln_reduced = ln_bbap_counts(&reduced, params);

    let ln_after = |from: Option<usize>, counts: &mut Vec<usize>| -> f64 {
        // `from`: size of the cluster the record joins (None = new cluster)
        match from {
            Some(s) => {
                counts[s - 1] -= 1;
                counts[s] += 1;
                let v = ln_bbap_counts(counts, params);
                counts[s] -= 1;
                counts[s - 1] += 1;
                v
            }
            None => {
                counts[0] += 1;
                let v = ln_bbap_counts(counts, params);
                counts[0] -= 1;
                v
            }
        }
    };

    let mut existing = Vec::new();
    for (label, &s) in sizes.iter().enumerate() {
        if s == 0 {
            continue;
        }
        let w = if s >= cap {
            f64::NEG_INFINITY
        } else {
            ((s + 1) as f64).ln() + ((reduced[s] + 1) as f64).ln() - (reduced[s - 1] as f64).ln()
                + ln_after(Some(s), &mut reduced)
                - ln_reduced
        };
        existing.push((label, w));
    }
    let new_cluster =
        ((reduced[0] + 1) as f64).ln() + ln_after(None, &mut reduced) - ln_reduced;
    ReallocationWeights {
        existing,
        new_cluster,
    }
}

// ---------------------------------------------------------------------------
// Fast evaluation for a fixed number of records
// ---------------------------------------------------------------------------

/// Precomputed log-gamma tables for evaluating `ln p(r)` and reallocation
/// weights when `n` is fixed, as inside an MCMC run.
#[derive(Debug, Clone)]
pub struct PriorTables {
    n: usize,
    kind: TableKind,
    ln_fact: Vec<f64>,
}

#[derive(Debug, Clone)]
enum TableKind {
    Epp {
        theta: f64,
    },
    Bbap {
        cap: usize,
        // per size t (index t - 2): lgamma(k + a_t), lgamma(k + b_t),
        // lgamma(k + a_t + b_t) for k = 0..=n, and the Beta normalizer
        ln_ga: Vec<Vec<f64>>,
        ln_gb: Vec<Vec<f64>>,
        ln_gab: Vec<Vec<f64>>,
        ln_norm: Vec<f64>,
    },
}

impl PriorTables {
    pub fn new(prior: &Prior, n: usize) -> Self {
        let ln_fact = (0..=n).map(ln_factorial).collect();
        let kind = match prior {
            Prior::Epp(p) => TableKind::Epp { theta: p.theta },
            Prior::Bbap(p) => {
                let table = |shift: &dyn Fn(usize) -> f64| -> Vec<Vec<f64>> {
                    (2..=p.cap)
                        .map(|t| (0..=n).map(|k| ln_gamma(k as f64 + shift(t))).collect())
                        .collect()
                };
                TableKind::Bbap {
                    cap: p.cap,
                    ln_ga: table(&|t| p.a(t)),
                    ln_gb: table(&|t| p.b(t)),
                    ln_gab: table(&|t| p.a(t) + p.b(t)),
                    ln_norm: (2..=p.cap)
                        .map(|t| ln_gamma(p.a(t) + p.b(t)) - ln_gamma(p.a(t)) - ln_gamma(p.b(t)))
                        .collect(),
                }
            }
        };
        Self { n, kind, ln_fact }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cap(&self) -> Option<usize> {
        match self.kind {
            TableKind::Epp { .. } => None,
            TableKind::Bbap { cap, .. } => Some(cap),
        }
    }

    /// `ln p(r)` for counts describing exactly `n` records.
    pub fn ln_allelic(&self, counts: &[usize]) -> f64 {
        match &self.kind {
            TableKind::Epp { theta } => ln_epp_counts(counts, *theta),
            TableKind::Bbap {
                cap,
                ln_ga,
                ln_gb,
                ln_gab,
                ln_norm,
            } => {
                if counts.iter().skip(*cap).any(|&c| c > 0) {
                    return f64::NEG_INFINITY;
                }
                let mut remaining = self.n;
                let mut v = 0.0;
                for t in (2..=*cap).rev() {
                    let q = remaining / t;
                    let rt = counts.get(t - 1).copied().unwrap_or(0);
                    if rt > q {
                        return f64::NEG_INFINITY;
                    }
                    let k = t - 2;
                    v += self.ln_fact[q] - self.ln_fact[rt] - self.ln_fact[q - rt]
                        + ln_ga[k][rt]
                        + ln_gb[k][q - rt]
                        - ln_gab[k][q]
                        + ln_norm[k];
                    remaining -= t * rt;
                }
                if counts.first().copied().unwrap_or(0) != remaining {
                    return f64::NEG_INFINITY;
                }
                v
            }
        }
    }

    /// `ln p(xi | r) = -ln n! + sum_s r_s ln s! + ln r_s!`.
    pub fn ln_within_class(&self, counts: &[usize]) -> f64 {
        let mut v = -self.ln_fact[self.n];
        for (i, &c) in counts.iter().enumerate() {
            if c > 0 {
                v += c as f64 * self.ln_fact[i + 1] + self.ln_fact[c];
            }
        }
        v
    }

    /// Log reallocation weights given the allelic counts of the other
    /// `n - 1` records (`reduced[s - 1] = r_{-i,s}`; for BBAP the slice must
    /// reach size `M* + 1`). On return `out[0]` is the new-cluster weight;
    /// [`PriorTables::join_weight`] reads off the weight of joining a cluster
    /// of a given size. The common factor `1 / p(r_{-i})` is dropped, so
    /// differences of these weights are differences of `ln p(xi)`.
    pub fn ln_join_weights(&self, reduced: &mut [usize], out: &mut Vec<f64>) {
        out.clear();
        match &self.kind {
            // the ratio p(r)/p(r_{-i}) collapses to the CRP weights
            TableKind::Epp { theta } => out.push(theta.ln()),
            TableKind::Bbap { cap, .. } => {
                let cap = *cap;
                reduced[0] += 1;
                out.push((reduced[0] as f64).ln() + self.ln_allelic(reduced));
                reduced[0] -= 1;
                for s in 1..=cap {
                    if s >= cap || reduced[s - 1] == 0 {
                        out.push(f64::NEG_INFINITY);
                        continue;
                    }
                    let (from, to) = (reduced[s - 1], reduced[s]);
                    reduced[s - 1] -= 1;
                    reduced[s] += 1;
                    let w = ((s + 1) as f64).ln() + ((to + 1) as f64).ln() - (from as f64).ln()
                        + self.ln_allelic(reduced);
                    reduced[s] -= 1;
                    reduced[s - 1] += 1;
                    out.push(w);
                }
            }
        }
    }

    /// Weight of joining a cluster of `size`, given the output of
    /// [`PriorTables::ln_join_weights`].
    pub fn join_weight(&self, weights: &[f64], size: usize) -> f64 {
        match self.kind {
            TableKind::Epp { .. } => (size as f64).ln(),
            TableKind::Bbap { .. } => weights[size],
        }
    }
}

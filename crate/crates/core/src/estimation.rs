//! Point estimates of the linkage structure by minimizing expected posterior
//! loss over a set of posterior samples.
//!
//! Every loss is a function of three sums over a contingency table between
//! two partitions `c` and `s`: `sum_k phi(|c_k|)`, `sum_k' phi(|s_k'|)` and
//! `sum_kk' phi(n_kk')`, with `phi(x) = C(x, 2)` for Binder and `x ln x` for
//! the information-based losses. The greedy search keeps the joint sum for
//! every sample and updates it when a single record moves.

use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partitions::LinkageStructure;
use crate::special::xlogx;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Binder,
    #[serde(rename = "vi")]
    VI,
    #[serde(rename = "nid")]
    NID,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Binder, LossKind::VI, LossKind::NID];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Binder => "binder",
            LossKind::VI => "vi",
            LossKind::NID => "nid",
        }
    }

    fn phi(self, x: usize) -> f64 {
        match self {
            LossKind::Binder => (x * x.saturating_sub(1) / 2) as f64,
            LossKind::VI | LossKind::NID => xlogx(x as f64),
        }
    }

    /// Loss from the three contingency sums.
    fn from_sums(self, n: usize, est: f64, sample: f64, joint: f64) -> f64 {
        let nf = n as f64;
        match self {
            LossKind::Binder => {
                let pairs = nf * (nf - 1.0) / 2.0;
                if pairs == 0.0 {
                    0.0
                } else {
                    ((est + sample - 2.0 * joint) / pairs).max(0.0)
                }
            }
            LossKind::VI => ((est + sample - 2.0 * joint) / nf).max(0.0),
            LossKind::NID => {
                let ln_n = nf.ln();
                let h_est = ln_n - est / nf;
                let h_sample = ln_n - sample / nf;
                let mutual = ln_n - (est + sample - joint) / nf;
                let h_max = h_est.max(h_sample);
                if h_max <= 1e-12 {
                    0.0
                } else {
                    (1.0 - mutual / h_max).clamp(0.0, 1.0)
                }
            }
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binder" | "b" => Ok(LossKind::Binder),
            "vi" => Ok(LossKind::VI),
            "nid" => Ok(LossKind::NID),
            _ => Err(Error::param("loss", format!("unknown loss {s:?}"))),
        }
    }
}

fn size_sum(kind: LossKind, xi: &LinkageStructure) -> f64 {
    xi.cluster_sizes().into_iter().map(|s| kind.phi(s)).sum()
}

fn joint_sum(kind: LossKind, a: &LinkageStructure, b: &LinkageStructure) -> f64 {
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        *table.entry((x, y)).or_default() += 1;
    }
    table.values().map(|&c| kind.phi(c)).sum()
}

pub fn pairwise_loss(a: &LinkageStructure, b: &LinkageStructure, kind: LossKind) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::LengthMismatch {
            left: a.n(),
            right: b.n(),
        });
    }
    Ok(kind.from_sums(
        a.n(),
        size_sum(kind, a),
        size_sum(kind, b),
        joint_sum(kind, a, b),
    ))
}

/// Equally weighted posterior draws of the linkage structure.
#[derive(Debug, Clone)]
pub struct PosteriorSamples {
    samples: Vec<LinkageStructure>,
}

impl PosteriorSamples {
    pub fn new(samples: Vec<LinkageStructure>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or(Error::Empty("posterior samples"))?;
        if let Some(bad) = samples.iter().find(|s| s.n() != first.n()) {
            return Err(Error::LengthMismatch {
                left: first.n(),
                right: bad.n(),
            });
        }
        Ok(Self { samples })
    }

    pub fn n(&self) -> usize {
        self.samples[0].n()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LinkageStructure> {
        self.samples.iter()
    }
}

pub fn expected_posterior_loss(
    estimate: &LinkageStructure,
    samples: &PosteriorSamples,
    kind: LossKind,
) -> Result<f64> {
    let mut total = 0.0;
    for s in samples.iter() {
        total += pairwise_loss(estimate, s, kind)?;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreedyConfig {
    pub max_sweeps: usize,
    /// Upper bound on the number of clusters in the estimate.
    pub max_clusters: Option<usize>,
    pub seed: u64,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 100,
            max_clusters: None,
            seed: 1,
        }
    }
}

/// Working state of the greedy search: the estimate's labels in stable
/// slots, each sample's clusters, and each sample's joint contingency sum.
struct Search<'a> {
    kind: LossKind,
    n: usize,
    samples: &'a [LinkageStructure],
    sample_members: Vec<Vec<Vec<usize>>>,
    sample_sums: Vec<f64>,
    labels: Vec<usize>,
    sizes: Vec<usize>,
    free: Vec<usize>,
    est_sum: f64,
    joint: Vec<f64>,
}

impl<'a> Search<'a> {
    fn new(kind: LossKind, samples: &'a [LinkageStructure], start: &LinkageStructure) -> Self {
        let n = start.n();
        let sample_members = samples.iter().map(LinkageStructure::clusters).collect();
        let sample_sums = samples.iter().map(|s| size_sum(kind, s)).collect();
        let mut search = Self {
            kind,
            n,
            samples,
            sample_members,
            sample_sums,
            labels: start.labels().to_vec(),
            sizes: start.cluster_sizes(),
            free: Vec::new(),
            est_sum: 0.0,
            joint: vec![0.0; samples.len()],
        };
        search.refresh();
        search
    }

    fn phi_step(&self, x: usize) -> f64 {
        self.kind.phi(x + 1) - self.kind.phi(x)
    }

    fn linkage(&self) -> LinkageStructure {
        LinkageStructure::canonicalize(&self.labels).expect("non-empty")
    }

    /// Recomputes the running sums exactly, discarding rounding drift.
    fn refresh(&mut self) {
        let current = self.linkage();
        self.est_sum = size_sum(self.kind, &current);
        for (slot, s) in self.joint.iter_mut().zip(self.samples) {
            *slot = joint_sum(self.kind, &current, s);
        }
    }

    fn loss(&self, s: usize, est_sum: f64, joint: f64) -> f64 {
        self.kind.from_sums(self.n, est_sum, self.sample_sums[s], joint)
    }

    fn epl(&self) -> f64 {
        let total: f64 = (0..self.samples.len())
            .map(|s| self.loss(s, self.est_sum, self.joint[s]))
            .sum();
        total / self.samples.len() as f64
    }

    /// Moves record `i` to the best cluster if that strictly lowers the EPL.
    fn improve(&mut self, i: usize, max_clusters: Option<usize>) -> bool {
        let from = self.labels[i];
        let num_samples = self.samples.len();
        let num_clusters = self.sizes.iter().filter(|&&s| s > 0).count();

        // co-members of i in each sample, tallied by their estimate cluster
        let mut removal = vec![0.0; num_samples];
        let mut touched: Vec<(usize, usize, usize)> = Vec::new();
        let mut tally: BTreeMap<usize, usize> = BTreeMap::new();
        for (s, members) in self.sample_members.iter().enumerate() {
            tally.clear();
            for &j in &members[self.samples[s].label(i)] {
                if j != i {
                    *tally.entry(self.labels[j]).or_default() += 1;
                }
            }
            let with_i = 1 + tally.get(&from).copied().unwrap_or(0);
            removal[s] = -self.phi_step(with_i - 1);
            touched.extend(
                tally
                    .iter()
                    .filter(|(&b, _)| b != from)
                    .map(|(&b, &m)| (b, s, m)),
            );
        }
        let est_removed = self.est_sum - self.phi_step(self.sizes[from] - 1);

        let current = self.epl() * num_samples as f64;
        let base = |target_size: usize| -> f64 {
            let est = est_removed + self.phi_step(target_size);
            (0..num_samples)
                .map(|s| self.loss(s, est, self.joint[s] + removal[s]))
                .sum()
        };

        let mut by_size: BTreeMap<usize, f64> = BTreeMap::new();
        let mut totals: BTreeMap<usize, f64> = BTreeMap::new();
        for (b, &size) in self.sizes.iter().enumerate() {
            if size > 0 && b != from {
                let v = *by_size.entry(size).or_insert_with(|| base(size));
                totals.insert(b, v);
            }
        }
        for &(b, s, m) in &touched {
            let est = est_removed + self.phi_step(self.sizes[b]);
            let j0 = self.joint[s] + removal[s];
            let delta = self.loss(s, est, j0 + self.phi_step(m)) - self.loss(s, est, j0);
            *totals.get_mut(&b).expect("touched clusters exist") += delta;
        }

        let mut best: Option<(Option<usize>, f64)> = None;
        for (&b, &v) in &totals {
            if best.is_none_or(|(_, bv)| v < bv) {
                best = Some((Some(b), v));
            }
        }
        let may_open = self.sizes[from] > 1 && max_clusters.is_none_or(|m| num_clusters < m);
        if may_open {
            let v = base(0);
            if best.is_none_or(|(_, bv)| v < bv) {
                best = Some((None, v));
            }
        }
        let Some((target, value)) = best else {
            return false;
        };
        let tol = 1e-12 * current.abs().max(1.0);
        if value >= current - tol {
            return false;
        }

        let to = match target {
            Some(b) => b,
            None => self.free.pop().unwrap_or_else(|| {
                self.sizes.push(0);
                self.sizes.len() - 1
            }),
        };
        for s in 0..num_samples {
            self.joint[s] += removal[s];
        }
        for &(b, s, m) in &touched {
            if b == to {
                self.joint[s] += self.phi_step(m);
            }
        }
        self.est_sum = est_removed + self.phi_step(self.sizes[to]);
        self.sizes[from] -= 1;
        self.sizes[to] += 1;
        self.labels[i] = to;
        if self.sizes[from] == 0 {
            self.free.push(from);
        }
        true
    }
}

/// Greedy single-record moves from a randomly chosen sample until a full
/// sweep makes no strictly improving move.
pub fn greedy_epl(
    samples: &PosteriorSamples,
    kind: LossKind,
    config: &GreedyConfig,
) -> Result<LinkageStructure> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let start = samples
        .samples
        .choose(&mut rng)
        .expect("samples are non-empty");
    if let Some(m) = config.max_clusters {
        if m == 0 {
            return Err(Error::param("max_clusters", "must be at least 1"));
        }
    }
    let mut search = Search::new(kind, &samples.samples, start);
    let mut order: Vec<usize> = (0..search.n).collect();
    for _ in 0..config.max_sweeps {
        order.shuffle(&mut rng);
        let mut moved = false;
        for &i in &order {
            moved |= search.improve(i, config.max_clusters);
        }
        search.refresh();
        if !moved {
            break;
        }
    }
    Ok(search.linkage())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub kind: LossKind,
    pub epl: f64,
    #[serde(rename = "K")]
    pub k: usize,
}

impl EstimateReport {
    pub fn new(estimate: &LinkageStructure, samples: &PosteriorSamples, kind: LossKind) -> Result<Self> {
        Ok(Self {
            kind,
            epl: expected_posterior_loss(estimate, samples, kind)?,
            k: estimate.num_clusters(),
        })
    }
}

/// Header `x1,...,xn` and one row of one-based labels.
pub fn write_linkage_csv<W: Write>(xi: &LinkageStructure, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((1..=xi.n()).map(|i| format!("x{i}")))?;
    w.write_record(xi.one_based().map(|l| l.to_string()))?;
    w.flush()?;
    Ok(())
}

pub fn read_linkage_csv<R: std::io::Read>(input: R) -> Result<LinkageStructure> {
    let mut reader = csv::Reader::from_reader(input);
    let row = reader
        .records()
        .next()
        .ok_or(Error::Empty("linkage file has no rows"))??;
    let labels: Vec<usize> = row
        .iter()
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Data(format!("non-integer label {v:?}")))
        })
        .collect::<Result<_>>()?;
    LinkageStructure::canonicalize(&labels)
}

//! Linkage structures, allelic partitions and set-partition enumeration.
//!
//! A [`LinkageStructure`] stores one cluster label per record. Labels are
//! zero-based internally and always canonical: label `k` first appears
//! before label `k + 1`, so two structures describe the same partition iff
//! their label vectors are equal. File formats use one-based labels.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::ln_factorial;

/// Largest `n` accepted by [`enumerate_partitions`].
pub const MAX_ENUMERATION_N: usize = 12;

/// Largest `n` for which [`allelic_class_size`] uses exact integer arithmetic.
pub const MAX_EXACT_CLASS_N: usize = 20;

/// Canonical cluster assignment of `n` records.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LinkageStructure {
    labels: Vec<usize>,
    num_clusters: usize,
}

impl LinkageStructure {
    /// Relabels `raw` by order of first appearance.
    pub fn canonicalize<T: Eq + Hash + Clone>(raw: &[T]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Empty("linkage structure"));
        }
        let mut map: HashMap<T, usize> = HashMap::with_capacity(raw.len());
        let labels = raw
            .iter()
            .map(|v| {
                let next = map.len();
                *map.entry(v.clone()).or_insert(next)
            })
            .collect();
        Ok(Self {
            labels,
            num_clusters: map.len(),
        })
    }

    /// Builds from labels that are already canonical (checked in debug builds).
    pub(crate) fn from_canonical(labels: Vec<usize>) -> Self {
        let num_clusters = labels.iter().max().map_or(0, |m| m + 1);
        debug_assert!(is_canonical(&labels));
        Self {
            labels,
            num_clusters,
        }
    }

    /// Every record in its own cluster.
    pub fn singletons(n: usize) -> Self {
        Self::from_canonical((0..n).collect())
    }

    /// All records in one cluster.
    pub fn single_cluster(n: usize) -> Self {
        Self::from_canonical(vec![0; n])
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Number of clusters `K`.
    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    /// Zero-based canonical labels.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, record: usize) -> usize {
        self.labels[record]
    }

    /// One-based labels, as written to files.
    pub fn one_based(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().map(|l| l + 1)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Member lists, indexed by label, each in increasing record order.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// Size of the largest cluster, `M_n`.
    pub fn max_cluster_size(&self) -> usize {
        self.cluster_sizes().into_iter().max().unwrap_or(0)
    }

    /// Allelic partition with counts up to `cap`.
    pub fn to_allelic(&self, cap: usize) -> Result<AllelicPartition> {
        AllelicPartition::from_sizes(&self.cluster_sizes(), cap)
    }

    /// Allelic partition capped at the largest observed cluster size.
    pub fn allelic(&self) -> AllelicPartition {
        let sizes = self.cluster_sizes();
        let cap = sizes.iter().copied().max().unwrap_or(1).max(1);
        AllelicPartition::from_sizes(&sizes, cap).expect("cap covers every size")
    }

    /// All co-clustered record pairs `(i, j)` with `i < j`.
    pub fn matched_pairs(&self) -> PairSet {
        let mut pairs = Vec::new();
        for members in self.clusters() {
            for (a, &i) in members.iter().enumerate() {
                for &j in &members[a + 1..] {
                    pairs.push((i, j));
                }
            }
        }
        pairs.sort_unstable();
        PairSet { pairs }
    }

    pub fn same_cluster(&self, i: usize, j: usize) -> bool {
        self.labels[i] == self.labels[j]
    }
}

impl TryFrom<Vec<usize>> for LinkageStructure {
    type Error = Error;

    fn try_from(raw: Vec<usize>) -> Result<Self> {
        Self::canonicalize(&raw)
    }
}

impl From<LinkageStructure> for Vec<usize> {
    fn from(xi: LinkageStructure) -> Self {
        xi.labels
    }
}

fn is_canonical(labels: &[usize]) -> bool {
    let mut next = 0;
    for &l in labels {
        if l > next {
            return false;
        }
        if l == next {
            next += 1;
        }
    }
    true
}

/// Counts `r_i` of clusters of each size `i = 1..=cap`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AllelicPartition {
    counts: Vec<usize>,
    n: usize,
}

impl AllelicPartition {
    /// `counts[i - 1]` is the number of clusters of size `i`; the cap is
    /// `counts.len()`.
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        let n = counts.iter().enumerate().map(|(i, r)| (i + 1) * r).sum();
        if counts.iter().sum::<usize>() == 0 {
            return Err(Error::Empty("allelic partition"));
        }
        Ok(Self { counts, n })
    }

    pub fn from_sizes(sizes: &[usize], cap: usize) -> Result<Self> {
        let mut counts = vec![0; cap];
        for &s in sizes {
            if s == 0 {
                return Err(Error::Data("cluster of size zero".into()));
            }
            if s > cap {
                return Err(Error::CapViolation { size: s, cap });
            }
            counts[s - 1] += 1;
        }
        Self::new(counts)
    }

    /// `r_size`; zero for sizes beyond the cap.
    pub fn count(&self, size: usize) -> usize {
        if size == 0 {
            return 0;
        }
        self.counts.get(size - 1).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn cap(&self) -> usize {
        self.counts.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_clusters(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Largest size with a non-zero count.
    pub fn largest(&self) -> usize {
        self.counts.iter().rposition(|&r| r > 0).map_or(0, |i| i + 1)
    }

    /// Same partition re-expressed with a different cap.
    pub fn with_cap(&self, cap: usize) -> Result<Self> {
        let largest = self.largest();
        if largest > cap {
            return Err(Error::CapViolation {
                size: largest,
                cap,
            });
        }
        let mut counts = self.counts.clone();
        counts.resize(cap, 0);
        Ok(Self { counts, n: self.n })
    }

    /// Cluster sizes in decreasing order.
    pub fn sizes(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_clusters());
        for size in (1..=self.cap()).rev() {
            out.extend(std::iter::repeat_n(size, self.count(size)));
        }
        out
    }
}

/// Number of set partitions in one allelic class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassSize {
    Exact(u128),
    Log(f64),
}

impl ClassSize {
    pub fn ln(self) -> f64 {
        match self {
            ClassSize::Exact(v) => (v as f64).ln(),
            ClassSize::Log(v) => v,
        }
    }
}

/// `n! / prod_i (i!)^{r_i} r_i!`, the reciprocal of `p(xi | r)`.
pub fn allelic_class_size(r: &AllelicPartition) -> ClassSize {
    if r.n() > MAX_EXACT_CLASS_N {
        return ClassSize::Log(ln_allelic_class_size(r));
    }
    let fact = |k: usize| (1..=k as u128).product::<u128>();
    let mut denom: u128 = 1;
    for (i, &count) in r.counts().iter().enumerate() {
        denom *= fact(i + 1).pow(count as u32) * fact(count);
    }
    ClassSize::Exact(fact(r.n()) / denom)
}

/// Log of [`allelic_class_size`], always via log-factorials.
pub fn ln_allelic_class_size(r: &AllelicPartition) -> f64 {
    let mut v = ln_factorial(r.n());
    for (i, &count) in r.counts().iter().enumerate() {
        if count > 0 {
            v -= count as f64 * ln_factorial(i + 1) + ln_factorial(count);
        }
    }
    v
}

/// Streams every set partition of `n` records with all cluster sizes
/// `<= cap`, each once, in restricted-growth-string order.
pub fn enumerate_partitions(n: usize, cap: usize) -> Result<PartitionIter> {
    if n == 0 {
        return Err(Error::Empty("enumeration size"));
    }
    if n > MAX_ENUMERATION_N {
        return Err(Error::TooLarge {
            n,
            max: MAX_ENUMERATION_N,
        });
    }
    if cap == 0 {
        return Err(Error::param("cap", "must be at least 1"));
    }
    Ok(PartitionIter {
        labels: vec![0; n],
        sizes: vec![0; n + 1],
        cap,
        started: false,
        done: false,
    })
}

/// Iterator returned by [`enumerate_partitions`].
#[derive(Debug, Clone)]
pub struct PartitionIter {
    labels: Vec<usize>,
    sizes: Vec<usize>,
    cap: usize,
    started: bool,
    done: bool,
}

impl PartitionIter {
    /// Fills positions `from..` with the smallest admissible labels.
    fn fill(&mut self, from: usize) {
        let mut max = self.labels[..from].iter().copied().max();
        for q in from..self.labels.len() {
            let limit = max.map_or(0, |m| m + 1);
            let l = (0..=limit)
                .find(|&l| self.sizes[l] < self.cap)
                .expect("a fresh label always has room");
            self.labels[q] = l;
            self.sizes[l] += 1;
            max = Some(max.map_or(l, |m| m.max(l)));
        }
    }
}

impl Iterator for PartitionIter {
    type Item = LinkageStructure;

    fn next(&mut self) -> Option<LinkageStructure> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            self.fill(0);
            return Some(LinkageStructure::from_canonical(self.labels.clone()));
        }
        for i in (1..self.labels.len()).rev() {
            let current = self.labels[i];
            self.sizes[current] -= 1;
            let prefix_max = self.labels[..i].iter().copied().max().unwrap_or(0);
            if let Some(l) =
                (current + 1..=prefix_max + 1).find(|&l| self.sizes[l] < self.cap)
            {
                self.labels[i] = l;
                self.sizes[l] += 1;
                self.fill(i + 1);
                return Some(LinkageStructure::from_canonical(self.labels.clone()));
            }
        }
        self.done = true;
        None
    }
}

/// Sorted set of co-clustered record pairs `(i, j)`, `i < j`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairSet {
    pairs: Vec<(usize, usize)>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        let key = if i < j { (i, j) } else { (j, i) };
        self.pairs.binary_search(&key).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.pairs.iter()
    }

    /// `|self ∩ other|` by a merge of the two sorted lists.
    pub fn intersection_count(&self, other: &PairSet) -> usize {
        let (mut a, mut b, mut count) = (0, 0, 0);
        while a < self.pairs.len() && b < other.pairs.len() {
            match self.pairs[a].cmp(&other.pairs[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    count += 1;
                    a += 1;
                    b += 1;
                }
            }
        }
        count
    }
}

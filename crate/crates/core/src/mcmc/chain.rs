//! One Markov chain over `(xi, Y, psi)`.
//!
//! Record moves follow the usual scheme for instantiated cluster
//! parameters: remove the record (discarding its entity if the cluster
//! empties), weigh each existing cluster by prior weight times
//! `p(x_i | y_k, psi)` and a new cluster by prior weight times the marginal
//! `p(x_i | psi)`, and draw a fresh entity for a new cluster from its
//! singleton conditional.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::similarity::SimilarityWeights;
use super::{Posterior, SamplerConfig};
use crate::error::{Error, Result};
use crate::likelihood::{record_loglik, DistortionState, LatentEntities, LoglikTables};
use crate::partitions::LinkageStructure;
use crate::special::{ln_gamma, sample_log_weights};

/// Canonical snapshot of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub linkage: LinkageStructure,
    pub entities: LatentEntities,
    pub distortion: DistortionState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Target {
    Cluster(usize),
    New,
}

pub struct Chain<'p> {
    post: &'p Posterior<'p>,
    pairs: Option<&'p SimilarityWeights>,
    config: &'p SamplerConfig,
    rng: ChaCha8Rng,

    // clusters live in slots; freed slots are reused
    slot_of: Vec<usize>,
    members: Vec<Vec<usize>>,
    entity: Vec<Vec<usize>>,
    active: Vec<usize>,
    active_pos: Vec<usize>,
    free: Vec<usize>,
    /// `counts[s - 1]` = clusters of size `s`.
    counts: Vec<usize>,

    distortion: DistortionState,
    tables: LoglikTables,
    log_joint: f64,

    join: Vec<f64>,
    targets: Vec<Target>,
    weights: Vec<f64>,
}

impl<'p> Chain<'p> {
    /// Starts from `initial` (all singletons when `None`), entities drawn
    /// from their conditionals and `psi` at its prior mean.
    pub fn new(
        post: &'p Posterior<'p>,
        pairs: Option<&'p SimilarityWeights>,
        config: &'p SamplerConfig,
        rng: ChaCha8Rng,
        initial: Option<&LinkageStructure>,
    ) -> Result<Self> {
        let n = post.data.n();
        let xi = match initial {
            Some(xi) => {
                if xi.n() != n {
                    return Err(Error::LengthMismatch {
                        left: xi.n(),
                        right: n,
                    });
                }
                xi.clone()
            }
            None => LinkageStructure::singletons(n),
        };
        if let Some(cap) = post.prior.cap() {
            if xi.max_cluster_size() > cap {
                return Err(Error::CapViolation {
                    size: xi.max_cluster_size(),
                    cap,
                });
            }
        }
        let psi = post.initial_psi();
        let tables = post.fields.tables(&psi);
        let fields = post.data.num_fields();
        let count_len = post.prior.cap().unwrap_or(n) + 2;
        let mut chain = Self {
            post,
            pairs,
            config,
            rng,
            slot_of: xi.labels().to_vec(),
            members: xi.clusters(),
            entity: vec![vec![0; fields]; xi.num_clusters()],
            active: (0..xi.num_clusters()).collect(),
            active_pos: (0..xi.num_clusters()).collect(),
            free: Vec::new(),
            counts: vec![0; count_len],
            distortion: DistortionState {
                psi,
                prior: post.psi_prior.clone(),
                indicators: vec![vec![false; fields]; n],
            },
            tables,
            log_joint: 0.0,
            join: Vec::new(),
            targets: Vec::new(),
            weights: Vec::new(),
        };
        for m in &chain.members {
            chain.counts[m.len() - 1] += 1;
        }
        for slot in 0..chain.members.len() {
            let mut row = vec![0; fields];
            chain.post.fields.sample_entity(
                chain.post.data,
                &chain.members[slot],
                &chain.distortion.psi,
                &mut chain.rng,
                &mut row,
            );
            chain.entity[slot] = row;
        }
        chain.log_joint = chain.recompute_log_joint();
        Ok(chain)
    }

    pub fn num_clusters(&self) -> usize {
        self.active.len()
    }

    pub fn psi(&self) -> &[f64] {
        &self.distortion.psi
    }

    /// Allelic counts `r_1..r_m` up to the largest occupied size.
    pub fn allelic_counts(&self) -> Vec<usize> {
        let top = self.counts.iter().rposition(|&c| c > 0).map_or(0, |p| p + 1);
        self.counts[..top].to_vec()
    }

    pub fn linkage(&self) -> LinkageStructure {
        LinkageStructure::canonicalize(&self.slot_of).expect("n >= 1")
    }

    pub fn state(&self) -> ChainState {
        let linkage = self.linkage();
        let mut attributes = vec![Vec::new(); linkage.num_clusters()];
        for (i, &slot) in self.slot_of.iter().enumerate() {
            let k = linkage.label(i);
            if attributes[k].is_empty() {
                attributes[k] = self.entity[slot].clone();
            }
        }
        ChainState {
            linkage,
            entities: LatentEntities { attributes },
            distortion: self.distortion.clone(),
        }
    }

    /// Incrementally tracked `ln p(xi, Y, X, psi)`.
    pub fn log_joint(&self) -> f64 {
        self.log_joint
    }

    /// `ln p(xi, Y, X, psi)` from scratch, without the lookup tables.
    pub fn recompute_log_joint(&self) -> f64 {
        let post = self.post;
        let psi = &self.distortion.psi;
        let freqs = post.fields.freqs();
        let mut v = post.prior.ln_density_linkage(&self.linkage());
        for &slot in &self.active {
            let y = &self.entity[slot];
            v += post.fields.new_cluster_loglik(y);
            for &i in &self.members[slot] {
                v += record_loglik(post.data.record(i), y, psi, freqs);
            }
        }
        v + self.ln_psi_prior()
    }

    fn ln_psi_prior(&self) -> f64 {
        if self.post.fixed_psi.is_some() {
            return 0.0;
        }
        self.distortion
            .psi
            .iter()
            .zip(&self.distortion.prior)
            .map(|(&p, prior)| {
                (prior.a - 1.0) * p.ln() + (prior.b - 1.0) * (1.0 - p).ln()
                    + ln_gamma(prior.a + prior.b)
                    - ln_gamma(prior.a)
                    - ln_gamma(prior.b)
            })
            .sum()
    }

    /// Compares the tracked log joint with a fresh evaluation and resets it.
    pub fn check_bookkeeping(&mut self) -> Result<()> {
        let recomputed = self.recompute_log_joint();
        let tracked = self.log_joint;
        if !((tracked - recomputed).abs() <= 1e-6) {
            return Err(Error::Bookkeeping {
                tracked,
                recomputed,
            });
        }
        self.log_joint = recomputed;
        Ok(())
    }

    fn entity_loglik(&self, slot: usize) -> f64 {
        let y = &self.entity[slot];
        let mut v = self.post.fields.new_cluster_loglik(y);
        for &i in &self.members[slot] {
            v += self.tables.record(self.post.data.record(i), y);
        }
        v
    }

    fn activate(&mut self) -> usize {
        let slot = match self.free.pop() {
            Some(s) => s,
            None => {
                self.members.push(Vec::new());
                self.entity.push(vec![0; self.post.data.num_fields()]);
                self.active_pos.push(0);
                self.members.len() - 1
            }
        };
        self.active_pos[slot] = self.active.len();
        self.active.push(slot);
        slot
    }

    fn deactivate(&mut self, slot: usize) {
        let pos = self.active_pos[slot];
        self.active.swap_remove(pos);
        if let Some(&moved) = self.active.get(pos) {
            self.active_pos[moved] = pos;
        }
        self.free.push(slot);
    }

    /// Removes record `i`, returning the prior weight of putting it back
    /// and the log-joint terms that left with it.
    fn detach(&mut self, i: usize) -> (f64, f64) {
        let slot = self.slot_of[i];
        let size = self.members[slot].len();
        let x = self.post.data.record(i);
        let mut lost = self.tables.record(x, &self.entity[slot]);
        self.members[slot].retain(|&r| r != i);
        self.counts[size - 1] -= 1;
        if size > 1 {
            self.counts[size - 2] += 1;
        }
        self.post.tables.ln_join_weights(&mut self.counts, &mut self.join);
        let back = if size == 1 {
            lost += self.post.fields.new_cluster_loglik(&self.entity[slot]);
            self.deactivate(slot);
            self.join[0]
        } else {
            self.post.tables.join_weight(&self.join, size - 1)
        };
        (back, lost)
    }

    fn attach(&mut self, i: usize, target: Target) -> f64 {
        let x = self.post.data.record(i);
        match target {
            Target::Cluster(slot) => {
                let size = self.members[slot].len();
                self.members[slot].push(i);
                self.counts[size - 1] -= 1;
                self.counts[size] += 1;
                self.slot_of[i] = slot;
                self.tables.record(x, &self.entity[slot])
            }
            Target::New => {
                let slot = self.activate();
                self.members[slot].clear();
                self.members[slot].push(i);
                self.counts[0] += 1;
                self.slot_of[i] = slot;
                let mut row = std::mem::take(&mut self.entity[slot]);
                self.post.fields.sample_entity(
                    self.post.data,
                    &[i],
                    &self.distortion.psi,
                    &mut self.rng,
                    &mut row,
                );
                self.entity[slot] = row;
                self.tables.record(x, &self.entity[slot])
                    + self.post.fields.new_cluster_loglik(&self.entity[slot])
            }
        }
    }

    fn target_weight(&self, i: usize, target: Target) -> f64 {
        match target {
            Target::Cluster(slot) => {
                self.post
                    .tables
                    .join_weight(&self.join, self.members[slot].len())
                    + self.tables.record(self.post.data.record(i), &self.entity[slot])
            }
            Target::New => self.join[0] + self.post.new_cluster_ll[i],
        }
    }

    /// Gibbs update of record `i` over `targets` (already detached).
    fn reallocate(&mut self, i: usize, back: f64, lost: f64) {
        let mut weights = std::mem::take(&mut self.weights);
        weights.clear();
        weights.extend(self.targets.iter().map(|&t| self.target_weight(i, t)));
        let pick = sample_log_weights(&mut self.rng, &weights);
        let target = self.targets[pick];
        let prior_gain = match target {
            Target::Cluster(slot) => self
                .post
                .tables
                .join_weight(&self.join, self.members[slot].len()),
            Target::New => self.join[0],
        };
        self.weights = weights;
        let gained = self.attach(i, target);
        self.log_joint += prior_gain - back + gained - lost;
    }

    fn gibbs_record(&mut self, i: usize) {
        let (back, lost) = self.detach(i);
        let mut targets = std::mem::take(&mut self.targets);
        targets.clear();
        targets.extend(self.active.iter().map(|&s| Target::Cluster(s)));
        targets.push(Target::New);
        self.targets = targets;
        self.reallocate(i, back, lost);
    }

    /// One Gibbs pass over every record, in index order.
    pub fn full_gibbs_scan(&mut self) {
        for i in 0..self.post.data.n() {
            self.gibbs_record(i);
        }
    }

    /// Restricted Gibbs passes anchored at the pair `(i, j)`.
    ///
    /// The records `S` of the clusters of `i` and `j` are reallocated among
    /// partitions of `S` in which every block holds `i` or `j`. Other
    /// records of `S` move between the blocks of `i` and `j` when those
    /// differ; `i` (resp. `j`) may split off alone or join the other
    /// anchor's block whenever that keeps every block anchored. `S` itself
    /// is unchanged by every such update.
    pub fn chaperones_step(&mut self, i: usize, j: usize) {
        debug_assert_ne!(i, j);
        let mut pool = self.members[self.slot_of[i]].clone();
        if self.slot_of[j] != self.slot_of[i] {
            pool.extend_from_slice(&self.members[self.slot_of[j]]);
        }
        pool.sort_unstable();
        for _ in 0..self.config.inner_sweeps {
            for &k in &pool {
                let (si, sj) = (self.slot_of[i], self.slot_of[j]);
                let other_anchor = if k == i {
                    Some(j)
                } else if k == j {
                    Some(i)
                } else {
                    None
                };
                match other_anchor {
                    None => {
                        if si == sj {
                            continue;
                        }
                        let (back, lost) = self.detach(k);
                        self.targets.clear();
                        self.targets.push(Target::Cluster(si));
                        self.targets.push(Target::Cluster(sj));
                        self.reallocate(k, back, lost);
                    }
                    Some(anchor) => {
                        let alone = self.members[self.slot_of[k]].len() == 1;
                        if !(alone || si == sj) {
                            continue;
                        }
                        let (back, lost) = self.detach(k);
                        self.targets.clear();
                        self.targets.push(Target::New);
                        self.targets.push(Target::Cluster(self.slot_of[anchor]));
                        self.reallocate(k, back, lost);
                    }
                }
            }
        }
    }

    /// A batch of chaperone steps with data-driven pairs.
    pub fn chaperones_sweep(&mut self) {
        let Some(pairs) = self.pairs else {
            return;
        };
        let count = self.config.pairs_per_sweep.unwrap_or(self.post.data.n());
        for _ in 0..count {
            let (i, j) = pairs.sample_pair(&mut self.rng);
            self.chaperones_step(i, j);
        }
    }

    /// Redraws every entity from its full conditional.
    pub fn resample_entities(&mut self) {
        let active = std::mem::take(&mut self.active);
        let mut row = Vec::new();
        for &slot in &active {
            let before = self.entity_loglik(slot);
            row.resize(self.post.data.num_fields(), 0);
            self.post.fields.sample_entity(
                self.post.data,
                &self.members[slot],
                &self.distortion.psi,
                &mut self.rng,
                &mut row,
            );
            std::mem::swap(&mut self.entity[slot], &mut row);
            self.log_joint += self.entity_loglik(slot) - before;
        }
        self.active = active;
    }

    fn records_loglik(&self) -> f64 {
        (0..self.post.data.n())
            .map(|i| {
                self.tables
                    .record(self.post.data.record(i), &self.entity[self.slot_of[i]])
            })
            .sum()
    }

    /// Redraws the distortion indicators and `psi` (no-op when `psi` is
    /// held fixed).
    pub fn resample_distortion(&mut self) {
        if self.post.fixed_psi.is_some() {
            return;
        }
        let before = self.records_loglik() + self.ln_psi_prior();
        let rows: Vec<&[usize]> = self
            .slot_of
            .iter()
            .map(|&s| self.entity[s].as_slice())
            .collect();
        crate::likelihood::resample_distortion(
            self.post.data,
            &self.post.fields,
            &rows,
            &mut self.distortion,
            &mut self.rng,
        );
        self.tables = self.post.fields.tables(&self.distortion.psi);
        self.log_joint += self.records_loglik() + self.ln_psi_prior() - before;
    }

    /// One composite sweep: a chaperone batch with probability `move_mix`
    /// (a full scan otherwise), then entities, then distortion.
    pub fn iterate(&mut self) {
        let chaperone =
            self.pairs.is_some() && self.rng.random::<f64>() < self.config.move_mix;
        if chaperone {
            self.chaperones_sweep();
        } else {
            self.full_gibbs_scan();
        }
        self.resample_entities();
        self.resample_distortion();
    }

    /// `Err` if any cluster exceeds the prior's cap.
    pub fn check_cap(&self) -> Result<()> {
        if let Some(cap) = self.post.prior.cap() {
            if self.counts[cap..].iter().any(|&c| c > 0) {
                let size = self.members.iter().map(Vec::len).max().unwrap_or(0);
                return Err(Error::CapViolation { size, cap });
            }
        }
        Ok(())
    }
}

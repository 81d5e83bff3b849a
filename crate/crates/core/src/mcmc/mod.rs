//! Posterior simulation over linkage structures, entities and distortion.
//!
//! Each iteration is one composite sweep: with probability `move_mix` a
//! batch of chaperone steps, otherwise a full Gibbs scan over records,
//! followed by entity and distortion updates. Chains run on separate
//! threads with independent random streams derived from one seed.

mod chain;
mod similarity;

pub use chain::{Chain, ChainState};
pub use similarity::SimilarityWeights;

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::fnr_fdr;
use crate::likelihood::{BetaPrior, Dataset, FieldModel, LikelihoodConfig};
use crate::partitions::LinkageStructure;
use crate::priors::{Prior, PriorTables};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Total iterations per chain, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    /// Probability that an iteration uses chaperone steps, not a full scan.
    pub move_mix: f64,
    /// `lambda` in the pair weights `lambda + #agreeing fields`.
    pub chaperone_floor: f64,
    pub inner_sweeps: usize,
    /// Chaperone pairs per iteration; defaults to `n`.
    pub pairs_per_sweep: Option<usize>,
    /// Keep every `snapshot_stride`-th kept linkage structure.
    pub snapshot_stride: usize,
    /// Recompute the log joint from scratch this often.
    pub check_every: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            burn_in: 10_000,
            thin: 1,
            chains: 2,
            seed: 1,
            move_mix: 0.9,
            chaperone_floor: 0.1,
            inner_sweeps: 5,
            pairs_per_sweep: None,
            snapshot_stride: 10,
            check_every: 1_000,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: String| Err(Error::param(name, reason));
        if self.iterations <= self.burn_in {
            return bad(
                "iterations",
                format!("must exceed burn_in = {}, got {}", self.burn_in, self.iterations),
            );
        }
        if self.thin == 0 {
            return bad("thin", "must be at least 1".into());
        }
        if self.chains == 0 {
            return bad("chains", "must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.move_mix) {
            return bad("move_mix", format!("must lie in [0, 1], got {}", self.move_mix));
        }
        if !(self.chaperone_floor > 0.0 && self.chaperone_floor.is_finite()) {
            return bad(
                "chaperone_floor",
                format!("must be positive, got {}", self.chaperone_floor),
            );
        }
        if self.inner_sweeps == 0 {
            return bad("inner_sweeps", "must be at least 1".into());
        }
        if self.snapshot_stride == 0 {
            return bad("snapshot_stride", "must be at least 1".into());
        }
        if self.check_every == 0 {
            return bad("check_every", "must be at least 1".into());
        }
        Ok(())
    }

    /// Number of kept iterations per chain.
    pub fn kept_per_chain(&self) -> usize {
        self.iterations.saturating_sub(self.burn_in) / self.thin.max(1)
    }

    fn keeps(&self, iter: usize) -> bool {
        iter > self.burn_in && (iter - self.burn_in) % self.thin == 0
    }
}

/// Everything about the target distribution that stays fixed during a run.
pub struct Posterior<'a> {
    data: &'a Dataset,
    fields: FieldModel,
    prior: Prior,
    tables: PriorTables,
    psi_prior: Vec<BetaPrior>,
    fixed_psi: Option<f64>,
    new_cluster_ll: Vec<f64>,
}

impl<'a> Posterior<'a> {
    pub fn new(data: &'a Dataset, prior: Prior, likelihood: &LikelihoodConfig) -> Result<Self> {
        likelihood.validate()?;
        let fields = FieldModel::from_data(data, likelihood.smoothing)?;
        let psi = BetaPrior::from_mean_sd(likelihood.psi_mean, likelihood.psi_sd)?;
        let new_cluster_ll = data.records().map(|x| fields.new_cluster_loglik(x)).collect();
        Ok(Self {
            data,
            tables: PriorTables::new(&prior, data.n()),
            prior,
            fields,
            psi_prior: vec![psi; data.num_fields()],
            fixed_psi: likelihood.fixed_psi,
            new_cluster_ll,
        })
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn field_model(&self) -> &FieldModel {
        &self.fields
    }

    fn initial_psi(&self) -> Vec<f64> {
        match self.fixed_psi {
            Some(p) => vec![p; self.data.num_fields()],
            None => self.psi_prior.iter().map(BetaPrior::mean).collect(),
        }
    }
}

/// One kept iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub chain: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub r: Vec<usize>,
    pub psi: Vec<f64>,
    #[serde(rename = "logJoint")]
    pub log_joint: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fdr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub chain: usize,
    pub iter: usize,
    pub linkage: LinkageStructure,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PosteriorTrace {
    pub records: Vec<TraceRecord>,
    pub snapshots: Vec<Snapshot>,
}

impl PosteriorTrace {
    /// The last `count` snapshots, taken evenly from each chain.
    pub fn last_snapshots(&self, count: usize) -> Vec<LinkageStructure> {
        let chains: Vec<usize> = {
            let mut c: Vec<usize> = self.snapshots.iter().map(|s| s.chain).collect();
            c.sort_unstable();
            c.dedup();
            c
        };
        if chains.is_empty() {
            return Vec::new();
        }
        let per_chain = count.div_ceil(chains.len());
        let mut out = Vec::new();
        for c in chains {
            let own: Vec<&Snapshot> = self.snapshots.iter().filter(|s| s.chain == c).collect();
            let skip = own.len().saturating_sub(per_chain);
            out.extend(own[skip..].iter().map(|s| s.linkage.clone()));
        }
        out
    }
}

/// Runs chain number `chain` to completion.
pub fn run_chain(
    post: &Posterior,
    pairs: Option<&SimilarityWeights>,
    config: &SamplerConfig,
    chain: usize,
    truth: Option<&LinkageStructure>,
) -> Result<PosteriorTrace> {
    config.validate()?;
    if config.kept_per_chain() == 0 {
        return Err(Error::Empty("trace: no iterations kept after burn-in"));
    }
    if let Some(t) = truth {
        if t.n() != post.data.n() {
            return Err(Error::LengthMismatch {
                left: t.n(),
                right: post.data.n(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain as u64);
    let mut sampler = Chain::new(post, pairs, config, rng, None)?;
    let mut trace = PosteriorTrace::default();
    let mut kept = 0;
    for iter in 1..=config.iterations {
        sampler.iterate();
        if iter % config.check_every == 0 {
            sampler.check_bookkeeping()?;
        }
        if !config.keeps(iter) {
            continue;
        }
        sampler.check_cap()?;
        kept += 1;
        let needs_linkage = truth.is_some() || kept % config.snapshot_stride == 0;
        let linkage = needs_linkage.then(|| sampler.linkage());
        let (fnr, fdr) = match (truth, &linkage) {
            (Some(t), Some(xi)) => {
                let (a, b) = fnr_fdr(xi, t)?;
                (Some(a), Some(b))
            }
            _ => (None, None),
        };
        trace.records.push(TraceRecord {
            iter,
            chain,
            k: sampler.num_clusters(),
            r: sampler.allelic_counts(),
            psi: sampler.psi().to_vec(),
            log_joint: sampler.log_joint(),
            fnr,
            fdr,
        });
        if kept % config.snapshot_stride == 0 {
            trace.snapshots.push(Snapshot {
                chain,
                iter,
                linkage: linkage.expect("computed above"),
            });
        }
    }
    Ok(trace)
}

/// Runs `config.chains` chains in parallel and concatenates their traces
/// in chain order.
pub fn run_chains(
    config: &SamplerConfig,
    data: &Dataset,
    prior: &Prior,
    likelihood: &LikelihoodConfig,
    truth: Option<&LinkageStructure>,
) -> Result<PosteriorTrace> {
    config.validate()?;
    let post = Posterior::new(data, prior.clone(), likelihood)?;
    let pairs = if data.n() >= 2 && config.move_mix > 0.0 {
        Some(SimilarityWeights::new(data, config.chaperone_floor)?)
    } else {
        None
    };
    let results: Vec<Result<PosteriorTrace>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.chains)
            .map(|c| {
                let (post, pairs) = (&post, pairs.as_ref());
                scope.spawn(move || run_chain(post, pairs, config, c, truth))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    });
    let mut out = PosteriorTrace::default();
    for r in results {
        let t = r?;
        out.records.extend(t.records);
        out.snapshots.extend(t.snapshots);
    }
    Ok(out)
}

pub fn write_trace_jsonl<W: Write>(records: &[TraceRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace_jsonl<R: BufRead>(input: R) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// `chain,iter,x1,...,xn` with one-based cluster labels.
pub fn write_snapshots_csv<W: Write>(snapshots: &[Snapshot], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(first) = snapshots.first() {
        let mut header = vec!["chain".to_string(), "iter".to_string()];
        header.extend((1..=first.linkage.n()).map(|i| format!("x{i}")));
        w.write_record(&header)?;
    }
    for s in snapshots {
        let mut row = vec![s.chain.to_string(), s.iter.to_string()];
        row.extend(s.linkage.one_based().map(|l| l.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshots_csv<R: std::io::Read>(input: R) -> Result<Vec<Snapshot>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let nums: Vec<usize> = row
            .iter()
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|_| Error::Data(format!("non-integer snapshot entry {v:?}")))
            })
            .collect::<Result<_>>()?;
        if nums.len() < 3 {
            return Err(Error::Data("snapshot row without labels".into()));
        }
        out.push(Snapshot {
            chain: nums[0],
            iter: nums[1],
            linkage: LinkageStructure::canonicalize(&nums[2..])?,
        });
    }
    Ok(out)
}

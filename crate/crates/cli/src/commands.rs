//! Subcommands. Each one validates the config, writes its files into the
//! run directory and finishes with a manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use bbap_core::datagen::{read_records_csv, simulate, write_records_csv};
use bbap_core::estimation::{
    greedy_epl, read_linkage_csv, write_linkage_csv, EstimateReport, LossKind, PosteriorSamples,
};
use bbap_core::evaluation::{boxplot_rows, fnr_fdr, summarize_trace, write_boxplot_tsv, MetricsReport, TraceSummary};
use bbap_core::likelihood::Dataset;
use bbap_core::mcmc::{
    read_snapshots_csv, read_trace_jsonl, run_chains, write_snapshots_csv, write_trace_jsonl,
    PosteriorTrace, Snapshot, TraceRecord,
};
use bbap_core::priors::Prior;
use bbap_core::LinkageStructure;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Family, RunConfig};
use crate::error::{CliError, Result};
use crate::output::{Manifest, OutputDir, MANIFEST};

pub const RECORDS: &str = "records.csv";
pub const TRUTH: &str = "truth.csv";
pub const TRACE: &str = "trace.jsonl";
pub const SNAPSHOTS: &str = "xi_snapshots.csv";
pub const SUMMARY: &str = "summary.tsv";
pub const K_TABLE: &str = "k_table.tsv";
pub const METRICS: &str = "metrics.json";
pub const PRIOR: &str = "prior.json";
pub const PRIOR_BOXPLOT: &str = "prior_boxplot.tsv";

pub fn estimate_csv(kind: LossKind) -> String {
    format!("estimate_{kind}.csv")
}

pub fn estimate_json(kind: LossKind) -> String {
    format!("estimate_{kind}.json")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Calibrate,
    SamplePrior,
    Run,
    Estimate,
    Evaluate,
    Summarize,
    Pipeline,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Simulate,
        Command::Calibrate,
        Command::SamplePrior,
        Command::Run,
        Command::Estimate,
        Command::Evaluate,
        Command::Summarize,
        Command::Pipeline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Calibrate => "calibrate",
            Command::SamplePrior => "sample-prior",
            Command::Run => "run",
            Command::Estimate => "estimate",
            Command::Evaluate => "evaluate",
            Command::Summarize => "summarize",
            Command::Pipeline => "pipeline",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

/// Runs `command` and returns the run directory.
pub fn execute(command: Command, config: &RunConfig) -> Result<PathBuf> {
    config.validate()?;
    if let Some(c) = &config.command {
        if c != command.name() {
            return Err(CliError::Config(format!(
                "config is for `{c}` but `{}` was requested",
                command.name()
            )));
        }
    }
    let mut out = OutputDir::open(&config.out)?;
    match command {
        Command::Simulate => {
            if config.scenario.is_none() {
                return Err(CliError::Config("simulate needs a [scenario] block".into()));
            }
            load_input(config, Some(&mut out))?;
        }
        Command::Calibrate => calibrate(config, &mut out)?,
        Command::SamplePrior => {
            let input = load_input(config, None)?;
            let prior = config.prior.build(input.data.n(), input.truth.as_ref())?;
            sample_prior(config, &prior, &input, &mut out)?;
        }
        Command::Run => {
            let input = load_input(config, Some(&mut out))?;
            run(config, &input, &mut out)?;
        }
        Command::Estimate => {
            let snapshots = read_snapshots(&out.path(SNAPSHOTS))?;
            estimate(config, &snapshots, &mut out)?;
        }
        Command::Evaluate => {
            let input = load_input(config, None)?;
            let truth = input.truth.as_ref().ok_or_else(no_truth)?;
            let records = read_trace(&out.path(TRACE))?;
            let snapshots = read_snapshots(&out.path(SNAPSHOTS))?;
            let mut estimates = Vec::new();
            for &kind in &config.estimation.losses {
                let path = out.path(&estimate_csv(kind));
                if path.exists() {
                    estimates.push((kind, read_linkage_csv(open(&path)?)?));
                }
            }
            evaluate(truth, &records, &snapshots, &estimates, &mut out)?;
        }
        Command::Summarize => {
            let input = load_input(config, None)?;
            let records = read_trace(&out.path(TRACE))?;
            summarize(&records, input.truth.as_ref(), &mut out)?;
        }
        Command::Pipeline => {
            let input = load_input(config, Some(&mut out))?;
            let trace = run(config, &input, &mut out)?;
            let estimates = estimate(config, &trace.snapshots, &mut out)?;
            if let Some(truth) = &input.truth {
                evaluate(truth, &trace.records, &trace.snapshots, &estimates, &mut out)?;
            }
        }
    }
    let manifest = Manifest::new(command.name(), config, out.written())?;
    out.write_json(MANIFEST, &manifest)?;
    let root = out.root().to_path_buf();
    out.commit();
    Ok(root)
}

fn no_truth() -> CliError {
    CliError::Data("no ground truth: the dataset has no truth_id column".into())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    Ok(read_trace_jsonl(BufReader::new(open(path)?))?)
}

fn read_snapshots(path: &Path) -> Result<Vec<Snapshot>> {
    Ok(read_snapshots_csv(BufReader::new(open(path)?))?)
}

pub struct Input {
    pub data: Dataset,
    pub truth: Option<LinkageStructure>,
}

/// Reads the dataset, or simulates the scenario. Simulated records are
/// written to the run directory when `out` is given, and always pass
/// through the CSV encoding so file-based reruns see identical data.
fn load_input(config: &RunConfig, out: Option<&mut OutputDir>) -> Result<Input> {
    if let Some(path) = &config.dataset {
        let loaded = read_records_csv(BufReader::new(open(path)?))
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        return Ok(Input {
            data: loaded.data,
            truth: loaded.truth,
        });
    }
    let spec = config
        .scenario
        .as_ref()
        .ok_or_else(|| CliError::Config("need a dataset path or a [scenario] block".into()))?;
    let syn = simulate(spec)?;
    let mut bytes = Vec::new();
    write_records_csv(&syn.data, Some(&syn.truth), &mut bytes)?;
    if let Some(out) = out {
        out.write(RECORDS, |w| Ok(w.write_all(&bytes)?))?;
        out.write(TRUTH, |w| Ok(write_linkage_csv(&syn.truth, w)?))?;
    }
    let loaded = read_records_csv(bytes.as_slice())?;
    Ok(Input {
        data: loaded.data,
        truth: loaded.truth,
    })
}

fn calibrate(config: &RunConfig, out: &mut OutputDir) -> Result<()> {
    if config.prior.family != Family::Bbap {
        return Err(CliError::Config("calibrate needs prior.family = \"bbap\"".into()));
    }
    let input = load_input(config, None)?;
    let prior = config.prior.build(input.data.n(), input.truth.as_ref())?;
    out.write_json(PRIOR, &prior)?;
    sample_prior(config, &prior, &input, out)
}

/// Prior predictive boxplot of the allelic partition.
fn sample_prior(config: &RunConfig, prior: &Prior, input: &Input, out: &mut OutputDir) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed());
    let n = input.data.n();
    let draws: Vec<Vec<usize>> = (0..config.prior.draws)
        .map(|_| prior.sample(n, &mut rng).allelic().counts().to_vec())
        .collect();
    let views: Vec<&[usize]> = draws.iter().map(Vec::as_slice).collect();
    let truth = input.truth.as_ref().map(LinkageStructure::allelic);
    let rows = boxplot_rows(&views, truth.as_ref());
    out.write(PRIOR_BOXPLOT, |w| Ok(write_boxplot_tsv(&rows, w)?))?;
    Ok(())
}

fn run(config: &RunConfig, input: &Input, out: &mut OutputDir) -> Result<PosteriorTrace> {
    let prior = config.prior.build(input.data.n(), input.truth.as_ref())?;
    out.write_json(PRIOR, &prior)?;
    let trace = run_chains(
        &config.sampler,
        &input.data,
        &prior,
        &config.likelihood,
        input.truth.as_ref(),
    )?;
    out.write(TRACE, |w| Ok(write_trace_jsonl(&trace.records, w)?))?;
    out.write(SNAPSHOTS, |w| Ok(write_snapshots_csv(&trace.snapshots, w)?))?;
    let summary = summarize(&trace.records, input.truth.as_ref(), out)?;
    if let Some(m) = summary.metrics {
        out.write_json(METRICS, &BTreeMap::from([("posterior", m)]))?;
    }
    Ok(trace)
}

fn estimate(
    config: &RunConfig,
    snapshots: &[Snapshot],
    out: &mut OutputDir,
) -> Result<Vec<(LossKind, LinkageStructure)>> {
    let trace = PosteriorTrace {
        records: Vec::new(),
        snapshots: snapshots.to_vec(),
    };
    let samples = PosteriorSamples::new(trace.last_snapshots(config.estimation.samples))?;
    let greedy = config.estimation.greedy(config.seed());
    let mut estimates = Vec::new();
    for &kind in &config.estimation.losses {
        let est = greedy_epl(&samples, kind, &greedy)?;
        let report = EstimateReport::new(&est, &samples, kind)?;
        out.write(&estimate_csv(kind), |w| Ok(write_linkage_csv(&est, w)?))?;
        out.write_json(&estimate_json(kind), &report)?;
        estimates.push((kind, est));
    }
    Ok(estimates)
}

/// Posterior averages from the trace, recomputing FNR/FDR from the
/// snapshots when the trace was run without a truth.
fn posterior_metrics(
    truth: &LinkageStructure,
    records: &[TraceRecord],
    snapshots: &[Snapshot],
) -> Result<MetricsReport> {
    let source: Vec<TraceRecord> = if records.iter().all(|r| r.fnr.is_some() && r.fdr.is_some()) {
        records.to_vec()
    } else {
        snapshots
            .iter()
            .map(|s| {
                let (fnr, fdr) = fnr_fdr(&s.linkage, truth)?;
                Ok(TraceRecord {
                    iter: s.iter,
                    chain: s.chain,
                    k: s.linkage.num_clusters(),
                    r: s.linkage.allelic().counts().to_vec(),
                    psi: Vec::new(),
                    log_joint: f64::NAN,
                    fnr: Some(fnr),
                    fdr: Some(fdr),
                })
            })
            .collect::<Result<_>>()?
    };
    let summary = summarize_trace(&source, Some(truth))?;
    Ok(summary.metrics.expect("truth supplied"))
}

fn evaluate(
    truth: &LinkageStructure,
    records: &[TraceRecord],
    snapshots: &[Snapshot],
    estimates: &[(LossKind, LinkageStructure)],
    out: &mut OutputDir,
) -> Result<()> {
    let mut metrics = BTreeMap::new();
    metrics.insert("posterior".to_string(), posterior_metrics(truth, records, snapshots)?);
    for (kind, est) in estimates {
        metrics.insert(kind.name().to_string(), MetricsReport::for_estimate(est, truth)?);
    }
    out.write_json(METRICS, &metrics)?;
    Ok(())
}

fn summarize(
    records: &[TraceRecord],
    truth: Option<&LinkageStructure>,
    out: &mut OutputDir,
) -> Result<TraceSummary> {
    let summary = summarize_trace(records, truth)?;
    out.write(SUMMARY, |w| Ok(write_boxplot_tsv(&summary.boxplot, w)?))?;
    out.write(K_TABLE, |w| {
        writeln!(w, "K\tcount")?;
        for (k, c) in &summary.k_histogram {
            writeln!(w, "{k}\t{c}")?;
        }
        Ok(())
    })?;
    Ok(summary)
}

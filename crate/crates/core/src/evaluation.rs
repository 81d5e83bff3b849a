//! Truth-relative error rates, Jensen-Shannon distance between allelic
//! partitions, and posterior summaries of a trace.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::TraceRecord;
use crate::partitions::{AllelicPartition, LinkageStructure};

/// Pairwise confusion counts of an estimate against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    pub true_pos: usize,
    pub false_neg: usize,
    pub false_pos: usize,
}

pub fn pair_counts(estimate: &LinkageStructure, truth: &LinkageStructure) -> Result<PairCounts> {
    if estimate.n() != truth.n() {
        return Err(Error::LengthMismatch {
            left: estimate.n(),
            right: truth.n(),
        });
    }
    let declared = estimate.matched_pairs();
    let actual = truth.matched_pairs();
    let tp = declared.intersection_count(&actual);
    Ok(PairCounts {
        true_pos: tp,
        false_neg: actual.len() - tp,
        false_pos: declared.len() - tp,
    })
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `(FNR, FDR)` over record pairs, with `0/0 = 0`.
pub fn fnr_fdr(estimate: &LinkageStructure, truth: &LinkageStructure) -> Result<(f64, f64)> {
    let c = pair_counts(estimate, truth)?;
    Ok((
        ratio(c.false_neg, c.true_pos + c.false_neg),
        ratio(c.false_pos, c.true_pos + c.false_pos),
    ))
}

/// Size distribution `p_s = r_s / K` of a cluster chosen at random.
pub fn size_distribution(r: &AllelicPartition) -> Vec<f64> {
    let k = r.num_clusters() as f64;
    r.counts().iter().map(|&c| c as f64 / k).collect()
}

/// Square root of the base-2 Jensen-Shannon divergence between two
/// probability vectors (zero-padded to a common length).
pub fn js_distance_probs(p: &[f64], q: &[f64]) -> f64 {
    let len = p.len().max(q.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let mut div = 0.0;
    for i in 0..len {
        let (a, b) = (at(p, i), at(q, i));
        let m = 0.5 * (a + b);
        let term = |x: f64| if x > 0.0 { 0.5 * x * (x / m).log2() } else { 0.0 };
        // summed as a pair so swapping p and q gives the same bits
        div += term(a) + term(b);
    }
    div.clamp(0.0, 1.0).sqrt()
}

/// Jensen-Shannon distance between the cluster-size distributions of two
/// allelic partitions; lies in `[0, 1]`.
pub fn js_distance(a: &AllelicPartition, b: &AllelicPartition) -> f64 {
    js_distance_probs(&size_distribution(a), &size_distribution(b))
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Where a set of metrics came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricSource {
    PosteriorAverage,
    PointEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fnr: f64,
    pub fdr: f64,
    pub js: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub source: MetricSource,
}

impl MetricsReport {
    pub fn for_estimate(estimate: &LinkageStructure, truth: &LinkageStructure) -> Result<Self> {
        let (fnr, fdr) = fnr_fdr(estimate, truth)?;
        Ok(Self {
            fnr,
            fdr,
            js: js_distance(&estimate.allelic(), &truth.allelic()),
            k: estimate.num_clusters(),
            source: MetricSource::PointEstimate,
        })
    }
}

/// Posterior quantiles of `r_s` for one cluster size.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxplotRow {
    pub size: usize,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
    pub truth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSummary {
    pub boxplot: Vec<BoxplotRow>,
    /// `K -> number of samples`.
    pub k_histogram: BTreeMap<usize, usize>,
    pub k_mean: f64,
    /// Averages of per-sample metrics, when the truth is known.
    pub metrics: Option<MetricsReport>,
}

/// Per-size quantiles of `r_s` across draws of the allelic partition.
pub fn boxplot_rows(draws: &[&[usize]], truth: Option<&AllelicPartition>) -> Vec<BoxplotRow> {
    let width = draws
        .iter()
        .map(|r| r.len())
        .chain(truth.map(AllelicPartition::cap))
        .max()
        .unwrap_or(1);
    (1..=width)
        .map(|size| {
            let mut vals: Vec<f64> = draws
                .iter()
                .map(|r| r.get(size - 1).copied().unwrap_or(0) as f64)
                .collect();
            vals.sort_by(f64::total_cmp);
            BoxplotRow {
                size,
                q05: quantile(&vals, 0.05),
                q25: quantile(&vals, 0.25),
                q50: quantile(&vals, 0.50),
                q75: quantile(&vals, 0.75),
                q95: quantile(&vals, 0.95),
                truth: truth.map(|r| r.count(size)),
            }
        })
        .collect()
}

/// Boxplot table, K histogram and posterior-average metrics of a trace.
///
/// Per-sample FNR/FDR are read from the trace; a trace recorded without the
/// truth yields `NaN` for those two averages.
pub fn summarize_trace(
    records: &[TraceRecord],
    truth: Option<&LinkageStructure>,
) -> Result<TraceSummary> {
    if records.is_empty() {
        return Err(Error::Empty("trace"));
    }
    let truth_r = truth.map(LinkageStructure::allelic);
    let counts: Vec<&[usize]> = records.iter().map(|t| t.r.as_slice()).collect();
    let boxplot = boxplot_rows(&counts, truth_r.as_ref());

    let mut k_histogram = BTreeMap::new();
    for t in records {
        *k_histogram.entry(t.k).or_insert(0) += 1;
    }
    let count = records.len() as f64;
    let k_mean = records.iter().map(|t| t.k as f64).sum::<f64>() / count;

    let metrics = truth_r.map(|tr| {
        let truth_p = size_distribution(&tr);
        let mean = |f: &dyn Fn(&TraceRecord) -> f64| records.iter().map(f).sum::<f64>() / count;
        let mut ks: Vec<f64> = records.iter().map(|t| t.k as f64).collect();
        ks.sort_by(f64::total_cmp);
        MetricsReport {
            fnr: mean(&|t| t.fnr.unwrap_or(f64::NAN)),
            fdr: mean(&|t| t.fdr.unwrap_or(f64::NAN)),
            js: mean(&|t| {
                let k = t.k as f64;
                let p: Vec<f64> = t.r.iter().map(|&c| c as f64 / k).collect();
                js_distance_probs(&p, &truth_p)
            }),
            k: quantile(&ks, 0.5).round() as usize,
            source: MetricSource::PosteriorAverage,
        }
    });

    Ok(TraceSummary {
        boxplot,
        k_histogram,
        k_mean,
        metrics,
    })
}

/// Writes the boxplot table as TSV; missing truth is left blank.
pub fn write_boxplot_tsv<W: Write>(rows: &[BoxplotRow], mut out: W) -> Result<()> {
    writeln!(out, "size\tq05\tq25\tq50\tq75\tq95\ttruth")?;
    for r in rows {
        let truth = r.truth.map(|t| t.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.size, r.q05, r.q25, r.q50, r.q75, r.q95, truth
        )?;
    }
    Ok(())
}

//! Categorical hit-and-miss distortion model.
//!
//! Field `l` of record `i` in cluster `k` is the entity value `y[k][l]` with
//! probability `1 - psi_l`, and otherwise an independent draw from the
//! field's empirical distribution `theta_l`:
//!
//! ```text
//! p(x | y, psi) = prod_l (1 - psi_l) 1(x_l = y_l) + psi_l theta_l[x_l]
//! ```
//!
//! Entity values have prior `Cat(theta_l)` and `psi_l ~ Beta(c_l, d_l)`.
//! Category codes are zero-based.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::sample_log_weights;

/// Default additive smoothing for empirical field frequencies.
pub const DEFAULT_SMOOTHING: f64 = 0.01;

/// `n x L` table of category codes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<usize>,
    n: usize,
    cardinalities: Vec<usize>,
    field_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        rows: Vec<Vec<usize>>,
        cardinalities: Vec<usize>,
        field_names: Vec<String>,
    ) -> Result<Self> {
        let fields = cardinalities.len();
        if rows.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        if fields == 0 {
            return Err(Error::Data("dataset has no fields".into()));
        }
        if field_names.len() != fields {
            return Err(Error::LengthMismatch {
                left: field_names.len(),
                right: fields,
            });
        }
        let mut values = Vec::with_capacity(rows.len() * fields);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != fields {
                return Err(Error::Data(format!(
                    "record {i} has {} fields, expected {fields}",
                    row.len()
                )));
            }
            for (l, (&v, &d)) in row.iter().zip(&cardinalities).enumerate() {
                if v >= d {
                    return Err(Error::Data(format!(
                        "record {i}, field {}: code {v} outside 0..{d}",
                        field_names[l]
                    )));
                }
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            values,
            n: rows.len(),
            cardinalities,
            field_names,
        })
    }

    /// Fields named `f1, f2, ...` with cardinalities taken from the data.
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Result<Self> {
        let fields = rows.first().map_or(0, Vec::len);
        let cardinalities = (0..fields)
            .map(|l| rows.iter().filter_map(|r| r.get(l)).max().map_or(1, |m| m + 1))
            .collect();
        let names = (1..=fields).map(|l| format!("f{l}")).collect();
        Self::new(rows, cardinalities, names)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_fields(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn record(&self, i: usize) -> &[usize] {
        let l = self.num_fields();
        &self.values[i * l..(i + 1) * l]
    }

    pub fn value(&self, i: usize, field: usize) -> usize {
        self.values[i * self.num_fields() + field]
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn field_names(&self) -> &[String] {
        &self.field_names
    }

    pub fn records(&self) -> impl Iterator<Item = &[usize]> {
        self.values.chunks(self.num_fields())
    }
}

/// Per-field smoothed frequencies `(count + eps) / (n + eps D)`.
pub fn empirical_freqs(data: &Dataset, smoothing: f64) -> Result<Vec<Vec<f64>>> {
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::param("smoothing", format!("must be non-negative, got {smoothing}")));
    }
    let n = data.n() as f64;
    Ok(data
        .cardinalities()
        .iter()
        .enumerate()
        .map(|(l, &d)| {
            let mut counts = vec![0.0; d];
            for i in 0..data.n() {
                counts[data.value(i, l)] += 1.0;
            }
            let denom = n + smoothing * d as f64;
            counts.iter().map(|c| (c + smoothing) / denom).collect()
        })
        .collect())
}

/// `ln p(x | y, psi)` summed over fields.
pub fn record_loglik(x: &[usize], y: &[usize], psi: &[f64], freqs: &[Vec<f64>]) -> f64 {
    x.iter()
        .zip(y)
        .zip(psi.iter().zip(freqs))
        .map(|((&xv, &yv), (&p, theta))| {
            let hit = if xv == yv { 1.0 - p } else { 0.0 };
            (hit + p * theta[xv]).ln()
        })
        .sum()
}

/// `ln sum_y p(y) p(x | y, psi) = sum_l ln theta_l[x_l]`, whatever `psi`.
pub fn new_cluster_marginal_loglik(x: &[usize], freqs: &[Vec<f64>]) -> f64 {
    x.iter().zip(freqs).map(|(&v, theta)| theta[v].ln()).sum()
}

/// Beta prior on a distortion probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

impl BetaPrior {
    /// Method of moments: the Beta with the given mean and standard deviation.
    pub fn from_mean_sd(mean: f64, sd: f64) -> Result<Self> {
        if !(mean > 0.0 && mean < 1.0) {
            return Err(Error::param("psi_mean", format!("must lie in (0, 1), got {mean}")));
        }
        let var = sd * sd;
        if !(sd > 0.0 && var < mean * (1.0 - mean)) {
            return Err(Error::param(
                "psi_sd",
                format!("must lie in (0, {}), got {sd}", (mean * (1.0 - mean)).sqrt()),
            ));
        }
        let scale = mean * (1.0 - mean) / var - 1.0;
        Ok(Self {
            a: mean * scale,
            b: (1.0 - mean) * scale,
        })
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }
}

/// Likelihood settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LikelihoodConfig {
    pub psi_mean: f64,
    pub psi_sd: f64,
    pub smoothing: f64,
    /// Holds every `psi_l` at this value instead of sampling it.
    pub fixed_psi: Option<f64>,
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        Self {
            psi_mean: 0.01,
            psi_sd: 0.01,
            smoothing: DEFAULT_SMOOTHING,
            fixed_psi: None,
        }
    }
}

impl LikelihoodConfig {
    pub fn validate(&self) -> Result<()> {
        BetaPrior::from_mean_sd(self.psi_mean, self.psi_sd)?;
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(Error::param("smoothing", "must be non-negative"));
        }
        if let Some(p) = self.fixed_psi {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::param("fixed_psi", format!("must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// Entity attribute rows `y[k]`, one per cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentEntities {
    pub attributes: Vec<Vec<usize>>,
}

impl LatentEntities {
    pub fn num_entities(&self) -> usize {
        self.attributes.len()
    }
}

/// Distortion probabilities, their prior and the auxiliary indicators
/// `w[i][l]` (true when field `l` of record `i` was redrawn).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionState {
    pub psi: Vec<f64>,
    pub prior: Vec<BetaPrior>,
    pub indicators: Vec<Vec<bool>>,
}

/// Fixed per-dataset quantities of the model: frequencies, their logs and
/// categorical samplers.
#[derive(Debug, Clone)]
pub struct FieldModel {
    freqs: Vec<Vec<f64>>,
    ln_freqs: Vec<Vec<f64>>,
    samplers: Vec<WeightedIndex<f64>>,
}

impl FieldModel {
    pub fn new(freqs: Vec<Vec<f64>>) -> Result<Self> {
        let samplers = freqs
            .iter()
            .map(|theta| {
                WeightedIndex::new(theta)
                    .map_err(|e| Error::Data(format!("invalid field frequencies: {e}")))
            })
            .collect::<Result<_>>()?;
        let ln_freqs = freqs
            .iter()
            .map(|theta| theta.iter().map(|t| t.ln()).collect())
            .collect();
        Ok(Self {
            freqs,
            ln_freqs,
            samplers,
        })
    }

    pub fn from_data(data: &Dataset, smoothing: f64) -> Result<Self> {
        Self::new(empirical_freqs(data, smoothing)?)
    }

    pub fn freqs(&self) -> &[Vec<f64>] {
        &self.freqs
    }

    pub fn num_fields(&self) -> usize {
        self.freqs.len()
    }

    pub fn ln_freq(&self, field: usize, value: usize) -> f64 {
        self.ln_freqs[field][value]
    }

    pub fn new_cluster_loglik(&self, x: &[usize]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(l, &v)| self.ln_freqs[l][v])
            .sum()
    }

    pub fn draw<R: Rng + ?Sized>(&self, field: usize, rng: &mut R) -> usize {
        self.samplers[field].sample(rng)
    }

    /// Log-likelihood lookup tables for the current `psi`.
    pub fn tables(&self, psi: &[f64]) -> LoglikTables {
        let (hit, miss) = self
            .freqs
            .iter()
            .zip(psi)
            .map(|(theta, &p)| {
                let hit = theta.iter().map(|t| (1.0 - p + p * t).ln()).collect();
                let miss = theta.iter().map(|t| (p * t).ln()).collect();
                (hit, miss)
            })
            .unzip();
        LoglikTables { hit, miss }
    }

    /// Draws `y[field]` from its full conditional given the values the
    /// cluster's records carry in that field.
    pub fn sample_entity_value<R: Rng + ?Sized>(
        &self,
        field: usize,
        member_values: &[usize],
        psi: f64,
        rng: &mut R,
        scratch: &mut Vec<usize>,
    ) -> usize {
        let theta = &self.freqs[field];
        scratch.clear();
        scratch.extend_from_slice(member_values);
        scratch.sort_unstable();
        scratch.dedup();
        let ln_miss_all: f64 = member_values.iter().map(|&x| (psi * theta[x]).ln()).sum();
        let mut logs = Vec::with_capacity(scratch.len() + 1);
        let mut covered = 0.0;
        for &d in scratch.iter() {
            covered += theta[d];
            let mut w = self.ln_freqs[field][d];
            for &x in member_values {
                w += if x == d {
                    (1.0 - psi + psi * theta[d]).ln()
                } else {
                    (psi * theta[x]).ln()
                };
            }
            logs.push(w);
        }
        let rest = 1.0 - covered;
        logs.push(if rest > 0.0 { rest.ln() + ln_miss_all } else { f64::NEG_INFINITY });
        let pick = sample_log_weights(rng, &logs);
        if pick < scratch.len() {
            return scratch[pick];
        }
        loop {
            let d = self.draw(field, rng);
            if scratch.binary_search(&d).is_err() {
                return d;
            }
        }
    }

    /// Draws a whole entity row for a cluster with the given members.
    pub fn sample_entity<R: Rng + ?Sized>(
        &self,
        data: &Dataset,
        members: &[usize],
        psi: &[f64],
        rng: &mut R,
        out: &mut [usize],
    ) {
        let mut values = Vec::with_capacity(members.len());
        let mut scratch = Vec::new();
        for (l, slot) in out.iter_mut().enumerate() {
            values.clear();
            values.extend(members.iter().map(|&i| data.value(i, l)));
            *slot = self.sample_entity_value(l, &values, psi[l], rng, &mut scratch);
        }
    }
}

/// `ln((1 - psi) + psi theta[x])` and `ln(psi theta[x])` per field and code.
#[derive(Debug, Clone)]
pub struct LoglikTables {
    hit: Vec<Vec<f64>>,
    miss: Vec<Vec<f64>>,
}

impl LoglikTables {
    pub fn field(&self, field: usize, x: usize, y: usize) -> f64 {
        if x == y {
            self.hit[field][x]
        } else {
            self.miss[field][x]
        }
    }

    pub fn record(&self, x: &[usize], y: &[usize]) -> f64 {
        x.iter()
            .zip(y)
            .enumerate()
            .map(|(l, (&xv, &yv))| self.field(l, xv, yv))
            .sum()
    }
}

/// Redraws every entity row from its full conditional given `xi` and `psi`.
pub fn resample_entities<R: Rng + ?Sized>(
    data: &Dataset,
    model: &FieldModel,
    clusters: &[Vec<usize>],
    psi: &[f64],
    rng: &mut R,
) -> LatentEntities {
    let attributes = clusters
        .iter()
        .map(|members| {
            let mut row = vec![0; data.num_fields()];
            model.sample_entity(data, members, psi, rng, &mut row);
            row
        })
        .collect();
    LatentEntities { attributes }
}

/// Draws the indicators `w` and then `psi` from its conjugate Beta
/// conditional. `entity_of[i]` is the entity row of record `i`.
pub fn resample_distortion<R: Rng + ?Sized>(
    data: &Dataset,
    model: &FieldModel,
    entity_of: &[&[usize]],
    state: &mut DistortionState,
    rng: &mut R,
) {
    let n = data.n();
    let mut flagged = vec![0usize; data.num_fields()];
    for (i, y) in entity_of.iter().enumerate() {
        let x = data.record(i);
        for l in 0..data.num_fields() {
            let w = if x[l] != y[l] {
                true
            } else {
                let p = state.psi[l];
                let miss = p * model.freqs[l][x[l]];
                rng.random::<f64>() * (miss + 1.0 - p) < miss
            };
            state.indicators[i][l] = w;
            flagged[l] += w as usize;
        }
    }
    for (l, &m) in flagged.iter().enumerate() {
        let prior = state.prior[l];
        let beta = Beta::new(prior.a + m as f64, prior.b + (n - m) as f64)
            .expect("positive Beta parameters");
        state.psi[l] = beta.sample(rng);
    }
}

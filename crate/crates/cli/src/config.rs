//! Run configuration: one TOML document with nested blocks.
//!
//! ```toml
//! dataset = "records.csv"        # or a [scenario] table
//! seed = 7
//! out = "runs/s2"
//!
//! [prior]
//! family = "bbap"
//! cap = 15
//! gamma = 0.25
//! calibration = { kind = "geometric", p = 0.5 }
//!
//! [sampler]
//! iterations = 20000
//! burn_in = 10000
//! ```

use std::path::{Path, PathBuf};

use bbap_core::datagen::{read_records_csv, ScenarioSpec};
use bbap_core::estimation::{GreedyConfig, LossKind};
use bbap_core::likelihood::LikelihoodConfig;
use bbap_core::mcmc::SamplerConfig;
use bbap_core::priors::{calibrate_recursive, CalibrationSpec, EppParams, Prior, SizeFamily};
use bbap_core::LinkageStructure;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Epp,
    Bbap,
}

/// Target cluster-size law used to elicit the BBAP hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Calibration {
    Geometric { p: f64 },
    Negbin { r: f64, p: f64 },
    /// Probabilities of sizes `2..=cap`.
    Explicit { probs: Vec<f64> },
    /// Cluster sizes of the `truth_id` column in a records file.
    Informed { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub family: Family,
    /// Maximum cluster size `M*`.
    pub cap: Option<usize>,
    /// `M* = ceil(cap_factor * largest true cluster)`; needs a ground truth.
    pub cap_factor: Option<f64>,
    /// Coefficient of variation of the Beta priors.
    pub gamma: f64,
    pub calibration: Calibration,
    /// Ewens-Pitman concentration.
    pub theta: f64,
    /// Number of prior draws for `sample-prior` and `calibrate`.
    pub draws: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            family: Family::Bbap,
            cap: None,
            cap_factor: None,
            gamma: 0.25,
            calibration: Calibration::Geometric { p: 0.5 },
            theta: 1.0,
            draws: 1_000,
        }
    }
}

impl PriorConfig {
    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return config_err(format!("prior.gamma must be positive, got {}", self.gamma));
        }
        if self.draws == 0 {
            return config_err("prior.draws must be at least 1");
        }
        match self.family {
            Family::Epp => {
                if !(self.theta > 0.0 && self.theta.is_finite()) {
                    return config_err(format!("prior.theta must be positive, got {}", self.theta));
                }
            }
            Family::Bbap => match (self.cap, self.cap_factor) {
                (Some(_), Some(_)) => return config_err("prior: give cap or cap_factor, not both"),
                (None, None) => return config_err("prior: bbap needs cap or cap_factor"),
                (Some(c), None) if c < 2 => {
                    return config_err(format!("prior.cap must be at least 2, got {c}"))
                }
                (None, Some(f)) if !(f >= 1.0 && f.is_finite()) => {
                    return config_err(format!("prior.cap_factor must be at least 1, got {f}"))
                }
                _ => {}
            },
        }
        Ok(())
    }

    pub fn cap_for(&self, truth: Option<&LinkageStructure>) -> Result<usize> {
        match (self.cap, self.cap_factor) {
            (Some(c), _) => Ok(c),
            (None, Some(f)) => {
                let t = truth.ok_or_else(|| {
                    CliError::Config("prior.cap_factor needs a ground truth".into())
                })?;
                Ok(((f * t.max_cluster_size() as f64).ceil() as usize).max(2))
            }
            (None, None) => config_err("prior: bbap needs cap or cap_factor"),
        }
    }

    pub fn size_family(&self) -> Result<SizeFamily> {
        Ok(match &self.calibration {
            Calibration::Geometric { p } => SizeFamily::Geometric { p: *p },
            Calibration::Negbin { r, p } => SizeFamily::NegativeBinomial { r: *r, p: *p },
            Calibration::Explicit { probs } => SizeFamily::Explicit {
                probs: probs.clone(),
            },
            Calibration::Informed { path } => {
                let file = std::fs::File::open(path)
                    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                let loaded = read_records_csv(file)?;
                let truth = loaded.truth.ok_or_else(|| {
                    CliError::Data(format!("{}: no truth_id column", path.display()))
                })?;
                SizeFamily::from_cluster_sizes(&truth.cluster_sizes())?
            }
        })
    }

    /// The prior for `n` records.
    pub fn build(&self, n: usize, truth: Option<&LinkageStructure>) -> Result<Prior> {
        match self.family {
            Family::Epp => Ok(Prior::Epp(EppParams::new(self.theta)?)),
            Family::Bbap => {
                let spec = CalibrationSpec {
                    family: self.size_family()?,
                    cv: self.gamma,
                    cap: self.cap_for(truth)?,
                };
                Ok(Prior::Bbap(calibrate_recursive(&spec, n)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub losses: Vec<LossKind>,
    /// Number of trailing snapshots used as posterior samples.
    pub samples: usize,
    pub max_sweeps: usize,
    pub max_clusters: Option<usize>,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            losses: LossKind::ALL.to_vec(),
            samples: 2_000,
            max_sweeps: 100,
            max_clusters: None,
        }
    }
}

impl EstimationConfig {
    pub fn greedy(&self, seed: u64) -> GreedyConfig {
        GreedyConfig {
            max_sweeps: self.max_sweeps,
            max_clusters: self.max_clusters,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub scenario: Option<ScenarioSpec>,
    /// Overrides the sampler and scenario seeds.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub likelihood: LikelihoodConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("bbap-out")
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Config(msg.into()))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file; relative data paths are taken from its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.rebase(base);
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &Path| {
            let joined = if p.is_relative() { base.join(p) } else { p.to_path_buf() };
            std::fs::canonicalize(&joined).unwrap_or(joined)
        };
        if let Some(d) = &self.dataset {
            self.dataset = Some(fix(d));
        }
        if let Calibration::Informed { path } = &mut self.prior.calibration {
            *path = fix(path);
        }
    }

    /// Pushes the top-level seed into every seeded block.
    pub fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.sampler.seed = s;
            if let Some(sc) = &mut self.scenario {
                sc.seed = s;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_some() && self.scenario.is_some() {
            return config_err("give either dataset or scenario, not both");
        }
        if let Some(sc) = &self.scenario {
            sc.validate()
                .map_err(|e| CliError::Config(format!("scenario: {e}")))?;
        }
        self.prior.validate()?;
        self.likelihood
            .validate()
            .map_err(|e| CliError::Config(format!("likelihood: {e}")))?;
        self.sampler
            .validate()
            .map_err(|e| CliError::Config(format!("sampler: {e}")))?;
        if self.estimation.losses.is_empty() {
            return config_err("estimation.losses must not be empty");
        }
        if self.estimation.samples == 0 {
            return config_err("estimation.samples must be at least 1");
        }
        if self.estimation.max_clusters == Some(0) {
            return config_err("estimation.max_clusters must be at least 1");
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.sampler.seed
    }
}

//! Eliciting BBAP hyperparameters from a target cluster-size law.

use serde::{Deserialize, Serialize};

use super::BbapParams;
use crate::error::{Error, Result};
use crate::special::ln_gamma;

/// Target distribution of cluster sizes, truncated to `1..=cap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SizeFamily {
    /// `P(s) ∝ p (1 - p)^(s - 1)`.
    Geometric { p: f64 },
    /// `P(s) ∝ C(s + r - 1, s) p^r (1 - p)^s`.
    #[serde(rename = "negbin")]
    NegativeBinomial { r: f64, p: f64 },
    /// Probabilities of sizes `2..=cap`; size 1 takes the remaining mass.
    Explicit { probs: Vec<f64> },
}

impl SizeFamily {
    /// Cluster-size proportions of an observed structure.
    pub fn from_cluster_sizes(sizes: &[usize]) -> Result<Self> {
        let largest = sizes.iter().copied().max().ok_or(Error::Empty("cluster sizes"))?;
        if largest < 2 {
            return Err(Error::param("sizes", "no cluster larger than one"));
        }
        let mut probs = vec![0.0; largest - 1];
        for &s in sizes.iter().filter(|&&s| s >= 2) {
            probs[s - 2] += 1.0 / sizes.len() as f64;
        }
        Ok(SizeFamily::Explicit { probs })
    }

    fn validate(&self, cap: usize) -> Result<()> {
        let unit = |name, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::param(name, format!("must lie in (0, 1), got {v}")))
            }
        };
        match self {
            SizeFamily::Geometric { p } => unit("p", *p),
            SizeFamily::NegativeBinomial { r, p } => {
                if !(*r > 0.0 && r.is_finite()) {
                    return Err(Error::param("r", format!("must be positive, got {r}")));
                }
                unit("p", *p)
            }
            SizeFamily::Explicit { probs } => {
                if probs.len() != cap - 1 {
                    return Err(Error::param(
                        "probs",
                        format!("need {} entries for sizes 2..={cap}, got {}", cap - 1, probs.len()),
                    ));
                }
                if probs.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
                    return Err(Error::param("probs", "entries must be non-negative"));
                }
                let total: f64 = probs.iter().sum();
                if total >= 1.0 {
                    return Err(Error::param(
                        "probs",
                        format!("sizes >= 2 carry mass {total}; singletons need some"),
                    ));
                }
                Ok(())
            }
        }
    }

    fn weight(&self, size: usize) -> f64 {
        let s = size as f64;
        match self {
            SizeFamily::Geometric { p } => p * (1.0 - p).powf(s - 1.0),
            SizeFamily::NegativeBinomial { r, p } => {
                (ln_gamma(s + r) - ln_gamma(*r) - ln_gamma(s + 1.0)
                    + r * p.ln()
                    + s * (1.0 - p).ln())
                .exp()
            }
            SizeFamily::Explicit { probs } => {
                if size == 1 {
                    1.0 - probs.iter().sum::<f64>()
                } else {
                    probs[size - 2]
                }
            }
        }
    }
}

/// What [`calibrate_recursive`] needs: a size law, the Beta coefficient of
/// variation `gamma` shared by every size, and `M*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSpec {
    pub family: SizeFamily,
    pub cv: f64,
    pub cap: usize,
}

/// Normalized target probabilities `f(1), ..., f(cap)`.
pub fn target_size_distribution(family: &SizeFamily, cap: usize) -> Result<Vec<f64>> {
    if cap < 2 {
        return Err(Error::param("cap", format!("must be at least 2, got {cap}")));
    }
    family.validate(cap)?;
    let raw: Vec<f64> = (1..=cap).map(|s| family.weight(s)).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// `(a, b)` of a Beta with mean `pi` for duplication probability `pi` and
/// coefficient of variation `gamma`.
pub fn calibrate_m2(pi: f64, gamma: f64) -> Result<(f64, f64)> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::param("pi", format!("must lie in (0, 1), got {pi}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::param("gamma", format!("must be positive, got {gamma}")));
    }
    let g2 = gamma * gamma;
    let a = (1.0 - pi * (1.0 - g2)) / g2;
    if a <= 0.0 {
        return Err(Error::Infeasible(format!(
            "gamma = {gamma} is too large for mean {pi} (a = {a})"
        )));
    }
    Ok((a, a * (1.0 - pi) / pi))
}

/// Sets `(a_t, b_t)` size by size from `M*` down to 2.
///
/// With `f` the truncated size law and `n` records, the expected number of
/// records in clusters of size at most `t` is proportional to
/// `sum_{s<=t} s f(s)`, so the plug-in `Q_t` is that mass over `t` and the
/// matching success fraction is
///
/// ```text
/// theta_t = t f(t) / sum_{s<=t} s f(s)
/// ```
///
/// which does not depend on `n`. Each `theta_t` is then fed to
/// [`calibrate_m2`].
pub fn calibrate_recursive(spec: &CalibrationSpec, n: usize) -> Result<BbapParams> {
    let cap = spec.cap;
    if n < cap {
        return Err(Error::param("n", format!("must be at least cap = {cap}, got {n}")));
    }
    let f = target_size_distribution(&spec.family, cap)?;
    let mut below = 0.0;
    let mut mass = Vec::with_capacity(cap);
    for (i, &p) in f.iter().enumerate() {
        below += (i + 1) as f64 * p;
        mass.push(below);
    }
    let mut a = vec![0.0; cap - 1];
    let mut b = vec![0.0; cap - 1];
    for t in (2..=cap).rev() {
        let theta = t as f64 * f[t - 1] / mass[t - 1];
        let (at, bt) = calibrate_m2(theta, spec.cv).map_err(|e| match e {
            Error::InvalidParameter { reason, .. } => {
                Error::Infeasible(format!("size {t}: target fraction {theta}: {reason}"))
            }
            other => other,
        })?;
        a[t - 2] = at;
        b[t - 2] = bt;
    }
    BbapParams::new(cap, a, b)
}

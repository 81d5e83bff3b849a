//! Small numeric helpers shared across modules.

use rand::Rng;
pub(crate) use statrs::function::gamma::ln_gamma;

pub(crate) fn ln_factorial(k: usize) -> f64 {
    statrs::function::factorial::ln_factorial(k as u64)
}

/// `ln C(n, k)`.
pub(crate) fn ln_choose(n: usize, k: usize) -> f64 {
    debug_assert!(k <= n);
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Log pmf of BetaBinomial(k | trials, a, b).
pub(crate) fn ln_beta_binomial(k: usize, trials: usize, a: f64, b: f64) -> f64 {
    if k > trials {
        return f64::NEG_INFINITY;
    }
    let (kf, nf) = (k as f64, trials as f64);
    ln_choose(trials, k) + ln_gamma(kf + a) + ln_gamma(nf - kf + b) - ln_gamma(nf + a + b)
        + ln_gamma(a + b)
        - ln_gamma(a)
        - ln_gamma(b)
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Draws an index with probability proportional to `exp(log_weights[i])`.
///
/// Panics if every weight is zero.
pub(crate) fn sample_log_weights<R: Rng + ?Sized>(rng: &mut R, log_weights: &[f64]) -> usize {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(max > f64::NEG_INFINITY, "all candidate weights are zero");
    let total: f64 = log_weights.iter().map(|w| (w - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in log_weights.iter().enumerate() {
        let p = (w - max).exp();
        if p == 0.0 {
            continue;
        }
        last = i;
        if u < p {
            return i;
        }
        u -= p;
    }
    last
}

/// Entropy-style term `x ln x` with `0 ln 0 = 0`.
pub(crate) fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn beta_binomial_uniform_case() {
        // BetaBin(. | 2, 1, 1) is uniform on {0, 1, 2}.
        for k in 0..=2 {
            assert!((ln_beta_binomial(k, 2, 1.0, 1.0) - (1.0f64 / 3.0).ln()).abs() < 1e-12);
        }
        assert_eq!(ln_beta_binomial(3, 2, 1.0, 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn beta_binomial_normalizes() {
        let total: f64 = (0..=17)
            .map(|k| ln_beta_binomial(k, 17, 0.7, 3.2).exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_skips_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let i = sample_log_weights(&mut rng, &[f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY]);
            assert_eq!(i, 1);
        }
    }
}

//! The chain's empirical partition distribution against the posterior
//! obtained by enumerating every admissible partition.

use std::collections::HashMap;

use bbap_core::likelihood::{empirical_freqs, Dataset, LikelihoodConfig};
use bbap_core::mcmc::{Chain, Posterior, SamplerConfig, SimilarityWeights};
use bbap_core::partitions::enumerate_partitions;
use bbap_core::priors::{BbapParams, EppParams, Prior};
use bbap_core::LinkageStructure;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_data() -> Dataset {
    Dataset::from_rows(vec![vec![0, 0], vec![0, 0], vec![0, 1], vec![1, 1], vec![1, 1]]).unwrap()
}

/// `p(xi | X)` with entities summed out field by field:
/// `prod_k prod_l sum_d theta_d prod_{i in k} [(1 - psi) 1(x_il = d) + psi theta_{x_il}]`.
fn exact_posterior(
    data: &Dataset,
    prior: &Prior,
    psi: f64,
    cap: usize,
) -> HashMap<LinkageStructure, f64> {
    let theta = empirical_freqs(data, 0.01).unwrap();
    let mut logs = Vec::new();
    for xi in enumerate_partitions(data.n(), cap).unwrap() {
        let mut v = prior.ln_density_linkage(&xi);
        for members in xi.clusters() {
            for (l, th) in theta.iter().enumerate() {
                let total: f64 = (0..th.len())
                    .map(|d| {
                        th[d]
                            * members
                                .iter()
                                .map(|&i| {
                                    let x = data.value(i, l);
                                    let hit = if x == d { 1.0 - psi } else { 0.0 };
                                    hit + psi * th[x]
                                })
                                .product::<f64>()
                    })
                    .sum();
                v += total.ln();
            }
        }
        logs.push((xi, v));
    }
    let max = logs.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let norm: f64 = logs.iter().map(|p| (p.1 - max).exp()).sum();
    logs.into_iter()
        .map(|(xi, v)| (xi, (v - max).exp() / norm))
        .collect()
}

fn empirical(
    data: &Dataset,
    prior: &Prior,
    psi: f64,
    config: &SamplerConfig,
    iterations: usize,
    seed: u64,
) -> HashMap<LinkageStructure, f64> {
    let lik = LikelihoodConfig {
        fixed_psi: Some(psi),
        ..Default::default()
    };
    let post = Posterior::new(data, prior.clone(), &lik).unwrap();
    let pairs = SimilarityWeights::new(data, config.chaperone_floor).unwrap();
    let mut chain = Chain::new(
        &post,
        Some(&pairs),
        config,
        ChaCha8Rng::seed_from_u64(seed),
        None,
    )
    .unwrap();
    let mut counts: HashMap<LinkageStructure, usize> = HashMap::new();
    for it in 1..=iterations {
        chain.iterate();
        if it % 10_000 == 0 {
            chain.check_bookkeeping().unwrap();
        }
        chain.check_cap().unwrap();
        *counts.entry(chain.linkage()).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(xi, c)| (xi, c as f64 / iterations as f64))
        .collect()
}

fn total_variation(a: &HashMap<LinkageStructure, f64>, b: &HashMap<LinkageStructure, f64>) -> f64 {
    let mut keys: Vec<&LinkageStructure> = a.keys().chain(b.keys()).collect();
    keys.sort_by(|x, y| x.labels().cmp(y.labels()));
    keys.dedup();
    0.5 * keys
        .iter()
        .map(|k| (a.get(*k).unwrap_or(&0.0) - b.get(*k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

fn bbap3() -> Prior {
    Prior::Bbap(BbapParams::new(3, vec![1.0, 0.8], vec![1.0, 2.0]).unwrap())
}

#[test]
fn full_gibbs_matches_enumerated_posterior() {
    let data = small_data();
    let exact = exact_posterior(&data, &bbap3(), 0.05, 3);
    let config = SamplerConfig {
        move_mix: 0.0,
        ..Default::default()
    };
    let emp = empirical(&data, &bbap3(), 0.05, &config, 200_000, 1);
    let tv = total_variation(&exact, &emp);
    assert!(tv < 0.05, "tv = {tv}");
}

#[test]
fn chaperone_mix_matches_enumerated_posterior() {
    let data = small_data();
    let exact = exact_posterior(&data, &bbap3(), 0.05, 3);
    let config = SamplerConfig {
        move_mix: 0.9,
        ..Default::default()
    };
    let emp = empirical(&data, &bbap3(), 0.05, &config, 200_000, 2);
    let tv = total_variation(&exact, &emp);
    assert!(tv < 0.05, "tv = {tv}");
}

#[test]
fn chaperones_alone_preserve_the_posterior() {
    // Only chaperone moves: the restricted kernel must leave the posterior
    // invariant on its own (it is not irreducible in one step, but the
    // data-driven pairs reach every configuration here).
    let data = small_data();
    let exact = exact_posterior(&data, &bbap3(), 0.2, 3);
    let config = SamplerConfig {
        move_mix: 1.0,
        ..Default::default()
    };
    let emp = empirical(&data, &bbap3(), 0.2, &config, 100_000, 3);
    let tv = total_variation(&exact, &emp);
    assert!(tv < 0.05, "tv = {tv}");
}

#[test]
fn epp_chain_matches_enumerated_posterior() {
    let data = Dataset::from_rows(vec![vec![0, 1], vec![0, 1], vec![1, 1], vec![1, 0]]).unwrap();
    let prior = Prior::Epp(EppParams::new(1.5).unwrap());
    let exact = exact_posterior(&data, &prior, 0.1, 4);
    let config = SamplerConfig {
        move_mix: 0.5,
        ..Default::default()
    };
    let emp = empirical(&data, &prior, 0.1, &config, 100_000, 4);
    let tv = total_variation(&exact, &emp);
    assert!(tv < 0.05, "tv = {tv}");
}

#[test]
fn exact_duplicates_cluster_together_without_distortion() {
    // records 0 and 1 agree everywhere; the rest share nothing
    let rows: Vec<Vec<usize>> = [0, 0, 1, 2, 3, 4]
        .iter()
        .map(|&v| (0..6).map(|l| (v + l) % 6).collect())
        .collect();
    let data = Dataset::from_rows(rows).unwrap();
    let prior = Prior::Bbap(BbapParams::uniform(3, 1.0, 1.0).unwrap());
    let exact = exact_posterior(&data, &prior, 1e-6, 3);
    let together: f64 = exact
        .iter()
        .filter(|(xi, _)| xi.same_cluster(0, 1))
        .map(|(_, p)| p)
        .sum();
    assert!(together > 0.95, "{together}");
    let config = SamplerConfig::default();
    let emp = empirical(&data, &prior, 1e-6, &config, 20_000, 5);
    let sampled: f64 = emp
        .iter()
        .filter(|(xi, _)| xi.same_cluster(0, 1))
        .map(|(_, p)| p)
        .sum();
    assert!((sampled - together).abs() < 0.02, "{sampled} vs {together}");
}

//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::HashMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::thread;
use std::time::Instant;

use bbap_core::estimation::{greedy_epl, pairwise_loss, GreedyConfig, LossKind, PosteriorSamples};
use bbap_core::evaluation::{fnr_fdr, js_distance, js_distance_probs, pair_counts};
use bbap_core::likelihood::{empirical_freqs, Dataset, LikelihoodConfig};
use bbap_core::mcmc::{Chain, Posterior, SamplerConfig, SimilarityWeights};
use bbap_core::partitions::enumerate_partitions;
use bbap_core::priors::{
    calibrate_m2, calibrate_recursive, reallocation_weights, sample_bbap, singleton_moments_m2,
    BbapParams, CalibrationSpec, EppParams, Prior, SizeFamily,
};
use bbap_core::{AllelicPartition, LinkageStructure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::beta::ln_beta;
use statrs::function::factorial::ln_binomial;
use tempfile::TempDir;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 1

fn normalization() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for cap in 2..=4usize {
        for n in cap..=8usize {
            let a: Vec<f64> = (1..cap).map(|_| rng.random_range(0.3..4.0)).collect();
            let b: Vec<f64> = (1..cap).map(|_| rng.random_range(0.3..4.0)).collect();
            let prior = Prior::Bbap(BbapParams::new(cap, a, b).map_err(|e| e.to_string())?);
            let total: f64 = enumerate_partitions(n, cap)
                .map_err(|e| e.to_string())?
                .map(|xi| prior.ln_density_linkage(&xi).exp())
                .sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    for theta in [0.3, 1.0, 4.5] {
        let prior = Prior::Epp(EppParams::new(theta).map_err(|e| e.to_string())?);
        for n in 1..=8usize {
            let total: f64 = enumerate_partitions(n, n)
                .map_err(|e| e.to_string())?
                .map(|xi| prior.ln_density_linkage(&xi).exp())
                .sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    check(worst <= 1e-10, format!("max |sum - 1| = {worst:.2e}"))
}

// 2

fn bounded_microclustering() -> Outcome {
    let spec = CalibrationSpec {
        family: SizeFamily::Geometric { p: 0.5 },
        cv: 0.25,
        cap: 5,
    };
    let params = calibrate_recursive(&spec, 500).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut over = 0usize;
    let mut largest = 0usize;
    for _ in 0..10_000 {
        let xi = sample_bbap(&params, 500, &mut rng);
        over += xi.cluster_sizes().iter().filter(|&&s| s > 5).count();
        largest = largest.max(xi.max_cluster_size());
    }
    check(over == 0, format!("{over} clusters above 5 in 10000 draws, largest {largest}"))
}

// 3

fn singleton_moments() -> Outcome {
    let n = 100;
    let half = n / 2;
    let (a, b) = calibrate_m2(0.3, 0.5).map_err(|e| e.to_string())?;

    // r1 = n - 2 r2 with r2 beta-binomial over the n / 2 possible pairs
    let pmf: Vec<f64> = (0..=half)
        .map(|k| {
            (ln_binomial(half as u64, k as u64) + ln_beta(a + k as f64, b + (half - k) as f64)
                - ln_beta(a, b))
            .exp()
        })
        .collect();
    let moment = |f: &dyn Fn(f64) -> f64| -> f64 {
        pmf.iter().enumerate().map(|(k, p)| p * f((n - 2 * k) as f64)).sum()
    };
    let mean = moment(&|r| r);
    let var = moment(&|r| (r - mean).powi(2));
    let mu4 = moment(&|r| (r - mean).powi(4));
    let (closed_mean, closed_var) = singleton_moments_m2(n, a, b);
    if (mean - 70.0).abs() > 1e-9 || (closed_mean - mean).abs() > 1e-9 {
        return Err(format!("exact mean {mean}, closed form {closed_mean}"));
    }
    if (closed_var - var).abs() > 1e-9 * var {
        return Err(format!("exact variance {var}, closed form {closed_var}"));
    }

    let params = BbapParams::new(2, vec![a], vec![b]).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 50_000;
    let singles: Vec<f64> = (0..draws)
        .map(|_| {
            sample_bbap(&params, n, &mut rng)
                .cluster_sizes()
                .iter()
                .filter(|&&s| s == 1)
                .count() as f64
        })
        .collect();
    let m = draws as f64;
    let mc_mean = singles.iter().sum::<f64>() / m;
    let mc_var = singles.iter().map(|r| (r - mc_mean).powi(2)).sum::<f64>() / (m - 1.0);
    let se_mean = (var / m).sqrt();
    let se_var = ((mu4 - var * var) / m).sqrt();
    let z_mean = (mc_mean - 70.0) / se_mean;
    let z_var = (mc_var - var) / se_var;
    check(
        z_mean.abs() <= 3.0 && z_var.abs() <= 3.0,
        format!(
            "E[r1] {mc_mean:.3} vs 70 (z {z_mean:.2}), Var {mc_var:.2} vs {var:.2} (z {z_var:.2})"
        ),
    )
}

// 4

fn reallocation_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for cap in 2..=3usize {
        for n in cap..=6usize {
            let a: Vec<f64> = (1..cap).map(|_| rng.random_range(0.3..4.0)).collect();
            let b: Vec<f64> = (1..cap).map(|_| rng.random_range(0.3..4.0)).collect();
            let params = BbapParams::new(cap, a, b).map_err(|e| e.to_string())?;
            let prior = Prior::Bbap(params.clone());
            for xi in enumerate_partitions(n, cap).map_err(|e| e.to_string())? {
                for record in 0..n {
                    let w = reallocation_weights(&xi, record, &params);
                    let fresh = xi.labels().iter().max().unwrap() + 1;
                    let mut options: Vec<(usize, f64)> = w.existing.clone();
                    options.push((fresh, w.new_cluster));
                    let joint: Vec<f64> = options
                        .iter()
                        .map(|&(label, _)| {
                            let mut labels = xi.labels().to_vec();
                            labels[record] = label;
                            let moved = LinkageStructure::canonicalize(&labels).unwrap();
                            prior.ln_density_linkage(&moved)
                        })
                        .collect();
                    let (base, _) = options
                        .iter()
                        .enumerate()
                        .find(|(_, o)| o.1.is_finite())
                        .ok_or("no admissible move")?;
                    for (k, &(_, lw)) in options.iter().enumerate() {
                        if lw.is_finite() != joint[k].is_finite() {
                            return Err(format!("support mismatch at n={n} cap={cap} {xi:?}"));
                        }
                        if !lw.is_finite() {
                            continue;
                        }
                        let ratio = lw - options[base].1;
                        let target = joint[k] - joint[base];
                        worst = worst.max(((ratio - target).exp() - 1.0).abs());
                        checked += 1;
                    }
                }
            }
        }
    }
    check(worst <= 1e-10, format!("{checked} ratios, max relative error {worst:.2e}"))
}

// 5

fn exact_posterior(data: &Dataset, prior: &Prior, psi: f64, cap: usize) -> HashMap<LinkageStructure, f64> {
    let theta = empirical_freqs(data, 0.01).unwrap();
    let mut logs = Vec::new();
    for xi in enumerate_partitions(data.n(), cap).unwrap() {
        let mut v = prior.ln_density_linkage(&xi);
        for members in xi.clusters() {
            for (l, th) in theta.iter().enumerate() {
                let total: f64 = (0..th.len())
                    .map(|d| {
                        th[d] * members
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
    logs.into_iter().map(|(xi, v)| (xi, (v - max).exp() / norm)).collect()
}

fn sampled_tv(move_mix: f64, seed: u64) -> Result<f64, String> {
    let data = Dataset::from_rows(vec![vec![0, 0], vec![0, 0], vec![0, 1], vec![1, 1], vec![1, 1]])
        .map_err(|e| e.to_string())?;
    let prior = Prior::Bbap(
        BbapParams::new(3, vec![1.0, 0.8], vec![1.0, 2.0]).map_err(|e| e.to_string())?,
    );
    let psi = 0.05;
    let exact = exact_posterior(&data, &prior, psi, 3);
    let config = SamplerConfig {
        move_mix,
        ..Default::default()
    };
    let lik = LikelihoodConfig {
        fixed_psi: Some(psi),
        ..Default::default()
    };
    let post = Posterior::new(&data, prior, &lik).map_err(|e| e.to_string())?;
    let pairs = SimilarityWeights::new(&data, config.chaperone_floor).map_err(|e| e.to_string())?;
    let mut chain = Chain::new(&post, Some(&pairs), &config, ChaCha8Rng::seed_from_u64(seed), None)
        .map_err(|e| e.to_string())?;
    let iterations = 200_000;
    let mut counts: HashMap<LinkageStructure, usize> = HashMap::new();
    for _ in 0..iterations {
        chain.iterate();
        *counts.entry(chain.linkage()).or_default() += 1;
    }
    chain.check_bookkeeping().map_err(|e| e.to_string())?;
    let mut tv = 0.0;
    for (xi, p) in &exact {
        let q = counts.get(xi).copied().unwrap_or(0) as f64 / iterations as f64;
        tv += (p - q).abs();
    }
    // mass on states outside the exact support
    tv += counts
        .iter()
        .filter(|(xi, _)| !exact.contains_key(*xi))
        .map(|(_, &c)| c as f64 / iterations as f64)
        .sum::<f64>();
    Ok(0.5 * tv)
}

fn sampler_exactness() -> Outcome {
    let gibbs = sampled_tv(0.0, 1)?;
    let mixed = sampled_tv(0.9, 2)?;
    check(
        gibbs < 0.05 && mixed < 0.05,
        format!("TV full Gibbs {gibbs:.4}, chaperone mix {mixed:.4}"),
    )
}

// 6 and 7

fn bbap(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_bbap"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("bbap {args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn pipeline(dir: &Path, name: &str, config: &str) -> Result<PathBuf, String> {
    let path = dir.join(format!("{name}.toml"));
    fs::write(&path, config).map_err(|e| e.to_string())?;
    let out = dir.join(name);
    bbap(&[
        "pipeline",
        "-c",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])?;
    Ok(out)
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

const SCENARIO_2: &str = r#"
seed = 1

[scenario]
id = 2
K = 200
psi = 0.01

[prior]
family = "bbap"
cap_factor = 1.5
gamma = 0.25
calibration = { kind = "geometric", p = 0.5 }

[sampler]
iterations = 20000
burn_in = 10000
chains = 2
"#;

fn scenario_two(out: &Path) -> Outcome {
    let metrics = read_json(&out.join("metrics.json"))?;
    let post = &metrics["posterior"];
    let fnr = post["fnr"].as_f64().ok_or("missing fnr")? * 100.0;
    let fdr = post["fdr"].as_f64().ok_or("missing fdr")? * 100.0;
    let js = post["js"].as_f64().ok_or("missing js")?;
    check(
        (fnr - 3.3).abs() <= 3.0 && (fdr - 3.7).abs() <= 3.0 && js <= 0.08,
        format!("FNR {fnr:.2}%, FDR {fdr:.2}%, JS {js:.4}"),
    )
}

fn estimate_clusters(out: &Path, loss: &str) -> Result<u64, String> {
    read_json(&out.join(format!("estimate_{loss}.json")))?["K"]
        .as_u64()
        .ok_or_else(|| format!("estimate_{loss}.json has no K"))
}

fn restricted_growth(n: usize) -> Vec<Vec<usize>> {
    let mut all = vec![vec![0]];
    for _ in 1..n {
        all = all
            .into_iter()
            .flat_map(|p| {
                let next = p.iter().max().unwrap() + 1;
                (0..=next).map(move |l| {
                    let mut q = p.clone();
                    q.push(l);
                    q
                })
            })
            .collect();
    }
    all
}

fn binder_epl(labels: &[usize], samples: &[Vec<usize>]) -> f64 {
    let n = labels.len();
    let mut total = 0usize;
    for s in samples {
        for i in 0..n {
            for j in i + 1..n {
                total += usize::from((labels[i] == labels[j]) != (s[i] == s[j]));
            }
        }
    }
    total as f64 / samples.len() as f64
}

fn brute_force_agreement() -> Result<(usize, usize), String> {
    let n = 8;
    let candidates = restricted_growth(n);
    let mut hits = 0;
    let trials = 50;
    for trial in 0..trials as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + trial);
        let k = rng.random_range(2..=5);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let raw: Vec<Vec<usize>> = (0..40)
            .map(|_| {
                truth
                    .iter()
                    .map(|&l| if rng.random_bool(0.25) { rng.random_range(0..=k) } else { l })
                    .collect()
            })
            .collect();
        let best = candidates
            .iter()
            .map(|c| binder_epl(c, &raw))
            .fold(f64::INFINITY, f64::min);
        let samples = PosteriorSamples::new(
            raw.iter()
                .map(|s| LinkageStructure::canonicalize(s).unwrap())
                .collect(),
        )
        .map_err(|e| e.to_string())?;
        let config = GreedyConfig {
            seed: trial,
            ..Default::default()
        };
        let est = greedy_epl(&samples, LossKind::Binder, &config).map_err(|e| e.to_string())?;
        if (binder_epl(est.labels(), &raw) - best).abs() <= 1e-9 {
            hits += 1;
        }
    }
    Ok((hits, trials))
}

fn estimate_ordering(out: &Path) -> Outcome {
    let vi = estimate_clusters(out, "vi")?;
    let binder = estimate_clusters(out, "binder")?;
    let (hits, trials) = brute_force_agreement()?;
    check(
        vi < binder && hits * 10 >= trials * 9,
        format!("K VI {vi} vs Binder {binder}; Binder greedy optimal in {hits}/{trials} trials"),
    )
}

// 8

fn random_linkage(rng: &mut ChaCha8Rng, n: usize) -> LinkageStructure {
    let k = rng.random_range(1..=n);
    let raw: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    LinkageStructure::canonicalize(&raw).unwrap()
}

fn random_allelic(rng: &mut ChaCha8Rng) -> AllelicPartition {
    let cap = rng.random_range(1..=6);
    let counts: Vec<usize> = (0..cap).map(|_| rng.random_range(0..6)).collect();
    let mut counts = counts;
    counts[0] += 1;
    AllelicPartition::new(counts).unwrap()
}

fn js_oracle(p: &[f64], q: &[f64]) -> f64 {
    let kl = |x: &[f64], m: &[f64]| -> f64 {
        x.iter()
            .zip(m)
            .filter(|(a, _)| **a > 0.0)
            .map(|(a, b)| a * (a / b).ln())
            .sum()
    };
    let len = p.len().max(q.len());
    let pad = |v: &[f64]| {
        let mut v = v.to_vec();
        v.resize(len, 0.0);
        v
    };
    let (p, q) = (pad(p), pad(q));
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    ((0.5 * kl(&p, &m) + 0.5 * kl(&q, &m)) / std::f64::consts::LN_2).max(0.0).sqrt()
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let n = rng.random_range(2..40);
        let truth = random_linkage(&mut rng, n);
        let (fnr, fdr) = fnr_fdr(&truth, &truth).map_err(|e| e.to_string())?;
        let js = js_distance(&truth.allelic(), &truth.allelic());
        if fnr != 0.0 || fdr != 0.0 || js != 0.0 {
            return Err(format!("self-comparison gave FNR {fnr}, FDR {fdr}, JS {js}"));
        }
        let other = random_linkage(&mut rng, n);
        let counts = pair_counts(&other, &truth).map_err(|e| e.to_string())?;
        let binder = pairwise_loss(&other, &truth, LossKind::Binder).map_err(|e| e.to_string())?;
        let pairs = (n * (n - 1) / 2) as f64;
        let expected = (counts.false_neg + counts.false_pos) as f64 / pairs;
        if (binder - expected).abs() > 1e-12 {
            return Err(format!("Binder {binder} vs (FN + FP) / C(n, 2) = {expected}"));
        }
    }
    let mut worst_gap = f64::INFINITY;
    for _ in 0..1000 {
        let [a, b, c] = [0, 1, 2].map(|_| random_allelic(&mut rng));
        let ab = js_distance(&a, &b);
        let ba = js_distance(&b, &a);
        let bc = js_distance(&b, &c);
        let ac = js_distance(&a, &c);
        if ab != ba {
            return Err(format!("asymmetric: {ab} vs {ba}"));
        }
        if !(0.0..=1.0).contains(&ab) {
            return Err(format!("out of range: {ab}"));
        }
        worst_gap = worst_gap.min(ab + bc - ac);
        if ac > ab + bc + 1e-12 {
            return Err(format!("triangle inequality fails: {ac} > {ab} + {bc}"));
        }
        let p: Vec<f64> = (0..rng.random_range(1..8)).map(|_| rng.random::<f64>()).collect();
        let q: Vec<f64> = (0..rng.random_range(1..8)).map(|_| rng.random::<f64>()).collect();
        let norm = |v: Vec<f64>| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let (p, q) = (norm(p), norm(q));
        let got = js_distance_probs(&p, &q);
        let want = js_oracle(&p, &q);
        if (got - want).abs() > 1e-9 {
            return Err(format!("JS {got} vs reference {want}"));
        }
    }
    Ok(format!(
        "self-distances zero, Binder = (FN + FP) / C(n, 2), JS a metric on 1000 triples (min slack {worst_gap:.2e})"
    ))
}

// 9

const SMALL: &str = r#"
seed = 5

[scenario]
id = 3
K = 40
psi = 0.02

[prior]
cap_factor = 1.5

[sampler]
iterations = 400
burn_in = 200
snapshot_stride = 2

[estimation]
samples = 100
"#;

fn determinism(dir: &Path) -> Outcome {
    let first = pipeline(dir, "first", SMALL)?;
    let second = pipeline(dir, "second", SMALL)?;
    let mut names = vec!["trace.jsonl".to_string(), "xi_snapshots.csv".to_string()];
    for kind in LossKind::ALL {
        names.push(format!("estimate_{}.csv", kind.name()));
        names.push(format!("estimate_{}.json", kind.name()));
    }
    for name in &names {
        let a = fs::read(first.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let b = fs::read(second.join(name)).map_err(|e| format!("{name}: {e}"))?;
        if a != b {
            return Err(format!("{name} differs between runs"));
        }
    }
    Ok(format!("{} files bit-identical across two runs", names.len()))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn report(id: usize, title: &str, outcome: &Outcome, secs: f64) -> bool {
    let (tag, detail) = match outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {id} {tag} [{title}] {detail} ({secs:.1}s)");
    outcome.is_ok()
}

fn main() {
    let tmp = TempDir::new().expect("temp dir");
    let root = tmp.path().to_path_buf();

    // the long scenario run goes first, in the background
    let scenario_root = root.clone();
    let scenario = thread::spawn(move || {
        let start = Instant::now();
        let run = guarded(|| pipeline(&scenario_root, "scenario2", SCENARIO_2).map(|p| p.display().to_string()));
        (run, start.elapsed().as_secs_f64())
    });

    let mut all_ok = true;
    let quick: [(usize, &str, Box<dyn FnOnce() -> Outcome>); 6] = [
        (1, "prior normalization", Box::new(normalization)),
        (2, "bounded microclustering", Box::new(bounded_microclustering)),
        (3, "singleton moments", Box::new(singleton_moments)),
        (4, "reallocation consistency", Box::new(reallocation_consistency)),
        (5, "sampler exactness", Box::new(sampler_exactness)),
        (8, "metric identities", Box::new(metric_identities)),
    ];
    let mut lines = Vec::new();
    for (id, title, f) in quick {
        let start = Instant::now();
        let outcome = guarded(f);
        lines.push((id, title, outcome, start.elapsed().as_secs_f64()));
    }
    let start = Instant::now();
    let det = guarded(|| determinism(&root));
    lines.push((9, "determinism", det, start.elapsed().as_secs_f64()));

    let (run, run_secs) = scenario.join().expect("scenario thread");
    let start = Instant::now();
    let (six, seven) = match run {
        Ok(out) => {
            let out = PathBuf::from(out);
            (guarded(|| scenario_two(&out)), guarded(|| estimate_ordering(&out)))
        }
        Err(e) => (Err(e.clone()), Err(format!("no scenario run: {e}"))),
    };
    lines.push((6, "scenario 2 reproduction", six, run_secs));
    lines.push((7, "point-estimate ordering", seven, start.elapsed().as_secs_f64()));

    lines.sort_by_key(|l| l.0);
    for (id, title, outcome, secs) in &lines {
        all_ok &= report(*id, title, outcome, *secs);
    }
    if !all_ok {
        std::process::exit(1);
    }
}

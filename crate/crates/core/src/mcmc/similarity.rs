//! Data-driven chaperone pair selection.
//!
//! Pair `(i, j)` is drawn with probability proportional to
//! `lambda + #{l : x_il = x_jl}`. The distribution depends only on the data,
//! never on the current linkage. Sampling is done without materializing the
//! `n^2` weights: draw `i` from its row sum, then `j | i` either uniformly
//! (the `lambda` part) or among records sharing a field value with `i`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::likelihood::Dataset;

#[derive(Debug, Clone)]
pub struct SimilarityWeights {
    floor: f64,
    n: usize,
    /// `by_value[l][v]`: records with value `v` in field `l`.
    by_value: Vec<Vec<Vec<usize>>>,
    records: Vec<Vec<usize>>,
    row: WeightedIndex<f64>,
    row_sums: Vec<f64>,
}

impl SimilarityWeights {
    pub fn new(data: &Dataset, floor: f64) -> Result<Self> {
        let n = data.n();
        if n < 2 {
            return Err(Error::param("n", "pair selection needs at least two records"));
        }
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(Error::param(
                "chaperone_floor",
                format!("must be positive, got {floor}"),
            ));
        }
        let mut by_value: Vec<Vec<Vec<usize>>> = data
            .cardinalities()
            .iter()
            .map(|&d| vec![Vec::new(); d])
            .collect();
        for (i, rec) in data.records().enumerate() {
            for (l, &v) in rec.iter().enumerate() {
                by_value[l][v].push(i);
            }
        }
        let records: Vec<Vec<usize>> = data.records().map(<[usize]>::to_vec).collect();
        let row_sums: Vec<f64> = records
            .iter()
            .map(|rec| {
                let shared: usize = rec
                    .iter()
                    .enumerate()
                    .map(|(l, &v)| by_value[l][v].len() - 1)
                    .sum();
                floor * (n - 1) as f64 + shared as f64
            })
            .collect();
        let row = WeightedIndex::new(&row_sums).expect("positive row sums");
        Ok(Self {
            floor,
            n,
            by_value,
            records,
            row,
            row_sums,
        })
    }

    /// Unnormalized weight of the pair `(i, j)`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let agree = self.records[i]
            .iter()
            .zip(&self.records[j])
            .filter(|(a, b)| a == b)
            .count();
        self.floor + agree as f64
    }

    /// Sum of the weights over unordered pairs.
    pub fn total(&self) -> f64 {
        0.5 * self.row_sums.iter().sum::<f64>()
    }

    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let i = self.row.sample(rng);
        let rec = &self.records[i];
        let mut u = rng.random::<f64>() * self.row_sums[i];
        let uniform_mass = self.floor * (self.n - 1) as f64;
        if u < uniform_mass {
            let j = rng.random_range(0..self.n - 1);
            return (i, if j >= i { j + 1 } else { j });
        }
        u -= uniform_mass;
        for (l, &v) in rec.iter().enumerate() {
            let group = &self.by_value[l][v];
            let others = (group.len() - 1) as f64;
            if u < others || l + 1 == rec.len() {
                if group.len() < 2 {
                    continue;
                }
                let pick = rng.random_range(0..group.len() - 1);
                let j = if group[pick] == i {
                    group[group.len() - 1]
                } else {
                    group[pick]
                };
                return (i, j);
            }
            u -= others;
        }
        // rounding pushed u past the last non-empty group
        let j = rng.random_range(0..self.n - 1);
        (i, if j >= i { j + 1 } else { j })
    }
}

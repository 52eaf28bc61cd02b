#![allow(dead_code)]

use fragility_core::linalg::sigmoid;
use fragility_core::{FeatureMatrix, LabelVector};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Latent-factor design: feature `j` in block `b` is `load·f_b + sqrt(1 − load²)·e`,
/// the rest are independent. Labels are Bernoulli(sigmoid(x·beta)).
pub struct BlockTask {
    pub n: usize,
    pub blocks: Vec<Vec<usize>>,
    pub p: usize,
    pub loading: f64,
    pub beta: Vec<f64>,
}

impl BlockTask {
    pub fn generate(&self, seed: u64) -> (FeatureMatrix, LabelVector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let resid = (1.0 - self.loading * self.loading).sqrt();
        let mut owner = vec![None; self.p];
        for (b, block) in self.blocks.iter().enumerate() {
            for &j in block {
                owner[j] = Some(b);
            }
        }
        let mut vals = Vec::with_capacity(self.n * self.p);
        let mut y = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            let factors: Vec<f64> = self.blocks.iter().map(|_| normal(&mut rng)).collect();
            let row: Vec<f64> = (0..self.p)
                .map(|j| {
                    let e = normal(&mut rng);
                    match owner[j] {
                        Some(b) => self.loading * factors[b] + resid * e,
                        None => e,
                    }
                })
                .collect();
            let z: f64 = row.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
            y.push((rng.random::<f64>() < sigmoid(z)) as u8);
            vals.extend(row);
        }
        (
            FeatureMatrix::unnamed(DMatrix::from_row_slice(self.n, self.p, &vals)).unwrap(),
            LabelVector::new(y).unwrap(),
        )
    }
}

/// Eight features: blocks {0,1,2} and {3,4} with loading 0.97, three independent.
pub fn sharp_task(n: usize) -> BlockTask {
    BlockTask {
        n,
        blocks: vec![vec![0, 1, 2], vec![3, 4]],
        p: 8,
        loading: 0.97,
        beta: vec![1.0, 0.0, 0.0, 0.5, 0.0, -0.8, 0.3, 0.0],
    }
}

/// Thirty features in three blocks of ten with loading 0.97.
pub fn caa_task(n: usize) -> BlockTask {
    let beta = (0..30).map(|j| [0.3, -0.2, 0.1][j / 10]).collect();
    BlockTask {
        n,
        blocks: vec![(0..10).collect(), (10..20).collect(), (20..30).collect()],
        p: 30,
        loading: 0.97,
        beta,
    }
}

/// O(n²) Kendall tau-a from concordant and discordant pair counts.
pub fn tau_pairs(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let pos = |r: &[usize], item: usize| r.iter().position(|&x| x == item).unwrap();
    let (mut c, mut d) = (0i64, 0i64);
    for i in 0..n {
        for j in (i + 1)..n {
            let (x, y) = (a[i], a[j]);
            let s = (pos(b, x) as i64 - pos(b, y) as i64).signum();
            if s < 0 {
                c += 1;
            } else {
                d += 1;
            }
        }
    }
    (c - d) as f64 / (n * (n - 1) / 2) as f64
}

#![allow(dead_code)]

use blockmf::data_io::{gen_synthetic, SyntheticSpec};
use blockmf::partition::LocalTriple;
use blockmf::{RatingTriple, RatingsDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense uniform integer ratings in `1..=30`.
pub fn dense(n: usize, m: usize, seed: u64) -> RatingsDataset {
    gen_synthetic(&SyntheticSpec::dense(n, m, 1, 30, seed)).unwrap()
}

/// A random block with roughly `density` of its cells observed.
pub struct RandomBlock {
    pub rows: usize,
    pub cols: usize,
    pub k: usize,
    pub triples: Vec<LocalTriple>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

pub fn random_block(rng: &mut ChaCha8Rng, rows: usize, cols: usize, k: usize, density: f64) -> RandomBlock {
    let mut triples = Vec::new();
    for row in 0..rows {
        for col in 0..cols {
            if rng.gen::<f64>() < density {
                triples.push(LocalTriple {
                    row,
                    col,
                    value: rng.gen_range(1..=5) as f64,
                });
            }
        }
    }
    let u = (0..rows * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let v = (0..cols * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    RandomBlock {
        rows,
        cols,
        k,
        triples,
        u,
        v,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random sparse dataset with real-valued ratings.
pub fn sparse(n: usize, m: usize, density: f64, seed: u64) -> RatingsDataset {
    let mut rng = rng(seed);
    let entries = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .filter(|_| rng.gen::<f64>() < density)
        .collect::<Vec<_>>();
    let mut rng = self::rng(seed ^ 0x5eed);
    let entries = entries
        .into_iter()
        .map(|(i, j)| RatingTriple::new(i, j, rng.gen_range(-5.0..5.0)))
        .collect();
    RatingsDataset::new(n, m, entries).unwrap()
}

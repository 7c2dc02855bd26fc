#![allow(dead_code)]

use kskdv_core::space::region_mask;
use kskdv_core::{BinomialTree, Coefficient, Grid, Model, ModelParams, TreeProcess};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const REGIONS: [(&str, f64, f64); 5] =
    [("O", 0.2, 0.5), ("D", 0.6, 0.8), ("Od0", 0.3, 0.7), ("Od1", 0.55, 0.75), ("Od2", 0.6, 0.9)];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_process(rng: &mut ChaCha8Rng, last_level: usize, width: usize) -> TreeProcess {
    TreeProcess::from_fn(last_level, width, |_, _, out| out.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0)))
}

/// Model with random tabulated zero-order coefficients.
pub fn random_model(rng: &mut ChaCha8Rng, n: usize, depth: usize) -> Model {
    let grid = Grid::new(n).unwrap();
    let tree = BinomialTree::new(depth, 1.0).unwrap();
    let masks = region_mask(&grid, &REGIONS).unwrap();
    let table = |rng: &mut ChaCha8Rng| Coefficient::Tabulated((0..3).map(|_| random_vec(rng, n)).collect());
    let params = ModelParams { k: 1.5, eta: 0.2, horizon: 1.0, a: table(rng), b: table(rng) };
    Model::new(grid, tree, params, masks).unwrap()
}

pub fn model(n: usize, depth: usize, k: f64, eta: f64, a: f64, b: f64) -> Model {
    let grid = Grid::new(n).unwrap();
    let tree = BinomialTree::new(depth, 1.0).unwrap();
    let masks = region_mask(&grid, &REGIONS).unwrap();
    let params = ModelParams { k, eta, horizon: 1.0, a: Coefficient::Constant(a), b: Coefficient::Constant(b) };
    Model::new(grid, tree, params, masks).unwrap()
}

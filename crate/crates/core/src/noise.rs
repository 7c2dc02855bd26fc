//! Binomial surrogate of the Brownian filtration and adapted processes on it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Largest supported tree depth.
pub const MAX_DEPTH: usize = 20;

/// Recombination-free binomial tree with increments `±√dt`.
///
/// Node `i` of level `ℓ` has children `2i` (increment `+√dt`) and `2i + 1`
/// (increment `-√dt`).
#[derive(Debug, Clone, PartialEq)]
pub struct BinomialTree {
    depth: usize,
    horizon: f64,
    dt: f64,
    sqrt_dt: f64,
}

impl BinomialTree {
    pub fn new(depth: usize, horizon: f64) -> Result<Self> {
        if !(1..=MAX_DEPTH).contains(&depth) {
            return Err(Error::TreeDepth(depth));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParameter { name: "T", reason: format!("must be positive, got {horizon}") });
        }
        let dt = horizon / depth as f64;
        Ok(Self { depth, horizon, dt, sqrt_dt: dt.sqrt() })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }

    pub fn nodes_at(level: usize) -> usize {
        1 << level
    }

    /// Total node count `2^(N+1) - 1`.
    pub fn node_count(&self) -> usize {
        (1 << (self.depth + 1)) - 1
    }

    /// Brownian value at node `(level, i)`.
    pub fn brownian(&self, level: usize, i: usize) -> f64 {
        let downs = i.count_ones() as f64;
        self.sqrt_dt * (level as f64 - 2.0 * downs)
    }

    /// The Brownian motion as a scalar process on levels `0..=N`.
    pub fn brownian_process(&self) -> TreeProcess {
        TreeProcess::from_fn(self.depth, 1, |level, i, out| out[0] = self.brownian(level, i))
    }
}

pub fn build_tree(depth: usize, horizon: f64) -> Result<BinomialTree> {
    BinomialTree::new(depth, horizon)
}

/// One state vector of length `width` per node of levels `0..=last_level`,
/// stored level-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeProcess {
    last_level: usize,
    width: usize,
    data: Vec<f64>,
}

fn offset(level: usize) -> usize {
    (1 << level) - 1
}

impl TreeProcess {
    pub fn zeros(last_level: usize, width: usize) -> Self {
        Self { last_level, width, data: vec![0.0; offset(last_level + 1) * width] }
    }

    pub fn from_fn(last_level: usize, width: usize, mut f: impl FnMut(usize, usize, &mut [f64])) -> Self {
        let mut p = Self::zeros(last_level, width);
        for level in 0..=last_level {
            for i in 0..BinomialTree::nodes_at(level) {
                f(level, i, p.node_mut(level, i));
            }
        }
        p
    }

    /// Same value at every node.
    pub fn deterministic(last_level: usize, values: &[f64]) -> Self {
        Self::from_fn(last_level, values.len(), |_, _, out| out.copy_from_slice(values))
    }

    pub fn last_level(&self) -> usize {
        self.last_level
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn node(&self, level: usize, i: usize) -> &[f64] {
        let s = (offset(level) + i) * self.width;
        &self.data[s..s + self.width]
    }

    pub fn node_mut(&mut self, level: usize, i: usize) -> &mut [f64] {
        let s = (offset(level) + i) * self.width;
        &mut self.data[s..s + self.width]
    }

    /// All node values of one level, node-major.
    pub fn level(&self, level: usize) -> &[f64] {
        &self.data[offset(level) * self.width..offset(level + 1) * self.width]
    }

    pub fn level_mut(&mut self, level: usize) -> &mut [f64] {
        let w = self.width;
        &mut self.data[offset(level) * w..offset(level + 1) * w]
    }

    /// Levels `k` and `k + 1`, both mutable.
    pub fn level_pair_mut(&mut self, k: usize) -> (&mut [f64], &mut [f64]) {
        let w = self.width;
        let (head, tail) = self.data.split_at_mut(offset(k + 1) * w);
        (&mut head[offset(k) * w..], &mut tail[..BinomialTree::nodes_at(k + 1) * w])
    }

    fn check_child_level(&self, child_level: usize) -> Result<()> {
        if child_level == 0 || child_level > self.last_level {
            return Err(Error::LevelOutOfRange { level: child_level, last: self.last_level });
        }
        Ok(())
    }

    /// Average of the two children, for every node of level `child_level - 1`.
    pub fn conditional_expectation(&self, child_level: usize) -> Result<Vec<f64>> {
        self.check_child_level(child_level)?;
        Ok(pair_average(self.level(child_level), self.width))
    }

    /// `(up - down) / (2√dt)` for every node of level `child_level - 1`.
    pub fn martingale_coefficient(&self, tree: &BinomialTree, child_level: usize) -> Result<Vec<f64>> {
        self.check_child_level(child_level)?;
        let w = self.width;
        let scale = 0.5 / tree.sqrt_dt();
        Ok(self
            .level(child_level)
            .chunks_exact(2 * w)
            .flat_map(|pair| {
                let (up, down) = pair.split_at(w);
                up.iter().zip(down).map(move |(u, d)| (u - d) * scale)
            })
            .collect())
    }

    /// Path-probability-weighted mean of a level.
    pub fn expectation(&self, level: usize) -> Result<Vec<f64>> {
        if level > self.last_level {
            return Err(Error::LevelOutOfRange { level, last: self.last_level });
        }
        Ok(level_mean(self.level(level), self.width))
    }

    /// `𝔼⟨self, other⟩` at one level (plain Euclidean product per node).
    pub fn mean_inner(&self, other: &TreeProcess, level: usize) -> f64 {
        debug_assert_eq!(self.width, other.width);
        let w = self.width;
        let products: Vec<f64> = self
            .level(level)
            .chunks_exact(w)
            .zip(other.level(level).chunks_exact(w))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum())
            .collect();
        level_mean(&products, 1)[0]
    }

    /// New process of the same shape with `f(level, input, output)` applied to
    /// every node of levels `first_level..=last_level`; other levels are zero.
    pub fn map_nodes(&self, first_level: usize, f: impl Fn(usize, &[f64], &mut [f64]) + Sync + Send) -> TreeProcess {
        let mut out = TreeProcess::zeros(self.last_level, self.width);
        let w = self.width;
        for level in first_level..=self.last_level {
            let src = self.level(level);
            out.level_mut(level)
                .par_chunks_mut(w)
                .zip(src.par_chunks(w))
                .with_min_len(16)
                .for_each(|(o, x)| f(level, x, o));
        }
        out
    }

    /// Copy restricted to levels `0..=last_level`.
    pub fn truncated(&self, last_level: usize) -> TreeProcess {
        assert!(last_level <= self.last_level, "cannot extend a process by truncation");
        Self { last_level, width: self.width, data: self.data[..offset(last_level + 1) * self.width].to_vec() }
    }

    /// Componentwise `self - other`.
    pub fn minus(&self, other: &TreeProcess) -> TreeProcess {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn same_shape(&self, other: &TreeProcess) -> bool {
        self.last_level == other.last_level && self.width == other.width
    }

    pub fn axpy(&mut self, alpha: f64, x: &TreeProcess) {
        debug_assert!(self.same_shape(x));
        for (a, b) in self.data.iter_mut().zip(&x.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn scaled(&self, alpha: f64) -> TreeProcess {
        let mut out = self.clone();
        out.scale(alpha);
        out
    }

    /// Multiplies every node vector componentwise by `mask`.
    pub fn masked(&self, mask: &[f64]) -> TreeProcess {
        debug_assert_eq!(mask.len(), self.width);
        let mut out = self.clone();
        for chunk in out.data.chunks_exact_mut(self.width) {
            chunk.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Averages adjacent node pairs of a level.
pub(crate) fn pair_average(level: &[f64], width: usize) -> Vec<f64> {
    level
        .chunks_exact(2 * width)
        .flat_map(|pair| {
            let (up, down) = pair.split_at(width);
            up.iter().zip(down).map(|(u, d)| 0.5 * (u + d))
        })
        .collect()
}

/// Mean over the nodes of a level by repeated pairwise averaging, so the
/// result is bitwise equal to the mean of its conditional expectation.
pub(crate) fn level_mean(level: &[f64], width: usize) -> Vec<f64> {
    let mut cur = level.to_vec();
    while cur.len() > width {
        cur = pair_average(&cur, width);
    }
    cur
}

pub fn conditional_expectation(proc: &TreeProcess, child_level: usize) -> Result<Vec<f64>> {
    proc.conditional_expectation(child_level)
}

pub fn martingale_coefficient(proc: &TreeProcess, tree: &BinomialTree, child_level: usize) -> Result<Vec<f64>> {
    proc.martingale_coefficient(tree, child_level)
}

pub fn expectation(proc: &TreeProcess, level: usize) -> Result<Vec<f64>> {
    proc.expectation(level)
}

/// Reproducible sequence of `N` branch choices, `+1` for the up increment.
pub fn sample_path(tree: &BinomialTree, seed: u64) -> Vec<i8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..tree.depth()).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect()
}

/// Node index at each level `0..=N` visited by a path.
pub fn path_nodes(path: &[i8]) -> Vec<usize> {
    let mut nodes = Vec::with_capacity(path.len() + 1);
    let mut i = 0;
    nodes.push(i);
    for &step in path {
        i = 2 * i + usize::from(step < 0);
        nodes.push(i);
    }
    nodes
}

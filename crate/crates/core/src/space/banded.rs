use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Square matrix stored by diagonals, row-major.
///
/// Row `i` keeps the entries of columns `i - lower ..= i + upper`; entries that
/// fall outside the matrix are stored as zero and never read.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedOperator {
    n: usize,
    lower: usize,
    upper: usize,
    bands: Vec<f64>,
}

impl BandedOperator {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        Self { n, lower, upper, bands: vec![0.0; n * (lower + upper + 1)] }
    }

    pub fn identity(n: usize) -> Self {
        let mut op = Self::zeros(n, 0, 0);
        op.bands.fill(1.0);
        op
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.lower
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.upper
    }

    fn width(&self) -> usize {
        self.lower + self.upper + 1
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.n || j >= self.n || j + self.lower < i || j > i + self.upper {
            return None;
        }
        Some(i * self.width() + (j + self.lower - i))
    }

    /// Entry `(i, j)`, zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.bands[s])
    }

    /// Adds `value` to entry `(i, j)`.
    ///
    /// Panics if `(i, j)` lies outside the band.
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let s = self.slot(i, j).expect("entry outside band");
        self.bands[s] += value;
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        let w = self.width();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.bands[i * w..(i + 1) * w];
            let j0 = i as isize - self.lower as isize;
            let mut acc = 0.0;
            for (d, &c) in row.iter().enumerate() {
                let j = j0 + d as isize;
                if j >= 0 && (j as usize) < self.n {
                    acc += c * x[j as usize];
                }
            }
            *o = acc;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.apply_into(x, &mut out);
        out
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n, self.upper, self.lower);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.lower);
            let hi = (i + self.upper).min(self.n - 1);
            for j in lo..=hi {
                t.add(j, i, self.get(i, j));
            }
        }
        t
    }

    /// `Σ cᵢ·opᵢ`, with the bandwidth of the widest term.
    pub fn combine(terms: &[(f64, &BandedOperator)]) -> Self {
        let n = terms.first().map_or(0, |(_, op)| op.n);
        let lower = terms.iter().map(|(_, op)| op.lower).max().unwrap_or(0);
        let upper = terms.iter().map(|(_, op)| op.upper).max().unwrap_or(0);
        let mut out = Self::zeros(n, lower, upper);
        for &(c, op) in terms {
            assert_eq!(op.n, n, "operator dimensions differ");
            for i in 0..n {
                let lo = i.saturating_sub(op.lower);
                let hi = (i + op.upper).min(n - 1);
                for j in lo..=hi {
                    out.add(i, j, c * op.get(i, j));
                }
            }
        }
        out
    }

    /// `I + shift·self`.
    pub fn shifted_identity(&self, shift: f64) -> Self {
        let id = Self::identity(self.n);
        Self::combine(&[(1.0, &id), (shift, self)])
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn norm_one(&self) -> f64 {
        (0..self.n)
            .map(|j| {
                let lo = j.saturating_sub(self.upper);
                let hi = (j + self.lower).min(self.n - 1);
                (lo..=hi).map(|i| self.get(i, j).abs()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// LU factorization with partial pivoting of a banded matrix.
///
/// Row interchanges widen the upper band of `U` to `lower + upper`; the
/// multipliers of `L` stay in the rows where they were computed, so `solve`
/// replays the interchanges one column at a time.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    lower: usize,
    upper: usize,
    // row i stores columns i - lower ..= i + lower + upper
    rows: Vec<f64>,
    pivots: Vec<usize>,
    condition: f64,
}

/// Systems whose condition estimate exceeds this are rejected.
pub const CONDITION_LIMIT: f64 = 1e14;

impl BandedLu {
    pub fn factor(op: &BandedOperator) -> Result<Self> {
        let n = op.n;
        let (kl, ku) = (op.lower, op.upper);
        let w = 2 * kl + ku + 1;
        let idx = |i: usize, j: usize| i * w + (j + kl - i);
        let mut rows = vec![0.0; n * w];
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let hi = (i + ku).min(n.saturating_sub(1));
            for j in lo..=hi {
                rows[idx(i, j)] = op.get(i, j);
            }
        }
        let mut pivots = vec![0; n];
        let scale = op.norm_one();
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = rows[idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = rows[idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            pivots[k] = p;
            if best <= f64::MIN_POSITIVE * scale.max(1.0) || best == 0.0 {
                return Err(Error::IllConditioned { condition: f64::INFINITY });
            }
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    rows.swap(idx(k, j), idx(p, j));
                }
            }
            let pivot = rows[idx(k, k)];
            for i in k + 1..=last_row {
                let m = rows[idx(i, k)] / pivot;
                rows[idx(i, k)] = m;
                if m != 0.0 {
                    for j in k + 1..=last_col {
                        rows[idx(i, j)] -= m * rows[idx(k, j)];
                    }
                }
            }
        }
        let mut lu = Self { n, lower: kl, upper: ku, rows, pivots, condition: 0.0 };
        lu.condition = lu.estimate_condition(scale);
        if !lu.condition.is_finite() || lu.condition > CONDITION_LIMIT {
            return Err(Error::IllConditioned { condition: lu.condition });
        }
        Ok(lu)
    }

    fn estimate_condition(&self, norm: f64) -> f64 {
        // lower bound on ‖M⁻¹‖₁ from a few probe solves
        let n = self.n;
        let probes: [Box<dyn Fn(usize) -> f64>; 3] = [
            Box::new(|_| 1.0),
            Box::new(|i| if i % 2 == 0 { 1.0 } else { -1.0 }),
            Box::new(move |i| (1.0 + i as f64 / n as f64) * if (i / 2) % 2 == 0 { 1.0 } else { -1.0 }),
        ];
        let mut inv = 0.0f64;
        for probe in probes.iter() {
            let mut v: Vec<f64> = (0..n).map(probe).collect();
            let vn: f64 = v.iter().map(|x| x.abs()).sum();
            self.solve_in_place(&mut v);
            let xn: f64 = v.iter().map(|x| x.abs()).sum();
            inv = inv.max(xn / vn);
        }
        norm * inv
    }

    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        let (kl, ku) = (self.lower, self.upper);
        let w = 2 * kl + ku + 1;
        let idx = |i: usize, j: usize| i * w + (j + kl - i);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    b[i] -= self.rows[idx(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut acc = b[k];
            for j in k + 1..=(k + kl + ku).min(n - 1) {
                acc -= self.rows[idx(k, j)] * b[j];
            }
            b[k] = acc / self.rows[idx(k, k)];
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Solves `(I + shift·op)·x = rhs`.
pub fn solve_banded(op: &BandedOperator, shift: f64, rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != op.dim() {
        return Err(Error::ShapeMismatch(format!(
            "rhs has length {}, operator has dimension {}",
            rhs.len(),
            op.dim()
        )));
    }
    let lu = BandedLu::factor(&op.shifted_identity(shift))?;
    Ok(lu.solve(rhs))
}

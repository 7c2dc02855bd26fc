//! Uniform mesh on (0,1), clamped-boundary finite differences and region masks.

mod banded;
mod regions;

pub use banded::{solve_banded, BandedLu, BandedOperator, CONDITION_LIMIT};
pub use regions::{region_mask, Interval, RegionMask, Regions};

use crate::error::{Error, Result};

/// Smallest admissible number of interior points.
pub const MIN_INTERIOR: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    n: usize,
    h: f64,
    x: Vec<f64>,
}

impl Grid {
    pub fn new(n_interior: usize) -> Result<Self> {
        if n_interior < MIN_INTERIOR {
            return Err(Error::GridTooSmall(n_interior));
        }
        let h = 1.0 / (n_interior + 1) as f64;
        let x = (1..=n_interior).map(|j| j as f64 * h).collect();
        Ok(Self { n: n_interior, h, x })
    }

    pub fn n_interior(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn x_points(&self) -> &[f64] {
        &self.x
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.x.iter().map(|&x| f(x)).collect()
    }

    /// Grid quadrature `h·Σ uᵢvᵢ`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.h * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn norm_sq(&self, u: &[f64]) -> f64 {
        self.inner(u, u)
    }
}

pub fn build_grid(n_interior: usize) -> Result<Grid> {
    Grid::new(n_interior)
}

/// Centered stencil over offsets -2..=2, before scaling by `h^-order`.
fn stencil(order: u8) -> [f64; 5] {
    match order {
        1 => [0.0, -0.5, 0.0, 0.5, 0.0],
        2 => [0.0, 1.0, -2.0, 1.0, 0.0],
        3 => [-0.5, 1.0, 0.0, -1.0, 0.5],
        4 => [1.0, -4.0, 6.0, -4.0, 1.0],
        _ => unreachable!("derivative order is checked by the caller"),
    }
}

/// Central-difference derivative of order 1 to 4 on the interior points.
///
/// The boundary closure uses `y₀ = y_{n+1} = 0` and the even ghosts
/// `y₋₁ = y₁`, `y_{n+2} = y_n`.
pub fn build_derivative_operator(grid: &Grid, order: u8) -> Result<BandedOperator> {
    if !(1..=4).contains(&order) {
        return Err(Error::InvalidParameter {
            name: "order",
            reason: format!("derivative order must lie in 1..=4, got {order}"),
        });
    }
    let n = grid.n;
    let band = if order <= 2 { 1 } else { 2 };
    let scale = grid.h.powi(-(order as i32));
    let coeffs = stencil(order);
    let mut op = BandedOperator::zeros(n, band, band);
    // one-based interior index i, extended index e = i + s
    for i in 1..=n as isize {
        for (k, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let e = i + k as isize - 2;
            let target = match e {
                -1 => 1,
                e if e == n as isize + 2 => n as isize,
                e if e == 0 || e == n as isize + 1 => continue,
                e => e,
            };
            op.add(i as usize - 1, target as usize - 1, c * scale);
        }
    }
    Ok(op)
}

/// Space–time field, constant on each of `rows.len()` equal time cells of
/// `[0, T]`, one value per interior grid point.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    Tabulated(Vec<Vec<f64>>),
}

impl Coefficient {
    pub fn sup_norm(&self) -> f64 {
        match self {
            Self::Constant(c) => c.abs(),
            Self::Tabulated(rows) => rows.iter().flatten().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sup_norm() == 0.0
    }

    fn validate(&self, name: &'static str, n: usize) -> Result<()> {
        match self {
            Self::Constant(c) if !c.is_finite() => Err(Error::InvalidParameter {
                name,
                reason: format!("value {c} is not finite"),
            }),
            Self::Constant(_) => Ok(()),
            Self::Tabulated(rows) => {
                if rows.is_empty() {
                    return Err(Error::InvalidParameter { name, reason: "table has no rows".into() });
                }
                if let Some(r) = rows.iter().position(|r| r.len() != n) {
                    return Err(Error::InvalidParameter {
                        name,
                        reason: format!("row {r} has {} values, grid has {n}", rows[r].len()),
                    });
                }
                if rows.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter { name, reason: "table has non-finite entries".into() });
                }
                Ok(())
            }
        }
    }

    /// Values at time `t ∈ [0, T]`.
    pub fn at(&self, t: f64, horizon: f64, n: usize) -> Vec<f64> {
        match self {
            Self::Constant(c) => vec![*c; n],
            Self::Tabulated(rows) => {
                let cells = rows.len();
                let cell = ((t / horizon) * cells as f64).floor().max(0.0) as usize;
                rows[cell.min(cells - 1)].clone()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub k: f64,
    pub eta: f64,
    pub horizon: f64,
    pub a: Coefficient,
    pub b: Coefficient,
}

impl ModelParams {
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        for (name, v) in [("k", self.k), ("eta", self.eta), ("T", self.horizon)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter { name, reason: format!("must be positive, got {v}") });
            }
        }
        self.a.validate("a", grid.n)?;
        self.b.validate("b", grid.n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// `k·D2 ± D3 + η·D4`, plus sign for the forward equation.
pub fn build_drift_operator(grid: &Grid, params: &ModelParams, direction: Direction) -> Result<BandedOperator> {
    let d2 = build_derivative_operator(grid, 2)?;
    let d3 = build_derivative_operator(grid, 3)?;
    let d4 = build_derivative_operator(grid, 4)?;
    let s = match direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    Ok(BandedOperator::combine(&[(params.k, &d2), (s, &d3), (params.eta, &d4)]))
}

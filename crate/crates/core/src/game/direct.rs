//! Dense assembly of the saddle-point optimality system.
//!
//! The unknowns are the states `y` on levels `1..=N`, one scaled multiplier
//! `μ` per forward equation (same nodes as `y`) and the controls `ψ₁, ψ₂, v`
//! on levels `0..N-1`. The rows are the forward equations and the
//! stationarity of the Lagrangian of `J_r` in `y`, `ψ₁`, `ψ₂` and `v`.
//! Nothing here reuses the backward sweep; the adjoint follows from the
//! Lagrangian directly, with `z(ν) = (μ₊ + μ₋)/2` and
//! `Z(ν) = (μ₊ − μ₋)/(2√dt)` read off afterwards.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use super::{Game, Leaders, SaddleSolution};
use crate::error::{Error, Result};
use crate::noise::{BinomialTree, TreeProcess};
use crate::spde::{BackwardSolution, ForwardSolution};

/// Largest dense system the oracle will factor.
pub const DENSE_LIMIT: usize = 6000;

#[derive(Debug, Clone, Copy)]
struct Layout {
    n: usize,
    depth: usize,
    states: usize,
    controls: usize,
}

impl Layout {
    fn new(n: usize, depth: usize) -> Self {
        Self { n, depth, states: ((1 << (depth + 1)) - 2) * n, controls: ((1 << depth) - 1) * n }
    }

    fn total(&self) -> usize {
        2 * self.states + 3 * self.controls
    }

    fn state_node(&self, level: usize, i: usize) -> usize {
        debug_assert!(level >= 1);
        ((1 << level) - 2 + i) * self.n
    }

    fn control_node(&self, level: usize, i: usize) -> usize {
        ((1 << level) - 1 + i) * self.n
    }

    fn y(&self, level: usize, i: usize) -> usize {
        self.state_node(level, i)
    }

    fn mu(&self, level: usize, i: usize) -> usize {
        self.states + self.state_node(level, i)
    }

    fn psi1(&self, level: usize, i: usize) -> usize {
        2 * self.states + self.control_node(level, i)
    }

    fn psi2(&self, level: usize, i: usize) -> usize {
        2 * self.states + self.controls + self.control_node(level, i)
    }

    fn v(&self, level: usize, i: usize) -> usize {
        2 * self.states + 2 * self.controls + self.control_node(level, i)
    }
}

/// Factorized optimality system of one game; right-hand sides vary with
/// `y0` and the leaders.
pub struct SaddleSystem<'g, 'a> {
    game: &'g Game<'a>,
    layout: Layout,
    matrix: DMatrix<f64>,
    lu: LU<f64, Dyn, Dyn>,
}

impl<'g, 'a> SaddleSystem<'g, 'a> {
    pub fn assemble(game: &'g Game<'a>) -> Result<Self> {
        let model = game.model();
        let (n, depth) = (model.n(), model.depth());
        let layout = Layout::new(n, depth);
        let total = layout.total();
        if total > DENSE_LIMIT {
            return Err(Error::SizeGuard { unknowns: total, limit: DENSE_LIMIT });
        }
        let (dt, sdt) = (model.tree().dt(), model.tree().sqrt_dt());
        let p = game.params();
        let step = model.stepper().drift().shifted_identity(dt).to_dense();
        let tracking = DMatrix::from_fn(n, n, |_, _| 0.0);
        let tracking = {
            let mut m = tracking;
            for c in 0..n {
                let mut e = vec![0.0; n];
                e[c] = 1.0;
                let col = game.tracking_operator(&e);
                for r in 0..n {
                    m[(r, c)] = col[r];
                }
            }
            m
        };
        let chi_d = &model.masks().d;
        let mut k_mat = DMatrix::<f64>::zeros(total, total);

        for k in 0..depth {
            let (a, b) = (model.a_at(k), model.b_at(k));
            for i in 0..BinomialTree::nodes_at(k) {
                for (s, sign) in [(0usize, 1.0f64), (1, -1.0)] {
                    let c = 2 * i + s;
                    // forward equation for child c
                    let row = layout.y(k + 1, c);
                    for r in 0..n {
                        for col in r.saturating_sub(2)..(r + 3).min(n) {
                            k_mat[(row + r, layout.y(k + 1, c) + col)] += step[(r, col)];
                        }
                        if k >= 1 {
                            k_mat[(row + r, layout.y(k, i) + r)] -= 1.0 + dt * a[r] + sign * sdt * b[r];
                        }
                        k_mat[(row + r, layout.psi1(k, i) + r)] -= dt;
                        k_mat[(row + r, layout.v(k, i) + r)] -= dt * chi_d[r];
                        k_mat[(row + r, layout.psi2(k, i) + r)] -= sign * sdt;
                    }
                    // stationarity in y at child c
                    let row = layout.mu(k + 1, c);
                    for r in 0..n {
                        for col in 0..n {
                            let m = tracking[(r, col)];
                            if m != 0.0 {
                                k_mat[(row + r, layout.y(k + 1, c) + col)] += dt * m;
                            }
                            let at = step[(col, r)];
                            if at != 0.0 {
                                k_mat[(row + r, layout.mu(k + 1, c) + col)] -= at;
                            }
                        }
                    }
                    if k + 1 < depth {
                        let (a1, b1) = (model.a_at(k + 1), model.b_at(k + 1));
                        for (s2, sign2) in [(0usize, 1.0f64), (1, -1.0)] {
                            let d = 2 * c + s2;
                            for r in 0..n {
                                k_mat[(row + r, layout.mu(k + 2, d) + r)] += 0.5 * (1.0 + dt * a1[r] + sign2 * sdt * b1[r]);
                            }
                        }
                    }
                }
                // stationarity in the controls at node (k, i)
                let (up, down) = (layout.mu(k + 1, 2 * i), layout.mu(k + 1, 2 * i + 1));
                for r in 0..n {
                    let row = layout.psi1(k, i) + r;
                    k_mat[(row, row)] = -p.delta1;
                    k_mat[(row, up + r)] += 0.5;
                    k_mat[(row, down + r)] += 0.5;

                    let row = layout.psi2(k, i) + r;
                    k_mat[(row, row)] = -p.delta2;
                    k_mat[(row, up + r)] += 0.5 / sdt;
                    k_mat[(row, down + r)] -= 0.5 / sdt;

                    let row = layout.v(k, i) + r;
                    if chi_d[r] > 0.0 {
                        k_mat[(row, row)] = p.beta;
                        k_mat[(row, up + r)] += 0.5;
                        k_mat[(row, down + r)] += 0.5;
                    } else {
                        k_mat[(row, row)] = 1.0;
                    }
                }
            }
        }
        let lu = k_mat.clone().lu();
        if !lu.is_invertible() {
            return Err(Error::SingularAssembly);
        }
        Ok(Self { game, layout, matrix: k_mat, lu })
    }

    pub fn unknowns(&self) -> usize {
        self.layout.total()
    }

    fn rhs(&self, y0: &[f64], leaders: &Leaders) -> DVector<f64> {
        let model = self.game.model();
        let l = self.layout;
        let (n, dt, sdt) = (l.n, model.tree().dt(), model.tree().sqrt_dt());
        let chi_o = &model.masks().o;
        let targets = self.game.target_source();
        let mut rhs = DVector::zeros(l.total());
        for k in 0..l.depth {
            for i in 0..BinomialTree::nodes_at(k) {
                let (f, g) = (leaders.f.node(k, i), leaders.g.node(k, i));
                for (s, sign) in [(0usize, 1.0f64), (1, -1.0)] {
                    let c = 2 * i + s;
                    let row = l.y(k + 1, c);
                    for r in 0..n {
                        let mut v = dt * chi_o[r] * f[r] + sign * sdt * g[r];
                        if k == 0 {
                            v += (1.0 + dt * model.a_at(0)[r] + sign * sdt * model.b_at(0)[r]) * y0[r];
                        }
                        rhs[row + r] = v;
                    }
                    let row = l.mu(k + 1, c);
                    let t = targets.node(k + 1, c);
                    for r in 0..n {
                        rhs[row + r] = dt * t[r];
                    }
                }
            }
        }
        rhs
    }

    /// Relative residual `‖Kx − b‖ / (‖K‖_F‖x‖ + ‖b‖)` of the assembled system.
    fn residual(&self, x: &DVector<f64>, rhs: &DVector<f64>) -> f64 {
        let r = &self.matrix * x - rhs;
        let denom = self.matrix.norm() * x.norm() + rhs.norm();
        if denom == 0.0 {
            0.0
        } else {
            r.norm() / denom
        }
    }

    pub fn solve(&self, y0: &[f64], leaders: &Leaders) -> Result<SaddleSolution> {
        let model = self.game.model();
        model.check_control("f", &leaders.f)?;
        model.check_control("g", &leaders.g)?;
        if y0.len() != model.n() {
            return Err(Error::ShapeMismatch(format!("y0 has length {}, grid has {}", y0.len(), model.n())));
        }
        let rhs = self.rhs(y0, leaders);
        let x = self.lu.solve(&rhs).ok_or(Error::SingularAssembly)?;
        let residual = self.residual(&x, &rhs);
        let l = self.layout;
        let (n, depth, sdt) = (l.n, l.depth, model.tree().sqrt_dt());

        let y = TreeProcess::from_fn(depth, n, |k, i, out| {
            if k == 0 {
                out.copy_from_slice(y0);
            } else {
                let s = l.y(k, i);
                out.copy_from_slice(&x.as_slice()[s..s + n]);
            }
        });
        let control = |index: fn(&Layout, usize, usize) -> usize| {
            TreeProcess::from_fn(depth - 1, n, |k, i, out| {
                let s = index(&l, k, i);
                out.copy_from_slice(&x.as_slice()[s..s + n]);
            })
        };
        let psi1 = control(Layout::psi1);
        let psi2 = control(Layout::psi2);
        let v = control(Layout::v);
        let mut z = model.state_zeros();
        let mut zz = model.control_zeros();
        for k in 0..depth {
            for i in 0..BinomialTree::nodes_at(k) {
                let (up, down) = (l.mu(k + 1, 2 * i), l.mu(k + 1, 2 * i + 1));
                let zo = z.node_mut(k, i);
                for r in 0..n {
                    zo[r] = 0.5 * (x[up + r] + x[down + r]);
                }
                let zzo = zz.node_mut(k, i);
                for r in 0..n {
                    zzo[r] = 0.5 * (x[up + r] - x[down + r]) / sdt;
                }
            }
        }

        let mut drift = leaders.f.masked(&model.masks().o);
        drift.axpy(1.0, &psi1);
        drift.axpy(1.0, &v.masked(&model.masks().d));
        let mut diffusion = leaders.g.clone();
        diffusion.axpy(1.0, &psi2);
        let source = self.game.adjoint_source(&y);
        Ok(SaddleSolution {
            psi1,
            psi2,
            v,
            y: ForwardSolution { y, drift, diffusion },
            z: BackwardSolution { z, zz, source, zero_order: true },
            picard_iterations: 0,
            residual,
            trace: Vec::new(),
        })
    }
}

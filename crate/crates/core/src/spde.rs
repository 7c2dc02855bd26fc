//! Forward and backward stochastic KS–KdV solvers on the binomial tree.
//!
//! The forward scheme at a node `ν` of level `k` is
//! `(I + dt·L)·y(ν±) = y(ν) + dt·(a·y + F)(ν) ± √dt·(b·y + G)(ν)`.
//! The backward scheme is its exact discrete adjoint: with
//! `w± = (I + dt·L)⁻ᵀ (z(ν±) − dt·S(ν±))` it sets `z(ν) = (w₊ + w₋)/2` and
//! `Z(ν) = (w₊ − w₋)/(2√dt)`, where `S = −a·z − b·Z + source` below the leaves
//! and `S = source` at the leaves.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::noise::{level_mean, BinomialTree, TreeProcess};
use crate::space::{
    build_derivative_operator, build_drift_operator, BandedLu, BandedOperator, Direction, Grid, ModelParams,
    RegionMask,
};

/// Everything the solvers share: mesh, tree, coefficients, masks and the
/// factorized implicit step.
#[derive(Debug, Clone)]
pub struct Model {
    grid: Grid,
    tree: BinomialTree,
    params: ModelParams,
    masks: RegionMask,
    stepper: Stepper,
    derivatives: [BandedOperator; 2],
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

/// Implicit step `(I + dt·L_f)` and its transpose, factorized once.
#[derive(Debug, Clone)]
pub struct Stepper {
    drift: BandedOperator,
    forward: BandedLu,
    adjoint: BandedLu,
    dt: f64,
}

impl Stepper {
    pub fn new(grid: &Grid, params: &ModelParams, dt: f64) -> Result<Self> {
        let drift = build_drift_operator(grid, params, Direction::Forward)?;
        let forward = BandedLu::factor(&drift.shifted_identity(dt))?;
        let adjoint = BandedLu::factor(&drift.transpose().shifted_identity(dt))?;
        Ok(Self { drift, forward, adjoint, dt })
    }

    pub fn drift(&self) -> &BandedOperator {
        &self.drift
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn solve(&self, x: &mut [f64]) {
        self.forward.solve_in_place(x);
    }

    pub fn solve_transpose(&self, x: &mut [f64]) {
        self.adjoint.solve_in_place(x);
    }
}

impl Model {
    pub fn new(grid: Grid, tree: BinomialTree, params: ModelParams, masks: RegionMask) -> Result<Self> {
        params.validate(&grid)?;
        if (tree.horizon() - params.horizon).abs() > 1e-12 * params.horizon {
            return Err(Error::ShapeMismatch(format!(
                "tree horizon {} differs from model horizon {}",
                tree.horizon(),
                params.horizon
            )));
        }
        if masks.o.len() != grid.n_interior() {
            return Err(Error::ShapeMismatch("region masks do not match the grid".into()));
        }
        let stepper = Stepper::new(&grid, &params, tree.dt())?;
        let derivatives = [build_derivative_operator(&grid, 1)?, build_derivative_operator(&grid, 2)?];
        let n = grid.n_interior();
        let table = |c: &crate::space::Coefficient| -> Vec<Vec<f64>> {
            (0..=tree.depth()).map(|k| c.at(tree.time(k), params.horizon, n)).collect()
        };
        let a = table(&params.a);
        let b = table(&params.b);
        Ok(Self { grid, tree, params, masks, stepper, derivatives, a, b })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn tree(&self) -> &BinomialTree {
        &self.tree
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn masks(&self) -> &RegionMask {
        &self.masks
    }

    pub fn stepper(&self) -> &Stepper {
        &self.stepper
    }

    pub fn n(&self) -> usize {
        self.grid.n_interior()
    }

    pub fn depth(&self) -> usize {
        self.tree.depth()
    }

    /// Derivative operator of order 0 (identity), 1 or 2.
    pub fn derivative(&self, order: usize) -> Option<&BandedOperator> {
        match order {
            1 => Some(&self.derivatives[0]),
            2 => Some(&self.derivatives[1]),
            _ => None,
        }
    }

    /// Zero-order drift coefficient at a time level.
    pub fn a_at(&self, level: usize) -> &[f64] {
        &self.a[level]
    }

    /// Multiplicative noise coefficient at a time level.
    pub fn b_at(&self, level: usize) -> &[f64] {
        &self.b[level]
    }

    /// Zero process for controls and disturbances (levels `0..N-1`).
    pub fn control_zeros(&self) -> TreeProcess {
        TreeProcess::zeros(self.depth() - 1, self.n())
    }

    /// Zero process for states (levels `0..N`).
    pub fn state_zeros(&self) -> TreeProcess {
        TreeProcess::zeros(self.depth(), self.n())
    }

    /// `Σ_k dt·h·𝔼⟨p_k, q_k⟩` over all levels of the two processes.
    pub fn tree_inner(&self, p: &TreeProcess, q: &TreeProcess) -> f64 {
        debug_assert!(p.same_shape(q));
        let w = self.tree.dt() * self.grid.h();
        (0..=p.last_level()).map(|k| p.mean_inner(q, k)).sum::<f64>() * w
    }

    pub fn tree_sq_norm(&self, p: &TreeProcess) -> f64 {
        self.tree_inner(p, p)
    }

    pub(crate) fn check_control(&self, name: &str, p: &TreeProcess) -> Result<()> {
        if p.last_level() + 1 != self.depth() || p.width() != self.n() {
            return Err(Error::ShapeMismatch(format!(
                "{name} has levels 0..={} and width {}, expected levels 0..={} and width {}",
                p.last_level(),
                p.width(),
                self.depth() - 1,
                self.n()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_state(&self, name: &str, p: &TreeProcess) -> Result<()> {
        if p.last_level() != self.depth() || p.width() != self.n() {
            return Err(Error::ShapeMismatch(format!(
                "{name} has levels 0..={} and width {}, expected levels 0..={} and width {}",
                p.last_level(),
                p.width(),
                self.depth(),
                self.n()
            )));
        }
        Ok(())
    }
}

/// Data of the forward equation; absent processes are zero.
#[derive(Debug, Clone, Default)]
pub struct ForwardInputs {
    pub y0: Vec<f64>,
    pub f: Option<TreeProcess>,
    pub g: Option<TreeProcess>,
    pub v: Option<TreeProcess>,
    pub psi1: Option<TreeProcess>,
    pub psi2: Option<TreeProcess>,
}

impl ForwardInputs {
    pub fn new(y0: Vec<f64>) -> Self {
        Self { y0, ..Self::default() }
    }

    /// Drift source `fχ_O + vχ_D + ψ₁` and diffusion source `g + ψ₂`.
    pub fn sources(&self, model: &Model) -> Result<(TreeProcess, TreeProcess)> {
        if self.y0.len() != model.n() {
            return Err(Error::ShapeMismatch(format!("y0 has length {}, grid has {}", self.y0.len(), model.n())));
        }
        let mut drift = model.control_zeros();
        let mut diffusion = model.control_zeros();
        let masks = model.masks();
        for (name, p, mask) in [("f", &self.f, Some(&masks.o)), ("v", &self.v, Some(&masks.d)), ("psi1", &self.psi1, None)] {
            if let Some(p) = p {
                model.check_control(name, p)?;
                match mask {
                    Some(m) => drift.axpy(1.0, &p.masked(m)),
                    None => drift.axpy(1.0, p),
                }
            }
        }
        for (name, p) in [("g", &self.g), ("psi2", &self.psi2)] {
            if let Some(p) = p {
                model.check_control(name, p)?;
                diffusion.axpy(1.0, p);
            }
        }
        Ok((drift, diffusion))
    }
}

#[derive(Debug, Clone)]
pub struct ForwardSolution {
    pub y: TreeProcess,
    /// Drift source actually used, without the `a·y` term.
    pub drift: TreeProcess,
    /// Diffusion source actually used, without the `b·y` term.
    pub diffusion: TreeProcess,
}

pub fn forward_solve(model: &Model, inputs: &ForwardInputs) -> Result<ForwardSolution> {
    let (drift, diffusion) = inputs.sources(model)?;
    let y = forward_sweep(model, &inputs.y0, &drift, &diffusion);
    Ok(ForwardSolution { y, drift, diffusion })
}

/// Forward recursion with precombined sources on levels `0..N-1`.
pub fn forward_sweep(model: &Model, y0: &[f64], drift: &TreeProcess, diffusion: &TreeProcess) -> TreeProcess {
    let n = model.n();
    let depth = model.depth();
    let dt = model.tree.dt();
    let sdt = model.tree.sqrt_dt();
    let mut y = TreeProcess::zeros(depth, n);
    y.level_mut(0).copy_from_slice(y0);
    for k in 0..depth {
        let (a, b) = (&model.a[k], &model.b[k]);
        let (fk, gk) = (drift.level(k), diffusion.level(k));
        let (parent, children) = y.level_pair_mut(k);
        let parent: &[f64] = parent;
        children.par_chunks_mut(2 * n).with_min_len(8).enumerate().for_each(|(i, pair)| {
            let yp = &parent[i * n..(i + 1) * n];
            let f = &fk[i * n..(i + 1) * n];
            let g = &gk[i * n..(i + 1) * n];
            let (up, down) = pair.split_at_mut(n);
            for j in 0..n {
                let r = yp[j] + dt * (a[j] * yp[j] + f[j]);
                let s = sdt * (b[j] * yp[j] + g[j]);
                up[j] = r + s;
                down[j] = r - s;
            }
            model.stepper.solve(up);
            model.stepper.solve(down);
        });
    }
    y
}

/// Data of a backward equation.
#[derive(Debug, Clone)]
pub struct BackwardInputs {
    /// Values at the leaves, node-major.
    pub terminal: Vec<f64>,
    /// Affine source on levels `1..=N`; level 0 is ignored.
    pub source: TreeProcess,
    /// Include the `−a·z − b·Z` terms.
    pub zero_order: bool,
}

#[derive(Debug, Clone)]
pub struct BackwardSolution {
    /// Levels `0..=N`.
    pub z: TreeProcess,
    /// Martingale coefficient, levels `0..N-1`.
    pub zz: TreeProcess,
    pub source: TreeProcess,
    pub zero_order: bool,
}

pub fn backward_solve(model: &Model, inputs: &BackwardInputs) -> Result<BackwardSolution> {
    let leaves = BinomialTree::nodes_at(model.depth()) * model.n();
    if inputs.terminal.len() != leaves {
        return Err(Error::ShapeMismatch(format!(
            "terminal has {} values, the leaves need {leaves}",
            inputs.terminal.len()
        )));
    }
    model.check_state("source", &inputs.source)?;
    let (z, zz) = backward_sweep(model, &inputs.terminal, &inputs.source, inputs.zero_order);
    Ok(BackwardSolution { z, zz, source: inputs.source.clone(), zero_order: inputs.zero_order })
}

/// Backward recursion; returns `(z, Z)`.
pub fn backward_sweep(
    model: &Model,
    terminal: &[f64],
    source: &TreeProcess,
    zero_order: bool,
) -> (TreeProcess, TreeProcess) {
    let n = model.n();
    let depth = model.depth();
    let dt = model.tree.dt();
    let half_inv_sdt = 0.5 / model.tree.sqrt_dt();
    let mut z = TreeProcess::zeros(depth, n);
    let mut zz = TreeProcess::zeros(depth - 1, n);
    z.level_mut(depth).copy_from_slice(terminal);
    for k in (0..depth).rev() {
        let child = k + 1;
        let coupled = zero_order && child < depth;
        let (a, b) = (&model.a[child], &model.b[child]);
        let zc = z.level(child);
        let zzc = if child < depth { zz.level(child) } else { &[][..] };
        let sc = source.level(child);
        let nodes = BinomialTree::nodes_at(k);
        let mut zp = vec![0.0; nodes * n];
        let mut zzp = vec![0.0; nodes * n];
        zp.par_chunks_mut(n).zip(zzp.par_chunks_mut(n)).with_min_len(8).enumerate().for_each(|(i, (zo, zzo))| {
            let mut w = [vec![0.0; n], vec![0.0; n]];
            for (s, wc) in w.iter_mut().enumerate() {
                let c = (2 * i + s) * n;
                for j in 0..n {
                    let mut src = sc[c + j];
                    if coupled {
                        src -= a[j] * zc[c + j] + b[j] * zzc[c + j];
                    }
                    wc[j] = zc[c + j] - dt * src;
                }
                model.stepper.solve_transpose(wc);
            }
            for j in 0..n {
                zo[j] = 0.5 * (w[0][j] + w[1][j]);
                zzo[j] = (w[0][j] - w[1][j]) * half_inv_sdt;
            }
        });
        z.level_mut(k).copy_from_slice(&zp);
        zz.level_mut(k).copy_from_slice(&zzp);
    }
    (z, zz)
}

/// Mean over the nodes of a level of a per-node scalar.
pub(crate) fn level_mean_by(nodes: usize, f: impl Fn(usize) -> f64 + Sync + Send) -> f64 {
    let values: Vec<f64> = (0..nodes).into_par_iter().with_min_len(64).map(f).collect();
    level_mean(&values, 1)[0]
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Relative defect `|LHS − RHS| / (1 + |LHS|)` of the discrete Itô pairing
/// `𝔼⟨y_N, z_N⟩ − ⟨y_0, z_0⟩ = Σ dt·𝔼[⟨a y + F, z⟩ + ⟨b y + G, Z⟩] + Σ dt·𝔼⟨y, S⟩`.
pub fn ito_pairing_check(model: &Model, fwd: &ForwardSolution, bwd: &BackwardSolution) -> Result<f64> {
    model.check_state("y", &fwd.y)?;
    model.check_state("z", &bwd.z)?;
    model.check_control("Z", &bwd.zz)?;
    model.check_control("drift", &fwd.drift)?;
    model.check_control("diffusion", &fwd.diffusion)?;
    model.check_state("source", &bwd.source)?;
    let (n, depth, h, dt) = (model.n(), model.depth(), model.grid.h(), model.tree.dt());
    fn node(p: &TreeProcess, k: usize, i: usize) -> &[f64] {
        let n = p.width();
        &p.level(k)[i * n..(i + 1) * n]
    }
    let lhs = h * (fwd.y.mean_inner(&bwd.z, depth) - dot(fwd.y.node(0, 0), bwd.z.node(0, 0)));
    let mut rhs = 0.0;
    for k in 0..depth {
        let (a, b) = (&model.a[k], &model.b[k]);
        rhs += level_mean_by(BinomialTree::nodes_at(k), |i| {
            let y = node(&fwd.y, k, i);
            let (f, g) = (node(&fwd.drift, k, i), node(&fwd.diffusion, k, i));
            let (z, zz) = (node(&bwd.z, k, i), node(&bwd.zz, k, i));
            (0..n).map(|j| (a[j] * y[j] + f[j]) * z[j] + (b[j] * y[j] + g[j]) * zz[j]).sum()
        });
    }
    for k in 1..=depth {
        let (a, b) = (&model.a[k], &model.b[k]);
        let coupled = bwd.zero_order && k < depth;
        rhs += level_mean_by(BinomialTree::nodes_at(k), |i| {
            let y = node(&fwd.y, k, i);
            let s = node(&bwd.source, k, i);
            if coupled {
                let (z, zz) = (node(&bwd.z, k, i), node(&bwd.zz, k, i));
                (0..n).map(|j| y[j] * (s[j] - a[j] * z[j] - b[j] * zz[j])).sum()
            } else {
                dot(y, s)
            }
        });
    }
    rhs *= h * dt;
    Ok((lhs - rhs).abs() / (1.0 + lhs.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    /// `max_k 𝔼‖y_k‖²`.
    pub max_mean_square: f64,
    /// `Σ_{k≥1} 𝔼‖D2 y_k‖² dt`.
    pub h2_integral: f64,
    /// `‖y_0‖² + Σ_k 𝔼(‖F_k‖² + ‖G_k‖²) dt`.
    pub data_norm: f64,
    /// `(max_mean_square + h2_integral) / data_norm`, zero for zero data.
    pub ratio: f64,
}

pub fn energy_report(model: &Model, fwd: &ForwardSolution) -> EnergyReport {
    let (n, depth, h, dt) = (model.n(), model.depth(), model.grid.h(), model.tree.dt());
    let d2 = &model.derivatives[1];
    let mut max_mean_square = 0.0f64;
    let mut h2_integral = 0.0;
    for k in 0..=depth {
        max_mean_square = max_mean_square.max(h * fwd.y.mean_inner(&fwd.y, k));
        if k > 0 {
            let level = fwd.y.level(k);
            h2_integral += dt
                * h
                * level_mean_by(BinomialTree::nodes_at(k), |i| {
                    let yxx = d2.apply(&level[i * n..(i + 1) * n]);
                    dot(&yxx, &yxx)
                });
        }
    }
    let mut data_norm = model.grid.norm_sq(fwd.y.node(0, 0));
    for k in 0..depth {
        data_norm += dt * h * (fwd.drift.mean_inner(&fwd.drift, k) + fwd.diffusion.mean_inner(&fwd.diffusion, k));
    }
    let total = max_mean_square + h2_integral;
    let ratio = if data_norm > 0.0 { total / data_norm } else { 0.0 };
    EnergyReport { max_mean_square, h2_integral, data_norm, ratio }
}

/// Noise-free forward recursion along a single path with `steps` steps of
/// size `T/steps`; returns the state at every step.
pub fn deterministic_forward(
    grid: &Grid,
    params: &ModelParams,
    steps: usize,
    y0: &[f64],
    source: impl Fn(f64) -> Vec<f64>,
) -> Result<Vec<Vec<f64>>> {
    if steps == 0 {
        return Err(Error::InvalidParameter { name: "steps", reason: "need at least one step".into() });
    }
    params.validate(grid)?;
    let n = grid.n_interior();
    let dt = params.horizon / steps as f64;
    let stepper = Stepper::new(grid, params, dt)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(y0.to_vec());
    for k in 0..steps {
        let t = k as f64 * dt;
        let a = params.a.at(t, params.horizon, n);
        let f = source(t);
        let y = &out[k];
        let mut next: Vec<f64> = (0..n).map(|j| y[j] + dt * (a[j] * y[j] + f[j])).collect();
        stepper.solve(&mut next);
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{region_mask, Coefficient};

    pub(crate) fn small_model(n: usize, depth: usize, a: f64, b: f64) -> Model {
        let grid = Grid::new(n).unwrap();
        let tree = BinomialTree::new(depth, 1.0).unwrap();
        let masks = region_mask(
            &grid,
            &[("O", 0.2, 0.5), ("D", 0.6, 0.8), ("Od0", 0.3, 0.7), ("Od1", 0.55, 0.75), ("Od2", 0.6, 0.9)],
        )
        .unwrap();
        let params = ModelParams {
            k: 1.0,
            eta: 0.1,
            horizon: 1.0,
            a: Coefficient::Constant(a),
            b: Coefficient::Constant(b),
        };
        Model::new(grid, tree, params, masks).unwrap()
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let m = small_model(10, 3, 0.5, 0.5);
        let fwd = forward_solve(&m, &ForwardInputs::new(vec![0.0; 10])).unwrap();
        assert!(fwd.y.is_zero());
        let bwd = backward_solve(
            &m,
            &BackwardInputs { terminal: vec![0.0; 80], source: m.state_zeros(), zero_order: true },
        )
        .unwrap();
        assert!(bwd.z.is_zero() && bwd.zz.is_zero());
        assert_eq!(ito_pairing_check(&m, &fwd, &bwd).unwrap(), 0.0);
    }

    #[test]
    fn deterministic_data_gives_equal_nodes() {
        let m = small_model(10, 4, 0.3, 0.0);
        let y0 = m.grid().sample(|x| (std::f64::consts::PI * x).sin().powi(2));
        let fwd = forward_solve(&m, &ForwardInputs::new(y0.clone())).unwrap();
        let det = deterministic_forward(m.grid(), m.params(), 4, &y0, |_| vec![0.0; 10]).unwrap();
        for k in 0..=4 {
            for i in 0..BinomialTree::nodes_at(k) {
                assert_eq!(fwd.y.node(k, i), &det[k][..]);
            }
        }
    }

    #[test]
    fn level_mean_follows_noise_free_recursion() {
        let m = small_model(9, 4, 0.0, 0.8);
        let y0 = m.grid().sample(|x| x * (1.0 - x));
        let fwd = forward_solve(&m, &ForwardInputs::new(y0.clone())).unwrap();
        let det = deterministic_forward(m.grid(), m.params(), 4, &y0, |_| vec![0.0; 9]).unwrap();
        for k in 0..=4 {
            let mean = fwd.y.expectation(k).unwrap();
            for (u, v) in mean.iter().zip(&det[k]) {
                assert!((u - v).abs() < 1e-13);
            }
        }
    }
}

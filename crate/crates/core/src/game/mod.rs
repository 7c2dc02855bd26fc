//! Follower–disturbance saddle point for fixed leader controls.
//!
//! The robust cost is
//! `J_r = ½ Σᵢ ‖χᵢ(Dᵢy − y_dⁱ)‖² + (β/2)‖vχ_D‖² − (δ₁/2)‖ψ₁‖² − (δ₂/2)‖ψ₂‖²`
//! with tracking on levels `1..=N` and controls on levels `0..N-1`, all norms
//! being tree expectation × `dt` × grid quadrature.

mod direct;

pub use direct::{SaddleSystem, DENSE_LIMIT};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::noise::{BinomialTree, TreeProcess};
use crate::space::BandedOperator;
use crate::spde::{backward_sweep, forward_solve, level_mean_by, BackwardSolution, ForwardInputs, ForwardSolution, Model};

/// Contraction estimates at or above this flag the parameters as too small.
pub const CONTRACTION_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameParams {
    pub beta: f64,
    pub delta1: f64,
    pub delta2: f64,
}

impl GameParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("delta1", self.delta1), ("delta2", self.delta2)] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter { name, reason: format!("must be positive, got {v}") });
            }
        }
        Ok(())
    }
}

/// Tracking targets for `y`, `y_x` and `y_xx`, supported on their masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    yd: [TreeProcess; 3],
}

impl Targets {
    pub fn zeros(model: &Model) -> Self {
        Self { yd: std::array::from_fn(|_| model.state_zeros()) }
    }

    /// Masks each target by its observation region.
    pub fn new(model: &Model, yd: [TreeProcess; 3]) -> Result<Self> {
        for (i, p) in yd.iter().enumerate() {
            model.check_state(["y_d0", "y_d1", "y_d2"][i], p)?;
        }
        let masks = model.masks();
        let [a, b, c] = yd;
        Ok(Self { yd: [a.masked(masks.observation(0)), b.masked(masks.observation(1)), c.masked(masks.observation(2))] })
    }

    pub fn get(&self, order: usize) -> &TreeProcess {
        &self.yd[order]
    }

    pub fn is_zero(&self) -> bool {
        self.yd.iter().all(TreeProcess::is_zero)
    }
}

/// Leader controls `f` (acting on `O`) and `g` (diffusion).
#[derive(Debug, Clone, PartialEq)]
pub struct Leaders {
    pub f: TreeProcess,
    pub g: TreeProcess,
}

impl Leaders {
    pub fn zeros(model: &Model) -> Self {
        Self { f: model.control_zeros(), g: model.control_zeros() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub total: f64,
    pub terms: Vec<(&'static str, f64)>,
}

impl CostReport {
    fn from_terms(terms: Vec<(&'static str, f64)>) -> Self {
        Self { total: terms.iter().map(|t| t.1).sum(), terms }
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.0 == name).map(|t| t.1)
    }
}

/// Leader cost `½‖fχ_O‖² + ½‖g‖²`.
pub fn evaluate_leader_cost(model: &Model, leaders: &Leaders) -> CostReport {
    let fo = leaders.f.masked(&model.masks().o);
    CostReport::from_terms(vec![
        ("leader_f", 0.5 * model.tree_sq_norm(&fo)),
        ("leader_g", 0.5 * model.tree_sq_norm(&leaders.g)),
    ])
}

#[derive(Debug, Clone)]
pub struct SaddleSolution {
    pub psi1: TreeProcess,
    pub psi2: TreeProcess,
    pub v: TreeProcess,
    pub y: ForwardSolution,
    pub z: BackwardSolution,
    pub picard_iterations: usize,
    /// Final relative fixed-point step, or the assembled residual for the
    /// direct solver.
    pub residual: f64,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub relaxation: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 500, relaxation: 1.0 }
    }
}

/// Outcome of the large-parameter validation.
#[derive(Debug, Clone, PartialEq)]
pub struct GameValidation {
    /// Power-iteration estimate of the spectral radius of the fixed-point map.
    pub contraction: f64,
    /// Largest eigenvalue of the tracking Hessian in the disturbances, scaled
    /// by `δ₁, δ₂`; concavity in `(ψ₁, ψ₂)` needs it below 1.
    pub concavity: f64,
    pub warnings: Vec<String>,
}

impl GameValidation {
    pub fn passes(&self) -> bool {
        self.warnings.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleMargins {
    pub samples: usize,
    /// `min J* − J_r(ψ* + δψ, v*)`, nonnegative when the max side holds.
    pub worst_max_margin: f64,
    /// `min J_r(ψ*, v* + δv) − J*`, nonnegative when the min side holds.
    pub worst_min_margin: f64,
    pub violations: usize,
}

/// A game instance: model, penalties and targets.
#[derive(Debug, Clone)]
pub struct Game<'a> {
    model: &'a Model,
    params: GameParams,
    targets: Targets,
    transposes: [BandedOperator; 2],
    target_source: TreeProcess,
}

fn gaussian_process(rng: &mut ChaCha8Rng, last_level: usize, width: usize) -> TreeProcess {
    TreeProcess::from_fn(last_level, width, |_, _, out| {
        out.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
    })
}

impl<'a> Game<'a> {
    pub fn new(model: &'a Model, params: GameParams, targets: Targets) -> Result<Self> {
        params.validate()?;
        for i in 0..3 {
            model.check_state("targets", targets.get(i))?;
        }
        let d1 = model.derivative(1).expect("first derivative");
        let d2 = model.derivative(2).expect("second derivative");
        let transposes = [d1.transpose(), d2.transpose()];
        // Σᵢ Dᵢᵀ(χᵢ y_dⁱ), node by node
        let mut target_source = model.state_zeros();
        for k in 1..=model.depth() {
            for i in 0..BinomialTree::nodes_at(k) {
                let out = target_source.node_mut(k, i);
                out.copy_from_slice(targets.get(0).node(k, i));
                for order in 1..=2 {
                    let t = transposes[order - 1].apply(targets.get(order).node(k, i));
                    out.iter_mut().zip(&t).for_each(|(a, b)| *a += b);
                }
            }
        }
        Ok(Self { model, params, targets, transposes, target_source })
    }

    pub fn model(&self) -> &'a Model {
        self.model
    }

    pub fn params(&self) -> GameParams {
        self.params
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    /// `M y = Σᵢ Dᵢᵀ(χᵢ Dᵢ y)` with `D₀ = I`.
    pub fn tracking_operator(&self, y: &[f64]) -> Vec<f64> {
        let masks = self.model.masks();
        let mut out: Vec<f64> = y.iter().zip(masks.observation(0)).map(|(a, m)| a * m).collect();
        for order in 1..=2 {
            let d = self.model.derivative(order).expect("derivative");
            let mut dy = d.apply(y);
            dy.iter_mut().zip(masks.observation(order)).for_each(|(a, m)| *a *= m);
            let t = self.transposes[order - 1].apply(&dy);
            out.iter_mut().zip(&t).for_each(|(a, b)| *a += b);
        }
        out
    }

    /// `Σᵢ Dᵢᵀ(χᵢ y_dⁱ)` on levels `1..=N`.
    pub fn target_source(&self) -> &TreeProcess {
        &self.target_source
    }

    /// `M·p` on levels `1..=N` of a state process.
    pub fn tracking_process(&self, p: &TreeProcess) -> TreeProcess {
        p.map_nodes(1, |_, x, out| out.copy_from_slice(&self.tracking_operator(x)))
    }

    /// Backward source `−(M y − Σᵢ Dᵢᵀχᵢy_dⁱ)` of the follower adjoint.
    pub fn adjoint_source(&self, y: &TreeProcess) -> TreeProcess {
        let mut s = self.tracking_process(y);
        s.axpy(-1.0, &self.target_source);
        s.scale(-1.0);
        s
    }

    /// `‖χᵢ(Dᵢy − y_dⁱ)‖²` for `i = 0, 1, 2`.
    pub fn tracking_terms(&self, y: &TreeProcess) -> [f64; 3] {
        let model = self.model;
        let (n, dt, h) = (model.n(), model.tree().dt(), model.grid().h());
        std::array::from_fn(|order| {
            let mask = model.masks().observation(order);
            let yd = self.targets.get(order);
            (1..=model.depth())
                .map(|k| {
                    level_mean_by(BinomialTree::nodes_at(k), |i| {
                        let yk = &y.level(k)[i * n..(i + 1) * n];
                        let dy = match model.derivative(order) {
                            Some(d) => d.apply(yk),
                            None => yk.to_vec(),
                        };
                        let t = yd.node(k, i);
                        (0..n).map(|j| mask[j] * (dy[j] - t[j]).powi(2)).sum()
                    })
                })
                .sum::<f64>()
                * dt
                * h
        })
    }

    pub fn evaluate_robust_cost(
        &self,
        y: &TreeProcess,
        v: &TreeProcess,
        psi1: &TreeProcess,
        psi2: &TreeProcess,
    ) -> CostReport {
        let mut terms = self.follower_terms(y, v);
        terms.push(("disturbance_1", -0.5 * self.params.delta1 * self.model.tree_sq_norm(psi1)));
        terms.push(("disturbance_2", -0.5 * self.params.delta2 * self.model.tree_sq_norm(psi2)));
        CostReport::from_terms(terms)
    }

    pub fn evaluate_follower_cost(&self, y: &TreeProcess, v: &TreeProcess) -> CostReport {
        CostReport::from_terms(self.follower_terms(y, v))
    }

    fn follower_terms(&self, y: &TreeProcess, v: &TreeProcess) -> Vec<(&'static str, f64)> {
        let [t0, t1, t2] = self.tracking_terms(y);
        let vd = v.masked(&self.model.masks().d);
        vec![
            ("tracking_0", 0.5 * t0),
            ("tracking_1", 0.5 * t1),
            ("tracking_2", 0.5 * t2),
            ("follower", 0.5 * self.params.beta * self.model.tree_sq_norm(&vd)),
        ]
    }

    /// Forward state for given leaders, disturbances and follower control.
    pub fn forward_with(
        &self,
        y0: &[f64],
        leaders: &Leaders,
        psi1: &TreeProcess,
        psi2: &TreeProcess,
        v: &TreeProcess,
    ) -> Result<ForwardSolution> {
        let inputs = ForwardInputs {
            y0: y0.to_vec(),
            f: Some(leaders.f.clone()),
            g: Some(leaders.g.clone()),
            v: Some(v.clone()),
            psi1: Some(psi1.clone()),
            psi2: Some(psi2.clone()),
        };
        forward_solve(self.model, &inputs)
    }

    /// `J_r` after re-solving the state from plain inputs.
    pub fn robust_cost_at(
        &self,
        y0: &[f64],
        leaders: &Leaders,
        psi1: &TreeProcess,
        psi2: &TreeProcess,
        v: &TreeProcess,
    ) -> Result<f64> {
        let fwd = self.forward_with(y0, leaders, psi1, psi2, v)?;
        Ok(self.evaluate_robust_cost(&fwd.y, v, psi1, psi2).total)
    }

    /// `(ψ₁, ψ₂, v) = (z/δ₁, Z/δ₂, −zχ_D/β)` from control-shaped `(z, Z)`.
    pub fn characterize(&self, z: &TreeProcess, zz: &TreeProcess) -> (TreeProcess, TreeProcess, TreeProcess) {
        let p = self.params;
        let psi1 = z.scaled(1.0 / p.delta1);
        let psi2 = zz.scaled(1.0 / p.delta2);
        let v = z.masked(&self.model.masks().d).scaled(-1.0 / p.beta);
        (psi1, psi2, v)
    }

    fn picard_map(
        &self,
        y0: &[f64],
        leaders: &Leaders,
        z: &TreeProcess,
        zz: &TreeProcess,
    ) -> Result<(ForwardSolution, BackwardSolution)> {
        let (psi1, psi2, v) = self.characterize(z, zz);
        let fwd = self.forward_with(y0, leaders, &psi1, &psi2, &v)?;
        let source = self.adjoint_source(&fwd.y);
        let leaves = BinomialTree::nodes_at(self.model.depth()) * self.model.n();
        let (zn, zzn) = backward_sweep(self.model, &vec![0.0; leaves], &source, true);
        Ok((fwd, BackwardSolution { z: zn, zz: zzn, source, zero_order: true }))
    }

    /// Picard iteration on `(z, Z)` with adaptive relaxation.
    pub fn solve_saddle_point(&self, y0: &[f64], leaders: &Leaders, opts: &PicardOptions) -> Result<SaddleSolution> {
        let model = self.model;
        model.check_control("f", &leaders.f)?;
        model.check_control("g", &leaders.g)?;
        if y0.len() != model.n() {
            return Err(Error::ShapeMismatch(format!("y0 has length {}, grid has {}", y0.len(), model.n())));
        }
        let last = model.depth() - 1;
        let fp = fixed_point(model, opts, |z, zz| {
            let (_, bwd) = self.picard_map(y0, leaders, z, zz)?;
            Ok((bwd.z.truncated(last), bwd.zz.clone(), bwd))
        })?;
        let bwd = fp.value;
        let (psi1, psi2, v) = self.characterize(&bwd.z.truncated(last), &bwd.zz);
        let y = self.forward_with(y0, leaders, &psi1, &psi2, &v)?;
        Ok(SaddleSolution {
            psi1,
            psi2,
            v,
            y,
            z: bwd,
            picard_iterations: fp.iterations,
            residual: fp.residual,
            trace: fp.trace,
        })
    }

    /// Solves the assembled optimality system directly.
    pub fn direct_assembly_solve(&self, y0: &[f64], leaders: &Leaders) -> Result<SaddleSolution> {
        SaddleSystem::assemble(self)?.solve(y0, leaders)
    }

    /// Power-iteration estimates behind the large-parameter validation.
    pub fn validate(&self, seed: u64) -> Result<GameValidation> {
        const STEPS: usize = 40;
        let model = self.model;
        let (n, last) = (model.n(), model.depth() - 1);
        let leaves = vec![0.0; BinomialTree::nodes_at(model.depth()) * n];
        let zero_y0 = vec![0.0; n];
        let zero_leaders = Leaders::zeros(model);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        // linear part of the fixed-point map
        let mut z = gaussian_process(&mut rng, last, n);
        let mut zz = gaussian_process(&mut rng, last, n);
        let mut contraction = 0.0;
        for _ in 0..STEPS {
            let size = (model.tree_sq_norm(&z) + model.tree_sq_norm(&zz)).sqrt();
            z.scale(1.0 / size);
            zz.scale(1.0 / size);
            let (psi1, psi2, v) = self.characterize(&z, &zz);
            let fwd = self.forward_with(&zero_y0, &zero_leaders, &psi1, &psi2, &v)?;
            let source = self.tracking_process(&fwd.y).scaled(-1.0);
            let (zn, zzn) = backward_sweep(model, &leaves, &source, true);
            z = zn.truncated(last);
            zz = zzn;
            contraction = (model.tree_sq_norm(&z) + model.tree_sq_norm(&zz)).sqrt();
        }

        // tracking Hessian in the disturbances, scaled by the penalties
        let p = self.params;
        let (s1, s2) = (p.delta1.sqrt().recip(), p.delta2.sqrt().recip());
        let mut u1 = gaussian_process(&mut rng, last, n);
        let mut u2 = gaussian_process(&mut rng, last, n);
        let zero = model.control_zeros();
        let mut concavity = 0.0;
        for _ in 0..STEPS {
            let size = (model.tree_sq_norm(&u1) + model.tree_sq_norm(&u2)).sqrt();
            u1.scale(1.0 / size);
            u2.scale(1.0 / size);
            let fwd = self.forward_with(&zero_y0, &zero_leaders, &u1.scaled(s1), &u2.scaled(s2), &zero)?;
            let source = self.tracking_process(&fwd.y).scaled(-1.0);
            let (zn, zzn) = backward_sweep(model, &leaves, &source, true);
            u1 = zn.truncated(last).scaled(s1);
            u2 = zzn.scaled(s2);
            concavity = (model.tree_sq_norm(&u1) + model.tree_sq_norm(&u2)).sqrt();
        }

        let mut warnings = Vec::new();
        if contraction >= CONTRACTION_THRESHOLD {
            warnings.push(format!(
                "fixed-point contraction estimate {contraction:.3e} is not below {CONTRACTION_THRESHOLD}; beta, delta1, delta2 may be too small"
            ));
        }
        if concavity >= 1.0 {
            warnings.push(format!(
                "disturbance concavity ratio {concavity:.3e} is not below 1; delta1, delta2 are too small for a saddle"
            ));
        }
        Ok(GameValidation { contraction, concavity, warnings })
    }

    fn random_directions(&self, rng: &mut ChaCha8Rng) -> [TreeProcess; 3] {
        let model = self.model;
        let (n, last) = (model.n(), model.depth() - 1);
        let mut dirs = [
            gaussian_process(rng, last, n),
            gaussian_process(rng, last, n),
            gaussian_process(rng, last, n).masked(&model.masks().d),
        ];
        for d in dirs.iter_mut() {
            let norm = model.tree_sq_norm(d).sqrt();
            d.scale(1.0 / norm);
        }
        dirs
    }

    fn saddle_norm(&self, s: &SaddleSolution) -> f64 {
        let m = self.model;
        (m.tree_sq_norm(&s.psi1) + m.tree_sq_norm(&s.psi2) + m.tree_sq_norm(&s.v)).sqrt()
    }

    /// Largest normalized centered-difference directional derivative of `J_r`
    /// at `(ψ₁, ψ₂, v)` over `n_directions` random unit directions per block.
    ///
    /// Each derivative is divided by the local curvature along the direction
    /// times the norm of the point.
    pub fn verify_first_order_conditions(
        &self,
        y0: &[f64],
        leaders: &Leaders,
        saddle: &SaddleSolution,
        n_directions: usize,
        seed: u64,
    ) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = self.saddle_norm(saddle);
        if scale == 0.0 && self.robust_cost_at(y0, leaders, &saddle.psi1, &saddle.psi2, &saddle.v)? == 0.0 {
            // the origin of a zero-data game: J_r is a pure quadratic form
            return Ok(0.0);
        }
        let step = 1e-4 * scale.max(1.0);
        let base = [&saddle.psi1, &saddle.psi2, &saddle.v];
        let j0 = self.robust_cost_at(y0, leaders, base[0], base[1], base[2])?;
        let mut worst = 0.0f64;
        for _ in 0..n_directions {
            let dirs = self.random_directions(&mut rng);
            for (block, d) in dirs.iter().enumerate() {
                let eval = |s: f64| -> Result<f64> {
                    let mut x = [base[0].clone(), base[1].clone(), base[2].clone()];
                    x[block].axpy(s, d);
                    self.robust_cost_at(y0, leaders, &x[0], &x[1], &x[2])
                };
                let (jp, jm) = (eval(step)?, eval(-step)?);
                let derivative = (jp - jm) / (2.0 * step);
                let curvature = (jp - 2.0 * j0 + jm).abs() / (step * step);
                if derivative == 0.0 {
                    continue;
                }
                worst = worst.max(derivative.abs() / (curvature * scale.max(f64::MIN_POSITIVE)));
            }
        }
        Ok(worst)
    }

    /// Samples `J_r(ψ*+δψ, v*) ≤ J_r(ψ*, v*) ≤ J_r(ψ*, v*+δv)`.
    pub fn verify_saddle_inequalities(
        &self,
        y0: &[f64],
        leaders: &Leaders,
        saddle: &SaddleSolution,
        n_samples: usize,
        seed: u64,
    ) -> Result<SaddleMargins> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p1, p2, v) = (&saddle.psi1, &saddle.psi2, &saddle.v);
        let j_star = self.robust_cost_at(y0, leaders, p1, p2, v)?;
        let scale = self.saddle_norm(saddle).max(1e-3);
        let mut worst_max = f64::INFINITY;
        let mut worst_min = f64::INFINITY;
        let mut violations = 0;
        for _ in 0..n_samples {
            let [d1, d2, dv] = self.random_directions(&mut rng);
            let r: [f64; 3] = std::array::from_fn(|_| {
                let u: f64 = StandardNormal.sample(&mut rng);
                scale * (0.01 + u.abs())
            });
            let mut q1 = p1.clone();
            q1.axpy(r[0], &d1);
            let mut q2 = p2.clone();
            q2.axpy(r[1], &d2);
            let j_dist = self.robust_cost_at(y0, leaders, &q1, &q2, v)?;
            let mut w = v.clone();
            w.axpy(r[2], &dv);
            let j_foll = self.robust_cost_at(y0, leaders, p1, p2, &w)?;
            let max_margin = j_star - j_dist;
            let min_margin = j_foll - j_star;
            let tol = 1e-12 * (j_star.abs() + j_dist.abs().max(j_foll.abs()));
            if max_margin < -tol || min_margin < -tol {
                violations += 1;
            }
            worst_max = worst_max.min(max_margin);
            worst_min = worst_min.min(min_margin);
        }
        Ok(SaddleMargins { samples: n_samples, worst_max_margin: worst_max, worst_min_margin: worst_min, violations })
    }
}

pub(crate) struct FixedPoint<T> {
    pub value: T,
    pub iterations: usize,
    pub residual: f64,
    pub trace: Vec<f64>,
}

/// Relaxed fixed-point iteration on a pair of control-shaped processes,
/// starting from zero; `map` returns the next pair and a payload. The
/// relaxation factor is halved whenever the relative step grows.
pub(crate) fn fixed_point<T>(
    model: &Model,
    opts: &PicardOptions,
    mut map: impl FnMut(&TreeProcess, &TreeProcess) -> Result<(TreeProcess, TreeProcess, T)>,
) -> Result<FixedPoint<T>> {
    if !(opts.relaxation > 0.0 && opts.relaxation <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "relaxation",
            reason: format!("must lie in (0, 1], got {}", opts.relaxation),
        });
    }
    let mut u = model.control_zeros();
    let mut uu = model.control_zeros();
    let mut omega = opts.relaxation;
    let mut trace = Vec::new();
    let mut previous = f64::INFINITY;
    for iteration in 1..=opts.max_iter {
        let (un, uun, value) = map(&u, &uu)?;
        let step = (model.tree_sq_norm(&un.minus(&u)) + model.tree_sq_norm(&uun.minus(&uu))).sqrt();
        let size = (model.tree_sq_norm(&un) + model.tree_sq_norm(&uun)).sqrt();
        let relative = if step == 0.0 { 0.0 } else { step / size.max(f64::MIN_POSITIVE) };
        trace.push(relative);
        if relative <= opts.tol {
            return Ok(FixedPoint { value, iterations: iteration, residual: relative, trace });
        }
        if relative > previous {
            omega *= 0.5;
            if omega < 1.0 / 1024.0 {
                return Err(Error::NonContraction { trace });
            }
        }
        previous = relative;
        u.scale(1.0 - omega);
        u.axpy(omega, &un);
        uu.scale(1.0 - omega);
        uu.axpy(omega, &uun);
    }
    Err(Error::NonContraction { trace })
}

/// `‖a − b‖ / ‖b‖` over several processes in the tree norm.
pub fn relative_distance(model: &Model, a: &[&TreeProcess], b: &[&TreeProcess]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| model.tree_sq_norm(&x.minus(y))).sum();
    let size: f64 = b.iter().map(|y| model.tree_sq_norm(y)).sum();
    if diff == 0.0 {
        return 0.0;
    }
    (diff / size.max(f64::MIN_POSITIVE)).sqrt()
}

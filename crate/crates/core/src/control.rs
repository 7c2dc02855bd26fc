//! Leader layer: the penalized problem
//! `J_ε(f, g) = ½‖fχ_O‖² + ½‖g‖² + (1/2ε)𝔼‖y(T)‖²`, its adjoint gradient,
//! conjugate-gradient minimization and the ε-sweep.
//!
//! Sign convention: the adjoint carries `p_T = +y(T)/ε`, so the optimum
//! satisfies `(f, g) = (−pχ_O, −P)`.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::game::{fixed_point, Game, Leaders, PicardOptions, SaddleSolution, Targets};
use crate::noise::{BinomialTree, TreeProcess};
use crate::spde::{backward_sweep, forward_sweep, Model};

#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedConfig {
    /// Final penalty.
    pub epsilon: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// Strictly decreasing penalties; the sweep ends at `epsilon`.
    pub epsilon_schedule: Vec<f64>,
}

impl Default for PenalizedConfig {
    fn default() -> Self {
        Self { epsilon: 1e-6, cg_tol: 1e-8, cg_max_iter: 5000, epsilon_schedule: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6] }
    }
}

impl PenalizedConfig {
    pub fn violations(&self) -> Vec<Error> {
        let mut out = Vec::new();
        let mut bad = |name: &'static str, reason: String| out.push(Error::InvalidParameter { name, reason });
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            bad("epsilon", format!("must be positive, got {}", self.epsilon));
        }
        if !(self.cg_tol > 0.0 && self.cg_tol < 1.0) {
            bad("cg_tol", format!("must lie in (0, 1), got {}", self.cg_tol));
        }
        if self.cg_max_iter == 0 {
            bad("cg_max_iter", "must be positive".into());
        }
        let s = &self.epsilon_schedule;
        if s.is_empty() {
            bad("epsilon_schedule", "must not be empty".into());
        } else {
            if s.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                bad("epsilon_schedule", "entries must be positive".into());
            }
            if s.windows(2).any(|w| !(w[1] < w[0])) {
                bad("epsilon_schedule", "must be strictly decreasing".into());
            }
            if s.last() != Some(&self.epsilon) {
                bad("epsilon_schedule", format!("must end at epsilon = {}", self.epsilon));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// Solution of the coupled adjoint system: backward `(p, P)`, forward `q`.
#[derive(Debug, Clone)]
pub struct AdjointSolution {
    /// Levels `0..=N`.
    pub p: TreeProcess,
    /// Levels `0..N-1`.
    pub pp: TreeProcess,
    /// Levels `0..=N`, zero at the root.
    pub q: TreeProcess,
    pub iterations: usize,
    pub residual: f64,
}

/// `(χ_D/β − 1/δ₁)` pointwise.
fn q_drift_weight(game: &Game<'_>) -> Vec<f64> {
    let p = game.params();
    game.model().masks().d.iter().map(|d| d / p.beta - 1.0 / p.delta1).collect()
}

fn q_forward(game: &Game<'_>, p: &TreeProcess, pp: &TreeProcess) -> TreeProcess {
    let model = game.model();
    let weight = q_drift_weight(game);
    let drift = p.map_nodes(0, |_, x, out| {
        out.iter_mut().zip(x.iter().zip(&weight)).for_each(|(o, (a, w))| *o = a * w);
    });
    let diffusion = pp.scaled(-1.0 / game.params().delta2);
    forward_sweep(model, &vec![0.0; model.n()], &drift, &diffusion)
}

/// Picard iteration for the coupled system: `(p, P)` backward from `p_T` with
/// source `M·q`, and `q` forward from zero with drift `(χ_D/β − 1/δ₁)p` and
/// diffusion `−P/δ₂`.
pub fn solve_adjoint_system(game: &Game<'_>, p_t: &[f64], opts: &PicardOptions) -> Result<AdjointSolution> {
    let model = game.model();
    let (n, depth) = (model.n(), model.depth());
    let leaves = BinomialTree::nodes_at(depth) * n;
    if p_t.len() != leaves {
        return Err(Error::ShapeMismatch(format!("p_T has {} values, the leaves need {leaves}", p_t.len())));
    }
    let last = depth - 1;
    let fp = fixed_point(model, opts, |p, pp| {
        let q = q_forward(game, p, pp);
        let (pn, ppn) = backward_sweep(model, p_t, &game.tracking_process(&q), true);
        Ok((pn.truncated(last), ppn.clone(), (pn, ppn)))
    })?;
    let (p, pp) = fp.value;
    let q = q_forward(game, &p.truncated(last), &pp);
    Ok(AdjointSolution { p, pp, q, iterations: fp.iterations, residual: fp.residual })
}

fn leader_inner(model: &Model, a: &Leaders, b: &Leaders) -> f64 {
    model.tree_inner(&a.f, &b.f) + model.tree_inner(&a.g, &b.g)
}

fn leader_axpy(y: &mut Leaders, alpha: f64, x: &Leaders) {
    y.f.axpy(alpha, &x.f);
    y.g.axpy(alpha, &x.g);
}

/// `𝔼 h‖y_N‖²`.
pub fn terminal_energy(model: &Model, y: &TreeProcess) -> f64 {
    model.grid().h() * y.mean_inner(y, model.depth())
}

#[derive(Debug, Clone)]
pub struct PenalizedGradient {
    pub grad: Leaders,
    pub saddle: SaddleSolution,
    pub adjoint: AdjointSolution,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct PenalizedSolution {
    pub epsilon: f64,
    pub leaders: Leaders,
    pub saddle: SaddleSolution,
    pub adjoint: AdjointSolution,
    pub objective: f64,
    /// `𝔼‖y(T)‖²`.
    pub terminal_energy: f64,
    /// `‖fχ_O‖²` and `‖g‖²`.
    pub f_norm_sq: f64,
    pub g_norm_sq: f64,
    pub cg_iterations: usize,
    /// `J_ε` after each accepted step, starting from the initial iterate.
    pub cg_history: Vec<f64>,
    /// `‖f + pχ_O‖/(1+‖f‖)` and `‖g + P‖/(1+‖g‖)`.
    pub characterization: [f64; 2],
    /// `‖∇J_ε‖ / ‖∇J_ε(0)‖` at the returned leaders.
    pub relative_gradient: f64,
}

/// Leader problem for fixed game, initial state and inner solver options.
#[derive(Debug, Clone)]
pub struct LeaderProblem<'g, 'a> {
    game: &'g Game<'a>,
    homogeneous: Game<'a>,
    y0: Vec<f64>,
    picard: PicardOptions,
}

impl<'g, 'a> LeaderProblem<'g, 'a> {
    pub fn new(game: &'g Game<'a>, y0: Vec<f64>, picard: PicardOptions) -> Result<Self> {
        let model = game.model();
        if y0.len() != model.n() {
            return Err(Error::ShapeMismatch(format!("y0 has length {}, grid has {}", y0.len(), model.n())));
        }
        let homogeneous = Game::new(model, game.params(), Targets::zeros(model))?;
        Ok(Self { game, homogeneous, y0, picard })
    }

    pub fn game(&self) -> &Game<'a> {
        self.game
    }

    pub fn y0(&self) -> &[f64] {
        &self.y0
    }

    pub fn model(&self) -> &'a Model {
        self.game.model()
    }

    fn masked(&self, leaders: &Leaders) -> Leaders {
        Leaders { f: leaders.f.masked(&self.model().masks().o), g: leaders.g.clone() }
    }

    /// `J_ε` for given leaders, re-solving the saddle point.
    pub fn objective(&self, leaders: &Leaders, epsilon: f64) -> Result<f64> {
        let saddle = self.game.solve_saddle_point(&self.y0, leaders, &self.picard)?;
        Ok(self.objective_from(leaders, &saddle.y.y, epsilon))
    }

    fn objective_from(&self, leaders: &Leaders, y: &TreeProcess, epsilon: f64) -> f64 {
        let model = self.model();
        let fo = leaders.f.masked(&model.masks().o);
        0.5 * (model.tree_sq_norm(&fo) + model.tree_sq_norm(&leaders.g)) + terminal_energy(model, y) / (2.0 * epsilon)
    }

    fn gradient_in(&self, game: &Game<'a>, y0: &[f64], leaders: &Leaders, epsilon: f64) -> Result<PenalizedGradient> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidParameter { name: "epsilon", reason: format!("must be positive, got {epsilon}") });
        }
        let model = self.model();
        let saddle = game.solve_saddle_point(y0, leaders, &self.picard)?;
        let p_t: Vec<f64> = saddle.y.y.level(model.depth()).iter().map(|v| v / epsilon).collect();
        let adjoint = solve_adjoint_system(game, &p_t, &self.picard)?;
        let last = model.depth() - 1;
        let chi_o = &model.masks().o;
        let mut f = leaders.f.clone();
        f.axpy(1.0, &adjoint.p.truncated(last));
        let mut g = leaders.g.clone();
        g.axpy(1.0, &adjoint.pp);
        let grad = Leaders { f: f.masked(chi_o), g };
        let objective = self.objective_from(leaders, &saddle.y.y, epsilon);
        Ok(PenalizedGradient { grad, saddle, adjoint, objective })
    }

    /// `(f + pχ_O, g + P)` with `p_T = y(T)/ε`.
    pub fn penalized_gradient(&self, leaders: &Leaders, epsilon: f64) -> Result<PenalizedGradient> {
        self.gradient_in(self.game, &self.y0, leaders, epsilon)
    }

    /// Hessian of `J_ε` applied to a direction.
    pub fn hessian_apply(&self, direction: &Leaders, epsilon: f64) -> Result<Leaders> {
        let zero = vec![0.0; self.model().n()];
        Ok(self.gradient_in(&self.homogeneous, &zero, direction, epsilon)?.grad)
    }

    fn relative_residuals(&self, grad: &Leaders, leaders: &Leaders) -> [f64; 2] {
        let m = self.model();
        let fo = leaders.f.masked(&m.masks().o);
        [
            m.tree_sq_norm(&grad.f).sqrt() / (1.0 + m.tree_sq_norm(&fo).sqrt()),
            m.tree_sq_norm(&grad.g).sqrt() / (1.0 + m.tree_sq_norm(&leaders.g).sqrt()),
        ]
    }

    /// Conjugate gradient on `J_ε` from `start` (zero when absent). Stops when
    /// the true gradient is at most `cg_tol` relative to the gradient at zero
    /// and both characterization residuals are at most `cg_tol`; the recursive
    /// residual only triggers a true-gradient check and restart.
    pub fn minimize_penalized(
        &self,
        epsilon: f64,
        config: &PenalizedConfig,
        start: Option<&Leaders>,
    ) -> Result<PenalizedSolution> {
        let model = self.model();
        let zero = Leaders::zeros(model);
        let mut u = match start {
            Some(s) => {
                model.check_control("f", &s.f)?;
                model.check_control("g", &s.g)?;
                self.masked(s)
            }
            None => zero.clone(),
        };
        let mut iterations = 0;
        let mut history = Vec::new();
        let mut reference = match start {
            Some(_) => {
                let g = self.penalized_gradient(&zero, epsilon)?.grad;
                leader_inner(model, &g, &g).sqrt()
            }
            None => f64::NAN,
        };
        loop {
            let true_grad = self.penalized_gradient(&u, epsilon)?;
            if reference.is_nan() {
                reference = leader_inner(model, &true_grad.grad, &true_grad.grad).sqrt();
            }
            let measure = |grad: &Leaders, u: &Leaders| -> ([f64; 2], f64) {
                let c = self.relative_residuals(grad, u);
                let g = leader_inner(model, grad, grad).sqrt();
                let relative = if g == 0.0 { 0.0 } else { g / reference };
                (c, relative)
            };
            let (residuals, relative) = measure(&true_grad.grad, &u);
            if history.is_empty() {
                history.push(true_grad.objective);
            }
            if residuals[0].max(residuals[1]).max(relative) <= config.cg_tol {
                let fo = u.f.masked(&model.masks().o);
                return Ok(PenalizedSolution {
                    epsilon,
                    f_norm_sq: model.tree_sq_norm(&fo),
                    g_norm_sq: model.tree_sq_norm(&u.g),
                    terminal_energy: terminal_energy(model, &true_grad.saddle.y.y),
                    objective: true_grad.objective,
                    leaders: u,
                    saddle: true_grad.saddle,
                    adjoint: true_grad.adjoint,
                    cg_iterations: iterations,
                    cg_history: history,
                    characterization: residuals,
                    relative_gradient: relative,
                });
            }
            if iterations >= config.cg_max_iter {
                return Err(Error::CgMaxIter { iterations, relative_gradient: relative });
            }
            let mut objective = true_grad.objective;
            let mut r = true_grad.grad;
            r.f.scale(-1.0);
            r.g.scale(-1.0);
            let mut d = r.clone();
            let mut rr = leader_inner(model, &r, &r);
            while iterations < config.cg_max_iter {
                let hd = self.hessian_apply(&d, epsilon)?;
                let curvature = leader_inner(model, &d, &hd);
                if !(curvature > 0.0) {
                    return Err(Error::InvalidParameter {
                        name: "epsilon",
                        reason: format!("nonpositive curvature {curvature:e} in conjugate gradient"),
                    });
                }
                let alpha = rr / curvature;
                leader_axpy(&mut u, alpha, &d);
                leader_axpy(&mut r, -alpha, &hd);
                objective -= 0.5 * alpha * rr;
                history.push(objective);
                iterations += 1;
                let (res, relative) = measure(&r, &u);
                if res[0].max(res[1]).max(relative) <= 0.5 * config.cg_tol {
                    break;
                }
                let rr_new = leader_inner(model, &r, &r);
                let beta = rr_new / rr;
                rr = rr_new;
                d.f.scale(beta);
                d.f.axpy(1.0, &r.f);
                d.g.scale(beta);
                d.g.axpy(1.0, &r.g);
            }
        }
    }

    /// One minimization per penalty, each warm-started from the previous.
    pub fn epsilon_sweep(&self, config: &PenalizedConfig) -> Result<Vec<PenalizedSolution>> {
        config.validate()?;
        let mut rows: Vec<PenalizedSolution> = Vec::with_capacity(config.epsilon_schedule.len());
        for &eps in &config.epsilon_schedule {
            let start = rows.last().map(|r| r.leaders.clone());
            let row = self
                .minimize_penalized(eps, config, start.as_ref())
                .map_err(|e| e.in_stage(format!("minimize_penalized(epsilon={eps:e})")))?;
            rows.push(row);
        }
        Ok(rows)
    }
}

/// One row of the sweep table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub terminal_energy: f64,
    pub f_norm_sq: f64,
    pub g_norm_sq: f64,
    pub objective: f64,
    pub cg_iterations: usize,
    pub characterization: [f64; 2],
}

impl From<&PenalizedSolution> for SweepRow {
    fn from(s: &PenalizedSolution) -> Self {
        Self {
            epsilon: s.epsilon,
            terminal_energy: s.terminal_energy,
            f_norm_sq: s.f_norm_sq,
            g_norm_sq: s.g_norm_sq,
            objective: s.objective,
            cg_iterations: s.cg_iterations,
            characterization: s.characterization,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub rows: Vec<SweepRow>,
    pub leaders: Leaders,
    /// Saddle point re-solved at the final leaders.
    pub saddle: SaddleSolution,
    /// `𝔼‖y0‖²`.
    pub initial_energy: f64,
    /// `𝔼‖ŷ(T)‖²` of the re-solved saddle.
    pub terminal_energy: f64,
    pub objective: f64,
    /// `‖f̂ + pχ_O‖/(1+‖f̂‖)` and `‖ĝ + P‖/(1+‖ĝ‖)` at the final penalty.
    pub characterization: [f64; 2],
    /// `‖f̂‖² + ‖ĝ‖²`.
    pub control_norm_sq: f64,
    /// `𝔼‖y0‖² + ∬ρ²Σ|y_dⁱ|²χᵢ`.
    pub data_norm_sq: f64,
    /// Empirical constant of the control estimate.
    pub control_ratio: f64,
    pub timings: Vec<(String, f64)>,
}

/// Sweep to the final penalty, re-solve the saddle at the resulting leaders
/// and evaluate the control estimate against `weighted_target_norm_sq`.
pub fn stackelberg_pipeline(
    problem: &LeaderProblem<'_, '_>,
    config: &PenalizedConfig,
    weighted_target_norm_sq: f64,
) -> Result<PipelineReport> {
    if !(weighted_target_norm_sq >= 0.0 && weighted_target_norm_sq.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "targets",
            reason: format!("weighted target norm must be finite, got {weighted_target_norm_sq}"),
        }
        .in_stage("stackelberg_pipeline"));
    }
    let model = problem.model();
    let mut timings = Vec::new();
    let clock = Instant::now();
    let solutions = problem.epsilon_sweep(config).map_err(|e| e.in_stage("epsilon_sweep"))?;
    timings.push(("epsilon_sweep".to_string(), clock.elapsed().as_secs_f64()));
    let last = solutions.last().expect("nonempty schedule");

    let clock = Instant::now();
    let saddle = problem
        .game()
        .solve_saddle_point(problem.y0(), &last.leaders, &problem.picard)
        .map_err(|e| e.in_stage("robust_game"))?;
    timings.push(("robust_game".to_string(), clock.elapsed().as_secs_f64()));

    let initial_energy = model.grid().norm_sq(problem.y0());
    let control_norm_sq = last.f_norm_sq + last.g_norm_sq;
    let data_norm_sq = initial_energy + weighted_target_norm_sq;
    let control_ratio = if data_norm_sq > 0.0 { control_norm_sq / data_norm_sq } else { 0.0 };
    Ok(PipelineReport {
        rows: solutions.iter().map(SweepRow::from).collect(),
        leaders: last.leaders.clone(),
        terminal_energy: terminal_energy(model, &saddle.y.y),
        saddle,
        initial_energy,
        objective: last.objective,
        characterization: last.characterization,
        control_norm_sq,
        data_norm_sq,
        control_ratio,
        timings,
    })
}

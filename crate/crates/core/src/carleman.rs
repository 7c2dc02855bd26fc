//! Auxiliary function `κ`, Carleman weights and empirical quotients.
//!
//! Weights are handled in log space: `θ = e^{−λα}` underflows long before the
//! quotients lose meaning, so weighted sums are accumulated as log-sum-exp.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::control::{solve_adjoint_system, AdjointSolution};
use crate::error::{Error, Result};
use crate::game::{Game, PicardOptions, Targets};
use crate::noise::{BinomialTree, TreeProcess};
use crate::space::Interval;
use crate::spde::{BackwardSolution, ForwardSolution, Model};

/// Points of the audit grid on `[0, 1]`.
pub const AUDIT_POINTS: usize = 10_000;

/// `κ = 4φ_m(1 − φ_m)` with `φ_m(x) = x + x(x − 1)(p + r·x)` the increasing
/// cubic through `(0, 0)`, `(c, ½)`, `(1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaFunction {
    interval: Interval,
    critical: f64,
    p: f64,
    r: f64,
}

impl KappaFunction {
    pub fn interval(&self) -> Interval {
        self.interval
    }

    /// The unique critical point, the midpoint of `𝓑`.
    pub fn critical_point(&self) -> f64 {
        self.critical
    }

    pub fn reparameterization(&self, x: f64) -> f64 {
        x + x * (x - 1.0) * (self.p + self.r * x)
    }

    pub fn reparameterization_slope(&self, x: f64) -> f64 {
        slope(self.p, self.r, x)
    }

    pub fn value(&self, x: f64) -> f64 {
        let u = self.reparameterization(x);
        4.0 * u * (1.0 - u)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let u = self.reparameterization(x);
        4.0 * self.reparameterization_slope(x) * (1.0 - 2.0 * u)
    }

    /// Checks every stated property on `points` equispaced audit points.
    pub fn audit(&self, points: usize) -> Result<()> {
        let fail = |what: String| Err(Error::AuditFailed(what));
        if points < 3 {
            return fail(format!("audit grid needs at least 3 points, got {points}"));
        }
        if min_slope(self.p, self.r) <= 0.0 {
            return fail("reparameterization is not strictly increasing".into());
        }
        if self.value(0.0) != 0.0 || self.value(1.0) != 0.0 {
            return fail("kappa(0) = kappa(1) = 0".into());
        }
        if (self.value(self.critical) - 1.0).abs() > 1e-12 {
            return fail(format!("max kappa = 1 (kappa(c) = {})", self.value(self.critical)));
        }
        if !(self.derivative(0.0) > 0.0) {
            return fail("kappa_x(0) > 0".into());
        }
        if !(self.derivative(1.0) < 0.0) {
            return fail("kappa_x(1) < 0".into());
        }
        for i in 1..points - 1 {
            let x = i as f64 / (points - 1) as f64;
            let k = self.value(x);
            if !(k > 0.0) {
                return fail(format!("kappa > 0 on (0, 1) (kappa({x}) = {k})"));
            }
            if k > 1.0 + 1e-12 {
                return fail(format!("max kappa = 1 (kappa({x}) = {k})"));
            }
            if !self.interval.contains(x) && !(self.derivative(x).abs() > 0.0) {
                return fail(format!("|kappa_x| > 0 outside B (x = {x})"));
            }
        }
        Ok(())
    }
}

fn slope(p: f64, r: f64, x: f64) -> f64 {
    1.0 + (2.0 * x - 1.0) * (p + r * x) + x * (x - 1.0) * r
}

/// Minimum of the quadratic slope on `[0, 1]`.
fn min_slope(p: f64, r: f64) -> f64 {
    // slope = 3r x² + 2(p − r) x + 1 − p
    let mut m = slope(p, r, 0.0).min(slope(p, r, 1.0));
    if r != 0.0 {
        let vertex = -(p - r) / (3.0 * r);
        if vertex > 0.0 && vertex < 1.0 {
            m = m.min(slope(p, r, vertex));
        }
    }
    m
}

/// Builds `κ` for `𝓑`, choosing the free cubic coefficient to maximize the
/// smallest slope, and audits it on [`AUDIT_POINTS`] points.
pub fn construct_kappa(b: Interval) -> Result<KappaFunction> {
    if !(b.left > 0.0 && b.left < b.right && b.right < 1.0) {
        return Err(Error::InvalidInterval { name: "B".into(), left: b.left, right: b.right });
    }
    let c = b.midpoint();
    // φ(c) = ½ fixes p + r·c
    let k = (0.5 - c) / (c * (c - 1.0));
    let score = |r: f64| min_slope(k - r * c, r);
    let (mut lo, mut hi) = (-64.0f64, 64.0f64);
    for _ in 0..300 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if score(m1) < score(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let r = if c == 0.5 { 0.0 } else { 0.5 * (lo + hi) };
    let kappa = KappaFunction { interval: b, critical: c, p: k - r * c, r };
    kappa.audit(AUDIT_POINTS)?;
    Ok(kappa)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarlemanParams {
    pub lambda: f64,
    pub mu: f64,
}

impl CarlemanParams {
    /// `λ = max(1, 2(T + T²))`, `μ = 2`.
    pub fn default_for(horizon: f64) -> Self {
        Self { lambda: (2.0 * (horizon + horizon * horizon)).max(1.0), mu: 2.0 }
    }

    pub fn violations(&self) -> Vec<Error> {
        let mut out = Vec::new();
        for (name, v) in [("lambda", self.lambda), ("mu", self.mu)] {
            if !(v >= 1.0 && v.is_finite()) {
                out.push(Error::InvalidParameter { name, reason: format!("must be at least 1, got {v}") });
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

/// Weights at one point `(t, x)`. `γ` is `+∞` and `θ` is `0` at `t ∈ {0, T}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightField {
    pub phi: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub theta: f64,
    pub log_theta: f64,
    pub gamma_bar: f64,
    pub alpha_bar: f64,
    pub theta_bar: f64,
    pub log_theta_bar: f64,
    pub rho: f64,
    pub log_rho: f64,
}

/// `φ(x) = e^{5μ} − e^{μ(κ(x)+3)}`.
pub fn phi(params: &CarlemanParams, kappa: &KappaFunction, x: f64) -> f64 {
    (5.0 * params.mu).exp() - (params.mu * (kappa.value(x) + 3.0)).exp()
}

/// `max_x φ = e^{5μ} − e^{3μ}`, attained where `κ = 0`.
pub fn phi_max(params: &CarlemanParams) -> f64 {
    (5.0 * params.mu).exp() - (3.0 * params.mu).exp()
}

/// `γ(t) = 1/(t(T − t))`.
pub fn gamma(horizon: f64, t: f64) -> f64 {
    1.0 / (t * (horizon - t))
}

/// `γ̄ = 1/ℓ` with `ℓ = T²/4` on `[0, T/2]` and `t(T − t)` after.
pub fn gamma_bar(horizon: f64, t: f64) -> f64 {
    if t <= 0.5 * horizon {
        1.0 / (horizon * horizon / 4.0)
    } else {
        gamma(horizon, t)
    }
}

pub fn evaluate_weights(params: &CarlemanParams, kappa: &KappaFunction, horizon: f64, t: f64, x: f64) -> WeightField {
    let phi = phi(params, kappa, x);
    let gamma = gamma(horizon, t);
    let alpha = phi * gamma;
    let log_theta = -params.lambda * alpha;
    let gamma_bar = gamma_bar(horizon, t);
    let alpha_bar = phi * gamma_bar;
    let log_theta_bar = -params.lambda * alpha_bar;
    let log_rho = params.lambda * (phi_max(params) * gamma_bar);
    WeightField {
        phi,
        gamma,
        alpha,
        theta: log_theta.exp(),
        log_theta,
        gamma_bar,
        alpha_bar,
        theta_bar: log_theta_bar.exp(),
        log_theta_bar,
        rho: log_rho.exp(),
        log_rho,
    }
}

/// Sampled suprema of the ratios behind the weight bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedConstants {
    pub entries: Vec<(&'static str, f64)>,
}

impl FittedConstants {
    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.1.is_finite())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == name).map(|e| e.1)
    }
}

/// `γ_t = (2t − T)γ²` and `γ_tt = 2γ² + 2(T − 2t)²γ³`.
pub fn gamma_derivatives(horizon: f64, t: f64) -> (f64, f64) {
    let g = gamma(horizon, t);
    let s = horizon - 2.0 * t;
    (-s * g * g, 2.0 * g * g + 2.0 * s * s * g * g * g)
}

/// Suprema over `samples` interior times and the audit grid in `x` of
/// `γ^{−s}/T^{2s}` (`s = 1, 2, 3`), `|γ_t|/(Tγ²)`, `|γ_tt|/(T²γ³)`,
/// `|α_t|/(Te^{5μ}γ²)` and `|α_tt|/(T²e^{5μ}γ³)`.
pub fn verify_parameter_bounds(
    params: &CarlemanParams,
    kappa: &KappaFunction,
    horizon: f64,
    samples: usize,
) -> FittedConstants {
    let e5 = (5.0 * params.mu).exp();
    let phi_sup = (0..AUDIT_POINTS)
        .map(|i| phi(params, kappa, i as f64 / (AUDIT_POINTS - 1) as f64).abs())
        .fold(0.0f64, f64::max);
    let mut sup = [0.0f64; 7];
    for i in 1..=samples {
        let t = horizon * i as f64 / (samples + 1) as f64;
        let g = gamma(horizon, t);
        let (gt, gtt) = gamma_derivatives(horizon, t);
        let values = [
            g.recip() / horizon.powi(2),
            g.powi(-2) / horizon.powi(4),
            g.powi(-3) / horizon.powi(6),
            gt.abs() / (horizon * g * g),
            gtt.abs() / (horizon * horizon * g * g * g),
            phi_sup * gt.abs() / (horizon * e5 * g * g),
            phi_sup * gtt.abs() / (horizon * horizon * e5 * g * g * g),
        ];
        for (s, v) in sup.iter_mut().zip(values) {
            *s = s.max(v);
        }
    }
    let names = [
        "gamma^-1/T^2",
        "gamma^-2/T^4",
        "gamma^-3/T^6",
        "|gamma_t|/(T gamma^2)",
        "|gamma_tt|/(T^2 gamma^3)",
        "|alpha_t|/(T e^(5mu) gamma^2)",
        "|alpha_tt|/(T^2 e^(5mu) gamma^3)",
    ];
    FittedConstants { entries: names.into_iter().zip(sup).collect() }
}

/// Weights tabulated on the tree levels and grid points of a model.
#[derive(Debug, Clone)]
pub struct WeightTable {
    params: CarlemanParams,
    /// `ln(λγ(t_k))`, `+∞` at the endpoints.
    log_lambda_gamma: Vec<f64>,
    /// `ln θ(t_k, x_j)`.
    log_theta: Vec<Vec<f64>>,
    /// `ln ρ(t_k)`.
    log_rho: Vec<f64>,
    in_b: Vec<f64>,
}

impl WeightTable {
    pub fn new(params: CarlemanParams, kappa: &KappaFunction, model: &Model) -> Result<Self> {
        params.validate()?;
        let horizon = model.tree().horizon();
        let xs = model.grid().x_points();
        let mut log_lambda_gamma = Vec::new();
        let mut log_theta = Vec::new();
        let mut log_rho = Vec::new();
        for k in 0..=model.depth() {
            let t = model.tree().time(k);
            let w: Vec<WeightField> = xs.iter().map(|&x| evaluate_weights(&params, kappa, horizon, t, x)).collect();
            log_lambda_gamma.push((params.lambda * w[0].gamma).ln());
            log_theta.push(w.iter().map(|f| f.log_theta).collect());
            log_rho.push(w[0].log_rho);
        }
        let b = kappa.interval();
        let in_b = xs.iter().map(|&x| if b.contains(x) { 1.0 } else { 0.0 }).collect();
        Ok(Self { params, log_lambda_gamma, log_theta, log_rho, in_b })
    }

    pub fn params(&self) -> CarlemanParams {
        self.params
    }

    pub fn log_rho(&self, level: usize) -> f64 {
        self.log_rho[level]
    }
}

/// Running `ln Σ e^{aᵢ}`.
#[derive(Debug, Clone, Copy)]
struct LogSum {
    max: f64,
    scaled: f64,
}

impl LogSum {
    fn new() -> Self {
        Self { max: f64::NEG_INFINITY, scaled: 0.0 }
    }

    fn add(&mut self, log_term: f64) {
        if log_term == f64::NEG_INFINITY || log_term.is_nan() {
            return;
        }
        if log_term <= self.max {
            self.scaled += (log_term - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - log_term).exp() + 1.0;
            self.max = log_term;
        }
    }

    fn merge(&mut self, other: LogSum) {
        if other.max > f64::NEG_INFINITY {
            self.add(other.max + other.scaled.ln());
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

/// Pointwise `𝔼|u|²` over the nodes of one level.
fn mean_square(p: &TreeProcess, level: usize, map: Option<&dyn Fn(&[f64]) -> Vec<f64>>) -> Vec<f64> {
    let n = p.width();
    let nodes = BinomialTree::nodes_at(level);
    let mut out = vec![0.0; n];
    for i in 0..nodes {
        let x = p.node(level, i);
        let v = match map {
            Some(f) => f(x),
            None => x.to_vec(),
        };
        out.iter_mut().zip(&v).for_each(|(o, a)| *o += a * a);
    }
    out.iter_mut().for_each(|o| *o /= nodes as f64);
    out
}

/// Which estimate a quotient refers to.
#[derive(Debug, Clone, Copy)]
pub enum CarlemanInstance<'s> {
    Forward(&'s ForwardSolution),
    Backward(&'s BackwardSolution),
    Coupled(&'s AdjointSolution),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarlemanQuotient {
    pub log_lhs: f64,
    pub log_rhs: f64,
    /// `LHS/RHS`; NaN when degenerate.
    pub quotient: f64,
    /// Zero right-hand side.
    pub degenerate: bool,
}

struct Quadrature<'t> {
    model: &'t Model,
    table: &'t WeightTable,
    levels: std::ops::RangeInclusive<usize>,
}

impl Quadrature<'_> {
    /// `ln 𝔼 Σ_k Σ_j dt·h·θ²(λγ)^d·mask·|u|²`.
    fn term(&self, p: &TreeProcess, d: i32, order: usize, mask: Option<&[f64]>, scale: f64) -> LogSum {
        let m = self.model;
        let log_cell = (m.tree().dt() * m.grid().h()).ln() + 2.0 * scale.abs().ln();
        let mut sum = LogSum::new();
        if scale == 0.0 {
            return sum;
        }
        for k in self.levels.clone() {
            let ms = match m.derivative(order) {
                Some(op) => mean_square(p, k, Some(&|x: &[f64]| op.apply(x))),
                None => mean_square(p, k, None),
            };
            let lg = d as f64 * self.table.log_lambda_gamma[k];
            for (j, v) in ms.iter().enumerate() {
                let w = mask.map_or(1.0, |mk| mk[j]);
                if *v > 0.0 && w > 0.0 {
                    sum.add(log_cell + 2.0 * self.table.log_theta[k][j] + lg + (v * w).ln());
                }
            }
        }
        sum
    }

    /// `𝓘(d, u)`.
    fn energy(&self, p: &TreeProcess, d: i32) -> LogSum {
        let mut s = self.term(p, d, 0, None, 1.0);
        s.merge(self.term(p, d - 2, 1, None, 1.0));
        s.merge(self.term(p, d - 4, 2, None, 1.0));
        s
    }
}

fn zero_order(model: &Model, u: &TreeProcess, uu: Option<&TreeProcess>, source: &TreeProcess, last: usize) -> TreeProcess {
    TreeProcess::from_fn(last, model.n(), |k, i, out| {
        let (a, b) = (model.a_at(k), model.b_at(k));
        let x = u.node(k, i);
        let s = source.node(k, i);
        for j in 0..out.len() {
            out[j] = a[j] * x[j] + s[j] + uu.map_or(0.0, |z| b[j] * z.node(k, i)[j]);
        }
    })
}

/// `LHS/RHS` of the forward, backward or coupled Carleman estimate on the
/// tree, excluding the two levels next to each endpoint.
pub fn carleman_quotient(model: &Model, table: &WeightTable, instance: CarlemanInstance<'_>) -> Result<CarlemanQuotient> {
    let depth = model.depth();
    if depth < 5 {
        return Err(Error::InvalidParameter {
            name: "depth",
            reason: format!("Carleman quotients exclude two levels at each end and need depth >= 5, got {depth}"),
        });
    }
    let q = Quadrature { model, table, levels: 2..=depth - 2 };
    let k = model.params().k;
    let chi_b = &table.in_b;
    let (lhs, rhs) = match instance {
        CarlemanInstance::Forward(sol) => {
            let z = &sol.y;
            let lhs = q.energy(z, 7);
            let mut rhs = q.term(z, 7, 0, Some(chi_b), 1.0);
            // F₁ = a·z + F, F₂ = −z_xx, F₃ = −k·z, F₄ = b·z + G
            let last = depth - 1;
            rhs.merge(q.term(&zero_order(model, z, None, &sol.drift, last), 0, 0, None, 1.0));
            rhs.merge(q.term(z, 2, 2, None, 1.0));
            rhs.merge(q.term(z, 4, 0, None, k));
            let f4 = TreeProcess::from_fn(last, model.n(), |kk, i, out| {
                let b = model.b_at(kk);
                let (x, g) = (z.node(kk, i), sol.diffusion.node(kk, i));
                for j in 0..out.len() {
                    out[j] = b[j] * x[j] + g[j];
                }
            });
            rhs.merge(q.term(&f4, 4, 0, None, 1.0));
            (lhs, rhs)
        }
        CarlemanInstance::Backward(sol) => {
            let z = &sol.z;
            let lhs = q.energy(z, 7);
            let mut rhs = q.term(z, 7, 0, Some(chi_b), 1.0);
            // F₁ = source − a·z − b·Z, F₂ = z_xx, F₃ = k·z
            let last = depth - 1;
            let f1 = if sol.zero_order {
                zero_order(model, z, Some(&sol.zz), &sol.source.scaled(-1.0), last).scaled(-1.0)
            } else {
                sol.source.truncated(last)
            };
            rhs.merge(q.term(&f1, 0, 0, None, 1.0));
            rhs.merge(q.term(z, 2, 2, None, 1.0));
            rhs.merge(q.term(z, 4, 0, None, k));
            rhs.merge(q.term(&sol.zz, 4, 0, None, 1.0));
            (lhs, rhs)
        }
        CarlemanInstance::Coupled(sol) => {
            let mut lhs = q.energy(&sol.p, 7);
            lhs.merge(q.energy(&sol.q, 9));
            let mut rhs = q.term(&sol.p, 47, 0, Some(&model.masks().o), 1.0);
            rhs.merge(q.term(&sol.pp, 9, 0, None, 1.0));
            (lhs, rhs)
        }
    };
    let (log_lhs, log_rhs) = (lhs.value(), rhs.value());
    let degenerate = log_rhs == f64::NEG_INFINITY;
    let quotient = if degenerate { f64::NAN } else { (log_lhs - log_rhs).exp() };
    Ok(CarlemanQuotient { log_lhs, log_rhs, quotient, degenerate })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservabilitySample {
    pub id: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub quotient: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityReport {
    pub samples: Vec<ObservabilitySample>,
    /// Samples with both sides zero.
    pub skipped: usize,
    pub max: f64,
    pub median: f64,
}

/// Median of a nonempty slice (mean of the middle pair for even length).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

/// Both sides of the observability inequality for one adjoint solution:
/// `𝔼‖p(0)‖² + 𝔼∬ρ⁻²(|q|² + |q_x|² + |q_xx|²)` and `𝔼∬(|p|²χ_O + |P|²)`.
pub fn observability_sides(model: &Model, table: &WeightTable, sol: &AdjointSolution) -> (f64, f64) {
    let (depth, dt, h) = (model.depth(), model.tree().dt(), model.grid().h());
    let mut lhs = model.grid().norm_sq(sol.p.node(0, 0));
    for k in 1..=depth {
        let scale = (-2.0 * table.log_rho[k]).exp();
        if scale == 0.0 {
            continue;
        }
        let mut s: f64 = mean_square(&sol.q, k, None).iter().sum();
        for order in 1..=2 {
            let op = model.derivative(order).expect("derivative");
            s += mean_square(&sol.q, k, Some(&|x: &[f64]| op.apply(x))).iter().sum::<f64>();
        }
        lhs += dt * h * scale * s;
    }
    let chi_o = &model.masks().o;
    let mut rhs = 0.0;
    for k in 0..depth {
        let p = mean_square(&sol.p, k, None);
        let pp = mean_square(&sol.pp, k, None);
        rhs += dt * h * (p.iter().zip(chi_o).map(|(a, c)| a * c).sum::<f64>() + pp.iter().sum::<f64>());
    }
    (lhs, rhs)
}

/// Observability quotients for `n_samples` independent standard Gaussian leaf
/// fields `p_T`.
pub fn observability_quotient(
    game: &Game<'_>,
    table: &WeightTable,
    n_samples: usize,
    seed: u64,
    picard: &PicardOptions,
) -> Result<ObservabilityReport> {
    let model = game.model();
    let leaves = BinomialTree::nodes_at(model.depth()) * model.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_samples);
    let mut skipped = 0;
    for id in 0..n_samples {
        let p_t: Vec<f64> = (0..leaves).map(|_| StandardNormal.sample(&mut rng)).collect();
        let sol = solve_adjoint_system(game, &p_t, picard)?;
        let (lhs, rhs) = observability_sides(model, table, &sol);
        if lhs == 0.0 && rhs == 0.0 {
            skipped += 1;
            continue;
        }
        samples.push(ObservabilitySample { id, lhs, rhs, quotient: lhs / rhs });
    }
    let quotients: Vec<f64> = samples.iter().map(|s| s.quotient).collect();
    let max = quotients.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let median = if quotients.is_empty() { f64::NAN } else { median(&quotients) };
    Ok(ObservabilityReport { samples, skipped, max, median })
}

/// `𝔼∬ρ²Σᵢ|y_dⁱ|²χᵢ` over levels `1..=N`; zero targets contribute nothing
/// even where `ρ` overflows.
pub fn weighted_target_norm(model: &Model, table: &WeightTable, targets: &Targets) -> f64 {
    let (depth, dt, h) = (model.depth(), model.tree().dt(), model.grid().h());
    let mut sum = LogSum::new();
    for k in 1..=depth {
        for order in 0..3 {
            let mask = model.masks().observation(order);
            for (j, v) in mean_square(targets.get(order), k, None).iter().enumerate() {
                if v * mask[j] > 0.0 {
                    sum.add((dt * h * v * mask[j]).ln() + 2.0 * table.log_rho[k]);
                }
            }
        }
    }
    sum.value().exp()
}

/// Targets `y_dⁱ = ρ⁻¹·rᵢ` and their weighted norm `𝔼∬Σᵢ|rᵢ|²χᵢ`, computed
/// from `rᵢ` directly so that it survives underflow of `ρ⁻¹`.
pub fn weighted_targets(model: &Model, table: &WeightTable, r: [TreeProcess; 3]) -> Result<(Targets, f64)> {
    let (depth, dt, h) = (model.depth(), model.tree().dt(), model.grid().h());
    let mut norm = 0.0;
    for (order, ri) in r.iter().enumerate() {
        model.check_state("weighted target", ri)?;
        let mask = model.masks().observation(order);
        for k in 1..=depth {
            norm += dt * h * mean_square(ri, k, None).iter().zip(mask).map(|(v, m)| v * m).sum::<f64>();
        }
    }
    let scaled = r.map(|ri| {
        let mut out = ri;
        for k in 0..=depth {
            let s = (-table.log_rho[k]).exp();
            out.level_mut(k).iter_mut().for_each(|v| *v *= s);
        }
        out
    });
    Ok((Targets::new(model, scaled)?, norm))
}

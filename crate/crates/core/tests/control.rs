mod common;

use common::{random_model, random_process, random_vec, rng};
use kskdv_core::control::{solve_adjoint_system, terminal_energy};
use kskdv_core::game::SaddleSystem;
use kskdv_core::{
    BinomialTree, Game, GameParams, LeaderProblem, Leaders, Model, PenalizedConfig, PicardOptions, Targets,
    TreeProcess,
};
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

const PARAMS: GameParams = GameParams { beta: 1e3, delta1: 1e3, delta2: 1e3 };

fn random_targets(r: &mut ChaCha8Rng, m: &Model) -> Targets {
    let (n, depth) = (m.n(), m.depth());
    Targets::new(m, [random_process(r, depth, n), random_process(r, depth, n), random_process(r, depth, n)]).unwrap()
}

fn random_leaders(r: &mut ChaCha8Rng, m: &Model) -> Leaders {
    let o = &m.masks().o;
    Leaders { f: random_process(r, m.depth() - 1, m.n()).masked(o), g: random_process(r, m.depth() - 1, m.n()) }
}

fn tracking_matrix(game: &Game<'_>) -> DMatrix<f64> {
    let n = game.model().n();
    DMatrix::from_fn(n, n, |r, c| {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        game.tracking_operator(&e)[r]
    })
}

/// Dense assembly of the scheme equations of the coupled adjoint system.
/// Unknowns: `p` and `P` on levels `0..N-1`, `q` on levels `1..=N`.
fn direct_adjoint(game: &Game<'_>, p_t: &[f64]) -> (TreeProcess, TreeProcess, TreeProcess) {
    let m = game.model();
    let (n, depth, dt, sdt) = (m.n(), m.depth(), m.tree().dt(), m.tree().sqrt_dt());
    let controls = ((1 << depth) - 1) * n;
    let states = ((1 << (depth + 1)) - 2) * n;
    let total = 2 * controls + states;
    let pi = |k: usize, i: usize| ((1 << k) - 1 + i) * n;
    let ppi = |k: usize, i: usize| controls + pi(k, i);
    let qi = |k: usize, i: usize| 2 * controls + ((1 << k) - 2 + i) * n;
    let step = m.stepper().drift().shifted_identity(dt).to_dense();
    let big_m = tracking_matrix(game);
    let gp = game.params();
    let w: Vec<f64> = m.masks().d.iter().map(|d| d / gp.beta - 1.0 / gp.delta1).collect();
    let mut k_mat = DMatrix::<f64>::zeros(total, total);
    let mut rhs = DVector::<f64>::zeros(total);
    // the adjoint rows of child c are stored at qi(c), the forward rows at the
    // position of p/P of the parent plus the branch offset
    let mut adj_row = 0;
    let mut fwd_row = states;
    for k in 0..depth {
        let (a1, b1) = if k + 1 < depth { (m.a_at(k + 1).to_vec(), m.b_at(k + 1).to_vec()) } else { (vec![0.0; n], vec![0.0; n]) };
        let (a0, b0) = (m.a_at(k), m.b_at(k));
        for i in 0..BinomialTree::nodes_at(k) {
            for (s, sign) in [(0usize, 1.0f64), (1, -1.0)] {
                let c = 2 * i + s;
                for r in 0..n {
                    let row = adj_row + r;
                    for col in 0..n {
                        let at = step[(col, r)];
                        k_mat[(row, pi(k, i) + col)] += at;
                        k_mat[(row, ppi(k, i) + col)] += sign * sdt * at;
                        k_mat[(row, qi(k + 1, c) + col)] += dt * big_m[(r, col)];
                    }
                    if k + 1 < depth {
                        k_mat[(row, pi(k + 1, c) + r)] -= 1.0 + dt * a1[r];
                        k_mat[(row, ppi(k + 1, c) + r)] -= dt * b1[r];
                    } else {
                        rhs[row] = p_t[c * n + r];
                    }
                }
                adj_row += n;
                for r in 0..n {
                    let row = fwd_row + r;
                    for col in 0..n {
                        k_mat[(row, qi(k + 1, c) + col)] += step[(r, col)];
                    }
                    if k >= 1 {
                        k_mat[(row, qi(k, i) + r)] -= 1.0 + dt * a0[r] + sign * sdt * b0[r];
                    }
                    k_mat[(row, pi(k, i) + r)] -= dt * w[r];
                    k_mat[(row, ppi(k, i) + r)] += sign * sdt / gp.delta2;
                }
                fwd_row += n;
            }
        }
    }
    assert_eq!(adj_row, states);
    assert_eq!(fwd_row, total);
    let x = k_mat.lu().solve(&rhs).unwrap();
    let p = TreeProcess::from_fn(depth, n, |k, i, out| {
        if k == depth {
            out.copy_from_slice(&p_t[i * n..(i + 1) * n]);
        } else {
            out.copy_from_slice(&x.as_slice()[pi(k, i)..pi(k, i) + n]);
        }
    });
    let pp = TreeProcess::from_fn(depth - 1, n, |k, i, out| out.copy_from_slice(&x.as_slice()[ppi(k, i)..ppi(k, i) + n]));
    let q = TreeProcess::from_fn(depth, n, |k, i, out| {
        if k > 0 {
            out.copy_from_slice(&x.as_slice()[qi(k, i)..qi(k, i) + n]);
        }
    });
    (p, pp, q)
}

fn rel(m: &Model, a: &TreeProcess, b: &TreeProcess) -> f64 {
    m.tree_sq_norm(&a.minus(b)).sqrt() / m.tree_sq_norm(b).sqrt().max(f64::MIN_POSITIVE)
}

#[test]
fn coupled_adjoint_matches_direct_assembly() {
    let mut r = rng(11);
    for _ in 0..3 {
        let m = random_model(&mut r, 8, 4);
        let game = Game::new(&m, GameParams { beta: 50.0, delta1: 80.0, delta2: 60.0 }, Targets::zeros(&m)).unwrap();
        let p_t = random_vec(&mut r, BinomialTree::nodes_at(4) * 8);
        let sol = solve_adjoint_system(&game, &p_t, &PicardOptions::default()).unwrap();
        let (p, pp, q) = direct_adjoint(&game, &p_t);
        let (dp, dpp, dq) = (rel(&m, &sol.p, &p), rel(&m, &sol.pp, &pp), rel(&m, &sol.q, &q));
        assert!(dp <= 1e-8 && dpp <= 1e-8 && dq <= 1e-8, "{dp:e} {dpp:e} {dq:e}");
        assert!(q.node(0, 0).iter().all(|v| *v == 0.0));
    }
}

#[test]
fn coupled_adjoint_trivial_cases() {
    let mut r = rng(12);
    let m = random_model(&mut r, 8, 3);
    let game = Game::new(&m, PARAMS, Targets::zeros(&m)).unwrap();
    let zero = vec![0.0; BinomialTree::nodes_at(3) * 8];
    let sol = solve_adjoint_system(&game, &zero, &PicardOptions::default()).unwrap();
    assert!(sol.p.is_zero() && sol.pp.is_zero() && sol.q.is_zero());

    // vanishing couplings leave the pure backward equation
    let huge = Game::new(&m, GameParams { beta: 1e300, delta1: 1e300, delta2: 1e300 }, Targets::zeros(&m)).unwrap();
    let p_t = random_vec(&mut r, zero.len());
    let sol = solve_adjoint_system(&huge, &p_t, &PicardOptions::default()).unwrap();
    assert!(sol.q.max_abs() < 1e-290);
    let (p, pp) = kskdv_core::spde::backward_sweep(&m, &p_t, &m.state_zeros(), true);
    assert_eq!(sol.p, p);
    assert_eq!(sol.pp, pp);
}

#[test]
fn gradient_matches_finite_differences() {
    let mut r = rng(13);
    let eps = 1e-2;
    let mut worst = 0.0f64;
    for _ in 0..2 {
        let m = random_model(&mut r, 12, 5);
        let game = Game::new(&m, PARAMS, random_targets(&mut r, &m)).unwrap();
        let problem = LeaderProblem::new(&game, random_vec(&mut r, 12), PicardOptions::default()).unwrap();
        let u = random_leaders(&mut r, &m);
        let grad = problem.penalized_gradient(&u, eps).unwrap();
        for _ in 0..3 {
            let d = random_leaders(&mut r, &m);
            let s = 1e-3;
            let shifted = |t: f64| {
                let mut x = u.clone();
                x.f.axpy(t, &d.f);
                x.g.axpy(t, &d.g);
                problem.objective(&x, eps).unwrap()
            };
            let fd = (shifted(s) - shifted(-s)) / (2.0 * s);
            let ad = m.tree_inner(&grad.grad.f, &d.f) + m.tree_inner(&grad.grad.g, &d.g);
            worst = worst.max((fd - ad).abs() / ad.abs());
        }
    }
    assert!(worst <= 1e-6, "relative error {worst:e}");
}

#[test]
fn gradient_trivial_cases() {
    let mut r = rng(14);
    let m = random_model(&mut r, 8, 3);
    let game = Game::new(&m, PARAMS, Targets::zeros(&m)).unwrap();
    let zero = LeaderProblem::new(&game, vec![0.0; 8], PicardOptions::default()).unwrap();
    let g = zero.penalized_gradient(&Leaders::zeros(&m), 1e-2).unwrap();
    assert!(g.grad.f.is_zero() && g.grad.g.is_zero());
    let sol = zero.minimize_penalized(1e-2, &PenalizedConfig::default(), None).unwrap();
    assert_eq!(sol.cg_iterations, 0);
    assert!(sol.leaders.f.is_zero() && sol.leaders.g.is_zero());

    let y0 = random_vec(&mut r, 8);
    let twice: Vec<f64> = y0.iter().map(|v| 2.0 * v).collect();
    let one = LeaderProblem::new(&game, y0, PicardOptions::default()).unwrap();
    let two = LeaderProblem::new(&game, twice, PicardOptions::default()).unwrap();
    let g1 = one.penalized_gradient(&Leaders::zeros(&m), 1e-2).unwrap().grad;
    let g2 = two.penalized_gradient(&Leaders::zeros(&m), 1e-2).unwrap().grad;
    assert!(rel(&m, &g2.f, &g1.f.scaled(2.0)) < 1e-12);
    assert!(rel(&m, &g2.g, &g1.g.scaled(2.0)) < 1e-12);
}

/// Minimizer of `J_ε` from dense normal equations; `y(T)` is affine in the
/// leaders and its columns come from the assembled saddle system.
fn dense_minimum(game: &Game<'_>, y0: &[f64], eps: f64) -> (f64, Leaders) {
    let m = game.model();
    let (n, depth, h, dt) = (m.n(), m.depth(), m.grid().h(), m.tree().dt());
    let system = SaddleSystem::assemble(game).unwrap();
    let leaves = |l: &Leaders| system.solve(y0, l).unwrap().y.y.level(depth).to_vec();
    let zero = Leaders::zeros(m);
    let c = DVector::from_vec(leaves(&zero));
    let mut basis = Vec::new();
    for k in 0..depth {
        for i in 0..BinomialTree::nodes_at(k) {
            for j in 0..n {
                if m.masks().o[j] > 0.0 {
                    basis.push((0, k, i, j));
                }
                basis.push((1, k, i, j));
            }
        }
    }
    let weights = DVector::from_iterator(basis.len(), basis.iter().map(|b| dt * h / (1u64 << b.1) as f64));
    let mut r_mat = DMatrix::zeros(c.len(), basis.len());
    for (col, &(which, k, i, j)) in basis.iter().enumerate() {
        let mut l = zero.clone();
        let target = if which == 0 { &mut l.f } else { &mut l.g };
        target.node_mut(k, i)[j] = 1.0;
        let y = DVector::from_vec(leaves(&l)) - &c;
        r_mat.set_column(col, &y);
    }
    let lambda = h / eps / (1u64 << depth) as f64;
    let hess = DMatrix::from_diagonal(&weights) + r_mat.transpose() * &r_mat * lambda;
    let rhs = -(r_mat.transpose() * &c) * lambda;
    let u = hess.lu().solve(&rhs).unwrap();
    let yt = &c + &r_mat * &u;
    let j = 0.5 * u.component_mul(&u).dot(&weights) + 0.5 * lambda * yt.dot(&yt);
    let mut leaders = zero;
    for (col, &(which, k, i, jj)) in basis.iter().enumerate() {
        let target = if which == 0 { &mut leaders.f } else { &mut leaders.g };
        target.node_mut(k, i)[jj] = u[col];
    }
    (j, leaders)
}

#[test]
fn conjugate_gradient_matches_dense_minimum() {
    let mut r = rng(15);
    let m = random_model(&mut r, 8, 3);
    let game = Game::new(&m, PARAMS, random_targets(&mut r, &m)).unwrap();
    let y0 = random_vec(&mut r, 8);
    let eps = 1e-2;
    let problem = LeaderProblem::new(&game, y0.clone(), PicardOptions::default()).unwrap();
    let config = PenalizedConfig { epsilon: eps, epsilon_schedule: vec![eps], ..PenalizedConfig::default() };
    let sol = problem.minimize_penalized(eps, &config, None).unwrap();
    let (j, leaders) = dense_minimum(&game, &y0, eps);
    assert!((sol.objective - j).abs() <= 1e-7 * j.abs(), "{} vs {j}", sol.objective);
    let (df, dg) = (rel(&m, &sol.leaders.f, &leaders.f), rel(&m, &sol.leaders.g, &leaders.g));
    assert!(df < 1e-6 && dg < 1e-6);
    assert!(sol.characterization.iter().all(|c| *c <= 10.0 * config.cg_tol));
    // steps below the resolution of J leave it unchanged
    let h = &sol.cg_history;
    assert!(h[1] < h[0] && h.windows(2).all(|w| w[1] <= w[0]), "{h:?}");
    assert!(sol.relative_gradient <= config.cg_tol);
    assert!((terminal_energy(&m, &sol.saddle.y.y) - sol.terminal_energy).abs() == 0.0);
}

#[test]
fn sweep_is_monotone() {
    let mut r = rng(16);
    let m = random_model(&mut r, 8, 3);
    let game = Game::new(&m, PARAMS, Targets::zeros(&m)).unwrap();
    let problem = LeaderProblem::new(&game, random_vec(&mut r, 8), PicardOptions::default()).unwrap();
    let config = PenalizedConfig { epsilon: 1e-4, epsilon_schedule: vec![1e-2, 1e-3, 1e-4], ..PenalizedConfig::default() };
    let rows = problem.epsilon_sweep(&config).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].terminal_energy <= w[0].terminal_energy);
        assert!(w[1].f_norm_sq + w[1].g_norm_sq >= w[0].f_norm_sq + w[0].g_norm_sq);
    }
}

mod common;

use common::{random_model, random_process, random_vec, rng};
use kskdv_core::game::relative_distance;
use kskdv_core::{Game, GameParams, Leaders, PicardOptions, Targets};

#[test]
fn picard_matches_direct_assembly() {
    let mut r = rng(3);
    for _ in 0..3 {
        let m = random_model(&mut r, 8, 4);
        let (n, depth) = (m.n(), m.depth());
        let targets = Targets::new(
            &m,
            [random_process(&mut r, depth, n), random_process(&mut r, depth, n), random_process(&mut r, depth, n)],
        )
        .unwrap();
        let game = Game::new(&m, GameParams { beta: 1e3, delta1: 1e3, delta2: 1e3 }, targets).unwrap();
        let leaders = Leaders { f: random_process(&mut r, depth - 1, n), g: random_process(&mut r, depth - 1, n) };
        let y0 = random_vec(&mut r, n);
        let picard = game.solve_saddle_point(&y0, &leaders, &PicardOptions::default()).unwrap();
        let direct = game.direct_assembly_solve(&y0, &leaders).unwrap();
        assert!(direct.residual < 1e-11, "assembled residual {}", direct.residual);
        let d = relative_distance(
            &m,
            &[&picard.psi1, &picard.psi2, &picard.v, &picard.y.y],
            &[&direct.psi1, &direct.psi2, &direct.v, &direct.y.y],
        );
        println!("iterations {} distance {d:e}", picard.picard_iterations);
        assert!(d <= 1e-8, "distance {d}");
        let foc = game.verify_first_order_conditions(&y0, &leaders, &picard, 3, 1).unwrap();
        assert!(foc <= 1e-6, "foc {foc}");
        let margins = game.verify_saddle_inequalities(&y0, &leaders, &picard, 20, 2).unwrap();
        assert_eq!(margins.violations, 0, "{margins:?}");
        let val = game.validate(5).unwrap();
        println!("{val:?} foc {foc:e}");
    }
}

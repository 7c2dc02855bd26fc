//! Deterministic fixtures for the benchmarks.

use kskdv_core::{
    BinomialTree, Coefficient, Game, GameParams, Grid, Interval, Leaders, Model, ModelParams, RegionMask, Regions,
    Targets, TreeProcess,
};

pub const REGIONS: Regions = Regions {
    o: Interval::new(0.2, 0.5),
    d: Interval::new(0.6, 0.8),
    od0: Interval::new(0.3, 0.7),
    od1: Interval::new(0.55, 0.75),
    od2: Interval::new(0.6, 0.9),
    b: None,
};

pub fn model(n: usize, depth: usize) -> Model {
    let grid = Grid::new(n).unwrap();
    let tree = BinomialTree::new(depth, 0.1).unwrap();
    let masks = RegionMask::build(&grid, &REGIONS).unwrap();
    let params =
        ModelParams { k: 1.0, eta: 0.01, horizon: 0.1, a: Coefficient::Constant(0.0), b: Coefficient::Constant(1.0) };
    Model::new(grid, tree, params, masks).unwrap()
}

/// Smooth pseudo-random process: a sine of the flat index.
pub fn process(last_level: usize, width: usize, phase: f64) -> TreeProcess {
    let mut i = 0.0;
    TreeProcess::from_fn(last_level, width, |_, _, out| {
        for v in out.iter_mut() {
            *v = (0.37 * i + phase).sin();
            i += 1.0;
        }
    })
}

pub fn initial_state(model: &Model) -> Vec<f64> {
    model.grid().sample(|x| (std::f64::consts::PI * x).sin() - 0.3 * (3.0 * std::f64::consts::PI * x).sin())
}

pub fn leaders(model: &Model) -> Leaders {
    let (n, last) = (model.n(), model.depth() - 1);
    Leaders { f: process(last, n, 0.1).masked(&model.masks().o), g: process(last, n, 0.7) }
}

pub fn game(model: &Model) -> Game<'_> {
    let params = GameParams { beta: 1e6, delta1: 1e6, delta2: 1e6 };
    Game::new(model, params, Targets::zeros(model)).unwrap()
}

//! Robust Stackelberg control of the linear stochastic Kuramoto–Sivashinsky–KdV
//! equation, discretized by finite differences in space and a binomial tree in
//! the noise.

pub mod carleman;
pub mod control;
pub mod error;
pub mod game;
pub mod noise;
pub mod space;
pub mod spde;

pub use error::{Error, GeometryClause, Result};
pub use noise::{BinomialTree, TreeProcess};
pub use space::{BandedOperator, Coefficient, Direction, Grid, Interval, ModelParams, RegionMask, Regions};
pub use spde::{BackwardInputs, BackwardSolution, ForwardInputs, ForwardSolution, Model};
pub use game::{CostReport, Game, GameParams, Leaders, PicardOptions, SaddleSolution, Targets};
pub use control::{AdjointSolution, LeaderProblem, PenalizedConfig, PenalizedSolution, PipelineReport, SweepRow};
pub use carleman::{CarlemanParams, KappaFunction, WeightTable};

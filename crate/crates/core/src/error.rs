use std::fmt;

use thiserror::Error;

/// Which geometric requirement on the control and observation regions failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometryClause {
    /// The leader region and the follower region share a grid point.
    ControlFollowerOverlap,
    /// The leader region does not meet the zero-order observation region.
    IntersectionEmpty,
    /// Every point of `O ∩ O_d^0` also lies in `O_d^1 ∪ O_d^2`.
    IntersectionCovered,
    /// The auxiliary set `B` is not contained in `O ∩ O_d^0`.
    AuxiliaryOutside,
    /// A region contains no grid point.
    EmptyRegion(&'static str),
}

impl fmt::Display for GeometryClause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ControlFollowerOverlap => write!(f, "O-D-overlap (O ∩ D must be empty)"),
            Self::IntersectionEmpty => write!(f, "intersection-empty (O ∩ O_d^0 must be nonempty)"),
            Self::IntersectionCovered => {
                write!(f, "intersection-covered (O ∩ O_d^0 must not lie inside O_d^1 ∪ O_d^2)")
            }
            Self::AuxiliaryOutside => write!(f, "B must lie inside O ∩ O_d^0"),
            Self::EmptyRegion(name) => write!(f, "region {name} contains no grid point"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid needs at least 8 interior points, got {0}")]
    GridTooSmall(usize),

    #[error("invalid interval for region {name}: ({left}, {right})")]
    InvalidInterval { name: String, left: f64, right: f64 },

    #[error("violated geometry: {0}")]
    ViolatedGeometry(GeometryClause),

    #[error("banded system is singular or ill-conditioned (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("tree depth must lie in 1..=20, got {0}")]
    TreeDepth(usize),

    #[error("level {level} out of range (process holds levels 0..={last})")]
    LevelOutOfRange { level: usize, last: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("fixed-point iteration stopped contracting after {} iterations (last residual {:.3e})", trace.len(), trace.last().copied().unwrap_or(f64::NAN))]
    NonContraction { trace: Vec<f64> },

    #[error("direct assembly too large: {unknowns} unknowns exceeds the limit {limit}")]
    SizeGuard { unknowns: usize, limit: usize },

    #[error("assembled system is singular")]
    SingularAssembly,

    #[error("auxiliary function audit failed: {0}")]
    AuditFailed(String),

    #[error("conjugate gradient hit the iteration cap ({iterations}) at relative gradient {relative_gradient:.3e}")]
    CgMaxIter { iterations: usize, relative_gradient: f64 },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps the error with the name of the failing stage.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage { stage: stage.into(), source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

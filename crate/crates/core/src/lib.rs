//! Solvers for weakly-convex-concave min-max problems
//! `min_x max_y f(x, y) − r(y) + g(x)`.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the bottom of this file fix `f64`, which is what the data layer and CLI use.

pub mod baselines;
pub mod data_io;
pub mod error;
pub mod geometry;
pub mod inner_solvers;
pub mod linalg;
pub mod outer_solvers;
pub mod problems;
pub mod scalar;
pub mod stationarity;

pub use baselines::{erm_sgd, pl_run, pl_step, ErmOptions, PlConfig, PlInner, StepSchedule};
pub use data_io::{Dataset, TraceRow};
pub use error::{Result, WccError};
pub use geometry::{BregmanGeometry, DualRegularizer, GeometryKind, PrimalConstraint};
pub use inner_solvers::{smd_solve, svrg_solve, OracleCounter, SaddleSubproblem, SvrgOverrides};
pub use linalg::Matrix;
pub use outer_solvers::{
    pg_smd, pg_svrg, sample_output_index, theorem_t, NoDiagnostics, PgSchedule, PgSmdOptions,
    PgSvrgOptions, RunTrace, SmdCase, TheoremMode, TraceHook,
};
pub use problems::{
    DroTruncatedLogistic, ProblemConstants, QuadraticBilinear, RobustMultiDist, Structure,
    WccProblem,
};
pub use scalar::Scalar;
pub use stationarity::{
    moreau_grad_norm, moreau_prox, psi_value, stationarity_report, ProxOptions, StationarityReport,
};

pub type DroProblem = DroTruncatedLogistic<f64>;
pub type MultiDistProblem = RobustMultiDist<f64>;
pub type QuadraticProblem = QuadraticBilinear<f64>;
pub type Trace = RunTrace<f64>;
pub type Report = StationarityReport<f64>;

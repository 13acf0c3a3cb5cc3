//! Regularised generalised canonical correlation analysis with structured
//! sparsity.
//!
//! Several data blocks measured on the same samples are reduced to one
//! weight vector each, chosen so the block scores covary as strongly as the
//! design asks for, subject to an l1 ball, a shrinkage ellipsoid and
//! optionally smoothed structured penalties (overlapping group lasso,
//! one-dimensional total variation).  The solver alternates accelerated
//! proximal-gradient updates over blocks; later components are obtained by
//! deflation.
//!
//! Entry points: [`Block::preprocess`] to prepare data, [`ModelSpec`] to
//! describe a fit, [`solver::fit`] to run it, and the [`evaluate`] and
//! [`simulate`] modules for model selection, stability and synthetic
//! benchmarks.

pub mod block;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod objective;
pub mod penalty;
pub mod project;
pub mod simulate;
pub mod solver;

pub use block::{read_matrix_csv, Block, Preprocessing, SvdCache};
pub use config::{
    BlockConstraint, Design, Init, ModelSpec, PenaltyAttachment, Scheme, Tolerances,
};
pub use error::{Error, Result};
pub use evaluate::{
    bootstrap_stability, classify_from_dummy, cross_validate, fleiss_kappa, inner_coeff,
    predict_block, r2_pred, CvAxis, CvGrid, CvParam, CvResult, PredictionModel, StabilityReport,
};
pub use objective::{covariance, gradient_phi, objective, objective_exact, ConstraintMatrix};
pub use penalty::{read_group_file, DualVector, LinearOperator};
pub use project::{
    dykstra, project_l1, project_w, soft_threshold, DykstraOutcome, EllipsoidSpec, NewtonReport,
    ProjectionReport,
};
pub use simulate::{
    default_groups, default_truth, generate, recovery_score, SimData, SimSpec, SimTruth,
};
pub use solver::{
    deflate, fit, fit_component, gradient_map, step_size, ComponentDiagnostics, FitResult,
    SolverState,
};

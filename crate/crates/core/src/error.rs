use std::path::PathBuf;

use thiserror::Error;

use crate::mesh::Region;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry infeasible: {0}")]
    GeometryInfeasible(String),

    #[error("mesh quality failure: element {element} has non-positive Jacobian ({det_j:.3e})")]
    MeshQualityFailure { element: usize, det_j: f64 },

    #[error("I/O failure on {path}: {message}")]
    IoFailure { path: PathBuf, message: String },

    #[error("malformed VTK file at line {line}: {message}")]
    VtkFormat { line: usize, message: String },

    #[error("material frame is degenerate: {0}")]
    FrameDegenerate(String),

    #[error("no material assigned to region {0:?}")]
    MissingMaterial(Region),

    #[error("element {element} is singular (det J = {det_j:.3e})")]
    SingularElement { element: usize, det_j: f64 },

    #[error("constraint set is empty: {0}")]
    EmptyConstraintSet(String),

    #[error("interior dielectric block is singular: {0}")]
    DielectricSingular(String),

    #[error("sparse factorization failed: {0}")]
    Factorization(String),

    #[error("eigensolver did not converge after {iterations} Lanczos steps ({converged}/{requested} pairs, worst residual {worst_residual:.3e})")]
    SolverNoConverge {
        iterations: usize,
        converged: usize,
        requested: usize,
        worst_residual: f64,
    },

    #[error("shift {shift_hz:.3} Hz coincides with an eigenvalue")]
    ShiftHitsEigenvalue { shift_hz: f64 },

    #[error("time step {dt:.3e} s exceeds the limit {limit:.3e} s (20 steps per drive period)")]
    StepTooLarge { dt: f64, limit: f64 },

    #[error("Rayleigh damping coefficients must be non-negative (alpha = {alpha}, beta = {beta})")]
    DampingNegative { alpha: f64, beta: f64 },

    #[error("electrode pattern incompatible: {0}")]
    IncompatiblePattern(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("no modes in band [{f_lo:.1}, {f_hi:.1}] Hz")]
    NoModesInBand { f_lo: f64, f_hi: f64 },

    #[error("frequency response needs non-zero damping")]
    DampingRequired,

    #[error("mode alignment conflict: {0}")]
    ModeAlignmentConflict(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid value for `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("stage `{stage}` requires `{missing}`, which has not been run and has no cached artifacts")]
    StageDependency { stage: String, missing: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::IoFailure {
            path: path.into(),
            message: err.to_string(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

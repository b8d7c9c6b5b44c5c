use thiserror::Error;

/// Errors raised while building, reading or deforming meshes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("triangle {0} has non-positive signed area {1:e}")]
    Orientation(usize, f64),
    #[error("deformation inverts {count} triangle(s)")]
    Inverted { count: usize },
    #[error("displacement is nonzero on immovable vertex {0}")]
    ImmovableDisplaced(usize),
    #[error("negative deformation step {0}")]
    NegativeStep(f64),
    #[error("design interface is empty")]
    EmptyInterface,
    #[error("malformed mesh: {0}")]
    Malformed(String),
    #[error("mesh file parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("triangulation failed: {0}")]
    Triangulation(String),
}

/// Errors from the finite element solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("field has {got} values but the mesh has {expected} vertices")]
    SizeMismatch { expected: usize, got: usize },
    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("tangent matrix is not positive definite")]
    Singular,
    #[error("invalid tolerance {0}")]
    Tolerance(f64),
    #[error("invalid material law: {0}")]
    Material(String),
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// Errors from objective evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("Q matrix is undefined at the origin")]
    Origin,
    #[error("gap ring region is empty")]
    EmptyGapRing,
    #[error("invalid gap ring radii r1 = {r1}, r2 = {r2}")]
    GapRadii { r1: f64, r2: f64 },
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Why a homotopy corrector or initialization failed.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrectorError {
    #[error("corrector did not converge in {} iterations (last residual {:e})", history.len().saturating_sub(1), history.last().copied().unwrap_or(f64::NAN))]
    NonConverged { history: Vec<f64> },
    #[error("step rejected: {reason}")]
    StepRejected {
        reason: String,
        /// Whether the rejection came from an inverted or degenerate mesh.
        mesh: bool,
        history: Vec<f64>,
    },
    #[error("shape Hessian failed: {0}")]
    Hessian(String),
    #[error("initial design is outside the corrector basin (gradient descent residual {gd_residual:e}): {source}")]
    InitBasinMiss {
        gd_residual: f64,
        #[source]
        source: Box<CorrectorError>,
    },
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Failures raised by a path problem while evaluating a design.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("design left the admissible set: {0}")]
    OutOfDomain(String),
    #[error("Hessian column {column}: {reason}")]
    HessianColumn { column: usize, reason: String },
    #[error("{0}")]
    Other(String),
}

/// Configuration errors.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("invalid value for {field}: {msg}")]
    Invalid { field: String, msg: String },
}

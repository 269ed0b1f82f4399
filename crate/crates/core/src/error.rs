use std::fmt;

/// Which part of a saddle-point system degenerated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// The mass (top-left) block is singular on the constraint null space.
    Mass,
    /// The constraint rows are linearly dependent.
    Constraint,
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Block::Mass => f.write_str("mass"),
            Block::Constraint => f.write_str("constraint"),
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("non-finite value {value} at q={q:?}, v={v:?}, t={t}")]
    Evaluation {
        value: f64,
        q: Vec<f64>,
        v: Vec<f64>,
        t: f64,
    },

    #[error("singular saddle system: {block} block degenerated (condition estimate {condition:e})")]
    Singular { block: Block, condition: f64 },

    #[error("velocity Hessian is singular (det = {det:e})")]
    Irregular { det: f64 },

    #[error("state is off the constraint manifold (max residual {residual:e})")]
    OffManifold { residual: f64 },

    #[error("effective mass is no longer positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    EffectiveMassSingular { min_eigenvalue: f64 },

    #[error("second-order constraints need an acceleration argument")]
    MissingAcceleration,

    #[error("invalid constraint set: {0}")]
    InvalidConstraint(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("projection did not converge after {iterations} iterations (residual {residual:e})")]
    ProjectionDiverged { iterations: usize, residual: f64 },

    #[error("deformation matrix must have positive determinant (det = {det:e})")]
    NonPositiveDeterminant { det: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("matrix is not orthogonal with respect to the metrics (defect {defect:e})")]
    NotOrthogonal { defect: f64 },

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

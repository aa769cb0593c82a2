use thiserror::Error;

/// Failure modes shared by every module.
///
/// The variants split into two families: malformed input (`Input`,
/// dimension and grade mismatches) and mathematical refusals, where the
/// data is well formed but a hypothesis of the requested computation fails.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BltError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("grade overflow: {a} + {b} exceeds dimension {d}")]
    GradeOverflow { a: usize, b: usize, d: usize },
    #[error("dimension {0} exceeds the supported maximum of 12")]
    DimensionTooLarge(usize),
    #[error("empty matrix")]
    EmptyMatrix,
    #[error("kernel dimensions sum to {sum}, expected {d}")]
    KernelDimensionMismatch { sum: usize, d: usize },
    #[error("datum is not in the direct-sum class: {0}")]
    NotClassC(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("scaling condition violated: sum p_j d_j = {lhs}, expected {d}")]
    ScalingCondition { lhs: f64, d: usize },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("refused: {0}")]
    Refused(String),
    #[error("invalid input: {0}")]
    Input(String),
}

impl BltError {
    /// True for errors where the inputs were well formed but the
    /// mathematics declined (mapped to exit status 2 by the CLI).
    pub fn is_refusal(&self) -> bool {
        !matches!(
            self,
            BltError::DimensionMismatch { .. }
                | BltError::GradeOverflow { .. }
                | BltError::DimensionTooLarge(_)
                | BltError::EmptyMatrix
                | BltError::Input(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, BltError>;

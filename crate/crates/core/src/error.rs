use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolyError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("not a rational number: {0:?}")]
    BadRational(String),
    #[error("invalid weights: {0}")]
    BadWeights(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("invalid chart: {0}")]
    InvalidChart(String),
    #[error("frame is singular at {0}")]
    SingularFrame(String),
    #[error("the frame is not a (G,H)-frame for the marked submanifold: field {field} is not tangent")]
    NotTangent { field: usize },
    #[error("zero operator has no H-order")]
    ZeroOperator,
    #[error("cap must be at least 1, got {0}")]
    BadCap(u32),
    #[error("unsupported step {0}: at most 6 is supported")]
    UnsupportedStep(u32),
    #[error("Jacobi identity fails for ({0}, {1}, {2})")]
    JacobiFailure(usize, usize, usize),
    #[error("representative does not vanish to H-order {grade} (order {found})")]
    GradeMismatch { grade: u32, found: String },
    #[error("linear system is rank-deficient: {0}")]
    RankDeficient(String),
    #[error("point is not on the marked submanifold")]
    NotOnSubmanifold,
    #[error("no marked submanifold")]
    NoSubmanifold,
    #[error("chart coordinates are not adapted to the submanifold: {0}")]
    NotAdapted(String),
    #[error("lambda must be nonzero")]
    ZeroLambda,
    #[error("division is not exact: {0}")]
    NonExactDivision(String),
    #[error("vector field is not Euler-like: {0}")]
    NotEulerLike(String),
    #[error("trajectory left the chart box at s = {s}")]
    DomainExit { s: f64 },
    #[error("step size underflow at s = {s}")]
    StepUnderflow { s: f64 },
    #[error("Rees element is invalid: coefficient of t^-{q} vanishes only to order {order}")]
    InvalidRees { q: i32, order: String },
    #[error("arrows are not composable: {0}")]
    NotComposable(String),
    #[error("{0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable snake-case name of the variant, used in machine-readable output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Poly(PolyError::DimensionMismatch { .. }) => "dimension_mismatch",
            Error::Poly(PolyError::BadRational(_)) => "bad_rational",
            Error::Poly(PolyError::BadWeights(_)) => "bad_weights",
            Error::InvalidChart(_) => "invalid_chart",
            Error::SingularFrame(_) => "singular_frame",
            Error::NotTangent { .. } => "not_tangent",
            Error::ZeroOperator => "zero_operator",
            Error::BadCap(_) => "bad_cap",
            Error::UnsupportedStep(_) => "unsupported_step",
            Error::JacobiFailure(..) => "jacobi_failure",
            Error::GradeMismatch { .. } => "grade_mismatch",
            Error::RankDeficient(_) => "rank_deficient",
            Error::NotOnSubmanifold => "not_on_submanifold",
            Error::NoSubmanifold => "no_submanifold",
            Error::NotAdapted(_) => "not_adapted",
            Error::ZeroLambda => "zero_lambda",
            Error::NonExactDivision(_) => "non_exact_division",
            Error::NotEulerLike(_) => "not_euler_like",
            Error::DomainExit { .. } => "domain_exit",
            Error::StepUnderflow { .. } => "step_underflow",
            Error::InvalidRees { .. } => "invalid_rees",
            Error::NotComposable(_) => "not_composable",
            Error::Parse(_) => "parse",
        }
    }

    /// Input that could not be read at all, as opposed to a failed precondition.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse(_) | Error::Poly(PolyError::BadRational(_)) | Error::Poly(PolyError::BadWeights(_))
        )
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AcxError {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("J^2 + I has sup-norm {residual:e} at {point:?} (tolerance {tol:e})")]
    NotAlmostComplex { residual: f64, point: [f64; 4], tol: f64 },

    #[error("similarity matrix nearly singular: |det S| = {det:e} at {point:?}")]
    SingularSimilarity { det: f64, point: [f64; 4] },

    #[error("degenerate frame at {point:?}: |det| = {det:e} below threshold {threshold:e}")]
    DegenerateFrame { point: [f64; 4], det: f64, threshold: f64 },

    #[error("test function support touches the boundary margin: {0}")]
    SupportTooLarge(String),

    #[error("schedule is not monotone: step {step} violates the order by {gap:e} at {point:?}")]
    NonMonotoneSchedule { step: usize, gap: f64, point: [f64; 4] },

    #[error("negative cell mass {mass:e} at cell {cell} (iterate {step} is not psh)")]
    NegativeMass { mass: f64, cell: usize, step: usize },

    #[error("model not psh: {0}")]
    NotPsh(String),

    #[error("seam condition violated at {point:?}: {what}")]
    SeamViolation { point: [f64; 4], what: String },

    #[error("local candidate failed verification ({inequality}) at {point:?}: {detail}")]
    CandidateRejected { inequality: String, point: [f64; 4], detail: String },

    #[error("strictness margin not established: {0}")]
    NoMargin(String),

    #[error("cover generation failed: {0}")]
    CoverFailure(String),

    #[error("no admissible gluing width at piece {piece}: binding constraint {constraint} = {value:e}")]
    InfeasibleWidth { piece: usize, constraint: String, value: f64 },

    #[error("invalid Dirichlet problem: {0}")]
    InvalidProblem(String),

    #[error("too few radii for a fit: {0} (need at least 3)")]
    TooFewRadii(usize),

    #[error("grid field queried outside its valid interior at {0:?}")]
    OutsideGrid([f64; 4]),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AcxError>;

use crate::expr::{EvalError, ParseError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at {0}")]
    Parse(#[from] ParseError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error("line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("admissibility violation: psi for `{dependent}` uses dependent velocity `{velocity}`")]
    Admissibility { dependent: String, velocity: String },

    #[error("unknown variable `{name}` in {context}")]
    UnknownVariable { context: String, name: String },

    #[error("{what}: expected {expected} components, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("system `{0}` is not declared linear in the velocities")]
    NotLinear(String),

    #[error("system declared linear but verification failed at {witness}")]
    LinearityViolated { witness: String },

    #[error("singular {which} (det = {det:e}) at {state}")]
    Singular {
        which: &'static str,
        det: f64,
        state: String,
    },

    #[error("ambient velocity Hessian is singular at q = {q:?}")]
    SingularHessian { q: Vec<f64> },

    #[error("unknown model `{name}`; catalog: {}", .known.join(", "))]
    UnknownModel { name: String, known: Vec<String> },

    #[error("step size underflow or too many rejections: {reason}")]
    StepFailure { reason: String },

    #[error("at t = {t}: {source}")]
    AtTime {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("sampling failed after {attempts} attempts: {last}")]
    Sampling { attempts: usize, last: Box<Error> },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Eval(_)
            | Error::Singular { .. }
            | Error::SingularHessian { .. }
            | Error::StepFailure { .. }
            | Error::Sampling { .. } => true,
            Error::AtTime { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// A structural rule of the robot description does not hold.
    #[error("invalid description: {rule} (offending id `{id}`)")]
    Invariant { rule: String, id: String },

    #[error("joint module capacity exceeded: {center} holds at most {capacity} axes, got {got}")]
    Capacity {
        center: &'static str,
        capacity: usize,
        got: usize,
    },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unknown {kind} `{id}`")]
    Unknown { kind: &'static str, id: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("negative tension {value} N at index {index}")]
    NegativeTension { index: usize, value: f64 },

    #[error("singular fit: {0}")]
    SingularFit(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// IK gave up; `record` holds the non-increasing residual history.
    #[error("inverse kinematics did not converge after {iterations} iterations (residual {residual:e})")]
    IkNoConvergence {
        iterations: usize,
        residual: f64,
        record: Vec<f64>,
    },

    #[error("infeasible tension distribution (residual {residual:e})")]
    Infeasible { residual: f64 },

    #[error("{context}: {source}")]
    Step {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invariant(rule: impl Into<String>, id: impl Into<String>) -> Self {
        Error::Invariant {
            rule: rule.into(),
            id: id.into(),
        }
    }

    /// Wraps an error with the experiment step it came from.
    pub fn at(self, context: impl Into<String>) -> Self {
        Error::Step {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

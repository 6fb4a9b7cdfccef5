use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input out of domain: {0}")]
    InputDomain(String),

    #[error("terminal voltage {0} pu is too close to zero")]
    SingularVoltage(f64),

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("pcc iteration did not converge, trace {trace:?}")]
    PccNonConvergence { trace: Vec<f64> },

    #[error("simulation aborted at step {step}: {source}")]
    SimulationAbort {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("reactive power {q_equ} pu exceeds the LVRT capability of {n_machines} machines")]
    InfeasibleReactive { q_equ: f64, n_machines: u32 },

    #[error(
        "no feasible equivalent line for p={p_equ}, q={q_equ}, alpha_equ={alpha_equ}, alpha_pcc={alpha_pcc}, k0={k0}"
    )]
    NoFeasibleLine {
        p_equ: f64,
        q_equ: f64,
        alpha_equ: f64,
        alpha_pcc: f64,
        k0: f64,
    },

    #[error("classification inconsistency: {0}")]
    ClassificationInconsistency(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("scenario schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema(_) | Error::Json(_) => 2,
            Error::NonConvergence { .. } | Error::PccNonConvergence { .. } => 3,
            Error::SimulationAbort { source, .. } => source.exit_code(),
            Error::InfeasibleReactive { .. } | Error::NoFeasibleLine { .. } => 4,
            _ => 1,
        }
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure mode of the library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("pitch {theta:.4} rad is within the singularity margin of +-pi/2")]
    SingularOrientation { theta: f64 },
    #[error("linearization point is not an equilibrium (residual {residual:.3e})")]
    NotEquilibrium { residual: f64 },
    #[error("desired thrust vector vanishes")]
    DegenerateThrust,
    #[error("derivative order {order} exceeds spline degree {degree}")]
    OrderTooHigh { order: usize, degree: usize },
    #[error("segment {segment}: infeasible: {reason}")]
    Infeasible { segment: usize, reason: String },
    #[error("equality constraints are rank deficient: {0}")]
    RankDeficient(String),
    #[error("solver stalled after {iterations} iterations")]
    SolverStalled { iterations: usize },
    #[error("time {t} outside of [0, {duration}]")]
    OutOfDomain { t: f64, duration: f64 },
    #[error("Riccati iteration did not converge (residual {residual:.3e})")]
    RiccatiNoConvergence { residual: f64 },
    #[error("pair (A, B) is not stabilizable")]
    NotStabilizable,
    #[error("grasp failed: hook-payload distance {distance:.4} m exceeds {tolerance:.4} m")]
    GraspFailed { distance: f64, tolerance: f64 },
    #[error("simulation diverged at t = {t:.3} s")]
    Diverged { t: f64 },
    #[error("state norm exceeded the blow-up guard")]
    NumericalBlowup,
    #[error("no feasible hyperparameter point")]
    NoFeasiblePoint,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Attaches a segment index to planner failures raised without one.
    pub(crate) fn in_segment(self, segment: usize) -> Self {
        match self {
            Error::Infeasible { reason, .. } => Error::Infeasible { segment, reason },
            Error::SolverStalled { iterations } => {
                Error::Infeasible { segment, reason: format!("solver stalled after {iterations} iterations") }
            }
            other => other,
        }
    }
}

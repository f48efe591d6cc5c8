//! Dual-mode control: robust geometric tracking, payload feedforward, the
//! hover payload regulator and the mission schedule switching between them.

pub mod geometric;
pub mod lqr;
pub mod schedule;

pub use geometric::{
    desired_attitude, feedforward_thrust, geometric_control, robust_attitude_term, robust_position_term, GeomGains,
    TrackingReference,
};
pub use lqr::{lqr_control, lqr_design, regulator_state, solve_care, LqrGain, LqrWeights};
pub use schedule::{scheduled_control, ControllerSchedule, Mode, DEFAULT_LQR_DURATION};

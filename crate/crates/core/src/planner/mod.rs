//! Trajectory planning: spatial B-spline QPs, temporal SOCPs and yaw
//! polynomials, assembled into the five-segment mission.

pub mod frame;
pub mod mission;
pub mod qp;
pub mod socp;
pub mod spatial;
pub mod temporal;
pub mod yaw;

pub use frame::PayloadFrame;
pub use mission::{plan_mission, plan_mission_timed, HyperParams, MissionPlan, MissionSpec, PlanTiming, Reference};
pub use temporal::{solve_temporal, time_map, TemporalSettings, TimeProfile};

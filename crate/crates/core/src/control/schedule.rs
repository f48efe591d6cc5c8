//! Mode switching along the mission: geometric control before the grasp and
//! after release, geometric control with payload feedforward while carrying,
//! and the payload regulator while holding at waypoint D.

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::geometric::{desired_attitude, feedforward_thrust, geometric_control, GeomGains, TrackingReference};
use super::lqr::{lqr_control, regulator_state, LqrGain};
use crate::error::Result;
use crate::model::{flat_outputs_to_attitude, ControlInput, FullState, SystemParams};
use crate::planner::MissionPlan;
use crate::so3::vee;

/// Step used to differentiate the reference attitude (the 500 Hz control period).
pub const ATTITUDE_FD_STEP: f64 = 2e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Geometric control with payload feedforward.
    C1,
    /// Geometric control.
    C2,
    /// Payload regulator.
    C3,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::C1 => "C1",
            Mode::C2 => "C2",
            Mode::C3 => "C3",
        })
    }
}

/// Maps mission time to `(mode, plan time)`. The plan is paused at the end of
/// segment 3 for `lqr_duration` seconds while the regulator holds point D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSchedule {
    /// Plan-time boundaries of the five segments (six entries).
    pub boundaries: Vec<f64>,
    pub lqr_duration: f64,
}

/// Default regulator hold time at D [s].
pub const DEFAULT_LQR_DURATION: f64 = 2.0;

impl ControllerSchedule {
    pub fn new(plan: &MissionPlan, lqr_duration: f64) -> Self {
        Self { boundaries: plan.boundary_times(), lqr_duration }
    }

    pub fn hold_start(&self) -> f64 {
        self.boundaries[3]
    }

    pub fn hold_end(&self) -> f64 {
        self.boundaries[3] + self.lqr_duration
    }

    pub fn total_duration(&self) -> f64 {
        self.boundaries[5] + self.lqr_duration
    }

    pub fn plan_time(&self, t: f64) -> f64 {
        if t < self.hold_start() {
            t
        } else if t < self.hold_end() {
            self.hold_start()
        } else {
            t - self.lqr_duration
        }
    }

    pub fn mode(&self, t: f64) -> Mode {
        if t < self.boundaries[2] {
            Mode::C2
        } else if t < self.hold_start() {
            Mode::C1
        } else if t < self.hold_end() {
            Mode::C3
        } else if t - self.lqr_duration < self.boundaries[4] {
            Mode::C1
        } else {
            Mode::C2
        }
    }

    /// Mission times of the two switches into and out of the regulator.
    pub fn regulator_switches(&self) -> [f64; 2] {
        [self.hold_start(), self.hold_end()]
    }
}

/// Feedforward attitude of the plan at plan time `t`.
fn reference_attitude(plan: &MissionPlan, t: f64, p: &SystemParams) -> Result<Matrix3<f64>> {
    let r = plan.reference(t);
    flat_outputs_to_attitude(&r.acc, r.psi, p)
}

/// `(omega_d, omega_dot_d)` from central differences of the reference attitude.
pub fn reference_rates(plan: &MissionPlan, t: f64, p: &SystemParams) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let h = ATTITUDE_FD_STEP;
    let r: Vec<Matrix3<f64>> =
        (-2..=2).map(|k| reference_attitude(plan, t + k as f64 * h, p)).collect::<Result<_>>()?;
    let rate = |i: usize| vee(&(r[i].transpose() * (r[i + 1] - r[i - 1]))) / (2.0 * h);
    let omega = rate(2);
    let omega_dot = (rate(3) - rate(1)) / (2.0 * h);
    Ok((omega, omega_dot))
}

/// Controller output at mission time `t`. `p` carries the mass of the payload
/// scheduled for this mission; it is used for feedforward and by the regulator.
pub fn scheduled_control(
    t: f64,
    state: &FullState,
    plan: &MissionPlan,
    schedule: &ControllerSchedule,
    gains: &GeomGains,
    lqr: &LqrGain,
    p: &SystemParams,
) -> Result<(ControlInput, Mode)> {
    let mode = schedule.mode(t);
    let tp = schedule.plan_time(t);
    if mode == Mode::C3 {
        let hold = plan.reference(tp);
        let rel = regulator_state(state, &hold.pos, hold.psi);
        let mut u = lqr_control(&rel, lqr);
        u.thrust = u.thrust.clamp(0.0, 4.0 * p.hover_thrust());
        return Ok((u, mode));
    }
    let r = plan.reference(tp);
    let quad = state.quad_state();
    let rot = desired_attitude(&quad, &r.pos, &r.vel, &r.acc, r.psi, gains, p)?;
    let (omega, omega_dot) = reference_rates(plan, tp, p)?;
    let reference = TrackingReference { pos: r.pos, vel: r.vel, acc: r.acc, rot, omega, omega_dot };
    let mut u = geometric_control(&quad, &reference, gains, p);
    if mode == Mode::C1 {
        u.thrust = feedforward_thrust(u.thrust, &quad.rot, p);
    }
    Ok((u, mode))
}

//! Fixed-step closed-loop simulation of the manipulator model with hook
//! attach/release events, trace logging and tracking metrics.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::control::{
    lqr_design, scheduled_control, ControllerSchedule, GeomGains, LqrWeights, Mode, DEFAULT_LQR_DURATION,
};
use crate::error::{Error, Result};
use crate::model::{state_derivative, ControlInput, FullState, SystemParams, Vector14};
use crate::planner::{MissionPlan, MissionSpec};

/// State-norm guard of the integrator.
pub const BLOWUP_NORM: f64 = 1e6;

/// One classic Runge-Kutta step of the full model under a held input.
pub fn step(state: &FullState, u: &ControlInput, p: &SystemParams, dt: f64) -> Result<FullState> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    let x = state.to_vector();
    let f = |x: &Vector14| state_derivative(x, u, p);
    let k1 = f(&x)?;
    let k2 = f(&(x + k1 * (0.5 * dt)))?;
    let k3 = f(&(x + k2 * (0.5 * dt)))?;
    let k4 = f(&(x + k3 * dt))?;
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if !(next.norm() <= BLOWUP_NORM) {
        return Err(Error::NumericalBlowup);
    }
    Ok(FullState::from_vector(&next))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Integration step [s].
    pub dt: f64,
    /// Controller period [s]; an integer multiple of `dt`.
    pub control_dt: f64,
    /// Hard cap on simulated time [s].
    pub max_duration: f64,
    /// Regulator hold time at D [s].
    pub lqr_duration: f64,
    /// Grasp succeeds when the hook tip is within this fraction of `d_h` of the payload.
    pub attach_radius_factor: f64,
    /// Displacement of the real payload from the position given to the planner [m].
    pub payload_offset: Vector3<f64>,
    /// Position error at which the run is declared diverged [m].
    pub divergence_error: f64,
    /// Standard deviation of Gaussian noise on the measured position [m]; 0 disables it.
    pub position_noise: f64,
    pub seed: u64,
    pub gains: GeomGains,
    pub lqr_weights: LqrWeights,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            control_dt: 2e-3,
            max_duration: 600.0,
            lqr_duration: DEFAULT_LQR_DURATION,
            attach_radius_factor: 0.5,
            payload_offset: Vector3::zeros(),
            divergence_error: 2.0,
            position_noise: 0.0,
            seed: 0,
            gains: GeomGains::default(),
            lqr_weights: LqrWeights::default(),
        }
    }
}

impl SimConfig {
    pub fn substeps(&self) -> Result<usize> {
        let ratio = self.control_dt / self.dt;
        let n = ratio.round();
        if !(self.dt > 0.0) || n < 1.0 || (ratio - n).abs() > 1e-9 {
            return Err(Error::invalid("control_dt must be a positive integer multiple of dt"));
        }
        Ok(n as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    pub state: FullState,
    pub input: ControlInput,
    pub mode: Mode,
    pub attached: bool,
    pub reference: Vector3<f64>,
    pub hook: Vector3<f64>,
    pub payload: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    Attach,
    Release,
    Switch { from: Mode, to: Mode },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub samples: Vec<TraceSample>,
    pub events: Vec<SimEvent>,
    /// Hook-payload distance at the grasp instant [m].
    pub grasp_distance: f64,
    /// Height of the carried payload above its support at release [m]; negative
    /// when the descent would press it into the support.
    pub release_height: f64,
    /// Where the payload came to rest after release.
    pub payload_rest: Vector3<f64>,
    pub payload_target: Vector3<f64>,
    pub segment_durations: Vec<f64>,
}

impl SimTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "t,x,y,z,phi,theta,psi,alpha,vx,vy,vz,dphi,dtheta,dpsi,dalpha,F,taux,tauy,tauz,mode,mL_attached\n",
        );
        for s in &self.samples {
            out.push_str(&format!("{:.6}", s.t));
            for v in s.state.xi.iter().chain(s.state.xi_dot.iter()) {
                out.push_str(&format!(",{v:.9}"));
            }
            let u = &s.input;
            out.push_str(&format!(
                ",{:.9},{:.9},{:.9},{:.9},{},{}\n",
                u.thrust,
                u.torque.x,
                u.torque.y,
                u.torque.z,
                s.mode,
                u8::from(s.attached)
            ));
        }
        out
    }

    pub fn control_log_csv(&self) -> String {
        let mut out = String::from("t,F,tau_x,tau_y,tau_z,mode\n");
        for s in &self.samples {
            let u = &s.input;
            out.push_str(&format!(
                "{:.6},{:.9},{:.9},{:.9},{:.9},{}\n",
                s.t, u.thrust, u.torque.x, u.torque.y, u.torque.z, s.mode
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Root-mean-square position tracking error [m].
    pub rmse: f64,
    /// Peak position tracking error [m].
    pub max_error: f64,
    pub final_payload_error: f64,
    pub max_swing: f64,
    pub grasp_distance: f64,
    pub release_height: f64,
    pub segment_durations: Vec<f64>,
    pub mission_time: f64,
}

pub fn metrics(trace: &SimTrace) -> Metrics {
    let n = trace.samples.len().max(1) as f64;
    let errs: Vec<f64> = trace.samples.iter().map(|s| (s.state.position() - s.reference).norm()).collect();
    Metrics {
        rmse: (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        max_error: errs.iter().cloned().fold(0.0, f64::max),
        final_payload_error: (trace.payload_rest - trace.payload_target).norm(),
        max_swing: trace.samples.iter().map(|s| s.state.alpha().abs()).fold(0.0, f64::max),
        grasp_distance: trace.grasp_distance,
        release_height: trace.release_height,
        segment_durations: trace.segment_durations.clone(),
        mission_time: trace.samples.last().map_or(0.0, |s| s.t),
    }
}

/// Initial state: at rest attitude-wise, at the mission start with its velocity and yaw.
pub fn initial_state(spec: &MissionSpec) -> FullState {
    let mut s = FullState::default();
    s.xi.fixed_rows_mut::<3>(0).copy_from(&spec.r0);
    s.xi[5] = spec.psi0;
    s.xi_dot.fixed_rows_mut::<3>(0).copy_from(&spec.v0);
    s
}

/// Flies the mission. `p.payload_mass` is the mass of the payload to be
/// picked up; it enters the dynamics only between grasp and release.
pub fn run_mission(spec: &MissionSpec, plan: &MissionPlan, cfg: &SimConfig, p: &SystemParams) -> Result<SimTrace> {
    simulate(spec, plan, cfg, p, false)
}

/// Flies only up to the grasp instant and returns the hook-payload distance there.
pub fn run_to_grasp(spec: &MissionSpec, plan: &MissionPlan, cfg: &SimConfig, p: &SystemParams) -> Result<f64> {
    simulate(spec, plan, cfg, p, true).map(|trace| trace.grasp_distance)
}

fn simulate(
    spec: &MissionSpec,
    plan: &MissionPlan,
    cfg: &SimConfig,
    p: &SystemParams,
    until_grasp: bool,
) -> Result<SimTrace> {
    p.validate()?;
    cfg.gains.validate()?;
    let substeps = cfg.substeps()?;
    let lqr = lqr_design(p, &cfg.lqr_weights)?;
    let schedule = ControllerSchedule::new(plan, cfg.lqr_duration);
    let total = schedule.total_duration();
    if total > cfg.max_duration {
        return Err(Error::invalid(format!("mission of {total:.2} s exceeds the duration cap")));
    }
    let bounds = &schedule.boundaries;
    let grasp_time = bounds[2];
    let release_time = bounds[4] + cfg.lqr_duration;
    let payload_start = spec.r_l_init + cfg.payload_offset;
    let tolerance = cfg.attach_radius_factor * p.hook_diameter;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.position_noise.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let bare = p.with_payload(0.0);
    let mut state = initial_state(spec);
    let mut attached = false;
    let mut released = false;
    let mut grasp_offset = Vector3::zeros();
    let mut grasp_distance = f64::NAN;
    let mut release_height = f64::NAN;
    let mut payload = payload_start;
    let mut samples = Vec::new();
    let mut events = Vec::new();
    let mut last_mode: Option<Mode> = None;
    let ticks = (total / cfg.control_dt).round() as usize;

    for k in 0..=ticks {
        let t = k as f64 * cfg.control_dt;
        let hook = state.hook_position(p);
        if !attached && !released && t >= grasp_time - 1e-9 {
            grasp_distance = (hook - payload_start).norm();
            if grasp_distance > tolerance {
                return Err(Error::GraspFailed { distance: grasp_distance, tolerance });
            }
            attached = true;
            grasp_offset = payload_start - hook;
            events.push(SimEvent { t, kind: EventKind::Attach });
            if until_grasp {
                break;
            }
        }
        if attached && t >= release_time - 1e-9 {
            attached = false;
            released = true;
            // The payload is set down on the support at the target height.
            payload = hook + grasp_offset;
            release_height = payload.z - spec.r_l_target.z;
            payload.z = spec.r_l_target.z;
            events.push(SimEvent { t, kind: EventKind::Release });
        }
        if attached {
            payload = hook + grasp_offset;
        }

        let mut measured = state;
        if cfg.position_noise > 0.0 {
            for i in 0..3 {
                measured.xi[i] += noise.sample(&mut rng);
            }
        }
        let (u, mode) =
            scheduled_control(t, &measured, plan, &schedule, &cfg.gains, &lqr, p).map_err(|_| Error::Diverged { t })?;
        if let Some(prev) = last_mode {
            if prev != mode {
                events.push(SimEvent { t, kind: EventKind::Switch { from: prev, to: mode } });
            }
        }
        last_mode = Some(mode);
        let reference = plan.reference(schedule.plan_time(t)).pos;
        if (state.position() - reference).norm() > cfg.divergence_error {
            return Err(Error::Diverged { t });
        }
        samples.push(TraceSample { t, state, input: u, mode, attached, reference, hook, payload });
        if k == ticks {
            break;
        }
        let dyn_params = if attached { *p } else { bare };
        for _ in 0..substeps {
            state = step(&state, &u, &dyn_params, cfg.dt).map_err(|_| Error::Diverged { t })?;
        }
    }
    if !released {
        payload = payload_start;
    }
    Ok(SimTrace {
        samples,
        events,
        grasp_distance,
        release_height,
        payload_rest: payload,
        payload_target: spec.r_l_target,
        segment_durations: plan.durations(),
    })
}

//! Five-segment grasp-transport-release mission.
//!
//! Waypoints: A (start), B (entry into the approach plane), C (grasp, pole
//! tip at the payload), D (stop above the target), E (release height),
//! F (exit). Segments 1-2 are planned in the payload frame, where the
//! approach plane is `y = 0` and the drone moves along `+x` into the hook;
//! segments 3-5 are planned in the world frame.

use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::frame::PayloadFrame;
use super::spatial::{solve_spatial, PathConstraint, Relation};
use super::temporal::{boundary_speed, max_start_speed, solve_temporal_with, EndSpeed, TemporalSettings, TimeProfile};
use super::yaw::{plan_yaw, unwrap_near, YawPolynomial, YawWaypoints};
use crate::bspline::{SplineBasis, SplinePath};
use crate::error::{Error, Result};
use crate::model::SystemParams;

/// Planner hyperparameters. Waypoint-B quantities are expressed in the
/// payload frame: `x_b` is the signed offset along the hook normal from the
/// payload, and the `z_b` band is relative to the grasp height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub v_max: f64,
    pub a_max: f64,
    pub lambda_max: f64,
    pub w: f64,
    pub rho: f64,
    pub x_b: f64,
    pub dsx_b: f64,
    pub z_b_min: f64,
    pub z_b_max: f64,
    pub dsz_b_min: f64,
    pub dsz_b_max: f64,
    /// Height of waypoint D above the payload target [m].
    pub z_d: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub n_r: usize,
    pub n_c: usize,
    pub subsamples: usize,
    pub margin: f64,
    /// Come to rest at the grasp point instead of passing through it.
    pub stop_at_grasp: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            v_max: 1.46,
            a_max: 0.2,
            lambda_max: 0.1,
            w: 0.5,
            rho: 0.1,
            x_b: -0.3,
            dsx_b: 0.0,
            z_b_min: 0.0,
            z_b_max: 0.3,
            dsz_b_min: -0.5,
            dsz_b_max: 0.5,
            z_d: 0.5,
            k: 15,
            n_r: 5,
            n_c: 12,
            subsamples: 4,
            margin: 0.995,
            stop_at_grasp: true,
        }
    }
}

impl HyperParams {
    pub fn temporal(&self) -> TemporalSettings {
        TemporalSettings {
            v_max: self.v_max,
            a_max: self.a_max,
            lambda_max: self.lambda_max,
            rho: self.rho,
            k: self.k,
            subsamples: self.subsamples,
            margin: self.margin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.temporal().validate()?;
        if !(0.0..=1.0).contains(&self.w) {
            return Err(Error::invalid(format!("w must lie in [0, 1], got {}", self.w)));
        }
        if self.z_b_min > self.z_b_max || self.dsz_b_min > self.dsz_b_max {
            return Err(Error::invalid("waypoint-B bands must satisfy min <= max"));
        }
        if self.n_r < 3 || self.n_c < self.n_r + 1 {
            return Err(Error::invalid("spline needs degree >= 3 and n_c >= n_r + 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionSpec {
    pub r0: Vector3<f64>,
    #[serde(default)]
    pub v0: Vector3<f64>,
    /// Initial drone yaw [rad].
    #[serde(default)]
    pub psi0: f64,
    #[serde(rename = "r_L_init")]
    pub r_l_init: Vector3<f64>,
    pub n_hook: Vector3<f64>,
    #[serde(rename = "r_L_target")]
    pub r_l_target: Vector3<f64>,
    pub target_yaw: f64,
    #[serde(rename = "r_F")]
    pub r_f: Vector3<f64>,
    #[serde(default)]
    pub hyper: HyperParams,
}

impl MissionSpec {
    /// 2 m transport used by the examples and tests.
    pub fn nominal() -> Self {
        Self {
            r0: Vector3::new(-0.5, -0.5, 0.8),
            v0: Vector3::zeros(),
            psi0: 0.0,
            r_l_init: Vector3::new(1.0, 0.0, 0.1),
            n_hook: Vector3::x(),
            r_l_target: Vector3::new(1.0, 2.0, 0.1),
            target_yaw: std::f64::consts::FRAC_PI_2,
            r_f: Vector3::new(0.5, 2.5, 1.0),
            hyper: HyperParams::default(),
        }
    }

    pub fn validate(&self, p: &SystemParams) -> Result<()> {
        self.hyper.validate()?;
        if (self.n_hook.norm() - 1.0).abs() > 1e-9 || self.n_hook.z.abs() > 1e-9 {
            return Err(Error::invalid("n_hook must be a horizontal unit vector"));
        }
        if (self.r_l_init - self.r_l_target).norm() < 1e-6 {
            return Err(Error::invalid("payload initial and target positions coincide"));
        }
        if (self.r0 - self.r_l_init).norm() < p.pole_length {
            return Err(Error::Infeasible {
                segment: 1,
                reason: "drone starts within pole reach of the payload".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTrajectory {
    /// Path in world coordinates.
    pub path: SplinePath,
    pub profile: TimeProfile,
    pub yaw: YawPolynomial,
}

impl SegmentTrajectory {
    pub fn duration(&self) -> f64 {
        self.profile.duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoints {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub c: Vector3<f64>,
    pub d: Vector3<f64>,
    pub e: Vector3<f64>,
    pub f: Vector3<f64>,
}

/// Mission events, by 1-based segment index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissionEvents {
    /// The hook engages at the end of this segment.
    pub attach_after: usize,
    /// The payload is released at the end of this segment.
    pub release_after: usize,
    /// The payload regulator runs after this segment, holding waypoint D.
    pub hold_after: usize,
}

impl Default for MissionEvents {
    fn default() -> Self {
        Self { attach_after: 2, release_after: 4, hold_after: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionPlan {
    pub frame: PayloadFrame,
    pub waypoints: Waypoints,
    pub segments: Vec<SegmentTrajectory>,
    pub events: MissionEvents,
}

/// Reference sample: flat outputs and their derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub acc: Vector3<f64>,
    pub psi: f64,
    pub psi_dot: f64,
    pub psi_ddot: f64,
    /// 1-based segment index.
    pub segment: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanTiming {
    pub qp_ms: Vec<f64>,
    pub socp_ms: Vec<f64>,
    pub total_ms: f64,
}

impl MissionPlan {
    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration()).sum()
    }

    pub fn durations(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.duration()).collect()
    }

    /// Segment start times followed by the end time.
    pub fn boundary_times(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        for s in &self.segments {
            out.push(out.last().unwrap() + s.duration());
        }
        out
    }

    /// Reference at plan time `t`, clamped to `[0, duration]`. Boundary
    /// instants belong to the later segment.
    pub fn reference(&self, t: f64) -> Reference {
        let bounds = self.boundary_times();
        let t = t.clamp(0.0, *bounds.last().unwrap());
        let n = self.segments.len();
        let i = (0..n).rev().find(|&i| t >= bounds[i]).unwrap_or(0);
        self.segment_reference(i, t - bounds[i])
    }

    /// Reference at local time `tl` of segment `i` (0-based).
    pub fn segment_reference(&self, i: usize, tl: f64) -> Reference {
        let seg = &self.segments[i];
        let tl = tl.clamp(0.0, seg.duration());
        let (s, sd, sdd) = seg.profile.time_map(tl).expect("time clamped to the segment");
        let [r, d1, d2] = seg.path.eval_upto2(s).expect("s within [0, 1]");
        let (psi, psi_dot, psi_ddot) = seg.yaw.eval(tl);
        Reference { pos: r, vel: d1 * sd, acc: d2 * sd * sd + d1 * sdd, psi, psi_dot, psi_ddot, segment: i + 1 }
    }

    /// Sampled reference as CSV at `rate` Hz: rows at `t = i / rate` up to the
    /// final time, which is always included.
    pub fn to_csv(&self, rate: f64) -> String {
        let mut out = String::from("t,x_d,y_d,z_d,vx_d,vy_d,vz_d,ax_d,ay_d,az_d,psi_d,segment\n");
        for t in sample_times(self.duration(), rate) {
            let r = self.reference(t);
            out.push_str(&format!(
                "{t:.6},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{}\n",
                r.pos.x, r.pos.y, r.pos.z, r.vel.x, r.vel.y, r.vel.z, r.acc.x, r.acc.y, r.acc.z, r.psi, r.segment
            ));
        }
        out
    }

    /// Largest per-axis speed and acceleration over `n + 1` uniform samples of each segment.
    pub fn kinematic_extremes(&self, n: usize) -> Vec<(f64, f64)> {
        (0..self.segments.len())
            .map(|i| {
                let d = self.segments[i].duration();
                (0..=n).fold((0.0f64, 0.0f64), |(v, a), j| {
                    let r = self.segment_reference(i, d * j as f64 / n as f64);
                    (v.max(r.vel.amax()), a.max(r.acc.amax()))
                })
            })
            .collect()
    }

    /// Position and velocity jumps at the four interior joints.
    pub fn joint_jumps(&self) -> Vec<(f64, f64)> {
        (0..self.segments.len() - 1)
            .map(|i| {
                let end = self.segment_reference(i, self.segments[i].duration());
                let start = self.segment_reference(i + 1, 0.0);
                ((end.pos - start.pos).norm(), (end.vel - start.vel).norm())
            })
            .collect()
    }
}

/// `floor(duration * rate) + 1` uniform times, plus `duration` itself when it
/// is not already on the lattice.
pub fn sample_times(duration: f64, rate: f64) -> Vec<f64> {
    let n = (duration * rate + 1e-9).floor() as usize;
    let mut out: Vec<f64> = (0..=n).map(|i| i as f64 / rate).collect();
    if duration - out[n] > 1e-9 {
        out.push(duration);
    }
    out
}

struct SpatialStage {
    paths: Vec<SplinePath>,
    waypoints: Waypoints,
    frame: PayloadFrame,
}

fn plan_paths(spec: &MissionSpec, p: &SystemParams, qp_ms: &mut Vec<f64>) -> Result<SpatialStage> {
    let h = &spec.hyper;
    let basis = SplineBasis::uniform(h.n_r, h.n_c)?;
    let frame = PayloadFrame::new(&spec.r_l_init, &spec.n_hook);
    let e3 = Vector3::z();
    let grasp = spec.r_l_init + p.pole_length * e3;
    let d = spec.r_l_target + h.z_d * e3;
    let e = spec.r_l_target + (p.pole_length - 0.5 * p.hook_diameter) * e3;
    let mut timed = |seg: usize, cons: &[PathConstraint]| {
        let t0 = Instant::now();
        let path = solve_spatial(seg, &basis, cons, h.w);
        qp_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        path
    };

    // Segment 1: start to plane entry, payload frame.
    let r0 = frame.to_local(&spec.r0);
    let v0 = frame.vector_to_local(&spec.v0);
    let grasp_l = frame.to_local(&grasp);
    let mut c1: Vec<PathConstraint> = PathConstraint::vector(0.0, 0, &r0).to_vec();
    if v0.norm() > 1e-12 {
        // Tangent parallel to v0: zero components across it, positive along it.
        let u = v0.normalize();
        let helper = if u.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let n1 = u.cross(&helper).normalize();
        let n2 = u.cross(&n1);
        for n in [n1, n2] {
            c1.push(PathConstraint { s: 0.0, order: 1, weights: n, relation: Relation::Eq, value: 0.0 });
        }
        c1.push(PathConstraint { s: 0.0, order: 1, weights: u, relation: Relation::Ge, value: 0.1 });
    }
    c1.push(PathConstraint::axis(1.0, 0, 1, Relation::Eq, 0.0));
    c1.push(PathConstraint::axis(1.0, 1, 1, Relation::Eq, 0.0));
    c1.push(PathConstraint::axis(1.0, 2, 1, Relation::Eq, 0.0));
    c1.push(PathConstraint::axis(1.0, 0, 0, Relation::Eq, h.x_b));
    c1.push(PathConstraint::axis(1.0, 1, 0, Relation::Ge, h.dsx_b));
    c1.push(PathConstraint::axis(1.0, 0, 2, Relation::Ge, grasp_l.z + h.z_b_min));
    c1.push(PathConstraint::axis(1.0, 0, 2, Relation::Le, grasp_l.z + h.z_b_max));
    c1.push(PathConstraint::axis(1.0, 1, 2, Relation::Ge, h.dsz_b_min));
    c1.push(PathConstraint::axis(1.0, 1, 2, Relation::Le, h.dsz_b_max));
    let p1 = timed(1, &c1)?;

    // Segment 2: plane entry to grasp, payload frame, tangent continuous at B.
    let b_l = p1.eval(1.0, 0)?;
    let mut c2: Vec<PathConstraint> = PathConstraint::vector(0.0, 0, &b_l).to_vec();
    c2.extend(PathConstraint::vector(0.0, 1, &p1.eval(1.0, 1)?));
    c2.extend(PathConstraint::vector(1.0, 0, &grasp_l));
    c2.push(PathConstraint::axis(1.0, 1, 0, Relation::Ge, 0.0));
    c2.push(PathConstraint::axis(1.0, 1, 1, Relation::Eq, 0.0));
    c2.push(PathConstraint::axis(1.0, 1, 2, Relation::Eq, 0.0));
    let p2 = timed(2, &c2)?;

    let rot = frame.rotation();
    let p1w = p1.transformed(&rot, &frame.origin);
    let p2w = p2.transformed(&rot, &frame.origin);

    // Segment 3: grasp to the stop above the target.
    let mut c3: Vec<PathConstraint> = PathConstraint::vector(0.0, 0, &grasp).to_vec();
    if !h.stop_at_grasp {
        c3.extend(PathConstraint::vector(0.0, 1, &p2w.eval(1.0, 1)?));
    }
    c3.extend(PathConstraint::vector(1.0, 0, &d));
    for axis in 0..2 {
        c3.push(PathConstraint::axis(1.0, 1, axis, Relation::Eq, 0.0));
        c3.push(PathConstraint::axis(1.0, 2, axis, Relation::Eq, 0.0));
    }
    let p3 = timed(3, &c3)?;

    // Segment 4: descent to the release height.
    let mut c4: Vec<PathConstraint> = PathConstraint::vector(0.0, 0, &d).to_vec();
    c4.extend(PathConstraint::vector(1.0, 0, &e));
    let p4 = timed(4, &c4)?;

    // Segment 5: horizontal exit to F.
    let mut c5: Vec<PathConstraint> = PathConstraint::vector(0.0, 0, &e).to_vec();
    c5.push(PathConstraint::axis(0.0, 1, 2, Relation::Eq, 0.0));
    c5.push(PathConstraint::axis(0.0, 2, 2, Relation::Eq, 0.0));
    c5.extend(PathConstraint::vector(1.0, 0, &spec.r_f));
    let p5 = timed(5, &c5)?;

    let waypoints = Waypoints { a: spec.r0, b: p1w.eval(1.0, 0)?, c: grasp, d, e, f: spec.r_f };
    Ok(SpatialStage { paths: vec![p1w, p2w, p3, p4, p5], waypoints, frame })
}

/// Plans the mission and reports solver wall-clock times.
pub fn plan_mission_timed(spec: &MissionSpec, p: &SystemParams) -> Result<(MissionPlan, PlanTiming)> {
    let start = Instant::now();
    p.validate()?;
    spec.validate(p)?;
    let mut timing = PlanTiming::default();
    let stage = plan_paths(spec, p, &mut timing.qp_ms)?;
    let paths = &stage.paths;
    let st = spec.hyper.temporal();

    // Junction j joins segment j and j + 1 (0-based); the drone passes
    // through B always and through C when it does not stop to grasp.
    let pass_through = [true, !spec.hyper.stop_at_grasp, false, false];
    // Backward pass: the fastest entry each passed-through junction allows.
    let mut end_cond = [EndSpeed::Fixed(0.0); 5];
    for j in (0..4).rev() {
        if pass_through[j] {
            let t0 = Instant::now();
            let cap = max_start_speed(&paths[j + 1], end_cond[j + 1], &st).map_err(|e| e.in_segment(j + 2))?;
            timing.socp_ms.push(t0.elapsed().as_secs_f64() * 1e3);
            end_cond[j] = EndSpeed::AtMost(cap);
        }
    }
    let b0 = boundary_speed(&paths[0].eval(0.0, 1)?, &spec.v0).map_err(|e| e.in_segment(1))?;
    let mut start_cond = EndSpeed::Fixed(b0);
    let mut profiles = Vec::with_capacity(5);
    for (i, path) in paths.iter().enumerate() {
        let t0 = Instant::now();
        let prof = solve_temporal_with(path, start_cond, end_cond[i], &st).map_err(|e| e.in_segment(i + 1))?;
        timing.socp_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        start_cond = EndSpeed::Fixed(*prof.b.last().unwrap());
        profiles.push(prof);
    }

    let durations: [f64; 5] = std::array::from_fn(|i| profiles[i].duration);
    let grasp_yaw = unwrap_near(stage.frame.yaw, spec.psi0);
    let wp = YawWaypoints { start: spec.psi0, grasp: grasp_yaw, release: unwrap_near(spec.target_yaw, grasp_yaw) };
    let yaws = plan_yaw(&durations, &wp)?;
    let segments = stage
        .paths
        .into_iter()
        .zip(profiles)
        .zip(yaws)
        .map(|((path, profile), yaw)| SegmentTrajectory { path, profile, yaw })
        .collect();
    timing.total_ms = start.elapsed().as_secs_f64() * 1e3;
    let plan =
        MissionPlan { frame: stage.frame, waypoints: stage.waypoints, segments, events: MissionEvents::default() };
    Ok((plan, timing))
}

pub fn plan_mission(spec: &MissionSpec, p: &SystemParams) -> Result<MissionPlan> {
    plan_mission_timed(spec, p).map(|(plan, _)| plan)
}

//! Gradient-free tuning of the planner bounds and spatial weight
//! `gamma = (v_max, a_max, lambda_max, w)`: minimize the summed mission time
//! over a scenario set subject to every simulated grasp succeeding.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::hash::{Hash, Hasher};
use std::sync::Mutex;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemParams;
use crate::planner::{plan_mission, HyperParams, MissionSpec};
use crate::sim::{run_to_grasp, SimConfig};

pub type Gamma = [f64; 4];

/// Penalty time assigned to infeasible points in swarm mode [s].
pub const INFEASIBLE_PENALTY: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwarmSettings {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
}

impl Default for SwarmSettings {
    fn default() -> Self {
        Self { particles: 24, iterations: 40, inertia: 0.72, cognitive: 1.49, social: 1.49 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub lower: Gamma,
    pub upper: Gamma,
    /// Grid points per coordinate.
    pub grid: [usize; 4],
    pub swarm: SwarmSettings,
    pub scenarios: Vec<MissionSpec>,
}

impl SearchSpace {
    /// `v_max in [0.7, 3]`, `a_max in [0.1, 0.5]`, `lambda_max in [0, 0.2]`,
    /// `w in [0.01, 0.9]`, on a 10 x 10 x 10 x 4 grid.
    pub fn standard(scenarios: Vec<MissionSpec>) -> Self {
        Self {
            lower: [0.7, 0.1, 0.0, 0.01],
            upper: [3.0, 0.5, 0.2, 0.9],
            grid: [10, 10, 10, 4],
            swarm: SwarmSettings::default(),
            scenarios,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::invalid("search space needs at least one scenario"));
        }
        for i in 0..4 {
            if !(self.lower[i] <= self.upper[i]) || self.grid[i] == 0 {
                return Err(Error::invalid("search box must satisfy lower <= upper with a nonempty grid"));
            }
        }
        if !(self.lower[0] > 0.0
            && self.lower[1] > 0.0
            && self.lower[2] >= 0.0
            && self.lower[3] >= 0.0
            && self.upper[3] <= 1.0)
        {
            return Err(Error::invalid("search box outside physically sensible ranges"));
        }
        Ok(())
    }

    /// Lattice values of coordinate `i`.
    pub fn axis(&self, i: usize) -> Vec<f64> {
        let n = self.grid[i];
        if n == 1 {
            return vec![self.lower[i]];
        }
        (0..n).map(|k| self.lower[i] + (self.upper[i] - self.lower[i]) * k as f64 / (n - 1) as f64).collect()
    }

    pub fn lattice(&self) -> Vec<Gamma> {
        let axes: Vec<Vec<f64>> = (0..4).map(|i| self.axis(i)).collect();
        let mut out = Vec::new();
        for &a in &axes[0] {
            for &b in &axes[1] {
                for &c in &axes[2] {
                    for &d in &axes[3] {
                        out.push([a, b, c, d]);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub gamma: Gamma,
    /// Summed planned duration over all scenarios; infinite when a plan fails.
    pub total_time: f64,
    pub feasible: bool,
}

/// Plans and simulates scenarios, caching results per `(gamma, scenario)`.
pub struct Evaluator {
    pub params: SystemParams,
    pub base: HyperParams,
    pub sim: SimConfig,
    cache: Mutex<HashMap<(Vec<u64>, u64), (f64, bool)>>,
}

fn scenario_key(spec: &MissionSpec) -> u64 {
    let mut h = DefaultHasher::new();
    serde_json::to_string(spec).expect("spec serializes").hash(&mut h);
    h.finish()
}

impl Evaluator {
    pub fn new(params: SystemParams, base: HyperParams, sim: SimConfig) -> Self {
        Self { params, base, sim, cache: Mutex::new(HashMap::new()) }
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    /// `(planned time, grasp ok)` of one scenario.
    fn scenario(&self, gamma: &Gamma, spec: &MissionSpec) -> (f64, bool) {
        let key = (gamma.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), scenario_key(spec));
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return *hit;
        }
        let mut spec = spec.clone();
        spec.hyper = HyperParams { v_max: gamma[0], a_max: gamma[1], lambda_max: gamma[2], w: gamma[3], ..self.base };
        let result = match plan_mission(&spec, &self.params) {
            Ok(plan) => {
                let ok = run_to_grasp(&spec, &plan, &self.sim, &self.params).is_ok();
                (plan.duration(), ok)
            }
            Err(_) => (f64::INFINITY, false),
        };
        self.cache.lock().expect("cache lock").insert(key, result);
        result
    }

    pub fn evaluate(&self, gamma: &Gamma, scenarios: &[MissionSpec]) -> Evaluation {
        let mut total_time = 0.0;
        let mut feasible = true;
        for spec in scenarios {
            let (t, ok) = self.scenario(gamma, spec);
            total_time += t;
            feasible &= ok;
        }
        Evaluation { gamma: *gamma, total_time, feasible }
    }
}

/// One-shot evaluation with the default planner, simulator and an empty cache.
pub fn evaluate(gamma: &Gamma, scenarios: &[MissionSpec], p: &SystemParams) -> Evaluation {
    Evaluator::new(*p, HyperParams::default(), SimConfig::default()).evaluate(gamma, scenarios)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Grid,
    Swarm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub method: Method,
    pub best: Evaluation,
    pub evaluations: Vec<Evaluation>,
    pub seed: u64,
}

impl TuneReport {
    pub fn evaluations_csv(&self) -> String {
        let mut out = String::from("v_max,a_max,lambda_max,w,total_time,feasible\n");
        for e in &self.evaluations {
            let g = e.gamma;
            out.push_str(&format!("{},{},{},{},{},{}\n", g[0], g[1], g[2], g[3], e.total_time, u8::from(e.feasible)));
        }
        out
    }
}

/// Total times closer than this are ties [s]; the planner's solver noise is far below it.
pub const TIME_TIE_TOL: f64 = 1e-6;

/// Feasible evaluation with the smallest time; near-ties go to the lexicographically smallest gamma.
fn best_of(evals: &[Evaluation]) -> Option<Evaluation> {
    let feasible = || evals.iter().filter(|e| e.feasible && e.total_time.is_finite());
    let t_min = feasible().map(|e| e.total_time).min_by(f64::total_cmp)?;
    feasible()
        .filter(|e| e.total_time <= t_min + TIME_TIE_TOL)
        .min_by(|a, b| {
            a.gamma
                .iter()
                .zip(&b.gamma)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .copied()
}

pub fn tune(space: &SearchSpace, method: Method, seed: u64, evaluator: &Evaluator) -> Result<TuneReport> {
    space.validate()?;
    let evaluations = match method {
        Method::Grid => space.lattice().par_iter().map(|g| evaluator.evaluate(g, &space.scenarios)).collect(),
        Method::Swarm => swarm(space, seed, evaluator),
    };
    let best = best_of(&evaluations).ok_or(Error::NoFeasiblePoint)?;
    Ok(TuneReport { method, best, evaluations, seed })
}

fn swarm(space: &SearchSpace, seed: u64, evaluator: &Evaluator) -> Vec<Evaluation> {
    let st = space.swarm;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span: Gamma = std::array::from_fn(|i| space.upper[i] - space.lower[i]);
    let clamp = |g: Gamma| -> Gamma { std::array::from_fn(|i| g[i].clamp(space.lower[i], space.upper[i])) };
    let fitness = |e: &Evaluation| {
        if e.feasible {
            e.total_time
        } else {
            INFEASIBLE_PENALTY + e.total_time.min(INFEASIBLE_PENALTY)
        }
    };

    let mut pos: Vec<Gamma> =
        (0..st.particles).map(|_| std::array::from_fn(|i| space.lower[i] + span[i] * rng.random::<f64>())).collect();
    let mut vel: Vec<Gamma> =
        (0..st.particles).map(|_| std::array::from_fn(|i| 0.1 * span[i] * (2.0 * rng.random::<f64>() - 1.0))).collect();
    let mut all = Vec::new();
    let mut personal: Vec<(Gamma, f64)> = Vec::new();
    let mut global: (Gamma, f64) = (pos[0], f64::INFINITY);
    for it in 0..st.iterations {
        let evals: Vec<Evaluation> = pos.par_iter().map(|g| evaluator.evaluate(g, &space.scenarios)).collect();
        for (k, e) in evals.iter().enumerate() {
            let f = fitness(e);
            if it == 0 {
                personal.push((e.gamma, f));
            } else if f < personal[k].1 {
                personal[k] = (e.gamma, f);
            }
            if f < global.1 {
                global = (e.gamma, f);
            }
        }
        all.extend(evals);
        for k in 0..st.particles {
            for i in 0..4 {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                vel[k][i] = st.inertia * vel[k][i]
                    + st.cognitive * r1 * (personal[k].0[i] - pos[k][i])
                    + st.social * r2 * (global.0[i] - pos[k][i]);
                vel[k][i] = vel[k][i].clamp(-span[i], span[i]);
            }
            pos[k] = clamp(std::array::from_fn(|i| pos[k][i] + vel[k][i]));
        }
    }
    all
}

/// Six grasp-and-transport scenarios drawn from a fixed seed: start, payload
/// and target positions, hook orientation and release yaw vary.
pub fn default_scenarios(seed: u64) -> Vec<MissionSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..6)
        .map(|_| {
            let payload = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.1);
            let hook_yaw = rng.random_range(-PI..PI);
            let n_hook = Vector3::new(hook_yaw.cos(), hook_yaw.sin(), 0.0);
            // Start behind the hook opening, 1.2-1.8 m away, slightly off-axis.
            let back = rng.random_range(1.2..1.8);
            let side = rng.random_range(-0.5..0.5);
            let lateral = Vector3::new(-n_hook.y, n_hook.x, 0.0);
            let r0 = payload - n_hook * back + lateral * side + Vector3::new(0.0, 0.0, rng.random_range(0.6..0.9));
            let heading = rng.random_range(-PI..PI);
            let dist = rng.random_range(1.5..2.5);
            let target = payload + Vector3::new(heading.cos(), heading.sin(), 0.0) * dist;
            let exit = target
                + Vector3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), 0.0)
                + Vector3::new(0.0, 0.0, 0.9);
            MissionSpec {
                r0,
                v0: Vector3::zeros(),
                psi0: rng.random_range(-PI..PI),
                r_l_init: payload,
                n_hook,
                r_l_target: target,
                target_yaw: rng.random_range(-PI..PI),
                r_f: exit,
                hyper: HyperParams::default(),
            }
        })
        .collect()
}

//! Command implementations and the exit-code contract.

use std::path::Path;

use anyhow::{Context, Result};
use quadhook::control::{lqr_design, LqrGain, LqrWeights};
use quadhook::hyperopt::{default_scenarios, tune, Evaluator, Method};
use quadhook::planner::{plan_mission_timed, MissionPlan, MissionSpec};
use quadhook::sim::{metrics, run_mission, Metrics};
use quadhook::verify::{certify_roa, disturbance_bounds, Certificate, Decision, OperatingRegion};
use quadhook::Error;
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::Run;
use crate::{Cli, Command, MethodArg};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_GRASP_FAILED: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;
pub const EXIT_NO_FEASIBLE_POINT: i32 = 5;
pub const EXIT_REGULATOR: i32 = 6;
pub const EXIT_UNSTABLE: i32 = 7;
pub const EXIT_USAGE: i32 = 64;

/// The certificate was computed but some sample did not converge.
#[derive(Debug)]
struct Unstable(usize);

impl std::fmt::Display for Unstable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} sample(s) did not converge; region not certified", self.0)
    }
}

impl std::error::Error for Unstable {}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<Unstable>().is_some() {
        return EXIT_UNSTABLE;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Infeasible { .. } | Error::SolverStalled { .. } | Error::RankDeficient(_)) => EXIT_INFEASIBLE,
        Some(Error::GraspFailed { .. }) => EXIT_GRASP_FAILED,
        Some(Error::Diverged { .. } | Error::NumericalBlowup | Error::SingularOrientation { .. }) => EXIT_DIVERGED,
        Some(Error::NoFeasiblePoint) => EXIT_NO_FEASIBLE_POINT,
        Some(Error::RiccatiNoConvergence { .. } | Error::NotStabilizable) => EXIT_REGULATOR,
        _ => EXIT_FAILURE,
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Plan { .. } => "plan",
        Command::Simulate { .. } => "simulate",
        Command::Verify { .. } => "verify",
        Command::Bounds { .. } => "bounds",
        Command::Tune { .. } => "tune",
        Command::Lqr => "lqr",
        Command::Reproduce { .. } => "reproduce",
    }
}

pub fn run(cli: &Cli) -> i32 {
    let g = &cli.global;
    if let Some(jobs) = g.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    }
    let mut run = match Run::new(command_name(&cli.command), g.config.as_deref(), g.seed, &g.out) {
        Ok(run) => run,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_FAILURE;
        }
    };
    let result = RunConfig::load(g.config.as_deref()).and_then(|mut cfg| {
        if let Some(seed) = g.seed {
            cfg.apply_seed(seed);
        }
        dispatch(&cli.command, &cfg, &mut run)
    });
    let (code, message) = match &result {
        Ok(()) => (EXIT_OK, None),
        Err(e) => {
            eprintln!("error: {e:#}");
            (exit_code(e), Some(format!("{e:#}")))
        }
    };
    if let Err(e) = run.finish(code, message) {
        eprintln!("error: {e:#}");
        return EXIT_FAILURE;
    }
    code
}

fn dispatch(cmd: &Command, cfg: &RunConfig, run: &mut Run) -> Result<()> {
    match cmd {
        Command::Plan { sample_rate } => cmd_plan(cfg, *sample_rate, run).map(|_| ()),
        Command::Simulate { plan, payload_mass } => {
            let mut cfg = cfg.clone();
            if let Some(m) = payload_mass {
                cfg.payload_mass = *m;
            }
            let plan = match plan {
                Some(path) => {
                    run.add_config(path);
                    load_plan(path)?
                }
                None => run.timed("plan", || plan_mission_timed(&cfg.mission, &cfg.params))?.0,
            };
            cmd_simulate(&cfg, &cfg.mission, &plan, "", run).map(|_| ())
        }
        Command::Verify { n, beta } => {
            let mut cfg = cfg.clone();
            cfg.roa.n = n.unwrap_or(cfg.roa.n);
            cfg.roa.beta = beta.unwrap_or(cfg.roa.beta);
            let gain = cmd_lqr(&cfg, false, run)?;
            cmd_verify(&cfg, &gain, run).map(|_| ())
        }
        Command::Bounds { region } => {
            let mut cfg = cfg.clone();
            cfg.bounds.region = region.unwrap_or(cfg.bounds.region);
            cmd_bounds(&cfg, run)
        }
        Command::Tune { method } => {
            let mut cfg = cfg.clone();
            if let Some(m) = method {
                cfg.tune.method = match m {
                    MethodArg::Grid => Method::Grid,
                    MethodArg::Swarm => Method::Swarm,
                };
            }
            cmd_tune(&cfg, run)
        }
        Command::Lqr => cmd_lqr(cfg, true, run).map(|_| ()),
        Command::Reproduce { n } => {
            let mut cfg = cfg.clone();
            cfg.roa.n = n.unwrap_or(cfg.roa.n);
            cmd_reproduce(&cfg, run)
        }
    }
}

fn load_plan(path: &Path) -> Result<MissionPlan> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading plan {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing plan {}", path.display()))
}

#[derive(Serialize)]
struct TimingReport {
    qp_ms: Vec<f64>,
    socp_ms: Vec<f64>,
    total_ms: f64,
    segment_durations: Vec<f64>,
    duration: f64,
}

fn cmd_plan(cfg: &RunConfig, sample_rate: f64, run: &mut Run) -> Result<MissionPlan> {
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::InvalidInput("sample rate must be positive".into()).into());
    }
    let (plan, timing) = run.timed("plan", || plan_mission_timed(&cfg.mission, &cfg.params))?;
    run.write_json("plan.json", &plan)?;
    run.write("trajectory.csv", plan.to_csv(sample_rate).as_bytes())?;
    run.write_json(
        "timing.json",
        &TimingReport {
            qp_ms: timing.qp_ms,
            socp_ms: timing.socp_ms,
            total_ms: timing.total_ms,
            segment_durations: plan.durations(),
            duration: plan.duration(),
        },
    )?;
    Ok(plan)
}

fn cmd_simulate(
    cfg: &RunConfig,
    spec: &MissionSpec,
    plan: &MissionPlan,
    prefix: &str,
    run: &mut Run,
) -> Result<Metrics> {
    let p = cfg.loaded_params();
    let trace = run.timed(&format!("{prefix}simulate"), || run_mission(spec, plan, &cfg.sim, &p))?;
    let m = metrics(&trace);
    run.write(&format!("{prefix}trace.csv"), trace.to_csv().as_bytes())?;
    run.write(&format!("{prefix}control.csv"), trace.control_log_csv().as_bytes())?;
    run.write_json(&format!("{prefix}events.json"), &trace.events)?;
    run.write_json(&format!("{prefix}metrics.json"), &m)?;
    Ok(m)
}

#[derive(Serialize)]
struct GainReport<'a> {
    #[serde(rename = "K")]
    k: Vec<Vec<f64>>,
    u0: Vec<f64>,
    weights: &'a LqrWeights,
    payload_mass: f64,
    closed_loop_abscissa: f64,
    hurwitz: bool,
}

fn cmd_lqr(cfg: &RunConfig, write: bool, run: &mut Run) -> Result<LqrGain> {
    let p = cfg.loaded_params();
    let gain = run.timed("lqr", || lqr_design(&p, &cfg.sim.lqr_weights))?;
    if write {
        let abscissa = gain.closed_loop_abscissa();
        run.write_json(
            "lqr.json",
            &GainReport {
                k: gain.k.row_iter().map(|r| r.iter().copied().collect()).collect(),
                u0: gain.u0.iter().copied().collect(),
                weights: &cfg.sim.lqr_weights,
                payload_mass: cfg.payload_mass,
                closed_loop_abscissa: abscissa,
                hurwitz: abscissa < 0.0,
            },
        )?;
    }
    Ok(gain)
}

fn cmd_verify(cfg: &RunConfig, gain: &LqrGain, run: &mut Run) -> Result<Certificate> {
    let p = cfg.loaded_params();
    let region = OperatingRegion::standard(&p);
    let cert = run.timed("verify", || certify_roa(&region, gain, &p, cfg.roa.n, cfg.roa.beta, &cfg.roa.settings))?;
    run.write_json("certificate.json", &cert)?;
    if cert.decision == Decision::Unstable {
        return Err(Unstable(cert.failed_samples.len()).into());
    }
    Ok(cert)
}

fn cmd_bounds(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let p = cfg.loaded_params();
    let region = cfg.bounds.region.region(&p);
    let report = run.timed("bounds", || disturbance_bounds(&region, &p, &cfg.bounds.settings))?;
    run.write_json("bounds.json", &report)?;
    Ok(())
}

#[derive(Serialize)]
struct TuneSummary {
    method: Method,
    seed: u64,
    v_max: f64,
    a_max: f64,
    lambda_max: f64,
    w: f64,
    total_time: f64,
    evaluations: usize,
    scenarios: usize,
}

fn cmd_tune(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let space = cfg.tune.space();
    let evaluator = Evaluator::new(cfg.loaded_params(), cfg.mission.hyper, cfg.sim.clone());
    let report = run.timed("tune", || tune(&space, cfg.tune.method, cfg.tune.seed, &evaluator))?;
    let g = report.best.gamma;
    run.write_json(
        "tune.json",
        &TuneSummary {
            method: report.method,
            seed: report.seed,
            v_max: g[0],
            a_max: g[1],
            lambda_max: g[2],
            w: g[3],
            total_time: report.best.total_time,
            evaluations: report.evaluations.len(),
            scenarios: space.scenarios.len(),
        },
    )?;
    run.write("evaluations.csv", report.evaluations_csv().as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct ScenarioSummary {
    scenario: usize,
    payload_mass: f64,
    metrics: Metrics,
}

#[derive(Serialize)]
struct ReproduceSummary {
    plan_duration: f64,
    plan_total_ms: f64,
    scenarios: Vec<ScenarioSummary>,
    certificate_n: usize,
    certificate_epsilon: f64,
    certificate_decision: Decision,
    regulator_abscissa: f64,
}

/// Missions flown by `reproduce`: the nominal transport and the first seeded
/// tuning scenario, each with a 75 g and a 100 g payload.
fn reproduce_scenarios(cfg: &RunConfig) -> Vec<(MissionSpec, f64)> {
    let alt = default_scenarios(cfg.tune.scenario_seed).swap_remove(0);
    vec![(cfg.mission.clone(), 0.075), (alt.clone(), 0.075), (cfg.mission.clone(), 0.1), (alt, 0.1)]
}

fn cmd_reproduce(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let plan = cmd_plan(cfg, 100.0, run)?;
    let plan_total_ms = run.manifest.timings_ms["plan"];
    let gain = cmd_lqr(cfg, true, run)?;
    let mut scenarios = Vec::new();
    for (i, (spec, mass)) in reproduce_scenarios(cfg).into_iter().enumerate() {
        let mut c = cfg.clone();
        c.payload_mass = mass;
        let plan_i = if spec == cfg.mission { plan.clone() } else { plan_mission_timed(&spec, &c.params)?.0 };
        let m = cmd_simulate(&c, &spec, &plan_i, &format!("scenario{}_", i + 1), run)?;
        scenarios.push(ScenarioSummary { scenario: i + 1, payload_mass: mass, metrics: m });
    }
    let cert = cmd_verify(cfg, &gain, run);
    let (certificate_epsilon, certificate_decision) = match &cert {
        Ok(c) => (c.epsilon, c.decision),
        Err(e) if e.downcast_ref::<Unstable>().is_some() => (f64::NAN, Decision::Unstable),
        Err(_) => return cert.map(|_| ()),
    };
    run.write_json(
        "summary.json",
        &ReproduceSummary {
            plan_duration: plan.duration(),
            plan_total_ms,
            scenarios,
            certificate_n: cfg.roa.n,
            certificate_epsilon,
            certificate_decision,
            regulator_abscissa: gain.closed_loop_abscissa(),
        },
    )?;
    cert.map(|_| ())
}

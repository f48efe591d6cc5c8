//! Acceptance suite: one PASS/FAIL line per criterion. Criteria listed in
//! `KNOWN_FAILURES` are reported as FAIL but do not fail the run; every other
//! failure does.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use quadhook::bspline::{SplineBasis, SplinePath};
use quadhook::control::lqr::{care_residual, spectral_abscissa};
use quadhook::control::{lqr_design, robust_position_term, GeomGains, LqrWeights};
use quadhook::model::{energy, lagrangian_matrices, ControlInput, FullState, SystemParams, Vector7};
use quadhook::planner::qp::{solve_qp, QpProblem};
use quadhook::planner::socp::{solve_socp, Cones, SocpProblem, SocpSettings};
use quadhook::planner::yaw::YawPolynomial;
use quadhook::planner::{plan_mission, plan_mission_timed, solve_temporal, MissionSpec, TemporalSettings};
use quadhook::sim::{metrics, run_mission, step, SimConfig};
use quadhook::verify::{
    certify_roa, disturbance_bounds, scenario_epsilon, scenario_sample_count, BoundSettings, Decision, OperatingRegion,
    RoaSettings,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that cannot be met as stated, with the reason.
const KNOWN_FAILURES: &[(u32, &str)] = &[(
    1,
    "the smallest N meeting the bound is 34709; 35000 is a rounded figure that satisfies the bound but is not minimal",
)];

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn loaded(m: f64) -> SystemParams {
    SystemParams::hook_platform().with_payload(m)
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let n = scenario_sample_count(1e-6, 1e-3).expect("valid inputs");
    let eps = scenario_epsilon(35_000, 1e-6);
    let secs = t0.elapsed().as_secs_f64();
    Outcome {
        id: 1,
        name: "scenario sample count",
        pass: n.abs_diff(35_000) <= 1 && eps <= 1e-3 && secs < 1.0,
        detail: format!("N_min = {n} (want 35000 +- 1), eps(35000) = {eps:.7}, {secs:.3} s"),
    }
}

fn criterion_2() -> Outcome {
    let p = loaded(0.075);
    let t0 = Instant::now();
    let gain = lqr_design(&p, &LqrWeights::default()).expect("regulator design");
    let cert = certify_roa(&OperatingRegion::standard(&p), &gain, &p, 1000, 1e-6, &RoaSettings::default())
        .expect("certificate");
    let secs = t0.elapsed().as_secs_f64();
    let exact = 1.0 - (1e-6f64 / 1e6).powf(1.0 / 999.0);
    Outcome {
        id: 2,
        name: "desk-scale ROA certificate",
        pass: cert.decision == Decision::Stable
            && (cert.epsilon - exact).abs() < 1e-12
            && (cert.epsilon - 0.0273).abs() < 5e-5
            && secs < 300.0,
        detail: format!(
            "N = 1000, {} failed, eps = {:.7}, T_sim = {} s, r_conv = {}, {} threads, {secs:.1} s",
            cert.failed_samples.len(),
            cert.epsilon,
            cert.t_sim,
            cert.r_conv,
            rayon::current_num_threads()
        ),
    }
}

fn criterion_3() -> Outcome {
    let p = loaded(0.075);
    let region = OperatingRegion::hover_inputs(&p);
    let b = disturbance_bounds(&region, &p, &BoundSettings::default()).expect("bounds");
    Outcome {
        id: 3,
        name: "disturbance bounds",
        pass: (0.20..=0.36).contains(&b.delta_r) && (0.008..=0.014).contains(&b.delta_rot),
        detail: format!(
            "delta_r = {:.4} N, delta_R = {:.5} N m; X: |x_i| <= 0.1 (0.2 for alpha, alpha_dot), U: F in [{:.3}, {:.3}] N, |tau_i| <= {:.3} N m, inflation {}",
            b.delta_r, b.delta_rot, region.u_min[0], region.u_max[0], region.u_max[1], b.inflation
        ),
    }
}

fn criterion_4() -> Outcome {
    let basis = SplineBasis::uniform(5, 8).expect("basis");
    let path = SplinePath::line(basis, Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)).expect("line");
    let st =
        TemporalSettings { v_max: 1.0, a_max: 1.0, lambda_max: 1e3, rho: 0.01, k: 60, ..TemporalSettings::default() };
    let t = solve_temporal(&path, &Vector3::zeros(), &Vector3::zeros(), &st).expect("profile").duration;
    Outcome {
        id: 4,
        name: "time-allocation oracle",
        pass: (t - 2.0).abs() <= 0.05 * 2.0,
        detail: format!("T = {t:.4} s vs bang-bang 2.0 s ({:+.2}%)", (t / 2.0 - 1.0) * 100.0),
    }
}

fn criterion_5() -> Outcome {
    let spec = MissionSpec::nominal();
    let mut pass = true;
    let mut parts = Vec::new();
    for m_l in [0.075, 0.1] {
        let p = loaded(m_l);
        let plan = plan_mission(&spec, &p).expect("plan");
        match run_mission(&spec, &plan, &SimConfig::default(), &p) {
            Ok(trace) => {
                let m = metrics(&trace);
                pass &=
                    m.grasp_distance <= 0.02 && m.rmse <= 0.05 && m.max_swing <= 0.30 && m.final_payload_error <= 0.02;
                parts.push(format!(
                    "{:.0} g: grasp {:.4} m, rmse {:.4} m, max|alpha| {:.3} rad, payload err {:.4} m",
                    m_l * 1e3,
                    m.grasp_distance,
                    m.rmse,
                    m.max_swing,
                    m.final_payload_error
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{:.0} g: {e}", m_l * 1e3));
            }
        }
    }
    Outcome { id: 5, name: "end-to-end mission", pass, detail: parts.join("; ") }
}

fn criterion_6() -> Outcome {
    let p = loaded(0.075);
    let t0 = Instant::now();
    let (_, timing) = plan_mission_timed(&MissionSpec::nominal(), &p).expect("plan");
    let wall = t0.elapsed().as_secs_f64();
    let qp = timing.qp_ms.iter().copied().fold(0.0, f64::max);
    let socp = timing.socp_ms.iter().copied().fold(0.0, f64::max);
    Outcome {
        id: 6,
        name: "planner performance",
        pass: wall < 2.0 && qp < 50.0 && socp < 500.0,
        detail: format!("total {:.1} ms, max QP {qp:.2} ms, max SOCP {socp:.1} ms", wall * 1e3),
    }
}

fn random_state(rng: &mut ChaCha8Rng) -> FullState {
    let q = Vector7::from_fn(|_, _| rng.random_range(-0.6..0.6));
    let dq = Vector7::from_fn(|_, _| rng.random_range(-1.0..1.0));
    FullState::new(q, dq)
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = loaded(0.075);
    let mut checks: Vec<(&str, bool, String)> = Vec::new();

    let mut skew = 0.0f64;
    for _ in 0..50 {
        let s = random_state(&mut rng);
        let h = 1e-6;
        let at =
            |sign: f64| lagrangian_matrices(&FullState::new(s.xi + s.xi_dot * (sign * h), s.xi_dot), &p).unwrap().h;
        let n = (at(1.0) - at(-1.0)) / (2.0 * h) - lagrangian_matrices(&s, &p).unwrap().c * 2.0;
        skew = skew.max((n + n.transpose()).amax());
    }
    checks.push(("skew", skew < 1e-6, format!("{skew:.1e}")));

    let mut s = random_state(&mut rng);
    let u = ControlInput::new(0.0, Vector3::zeros());
    let (k0, v0) = energy(&s, &p);
    for _ in 0..1000 {
        s = step(&s, &u, &p, 1e-3).unwrap();
    }
    let (k1, v1) = energy(&s, &p);
    let drift = ((k1 + v1) - (k0 + v0)).abs() / (k0 + v0).abs();
    checks.push(("energy", drift < 1e-6, format!("{drift:.1e}")));

    let x0 = FullState::new(
        Vector7::from_column_slice(&[0.0, 0.0, 1.0, 0.05, -0.04, 0.2, 0.6]),
        Vector7::from_column_slice(&[0.1, 0.0, 0.0, 0.3, 0.2, -0.1, 0.0]),
    );
    let hover = ControlInput::hover(&p);
    let run = |dt: f64| {
        let mut s = x0;
        for _ in 0..(1.0 / dt).round() as usize {
            s = step(&s, &hover, &p, dt).unwrap();
        }
        s.to_vector()
    };
    let reference = run(2.5e-4);
    let slope = ((run(4e-3) - reference).norm() / (run(1e-3) - reference).norm()).ln() / 4f64.ln();
    checks.push(("rk4", slope >= 3.8, format!("{slope:.2}")));

    let basis = SplineBasis::uniform(5, 12).unwrap();
    let pou = (0..=1000)
        .map(|i| (basis.basis_row(i as f64 / 1000.0, 0).unwrap().iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    checks.push(("unity", pou < 1e-12, format!("{pou:.1e}")));

    let mut kkt = 0.0f64;
    for _ in 0..20 {
        let m = random_matrix(&mut rng, 6, 6);
        let a = random_matrix(&mut rng, 2, 6);
        let g = random_matrix(&mut rng, 8, 6);
        let x = random_matrix(&mut rng, 6, 1).column(0).into_owned();
        let qp = QpProblem {
            h: &m * m.transpose() + DMatrix::identity(6, 6),
            f: random_matrix(&mut rng, 6, 1).column(0).into_owned(),
            b_eq: &a * &x,
            h_in: &g * &x + DVector::from_element(8, 0.1),
            a_eq: a,
            g_in: g,
        };
        let sol = solve_qp(&qp).unwrap();
        kkt = kkt
            .max(sol.stationarity_residual(&qp))
            .max(sol.equality_residual(&qp))
            .max(sol.max_violation(&qp))
            .max(sol.complementarity(&qp));
    }
    checks.push(("qp-kkt", kkt < 1e-8, format!("{kkt:.1e}")));

    let mut gap = 0.0f64;
    for _ in 0..20 {
        let g = random_matrix(&mut rng, 10, 4);
        let a = random_matrix(&mut rng, 1, 4);
        let x = random_matrix(&mut rng, 4, 1).column(0).into_owned();
        let mut s0 = DVector::from_element(10, 0.5);
        let mut z0 = DVector::from_fn(10, |_, _| rng.random_range(0.1..1.0));
        for i in [4, 7] {
            s0[i] = 2.0;
            z0[i] = 2.0 + z0[i + 1] + z0[i + 2];
        }
        let c = -(a.transpose() * DVector::from_element(1, rng.random_range(-1.0..1.0))) - g.transpose() * &z0;
        let problem =
            SocpProblem { c, b: &a * &x, h: &g * &x + &s0, a, g, cones: Cones { nonneg: 4, soc: vec![3, 3] } };
        let sol = solve_socp(&problem, &SocpSettings::default()).unwrap();
        let primal = problem.c.dot(&sol.x);
        let dual = -problem.b.dot(&sol.y) - problem.h.dot(&sol.z);
        gap = gap.max((primal - dual).abs() / (1.0 + primal.abs()));
    }
    checks.push(("socp-gap", gap < 1e-8, format!("{gap:.1e}")));

    let path =
        SplinePath::line(SplineBasis::uniform(5, 8).unwrap(), Vector3::zeros(), Vector3::new(2.0, 1.0, 0.0)).unwrap();
    let z = Vector3::zeros();
    let times: Vec<f64> = [0.3, 0.6, 1.2]
        .iter()
        .map(|&v| {
            let st = TemporalSettings { v_max: v, a_max: v, lambda_max: 1e3, rho: 0.01, ..TemporalSettings::default() };
            solve_temporal(&path, &z, &z, &st).unwrap().duration
        })
        .collect();
    let monotone = times.windows(2).all(|w| w[1] < w[0]);
    checks.push(("monotone", monotone, format!("{times:.2?}")));

    let gains = GeomGains::default();
    let worst_mu = (0..10_000)
        .map(|_| {
            let e = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)) * 10f64.powi(rng.random_range(-6..2));
            robust_position_term(&e, &gains).norm() / gains.delta_r
        })
        .fold(0.0, f64::max);
    checks.push(("mu_r", worst_mu <= 1.0 + 1e-12, format!("{worst_mu:.6}")));

    let gain = lqr_design(&p, &LqrWeights::default()).unwrap();
    let a = DMatrix::from_column_slice(14, 14, gain.a.as_slice());
    let b = DMatrix::from_column_slice(14, 4, gain.b.as_slice());
    let r_inv = DMatrix::from_diagonal(&DVector::from_iterator(4, LqrWeights::default().r.iter().map(|r| 1.0 / r)));
    let q = DMatrix::from_diagonal(&DVector::from_row_slice(&LqrWeights::default().q));
    let res =
        care_residual(&a, &(&b * r_inv * b.transpose()), &q, &DMatrix::from_column_slice(14, 14, gain.p.as_slice()));
    checks.push(("care", res < 1e-6, format!("{res:.1e}")));
    let abscissa = spectral_abscissa(&DMatrix::from_column_slice(14, 14, gain.closed_loop().as_slice()));
    checks.push(("hurwitz", abscissa < 0.0, format!("{abscissa:.3}")));

    let spec = MissionSpec::nominal();
    let flown = || {
        let plan = plan_mission(&spec, &p).unwrap();
        let trace = run_mission(&spec, &plan, &SimConfig::default(), &p).unwrap();
        (serde_json::to_string(&plan).unwrap(), trace.to_csv())
    };
    let same = flown() == flown();
    checks.push(("determinism", same, String::new()));

    let pass = checks.iter().all(|c| c.1);
    let detail = checks
        .iter()
        .map(|(n, ok, v)| {
            if v.is_empty() {
                format!("{n} {}", if *ok { "ok" } else { "FAIL" })
            } else {
                format!("{n} {} ({v})", if *ok { "ok" } else { "FAIL" })
            }
        })
        .collect::<Vec<_>>()
        .join(", ");
    Outcome { id: 7, name: "property suites", pass, detail }
}

fn criterion_8() -> Outcome {
    let (psi0, psi1, t) = (-0.4, 1.3, 3.7);
    let y = YawPolynomial::rest_to_rest(psi0, psi1, t);
    let (a0, a1, a2) = y.eval(0.0);
    let (b0, b1, b2) = y.eval(t);
    let boundary =
        [(a0 - psi0).abs(), a1.abs(), a2.abs(), (b0 - psi1).abs(), b1.abs(), b2.abs()].into_iter().fold(0.0, f64::max);
    let mid = (y.eval(0.5 * t).0 - 0.5 * (psi0 + psi1)).abs();
    let sym = (0..=100)
        .map(|i| {
            let s = t * i as f64 / 100.0;
            (y.eval(s).0 + y.eval(t - s).0 - (psi0 + psi1)).abs()
        })
        .fold(0.0, f64::max);
    Outcome {
        id: 8,
        name: "quintic yaw",
        pass: boundary < 1e-10 && mid < 1e-10 && sym < 1e-10,
        detail: format!("boundary {boundary:.1e}, midpoint {mid:.1e}, point symmetry {sym:.1e}"),
    }
}

fn main() {
    // Plain `cargo test` passes harness flags through; `--list` must succeed silently.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [fn() -> Outcome; 8] =
        [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8];
    let mut unexpected = 0;
    for criterion in criteria {
        let t0 = Instant::now();
        let o = criterion();
        let known = KNOWN_FAILURES.iter().find(|(id, _)| *id == o.id);
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("[{status}] {}. {}: {} [{:.1} s]", o.id, o.name, o.detail, t0.elapsed().as_secs_f64());
        match (o.pass, known) {
            (false, Some((_, why))) => println!("       expected failure: {why}"),
            (false, None) => unexpected += 1,
            (true, Some(_)) => println!("       listed as a known failure but passed"),
            (true, None) => {}
        }
    }
    if unexpected > 0 {
        println!("{unexpected} unexpected failure(s)");
        std::process::exit(1);
    }
}

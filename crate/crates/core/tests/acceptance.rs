//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::f64::consts::{FRAC_PI_2, PI};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;

use common::{invariants, load_config, oracles};
use softtraj::admm::{self, AdmmOptions, BoxConstraints, BoxSet};
use softtraj::contact::{
    contact_force_ode, force_from_indentation, friction_force, friction_force_rate, indentation_from_force,
    indentation_rate, radial_force_rate, stress_normal_z, ContactConfiguration, ContactForceState, ContactGeometry,
    ContactRates, Curvature, MaterialParams,
};
use softtraj::cost::PenalizedQuadratic;
use softtraj::ddp::{solve_ddp, DdpOptions, LinearDynamics, QuadraticCost, TrajectoryPair};
use softtraj::harness::{run_solve, SolveOutcome};
use softtraj::identification::{fit_friction, FrictionFitOptions};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn hertz_load_balance() -> Outcome {
    let mut rng = oracles::rng(1);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let force = rng.random_range(0.1..50.0);
        let young = 10f64.powf(rng.random_range(3.0..7.0));
        let radius = rng.random_range(0.002..0.05);
        let mat = MaterialParams::rigid_tool(young, 0.3, 0.5, 1.0);
        let geom = ContactGeometry::horizontal(radius).map_err(|e| e.to_string())?;
        let cfg = ContactConfiguration::from_force(force, &mat, &geom).map_err(|e| e.to_string())?;
        let a = cfg.contact_radius;
        // r = a sin t removes the square-root endpoint singularity
        let integrand = |t: f64| {
            let r = (a * t.sin()).min(a);
            stress_normal_z(r, &cfg).unwrap().abs() * r * a * t.cos()
        };
        let load = 2.0 * PI * oracles::simpson(integrand, 0.0, FRAC_PI_2, 4000);
        worst = worst.max(oracles::relative_error(load, force, 0.0));
    }
    check(worst < 1e-8, format!("max relative error {worst:.2e} (tol 1e-8)"))
}

/// Five-point derivative.
fn stencil(f: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
    (f(t - 2.0 * h) - 8.0 * f(t - h) + 8.0 * f(t + h) - f(t + 2.0 * h)) / (12.0 * h)
}

fn rate_consistency() -> Outcome {
    let mut rng = oracles::rng(2);
    let mut worst = [0.0f64; 4];
    let h = 1e-3;
    for _ in 0..10 {
        let young = 10f64.powf(rng.random_range(4.0..6.0));
        let nu = rng.random_range(0.2..0.5);
        let mat = MaterialParams::rigid_tool(young, nu, rng.random_range(0.2..0.8), rng.random_range(1.0..20.0));
        let geom = ContactGeometry::horizontal(rng.random_range(0.005..0.02)).map_err(|e| e.to_string())?;
        let mass = rng.random_range(0.1..1.0);
        let radius = rng.random_range(0.02..0.2);
        let outward = rng.random_bool(0.5);
        let (f0, fa, fw, fp) = (
            rng.random_range(2.0..10.0),
            rng.random_range(0.1..0.6),
            rng.random_range(0.5..3.0),
            rng.random_range(0.0..PI),
        );
        let (v0, va, vw, vp) = (
            rng.random_range(0.02..0.2),
            rng.random_range(0.1..0.6),
            rng.random_range(0.5..3.0),
            rng.random_range(0.0..PI),
        );
        let load = |t: f64| f0 * (1.0 + fa * (fw * t + fp).sin());
        let load_rate = |t: f64| f0 * fa * fw * (fw * t + fp).cos();
        let speed = |t: f64| v0 * (1.0 + va * (vw * t + vp).cos());
        let speed_rate = |t: f64| -v0 * va * vw * (vw * t + vp).sin();
        let depth = |t: f64| indentation_from_force(load(t), &mat, &geom).unwrap();
        let friction = |t: f64| friction_force(load(t), speed(t), &mat, &geom).unwrap();
        let radial = |t: f64| mass * speed(t).powi(2) / radius;
        let sign = if outward { 1.0 } else { -1.0 };
        let n_v = Vector3::x();
        let normal = Vector3::z();
        let n_perp = n_v.cross(&normal);
        let force_vec = |t: f64| normal * load(t) + n_v * friction(t) + n_perp * (sign * radial(t));
        for i in 0..20 {
            let t = 0.25 * i as f64;
            let rel = |fd: f64, model: f64, scale: f64| (fd - model).abs() / model.abs().max(1e-6 * scale);

            let zdot = indentation_rate(load(t), load_rate(t), &mat, &geom).map_err(|e| e.to_string())?;
            worst[0] = worst[0].max(rel(stencil(depth, t, h), -zdot, depth(t)));

            let fr = friction_force_rate(load(t), load_rate(t), depth(t), zdot, speed_rate(t), &mat, &geom);
            worst[1] = worst[1].max(rel(stencil(friction, t, h), fr, friction(t)));

            let rr = radial_force_rate(mass, speed(t), speed_rate(t), radius).map_err(|e| e.to_string())?;
            worst[2] = worst[2].max(rel(stencil(radial, t, h), rr, radial(t)));

            // the ODE driven by the indentation path must reproduce the assembled force
            let d = depth(t);
            let ddot = stencil(depth, t, h);
            let fn_ = force_from_indentation(d, &mat, &geom).map_err(|e| e.to_string())?;
            let state = ContactForceState::new(force_vec(t), n_v, normal).map_err(|e| e.to_string())?;
            let rates = ContactRates {
                indentation: d,
                indentation_rate: ddot,
                normal_force: fn_,
                normal_force_rate: load_rate(t),
                speed: speed(t),
                speed_rate: speed_rate(t),
            };
            let curvature = Curvature::Arc { radius, outward };
            let ode = contact_force_ode(&state, &rates, &mat, &geom, mass, curvature, 1e-9).map_err(|e| e.to_string())?;
            let scale = force_vec(t).norm();
            for c in 0..3 {
                let fd = stencil(|s| force_vec(s)[c], t, h);
                worst[3] = worst[3].max(rel(fd, ode[c], scale));
            }
        }
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    check(
        max < 1e-5,
        format!(
            "indentation {:.1e}, friction {:.1e}, radial {:.1e}, force ODE {:.1e} (tol 1e-5)",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn ddp_riccati() -> Outcome {
    let mut rng = oracles::rng(3);
    let mut worst = 0.0f64;
    let horizon = 100;
    for i in 0..10 {
        let (n, m) = if i == 0 { (29, 13) } else { (rng.random_range(2..=29), rng.random_range(1..=13)) };
        let a = oracles::random_matrix(&mut rng, n, n, 1.0 / (n as f64).sqrt());
        let b = oracles::random_matrix(&mut rng, n, m, 1.0);
        let q = oracles::random_spd(&mut rng, n, 0.1);
        let r = oracles::random_spd(&mut rng, m, 0.1);
        let qf = oracles::random_spd(&mut rng, n, 1.0);
        let x0 = oracles::random_matrix(&mut rng, n, 1, 1.0).column(0).into_owned();
        let optimum = oracles::riccati_optimal_cost(&a, &b, &q, &r, &qf, &x0, horizon);
        let dynamics = LinearDynamics { a, b };
        let cost = QuadraticCost::new(q, r, qf);
        let init = TrajectoryPair::rollout(&dynamics, &cost, x0, vec![DVector::zeros(m); horizon]).map_err(|e| e.to_string())?;
        let (traj, _) = solve_ddp(init, &dynamics, &cost, &DdpOptions::default()).map_err(|e| e.to_string())?;
        worst = worst.max(oracles::relative_error(traj.cost, optimum, 0.0));
    }
    check(worst < 1e-7, format!("max relative cost error {worst:.2e} (tol 1e-7)"))
}

fn admm_box_qp() -> Outcome {
    let mut rng = oracles::rng(4);
    let (n, m, horizon) = (4, 2, 20);
    let a = DMatrix::from_row_slice(4, 4, &[1.0, 0.1, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.1, 0.0, 0.0, 0.0, 1.0]);
    let b = DMatrix::from_row_slice(4, 2, &[0.005, 0.0, 0.1, 0.0, 0.0, 0.005, 0.0, 0.1]);
    let q = DMatrix::identity(n, n);
    let r = DMatrix::identity(m, m) * 0.01;
    let qf = DMatrix::identity(n, n) * 10.0;
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(0.2..0.4));
    let bound = 0.5;

    let qp = oracles::CondensedQp::build(&a, &b, &q, &r, &qf, &x0, horizon);
    let u_star = qp.solve_box(bound);
    let active = u_star.iter().filter(|u| (u.abs() - bound).abs() < 1e-9).count();
    let qp_cost = qp.value(&u_star);

    let dynamics = LinearDynamics { a, b };
    let mut cost = PenalizedQuadratic {
        base: QuadraticCost::new(q, r, qf),
        penalty: None,
    };
    let sets = BoxConstraints {
        state_indices: Vec::new(),
        state: BoxSet::unbounded(0),
        control: BoxSet::new(DVector::from_element(m, -bound), DVector::from_element(m, bound)).map_err(|e| e.to_string())?,
        rho_state: 1.0,
        rho_control: 1.0,
    };
    let opts = AdmmOptions {
        tol_primal: 1e-5,
        tol_dual: 1e-5,
        max_admm_iters: 2000,
        ..AdmmOptions::default()
    };
    let init = TrajectoryPair::rollout(&dynamics, &cost, x0.clone(), vec![DVector::zeros(m); horizon]).map_err(|e| e.to_string())?;
    let solution = admm::solve(init, &dynamics, &mut cost, &sets, &opts).map_err(|e| e.to_string())?;
    let copies = &solution.workspace.control_hat;
    let in_bounds = copies.iter().all(|u| u.iter().all(|v| (-bound..=bound).contains(v)));
    let feasible = TrajectoryPair::rollout(&dynamics, &cost.base, x0, copies.clone()).map_err(|e| e.to_string())?;
    let rel = oracles::relative_error(feasible.cost, qp_cost, 0.0);
    let total = u_star.len();
    check(
        rel < 1e-3 && in_bounds && solution.report.converged && active > 0 && active < total,
        format!(
            "relative cost gap {rel:.2e} (tol 1e-3), {active}/{total} bounds active, copies in bounds: {in_bounds}, {} ADMM iterations",
            solution.report.iterations
        ),
    )
}

fn solve_config(name: &str) -> Result<SolveOutcome, String> {
    let cfg = load_config(name);
    let mut problem = cfg.problem().map_err(|e| e.to_string())?;
    run_solve(&mut problem, &cfg.admm_options(), &cfg.controller).map_err(|e| format!("{name}: {e}"))
}

fn residuals(circle: &SolveOutcome) -> Outcome {
    let report = &circle.report;
    let last = report.history.last().ok_or("empty ADMM history")?;
    check(
        report.converged && report.iterations <= 50 && last.r_primal < 1e-2 && last.s_dual < 1e-2,
        format!(
            "{} ADMM iterations, r = {:.2e}, s = {:.2e} (tol 1e-2 within 50)",
            report.iterations, last.r_primal, last.s_dual
        ),
    )
}

fn warm_start(circle: &SolveOutcome) -> Outcome {
    let later: Vec<usize> = circle.report.ddp_reports.iter().skip(1).map(|r| r.iterations).collect();
    let first = circle.report.ddp_reports.first().map_or(0, |r| r.iterations);
    let ok = !later.is_empty() && later.iter().all(|&i| i <= 10) && circle.report.ddp_reports.iter().skip(1).all(|r| r.converged);
    check(ok, format!("first call {first} iterations, later calls {later:?} (each ≤ 10)"))
}

fn identification_recovery() -> Outcome {
    let truth = oracles::FrictionTruth {
        mu: 0.4512,
        kd: 13.1315,
        nu: 0.45,
        radius: 0.01,
        modulus: 1e5,
    };
    let opts = FrictionFitOptions::default();
    let fit = |noise: f64, seed: u64| -> Result<(f64, f64), String> {
        let rec = oracles::synthetic_sliding(&truth, 200, noise, seed);
        let report = fit_friction(&rec, truth.nu, truth.radius, truth.modulus, &opts).map_err(|e| e.to_string())?;
        let mu = report.get("mu").ok_or("mu missing")?;
        let kd = report.get("k_d").ok_or("k_d missing")?;
        Ok((oracles::relative_error(mu, truth.mu, 0.0), oracles::relative_error(kd, truth.kd, 0.0)))
    };
    let (mu_clean, kd_clean) = fit(0.0, 70)?;
    let mut mu_err = Vec::new();
    let mut kd_err = Vec::new();
    for seed in 0..100 {
        let (a, b) = fit(0.01, 1000 + seed)?;
        mu_err.push(a);
        kd_err.push(b);
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        0.5 * (v[49] + v[50])
    };
    let (mu_med, kd_med) = (median(&mut mu_err), median(&mut kd_err));
    check(
        mu_clean < 5e-7 && kd_clean < 5e-7 && mu_med < 0.02 && kd_med < 0.02,
        format!(
            "noiseless rel error mu {mu_clean:.1e}, k_d {kd_clean:.1e} (tol 5e-7); 1% noise median mu {:.2}%, k_d {:.2}% (tol 2%)",
            100.0 * mu_med,
            100.0 * kd_med
        ),
    )
}

fn controller_ordering(outcomes: &[(&str, &SolveOutcome)]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, o) in outcomes {
        let (w, p) = (o.comparison.a.rms_force_norm, o.comparison.b.rms_force_norm);
        ok &= w < p;
        parts.push(format!("{name} {w:.4} < {p:.4}"));
    }
    check(ok, format!("RMS force error wrench vs position [N]: {}", parts.join(", ")))
}

fn invariant_suite() -> Outcome {
    let mut failures = Vec::new();
    for (name, run) in invariants::ALL {
        if let Err(e) = run() {
            failures.push(format!("{name}: {e}"));
        }
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} invariants, 0 failures", invariants::ALL.len())
        } else {
            failures.join("; ")
        },
    )
}

struct Tally {
    failed: usize,
}

impl Tally {
    fn report(&mut self, id: u32, title: &str, budget_s: f64, run: impl FnOnce() -> Outcome) {
        let t0 = Instant::now();
        let outcome = run();
        let secs = t0.elapsed().as_secs_f64();
        let (mut pass, mut detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        if secs > budget_s {
            pass = false;
            detail.push_str(&format!("; over time budget {budget_s} s"));
        }
        if !pass {
            self.failed += 1;
        }
        println!("[{}] {id}. {title}: {detail} ({secs:.2} s)", if pass { "PASS" } else { "FAIL" });
    }
}

fn main() {
    // libtest passes flags such as --nocapture; the suite takes none
    let mut tally = Tally { failed: 0 };
    tally.report(1, "Hertz load balance", 1.0, hertz_load_balance);
    tally.report(2, "rate models vs finite differences", 5.0, rate_consistency);
    tally.report(3, "DDP vs Riccati optimum", 30.0, ddp_riccati);
    tally.report(4, "ADMM vs box-constrained QP", 30.0, admm_box_qp);

    let mut solved = None;
    tally.report(5, "circle residuals", 600.0, || {
        let outcome = solve_config("circle.toml");
        let result = outcome.as_ref().map_err(|e| e.clone()).and_then(residuals);
        solved = Some(outcome);
        result
    });
    let circle = solved.expect("criterion 5 ran");
    tally.report(6, "warm-started DDP iterations", 600.0, || warm_start(circle.as_ref().map_err(|e| e.clone())?));

    tally.report(7, "friction identification recovery", 60.0, identification_recovery);

    tally.report(8, "wrench control beats position control", 300.0, || {
        let circle = circle.as_ref().map_err(|e| e.clone())?;
        let line = solve_config("line.toml")?;
        let eight = solve_config("figure_eight.toml")?;
        controller_ordering(&[("circle", circle), ("line", &line), ("figure_eight", &eight)])
    });

    tally.report(9, "invariant suite", 300.0, invariant_suite);

    println!("{} of 9 criteria failed", tally.failed);
    if tally.failed > 0 {
        std::process::exit(1);
    }
}

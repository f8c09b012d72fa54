//! Property checks run both as ordinary tests and by the acceptance runner.
//!
//! Each check drives its own deterministic proptest runner and reports the
//! first counterexample as an error string.

use nalgebra::{DVector, Vector3};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use softtraj::admm::{project_control, project_friction, project_joint, BoxSet, FrictionSet};
use softtraj::config::RunConfig;
use softtraj::ddp::{solve_ddp, DdpOptions, LinearDynamics, QuadraticCost, TrajectoryPair};
use softtraj::multibody::{iiwa_like, iiwa_like_seed, ContactSystem, ControlInput, FullState, KinematicChain};

use super::oracles;

pub type Check = fn() -> Result<(), String>;

/// Every invariant with a short name, in reporting order.
pub const ALL: [(&str, Check); 9] = [
    ("joint projection idempotence/optimality", joint_projection),
    ("control projection idempotence/optimality", control_projection),
    ("friction projection idempotence/optimality", friction_projection),
    ("mass matrix symmetric positive definite", mass_matrix_spd),
    ("skew symmetry of M' - 2C", skew_symmetry),
    ("Jacobian matches forward-kinematics differences", fk_jacobian),
    ("RK4 global error is fourth order", integrator_order),
    ("stepping and DDP are deterministic", determinism),
    ("linearization agrees with a five-point stencil", linearization_stencil),
];

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn finish(r: Result<(), proptest::test_runner::TestError<impl std::fmt::Debug>>) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

fn random_box(dim: usize) -> impl Strategy<Value = BoxSet> {
    prop::collection::vec((-5.0f64..5.0, 0.0f64..4.0), dim).prop_map(|pairs| {
        let lower = DVector::from_iterator(pairs.len(), pairs.iter().map(|p| p.0));
        let upper = DVector::from_iterator(pairs.len(), pairs.iter().map(|p| p.0 + p.1));
        BoxSet::new(lower, upper).unwrap()
    })
}

type SequenceProjection = fn(&[DVector<f64>], &BoxSet) -> Vec<DVector<f64>>;

fn box_check(dim: usize, project: SequenceProjection) -> Result<(), String> {
    let strategy = (
        random_box(dim),
        prop::collection::vec(-10.0f64..10.0, dim),
        prop::collection::vec(prop::collection::vec(0.0f64..1.0, dim), 100),
    );
    finish(runner(1000).run(&strategy, |(set, z, feasible)| {
        let z = DVector::from_vec(z);
        let p = project(std::slice::from_ref(&z), &set).remove(0);
        let pp = project(std::slice::from_ref(&p), &set).remove(0);
        prop_assert_eq!(&pp, &p);
        prop_assert_eq!(set.violation(p.as_slice()), 0.0);
        let dist = (&z - &p).norm();
        for t in feasible {
            let y = DVector::from_iterator(dim, (0..dim).map(|i| set.lower[i] + t[i] * (set.upper[i] - set.lower[i])));
            prop_assert!(dist <= (&z - &y).norm() + 1e-12);
        }
        Ok(())
    }))
}

pub fn joint_projection() -> Result<(), String> {
    box_check(7, project_joint)
}

pub fn control_projection() -> Result<(), String> {
    box_check(13, project_control)
}

fn friction_set(radius: f64, offset: f64) -> FrictionSet {
    FrictionSet {
        mass: 0.5,
        mu: 0.4512,
        offset,
        normal: Vector3::z(),
        radius: vec![radius],
    }
}

pub fn friction_projection() -> Result<(), String> {
    let strategy = (
        0.01f64..1.0,
        0.0f64..0.5,
        prop::collection::vec(-2.0f64..2.0, 6),
        prop::collection::vec(-10.0f64..10.0, 3),
        prop::collection::vec((0.0f64..1.0, 0.0f64..std::f64::consts::TAU, -2.0f64..2.0), 100),
    );
    finish(runner(1000).run(&strategy, |(radius, offset, rates, force, feasible)| {
        let set = friction_set(radius, offset);
        let mut z = DVector::zeros(9);
        z.rows_mut(0, 6).copy_from_slice(&rates);
        z.rows_mut(6, 3).copy_from_slice(&force);
        let p = project_friction(std::slice::from_ref(&z), &set).remove(0);
        let pp = project_friction(std::slice::from_ref(&p), &set).remove(0);
        prop_assert!((&pp - &p).amax() <= 1e-12 * (1.0 + p.amax()));
        prop_assert!(set.violation(0, p.as_slice()) <= 1e-12);
        // nearest point among feasible points sharing the projected load
        let bound = (radius * (set.mu * p[8].max(0.0) + offset) / set.mass).sqrt();
        let dist = (&z - &p).norm();
        for (s, angle, vz) in feasible {
            let mut y = p.clone();
            y[0] = s * bound * angle.cos();
            y[1] = s * bound * angle.sin();
            y[2] = vz;
            y.rows_mut(3, 3).copy_from(&z.rows(3, 3));
            prop_assert!(dist <= (&z - &y).norm() + 1e-12);
        }
        Ok(())
    }))
}

fn joint_sample(chain: &KinematicChain) -> impl Strategy<Value = Vec<f64>> {
    let lower = chain.lower_limits();
    let upper = chain.upper_limits();
    prop::collection::vec(0.025f64..0.975, chain.dof()).prop_map(move |t| {
        t.iter()
            .enumerate()
            .map(|(i, s)| lower[i] + s * (upper[i] - lower[i]))
            .collect()
    })
}

pub fn mass_matrix_spd() -> Result<(), String> {
    let chain = iiwa_like();
    finish(runner(1000).run(&joint_sample(&chain), |q| {
        let m = chain.mass_matrix(&q);
        let asym = (&m - m.transpose()).amax();
        prop_assert!(asym <= 1e-12 * m.amax(), "asymmetry {}", asym);
        let eig = m.symmetric_eigenvalues();
        prop_assert!(eig.min() > 0.0, "smallest eigenvalue {}", eig.min());
        Ok(())
    }))
}

pub fn skew_symmetry() -> Result<(), String> {
    let chain = iiwa_like();
    let strategy = (joint_sample(&chain), prop::collection::vec(-2.0f64..2.0, 7));
    finish(runner(100).run(&strategy, |(q, qd)| {
        let h = 1e-5;
        let shifted = |s: f64| -> Vec<f64> { q.iter().zip(&qd).map(|(a, b)| a + s * b).collect() };
        // Ṁ along q̇ from a five-point stencil, independent of the Christoffel construction
        let m_dot = (chain.mass_matrix(&shifted(-2.0 * h)) - chain.mass_matrix(&shifted(-h)) * 8.0
            + chain.mass_matrix(&shifted(h)) * 8.0
            - chain.mass_matrix(&shifted(2.0 * h)))
            / (12.0 * h);
        let c = chain.coriolis_matrix(&q, &qd);
        let v = DVector::from_column_slice(&qd);
        let value = v.dot(&((m_dot - c * 2.0) * &v));
        prop_assert!(value.abs() <= 1e-8 * (1.0 + v.norm_squared()), "q̇ᵀ(Ṁ−2C)q̇ = {}", value);
        Ok(())
    }))
}

pub fn fk_jacobian() -> Result<(), String> {
    let chain = iiwa_like();
    let strategy = (joint_sample(&chain), prop::collection::vec(-1.0f64..1.0, 7));
    finish(runner(200).run(&strategy, |(q, qd)| {
        let h = 1e-6;
        let at = |s: f64| chain.forward_kinematics(&q.iter().zip(&qd).map(|(a, b)| a + s * b).collect::<Vec<_>>());
        let plus = at(h);
        let minus = at(-h);
        let lin = (plus.translation.vector - minus.translation.vector) / (2.0 * h);
        let ang = (plus.rotation * minus.rotation.inverse()).scaled_axis() / (2.0 * h);
        let twist = chain.jacobian(&q) * DVector::from_column_slice(&qd);
        let err_lin = (twist.fixed_rows::<3>(0) - lin).norm();
        let err_ang = (twist.fixed_rows::<3>(3) - ang).norm();
        prop_assert!(err_lin < 1e-6 && err_ang < 1e-6, "linear {} angular {}", err_lin, err_ang);
        let rot = plus.rotation.to_rotation_matrix();
        let ortho = (rot.matrix().transpose() * rot.matrix() - nalgebra::Matrix3::identity()).amax();
        prop_assert!(ortho < 1e-10 && (rot.matrix().determinant() - 1.0).abs() < 1e-10);
        Ok(())
    }))
}

/// Airborne tool and an unactuated arm swinging under gravity.
fn free_swing_system(dt: f64) -> ContactSystem {
    let cfg = RunConfig::circle_default();
    ContactSystem::new(iiwa_like(), cfg.tool, cfg.contact(), dt, Vec::new()).unwrap()
}

fn free_swing_start() -> FullState {
    let mut x = FullState::default();
    x.q.copy_from_slice(&iiwa_like_seed());
    x.qd = nalgebra::SVector::<f64, 7>::from_fn(|i, _| 0.3 * (i as f64 - 3.0));
    x.pose[2] = -5.0;
    x.pose_rate[0] = 0.1;
    x
}

fn free_swing_error(dt: f64, reference: &FullState, duration: f64) -> f64 {
    let sys = free_swing_system(dt);
    let steps = (duration / dt).round() as usize;
    let mut x = free_swing_start();
    let u = ControlInput::default();
    for k in 0..steps {
        x = sys.step_state(&x, &u, k).unwrap();
    }
    (x.to_vector() - reference.to_vector()).norm()
}

pub fn integrator_order() -> Result<(), String> {
    let duration = 0.4;
    let fine = 0.02 / 64.0;
    let sys = free_swing_system(fine);
    let mut reference = free_swing_start();
    let u = ControlInput::default();
    for k in 0..(duration / fine).round() as usize {
        reference = sys.step_state(&reference, &u, k).map_err(|e| e.to_string())?;
    }
    let errors: Vec<f64> = [0.02, 0.01, 0.005]
        .iter()
        .map(|&dt| free_swing_error(dt, &reference, duration))
        .collect();
    for pair in errors.windows(2) {
        let ratio = pair[0] / pair[1];
        if !(8.0..=32.0).contains(&ratio) {
            return Err(format!("error ratio {ratio:.2} outside [8, 32] (errors {errors:?})"));
        }
    }
    // ballistic tool block against the closed form
    let g = RunConfig::circle_default().tool.gravity;
    let sys = free_swing_system(0.01);
    let mut x = free_swing_start();
    x.qd.fill(0.0);
    let z0 = x.pose[2];
    for k in 0..100 {
        x = sys.step_state(&x, &u, k).map_err(|e| e.to_string())?;
    }
    let drop = x.pose[2] - z0;
    if (drop - 0.5 * g.z).abs() > 1e-8 {
        return Err(format!("free-fall drop {drop} after 1 s, expected {}", 0.5 * g.z));
    }
    Ok(())
}

fn random_lq(rng: &mut rand_chacha::ChaCha8Rng, n: usize, m: usize) -> (LinearDynamics, QuadraticCost, DVector<f64>) {
    let a = oracles::random_matrix(rng, n, n, 1.0 / (n as f64).sqrt());
    let b = oracles::random_matrix(rng, n, m, 1.0);
    let q = oracles::random_spd(rng, n, 0.1);
    let r = oracles::random_spd(rng, m, 0.1);
    let x0 = oracles::random_matrix(rng, n, 1, 1.0).column(0).into_owned();
    (LinearDynamics { a, b }, QuadraticCost::new(q.clone(), r, q), x0)
}

pub fn determinism() -> Result<(), String> {
    let cfg = RunConfig::circle_default();
    let problem = cfg.problem().map_err(|e| e.to_string())?;
    let strategy = prop::collection::vec(-0.05f64..0.05, 13);
    finish(runner(50).run(&strategy, |du| {
        let mut u = problem.initial_control.to_vector();
        u += DVector::from_vec(du);
        let u = ControlInput::from_slice(u.as_slice()).unwrap();
        let a = problem.system.step_state(&problem.initial, &u, 3).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let b = problem.system.step_state(&problem.initial, &u, 3).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(a.to_vector().iter().zip(b.to_vector().iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        Ok(())
    }))?;
    let mut rng = oracles::rng(11);
    let (dynamics, cost, x0) = random_lq(&mut rng, 6, 3);
    let run = || {
        let init = TrajectoryPair::rollout(&dynamics, &cost, x0.clone(), vec![DVector::zeros(3); 50]).unwrap();
        solve_ddp(init, &dynamics, &cost, &DdpOptions::default()).unwrap().0
    };
    let (first, second) = (run(), run());
    if first != second {
        return Err("two DDP solves of the same problem differ".into());
    }
    Ok(())
}

pub fn linearization_stencil() -> Result<(), String> {
    let cfg = RunConfig::circle_default();
    let problem = cfg.problem().map_err(|e| e.to_string())?;
    let sys = &problem.system;
    // the tool has to slide: the friction direction has a kink at rest
    let knot = 50;
    let mut x = problem.initial;
    x.pose_rate[0] = 0.05;
    x.pose_rate[1] = 0.02;
    x.force[0] = -1.5;
    x.force[1] = -0.6;
    x.qd.fill(0.1);
    let u = problem.initial_control;
    let (a, b) = sys.linearize_state(&x, &u, knot).map_err(|e| e.to_string())?;
    let xv = x.to_vector();
    let uv = u.to_vector();
    let step = |xv: &DVector<f64>, uv: &DVector<f64>| -> DVector<f64> {
        let xs = FullState::from_slice(xv.as_slice()).unwrap();
        let us = ControlInput::from_slice(uv.as_slice()).unwrap();
        sys.step_state(&xs, &us, knot).unwrap().to_vector()
    };
    let stencil = |f: &dyn Fn(f64) -> DVector<f64>, h: f64| (f(-2.0 * h) - f(-h) * 8.0 + f(h) * 8.0 - f(2.0 * h)) / (12.0 * h);
    let mut worst = 0.0f64;
    let mut check = |col: DVector<f64>, reference: DVector<f64>| {
        let scale = reference.amax().max(1e-3);
        worst = worst.max((col - reference).amax() / scale);
    };
    for j in 0..xv.len() {
        let h = 1e-4 * xv[j].abs().max(1e-2);
        let f = |s: f64| {
            let mut p = xv.clone();
            p[j] += s;
            step(&p, &uv)
        };
        check(a.column(j).into_owned(), stencil(&f, h));
    }
    for j in 0..uv.len() {
        let h = 1e-4 * uv[j].abs().max(1e-2);
        let f = |s: f64| {
            let mut p = uv.clone();
            p[j] += s;
            step(&xv, &p)
        };
        check(b.column(j).into_owned(), stencil(&f, h));
    }
    if worst > 1e-5 {
        return Err(format!("largest relative column mismatch {worst:.3e}"));
    }
    Ok(())
}

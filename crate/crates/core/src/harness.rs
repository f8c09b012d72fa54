//! Scenarios, reference paths, controller rollouts and trace comparison.
//!
//! The simulator doubles as ground truth: rollouts replay a plan through the
//! same multibody and contact model under a feedback law, so comparisons
//! isolate the controller and not model fidelity.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Isometry3, Translation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::admm::{self, AdmmOptions, AdmmReport, BoxSet, ConstraintSets, FrictionSet};
use crate::contact::{indentation_from_force, ContactBlock, Curvature};
use crate::cost::{CostSpec, CostWeights};
use crate::ddp::TrajectoryPair;
use crate::error::{Error, Result};
use crate::multibody::{euler_rate_map, euler_rotation, layout, ContactSystem, ControlInput, FullState, JointVector, KinematicChain, StepContext, ToolBody};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathKind {
    Line { start: [f64; 2], end: [f64; 2] },
    Circle { center: [f64; 2], radius: f64 },
    /// Gerono lemniscate `x = A sin s`, `y = A sin s cos s` around `center`.
    FigureEight { center: [f64; 2], size: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(flatten)]
    pub path: PathKind,
    pub duration: f64,
    /// Desired normal load; the desired force is `(0, 0, force_desired)`.
    pub force_desired: f64,
    /// Surface height along the world z axis.
    #[serde(default)]
    pub surface_height: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::Config("scenario duration must be positive".into()));
        }
        if !(self.force_desired >= 0.0) {
            return Err(Error::Config("desired force must be non-negative".into()));
        }
        match self.path {
            PathKind::Circle { radius, .. } if !(radius > 0.0) => {
                Err(Error::Config("circle radius must be positive".into()))
            }
            PathKind::FigureEight { size, .. } if !(size > 0.0) => {
                Err(Error::Config("figure-eight size must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Circle of radius 5 cm around the origin, 5 s, 5 N.
    pub fn circle() -> Self {
        Self {
            path: PathKind::Circle {
                center: [0.0, 0.0],
                radius: 0.05,
            },
            duration: 5.0,
            force_desired: 5.0,
            surface_height: 0.0,
        }
    }

    pub fn line() -> Self {
        Self {
            path: PathKind::Line {
                start: [-0.05, 0.0],
                end: [0.05, 0.0],
            },
            ..Self::circle()
        }
    }

    pub fn figure_eight() -> Self {
        Self {
            path: PathKind::FigureEight {
                center: [0.0, 0.0],
                size: 0.05,
            },
            ..Self::circle()
        }
    }
}

/// Desired tooltip motion and force at knots `0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub dt: f64,
    pub positions: Vec<Vector3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
    pub tangents: Vec<Vector3<f64>>,
    pub curvature: Vec<Curvature>,
    pub force: Vec<Vector3<f64>>,
}

impl Reference {
    pub fn knots(&self) -> usize {
        self.positions.len()
    }

    pub fn step_contexts(&self) -> Vec<StepContext> {
        self.tangents
            .iter()
            .zip(&self.curvature)
            .map(|(t, c)| StepContext {
                tangent: *t,
                curvature: *c,
            })
            .collect()
    }

    /// Curvature radius per knot (infinite on straight segments).
    pub fn curvature_radius(&self) -> Vec<f64> {
        self.curvature.iter().map(Curvature::radius).collect()
    }
}

/// Planar curve `r(s)` with first and second derivatives.
fn curve(path: &PathKind, s: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
    match *path {
        PathKind::Line { start, end } => {
            let d = [end[0] - start[0], end[1] - start[1]];
            ([start[0] + s * d[0], start[1] + s * d[1]], d, [0.0, 0.0])
        }
        PathKind::Circle { center, radius } => {
            let (sn, cs) = s.sin_cos();
            (
                [center[0] + radius * cs, center[1] + radius * sn],
                [-radius * sn, radius * cs],
                [-radius * cs, -radius * sn],
            )
        }
        PathKind::FigureEight { center, size } => {
            let (sn, cs) = s.sin_cos();
            let (s2, c2) = (2.0 * s).sin_cos();
            (
                [center[0] + size * sn, center[1] + 0.5 * size * s2],
                [size * cs, size * c2],
                [-size * sn, -2.0 * size * s2],
            )
        }
    }
}

fn parameter_span(path: &PathKind) -> f64 {
    match path {
        PathKind::Line { .. } => 1.0,
        _ => 2.0 * PI,
    }
}

/// Signed curvature `(x'y'' − y'x'') / |r'|³`; positive for counter-clockwise turns.
pub fn signed_curvature(d1: [f64; 2], d2: [f64; 2]) -> f64 {
    let speed = d1[0].hypot(d1[1]);
    (d1[0] * d2[1] - d1[1] * d2[0]) / speed.powi(3)
}

/// Samples the path at constant tangential speed.
pub fn build_reference(
    scenario: &Scenario,
    dt: f64,
    horizon: usize,
    contact: &ContactBlock,
) -> Result<Reference> {
    scenario.validate()?;
    let path = scenario.path;
    let span = parameter_span(&path);
    let speed_of = |s: f64| {
        let (_, d1, _) = curve(&path, s);
        d1[0].hypot(d1[1])
    };

    // cumulative arc length on a fine grid (Simpson per cell)
    let cells = 20_000;
    let h = span / cells as f64;
    let mut arc = Vec::with_capacity(cells + 1);
    arc.push(0.0);
    for i in 0..cells {
        let a = i as f64 * h;
        let inc = h / 6.0 * (speed_of(a) + 4.0 * speed_of(a + 0.5 * h) + speed_of(a + h));
        arc.push(arc[i] + inc);
    }
    let length = arc[cells];

    // parameter at arc length `target`: bracket on the grid, then Newton
    let param_at = |target: f64| -> f64 {
        let idx = arc.partition_point(|&v| v < target).clamp(1, cells);
        let (a0, a1) = (arc[idx - 1], arc[idx]);
        let mut s = (idx - 1) as f64 * h + if a1 > a0 { (target - a0) / (a1 - a0) * h } else { 0.0 };
        for _ in 0..4 {
            let base = (idx - 1) as f64 * h;
            let partial = (s - base) / 6.0
                * (speed_of(base) + 4.0 * speed_of(0.5 * (base + s)) + speed_of(s));
            let err = arc[idx - 1] + partial - target;
            s -= err / speed_of(s);
        }
        s
    };

    let total_time = dt * horizon as f64;
    let speed = length / total_time;
    let depth = if scenario.force_desired > 0.0 {
        indentation_from_force(scenario.force_desired, &contact.material, &contact.geometry)?
    } else {
        0.0
    };
    let z = scenario.surface_height + depth;
    let force = Vector3::new(0.0, 0.0, scenario.force_desired);

    let mut reference = Reference {
        dt,
        positions: Vec::with_capacity(horizon + 1),
        velocities: Vec::with_capacity(horizon + 1),
        tangents: Vec::with_capacity(horizon + 1),
        curvature: Vec::with_capacity(horizon + 1),
        force: vec![force; horizon + 1],
    };
    for k in 0..=horizon {
        let s = if k == horizon {
            span
        } else {
            param_at(length * k as f64 / horizon as f64)
        };
        let (p, d1, d2) = curve(&path, s);
        let norm = d1[0].hypot(d1[1]);
        let tangent = Vector3::new(d1[0] / norm, d1[1] / norm, 0.0);
        reference.positions.push(Vector3::new(p[0], p[1], z));
        reference.velocities.push(tangent * speed);
        reference.tangents.push(tangent);
        reference.curvature.push(match path {
            PathKind::Line { .. } => Curvature::Straight,
            _ => Curvature::from_signed(signed_curvature(d1, d2)),
        });
    }
    Ok(reference)
}

/// Feedback gains of the wrench law `W̄ = W_ff − K e − D ė` (orientation alike).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerGains {
    /// Diagonal of the position stiffness `K` (N/m).
    pub stiffness: [f64; 3],
    /// Diagonal of the position damping (N·s/m).
    pub damping: [f64; 3],
    /// Diagonal of the orientation stiffness (N·m/rad), acting on the Euler angles.
    pub orientation_stiffness: [f64; 3],
    pub orientation_damping: [f64; 3],
    /// Joint stiffness (1/s²); joint errors are scaled by the mass matrix.
    pub joint_stiffness: f64,
    /// Joint damping (1/s).
    pub joint_damping: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            stiffness: [800.0; 3],
            damping: [25.0; 3],
            orientation_stiffness: [5.0; 3],
            orientation_damping: [0.1; 3],
            joint_stiffness: 100.0,
            joint_damping: 20.0,
        }
    }
}

impl ControllerGains {
    pub fn zero() -> Self {
        Self {
            stiffness: [0.0; 3],
            damping: [0.0; 3],
            orientation_stiffness: [0.0; 3],
            orientation_damping: [0.0; 3],
            joint_stiffness: 0.0,
            joint_damping: 0.0,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let s = |a: [f64; 3]| a.map(|v| v * c);
        Self {
            stiffness: s(self.stiffness),
            damping: s(self.damping),
            orientation_stiffness: s(self.orientation_stiffness),
            orientation_damping: s(self.orientation_damping),
            joint_stiffness: self.joint_stiffness * c,
            joint_damping: self.joint_damping * c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.stiffness,
            self.damping,
            self.orientation_stiffness,
            self.orientation_damping,
        ];
        if all.iter().flatten().chain([&self.joint_stiffness, &self.joint_damping]).any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("controller gains must be non-negative".into()));
        }
        Ok(())
    }

    /// Feedback wrench for pose error `e` and rate error `ė`, both `(position, Euler angles)`.
    /// The Euler-angle term is mapped to a world torque through the rate map at `angles`.
    pub fn feedback(&self, e: &Vector6<f64>, e_dot: &Vector6<f64>, angles: &Vector3<f64>) -> Result<Vector6<f64>> {
        let mut w = Vector6::zeros();
        let mut euler_term = Vector3::zeros();
        for i in 0..3 {
            w[i] = -self.stiffness[i] * e[i] - self.damping[i] * e_dot[i];
            euler_term[i] = -self.orientation_stiffness[i] * e[3 + i] - self.orientation_damping[i] * e_dot[3 + i];
        }
        let map = euler_rate_map(angles, &Vector3::zeros())?;
        w.fixed_rows_mut::<3>(3).copy_from(&(map.t * euler_term));
        Ok(w)
    }

    /// [`feedback`](Self::feedback) plus the torque cancelling the moment of the
    /// feedback force about the tool's centre of mass, so the position loop
    /// does not excite the tool's rotation.
    pub fn tool_feedback(&self, e: &Vector6<f64>, e_dot: &Vector6<f64>, angles: &Vector3<f64>, tool: &ToolBody) -> Result<Vector6<f64>> {
        let mut w = self.feedback(e, e_dot, angles)?;
        let force = w.fixed_rows::<3>(0).into_owned();
        let moment = (euler_rotation(angles) * tool.r_cb).cross(&force);
        let mut torque = w.fixed_rows_mut::<3>(3);
        torque -= moment;
        Ok(w)
    }
}

/// Simulated closed-loop trace: states at knots `0..=N`, applied controls at `0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub dt: f64,
    pub states: Vec<FullState>,
    pub controls: Vec<ControlInput>,
}

impl Trace {
    pub fn from_plan(plan: &TrajectoryPair, dt: f64) -> Result<Self> {
        Ok(Self {
            dt,
            states: plan
                .states
                .iter()
                .map(|x| FullState::from_slice(x.as_slice()))
                .collect::<Result<_>>()?,
            controls: plan
                .controls
                .iter()
                .map(|u| ControlInput::from_slice(u.as_slice()))
                .collect::<Result<_>>()?,
        })
    }

    /// Trace holding the reference pose and force, at rest orientation.
    pub fn from_reference(reference: &Reference) -> Self {
        let states = reference
            .positions
            .iter()
            .zip(&reference.velocities)
            .zip(&reference.force)
            .map(|((p, v), f)| {
                let mut s = FullState::default();
                s.pose.fixed_rows_mut::<3>(0).copy_from(p);
                s.pose_rate.fixed_rows_mut::<3>(0).copy_from(v);
                s.force = *f;
                s
            })
            .collect::<Vec<_>>();
        let controls = vec![ControlInput::default(); states.len().saturating_sub(1)];
        Self {
            dt: reference.dt,
            states,
            controls,
        }
    }
}

fn simulate(
    system: &ContactSystem,
    x0: &FullState,
    horizon: usize,
    mut law: impl FnMut(usize, &FullState) -> Result<ControlInput>,
) -> Result<Trace> {
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    states.push(*x0);
    for k in 0..horizon {
        let u = law(k, &states[k]).map_err(|e| e.at("closed-loop rollout"))?;
        let next = system
            .step_state(&states[k], &u, k)
            .map_err(|e| e.at("closed-loop rollout"))?;
        controls.push(u);
        states.push(next);
    }
    Ok(Trace {
        dt: system.dt,
        states,
        controls,
    })
}

fn pose_error(x: &FullState, pose_d: &Vector6<f64>, rate_d: &Vector6<f64>) -> (Vector6<f64>, Vector6<f64>) {
    (x.pose - pose_d, x.pose_rate - rate_d)
}

/// Joint torques that transmit the wrench change `dw` to the arm, plus joint PD towards `(q_d, q̇_d)`.
fn arm_torque(
    chain: &KinematicChain,
    x: &FullState,
    tau_ff: &JointVector,
    dw: &Vector6<f64>,
    q_d: &JointVector,
    qd_d: &JointVector,
    gains: &ControllerGains,
) -> JointVector {
    let jac = chain.jacobian(x.q.as_slice());
    let mass = chain.mass_matrix(x.q.as_slice());
    let joint_acc = (q_d - x.q) * gains.joint_stiffness + (qd_d - x.qd) * gains.joint_damping;
    let joint_acc = DVector::from_column_slice(joint_acc.as_slice());
    tau_ff + JointVector::from_column_slice((jac.transpose() * dw + mass * joint_acc).as_slice())
}

/// Replays the plan's wrench with pose feedback around the plan's tooltip motion.
pub fn rollout_wrench_control(system: &ContactSystem, plan: &Trace, gains: &ControllerGains) -> Result<Trace> {
    gains.validate()?;
    let horizon = plan.controls.len();
    simulate(system, &plan.states[0], horizon, |k, x| {
        let u = plan.controls[k];
        let p = &plan.states[k];
        let (e, e_dot) = pose_error(x, &p.pose, &p.pose_rate);
        let dw = gains.tool_feedback(&e, &e_dot, &x.angles(), &system.tool)?;
        Ok(ControlInput {
            wrench: u.wrench + dw,
            torque: arm_torque(&system.chain, x, &u.torque, &dw, &p.q, &p.qd, gains),
        })
    })
}

/// Joint path whose tooltip follows the reference positions at fixed orientation,
/// by closed-loop differential inverse kinematics from `q0`.
pub fn joint_reference(chain: &KinematicChain, reference: &Reference, q0: &JointVector) -> Result<(Vec<JointVector>, Vec<JointVector>)> {
    let gain = 10.0;
    let target_rot = UnitQuaternion::identity();
    let mut q = *q0;
    let mut qs = Vec::with_capacity(reference.knots());
    let mut qds = Vec::with_capacity(reference.knots());
    for (p, v) in reference.positions.iter().zip(&reference.velocities) {
        let kin = chain.kinematics(q.as_slice());
        let e_p = p - kin.tip.translation.vector;
        let e_r = (target_rot * kin.tip.rotation.inverse()).scaled_axis();
        let twist = DVector::from_column_slice(&[
            v.x + gain * e_p.x,
            v.y + gain * e_p.y,
            v.z + gain * e_p.z,
            gain * e_r.x,
            gain * e_r.y,
            gain * e_r.z,
        ]);
        let jac = chain.jacobian(q.as_slice());
        let jjt = &jac * jac.transpose() + DMatrix::identity(6, 6) * 1e-6;
        let rate = jac.transpose()
            * jjt
                .cholesky()
                .ok_or_else(|| Error::Singularity("joint reference normal equations".into()))?
                .solve(&twist);
        let qd = JointVector::from_column_slice(rate.as_slice());
        qs.push(q);
        qds.push(qd);
        q += qd * reference.dt;
    }
    Ok((qs, qds))
}

/// Position-control baseline: pose feedback around the reference only, no feed-forward wrench.
/// The arm holds gravity and follows the differential-IK joint path of the reference.
pub fn rollout_position_control(
    system: &ContactSystem,
    reference: &Reference,
    x0: &FullState,
    gains: &ControllerGains,
) -> Result<Trace> {
    gains.validate()?;
    let horizon = reference.knots() - 1;
    let (q_ref, qd_ref) = joint_reference(&system.chain, reference, &x0.q).map_err(|e| e.at("joint reference"))?;
    simulate(system, x0, horizon, |k, x| {
        let mut pose_d = Vector6::zeros();
        pose_d.fixed_rows_mut::<3>(0).copy_from(&reference.positions[k]);
        let mut rate_d = Vector6::zeros();
        rate_d.fixed_rows_mut::<3>(0).copy_from(&reference.velocities[k]);
        let (e, e_dot) = pose_error(x, &pose_d, &rate_d);
        let w = gains.tool_feedback(&e, &e_dot, &x.angles(), &system.tool)?;
        let gravity = JointVector::from_column_slice(system.chain.gravity_torques(x.q.as_slice()).as_slice());
        Ok(ControlInput {
            wrench: w,
            torque: arm_torque(&system.chain, x, &gravity, &w, &q_ref[k], &qd_ref[k], gains),
        })
    })
}

/// Error metrics of one trace against a reference trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceMetrics {
    pub rms_pose: f64,
    pub rms_force: [f64; 3],
    /// RMS of the force error norm `‖F_e − F_ref‖`.
    pub rms_force_norm: f64,
    /// Worst excess of the sliding constraint; NaN when no friction set is given.
    pub max_friction_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub a: TraceMetrics,
    pub b: TraceMetrics,
}

impl Comparison {
    pub fn delta(&self) -> TraceMetrics {
        TraceMetrics {
            rms_pose: self.a.rms_pose - self.b.rms_pose,
            rms_force: [0, 1, 2].map(|i| self.a.rms_force[i] - self.b.rms_force[i]),
            rms_force_norm: self.a.rms_force_norm - self.b.rms_force_norm,
            max_friction_violation: self.a.max_friction_violation - self.b.max_friction_violation,
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["trace", "rms_pose_m", "rms_fx_n", "rms_fy_n", "rms_fz_n", "rms_force_norm_n", "max_friction_violation_n"])?;
        for (name, m) in [("a", self.a), ("b", self.b), ("delta", self.delta())] {
            w.write_record([
                name.to_string(),
                format!("{:.16e}", m.rms_pose),
                format!("{:.16e}", m.rms_force[0]),
                format!("{:.16e}", m.rms_force[1]),
                format!("{:.16e}", m.rms_force[2]),
                format!("{:.16e}", m.rms_force_norm),
                format!("{:.16e}", m.max_friction_violation),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// RMS tooltip-position and per-axis force errors, aligned by knot index.
pub fn trace_metrics(trace: &Trace, reference: &Trace, friction: Option<&FrictionSet>) -> Result<TraceMetrics> {
    let n = trace.states.len();
    if n != reference.states.len() || n == 0 {
        return Err(Error::Domain(format!(
            "trace has {n} samples, reference has {}",
            reference.states.len()
        )));
    }
    let mut pose = 0.0;
    let mut force = [0.0; 3];
    let mut worst = if friction.is_some() { 0.0f64 } else { f64::NAN };
    for (k, (x, r)) in trace.states.iter().zip(&reference.states).enumerate() {
        pose += (x.position() - r.position()).norm_squared();
        for (i, f) in force.iter_mut().enumerate() {
            *f += (x.force[i] - r.force[i]).powi(2);
        }
        if let Some(set) = friction {
            let mut z = [0.0; 9];
            z[0..6].copy_from_slice(x.pose_rate.as_slice());
            z[6..9].copy_from_slice(x.force.as_slice());
            worst = worst.max(set.violation(k, &z));
        }
    }
    let nf = n as f64;
    Ok(TraceMetrics {
        rms_pose: (pose / nf).sqrt(),
        rms_force: force.map(|f| (f / nf).sqrt()),
        rms_force_norm: (force.iter().sum::<f64>() / nf).sqrt(),
        max_friction_violation: worst,
    })
}

pub fn compare_traces(a: &Trace, b: &Trace, reference: &Trace, friction: Option<&FrictionSet>) -> Result<Comparison> {
    Ok(Comparison {
        a: trace_metrics(a, reference, friction)?,
        b: trace_metrics(b, reference, friction)?,
    })
}

/// Bounds of the ADMM constraint sets; missing boxes default to the chain limits or ±∞.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintConfig {
    pub joint_limits: Option<Vec<[f64; 2]>>,
    pub wrench_limits: Option<Vec<[f64; 2]>>,
    pub torque_limits: Option<Vec<[f64; 2]>>,
    pub g_offset_n: f64,
    pub rho_j: f64,
    pub rho_u: f64,
    pub rho_f: f64,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self {
            joint_limits: None,
            wrench_limits: Some(vec![
                [-60.0, 60.0],
                [-60.0, 60.0],
                [-60.0, 60.0],
                [-5.0, 5.0],
                [-5.0, 5.0],
                [-5.0, 5.0],
            ]),
            torque_limits: Some(
                [176.0, 176.0, 110.0, 110.0, 110.0, 40.0, 40.0]
                    .iter()
                    .map(|t| [-t, *t])
                    .collect(),
            ),
            g_offset_n: 0.0,
            rho_j: 1.0,
            rho_u: 1.0,
            rho_f: 1.0,
        }
    }
}

fn pairs_to_box(pairs: &[[f64; 2]], n: usize, what: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    if pairs.len() != n {
        return Err(Error::Config(format!("{what} needs {n} pairs, got {}", pairs.len())));
    }
    Ok((pairs.iter().map(|p| p[0]).collect(), pairs.iter().map(|p| p[1]).collect()))
}

impl ConstraintConfig {
    pub fn build(&self, chain: &KinematicChain, tool: &ToolBody, contact: &ContactBlock, reference: &Reference) -> Result<ConstraintSets> {
        let (jl, ju) = match &self.joint_limits {
            Some(p) => pairs_to_box(p, layout::JOINTS, "joint_limits")?,
            None => (chain.lower_limits().as_slice().to_vec(), chain.upper_limits().as_slice().to_vec()),
        };
        let inf = vec![[f64::NEG_INFINITY, f64::INFINITY]; 7];
        let (wl, wu) = pairs_to_box(self.wrench_limits.as_deref().unwrap_or(&inf[..6]), 6, "wrench_limits")?;
        let (tl, tu) = pairs_to_box(self.torque_limits.as_deref().unwrap_or(&inf), 7, "torque_limits")?;
        let sets = ConstraintSets {
            joint: BoxSet::new(DVector::from_vec(jl), DVector::from_vec(ju))?,
            control: BoxSet::new(
                DVector::from_iterator(13, wl.into_iter().chain(tl)),
                DVector::from_iterator(13, wu.into_iter().chain(tu)),
            )?,
            friction: FrictionSet {
                mass: tool.mass,
                mu: contact.material.mu,
                offset: self.g_offset_n,
                normal: contact.geometry.surface_normal,
                radius: reference.curvature_radius(),
            },
            rho_joint: self.rho_j,
            rho_control: self.rho_u,
            rho_lambda: self.rho_f,
        };
        sets.validate()?;
        Ok(sets)
    }
}

/// Everything needed to plan and replay one scenario.
#[derive(Debug, Clone)]
pub struct Problem {
    pub system: ContactSystem,
    pub cost: CostSpec,
    pub sets: ConstraintSets,
    pub reference: Reference,
    pub initial: FullState,
    pub initial_control: ControlInput,
}

/// Tooltip pose pointing into the surface (tool z along world z).
fn start_pose(reference: &Reference) -> Isometry3<f64> {
    let p = reference.positions[0];
    Isometry3::from_parts(Translation3::new(p.x, p.y, p.z), UnitQuaternion::identity())
}

#[allow(clippy::too_many_arguments)]
pub fn build_problem(
    scenario: &Scenario,
    chain: KinematicChain,
    tool: ToolBody,
    contact: ContactBlock,
    dt: f64,
    horizon: usize,
    weights: CostWeights,
    constraints: &ConstraintConfig,
    ik_seed: &[f64],
) -> Result<Problem> {
    let reference = build_reference(scenario, dt, horizon, &contact).map_err(|e| e.at("reference"))?;
    let system = {
        let mut s = ContactSystem::new(chain.clone(), tool, contact, dt, reference.step_contexts())?;
        s.surface_offset = scenario.surface_height;
        s
    };
    let q0 = chain
        .inverse_kinematics(&start_pose(&reference), ik_seed)
        .map_err(|e| e.at("initial configuration"))?;

    let mut initial = FullState::default();
    initial.q.copy_from_slice(q0.as_slice());
    initial.pose.fixed_rows_mut::<3>(0).copy_from(&reference.positions[0]);
    initial.force = reference.force[0];

    // static balance of the tool at the start, transmitted to the arm
    let f = initial.force - tool.gravity * tool.mass;
    let moment = tool.r_ce.cross(&initial.force) - tool.r_cb.cross(&f);
    let wrench = Vector6::new(f.x, f.y, f.z, moment.x, moment.y, moment.z);
    let jac = chain.jacobian(q0.as_slice());
    let tau = chain.gravity_torques(q0.as_slice()) + jac.transpose() * wrench;
    let initial_control = ControlInput {
        wrench,
        torque: JointVector::from_column_slice(tau.as_slice()),
    };

    let cost = CostSpec {
        weights,
        chain: chain.clone(),
        force_ref: reference.force.clone(),
        position_ref: reference.positions.clone(),
        velocity_ref: reference.velocities.clone(),
        control_ref: None,
        penalty: None,
    };
    let sets = constraints.build(&chain, &tool, &contact, &reference)?;
    Ok(Problem {
        system,
        cost,
        sets,
        reference,
        initial,
        initial_control,
    })
}

impl Problem {
    pub fn horizon(&self) -> usize {
        self.reference.knots() - 1
    }

    pub fn initial_rollout(&self) -> Result<TrajectoryPair> {
        let controls = vec![self.initial_control.to_vector(); self.horizon()];
        TrajectoryPair::rollout(&self.system, &self.cost, self.initial.to_vector(), controls)
            .map_err(|e| e.at("initial rollout"))
    }

}

/// Result of planning and replaying one scenario.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub plan: TrajectoryPair,
    pub report: AdmmReport,
    pub wrench_trace: Trace,
    pub position_trace: Trace,
    pub reference_trace: Trace,
    pub comparison: Comparison,
    pub solve_seconds: f64,
    pub rollout_seconds: f64,
}

/// Plans with ADMM, then replays the plan under wrench control and the
/// reference under position control.
pub fn run_solve(problem: &mut Problem, opts: &AdmmOptions, gains: &ControllerGains) -> Result<SolveOutcome> {
    let t0 = Instant::now();
    let init = problem.initial_rollout()?;
    let solution = admm::solve(init, &problem.system, &mut problem.cost, &problem.sets, opts).map_err(|e| e.at("ADMM"))?;
    let solve_seconds = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let plan_trace = Trace::from_plan(&solution.trajectory, problem.system.dt)?;
    let wrench_trace = rollout_wrench_control(&problem.system, &plan_trace, gains)?;
    let position_trace = rollout_position_control(
        &problem.system,
        &problem.reference,
        &problem.initial,
        gains,
    )?;
    let reference_trace = Trace::from_reference(&problem.reference);
    let comparison = compare_traces(&wrench_trace, &position_trace, &reference_trace, Some(&problem.sets.friction))?;
    Ok(SolveOutcome {
        plan: solution.trajectory,
        report: solution.report,
        wrench_trace,
        position_trace,
        reference_trace,
        comparison,
        solve_seconds,
        rollout_seconds: t1.elapsed().as_secs_f64(),
    })
}

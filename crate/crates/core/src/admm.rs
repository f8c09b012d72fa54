//! Constraint splitting around the DDP solver (scaled-form ADMM).
//!
//! The trajectory φ = (x, u) is solved by DDP with a quadratic pull towards
//! `φ̂ − v`; the copies φ̂ are the projections of `φ + v` onto the constraint
//! sets and the scaled duals accumulate the gap `v ← v + φ − φ̂`. Only selected
//! state entries take part: the joint angles and `λ = (ẋ_E, F_e)` for the
//! contact problem.

use std::io::Write;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::cost::{ConsensusPenalty, PenalizedCost};
use crate::ddp::{solve_ddp, DdpOptions, DdpReport, Dynamics, TrajectoryPair};
use crate::error::{Error, Result};
use crate::multibody::layout;

/// Componentwise bounds `lower ≤ z ≤ upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Config("box bounds differ in length".into()));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::Config("box lower bound exceeds upper bound".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn project(&self, z: &mut [f64]) {
        for (i, v) in z.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn violation(&self, z: &[f64]) -> f64 {
        z.iter()
            .enumerate()
            .map(|(i, &v)| (self.lower[i] - v).max(v - self.upper[i]).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Sliding constraint `m ‖v_t‖² / R_c ≤ μ N·F + G` with unilateral contact `N·F ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrictionSet {
    pub mass: f64,
    pub mu: f64,
    /// Constant offset `G` (N).
    pub offset: f64,
    pub normal: Vector3<f64>,
    /// Path curvature radius per knot (infinite on straight segments).
    pub radius: Vec<f64>,
}

impl FrictionSet {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) || !(self.mu >= 0.0) {
            return Err(Error::Config("friction set needs mass > 0 and mu >= 0".into()));
        }
        if self.radius.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Config("curvature radius must be positive".into()));
        }
        Ok(())
    }

    fn radius_at(&self, k: usize) -> f64 {
        self.radius
            .get(k)
            .or(self.radius.last())
            .copied()
            .unwrap_or(f64::INFINITY)
    }

    /// Projects `(ẋ_E, F_e)` in place: clamps the normal load, then scales the
    /// tangential velocity onto the admissible disk for that load.
    pub fn project(&self, k: usize, z: &mut [f64]) {
        let n = self.normal;
        let mut force = Vector3::new(z[6], z[7], z[8]);
        let fn_ = n.dot(&force);
        if fn_ < 0.0 {
            force -= n * fn_;
            z[6..9].copy_from_slice(force.as_slice());
        }
        let radius = self.radius_at(k);
        if radius.is_infinite() {
            return;
        }
        let vel = Vector3::new(z[0], z[1], z[2]);
        let v_n = n * n.dot(&vel);
        let v_t = vel - v_n;
        let bound = (radius * (self.mu * fn_.max(0.0) + self.offset) / self.mass).max(0.0);
        let speed2 = v_t.norm_squared();
        if speed2 > bound {
            let scale = (bound / speed2).sqrt();
            let out = v_n + v_t * scale;
            z[0..3].copy_from_slice(out.as_slice());
        }
    }

    pub fn violation(&self, k: usize, z: &[f64]) -> f64 {
        let n = self.normal;
        let fn_ = n.dot(&Vector3::new(z[6], z[7], z[8]));
        let mut worst = (-fn_).max(0.0);
        let radius = self.radius_at(k);
        if radius.is_finite() {
            let vel = Vector3::new(z[0], z[1], z[2]);
            let v_t = vel - n * n.dot(&vel);
            let excess = self.mass * v_t.norm_squared() / radius - (self.mu * fn_ + self.offset);
            worst = worst.max(excess);
        }
        worst
    }
}

/// What ADMM constrains and how the copies are projected.
pub trait Projection {
    /// State entries tied to the state copies.
    fn state_indices(&self) -> Vec<usize>;
    fn rho_state(&self) -> DVector<f64>;
    fn rho_control(&self) -> DVector<f64>;
    fn project_state(&self, k: usize, z: &mut [f64]);
    fn project_control(&self, k: usize, z: &mut [f64]);
    /// Named worst-case violations of a trajectory.
    fn violations(&self, traj: &TrajectoryPair) -> Vec<(String, f64)>;
}

/// Joint box, control box and friction set of the contact problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSets {
    pub joint: BoxSet,
    pub control: BoxSet,
    pub friction: FrictionSet,
    pub rho_joint: f64,
    pub rho_control: f64,
    pub rho_lambda: f64,
}

impl ConstraintSets {
    pub fn validate(&self) -> Result<()> {
        if self.joint.dim() != layout::JOINTS || self.control.dim() != layout::CONTROL_DIM {
            return Err(Error::Config("constraint boxes have the wrong dimension".into()));
        }
        if !(self.rho_joint > 0.0 && self.rho_control > 0.0 && self.rho_lambda > 0.0) {
            return Err(Error::Config("ADMM step sizes must be positive".into()));
        }
        self.friction.validate()
    }
}

/// Index of `λ = (ẋ_E, F_e)` inside the state vector.
pub const LAMBDA_START: usize = layout::POSE_RATE.start;

impl Projection for ConstraintSets {
    fn state_indices(&self) -> Vec<usize> {
        layout::Q.chain(LAMBDA_START..layout::STATE_DIM).collect()
    }

    fn rho_state(&self) -> DVector<f64> {
        DVector::from_iterator(16, (0..16).map(|i| if i < 7 { self.rho_joint } else { self.rho_lambda }))
    }

    fn rho_control(&self) -> DVector<f64> {
        DVector::from_element(layout::CONTROL_DIM, self.rho_control)
    }

    fn project_state(&self, k: usize, z: &mut [f64]) {
        self.joint.project(&mut z[0..7]);
        self.friction.project(k, &mut z[7..16]);
    }

    fn project_control(&self, _k: usize, z: &mut [f64]) {
        self.control.project(z);
    }

    fn violations(&self, traj: &TrajectoryPair) -> Vec<(String, f64)> {
        let mut joint = 0.0f64;
        let mut friction = 0.0f64;
        for (k, x) in traj.states.iter().enumerate() {
            joint = joint.max(self.joint.violation(&x.as_slice()[layout::Q]));
            friction = friction.max(self.friction.violation(k, &x.as_slice()[LAMBDA_START..]));
        }
        let control = traj
            .controls
            .iter()
            .map(|u| self.control.violation(u.as_slice()))
            .fold(0.0, f64::max);
        vec![
            ("joint".to_string(), joint),
            ("control".to_string(), control),
            ("friction".to_string(), friction),
        ]
    }
}

/// Boxes on selected state entries and on all controls.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxConstraints {
    pub state_indices: Vec<usize>,
    pub state: BoxSet,
    pub control: BoxSet,
    pub rho_state: f64,
    pub rho_control: f64,
}

impl Projection for BoxConstraints {
    fn state_indices(&self) -> Vec<usize> {
        self.state_indices.clone()
    }

    fn rho_state(&self) -> DVector<f64> {
        DVector::from_element(self.state_indices.len(), self.rho_state)
    }

    fn rho_control(&self) -> DVector<f64> {
        DVector::from_element(self.control.dim(), self.rho_control)
    }

    fn project_state(&self, _k: usize, z: &mut [f64]) {
        self.state.project(z);
    }

    fn project_control(&self, _k: usize, z: &mut [f64]) {
        self.control.project(z);
    }

    fn violations(&self, traj: &TrajectoryPair) -> Vec<(String, f64)> {
        let state = traj
            .states
            .iter()
            .map(|x| {
                let z: Vec<f64> = self.state_indices.iter().map(|&i| x[i]).collect();
                self.state.violation(&z)
            })
            .fold(0.0, f64::max);
        let control = traj
            .controls
            .iter()
            .map(|u| self.control.violation(u.as_slice()))
            .fold(0.0, f64::max);
        vec![("state".to_string(), state), ("control".to_string(), control)]
    }
}

/// Clamps each joint vector of a sequence to the joint box.
pub fn project_joint(seq: &[DVector<f64>], set: &BoxSet) -> Vec<DVector<f64>> {
    seq.iter()
        .map(|z| {
            let mut p = z.clone();
            set.project(p.as_mut_slice());
            p
        })
        .collect()
}

/// Clamps each control vector of a sequence to the control box.
pub fn project_control(seq: &[DVector<f64>], set: &BoxSet) -> Vec<DVector<f64>> {
    project_joint(seq, set)
}

/// Projects each `(ẋ_E, F_e)` vector of a sequence onto the friction set.
pub fn project_friction(seq: &[DVector<f64>], set: &FrictionSet) -> Vec<DVector<f64>> {
    seq.iter()
        .enumerate()
        .map(|(k, z)| {
            let mut p = z.clone();
            set.project(k, p.as_mut_slice());
            p
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmOptions {
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_admm_iters: usize,
    /// Iteration cap of the first DDP call, which starts from the raw initial guess.
    pub first_call_max_iters: usize,
    pub ddp: DdpOptions,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            tol_primal: 1e-2,
            tol_dual: 1e-2,
            max_admm_iters: 50,
            first_call_max_iters: 100,
            ddp: DdpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub iter: usize,
    pub r_primal: f64,
    pub s_dual: f64,
    pub ddp_iters: usize,
    pub ddp_converged: bool,
    /// Tracking cost without the consensus penalty.
    pub cost: f64,
}

/// Copies φ̂, scaled duals v and step sizes ρ.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmWorkspace {
    pub state_indices: Vec<usize>,
    pub state_hat: Vec<DVector<f64>>,
    pub control_hat: Vec<DVector<f64>>,
    pub v_state: Vec<DVector<f64>>,
    pub v_control: Vec<DVector<f64>>,
    pub rho_state: DVector<f64>,
    pub rho_control: DVector<f64>,
    /// Dual residual of the last iteration.
    pub dual_residual: f64,
    pub iteration: usize,
    pub history: Vec<ResidualRecord>,
}

impl AdmmWorkspace {
    /// Zero copies and duals for a horizon of `n` steps.
    pub fn new<P: Projection + ?Sized>(sets: &P, n: usize, control_dim: usize) -> Self {
        let state_indices = sets.state_indices();
        let ns = state_indices.len();
        Self {
            state_indices,
            state_hat: vec![DVector::zeros(ns); n + 1],
            control_hat: vec![DVector::zeros(control_dim); n],
            v_state: vec![DVector::zeros(ns); n + 1],
            v_control: vec![DVector::zeros(control_dim); n],
            rho_state: sets.rho_state(),
            rho_control: sets.rho_control(),
            dual_residual: f64::INFINITY,
            iteration: 0,
            history: Vec::new(),
        }
    }

    fn select(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.state_indices.len(), self.state_indices.iter().map(|&i| x[i]))
    }

    /// Penalty pulling φ towards `φ̂ − v`.
    pub fn penalty(&self) -> ConsensusPenalty {
        ConsensusPenalty {
            state_indices: self.state_indices.clone(),
            rho_state: self.rho_state.clone(),
            rho_control: self.rho_control.clone(),
            state_targets: self.state_hat.iter().zip(&self.v_state).map(|(h, v)| h - v).collect(),
            control_targets: self.control_hat.iter().zip(&self.v_control).map(|(h, v)| h - v).collect(),
        }
    }
}

/// Primal residual `‖(z − ẑ, u − û)‖₂` and the stored dual residual.
pub fn residuals(ws: &AdmmWorkspace, traj: &TrajectoryPair) -> (f64, f64) {
    (primal_residual(ws, traj), ws.dual_residual)
}

pub fn primal_residual(ws: &AdmmWorkspace, traj: &TrajectoryPair) -> f64 {
    let mut sum = 0.0;
    for (x, h) in traj.states.iter().zip(&ws.state_hat) {
        sum += (ws.select(x) - h).norm_squared();
    }
    for (u, h) in traj.controls.iter().zip(&ws.control_hat) {
        sum += (u - h).norm_squared();
    }
    sum.sqrt()
}

/// One ADMM pass: DDP solve, projections, dual update.
///
/// The first pass solves without the penalty because the copies are still
/// the zero initial values.
pub fn admm_iterate<D, C, P>(
    ws: &mut AdmmWorkspace,
    traj: TrajectoryPair,
    dynamics: &D,
    cost: &mut C,
    sets: &P,
    opts: &AdmmOptions,
) -> Result<(TrajectoryPair, DdpReport)>
where
    D: Dynamics + ?Sized,
    C: PenalizedCost + ?Sized,
    P: Projection + ?Sized,
{
    let first = ws.iteration == 0;
    cost.set_penalty(if first { None } else { Some(ws.penalty()) });
    let mut ddp_opts = opts.ddp;
    if first {
        ddp_opts.max_iters = opts.first_call_max_iters;
    }
    let (traj, report) = solve_ddp(traj, dynamics, cost, &ddp_opts).map_err(|e| e.at("DDP subproblem"))?;

    let mut dual_sq = 0.0;
    for (k, x) in traj.states.iter().enumerate() {
        let z = ws.select(x);
        let mut hat = &z + &ws.v_state[k];
        sets.project_state(k, hat.as_mut_slice());
        dual_sq += (ws.rho_state.component_mul(&(&hat - &ws.state_hat[k]))).norm_squared();
        ws.v_state[k] += &z - &hat;
        ws.state_hat[k] = hat;
    }
    for (k, u) in traj.controls.iter().enumerate() {
        let mut hat = u + &ws.v_control[k];
        sets.project_control(k, hat.as_mut_slice());
        dual_sq += (ws.rho_control.component_mul(&(&hat - &ws.control_hat[k]))).norm_squared();
        ws.v_control[k] += u - &hat;
        ws.control_hat[k] = hat;
    }
    ws.dual_residual = dual_sq.sqrt();
    ws.iteration += 1;

    cost.set_penalty(None);
    let tracking = traj.evaluate(cost);
    ws.history.push(ResidualRecord {
        iter: ws.iteration,
        r_primal: primal_residual(ws, &traj),
        s_dual: ws.dual_residual,
        ddp_iters: report.iterations,
        ddp_converged: report.converged,
        cost: tracking,
    });
    Ok((traj, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmReport {
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<ResidualRecord>,
    /// Worst violation per constraint set on the returned trajectory.
    pub violations: Vec<(String, f64)>,
    pub ddp_reports: Vec<DdpReport>,
}

impl AdmmReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "r_primal", "s_dual", "ddp_iters", "cost"])?;
        for r in &self.history {
            w.write_record([
                r.iter.to_string(),
                format!("{:.16e}", r.r_primal),
                format!("{:.16e}", r.s_dual),
                r.ddp_iters.to_string(),
                format!("{:.16e}", r.cost),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdmmSolution {
    pub trajectory: TrajectoryPair,
    pub workspace: AdmmWorkspace,
    pub report: AdmmReport,
}

/// Runs ADMM from an initial rollout until both residuals fall below tolerance.
///
/// Without convergence the iterate with the smallest primal residual is returned
/// and `report.converged` is false.
pub fn solve<D, C, P>(
    init: TrajectoryPair,
    dynamics: &D,
    cost: &mut C,
    sets: &P,
    opts: &AdmmOptions,
) -> Result<AdmmSolution>
where
    D: Dynamics + ?Sized,
    C: PenalizedCost + ?Sized,
    P: Projection + ?Sized,
{
    let mut ws = AdmmWorkspace::new(sets, init.horizon(), dynamics.control_dim());
    let mut traj = init;
    let mut best: Option<(f64, TrajectoryPair, AdmmWorkspace)> = None;
    let mut ddp_reports = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_admm_iters {
        let (next, report) = admm_iterate(&mut ws, traj, dynamics, cost, sets, opts)?;
        traj = next;
        let record = *ws.history.last().expect("history grows every iteration");
        let ddp_ok = report.converged;
        ddp_reports.push(report);
        if record.r_primal < opts.tol_primal && record.s_dual < opts.tol_dual && ddp_ok {
            converged = true;
            break;
        }
        if best.as_ref().is_none_or(|(r, _, _)| record.r_primal < *r) {
            best = Some((record.r_primal, traj.clone(), ws.clone()));
        }
    }
    if !converged {
        if let Some((_, t, w)) = best {
            let history = ws.history.clone();
            traj = t;
            ws = w;
            ws.history = history;
        }
    }
    let report = AdmmReport {
        converged,
        iterations: ws.history.len(),
        history: ws.history.clone(),
        violations: sets.violations(&traj),
        ddp_reports,
    };
    Ok(AdmmSolution {
        trajectory: traj,
        workspace: ws,
        report,
    })
}

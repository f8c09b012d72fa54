//! iLQR/DDP for unconstrained discrete-time optimal control.
//!
//! The solver only needs a [`Dynamics`] model (step and Jacobians) and a
//! [`CostModel`] (values and quadratic expansions). Second-order dynamics
//! terms are dropped, so the backward pass is the Riccati recursion of the
//! local LQ problem with Levenberg regularization on `Q_uu`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Dynamics {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    /// Discrete transition from knot `k`.
    fn step(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;

    /// Jacobians `(A, B)` of [`Dynamics::step`]; central differences by default.
    fn linearize(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        finite_difference_jacobians(self, k, x, u, 1e-6)
    }
}

/// Central-difference Jacobians with per-component step `h · max(1, |v|)`.
pub fn finite_difference_jacobians<D: Dynamics + ?Sized>(
    dynamics: &D,
    k: usize,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = x.len();
    let m = u.len();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    for j in 0..n {
        let hj = h * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += hj;
        xm[j] -= hj;
        let col = (dynamics.step(k, &xp, u)? - dynamics.step(k, &xm, u)?) / (2.0 * hj);
        a.set_column(j, &col);
    }
    for j in 0..m {
        let hj = h * u[j].abs().max(1.0);
        let mut up = u.clone();
        let mut um = u.clone();
        up[j] += hj;
        um[j] -= hj;
        let col = (dynamics.step(k, x, &up)? - dynamics.step(k, x, &um)?) / (2.0 * hj);
        b.set_column(j, &col);
    }
    Ok((a, b))
}

/// Second-order expansion of a stage cost.
#[derive(Debug, Clone, PartialEq)]
pub struct StageExpansion {
    pub l_x: DVector<f64>,
    pub l_u: DVector<f64>,
    pub l_xx: DMatrix<f64>,
    pub l_uu: DMatrix<f64>,
    pub l_ux: DMatrix<f64>,
}

pub trait CostModel {
    fn stage(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64;
    fn stage_expansion(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> StageExpansion;
    fn terminal(&self, x: &DVector<f64>) -> f64;
    fn terminal_expansion(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>);
}

/// Linear time-invariant dynamics `x⁺ = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Dynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    fn step(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.a * x + &self.b * u)
    }

    fn linearize(&self, _k: usize, _x: &DVector<f64>, _u: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((self.a.clone(), self.b.clone()))
    }
}

/// States `x[0..=N]`, controls `u[0..N]`, their cost and the last gains.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPair {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub cost: f64,
    pub feedback: Vec<DMatrix<f64>>,
    pub feedforward: Vec<DVector<f64>>,
}

impl TrajectoryPair {
    /// Rolls `controls` out from `x0`.
    pub fn rollout<D: Dynamics + ?Sized, C: CostModel + ?Sized>(
        dynamics: &D,
        cost: &C,
        x0: DVector<f64>,
        controls: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let mut states = Vec::with_capacity(controls.len() + 1);
        states.push(x0);
        for (k, u) in controls.iter().enumerate() {
            let next = dynamics.step(k, &states[k], u)?;
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("rollout at knot {k}")));
            }
            states.push(next);
        }
        let mut traj = Self {
            states,
            controls,
            cost: 0.0,
            feedback: Vec::new(),
            feedforward: Vec::new(),
        };
        traj.cost = traj.evaluate(cost);
        Ok(traj)
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn evaluate<C: CostModel + ?Sized>(&self, cost: &C) -> f64 {
        let stage: f64 = self
            .controls
            .iter()
            .enumerate()
            .map(|(k, u)| cost.stage(k, &self.states[k], u))
            .sum();
        stage + cost.terminal(&self.states[self.horizon()])
    }

    /// Largest one-step re-integration mismatch.
    pub fn feasibility_gap<D: Dynamics + ?Sized>(&self, dynamics: &D) -> Result<f64> {
        let mut gap = 0.0f64;
        for (k, u) in self.controls.iter().enumerate() {
            let next = dynamics.step(k, &self.states[k], u)?;
            gap = gap.max((next - &self.states[k + 1]).amax());
        }
        Ok(gap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpOptions {
    pub max_iters: usize,
    /// Relative cost change below which the solve stops.
    pub tol_cost: f64,
    /// Largest `|Q_u|` entry below which the solve stops.
    pub tol_grad: f64,
    pub reg_init: f64,
    pub reg_min: f64,
    pub reg_max: f64,
    pub reg_increase: f64,
    pub reg_decrease: f64,
    /// Line search tries α = 1, ½, …, 2^-(steps-1).
    pub line_search_steps: usize,
    /// Accept when actual reduction ≥ this × expected reduction.
    pub armijo: f64,
}

impl Default for DdpOptions {
    fn default() -> Self {
        Self {
            max_iters: 10,
            tol_cost: 1e-6,
            tol_grad: 1e-6,
            reg_init: 1e-6,
            reg_min: 1e-9,
            reg_max: 1e10,
            reg_increase: 10.0,
            reg_decrease: 0.5,
            line_search_steps: 11,
            armijo: 1e-4,
        }
    }
}

/// Gains of one backward pass and the expected-reduction model `Δ(α) = α Δ₁ + α² Δ₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardPass {
    pub feedback: Vec<DMatrix<f64>>,
    pub feedforward: Vec<DVector<f64>>,
    pub delta1: f64,
    pub delta2: f64,
    /// Largest entry of `|Q_u|` over the horizon.
    pub grad_norm: f64,
}

impl BackwardPass {
    /// Predicted cost change for step `alpha` (negative for a decrease).
    pub fn expected_change(&self, alpha: f64) -> f64 {
        alpha * self.delta1 + alpha * alpha * self.delta2
    }
}

/// Dynamics Jacobians and cost expansions along a trajectory.
#[derive(Debug, Clone)]
pub struct LocalModel {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub stage: Vec<StageExpansion>,
    pub terminal: (DVector<f64>, DMatrix<f64>),
}

impl LocalModel {
    pub fn build<D: Dynamics + ?Sized, C: CostModel + ?Sized>(
        traj: &TrajectoryPair,
        dynamics: &D,
        cost: &C,
    ) -> Result<Self> {
        let n = traj.horizon();
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut stage = Vec::with_capacity(n);
        for k in 0..n {
            let (ak, bk) = dynamics.linearize(k, &traj.states[k], &traj.controls[k])?;
            a.push(ak);
            b.push(bk);
            stage.push(cost.stage_expansion(k, &traj.states[k], &traj.controls[k]));
        }
        Ok(Self {
            a,
            b,
            stage,
            terminal: cost.terminal_expansion(&traj.states[n]),
        })
    }
}

/// Riccati recursion with `reg · I` added to `Q_uu`.
pub fn backward_pass(model: &LocalModel, reg: f64) -> Result<BackwardPass> {
    let n = model.a.len();
    let (mut v_x, mut v_xx) = model.terminal.clone();
    let mut feedback = vec![DMatrix::zeros(0, 0); n];
    let mut feedforward = vec![DVector::zeros(0); n];
    let mut delta1 = 0.0;
    let mut delta2 = 0.0;
    let mut grad_norm = 0.0f64;
    for k in (0..n).rev() {
        let a = &model.a[k];
        let b = &model.b[k];
        let e = &model.stage[k];
        let at_vxx = a.transpose() * &v_xx;
        let bt_vxx = b.transpose() * &v_xx;
        let q_x = &e.l_x + a.transpose() * &v_x;
        let q_u = &e.l_u + b.transpose() * &v_x;
        let q_xx = &e.l_xx + &at_vxx * a;
        let q_uu = &e.l_uu + &bt_vxx * b;
        let q_ux = &e.l_ux + &bt_vxx * a;
        grad_norm = grad_norm.max(q_u.amax());

        let m = q_uu.nrows();
        let q_uu_reg = &q_uu + DMatrix::identity(m, m) * reg;
        let q_uu_reg = (&q_uu_reg + q_uu_reg.transpose()) * 0.5;
        let chol = q_uu_reg.cholesky().ok_or(Error::NotPositiveDefinite { reg })?;
        let kff = -chol.solve(&q_u);
        let kfb = -chol.solve(&q_ux);

        delta1 += kff.dot(&q_u);
        delta2 += 0.5 * kff.dot(&(&q_uu * &kff));

        let kt_quu = kfb.transpose() * &q_uu;
        v_x = &q_x + &kt_quu * &kff + kfb.transpose() * &q_u + q_ux.transpose() * &kff;
        v_xx = &q_xx + &kt_quu * &kfb + kfb.transpose() * &q_ux + q_ux.transpose() * &kfb;
        v_xx = (&v_xx + v_xx.transpose()) * 0.5;

        feedback[k] = kfb;
        feedforward[k] = kff;
    }
    Ok(BackwardPass {
        feedback,
        feedforward,
        delta1,
        delta2,
        grad_norm,
    })
}

/// Closed-loop rollout `u = ū + α k + K (x − x̄)`.
pub fn forward_pass<D: Dynamics + ?Sized, C: CostModel + ?Sized>(
    traj: &TrajectoryPair,
    gains: &BackwardPass,
    alpha: f64,
    dynamics: &D,
    cost: &C,
) -> Result<TrajectoryPair> {
    let n = traj.horizon();
    let mut states = Vec::with_capacity(n + 1);
    let mut controls = Vec::with_capacity(n);
    states.push(traj.states[0].clone());
    for k in 0..n {
        let dx = &states[k] - &traj.states[k];
        let u = &traj.controls[k] + &gains.feedforward[k] * alpha + &gains.feedback[k] * dx;
        let next = dynamics.step(k, &states[k], &u)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("forward pass at knot {k}")));
        }
        controls.push(u);
        states.push(next);
    }
    let mut out = TrajectoryPair {
        states,
        controls,
        cost: 0.0,
        feedback: gains.feedback.clone(),
        feedforward: gains.feedforward.clone(),
    };
    out.cost = out.evaluate(cost);
    if !out.cost.is_finite() {
        return Err(Error::NonFinite("forward pass cost".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub reg: f64,
    /// Accepted step, or 0 when the line search failed.
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    CostChange,
    Gradient,
    /// No step along the search direction reduced the cost.
    NoImprovement,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdpReport {
    pub iterations: usize,
    pub converged: bool,
    pub reason: StopReason,
    pub history: Vec<IterationRecord>,
    pub reg: f64,
}

impl DdpReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "cost", "grad_norm", "reg", "alpha"])?;
        for r in &self.history {
            w.write_record([
                r.iter.to_string(),
                format!("{:.16e}", r.cost),
                format!("{:.16e}", r.grad_norm),
                format!("{:.16e}", r.reg),
                format!("{:.16e}", r.alpha),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Iterates backward and forward passes from `init` (which must be a rollout).
pub fn solve_ddp<D: Dynamics + ?Sized, C: CostModel + ?Sized>(
    init: TrajectoryPair,
    dynamics: &D,
    cost: &C,
    opts: &DdpOptions,
) -> Result<(TrajectoryPair, DdpReport)> {
    let mut traj = init;
    traj.cost = traj.evaluate(cost);
    let mut reg = opts.reg_init;
    let mut history = Vec::new();
    let mut reason = StopReason::MaxIterations;
    let mut model = LocalModel::build(&traj, dynamics, cost)?;

    for iter in 1..=opts.max_iters {
        let gains = loop {
            match backward_pass(&model, reg) {
                Ok(g) => break g,
                Err(Error::NotPositiveDefinite { .. }) => {
                    reg = (reg * opts.reg_increase).max(opts.reg_min.max(1e-12));
                    if reg > opts.reg_max {
                        return Err(Error::NotPositiveDefinite { reg });
                    }
                }
                Err(e) => return Err(e),
            }
        };

        if gains.grad_norm < opts.tol_grad {
            history.push(IterationRecord {
                iter,
                cost: traj.cost,
                grad_norm: gains.grad_norm,
                reg,
                alpha: 0.0,
            });
            traj.feedback = gains.feedback;
            traj.feedforward = gains.feedforward;
            reason = StopReason::Gradient;
            break;
        }

        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..opts.line_search_steps {
            let expected = -gains.expected_change(alpha);
            if let Ok(candidate) = forward_pass(&traj, &gains, alpha, dynamics, cost) {
                let actual = traj.cost - candidate.cost;
                if expected > 0.0 && actual >= opts.armijo * expected {
                    accepted = Some(candidate);
                    break;
                }
            }
            alpha *= 0.5;
        }

        match accepted {
            Some(candidate) => {
                let previous = traj.cost;
                traj = candidate;
                reg = (reg * opts.reg_decrease).max(opts.reg_min);
                history.push(IterationRecord {
                    iter,
                    cost: traj.cost,
                    grad_norm: gains.grad_norm,
                    reg,
                    alpha,
                });
                if (previous - traj.cost).abs() <= opts.tol_cost * previous.abs().max(1e-300) {
                    reason = StopReason::CostChange;
                    break;
                }
                if iter < opts.max_iters {
                    model = LocalModel::build(&traj, dynamics, cost)?;
                }
            }
            None => {
                history.push(IterationRecord {
                    iter,
                    cost: traj.cost,
                    grad_norm: gains.grad_norm,
                    reg,
                    alpha: 0.0,
                });
                // a search direction with no predicted gain means a stationary point
                if -gains.expected_change(1.0) <= opts.tol_cost * traj.cost.abs() {
                    traj.feedback = gains.feedback;
                    traj.feedforward = gains.feedforward;
                    reason = StopReason::NoImprovement;
                    break;
                }
                reg = (reg * opts.reg_increase).max(opts.reg_min.max(1e-12));
                if reg > opts.reg_max {
                    reason = StopReason::NoImprovement;
                    break;
                }
            }
        }
    }

    let report = DdpReport {
        iterations: history.len(),
        converged: reason != StopReason::MaxIterations,
        reason,
        history,
        reg,
    };
    Ok((traj, report))
}

/// Quadratic cost `½ xᵀQx + ½ uᵀRu` (terminal `½ xᵀ Q_f x`) around fixed references.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_final: DMatrix<f64>,
    pub x_ref: DVector<f64>,
    pub u_ref: DVector<f64>,
}

impl QuadraticCost {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, q_final: DMatrix<f64>) -> Self {
        let x_ref = DVector::zeros(q.nrows());
        let u_ref = DVector::zeros(r.nrows());
        Self {
            q,
            r,
            q_final,
            x_ref,
            u_ref,
        }
    }
}

impl CostModel for QuadraticCost {
    fn stage(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let dx = x - &self.x_ref;
        let du = u - &self.u_ref;
        0.5 * dx.dot(&(&self.q * &dx)) + 0.5 * du.dot(&(&self.r * &du))
    }

    fn stage_expansion(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> StageExpansion {
        StageExpansion {
            l_x: &self.q * (x - &self.x_ref),
            l_u: &self.r * (u - &self.u_ref),
            l_xx: self.q.clone(),
            l_uu: self.r.clone(),
            l_ux: DMatrix::zeros(self.r.nrows(), self.q.nrows()),
        }
    }

    fn terminal(&self, x: &DVector<f64>) -> f64 {
        let dx = x - &self.x_ref;
        0.5 * dx.dot(&(&self.q_final * &dx))
    }

    fn terminal_expansion(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (&self.q_final * (x - &self.x_ref), self.q_final.clone())
    }
}

//! The 29-state manipulator/tool/contact system and its RK4 discretization.
//!
//! The arm block `(q, q̇)` and the tool block `(x_E, ẋ_E, F_e)` only share the
//! wrench input, so each is integrated and linearized on its own.

use nalgebra::{DMatrix, DVector, SVector, Vector3, Vector6};

use super::chain::KinematicChain;
use super::layout::{self, CONTROL_DIM, STATE_DIM};
use super::tool::{euler_rate_map, euler_rotation, tool_accel, ToolBody};
use super::{ControlInput, FullState};
use crate::contact::{
    contact_force_ode, contact_stiffness, indentation_from_force, ContactBlock, ContactForceState,
    ContactRates, Curvature, DEFAULT_FORCE_FLOOR,
};
use crate::ddp::Dynamics;
use crate::error::{Error, Result};

type ArmState = SVector<f64, 14>;
type ToolState = SVector<f64, 15>;

/// Below this tangential speed the sliding direction falls back to the path tangent.
const SPEED_EPS: f64 = 1e-6;

/// Per-knot path information used by the contact model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepContext {
    /// Reference path tangent, used as sliding direction when the tool is at rest.
    pub tangent: Vector3<f64>,
    pub curvature: Curvature,
}

impl Default for StepContext {
    fn default() -> Self {
        Self {
            tangent: Vector3::x(),
            curvature: Curvature::Straight,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContactSystem {
    pub chain: KinematicChain,
    pub tool: ToolBody,
    pub contact: ContactBlock,
    /// Surface height along the normal: points with `N·x > surface_offset` are inside.
    pub surface_offset: f64,
    pub dt: f64,
    pub force_floor: f64,
    /// Decay time of the contact force after lift-off.
    pub liftoff_time_constant: f64,
    /// Integration stops when |cos ϑ| of the tool drops below this.
    pub gimbal_guard: f64,
    pub knots: Vec<StepContext>,
}

fn rk4<const N: usize>(
    x: &SVector<f64, N>,
    dt: f64,
    f: impl Fn(&SVector<f64, N>) -> Result<SVector<f64, N>>,
) -> Result<SVector<f64, N>> {
    let k1 = f(x)?;
    let k2 = f(&(x + k1 * (0.5 * dt)))?;
    let k3 = f(&(x + k2 * (0.5 * dt)))?;
    let k4 = f(&(x + k3 * dt))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

fn tool_block(x: &FullState) -> ToolState {
    let mut t = ToolState::zeros();
    t.fixed_rows_mut::<6>(0).copy_from(&x.pose);
    t.fixed_rows_mut::<6>(6).copy_from(&x.pose_rate);
    t.fixed_rows_mut::<3>(12).copy_from(&x.force);
    t
}

fn arm_block(x: &FullState) -> ArmState {
    let mut a = ArmState::zeros();
    a.fixed_rows_mut::<7>(0).copy_from(&x.q);
    a.fixed_rows_mut::<7>(7).copy_from(&x.qd);
    a
}

impl ContactSystem {
    pub fn new(
        chain: KinematicChain,
        tool: ToolBody,
        contact: ContactBlock,
        dt: f64,
        knots: Vec<StepContext>,
    ) -> Result<Self> {
        chain.validate()?;
        if chain.dof() != layout::JOINTS {
            return Err(Error::Config(format!(
                "chain has {} joints, the system expects {}",
                chain.dof(),
                layout::JOINTS
            )));
        }
        tool.validate()?;
        contact.material.validate()?;
        contact.geometry.validate()?;
        if !(dt > 0.0) {
            return Err(Error::Config("time step must be positive".into()));
        }
        Ok(Self {
            chain,
            tool,
            contact,
            surface_offset: 0.0,
            dt,
            force_floor: DEFAULT_FORCE_FLOOR,
            liftoff_time_constant: 1e-3,
            gimbal_guard: 1e-3,
            knots,
        })
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.contact.geometry.surface_normal
    }

    fn context(&self, k: usize) -> StepContext {
        self.knots
            .get(k)
            .or(self.knots.last())
            .copied()
            .unwrap_or_default()
    }

    /// Contact is active while the normal load exceeds the floor or the tip is below the surface.
    pub fn contact_active(&self, pose_pos: &Vector3<f64>, force: &Vector3<f64>) -> bool {
        let n = self.normal();
        n.dot(force) > self.force_floor || n.dot(pose_pos) - self.surface_offset > 0.0
    }

    fn arm_derivative(&self, a: &ArmState, wrench: &Vector6<f64>, torque: &[f64]) -> Result<ArmState> {
        let q = &a.as_slice()[0..7];
        let qd = &a.as_slice()[7..14];
        let qdd = self.chain.manipulator_accel(q, qd, torque, wrench)?;
        let mut d = ArmState::zeros();
        d.fixed_rows_mut::<7>(0).copy_from_slice(qd);
        d.fixed_rows_mut::<7>(7).copy_from_slice(qdd.as_slice());
        Ok(d)
    }

    fn tool_derivative(
        &self,
        t: &ToolState,
        wrench: &Vector6<f64>,
        ctx: &StepContext,
        active: bool,
    ) -> Result<ToolState> {
        let angles = t.fixed_rows::<3>(3).into_owned();
        if angles[1].cos().abs() < self.gimbal_guard {
            return Err(Error::Singularity(format!(
                "tool pitch {:.4} rad reached the gimbal guard",
                angles[1]
            )));
        }
        let vel = t.fixed_rows::<3>(6).into_owned();
        let euler_rates = t.fixed_rows::<3>(9).into_owned();
        let force = t.fixed_rows::<3>(12).into_owned();

        let map = euler_rate_map(&angles, &euler_rates)?;
        let omega = map.angular_velocity(&euler_rates);
        let (acc_c, omega_dot) = tool_accel(&angles, wrench, &force, &self.tool);
        let r = euler_rotation(&angles) * self.tool.r_ce;
        let acc = acc_c + omega_dot.cross(&r) + omega.cross(&omega.cross(&r));
        let euler_accels = map.euler_accels(&omega_dot, &euler_rates)?;

        let force_rate = if active {
            self.contact_force_rate(&vel, &acc, &force, ctx)?
        } else {
            Vector3::zeros()
        };

        let mut d = ToolState::zeros();
        d.fixed_rows_mut::<3>(0).copy_from(&vel);
        d.fixed_rows_mut::<3>(3).copy_from(&euler_rates);
        d.fixed_rows_mut::<3>(6).copy_from(&acc);
        d.fixed_rows_mut::<3>(9).copy_from(&euler_accels);
        d.fixed_rows_mut::<3>(12).copy_from(&force_rate);
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tool derivative".into()));
        }
        Ok(d)
    }

    fn contact_force_rate(
        &self,
        vel: &Vector3<f64>,
        acc: &Vector3<f64>,
        force: &Vector3<f64>,
        ctx: &StepContext,
    ) -> Result<Vector3<f64>> {
        let n = self.normal();
        let mat = &self.contact.material;
        let geom = &self.contact.geometry;
        let v_t = vel - n * n.dot(vel);
        let a_t = acc - n * n.dot(acc);
        let speed = v_t.norm();
        let speed_rate = v_t.dot(&a_t) / (speed * speed + SPEED_EPS * SPEED_EPS).sqrt();
        let n_v = if speed >= SPEED_EPS {
            v_t / speed
        } else {
            let t = ctx.tangent - n * n.dot(&ctx.tangent);
            let norm = t.norm();
            if norm > 1e-12 {
                t / norm
            } else {
                // any in-plane direction will do when no tangent is available
                let seed = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
                (seed - n * n.dot(&seed)).normalize()
            }
        };
        let frame = ContactForceState::new(*force, n_v, n)?;
        let normal_force = n.dot(force);
        let clamped = normal_force.max(self.force_floor);
        let indentation_rate = n.dot(vel);
        let rates = ContactRates {
            indentation: indentation_from_force(clamped, mat, geom)?,
            indentation_rate,
            normal_force,
            normal_force_rate: contact_stiffness(clamped, mat, geom) * indentation_rate,
            speed,
            speed_rate,
        };
        contact_force_ode(
            &frame,
            &rates,
            mat,
            geom,
            self.tool.mass,
            ctx.curvature,
            self.force_floor,
        )
    }

    /// Continuous-time derivative at knot `k`, contact activity taken from `x`.
    pub fn system_derivative(&self, x: &FullState, u: &ControlInput, k: usize) -> Result<DVector<f64>> {
        let ctx = self.context(k);
        let active = self.contact_active(&x.position(), &x.force);
        let da = self.arm_derivative(&arm_block(x), &u.wrench, u.torque.as_slice())?;
        let dt = self.tool_derivative(&tool_block(x), &u.wrench, &ctx, active)?;
        let mut d = DVector::zeros(STATE_DIM);
        d.rows_range_mut(0..14).copy_from(&da);
        d.rows_range_mut(14..29).copy_from(&dt);
        Ok(d)
    }

    fn arm_step(&self, a: &ArmState, wrench: &Vector6<f64>, torque: &[f64]) -> Result<ArmState> {
        rk4(a, self.dt, |s| self.arm_derivative(s, wrench, torque))
    }

    fn tool_step(&self, t: &ToolState, wrench: &Vector6<f64>, k: usize, active: bool) -> Result<ToolState> {
        let ctx = self.context(k);
        let mut next = rk4(t, self.dt, |s| self.tool_derivative(s, wrench, &ctx, active))?;
        if !active {
            // exact decay; RK4 is unstable for dt much larger than the time constant
            let decay = (-self.dt / self.liftoff_time_constant).exp();
            for i in 12..15 {
                next[i] *= decay;
            }
        }
        Ok(next)
    }

    /// One RK4 step of length `dt` from knot `k`.
    pub fn step_state(&self, x: &FullState, u: &ControlInput, k: usize) -> Result<FullState> {
        let active = self.contact_active(&x.position(), &x.force);
        let a = self.arm_step(&arm_block(x), &u.wrench, u.torque.as_slice())?;
        let t = self.tool_step(&tool_block(x), &u.wrench, k, active)?;
        Ok(FullState {
            q: a.fixed_rows::<7>(0).into_owned(),
            qd: a.fixed_rows::<7>(7).into_owned(),
            pose: t.fixed_rows::<6>(0).into_owned(),
            pose_rate: t.fixed_rows::<6>(6).into_owned(),
            force: t.fixed_rows::<3>(12).into_owned(),
        })
    }

    /// Central-difference Jacobians of the discrete step, block by block.
    pub fn linearize_state(&self, x: &FullState, u: &ControlInput, k: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let mut a_mat = DMatrix::zeros(STATE_DIM, STATE_DIM);
        let mut b_mat = DMatrix::zeros(STATE_DIM, CONTROL_DIM);
        let step_size = |v: f64| 1e-6 * v.abs().max(1.0);

        // arm block: inputs (q, q̇, W, τ)
        let arm = arm_block(x);
        let torque = u.torque;
        let mut arm_in = SVector::<f64, 27>::zeros();
        arm_in.fixed_rows_mut::<14>(0).copy_from(&arm);
        arm_in.fixed_rows_mut::<6>(14).copy_from(&u.wrench);
        arm_in.fixed_rows_mut::<7>(20).copy_from(&torque);
        let arm_eval = |v: &SVector<f64, 27>| {
            let a = v.fixed_rows::<14>(0).into_owned();
            let w = v.fixed_rows::<6>(14).into_owned();
            let tau = v.fixed_rows::<7>(20).into_owned();
            self.arm_step(&a, &w, tau.as_slice())
        };
        for j in 0..27 {
            let h = step_size(arm_in[j]);
            let mut plus = arm_in;
            let mut minus = arm_in;
            plus[j] += h;
            minus[j] -= h;
            let col = (arm_eval(&plus)? - arm_eval(&minus)?) / (2.0 * h);
            // input j maps to state column j, wrench column j-14 or torque column j-14
            if j < 14 {
                a_mat.view_mut((0, j), (14, 1)).copy_from(&col);
            } else {
                b_mat.view_mut((0, j - 14), (14, 1)).copy_from(&col);
            }
        }

        // tool block: inputs (x_E, ẋ_E, F_e, W); activity frozen at the nominal point
        let active = self.contact_active(&x.position(), &x.force);
        let tool = tool_block(x);
        let mut tool_in = SVector::<f64, 21>::zeros();
        tool_in.fixed_rows_mut::<15>(0).copy_from(&tool);
        tool_in.fixed_rows_mut::<6>(15).copy_from(&u.wrench);
        let tool_eval = |v: &SVector<f64, 21>| {
            let t = v.fixed_rows::<15>(0).into_owned();
            let w = v.fixed_rows::<6>(15).into_owned();
            self.tool_step(&t, &w, k, active)
        };
        for j in 0..21 {
            let h = step_size(tool_in[j]);
            let mut plus = tool_in;
            let mut minus = tool_in;
            plus[j] += h;
            minus[j] -= h;
            let col = (tool_eval(&plus)? - tool_eval(&minus)?) / (2.0 * h);
            if j < 15 {
                a_mat.view_mut((14, 14 + j), (15, 1)).copy_from(&col);
            } else {
                b_mat.view_mut((14, j - 15), (15, 1)).copy_from(&col);
            }
        }
        Ok((a_mat, b_mat))
    }
}

impl Dynamics for ContactSystem {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn control_dim(&self) -> usize {
        CONTROL_DIM
    }

    fn step(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let xs = FullState::from_slice(x.as_slice())?;
        let us = ControlInput::from_slice(u.as_slice())?;
        Ok(self.step_state(&xs, &us, k)?.to_vector())
    }

    fn linearize(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let xs = FullState::from_slice(x.as_slice())?;
        let us = ControlInput::from_slice(u.as_slice())?;
        self.linearize_state(&xs, &us, k)
    }
}

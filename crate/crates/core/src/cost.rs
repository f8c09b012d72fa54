//! Tracking cost of the contact task and the ADMM consensus penalty.
//!
//! Stage cost at knot `i`:
//!
//! ```text
//! δFᵀ Q_F δF + (u − u_ref)ᵀ R (u − u_ref) + W_p ‖FK(x_M) − p_d‖
//!   + ‖x_E,pos − p_d‖²_Wt + ‖angles‖²_Wa + ‖ẋ_E − ẋ_d‖²_Wr + w_q ‖q̇‖²
//!   + ρ_j/2 ‖x_M − t_j‖² + ρ_u/2 ‖u − t_u‖² + ρ_f/2 ‖λ − t_f‖²
//! ```
//!
//! with `δF = F_e − F_d`, `λ = (ẋ_E, F_e)` and `t_*` the penalty targets.
//! The terminal cost scales the state terms by `terminal_scale`. The pose norm
//! is smoothed as `√(‖e‖² + ε²)` and expanded with the Gauss–Newton Hessian
//! `W_p JᵀJ / ‖e‖_ε`, which majorizes the norm and is PSD.

use nalgebra::{DMatrix, DVector, Matrix3, SVector, Vector3, Vector6};

use crate::ddp::{CostModel, QuadraticCost, StageExpansion};
use crate::multibody::layout::{self, CONTROL_DIM, STATE_DIM};
use crate::multibody::KinematicChain;

/// Smoothing of the unsquared pose norm (m).
pub const POSE_NORM_EPS: f64 = 1e-6;

/// Quadratic pull of selected state entries and of the controls towards targets.
///
/// Adds `½ Σ ρ_s (x[idx] − t_s)²` at state knots `0..=N` and
/// `½ Σ ρ_u (u − t_u)²` at control knots `0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusPenalty {
    pub state_indices: Vec<usize>,
    pub rho_state: DVector<f64>,
    pub rho_control: DVector<f64>,
    pub state_targets: Vec<DVector<f64>>,
    pub control_targets: Vec<DVector<f64>>,
}

impl ConsensusPenalty {
    pub fn add_state(&self, k: usize, x: &DVector<f64>, value: &mut f64, grad: Option<(&mut DVector<f64>, &mut DMatrix<f64>)>) {
        let Some(t) = self.state_targets.get(k) else {
            return;
        };
        let mut g = grad;
        for (j, &idx) in self.state_indices.iter().enumerate() {
            let d = x[idx] - t[j];
            let rho = self.rho_state[j];
            *value += 0.5 * rho * d * d;
            if let Some((l_x, l_xx)) = g.as_mut() {
                l_x[idx] += rho * d;
                l_xx[(idx, idx)] += rho;
            }
        }
    }

    pub fn add_control(&self, k: usize, u: &DVector<f64>, value: &mut f64, grad: Option<(&mut DVector<f64>, &mut DMatrix<f64>)>) {
        let Some(t) = self.control_targets.get(k) else {
            return;
        };
        let mut g = grad;
        for j in 0..u.len() {
            let d = u[j] - t[j];
            let rho = self.rho_control[j];
            *value += 0.5 * rho * d * d;
            if let Some((l_u, l_uu)) = g.as_mut() {
                l_u[j] += rho * d;
                l_uu[(j, j)] += rho;
            }
        }
    }
}

/// Weights of the tracking cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub force: Matrix3<f64>,
    /// Diagonal of `R`.
    pub control: SVector<f64, 13>,
    pub pose_norm: f64,
    pub tool_position: Vector3<f64>,
    pub tool_angles: Vector3<f64>,
    pub tool_rate: Vector6<f64>,
    pub joint_rate: f64,
    pub terminal_scale: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        let mut control = SVector::<f64, 13>::zeros();
        control.fixed_rows_mut::<6>(0).fill(1e-4);
        control.fixed_rows_mut::<7>(6).fill(1e-6);
        Self {
            force: Matrix3::identity(),
            control,
            pose_norm: 10.0,
            tool_position: Vector3::repeat(1e4),
            tool_angles: Vector3::repeat(10.0),
            tool_rate: Vector6::new(10.0, 10.0, 10.0, 0.1, 0.1, 0.1),
            joint_rate: 1e-2,
            terminal_scale: 10.0,
        }
    }
}

/// References and weights of the contact task.
#[derive(Debug, Clone)]
pub struct CostSpec {
    pub weights: CostWeights,
    pub chain: KinematicChain,
    /// Desired contact force at knots `0..=N`.
    pub force_ref: Vec<Vector3<f64>>,
    /// Desired tooltip position at knots `0..=N`.
    pub position_ref: Vec<Vector3<f64>>,
    /// Desired tooltip velocity at knots `0..=N`.
    pub velocity_ref: Vec<Vector3<f64>>,
    /// Control reference at knots `0..N`; zero when absent.
    pub control_ref: Option<Vec<SVector<f64, 13>>>,
    pub penalty: Option<ConsensusPenalty>,
}

/// Cost models whose consensus penalty can be swapped between solves.
pub trait PenalizedCost: CostModel {
    fn set_penalty(&mut self, penalty: Option<ConsensusPenalty>);
}

impl PenalizedCost for CostSpec {
    fn set_penalty(&mut self, penalty: Option<ConsensusPenalty>) {
        self.penalty = penalty;
    }
}

struct Terms {
    value: f64,
    l_x: DVector<f64>,
    l_xx: DMatrix<f64>,
}

impl CostSpec {
    fn knot(&self, k: usize) -> usize {
        k.min(self.force_ref.len().saturating_sub(1))
    }

    /// State terms at knot `k`, scaled by `scale`; derivatives only when asked.
    fn state_terms(&self, k: usize, x: &DVector<f64>, scale: f64, derivs: bool) -> Terms {
        let w = &self.weights;
        let i = self.knot(k);
        let mut value = 0.0;
        let mut l_x = DVector::zeros(if derivs { STATE_DIM } else { 0 });
        let mut l_xx = DMatrix::zeros(if derivs { STATE_DIM } else { 0 }, if derivs { STATE_DIM } else { 0 });

        let force = Vector3::from_column_slice(&x.as_slice()[layout::FORCE]);
        let df = force - self.force_ref[i];
        let qf = w.force * scale;
        value += df.dot(&(qf * df));
        if derivs {
            let sym = qf + qf.transpose();
            l_x.rows_range_mut(layout::FORCE).copy_from(&(sym * df));
            l_xx.view_mut((26, 26), (3, 3)).copy_from(&sym);
        }

        if w.pose_norm > 0.0 {
            let q = &x.as_slice()[layout::Q];
            let kin = self.chain.kinematics(q);
            let e = kin.tip.translation.vector - self.position_ref[i];
            let f = (e.norm_squared() + POSE_NORM_EPS * POSE_NORM_EPS).sqrt();
            let wp = w.pose_norm * scale;
            value += wp * f;
            if derivs {
                let jac = crate::multibody::chain::jacobian_from(&kin);
                let jp = jac.rows(0, 3);
                let grad = jp.transpose() * e * (wp / f);
                let hess = jp.transpose() * jp * (wp / f);
                l_x.rows_range_mut(layout::Q).copy_from(&grad);
                l_xx.view_mut((0, 0), (7, 7)).copy_from(&hess);
            }
        }

        let pos = Vector3::from_column_slice(&x.as_slice()[layout::POSE_POS]);
        let ep = pos - self.position_ref[i];
        let ang = Vector3::from_column_slice(&x.as_slice()[layout::POSE_ANG]);
        let mut vel_ref = Vector6::zeros();
        vel_ref.fixed_rows_mut::<3>(0).copy_from(&self.velocity_ref[i]);
        let er = Vector6::from_column_slice(&x.as_slice()[layout::POSE_RATE]) - vel_ref;
        let qd = SVector::<f64, 7>::from_column_slice(&x.as_slice()[layout::QD]);

        let wt = w.tool_position * scale;
        let wa = w.tool_angles * scale;
        let wr = w.tool_rate * scale;
        let wq = w.joint_rate * scale;
        value += ep.dot(&wt.component_mul(&ep))
            + ang.dot(&wa.component_mul(&ang))
            + er.dot(&wr.component_mul(&er))
            + wq * qd.norm_squared();
        if derivs {
            for j in 0..3 {
                l_x[14 + j] = 2.0 * wt[j] * ep[j];
                l_xx[(14 + j, 14 + j)] = 2.0 * wt[j];
                l_x[17 + j] = 2.0 * wa[j] * ang[j];
                l_xx[(17 + j, 17 + j)] = 2.0 * wa[j];
            }
            for j in 0..6 {
                l_x[20 + j] = 2.0 * wr[j] * er[j];
                l_xx[(20 + j, 20 + j)] = 2.0 * wr[j];
            }
            for j in 0..7 {
                l_x[7 + j] = 2.0 * wq * qd[j];
                l_xx[(7 + j, 7 + j)] = 2.0 * wq;
            }
        }

        if let Some(p) = &self.penalty {
            let grad = if derivs { Some((&mut l_x, &mut l_xx)) } else { None };
            p.add_state(k, x, &mut value, grad);
        }
        Terms { value, l_x, l_xx }
    }

    fn control_terms(&self, k: usize, u: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let w = &self.weights;
        let mut du = SVector::<f64, 13>::from_column_slice(u.as_slice());
        if let Some(r) = &self.control_ref {
            du -= r[k.min(r.len() - 1)];
        }
        let mut value = du.dot(&w.control.component_mul(&du));
        let mut l_u = DVector::from_iterator(CONTROL_DIM, (0..CONTROL_DIM).map(|j| 2.0 * w.control[j] * du[j]));
        let mut l_uu = DMatrix::from_diagonal(&DVector::from_iterator(
            CONTROL_DIM,
            w.control.iter().map(|c| 2.0 * c),
        ));
        if let Some(p) = &self.penalty {
            p.add_control(k, u, &mut value, Some((&mut l_u, &mut l_uu)));
        }
        (value, l_u, l_uu)
    }
}

impl CostModel for CostSpec {
    fn stage(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.state_terms(k, x, 1.0, false).value + self.control_terms(k, u).0
    }

    fn stage_expansion(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> StageExpansion {
        let s = self.state_terms(k, x, 1.0, true);
        let (_, l_u, l_uu) = self.control_terms(k, u);
        StageExpansion {
            l_x: s.l_x,
            l_u,
            l_xx: s.l_xx,
            l_uu,
            l_ux: DMatrix::zeros(CONTROL_DIM, STATE_DIM),
        }
    }

    fn terminal(&self, x: &DVector<f64>) -> f64 {
        let k = self.force_ref.len() - 1;
        self.state_terms(k, x, self.weights.terminal_scale, false).value
    }

    fn terminal_expansion(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let k = self.force_ref.len() - 1;
        let s = self.state_terms(k, x, self.weights.terminal_scale, true);
        (s.l_x, s.l_xx)
    }
}

/// [`QuadraticCost`] with an optional consensus penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedQuadratic {
    pub base: QuadraticCost,
    pub penalty: Option<ConsensusPenalty>,
}

impl CostModel for PenalizedQuadratic {
    fn stage(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let mut v = self.base.stage(k, x, u);
        if let Some(p) = &self.penalty {
            p.add_state(k, x, &mut v, None);
            p.add_control(k, u, &mut v, None);
        }
        v
    }

    fn stage_expansion(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> StageExpansion {
        let mut e = self.base.stage_expansion(k, x, u);
        if let Some(p) = &self.penalty {
            let mut v = 0.0;
            p.add_state(k, x, &mut v, Some((&mut e.l_x, &mut e.l_xx)));
            p.add_control(k, u, &mut v, Some((&mut e.l_u, &mut e.l_uu)));
        }
        e
    }

    fn terminal(&self, x: &DVector<f64>) -> f64 {
        let mut v = self.base.terminal(x);
        if let Some(p) = &self.penalty {
            p.add_state(p.state_targets.len().saturating_sub(1), x, &mut v, None);
        }
        v
    }

    fn terminal_expansion(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (mut g, mut h) = self.base.terminal_expansion(x);
        if let Some(p) = &self.penalty {
            let mut v = 0.0;
            p.add_state(p.state_targets.len().saturating_sub(1), x, &mut v, Some((&mut g, &mut h)));
        }
        (g, h)
    }
}

impl PenalizedCost for PenalizedQuadratic {
    fn set_penalty(&mut self, penalty: Option<ConsensusPenalty>) {
        self.penalty = penalty;
    }
}

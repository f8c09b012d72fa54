//! Serial revolute chains: forward kinematics, geometric Jacobian, recursive
//! Newton–Euler inverse dynamics and the composite-rigid-body mass matrix.
//!
//! All quantities are expressed in the world frame. Link `i` is rigidly
//! attached to the frame of joint `i`, whose pose is
//! `T_i = T_{i-1} · origin_i · Rot(axis_i, q_i)` with `T_{-1}` the base.

use nalgebra::{
    DMatrix, DVector, Isometry3, Matrix3, Rotation3, Translation3, Unit, UnitQuaternion, Vector3,
    Vector6,
};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Condition-number bound above which the mass matrix is treated as singular.
const MAX_MASS_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    /// Rotation axis in the joint frame (unit).
    pub axis: Unit<Vector3<f64>>,
    /// Parent frame to joint frame at zero angle.
    pub origin: Isometry3<f64>,
    pub mass: f64,
    /// Link centre of mass in the joint frame.
    pub com: Vector3<f64>,
    /// Rotational inertia about the centre of mass, joint frame.
    pub inertia: Matrix3<f64>,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    /// World to base transform.
    pub base: Isometry3<f64>,
    pub joints: Vec<Joint>,
    /// Last link frame to the tooltip.
    pub tool_mount: Isometry3<f64>,
    /// Gravity in the world frame.
    pub gravity: Vector3<f64>,
}

/// Per-configuration kinematic quantities in the world frame.
#[derive(Debug, Clone)]
pub struct ChainKinematics {
    pub rotations: Vec<Rotation3<f64>>,
    pub origins: Vec<Vector3<f64>>,
    pub axes: Vec<Vector3<f64>>,
    pub coms: Vec<Vector3<f64>>,
    pub inertias: Vec<Matrix3<f64>>,
    pub tip: Isometry3<f64>,
}

fn skew_sq_parallel_axis(m: f64, d: &Vector3<f64>) -> Matrix3<f64> {
    (Matrix3::identity() * d.norm_squared() - d * d.transpose()) * m
}

impl KinematicChain {
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn lower_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.lower))
    }

    pub fn upper_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.upper))
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::Config("chain has no joints".into()));
        }
        for j in &self.joints {
            if (j.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("joint {} axis is not unit", j.name)));
            }
            if !(j.lower < j.upper) {
                return Err(Error::Config(format!("joint {} has lower >= upper", j.name)));
            }
            if !(j.mass > 0.0) {
                return Err(Error::Config(format!("joint {} link mass must be positive", j.name)));
            }
            let sym = (j.inertia - j.inertia.transpose()).amax() <= 1e-12;
            if !sym || j.inertia.cholesky().is_none() {
                return Err(Error::Config(format!(
                    "joint {} inertia is not symmetric positive definite",
                    j.name
                )));
            }
        }
        Ok(())
    }

    pub fn kinematics(&self, q: &[f64]) -> ChainKinematics {
        let n = self.dof();
        let mut rotations = Vec::with_capacity(n);
        let mut origins = Vec::with_capacity(n);
        let mut axes = Vec::with_capacity(n);
        let mut coms = Vec::with_capacity(n);
        let mut inertias = Vec::with_capacity(n);
        let mut frame = self.base;
        for (joint, &qi) in self.joints.iter().zip(q) {
            frame *= joint.origin;
            frame.rotation *= UnitQuaternion::from_axis_angle(&joint.axis, qi);
            let rot = frame.rotation.to_rotation_matrix();
            let p = frame.translation.vector;
            axes.push(rot * joint.axis.into_inner());
            coms.push(p + rot * joint.com);
            inertias.push(rot.matrix() * joint.inertia * rot.matrix().transpose());
            origins.push(p);
            rotations.push(rot);
        }
        let tip = frame * self.tool_mount;
        ChainKinematics {
            rotations,
            origins,
            axes,
            coms,
            inertias,
            tip,
        }
    }

    /// Tooltip pose in the world frame.
    pub fn forward_kinematics(&self, q: &[f64]) -> Isometry3<f64> {
        self.kinematics(q).tip
    }

    /// Geometric Jacobian at the tooltip, rows `[linear; angular]`.
    pub fn jacobian(&self, q: &[f64]) -> DMatrix<f64> {
        jacobian_from(&self.kinematics(q))
    }

    /// Joint torques for accelerations `qdd` (recursive Newton–Euler).
    pub fn inverse_dynamics(&self, q: &[f64], qd: &[f64], qdd: &[f64], with_gravity: bool) -> DVector<f64> {
        let kin = self.kinematics(q);
        self.rnea(&kin, qd, qdd, with_gravity)
    }

    fn rnea(&self, kin: &ChainKinematics, qd: &[f64], qdd: &[f64], with_gravity: bool) -> DVector<f64> {
        let n = self.dof();
        let mut forces = Vec::with_capacity(n);
        let mut moments = Vec::with_capacity(n);
        let mut omega = Vector3::zeros();
        let mut omega_dot = Vector3::zeros();
        let mut accel = if with_gravity {
            -self.gravity
        } else {
            Vector3::zeros()
        };
        let mut prev = self.base.translation.vector;
        for i in 0..n {
            let z = kin.axes[i];
            let r = kin.origins[i] - prev;
            accel += omega_dot.cross(&r) + omega.cross(&omega.cross(&r));
            let spin = z * qd[i];
            omega_dot += z * qdd[i] + omega.cross(&spin);
            omega += spin;
            let rc = kin.coms[i] - kin.origins[i];
            let accel_com = accel + omega_dot.cross(&rc) + omega.cross(&omega.cross(&rc));
            let m = self.joints[i].mass;
            let inertia = kin.inertias[i];
            forces.push(accel_com * m);
            moments.push(inertia * omega_dot + omega.cross(&(inertia * omega)));
            prev = kin.origins[i];
        }
        let mut tau = DVector::zeros(n);
        let mut f_child = Vector3::zeros();
        let mut n_child = Vector3::zeros();
        let mut p_child = Vector3::zeros();
        for i in (0..n).rev() {
            let rc = kin.coms[i] - kin.origins[i];
            let lever = p_child - kin.origins[i];
            let moment = moments[i] + rc.cross(&forces[i]) + n_child + lever.cross(&f_child);
            f_child += forces[i];
            n_child = moment;
            p_child = kin.origins[i];
            tau[i] = kin.axes[i].dot(&moment);
        }
        tau
    }

    /// Gravity torques `G(q)`.
    pub fn gravity_torques(&self, q: &[f64]) -> DVector<f64> {
        let zeros = vec![0.0; self.dof()];
        self.inverse_dynamics(q, &zeros, &zeros, true)
    }

    /// Joint-space mass matrix by the composite-rigid-body algorithm.
    pub fn mass_matrix(&self, q: &[f64]) -> DMatrix<f64> {
        mass_matrix_from(self, &self.kinematics(q))
    }

    /// Coriolis matrix from Christoffel symbols of a finite-differenced `M(q)`.
    pub fn coriolis_matrix(&self, q: &[f64], qd: &[f64]) -> DMatrix<f64> {
        let n = self.dof();
        let h = 1e-6;
        let dm: Vec<DMatrix<f64>> = (0..n)
            .map(|k| {
                let mut qp = q.to_vec();
                let mut qm = q.to_vec();
                qp[k] += h;
                qm[k] -= h;
                (self.mass_matrix(&qp) - self.mass_matrix(&qm)) / (2.0 * h)
            })
            .collect();
        let mut c = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += 0.5 * (dm[k][(i, j)] + dm[j][(i, k)] - dm[i][(j, k)]) * qd[k];
                }
                c[(i, j)] = acc;
            }
        }
        c
    }

    /// Joint accelerations `M⁻¹(τ − C q̇ − G − Jᵀ W)`.
    pub fn manipulator_accel(
        &self,
        q: &[f64],
        qd: &[f64],
        tau: &[f64],
        wrench: &Vector6<f64>,
    ) -> Result<DVector<f64>> {
        let n = self.dof();
        let kin = self.kinematics(q);
        let zeros = vec![0.0; n];
        let bias = self.rnea(&kin, qd, &zeros, true);
        let jac = jacobian_from(&kin);
        let mut rhs = DVector::from_column_slice(tau) - bias - jac.transpose() * wrench;
        let mass = mass_matrix_from(self, &kin);
        let chol = mass
            .cholesky()
            .ok_or_else(|| Error::Singularity("mass matrix not positive definite".into()))?;
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        // squared ratio of Cholesky pivots: a cheap lower bound on cond(M)
        if (hi / lo).powi(2) > MAX_MASS_CONDITION {
            return Err(Error::Singularity("mass matrix is ill-conditioned".into()));
        }
        chol.solve_mut(&mut rhs);
        Ok(rhs)
    }

    /// Damped least-squares inverse kinematics for a full tooltip pose.
    pub fn inverse_kinematics(&self, target: &Isometry3<f64>, seed: &[f64]) -> Result<DVector<f64>> {
        let n = self.dof();
        let seed = DVector::from_column_slice(seed);
        let mut q = seed.clone();
        let lambda2 = 1e-6;
        let max_step = 0.2;
        let null_gain = 0.1;
        let mut converged = false;
        for _ in 0..2000 {
            let kin = self.kinematics(q.as_slice());
            let pos_err = target.translation.vector - kin.tip.translation.vector;
            let rot_err = (target.rotation * kin.tip.rotation.inverse()).scaled_axis();
            let err = DVector::from_column_slice(&[pos_err.x, pos_err.y, pos_err.z, rot_err.x, rot_err.y, rot_err.z]);
            if err.norm() < 1e-12 {
                converged = true;
                break;
            }
            let jac = jacobian_from(&kin);
            let jjt = &jac * jac.transpose() + DMatrix::identity(6, 6) * lambda2;
            let chol = jjt
                .cholesky()
                .ok_or_else(|| Error::Singularity("IK normal equations".into()))?;
            let pinv = jac.transpose() * chol.inverse();
            // pull the redundant motion towards the seed until close, then refine the task alone
            let pull = if err.norm() > 1e-6 { null_gain } else { 0.0 };
            let null = DMatrix::identity(n, n) - &pinv * &jac;
            let mut step = &pinv * err + null * (&seed - &q) * pull;
            let big = step.amax();
            if big > max_step {
                step *= max_step / big;
            }
            q += step;
        }
        for v in q.iter_mut() {
            *v = (*v + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
        }
        let tip = self.forward_kinematics(q.as_slice());
        let residual = (tip.translation.vector - target.translation.vector).norm();
        if !converged && residual > 1e-8 {
            return Err(domain(format!("inverse kinematics did not converge (residual {residual:.3e} m)")));
        }
        if let Some((i, j)) = self.joints.iter().enumerate().find(|(i, j)| q[*i] < j.lower || q[*i] > j.upper) {
            return Err(domain(format!(
                "inverse kinematics solution puts joint {i} at {:.3} rad, outside [{:.3}, {:.3}]",
                q[i], j.lower, j.upper
            )));
        }
        Ok(q)
    }
}

pub(crate) fn jacobian_from(kin: &ChainKinematics) -> DMatrix<f64> {
    let n = kin.axes.len();
    let tip = kin.tip.translation.vector;
    let mut jac = DMatrix::zeros(6, n);
    for i in 0..n {
        let z = kin.axes[i];
        let lin = z.cross(&(tip - kin.origins[i]));
        jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
        jac.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
    }
    jac
}

fn mass_matrix_from(chain: &KinematicChain, kin: &ChainKinematics) -> DMatrix<f64> {
    let n = chain.dof();
    // composite bodies of links j..n-1: mass, centre of mass, inertia about that centre
    let mut comp_mass = vec![0.0; n];
    let mut comp_com = vec![Vector3::zeros(); n];
    let mut comp_inertia = vec![Matrix3::zeros(); n];
    for j in (0..n).rev() {
        let m = chain.joints[j].mass;
        let c = kin.coms[j];
        if j + 1 < n {
            let mc = comp_mass[j + 1];
            let total = m + mc;
            let com = (c * m + comp_com[j + 1] * mc) / total;
            comp_inertia[j] = kin.inertias[j]
                + skew_sq_parallel_axis(m, &(c - com))
                + comp_inertia[j + 1]
                + skew_sq_parallel_axis(mc, &(comp_com[j + 1] - com));
            comp_mass[j] = total;
            comp_com[j] = com;
        } else {
            comp_mass[j] = m;
            comp_com[j] = c;
            comp_inertia[j] = kin.inertias[j];
        }
    }
    let mut mass = DMatrix::zeros(n, n);
    for j in 0..n {
        let z = kin.axes[j];
        let pj = kin.origins[j];
        let arm = comp_com[j] - pj;
        let f = z.cross(&arm) * comp_mass[j];
        let moment = comp_inertia[j] * z + arm.cross(&f);
        for i in 0..=j {
            let m_ij = kin.axes[i].dot(&(moment + (pj - kin.origins[i]).cross(&f)));
            mass[(i, j)] = m_ij;
            mass[(j, i)] = m_ij;
        }
    }
    mass
}

/// One joint record of a chain description file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRecord {
    pub name: String,
    pub axis: [f64; 3],
    pub xyz: [f64; 3],
    /// Roll, pitch, yaw of the fixed parent-to-joint rotation.
    pub rpy: [f64; 3],
    pub mass: f64,
    pub com: [f64; 3],
    /// `[ixx, iyy, izz, ixy, ixz, iyz]` about the centre of mass.
    pub inertia: [f64; 6],
    pub limits: [f64; 2],
}

/// Chain description as read from a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    #[serde(default)]
    pub base_xyz: [f64; 3],
    #[serde(default)]
    pub base_rpy: [f64; 3],
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    #[serde(default)]
    pub tool_mount_xyz: [f64; 3],
    #[serde(default)]
    pub tool_mount_rpy: [f64; 3],
    pub joints: Vec<JointRecord>,
}

pub(crate) fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, 9.81]
}

fn isometry(xyz: [f64; 3], rpy: [f64; 3]) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(xyz[0], xyz[1], xyz[2]),
        UnitQuaternion::from_euler_angles(rpy[0], rpy[1], rpy[2]),
    )
}

fn xyz_rpy(iso: &Isometry3<f64>) -> ([f64; 3], [f64; 3]) {
    let t = iso.translation.vector;
    let (r, p, y) = iso.rotation.euler_angles();
    ([t.x, t.y, t.z], [r, p, y])
}

impl ChainRecord {
    pub fn build(&self) -> Result<KinematicChain> {
        let joints = self
            .joints
            .iter()
            .map(|r| {
                let axis = Vector3::from(r.axis);
                if axis.norm() == 0.0 {
                    return Err(Error::Config(format!("joint {} has a zero axis", r.name)));
                }
                let [ixx, iyy, izz, ixy, ixz, iyz] = r.inertia;
                Ok(Joint {
                    name: r.name.clone(),
                    axis: Unit::new_normalize(axis),
                    origin: isometry(r.xyz, r.rpy),
                    mass: r.mass,
                    com: Vector3::from(r.com),
                    inertia: Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz),
                    lower: r.limits[0],
                    upper: r.limits[1],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let chain = KinematicChain {
            base: isometry(self.base_xyz, self.base_rpy),
            joints,
            tool_mount: isometry(self.tool_mount_xyz, self.tool_mount_rpy),
            gravity: Vector3::from(self.gravity),
        };
        chain.validate()?;
        Ok(chain)
    }

    pub fn from_chain(chain: &KinematicChain) -> Self {
        let (base_xyz, base_rpy) = xyz_rpy(&chain.base);
        let (tool_mount_xyz, tool_mount_rpy) = xyz_rpy(&chain.tool_mount);
        let joints = chain
            .joints
            .iter()
            .map(|j| {
                let (xyz, rpy) = xyz_rpy(&j.origin);
                let i = j.inertia;
                JointRecord {
                    name: j.name.clone(),
                    axis: [j.axis.x, j.axis.y, j.axis.z],
                    xyz,
                    rpy,
                    mass: j.mass,
                    com: [j.com.x, j.com.y, j.com.z],
                    inertia: [i[(0, 0)], i[(1, 1)], i[(2, 2)], i[(0, 1)], i[(0, 2)], i[(1, 2)]],
                    limits: [j.lower, j.upper],
                }
            })
            .collect();
        Self {
            base_xyz,
            base_rpy,
            gravity: [chain.gravity.x, chain.gravity.y, chain.gravity.z],
            tool_mount_xyz,
            tool_mount_rpy,
            joints,
        }
    }
}

/// Seven-joint arm with iiwa-class link lengths, mounted upright under the
/// z-into-surface world frame (base rotated by π about x, 0.5 m behind and
/// 0.2 m below the surface origin).
pub fn iiwa_like() -> KinematicChain {
    use std::f64::consts::PI;
    let deg = PI / 180.0;
    let y_neg = [0.0, -1.0, 0.0];
    // name, axis, link offset along z, mass, com, principal inertia, limit (deg)
    type Spec<'a> = (&'a str, [f64; 3], f64, f64, [f64; 3], [f64; 3], f64);
    let specs: [Spec; 7] = [
        ("a1", [0.0, 0.0, 1.0], 0.1575, 3.4525, [0.0, -0.03, 0.12], [0.02183, 0.007703, 0.02083], 170.0),
        ("a2", [0.0, 1.0, 0.0], 0.2025, 3.4821, [0.0003, 0.059, 0.042], [0.02076, 0.02179, 0.00779], 120.0),
        ("a3", [0.0, 0.0, 1.0], 0.2045, 4.05623, [0.0, 0.03, 0.13], [0.03204, 0.00972, 0.03042], 170.0),
        ("a4", y_neg, 0.2155, 3.4822, [0.0, 0.067, 0.034], [0.02178, 0.02075, 0.007785], 120.0),
        ("a5", [0.0, 0.0, 1.0], 0.1845, 2.1633, [0.0001, 0.021, 0.076], [0.01287, 0.005708, 0.01112], 170.0),
        ("a6", [0.0, 1.0, 0.0], 0.2155, 2.3466, [0.0, 0.0006, 0.0004], [0.006509, 0.006259, 0.004527], 120.0),
        ("a7", [0.0, 0.0, 1.0], 0.081, 0.3540, [0.0, 0.0, 0.02], [0.0012, 0.0012, 0.0008], 175.0),
    ];
    let joints = specs
        .iter()
        .map(|&(name, axis, dz, mass, com, inertia, limit)| Joint {
            name: name.to_string(),
            axis: Unit::new_normalize(Vector3::from(axis)),
            origin: Isometry3::translation(0.0, 0.0, dz),
            mass,
            com: Vector3::from(com),
            inertia: Matrix3::from_diagonal(&Vector3::from(inertia)),
            lower: -limit * deg,
            upper: limit * deg,
        })
        .collect();
    KinematicChain {
        base: Isometry3::from_parts(
            Translation3::new(-0.5, 0.0, 0.2),
            UnitQuaternion::from_euler_angles(PI, 0.0, 0.0),
        ),
        joints,
        tool_mount: Isometry3::translation(0.0, 0.0, 0.145),
        gravity: Vector3::from(default_gravity()),
    }
}

/// Configuration used to seed inverse kinematics for the default arm
/// (elbow bent, flange pointing down in the robot frame).
pub fn iiwa_like_seed() -> [f64; 7] {
    [0.0, 0.7, 0.0, 1.5, 0.0, -0.95, 0.0]
}

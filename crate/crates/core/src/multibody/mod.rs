//! Manipulator, tool and contact dynamics assembled into one discrete-time system.

pub mod chain;
pub mod system;
pub mod tool;

pub use chain::{iiwa_like, iiwa_like_seed, ChainRecord, Joint, JointRecord, KinematicChain};
pub use system::{ContactSystem, StepContext};
pub use tool::{euler_rate_map, euler_rotation, tool_accel, tooltip_from_centroid, EulerRateMap, ToolBody};

use nalgebra::{DVector, SVector, Vector3, Vector6};

use crate::error::{domain, Result};

/// Index ranges of the stacked state and control vectors.
pub mod layout {
    use std::ops::Range;

    pub const JOINTS: usize = 7;
    pub const STATE_DIM: usize = 29;
    pub const CONTROL_DIM: usize = 13;

    pub const Q: Range<usize> = 0..7;
    pub const QD: Range<usize> = 7..14;
    pub const POSE: Range<usize> = 14..20;
    pub const POSE_POS: Range<usize> = 14..17;
    pub const POSE_ANG: Range<usize> = 17..20;
    pub const POSE_RATE: Range<usize> = 20..26;
    pub const FORCE: Range<usize> = 26..29;

    pub const WRENCH: Range<usize> = 0..6;
    pub const WRENCH_FORCE: Range<usize> = 0..3;
    pub const WRENCH_TORQUE: Range<usize> = 3..6;
    pub const TORQUE: Range<usize> = 6..13;
}

pub type JointVector = SVector<f64, 7>;

/// Full system state: joints, tooltip pose `(x, y, z, ψ, ϑ, φ)` and contact force.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FullState {
    pub q: JointVector,
    pub qd: JointVector,
    pub pose: Vector6<f64>,
    pub pose_rate: Vector6<f64>,
    pub force: Vector3<f64>,
}

impl FullState {
    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.len() != layout::STATE_DIM {
            return Err(domain(format!("state has length {}, expected {}", x.len(), layout::STATE_DIM)));
        }
        Ok(Self {
            q: JointVector::from_column_slice(&x[layout::Q]),
            qd: JointVector::from_column_slice(&x[layout::QD]),
            pose: Vector6::from_column_slice(&x[layout::POSE]),
            pose_rate: Vector6::from_column_slice(&x[layout::POSE_RATE]),
            force: Vector3::from_column_slice(&x[layout::FORCE]),
        })
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut x = DVector::zeros(layout::STATE_DIM);
        x.rows_range_mut(layout::Q).copy_from(&self.q);
        x.rows_range_mut(layout::QD).copy_from(&self.qd);
        x.rows_range_mut(layout::POSE).copy_from(&self.pose);
        x.rows_range_mut(layout::POSE_RATE).copy_from(&self.pose_rate);
        x.rows_range_mut(layout::FORCE).copy_from(&self.force);
        x
    }

    pub fn position(&self) -> Vector3<f64> {
        self.pose.fixed_rows::<3>(0).into_owned()
    }

    pub fn angles(&self) -> Vector3<f64> {
        self.pose.fixed_rows::<3>(3).into_owned()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.pose_rate.fixed_rows::<3>(0).into_owned()
    }
}

/// Control input: the wrench applied to the tool and the joint torques.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    pub wrench: Vector6<f64>,
    pub torque: JointVector,
}

impl ControlInput {
    pub fn from_slice(u: &[f64]) -> Result<Self> {
        if u.len() != layout::CONTROL_DIM {
            return Err(domain(format!("control has length {}, expected {}", u.len(), layout::CONTROL_DIM)));
        }
        Ok(Self {
            wrench: Vector6::from_column_slice(&u[layout::WRENCH]),
            torque: JointVector::from_column_slice(&u[layout::TORQUE]),
        })
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut u = DVector::zeros(layout::CONTROL_DIM);
        u.rows_range_mut(layout::WRENCH).copy_from(&self.wrench);
        u.rows_range_mut(layout::TORQUE).copy_from(&self.torque);
        u
    }
}

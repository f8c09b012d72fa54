//! Rigid application tool: centroidal dynamics, ZYX Euler-rate kinematics and
//! the projection from the centre of mass to the tooltip.

use nalgebra::{Matrix3, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this |cos ϑ| the Euler-rate map is treated as singular.
pub const EULER_SINGULAR_COS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolBody {
    pub mass: f64,
    /// Principal moments `(I_xx, I_yy, I_zz)`.
    #[serde(with = "crate::serde_vec::vec3")]
    pub inertia: Vector3<f64>,
    /// Centre of mass to the wrench application point, body frame.
    #[serde(with = "crate::serde_vec::vec3")]
    pub r_cb: Vector3<f64>,
    /// Centre of mass to the tooltip contact point, body frame.
    #[serde(with = "crate::serde_vec::vec3")]
    pub r_ce: Vector3<f64>,
    #[serde(with = "crate::serde_vec::vec3", default = "default_gravity")]
    pub gravity: Vector3<f64>,
}

fn default_gravity() -> Vector3<f64> {
    Vector3::from(super::chain::default_gravity())
}

impl Default for ToolBody {
    /// A 0.5 kg probe: mount 4 cm above and tip 6 cm below the centre of mass.
    fn default() -> Self {
        Self {
            mass: 0.5,
            inertia: Vector3::new(2.0e-3, 2.0e-3, 1.0e-3),
            r_cb: Vector3::new(0.0, 0.0, -0.04),
            r_ce: Vector3::new(0.0, 0.0, 0.06),
            gravity: default_gravity(),
        }
    }
}

impl ToolBody {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) || self.inertia.iter().any(|&i| !(i > 0.0)) {
            return Err(Error::Config("tool mass and inertia must be positive".into()));
        }
        Ok(())
    }
}

/// Rotation `Rz(ψ) Ry(ϑ) Rx(φ)` for angles `(ψ, ϑ, φ)`.
pub fn euler_rotation(angles: &Vector3<f64>) -> Rotation3<f64> {
    Rotation3::from_euler_angles(angles[2], angles[1], angles[0])
}

/// Map `T_e` from ZYX Euler rates to world angular velocity, and `Ṫ_e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerRateMap {
    pub t: Matrix3<f64>,
    pub t_dot: Matrix3<f64>,
}

impl EulerRateMap {
    pub fn angular_velocity(&self, rates: &Vector3<f64>) -> Vector3<f64> {
        self.t * rates
    }

    pub fn euler_rates(&self, omega: &Vector3<f64>) -> Result<Vector3<f64>> {
        self.t
            .lu()
            .solve(omega)
            .ok_or_else(|| Error::Singularity("Euler-rate map not invertible".into()))
    }

    /// `T⁻¹ (ω̇ − Ṫ ė)`.
    pub fn euler_accels(&self, omega_dot: &Vector3<f64>, rates: &Vector3<f64>) -> Result<Vector3<f64>> {
        self.euler_rates(&(omega_dot - self.t_dot * rates))
    }
}

pub fn euler_rate_map(angles: &Vector3<f64>, rates: &Vector3<f64>) -> Result<EulerRateMap> {
    let (sy, cy) = angles[0].sin_cos();
    let (sp, cp) = angles[1].sin_cos();
    if cp.abs() <= EULER_SINGULAR_COS {
        return Err(Error::Singularity(format!(
            "Euler pitch {} at gimbal lock",
            angles[1]
        )));
    }
    let (dy, dp) = (rates[0], rates[1]);
    #[rustfmt::skip]
    let t = Matrix3::new(
        0.0, -sy, cy * cp,
        0.0,  cy, sy * cp,
        1.0, 0.0, -sp,
    );
    #[rustfmt::skip]
    let t_dot = Matrix3::new(
        0.0, -cy * dy, -sy * cp * dy - cy * sp * dp,
        0.0, -sy * dy,  cy * cp * dy - sy * sp * dp,
        0.0,  0.0,     -cp * dp,
    );
    Ok(EulerRateMap { t, t_dot })
}

/// Centroidal linear and angular acceleration of the tool.
///
/// `contact_force` is the force the tool imparts on the surface; the tool
/// receives its reaction at the tooltip.
pub fn tool_accel(
    angles: &Vector3<f64>,
    wrench: &Vector6<f64>,
    contact_force: &Vector3<f64>,
    tool: &ToolBody,
) -> (Vector3<f64>, Vector3<f64>) {
    let rot = euler_rotation(angles);
    let lever_b = rot * tool.r_cb;
    let lever_e = rot * tool.r_ce;
    let force = wrench.fixed_rows::<3>(0).into_owned();
    let torque = wrench.fixed_rows::<3>(3).into_owned();
    let linear = (force + tool.gravity * tool.mass - contact_force) / tool.mass;
    let moment = lever_b.cross(&force) + torque - lever_e.cross(contact_force);
    (linear, moment.component_div(&tool.inertia))
}

/// Tooltip velocity and acceleration from the centroidal motion.
pub fn tooltip_from_centroid(
    vel_c: &Vector3<f64>,
    acc_c: &Vector3<f64>,
    omega: &Vector3<f64>,
    omega_dot: &Vector3<f64>,
    r_ce_world: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    let vel = vel_c + omega.cross(r_ce_world);
    let acc = acc_c + omega_dot.cross(r_ce_world) + omega.cross(&omega.cross(r_ce_world));
    (vel, acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_angles_give_the_zyx_permutation() {
        let map = euler_rate_map(&Vector3::zeros(), &Vector3::zeros()).unwrap();
        let expect = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
        assert_eq!(map.t, expect);
        assert_eq!(map.t_dot, Matrix3::zeros());
    }

    #[test]
    fn rate_map_roundtrip() {
        let angles = Vector3::new(0.4, -0.7, 1.1);
        let rates = Vector3::new(0.3, 0.2, -0.5);
        let map = euler_rate_map(&angles, &rates).unwrap();
        let omega = map.angular_velocity(&rates);
        let back = map.angular_velocity(&map.euler_rates(&omega).unwrap());
        assert_relative_eq!(back, omega, epsilon = 1e-12);
    }

    #[test]
    fn gimbal_lock_is_reported() {
        let angles = Vector3::new(0.0, std::f64::consts::FRAC_PI_2, 0.0);
        assert!(matches!(
            euler_rate_map(&angles, &Vector3::zeros()),
            Err(Error::Singularity(_))
        ));
    }

    #[test]
    fn free_fall_and_static_balance() {
        let tool = ToolBody::default();
        let (lin, ang) = tool_accel(&Vector3::zeros(), &Vector6::zeros(), &Vector3::zeros(), &tool);
        assert_relative_eq!(lin, tool.gravity, epsilon = 1e-15);
        assert_eq!(ang, Vector3::zeros());

        let mut centred = tool;
        centred.r_cb = Vector3::zeros();
        let contact = Vector3::new(0.3, -0.1, 5.0);
        let force = -tool.gravity * tool.mass + contact;
        let wrench = Vector6::new(force.x, force.y, force.z, 0.0, 0.0, 0.0);
        let (lin, _) = tool_accel(&Vector3::zeros(), &wrench, &contact, &centred);
        assert!(lin.amax() < 1e-14);
    }

    #[test]
    fn pure_spin_about_tooltip_keeps_it_still() {
        let r = Vector3::new(0.0, 0.0, 0.06);
        let omega = Vector3::new(0.0, 0.0, 2.0) + Vector3::new(0.3, 0.0, 0.0);
        // centroid velocity of a rigid rotation about the tooltip
        let vel_c = omega.cross(&(-r));
        let (vel, _) = tooltip_from_centroid(&vel_c, &Vector3::zeros(), &omega, &Vector3::zeros(), &r);
        assert!(vel.amax() < 1e-15);
        let (vel, acc) = tooltip_from_centroid(
            &Vector3::new(1.0, 2.0, 3.0),
            &Vector3::new(-1.0, 0.5, 0.0),
            &Vector3::zeros(),
            &Vector3::zeros(),
            &r,
        );
        assert_eq!(vel, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(acc, Vector3::new(-1.0, 0.5, 0.0));
    }
}

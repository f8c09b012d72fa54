//! Hertzian visco-static contact between a spherical tool tip and a soft surface.
//!
//! Everything here is a pure function of its arguments and uses SI units
//! (m, s, kg, N, Pa). The normal load `F` and indentation `d` are tied by
//!
//! ```text
//! d = (9 F² / (16 E² R))^(1/3)        F = (4/3) E √R d^(3/2)
//! ```
//!
//! where `E` is the reduced modulus of the pair and `R` the tip radius. The
//! sliding friction model and the contact-force ODE built on top of it follow
//! the same closed forms.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Load floor (N) used inside the cube-root terms of the rate equations.
pub const DEFAULT_FORCE_FLOOR: f64 = 1e-4;

/// Below `a * SMALL_RADIUS_FRACTION` the a²/r² bracket of the stress fields is
/// replaced by its limit.
const SMALL_RADIUS_FRACTION: f64 = 1e-8;

fn default_true() -> bool {
    true
}

fn default_infinite() -> f64 {
    f64::INFINITY
}

/// Elastic and frictional properties of the tool/surface pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    #[serde(rename = "young_tool_pa", default = "default_infinite")]
    pub young_tool: f64,
    #[serde(rename = "young_surface_pa")]
    pub young_surface: f64,
    #[serde(default)]
    pub poisson_tool: f64,
    pub poisson_surface: f64,
    /// Sliding friction coefficient.
    pub mu: f64,
    /// Damping in the moving direction (N·s/m).
    pub k_d: f64,
    /// Treat the tool as infinitely stiff (ignores `young_tool`).
    #[serde(default = "default_true")]
    pub rigid_tool: bool,
}

impl MaterialParams {
    /// Rigid spherical tool on a soft surface.
    pub fn rigid_tool(young_surface: f64, poisson_surface: f64, mu: f64, k_d: f64) -> Self {
        Self {
            young_tool: f64::INFINITY,
            young_surface,
            poisson_tool: 0.0,
            poisson_surface,
            mu,
            k_d,
            rigid_tool: true,
        }
    }

    /// Reduced (combined) Young's modulus `E`.
    pub fn reduced_modulus(&self) -> f64 {
        let surface = (1.0 - self.poisson_surface * self.poisson_surface) / self.young_surface;
        if self.rigid_tool {
            self.young_surface / (1.0 - self.poisson_surface * self.poisson_surface)
        } else {
            let tool = (1.0 - self.poisson_tool * self.poisson_tool) / self.young_tool;
            1.0 / (tool + surface)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let poisson_ok = |nu: f64| nu > -1.0 && nu <= 0.5;
        if !poisson_ok(self.poisson_surface) {
            return Err(domain(format!(
                "poisson_surface {} outside (-1, 0.5]",
                self.poisson_surface
            )));
        }
        if !self.rigid_tool {
            if !poisson_ok(self.poisson_tool) {
                return Err(domain(format!(
                    "poisson_tool {} outside (-1, 0.5]",
                    self.poisson_tool
                )));
            }
            if !(self.young_tool > 0.0) {
                return Err(domain("young_tool must be positive"));
            }
        }
        if !(self.young_surface > 0.0) || !self.young_surface.is_finite() {
            return Err(domain("young_surface must be positive and finite"));
        }
        if !(self.mu >= 0.0) || !(self.k_d >= 0.0) {
            return Err(domain("mu and k_d must be non-negative"));
        }
        let e = self.reduced_modulus();
        if !(e > 0.0 && e.is_finite()) {
            return Err(domain(format!("reduced modulus {e} not positive and finite")));
        }
        Ok(())
    }
}

/// Tool-tip radius and the average surface normal.
///
/// The normal points *into* the surface, i.e. along the direction the tool
/// presses. With the default world frame the z axis is that direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactGeometry {
    #[serde(rename = "tool_radius_m")]
    pub tool_radius: f64,
    #[serde(with = "crate::serde_vec::vec3", default = "default_normal")]
    pub surface_normal: Vector3<f64>,
}

fn default_normal() -> Vector3<f64> {
    Vector3::z()
}

impl ContactGeometry {
    /// Builds a geometry, normalizing `normal`.
    pub fn new(tool_radius: f64, normal: Vector3<f64>) -> Result<Self> {
        let n = normal.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(domain("surface normal must be non-zero"));
        }
        let geom = Self {
            tool_radius,
            surface_normal: normal / n,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn horizontal(tool_radius: f64) -> Result<Self> {
        Self::new(tool_radius, Vector3::z())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tool_radius > 0.0) || !self.tool_radius.is_finite() {
            return Err(domain("tool radius must be positive"));
        }
        if (self.surface_normal.norm() - 1.0).abs() > 1e-12 {
            return Err(domain("surface normal must be unit length"));
        }
        Ok(())
    }
}

/// Serialized form of a material/geometry pair as one configuration block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactBlock {
    #[serde(flatten)]
    pub material: MaterialParams,
    #[serde(flatten)]
    pub geometry: ContactGeometry,
}

/// Static Hertz contact state for a given load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactConfiguration {
    pub normal_force: f64,
    pub indentation: f64,
    pub contact_radius: f64,
    pub mean_pressure: f64,
}

impl ContactConfiguration {
    pub fn from_force(force: f64, mat: &MaterialParams, geom: &ContactGeometry) -> Result<Self> {
        let d = indentation_from_force(force, mat, geom)?;
        Ok(Self::assemble(force, d, geom))
    }

    pub fn from_indentation(d: f64, mat: &MaterialParams, geom: &ContactGeometry) -> Result<Self> {
        let force = force_from_indentation(d, mat, geom)?;
        Ok(Self::assemble(force, d, geom))
    }

    fn assemble(force: f64, d: f64, geom: &ContactGeometry) -> Self {
        let a = (geom.tool_radius * d).sqrt();
        let mean_pressure = if a > 0.0 {
            force / (std::f64::consts::PI * a * a)
        } else {
            0.0
        };
        Self {
            normal_force: force,
            indentation: d,
            contact_radius: a,
            mean_pressure,
        }
    }
}

/// Largest static indentation under normal load `force`.
pub fn indentation_from_force(force: f64, mat: &MaterialParams, geom: &ContactGeometry) -> Result<f64> {
    if !(force >= 0.0) {
        return Err(domain(format!("normal force {force} must be non-negative")));
    }
    let e = mat.reduced_modulus();
    Ok((9.0 * force * force / (16.0 * e * e * geom.tool_radius)).cbrt())
}

pub fn force_from_indentation(d: f64, mat: &MaterialParams, geom: &ContactGeometry) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(domain(format!("indentation {d} must be non-negative")));
    }
    let e = mat.reduced_modulus();
    Ok(4.0 / 3.0 * e * geom.tool_radius.sqrt() * d.powf(1.5))
}

/// Rate of the contact point's position along the outward normal, `ż = -ḋ`.
pub fn indentation_rate(
    normal_force: f64,
    normal_force_rate: f64,
    mat: &MaterialParams,
    geom: &ContactGeometry,
) -> Result<f64> {
    if !(normal_force > 0.0) {
        return Err(Error::Singularity(format!(
            "indentation rate undefined at normal force {normal_force}"
        )));
    }
    Ok(-compliance_rate_factor(normal_force, mat, geom) * normal_force_rate)
}

/// Same as [`indentation_rate`] with the load clamped to `floor` inside the root.
pub fn indentation_rate_regularized(
    normal_force: f64,
    normal_force_rate: f64,
    floor: f64,
    mat: &MaterialParams,
    geom: &ContactGeometry,
) -> f64 {
    -compliance_rate_factor(normal_force.max(floor), mat, geom) * normal_force_rate
}

/// `(1 / (6 E² R F))^(1/3)`, i.e. `dd/dF`.
fn compliance_rate_factor(force: f64, mat: &MaterialParams, geom: &ContactGeometry) -> f64 {
    let e = mat.reduced_modulus();
    (1.0 / (6.0 * e * e * geom.tool_radius * force)).cbrt()
}

/// Contact stiffness `dF/dd = (6 E² R F)^(1/3)`.
pub fn contact_stiffness(force: f64, mat: &MaterialParams, geom: &ContactGeometry) -> f64 {
    let e = mat.reduced_modulus();
    (6.0 * e * e * geom.tool_radius * force).cbrt()
}

fn check_inside(r: f64, cfg: &ContactConfiguration) -> Result<()> {
    if !(r >= 0.0) || r > cfg.contact_radius {
        return Err(domain(format!(
            "radius {r} outside contact circle of radius {}",
            cfg.contact_radius
        )));
    }
    Ok(())
}

/// Normal stress inside the contact circle.
pub fn stress_normal_z(r: f64, cfg: &ContactConfiguration) -> Result<f64> {
    check_inside(r, cfg)?;
    if cfg.contact_radius == 0.0 {
        return Ok(0.0);
    }
    let rho = r / cfg.contact_radius;
    Ok(-1.5 * cfg.mean_pressure * (1.0 - rho * rho).max(0.0).sqrt())
}

/// The `a²/r² [1 - (1 - r²/a²)]` factor shared by the radial and hoop stress.
fn stress_bracket(r: f64, a: f64) -> f64 {
    if r < a * SMALL_RADIUS_FRACTION {
        1.0
    } else {
        // 1 - (1 - q) is q; subtracting in floating point cancels badly for small r
        let q = r * r / (a * a);
        (a * a) / (r * r) * q
    }
}

fn radial_hoop(r: f64, cfg: &ContactConfiguration, nu: f64) -> (f64, f64) {
    let a = cfg.contact_radius;
    if a == 0.0 {
        return (0.0, 0.0);
    }
    let rho = r / a;
    let root = (1.0 - rho * rho).max(0.0).sqrt();
    let bracket = stress_bracket(r, a);
    let pm = cfg.mean_pressure;
    let radial = pm * ((2.0 * nu - 1.0) / 2.0 * bracket - 3.0 * nu * root);
    let hoop = pm * ((1.0 - 2.0 * nu) / 2.0 * bracket - 1.5 * root);
    (radial, hoop)
}

fn check_open_inside(r: f64, cfg: &ContactConfiguration) -> Result<()> {
    if !(r > 0.0) || r > cfg.contact_radius {
        return Err(domain(format!(
            "radius {r} outside (0, {}]",
            cfg.contact_radius
        )));
    }
    Ok(())
}

/// Radial stress σ_r at radius `r` (ν taken from the surface material).
pub fn stress_radial(r: f64, cfg: &ContactConfiguration, mat: &MaterialParams) -> Result<f64> {
    check_open_inside(r, cfg)?;
    Ok(radial_hoop(r, cfg, mat.poisson_surface).0)
}

/// Hoop stress σ_θ at radius `r`.
pub fn stress_hoop(r: f64, cfg: &ContactConfiguration, mat: &MaterialParams) -> Result<f64> {
    check_open_inside(r, cfg)?;
    Ok(radial_hoop(r, cfg, mat.poisson_surface).1)
}

/// Normal surface displacement `u_z(r)`; inner branch for `r ≤ a`, far field beyond.
pub fn deformation_profile(r: f64, cfg: &ContactConfiguration, mat: &MaterialParams) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(domain(format!("radius {r} must be non-negative")));
    }
    let a = cfg.contact_radius;
    if a == 0.0 {
        return Ok(0.0);
    }
    let nu = mat.poisson_surface;
    let compliance = (1.0 - nu * nu) / mat.young_surface;
    let pm = cfg.mean_pressure;
    if r <= a {
        Ok(3.0 * std::f64::consts::PI / (8.0 * a) * compliance * pm * (2.0 * a * a - r * r))
    } else {
        Ok(3.0 / (4.0 * a)
            * compliance
            * pm
            * ((2.0 * a * a - r * r) * (a / r).asin() + a * (r * r - a * a).sqrt()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StressFrame {
    Cylindrical,
    Cartesian,
}

/// Symmetric 3×3 stress tensor tagged with its frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StressTensor3 {
    pub matrix: Matrix3<f64>,
    pub frame: StressFrame,
}

impl StressTensor3 {
    /// Cylindrical tensor with the Hertz layout (σ_rθ = σ_θz = 0).
    pub fn cylindrical(radial: f64, hoop: f64, normal: f64, shear_rz: f64) -> Self {
        #[rustfmt::skip]
        let matrix = Matrix3::new(
            radial,   0.0,  shear_rz,
            0.0,      hoop, 0.0,
            shear_rz, 0.0,  normal,
        );
        Self {
            matrix,
            frame: StressFrame::Cylindrical,
        }
    }

    /// Surface stress state at radius `r` of the contact circle. The surface
    /// carries no r–z shear in the frictionless Hertz solution.
    pub fn surface_at(r: f64, cfg: &ContactConfiguration, mat: &MaterialParams) -> Result<Self> {
        check_inside(r, cfg)?;
        let (radial, hoop) = radial_hoop(r, cfg, mat.poisson_surface);
        let normal = stress_normal_z(r, cfg)?;
        Ok(Self::cylindrical(radial, hoop, normal, 0.0))
    }

    /// `σ_c = Tᵀ σ T`.
    pub fn to_cartesian(&self, theta: f64) -> Self {
        let t = cylindrical_transform(theta);
        Self {
            matrix: t.transpose() * self.matrix * t,
            frame: StressFrame::Cartesian,
        }
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (self.matrix - self.matrix.transpose()).amax() <= tol
    }
}

/// Cylindrical-to-Cartesian rotation used for the stress tensor.
pub fn cylindrical_transform(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    #[rustfmt::skip]
    let t = Matrix3::new(
        c,  s,  0.0,
        -s, c,  0.0,
        0.0, 0.0, 1.0,
    );
    t
}

/// Scalar expansion of `nᵀ σ_c n` for `n = [sin θ, 0, cos θ]`.
pub fn normal_stress_expansion(radial: f64, hoop: f64, normal: f64, shear_rz: f64, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    radial * c * c * s * s + hoop * s.powi(4) + normal * c * c + 2.0 * shear_rz * s * c * c
}

/// Normal stress on the spherical cap at polar angle `theta` (point at `r = R sin θ`).
pub fn surface_normal_stress(
    theta: f64,
    cfg: &ContactConfiguration,
    mat: &MaterialParams,
    geom: &ContactGeometry,
) -> Result<f64> {
    let r = geom.tool_radius * theta.sin().abs();
    let sigma = StressTensor3::surface_at(r, cfg, mat)?.to_cartesian(theta);
    let n = Vector3::new(theta.sin(), 0.0, theta.cos());
    Ok((n.transpose() * sigma.matrix * n)[(0, 0)])
}

/// Total sliding friction `F_θ = μ F_z [1 + (2ν−1) 3a²/(10R²)] + k_d v_e`.
pub fn friction_force(
    normal_force: f64,
    speed: f64,
    mat: &MaterialParams,
    geom: &ContactGeometry,
) -> Result<f64> {
    let d = indentation_from_force(normal_force, mat, geom)?;
    let r = geom.tool_radius;
    // a² / R² = d / R
    let correction = (2.0 * mat.poisson_surface - 1.0) * 3.0 * d / (10.0 * r);
    Ok(mat.mu * normal_force * (1.0 + correction) + mat.k_d * speed)
}

/// Time derivative of [`friction_force`]; `zdot` is the outward-normal rate (`-ḋ`).
#[allow(clippy::too_many_arguments)]
pub fn friction_force_rate(
    normal_force: f64,
    normal_force_rate: f64,
    d: f64,
    zdot: f64,
    speed_rate: f64,
    mat: &MaterialParams,
    geom: &ContactGeometry,
) -> f64 {
    let mu = mat.mu;
    let nu = mat.poisson_surface;
    mu * normal_force_rate
        + 3.0 * mu * (2.0 * nu - 1.0) / (10.0 * geom.tool_radius)
            * (normal_force_rate * d - normal_force * zdot)
        + mat.k_d * speed_rate
}

/// Rate of the centripetal load `F_r = m v² / R_c`. An infinite radius means a straight path.
pub fn radial_force_rate(mass: f64, speed: f64, speed_rate: f64, radius: f64) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(domain(format!("curvature radius {radius} must be positive")));
    }
    if radius.is_infinite() {
        return Ok(0.0);
    }
    Ok(2.0 * mass * speed * speed_rate / radius)
}

/// Path curvature seen from the contact frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Curvature {
    Straight,
    /// Arc of `radius`; `outward` is true when n_⊥ points away from the centre of curvature.
    Arc { radius: f64, outward: bool },
}

impl Curvature {
    /// From a signed curvature κ (1/m); κ > 0 puts the centre on the −n_⊥ side.
    pub fn from_signed(kappa: f64) -> Self {
        if kappa == 0.0 || !kappa.is_finite() {
            Curvature::Straight
        } else {
            Curvature::Arc {
                radius: 1.0 / kappa.abs(),
                outward: kappa > 0.0,
            }
        }
    }

    pub fn signed(&self) -> f64 {
        match *self {
            Curvature::Straight => 0.0,
            Curvature::Arc { radius, outward } => {
                if outward {
                    1.0 / radius
                } else {
                    -1.0 / radius
                }
            }
        }
    }

    pub fn radius(&self) -> f64 {
        match *self {
            Curvature::Straight => f64::INFINITY,
            Curvature::Arc { radius, .. } => radius,
        }
    }
}

/// Contact force with its moving frame (n_v, n_⊥, n_z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactForceState {
    pub force: Vector3<f64>,
    pub n_v: Vector3<f64>,
    pub n_perp: Vector3<f64>,
    pub n_z: Vector3<f64>,
}

impl ContactForceState {
    /// Completes the frame with `n_⊥ = n_v × N` so that `n_⊥ × n_v = N`.
    pub fn new(force: Vector3<f64>, n_v: Vector3<f64>, normal: Vector3<f64>) -> Result<Self> {
        let state = Self {
            force,
            n_v,
            n_perp: n_v.cross(&normal),
            n_z: normal,
        };
        state.validate(1e-10)?;
        Ok(state)
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let basis = [self.n_v, self.n_perp, self.n_z];
        for (i, a) in basis.iter().enumerate() {
            for (j, b) in basis.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (a.dot(b) - expect).abs() > tol {
                    return Err(domain("contact frame is not orthonormal"));
                }
            }
        }
        if (self.n_perp.cross(&self.n_v) - self.n_z).amax() > tol {
            return Err(domain("contact frame is not right handed (n_perp x n_v != N)"));
        }
        Ok(())
    }
}

/// Kinematic inputs of the contact-force ODE.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContactRates {
    /// Indentation `d` consistent with the normal load.
    pub indentation: f64,
    /// `ḋ`, positive when pressing further in.
    pub indentation_rate: f64,
    pub normal_force: f64,
    pub normal_force_rate: f64,
    pub speed: f64,
    pub speed_rate: f64,
}

/// Time derivative of the contact force vector.
#[allow(clippy::too_many_arguments)]
pub fn contact_force_ode(
    state: &ContactForceState,
    rates: &ContactRates,
    mat: &MaterialParams,
    geom: &ContactGeometry,
    tool_mass: f64,
    curvature: Curvature,
    force_floor: f64,
) -> Result<Vector3<f64>> {
    let normal_rate =
        contact_stiffness(rates.normal_force.max(force_floor), mat, geom) * rates.indentation_rate;
    let friction_rate = friction_force_rate(
        rates.normal_force,
        rates.normal_force_rate,
        rates.indentation,
        -rates.indentation_rate,
        rates.speed_rate,
        mat,
        geom,
    );
    let radial_rate = match curvature {
        Curvature::Straight => 0.0,
        Curvature::Arc { radius, outward } => {
            let r = radial_force_rate(tool_mass, rates.speed, rates.speed_rate, radius)?;
            if outward {
                r
            } else {
                -r
            }
        }
    };
    Ok(state.n_z * normal_rate + state.n_v * friction_rate + state.n_perp * radial_rate)
}

/// Kelvin–Voigt normal force `K δx + D δẋ`.
pub fn normal_force_kv(dx: f64, dxdot: f64, stiffness: f64, damping: f64) -> f64 {
    stiffness * dx + damping * dxdot
}

/// Placement of the exponent in the Hunt–Crossley damping term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HuntCrossleyForm {
    /// `λ δx (δẋ)ⁿ`
    #[default]
    AsWritten,
    /// `λ δxⁿ δẋ`
    Standard,
}

pub const DEFAULT_HUNT_CROSSLEY_EXPONENT: f64 = 1.5;

fn signed_pow(x: f64, n: f64) -> f64 {
    x.signum() * x.abs().powf(n)
}

/// Hunt–Crossley normal force `K δxⁿ` plus a nonlinear damping term.
pub fn normal_force_hunt_crossley(
    dx: f64,
    dxdot: f64,
    stiffness: f64,
    damping: f64,
    exponent: f64,
    form: HuntCrossleyForm,
) -> Result<f64> {
    if !(dx >= 0.0) {
        return Err(domain(format!("indentation {dx} must be non-negative")));
    }
    let spring = stiffness * dx.powf(exponent);
    let damper = match form {
        HuntCrossleyForm::AsWritten => damping * dx * signed_pow(dxdot, exponent),
        HuntCrossleyForm::Standard => damping * dx.powf(exponent) * dxdot,
    };
    Ok(spring + damper)
}

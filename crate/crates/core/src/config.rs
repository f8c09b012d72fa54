//! Run configuration: one TOML file with sections `[material]`, `[geometry]`,
//! `[chain]`, `[tool]`, `[scenario]`, `[solver]`, `[cost]`, `[admm]` and
//! `[controller]`. Every section except `[material]`, `[geometry]` and
//! `[scenario]` may be omitted and falls back to the defaults below.

use std::path::Path;

use nalgebra::{Matrix3, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::admm::AdmmOptions;
use crate::contact::{ContactBlock, ContactGeometry, MaterialParams};
use crate::cost::CostWeights;
use crate::ddp::DdpOptions;
use crate::error::{Error, Result};
use crate::harness::{build_problem, ConstraintConfig, ControllerGains, Problem, Scenario};
use crate::multibody::{iiwa_like, iiwa_like_seed, ChainRecord, KinematicChain, ToolBody};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub dt: f64,
    /// Number of steps; `duration / dt` when absent.
    pub horizon: Option<usize>,
    #[serde(flatten)]
    pub ddp: DdpOptions,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            horizon: None,
            ddp: DdpOptions::default(),
        }
    }
}

/// Diagonal cost weights; see [`crate::cost`] for the terms they scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostConfig {
    pub force: [f64; 3],
    pub wrench_effort: [f64; 6],
    pub torque_effort: [f64; 7],
    pub pose_norm: f64,
    pub tool_position: [f64; 3],
    pub tool_angles: [f64; 3],
    pub tool_rate: [f64; 6],
    pub joint_rate: f64,
    pub terminal_scale: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self::from_weights(&CostWeights::default())
    }
}

impl CostConfig {
    pub fn from_weights(w: &CostWeights) -> Self {
        let mut wrench_effort = [0.0; 6];
        let mut torque_effort = [0.0; 7];
        wrench_effort.copy_from_slice(&w.control.as_slice()[0..6]);
        torque_effort.copy_from_slice(&w.control.as_slice()[6..13]);
        Self {
            force: [w.force[(0, 0)], w.force[(1, 1)], w.force[(2, 2)]],
            wrench_effort,
            torque_effort,
            pose_norm: w.pose_norm,
            tool_position: w.tool_position.into(),
            tool_angles: w.tool_angles.into(),
            tool_rate: w.tool_rate.into(),
            joint_rate: w.joint_rate,
            terminal_scale: w.terminal_scale,
        }
    }

    pub fn weights(&self) -> Result<CostWeights> {
        let nonneg = self
            .force
            .iter()
            .chain(&self.tool_position)
            .chain(&self.tool_angles)
            .chain(&self.tool_rate)
            .chain([&self.pose_norm, &self.joint_rate, &self.terminal_scale])
            .all(|v| *v >= 0.0);
        let positive_effort = self.wrench_effort.iter().chain(&self.torque_effort).all(|v| *v > 0.0);
        if !nonneg || !positive_effort {
            return Err(Error::Config(
                "cost weights must be non-negative and control effort weights positive".into(),
            ));
        }
        Ok(CostWeights {
            force: Matrix3::from_diagonal(&Vector3::from(self.force)),
            control: SVector::<f64, 13>::from_iterator(
                self.wrench_effort.iter().chain(&self.torque_effort).copied(),
            ),
            pose_norm: self.pose_norm,
            tool_position: Vector3::from(self.tool_position),
            tool_angles: Vector3::from(self.tool_angles),
            tool_rate: Vector6::from(self.tool_rate),
            joint_rate: self.joint_rate,
            terminal_scale: self.terminal_scale,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmConfig {
    #[serde(flatten)]
    pub constraints: ConstraintConfig,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_admm_iters: usize,
    pub first_call_max_iters: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        let o = AdmmOptions::default();
        Self {
            constraints: ConstraintConfig::default(),
            tol_primal: o.tol_primal,
            tol_dual: o.tol_dual,
            max_admm_iters: o.max_admm_iters,
            first_call_max_iters: o.first_call_max_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub material: MaterialParams,
    pub geometry: ContactGeometry,
    /// Chain description; the built-in seven-joint arm when absent.
    #[serde(default)]
    pub chain: Option<ChainRecord>,
    /// Initial guess for inverse kinematics of the start pose.
    #[serde(default)]
    pub ik_seed: Option<Vec<f64>>,
    #[serde(default)]
    pub tool: ToolBody,
    pub scenario: Scenario,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default)]
    pub admm: AdmmConfig,
    #[serde(default)]
    pub controller: ControllerGains,
}

impl RunConfig {
    /// Circle scenario on the default arm and a soft surface.
    pub fn circle_default() -> Self {
        Self {
            seed: 0,
            material: MaterialParams::rigid_tool(1e5 * (1.0 - 0.45 * 0.45), 0.45, 0.4512, 13.1315),
            geometry: ContactGeometry {
                tool_radius: 0.01,
                surface_normal: Vector3::z(),
            },
            chain: None,
            ik_seed: None,
            tool: ToolBody::default(),
            scenario: Scenario::circle(),
            solver: SolverConfig::default(),
            cost: CostConfig::default(),
            admm: AdmmConfig::default(),
            controller: ControllerGains::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.material.validate()?;
        self.geometry.validate()?;
        self.tool.validate()?;
        self.scenario.validate()?;
        self.controller.validate()?;
        self.cost.weights()?;
        if !(self.solver.dt > 0.0) {
            return Err(Error::Config("solver dt must be positive".into()));
        }
        if self.horizon() == 0 {
            return Err(Error::Config("horizon must be at least one step".into()));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.solver
            .horizon
            .unwrap_or_else(|| (self.scenario.duration / self.solver.dt).round() as usize)
    }

    pub fn chain(&self) -> Result<KinematicChain> {
        match &self.chain {
            Some(rec) => rec.build(),
            None => Ok(iiwa_like()),
        }
    }

    pub fn contact(&self) -> ContactBlock {
        ContactBlock {
            material: self.material,
            geometry: self.geometry,
        }
    }

    pub fn admm_options(&self) -> AdmmOptions {
        AdmmOptions {
            tol_primal: self.admm.tol_primal,
            tol_dual: self.admm.tol_dual,
            max_admm_iters: self.admm.max_admm_iters,
            first_call_max_iters: self.admm.first_call_max_iters,
            ddp: self.solver.ddp,
        }
    }

    pub fn problem(&self) -> Result<Problem> {
        let chain = self.chain().map_err(|e| e.at("chain"))?;
        let seed = self.ik_seed.clone().unwrap_or_else(|| iiwa_like_seed().to_vec());
        if seed.len() != chain.dof() {
            return Err(Error::Config(format!("ik_seed has {} entries for {} joints", seed.len(), chain.dof())));
        }
        build_problem(
            &self.scenario,
            chain,
            self.tool,
            self.contact(),
            self.solver.dt,
            self.horizon(),
            self.cost.weights()?,
            &self.admm.constraints,
            &seed,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_roundtrips_through_toml() {
        let cfg = RunConfig::circle_default();
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.horizon(), 500);
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let text = r#"
[material]
young_surface_pa = 79750.0
poisson_surface = 0.45
mu = 0.4512
k_d = 13.1315

[geometry]
tool_radius_m = 0.01

[scenario]
kind = "line"
start = [-0.05, 0.0]
end = [0.05, 0.0]
duration = 2.0
force_desired = 5.0
"#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.horizon(), 200);
        assert_eq!(cfg.tool, ToolBody::default());
    }

    #[test]
    fn negative_duration_is_rejected() {
        let mut cfg = RunConfig::circle_default();
        cfg.scenario.duration = -1.0;
        let text = cfg.to_toml().unwrap();
        assert!(matches!(RunConfig::from_toml_str(&text), Err(Error::Config(_))));
    }
}

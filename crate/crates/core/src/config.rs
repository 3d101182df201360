//! Run configuration, read from TOML. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::evaluation::DEFAULT_D_GRID;
use crate::ground_filter::GroundParams;
use crate::lcpm::{LcpmParams, PenaltySchedule, StepProbe};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub voxel_size: f64,
    /// Derive the voxel size from the point density instead.
    pub adaptive: bool,
    /// Points per occupied voxel aimed for when adaptive.
    pub target_points: f64,
    pub min_voxel_size: f64,
    pub max_voxel_size: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.04,
            adaptive: false,
            target_points: 3.0,
            min_voxel_size: 0.04,
            max_voxel_size: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    pub sigma: f64,
    pub candidate_fraction: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            sigma: 0.8,
            candidate_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LcpmConfig {
    pub region_extents: [i32; 3],
    pub rho_low: f64,
    pub rho_high: f64,
    pub penalty_d_low: f64,
    pub penalty_d_high: f64,
    pub penalty_s_low: f64,
    pub penalty_s_high: f64,
    pub penalty_v: f64,
    pub rho_min: f64,
    pub min_component: usize,
    pub corridor: f64,
    pub min_step_height: f64,
    pub min_roughness: f64,
    pub roughness_radius: f64,
    pub link_gap: f64,
    pub link_lateral: f64,
    pub link_angle_deg: f64,
    pub min_chain_length: f64,
    pub stitch_distance: f64,
    pub bezier_max_gap: f64,
    pub top_edge: bool,
    pub top_reach: f64,
    pub gap_margin: f64,
}

impl Default for LcpmConfig {
    fn default() -> Self {
        Self::from_params(&LcpmParams::default())
    }
}

impl LcpmConfig {
    fn from_params(p: &LcpmParams) -> Self {
        let s = &p.schedule;
        Self {
            region_extents: p.region_extents,
            rho_low: s.data_low.0,
            rho_high: s.data_high.0,
            penalty_d_low: s.data_low.1,
            penalty_d_high: s.data_high.1,
            penalty_s_low: s.smooth_low.1,
            penalty_s_high: s.smooth_high.1,
            penalty_v: s.virtual_cost,
            rho_min: s.rho_min,
            min_component: p.min_component,
            corridor: p.corridor,
            min_step_height: p.min_step_height,
            min_roughness: p.min_roughness,
            roughness_radius: p.roughness_radius,
            link_gap: p.link_gap,
            link_lateral: p.link_lateral,
            link_angle_deg: p.link_angle_deg,
            min_chain_length: p.min_chain_length,
            stitch_distance: p.stitch_distance,
            bezier_max_gap: p.bezier_max_gap,
            top_edge: p.top_edge,
            top_reach: p.top_reach,
            gap_margin: p.gap_margin,
        }
    }

    pub fn params(&self) -> LcpmParams {
        LcpmParams {
            region_extents: self.region_extents,
            schedule: PenaltySchedule {
                data_low: (self.rho_low, self.penalty_d_low),
                data_high: (self.rho_high, self.penalty_d_high),
                smooth_low: (self.rho_low, self.penalty_s_low),
                smooth_high: (self.rho_high, self.penalty_s_high),
                virtual_cost: self.penalty_v,
                rho_min: self.rho_min,
            },
            min_component: self.min_component,
            corridor: self.corridor,
            min_step_height: self.min_step_height,
            probe: StepProbe::default(),
            min_roughness: self.min_roughness,
            roughness_radius: self.roughness_radius,
            link_gap: self.link_gap,
            link_lateral: self.link_lateral,
            link_angle_deg: self.link_angle_deg,
            min_chain_length: self.min_chain_length,
            stitch_distance: self.stitch_distance,
            bezier_max_gap: self.bezier_max_gap,
            top_edge: self.top_edge,
            top_reach: self.top_reach,
            gap_margin: self.gap_margin,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundConfig {
    pub enabled: bool,
    pub bin_width: f64,
    pub min_half_width: f64,
    pub tile_banding: bool,
    pub tile_size: f64,
}

impl Default for GroundConfig {
    fn default() -> Self {
        let g = GroundParams::default();
        Self {
            enabled: true,
            bin_width: g.bin_width,
            min_half_width: g.min_half_width,
            tile_banding: g.tile_banding,
            tile_size: g.tile_size,
        }
    }
}

impl GroundConfig {
    pub fn params(&self) -> GroundParams {
        GroundParams {
            bin_width: self.bin_width,
            min_half_width: self.min_half_width,
            tile_banding: self.tile_banding,
            tile_size: self.tile_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub d_grid: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            d_grid: DEFAULT_D_GRID.to_vec(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub grid: GridConfig,
    pub energy: EnergyConfig,
    pub lcpm: LcpmConfig,
    pub ground: GroundConfig,
    pub eval: EvalConfig,
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive, got {v}")))
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Effective configuration with every default filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        positive("voxel_size", g.voxel_size)?;
        positive("target_points", g.target_points)?;
        positive("min_voxel_size", g.min_voxel_size)?;
        positive("max_voxel_size", g.max_voxel_size)?;
        if g.min_voxel_size > g.max_voxel_size {
            return Err(invalid("min_voxel_size", "exceeds max_voxel_size"));
        }
        positive("sigma", self.energy.sigma)?;
        let f = self.energy.candidate_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(invalid("candidate_fraction", format!("must lie in (0, 1], got {f}")));
        }
        self.lcpm.params().validate()?;
        positive("bin_width", self.ground.bin_width)?;
        positive("tile_size", self.ground.tile_size)?;
        if !(self.ground.min_half_width.is_finite() && self.ground.min_half_width >= 0.0) {
            return Err(invalid("min_half_width", "must be non-negative"));
        }
        if self.eval.d_grid.is_empty() {
            return Err(invalid("d_grid", "must not be empty"));
        }
        for &d in &self.eval.d_grid {
            positive("d_grid", d)?;
        }
        Ok(())
    }
}

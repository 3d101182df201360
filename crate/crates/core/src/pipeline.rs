//! Ground filtering, energy, candidate selection and path linking, wired
//! together from one configuration.

use crate::cloud_io::{Point3, PointCloud, Polyline3};
use crate::config::PipelineConfig;
use crate::energy::{compute_energy, scale_energy, select_candidates, CandidateSet, EnergyField};
use crate::error::{invalid, Result};
use crate::evaluation::{evaluate, MetricsReport};
use crate::ground_filter::ground_filter;
use crate::lcpm::{refine_scene, LcpmParams, Refinement};
use crate::voxel_grid::{adaptive_voxel_size, build_grid, VoxelGrid};

/// Smallest cloud worth extracting from.
pub const MIN_POINTS: usize = 100;

#[derive(Clone, Debug)]
pub struct Extraction {
    pub ground: PointCloud,
    pub grid: VoxelGrid,
    pub field: EnergyField,
    pub candidates: CandidateSet,
}

/// Ground points and their voxel grid.
pub fn prepare(cloud: &PointCloud, cfg: &PipelineConfig) -> Result<(PointCloud, VoxelGrid)> {
    if cloud.len() < MIN_POINTS {
        return Err(invalid(
            "cloud",
            format!("need at least {MIN_POINTS} points, got {}", cloud.len()),
        ));
    }
    let ground = if cfg.ground.enabled {
        ground_filter(cloud, &cfg.ground.params())?
    } else {
        cloud.clone()
    };
    let g = &cfg.grid;
    let vs = if g.adaptive {
        adaptive_voxel_size(&ground, g.target_points, g.min_voxel_size, g.max_voxel_size)
    } else {
        g.voxel_size
    };
    let grid = build_grid(&ground, vs)?;
    Ok((ground, grid))
}

pub fn extract(cloud: &PointCloud, cfg: &PipelineConfig) -> Result<Extraction> {
    let (ground, grid) = prepare(cloud, cfg)?;
    let mut field = compute_energy(&grid, cfg.energy.sigma)?;
    scale_energy(&mut field)?;
    let candidates = select_candidates(&field, cfg.energy.candidate_fraction)?;
    Ok(Extraction {
        ground,
        grid,
        field,
        candidates,
    })
}

/// Candidates given as voxel centers, as written by the extract step.
pub fn candidates_from_centers(grid: &VoxelGrid, centers: &[Point3]) -> CandidateSet {
    CandidateSet::from_indices(centers.iter().map(|&p| grid.index_of(p)).collect())
}

/// Path-linking parameters for `grid`. On an adaptive grid the search
/// region keeps the physical size it has at the nominal voxel size, and the
/// smallest kept component keeps its length. Pieces may also be chained
/// across gaps of up to 20 voxels.
pub fn lcpm_params(grid: &VoxelGrid, cfg: &PipelineConfig) -> LcpmParams {
    let mut p = cfg.lcpm.params();
    if cfg.grid.adaptive {
        let scale = cfg.grid.voxel_size / grid.voxel_size();
        p.region_extents = p.region_extents.map(|e| ((e as f64 * scale).round() as i32).max(1));
        p.min_component = ((p.min_component as f64 * scale).round() as usize).clamp(2, p.min_component);
        p.link_gap = p.link_gap.max(20.0 * grid.voxel_size());
    }
    p
}

pub fn refine(
    ground: &PointCloud,
    grid: &VoxelGrid,
    cands: &CandidateSet,
    field: Option<&EnergyField>,
    cfg: &PipelineConfig,
) -> Result<Refinement> {
    refine_scene(grid, cands, ground, field, &lcpm_params(grid, cfg))
}

#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub extraction: Extraction,
    pub refinement: Refinement,
    pub metrics: Option<MetricsReport>,
}

impl PipelineRun {
    pub fn polylines(&self) -> &[Polyline3] {
        &self.refinement.polylines
    }
}

/// Full run; scores against `truth` on the ground cloud when given.
pub fn run(cloud: &PointCloud, truth: Option<&[Polyline3]>, cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let extraction = extract(cloud, cfg)?;
    let refinement = refine(
        &extraction.ground,
        &extraction.grid,
        &extraction.candidates,
        Some(&extraction.field),
        cfg,
    )?;
    let metrics = truth
        .map(|t| evaluate(&extraction.ground, &refinement.polylines, t, &cfg.eval.d_grid))
        .transpose()?;
    Ok(PipelineRun {
        extraction,
        refinement,
        metrics,
    })
}

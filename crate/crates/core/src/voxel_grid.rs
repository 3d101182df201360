//! Sparse voxel occupancy counts.

use rustc_hash::{FxHashMap, FxHashSet};

use crate::cloud_io::{Point3, PointCloud};
use crate::error::{invalid, Result};

pub const DEFAULT_VOXEL_SIZE: f64 = 0.04;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelIndex {
    pub i: i32,
    pub j: i32,
    pub k: i32,
}

impl VoxelIndex {
    pub const fn new(i: i32, j: i32, k: i32) -> Self {
        Self { i, j, k }
    }

    pub fn offset(self, di: i32, dj: i32, dk: i32) -> Self {
        Self::new(self.i + di, self.j + dj, self.k + dk)
    }

    /// Chebyshev distance.
    pub fn chebyshev(self, o: VoxelIndex) -> i32 {
        (self.i - o.i)
            .abs()
            .max((self.j - o.j).abs())
            .max((self.k - o.k).abs())
    }
}

/// Voxels with at least one point, keyed by index; value is the point count.
#[derive(Clone, Debug)]
pub struct VoxelGrid {
    origin: Point3,
    voxel_size: f64,
    counts: FxHashMap<VoxelIndex, u32>,
    total: usize,
}

impl VoxelGrid {
    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    /// Number of points binned, equal to the sum of all counts.
    pub fn total_points(&self) -> usize {
        self.total
    }

    pub fn occupied_len(&self) -> usize {
        self.counts.len()
    }

    pub fn intensity(&self, idx: VoxelIndex) -> u32 {
        self.counts.get(&idx).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &FxHashMap<VoxelIndex, u32> {
        &self.counts
    }

    /// Occupied voxels in lexicographic order.
    pub fn occupied_sorted(&self) -> Vec<VoxelIndex> {
        let mut v: Vec<_> = self.counts.keys().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn index_of(&self, p: Point3) -> VoxelIndex {
        let vs = self.voxel_size;
        VoxelIndex::new(
            ((p.x - self.origin.x) / vs).floor() as i32,
            ((p.y - self.origin.y) / vs).floor() as i32,
            ((p.z - self.origin.z) / vs).floor() as i32,
        )
    }

    pub fn voxel_center(&self, idx: VoxelIndex) -> Point3 {
        let vs = self.voxel_size;
        Point3::new(
            self.origin.x + (idx.i as f64 + 0.5) * vs,
            self.origin.y + (idx.j as f64 + 0.5) * vs,
            self.origin.z + (idx.k as f64 + 0.5) * vs,
        )
    }

    /// Counts of the 3x3x3 block around `idx`, indexed `[di+1][dj+1][dk+1]`.
    pub fn neighborhood_27(&self, idx: VoxelIndex) -> [[[u32; 3]; 3]; 3] {
        let mut out = [[[0; 3]; 3]; 3];
        for (a, plane) in out.iter_mut().enumerate() {
            for (b, row) in plane.iter_mut().enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = self.intensity(idx.offset(a as i32 - 1, b as i32 - 1, c as i32 - 1));
                }
            }
        }
        out
    }
}

pub fn build_grid(cloud: &PointCloud, voxel_size: f64) -> Result<VoxelGrid> {
    if !(voxel_size.is_finite() && voxel_size > 0.0) {
        return Err(invalid("voxel_size", format!("must be positive, got {voxel_size}")));
    }
    let min = cloud.bounds().min;
    let ext = cloud.bounds().extent();
    let cells = [ext.x, ext.y, ext.z].map(|e| e / voxel_size);
    if cells.iter().any(|&c| c > i32::MAX as f64 / 2.0) {
        return Err(invalid("voxel_size", "too small for the cloud extent"));
    }
    let origin = Point3::new(
        (min.x / voxel_size).floor() * voxel_size,
        (min.y / voxel_size).floor() * voxel_size,
        (min.z / voxel_size).floor() * voxel_size,
    );
    let mut grid = VoxelGrid {
        origin,
        voxel_size,
        counts: FxHashMap::default(),
        total: cloud.len(),
    };
    let mut counts = FxHashMap::default();
    counts.reserve(cloud.len() / 2);
    for &p in cloud.points() {
        *counts.entry(grid.index_of(p)).or_insert(0u32) += 1;
    }
    grid.counts = counts;
    Ok(grid)
}

/// All voxels within Chebyshev distance `r` of any voxel in `set`, sorted.
pub fn dilate(set: &[VoxelIndex], r: i32) -> Vec<VoxelIndex> {
    let mut seen = FxHashSet::default();
    seen.reserve(set.len() * 3);
    for &v in set {
        for di in -r..=r {
            for dj in -r..=r {
                for dk in -r..=r {
                    seen.insert(v.offset(di, dj, dk));
                }
            }
        }
    }
    let mut out: Vec<_> = seen.into_iter().collect();
    out.sort_unstable();
    out
}

/// Picks a voxel size giving roughly `target` points per occupied voxel,
/// based on the areal density measured on a 0.5 m column grid.
///
/// Surface data scales as points-per-voxel ~ density * vs^2, so
/// `vs = sqrt(target / density)`. The result is clamped to `[min_vs, max_vs]`.
pub fn adaptive_voxel_size(cloud: &PointCloud, target: f64, min_vs: f64, max_vs: f64) -> f64 {
    const COL: f64 = 0.5;
    let mut cols: FxHashMap<(i64, i64), u32> = FxHashMap::default();
    for p in cloud.points() {
        let key = ((p.x / COL).floor() as i64, (p.y / COL).floor() as i64);
        *cols.entry(key).or_insert(0) += 1;
    }
    let mut per_col: Vec<u32> = cols.into_values().collect();
    per_col.sort_unstable();
    // median column avoids the half-empty cells along the data boundary
    let median = per_col[per_col.len() / 2] as f64;
    let density = median / (COL * COL);
    (target / density).sqrt().clamp(min_vs, max_vs)
}

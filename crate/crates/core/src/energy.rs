//! Density-gradient curb energy on a sparse voxel grid.
//!
//! Intensities are smoothed with a 3x3x3 Gaussian, differentiated with 3D
//! Sobel cubes, and the gradient outer products are windowed with the same
//! Gaussian to form a structure tensor per occupied voxel. The energy is
//! `(ab/(a+b) + ag/(a+g) + gb/(g+b)) * (a+b+g)^2` in the tensor eigenvalues,
//! evaluated without an eigen-decomposition via the three 2x2 principal
//! minors.
//!
//! All sums that mix values from different neighbours are formed in an
//! order that does not depend on the grid orientation, so rotating a cloud by
//! 90 degrees about a grid axis yields bit-identical energies.

use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};

use crate::error::{invalid, Error, Result};
use crate::voxel_grid::{dilate, VoxelGrid, VoxelIndex};

pub const DEFAULT_SIGMA: f64 = 0.8;
pub const DEFAULT_CANDIDATE_FRACTION: f64 = 0.2;
const TRACE_EPS: f64 = 1e-12;

pub type Cube<T> = [[[T; 3]; 3]; 3];

/// 3D Sobel derivative cubes, `x[a][b][c]` with `a` along x.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SobelCubes {
    pub x: Cube<i32>,
    pub y: Cube<i32>,
    pub z: Cube<i32>,
}

pub fn sobel_cubes() -> SobelCubes {
    const D: [i32; 3] = [-1, 0, 1];
    const S: [i32; 3] = [1, 2, 1];
    let mut c = SobelCubes {
        x: [[[0; 3]; 3]; 3],
        y: [[[0; 3]; 3]; 3],
        z: [[[0; 3]; 3]; 3],
    };
    for a in 0..3 {
        for b in 0..3 {
            for k in 0..3 {
                c.x[a][b][k] = D[a] * S[b] * S[k];
                c.y[a][b][k] = S[a] * D[b] * S[k];
                c.z[a][b][k] = S[a] * S[b] * D[k];
            }
        }
    }
    c
}

/// Normalized isotropic 3x3x3 Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel3 {
    pub sigma: f64,
    pub weights: Cube<f64>,
    /// Weight shared by all offsets with 0, 1, 2 or 3 non-zero components.
    pub class_weights: [f64; 4],
}

pub fn gaussian_kernel(sigma: f64) -> Result<GaussianKernel3> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(invalid("sigma", format!("must be positive, got {sigma}")));
    }
    let raw = |c: usize| (-(c as f64) / (2.0 * sigma * sigma)).exp();
    // 1 centre, 6 faces, 12 edges, 8 corners
    let z = raw(0) + 6.0 * raw(1) + 12.0 * raw(2) + 8.0 * raw(3);
    let class_weights = [0, 1, 2, 3].map(|c| raw(c) / z);
    let mut weights = [[[0.0; 3]; 3]; 3];
    for (a, plane) in weights.iter_mut().enumerate() {
        for (b, row) in plane.iter_mut().enumerate() {
            for (c, w) in row.iter_mut().enumerate() {
                *w = class_weights[offset_class(a, b, c)];
            }
        }
    }
    Ok(GaussianKernel3 {
        sigma,
        weights,
        class_weights,
    })
}

fn offset_class(a: usize, b: usize, c: usize) -> usize {
    (a != 1) as usize + (b != 1) as usize + (c != 1) as usize
}

/// Cube offsets grouped by class, each as `(di, dj, dk)`.
fn class_offsets() -> [Vec<(i32, i32, i32)>; 4] {
    let mut out: [Vec<(i32, i32, i32)>; 4] = Default::default();
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                out[offset_class(a, b, c)].push((a as i32 - 1, b as i32 - 1, c as i32 - 1));
            }
        }
    }
    out
}

/// Plain 3x3x3 correlation of the intensity with `stencil`, evaluated on
/// every voxel whose neighbourhood touches an occupied cell.
pub fn convolve_3x3x3(grid: &VoxelGrid, stencil: &Cube<f64>) -> FxHashMap<VoxelIndex, f64> {
    let domain = dilate(&grid.occupied_sorted(), 1);
    domain
        .into_par_iter()
        .map(|v| {
            let mut s = 0.0;
            for (a, plane) in stencil.iter().enumerate() {
                for (b, row) in plane.iter().enumerate() {
                    for (c, w) in row.iter().enumerate() {
                        let n = v.offset(a as i32 - 1, b as i32 - 1, c as i32 - 1);
                        s += w * grid.intensity(n) as f64;
                    }
                }
            }
            (v, s)
        })
        .collect()
}

/// Sobel gradient of the Gaussian-smoothed intensity.
///
/// The smoothing is split by kernel weight class: integer neighbour sums per
/// class are differentiated with integer Sobel cubes and only then weighted,
/// which keeps every intermediate exact.
pub fn gradients(grid: &VoxelGrid, kernel: &GaussianKernel3) -> FxHashMap<VoxelIndex, [f64; 3]> {
    let offsets = class_offsets();
    let domain = dilate(&grid.occupied_sorted(), 1);
    let class_sums: FxHashMap<VoxelIndex, [i64; 4]> = domain
        .par_iter()
        .map(|&v| {
            let mut s = [0i64; 4];
            for (c, offs) in offsets.iter().enumerate() {
                for &(a, b, k) in offs {
                    s[c] += grid.intensity(v.offset(a, b, k)) as i64;
                }
            }
            (v, s)
        })
        .collect();
    let sobel = sobel_cubes();
    domain
        .into_par_iter()
        .map(|v| {
            let mut acc = [[0i64; 4]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    for k in 0..3 {
                        let n = v.offset(a as i32 - 1, b as i32 - 1, k as i32 - 1);
                        let Some(s) = class_sums.get(&n) else { continue };
                        let w = [sobel.x[a][b][k], sobel.y[a][b][k], sobel.z[a][b][k]];
                        for axis in 0..3 {
                            if w[axis] != 0 {
                                for c in 0..4 {
                                    acc[axis][c] += w[axis] as i64 * s[c];
                                }
                            }
                        }
                    }
                }
            }
            let g = acc.map(|a| {
                let cw = kernel.class_weights;
                cw[0] * a[0] as f64 + cw[1] * a[1] as f64 + cw[2] * a[2] as f64 + cw[3] * a[3] as f64
            });
            (v, g)
        })
        .collect()
}

/// Symmetric 3x3 tensor.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StructureTensor {
    pub xx: f64,
    pub yy: f64,
    pub zz: f64,
    pub xy: f64,
    pub xz: f64,
    pub yz: f64,
}

impl StructureTensor {
    pub fn diagonal(a: f64, b: f64, c: f64) -> Self {
        Self {
            xx: a,
            yy: b,
            zz: c,
            ..Default::default()
        }
    }

    pub fn outer(g: [f64; 3]) -> Self {
        Self {
            xx: g[0] * g[0],
            yy: g[1] * g[1],
            zz: g[2] * g[2],
            xy: g[0] * g[1],
            xz: g[0] * g[2],
            yz: g[1] * g[2],
        }
    }

    pub fn to_rows(self) -> [[f64; 3]; 3] {
        [
            [self.xx, self.xy, self.xz],
            [self.xy, self.yy, self.yz],
            [self.xz, self.yz, self.zz],
        ]
    }

    fn components(self) -> [f64; 6] {
        [self.xx, self.yy, self.zz, self.xy, self.xz, self.yz]
    }

    fn from_components(c: [f64; 6]) -> Self {
        Self {
            xx: c[0],
            yy: c[1],
            zz: c[2],
            xy: c[3],
            xz: c[4],
            yz: c[5],
        }
    }

    pub fn trace(self) -> f64 {
        sum_sorted(&mut [self.xx, self.yy, self.zz])
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(self) -> [f64; 3] {
        symmetric_eigenvalues(self)
    }
}

/// Order-independent sum: positives and negatives each added in ascending
/// magnitude.
fn sum_sorted(v: &mut [f64]) -> f64 {
    v.sort_unstable_by(|a, b| a.abs().total_cmp(&b.abs()));
    let mut pos = 0.0;
    let mut neg = 0.0;
    for &x in v.iter() {
        if x >= 0.0 {
            pos += x;
        } else {
            neg += x;
        }
    }
    pos + neg
}

/// Gaussian-windowed gradient outer products at each voxel of `at`.
pub fn structure_tensors(
    grads: &FxHashMap<VoxelIndex, [f64; 3]>,
    at: &[VoxelIndex],
    kernel: &GaussianKernel3,
) -> Vec<StructureTensor> {
    let offsets = class_offsets();
    at.par_iter()
        .map(|&v| {
            let mut out = [0.0; 6];
            let mut buf: [Vec<f64>; 6] = Default::default();
            for (c, offs) in offsets.iter().enumerate() {
                for b in buf.iter_mut() {
                    b.clear();
                }
                for &(a, b, k) in offs {
                    if let Some(&g) = grads.get(&v.offset(a, b, k)) {
                        let p = StructureTensor::outer(g).components();
                        for e in 0..6 {
                            buf[e].push(p[e]);
                        }
                    }
                }
                for e in 0..6 {
                    out[e] += kernel.class_weights[c] * sum_sorted(&mut buf[e]);
                }
            }
            StructureTensor::from_components(out)
        })
        .collect()
}

/// Energy from the principal 2x2 minors, no eigen-decomposition.
pub fn energy_fast(m: &StructureTensor) -> f64 {
    let term = |a: f64, b: f64, c: f64| {
        let tr = a + b;
        if tr < TRACE_EPS {
            0.0
        } else {
            (a * b - c * c).max(0.0) / tr
        }
    };
    let mut t = [
        term(m.xx, m.yy, m.xy),
        term(m.xx, m.zz, m.xz),
        term(m.yy, m.zz, m.yz),
    ];
    let tr = m.trace();
    sum_sorted(&mut t) * tr * tr
}

/// Energy written directly in eigenvalues.
pub fn energy_oracle(eig: [f64; 3]) -> f64 {
    let [a, b, g] = eig;
    let h = |p: f64, q: f64| if p + q < TRACE_EPS { 0.0 } else { p * q / (p + q) };
    let s = a + b + g;
    (h(a, b) + h(a, g) + h(g, b)) * s * s
}

/// Closed-form eigenvalues of a symmetric 3x3 matrix, descending.
pub fn symmetric_eigenvalues(m: StructureTensor) -> [f64; 3] {
    let p1 = m.xy * m.xy + m.xz * m.xz + m.yz * m.yz;
    let mut e = if p1 == 0.0 {
        [m.xx, m.yy, m.zz]
    } else {
        let q = (m.xx + m.yy + m.zz) / 3.0;
        let p2 = (m.xx - q).powi(2) + (m.yy - q).powi(2) + (m.zz - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let b = StructureTensor {
            xx: (m.xx - q) / p,
            yy: (m.yy - q) / p,
            zz: (m.zz - q) / p,
            xy: m.xy / p,
            xz: m.xz / p,
            yz: m.yz / p,
        };
        let det = b.xx * (b.yy * b.zz - b.yz * b.yz) - b.xy * (b.xy * b.zz - b.yz * b.xz)
            + b.xz * (b.xy * b.yz - b.yy * b.xz);
        let r = (det / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        [e1, 3.0 * q - e1 - e3, e3]
    };
    e.sort_unstable_by(|a, b| b.total_cmp(a));
    e
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyVoxel {
    pub index: VoxelIndex,
    pub gradient: [f64; 3],
    pub tensor: StructureTensor,
    pub energy: f64,
    /// Energy mapped to [0, 255]; 0 until [`scale_energy`] runs.
    pub scaled: f64,
}

/// Per-occupied-voxel energy, sorted by index.
#[derive(Clone, Debug, Default)]
pub struct EnergyField {
    pub voxels: Vec<EnergyVoxel>,
}

impl EnergyField {
    pub fn get(&self, idx: VoxelIndex) -> Option<&EnergyVoxel> {
        self.voxels
            .binary_search_by(|v| v.index.cmp(&idx))
            .ok()
            .map(|n| &self.voxels[n])
    }
}

/// Gradients, structure tensors and energies for every occupied voxel.
pub fn compute_energy(grid: &VoxelGrid, sigma: f64) -> Result<EnergyField> {
    let kernel = gaussian_kernel(sigma)?;
    let grads = gradients(grid, &kernel);
    let occ = grid.occupied_sorted();
    let tensors = structure_tensors(&grads, &occ, &kernel);
    let voxels = occ
        .iter()
        .zip(tensors)
        .map(|(&index, tensor)| EnergyVoxel {
            index,
            gradient: grads.get(&index).copied().unwrap_or_default(),
            tensor,
            energy: energy_fast(&tensor),
            scaled: 0.0,
        })
        .collect();
    Ok(EnergyField { voxels })
}

/// Linear map of positive energies onto [0, 255]; zero energies stay 0.
pub fn scale_energy(field: &mut EnergyField) -> Result<()> {
    let (lo, hi) = field
        .voxels
        .iter()
        .filter(|v| v.energy > 0.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v.energy), hi.max(v.energy))
        });
    if lo > hi {
        return Err(Error::NoPositiveEnergy);
    }
    for v in &mut field.voxels {
        v.scaled = if v.energy <= 0.0 {
            0.0
        } else if hi > lo {
            255.0 * (v.energy - lo) / (hi - lo)
        } else {
            255.0
        };
    }
    Ok(())
}

/// Highest-energy voxels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CandidateSet {
    sorted: Vec<VoxelIndex>,
    lookup: FxHashSet<VoxelIndex>,
}

impl CandidateSet {
    pub fn from_indices(mut v: Vec<VoxelIndex>) -> Self {
        v.sort_unstable();
        v.dedup();
        let lookup = v.iter().copied().collect();
        Self { sorted: v, lookup }
    }

    pub fn contains(&self, idx: VoxelIndex) -> bool {
        self.lookup.contains(&idx)
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Lexicographically sorted.
    pub fn indices(&self) -> &[VoxelIndex] {
        &self.sorted
    }
}

/// Top `ceil(fraction * n)` of the `n` voxels with positive energy; ties go
/// to the lexicographically smaller index.
pub fn select_candidates(field: &EnergyField, fraction: f64) -> Result<CandidateSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid("candidate_fraction", format!("must lie in (0, 1], got {fraction}")));
    }
    let mut pos: Vec<&EnergyVoxel> = field.voxels.iter().filter(|v| v.energy > 0.0).collect();
    if pos.is_empty() {
        return Err(Error::NoPositiveEnergy);
    }
    let k = ((fraction * pos.len() as f64).ceil() as usize).min(pos.len());
    pos.sort_unstable_by(|a, b| b.energy.total_cmp(&a.energy).then(a.index.cmp(&b.index)));
    Ok(CandidateSet::from_indices(pos[..k].iter().map(|v| v.index).collect()))
}

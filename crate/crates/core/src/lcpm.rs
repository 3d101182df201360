//! Least-cost-path linking of candidate voxels into curb polylines.
//!
//! Nodes are voxels bucketed into slices along a principal direction. A
//! path takes one node per slice and pays a data cost per node (zero for a
//! candidate, `penalty_d` for an occupied non-candidate, `penalty_v` for a
//! virtual node filling an empty slice) plus `penalty_s` times the distance
//! between consecutive nodes. Dynamic programming over slices finds the
//! cheapest path exactly.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rustc_hash::{FxHashMap, FxHashSet};

use crate::cloud_io::{Point3, PointCloud, Polyline3};
use crate::energy::{CandidateSet, EnergyField};
use crate::error::{invalid, Error, Result};
use crate::voxel_grid::{VoxelGrid, VoxelIndex};

/// Piecewise-linear penalties as functions of the candidate fraction.
#[derive(Clone, Debug, PartialEq)]
pub struct PenaltySchedule {
    /// `(rho, value)` at the low and high ends of the data-cost ramp.
    pub data_low: (f64, f64),
    pub data_high: (f64, f64),
    pub smooth_low: (f64, f64),
    pub smooth_high: (f64, f64),
    pub virtual_cost: f64,
    pub rho_min: f64,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self {
            data_low: (0.04, 50.0),
            data_high: (0.30, 500.0),
            smooth_low: (0.04, 500.0),
            smooth_high: (0.30, 50.0),
            virtual_cost: 1000.0,
            rho_min: 0.04,
        }
    }
}

fn ramp(lo: (f64, f64), hi: (f64, f64), rho: f64) -> f64 {
    if rho <= lo.0 {
        lo.1
    } else if rho >= hi.0 {
        hi.1
    } else {
        lo.1 + (hi.1 - lo.1) * (rho - lo.0) / (hi.0 - lo.0)
    }
}

impl PenaltySchedule {
    pub fn penalty_d(&self, rho: f64) -> f64 {
        ramp(self.data_low, self.data_high, rho)
    }

    pub fn penalty_s(&self, rho: f64) -> f64 {
        ramp(self.smooth_low, self.smooth_high, rho)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.data_low.1,
            self.data_high.1,
            self.smooth_low.1,
            self.smooth_high.1,
            self.virtual_cost,
        ];
        if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("penalty", "penalties must be finite and non-negative"));
        }
        if !(self.data_low.0 < self.data_high.0 && self.smooth_low.0 < self.smooth_high.0) {
            return Err(invalid("penalty", "ramp endpoints must be increasing in rho"));
        }
        if self.data_high.1 < self.data_low.1 || self.smooth_high.1 > self.smooth_low.1 {
            return Err(invalid(
                "penalty",
                "data cost must not fall and smoothness must not rise with rho",
            ));
        }
        if self.virtual_cost < self.data_low.1.max(self.data_high.1) {
            return Err(invalid("penalty_v", "must be at least the largest data penalty"));
        }
        if !(0.0..=1.0).contains(&self.rho_min) {
            return Err(invalid("rho_min", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrincipalDirection {
    pub v1: [f64; 3],
    pub v2: [f64; 3],
    pub v3: [f64; 3],
    /// Singular values, descending.
    pub s: [f64; 3],
    pub centroid: [f64; 3],
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn idx_f(v: VoxelIndex) -> [f64; 3] {
    [v.i as f64, v.j as f64, v.k as f64]
}

fn fix_sign(v: [f64; 3]) -> [f64; 3] {
    let big = (0..3)
        .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
        .unwrap_or(0);
    if v[big] < 0.0 {
        [-v[0], -v[1], -v[2]]
    } else {
        v
    }
}

/// SVD of the mean-centred coordinates.
pub fn principal_direction_of(points: &[[f64; 3]]) -> Result<PrincipalDirection> {
    let q = points.len();
    if q < 2 {
        return Err(Error::Degenerate(format!("need at least 2 points, got {q}")));
    }
    let mut c = [0.0; 3];
    for p in points {
        for d in 0..3 {
            c[d] += p[d];
        }
    }
    c = c.map(|v| v / q as f64);
    // zero rows leave the right singular vectors unchanged and keep V square
    let rows = q.max(3);
    let m = DMatrix::from_fn(rows, 3, |r, col| if r < q { points[r][col] - c[col] } else { 0.0 });
    let svd = m.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::Degenerate("SVD did not converge".into()))?;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let row = |r: usize| fix_sign([vt[(r, 0)], vt[(r, 1)], vt[(r, 2)]]);
    let s = order.map(|r| svd.singular_values[r]);
    if s[0] <= 1e-12 {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    Ok(PrincipalDirection {
        v1: row(order[0]),
        v2: row(order[1]),
        v3: row(order[2]),
        s,
        centroid: c,
    })
}

pub fn principal_direction(voxels: &[VoxelIndex]) -> Result<PrincipalDirection> {
    let pts: Vec<[f64; 3]> = voxels.iter().map(|&v| idx_f(v)).collect();
    principal_direction_of(&pts)
}

/// Per-axis step in voxels: `max(1, floor((1 - s1/|s|) * extent))`.
pub fn step_size(pd: &PrincipalDirection, extents: [i32; 3]) -> Result<[i32; 3]> {
    let [s1, s2, s3] = pd.s;
    if !(s1 > 0.0) {
        return Err(Error::Degenerate("largest singular value is zero".into()));
    }
    let factor = 1.0 - 1.0 / (1.0 + (s2 / s1).powi(2) + (s3 / s1).powi(2)).sqrt();
    Ok(extents.map(|e| ((factor * e as f64).floor() as i32).max(1)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Candidate,
    NonCandidate,
    Virtual,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathNode {
    pub pos: VoxelIndex,
    pub kind: NodeKind,
    pub slice: usize,
    /// Breaks exact cost ties: the path with the larger total wins.
    pub weight: f64,
}

/// Nodes grouped by slice, plus the lateral frame used for shift bounds.
#[derive(Clone, Debug)]
pub struct PathGraph {
    pub slices: Vec<Vec<PathNode>>,
    /// Unit vectors across the path direction.
    pub lateral: [[f64; 3]; 2],
    /// Largest allowed shift along each lateral vector between slices.
    pub bounds: [f64; 2],
}

impl PathGraph {
    pub fn reachable(&self, from: VoxelIndex, to: VoxelIndex) -> bool {
        let d = sub(idx_f(to), idx_f(from));
        dot(d, self.lateral[0]).abs() <= self.bounds[0] + 1e-9
            && dot(d, self.lateral[1]).abs() <= self.bounds[1] + 1e-9
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurbPath {
    pub nodes: Vec<PathNode>,
    pub cost: f64,
}

pub fn voxel_distance(a: VoxelIndex, b: VoxelIndex) -> f64 {
    let d = sub(idx_f(a), idx_f(b));
    dot(d, d).sqrt()
}

fn data_cost(kind: NodeKind, schedule: &PenaltySchedule, rho: f64) -> f64 {
    match kind {
        NodeKind::Candidate => 0.0,
        NodeKind::NonCandidate => schedule.penalty_d(rho),
        NodeKind::Virtual => schedule.virtual_cost,
    }
}

impl CurbPath {
    /// Cost re-summed from the nodes.
    pub fn recompute_cost(&self, schedule: &PenaltySchedule, rho: f64) -> f64 {
        let ps = schedule.penalty_s(rho);
        let mut total = 0.0;
        for (n, node) in self.nodes.iter().enumerate() {
            total += data_cost(node.kind, schedule, rho);
            if n > 0 {
                total += ps * voxel_distance(self.nodes[n - 1].pos, node.pos);
            }
        }
        total
    }

    pub fn to_polyline(&self, grid: &VoxelGrid, id: &str) -> Result<Polyline3> {
        Polyline3::dedup(id, self.nodes.iter().map(|n| grid.voxel_center(n.pos)).collect())
    }
}

/// Exact slice-by-slice dynamic program.
pub fn solve_lcpm(graph: &PathGraph, schedule: &PenaltySchedule, rho: f64) -> Result<CurbPath> {
    if graph.slices.is_empty() || graph.slices[0].is_empty() {
        return Err(Error::NoFeasibleTransition { slice: 0 });
    }
    let ps = schedule.penalty_s(rho);
    // cost, tie-break weight and predecessor per node, slice by slice
    let mut cost: Vec<Vec<f64>> = Vec::with_capacity(graph.slices.len());
    let mut weight: Vec<Vec<f64>> = Vec::with_capacity(graph.slices.len());
    let mut pred: Vec<Vec<usize>> = Vec::with_capacity(graph.slices.len());
    // the start node reaches every slice-0 node for free
    cost.push(
        graph.slices[0]
            .iter()
            .map(|n| data_cost(n.kind, schedule, rho))
            .collect(),
    );
    weight.push(graph.slices[0].iter().map(|n| n.weight).collect());
    pred.push(vec![usize::MAX; graph.slices[0].len()]);
    let better = |c: f64, w: f64, best: (f64, f64)| c < best.0 || (c == best.0 && w > best.1);
    for s in 1..graph.slices.len() {
        let prev = &graph.slices[s - 1];
        let n = graph.slices[s].len();
        let (mut c, mut wt, mut p) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for node in &graph.slices[s] {
            let mut best = (f64::INFINITY, f64::NEG_INFINITY, usize::MAX);
            for (j, from) in prev.iter().enumerate() {
                let base = cost[s - 1][j];
                if !base.is_finite() || !graph.reachable(from.pos, node.pos) {
                    continue;
                }
                let v = base + ps * voxel_distance(from.pos, node.pos);
                if better(v, weight[s - 1][j], (best.0, best.1)) {
                    best = (v, weight[s - 1][j], j);
                }
            }
            c.push(best.0 + data_cost(node.kind, schedule, rho));
            wt.push(best.1 + node.weight);
            p.push(best.2);
        }
        if c.iter().all(|v| !v.is_finite()) {
            return Err(Error::NoFeasibleTransition { slice: s });
        }
        cost.push(c);
        weight.push(wt);
        pred.push(p);
    }
    let last = cost.len() - 1;
    let mut at = usize::MAX;
    let mut total = (f64::INFINITY, f64::NEG_INFINITY);
    for (j, (&c, &w)) in cost[last].iter().zip(&weight[last]).enumerate() {
        if c.is_finite() && better(c, w, total) {
            total = (c, w);
            at = j;
        }
    }
    let total = total.0;
    let mut nodes = Vec::with_capacity(graph.slices.len());
    for s in (0..=last).rev() {
        nodes.push(graph.slices[s][at]);
        at = pred[s][at];
    }
    nodes.reverse();
    Ok(CurbPath { nodes, cost: total })
}

/// Axis-aligned block of voxels processed as one unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SearchRegion {
    pub offset: VoxelIndex,
    pub extents: [i32; 3],
}

impl SearchRegion {
    pub fn containing(v: VoxelIndex, extents: [i32; 3]) -> Self {
        let f = |a: i32, e: i32| a.div_euclid(e) * e;
        Self {
            offset: VoxelIndex::new(f(v.i, extents[0]), f(v.j, extents[1]), f(v.k, extents[2])),
            extents,
        }
    }

    pub fn contains(&self, v: VoxelIndex) -> bool {
        let o = self.offset;
        let e = self.extents;
        (o.i..o.i + e[0]).contains(&v.i)
            && (o.j..o.j + e[1]).contains(&v.j)
            && (o.k..o.k + e[2]).contains(&v.k)
    }
}

/// Orthonormal frame with `e1` along the path and `e2` horizontal.
fn frame(v1: [f64; 3]) -> [[f64; 3]; 3] {
    let e1 = v1;
    let up = [0.0, 0.0, 1.0];
    let c = [
        up[1] * e1[2] - up[2] * e1[1],
        up[2] * e1[0] - up[0] * e1[2],
        up[0] * e1[1] - up[1] * e1[0],
    ];
    let n = dot(c, c).sqrt();
    let e2 = if n > 1e-6 {
        c.map(|v| v / n)
    } else {
        [1.0, 0.0, 0.0]
    };
    let e3 = [
        e1[1] * e2[2] - e1[2] * e2[1],
        e1[2] * e2[0] - e1[0] * e2[2],
        e1[0] * e2[1] - e1[1] * e2[0],
    ];
    [e1, e2, e3]
}

/// How to lay out one slice graph.
#[derive(Clone, Debug)]
pub struct GraphSpec<'a> {
    /// Voxels the path must follow; their projections fix the slice range.
    pub members: &'a [VoxelIndex],
    /// Path direction in voxel space (unit length).
    pub direction: [f64; 3],
    pub step: [i32; 3],
    /// Lateral radius, voxels, within which occupied voxels become nodes.
    pub corridor: f64,
    /// Fixed first node, e.g. the end of the previous region's path.
    pub anchor: Option<VoxelIndex>,
    /// Scaled energies used as node weights.
    pub weights: Option<&'a EnergyField>,
}

fn kind_of(v: VoxelIndex, grid: &VoxelGrid, cands: &CandidateSet) -> NodeKind {
    if cands.contains(v) {
        NodeKind::Candidate
    } else if grid.intensity(v) > 0 {
        NodeKind::NonCandidate
    } else {
        NodeKind::Virtual
    }
}

/// Buckets `occupied` voxels near the member line into slices and fills
/// empty slices with virtual nodes.
pub fn build_path_graph(
    grid: &VoxelGrid,
    cands: &CandidateSet,
    occupied: &[VoxelIndex],
    spec: &GraphSpec<'_>,
) -> Result<PathGraph> {
    if spec.members.is_empty() {
        return Err(Error::Degenerate("no member voxels".into()));
    }
    let [e1, e2, e3] = frame(spec.direction);
    let origin = idx_f(spec.members[0]);
    let proj = |v: VoxelIndex| dot(sub(idx_f(v), origin), e1);
    let width = {
        let s = spec.step.map(|v| v as f64);
        dot(s, s).sqrt()
    };
    let (mut p0, p1) = spec
        .members
        .iter()
        .map(|&v| proj(v))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p), b.max(p)));
    if let Some(a) = spec.anchor {
        p0 = proj(a);
    }
    if p1 < p0 {
        return Err(Error::Degenerate("members lie behind the anchor".into()));
    }
    // a step longer than the members themselves would collapse the path
    let width = if p1 > p0 { width.min(p1 - p0) } else { width };
    let n_slices = ((p1 - p0) / width).floor() as usize + 1;
    let slice_of = |v: VoxelIndex| ((proj(v) - p0) / width).floor();

    // line through the member centroid
    let mut c = [0.0; 3];
    for &m in spec.members {
        let f = idx_f(m);
        for d in 0..3 {
            c[d] += f[d];
        }
    }
    let c = c.map(|v| v / spec.members.len() as f64);
    let lateral = |v: VoxelIndex| {
        let d = sub(idx_f(v), c);
        dot(d, e2).hypot(dot(d, e3))
    };

    let weight = |v: VoxelIndex| spec.weights.and_then(|f| f.get(v)).map_or(0.0, |e| e.scaled);
    let mut slices: Vec<Vec<PathNode>> = vec![Vec::new(); n_slices];
    let mut seen = FxHashSet::default();
    let member_set: FxHashSet<VoxelIndex> = spec.members.iter().copied().collect();
    for &v in spec.members.iter().chain(occupied) {
        if !seen.insert(v) {
            continue;
        }
        if !member_set.contains(&v) && lateral(v) > spec.corridor {
            continue;
        }
        let s = slice_of(v);
        if s < 0.0 || s >= n_slices as f64 || (spec.anchor.is_some() && s < 1.0) {
            continue;
        }
        slices[s as usize].push(PathNode {
            pos: v,
            kind: kind_of(v, grid, cands),
            slice: s as usize,
            weight: weight(v),
        });
    }
    if let Some(a) = spec.anchor {
        slices[0] = vec![PathNode {
            pos: a,
            kind: kind_of(a, grid, cands),
            slice: 0,
            weight: weight(a),
        }];
    }
    for s in &mut slices {
        s.sort_by_key(|n| n.pos);
    }

    // reference point per non-empty slice: candidate centroid if any
    let reference = |nodes: &[PathNode]| {
        let pick: Vec<&PathNode> = if nodes.iter().any(|n| n.kind == NodeKind::Candidate) {
            nodes.iter().filter(|n| n.kind == NodeKind::Candidate).collect()
        } else {
            nodes.iter().collect()
        };
        let mut r = [0.0; 3];
        for n in &pick {
            let f = idx_f(n.pos);
            for d in 0..3 {
                r[d] += f[d];
            }
        }
        r.map(|v| v / pick.len() as f64)
    };
    let filled: Vec<usize> = (0..n_slices).filter(|&s| !slices[s].is_empty()).collect();
    for w in filled.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b == a + 1 {
            continue;
        }
        let ra = reference(&slices[a]);
        let rb = reference(&slices[b]);
        for s in a + 1..b {
            let t = (s - a) as f64 / (b - a) as f64;
            let p = [0, 1, 2].map(|d| (ra[d] + (rb[d] - ra[d]) * t).round() as i32);
            let pos = VoxelIndex::new(p[0], p[1], p[2]);
            slices[s].push(PathNode {
                pos,
                kind: kind_of(pos, grid, cands),
                slice: s,
                weight: weight(pos),
            });
        }
    }
    let slack = 0.5;
    Ok(PathGraph {
        slices,
        lateral: [e2, e3],
        bounds: [spec.step[1] as f64 + slack, spec.step[2] as f64 + slack],
    })
}

/// 26-connected components, each sorted, in order of their smallest voxel.
pub fn connected_components(voxels: &[VoxelIndex]) -> Vec<Vec<VoxelIndex>> {
    let set: FxHashSet<VoxelIndex> = voxels.iter().copied().collect();
    let mut seen: FxHashSet<VoxelIndex> = FxHashSet::default();
    let mut sorted = voxels.to_vec();
    sorted.sort_unstable();
    let mut out = Vec::new();
    for s in sorted {
        if !seen.insert(s) {
            continue;
        }
        let mut comp = vec![s];
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for di in -1..=1 {
                for dj in -1..=1 {
                    for dk in -1..=1 {
                        let n = v.offset(di, dj, dk);
                        if set.contains(&n) && seen.insert(n) {
                            comp.push(n);
                            stack.push(n);
                        }
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Column index over raw points for local height profiles.
pub struct HeightIndex {
    cell: f64,
    cols: FxHashMap<(i64, i64), Vec<Point3>>,
}

impl HeightIndex {
    pub fn new(cloud: &PointCloud, cell: f64) -> Self {
        let mut cols: FxHashMap<(i64, i64), Vec<Point3>> = FxHashMap::default();
        for &p in cloud.points() {
            cols.entry(((p.x / cell).floor() as i64, (p.y / cell).floor() as i64))
                .or_default()
                .push(p);
        }
        Self { cell, cols }
    }

    fn near(&self, x: f64, y: f64, r: f64) -> impl Iterator<Item = &Point3> {
        let c = self.cell;
        let (x0, x1) = (((x - r) / c).floor() as i64, ((x + r) / c).floor() as i64);
        let (y0, y1) = (((y - r) / c).floor() as i64, ((y + r) / c).floor() as i64);
        (x0..=x1)
            .flat_map(move |i| (y0..=y1).map(move |j| (i, j)))
            .filter_map(|k| self.cols.get(&k))
            .flatten()
    }

    /// RMS residual of a least-squares plane through the points within `r`
    /// of `(x, y)`. `None` below `min_points`.
    pub fn roughness(&self, x: f64, y: f64, r: f64, min_points: usize) -> Option<f64> {
        let pts: Vec<(f64, f64, f64)> = self
            .near(x, y, r)
            .map(|p| (p.x - x, p.y - y, p.z))
            .filter(|&(dx, dy, _)| dx * dx + dy * dy <= r * r)
            .collect();
        if pts.len() < min_points.max(3) {
            return None;
        }
        let n = pts.len() as f64;
        let mz = pts.iter().map(|p| p.2).sum::<f64>() / n;
        let mut a = Matrix3::zeros();
        let mut b = Vector3::zeros();
        for &(dx, dy, z) in &pts {
            let v = Vector3::new(dx, dy, 1.0);
            a += v * v.transpose();
            b += v * (z - mz);
        }
        let sol = a.lu().solve(&b)?;
        let ss: f64 = pts
            .iter()
            .map(|&(dx, dy, z)| {
                let e = z - mz - (sol[0] * dx + sol[1] * dy + sol[2]);
                e * e
            })
            .sum();
        Some((ss / n).sqrt())
    }

    /// Height jump across a horizontal line through `at` with direction
    /// `dir`: planes fitted on each side are compared where they meet the
    /// line. `None` when a side has too few points.
    pub fn step_height(&self, at: Point3, dir: (f64, f64), p: &StepProbe) -> Option<f64> {
        let lat = (-dir.1, dir.0);
        let mut sides: [Vec<(f64, f64)>; 2] = Default::default();
        for q in self.near(at.x, at.y, p.along + p.outer) {
            let (dx, dy) = (q.x - at.x, q.y - at.y);
            let s = dx * dir.0 + dy * dir.1;
            let t = dx * lat.0 + dy * lat.1;
            if s.abs() > p.along || t.abs() < p.inner || t.abs() > p.outer {
                continue;
            }
            sides[(t > 0.0) as usize].push((t, q.z));
        }
        let fit = |pts: &[(f64, f64)]| -> Option<f64> {
            if pts.len() < p.min_points {
                return None;
            }
            let n = pts.len() as f64;
            let (mt, mz) = pts.iter().fold((0.0, 0.0), |a, &(t, z)| (a.0 + t / n, a.1 + z / n));
            let (stt, stz) = pts.iter().fold((0.0, 0.0), |a, &(t, z)| {
                (a.0 + (t - mt) * (t - mt), a.1 + (t - mt) * (z - mz))
            });
            let slope = if stt > 1e-12 { stz / stt } else { 0.0 };
            Some(mz - slope * mt)
        };
        Some((fit(&sides[1])? - fit(&sides[0])?).abs())
    }
}

/// Geometry of the height-step test, meters.
#[derive(Clone, Debug, PartialEq)]
pub struct StepProbe {
    pub along: f64,
    pub inner: f64,
    pub outer: f64,
    pub min_points: usize,
}

impl StepProbe {
    /// Window grown so coarse grids still see enough points per side.
    pub fn for_voxel_size(&self, vs: f64) -> Self {
        Self {
            along: self.along.max(5.0 * vs),
            outer: self.outer.max(self.inner + 2.5 * vs),
            ..self.clone()
        }
    }
}

impl Default for StepProbe {
    fn default() -> Self {
        Self {
            along: 0.5,
            inner: 0.1,
            outer: 0.45,
            min_points: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LcpmParams {
    pub region_extents: [i32; 3],
    pub schedule: PenaltySchedule,
    /// Candidate components smaller than this are noise.
    pub min_component: usize,
    pub corridor: f64,
    /// Components whose surroundings show no height step at least this
    /// large, meters, are not curbs. Zero disables the test.
    pub min_step_height: f64,
    pub probe: StepProbe,
    /// Candidates whose surroundings fit a plane better than this RMS,
    /// meters, are dropped. Zero disables the test.
    pub min_roughness: f64,
    /// Radius of the plane fit, meters; never below 2.5 voxels.
    pub roughness_radius: f64,
    /// Components are chained when their ends are at most this far apart
    /// along the curb, meters.
    pub link_gap: f64,
    pub link_lateral: f64,
    pub link_angle_deg: f64,
    pub min_chain_length: f64,
    /// Paths whose ends are this close, voxels, are joined.
    pub stitch_distance: f64,
    /// Largest gap, meters, closed with a curve at intersections.
    pub bezier_max_gap: f64,
    /// Report each vertex at the top of a nearby occupied column, where
    /// the curb edge is, rather than at the node itself.
    pub top_edge: bool,
    /// How far, meters, to look sideways for that column.
    pub top_reach: f64,
    /// Nodes within this distance, meters, of an empty slice sit on the cut
    /// edge of the data and are bridged over with the gap.
    pub gap_margin: f64,
}

impl Default for LcpmParams {
    fn default() -> Self {
        Self {
            region_extents: [100, 100, 100],
            schedule: PenaltySchedule::default(),
            min_component: 10,
            corridor: 6.0,
            min_step_height: 0.05,
            probe: StepProbe::default(),
            min_roughness: 0.015,
            roughness_radius: 0.3,
            link_gap: 2.0,
            link_lateral: 0.3,
            link_angle_deg: 30.0,
            min_chain_length: 0.5,
            stitch_distance: 2.0,
            bezier_max_gap: 6.0,
            top_edge: true,
            top_reach: 0.12,
            gap_margin: 0.4,
        }
    }
}

impl LcpmParams {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.region_extents.iter().any(|&e| e < 1) {
            return Err(invalid("region_extents", "must be positive"));
        }
        let nonneg = [
            ("corridor", self.corridor),
            ("min_step_height", self.min_step_height),
            ("min_roughness", self.min_roughness),
            ("roughness_radius", self.roughness_radius),
            ("link_gap", self.link_gap),
            ("link_lateral", self.link_lateral),
            ("link_angle_deg", self.link_angle_deg),
            ("min_chain_length", self.min_chain_length),
            ("stitch_distance", self.stitch_distance),
            ("bezier_max_gap", self.bezier_max_gap),
            ("top_reach", self.top_reach),
            ("gap_margin", self.gap_margin),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// One solved region piece, for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionReport {
    pub region_id: usize,
    pub curb: usize,
    pub rho: f64,
    pub q: usize,
    pub s: [f64; 3],
    pub step: [i32; 3],
    pub cost: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Refinement {
    pub paths: Vec<CurbPath>,
    pub polylines: Vec<Polyline3>,
    pub regions: Vec<RegionReport>,
}

/// A candidate component reduced to a line segment, in meters.
#[derive(Clone, Debug)]
struct Piece {
    voxels: Vec<VoxelIndex>,
    center: Point3,
    dir: Point3,
    lo: f64,
    hi: f64,
}

impl Piece {
    fn end(&self, hi: bool) -> Point3 {
        self.center + self.dir * if hi { self.hi } else { self.lo }
    }
}

fn piece_of(grid: &VoxelGrid, voxels: Vec<VoxelIndex>) -> Option<Piece> {
    let pts: Vec<[f64; 3]> = voxels.iter().map(|&v| grid.voxel_center(v).to_array()).collect();
    let pd = principal_direction_of(&pts).ok()?;
    let center = Point3::from(pd.centroid);
    let dir = Point3::from(pd.v1);
    let (lo, hi) = pts
        .iter()
        .map(|p| (Point3::from(*p) - center).dot(dir))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| (a.min(t), b.max(t)));
    Some(Piece {
        voxels,
        center,
        dir,
        lo,
        hi,
    })
}

fn has_curb_step(piece: &Piece, heights: &HeightIndex, params: &LcpmParams, probe: &StepProbe) -> bool {
    if params.min_step_height <= 0.0 {
        return true;
    }
    let Some(h) = Point3::new(piece.dir.x, piece.dir.y, 0.0).normalized() else {
        return false;
    };
    let span = piece.hi - piece.lo;
    let n = ((span / (2.0 * probe.along)).ceil() as usize).max(1);
    let mut measured = 0;
    let mut passed = 0;
    for s in 0..n {
        let t = piece.lo + span * (s as f64 + 0.5) / n as f64;
        let at = piece.center + piece.dir * t;
        if let Some(step) = heights.step_height(at, (h.x, h.y), probe) {
            measured += 1;
            if step >= params.min_step_height {
                passed += 1;
            }
        }
    }
    measured > 0 && 2 * passed >= measured
}

/// Distance along `a`'s axis between the two pieces' extents (0 when they
/// overlap) and the lateral offsets between the two axes.
fn link_ok(a: &Piece, b: &Piece, params: &LcpmParams) -> bool {
    let cos = a.dir.dot(b.dir).abs();
    if cos < params.link_angle_deg.to_radians().cos() {
        return false;
    }
    let lateral = |from: &Piece, p: Point3| {
        let d = p - from.center;
        (d - from.dir * d.dot(from.dir)).norm()
    };
    if lateral(a, b.center) > params.link_lateral && lateral(b, a.center) > params.link_lateral {
        return false;
    }
    if lateral(a, b.end(false)).min(lateral(a, b.end(true))) > params.link_lateral {
        return false;
    }
    let tb = [b.end(false), b.end(true)].map(|p| (p - a.center).dot(a.dir));
    let (blo, bhi) = (tb[0].min(tb[1]), tb[0].max(tb[1]));
    let gap = (blo - a.hi).max(a.lo - bhi).max(0.0);
    gap <= params.link_gap
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Links candidates into curb polylines.
///
/// `cloud` supplies the height profiles used to reject flat candidates;
/// `field`, when given, breaks ties between equally cheap paths in favour
/// of stronger energy.
pub fn refine_scene(
    grid: &VoxelGrid,
    cands: &CandidateSet,
    cloud: &PointCloud,
    field: Option<&EnergyField>,
    params: &LcpmParams,
) -> Result<Refinement> {
    params.validate()?;
    let vs = grid.voxel_size();
    let heights = HeightIndex::new(cloud, 0.25);
    let probe = params.probe.for_voxel_size(vs);

    // region bookkeeping: occupied voxels and candidate fraction per region
    let ext = params.region_extents;
    let mut occ_by_region: FxHashMap<SearchRegion, Vec<VoxelIndex>> = FxHashMap::default();
    for v in grid.occupied_sorted() {
        occ_by_region.entry(SearchRegion::containing(v, ext)).or_default().push(v);
    }
    let mut cand_by_region: FxHashMap<SearchRegion, usize> = FxHashMap::default();
    for &v in cands.indices() {
        *cand_by_region.entry(SearchRegion::containing(v, ext)).or_default() += 1;
    }
    let rho_of = |r: &SearchRegion| {
        let occ = occ_by_region.get(r).map_or(0, Vec::len);
        if occ == 0 {
            0.0
        } else {
            cand_by_region.get(r).copied().unwrap_or(0) as f64 / occ as f64
        }
    };
    let mut region_ids: Vec<SearchRegion> = occ_by_region.keys().copied().collect();
    region_ids.sort();
    let region_id = |r: &SearchRegion| region_ids.binary_search(r).unwrap_or(usize::MAX);

    // candidate components inside live regions, reduced to curb-like pieces
    let live: Vec<VoxelIndex> = cands
        .indices()
        .iter()
        .copied()
        .filter(|v| rho_of(&SearchRegion::containing(*v, ext)) >= params.schedule.rho_min)
        .collect();
    let live = if params.min_roughness > 0.0 {
        let r = params.roughness_radius.max(2.5 * vs);
        let mut rough: FxHashMap<(i32, i32), bool> = FxHashMap::default();
        live.into_iter()
            .filter(|v| {
                *rough.entry((v.i, v.j)).or_insert_with(|| {
                    let c = grid.voxel_center(*v);
                    heights
                        .roughness(c.x, c.y, r, params.probe.min_points)
                        .is_some_and(|e| e >= params.min_roughness)
                })
            })
            .collect()
    } else {
        live
    };
    let comps = connected_components(&live);
    let pieces: Vec<Piece> = comps
        .iter()
        .filter(|c| c.len() >= params.min_component)
        .filter_map(|c| piece_of(grid, c.clone()))
        .filter(|p| has_curb_step(p, &heights, params, &probe))
        .collect();

    // chain collinear pieces
    let mut parent: Vec<usize> = (0..pieces.len()).collect();
    for a in 0..pieces.len() {
        for b in a + 1..pieces.len() {
            if link_ok(&pieces[a], &pieces[b], params) || link_ok(&pieces[b], &pieces[a], params) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut chains: Vec<Vec<VoxelIndex>> = Vec::new();
    let mut chain_of: FxHashMap<usize, usize> = FxHashMap::default();
    for p in 0..pieces.len() {
        let r = find(&mut parent, p);
        let n = *chain_of.entry(r).or_insert_with(|| {
            chains.push(Vec::new());
            chains.len() - 1
        });
        chains[n].extend_from_slice(&pieces[p].voxels);
    }

    let mut out = Refinement::default();
    for chain in chains {
        let Some(whole) = piece_of(grid, chain.clone()) else { continue };
        if (whole.hi - whole.lo) < params.min_chain_length {
            continue;
        }
        let gdir = principal_direction(&chain)?.v1;
        let curb = out.paths.len();
        let mut groups: FxHashMap<SearchRegion, Vec<VoxelIndex>> = FxHashMap::default();
        for &v in &chain {
            groups.entry(SearchRegion::containing(v, ext)).or_default().push(v);
        }
        let mut groups: Vec<(SearchRegion, Vec<VoxelIndex>)> = groups.into_iter().collect();
        let key = |g: &[VoxelIndex]| {
            g.iter().map(|&v| dot(idx_f(v), gdir)).sum::<f64>() / g.len() as f64
        };
        groups.sort_by(|a, b| key(&a.1).total_cmp(&key(&b.1)).then(a.0.cmp(&b.0)));

        let mut nodes: Vec<PathNode> = Vec::new();
        let mut cost = 0.0;
        for (region, members) in &groups {
            let Ok(pd) = principal_direction(members) else { continue };
            let mut dir = pd.v1;
            if dot(dir, gdir) < 0.0 {
                dir = dir.map(|v| -v);
            }
            let step = step_size(&pd, ext)?;
            let rho = rho_of(region);
            let anchor = nodes.last().map(|n| n.pos);
            let spec = GraphSpec {
                members,
                direction: dir,
                step,
                corridor: params.corridor,
                anchor,
                weights: field,
            };
            let Ok(mut graph) = build_path_graph(grid, cands, &occ_by_region[region], &spec) else {
                continue;
            };
            let mut solved = None;
            for _ in 0..5 {
                match solve_lcpm(&graph, &params.schedule, rho) {
                    Ok(p) => {
                        solved = Some(p);
                        break;
                    }
                    Err(Error::NoFeasibleTransition { .. }) => {
                        graph.bounds = graph.bounds.map(|b| b * 2.0);
                    }
                    Err(e) => return Err(e),
                }
            }
            let Some(path) = solved else { continue };
            out.regions.push(RegionReport {
                region_id: region_id(region),
                curb,
                rho,
                q: members.len(),
                s: pd.s,
                step,
                cost: path.cost,
            });
            cost += path.cost;
            let skip = usize::from(anchor.is_some());
            nodes.extend(path.nodes.into_iter().skip(skip));
        }
        // trim weak ends
        let strong = |n: &PathNode| n.kind == NodeKind::Candidate;
        let Some(first) = nodes.iter().position(strong) else { continue };
        let last = nodes.iter().rposition(strong).unwrap_or(first);
        let nodes = nodes[first..=last].to_vec();
        if nodes.len() < 2 {
            continue;
        }
        out.paths.push(CurbPath { nodes, cost });
    }

    let reach = ((params.top_reach / vs).round() as i32).max(1);
    let mut lines: Vec<Vec<Point3>> = out
        .paths
        .iter()
        .map(|p| {
            p.nodes
                .iter()
                .map(|n| {
                    let v = if params.top_edge { column_top(grid, n.pos, reach, (0.05 / vs).floor() as i32) } else { n.pos };
                    grid.voxel_center(v)
                })
                .collect::<Vec<_>>()
        })
        .zip(&out.paths)
        .map(|(mut pts, p)| {
            let raw: Vec<Point3> = p.nodes.iter().map(|n| grid.voxel_center(n.pos)).collect();
            bridge_gaps(&mut pts, &raw, &p.nodes, params.gap_margin);
            pts
        })
        .collect();
    stitch(&mut lines, params.stitch_distance * vs);
    let mut lines = link_corners(lines, params.bezier_max_gap, vs);
    lines.retain(|l| l.len() >= 2);
    out.polylines = lines
        .into_iter()
        .enumerate()
        .filter_map(|(n, l)| Polyline3::dedup(format!("curb-{n}"), l).ok())
        .collect();
    Ok(out)
}

/// Moves the nodes around each empty slice onto the straight segment
/// between two anchors, so a gap is crossed at the height of its ends. Data
/// within `margin` of a gap is cut and unreliable; each anchor is the
/// highest node between `margin` and `2 * margin` from the gap, nearest
/// first. `raw` holds the unlifted centers.
fn bridge_gaps(pts: &mut [Point3], raw: &[Point3], nodes: &[PathNode], margin: f64) {
    let n = nodes.len();
    let mut i = 0;
    while i < n {
        if nodes[i].kind != NodeKind::Virtual {
            i += 1;
            continue;
        }
        let end = (i..n).find(|&j| nodes[j].kind != NodeKind::Virtual).unwrap_or(n);
        let off = |j: usize| raw[j].distance(raw[i]).min(raw[j].distance(raw[end - 1]));
        let anchor = |range: &mut dyn Iterator<Item = usize>| {
            let mut best: Option<usize> = None;
            for j in range.skip_while(|&j| off(j) <= margin).take_while(|&j| off(j) <= 2.0 * margin) {
                if best.is_none_or(|b| pts[j].z > pts[b].z) {
                    best = Some(j);
                }
            }
            best
        };
        let lo = anchor(&mut (0..i).rev()).or_else(|| (0..i).rev().find(|&j| off(j) > margin));
        let hi = anchor(&mut (end..n)).or_else(|| (end..n).find(|&j| off(j) > margin));
        if let (Some(lo), Some(hi)) = (lo, hi) {
            let (a, b) = (pts[lo], pts[hi]);
            let ab = b - a;
            let len2 = ab.dot(ab);
            for p in &mut pts[lo + 1..hi] {
                let t = if len2 > 0.0 { ((*p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
                *p = a + ab * t;
            }
        }
        i = end;
    }
}

/// Top of the occupied run nearest to `v` (within `reach` voxels
/// horizontally) that rises to within one voxel of the highest such run.
pub fn column_top(grid: &VoxelGrid, v: VoxelIndex, reach: i32, slack: i32) -> VoxelIndex {
    let run_top = |mut t: VoxelIndex| {
        while grid.intensity(t.offset(0, 0, 1)) > 0 {
            t = t.offset(0, 0, 1);
        }
        t
    };
    if grid.intensity(v) == 0 {
        return v;
    }
    let mut tops = Vec::new();
    for di in -reach..=reach {
        for dj in -reach..=reach {
            let n = v.offset(di, dj, 0);
            if grid.intensity(n) > 0 {
                tops.push((di * di + dj * dj, run_top(n)));
            }
        }
    }
    let high = tops.iter().map(|t| t.1.k).max().unwrap_or(v.k);
    tops.into_iter()
        .filter(|t| t.1.k + slack >= high)
        .min_by_key(|&(d, t)| (d, std::cmp::Reverse(t.k), t))
        .map_or(v, |t| t.1)
}

/// Joins polylines whose ends are within `tol`.
fn stitch(lines: &mut Vec<Vec<Point3>>, tol: f64) {
    'outer: loop {
        for a in 0..lines.len() {
            for b in 0..lines.len() {
                if a == b {
                    continue;
                }
                let (Some(&ea), Some(&sb)) = (lines[a].last(), lines[b].first()) else {
                    continue;
                };
                for rev in [false, true] {
                    let sb = if rev { *lines[b].last().unwrap() } else { sb };
                    if ea.distance(sb) <= tol {
                        let mut tail = std::mem::take(&mut lines[b]);
                        if rev {
                            tail.reverse();
                        }
                        lines[a].extend(tail);
                        lines.remove(b);
                        continue 'outer;
                    }
                }
            }
        }
        break;
    }
}

/// Outward tangent at one end of a polyline, from the vertex about `reach`
/// meters back.
fn end_tangent(line: &[Point3], at_end: bool, reach: f64) -> Option<Point3> {
    let pts: Vec<Point3> = if at_end {
        line.iter().rev().copied().collect()
    } else {
        line.to_vec()
    };
    let tip = pts[0];
    let back = pts.iter().find(|p| p.distance(tip) >= reach).or(pts.last())?;
    (tip - *back).normalized()
}

/// Quadratic Bezier from `a` to `b` bending toward the meeting point of the
/// outward tangents `ta` (at `a`) and `tb` (at `b`), sampled every `spacing`.
pub fn bezier_bridge(a: Point3, ta: Point3, b: Point3, tb: Point3, spacing: f64) -> Vec<Point3> {
    // closest points of the two tangent lines
    let w = a - b;
    let (aa, ab, bb) = (ta.dot(ta), ta.dot(tb), tb.dot(tb));
    let (d, e) = (ta.dot(w), tb.dot(w));
    let den = aa * bb - ab * ab;
    let mid = (a + b) * 0.5;
    let control = if den > 1e-9 {
        let s = (ab * e - bb * d) / den;
        let u = (aa * e - ab * d) / den;
        if s > 0.0 && u > 0.0 {
            ((a + ta * s) + (b + tb * u)) * 0.5
        } else {
            mid
        }
    } else {
        mid
    };
    let approx = a.distance(control) + control.distance(b);
    let n = ((approx / spacing).ceil() as usize).max(1);
    (0..=n)
        .map(|k| {
            let t = k as f64 / n as f64;
            let u = 1.0 - t;
            a * (u * u) + control * (2.0 * u * t) + b * (t * t)
        })
        .collect()
}

/// Curve bridging the end of `a` to the start of `b` when they are close
/// and meet at more than 45 degrees.
pub fn link_intersection(a: &Polyline3, b: &Polyline3, max_gap: f64, spacing: f64) -> Option<Polyline3> {
    let (pa, pb) = (*a.vertices().last()?, *b.vertices().first()?);
    if pa.distance(pb) > max_gap {
        return None;
    }
    let reach = (max_gap / 2.0).max(spacing);
    let ta = end_tangent(a.vertices(), true, reach)?;
    let tb = end_tangent(b.vertices(), false, reach)?;
    // heading into b is -tb; angle between the two headings
    let cos = ta.dot(tb * -1.0).clamp(-1.0, 1.0);
    if cos.acos() <= 45f64.to_radians() {
        return None;
    }
    Polyline3::dedup(format!("{}+{}", a.id, b.id), bezier_bridge(pa, ta, pb, tb, spacing)).ok()
}

fn link_corners(mut lines: Vec<Vec<Point3>>, max_gap: f64, spacing: f64) -> Vec<Vec<Point3>> {
    if max_gap <= 0.0 {
        return lines;
    }
    loop {
        let mut best: Option<(f64, usize, bool, usize, bool)> = None;
        for a in 0..lines.len() {
            for b in a + 1..lines.len() {
                for ea in [false, true] {
                    for eb in [false, true] {
                        let pa = if ea { *lines[a].last().unwrap() } else { lines[a][0] };
                        let pb = if eb { *lines[b].last().unwrap() } else { lines[b][0] };
                        let d = pa.distance(pb);
                        if d > max_gap || best.is_some_and(|x| x.0 <= d) {
                            continue;
                        }
                        let (Some(ta), Some(tb)) = (
                            end_tangent(&lines[a], ea, max_gap / 2.0),
                            end_tangent(&lines[b], eb, max_gap / 2.0),
                        ) else {
                            continue;
                        };
                        if ta.dot(tb * -1.0).clamp(-1.0, 1.0).acos() > 45f64.to_radians() {
                            best = Some((d, a, ea, b, eb));
                        }
                    }
                }
            }
        }
        let Some((_, a, ea, b, eb)) = best else { break };
        let mut la = lines[a].clone();
        let mut lb = lines[b].clone();
        if !ea {
            la.reverse();
        }
        if eb {
            lb.reverse();
        }
        let ta = end_tangent(&la, true, max_gap / 2.0).expect("checked");
        let tb = end_tangent(&lb, false, max_gap / 2.0).expect("checked");
        let bridge = bezier_bridge(*la.last().unwrap(), ta, lb[0], tb, spacing);
        la.extend_from_slice(&bridge[1..bridge.len() - 1]);
        la.extend(lb);
        lines.remove(b);
        lines[a] = la;
    }
    lines
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn vi(i: i32, j: i32, k: i32) -> VoxelIndex {
        VoxelIndex::new(i, j, k)
    }

    #[test]
    fn penalty_ramps() {
        let s = PenaltySchedule::default();
        assert_eq!(s.penalty_d(0.0), 50.0);
        assert_eq!(s.penalty_d(0.30), 500.0);
        assert_eq!(s.penalty_d(0.9), 500.0);
        assert_relative_eq!(s.penalty_d(0.17), 275.0);
        assert_eq!(s.penalty_s(0.04), 500.0);
        assert_relative_eq!(s.penalty_s(0.17), 275.0);
        s.validate().unwrap();
        let bad = PenaltySchedule {
            virtual_cost: 100.0,
            ..PenaltySchedule::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn principal_direction_cases() {
        let line: Vec<_> = (0..10).map(|i| vi(i, 3, 2)).collect();
        let pd = principal_direction(&line).unwrap();
        assert_relative_eq!(pd.v1[0], 1.0, epsilon = 1e-12);
        assert!(pd.s[1] < 1e-9 && pd.s[2] < 1e-9);
        let diag: Vec<_> = (0..10).map(|i| vi(-i, -i, 0)).collect();
        let pd = principal_direction(&diag).unwrap();
        let r = 0.5f64.sqrt();
        assert_relative_eq!(pd.v1[0], r, epsilon = 1e-12);
        assert_relative_eq!(pd.v1[1], r, epsilon = 1e-12);
        assert!(principal_direction(&[vi(0, 0, 0)]).is_err());
        assert!(principal_direction(&[vi(1, 1, 1), vi(1, 1, 1)]).is_err());
    }

    #[test]
    fn step_examples() {
        let pd = |s: [f64; 3]| PrincipalDirection {
            v1: [1.0, 0.0, 0.0],
            v2: [0.0, 1.0, 0.0],
            v3: [0.0, 0.0, 1.0],
            s,
            centroid: [0.0; 3],
        };
        assert_eq!(step_size(&pd([1.0, 0.0, 0.0]), [100; 3]).unwrap(), [1, 1, 1]);
        assert_eq!(step_size(&pd([2.0, 2.0, 2.0]), [100; 3]).unwrap(), [42, 42, 42]);
        assert_eq!(step_size(&pd([2.0, 2.0, 2.0]), [10; 3]).unwrap(), [4, 4, 4]);
        assert!(step_size(&pd([0.0; 3]), [100; 3]).is_err());
    }

    fn graph(slices: Vec<Vec<(VoxelIndex, NodeKind)>>, bound: f64) -> PathGraph {
        PathGraph {
            slices: slices
                .into_iter()
                .enumerate()
                .map(|(s, v)| {
                    v.into_iter()
                        .map(|(pos, kind)| PathNode { pos, kind, slice: s, weight: 0.0 })
                        .collect()
                })
                .collect(),
            lateral: [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            bounds: [bound, bound],
        }
    }

    #[test]
    fn single_node_path() {
        let g = graph(vec![vec![(vi(0, 0, 0), NodeKind::Candidate)]], 1.0);
        let p = solve_lcpm(&g, &PenaltySchedule::default(), 0.2).unwrap();
        assert_eq!(p.nodes.len(), 1);
        assert_eq!(p.cost, 0.0);
    }

    #[test]
    fn straight_line_wins() {
        use NodeKind::*;
        let g = graph(
            (0..5)
                .map(|i| vec![(vi(i, -1, 0), Candidate), (vi(i, 0, 0), Candidate), (vi(i, 1, 0), Candidate)])
                .collect(),
            1.5,
        );
        let s = PenaltySchedule::default();
        let p = solve_lcpm(&g, &s, 0.2).unwrap();
        assert!(p.nodes.windows(2).all(|w| w[0].pos.j == w[1].pos.j));
        assert_relative_eq!(p.cost, 4.0 * s.penalty_s(0.2));
        assert_relative_eq!(p.cost, p.recompute_cost(&s, 0.2));
    }

    #[test]
    fn equal_costs_prefer_heavier_nodes() {
        use NodeKind::*;
        let mut g = graph(
            (0..4)
                .map(|i| vec![(vi(i, 0, 0), Candidate), (vi(i, 1, 0), Candidate)])
                .collect(),
            1.5,
        );
        for s in &mut g.slices {
            s[1].weight = 10.0;
        }
        let p = solve_lcpm(&g, &PenaltySchedule::default(), 0.2).unwrap();
        assert!(p.nodes.iter().all(|n| n.pos.j == 1));
        // weight never buys a costlier path
        g.slices[2][1].kind = NonCandidate;
        let p = solve_lcpm(&g, &PenaltySchedule::default(), 0.2).unwrap();
        assert_relative_eq!(p.cost, 3.0 * PenaltySchedule::default().penalty_s(0.2));
    }

    #[test]
    fn gaps_are_bridged_between_distant_nodes() {
        let kinds = [
            NodeKind::Candidate,
            NodeKind::Candidate,
            NodeKind::Candidate,
            NodeKind::Virtual,
            NodeKind::Virtual,
            NodeKind::Candidate,
            NodeKind::Candidate,
        ];
        let nodes: Vec<PathNode> = kinds
            .iter()
            .enumerate()
            .map(|(s, &kind)| PathNode { pos: VoxelIndex::new(s as i32, 0, 0), kind, slice: s, weight: 0.0 })
            .collect();
        let raw: Vec<Point3> = (0..7).map(|s| Point3::new(s as f64, 0.0, 0.0)).collect();
        // the node right after the gap sank to the road
        let mut pts: Vec<Point3> = raw.iter().map(|p| Point3::new(p.x, 0.0, 1.0)).collect();
        for p in &mut pts[3..6] {
            p.z = 0.0;
        }
        bridge_gaps(&mut pts, &raw, &nodes, 1.0);
        assert!(pts[1..6].iter().all(|p| (p.z - 1.0).abs() < 1e-12));
        assert_eq!(pts[0], Point3::new(0.0, 0.0, 1.0));

        // with no margin only the empty slices move
        let mut pts: Vec<Point3> = raw.iter().map(|p| Point3::new(p.x, 0.0, 1.0)).collect();
        pts[5].z = 0.0;
        bridge_gaps(&mut pts, &raw, &nodes, 0.0);
        assert!((pts[3].z - 0.7).abs() < 1e-12 && pts[5].z == 0.0);
    }

    #[test]
    fn lift_to_nearest_high_column() {
        // road row at k = 0 for j >= 3, curb face j = 2 up to k = 3, a post
        // at j = 0 up to k = 4
        let mut pts = Vec::new();
        for i in 0..3 {
            for j in 3..7 {
                pts.push(Point3::new(i as f64 + 0.5, j as f64 + 0.5, 0.5));
            }
            for k in 0..4 {
                pts.push(Point3::new(i as f64 + 0.5, 2.5, k as f64 + 0.5));
            }
            for k in 0..5 {
                pts.push(Point3::new(i as f64 + 0.5, 0.5, k as f64 + 0.5));
            }
        }
        let grid = crate::voxel_grid::build_grid(&PointCloud::new(pts).unwrap(), 1.0).unwrap();
        let o = grid.index_of(Point3::new(0.5, 0.5, 0.5));
        let at = |j: i32| VoxelIndex::new(o.i + 1, o.j + j, o.k);
        // one step from the face: its top, not the taller post farther out
        assert_eq!(column_top(&grid, at(3), 2, 1), at(2).offset(0, 0, 3));
        // no slack: only the post qualifies
        assert_eq!(column_top(&grid, at(3), 3, 0), at(0).offset(0, 0, 4));
        // out of reach: stays
        assert_eq!(column_top(&grid, at(6), 2, 1), at(6));
    }

    #[test]
    fn infeasible_transition_is_reported() {
        use NodeKind::*;
        let g = graph(
            vec![vec![(vi(0, 0, 0), Candidate)], vec![(vi(1, 5, 0), Candidate)]],
            1.5,
        );
        let e = solve_lcpm(&g, &PenaltySchedule::default(), 0.2).unwrap_err();
        assert!(matches!(e, Error::NoFeasibleTransition { slice: 1 }));
    }

    #[test]
    fn graph_fills_holes_with_virtual_nodes() {
        let cells: Vec<VoxelIndex> = (0..20).filter(|i| !(8..13).contains(i)).map(|i| vi(i, 0, 0)).collect();
        let pts: Vec<Point3> = cells.iter().map(|v| Point3::new(v.i as f64 + 0.5, 0.5, 0.5)).collect();
        let grid = crate::voxel_grid::build_grid(&PointCloud::new(pts).unwrap(), 1.0).unwrap();
        let occ = grid.occupied_sorted();
        let cands = CandidateSet::from_indices(occ.clone());
        let spec = GraphSpec {
            members: &occ,
            direction: [1.0, 0.0, 0.0],
            step: [1, 0, 0],
            corridor: 2.0,
            anchor: None,
            weights: None,
        };
        let g = build_path_graph(&grid, &cands, &occ, &spec).unwrap();
        assert_eq!(g.slices.len(), 20);
        let virt: Vec<_> = g.slices.iter().flatten().filter(|n| n.kind == NodeKind::Virtual).collect();
        assert_eq!(virt.len(), 5);
        assert!(virt.iter().all(|n| n.pos.j == 0 && n.pos.k == 0));
        assert!(g.slices.iter().all(|s| s.len() == 1));
    }

    #[test]
    fn bezier_endpoints_and_control() {
        let a = Point3::new(0.0, 0.0, 0.0);
        let b = Point3::new(2.0, -2.0, 0.0);
        let pts = bezier_bridge(a, Point3::new(1.0, 0.0, 0.0), b, Point3::new(0.0, 1.0, 0.0), 0.04);
        assert_eq!(pts[0], a);
        assert_eq!(*pts.last().unwrap(), b);
        // the curve midpoint of a quadratic is (a + 2c + b) / 4 with c = (2, 0, 0)
        let mid = pts[pts.len() / 2];
        assert!(mid.distance(Point3::new(1.5, -0.5, 0.0)) < 0.05);
        // control point collinear with the ends: straight segment
        let s = bezier_bridge(a, Point3::new(-1.0, 0.0, 0.0), b, Point3::new(1.0, 0.0, 0.0), 0.1);
        assert!(s.iter().all(|p| (p.x + p.y).abs() < 1e-12));
    }

    #[test]
    fn link_intersection_gates() {
        let a = Polyline3::new("a", vec![Point3::new(-5.0, 0.0, 0.0), Point3::new(0.0, 0.0, 0.0)]).unwrap();
        let b = Polyline3::new("b", vec![Point3::new(2.0, -2.0, 0.0), Point3::new(2.0, -7.0, 0.0)]).unwrap();
        let l = link_intersection(&a, &b, 3.0, 0.04).unwrap();
        assert_eq!(l.vertices()[0], Point3::new(0.0, 0.0, 0.0));
        assert_eq!(*l.vertices().last().unwrap(), Point3::new(2.0, -2.0, 0.0));
        assert!(link_intersection(&a, &b, 2.0, 0.04).is_none());
        let c = Polyline3::new("c", vec![Point3::new(2.0, 0.0, 0.0), Point3::new(7.0, 0.0, 0.0)]).unwrap();
        assert!(link_intersection(&a, &c, 3.0, 0.04).is_none());
    }

    #[test]
    fn components_split() {
        let v = vec![vi(0, 0, 0), vi(1, 1, 1), vi(5, 0, 0), vi(6, 0, 0), vi(9, 9, 9)];
        let c = connected_components(&v);
        assert_eq!(c.len(), 3);
        assert_eq!(c[0], vec![vi(0, 0, 0), vi(1, 1, 1)]);
    }

    #[test]
    fn region_lookup() {
        let r = SearchRegion::containing(vi(-1, 150, 99), [100; 3]);
        assert_eq!(r.offset, vi(-100, 100, 0));
        assert!(r.contains(vi(-1, 150, 99)));
        assert!(!r.contains(vi(0, 150, 99)));
    }
}

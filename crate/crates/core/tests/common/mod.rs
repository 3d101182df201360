//! Brute-force reference for the path solver.

#![allow(dead_code)]

use curbline::lcpm::{NodeKind, PathGraph, PathNode, PenaltySchedule};
use curbline::voxel_grid::VoxelIndex;
use rand::Rng;

/// Small random graph: slice `s` holds nodes at `i = s` with random lateral
/// offsets and kinds.
pub fn random_graph(rng: &mut impl Rng, max_slices: usize, max_nodes: usize) -> PathGraph {
    let n = rng.random_range(1..=max_slices);
    let slices = (0..n)
        .map(|s| {
            let m = rng.random_range(1..=max_nodes);
            let mut nodes: Vec<PathNode> = Vec::new();
            while nodes.len() < m {
                let pos = VoxelIndex::new(s as i32, rng.random_range(-3..=3), rng.random_range(-2..=2));
                if nodes.iter().any(|n| n.pos == pos) {
                    continue;
                }
                let kind = match rng.random_range(0..3) {
                    0 => NodeKind::Candidate,
                    1 => NodeKind::NonCandidate,
                    _ => NodeKind::Virtual,
                };
                nodes.push(PathNode { pos, kind, slice: s, weight: 0.0 });
            }
            nodes
        })
        .collect();
    let b = [rng.random_range(0.5..4.0), rng.random_range(0.5..4.0)];
    PathGraph {
        slices,
        lateral: [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        bounds: b,
    }
}

fn ramp(lo: (f64, f64), hi: (f64, f64), rho: f64) -> f64 {
    let t = ((rho - lo.0) / (hi.0 - lo.0)).clamp(0.0, 1.0);
    lo.1 + t * (hi.1 - lo.1)
}

pub fn node_cost(kind: NodeKind, s: &PenaltySchedule, rho: f64) -> f64 {
    match kind {
        NodeKind::Candidate => 0.0,
        NodeKind::NonCandidate => ramp(s.data_low, s.data_high, rho),
        NodeKind::Virtual => s.virtual_cost,
    }
}

fn dist(a: VoxelIndex, b: VoxelIndex) -> f64 {
    let d = [(a.i - b.i) as f64, (a.j - b.j) as f64, (a.k - b.k) as f64];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

fn allowed(g: &PathGraph, a: VoxelIndex, b: VoxelIndex) -> bool {
    let d = [(b.i - a.i) as f64, (b.j - a.j) as f64, (b.k - a.k) as f64];
    (0..2).all(|l| {
        let v = g.lateral[l];
        (d[0] * v[0] + d[1] * v[1] + d[2] * v[2]).abs() <= g.bounds[l] + 1e-9
    })
}

/// Cost of a path through the given nodes: data terms plus the smoothness
/// weight times the summed step lengths.
pub fn path_cost(nodes: &[PathNode], s: &PenaltySchedule, rho: f64) -> f64 {
    let ps = ramp(s.smooth_low, s.smooth_high, rho);
    let data: f64 = nodes.iter().map(|n| node_cost(n.kind, s, rho)).sum();
    data + ps * path_length(nodes)
}

pub fn path_length(nodes: &[PathNode]) -> f64 {
    nodes.windows(2).map(|w| dist(w[0].pos, w[1].pos)).sum()
}

/// Cheapest cost over every path taking one node per slice, by
/// enumeration; `None` when no path respects the lateral bounds.
pub fn exhaustive_min(g: &PathGraph, s: &PenaltySchedule, rho: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut pick = vec![0usize; g.slices.len()];
    loop {
        let nodes: Vec<PathNode> = pick.iter().enumerate().map(|(sl, &n)| g.slices[sl][n]).collect();
        if nodes.windows(2).all(|w| allowed(g, w[0].pos, w[1].pos)) {
            let c = path_cost(&nodes, s, rho);
            best = Some(best.map_or(c, |b: f64| b.min(c)));
        }
        // odometer increment
        let mut d = 0;
        loop {
            if d == pick.len() {
                return best;
            }
            pick[d] += 1;
            if pick[d] < g.slices[d].len() {
                break;
            }
            pick[d] = 0;
            d += 1;
        }
    }
}

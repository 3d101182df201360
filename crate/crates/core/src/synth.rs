//! Synthetic road scenes with exact curb ground truth.
//!
//! The road runs along +X from `x = 0` to `road_length`, centred on `y = 0`.
//! The left curb sits at `+y`, the right one at `-y`. Road surface is at
//! `z = 0`, sidewalks at `z = curb_height`. Truth polylines trace the top
//! edge of each curb. Ids starting with `int` belong to the intersection
//! zone; everything else is straight-line road.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::cloud_io::{Point3, PointCloud, Polyline3};
use crate::error::{Error, Result};

/// Stable per-purpose seed derived from a base seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, then a splitmix finalizer
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurbProfile {
    #[default]
    Vertical,
    /// Face tilted 15 degrees from vertical.
    Beveled,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    #[default]
    Both,
    Left,
    Right,
}

impl Side {
    fn covers(self, y: f64) -> bool {
        match self {
            Side::Both => true,
            Side::Left => y >= 0.0,
            Side::Right => y < 0.0,
        }
    }
}

/// A stretch of curb, `[start, start + length)` along the road axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurbSpan {
    pub start: f64,
    pub length: f64,
    #[serde(default)]
    pub side: Side,
}

impl CurbSpan {
    fn covers(&self, x: f64, y: f64) -> bool {
        x >= self.start && x < self.start + self.length && self.side.covers(y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub road_length: f64,
    pub road_width: f64,
    pub sidewalk_width: f64,
    pub curb_height: f64,
    pub curb_profile: CurbProfile,
    /// Points per square meter.
    pub density_road: f64,
    pub density_sidewalk: f64,
    /// Density multiplier at the right and left scene edges, interpolated
    /// linearly across the road.
    pub density_gradient: Option<[f64; 2]>,
    /// Rotation of the left half about the road axis, degrees.
    pub slope_deg: f64,
    pub occlusions: Vec<CurbSpan>,
    pub ramps: Vec<CurbSpan>,
    pub intersection: bool,
    pub corner_radius: f64,
    /// No two generated points are closer than this.
    pub min_point_spacing: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            road_length: 50.0,
            road_width: 7.0,
            sidewalk_width: 2.0,
            curb_height: 0.15,
            curb_profile: CurbProfile::Vertical,
            density_road: 2000.0,
            density_sidewalk: 1250.0,
            density_gradient: None,
            slope_deg: 0.0,
            occlusions: Vec::new(),
            ramps: Vec::new(),
            intersection: false,
            corner_radius: 3.0,
            min_point_spacing: 0.004,
            seed: 0,
        }
    }
}

const OCCLUSION_REACH: f64 = 1.0;
const BEVEL_DEG: f64 = 15.0;

impl SceneSpec {
    fn bad(field: &'static str, reason: impl Into<String>) -> Error {
        Error::InvalidScene {
            field,
            reason: reason.into(),
        }
    }

    /// Reads a spec from TOML; missing keys take their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene spec is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, field: &'static str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Self::bad(field, format!("must be positive, got {v}")))
            }
        };
        pos(self.road_length, "road_length")?;
        pos(self.road_width, "road_width")?;
        pos(self.sidewalk_width, "sidewalk_width")?;
        pos(self.density_road, "density_road")?;
        pos(self.density_sidewalk, "density_sidewalk")?;
        if !(self.curb_height > 0.0 && self.curb_height <= 0.25) {
            return Err(Self::bad("curb_height", "must lie in (0, 0.25]"));
        }
        if !(0.0..=30.0).contains(&self.slope_deg) {
            return Err(Self::bad("slope_deg", "must lie in [0, 30]"));
        }
        if !(self.min_point_spacing >= 0.0 && self.min_point_spacing < 0.05) {
            return Err(Self::bad("min_point_spacing", "must lie in [0, 0.05)"));
        }
        if let Some([a, b]) = self.density_gradient {
            if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                return Err(Self::bad("density_gradient", "multipliers must be positive"));
            }
        }
        for (field, spans) in [("occlusions", &self.occlusions), ("ramps", &self.ramps)] {
            for s in spans {
                if !(s.start >= 0.0 && s.length > 0.0 && s.start + s.length <= self.road_length) {
                    return Err(Self::bad(
                        field,
                        format!(
                            "span [{}, {}] must lie inside the road [0, {}]",
                            s.start,
                            s.start + s.length,
                            self.road_length
                        ),
                    ));
                }
            }
        }
        if self.intersection {
            pos(self.corner_radius, "corner_radius")?;
            let (lo, hi) = self.intersection_zone();
            if lo <= 0.0 {
                return Err(Self::bad("corner_radius", "intersection does not fit the road length"));
            }
            if self.corner_radius > self.sidewalk_width {
                return Err(Self::bad("corner_radius", "must not exceed sidewalk_width"));
            }
            if self.ramps.iter().any(|r| r.start < hi && r.start + r.length > lo) {
                return Err(Self::bad("ramps", "ramp overlaps the intersection"));
            }
        }
        Ok(())
    }

    fn bevel(&self) -> f64 {
        match self.curb_profile {
            CurbProfile::Vertical => 0.0,
            CurbProfile::Beveled => self.curb_height * BEVEL_DEG.to_radians().tan(),
        }
    }

    fn center_x(&self) -> f64 {
        self.road_length / 2.0
    }

    /// Extent along x where curbs bend into the crossing road.
    fn intersection_zone(&self) -> (f64, f64) {
        let r = self.road_width / 2.0 + self.corner_radius;
        (self.center_x() - r, self.center_x() + r)
    }

    fn half_extent(&self) -> f64 {
        self.road_width / 2.0 + self.bevel() + self.sidewalk_width
    }

    /// Signed horizontal distance past the curb base, positive toward the
    /// sidewalk.
    fn beyond(&self, x: f64, y: f64) -> f64 {
        let v = y.abs() - self.road_width / 2.0;
        if !self.intersection {
            return v;
        }
        let u = (x - self.center_x()).abs() - self.road_width / 2.0;
        let r = self.corner_radius;
        let dist = if u >= r && v >= r {
            -(u - r).min(v - r)
        } else {
            (r - u).max(0.0).hypot((r - v).max(0.0))
        };
        r - dist
    }

    fn multiplier(&self, y: f64) -> f64 {
        match self.density_gradient {
            None => 1.0,
            Some([right, left]) => {
                let t = (y + self.half_extent()) / (2.0 * self.half_extent());
                right + (left - right) * t.clamp(0.0, 1.0)
            }
        }
    }

    fn max_multiplier(&self) -> f64 {
        self.density_gradient.map_or(1.0, |[a, b]| a.max(b))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Surface {
    Road,
    CurbFace,
    Sidewalk,
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub cloud: PointCloud,
    /// Surface each point was sampled from, aligned with the cloud.
    pub surfaces: Vec<Surface>,
    pub truth: Vec<Polyline3>,
    pub spec: SceneSpec,
}

/// A piece of curb base line in the XY plane.
#[derive(Clone, Copy, Debug)]
enum Piece {
    Line {
        a: (f64, f64),
        b: (f64, f64),
        normal: (f64, f64),
    },
    /// Arc around `c`; the sidewalk lies toward the centre.
    Arc { c: (f64, f64), r: f64, a0: f64, a1: f64 },
}

impl Piece {
    fn length(&self) -> f64 {
        match *self {
            Piece::Line { a, b, .. } => (b.0 - a.0).hypot(b.1 - a.1),
            Piece::Arc { r, a0, a1, .. } => r * (a1 - a0).abs(),
        }
    }

    /// Point at fraction `t` and the unit normal toward the sidewalk.
    fn at(&self, t: f64) -> ((f64, f64), (f64, f64)) {
        match *self {
            Piece::Line { a, b, normal } => ((a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t), normal),
            Piece::Arc { c, r, a0, a1 } => {
                let phi = a0 + (a1 - a0) * t;
                let (s, co) = phi.sin_cos();
                ((c.0 + r * co, c.1 + r * s), (-co, -s))
            }
        }
    }
}

struct Layout {
    /// Curb base pieces per side, `true` for the left side.
    pieces: Vec<(bool, Piece)>,
}

fn layout(spec: &SceneSpec) -> Layout {
    let hw = spec.road_width / 2.0;
    let mut pieces = Vec::new();
    for left in [true, false] {
        let sy = if left { 1.0 } else { -1.0 };
        if !spec.intersection {
            pieces.push((
                left,
                Piece::Line {
                    a: (0.0, sy * hw),
                    b: (spec.road_length, sy * hw),
                    normal: (0.0, sy),
                },
            ));
            continue;
        }
        let xc = spec.center_x();
        let r = spec.corner_radius;
        let outer = spec.half_extent();
        for sx in [-1.0, 1.0] {
            let x_arc = xc + sx * (hw + r);
            let road_end = if sx < 0.0 { 0.0 } else { spec.road_length };
            pieces.push((
                left,
                Piece::Line {
                    a: (road_end, sy * hw),
                    b: (x_arc, sy * hw),
                    normal: (0.0, sy),
                },
            ));
            let c = (x_arc, sy * (hw + r));
            let a0 = (-sy).atan2(0.0);
            let mid = (-sy).atan2(-sx);
            let mut sweep = mid - a0;
            while sweep > PI {
                sweep -= 2.0 * PI;
            }
            while sweep < -PI {
                sweep += 2.0 * PI;
            }
            pieces.push((left, Piece::Arc { c, r, a0, a1: a0 + 2.0 * sweep }));
            pieces.push((
                left,
                Piece::Line {
                    a: (xc + sx * hw, sy * (hw + r)),
                    b: (xc + sx * hw, sy * outer),
                    normal: (sx, 0.0),
                },
            ));
        }
    }
    Layout { pieces }
}

/// Rejects points closer than `r` to an accepted one.
struct HardCore {
    r: f64,
    cells: FxHashMap<(i64, i64, i64), Vec<Point3>>,
}

impl HardCore {
    fn new(r: f64) -> Self {
        Self {
            r,
            cells: FxHashMap::default(),
        }
    }

    fn key(&self, p: Point3) -> (i64, i64, i64) {
        (
            (p.x / self.r).floor() as i64,
            (p.y / self.r).floor() as i64,
            (p.z / self.r).floor() as i64,
        )
    }

    fn try_insert(&mut self, p: Point3) -> bool {
        if self.r <= 0.0 {
            return true;
        }
        let k = self.key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(v) = self.cells.get(&(k.0 + dx, k.1 + dy, k.2 + dz)) {
                        if v.iter().any(|q| q.distance(p) < self.r) {
                            return false;
                        }
                    }
                }
            }
        }
        self.cells.entry(k).or_default().push(p);
        true
    }
}

fn round_count(x: f64) -> usize {
    x.round().max(0.0) as usize
}

pub fn generate(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, "scene");
    let mut hard = HardCore::new(spec.min_point_spacing);
    let mut points = Vec::new();
    let mut surfaces = Vec::new();
    let h = spec.curb_height;
    let bevel = spec.bevel();
    let ext = spec.half_extent();
    let l = spec.road_length;
    let in_ramp = |x: f64, y: f64| spec.ramps.iter().any(|r| r.covers(x, y));
    let mut push = |p: Point3, s: Surface, pts: &mut Vec<Point3>| {
        if hard.try_insert(p) {
            pts.push(p);
            surfaces.push(s);
        }
    };

    // horizontal surfaces, thinned from the densest rate
    let top = spec.density_road.max(spec.density_sidewalk) * spec.max_multiplier();
    let n = round_count(l * 2.0 * ext * top);
    for _ in 0..n {
        let x = rng.random_range(0.0..l);
        let y = rng.random_range(-ext..ext);
        let keep: f64 = rng.random();
        let b = spec.beyond(x, y);
        let ramp = b >= 0.0 && in_ramp(x, y);
        let (z, density, surface) = if b < 0.0 || ramp {
            (0.0, spec.density_road, Surface::Road)
        } else if b > bevel {
            (h, spec.density_sidewalk, Surface::Sidewalk)
        } else {
            continue;
        };
        if keep * top < density * spec.multiplier(y) {
            push(Point3::new(x, y, z), surface, &mut points);
        }
    }

    // curb faces
    let lay = layout(spec);
    let slant = bevel.hypot(h);
    for &(_, piece) in &lay.pieces {
        let n = round_count(piece.length() * slant * spec.density_road * spec.max_multiplier());
        for _ in 0..n {
            let ((x, y), (nx, ny)) = piece.at(rng.random());
            let t: f64 = rng.random();
            let keep: f64 = rng.random();
            let (px, py) = (x + nx * bevel * t, y + ny * bevel * t);
            if in_ramp(px, py) || keep * spec.max_multiplier() >= spec.multiplier(py) {
                continue;
            }
            push(Point3::new(px, py, h * t), Surface::CurbFace, &mut points);
        }
    }

    // transverse faces where a ramp drops the sidewalk to road level
    let hw = spec.road_width / 2.0;
    for ramp in &spec.ramps {
        for left in [true, false] {
            let sy = if left { 1.0 } else { -1.0 };
            if !ramp.side.covers(sy) {
                continue;
            }
            for x in [ramp.start, ramp.start + ramp.length] {
                if x <= 0.0 || x >= l {
                    continue;
                }
                let n = round_count((ext - hw) * h * spec.density_road);
                for _ in 0..n {
                    let y = sy * rng.random_range(hw..ext);
                    let z = rng.random_range(0.0..h);
                    push(Point3::new(x, y, z), Surface::CurbFace, &mut points);
                }
            }
        }
    }

    let mut truth = truth_lines(spec, &lay);
    let mut scene_pts = Vec::with_capacity(points.len());
    let mut scene_surf = Vec::with_capacity(points.len());
    for (p, s) in points.into_iter().zip(surfaces) {
        let occluded = spec.occlusions.iter().any(|o| {
            o.covers(p.x, p.y) && spec.beyond(p.x, p.y).abs() < OCCLUSION_REACH
        });
        if !occluded {
            scene_pts.push(p);
            scene_surf.push(s);
        }
    }

    if spec.slope_deg > 0.0 {
        let (s, c) = spec.slope_deg.to_radians().sin_cos();
        let lift = |p: Point3| {
            if p.y > 0.0 {
                Point3::new(p.x, p.y * c - p.z * s, p.y * s + p.z * c)
            } else {
                p
            }
        };
        for p in &mut scene_pts {
            *p = lift(*p);
        }
        for t in &mut truth {
            let v = t.vertices().iter().map(|&p| lift(p)).collect();
            *t = Polyline3::new(t.id.clone(), v)?;
        }
    }

    Ok(SyntheticScene {
        cloud: PointCloud::new(scene_pts)?,
        surfaces: scene_surf,
        truth,
        spec: spec.clone(),
    })
}

fn side_name(left: bool) -> &'static str {
    if left {
        "left"
    } else {
        "right"
    }
}

fn truth_lines(spec: &SceneSpec, lay: &Layout) -> Vec<Polyline3> {
    let h = spec.curb_height;
    let bevel = spec.bevel();
    let mut out = Vec::new();
    if !spec.intersection {
        for &(left, piece) in &lay.pieces {
            let Piece::Line { a, b, normal } = piece else { continue };
            let y = a.1 + normal.1 * bevel;
            // split the straight edge around ramps on this side
            let side_y = if left { 1.0 } else { -1.0 };
            let mut cuts: Vec<(f64, f64)> = spec
                .ramps
                .iter()
                .filter(|r| r.side.covers(side_y))
                .map(|r| (r.start, r.start + r.length))
                .collect();
            cuts.sort_by(|p, q| p.0.total_cmp(&q.0));
            let mut pieces = Vec::new();
            let mut x0 = a.0;
            for (s, e) in cuts {
                if s > x0 {
                    pieces.push((x0, s));
                }
                x0 = x0.max(e);
            }
            if b.0 > x0 {
                pieces.push((x0, b.0));
            }
            for (n, (s, e)) in pieces.into_iter().enumerate() {
                let id = if n == 0 {
                    side_name(left).to_string()
                } else {
                    format!("{}-{n}", side_name(left))
                };
                let v = vec![Point3::new(s, y, h), Point3::new(e, y, h)];
                if let Ok(p) = Polyline3::new(id, v) {
                    out.push(p);
                }
            }
        }
        return out;
    }
    // intersection: each quadrant has a straight piece, then arc plus the
    // crossing-road curb
    for (q, chunk) in lay.pieces.chunks(3).enumerate() {
        let left = chunk[0].0;
        let tag = format!("{}-{}", side_name(left), if q % 2 == 0 { "w" } else { "e" });
        if let Piece::Line { a, b, normal } = chunk[0].1 {
            let off = (normal.0 * bevel, normal.1 * bevel);
            let v = vec![
                Point3::new(a.0 + off.0, a.1 + off.1, h),
                Point3::new(b.0 + off.0, b.1 + off.1, h),
            ];
            out.push(Polyline3::new(tag.clone(), v).expect("straight truth piece"));
        }
        let mut v = Vec::new();
        if let Piece::Arc { c, r, a0, a1 } = chunk[1].1 {
            let steps = 45;
            for k in 0..=steps {
                let phi = a0 + (a1 - a0) * k as f64 / steps as f64;
                let (s, co) = phi.sin_cos();
                v.push(Point3::new(c.0 + (r - bevel) * co, c.1 + (r - bevel) * s, h));
            }
        }
        if let Piece::Line { b, normal, .. } = chunk[2].1 {
            v.push(Point3::new(b.0 + normal.0 * bevel, b.1, h));
        }
        out.push(Polyline3::dedup(format!("int-{tag}"), v).expect("intersection truth piece"));
    }
    out
}

fn rebuild(scene: &SyntheticScene, keep: impl Fn(usize) -> bool) -> Result<SyntheticScene> {
    let mut pts = Vec::new();
    let mut surf = Vec::new();
    for (i, (&p, &s)) in scene.cloud.points().iter().zip(&scene.surfaces).enumerate() {
        if keep(i) {
            pts.push(p);
            surf.push(s);
        }
    }
    Ok(SyntheticScene {
        cloud: PointCloud::new(pts)?,
        surfaces: surf,
        truth: scene.truth.clone(),
        spec: scene.spec.clone(),
    })
}

/// Smallest distance between two distinct points, found on a hash grid
/// whose cell is doubled until some pair falls within it.
pub fn min_point_distance(points: &[Point3]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let mut cell = 0.002;
    loop {
        let mut grid: FxHashMap<(i64, i64, i64), Vec<usize>> = FxHashMap::default();
        let key = |p: &Point3| {
            (
                (p.x / cell).floor() as i64,
                (p.y / cell).floor() as i64,
                (p.z / cell).floor() as i64,
            )
        };
        for (i, p) in points.iter().enumerate() {
            grid.entry(key(p)).or_default().push(i);
        }
        let mut best = f64::INFINITY;
        for (i, p) in points.iter().enumerate() {
            let k = key(p);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(v) = grid.get(&(k.0 + dx, k.1 + dy, k.2 + dz)) {
                            for &j in v {
                                if j > i {
                                    best = best.min(p.distance(points[j]));
                                }
                            }
                        }
                    }
                }
            }
        }
        if best < cell || cell > 1e6 {
            return best;
        }
        cell *= 4.0;
    }
}

/// Perturbs every coordinate uniformly in `[-t*d, t*d]` with `d` the
/// minimum point distance.
pub fn add_noise(scene: &SyntheticScene, t: f64) -> Result<SyntheticScene> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(crate::error::invalid("noise", "T must be non-negative"));
    }
    if t == 0.0 {
        return Ok(scene.clone());
    }
    let d = min_point_distance(scene.cloud.points());
    let a = t * d;
    let mut rng = rng_for(scene.spec.seed, "noise");
    let mut jitter = || if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
    let pts = scene
        .cloud
        .points()
        .iter()
        .map(|p| Point3::new(p.x + jitter(), p.y + jitter(), p.z + jitter()))
        .collect();
    Ok(SyntheticScene {
        cloud: PointCloud::new(pts)?,
        ..scene.clone()
    })
}

/// Uniform random subset of exactly `floor(keep * n)` points, order kept.
pub fn downsample(scene: &SyntheticScene, keep: f64) -> Result<SyntheticScene> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(crate::error::invalid("keep_fraction", "must lie in (0, 1]"));
    }
    let n = scene.cloud.len();
    let k = (keep * n as f64).floor() as usize;
    if k < 100 {
        return Err(crate::error::invalid(
            "keep_fraction",
            format!("leaves {k} points, need at least 100"),
        ));
    }
    if k == n {
        return Ok(scene.clone());
    }
    let mut rng = rng_for(scene.spec.seed, "downsample");
    let mut chosen = vec![false; n];
    for i in sample(&mut rng, n, k) {
        chosen[i] = true;
    }
    rebuild(scene, |i| chosen[i])
}

/// Removes road-surface points within `width / 2` of `y = offset`.
pub fn add_scanner_gap(scene: &SyntheticScene, offset: f64, width: f64) -> Result<SyntheticScene> {
    if !(width >= 0.0) {
        return Err(crate::error::invalid("gap_width", "must be non-negative"));
    }
    if offset.abs() + width / 2.0 >= scene.spec.road_width / 2.0 {
        return Err(crate::error::invalid("gap_offset", "gap strip overlaps a curb"));
    }
    if width == 0.0 {
        return Ok(scene.clone());
    }
    let pts = scene.cloud.points();
    rebuild(scene, |i| {
        !(scene.surfaces[i] == Surface::Road && (pts[i].y - offset).abs() < width / 2.0)
    })
}

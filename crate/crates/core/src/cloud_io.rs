//! Points, point clouds, polylines and their plain-text file formats.
//!
//! Point files hold one `x y z` triple per line; anything after the third
//! column is ignored. Lines starting with `#` and blank lines are skipped.
//! Polyline files hold records of the form
//!
//! ```text
//! POLYLINE <id> <n>
//! x y z
//! ...
//! ```
//!
//! separated by blank lines.

use std::fmt::Write as _;
use std::fs;
use std::ops::{Add, Mul, Sub};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Point3) -> Point3 {
        Point3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Point3) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Unit vector in the same direction, or `None` for a (near) zero vector.
    pub fn normalized(self) -> Option<Point3> {
        let n = self.norm();
        (n > 1e-15).then(|| self * (1.0 / n))
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub min: Point3,
    pub max: Point3,
}

impl Bounds {
    pub fn of(points: &[Point3]) -> Option<Bounds> {
        let first = *points.first()?;
        let mut b = Bounds {
            min: first,
            max: first,
        };
        for p in &points[1..] {
            b.min = Point3::new(b.min.x.min(p.x), b.min.y.min(p.y), b.min.z.min(p.z));
            b.max = Point3::new(b.max.x.max(p.x), b.max.y.max(p.y), b.max.z.max(p.z));
        }
        Some(b)
    }

    pub fn extent(&self) -> Point3 {
        self.max - self.min
    }
}

/// A non-empty set of finite points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    bounds: Bounds,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if let Some(index) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let bounds = Bounds::of(&points).ok_or(Error::EmptyCloud)?;
        Ok(Self { points, bounds })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for the usual container API.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }
}

/// An ordered list of at least two vertices with no repeated neighbours.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline3 {
    pub id: String,
    vertices: Vec<Point3>,
}

impl Polyline3 {
    pub fn new(id: impl Into<String>, vertices: Vec<Point3>) -> Result<Self> {
        let id = id.into();
        let bad = |reason: &str| Error::InvalidPolyline {
            id: id.clone(),
            reason: reason.to_string(),
        };
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(bad("id must be non-empty and contain no whitespace"));
        }
        if vertices.len() < 2 {
            return Err(bad("needs at least two vertices"));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite vertex"));
        }
        if vertices.windows(2).any(|w| w[0] == w[1]) {
            return Err(bad("consecutive vertices coincide"));
        }
        Ok(Self { id, vertices })
    }

    /// Like [`Polyline3::new`] but silently drops repeated neighbours first.
    pub fn dedup(id: impl Into<String>, mut vertices: Vec<Point3>) -> Result<Self> {
        vertices.dedup();
        Self::new(id, vertices)
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn length(&self) -> f64 {
        self.vertices.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point3, Point3)> + '_ {
        self.vertices.windows(2).map(|w| (w[0], w[1]))
    }

    /// Shortest distance from `p` to any segment.
    pub fn distance_to(&self, p: Point3) -> f64 {
        self.segments()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn point_segment_distance(p: Point3, a: Point3, b: Point3) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_coord(tok: Option<&str>, path: &Path, line: usize) -> Result<f64> {
    let perr = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let tok = tok.ok_or_else(|| perr("expected three coordinates".into()))?;
    let v: f64 = tok
        .parse()
        .map_err(|_| perr(format!("`{tok}` is not a number")))?;
    if !v.is_finite() {
        return Err(perr(format!("non-finite coordinate `{tok}`")));
    }
    Ok(v)
}

fn parse_xyz_line(line: &str, path: &Path, lineno: usize) -> Result<Point3> {
    let mut toks = line.split_whitespace();
    let x = parse_coord(toks.next(), path, lineno)?;
    let y = parse_coord(toks.next(), path, lineno)?;
    let z = parse_coord(toks.next(), path, lineno)?;
    Ok(Point3::new(x, y, z))
}

/// Parses point-file text. `path` is only used in error messages.
pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        points.push(parse_xyz_line(line, path, n + 1)?);
    }
    PointCloud::new(points)
}

pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    parse_xyz(&read_text(path)?, path)
}

pub fn format_xyz(points: &[Point3]) -> String {
    let mut out = String::with_capacity(points.len() * 40);
    for p in points {
        // `{}` on f64 prints the shortest string that parses back exactly
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

pub fn write_xyz(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    write_text(path.as_ref(), &format_xyz(cloud.points()))
}

pub fn parse_polylines(text: &str, path: &Path) -> Result<Vec<Polyline3>> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l.trim()));
    while let Some((lineno, line)) = lines.next() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        if toks.next() != Some("POLYLINE") {
            return Err(perr(lineno, "expected `POLYLINE <id> <n>` header".into()));
        }
        let (Some(id), Some(count), None) = (toks.next(), toks.next(), toks.next()) else {
            return Err(perr(lineno, "expected `POLYLINE <id> <n>` header".into()));
        };
        let count: usize = count
            .parse()
            .map_err(|_| perr(lineno, format!("bad vertex count `{count}`")))?;
        let mut vertices = Vec::with_capacity(count);
        let mut last = lineno;
        for _ in 0..count {
            match lines.next() {
                Some((n, l)) if !l.is_empty() => {
                    vertices.push(parse_xyz_line(l, path, n)?);
                    last = n;
                }
                Some((n, _)) => return Err(perr(n, format!("polyline `{id}` ended early"))),
                None => return Err(perr(last, format!("polyline `{id}` ended early"))),
            }
        }
        let poly = Polyline3::new(id, vertices).map_err(|e| perr(lineno, e.to_string()))?;
        out.push(poly);
    }
    Ok(out)
}

pub fn read_polylines(path: impl AsRef<Path>) -> Result<Vec<Polyline3>> {
    let path = path.as_ref();
    parse_polylines(&read_text(path)?, path)
}

pub fn format_polylines(polylines: &[Polyline3]) -> String {
    let mut out = String::new();
    for (n, pl) in polylines.iter().enumerate() {
        if n > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "POLYLINE {} {}", pl.id, pl.vertices.len());
        out.push_str(&format_xyz(&pl.vertices));
    }
    out
}

pub fn write_polylines(path: impl AsRef<Path>, polylines: &[Polyline3]) -> Result<()> {
    write_text(path.as_ref(), &format_polylines(polylines))
}

//! Point-wise scoring of extracted curbs against reference polylines.
//!
//! Every point of the evaluation cloud is tested against two bands of
//! half-width `D`: one around the result and one around the truth.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::cloud_io::{point_segment_distance, Point3, PointCloud, Polyline3};
use crate::error::{invalid, Error, Result};
use crate::lcpm::principal_direction_of;
use crate::synth::rng_for;

pub const DEFAULT_D_GRID: [f64; 5] = [0.4, 0.2, 0.12, 0.08, 0.04];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    fn add(&mut self, in_result: bool, in_truth: bool) {
        match (in_result, in_truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    fn merge(mut self, o: ClassCounts) -> ClassCounts {
        self.tp += o.tp;
        self.tn += o.tn;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// The four ratios; `None` where the denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rates {
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
}

pub fn rates(c: &ClassCounts) -> Rates {
    Rates {
        tpr: ratio(c.tp, c.tp + c.fn_),
        tnr: ratio(c.tn, c.fp + c.tn),
        ppv: ratio(c.tp, c.tp + c.fp),
        npv: ratio(c.tn, c.tn + c.fn_),
    }
}

/// Minimum distance to any segment, brute force.
pub fn point_to_polyline_distance(p: Point3, lines: &[Polyline3]) -> Result<f64> {
    if lines.is_empty() {
        return Err(invalid("lines", "need at least one polyline"));
    }
    Ok(lines
        .iter()
        .map(|l| l.distance_to(p))
        .fold(f64::INFINITY, f64::min))
}

/// Segments bucketed on a horizontal grid for radius queries.
pub struct SegmentIndex {
    cell: f64,
    segs: Vec<(Point3, Point3)>,
    cells: FxHashMap<(i64, i64), Vec<u32>>,
}

impl SegmentIndex {
    /// `cell` should be at least the largest query radius.
    pub fn new(lines: &[Polyline3], cell: f64) -> Self {
        let segs: Vec<(Point3, Point3)> = lines.iter().flat_map(|l| l.segments()).collect();
        let key = |v: f64| (v / cell).floor() as i64;
        let mut cells: FxHashMap<(i64, i64), Vec<u32>> = FxHashMap::default();
        for (n, (a, b)) in segs.iter().enumerate() {
            for i in key(a.x.min(b.x))..=key(a.x.max(b.x)) {
                for j in key(a.y.min(b.y))..=key(a.y.max(b.y)) {
                    cells.entry((i, j)).or_default().push(n as u32);
                }
            }
        }
        Self { cell, segs, cells }
    }

    /// Distance to the nearest segment if one lies within `r <= cell`.
    pub fn nearest_within(&self, p: Point3, r: f64) -> Option<f64> {
        let (ci, cj) = ((p.x / self.cell).floor() as i64, (p.y / self.cell).floor() as i64);
        let mut best = f64::INFINITY;
        for i in ci - 1..=ci + 1 {
            for j in cj - 1..=cj + 1 {
                for &s in self.cells.get(&(i, j)).into_iter().flatten() {
                    let (a, b) = self.segs[s as usize];
                    best = best.min(point_segment_distance(p, a, b));
                }
            }
        }
        (best <= r).then_some(best)
    }

    fn within(&self, p: Point3, d: f64) -> bool {
        self.nearest_within(p, d).is_some_and(|v| v < d)
    }
}

/// Per-point band membership with the strict `< D` rule.
pub fn classify_points(
    cloud: &PointCloud,
    result: &[Polyline3],
    truth: &[Polyline3],
    d: f64,
) -> Result<ClassCounts> {
    if !(d.is_finite() && d > 0.0) {
        return Err(invalid("D", format!("must be positive, got {d}")));
    }
    let ri = SegmentIndex::new(result, d);
    let ti = SegmentIndex::new(truth, d);
    Ok(cloud
        .points()
        .par_iter()
        .fold(ClassCounts::default, |mut c, &p| {
            c.add(ri.within(p, d), ti.within(p, d));
            c
        })
        .reduce(ClassCounts::default, ClassCounts::merge))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Zone {
    Straight,
    Intersection,
    All,
}

impl Zone {
    pub fn label(self) -> &'static str {
        match self {
            Zone::Straight => "SL",
            Zone::Intersection => "Int",
            Zone::All => "All",
        }
    }

    /// Truth polylines whose id starts with `int` belong to intersections.
    pub fn of_truth(id: &str) -> Zone {
        if id.starts_with("int") {
            Zone::Intersection
        } else {
            Zone::Straight
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub zone: Zone,
    pub d: f64,
    pub counts: ClassCounts,
    pub rates: Rates,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn get(&self, zone: Zone, d: f64) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.zone == zone && r.d == d)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("zone,D,TP,TN,FP,FN,TPR,TNR,PPV,NPV\n");
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            let c = r.counts;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.zone.label(),
                r.d,
                c.tp,
                c.tn,
                c.fp,
                c.fn_,
                f(r.rates.tpr),
                f(r.rates.tnr),
                f(r.rates.ppv),
                f(r.rates.npv)
            );
        }
        s
    }

    /// Zones down, one block of columns per D, percentages.
    pub fn to_table(&self) -> String {
        let mut ds: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !ds.contains(&r.d) {
                ds.push(r.d);
            }
        }
        let mut zones: Vec<Zone> = self.rows.iter().map(|r| r.zone).collect();
        zones.sort();
        zones.dedup();
        let pct = |v: Option<f64>| v.map(|x| format!("{:6.2}", 100.0 * x)).unwrap_or_else(|| "     -".into());
        let mut s = String::new();
        for (name, pick) in [
            ("TPR", (|r: &Rates| r.tpr) as fn(&Rates) -> Option<f64>),
            ("TNR", |r| r.tnr),
            ("PPV", |r| r.ppv),
            ("NPV", |r| r.npv),
        ] {
            let _ = write!(s, "{name:<5}");
            for d in &ds {
                let _ = write!(s, " D={d:<5}");
            }
            s.push('\n');
            for &z in &zones {
                let _ = write!(s, "{:<5}", z.label());
                for &d in &ds {
                    let v = self.get(z, d).and_then(|r| pick(&r.rates));
                    let _ = write!(s, " {:>7}", pct(v));
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Scores `result` on every D, split by the zone of the nearest truth line.
pub fn evaluate(
    cloud: &PointCloud,
    result: &[Polyline3],
    truth: &[Polyline3],
    ds: &[f64],
) -> Result<MetricsReport> {
    if ds.is_empty() {
        return Err(invalid("D", "need at least one threshold"));
    }
    if let Some(d) = ds.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
        return Err(invalid("D", format!("must be positive, got {d}")));
    }
    let dmax = ds.iter().copied().fold(0.0, f64::max);
    let (int_lines, sl_lines): (Vec<Polyline3>, Vec<Polyline3>) = truth
        .iter()
        .cloned()
        .partition(|l| Zone::of_truth(&l.id) == Zone::Intersection);
    let has_int = !int_lines.is_empty();
    let ri = SegmentIndex::new(result, dmax);
    let ti = SegmentIndex::new(truth, dmax);
    let si = SegmentIndex::new(&sl_lines, dmax);
    let ii = SegmentIndex::new(&int_lines, dmax);

    let nd = ds.len();
    // counts[zone][d]; zones 0 = SL, 1 = Int
    let counts = cloud
        .points()
        .par_iter()
        .fold(
            || vec![[ClassCounts::default(); 2]; nd],
            |mut acc, &p| {
                let zone = if has_int {
                    let s = si.nearest_within(p, dmax).unwrap_or(f64::INFINITY);
                    let i = ii.nearest_within(p, dmax).unwrap_or(f64::INFINITY);
                    usize::from(i < s)
                } else {
                    0
                };
                let dr = ri.nearest_within(p, dmax);
                let dt = ti.nearest_within(p, dmax);
                for (n, &d) in ds.iter().enumerate() {
                    acc[n][zone].add(dr.is_some_and(|v| v < d), dt.is_some_and(|v| v < d));
                }
                acc
            },
        )
        .reduce(
            || vec![[ClassCounts::default(); 2]; nd],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    x[0] = x[0].merge(y[0]);
                    x[1] = x[1].merge(y[1]);
                }
                a
            },
        );

    let mut rows = Vec::new();
    for (n, &d) in ds.iter().enumerate() {
        let [sl, int] = counts[n];
        let mut zones = vec![(Zone::Straight, sl)];
        if has_int {
            zones.push((Zone::Intersection, int));
        }
        zones.push((Zone::All, sl.merge(int)));
        for (zone, c) in zones {
            rows.push(MetricsRow {
                zone,
                d,
                counts: c,
                rates: rates(&c),
            });
        }
    }
    Ok(MetricsReport { rows })
}

/// Total-least-squares line: centroid and principal axis.
pub fn fit_line_ls(points: &[Point3]) -> Result<(Point3, Point3)> {
    let pts: Vec<[f64; 3]> = points.iter().map(|p| p.to_array()).collect();
    let pd = principal_direction_of(&pts)?;
    Ok((Point3::from(pd.centroid), Point3::from(pd.v1)))
}

pub fn line_distance(p: Point3, origin: Point3, dir: Point3) -> f64 {
    let d = p - origin;
    (d - dir * d.dot(dir)).norm()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RansacLine {
    pub point: Point3,
    pub dir: Point3,
    pub inliers: Vec<usize>,
}

/// Best two-point hypothesis by inlier count, then refit on its inliers.
pub fn fit_line_ransac(points: &[Point3], iters: usize, inlier_tol: f64, seed: u64) -> Result<RansacLine> {
    if points.len() < 2 {
        return Err(invalid("points", "need at least 2 points"));
    }
    if iters < 1 {
        return Err(invalid("iters", "must be at least 1"));
    }
    if !(inlier_tol.is_finite() && inlier_tol > 0.0) {
        return Err(invalid("inlier_tol", "must be positive"));
    }
    let mut rng = rng_for(seed, "ransac");
    let n = points.len();
    let mut best: Option<Vec<usize>> = None;
    for _ in 0..iters {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let Some(dir) = (points[b] - points[a]).normalized() else { continue };
        let inl: Vec<usize> = (0..n)
            .filter(|&k| line_distance(points[k], points[a], dir) <= inlier_tol)
            .collect();
        if best.as_ref().is_none_or(|b| inl.len() > b.len()) {
            best = Some(inl);
        }
    }
    let inliers = best.ok_or_else(|| Error::Degenerate("every sampled pair coincides".into()))?;
    let sub: Vec<Point3> = inliers.iter().map(|&k| points[k]).collect();
    let (point, dir) = fit_line_ls(&sub)?;
    Ok(RansacLine { point, dir, inliers })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, pts: &[(f64, f64, f64)]) -> Polyline3 {
        Polyline3::new(id, pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect()).unwrap()
    }

    #[test]
    fn distance_examples() {
        let l = vec![line("a", &[(0.0, 0.0, 0.0), (10.0, 0.0, 0.0)])];
        assert_eq!(point_to_polyline_distance(Point3::new(10.0, 0.0, 0.0), &l).unwrap(), 0.0);
        let d = point_to_polyline_distance(Point3::new(5.0, 0.3, 0.0), &l).unwrap();
        assert!((d - 0.3).abs() < 1e-12);
        // beyond the end the segment, not the infinite line, counts
        let d = point_to_polyline_distance(Point3::new(13.0, 4.0, 0.0), &l).unwrap();
        assert!((d - 5.0).abs() < 1e-12);
        assert!(point_to_polyline_distance(Point3::new(0.0, 0.0, 0.0), &[]).is_err());
    }

    #[test]
    fn classify_cases() {
        let truth = vec![line("left", &[(0.0, 0.0, 0.0), (10.0, 0.0, 0.0)])];
        let pts: Vec<Point3> = (0..=10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let mut all = pts.clone();
        all.push(Point3::new(5.0, 3.0, 0.0));
        let cloud = PointCloud::new(all).unwrap();
        let c = classify_points(&cloud, &truth, &truth, 0.4).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (11, 0, 0, 1));
        let c = classify_points(&cloud, &[], &truth, 0.4).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (0, 0, 11, 1));
        // boundary is outside
        let edge = PointCloud::new(vec![Point3::new(5.0, 0.4, 0.0)]).unwrap();
        assert_eq!(classify_points(&edge, &[], &truth, 0.4).unwrap().tn, 1);
        assert!(classify_points(&cloud, &[], &truth, 0.0).is_err());
    }

    #[test]
    fn ratio_rules() {
        let r = rates(&ClassCounts { tp: 90, fn_: 10, ..Default::default() });
        assert_eq!(r.tpr, Some(0.9));
        assert_eq!(r.ppv, Some(1.0));
        assert_eq!(r.tnr, None);
        let r = rates(&ClassCounts { tn: 5, fn_: 5, ..Default::default() });
        assert_eq!(r.ppv, None);
        assert_eq!(r.tpr, Some(0.0));
    }

    #[test]
    fn shifted_result() {
        let truth = vec![line("left", &[(0.0, 0.0, 0.0), (20.0, 0.0, 0.0)])];
        let result = vec![line("r", &[(0.0, 0.3, 0.0), (20.0, 0.3, 0.0)])];
        let pts: Vec<Point3> = (0..200).map(|i| Point3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let cloud = PointCloud::new(pts).unwrap();
        let rep = evaluate(&cloud, &result, &truth, &DEFAULT_D_GRID).unwrap();
        assert_eq!(rep.get(Zone::All, 0.4).unwrap().rates.tpr, Some(1.0));
        assert_eq!(rep.get(Zone::All, 0.2).unwrap().rates.tpr, Some(0.0));
        assert_eq!(rep.rows.len(), 10);
        let csv = rep.to_csv();
        assert!(csv.starts_with("zone,D,TP,TN,FP,FN,TPR,TNR,PPV,NPV\n"));
        assert_eq!(csv.lines().count(), 11);
        assert!(rep.to_table().contains("D=0.4"));
    }

    #[test]
    fn zones_follow_truth_ids() {
        let truth = vec![
            line("left", &[(0.0, 0.0, 0.0), (10.0, 0.0, 0.0)]),
            line("int-left-w", &[(0.0, 5.0, 0.0), (10.0, 5.0, 0.0)]),
        ];
        let cloud = PointCloud::new(vec![Point3::new(1.0, 0.1, 0.0), Point3::new(1.0, 5.1, 0.0)]).unwrap();
        let rep = evaluate(&cloud, &truth[..1], &truth, &[0.4]).unwrap();
        assert_eq!(rep.get(Zone::Straight, 0.4).unwrap().counts.tp, 1);
        assert_eq!(rep.get(Zone::Intersection, 0.4).unwrap().counts.fn_, 1);
        assert_eq!(rep.get(Zone::All, 0.4).unwrap().counts.total(), 2);
    }

    #[test]
    fn ls_fit() {
        let pts: Vec<Point3> = (0..10).map(|i| Point3::new(i as f64, 2.0 * i as f64, 1.0)).collect();
        let (c, d) = fit_line_ls(&pts).unwrap();
        assert!(pts.iter().all(|&p| line_distance(p, c, d) < 1e-9));
        assert!(fit_line_ls(&[Point3::new(1.0, 1.0, 1.0); 3]).is_err());
        // a symmetric outlier pair leaves the fit alone
        let mut with = pts.clone();
        with.push(Point3::new(4.5, 9.0, 6.0));
        with.push(Point3::new(4.5, 9.0, -4.0));
        let (c2, d2) = fit_line_ls(&with).unwrap();
        assert!(c.distance(c2) < 1e-9);
        assert!((d.dot(d2).abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ransac_exact_and_deterministic() {
        let pts: Vec<Point3> = (0..20).map(|i| Point3::new(i as f64, 0.5 * i as f64, 0.0)).collect();
        let r = fit_line_ransac(&pts, 10, 1e-6, 3).unwrap();
        assert_eq!(r.inliers.len(), 20);
        let a = fit_line_ransac(&pts, 1, 0.1, 9).unwrap();
        let b = fit_line_ransac(&pts, 1, 0.1, 9).unwrap();
        assert_eq!(a, b);
        assert!(fit_line_ransac(&pts[..1], 5, 0.1, 0).is_err());
    }
}

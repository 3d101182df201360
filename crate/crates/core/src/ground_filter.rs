//! Ground extraction from the elevation histogram.
//!
//! The histogram peak `m` marks the dominant ground level. The nearest
//! extrema of the smoothed derivative on either side, `A` below and `B`
//! above, are the flanks of that peak, and the band
//! `[m - 2(m - A), m - 2(m - B)]` is kept as ground.

use rustc_hash::FxHashMap;

use crate::cloud_io::{Point3, PointCloud};
use crate::error::{invalid, Error, Result};

pub const DEFAULT_BIN_WIDTH: f64 = 0.05;

/// Extrema smaller than this share of the strongest flank on the same side
/// are treated as count noise.
const SIGNIFICANT_SLOPE: f64 = 0.2;
/// Tiles with fewer points fall back to the global band.
const MIN_TILE_POINTS: usize = 200;
const PAD: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct ElevationHistogram {
    pub z_min: f64,
    pub bin_width: f64,
    /// Point count per bin; bin `i` covers `[z_min + i*w, z_min + (i+1)*w)`,
    /// the last bin is closed.
    pub counts: Vec<u64>,
    /// Derivative of the 3-bin moving average, on the bins padded with
    /// two empty bins on each side.
    pub derivative: Vec<f64>,
}

impl ElevationHistogram {
    pub fn bin_low(&self, i: usize) -> f64 {
        self.z_min + i as f64 * self.bin_width
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Elevation of the centre of padded bin `p`.
    fn padded_center(&self, p: usize) -> f64 {
        self.z_min + (p as f64 - PAD as f64 + 0.5) * self.bin_width
    }
}

pub fn build_histogram(cloud: &PointCloud, bin_width: f64) -> Result<ElevationHistogram> {
    let zs: Vec<f64> = cloud.points().iter().map(|p| p.z).collect();
    histogram_of(&zs, bin_width)
}

fn histogram_of(zs: &[f64], bin_width: f64) -> Result<ElevationHistogram> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(invalid("bin_width", format!("must be positive, got {bin_width}")));
    }
    if zs.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let z_min = zs.iter().copied().fold(f64::INFINITY, f64::min);
    let z_max = zs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = (((z_max - z_min) / bin_width).ceil() as usize).max(1);
    let mut counts = vec![0u64; n];
    for &z in zs {
        let i = (((z - z_min) / bin_width).floor() as usize).min(n - 1);
        counts[i] += 1;
    }

    let len = n + 2 * PAD;
    let c = |i: isize| -> f64 {
        if i < PAD as isize || i >= (n + PAD) as isize {
            0.0
        } else {
            counts[i as usize - PAD] as f64
        }
    };
    let smooth: Vec<f64> = (0..len as isize)
        .map(|i| (c(i - 1) + c(i) + c(i + 1)) / 3.0)
        .collect();
    let s = |i: isize| -> f64 {
        if i < 0 || i >= len as isize {
            0.0
        } else {
            smooth[i as usize]
        }
    };
    let derivative = (0..len as isize).map(|i| (s(i + 1) - s(i - 1)) / 2.0).collect();
    Ok(ElevationHistogram {
        z_min,
        bin_width,
        counts,
        derivative,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundBand {
    pub z_low: f64,
    pub z_high: f64,
    pub m: f64,
    pub a: f64,
    pub b: f64,
}

impl GroundBand {
    pub fn from_extrema(m: f64, a: f64, b: f64) -> Self {
        Self {
            z_low: m - 2.0 * (m - a),
            z_high: m - 2.0 * (m - b),
            m,
            a,
            b,
        }
    }

    /// Band grown so it reaches at least `half_width` on both sides of `m`.
    pub fn widened(self, half_width: f64) -> Self {
        Self {
            z_low: self.z_low.min(self.m - half_width),
            z_high: self.z_high.max(self.m + half_width),
            ..self
        }
    }

    pub fn contains(&self, z: f64) -> bool {
        self.z_low <= z && z <= self.z_high
    }
}

pub fn find_ground_band(hist: &ElevationHistogram) -> Result<GroundBand> {
    let max = *hist.counts.iter().max().ok_or(Error::EmptyCloud)?;
    let mut peaks = hist.counts.iter().enumerate().filter(|&(_, &c)| c == max);
    let (peak, _) = peaks.next().ok_or(Error::NoUniquePeak)?;
    if peaks.next().is_some() {
        return Err(Error::NoUniquePeak);
    }
    let m = hist.bin_low(peak) + 0.5 * hist.bin_width;
    let d = &hist.derivative;
    let p = peak + PAD;
    let at = |i: usize| if i < d.len() { d[i] } else { 0.0 };
    let before = |i: usize| if i == 0 { 0.0 } else { d[i - 1] };

    // rising flank below the peak; ties on a plateau go to the bin nearer m
    let rise = d[..p].iter().copied().fold(0.0, f64::max);
    let a = (0..p)
        .rev()
        .find(|&i| {
            d[i] > 0.0
                && d[i] >= SIGNIFICANT_SLOPE * rise
                && d[i] >= before(i)
                && d[i] > at(i + 1)
        })
        .map(|i| hist.padded_center(i))
        .unwrap_or(m - 3.0 * hist.bin_width);

    let fall = d[p + 1..].iter().copied().fold(0.0, f64::min);
    let b = (p + 1..d.len())
        .find(|&i| {
            d[i] < 0.0
                && d[i] <= SIGNIFICANT_SLOPE * fall
                && d[i] < before(i)
                && d[i] <= at(i + 1)
        })
        .map(|i| hist.padded_center(i))
        .unwrap_or(m + 3.0 * hist.bin_width);

    Ok(GroundBand::from_extrema(m, a, b))
}

pub fn filter_ground(cloud: &PointCloud, band: &GroundBand) -> Result<PointCloud> {
    let kept: Vec<Point3> = cloud
        .points()
        .iter()
        .copied()
        .filter(|p| band.contains(p.z))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyGround {
            z_low: band.z_low,
            z_high: band.z_high,
        });
    }
    PointCloud::new(kept)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundParams {
    pub bin_width: f64,
    /// Lower bound on the band half-width around the peak, meters.
    pub min_half_width: f64,
    /// Compute one band per square tile instead of one global band.
    pub tile_banding: bool,
    pub tile_size: f64,
}

impl Default for GroundParams {
    fn default() -> Self {
        Self {
            bin_width: DEFAULT_BIN_WIDTH,
            min_half_width: 0.3,
            tile_banding: false,
            tile_size: 20.0,
        }
    }
}

fn band_for(zs: &[f64], params: &GroundParams) -> Result<GroundBand> {
    let hist = histogram_of(zs, params.bin_width)?;
    Ok(find_ground_band(&hist)?.widened(params.min_half_width))
}

/// Keeps ground points, globally or tile by tile.
pub fn ground_filter(cloud: &PointCloud, params: &GroundParams) -> Result<PointCloud> {
    let zs: Vec<f64> = cloud.points().iter().map(|p| p.z).collect();
    let global = band_for(&zs, params)?;
    if !params.tile_banding {
        return filter_ground(cloud, &global);
    }
    if !(params.tile_size.is_finite() && params.tile_size > 0.0) {
        return Err(invalid("tile_size", "must be positive"));
    }
    let min = cloud.bounds().min;
    let tile_of = |p: &Point3| {
        (
            ((p.x - min.x) / params.tile_size).floor() as i64,
            ((p.y - min.y) / params.tile_size).floor() as i64,
        )
    };
    let mut tiles: FxHashMap<(i64, i64), Vec<f64>> = FxHashMap::default();
    for p in cloud.points() {
        tiles.entry(tile_of(p)).or_default().push(p.z);
    }
    let bands: FxHashMap<(i64, i64), GroundBand> = tiles
        .into_iter()
        .map(|(key, zs)| {
            let band = if zs.len() >= MIN_TILE_POINTS {
                band_for(&zs, params).unwrap_or(global)
            } else {
                global
            };
            (key, band)
        })
        .collect();
    let kept: Vec<Point3> = cloud
        .points()
        .iter()
        .copied()
        .filter(|p| bands[&tile_of(p)].contains(p.z))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyGround {
            z_low: global.z_low,
            z_high: global.z_high,
        });
    }
    PointCloud::new(kept)
}

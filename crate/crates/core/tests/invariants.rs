//! Property tests for the per-module invariants.

use std::collections::BTreeSet;
use std::path::Path;

use curbline::cloud_io::*;
use curbline::energy::*;
use curbline::evaluation::{classify_points, evaluate, Zone};
use curbline::ground_filter::{build_histogram, filter_ground, find_ground_band, GroundParams};
use curbline::synth::{add_noise, add_scanner_gap, downsample, generate, CurbSpan, SceneSpec, Side, Surface};
use curbline::voxel_grid::{build_grid, VoxelGrid};
use curbline::Error;
use proptest::prelude::*;

fn pt() -> impl Strategy<Value = Point3> {
    (-50.0..50.0f64, -50.0..50.0f64, -5.0..5.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn cloud(min: usize, max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(pt(), min..max).prop_map(|v| PointCloud::new(v).unwrap())
}

/// Points on a 1/64 lattice, so shifts by multiples of 0.25 are exact.
fn lattice_cloud() -> impl Strategy<Value = PointCloud> {
    prop::collection::vec((-400i32..400, -400i32..400, -100i32..100), 1..300).prop_map(|v| {
        PointCloud::new(
            v.into_iter()
                .map(|(x, y, z)| Point3::new(x as f64 / 64.0, y as f64 / 64.0, z as f64 / 64.0))
                .collect(),
        )
        .unwrap()
    })
}

fn shifted(c: &PointCloud, d: Point3) -> PointCloud {
    PointCloud::new(c.points().iter().map(|&p| p + d).collect()).unwrap()
}

fn small_scene() -> SceneSpec {
    SceneSpec {
        road_length: 8.0,
        road_width: 4.0,
        sidewalk_width: 1.0,
        density_road: 400.0,
        density_sidewalk: 400.0,
        ..SceneSpec::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn xyz_round_trip(c in cloud(1, 200)) {
        let back = parse_xyz(&format_xyz(c.points()), Path::new("mem")).unwrap();
        prop_assert_eq!(back.len(), c.len());
        for (a, b) in back.points().iter().zip(c.points()) {
            prop_assert!(a.distance(*b) <= 1e-9);
        }
        // deterministic and order-preserving
        prop_assert_eq!(parse_xyz(&format_xyz(c.points()), Path::new("mem")).unwrap(), back);
    }

    #[test]
    fn polyline_round_trip(lines in prop::collection::vec(prop::collection::vec(pt(), 2..20), 1..5)) {
        let polys: Vec<Polyline3> = lines
            .into_iter()
            .enumerate()
            .filter_map(|(n, v)| Polyline3::new(format!("p{n}"), v).ok())
            .collect();
        let back = parse_polylines(&format_polylines(&polys), Path::new("mem")).unwrap();
        prop_assert_eq!(back.len(), polys.len());
        for (a, b) in back.iter().zip(&polys) {
            prop_assert_eq!(&a.id, &b.id);
            for (p, q) in a.vertices().iter().zip(b.vertices()) {
                prop_assert!(p.distance(*q) <= 1e-9);
            }
        }
    }

    #[test]
    fn grid_conserves_counts(c in cloud(1, 500), vs in 0.05..3.0f64) {
        let g = build_grid(&c, vs).unwrap();
        prop_assert_eq!(g.counts().values().map(|&n| n as usize).sum::<usize>(), c.len());
        prop_assert_eq!(g.total_points(), c.len());
        let h = build_grid(&c, vs).unwrap();
        prop_assert_eq!(g.counts(), h.counts());
        prop_assert_eq!(g.origin(), h.origin());
    }

    #[test]
    fn grid_translation_covariance(c in lattice_cloud(), m in (-8i32..8, -8i32..8, -8i32..8)) {
        let vs = 0.25;
        let d = Point3::new(m.0 as f64 * vs, m.1 as f64 * vs, m.2 as f64 * vs);
        let a = build_grid(&c, vs).unwrap();
        let b = build_grid(&shifted(&c, d), vs).unwrap();
        // indices are relative to the grid origin, which moves with the cloud
        prop_assert_eq!(a.counts(), b.counts());
        prop_assert_eq!(b.origin(), a.origin() + d);
        for v in a.occupied_sorted() {
            prop_assert_eq!(b.voxel_center(v), a.voxel_center(v) + d);
        }
    }

    #[test]
    fn ground_filter_subset_and_idempotent(c in cloud(20, 400)) {
        let band = match build_histogram(&c, 0.05).and_then(|h| find_ground_band(&h)) {
            Ok(b) => b,
            Err(Error::NoUniquePeak) => return Ok(()),
            Err(e) => panic!("{e}"),
        };
        let Ok(once) = filter_ground(&c, &band) else { return Ok(()) };
        let all: BTreeSet<[u64; 3]> = c.points().iter().map(|p| p.to_array().map(f64::to_bits)).collect();
        prop_assert!(once.points().iter().all(|p| all.contains(&p.to_array().map(f64::to_bits))));
        let twice = filter_ground(&once, &band).unwrap();
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn ground_band_follows_vertical_shift(c in lattice_cloud(), dz in -40i32..40) {
        let dz = dz as f64 * 0.25;
        let a = build_histogram(&c, 0.25).and_then(|h| find_ground_band(&h));
        let b = build_histogram(&shifted(&c, Point3::new(0.0, 0.0, dz)), 0.25).and_then(|h| find_ground_band(&h));
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(b.m, a.m + dz);
                prop_assert_eq!(b.z_low, a.z_low + dz);
                prop_assert_eq!(b.z_high, a.z_high + dz);
            }
            (Err(Error::NoUniquePeak), Err(Error::NoUniquePeak)) => {}
            (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
        }
    }

    #[test]
    fn dominant_slab_holds_the_peak(
        base in -3.0..3.0f64,
        slab in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 600..900),
        rest in prop::collection::vec(-10.0..10.0f64, 0..400),
    ) {
        // triangular profile inside the slab so one bin dominates
        let mut pts: Vec<Point3> = slab.iter().map(|&(u, v)| Point3::new(0.0, 0.0, base + 0.25 * (u + v))).collect();
        pts.extend(rest.iter().map(|&z| Point3::new(0.0, 0.0, z)));
        prop_assume!(slab.len() as f64 >= 0.6 * pts.len() as f64);
        let c = PointCloud::new(pts).unwrap();
        match build_histogram(&c, 0.05).and_then(|h| find_ground_band(&h)) {
            Ok(b) => prop_assert!(b.m >= base - 0.05 && b.m <= base + 0.55, "m {} slab {}", b.m, base),
            Err(Error::NoUniquePeak) => {}
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn tensors_are_psd(c in cloud(10, 300)) {
        let g = build_grid(&c, 2.0).unwrap();
        let f = compute_energy(&g, 0.8).unwrap();
        for v in &f.voxels {
            let tr = v.tensor.trace();
            for e in symmetric_eigenvalues(v.tensor) {
                prop_assert!(e >= -1e-9 * tr.max(1.0), "eigenvalue {e} trace {tr}");
            }
            prop_assert!(v.energy >= 0.0);
        }
    }

    #[test]
    fn diagonal_energy_matches_oracle(a in 0.0..1e3f64, b in 0.0..1e3f64, c in 0.0..1e3f64) {
        let fast = energy_fast(&StructureTensor::diagonal(a, b, c));
        let slow = energy_oracle([a, b, c]);
        prop_assert!((fast - slow).abs() <= 1e-9 * slow.abs().max(1e-300));
    }

    #[test]
    fn energy_permutation_symmetry(g in prop::array::uniform3(-5.0..5.0f64), h in prop::array::uniform3(-5.0..5.0f64)) {
        let mut m = StructureTensor::outer(g);
        let n = StructureTensor::outer(h);
        m.xx += n.xx; m.yy += n.yy; m.zz += n.zz; m.xy += n.xy; m.xz += n.xz; m.yz += n.yz;
        // swap x and y, then cycle x -> y -> z
        let swapped = StructureTensor { xx: m.yy, yy: m.xx, zz: m.zz, xy: m.xy, xz: m.yz, yz: m.xz };
        let cycled = StructureTensor { xx: m.zz, yy: m.xx, zz: m.yy, xy: m.xz, xz: m.yz, yz: m.xy };
        let e = energy_fast(&m);
        for p in [swapped, cycled] {
            prop_assert!((energy_fast(&p) - e).abs() <= 1e-12 * e.abs().max(1.0));
        }
    }

    #[test]
    fn oracle_grows_in_third_eigenvalue(a in 1.0..1e3f64, b in 1.0..1e3f64, g in 0.0..1e3f64, dg in 1e-3..1e2f64) {
        prop_assert!(energy_oracle([a, b, g + dg]) > energy_oracle([a, b, g]));
    }

    #[test]
    fn candidates_follow_quarter_turns(
        cells in prop::collection::vec((0i32..6, 0i32..6, 0i32..4, 1usize..6), 8..60),
        axis in 0usize..3,
    ) {
        let mut pts = Vec::new();
        for &(i, j, k, n) in &cells {
            for _ in 0..n {
                pts.push(Point3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5));
            }
        }
        let rot = |p: Point3| match axis {
            0 => Point3::new(p.x, -p.z, p.y),
            1 => Point3::new(p.z, p.y, -p.x),
            _ => Point3::new(-p.y, p.x, p.z),
        };
        let a = PointCloud::new(pts.clone()).unwrap();
        let b = PointCloud::new(pts.into_iter().map(rot).collect()).unwrap();
        let (ga, gb) = (build_grid(&a, 1.0).unwrap(), build_grid(&b, 1.0).unwrap());
        let (mut fa, mut fb) = (compute_energy(&ga, 0.8).unwrap(), compute_energy(&gb, 0.8).unwrap());
        prop_assume!(scale_energy(&mut fa).is_ok() && scale_energy(&mut fb).is_ok());
        // energies agree exactly voxel by voxel
        for v in &fa.voxels {
            let w = gb.index_of(rot(ga.voxel_center(v.index)));
            prop_assert_eq!(fb.get(w).map(|e| e.energy), Some(v.energy));
        }
        // a tie straddling the cut may be resolved by index order
        let mut es: Vec<f64> = fa.voxels.iter().map(|v| v.energy).filter(|&e| e > 0.0).collect();
        es.sort_by(|x, y| y.total_cmp(x));
        let k = (0.2 * es.len() as f64).ceil() as usize;
        prop_assume!(k == es.len() || es[k - 1] != es[k]);
        let ca = select_candidates(&fa, 0.2).unwrap();
        let cb = select_candidates(&fb, 0.2).unwrap();
        let mapped: BTreeSet<_> = ca.indices().iter().map(|&v| gb.index_of(rot(ga.voxel_center(v)))).collect();
        let got: BTreeSet<_> = cb.indices().iter().copied().collect();
        prop_assert_eq!(mapped, got);
    }

    #[test]
    fn classification_partition_and_symmetry(
        c in cloud(1, 300),
        r in prop::collection::vec(pt(), 2..6),
        t in prop::collection::vec(pt(), 2..6),
    ) {
        let (Ok(r), Ok(t)) = (Polyline3::new("r", r), Polyline3::new("t", t)) else { return Ok(()) };
        let (r, t) = (vec![r], vec![t]);
        let mut last = None;
        for d in [0.5, 2.0, 5.0, 10.0, 30.0] {
            let k = classify_points(&c, &r, &t, d).unwrap();
            prop_assert_eq!(k.total(), c.len() as u64);
            let s = classify_points(&c, &t, &r, d).unwrap();
            prop_assert_eq!((s.tp, s.tn, s.fp, s.fn_), (k.tp, k.tn, k.fn_, k.fp));
            if let Some((tp, pos)) = last {
                prop_assert!(k.tp >= tp && k.tp + k.fp >= pos);
            }
            last = Some((k.tp, k.tp + k.fp));
        }
        let rep = evaluate(&c, &r, &t, &[0.5, 5.0]).unwrap();
        for row in &rep.rows {
            let rates = row.rates;
            for v in [rates.tpr, rates.tnr, rates.ppv, rates.npv].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}

#[test]
fn sobel_responds_zero_on_constant_blocks() {
    let mut pts = Vec::new();
    for i in 0..7 {
        for j in 0..7 {
            for k in 0..7 {
                for _ in 0..3 {
                    pts.push(Point3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5));
                }
            }
        }
    }
    let g = build_grid(&PointCloud::new(pts).unwrap(), 1.0).unwrap();
    let s = sobel_cubes();
    let o = g.index_of(Point3::new(0.5, 0.5, 0.5));
    for cube in [&s.x, &s.y, &s.z] {
        let f = cube.map(|p| p.map(|r| r.map(|v| v as f64)));
        let resp = curbline::energy::convolve_3x3x3(&g, &f);
        for i in 1..6 {
            for j in 1..6 {
                for k in 1..6 {
                    assert_eq!(resp[&o.offset(i, j, k)], 0.0);
                }
            }
        }
    }
}

#[test]
fn gaussian_kernel_sums_to_one() {
    for sigma in [0.3, 0.8, 1.0, 2.5, 10.0] {
        let k = gaussian_kernel(sigma).unwrap();
        let sum: f64 = k.weights.iter().flatten().flatten().sum();
        assert!((sum - 1.0).abs() <= 1e-12, "sigma {sigma}: {sum}");
    }
}

#[test]
fn synth_is_pure_and_truthful() {
    let spec = small_scene();
    let a = generate(&spec).unwrap();
    let b = generate(&spec).unwrap();
    assert_eq!(a.cloud, b.cloud);
    assert_eq!(a.truth, b.truth);
    let half = spec.road_width / 2.0;
    let mut face = 0;
    for (p, s) in a.cloud.points().iter().zip(&a.surfaces) {
        if *s == Surface::CurbFace {
            face += 1;
            assert!((p.y.abs() - half).abs() <= 1e-9, "{p:?}");
            assert!(p.z >= -1e-9 && p.z <= spec.curb_height + 1e-9);
        }
    }
    assert!(face > 100);
    assert_eq!(add_noise(&a, 2.0).unwrap().truth, a.truth);
    assert_eq!(downsample(&a, 0.1).unwrap().truth, a.truth);
    assert_eq!(add_scanner_gap(&a, 0.0, 0.1).unwrap().truth, a.truth);
    let occluded = generate(&SceneSpec {
        occlusions: vec![CurbSpan { start: 3.0, length: 1.0, side: Side::Both }],
        ..spec.clone()
    })
    .unwrap();
    assert_eq!(occluded.truth, a.truth);
    assert_eq!(add_noise(&a, 2.0).unwrap().cloud, add_noise(&a, 2.0).unwrap().cloud);
}

#[test]
fn zones_split_all() {
    let spec = SceneSpec {
        intersection: true,
        corner_radius: 1.0,
        ..small_scene()
    };
    let s = generate(&spec).unwrap();
    let rep = evaluate(&s.cloud, &s.truth, &s.truth, &[0.2]).unwrap();
    let all = rep.get(Zone::All, 0.2).unwrap().counts;
    let sl = rep.get(Zone::Straight, 0.2).unwrap().counts;
    let int = rep.get(Zone::Intersection, 0.2).unwrap().counts;
    assert_eq!(all.tp, sl.tp + int.tp);
    assert_eq!(all.total(), sl.total() + int.total());
}

#[test]
fn ground_params_default_band_keeps_flat_scene() {
    let s = generate(&small_scene()).unwrap();
    let kept = curbline::ground_filter::ground_filter(&s.cloud, &GroundParams::default()).unwrap();
    assert_eq!(kept.len(), s.cloud.len());
    let g: VoxelGrid = build_grid(&kept, 0.04).unwrap();
    assert_eq!(g.total_points(), kept.len());
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use curbline::cloud_io::{read_polylines, read_xyz, write_polylines, write_xyz, Point3, PointCloud, Polyline3};
use tempfile::TempDir;

const SPEC: &str = "road_length = 10.0\nseed = 3\n";

fn curbline(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curbline"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn scene(dir: &Path) {
    fs::write(dir.join("s.toml"), SPEC).unwrap();
    ok(&curbline(dir, &["synth", "s.toml", "--out", "scene"]));
}

fn metric(csv: &str, zone: &str, d: &str, col: usize) -> f64 {
    csv.lines()
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|f| f[0] == zone && f[1] == d)
        .map(|f| f[col].parse().unwrap())
        .unwrap()
}

#[test]
fn synth_writes_scene_and_is_deterministic() {
    let t = TempDir::new().unwrap();
    scene(t.path());
    ok(&curbline(t.path(), &["synth", "s.toml", "--out", "again"]));
    let truth = read_polylines(t.path().join("scene/truth.txt")).unwrap();
    assert_eq!(truth.len(), 2);
    assert!(read_xyz(t.path().join("scene/cloud.xyz")).unwrap().len() > 1000);
    for f in ["cloud.xyz", "truth.txt", "scene.toml", "config.toml"] {
        let a = fs::read(t.path().join("scene").join(f)).unwrap();
        let b = fs::read(t.path().join("again").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
}

#[test]
fn invalid_spec_exits_one_and_names_field() {
    let t = TempDir::new().unwrap();
    fs::write(
        t.path().join("bad.toml"),
        "road_length = 10.0\nocclusions = [{ start = 9.5, length = 1.0 }]\n",
    )
    .unwrap();
    let o = curbline(t.path(), &["synth", "bad.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("occlusions"));

    fs::write(t.path().join("typo.toml"), "road_lenght = 10.0\n").unwrap();
    let o = curbline(t.path(), &["synth", "typo.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("road_lenght"));
}

#[test]
fn unknown_config_key_and_bad_flag_exit_one() {
    let t = TempDir::new().unwrap();
    scene(t.path());
    fs::write(t.path().join("c.toml"), "[energy]\nsigmaa = 1.0\n").unwrap();
    let o = curbline(t.path(), &["extract", "scene/cloud.xyz", "--config", "c.toml"]);
    assert_eq!(o.status.code(), Some(1));
    let o = curbline(t.path(), &["extract", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_file_is_a_runtime_failure() {
    let t = TempDir::new().unwrap();
    let o = curbline(t.path(), &["extract", "nope.xyz"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn extract_refine_eval_chain() {
    let t = TempDir::new().unwrap();
    scene(t.path());
    let d = t.path();
    ok(&curbline(d, &["extract", "scene/cloud.xyz", "--out", "ex", "--dump-energy"]));
    let cands = read_xyz(d.join("ex/candidates.xyz")).unwrap();
    assert!(!cands.is_empty());
    let energy = fs::read_to_string(d.join("ex/energy.csv")).unwrap();
    assert!(energy.starts_with("i,j,k,Gx,Gy,Gz,E,E_scaled\n"));
    assert!(energy.lines().count() > cands.len());

    ok(&curbline(d, &["refine", "scene/cloud.xyz", "ex/candidates.xyz", "--out", "rf"]));
    let curbs = read_polylines(d.join("rf/curbs.txt")).unwrap();
    assert_eq!(curbs.len(), 2);
    let regions = fs::read_to_string(d.join("rf/regions.csv")).unwrap();
    assert!(regions.starts_with("region_id,rho,q,s1,s2,s3,step,cost\n"));

    ok(&curbline(
        d,
        &["eval", "rf/curbs.txt", "scene/truth.txt", "scene/cloud.xyz", "--out", "ev"],
    ));
    let csv = fs::read_to_string(d.join("ev/metrics.csv")).unwrap();
    for dv in ["0.4", "0.2", "0.12", "0.08", "0.04"] {
        assert!(metric(&csv, "All", dv, 6) >= 0.0);
    }
    assert!(metric(&csv, "All", "0.4", 6) > 0.9);
}

#[test]
fn tiny_cloud_is_rejected() {
    let t = TempDir::new().unwrap();
    let pts: Vec<Point3> = (0..50).map(|i| Point3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
    write_xyz(t.path().join("tiny.xyz"), &PointCloud::new(pts).unwrap()).unwrap();
    let o = curbline(t.path(), &["extract", "tiny.xyz"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn noise_candidates_give_empty_result() {
    let t = TempDir::new().unwrap();
    scene(t.path());
    let one = PointCloud::new(vec![Point3::new(5.0, 0.0, 0.0)]).unwrap();
    write_xyz(t.path().join("noise.xyz"), &one).unwrap();
    ok(&curbline(t.path(), &["refine", "scene/cloud.xyz", "noise.xyz", "--out", "rf"]));
    assert_eq!(fs::read_to_string(t.path().join("rf/curbs.txt")).unwrap(), "");
    assert!(read_polylines(t.path().join("rf/curbs.txt")).unwrap().is_empty());
}

fn shifted(lines: &[Polyline3], dy: f64) -> Vec<Polyline3> {
    lines
        .iter()
        .map(|l| {
            let s = if l.vertices()[0].y > 0.0 { dy } else { -dy };
            let v = l.vertices().iter().map(|p| Point3::new(p.x, p.y + s, p.z)).collect();
            Polyline3::new(l.id.clone(), v).unwrap()
        })
        .collect()
}

#[test]
fn eval_perfect_and_shifted() {
    let t = TempDir::new().unwrap();
    scene(t.path());
    let d = t.path();
    ok(&curbline(d, &["eval", "scene/truth.txt", "scene/truth.txt", "scene/cloud.xyz", "--out", "same"]));
    let csv = fs::read_to_string(d.join("same/metrics.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.starts_with("All,")).count(), 5);
    for dv in ["0.4", "0.2", "0.12", "0.08", "0.04"] {
        assert_eq!(metric(&csv, "All", dv, 6), 1.0);
        assert_eq!(metric(&csv, "All", dv, 8), 1.0);
    }

    // 0.3 m toward the road
    let truth = read_polylines(d.join("scene/truth.txt")).unwrap();
    write_polylines(d.join("moved.txt"), &shifted(&truth, -0.3)).unwrap();
    ok(&curbline(d, &["eval", "moved.txt", "scene/truth.txt", "scene/cloud.xyz", "--out", "moved"]));
    let csv = fs::read_to_string(d.join("moved/metrics.csv")).unwrap();
    // sidewalk points beyond the moved band are lost even at D = 0.4
    let wide = metric(&csv, "All", "0.4", 6);
    assert!(wide > 0.7 && wide < 1.0, "{wide}");
    assert_eq!(metric(&csv, "All", "0.2", 6), 0.0);
}

#[test]
fn pipeline_end_to_end_is_reproducible() {
    let t = TempDir::new().unwrap();
    let d = t.path();
    fs::write(d.join("s.toml"), SPEC).unwrap();
    ok(&curbline(d, &["pipeline", "s.toml", "--out", "a", "--seed", "5", "--threads", "2"]));
    ok(&curbline(d, &["pipeline", "s.toml", "--out", "b", "--seed", "5"]));
    for f in ["metrics.csv", "curbs.txt", "candidates.xyz", "config.toml", "scene.toml"] {
        let x = fs::read(d.join("a").join(f)).unwrap();
        let y = fs::read(d.join("b").join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
    let echoed = fs::read_to_string(d.join("a/config.toml")).unwrap();
    assert!(echoed.contains("seed = 5"));
    assert!(fs::read_to_string(d.join("a/scene.toml")).unwrap().contains("seed = 5"));

    // rerun from the echoed config on the written cloud
    ok(&curbline(
        d,
        &["pipeline", "a/cloud.xyz", "--truth", "a/truth.txt", "--config", "a/config.toml", "--out", "c"],
    ));
    assert_eq!(
        fs::read(d.join("a/metrics.csv")).unwrap(),
        fs::read(d.join("c/metrics.csv")).unwrap()
    );
    assert_eq!(
        fs::read(d.join("a/curbs.txt")).unwrap(),
        fs::read(d.join("c/curbs.txt")).unwrap()
    );
}

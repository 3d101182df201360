//! `curbline` command-line driver.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use curbline::cloud_io::{read_polylines, read_xyz, write_polylines, write_xyz, PointCloud, Polyline3};
use curbline::config::PipelineConfig;
use curbline::energy::{compute_energy, scale_energy, EnergyField};
use curbline::evaluation::evaluate;
use curbline::lcpm::Refinement;
use curbline::pipeline::{self, candidates_from_centers};
use curbline::synth::{generate, SceneSpec};
use curbline::Error;

#[derive(Parser, Debug)]
#[command(name = "curbline", version, about = "Curb extraction from mobile LiDAR point clouds")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML run configuration; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the config and of scene specs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Also write per-voxel energies to energy.csv.
    #[arg(long, global = true)]
    dump_energy: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic scene from a TOML scene spec.
    Synth { spec: PathBuf },
    /// Select candidate voxels from a point file.
    Extract { cloud: PathBuf },
    /// Link candidates into curb polylines.
    Refine { cloud: PathBuf, candidates: PathBuf },
    /// Score result polylines against truth on a point file.
    Eval {
        result: PathBuf,
        truth: PathBuf,
        cloud: PathBuf,
    },
    /// Run everything on a scene spec (.toml) or a point file.
    Pipeline {
        input: PathBuf,
        /// Truth polylines, for point-file input.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        let code = match err.downcast_ref::<Error>() {
            Some(e) if e.is_validation() => 1,
            _ => 2,
        };
        Failure { code, err }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn validation(msg: String) -> Failure {
    Failure {
        code: 1,
        err: anyhow::anyhow!(msg),
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let g = &cli.global;
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot set up the thread pool")?;
    }
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    fs::create_dir_all(&g.out).with_context(|| format!("cannot create {}", g.out.display()))?;
    write(&g.out.join("config.toml"), &cfg.to_toml())?;

    match &cli.cmd {
        Cmd::Synth { spec } => {
            let spec = load_spec(spec, g.seed)?;
            synth(&spec, &g.out)?;
        }
        Cmd::Extract { cloud } => {
            let cloud = read_xyz(cloud)?;
            let ex = pipeline::extract(&cloud, &cfg)?;
            if ex.candidates.is_empty() {
                return Err(anyhow::anyhow!("no candidate voxels").into());
            }
            let centers: Vec<_> = ex.candidates.indices().iter().map(|&v| ex.grid.voxel_center(v)).collect();
            write_xyz(g.out.join("candidates.xyz"), &PointCloud::new(centers)?)?;
            if g.dump_energy {
                write(&g.out.join("energy.csv"), &energy_csv(&ex.field))?;
            }
            println!("{} candidate voxels of {}", ex.candidates.len(), ex.grid.occupied_len());
        }
        Cmd::Refine { cloud, candidates } => {
            let cloud = read_xyz(cloud)?;
            let centers = read_xyz(candidates)?;
            let (ground, grid) = pipeline::prepare(&cloud, &cfg)?;
            let mut field = compute_energy(&grid, cfg.energy.sigma)?;
            scale_energy(&mut field)?;
            if g.dump_energy {
                write(&g.out.join("energy.csv"), &energy_csv(&field))?;
            }
            let cands = candidates_from_centers(&grid, centers.points());
            let refinement = pipeline::refine(&ground, &grid, &cands, Some(&field), &cfg)?;
            write_refinement(&g.out, &refinement)?;
        }
        Cmd::Eval { result, truth, cloud } => {
            let result = read_polylines(result)?;
            let truth = read_polylines(truth)?;
            let cloud = read_xyz(cloud)?;
            let report = evaluate(&cloud, &result, &truth, &cfg.eval.d_grid)?;
            write(&g.out.join("metrics.csv"), &report.to_csv())?;
            print!("{}", report.to_table());
        }
        Cmd::Pipeline { input, truth } => {
            let is_spec = input.extension().is_some_and(|e| e == "toml");
            let (cloud, truth) = if is_spec {
                if truth.is_some() {
                    return Err(validation("--truth only applies to point-file input".into()));
                }
                let spec = load_spec(input, g.seed)?;
                let scene = synth(&spec, &g.out)?;
                (scene.0, Some(scene.1))
            } else {
                let cloud = read_xyz(input)?;
                let truth = truth.as_ref().map(read_polylines).transpose()?;
                (cloud, truth)
            };
            let run = pipeline::run(&cloud, truth.as_deref(), &cfg)?;
            let ex = &run.extraction;
            let centers: Vec<_> = ex.candidates.indices().iter().map(|&v| ex.grid.voxel_center(v)).collect();
            if !centers.is_empty() {
                write_xyz(g.out.join("candidates.xyz"), &PointCloud::new(centers)?)?;
            }
            if g.dump_energy {
                write(&g.out.join("energy.csv"), &energy_csv(&ex.field))?;
            }
            write_refinement(&g.out, &run.refinement)?;
            if let Some(m) = &run.metrics {
                write(&g.out.join("metrics.csv"), &m.to_csv())?;
                print!("{}", m.to_table());
            }
        }
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn load_spec(path: &Path, seed: Option<u64>) -> std::result::Result<SceneSpec, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut spec = SceneSpec::from_toml(&text)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(spec)
}

/// Writes cloud.xyz, truth.txt and the effective spec.
fn synth(spec: &SceneSpec, out: &Path) -> std::result::Result<(PointCloud, Vec<Polyline3>), Failure> {
    let scene = generate(spec)?;
    write_xyz(out.join("cloud.xyz"), &scene.cloud)?;
    write_polylines(out.join("truth.txt"), &scene.truth)?;
    write(&out.join("scene.toml"), &spec.to_toml())?;
    println!("{} points, {} truth polylines", scene.cloud.len(), scene.truth.len());
    Ok((scene.cloud, scene.truth))
}

fn write_refinement(out: &Path, r: &Refinement) -> CmdResult {
    write_polylines(out.join("curbs.txt"), &r.polylines)?;
    let mut csv = String::from("region_id,rho,q,s1,s2,s3,step,cost\n");
    for g in &r.regions {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{} {} {},{}",
            g.region_id, g.rho, g.q, g.s[0], g.s[1], g.s[2], g.step[0], g.step[1], g.step[2], g.cost
        );
    }
    write(&out.join("regions.csv"), &csv)?;
    println!("{} curb polylines", r.polylines.len());
    Ok(())
}

fn energy_csv(field: &EnergyField) -> String {
    let mut s = String::from("i,j,k,Gx,Gy,Gz,E,E_scaled\n");
    for v in &field.voxels {
        let [gx, gy, gz] = v.gradient;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            v.index.i, v.index.j, v.index.k, gx, gy, gz, v.energy, v.scaled
        );
    }
    s
}

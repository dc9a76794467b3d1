//! Subcommand implementations. Each writes its artifacts under the output
//! directory and a short summary to stdout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use sdrlmi::analysis::{self, DecreaseOracle};
use sdrlmi::data::{self, ConsistencySet, ExperimentData};
use sdrlmi::linalg::Mat;
use sdrlmi::sim::{self, Controller, Disturbance, SimConfig};
use sdrlmi::synth::{self, Mode, SynthesisResult};
use sdrlmi::{Error, Result, FORMAT_VERSION};

use crate::config::{System, ToolkitConfig};

pub struct SynthArgs {
    pub mode: Option<Mode>,
    pub radius: Option<f64>,
    pub u_bar: Option<Vec<f64>>,
    pub data: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub struct AnalyzeArgs {
    pub result: PathBuf,
    pub data: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub skip_sublevel: bool,
}

pub struct SimulateArgs {
    pub result: Option<PathBuf>,
    pub x0: Option<Vec<f64>>,
    pub steps: Option<usize>,
    pub disturbance: Option<f64>,
    pub seed: Option<u64>,
    pub phase_portrait: bool,
    pub out: Option<PathBuf>,
}

pub struct GendataArgs {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

fn out_dir(cfg: &ToolkitConfig, out: Option<PathBuf>) -> Result<PathBuf> {
    let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn fmt_mat(m: &Mat) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| format!("[{}]", r.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", ")))
        .collect();
    format!("[{}]", rows.join(", "))
}

/// The experiment data for a data mode: read from a manifest, or
/// generated from `[data.generate]` on the true system.
fn load_data(cfg: &ToolkitConfig, sys: &System, manifest: Option<&Path>, seed: Option<u64>) -> Result<ExperimentData> {
    let lib = sys.library()?;
    let manifest = manifest.map(Path::to_path_buf).or_else(|| cfg.data.manifest.clone());
    match manifest {
        Some(path) => {
            let (experiments, file_theta) = data::read_dataset(&path)?;
            let theta = cfg.theta()?.unwrap_or(file_theta);
            println!("data: {} experiments from {}", experiments.len(), path.display());
            data::assemble(&experiments, lib, &theta)
        }
        None => {
            let spec = cfg.experiment_spec(seed)?;
            let generated = sim::generate_experiments(sys.dynamics()?, &spec)?;
            println!("data: generated {} experiments of {} steps (seed {})", spec.count, spec.length, spec.seed);
            data::assemble(&generated.experiments, lib, &generated.theta)
        }
    }
}

fn print_result(res: &SynthesisResult) {
    println!("mode: {}", res.mode);
    println!("K = {}", fmt_mat(&res.k));
    println!("r = {}, r0 = {:.6}, eps = {:.6e}", res.r, res.r0, res.eps);
    println!(
        "solver: {} {:?}, {} iterations, {:.2} s, {} vertices{}",
        res.solve.backend,
        res.solve.status,
        res.solve.iterations,
        res.solve.solve_time_s,
        res.solve.vertices,
        if res.solve.sound_bounds { "" } else { " (sampled bounds, not sound)" }
    );
    println!(
        "certificate re-check: {} ({} blocks, max relative {:.2e})",
        if res.certificate.passed() { "passed" } else { "FAILED" },
        res.certificate.blocks,
        res.certificate.max_relative
    );
    if let Some(p) = &res.posterior {
        println!("posterior check: {} ({} members, max relative {:.2e})", if p.passed { "passed" } else { "FAILED" }, p.samples, p.max_relative);
    }
}

pub fn synth(cfg: &ToolkitConfig, args: SynthArgs) -> Result<()> {
    let sys = cfg.system()?;
    let mode = args.mode.unwrap_or(cfg.synthesis.mode);
    let r = match args.radius {
        Some(r) => r,
        None => cfg.radius()?,
    };
    let u_bar = args.u_bar.or_else(|| cfg.synthesis.u_bar.clone());
    let opts = cfg.synth_options();
    let levels = || u_bar.as_deref().ok_or_else(|| Error::Config(format!("mode {mode} needs saturation levels (--u-bar or synthesis.u_bar)")));
    let res = match mode {
        Mode::Model => synth::synthesize_model(sys.model()?, r, &opts)?,
        Mode::ModelSat => synth::synthesize_model_saturated(sys.model()?, r, levels()?, &opts)?,
        Mode::Data | Mode::DataSat => {
            let data = load_data(cfg, &sys, args.data.as_deref(), args.seed)?;
            let rank = data::check_full_row_rank(&data);
            println!("rank check: full row rank, sigma_min = {:.3e}", rank.sigma_min);
            let set = ConsistencySet::new(&data)?;
            if let System::Library { truth: Some(t), .. } = &sys {
                let member = set.contains(&t.truth.stacked())?;
                println!("true coefficients in consistency set: {}", if member { "yes" } else { "no" });
            }
            let levels = if mode == Mode::DataSat { Some(levels()?) } else { None };
            synth::synthesize_data_with_set(sys.library()?, &set, r, levels, &opts)?
        }
    };
    print_result(&res);
    let dir = out_dir(cfg, args.out)?;
    let path = dir.join("result.json");
    res.write(&path)?;
    println!("result: {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct SublevelDoc<'a> {
    format_version: u32,
    gamma: f64,
    box_limited: bool,
    coarse: bool,
    extrapolated: bool,
    grid: &'a analysis::GridSpec,
    union: &'a synth::RoaDescription,
    samples: usize,
    decreasing: usize,
}

#[derive(Serialize)]
struct RobustnessDoc<'a> {
    format_version: u32,
    #[serde(flatten)]
    certificate: &'a analysis::RobustnessCertificate,
}

pub fn analyze(cfg: &ToolkitConfig, args: AnalyzeArgs) -> Result<()> {
    let sys = cfg.system()?;
    let res = SynthesisResult::read(&args.result)?;
    let dir = out_dir(cfg, args.out)?;
    let grid = cfg.analysis.ball_grid();
    let opts = cfg.synth_options();
    let set = if res.mode.is_data() {
        Some(ConsistencySet::new(&load_data(cfg, &sys, args.data.as_deref(), args.seed)?)?)
    } else {
        None
    };
    let check = match &set {
        Some(set) => synth::recheck_data(&res, sys.library()?, set, &opts)?,
        None => synth::recheck_model(&res, sys.model()?, &opts)?,
    };
    println!(
        "certificate re-check: {} ({} blocks, max relative {:.2e})",
        if check.passed() { "passed" } else { "FAILED" },
        check.blocks,
        check.max_relative
    );
    if !check.passed() {
        return Err(Error::Certificate(format!("stored certificate fails re-substitution at {}", check.worst)));
    }

    let cert = match (&set, res.mode) {
        (Some(set), _) => Some(analysis::robustness_data(&res, set, sys.library()?, &grid)?),
        (None, Mode::Model) => Some(analysis::robustness_model(&res, sys.model()?, &grid)?),
        // the disturbance bound is stated for the unsaturated loop
        (None, _) => None,
    };
    if let Some(cert) = &cert {
        println!(
            "robustness: delta_x0 = {:.6}, delta_w = {:.6e}, gamma_Acl {} {:.6}, mu_w = {:.9}",
            cert.delta_x0,
            cert.delta_w,
            if cert.gamma_is_upper_bound { "<=" } else { "=" },
            cert.gamma_acl,
            cert.mu_w
        );
        write_json(&dir.join("robustness.json"), &RobustnessDoc { format_version: FORMAT_VERSION, certificate: cert })?;
    }

    if args.skip_sublevel {
        return Ok(());
    }
    if res.n() > analysis::GridSpec::MAX_DIM {
        println!("sublevel ROA: skipped, grid search supports n <= {}", analysis::GridSpec::MAX_DIM);
        return Ok(());
    }
    let lib;
    let dynamics;
    let oracle = match &set {
        Some(set) => {
            lib = sys.library()?;
            DecreaseOracle::DataBound { set, lib }
        }
        None => {
            dynamics = sys.dynamics()?;
            DecreaseOracle::Model(dynamics)
        }
    };
    let roa = analysis::sublevel_roa(&res, oracle, &cfg.analysis.sublevel_grid(res.r))?;
    println!(
        "sublevel ROA: gamma = {:.6}{}{}",
        roa.gamma,
        if roa.box_limited { " (limited by the grid extent)" } else { "" },
        if roa.coarse { " (coarse grid)" } else { "" }
    );
    write_json(
        &dir.join("sublevel.json"),
        &SublevelDoc {
            format_version: FORMAT_VERSION,
            gamma: roa.gamma,
            box_limited: roa.box_limited,
            coarse: roa.coarse,
            extrapolated: res.mode == Mode::DataSat,
            grid: &roa.grid,
            union: &roa.union,
            samples: roa.samples.len(),
            decreasing: roa.samples.iter().filter(|s| s.v < 0.0).count(),
        },
    )?;
    analysis::write_decrease_csv(&roa, &dir.join("decrease.csv"))?;
    if res.n() >= 2 {
        analysis::write_boundary_csv(&roa, &dir.join("boundary.csv"), cfg.analysis.boundary_points)?;
    }
    println!("artifacts: {}", dir.display());
    Ok(())
}

pub fn simulate(cfg: &ToolkitConfig, args: SimulateArgs) -> Result<()> {
    let sys = cfg.system()?;
    let dynamics = sys.dynamics()?;
    let res = args.result.as_deref().map(SynthesisResult::read).transpose()?;
    let gain = match &res {
        Some(r) => r.k.clone(),
        None => Mat::zeros(dynamics.m(), dynamics.n()),
    };
    let u_bar = res.as_ref().and_then(|r| r.u_bar.clone());
    let dir = out_dir(cfg, args.out)?;
    let s = &cfg.simulation;
    if args.phase_portrait {
        let half = s.portrait_half_width.or(cfg.synthesis.radius).unwrap_or(1.0);
        let samples = sim::phase_portrait(dynamics, &gain, u_bar.as_deref(), half, s.portrait_density)?;
        let path = dir.join("portrait.csv");
        sim::write_portrait_csv(&samples, &path)?;
        println!("phase portrait: {} arrows -> {}", samples.len(), path.display());
        return Ok(());
    }
    let x0 = args.x0.or_else(|| s.x0.clone()).ok_or_else(|| Error::Config("simulation needs an initial state (--x0 or simulation.x0)".into()))?;
    let mut sim_cfg = SimConfig::new(x0, Controller::Gain(gain), args.steps.unwrap_or(s.steps));
    if let Some(b) = u_bar {
        sim_cfg = sim_cfg.with_saturation(b);
    }
    if let Some(bound) = args.disturbance.or(s.disturbance) {
        sim_cfg = sim_cfg.with_disturbance(Disturbance::Uniform { bound }, args.seed.unwrap_or(s.seed));
    }
    let traj = sim::rollout(dynamics, &sim_cfg)?;
    let path = dir.join("trajectory.csv");
    traj.write_csv(&path)?;
    let peak = traj.norms().into_iter().fold(0.0, f64::max);
    println!("status: {:?}, max |x| = {:.6}, final |x| = {:.3e}", traj.status, peak, sim::norm(traj.final_state()));
    println!("trajectory: {}", path.display());
    Ok(())
}

pub fn gendata(cfg: &ToolkitConfig, args: GendataArgs) -> Result<()> {
    let sys = cfg.system()?;
    let spec = cfg.experiment_spec(args.seed)?;
    let generated = sim::generate_experiments(sys.dynamics()?, &spec)?;
    let dir = out_dir(cfg, args.out)?;
    let manifest = data::write_dataset(&dir, &generated.experiments, &generated.theta)?;
    println!(
        "generated {} experiments of {} steps (seed {}, {} discarded), theta margin {:.3e}",
        spec.count, spec.length, spec.seed, generated.discarded, generated.theta_margin
    );
    println!("manifest: {}", manifest.display());
    Ok(())
}

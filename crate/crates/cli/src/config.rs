//! TOML run configuration and the built-in examples expressed in it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sdrlmi::analysis::{BallGrid, GridSpec};
use sdrlmi::expr::BoundMode;
use sdrlmi::fixtures::{example1, example3, quadrotor};
use sdrlmi::linalg::{self, Mat};
use sdrlmi::lmi::blocks::Objective;
use sdrlmi::lmi::SolverSettings;
use sdrlmi::model::{BasisLibrary, Dynamics, GroundTruth, LibraryModel, SdrModel};
use sdrlmi::sim::{ExperimentSpec, InputSignal, NoiseSpec};
use sdrlmi::synth::{Mode, SynthOptions};
use sdrlmi::{Error, Result, FORMAT_VERSION};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolkitConfig {
    pub format_version: u32,
    pub model: ModelSection,
    #[serde(default)]
    pub synthesis: SynthesisSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Either explicit row-major entries `a`, `b` or a basis library where
/// `library_a[j]` spans column `j` of `A(x)` (likewise `library_b`), with
/// optional true coefficients for simulation.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library_a: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library_b: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSection {
    pub e_a: Vec<Vec<f64>>,
    pub e_b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    Feasibility,
    MaxEps,
    Spread { c1: f64, c2: f64 },
}

impl From<ObjectiveConfig> for Objective {
    fn from(o: ObjectiveConfig) -> Self {
        match o {
            ObjectiveConfig::Feasibility => Objective::Feasibility,
            ObjectiveConfig::MaxEps => Objective::MaximizeEps,
            ObjectiveConfig::Spread { c1, c2 } => Objective::Spread { c1, c2 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    Interval,
    Grid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub max_iter: u32,
    pub tol_feas: f64,
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_limit: Option<f64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverSettings::default();
        SolverSection { max_iter: s.max_iter, tol_feas: s.tol_feas, tol_gap_abs: s.tol_gap_abs, tol_gap_rel: s.tol_gap_rel, time_limit: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisSection {
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_bar: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveConfig>,
    pub bounds: BoundKind,
    pub grid_per_axis: usize,
    pub grid_inflation: f64,
    pub vertex_cap: usize,
    pub preserve_radius: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_cap: Option<f64>,
    pub posterior_samples: usize,
    pub seed: u64,
    pub solver: SolverSection,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        let d = SynthOptions::default();
        SynthesisSection {
            mode: Mode::Model,
            radius: None,
            u_bar: None,
            objective: None,
            bounds: BoundKind::Interval,
            grid_per_axis: 201,
            grid_inflation: 0.02,
            vertex_cap: d.vertex_cap,
            preserve_radius: d.preserve_radius,
            gamma_cap: None,
            posterior_samples: d.posterior_samples,
            seed: d.seed,
            solver: SolverSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Dataset manifest; relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Overrides the manifest's energy bound; required for generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenerateSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    None,
    EnergyBound,
    Whitened,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InputConfig {
    Uniform { bound: f64 },
    Sinusoids { dt: f64, omega: Vec<f64>, phase: Vec<f64>, amplitude: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    pub count: usize,
    pub length: usize,
    pub x0_bound: f64,
    pub input: InputConfig,
    pub noise: NoiseKind,
    #[serde(default = "default_fill")]
    pub noise_fill: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_limit: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_fill() -> f64 {
    0.99
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub ball_per_axis: usize,
    pub ball_random: usize,
    pub inflation: f64,
    /// Sublevel grid half-width; defaults to twice the design radius.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sublevel_half_width: Option<f64>,
    pub sublevel_per_axis: usize,
    pub boundary_points: usize,
    pub seed: u64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let g = BallGrid::default();
        AnalysisSection {
            ball_per_axis: g.per_axis,
            ball_random: g.random,
            inflation: g.inflation,
            sublevel_half_width: None,
            sublevel_per_axis: 201,
            boundary_points: 256,
            seed: g.seed,
        }
    }
}

impl AnalysisSection {
    pub fn ball_grid(&self) -> BallGrid {
        BallGrid { per_axis: self.ball_per_axis, random: self.ball_random, seed: self.seed, inflation: self.inflation }
    }

    pub fn sublevel_grid(&self, r: f64) -> GridSpec {
        GridSpec::new(self.sublevel_half_width.unwrap_or(2.0 * r), self.sublevel_per_axis)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub steps: usize,
    /// Per-component bound of a uniform additive disturbance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<f64>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub portrait_half_width: Option<f64>,
    pub portrait_density: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection { x0: None, steps: 200, disturbance: None, seed: 0, portrait_half_width: None, portrait_density: 21 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

/// The system a configuration describes.
pub enum System {
    Model(SdrModel),
    Library { lib: BasisLibrary, truth: Option<LibraryModel> },
}

impl System {
    /// The dynamics used for simulation and model-based analysis.
    pub fn dynamics(&self) -> Result<&dyn Dynamics> {
        match self {
            System::Model(m) => Ok(m),
            System::Library { truth: Some(t), .. } => Ok(t),
            System::Library { truth: None, .. } => {
                Err(Error::Config("simulation needs model entries or [model.truth] coefficients".into()))
            }
        }
    }

    pub fn library(&self) -> Result<&BasisLibrary> {
        match self {
            System::Library { lib, .. } => Ok(lib),
            System::Model(_) => Err(Error::Config("data modes need a basis library (model.library_a, model.library_b)".into())),
        }
    }

    pub fn model(&self) -> Result<&SdrModel> {
        match self {
            System::Model(m) => Ok(m),
            System::Library { .. } => Err(Error::Config("model modes need explicit entries (model.a, model.b)".into())),
        }
    }
}

fn grid_refs(g: &[Vec<String>]) -> Vec<Vec<&str>> {
    g.iter().map(|r| r.iter().map(String::as_str).collect()).collect()
}

fn rows_to_mat(rows: &[Vec<f64>], what: &str) -> Result<Mat> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Config(format!("{what} must be a non-empty rectangular array")));
    }
    Ok(Mat::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn expr_rows(g: &[Vec<sdrlmi::expr::Expr>]) -> Vec<Vec<String>> {
    g.iter().map(|r| r.iter().map(ToString::to_string).collect()).collect()
}

impl ToolkitConfig {
    pub fn from_toml(src: &str) -> Result<Self> {
        let cfg: ToolkitConfig = toml::from_str(src).map_err(|e| Error::Config(format!("malformed config: {e}")))?;
        if cfg.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported config format_version {}", cfg.format_version)));
        }
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are resolved against
    /// its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let src = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&src)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(m) = &cfg.data.manifest {
            if m.is_relative() {
                cfg.data.manifest = Some(base.join(m));
            }
        }
        if cfg.output.dir.is_relative() {
            cfg.output.dir = base.join(&cfg.output.dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.system()?;
        if let Some(r) = self.synthesis.radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("synthesis.radius = {r} must be positive")));
            }
        }
        if let Some(theta) = self.theta()? {
            if theta.nrows() != theta.ncols() || linalg::lambda_min(&theta) < -1e-12 * (1.0 + theta.norm()) {
                return Err(Error::Config("data.theta must be a symmetric positive semidefinite matrix".into()));
            }
        }
        if let Some(m) = &self.data.manifest {
            if !m.is_file() {
                return Err(Error::Config(format!("data.manifest {} does not exist", m.display())));
            }
        }
        Ok(())
    }

    pub fn system(&self) -> Result<System> {
        let m = &self.model;
        match (&m.a, &m.b, &m.library_a, &m.library_b) {
            (Some(a), Some(b), None, None) => {
                if m.truth.is_some() {
                    return Err(Error::Config("model.truth only applies to a basis library".into()));
                }
                let (ga, gb) = (grid_refs(a), grid_refs(b));
                let ra: Vec<&[&str]> = ga.iter().map(Vec::as_slice).collect();
                let rb: Vec<&[&str]> = gb.iter().map(Vec::as_slice).collect();
                Ok(System::Model(SdrModel::parse(&ra, &rb, self.synthesis.radius.unwrap_or(1.0))?))
            }
            (None, None, Some(la), Some(lb)) => {
                let (ga, gb) = (grid_refs(la), grid_refs(lb));
                let ra: Vec<&[&str]> = ga.iter().map(Vec::as_slice).collect();
                let rb: Vec<&[&str]> = gb.iter().map(Vec::as_slice).collect();
                let lib = BasisLibrary::parse(&ra, &rb)?;
                let truth = match &m.truth {
                    Some(t) => Some(LibraryModel::new(
                        lib.clone(),
                        GroundTruth { e_a: rows_to_mat(&t.e_a, "model.truth.e_a")?, e_b: rows_to_mat(&t.e_b, "model.truth.e_b")? },
                    )?),
                    None => None,
                };
                Ok(System::Library { lib, truth })
            }
            _ => Err(Error::Config(
                "model needs exactly one of {a, b} (explicit entries) or {library_a, library_b} (basis library)".into(),
            )),
        }
    }

    pub fn theta(&self) -> Result<Option<Mat>> {
        self.data.theta.as_deref().map(|t| rows_to_mat(t, "data.theta")).transpose()
    }

    pub fn radius(&self) -> Result<f64> {
        self.synthesis.radius.ok_or_else(|| Error::Config("synthesis.radius is required".into()))
    }

    pub fn synth_options(&self) -> SynthOptions {
        let s = &self.synthesis;
        SynthOptions {
            objective: s.objective.map(Into::into),
            bound_mode: match s.bounds {
                BoundKind::Interval => BoundMode::IntervalBox,
                BoundKind::Grid => BoundMode::Grid { per_axis: s.grid_per_axis, inflation: s.grid_inflation },
            },
            vertex_cap: s.vertex_cap,
            preserve_radius: s.preserve_radius,
            gamma_cap: s.gamma_cap,
            posterior_samples: s.posterior_samples,
            seed: s.seed,
            solver: SolverSettings {
                max_iter: s.solver.max_iter,
                tol_feas: s.solver.tol_feas,
                tol_gap_abs: s.solver.tol_gap_abs,
                tol_gap_rel: s.solver.tol_gap_rel,
                time_limit: s.solver.time_limit,
                verbose: false,
            },
            ..SynthOptions::default()
        }
    }

    /// The experiment specification for data generation; `seed` overrides
    /// the configured one.
    pub fn experiment_spec(&self, seed: Option<u64>) -> Result<ExperimentSpec> {
        let g = self.data.generate.as_ref().ok_or_else(|| Error::Config("data generation needs a [data.generate] section".into()))?;
        let theta = self.theta()?;
        let noise = match (g.noise, theta) {
            (NoiseKind::None, _) => NoiseSpec::None,
            (_, None) => return Err(Error::Config("noisy data generation needs data.theta".into())),
            (NoiseKind::EnergyBound, Some(theta)) => NoiseSpec::EnergyBound { theta, fill: g.noise_fill },
            (NoiseKind::Whitened, Some(theta)) => NoiseSpec::Whitened { theta, fill: g.noise_fill },
        };
        Ok(ExperimentSpec {
            count: g.count,
            length: g.length,
            x0_bound: g.x0_bound,
            input: match &g.input {
                InputConfig::Uniform { bound } => InputSignal::Uniform { bound: *bound },
                InputConfig::Sinusoids { dt, omega, phase, amplitude } => {
                    InputSignal::Sinusoids { dt: *dt, omega: omega.clone(), phase: phase.clone(), amplitude: amplitude.clone() }
                }
            },
            noise,
            state_limit: g.state_limit,
            seed: seed.unwrap_or(g.seed),
        })
    }

    /// A built-in example by name.
    pub fn example(name: &str) -> Result<Self> {
        match name {
            "example1" => Ok(Self::example1()),
            "example3" => Ok(Self::library_example(
                example3::library_model(),
                example3::theta(),
                &example3::experiment_spec(7),
                example3::RADIUS,
                Some(vec![2.0]),
                SimulationSection { x0: Some(vec![-0.4, -0.4]), ..Default::default() },
            )),
            "quadrotor" => Ok(Self::library_example(
                quadrotor::library_model(),
                quadrotor::theta(),
                &quadrotor::experiment_spec(7),
                quadrotor::RADIUS,
                None,
                SimulationSection { x0: Some(quadrotor::test_initial_state().to_vec()), steps: 5000, ..Default::default() },
            )),
            _ => Err(Error::Config(format!("unknown example {name:?}; expected example1, example3 or quadrotor"))),
        }
    }

    fn example1() -> Self {
        let m = example1::model();
        ToolkitConfig {
            format_version: FORMAT_VERSION,
            model: ModelSection { a: Some(expr_rows(&m.a)), b: Some(expr_rows(&m.b)), ..Default::default() },
            synthesis: SynthesisSection { radius: Some(example1::RADIUS), u_bar: Some(vec![4.0]), ..Default::default() },
            data: DataSection::default(),
            analysis: AnalysisSection { sublevel_half_width: Some(3.0), ..Default::default() },
            simulation: SimulationSection { x0: Some(vec![0.7, -0.7]), ..Default::default() },
            output: OutputSection::default(),
        }
    }

    fn library_example(
        lm: LibraryModel,
        theta: Mat,
        spec: &ExperimentSpec,
        radius: f64,
        u_bar: Option<Vec<f64>>,
        simulation: SimulationSection,
    ) -> Self {
        let (noise, fill) = match &spec.noise {
            NoiseSpec::None => (NoiseKind::None, default_fill()),
            NoiseSpec::EnergyBound { fill, .. } => (NoiseKind::EnergyBound, *fill),
            NoiseSpec::Whitened { fill, .. } => (NoiseKind::Whitened, *fill),
        };
        let input = match &spec.input {
            InputSignal::Uniform { bound } => InputConfig::Uniform { bound: *bound },
            InputSignal::Sinusoids { dt, omega, phase, amplitude } => {
                InputConfig::Sinusoids { dt: *dt, omega: omega.clone(), phase: phase.clone(), amplitude: amplitude.clone() }
            }
        };
        ToolkitConfig {
            format_version: FORMAT_VERSION,
            model: ModelSection {
                library_a: Some(expr_rows(&lm.lib.xi_a)),
                library_b: Some(expr_rows(&lm.lib.xi_b)),
                truth: Some(TruthSection { e_a: mat_to_rows(&lm.truth.e_a), e_b: mat_to_rows(&lm.truth.e_b) }),
                ..Default::default()
            },
            synthesis: SynthesisSection { mode: Mode::Data, radius: Some(radius), u_bar, ..Default::default() },
            data: DataSection {
                manifest: None,
                theta: Some(mat_to_rows(&theta)),
                generate: Some(GenerateSection {
                    count: spec.count,
                    length: spec.length,
                    x0_bound: spec.x0_bound,
                    input,
                    noise,
                    noise_fill: fill,
                    state_limit: spec.state_limit,
                    seed: spec.seed,
                }),
            },
            analysis: AnalysisSection::default(),
            simulation,
            output: OutputSection::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples_round_trip_through_toml() {
        for name in ["example1", "example3", "quadrotor"] {
            let cfg = ToolkitConfig::example(name).unwrap();
            let back = ToolkitConfig::from_toml(&cfg.to_toml()).unwrap();
            back.validate().unwrap();
            assert_eq!(back.to_toml(), cfg.to_toml(), "{name}");
        }
    }

    #[test]
    fn example_systems_match_fixtures() {
        let cfg = ToolkitConfig::example("example1").unwrap();
        let sys = cfg.system().unwrap();
        let (a, _) = sys.dynamics().unwrap().matrices(&[0.3, -0.2]).unwrap();
        let (a0, _) = example1::model().matrices(&[0.3, -0.2]).unwrap();
        assert_eq!(a, a0);
        let cfg = ToolkitConfig::example("example3").unwrap();
        assert_eq!(cfg.experiment_spec(None).unwrap().count, 10);
        assert!(cfg.system().unwrap().library().is_ok());
    }

    #[test]
    fn both_model_forms_are_rejected() {
        let mut cfg = ToolkitConfig::example("example1").unwrap();
        cfg.model.library_a = Some(vec![vec!["1".into()]]);
        cfg.model.library_b = Some(vec![vec!["1".into()]]);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.model = ModelSection::default();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn malformed_and_indefinite_inputs_are_config_errors() {
        assert!(matches!(ToolkitConfig::from_toml("format_version = 1\n[model\n"), Err(Error::Config(_))));
        assert!(matches!(ToolkitConfig::from_toml("format_version = 7\n[model]\n"), Err(Error::Config(_))));
        let mut cfg = ToolkitConfig::example("example3").unwrap();
        cfg.data.theta = Some(vec![vec![1.0, 0.0], vec![0.0, -1.0]]);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.data.theta = None;
        cfg.data.manifest = Some(PathBuf::from("/nonexistent/manifest.json"));
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}

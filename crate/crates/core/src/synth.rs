//! Controller synthesis in the four modes and the region-of-attraction
//! radius.
//!
//! Every returned result has been re-substituted into the LMIs it claims
//! to satisfy, evaluated with dense eigenvalue routines independently of
//! the solver's own certificate.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ConsistencySet, ExperimentData};
use crate::expr::BoundMode;
use crate::linalg::{self, row_major, Mat, Vector};
use crate::lmi::blocks::{
    self, apply_objective, data_saturation_block, data_stability_block, input_bound_block, model_saturation_block,
    model_stability_block, DataForm, Floors, LyapunovVars, Objective, SaturationVars,
};
use crate::lmi::{AffMat, ClarabelBackend, SdpProblem, SdpSolution, SolveStatus, SolverSettings};
use crate::model::{build_basis_vertices, build_model_vertices, BasisLibrary, SdrModel, DEFAULT_VERTEX_CAP};
use crate::{Error, Result, FORMAT_VERSION};

/// Relative tolerance of the certificate re-check.
pub const CERTIFICATE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Model,
    ModelSat,
    Data,
    DataSat,
}

impl Mode {
    pub fn is_saturated(self) -> bool {
        matches!(self, Mode::ModelSat | Mode::DataSat)
    }

    pub fn is_data(self) -> bool {
        matches!(self, Mode::Data | Mode::DataSat)
    }

    pub fn default_objective(self) -> Objective {
        match self {
            Mode::Model | Mode::Data => Objective::MaximizeEps,
            Mode::ModelSat => Objective::Spread { c1: 1.0, c2: 0.1 },
            Mode::DataSat => Objective::Spread { c1: 0.0, c2: 2.0 },
        }
    }

    /// Plain model mode is homogeneous in `(Γ, Y, ε_Γ)`, so maximizing
    /// `ε_Γ` needs a normalization; the other modes are bounded and only
    /// get a generous safety cap.
    pub fn default_gamma_cap(self) -> f64 {
        match self {
            Mode::Model => 1.0,
            _ => 1e6,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Model => "model",
            Mode::ModelSat => "model-sat",
            Mode::Data => "data",
            Mode::DataSat => "data-sat",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "model" => Ok(Mode::Model),
            "model-sat" => Ok(Mode::ModelSat),
            "data" => Ok(Mode::Data),
            "data-sat" => Ok(Mode::DataSat),
            _ => Err(Error::Config(format!("unknown mode {s:?}; expected model, model-sat, data or data-sat"))),
        }
    }
}

/// `min{r, sqrt(λmax·λmin / (λmax² − ε·λmin))·r}`.
pub fn roa_radius(gamma: &Mat, eps: f64, r: f64) -> Result<f64> {
    let lmin = linalg::lambda_min(gamma);
    let lmax = linalg::lambda_max(gamma);
    if !(lmin > 0.0) {
        return Err(Error::Certificate(format!("Gamma is not positive definite (lambda_min = {lmin:e})")));
    }
    if !(eps > 0.0) {
        return Err(Error::Certificate(format!("eps = {eps:e} must be positive")));
    }
    let denom = lmax * lmax - eps * lmin;
    if !(denom > 0.0) {
        return Err(Error::Certificate(format!(
            "ROA radius undefined: lambda_max^2 - eps*lambda_min = {denom:e} is not positive"
        )));
    }
    Ok(r.min((lmax * lmin / denom).sqrt() * r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoaSet {
    /// `B_{r0}`.
    Ball,
    /// `B_{r0} ∩ {xᵀPx ≤ level}`.
    BallAndEllipsoid,
    /// `B_{r0} ∪ {xᵀPx ≤ sublevel}`.
    BallOrSublevel,
    /// `(B_{r0} ∩ {xᵀPx ≤ level}) ∪ {xᵀPx ≤ sublevel}`.
    BallAndEllipsoidOrSublevel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoaDescription {
    pub radius: f64,
    #[serde(with = "row_major::option")]
    pub ellipsoid: Option<Mat>,
    pub level: Option<f64>,
    /// Level of a numerically certified sublevel set of the same `P`.
    #[serde(default)]
    pub sublevel: Option<f64>,
    pub set: RoaSet,
}

impl RoaDescription {
    pub fn ball(radius: f64) -> Self {
        RoaDescription { radius, ellipsoid: None, level: None, sublevel: None, set: RoaSet::Ball }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let in_ball = crate::sim::norm(x) <= self.radius;
        let below = |level: Option<f64>| match (&self.ellipsoid, level) {
            (Some(p), Some(level)) => linalg::quad_form(p, &Vector::from_column_slice(x)) <= level,
            _ => false,
        };
        match self.set {
            RoaSet::Ball => in_ball,
            RoaSet::BallAndEllipsoid => in_ball && below(self.level),
            RoaSet::BallOrSublevel => in_ball || below(self.sublevel),
            RoaSet::BallAndEllipsoidOrSublevel => (in_ball && below(self.level)) || below(self.sublevel),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthOptions {
    /// `None` selects [`Mode::default_objective`].
    pub objective: Option<Objective>,
    pub floors: Floors,
    pub vertex_cap: usize,
    pub bound_mode: BoundMode,
    pub solver: SolverSettings,
    /// `Γ ⪯ cap·I`; `None` selects [`Mode::default_gamma_cap`].
    pub gamma_cap: Option<f64>,
    /// Write the assembled problem here before solving.
    pub dump: Option<PathBuf>,
    /// Consistency-set members sampled for the a-posteriori check in data
    /// modes.
    pub posterior_samples: usize,
    pub seed: u64,
    /// Plain modes: first solve with `tI ⪰ Γ ⪰ (t − ε_Γ/2)I`, which keeps
    /// `r0 = r`, and drop the constraint only if that is infeasible.
    pub preserve_radius: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            objective: None,
            floors: Floors::default(),
            vertex_cap: DEFAULT_VERTEX_CAP,
            bound_mode: BoundMode::IntervalBox,
            solver: SolverSettings::default(),
            gamma_cap: None,
            dump: None,
            posterior_samples: 50,
            seed: 0,
            preserve_radius: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub backend: String,
    pub status: SolveStatus,
    pub iterations: u32,
    pub solve_time_s: f64,
    pub objective: f64,
    pub max_relative_violation: f64,
    pub vertices: usize,
    pub constraints: usize,
    pub variables: usize,
    pub sound_bounds: bool,
    pub radius_preserving: bool,
}

/// Outcome of re-substituting the certificate into its LMIs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateCheck {
    pub blocks: usize,
    /// Largest `λ_max` of a block written in `⪯ 0` form.
    pub max_lambda: f64,
    /// Largest `λ_max / (1 + ‖block‖_F)`.
    pub max_relative: f64,
    pub worst: String,
}

impl CertificateCheck {
    pub fn passed(&self) -> bool {
        self.max_relative <= CERTIFICATE_TOL
    }
}

/// Closed-loop Lyapunov check over sampled members of the consistency set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorCheck {
    pub samples: usize,
    pub max_relative: f64,
    /// Largest QMI residual of a sample; nonpositive up to tolerance when
    /// every sample is a member.
    pub max_membership: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub format_version: u32,
    pub mode: Mode,
    #[serde(with = "row_major")]
    pub gamma: Mat,
    #[serde(with = "row_major")]
    pub y: Mat,
    pub eps: f64,
    #[serde(with = "row_major")]
    pub k: Mat,
    pub r: f64,
    pub r0: f64,
    /// `P = Γ⁻¹`; the certified ellipsoid in saturated modes is `xᵀPx ≤ 1`.
    #[serde(with = "row_major")]
    pub p: Mat,
    pub u_bar: Option<Vec<f64>>,
    #[serde(with = "row_major::option")]
    pub w: Option<Mat>,
    #[serde(with = "row_major::option")]
    pub s: Option<Mat>,
    /// `L = WΓ⁻¹`.
    #[serde(with = "row_major::option")]
    pub l: Option<Mat>,
    pub roa: RoaDescription,
    pub solve: SolveReport,
    pub certificate: CertificateCheck,
    pub posterior: Option<PosteriorCheck>,
}

impl SynthesisResult {
    pub fn n(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn m(&self) -> usize {
        self.y.nrows()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: SynthesisResult = serde_json::from_str(s)?;
        if r.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "result format_version {} is not supported (expected {FORMAT_VERSION})",
                r.format_version
            )));
        }
        Ok(r)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// `V(x) = xᵀ P x`.
    pub fn lyapunov(&self, x: &[f64]) -> f64 {
        linalg::quad_form(&self.p, &Vector::from_column_slice(x))
    }

    pub fn sat_values(&self) -> Option<(&Mat, &Mat, &[f64])> {
        match (&self.w, &self.s, &self.u_bar) {
            (Some(w), Some(s), Some(u)) => Some((w, s, u.as_slice())),
            _ => None,
        }
    }
}

/// Values of a candidate certificate.
struct Certificate<'a> {
    gamma: &'a Mat,
    y: &'a Mat,
    eps: f64,
    sat: Option<(&'a Mat, &'a Mat, &'a [f64])>,
}

impl<'a> Certificate<'a> {
    fn of(res: &'a SynthesisResult) -> Self {
        Certificate { gamma: &res.gamma, y: &res.y, eps: res.eps, sat: res.sat_values() }
    }

    fn lyapunov(&self) -> (LyapunovVars, Vec<f64>) {
        blocks::lyapunov_point(self.gamma, self.y, self.eps)
    }

    fn saturation(&self) -> Option<(SaturationVars, Vec<f64>)> {
        self.sat.map(|(w, s, _)| {
            let diag: Vec<f64> = s.diagonal().iter().copied().collect();
            blocks::saturation_point(self.gamma, self.y, self.eps, w, &diag)
        })
    }
}

/// Running maximum over `⪯ 0` blocks.
#[derive(Default)]
struct Tally {
    blocks: usize,
    max_lambda: f64,
    max_relative: f64,
    worst: String,
}

impl Tally {
    fn new() -> Self {
        Tally { max_lambda: f64::NEG_INFINITY, max_relative: f64::NEG_INFINITY, ..Default::default() }
    }

    fn nsd(&mut self, name: impl Into<String>, m: &Mat) {
        let lam = linalg::lambda_max(&linalg::symmetrize(m));
        let rel = lam / (1.0 + m.norm());
        self.blocks += 1;
        self.max_lambda = self.max_lambda.max(lam);
        if rel > self.max_relative {
            self.max_relative = rel;
            self.worst = name.into();
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        self.blocks += other.blocks;
        self.max_lambda = self.max_lambda.max(other.max_lambda);
        if other.max_relative > self.max_relative {
            self.max_relative = other.max_relative;
            self.worst = other.worst;
        }
        self
    }

    fn finish(self) -> CertificateCheck {
        CertificateCheck { blocks: self.blocks, max_lambda: self.max_lambda, max_relative: self.max_relative, worst: self.worst }
    }
}

fn input_bound_tally(cert: &Certificate<'_>, tally: &mut Tally) {
    if let (Some((sv, sx)), Some((_, _, u_bar))) = (cert.saturation(), cert.sat) {
        for (i, &ub) in u_bar.iter().enumerate() {
            tally.nsd(format!("input bound {}", i + 1), &-input_bound_block(&sv, i, ub).eval(&sx));
        }
    }
}

fn check_model(cert: &Certificate<'_>, vertices: &[Mat]) -> Result<CertificateCheck> {
    let mut tally = Tally::new();
    input_bound_tally(cert, &mut tally);
    let per_vertex = match cert.saturation() {
        None => {
            let (v, x) = cert.lyapunov();
            vertices
                .par_iter()
                .enumerate()
                .map(|(k, g)| {
                    let mut t = Tally::new();
                    t.nsd(format!("stability vertex {k}"), &model_stability_block(g, &v)?.eval(&x));
                    Ok(t)
                })
                .collect::<Result<Vec<_>>>()?
        }
        Some((sv, sx)) => vertices
            .par_iter()
            .enumerate()
            .map(|(k, g)| {
                let mut t = Tally::new();
                t.nsd(format!("saturated stability vertex {k}"), &model_saturation_block(g, &sv)?.eval(&sx));
                Ok(t)
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(per_vertex.into_iter().fold(tally, Tally::merge).finish())
}

fn check_data(cert: &Certificate<'_>, set: &ConsistencySet, vertices: &[Mat]) -> Result<CertificateCheck> {
    let mut tally = Tally::new();
    input_bound_tally(cert, &mut tally);
    let sat = cert.saturation();
    let (v, x) = cert.lyapunov();
    let per_vertex = vertices
        .par_iter()
        .enumerate()
        .map(|(k, q)| {
            let mut t = Tally::new();
            for form in [DataForm::Literal, DataForm::Conditioned] {
                let m = match &sat {
                    None => data_stability_block(set, q, &v, form)?.eval(&x),
                    Some((sv, sx)) => data_saturation_block(set, q, sv, form)?.eval(sx),
                };
                t.nsd(format!("data vertex {k} ({form:?})"), &m);
            }
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_vertex.into_iter().fold(tally, Tally::merge).finish())
}

/// Re-substitutes a model-mode result into every vertex LMI.
pub fn recheck_model(res: &SynthesisResult, model: &SdrModel, opts: &SynthOptions) -> Result<CertificateCheck> {
    let verts = build_model_vertices(model, res.r, opts.bound_mode, opts.vertex_cap)?;
    check_model(&Certificate::of(res), &verts.vertices)
}

/// Re-substitutes a data-mode result into every basis-vertex LMI, in both
/// the literal and the conditioned form.
pub fn recheck_data(res: &SynthesisResult, lib: &BasisLibrary, set: &ConsistencySet, opts: &SynthOptions) -> Result<CertificateCheck> {
    let verts = build_basis_vertices(lib, res.r, opts.bound_mode, opts.vertex_cap)?;
    check_data(&Certificate::of(res), set, &verts.vertices)
}

/// Samples `count` members `Z = Zc + Q^{1/2} Υ A^{-1/2}` (`‖Υ‖ ≤ 1`, a
/// third of them on the boundary) and checks the closed-loop Lyapunov LMI
/// with `G = Z·Q_v` at every basis vertex.
pub fn posterior_check(
    res: &SynthesisResult,
    set: &ConsistencySet,
    vertices: &[Mat],
    count: usize,
    seed: u64,
) -> Result<PosteriorCheck> {
    let cert = Certificate::of(res);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let members: Vec<Mat> =
        (0..count).map(|i| set.member(&set.random_upsilon(&mut rng, 1.0, i % 3 == 0))).collect::<Result<_>>()?;
    let mut max_membership = f64::NEG_INFINITY;
    for z in &members {
        max_membership = max_membership.max(set.qmi_lambda_max(z)? / set.scale);
    }
    let (v, x) = cert.lyapunov();
    let sat = cert.saturation();
    let tallies = members
        .par_iter()
        .enumerate()
        .map(|(i, z)| {
            let mut t = Tally::new();
            for (k, q) in vertices.iter().enumerate() {
                let g = z * q;
                let m = match &sat {
                    None => model_stability_block(&g, &v)?.eval(&x),
                    Some((sv, sx)) => model_saturation_block(&g, sv)?.eval(sx),
                };
                t.nsd(format!("member {i} vertex {k}"), &m);
            }
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    let check = tallies.into_iter().fold(Tally::new(), Tally::merge);
    Ok(PosteriorCheck {
        samples: count,
        max_relative: check.max_relative,
        max_membership,
        passed: check.max_relative <= CERTIFICATE_TOL && max_membership <= crate::data::PSD_TOL,
    })
}

fn finish_problem(p: &mut SdpProblem, v: &LyapunovVars, sat: Option<&SaturationVars>, mode: Mode, opts: &SynthOptions) -> Result<()> {
    blocks::add_floors(p, v, &opts.floors)?;
    if let Some(sv) = sat {
        blocks::add_sector_floor(p, sv, &opts.floors)?;
    }
    blocks::add_gamma_cap(p, v, opts.gamma_cap.unwrap_or(mode.default_gamma_cap()))?;
    apply_objective(p, v, opts.objective.unwrap_or(mode.default_objective()))
}

fn run_solver(p: &SdpProblem, opts: &SynthOptions, what: &str) -> Result<SdpSolution> {
    if let Some(path) = &opts.dump {
        p.dump(std::io::BufWriter::new(std::fs::File::create(path)?))?;
    }
    p.solve(&ClarabelBackend::new(opts.solver.clone()))?.into_result(what)
}

/// `K = YΓ⁻¹`, checked by `KΓ = Y`.
fn gain(gamma: &Mat, y: &Mat) -> Result<(Mat, Mat)> {
    let p = linalg::spd_inverse(gamma).ok_or_else(|| Error::Certificate("Gamma is not positive definite".into()))?;
    let k = y * &p;
    let err = (&k * gamma - y).norm() / y.norm().max(f64::MIN_POSITIVE);
    if y.norm() > 0.0 && err > 1e-8 {
        return Err(Error::Numerical(format!("K Gamma = Y holds only to relative error {err:e}")));
    }
    Ok((k, linalg::symmetrize(&p)))
}

fn check_levels(u_bar: &[f64], m: usize) -> Result<()> {
    if u_bar.len() != m || u_bar.iter().any(|u| !u.is_finite() || *u < 0.0) {
        return Err(Error::Config(format!("saturation levels {u_bar:?} must be {m} finite nonnegative values")));
    }
    Ok(())
}

struct Assembled {
    p: SdpProblem,
    v: LyapunovVars,
    sat: Option<SaturationVars>,
    radius_preserving: bool,
}

fn assemble(
    n: usize,
    m: usize,
    vertices: &[Mat],
    u_bar: Option<&[f64]>,
    mode: Mode,
    opts: &SynthOptions,
    radius_preserving: bool,
    block: impl Fn(&Mat, Option<&SaturationVars>, &LyapunovVars) -> Result<AffMat> + Sync,
) -> Result<Assembled> {
    let mut p = SdpProblem::new();
    let (v, sat) = match u_bar {
        None => (LyapunovVars::new(&mut p, n, m), None),
        Some(levels) => {
            check_levels(levels, m)?;
            let sv = SaturationVars::new(&mut p, n, m);
            for (i, &ub) in levels.iter().enumerate() {
                p.psd(format!("input bound {}", i + 1), input_bound_block(&sv, i, ub))?;
            }
            (sv.base.clone(), Some(sv))
        }
    };
    let built: Vec<AffMat> = vertices.par_iter().map(|g| block(g, sat.as_ref(), &v)).collect::<Result<_>>()?;
    for (k, b) in built.into_iter().enumerate() {
        p.nsd(format!("vertex {k}"), b)?;
    }
    if radius_preserving {
        blocks::add_radius_preservation(&mut p, &v)?;
    }
    finish_problem(&mut p, &v, sat.as_ref(), mode, opts)?;
    Ok(Assembled { p, v, sat, radius_preserving })
}

fn solve_with_fallback(
    mode: Mode,
    opts: &SynthOptions,
    what: &str,
    build: impl Fn(bool) -> Result<Assembled>,
) -> Result<(Assembled, SdpSolution)> {
    if opts.preserve_radius && !mode.is_saturated() {
        // near-infeasibility of the preserving variant often surfaces as a
        // numerical failure or a vanishing margin rather than a certificate
        let a = build(true)?;
        match run_solver(&a.p, opts, what) {
            Ok(sol) if a.v.values(&sol.x).eps > 0.0 => return Ok((a, sol)),
            Ok(_) | Err(Error::Infeasible(_)) | Err(Error::Numerical(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let a = build(false)?;
    let sol = run_solver(&a.p, opts, what)?;
    Ok((a, sol))
}

fn build_result(
    mode: Mode,
    a: &Assembled,
    sol: &SdpSolution,
    r: f64,
    u_bar: Option<&[f64]>,
    vertices: usize,
    sound: bool,
) -> Result<SynthesisResult> {
    let vals = a.v.values(&sol.x);
    let (k, p) = gain(&vals.gamma, &vals.y)?;
    let r0 = roa_radius(&vals.gamma, vals.eps, r)?;
    let (w, s, l) = match &a.sat {
        Some(sv) => {
            let w = sol.value(&sv.w);
            let l = &w * &p;
            (Some(w), Some(sol.value(&sv.s)), Some(l))
        }
        None => (None, None, None),
    };
    let roa = if mode.is_saturated() {
        RoaDescription {
            radius: r0,
            ellipsoid: Some(p.clone()),
            level: Some(1.0),
            sublevel: None,
            set: RoaSet::BallAndEllipsoid,
        }
    } else {
        RoaDescription::ball(r0)
    };
    Ok(SynthesisResult {
        format_version: FORMAT_VERSION,
        mode,
        gamma: vals.gamma,
        y: vals.y,
        eps: vals.eps,
        k,
        r,
        r0,
        p,
        u_bar: u_bar.map(<[f64]>::to_vec),
        w,
        s,
        l,
        roa,
        solve: SolveReport {
            backend: sol.backend.clone(),
            status: sol.status,
            iterations: sol.iterations,
            solve_time_s: sol.solve_time_s,
            objective: sol.objective,
            max_relative_violation: sol.max_relative_violation,
            vertices,
            constraints: a.p.constraints().len(),
            variables: a.p.num_vars(),
            sound_bounds: sound,
            radius_preserving: a.radius_preserving,
        },
        certificate: CertificateCheck { blocks: 0, max_lambda: 0.0, max_relative: 0.0, worst: String::new() },
        posterior: None,
    })
}

fn require(check: CertificateCheck, what: &str) -> Result<CertificateCheck> {
    if !check.passed() {
        return Err(Error::Certificate(format!(
            "{what}: re-substitution fails at {} (relative lambda_max {:e})",
            check.worst, check.max_relative
        )));
    }
    Ok(check)
}

fn synthesize_from_model(model: &SdrModel, r: f64, u_bar: Option<&[f64]>, opts: &SynthOptions) -> Result<SynthesisResult> {
    let mode = if u_bar.is_some() { Mode::ModelSat } else { Mode::Model };
    let verts = build_model_vertices(model, r, opts.bound_mode, opts.vertex_cap)?;
    let what = format!("{mode} synthesis");
    let (assembled, sol) = solve_with_fallback(mode, opts, &what, |preserve| {
        assemble(model.n, model.m, &verts.vertices, u_bar, mode, opts, preserve, |g, sat, v| match sat {
            None => model_stability_block(g, v),
            Some(sv) => model_saturation_block(g, sv),
        })
    })?;
    let mut res = build_result(mode, &assembled, &sol, r, u_bar, verts.len(), verts.is_sound())?;
    res.certificate = require(check_model(&Certificate::of(&res), &verts.vertices)?, &what)?;
    Ok(res)
}

/// Plain state feedback `u = Kx` certified on `B_{r0}`.
pub fn synthesize_model(model: &SdrModel, r: f64, opts: &SynthOptions) -> Result<SynthesisResult> {
    synthesize_from_model(model, r, None, opts)
}

/// State feedback through `sat(·)` at levels `u_bar`, certified on
/// `B_{r0} ∩ {xᵀΓ⁻¹x ≤ 1}`.
pub fn synthesize_model_saturated(model: &SdrModel, r: f64, u_bar: &[f64], opts: &SynthOptions) -> Result<SynthesisResult> {
    synthesize_from_model(model, r, Some(u_bar), opts)
}

fn synthesize_from_set(
    lib: &BasisLibrary,
    set: &ConsistencySet,
    r: f64,
    u_bar: Option<&[f64]>,
    opts: &SynthOptions,
) -> Result<SynthesisResult> {
    let mode = if u_bar.is_some() { Mode::DataSat } else { Mode::Data };
    if set.n() != lib.n || set.width() != lib.n_a() + lib.n_b() {
        return Err(Error::Shape(format!(
            "consistency set is {}x{}, library needs {}x{}",
            set.n(),
            set.width(),
            lib.n,
            lib.n_a() + lib.n_b()
        )));
    }
    let verts = build_basis_vertices(lib, r, opts.bound_mode, opts.vertex_cap)?;
    let what = format!("{mode} synthesis");
    let (assembled, sol) = solve_with_fallback(mode, opts, &what, |preserve| {
        assemble(lib.n, lib.m, &verts.vertices, u_bar, mode, opts, preserve, |q, sat, v| match sat {
            None => data_stability_block(set, q, v, DataForm::Conditioned),
            Some(sv) => data_saturation_block(set, q, sv, DataForm::Conditioned),
        })
    })?;
    let mut res = build_result(mode, &assembled, &sol, r, u_bar, verts.len(), verts.is_sound())?;
    res.certificate = require(check_data(&Certificate::of(&res), set, &verts.vertices)?, &what)?;
    if opts.posterior_samples > 0 {
        let post = posterior_check(&res, set, &verts.vertices, opts.posterior_samples, opts.seed)?;
        if !post.passed {
            return Err(Error::Certificate(format!(
                "{what}: sampled consistency-set member violates the closed-loop LMI (relative {:e})",
                post.max_relative
            )));
        }
        res.posterior = Some(post);
    }
    Ok(res)
}

/// State feedback that stabilizes every system consistent with the data,
/// certified on `B_{r0}`.
pub fn synthesize_data(lib: &BasisLibrary, data: &ExperimentData, r: f64, opts: &SynthOptions) -> Result<SynthesisResult> {
    synthesize_from_set(lib, &ConsistencySet::new(data)?, r, None, opts)
}

/// As [`synthesize_data`], through `sat(·)` at levels `u_bar`.
pub fn synthesize_data_saturated(
    lib: &BasisLibrary,
    data: &ExperimentData,
    r: f64,
    u_bar: &[f64],
    opts: &SynthOptions,
) -> Result<SynthesisResult> {
    synthesize_from_set(lib, &ConsistencySet::new(data)?, r, Some(u_bar), opts)
}

/// [`synthesize_data`] on a precomputed consistency set.
pub fn synthesize_data_with_set(
    lib: &BasisLibrary,
    set: &ConsistencySet,
    r: f64,
    u_bar: Option<&[f64]>,
    opts: &SynthOptions,
) -> Result<SynthesisResult> {
    synthesize_from_set(lib, set, r, u_bar, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::example1;
    use approx::assert_relative_eq;

    #[test]
    fn roa_radius_examples() {
        let (g, _, e) = example1::reference_certificate();
        assert_eq!(roa_radius(&g, e, 1.1).unwrap(), 1.1);
        let d = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 4.0]));
        assert_relative_eq!(roa_radius(&d, 0.5, 1.0).unwrap(), (4.0f64 / 15.5).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(roa_radius(&(Mat::identity(2, 2) * 3.0), 1e-12, 0.7).unwrap(), 0.7);
        // ε ≥ λmax²/λmin is reported, not clamped
        assert!(matches!(roa_radius(&Mat::identity(2, 2), 1.0, 1.0), Err(Error::Certificate(_))));
        assert!(roa_radius(&-Mat::identity(2, 2), 0.1, 1.0).is_err());
    }

    #[test]
    fn mode_round_trips_through_strings() {
        for m in [Mode::Model, Mode::ModelSat, Mode::Data, Mode::DataSat] {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("nope".parse::<Mode>().is_err());
    }

    #[test]
    fn example1_model_synthesis() {
        let res = synthesize_model(&example1::model(), 1.1, &SynthOptions::default()).unwrap();
        assert!(res.certificate.passed());
        assert_eq!(res.solve.vertices, 16);
        assert_relative_eq!(&res.k * &res.gamma, res.y, epsilon = 1e-8 * res.y.norm());
        assert!(res.solve.radius_preserving);
        assert_eq!(res.r0, 1.1);
        assert!(linalg::lambda_min(&res.gamma) >= 1e-6 * (1.0 - 1e-6));
        let back = SynthesisResult::from_json(&res.to_json().unwrap()).unwrap();
        assert_eq!(back.k, res.k);
        assert!(recheck_model(&back, &example1::model(), &SynthOptions::default()).unwrap().passed());
    }

    #[test]
    fn stable_lti_without_authority_is_feasible() {
        let model = SdrModel::parse(&[&["0.5", "0.1"], &["0", "0.3"]], &[&["0"], &["0"]], 1.0).unwrap();
        let res = synthesize_model(&model, 1.0, &SynthOptions::default()).unwrap();
        // B = 0: any Y gives the same vertex blocks, so Y = 0 is a certificate too
        let zero = SynthesisResult { y: Mat::zeros(1, 2), ..res.clone() };
        assert!(recheck_model(&zero, &model, &SynthOptions::default()).unwrap().passed());
    }

    #[test]
    fn uncontrollable_unstable_scalar_is_infeasible() {
        let model = SdrModel::parse(&[&["2"]], &[&["0"]], 1.0).unwrap();
        assert!(matches!(synthesize_model(&model, 1.0, &SynthOptions::default()), Err(Error::Infeasible(_))));
    }

    #[test]
    fn saturated_without_authority_is_infeasible() {
        let res = synthesize_model_saturated(&example1::model(), 1.1, &[0.0], &SynthOptions::default());
        assert!(matches!(res, Err(Error::Infeasible(_))), "{res:?}");
    }

    #[test]
    fn saturated_levels_are_validated() {
        let res = synthesize_model_saturated(&example1::model(), 1.1, &[1.0, 2.0], &SynthOptions::default());
        assert!(matches!(res, Err(Error::Config(_))));
    }
}

//! Closed- and open-loop simulation, disturbance injection and synthetic
//! experiment generation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Experiment;
use crate::linalg::{self, Mat, Vector};
use crate::model::Dynamics;
use crate::{Error, Result};

/// `sign(u)·min(|u|, ū)` per component.
pub fn saturate(u: &[f64], u_bar: &[f64]) -> Vec<f64> {
    u.iter().zip(u_bar).map(|(&v, &b)| v.signum() * v.abs().min(b)).collect()
}

/// `φ(u) = sat(u) − u`.
pub fn dead_zone(u: &[f64], u_bar: &[f64]) -> Vec<f64> {
    saturate(u, u_bar).iter().zip(u).map(|(s, v)| s - v).collect()
}

/// One step `A(x)x + B(x)sat(u) + w`. Saturation is skipped when `u_bar`
/// is `None`.
pub fn step<D: Dynamics + ?Sized>(sys: &D, x: &[f64], u: &[f64], w: Option<&[f64]>, u_bar: Option<&[f64]>) -> Result<Vector> {
    let applied = match u_bar {
        Some(b) => saturate(u, b),
        None => u.to_vec(),
    };
    let mut next = sys.step(x, &applied)?;
    if let Some(w) = w {
        if w.len() != next.len() {
            return Err(Error::Shape(format!("disturbance of length {} for n = {}", w.len(), next.len())));
        }
        next += Vector::from_column_slice(w);
    }
    Ok(next)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Controller {
    /// `u = Kx`.
    Gain(Mat),
    /// Input sequence indexed by step; zero past its end.
    OpenLoop(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Disturbance {
    None,
    /// I.i.d. uniform on `[-bound, bound]` per component.
    Uniform { bound: f64 },
    /// Explicit sequence indexed by step; zero past its end.
    Sequence(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: usize,
    pub x0: Vec<f64>,
    pub controller: Controller,
    pub u_bar: Option<Vec<f64>>,
    pub disturbance: Disturbance,
    pub seed: u64,
    pub converge_tol: f64,
    /// Consecutive steps below `converge_tol` required to declare convergence.
    pub converge_hold: usize,
    pub blowup: f64,
}

impl SimConfig {
    pub fn new(x0: Vec<f64>, controller: Controller, horizon: usize) -> Self {
        SimConfig {
            horizon,
            x0,
            controller,
            u_bar: None,
            disturbance: Disturbance::None,
            seed: 0,
            converge_tol: 1e-3,
            converge_hold: 10,
            blowup: 1e6,
        }
    }

    pub fn with_saturation(mut self, u_bar: Vec<f64>) -> Self {
        self.u_bar = Some(u_bar);
        self
    }

    pub fn with_disturbance(mut self, d: Disturbance, seed: u64) -> Self {
        self.disturbance = d;
        self.seed = seed;
        self
    }

    fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.x0.len() != n {
            return Err(Error::Shape(format!("initial state of length {} for n = {n}", self.x0.len())));
        }
        if let Some(b) = &self.u_bar {
            if b.len() != m || b.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Config(format!("saturation levels {b:?} must be {m} positive values")));
            }
        }
        if let Controller::Gain(k) = &self.controller {
            if k.shape() != (m, n) {
                return Err(Error::Shape(format!("gain {:?} for n = {n}, m = {m}", k.shape())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SimStatus {
    /// `|x|` stayed below the tolerance for the required hold, starting at `step`.
    Converged { step: usize },
    /// Ran the full horizon without converging or blowing up.
    Bounded,
    /// `|x|` exceeded the blow-up guard at `step`; the trajectory stops there.
    Diverged { step: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    /// `states[k] = x(k)`, one more entry than the input sequences.
    pub states: Vec<Vec<f64>>,
    pub u_pre: Vec<Vec<f64>>,
    pub u_post: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub status: SimStatus,
}

impl Trajectory {
    pub fn converged(&self) -> bool {
        matches!(self.status, SimStatus::Converged { .. })
    }

    pub fn norms(&self) -> Vec<f64> {
        self.states.iter().map(|x| norm(x)).collect()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory holds x(0)")
    }

    /// CSV with columns `t, x1.., u_pre1.., u_post1.., w1..`; the last row
    /// holds the final state with empty input and disturbance cells.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let n = self.states[0].len();
        let m = self.u_pre.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u_pre{i}")));
        header.extend((1..=m).map(|i| format!("u_post{i}")));
        header.extend((1..=n).map(|i| format!("w{i}")));
        w.write_record(&header)?;
        for (k, x) in self.states.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(x.iter().map(|v| format!("{v:?}")));
            for seq in [&self.u_pre, &self.u_post] {
                match seq.get(k) {
                    Some(u) => row.extend(u.iter().map(|v| format!("{v:?}"))),
                    None => row.extend(std::iter::repeat(String::new()).take(m)),
                }
            }
            match self.w.get(k) {
                Some(d) => row.extend(d.iter().map(|v| format!("{v:?}"))),
                None => row.extend(std::iter::repeat(String::new()).take(n)),
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn rollout<D: Dynamics + ?Sized>(sys: &D, cfg: &SimConfig) -> Result<Trajectory> {
    let (n, m) = (sys.n(), sys.m());
    cfg.validate(n, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = cfg.x0.clone();
    let mut traj = Trajectory { states: vec![x.clone()], u_pre: vec![], u_post: vec![], w: vec![], status: SimStatus::Bounded };
    let mut run = usize::from(norm(&x) <= cfg.converge_tol);
    let mut converged_at = None;
    for k in 0..cfg.horizon {
        let u = match &cfg.controller {
            Controller::Gain(gain) => (gain * Vector::from_column_slice(&x)).as_slice().to_vec(),
            Controller::OpenLoop(seq) => seq.get(k).cloned().unwrap_or_else(|| vec![0.0; m]),
        };
        let w = match &cfg.disturbance {
            Disturbance::None => vec![0.0; n],
            Disturbance::Uniform { bound } => (0..n).map(|_| rng.gen_range(-*bound..=*bound)).collect(),
            Disturbance::Sequence(seq) => seq.get(k).cloned().unwrap_or_else(|| vec![0.0; n]),
        };
        let applied = match &cfg.u_bar {
            Some(b) => saturate(&u, b),
            None => u.clone(),
        };
        let next = step(sys, &x, &applied, Some(&w), None)?;
        traj.u_pre.push(u);
        traj.u_post.push(applied);
        traj.w.push(w);
        x = next.as_slice().to_vec();
        let nx = norm(&x);
        traj.states.push(x.clone());
        if !nx.is_finite() || nx > cfg.blowup {
            traj.status = SimStatus::Diverged { step: k + 1 };
            return Ok(traj);
        }
        if nx <= cfg.converge_tol {
            run += 1;
            if run >= cfg.converge_hold && converged_at.is_none() {
                converged_at = Some(k + 2 - run);
            }
        } else {
            run = 0;
        }
    }
    if let Some(step) = converged_at {
        traj.status = SimStatus::Converged { step };
    }
    Ok(traj)
}

/// Rollouts from each initial state; rollout `i` uses seed `cfg.seed + i`,
/// so results do not depend on scheduling.
pub fn batch<D: Dynamics + ?Sized>(sys: &D, cfg: &SimConfig, x0s: &[Vec<f64>]) -> Result<Vec<Trajectory>> {
    x0s.par_iter()
        .enumerate()
        .map(|(i, x0)| {
            let mut c = cfg.clone();
            c.x0 = x0.clone();
            c.seed = cfg.seed.wrapping_add(i as u64);
            rollout(sys, &c)
        })
        .collect()
}

/// One arrow of a phase portrait.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PortraitSample {
    pub x: [f64; 2],
    pub next: [f64; 2],
    pub u_pre: f64,
    pub u_post: f64,
}

/// One-step closed-loop map sampled on a `density × density` grid over
/// `[-half_width, half_width]²`. Single-input systems report the input;
/// multi-input ones report its first component.
pub fn phase_portrait<D: Dynamics + ?Sized>(
    sys: &D,
    gain: &Mat,
    u_bar: Option<&[f64]>,
    half_width: f64,
    density: usize,
) -> Result<Vec<PortraitSample>> {
    if sys.n() != 2 {
        return Err(Error::Dimension(format!("phase portraits need n = 2, got n = {}", sys.n())));
    }
    if gain.shape() != (sys.m(), 2) {
        return Err(Error::Shape(format!("gain {:?} for n = 2, m = {}", gain.shape(), sys.m())));
    }
    let d = density.max(2);
    let coords: Vec<f64> = (0..d).map(|i| -half_width + 2.0 * half_width * i as f64 / (d - 1) as f64).collect();
    let points: Vec<[f64; 2]> = coords.iter().flat_map(|&a| coords.iter().map(move |&b| [a, b])).collect();
    points
        .par_iter()
        .map(|p| {
            let u = (gain * Vector::from_column_slice(p)).as_slice().to_vec();
            let applied = u_bar.map_or_else(|| u.clone(), |b| saturate(&u, b));
            let next = sys.step(p, &applied)?;
            Ok(PortraitSample { x: *p, next: [next[0], next[1]], u_pre: u[0], u_post: applied[0] })
        })
        .collect()
}

pub fn write_portrait_csv(samples: &[PortraitSample], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x1", "x2", "dx1", "dx2", "u_pre", "u_post"])?;
    for s in samples {
        w.write_record(&[
            format!("{:?}", s.x[0]),
            format!("{:?}", s.x[1]),
            format!("{:?}", s.next[0] - s.x[0]),
            format!("{:?}", s.next[1] - s.x[1]),
            format!("{:?}", s.u_pre),
            format!("{:?}", s.u_post),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum InputSignal {
    /// I.i.d. uniform on `[-bound, bound]` per component and step.
    Uniform { bound: f64 },
    /// `u_i(k) = amplitude_i · sin(omega_i · k·dt + phase_i)`.
    Sinusoids { dt: f64, omega: Vec<f64>, phase: Vec<f64>, amplitude: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum NoiseSpec {
    None,
    /// `d(k) = Θ^{1/2} v(k)` with `v` i.i.d. uniform on `[-δ, δ]`,
    /// `δ = sqrt(3·fill/T)`, so that `E[D0 D0ᵀ] = fill·Θ`. Realizations
    /// with `D0 D0ᵀ ⋠ Θ` are redrawn.
    EnergyBound { theta: Mat, fill: f64 },
    /// `d(k) = sqrt(fill)·Θ^{1/2} (VVᵀ)^{-1/2} v(k)` with `v` i.i.d.
    /// uniform, so that `D0 D0ᵀ = fill·Θ` exactly: random directions with
    /// the full energy budget, `fill ≤ 1`.
    Whitened { theta: Mat, fill: f64 },
}

impl NoiseSpec {
    pub fn theta(&self, n: usize) -> Mat {
        match self {
            NoiseSpec::None => Mat::zeros(n, n),
            NoiseSpec::EnergyBound { theta, .. } | NoiseSpec::Whitened { theta, .. } => theta.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub count: usize,
    /// Transitions per experiment.
    pub length: usize,
    /// Initial states are uniform on `[-x0_bound, x0_bound]^n`.
    pub x0_bound: f64,
    pub input: InputSignal,
    pub noise: NoiseSpec,
    /// An experiment whose state leaves `|x|∞ ≤ state_limit` is discarded
    /// and repeated with fresh initial state and inputs.
    #[serde(default)]
    pub state_limit: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratedData {
    pub experiments: Vec<Experiment>,
    /// Noise columns `d(k)` in data order, `n × T`.
    pub noise: Mat,
    pub theta: Mat,
    /// `λ_min(Θ − D0 D0ᵀ)`, nonnegative by construction.
    pub theta_margin: f64,
    pub redraws: usize,
    /// Experiments discarded for leaving the state limit.
    pub discarded: usize,
}

const MAX_NOISE_REDRAWS: usize = 100;
const MAX_EXPERIMENT_ATTEMPTS: usize = 1000;

/// Runs `spec.count` open-loop experiments on the true system.
pub fn generate_experiments<D: Dynamics + ?Sized>(sys: &D, spec: &ExperimentSpec) -> Result<GeneratedData> {
    let (n, m) = (sys.n(), sys.m());
    let t_total = spec.count * spec.length;
    if t_total == 0 {
        return Err(Error::Config("experiments need count >= 1 and length >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let theta = spec.noise.theta(n);
    if theta.shape() != (n, n) {
        return Err(Error::Shape(format!("theta {:?} for n = {n}", theta.shape())));
    }
    let (noise, redraws) = match &spec.noise {
        NoiseSpec::None => (Mat::zeros(n, t_total), 0),
        NoiseSpec::EnergyBound { theta, fill } => {
            let root = linalg::sqrt_psd(theta, 1e-12, None)?;
            let delta = (3.0 * fill / t_total as f64).sqrt();
            let mut redraws = 0;
            loop {
                let v = Mat::from_fn(n, t_total, |_, _| rng.gen_range(-delta..=delta));
                let d = &root * v;
                if linalg::lambda_max(&(&d * d.transpose() - theta)) <= 0.0 {
                    break (d, redraws);
                }
                redraws += 1;
                if redraws > MAX_NOISE_REDRAWS {
                    return Err(Error::Config(format!(
                        "noise draws violate the energy bound after {MAX_NOISE_REDRAWS} attempts; lower the fill factor"
                    )));
                }
            }
        }
        NoiseSpec::Whitened { theta, fill } => {
            if !(0.0..=1.0).contains(fill) {
                return Err(Error::Config(format!("whitened noise fill {fill} must lie in [0, 1]")));
            }
            let root = linalg::sqrt_psd(theta, 1e-12, None)?;
            let v = Mat::from_fn(n, t_total, |_, _| rng.gen_range(-1.0..=1.0));
            let white = linalg::inv_sqrt_pd(&(&v * v.transpose()))? * v;
            (root * white * fill.sqrt(), 0)
        }
    };
    if let InputSignal::Sinusoids { omega, phase, amplitude, .. } = &spec.input {
        if omega.len() != m || phase.len() != m || amplitude.len() != m {
            return Err(Error::Shape(format!("sinusoid spec needs {m} components")));
        }
    }
    let mut experiments = Vec::with_capacity(spec.count);
    let mut discarded = 0;
    for e in 0..spec.count {
        let mut attempts = 0;
        let exp = loop {
            match run_experiment(sys, spec, &noise, e, &mut rng)? {
                Some(exp) => break exp,
                None => {
                    discarded += 1;
                    attempts += 1;
                    if attempts >= MAX_EXPERIMENT_ATTEMPTS {
                        return Err(Error::Numerical(format!(
                            "experiment {e} left the state limit in {MAX_EXPERIMENT_ATTEMPTS} attempts"
                        )));
                    }
                }
            }
        };
        experiments.push(exp);
    }
    let theta_margin = linalg::lambda_min(&(&theta - &noise * noise.transpose()));
    Ok(GeneratedData { experiments, noise, theta, theta_margin, redraws, discarded })
}

/// `None` when the state leaves the limit.
fn run_experiment<D: Dynamics + ?Sized>(
    sys: &D,
    spec: &ExperimentSpec,
    noise: &Mat,
    e: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Experiment>> {
    let m = sys.m();
    let limit = spec.state_limit.unwrap_or(f64::INFINITY);
    let mut x: Vec<f64> = (0..sys.n()).map(|_| rng.gen_range(-spec.x0_bound..=spec.x0_bound)).collect();
    let mut states = vec![x.clone()];
    let mut inputs = Vec::with_capacity(spec.length);
    for k in 0..spec.length {
        let u: Vec<f64> = match &spec.input {
            InputSignal::Uniform { bound } => (0..m).map(|_| rng.gen_range(-*bound..=*bound)).collect(),
            InputSignal::Sinusoids { dt, omega, phase, amplitude } => {
                let t = k as f64 * dt;
                (0..m).map(|i| amplitude[i] * (omega[i] * t + phase[i]).sin()).collect()
            }
        };
        let d: Vec<f64> = noise.column(e * spec.length + k).iter().copied().collect();
        x = step(sys, &x, &u, Some(&d), None)?.as_slice().to_vec();
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("experiment {e} produced a non-finite state at step {k}")));
        }
        inputs.push(u);
        if x.iter().any(|v| v.abs() > limit) {
            return Ok(None);
        }
        states.push(x.clone());
    }
    Ok(Some(Experiment { states, inputs }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    #[test]
    fn disturbance_at_equilibrium() {
        let sys = fixtures::example1::model();
        let x = step(&sys, &[0.0, 0.0], &[0.0], Some(&[0.1, -0.1]), None).unwrap();
        assert_eq!(x.as_slice(), &[0.1, -0.1]);
    }

    #[test]
    fn dead_zone_definition() {
        assert_eq!(saturate(&[1.5], &[1.0]), vec![1.0]);
        assert_eq!(dead_zone(&[1.5], &[1.0]), vec![-0.5]);
        assert_eq!(saturate(&[-0.3, -7.0], &[1.0, 2.0]), vec![-0.3, -2.0]);
    }

    #[test]
    fn quadrotor_rest_is_fixed() {
        let sys = fixtures::quadrotor::model();
        let x = step(&sys, &[0.0; 6], &[0.0; 3], None, None).unwrap();
        assert_eq!(x.as_slice(), &[0.0; 6]);
        let lm = fixtures::quadrotor::library_model();
        let x = step(&lm, &[0.0; 6], &[0.0; 3], None, None).unwrap();
        assert_eq!(x.as_slice(), &[0.0; 6]);
    }

    #[test]
    fn reference_gain_converges() {
        let sys = fixtures::example1::model();
        let cfg = SimConfig::new(vec![-0.5, -0.5], Controller::Gain(fixtures::example1::reference_gain()), 200);
        let t = rollout(&sys, &cfg).unwrap();
        assert!(t.converged(), "{:?}", t.status);
    }

    #[test]
    fn open_loop_diverges() {
        let sys = fixtures::example1::model();
        let cfg = SimConfig::new(vec![0.5, 0.5], Controller::OpenLoop(vec![]), 500);
        let t = rollout(&sys, &cfg).unwrap();
        assert!(matches!(t.status, SimStatus::Diverged { .. }), "{:?}", t.status);
    }

    #[test]
    fn rollouts_are_deterministic() {
        let sys = fixtures::example1::model();
        let cfg = SimConfig::new(vec![-0.4, -0.4], Controller::Gain(fixtures::example1::reference_gain()), 100)
            .with_disturbance(Disturbance::Uniform { bound: 0.1 }, 42);
        let a = batch(&sys, &cfg, &[vec![-0.4, -0.4], vec![0.3, 0.1]]).unwrap();
        let b = batch(&sys, &cfg, &[vec![-0.4, -0.4], vec![0.3, 0.1]]).unwrap();
        for (s, t) in a.iter().zip(&b) {
            let bits = |tr: &Trajectory| tr.states.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(s), bits(t));
        }
        assert_eq!(a[0].states, rollout(&sys, &cfg).unwrap().states);
        assert!(a[0].norms().iter().all(|&v| v <= 1.1));
    }

    #[test]
    fn saturated_inputs_clip_exactly() {
        let sys = fixtures::example1::model();
        let cfg = SimConfig::new(vec![0.9, 0.6], Controller::Gain(fixtures::example1::reference_gain()), 50).with_saturation(vec![0.5]);
        let t = rollout(&sys, &cfg).unwrap();
        for (pre, post) in t.u_pre.iter().zip(&t.u_post) {
            assert_eq!(post[0], pre[0].signum() * pre[0].abs().min(0.5));
            assert!(post[0].abs() <= 0.5);
        }
        assert!(t.u_pre.iter().any(|u| u[0].abs() > 0.5));
    }

    #[test]
    fn portrait_requires_planar_state() {
        let quad = fixtures::quadrotor::model();
        assert!(matches!(phase_portrait(&quad, &Mat::zeros(3, 6), None, 1.0, 5), Err(Error::Dimension(_))));
        let sys = fixtures::example1::model();
        let s = phase_portrait(&sys, &fixtures::example1::reference_gain(), Some(&[0.5]), 1.5, 11).unwrap();
        assert_eq!(s.len(), 121);
        assert!(s.iter().all(|p| p.u_post.abs() <= 0.5));
    }

    #[test]
    fn experiments_respect_energy_bound() {
        let lm = fixtures::example3::library_model();
        let g = generate_experiments(&lm, &fixtures::example3::experiment_spec(7)).unwrap();
        assert_eq!(g.experiments.len(), 10);
        assert!(g.experiments.iter().all(|e| e.states.len() == 14 && e.inputs.len() == 13));
        assert!(g.theta_margin >= 0.0);
        assert!(g.experiments.iter().flat_map(|e| e.inputs.iter().flatten()).all(|u| u.abs() <= 1.3));
        let mut spec = fixtures::example3::experiment_spec(7);
        spec.noise = NoiseSpec::None;
        let g = generate_experiments(&lm, &spec).unwrap();
        assert_eq!(g.noise, Mat::zeros(2, 130));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn saturation_is_bit_exact(u in -1e3f64..1e3, b in 1e-3f64..1e2) {
            let s = saturate(&[u], &[b])[0];
            prop_assert_eq!(s.to_bits(), (u.signum() * u.abs().min(b)).to_bits());
            prop_assert!(s.abs() <= b);
            prop_assert_eq!(dead_zone(&[u], &[b])[0], s - u);
        }
    }
}

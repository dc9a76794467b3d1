//! Experiment data matrices and the set of systems consistent with them.
//!
//! With `W = [X0; U0]` the noise model `X1 = [E_A E_B] W + D0`,
//! `D0 D0ᵀ ⪯ Θ` is equivalent to the quadratic matrix inequality
//! `Z A Zᵀ + Z Bᵀ + B Zᵀ + C ⪯ 0` in `Z = [E_A E_B]`, where `A = W Wᵀ`,
//! `B = −X1 Wᵀ` and `C = X1 X1ᵀ − Θ`. When `A ≻ 0` its solution set is the
//! matrix ellipsoid `{Zc + Q^{1/2} Υ A^{-1/2} : ‖Υ‖ ≤ 1}`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, Mat, Vector};
use crate::model::BasisLibrary;
use crate::{Error, Result, FORMAT_VERSION};

/// Relative tolerance for PSD and membership decisions.
pub const PSD_TOL: f64 = 1e-8;

/// One open-loop run: `states.len() == inputs.len() + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentData {
    /// Columns `Ξ_A(x(k)) x(k)`, `n_A × T`.
    pub x0: Mat,
    /// Columns `x(k+1)`, `n × T`.
    pub x1: Mat,
    /// Columns `Ξ_B(x(k)) u(k)`, `n_B × T`.
    pub u0: Mat,
    pub theta: Mat,
}

impl ExperimentData {
    pub fn samples(&self) -> usize {
        self.x1.ncols()
    }

    /// `W = [X0; U0]`.
    pub fn regressors(&self) -> Mat {
        let (na, nb, t) = (self.x0.nrows(), self.u0.nrows(), self.samples());
        let mut w = Mat::zeros(na + nb, t);
        w.rows_mut(0, na).copy_from(&self.x0);
        w.rows_mut(na, nb).copy_from(&self.u0);
        w
    }
}

pub fn assemble(experiments: &[Experiment], lib: &BasisLibrary, theta: &Mat) -> Result<ExperimentData> {
    let (n, m) = (lib.n, lib.m);
    if theta.shape() != (n, n) {
        return Err(Error::Shape(format!("theta {:?} for n = {n}", theta.shape())));
    }
    if (theta - theta.transpose()).amax() > PSD_TOL * theta.amax().max(1.0) {
        return Err(Error::Config("theta must be symmetric".into()));
    }
    linalg::sqrt_psd(theta, PSD_TOL, None).map_err(|_| Error::Config("theta must be positive semidefinite".into()))?;
    let t: usize = experiments.iter().map(|e| e.inputs.len()).sum();
    if t == 0 {
        return Err(Error::Config("no transitions in the data".into()));
    }
    let (na, nb) = (lib.n_a(), lib.n_b());
    let mut x0 = Mat::zeros(na, t);
    let mut x1 = Mat::zeros(n, t);
    let mut u0 = Mat::zeros(nb, t);
    let mut col = 0;
    for (e, exp) in experiments.iter().enumerate() {
        if exp.states.len() != exp.inputs.len() + 1 {
            return Err(Error::Shape(format!(
                "experiment {e}: {} states for {} inputs",
                exp.states.len(),
                exp.inputs.len()
            )));
        }
        for (k, u) in exp.inputs.iter().enumerate() {
            let x = &exp.states[k];
            if x.len() != n || u.len() != m || exp.states[k + 1].len() != n {
                return Err(Error::Shape(format!("experiment {e}, sample {k}: expected n = {n}, m = {m}")));
            }
            let reg = lib.regressor(x, u)?;
            x0.column_mut(col).copy_from(&reg.rows(0, na));
            u0.column_mut(col).copy_from(&reg.rows(na, nb));
            x1.column_mut(col).copy_from(&Vector::from_column_slice(&exp.states[k + 1]));
            col += 1;
        }
    }
    Ok(ExperimentData { x0, x1, u0, theta: theta.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub full_row_rank: bool,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

/// Full row rank of `[X0; U0]` with tolerance `1e-8·σ_max`.
pub fn check_full_row_rank(data: &ExperimentData) -> RankReport {
    let w = data.regressors();
    let rows = w.nrows();
    if w.ncols() < rows {
        let sigma_max = linalg::spectral_norm(&w);
        return RankReport { full_row_rank: false, sigma_min: 0.0, sigma_max };
    }
    let sv = w.singular_values();
    let sigma_max = sv.max();
    let sigma_min = sv.min();
    RankReport { full_row_rank: sigma_min > 1e-8 * sigma_max && sigma_max > 0.0, sigma_min, sigma_max }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencySet {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub zc: Mat,
    pub q: Mat,
    pub q_sqrt: Mat,
    pub a_inv: Mat,
    pub a_inv_sqrt: Mat,
    /// Magnitude of the terms that cancel in `Q`; tolerances are relative to it.
    pub scale: f64,
    x1: Mat,
    w: Mat,
    theta: Mat,
}

impl ConsistencySet {
    pub fn new(data: &ExperimentData) -> Result<Self> {
        let rank = check_full_row_rank(data);
        if !rank.full_row_rank {
            return Err(Error::RankDeficient { sigma_min: rank.sigma_min, sigma_max: rank.sigma_max });
        }
        let w = data.regressors();
        let x1 = data.x1.clone();
        let a = linalg::symmetrize(&(&w * w.transpose()));
        let a_inv = linalg::spd_inverse(&a)
            .ok_or(Error::RankDeficient { sigma_min: rank.sigma_min, sigma_max: rank.sigma_max })?;
        let b = -(&x1 * w.transpose());
        let c = linalg::symmetrize(&(&x1 * x1.transpose() - &data.theta));
        let zc = -(&b * &a_inv);
        // Q = B A⁻¹ Bᵀ − C, evaluated as Θ − R Rᵀ with the least-squares
        // residual R to avoid cancelling two large terms
        let resid = &x1 - &zc * &w;
        let q = linalg::symmetrize(&(&data.theta - &resid * resid.transpose()));
        let scale = linalg::spectral_norm(&data.theta) + linalg::spectral_norm(&x1).powi(2);
        let q_sqrt = linalg::sqrt_psd(&q, PSD_TOL, Some(scale))?;
        let a_inv_sqrt = linalg::inv_sqrt_pd(&a)?;
        Ok(ConsistencySet { a, b, c, zc, q, q_sqrt, a_inv, a_inv_sqrt, scale, x1, w, theta: data.theta.clone() })
    }

    pub fn n(&self) -> usize {
        self.zc.nrows()
    }

    /// `n_A + n_B`.
    pub fn width(&self) -> usize {
        self.zc.ncols()
    }

    /// `λ_max(Z A Zᵀ + Z Bᵀ + B Zᵀ + C)`, computed as `λ_max(R Rᵀ − Θ)`
    /// with `R = X1 − Z W`.
    pub fn qmi_lambda_max(&self, z: &Mat) -> Result<f64> {
        if z.shape() != self.zc.shape() {
            return Err(Error::Shape(format!("candidate {:?}, expected {:?}", z.shape(), self.zc.shape())));
        }
        let r = &self.x1 - z * &self.w;
        Ok(linalg::lambda_max(&(&r * r.transpose() - &self.theta)))
    }

    pub fn contains(&self, z: &Mat) -> Result<bool> {
        Ok(self.qmi_lambda_max(z)? <= PSD_TOL * self.scale)
    }

    /// `Zc + Q^{1/2} Υ A^{-1/2}`.
    pub fn member(&self, upsilon: &Mat) -> Result<Mat> {
        if upsilon.shape() != self.zc.shape() {
            return Err(Error::Shape(format!("Υ {:?}, expected {:?}", upsilon.shape(), self.zc.shape())));
        }
        Ok(&self.zc + &self.q_sqrt * upsilon * &self.a_inv_sqrt)
    }

    /// Random `Υ` with a uniformly drawn norm in `[0, max_norm]` (or exactly
    /// `max_norm` when `on_boundary`).
    pub fn random_upsilon<R: Rng>(&self, rng: &mut R, max_norm: f64, on_boundary: bool) -> Mat {
        let g = Mat::from_fn(self.n(), self.width(), |_, _| {
            // Box-Muller: isotropic directions
            let (u1, u2): (f64, f64) = (rng.gen_range(f64::EPSILON..1.0), rng.gen());
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        });
        let norm = linalg::spectral_norm(&g);
        let target = if on_boundary { max_norm } else { max_norm * rng.gen::<f64>() };
        g * (target / norm)
    }
}

/// Dataset manifest: the experiment files and the energy bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub n: usize,
    pub m: usize,
    /// Paths relative to the manifest's directory.
    pub files: Vec<String>,
    /// Row-major `n × n`.
    pub theta: Vec<Vec<f64>>,
}

/// CSV with header `t, x1.., u1..`; the final row carries the last state
/// and empty input cells.
pub fn write_experiment_csv(exp: &Experiment, path: &Path) -> Result<()> {
    let n = exp.states.first().map_or(0, Vec::len);
    let m = exp.inputs.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    w.write_record(&header)?;
    for (k, x) in exp.states.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(x.iter().map(|v| format!("{v:?}")));
        match exp.inputs.get(k) {
            Some(u) => row.extend(u.iter().map(|v| format!("{v:?}"))),
            None => row.extend(std::iter::repeat(String::new()).take(m)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_experiment_csv(path: &Path, n: usize, m: usize) -> Result<Experiment> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() != 1 + n + m {
        return Err(Error::Config(format!(
            "{}: expected {} columns (t, x1..x{n}, u1..u{m}), found {}",
            path.display(),
            1 + n + m,
            header.len()
        )));
    }
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    let parse = |s: &str, line: usize| -> Result<f64> {
        s.trim().parse().map_err(|_| Error::Config(format!("{}:{line}: bad number '{s}'", path.display())))
    };
    let mut ended = false;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if ended {
            return Err(Error::Config(format!("{}: rows after the final state", path.display())));
        }
        let x = (1..=n).map(|i| parse(&rec[i], line + 2)).collect::<Result<Vec<_>>>()?;
        states.push(x);
        if rec.iter().skip(1 + n).all(|c| c.trim().is_empty()) {
            ended = true;
        } else {
            inputs.push((1 + n..1 + n + m).map(|i| parse(&rec[i], line + 2)).collect::<Result<Vec<_>>>()?);
        }
    }
    if !ended {
        return Err(Error::Config(format!("{}: missing final state row", path.display())));
    }
    Ok(Experiment { states, inputs })
}

/// Writes `exp_XX.csv` files and `manifest.json` into `dir`; returns the
/// manifest path.
pub fn write_dataset(dir: &Path, experiments: &[Experiment], theta: &Mat) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let n = theta.nrows();
    let m = experiments.first().and_then(|e| e.inputs.first()).map_or(0, Vec::len);
    let mut files = Vec::new();
    for (i, e) in experiments.iter().enumerate() {
        let name = format!("exp_{i:02}.csv");
        write_experiment_csv(e, &dir.join(&name))?;
        files.push(name);
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        n,
        m,
        files,
        theta: theta.row_iter().map(|r| r.iter().copied().collect()).collect(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

pub fn read_dataset(manifest_path: &Path) -> Result<(Vec<Experiment>, Mat)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Config(format!("unsupported manifest format_version {}", manifest.format_version)));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let experiments = manifest
        .files
        .iter()
        .map(|f| read_experiment_csv(&dir.join(f), manifest.n, manifest.m))
        .collect::<Result<Vec<_>>>()?;
    let n = manifest.n;
    if manifest.theta.len() != n || manifest.theta.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("manifest theta must be {n} x {n}")));
    }
    let theta = Mat::from_fn(n, n, |i, j| manifest.theta[i][j]);
    Ok((experiments, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::GroundTruth;
    use crate::sim::{self, NoiseSpec};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn example3(seed: u64, noise: bool) -> (ExperimentData, sim::GeneratedData) {
        let lm = fixtures::example3::library_model();
        let mut spec = fixtures::example3::experiment_spec(seed);
        if !noise {
            spec.noise = NoiseSpec::None;
        }
        let g = sim::generate_experiments(&lm, &spec).unwrap();
        let theta = if noise { fixtures::example3::theta() } else { Mat::zeros(2, 2) };
        (assemble(&g.experiments, &lm.lib, &theta).unwrap(), g)
    }

    #[test]
    fn example3_shapes_and_rank() {
        let (d, _) = example3(7, true);
        assert_eq!(d.x0.shape(), (5, 130));
        assert_eq!(d.x1.shape(), (2, 130));
        assert_eq!(d.u0.shape(), (5, 130));
        assert!(check_full_row_rank(&d).full_row_rank);
    }

    #[test]
    fn single_transition_and_lti_library() {
        let lib = BasisLibrary::parse(&[&["1"], &["1"]], &[&["1"]]).unwrap();
        let exp = Experiment { states: vec![vec![1.0, 2.0], vec![3.0, 4.0]], inputs: vec![vec![0.5]] };
        let d = assemble(&[exp], &lib, &Mat::zeros(2, 2)).unwrap();
        assert_eq!(d.samples(), 1);
        // Ξ_A = I, so X0 holds the raw states
        assert_eq!(d.x0.column(0).as_slice(), &[1.0, 2.0]);
        assert_eq!(d.u0[(0, 0)], 0.5);
        assert!(!check_full_row_rank(&d).full_row_rank);
        assert!(assemble(&[], &lib, &Mat::zeros(2, 2)).is_err());
    }

    #[test]
    fn duplicated_columns_are_rank_deficient() {
        let lib = BasisLibrary::parse(&[&["1"], &["1"]], &[&["1"]]).unwrap();
        let states = vec![vec![1.0, 2.0]; 11];
        let exp = Experiment { states, inputs: vec![vec![0.5]; 10] };
        let d = assemble(&[exp], &lib, &Mat::zeros(2, 2)).unwrap();
        assert!(!check_full_row_rank(&d).full_row_rank);
        assert!(matches!(ConsistencySet::new(&d), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn noise_free_data_recovers_truth() {
        let (d, _) = example3(3, false);
        let set = ConsistencySet::new(&d).unwrap();
        let truth = fixtures::example3::truth().stacked();
        assert_relative_eq!(set.zc, truth, epsilon = 1e-9);
        assert!(set.q.amax() <= 1e-10 * set.scale);
        assert!(set.contains(&set.zc).unwrap());
    }

    #[test]
    fn q_matches_literal_formula() {
        let (d, _) = example3(7, true);
        let set = ConsistencySet::new(&d).unwrap();
        let literal = &set.b * &set.a_inv * set.b.transpose() - &set.c;
        assert!((literal - &set.q).amax() <= 1e-9 * set.scale);
        assert_relative_eq!(&set.q_sqrt * &set.q_sqrt, set.q.clone(), max_relative = 1e-8, epsilon = 1e-14);
        let s = &set.a_inv_sqrt * &set.a * &set.a_inv_sqrt;
        assert_relative_eq!(s, Mat::identity(10, 10), epsilon = 1e-8);
    }

    #[test]
    fn truth_is_a_member_and_data_relation_holds() {
        let (d, g) = example3(7, true);
        let set = ConsistencySet::new(&d).unwrap();
        let truth: GroundTruth = fixtures::example3::truth();
        assert!(set.contains(&truth.stacked()).unwrap());
        let d0 = &d.x1 - &truth.e_a * &d.x0 - &truth.e_b * &d.u0;
        assert!((&d0 - &g.noise).amax() < 1e-12);
        assert!(linalg::lambda_max(&(&d0 * d0.transpose() - &d.theta)) <= 0.0);
    }

    #[test]
    fn parameterization_matches_membership() {
        let (d, _) = example3(7, true);
        let set = ConsistencySet::new(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let ups = set.random_upsilon(&mut rng, 1.0, false);
            assert!(set.contains(&set.member(&ups).unwrap()).unwrap());
            let out = set.random_upsilon(&mut rng, 1.05, true);
            assert!(!set.contains(&set.member(&out).unwrap()).unwrap());
        }
        let far = &set.zc + Mat::from_element(2, 10, 1.0);
        assert!(!set.contains(&far).unwrap());
    }

    #[test]
    fn dataset_round_trip() {
        let (_, g) = example3(9, true);
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(dir.path(), &g.experiments, &fixtures::example3::theta()).unwrap();
        let (back, theta) = read_dataset(&path).unwrap();
        assert_eq!(back, g.experiments);
        assert_eq!(theta, fixtures::example3::theta());
    }
}

//! Disturbance robustness of a synthesized loop and numerical refinement of
//! its region of attraction by Lyapunov sublevel sets.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ConsistencySet;
use crate::expr::ball_samples;
use crate::linalg::{self, row_major, Mat, Vector};
use crate::model::{BasisLibrary, Dynamics};
use crate::sim::{norm, saturate};
use crate::synth::{Mode, RoaDescription, RoaSet, SynthesisResult};
use crate::{Error, Result};

/// Sampling of `B_r` for the `max ‖·‖` terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallGrid {
    /// Tensor-grid points per axis for `n ≤ 3`.
    pub per_axis: usize,
    /// Seeded random points for `n > 3`.
    pub random: usize,
    pub seed: u64,
    /// The sampled maximum is enlarged by this fraction.
    pub inflation: f64,
}

impl Default for BallGrid {
    fn default() -> Self {
        BallGrid { per_axis: 201, random: 20000, seed: 0, inflation: 0.02 }
    }
}

/// Explicit ISS-type bound
/// `|x(k)|² ≤ (λmax(P)/λmin(P))·μ_w^k·|x0|² + c_w·|w|∞² / ((1−μ_w)·λmin(P))`,
/// valid while `(x0, |w|∞)` is admissible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessCertificate {
    pub mode: Mode,
    pub r: f64,
    pub delta_x0: f64,
    pub delta_w: f64,
    /// `max_{B_r} ‖A(x)+B(x)K‖` in model mode, its data-based upper bound
    /// otherwise.
    pub gamma_acl: f64,
    pub gamma_is_upper_bound: bool,
    /// `ε = ε_Γ / λmax(Γ)²`.
    pub eps_p: f64,
    pub mu_w: f64,
    pub c_w: f64,
    pub lambda_max_p: f64,
    pub lambda_min_p: f64,
}

impl RobustnessCertificate {
    fn new(res: &SynthesisResult, gamma_acl: f64, upper: bool) -> Result<Self> {
        let lmin = linalg::lambda_min(&res.gamma);
        let lmax = linalg::lambda_max(&res.gamma);
        let eps = res.eps;
        if !(lmin > 0.0 && eps > 0.0) {
            return Err(Error::Certificate("robustness needs Gamma > 0 and eps > 0".into()));
        }
        let delta_x0 = (2.0 * lmax * lmax - eps * lmin) / (2.0 * lmin * lmax);
        let delta_w = (4.0 * gamma_acl.powi(2) * lmax.powi(5) + 2.0 * eps * lmin * lmax.powi(3)) / (eps * eps * lmin.powi(3));
        let (lmax_p, lmin_p) = (1.0 / lmin, 1.0 / lmax);
        let eps_p = eps / (lmax * lmax);
        let mu_w = 1.0 - eps_p / (2.0 * lmax_p);
        let c_w = 2.0 * gamma_acl.powi(2) * lmax_p * lmax_p / eps_p + lmax_p;
        Ok(RobustnessCertificate {
            mode: res.mode,
            r: res.r,
            delta_x0,
            delta_w,
            gamma_acl,
            gamma_is_upper_bound: upper,
            eps_p,
            mu_w,
            c_w,
            lambda_max_p: lmax_p,
            lambda_min_p: lmin_p,
        })
    }

    /// `|x0|² ≤ r²` and `δ_x0|x0|² + δ_w|w|∞² ≤ r²`.
    pub fn admissible(&self, x0_norm: f64, w_inf: f64) -> bool {
        let r2 = self.r * self.r;
        x0_norm * x0_norm <= r2 && self.delta_x0 * x0_norm * x0_norm + self.delta_w * w_inf * w_inf <= r2
    }

    /// Largest `|w|∞` admissible together with `|x0| = x0_norm`.
    pub fn max_disturbance(&self, x0_norm: f64) -> f64 {
        let slack = self.r * self.r - self.delta_x0 * x0_norm * x0_norm;
        if x0_norm > self.r || slack < 0.0 {
            0.0
        } else {
            (slack / self.delta_w).sqrt()
        }
    }

    /// The bound on `|x(k)|²`.
    pub fn bound_sq(&self, k: usize, x0_norm: f64, w_inf: f64) -> f64 {
        let ratio = self.lambda_max_p / self.lambda_min_p;
        ratio * self.mu_w.powi(k as i32) * x0_norm * x0_norm
            + self.c_w * w_inf * w_inf / ((1.0 - self.mu_w) * self.lambda_min_p)
    }

    /// First step at which `states` violates the bound, if any.
    pub fn first_violation(&self, states: &[Vec<f64>], w_inf: f64) -> Option<usize> {
        let x0 = norm(&states[0]);
        states.iter().enumerate().position(|(k, x)| {
            let v = norm(x);
            v * v > self.bound_sq(k, x0, w_inf) * (1.0 + 1e-12)
        })
    }
}

fn require_mode(res: &SynthesisResult, allowed: &[Mode], what: &str) -> Result<()> {
    if !allowed.contains(&res.mode) {
        return Err(Error::Config(format!("{what} does not apply to a {} result", res.mode)));
    }
    Ok(())
}

fn grid_max(n: usize, r: f64, grid: &BallGrid, f: impl Fn(&[f64]) -> Result<f64> + Sync) -> Result<f64> {
    let pts = ball_samples(n, r, grid.per_axis, grid.random, grid.seed);
    let values = pts.par_iter().map(|x| f(x)).collect::<Result<Vec<f64>>>()?;
    Ok(values.into_iter().fold(0.0, f64::max) * (1.0 + grid.inflation))
}

/// `max_{B_r} ‖A(x) + B(x)K‖` by grid sampling.
pub fn closed_loop_gain<D: Dynamics + ?Sized>(sys: &D, k: &Mat, r: f64, grid: &BallGrid) -> Result<f64> {
    grid_max(sys.n(), r, grid, |x| {
        let (a, b) = sys.matrices(x)?;
        Ok(linalg::spectral_norm(&(a + b * k)))
    })
}

/// Data-based bound `(‖Zc‖ + ‖Q^{1/2}‖‖A^{-1/2}‖)·max_{B_r} ‖[Ξ_A(x)x; Ξ_B(x)Kx]‖`.
pub fn closed_loop_gain_bound(set: &ConsistencySet, lib: &BasisLibrary, k: &Mat, r: f64, grid: &BallGrid) -> Result<f64> {
    let factor = linalg::spectral_norm(&set.zc) + linalg::spectral_norm(&set.q_sqrt) * linalg::spectral_norm(&set.a_inv_sqrt);
    let reg = grid_max(lib.n, r, grid, |x| {
        let u = k * Vector::from_column_slice(x);
        Ok(lib.regressor(x, u.as_slice())?.norm())
    })?;
    Ok(factor * reg)
}

pub fn robustness_model<D: Dynamics + ?Sized>(res: &SynthesisResult, sys: &D, grid: &BallGrid) -> Result<RobustnessCertificate> {
    require_mode(res, &[Mode::Model], "model robustness")?;
    RobustnessCertificate::new(res, closed_loop_gain(sys, &res.k, res.r, grid)?, false)
}

pub fn robustness_data(
    res: &SynthesisResult,
    set: &ConsistencySet,
    lib: &BasisLibrary,
    grid: &BallGrid,
) -> Result<RobustnessCertificate> {
    require_mode(res, &[Mode::Data, Mode::DataSat], "data robustness")?;
    RobustnessCertificate::new(res, closed_loop_gain_bound(set, lib, &res.k, res.r, grid)?, true)
}

/// Where the Lyapunov difference comes from.
#[derive(Clone, Copy)]
pub enum DecreaseOracle<'a> {
    /// Exact `v(x) = V(x⁺) − V(x)` on a known system.
    Model(&'a dyn Dynamics),
    /// The data-computable upper bound `v_data(x)`.
    DataBound { set: &'a ConsistencySet, lib: &'a BasisLibrary },
}

/// `u = Kx`, through `sat(·)` when the result carries saturation levels.
fn control(res: &SynthesisResult, x: &[f64]) -> Vec<f64> {
    let u = (&res.k * Vector::from_column_slice(x)).as_slice().to_vec();
    match &res.u_bar {
        Some(levels) => saturate(&u, levels),
        None => u,
    }
}

/// `v(x) = V(x⁺) − V(x)` with `V(x) = xᵀΓ⁻¹x`.
pub fn decrease_model(res: &SynthesisResult, sys: &dyn Dynamics, x: &[f64]) -> Result<f64> {
    let next = sys.step(x, &control(res, x))?;
    Ok(linalg::quad_form(&res.p, &next) - res.lyapunov(x))
}

/// `v_data(x) = −xᵀΓ⁻¹x + v1 + v2 + v3` with `φ = [Ξ_A(x)x; Ξ_B(x)u]`:
/// `v1 = φᵀZcᵀΓ⁻¹Zcφ`, `v2 = 2|Q^{1/2}Γ⁻¹Zcφ|·|A^{-1/2}φ|`,
/// `v3 = ‖Q^{1/2}Γ⁻¹Q^{1/2}‖·|A^{-1/2}φ|²`. An upper bound of `v(x)` for
/// every system in the consistency set.
pub fn decrease_data_bound(res: &SynthesisResult, set: &ConsistencySet, lib: &BasisLibrary, x: &[f64]) -> Result<f64> {
    let phi = lib.regressor(x, &control(res, x))?;
    let zphi = &set.zc * &phi;
    let aphi = (&set.a_inv_sqrt * &phi).norm();
    let v1 = linalg::quad_form(&res.p, &zphi);
    let v2 = 2.0 * (&set.q_sqrt * &res.p * &zphi).norm() * aphi;
    let v3 = linalg::spectral_norm(&(&set.q_sqrt * &res.p * &set.q_sqrt)) * aphi * aphi;
    Ok(-res.lyapunov(x) + v1 + v2 + v3)
}

impl DecreaseOracle<'_> {
    pub fn eval(&self, res: &SynthesisResult, x: &[f64]) -> Result<f64> {
        match *self {
            DecreaseOracle::Model(sys) => decrease_model(res, sys, x),
            DecreaseOracle::DataBound { set, lib } => decrease_data_bound(res, set, lib, x),
        }
    }
}

/// Tensor grid on `[-half_width, half_width]^n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub half_width: f64,
    pub per_axis: usize,
    /// Points closer to the origin than `origin_exclusion·r` are ignored.
    pub origin_exclusion: f64,
}

impl GridSpec {
    pub const MAX_DIM: usize = 3;
    pub const MIN_PER_AXIS: usize = 50;

    pub fn new(half_width: f64, per_axis: usize) -> Self {
        GridSpec { half_width, per_axis, origin_exclusion: 1e-3 }
    }

    fn points(&self, n: usize) -> Vec<Vec<f64>> {
        let k = self.per_axis.max(2);
        let axis: Vec<f64> = (0..k).map(|i| -self.half_width + 2.0 * self.half_width * i as f64 / (k - 1) as f64).collect();
        (0..k.pow(n as u32))
            .map(|flat| {
                let mut rem = flat;
                (0..n)
                    .map(|_| {
                        let v = axis[rem % k];
                        rem /= k;
                        v
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecreaseSample {
    pub x: Vec<f64>,
    pub v: f64,
    /// `xᵀΓ⁻¹x`.
    pub level: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SublevelRoa {
    pub grid: GridSpec,
    /// Fewer grid points per axis than recommended.
    pub coarse: bool,
    pub samples: Vec<DecreaseSample>,
    /// Largest level whose sublevel set contains only grid points with
    /// `v < 0` (origin neighbourhood excepted).
    pub gamma: f64,
    /// True when `gamma` is limited by the grid extent rather than by a
    /// point with `v ≥ 0`.
    pub box_limited: bool,
    #[serde(with = "row_major")]
    pub ellipsoid: Mat,
    /// The union with the set certified at synthesis.
    pub union: RoaDescription,
}

impl SublevelRoa {
    pub fn contains(&self, x: &[f64]) -> bool {
        linalg::quad_form(&self.ellipsoid, &Vector::from_column_slice(x)) <= self.gamma
    }
}

/// Largest `γ` such that every grid point in `{xᵀΓ⁻¹x ≤ γ}` outside the
/// origin neighbourhood has a negative decrease value, and the ellipsoid
/// fits the grid box. Computed exactly from the sorted levels rather than
/// by bisection.
pub fn sublevel_roa(res: &SynthesisResult, oracle: DecreaseOracle<'_>, grid: &GridSpec) -> Result<SublevelRoa> {
    let n = res.n();
    if n > GridSpec::MAX_DIM {
        return Err(Error::Dimension(format!("sublevel search grids at most {} dimensions, got n = {n}", GridSpec::MAX_DIM)));
    }
    if !(grid.half_width > 0.0) || grid.per_axis < 2 {
        return Err(Error::Config("sublevel grid needs a positive half-width and at least 2 points per axis".into()));
    }
    let exclusion = grid.origin_exclusion * res.r;
    let samples = grid
        .points(n)
        .into_par_iter()
        .filter(|x| norm(x) > exclusion)
        .map(|x| {
            let v = oracle.eval(res, &x)?;
            let level = res.lyapunov(&x);
            Ok(DecreaseSample { x, v, level })
        })
        .collect::<Result<Vec<_>>>()?;
    if !samples.iter().any(|s| s.v < 0.0) {
        return Err(Error::EmptyDecreaseSet("no grid point has a negative Lyapunov difference".into()));
    }
    // the ellipsoid xᵀPx ≤ γ reaches |x_i| = sqrt(γ·Γ_ii)
    let box_level = grid.half_width.powi(2) / (0..n).map(|i| res.gamma[(i, i)]).fold(0.0, f64::max);
    let first_bad = samples.iter().filter(|s| !(s.v < 0.0)).map(|s| s.level).fold(f64::INFINITY, f64::min);
    // strictly below the first offending level
    let bad_level = first_bad * (1.0 - 1e-9);
    let (gamma, box_limited) = if box_level <= bad_level { (box_level, true) } else { (bad_level, false) };
    let union = RoaDescription {
        radius: res.roa.radius,
        ellipsoid: Some(res.p.clone()),
        level: res.roa.level,
        sublevel: Some(gamma),
        set: if res.mode.is_saturated() { RoaSet::BallAndEllipsoidOrSublevel } else { RoaSet::BallOrSublevel },
    };
    Ok(SublevelRoa {
        grid: *grid,
        coarse: n == 2 && grid.per_axis < GridSpec::MIN_PER_AXIS,
        samples,
        gamma,
        box_limited,
        ellipsoid: res.p.clone(),
        union,
    })
}

/// `x1,..,xn,v,level,decreasing,in_sublevel` per grid point.
pub fn write_decrease_csv(roa: &SublevelRoa, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = roa.ellipsoid.nrows();
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.extend(["v", "level", "decreasing", "in_sublevel"].map(String::from));
    w.write_record(&header)?;
    for s in &roa.samples {
        let mut row: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
        row.push(s.v.to_string());
        row.push(s.level.to_string());
        row.push(u8::from(s.v < 0.0).to_string());
        row.push(u8::from(s.level <= roa.gamma).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Points on `{xᵀPx = level}`: a circle for `n = 2`, a Fibonacci sphere
/// for `n = 3`.
pub fn ellipsoid_boundary(p: &Mat, level: f64, count: usize) -> Result<Vec<Vec<f64>>> {
    let n = p.nrows();
    let dirs: Vec<Vec<f64>> = match n {
        2 => (0..count).map(|i| {
            let t = std::f64::consts::TAU * i as f64 / count as f64;
            vec![t.cos(), t.sin()]
        }).collect(),
        3 => (0..count).map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let rho = (1.0 - z * z).sqrt();
            let t = std::f64::consts::PI * (3.0 - 5f64.sqrt()) * i as f64;
            vec![rho * t.cos(), rho * t.sin(), z]
        }).collect(),
        _ => return Err(Error::Dimension(format!("boundary sampling supports n = 2 or 3, got {n}"))),
    };
    // x = sqrt(level)·P^{-1/2}·d
    let shape = linalg::inv_sqrt_pd(p)? * level.max(0.0).sqrt();
    Ok(dirs.into_iter().map(|d| (&shape * Vector::from_vec(d)).as_slice().to_vec()).collect())
}

/// `set,x1,..,xn` rows for the boundaries of the sublevel ellipsoid, the
/// certified ellipsoid (saturated modes) and the certified ball.
pub fn write_boundary_csv(roa: &SublevelRoa, path: &Path, count: usize) -> Result<()> {
    let n = roa.ellipsoid.nrows();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["set".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    let mut emit = |name: &str, pts: Vec<Vec<f64>>| -> Result<()> {
        for p in pts {
            let mut row = vec![name.to_string()];
            row.extend(p.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        Ok(())
    };
    emit("sublevel", ellipsoid_boundary(&roa.ellipsoid, roa.gamma, count)?)?;
    if let Some(level) = roa.union.level {
        emit("certified_ellipsoid", ellipsoid_boundary(&roa.ellipsoid, level, count)?)?;
    }
    let ball = Mat::identity(n, n) / roa.union.radius.powi(2);
    emit("certified_ball", ellipsoid_boundary(&ball, 1.0, count)?)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::example1;
    use crate::model::SdrModel;
    use crate::synth::{synthesize_model, SynthOptions};
    use approx::assert_relative_eq;

    fn reference_result() -> SynthesisResult {
        let mut res = synthesize_model(&example1::model(), 1.1, &SynthOptions::default()).unwrap();
        let (g, y, e) = example1::reference_certificate();
        res.p = linalg::spd_inverse(&g).unwrap();
        res.k = &y * &res.p;
        res.gamma = g;
        res.y = y;
        res.eps = e;
        res
    }

    #[test]
    fn isotropic_delta_x0() {
        let res = reference_result();
        let cert = robustness_model(&res, &example1::model(), &BallGrid { per_axis: 41, ..Default::default() }).unwrap();
        let c = 34.3888;
        assert_relative_eq!(cert.delta_x0, 1.0 - 0.1402 / (2.0 * c), epsilon = 1e-12);
        assert!((cert.delta_x0 - 0.99796).abs() < 1e-5);
        assert!(cert.mu_w > 0.0 && cert.mu_w < 1.0);
        // w ≡ 0: admissible iff |x0|² ≤ min(r², r²/δ_x0)
        assert!(cert.admissible(1.1, 0.0));
        assert!(!cert.admissible(1.1 + 1e-9, 0.0));
        assert_relative_eq!(cert.max_disturbance(0.0), (1.1f64.powi(2) / cert.delta_w).sqrt());
    }

    #[test]
    fn scalar_stable_loop_is_box_limited() {
        let model = SdrModel::parse(&[&["0.5"]], &[&["0"]], 1.0).unwrap();
        let mut res = synthesize_model(&model, 1.0, &SynthOptions::default()).unwrap();
        res.k = Mat::zeros(1, 1);
        let roa = sublevel_roa(&res, DecreaseOracle::Model(&model), &GridSpec::new(2.0, 101)).unwrap();
        assert!(roa.box_limited);
        assert!(roa.samples.iter().all(|s| s.v < 0.0));
        assert_relative_eq!(roa.gamma, 4.0 / res.gamma[(0, 0)], epsilon = 1e-12);
    }

    #[test]
    fn high_dimension_is_rejected() {
        let mut res = reference_result();
        res.gamma = Mat::identity(4, 4);
        res.p = Mat::identity(4, 4);
        let model = example1::model();
        assert!(matches!(
            sublevel_roa(&res, DecreaseOracle::Model(&model), &GridSpec::new(1.0, 10)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn example1_sublevel_points_decrease() {
        let res = reference_result();
        let model = example1::model();
        let roa = sublevel_roa(&res, DecreaseOracle::Model(&model), &GridSpec::new(3.0, 121)).unwrap();
        for s in roa.samples.iter().filter(|s| s.level <= roa.gamma) {
            assert!(s.v < 0.0);
        }
        // the certified ball sits inside the sublevel set
        for x in ball_samples(2, res.r0 * (1.0 - 1e-3), 41, 0, 0) {
            if norm(&x) > 1e-3 * res.r {
                assert!(roa.contains(&x) || decrease_model(&res, &model, &x).unwrap() < 0.0);
            }
        }
        assert!(roa.union.contains(&[0.0, 1.0]));
    }

    #[test]
    fn boundary_points_lie_on_the_level_set() {
        let p = Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        for x in ellipsoid_boundary(&p, 0.7, 16).unwrap() {
            assert_relative_eq!(linalg::quad_form(&p, &Vector::from_vec(x)), 0.7, epsilon = 1e-12);
        }
        assert!(matches!(ellipsoid_boundary(&Mat::identity(4, 4), 1.0, 4), Err(Error::Dimension(_))));
    }
}

//! The stabilization LMIs as block matrices over `(Γ, Y, ε)` and the
//! saturation multipliers `(W, S)`.
//!
//! Model-based blocks take a vertex `G = [A_v B_v]` of size `n × (n+m)`;
//! data-driven blocks take a basis vertex `Q_v` of size `(n_A+n_B) × (n+m)`
//! together with the consistency set.

use serde::{Deserialize, Serialize};

use super::{AffMat, SdpProblem};
use crate::data::ConsistencySet;
use crate::linalg::{self, Mat};
use crate::{Error, Result};

/// `Γ` (symmetric `n × n`), `Y` (`m × n`) and the scalar `ε_Γ`.
#[derive(Debug, Clone)]
pub struct LyapunovVars {
    pub n: usize,
    pub m: usize,
    pub gamma: AffMat,
    pub y: AffMat,
    pub eps: usize,
}

impl LyapunovVars {
    pub fn new(p: &mut SdpProblem, n: usize, m: usize) -> Self {
        let gamma = p.symmetric("Gamma", n);
        let y = p.full("Y", m, n);
        let eps = p.scalar("eps");
        LyapunovVars { n, m, gamma, y, eps }
    }

    /// `[Γ; Y]`.
    pub fn stacked(&self) -> AffMat {
        AffMat::vstack(&[&self.gamma, &self.y])
    }

    fn eps_eye(&self) -> AffMat {
        AffMat::scalar_eye(self.eps, self.n)
    }
}

/// Lyapunov variables plus the sector multipliers `W` (`m × n`) and
/// diagonal `S` (`m × m`).
#[derive(Debug, Clone)]
pub struct SaturationVars {
    pub base: LyapunovVars,
    pub w: AffMat,
    pub s: AffMat,
}

impl SaturationVars {
    pub fn new(p: &mut SdpProblem, n: usize, m: usize) -> Self {
        let base = LyapunovVars::new(p, n, m);
        let w = p.full("W", m, n);
        let s = p.diagonal("S", m);
        SaturationVars { base, w, s }
    }

    /// `[[Γ, 0], [Y, S]]`, so that `G·this = [G[Γ;Y], G[0;S]]`.
    fn lifted(&self) -> AffMat {
        AffMat::block(&[vec![Some(self.base.gamma.clone()), None], vec![Some(self.base.y.clone()), Some(self.s.clone())]])
    }

    /// `[[−Γ+εI, −Yᵀ−Wᵀ], [−Y−W, −2S]]`.
    fn sector_corner(&self) -> AffMat {
        let v = &self.base;
        let off = v.y.add(&self.w).neg();
        AffMat::block(&[
            vec![Some(v.gamma.neg().add(&v.eps_eye())), Some(off.t())],
            vec![Some(off), Some(self.s.scale(-2.0))],
        ])
    }
}

fn check_vertex(g: &Mat, rows: usize, cols: usize, what: &str) -> Result<()> {
    if g.shape() != (rows, cols) {
        return Err(Error::Shape(format!("{what} vertex is {:?}, expected ({rows}, {cols})", g.shape())));
    }
    Ok(())
}

/// `[[−Γ, G[Γ;Y]], [∗, −Γ+εI]]`, required `⪯ 0`.
pub fn model_stability_block(g: &Mat, v: &LyapunovVars) -> Result<AffMat> {
    check_vertex(g, v.n, v.n + v.m, "model")?;
    let gx = v.stacked().lmul(g);
    Ok(AffMat::block(&[
        vec![Some(v.gamma.neg()), Some(gx.clone())],
        vec![Some(gx.t()), Some(v.gamma.neg().add(&v.eps_eye()))],
    ]))
}

pub fn add_model_stability_block(p: &mut SdpProblem, g: &Mat, v: &LyapunovVars) -> Result<usize> {
    let idx = p.constraints().len();
    p.nsd(format!("stability vertex {idx}"), model_stability_block(g, v)?)
}

/// `[[Γ, W_(i)ᵀ], [W_(i), ū_i²]]`, required `⪰ 0`: the ellipsoid
/// `xᵀΓ⁻¹x ≤ 1` lies where `|W_(i)Γ⁻¹x| ≤ ū_i`.
pub fn input_bound_block(v: &SaturationVars, i: usize, u_bar: f64) -> AffMat {
    let wi = v.w.row(i);
    AffMat::block(&[
        vec![Some(v.base.gamma.clone()), Some(wi.t())],
        vec![Some(wi), Some(AffMat::constant(Mat::from_element(1, 1, u_bar * u_bar)))],
    ])
}

/// `[[−Γ+εI, −Yᵀ−Wᵀ, (G[Γ;Y])ᵀ], [−Y−W, −2S, (G[0;S])ᵀ], [G[Γ;Y], G[0;S], −Γ]]`,
/// required `⪯ 0`.
pub fn model_saturation_block(g: &Mat, v: &SaturationVars) -> Result<AffMat> {
    check_vertex(g, v.base.n, v.base.n + v.base.m, "model")?;
    let gl = v.lifted().lmul(g);
    Ok(AffMat::block(&[
        vec![Some(v.sector_corner()), Some(gl.t())],
        vec![Some(gl), Some(v.base.gamma.neg())],
    ]))
}

fn check_levels(u_bar: &[f64], m: usize) -> Result<()> {
    if u_bar.len() != m || u_bar.iter().any(|u| !u.is_finite() || *u < 0.0) {
        return Err(Error::Config(format!("saturation levels {u_bar:?} must be {m} finite nonnegative values")));
    }
    Ok(())
}

/// The `m` input-bound blocks followed by one saturation block per vertex.
pub fn add_saturation_blocks(p: &mut SdpProblem, vertices: &[Mat], v: &SaturationVars, u_bar: &[f64]) -> Result<Vec<usize>> {
    check_levels(u_bar, v.base.m)?;
    let mut handles = Vec::new();
    for (i, &ub) in u_bar.iter().enumerate() {
        handles.push(p.psd(format!("input bound {}", i + 1), input_bound_block(v, i, ub))?);
    }
    for (k, g) in vertices.iter().enumerate() {
        handles.push(p.nsd(format!("saturated stability vertex {k}"), model_saturation_block(g, v)?)?);
    }
    Ok(handles)
}

/// Which of two equivalent matrices to build for a data-driven vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataForm {
    /// The block with `−Γ−C`, `B` and `−A` as written in terms of the
    /// data Gram matrices.
    Literal,
    /// Its Schur complement with respect to `−A`, re-expanded with a
    /// factor `R` of `Q_vᵀA⁻¹Q_v`. Same feasible set, but free of the
    /// large cancelling terms `X1X1ᵀ` and `BA⁻¹Bᵀ`.
    Conditioned,
}

/// `R` with `RᵀR = Q_vᵀ A⁻¹ Q_v`.
fn vertex_factor(set: &ConsistencySet, q: &Mat) -> Result<Mat> {
    let gram = q.transpose() * &set.a_inv * q;
    linalg::sqrt_psd(&gram, 1e-8, None)
}

/// Literal: `[[−Γ−C, 0, B], [0, −Γ+εI, −(Q_v[Γ;Y])ᵀ], [Bᵀ, −Q_v[Γ;Y], −A]]`.
/// Conditioned: `[[−Γ+Q, Zc Q_v[Γ;Y], 0], [∗, −Γ+εI, (R[Γ;Y])ᵀ], [0, R[Γ;Y], −I]]`.
/// Both required `⪯ 0`.
pub fn data_stability_block(set: &ConsistencySet, q: &Mat, v: &LyapunovVars, form: DataForm) -> Result<AffMat> {
    check_vertex(q, set.width(), v.n + v.m, "basis")?;
    let qx = v.stacked().lmul(q);
    let lower_right = v.gamma.neg().add(&v.eps_eye());
    Ok(match form {
        DataForm::Literal => AffMat::block(&[
            vec![Some(v.gamma.neg().add_constant(&-&set.c)), None, Some(AffMat::constant(set.b.clone()))],
            vec![None, Some(lower_right), Some(qx.t().neg())],
            vec![Some(AffMat::constant(set.b.transpose())), Some(qx.neg()), Some(AffMat::constant(-&set.a))],
        ]),
        DataForm::Conditioned => {
            let r = vertex_factor(set, q)?;
            let rx = v.stacked().lmul(&r);
            let zx = qx.lmul(&set.zc);
            AffMat::block(&[
                vec![Some(v.gamma.neg().add_constant(&set.q)), Some(zx.clone()), None],
                vec![Some(zx.t()), Some(lower_right), Some(rx.t())],
                vec![None, Some(rx), Some(AffMat::constant(-Mat::identity(v.n + v.m, v.n + v.m)))],
            ])
        }
    })
}

/// Adds the conditioned data block for one basis vertex.
pub fn add_data_stability_block(p: &mut SdpProblem, set: &ConsistencySet, q: &Mat, v: &LyapunovVars) -> Result<usize> {
    let idx = p.constraints().len();
    p.nsd(format!("data stability vertex {idx}"), data_stability_block(set, q, v, DataForm::Conditioned)?)
}

/// Literal: `[[T, 0, (Q_v L)ᵀ], [0, −Γ−C, −B], [Q_v L, −Bᵀ, −A]]` with the
/// sector corner `T = [[−Γ+εI, −Yᵀ−Wᵀ], [−Y−W, −2S]]` and
/// `L = [[Γ, 0], [Y, S]]`.
/// Conditioned: `[[T, (Zc Q_v L)ᵀ, (R L)ᵀ], [Zc Q_v L, −Γ+Q, 0], [R L, 0, −I]]`.
pub fn data_saturation_block(set: &ConsistencySet, q: &Mat, v: &SaturationVars, form: DataForm) -> Result<AffMat> {
    let (n, m) = (v.base.n, v.base.m);
    check_vertex(q, set.width(), n + m, "basis")?;
    let lifted = v.lifted();
    let ql = lifted.lmul(q);
    Ok(match form {
        DataForm::Literal => AffMat::block(&[
            vec![Some(v.sector_corner()), None, Some(ql.t())],
            vec![None, Some(v.base.gamma.neg().add_constant(&-&set.c)), Some(AffMat::constant(-&set.b))],
            vec![Some(ql), Some(AffMat::constant(-set.b.transpose())), Some(AffMat::constant(-&set.a))],
        ]),
        DataForm::Conditioned => {
            let r = vertex_factor(set, q)?;
            let rl = lifted.lmul(&r);
            let zl = ql.lmul(&set.zc);
            AffMat::block(&[
                vec![Some(v.sector_corner()), Some(zl.t()), Some(rl.t())],
                vec![Some(zl), Some(v.base.gamma.neg().add_constant(&set.q)), None],
                vec![Some(rl), None, Some(AffMat::constant(-Mat::identity(n + m, n + m)))],
            ])
        }
    })
}

/// The `m` input-bound blocks followed by one conditioned data saturation
/// block per basis vertex.
pub fn add_data_saturation_blocks(
    p: &mut SdpProblem,
    set: &ConsistencySet,
    vertices: &[Mat],
    v: &SaturationVars,
    u_bar: &[f64],
) -> Result<Vec<usize>> {
    check_levels(u_bar, v.base.m)?;
    let mut handles = Vec::new();
    for (i, &ub) in u_bar.iter().enumerate() {
        handles.push(p.psd(format!("input bound {}", i + 1), input_bound_block(v, i, ub))?);
    }
    for (k, q) in vertices.iter().enumerate() {
        let block = data_saturation_block(set, q, v, DataForm::Conditioned)?;
        handles.push(p.nsd(format!("data saturated stability vertex {k}"), block)?);
    }
    Ok(handles)
}

/// Lower bounds that stand in for the strict inequalities `Γ ≻ 0`,
/// `ε_Γ > 0` and `S ≻ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Floors {
    /// `Γ ⪰ μI` and `S ⪰ μI`.
    pub mu: f64,
    /// `ε_Γ ≥ eps_min`.
    pub eps_min: f64,
}

impl Default for Floors {
    fn default() -> Self {
        Floors { mu: 1e-6, eps_min: 1e-8 }
    }
}

pub fn add_floors(p: &mut SdpProblem, v: &LyapunovVars, floors: &Floors) -> Result<()> {
    let n = v.n;
    p.psd("Gamma floor", v.gamma.sub(&AffMat::constant(Mat::identity(n, n) * floors.mu)))?;
    p.scalar_lower_bound("eps floor", v.eps, floors.eps_min)?;
    Ok(())
}

pub fn add_sector_floor(p: &mut SdpProblem, v: &SaturationVars, floors: &Floors) -> Result<()> {
    let m = v.base.m;
    p.psd("S floor", v.s.sub(&AffMat::constant(Mat::identity(m, m) * floors.mu)))?;
    Ok(())
}

/// `Γ ⪯ cap·I`.
pub fn add_gamma_cap(p: &mut SdpProblem, v: &LyapunovVars, cap: f64) -> Result<()> {
    let n = v.n;
    p.psd("Gamma cap", AffMat::constant(Mat::identity(n, n) * cap).sub(&v.gamma))?;
    Ok(())
}

/// `tI ⪰ Γ ⪰ (t − ε_Γ/2)I` for a fresh scalar `t`. Since `ε_Γ ≤ λ_min(Γ)`
/// on any stability block, this gives `λmax² ≤ λmin(λmax + ε_Γ)`, so the
/// radius formula returns the full design radius.
pub fn add_radius_preservation(p: &mut SdpProblem, v: &LyapunovVars) -> Result<usize> {
    let t = p.eig_upper("radius lambda_max", &v.gamma)?;
    let n = v.n;
    let lower = v.gamma.sub(&AffMat::scalar_eye(t, n)).add(&AffMat::scalar_eye(v.eps, n).scale(0.5));
    p.psd("radius preservation", lower)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Objective {
    /// Any feasible point.
    Feasibility,
    /// Maximize `ε_Γ`.
    MaximizeEps,
    /// Minimize `λ_max(Γ) − λ_min(Γ) − c1·ε_Γ − c2·trace(Γ)` through
    /// epigraph variables `Γ ⪯ tI`, `Γ ⪰ sI`.
    Spread { c1: f64, c2: f64 },
}

pub fn apply_objective(p: &mut SdpProblem, v: &LyapunovVars, objective: Objective) -> Result<()> {
    match objective {
        Objective::Feasibility => {}
        Objective::MaximizeEps => p.add_objective(v.eps, -1.0),
        Objective::Spread { c1, c2 } => {
            let t = p.eig_upper("lambda_max", &v.gamma)?;
            let s = p.eig_lower("lambda_min", &v.gamma)?;
            p.add_objective(t, 1.0);
            p.add_objective(s, -1.0);
            p.add_objective(v.eps, -c1);
            p.add_objective_trace(&v.gamma, -c2);
        }
    }
    Ok(())
}

/// Values of the Lyapunov variables at a solution.
#[derive(Debug, Clone)]
pub struct LyapunovValues {
    pub gamma: Mat,
    pub y: Mat,
    pub eps: f64,
}

impl LyapunovVars {
    pub fn values(&self, x: &[f64]) -> LyapunovValues {
        LyapunovValues { gamma: linalg::symmetrize(&self.gamma.eval(x)), y: self.y.eval(x), eps: x[self.eps] }
    }
}

/// Fixed-value stand-ins for the variables, for evaluating blocks at a
/// given point without a solver.
pub fn lyapunov_point(gamma: &Mat, y: &Mat, eps: f64) -> (LyapunovVars, Vec<f64>) {
    let (n, m) = (gamma.nrows(), y.nrows());
    let mut p = SdpProblem::new();
    let v = LyapunovVars::new(&mut p, n, m);
    let mut x = vec![0.0; p.num_vars()];
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            x[k] = gamma[(i, j)];
            k += 1;
        }
    }
    for i in 0..m {
        for j in 0..n {
            x[k] = y[(i, j)];
            k += 1;
        }
    }
    x[v.eps] = eps;
    (v, x)
}

/// As [`lyapunov_point`], with `W` and diagonal `S`.
pub fn saturation_point(gamma: &Mat, y: &Mat, eps: f64, w: &Mat, s_diag: &[f64]) -> (SaturationVars, Vec<f64>) {
    let (n, m) = (gamma.nrows(), y.nrows());
    let mut p = SdpProblem::new();
    let v = SaturationVars::new(&mut p, n, m);
    let (_, base) = lyapunov_point(gamma, y, eps);
    let mut x = base;
    x.resize(p.num_vars(), 0.0);
    let mut k = v.base.eps + 1;
    for i in 0..m {
        for j in 0..n {
            x[k] = w[(i, j)];
            k += 1;
        }
    }
    for &s in s_diag {
        x[k] = s;
        k += 1;
    }
    (v, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{build_model_vertices, DEFAULT_VERTEX_CAP};
    use crate::expr::BoundMode;

    fn lmax(m: &Mat) -> f64 {
        linalg::lambda_max(m)
    }

    #[test]
    fn reference_certificate_satisfies_vertices() {
        let (g, y, e) = fixtures::example1::reference_certificate();
        let verts = build_model_vertices(&fixtures::example1::model(), 1.1, BoundMode::IntervalBox, DEFAULT_VERTEX_CAP).unwrap();
        let (v, x) = lyapunov_point(&g, &y, e);
        for gv in &verts.vertices {
            let blk = model_stability_block(gv, &v).unwrap().eval(&x);
            assert!(lmax(&blk) <= 1e-3 * blk.norm(), "{}", lmax(&blk));
        }
    }

    #[test]
    fn stable_and_unstable_lti_vertices() {
        let (v, x) = lyapunov_point(&Mat::identity(2, 2), &Mat::zeros(1, 2), 0.5);
        let mut g = Mat::zeros(2, 3);
        g.view_mut((0, 0), (2, 2)).copy_from(&(Mat::identity(2, 2) * 0.5));
        let blk = model_stability_block(&g, &v).unwrap().eval(&x);
        // oracle: eigenvalues of [[-1, .5],[.5, -.5]] per axis
        let oracle = (-1.5 + (0.25f64 + 1.0).sqrt()) / 2.0;
        assert!((lmax(&blk) - oracle).abs() < 1e-12);
        g.view_mut((0, 0), (2, 2)).copy_from(&(Mat::identity(2, 2) * 2.0));
        let blk = model_stability_block(&g, &v).unwrap().eval(&x);
        assert!(lmax(&blk) > 0.0);
    }

    #[test]
    fn input_bound_block_at_rest() {
        let (v, x) = saturation_point(&Mat::identity(2, 2), &Mat::zeros(1, 2), 0.1, &Mat::zeros(1, 2), &[1.0]);
        assert_eq!(input_bound_block(&v, 0, 1.0).eval(&x), Mat::identity(3, 3));
    }

    #[test]
    fn data_block_dimensions_and_structure() {
        let lm = fixtures::example3::library_model();
        let g = crate::sim::generate_experiments(&lm, &fixtures::example3::experiment_spec(7)).unwrap();
        let data = crate::data::assemble(&g.experiments, &lm.lib, &fixtures::example3::theta()).unwrap();
        let set = ConsistencySet::new(&data).unwrap();
        let q = Mat::from_fn(10, 3, |i, j| if (i < 2 && j == 0) || ((2..5).contains(&i) && j == 1) || (i >= 5 && j == 2) { 0.7 } else { 0.0 });
        let (v, x) = lyapunov_point(&(Mat::identity(2, 2) * 0.01), &Mat::from_row_slice(1, 2, &[-0.02, -0.02]), 1e-5);
        let lit = data_stability_block(&set, &q, &v, DataForm::Literal).unwrap();
        assert_eq!(lit.rows(), 14);
        let (sv, sx) = saturation_point(&(Mat::identity(2, 2) * 0.01), &Mat::zeros(1, 2), 1e-5, &Mat::zeros(1, 2), &[1.0]);
        let lit_sat = data_saturation_block(&set, &q, &sv, DataForm::Literal).unwrap().eval(&sx);
        assert_eq!(lit_sat.nrows(), 15);
        // W = Y = 0, S = I: the sector off-diagonals vanish
        assert_eq!(lit_sat.view((0, 2), (2, 1)), Mat::zeros(2, 1));
        // literal and conditioned forms agree in sign of λ_max
        let lit_v = lit.eval(&x);
        let cond_v = data_stability_block(&set, &q, &v, DataForm::Conditioned).unwrap().eval(&x);
        assert_eq!(lmax(&lit_v) <= 0.0, lmax(&cond_v) <= 0.0);
    }
}

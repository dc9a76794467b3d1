//! State-dependent models, basis libraries and their vertex polytopes.

use serde::{Deserialize, Serialize};

use crate::expr::{BoundMode, Expr, Interval};
use crate::linalg::{Mat, Vector};
use crate::{Error, Result};

/// Intervals narrower than this are collapsed to a point.
pub const DEGENERATE_WIDTH: f64 = 1e-12;
pub const DEFAULT_VERTEX_CAP: usize = 4096;

/// Anything that yields `A(x)` and `B(x)`.
pub trait Dynamics: Sync {
    fn n(&self) -> usize;
    fn m(&self) -> usize;
    fn matrices(&self, x: &[f64]) -> Result<(Mat, Mat)>;

    /// `A(x)x + B(x)u`.
    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vector> {
        if x.len() != self.n() || u.len() != self.m() {
            return Err(Error::Shape(format!(
                "state/input of length {}/{} for a system with n = {}, m = {}",
                x.len(),
                u.len(),
                self.n(),
                self.m()
            )));
        }
        let (a, b) = self.matrices(x)?;
        Ok(a * Vector::from_column_slice(x) + b * Vector::from_column_slice(u))
    }
}

fn check_arity(e: &Expr, n: usize, what: &str) -> Result<()> {
    if e.arity() > n {
        return Err(Error::Shape(format!("{what} = {e} references x{} but n = {n}", e.arity())));
    }
    Ok(())
}

/// `x⁺ = A(x)x + B(x)u` with every entry given as an expression.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdrModel {
    pub n: usize,
    pub m: usize,
    /// Row-major `n × n`.
    pub a: Vec<Vec<Expr>>,
    /// Row-major `n × m`.
    pub b: Vec<Vec<Expr>>,
    pub radius: f64,
}

impl SdrModel {
    pub fn new(a: Vec<Vec<Expr>>, b: Vec<Vec<Expr>>, radius: f64) -> Result<Self> {
        let n = a.len();
        let m = b.first().map_or(0, |r| r.len());
        if n == 0 || a.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("A(x) must be a non-empty square grid".into()));
        }
        if b.len() != n || b.iter().any(|r| r.len() != m) || m == 0 {
            return Err(Error::Shape(format!("B(x) must be {n} x m with m >= 1")));
        }
        for (i, row) in a.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                check_arity(e, n, &format!("a{}{}", i + 1, j + 1))?;
            }
        }
        for (i, row) in b.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                check_arity(e, n, &format!("b{}{}", i + 1, j + 1))?;
            }
        }
        let model = SdrModel { n, m, a, b, radius };
        model.matrices(&vec![0.0; n])?;
        Ok(model)
    }

    pub fn parse(a: &[&[&str]], b: &[&[&str]], radius: f64) -> Result<Self> {
        let grid = |rows: &[&[&str]]| -> Result<Vec<Vec<Expr>>> {
            rows.iter()
                .map(|r| r.iter().map(|s| Expr::parse(s).map_err(Error::from)).collect())
                .collect()
        };
        Self::new(grid(a)?, grid(b)?, radius)
    }

    /// Entry expressions in vertex order: `A` row-major, then `B` row-major.
    fn entries(&self) -> impl Iterator<Item = &Expr> {
        self.a.iter().flatten().chain(self.b.iter().flatten())
    }
}

fn eval_grid(grid: &[Vec<Expr>], rows: usize, cols: usize, x: &[f64]) -> Result<Mat> {
    let mut out = Mat::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            out[(i, j)] = grid[i][j].eval(x)?;
        }
    }
    Ok(out)
}

impl Dynamics for SdrModel {
    fn n(&self) -> usize {
        self.n
    }
    fn m(&self) -> usize {
        self.m
    }
    fn matrices(&self, x: &[f64]) -> Result<(Mat, Mat)> {
        if x.len() != self.n {
            return Err(Error::Shape(format!("state of length {} for n = {}", x.len(), self.n)));
        }
        Ok((eval_grid(&self.a, self.n, self.n, x)?, eval_grid(&self.b, self.n, self.m, x)?))
    }
}

/// Known basis functions per column of `A(x)` and `B(x)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisLibrary {
    pub n: usize,
    pub m: usize,
    /// `xi_a[j]` spans column `j` of `A(x)`.
    pub xi_a: Vec<Vec<Expr>>,
    /// `xi_b[j]` spans column `j` of `B(x)`.
    pub xi_b: Vec<Vec<Expr>>,
}

impl BasisLibrary {
    pub fn new(xi_a: Vec<Vec<Expr>>, xi_b: Vec<Vec<Expr>>) -> Result<Self> {
        let n = xi_a.len();
        let m = xi_b.len();
        if n == 0 || m == 0 {
            return Err(Error::Shape("library needs at least one state and one input column".into()));
        }
        for (j, col) in xi_a.iter().chain(xi_b.iter()).enumerate() {
            if col.is_empty() {
                return Err(Error::Shape(format!("library column {} has no basis functions", j + 1)));
            }
            for e in col {
                check_arity(e, n, "basis function")?;
            }
        }
        let lib = BasisLibrary { n, m, xi_a, xi_b };
        lib.xi_a_matrix(&vec![0.0; n])?;
        lib.xi_b_matrix(&vec![0.0; n])?;
        Ok(lib)
    }

    pub fn parse(xi_a: &[&[&str]], xi_b: &[&[&str]]) -> Result<Self> {
        let cols = |c: &[&[&str]]| -> Result<Vec<Vec<Expr>>> {
            c.iter()
                .map(|col| col.iter().map(|s| Expr::parse(s).map_err(Error::from)).collect())
                .collect()
        };
        Self::new(cols(xi_a)?, cols(xi_b)?)
    }

    pub fn n_a(&self) -> usize {
        self.xi_a.iter().map(Vec::len).sum()
    }

    pub fn n_b(&self) -> usize {
        self.xi_b.iter().map(Vec::len).sum()
    }

    fn blockdiag(cols: &[Vec<Expr>], x: &[f64]) -> Result<Mat> {
        let rows: usize = cols.iter().map(Vec::len).sum();
        let mut out = Mat::zeros(rows, cols.len());
        let mut r = 0;
        for (j, col) in cols.iter().enumerate() {
            for e in col {
                out[(r, j)] = e.eval(x)?;
                r += 1;
            }
        }
        Ok(out)
    }

    /// `Ξ_A(x)`, shape `n_A × n`.
    pub fn xi_a_matrix(&self, x: &[f64]) -> Result<Mat> {
        if x.len() != self.n {
            return Err(Error::Shape(format!("state of length {} for n = {}", x.len(), self.n)));
        }
        Self::blockdiag(&self.xi_a, x)
    }

    /// `Ξ_B(x)`, shape `n_B × m`.
    pub fn xi_b_matrix(&self, x: &[f64]) -> Result<Mat> {
        if x.len() != self.n {
            return Err(Error::Shape(format!("state of length {} for n = {}", x.len(), self.n)));
        }
        Self::blockdiag(&self.xi_b, x)
    }

    /// Regressor `[Ξ_A(x)x; Ξ_B(x)u]`.
    pub fn regressor(&self, x: &[f64], u: &[f64]) -> Result<Vector> {
        let za = self.xi_a_matrix(x)? * Vector::from_column_slice(x);
        let zb = self.xi_b_matrix(x)? * Vector::from_column_slice(u);
        Ok(Vector::from_iterator(za.len() + zb.len(), za.iter().chain(zb.iter()).copied()))
    }

    fn entries(&self) -> impl Iterator<Item = &Expr> {
        self.xi_a.iter().flatten().chain(self.xi_b.iter().flatten())
    }
}

/// Coefficients `E_A`, `E_B` of a library model. Only simulation and data
/// generation read these; the data-driven synthesizer never does.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub e_a: Mat,
    pub e_b: Mat,
}

impl GroundTruth {
    /// `[E_A E_B]`.
    pub fn stacked(&self) -> Mat {
        let mut out = Mat::zeros(self.e_a.nrows(), self.e_a.ncols() + self.e_b.ncols());
        out.columns_mut(0, self.e_a.ncols()).copy_from(&self.e_a);
        out.columns_mut(self.e_a.ncols(), self.e_b.ncols()).copy_from(&self.e_b);
        out
    }
}

/// `A(x) = E_A Ξ_A(x)`, `B(x) = E_B Ξ_B(x)`.
pub fn reconstruct_ab(lib: &BasisLibrary, e_a: &Mat, e_b: &Mat, x: &[f64]) -> Result<(Mat, Mat)> {
    if e_a.shape() != (lib.n, lib.n_a()) || e_b.shape() != (lib.n, lib.n_b()) {
        return Err(Error::Shape(format!(
            "E_A {:?} / E_B {:?} do not match library ({} x {}, {} x {})",
            e_a.shape(),
            e_b.shape(),
            lib.n,
            lib.n_a(),
            lib.n,
            lib.n_b()
        )));
    }
    Ok((e_a * lib.xi_a_matrix(x)?, e_b * lib.xi_b_matrix(x)?))
}

/// A library together with its true coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LibraryModel {
    pub lib: BasisLibrary,
    pub truth: GroundTruth,
}

impl LibraryModel {
    pub fn new(lib: BasisLibrary, truth: GroundTruth) -> Result<Self> {
        reconstruct_ab(&lib, &truth.e_a, &truth.e_b, &vec![0.0; lib.n])?;
        Ok(LibraryModel { lib, truth })
    }
}

impl Dynamics for LibraryModel {
    fn n(&self) -> usize {
        self.lib.n
    }
    fn m(&self) -> usize {
        self.lib.m
    }
    fn matrices(&self, x: &[f64]) -> Result<(Mat, Mat)> {
        reconstruct_ab(&self.lib, &self.truth.e_a, &self.truth.e_b, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VertexKind {
    /// Vertices of `[A(x) B(x)]`, each `n × (n+m)`.
    Model,
    /// Block-diagonal `blkdiag(ζ_A1..ζ_An, ζ_B1..ζ_Bm)`, each `(n_A+n_B) × (n+m)`.
    Basis,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VertexSet {
    pub kind: VertexKind,
    pub vertices: Vec<Mat>,
    /// One interval per scalar entry, in vertex order.
    pub intervals: Vec<Interval>,
    pub degenerate_mask: Vec<bool>,
    pub radius: f64,
    pub mode: BoundMode,
}

impl VertexSet {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// True when the bounds come from interval arithmetic.
    pub fn is_sound(&self) -> bool {
        self.mode.is_sound()
    }

    pub fn non_degenerate(&self) -> usize {
        self.degenerate_mask.iter().filter(|d| !**d).count()
    }
}

fn entry_intervals<'a>(
    entries: impl Iterator<Item = &'a Expr>,
    n: usize,
    r: f64,
    mode: BoundMode,
) -> Result<(Vec<Interval>, Vec<bool>)> {
    let mut intervals = Vec::new();
    let mut mask = Vec::new();
    for e in entries {
        let iv = if e.is_constant() {
            Interval::point(e.eval(&[])?)
        } else {
            e.bound_over_ball(n, r, mode)?
        };
        mask.push(iv.width() <= DEGENERATE_WIDTH);
        intervals.push(iv);
    }
    Ok((intervals, mask))
}

/// Endpoint choices in lexicographic order, first free interval most
/// significant, `lo` before `hi`.
fn enumerate_choices(intervals: &[Interval], mask: &[bool], cap: usize) -> Result<Vec<Vec<f64>>> {
    let free: Vec<usize> = (0..intervals.len()).filter(|&i| !mask[i]).collect();
    let k = free.len();
    if k >= usize::BITS as usize - 1 || (1usize << k) > cap {
        return Err(Error::VertexCap { exponent: k, cap });
    }
    let base: Vec<f64> = intervals.iter().map(|iv| iv.lo).collect();
    Ok((0..1usize << k)
        .map(|v| {
            let mut vals = base.clone();
            for (t, &i) in free.iter().enumerate() {
                if (v >> (k - 1 - t)) & 1 == 1 {
                    vals[i] = intervals[i].hi;
                }
            }
            vals
        })
        .collect())
}

/// Vertices `[A B]` whose convex hull covers `{[A(x) B(x)] : |x| ≤ r}`
/// (exactly so in the sound mode).
pub fn build_model_vertices(model: &SdrModel, r: f64, mode: BoundMode, cap: usize) -> Result<VertexSet> {
    let (n, m) = (model.n, model.m);
    let (intervals, mask) = entry_intervals(model.entries(), n, r, mode)?;
    let vertices = enumerate_choices(&intervals, &mask, cap)?
        .into_iter()
        .map(|vals| {
            let mut g = Mat::zeros(n, n + m);
            for i in 0..n {
                for j in 0..n {
                    g[(i, j)] = vals[i * n + j];
                }
                for j in 0..m {
                    g[(i, n + j)] = vals[n * n + i * m + j];
                }
            }
            g
        })
        .collect();
    Ok(VertexSet { kind: VertexKind::Model, vertices, intervals, degenerate_mask: mask, radius: r, mode })
}

/// Block-diagonal vertices covering `blkdiag(Ξ_A(x), Ξ_B(x))` on the ball.
pub fn build_basis_vertices(lib: &BasisLibrary, r: f64, mode: BoundMode, cap: usize) -> Result<VertexSet> {
    let (n, m) = (lib.n, lib.m);
    let (intervals, mask) = entry_intervals(lib.entries(), n, r, mode)?;
    let n_a = lib.n_a();
    let vertices = enumerate_choices(&intervals, &mask, cap)?
        .into_iter()
        .map(|vals| {
            let mut q = Mat::zeros(n_a + lib.n_b(), n + m);
            let mut row = 0;
            for (j, col) in lib.xi_a.iter().chain(lib.xi_b.iter()).enumerate() {
                for _ in col {
                    q[(row, j)] = vals[row];
                    row += 1;
                }
            }
            q
        })
        .collect();
    Ok(VertexSet { kind: VertexKind::Basis, vertices, intervals, degenerate_mask: mask, radius: r, mode })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn example1_dynamics_by_hand() {
        let sys = fixtures::example1::model();
        assert_eq!(sys.step(&[0.0, 0.0], &[0.0]).unwrap().as_slice(), &[0.0, 0.0]);
        let x = sys.step(&[0.0, 1.0], &[0.0]).unwrap();
        assert_relative_eq!(x[0], 0.2, epsilon = 1e-15);
        assert_relative_eq!(x[1], 0.9, epsilon = 1e-15);
        let x = sys.step(&[0.0, 0.0], &[1.0]).unwrap();
        assert_relative_eq!(x[0], 0.1, epsilon = 1e-15);
        assert_relative_eq!(x[1], 0.1, epsilon = 1e-15);
        assert!(matches!(sys.step(&[0.0], &[0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn example1_has_sixteen_vertices() {
        let v = build_model_vertices(&fixtures::example1::model(), 1.1, BoundMode::IntervalBox, DEFAULT_VERTEX_CAP).unwrap();
        assert_eq!(v.len(), 16);
        assert_eq!(v.non_degenerate(), 4);
        // a12 = a21 = 0.2 everywhere
        assert!(v.vertices.iter().all(|g| g[(0, 1)] == 0.2 && g[(1, 0)] == 0.2));
        // lexicographic: first vertex all-lo, last all-hi, a11 most significant
        assert_eq!(v.vertices[0][(0, 0)], v.intervals[0].lo);
        assert_eq!(v.vertices[15][(0, 0)], v.intervals[0].hi);
        assert_eq!(v.vertices[7][(0, 0)], v.intervals[0].lo);
        assert_eq!(v.vertices[8][(0, 0)], v.intervals[0].hi);
    }

    #[test]
    fn lti_and_zero_radius_give_one_vertex() {
        let lti = SdrModel::parse(&[&["0.5", "1"], &["0", "0.3"]], &[&["0"], &["1"]], 1.0).unwrap();
        assert_eq!(build_model_vertices(&lti, 1.0, BoundMode::IntervalBox, 4096).unwrap().len(), 1);
        let sys = fixtures::example1::model();
        let v = build_model_vertices(&sys, 0.0, BoundMode::IntervalBox, 4096).unwrap();
        assert_eq!(v.len(), 1);
        let (a, b) = sys.matrices(&[0.0, 0.0]).unwrap();
        assert_eq!(v.vertices[0].columns(0, 2), a);
        assert_eq!(v.vertices[0].columns(2, 1), b);
    }

    #[test]
    fn vertex_cap_is_an_error() {
        let sys = fixtures::example1::model();
        assert!(matches!(
            build_model_vertices(&sys, 1.1, BoundMode::IntervalBox, 8),
            Err(Error::VertexCap { exponent: 4, cap: 8 })
        ));
    }

    #[test]
    fn basis_vertex_counts() {
        let lib = fixtures::example3::library();
        assert_eq!((lib.n_a(), lib.n_b()), (5, 5));
        let v = build_basis_vertices(&lib, 0.92, BoundMode::IntervalBox, DEFAULT_VERTEX_CAP).unwrap();
        assert_eq!(v.len(), 128);
        assert_eq!(v.vertices[0].shape(), (10, 3));
        let quad = fixtures::quadrotor::library();
        let v = build_basis_vertices(&quad, 0.4, BoundMode::IntervalBox, DEFAULT_VERTEX_CAP).unwrap();
        assert_eq!(v.non_degenerate(), 9);
        assert_eq!(v.len(), 512);
        let constant = BasisLibrary::parse(&[&["1", "2"]], &[&["1"]]).unwrap();
        assert_eq!(build_basis_vertices(&constant, 1.0, BoundMode::IntervalBox, 4096).unwrap().len(), 1);
    }

    #[test]
    fn basis_vertices_are_block_diagonal() {
        let lib = fixtures::example3::library();
        let v = build_basis_vertices(&lib, 0.92, BoundMode::IntervalBox, DEFAULT_VERTEX_CAP).unwrap();
        for q in &v.vertices {
            // rows 0..2 -> column 0, rows 2..5 -> column 1, rows 5..10 -> column 2
            for (r, col) in [(0, 0), (1, 0), (2, 1), (3, 1), (4, 1), (5, 2), (9, 2)] {
                for c in 0..3 {
                    if c != col {
                        assert_eq!(q[(r, c)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn example3_coefficients_reproduce_example1() {
        let truth = fixtures::example3::truth();
        let lib = fixtures::example3::library();
        let sys = fixtures::example1::model();
        let (a0, b0) = reconstruct_ab(&lib, &truth.e_a, &truth.e_b, &[0.0, 0.0]).unwrap();
        let (a, b) = sys.matrices(&[0.0, 0.0]).unwrap();
        assert_relative_eq!(a0, a, epsilon = 1e-15);
        assert_relative_eq!(b0, b, epsilon = 1e-15);
        let zero = reconstruct_ab(&lib, &Mat::zeros(2, 5), &Mat::zeros(2, 5), &[0.3, 0.1]).unwrap();
        assert_eq!(zero.0, Mat::zeros(2, 2));
        assert!(reconstruct_ab(&lib, &Mat::zeros(2, 4), &Mat::zeros(2, 5), &[0.0, 0.0]).is_err());
    }

    #[test]
    fn quadrotor_library_matches_entries() {
        let lm = fixtures::quadrotor::library_model();
        let sys = fixtures::quadrotor::model();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
        for _ in 0..20 {
            let x: Vec<f64> = (0..6).map(|_| rand::Rng::gen_range(&mut rng, -0.4..0.4)).collect();
            let (a1, b1) = lm.matrices(&x).unwrap();
            let (a2, b2) = sys.matrices(&x).unwrap();
            assert!((a1 - a2).amax() <= 1e-10 && (b1 - b2).amax() <= 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn reconstruction_is_block_multiplication(
            ea in proptest::collection::vec(-2.0f64..2.0, 10),
            eb in proptest::collection::vec(-2.0f64..2.0, 10),
            x1 in -1.0f64..1.0, x2 in -1.0f64..1.0,
        ) {
            let lib = fixtures::example3::library();
            let e_a = Mat::from_row_slice(2, 5, &ea);
            let e_b = Mat::from_row_slice(2, 5, &eb);
            let (a, b) = reconstruct_ab(&lib, &e_a, &e_b, &[x1, x2]).unwrap();
            // dense oracle: column j of A(x) is E_Aj ξ_Aj(x)
            let xa1 = [1.0, crate::expr::Expr::parse("sinc(x1)").unwrap().eval(&[x1]).unwrap()];
            let xa2 = [1.0, x1, x1 * x1];
            let xb = [1.0, x1.abs(), x2.abs(), x1.exp(), x2.exp()];
            for i in 0..2 {
                let c0 = e_a[(i, 0)] * xa1[0] + e_a[(i, 1)] * xa1[1];
                let c1 = e_a[(i, 2)] * xa2[0] + e_a[(i, 3)] * xa2[1] + e_a[(i, 4)] * xa2[2];
                let cb: f64 = (0..5).map(|k| e_b[(i, k)] * xb[k]).sum();
                prop_assert!((a[(i, 0)] - c0).abs() < 1e-12);
                prop_assert!((a[(i, 1)] - c1).abs() < 1e-12);
                prop_assert!((b[(i, 0)] - cb).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sound_vertices_contain_samples() {
        let sys = fixtures::example1::model();
        let v = build_model_vertices(&sys, 1.1, BoundMode::IntervalBox, 4096).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(11);
        for _ in 0..1000 {
            let x = loop {
                let p: [f64; 2] = [rand::Rng::gen_range(&mut rng, -1.1..1.1), rand::Rng::gen_range(&mut rng, -1.1..1.1)];
                if p[0].hypot(p[1]) <= 1.1 {
                    break p;
                }
            };
            let (a, b) = sys.matrices(&x).unwrap();
            let vals = a.transpose().iter().chain(b.transpose().iter()).copied().collect::<Vec<_>>();
            for (iv, val) in v.intervals.iter().zip(vals) {
                assert!(iv.contains(val), "{val} outside {iv}");
            }
        }
    }
}

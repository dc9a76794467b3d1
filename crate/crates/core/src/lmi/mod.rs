//! Semidefinite programs over affine symmetric matrix functions.
//!
//! Every constraint is stored as `F(x) = F₀ + Σᵢ xᵢ Fᵢ ⪰ 0` over the flat
//! decision vector `x`. Matrix variables are views into `x`; block LMIs are
//! assembled from [`AffMat`] pieces and flattened once by the backend.

mod affine;
pub mod blocks;
mod clarabel_backend;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::linalg::{self, Mat};
use crate::{Error, Result, FORMAT_VERSION};

pub use affine::AffMat;
pub use clarabel_backend::{ClarabelBackend, SolverSettings};

/// Re-check tolerance relative to the constraint scale.
pub const RECHECK_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Constraint {
    pub name: String,
    /// Required to be positive semidefinite.
    pub f: AffMat,
}

/// Sizes of the named matrix variables, for reporting and dumps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub shape: (usize, usize),
}

#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    blocks: Vec<VarBlock>,
    nvars: usize,
    constraints: Vec<Constraint>,
    /// Minimized; zero for feasibility problems.
    objective: Vec<f64>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.nvars
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn var_blocks(&self) -> &[VarBlock] {
        &self.blocks
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    fn alloc(&mut self, name: &str, len: usize, shape: (usize, usize)) -> usize {
        let offset = self.nvars;
        self.blocks.push(VarBlock { name: name.to_string(), offset, len, shape });
        self.nvars += len;
        self.objective.resize(self.nvars, 0.0);
        offset
    }

    /// Scalar variable; returns its index.
    pub fn scalar(&mut self, name: &str) -> usize {
        self.alloc(name, 1, (1, 1))
    }

    /// Symmetric `n × n` variable, parameterized by its upper triangle.
    pub fn symmetric(&mut self, name: &str, n: usize) -> AffMat {
        let offset = self.alloc(name, n * (n + 1) / 2, (n, n));
        let mut out = AffMat::zeros(n, n);
        let mut k = offset;
        for j in 0..n {
            for i in 0..=j {
                let mut e = Mat::zeros(n, n);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
                out.add_term(k, e);
                k += 1;
            }
        }
        out
    }

    /// Unstructured `rows × cols` variable, row-major in `x`.
    pub fn full(&mut self, name: &str, rows: usize, cols: usize) -> AffMat {
        let offset = self.alloc(name, rows * cols, (rows, cols));
        let mut out = AffMat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let mut e = Mat::zeros(rows, cols);
                e[(i, j)] = 1.0;
                out.add_term(offset + i * cols + j, e);
            }
        }
        out
    }

    /// Diagonal `n × n` variable.
    pub fn diagonal(&mut self, name: &str, n: usize) -> AffMat {
        let offset = self.alloc(name, n, (n, n));
        let mut out = AffMat::zeros(n, n);
        for i in 0..n {
            let mut e = Mat::zeros(n, n);
            e[(i, i)] = 1.0;
            out.add_term(offset + i, e);
        }
        out
    }

    /// `F ⪰ 0`. Returns the constraint index.
    pub fn psd(&mut self, name: impl Into<String>, f: AffMat) -> Result<usize> {
        if f.rows() != f.cols() {
            return Err(Error::Shape(format!("LMI block must be square, got {}x{}", f.rows(), f.cols())));
        }
        if !f.is_symmetric(1e-12) {
            return Err(Error::Shape("LMI block is not symmetric".into()));
        }
        self.constraints.push(Constraint { name: name.into(), f: f.symmetrized() });
        Ok(self.constraints.len() - 1)
    }

    /// `F ⪯ 0`.
    pub fn nsd(&mut self, name: impl Into<String>, f: AffMat) -> Result<usize> {
        self.psd(name, f.neg())
    }

    /// `x_var ≥ value`.
    pub fn scalar_lower_bound(&mut self, name: impl Into<String>, var: usize, value: f64) -> Result<usize> {
        self.psd(name, AffMat::scalar_eye(var, 1).sub(&AffMat::constant(Mat::from_element(1, 1, value))))
    }

    /// `x_var ≤ value`.
    pub fn scalar_upper_bound(&mut self, name: impl Into<String>, var: usize, value: f64) -> Result<usize> {
        self.psd(name, AffMat::constant(Mat::from_element(1, 1, value)).sub(&AffMat::scalar_eye(var, 1)))
    }

    /// Adds `t` with `G ⪯ t·I`; returns `t`.
    pub fn eig_upper(&mut self, name: &str, g: &AffMat) -> Result<usize> {
        let t = self.scalar(name);
        self.psd(format!("{name} epigraph"), AffMat::scalar_eye(t, g.rows()).sub(g))?;
        Ok(t)
    }

    /// Adds `s` with `G ⪰ s·I`; returns `s`.
    pub fn eig_lower(&mut self, name: &str, g: &AffMat) -> Result<usize> {
        let s = self.scalar(name);
        self.psd(format!("{name} hypograph"), g.sub(&AffMat::scalar_eye(s, g.rows())))?;
        Ok(s)
    }

    /// Adds `coeff·x_var` to the minimized objective.
    pub fn add_objective(&mut self, var: usize, coeff: f64) {
        self.objective[var] += coeff;
    }

    /// Adds `coeff·trace(G)` to the objective.
    pub fn add_objective_trace(&mut self, g: &AffMat, coeff: f64) {
        for (&var, m) in g.terms() {
            self.objective[var] += coeff * m.trace();
        }
    }

    /// Per-constraint scale `1 + ‖F₀‖_F + Σ |xᵢ|·‖Fᵢ‖_F`: the size of the
    /// terms that have to cancel for the constraint to be tight.
    pub fn constraint_scale(&self, idx: usize, x: &[f64]) -> f64 {
        let f = &self.constraints[idx].f;
        1.0 + f.constant_part().norm() + f.terms().iter().map(|(&v, m)| x[v].abs() * m.norm()).sum::<f64>()
    }

    /// Independent dense re-check: `max(0, -λ_min(F_k(x)))` per constraint.
    pub fn violations(&self, x: &[f64]) -> Vec<f64> {
        self.constraints.iter().map(|c| (-linalg::lambda_min(&c.f.eval(x))).max(0.0)).collect()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    pub fn solve(&self, backend: &dyn SdpBackend) -> Result<SdpSolution> {
        let start = Instant::now();
        let raw = if self.nvars == 0 {
            RawSolution { x: vec![], status: BackendStatus::Solved, iterations: 0 }
        } else {
            backend.solve(self)?
        };
        let (viol, rel) = self.recheck(&raw.x);
        let passes = rel <= RECHECK_TOL;
        let status = match raw.status {
            BackendStatus::Solved if passes => SolveStatus::Optimal,
            BackendStatus::Solved | BackendStatus::Inaccurate | BackendStatus::Failed if passes => SolveStatus::Feasible,
            BackendStatus::Infeasible => SolveStatus::Infeasible,
            BackendStatus::Unbounded => SolveStatus::NumericalFailure,
            _ if self.nvars == 0 => SolveStatus::Infeasible,
            _ => SolveStatus::NumericalFailure,
        };
        Ok(SdpSolution {
            objective: self.objective_value(&raw.x),
            x: raw.x,
            status,
            max_violation: viol,
            max_relative_violation: rel,
            iterations: raw.iterations,
            solve_time_s: start.elapsed().as_secs_f64(),
            backend: backend.name().to_string(),
        })
    }

    /// `(max raw violation, max violation / scale)` over all constraints.
    pub fn recheck(&self, x: &[f64]) -> (f64, f64) {
        if x.len() != self.nvars {
            return (f64::INFINITY, f64::INFINITY);
        }
        self.violations(x)
            .into_iter()
            .enumerate()
            .fold((0.0f64, 0.0f64), |(a, r), (i, v)| (a.max(v), r.max(v / self.constraint_scale(i, x))))
    }

    /// Sparse text dump, SDPA-like:
    ///
    /// ```text
    /// # comment lines
    /// vars <N>
    /// objective <i> <c_i>          one line per nonzero, 1-based i
    /// block <k> <name> <dim>       F_k(x) ⪰ 0
    /// <var> <row> <col> <value>    upper triangle, 1-based; var 0 = constant
    /// ```
    pub fn dump(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# sdrlmi block SDP, format_version {FORMAT_VERSION}")?;
        writeln!(w, "# minimize c'x subject to F0 + sum x_i F_i >= 0 (PSD) per block")?;
        for b in &self.blocks {
            writeln!(w, "# variable {} {}x{} at {}..{}", b.name, b.shape.0, b.shape.1, b.offset + 1, b.offset + b.len)?;
        }
        writeln!(w, "vars {}", self.nvars)?;
        for (i, c) in self.objective.iter().enumerate() {
            if *c != 0.0 {
                writeln!(w, "objective {} {c:e}", i + 1)?;
            }
        }
        for (k, c) in self.constraints.iter().enumerate() {
            writeln!(w, "block {} {:?} {}", k + 1, c.name, c.f.rows())?;
            let emit = |w: &mut dyn Write, var: usize, m: &Mat| -> std::io::Result<()> {
                for j in 0..m.ncols() {
                    for i in 0..=j {
                        if m[(i, j)] != 0.0 {
                            writeln!(w, "{var} {} {} {:e}", i + 1, j + 1, m[(i, j)])?;
                        }
                    }
                }
                Ok(())
            };
            emit(&mut w, 0, c.f.constant_part())?;
            for (&var, m) in c.f.terms() {
                emit(&mut w, var + 1, m)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendStatus {
    Solved,
    /// Stopped at reduced accuracy; the point may still pass re-check.
    Inaccurate,
    Infeasible,
    Unbounded,
    Failed,
}

#[derive(Debug, Clone)]
pub struct RawSolution {
    pub x: Vec<f64>,
    pub status: BackendStatus,
    pub iterations: u32,
}

/// A conic solver for problems with PSD constraints.
pub trait SdpBackend: Sync {
    fn name(&self) -> &str;
    fn solve(&self, problem: &SdpProblem) -> Result<RawSolution>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    /// Accepted on independent re-check although the solver did not
    /// certify optimality.
    Feasible,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdpSolution {
    pub x: Vec<f64>,
    pub status: SolveStatus,
    /// Largest `λ_max` of a constraint residual in `⪯ 0` form.
    pub max_violation: f64,
    /// Largest violation divided by its constraint scale.
    pub max_relative_violation: f64,
    pub objective: f64,
    pub iterations: u32,
    pub solve_time_s: f64,
    pub backend: String,
}

impl SdpSolution {
    pub fn is_feasible(&self) -> bool {
        matches!(self.status, SolveStatus::Optimal | SolveStatus::Feasible)
    }

    pub fn value(&self, m: &AffMat) -> Mat {
        m.eval(&self.x)
    }

    /// Maps non-feasible outcomes onto errors.
    pub fn into_result(self, what: &str) -> Result<SdpSolution> {
        match self.status {
            SolveStatus::Optimal | SolveStatus::Feasible => Ok(self),
            SolveStatus::Infeasible => Err(Error::Infeasible(what.to_string())),
            SolveStatus::NumericalFailure => Err(Error::Numerical(format!(
                "{what}: solver did not converge (relative violation {:e})",
                self.max_relative_violation
            ))),
        }
    }
}

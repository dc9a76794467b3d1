use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::{Deserialize, Serialize};

use super::{BackendStatus, RawSolution, SdpBackend, SdpProblem};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverSettings {
    pub max_iter: u32,
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    pub tol_feas: f64,
    /// Seconds; infinite when `None`.
    pub time_limit: Option<f64>,
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { max_iter: 200, tol_gap_abs: 1e-9, tol_gap_rel: 1e-9, tol_feas: 1e-9, time_limit: None, verbose: false }
    }
}

/// Interior-point conic solver backend.
#[derive(Debug, Clone, Default)]
pub struct ClarabelBackend {
    pub settings: SolverSettings,
}

impl ClarabelBackend {
    pub fn new(settings: SolverSettings) -> Self {
        ClarabelBackend { settings }
    }
}

/// Upper triangle, column by column, with `√2` on off-diagonal entries:
/// the vectorization of the solver's PSD triangle cone.
fn svec_order(d: usize) -> impl Iterator<Item = (usize, usize, f64)> {
    (0..d).flat_map(|j| (0..=j).map(move |i| (i, j, if i == j { 1.0 } else { std::f64::consts::SQRT_2 })))
}

impl SdpBackend for ClarabelBackend {
    fn name(&self) -> &str {
        "clarabel"
    }

    fn solve(&self, problem: &SdpProblem) -> Result<RawSolution> {
        let nx = problem.num_vars();
        let (mut rows, mut cols, mut vals) = (Vec::new(), Vec::new(), Vec::new());
        let mut b = Vec::new();
        let mut cones = Vec::new();
        // s = F₀ + Σ xᵢ Fᵢ lies in the cone, i.e. A x + s = b with
        // b = svec(F₀) and column i of A = -svec(Fᵢ)
        let mut push_block = |f: &super::AffMat, b: &mut Vec<f64>| {
            let d = f.rows();
            let start = b.len();
            for (r, (i, j, w)) in svec_order(d).enumerate() {
                b.push(w * f.constant_part()[(i, j)]);
                for (&var, m) in f.terms() {
                    let v = m[(i, j)];
                    if v != 0.0 {
                        rows.push(start + r);
                        cols.push(var);
                        vals.push(-w * v);
                    }
                }
            }
        };
        let scalars: Vec<_> = problem.constraints().iter().filter(|c| c.f.rows() == 1).collect();
        for c in &scalars {
            push_block(&c.f, &mut b);
        }
        if !scalars.is_empty() {
            cones.push(SupportedConeT::NonnegativeConeT(scalars.len()));
        }
        for c in problem.constraints().iter().filter(|c| c.f.rows() > 1) {
            push_block(&c.f, &mut b);
            cones.push(SupportedConeT::PSDTriangleConeT(c.f.rows()));
        }
        let a = CscMatrix::new_from_triplets(b.len(), nx, rows, cols, vals);
        let p = CscMatrix::zeros((nx, nx));
        let s = &self.settings;
        let settings = DefaultSettingsBuilder::default()
            .verbose(s.verbose)
            .max_iter(s.max_iter)
            .tol_gap_abs(s.tol_gap_abs)
            .tol_gap_rel(s.tol_gap_rel)
            .tol_feas(s.tol_feas)
            .time_limit(s.time_limit.unwrap_or(f64::INFINITY))
            .build()
            .map_err(|e| Error::Numerical(format!("solver settings: {e:?}")))?;
        let mut solver = DefaultSolver::new(&p, problem.objective(), &a, &b, &cones, settings)
            .map_err(|e| Error::Numerical(format!("solver setup: {e:?}")))?;
        solver.solve();
        let status = match solver.solution.status {
            SolverStatus::Solved => BackendStatus::Solved,
            SolverStatus::AlmostSolved => BackendStatus::Inaccurate,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => BackendStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => BackendStatus::Unbounded,
            _ => BackendStatus::Failed,
        };
        Ok(RawSolution { x: solver.solution.x.clone(), status, iterations: solver.solution.iterations })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_layout() {
        let order: Vec<_> = svec_order(3).map(|(i, j, _)| (i, j)).collect();
        assert_eq!(order, vec![(0, 0), (0, 1), (1, 1), (0, 2), (1, 2), (2, 2)]);
    }
}

use std::collections::BTreeMap;

use crate::linalg::Mat;

/// Matrix-valued affine function `M₀ + Σᵢ xᵢ Mᵢ` of the decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AffMat {
    constant: Mat,
    terms: BTreeMap<usize, Mat>,
}

impl AffMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        AffMat { constant: Mat::zeros(rows, cols), terms: BTreeMap::new() }
    }

    pub fn constant(m: Mat) -> Self {
        AffMat { constant: m, terms: BTreeMap::new() }
    }

    /// `x_var · I_n`.
    pub fn scalar_eye(var: usize, n: usize) -> Self {
        let mut out = Self::zeros(n, n);
        out.add_term(var, Mat::identity(n, n));
        out
    }

    pub fn rows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn cols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn constant_part(&self) -> &Mat {
        &self.constant
    }

    pub fn terms(&self) -> &BTreeMap<usize, Mat> {
        &self.terms
    }

    pub(crate) fn add_term(&mut self, var: usize, coeff: Mat) {
        assert_eq!(coeff.shape(), self.constant.shape(), "term shape");
        match self.terms.get_mut(&var) {
            Some(m) => *m += coeff,
            None => {
                self.terms.insert(var, coeff);
            }
        }
    }

    fn map(&self, f: impl Fn(&Mat) -> Mat) -> AffMat {
        AffMat { constant: f(&self.constant), terms: self.terms.iter().map(|(&k, m)| (k, f(m))).collect() }
    }

    pub fn add(&self, other: &AffMat) -> AffMat {
        assert_eq!(self.constant.shape(), other.constant.shape(), "AffMat::add shape");
        let mut out = self.clone();
        out.constant += &other.constant;
        for (&k, m) in &other.terms {
            out.add_term(k, m.clone());
        }
        out
    }

    pub fn sub(&self, other: &AffMat) -> AffMat {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> AffMat {
        self.map(|m| -m)
    }

    pub fn scale(&self, s: f64) -> AffMat {
        self.map(|m| m * s)
    }

    /// `L · self`.
    pub fn lmul(&self, l: &Mat) -> AffMat {
        self.map(|m| l * m)
    }

    /// `self · R`.
    pub fn rmul(&self, r: &Mat) -> AffMat {
        self.map(|m| m * r)
    }

    pub fn t(&self) -> AffMat {
        self.map(|m| m.transpose())
    }

    pub fn row(&self, i: usize) -> AffMat {
        self.map(|m| m.rows(i, 1).into_owned())
    }

    pub fn add_constant(&self, c: &Mat) -> AffMat {
        let mut out = self.clone();
        out.constant += c;
        out
    }

    pub fn eval(&self, x: &[f64]) -> Mat {
        let mut out = self.constant.clone();
        for (&k, m) in &self.terms {
            out += m * x[k];
        }
        out
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let sym = |m: &Mat| (m - m.transpose()).amax() <= tol * m.amax().max(1.0);
        self.rows() == self.cols() && sym(&self.constant) && self.terms.values().all(sym)
    }

    pub fn symmetrized(&self) -> AffMat {
        self.map(|m| (m + m.transpose()) * 0.5)
    }

    /// Vertical concatenation.
    pub fn vstack(parts: &[&AffMat]) -> AffMat {
        Self::block(&parts.iter().map(|p| vec![Some((*p).clone())]).collect::<Vec<_>>())
    }

    /// Block assembly; `None` is a zero block sized by its neighbours. Every
    /// block row and column needs at least one `Some`.
    pub fn block(grid: &[Vec<Option<AffMat>>]) -> AffMat {
        let nr = grid.len();
        let nc = grid.first().map_or(0, Vec::len);
        let mut heights = vec![None; nr];
        let mut widths = vec![None; nc];
        for (i, row) in grid.iter().enumerate() {
            assert_eq!(row.len(), nc, "ragged block grid");
            for (j, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    assert!(heights[i].map_or(true, |h| h == b.rows()), "block row {i} height mismatch");
                    assert!(widths[j].map_or(true, |w| w == b.cols()), "block column {j} width mismatch");
                    heights[i] = Some(b.rows());
                    widths[j] = Some(b.cols());
                }
            }
        }
        let heights: Vec<usize> = heights.into_iter().map(|h| h.expect("empty block row")).collect();
        let widths: Vec<usize> = widths.into_iter().map(|w| w.expect("empty block column")).collect();
        let mut out = AffMat::zeros(heights.iter().sum(), widths.iter().sum());
        let mut r = 0;
        for (i, row) in grid.iter().enumerate() {
            let mut c = 0;
            for (j, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    out.constant.view_mut((r, c), (heights[i], widths[j])).copy_from(&b.constant);
                    for (&k, m) in &b.terms {
                        let mut full = Mat::zeros(out.rows(), out.cols());
                        full.view_mut((r, c), (heights[i], widths[j])).copy_from(m);
                        out.add_term(k, full);
                    }
                }
                c += widths[j];
            }
            r += heights[i];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algebra_matches_evaluation() {
        let mut a = AffMat::constant(Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        a.add_term(0, Mat::identity(2, 2));
        a.add_term(1, Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        let l = Mat::from_row_slice(1, 2, &[2.0, -1.0]);
        let x = [0.5, -2.0];
        let av = a.eval(&x);
        assert_eq!(a.lmul(&l).eval(&x), &l * &av);
        assert_eq!(a.t().eval(&x), av.transpose());
        assert_eq!(a.sub(&a.scale(2.0)).eval(&x), -&av);
        let b = AffMat::block(&[vec![Some(a.clone()), None], vec![None, Some(a.t())]]);
        let bv = b.eval(&x);
        assert_eq!(bv.view((0, 0), (2, 2)), av);
        assert_eq!(bv.view((2, 2), (2, 2)), av.transpose());
        assert_eq!(bv.view((0, 2), (2, 2)), Mat::zeros(2, 2));
        assert_eq!(AffMat::vstack(&[&a, &a.row(1)]).eval(&x).nrows(), 3);
    }
}

//! Dense symmetric-matrix helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// `(M + Mᵀ)/2`.
pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn lambda_max(m: &Mat) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NEG_INFINITY)
}

pub fn lambda_min(m: &Mat) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
pub fn sym_fn(m: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = Mat::from_diagonal(&eig.eigenvalues.map(f));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Principal square root of a PSD matrix. Eigenvalues in
/// `[-tol·scale, 0)` are treated as rounding drift and clipped; anything
/// more negative is an error. `scale` defaults to `‖M‖₂`.
pub fn sqrt_psd(m: &Mat, tol: f64, scale: Option<f64>) -> Result<Mat> {
    let scale = scale.unwrap_or_else(|| spectral_norm(m)).max(f64::MIN_POSITIVE);
    let lmin = lambda_min(m);
    if lmin < -tol * scale {
        return Err(Error::Inconsistent(format!(
            "matrix is indefinite: lambda_min = {lmin:e} below -{tol:e}*{scale:e}"
        )));
    }
    Ok(sym_fn(m, |v| v.max(0.0).sqrt()))
}

/// `M^{-1/2}` of a positive definite matrix.
pub fn inv_sqrt_pd(m: &Mat) -> Result<Mat> {
    let lmin = lambda_min(m);
    if lmin <= 0.0 {
        return Err(Error::Numerical(format!("matrix is not positive definite (lambda_min = {lmin:e})")));
    }
    Ok(sym_fn(m, |v| 1.0 / v.sqrt()))
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &Mat) -> Option<Mat> {
    let c = nalgebra::Cholesky::new(symmetrize(m))?;
    Some(symmetrize(&c.inverse()))
}

/// Block-diagonal assembly.
pub fn blkdiag(blocks: &[Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Assembles a matrix from a grid of blocks. `None` entries are zero and
/// take their shape from the other blocks in the same block row/column.
pub fn block_matrix(grid: &[Vec<Option<Mat>>]) -> Mat {
    let nr = grid.len();
    let nc = grid.first().map_or(0, |r| r.len());
    let mut heights = vec![0; nr];
    let mut widths = vec![0; nc];
    for (i, row) in grid.iter().enumerate() {
        for (j, b) in row.iter().enumerate() {
            if let Some(b) = b {
                heights[i] = b.nrows();
                widths[j] = b.ncols();
            }
        }
    }
    let mut out = Mat::zeros(heights.iter().sum(), widths.iter().sum());
    let mut r = 0;
    for (i, row) in grid.iter().enumerate() {
        let mut c = 0;
        for (j, b) in row.iter().enumerate() {
            if let Some(b) = b {
                out.view_mut((r, c), (heights[i], widths[j])).copy_from(b);
            }
            c += widths[j];
        }
        r += heights[i];
    }
    out
}

pub fn row_matrix(rows: &[&[f64]]) -> Mat {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    Mat::from_fn(nr, nc, |i, j| rows[i][j])
}

/// `xᵀ M x`.
pub fn quad_form(m: &Mat, x: &Vector) -> f64 {
    x.dot(&(m * x))
}

/// Row-major `{rows, cols, data}` (de)serialization for result documents.
pub mod row_major {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::Mat;

    #[derive(Serialize, Deserialize)]
    pub struct MatrixDoc {
        pub rows: usize,
        pub cols: usize,
        pub data: Vec<f64>,
    }

    impl From<&Mat> for MatrixDoc {
        fn from(m: &Mat) -> Self {
            MatrixDoc { rows: m.nrows(), cols: m.ncols(), data: m.transpose().as_slice().to_vec() }
        }
    }

    impl TryFrom<MatrixDoc> for Mat {
        type Error = String;

        fn try_from(d: MatrixDoc) -> Result<Mat, String> {
            if d.data.len() != d.rows * d.cols {
                return Err(format!("matrix has {} entries, expected {}x{}", d.data.len(), d.rows, d.cols));
            }
            Ok(Mat::from_row_slice(d.rows, d.cols, &d.data))
        }
    }

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        MatrixDoc::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        Mat::try_from(MatrixDoc::deserialize(d)?).map_err(serde::de::Error::custom)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(m: &Option<Mat>, s: S) -> Result<S::Ok, S::Error> {
            m.as_ref().map(MatrixDoc::from).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Mat>, D::Error> {
            Option::<MatrixDoc>::deserialize(d)?.map(Mat::try_from).transpose().map_err(serde::de::Error::custom)
        }
    }
}

//! Dense matrix primitives: Moore-Penrose pseudo-inverse, rank-tolerant
//! PSD factorisation and symmetry enforcement.
//!
//! Everything here is a pure function of its inputs.

use nalgebra::{DMatrix, DVector, SymmetricEigen, QR};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Numerical tolerances shared by the kernel, the belief operators and the
/// propagation engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative singular-value cutoff for the pseudo-inverse. `None` means
    /// machine epsilon times the larger matrix dimension.
    pub pinv_rel: Option<f64>,
    /// Eigenvalues at or above `-psd * spectral_radius` count as non-negative.
    pub psd: f64,
    /// Slack allowed when checking that transform eigenvalues lie in [0, 1].
    pub spectrum: f64,
    /// The engine treats variance directions below `noise` times a node's
    /// reference scale as round-off.
    pub noise: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            pinv_rel: None,
            psd: 1e-10,
            spectrum: 1e-8,
            noise: 1e-10,
        }
    }
}

impl Tolerances {
    pub fn pinv_cutoff(&self, rows: usize, cols: usize) -> f64 {
        self.pinv_rel.unwrap_or(f64::EPSILON * rows.max(cols) as f64)
    }
}

pub fn check_finite(m: &Matrix) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::InvalidMatrix(format!(
            "empty {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite entry".into()));
    }
    Ok(())
}

pub fn check_finite_vector(v: &Vector) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidMatrix("empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite vector entry".into()));
    }
    Ok(())
}

fn require_square(m: &Matrix, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Moore-Penrose pseudo-inverse with the default cutoff.
pub fn pseudo_inverse(m: &Matrix) -> Result<Matrix> {
    pseudo_inverse_with(m, &Tolerances::default())
}

/// Moore-Penrose pseudo-inverse via SVD. Singular values below
/// `cutoff * sigma_max` are treated as zero.
pub fn pseudo_inverse_with(m: &Matrix, tol: &Tolerances) -> Result<Matrix> {
    pseudo_inverse_floor(m, tol, 0.0)
}

/// As [`pseudo_inverse_with`], also dropping singular values at or below the
/// absolute `floor`.
pub fn pseudo_inverse_floor(m: &Matrix, tol: &Tolerances, floor: f64) -> Result<Matrix> {
    check_finite(m)?;
    let (rows, cols) = m.shape();
    let svd = to_faer(m)
        .thin_svd()
        .map_err(|e| Error::InvalidMatrix(format!("singular value decomposition failed: {e:?}")))?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let sigma_max = s.iter().copied().fold(0.0, f64::max);
    let mut out = Matrix::zeros(cols, rows);
    if sigma_max == 0.0 {
        return Ok(out);
    }
    let cutoff = (tol.pinv_cutoff(rows, cols) * sigma_max).max(floor);
    for (k, &sk) in s.iter().enumerate() {
        if sk > cutoff {
            for i in 0..cols {
                let vik = v[(i, k)] / sk;
                for j in 0..rows {
                    out[(i, j)] += vik * u[(j, k)];
                }
            }
        }
    }
    Ok(out)
}

fn to_faer(m: &Matrix) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Returns `(m + m^T) / 2`.
pub fn symmetrize(m: &Matrix) -> Result<Matrix> {
    require_square(m, "symmetrize input")?;
    Ok((m + m.transpose()) * 0.5)
}

/// Checks that a symmetric matrix is positive semi-definite to tolerance.
pub fn check_psd(m: &Matrix, tol: &Tolerances) -> Result<()> {
    check_finite(m)?;
    require_square(m, "variance matrix")?;
    let eig = SymmetricEigen::new(symmetrize(m)?);
    let radius = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if min < -tol.psd * radius {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
            spectral_radius: radius,
        });
    }
    Ok(())
}

/// Lower-triangular `A` with `A A^T = v` for symmetric PSD `v`.
///
/// Positive definite input gets the ordinary Cholesky factor. Rank deficient
/// input gets zero columns at the deficient pivots; if round-off makes that
/// factor inaccurate, the factor is rebuilt from the clamped eigen
/// decomposition (`v = B B^T`, `B^T = QR`, so `v = R^T R`).
pub fn psd_factor(v: &Matrix) -> Result<Matrix> {
    psd_factor_with(v, &Tolerances::default())
}

pub fn psd_factor_with(v: &Matrix, tol: &Tolerances) -> Result<Matrix> {
    check_finite(v)?;
    require_square(v, "variance matrix")?;
    let sym = symmetrize(v)?;
    let eig = SymmetricEigen::new(sym.clone());
    let radius = eig.eigenvalues.amax();
    if eig.eigenvalues.min() < -tol.psd * radius {
        return Err(Error::NotPsd {
            min_eigenvalue: eig.eigenvalues.min(),
            spectral_radius: radius,
        });
    }
    let n = sym.nrows();
    if radius == 0.0 {
        return Ok(Matrix::zeros(n, n));
    }

    let factor = semidefinite_cholesky(&sym, radius);
    let scale = sym.norm();
    if (&factor * factor.transpose() - &sym).norm() <= 1e-12 * scale {
        return Ok(factor);
    }

    // Eigen route.
    let clamped = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let root = &eig.eigenvectors * Matrix::from_diagonal(&clamped);
    let r = QR::new(root.transpose()).r();
    let mut lower = r.transpose();
    for j in 0..n {
        if lower[(j, j)] < 0.0 {
            let mut col = lower.column_mut(j);
            col *= -1.0;
        }
    }
    Ok(lower)
}

fn semidefinite_cholesky(a: &Matrix, radius: f64) -> Matrix {
    let n = a.nrows();
    let pivot_floor = 16.0 * f64::EPSILON * n as f64 * radius;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= pivot_floor {
            continue;
        }
        let pivot = d.sqrt();
        l[(j, j)] = pivot;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / pivot;
        }
    }
    l
}

/// Eigenvalues of a (generally non-symmetric) square matrix as `(re, im)` pairs.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<(f64, f64)>> {
    require_square(m, "eigenvalue input")?;
    check_finite(m)?;
    let values = to_faer(m)
        .eigenvalues()
        .map_err(|e| Error::InvalidMatrix(format!("eigenvalue iteration failed: {e:?}")))?;
    Ok(values.into_iter().map(|c| (c.re, c.im)).collect())
}

/// True when every eigenvalue is real and inside `[0, 1]` up to `slack`.
pub fn spectrum_in_unit_interval(m: &Matrix, slack: f64) -> Result<bool> {
    Ok(eigenvalues(m)?
        .into_iter()
        .all(|(re, im)| im.abs() <= slack && re >= -slack && re <= 1.0 + slack))
}

/// Row-selection matrix picking `indices` out of a vector of length `len`.
pub fn selection_matrix(indices: &[usize], len: usize) -> Matrix {
    let mut s = Matrix::zeros(indices.len(), len);
    for (row, &i) in indices.iter().enumerate() {
        s[(row, i)] = 1.0;
    }
    s
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

//! Bayes linear operators on second-order belief specifications.
//!
//! `P_D[B] = cov(B, D) Var(D)^+` is the projection updating expectations for
//! `B` given `D`; `T_D[B] = P_D[B] P_B[D]` is the resolution transform
//! updating variances. The composition rules let both be carried along a
//! path `X - Y - Z` with `X` and `Z` adjusted-orthogonal given `Y`:
//!
//! ```text
//! P_X[Z] = P_Y[Z] P_X[Y]
//! T_X[Z] = P_Y[Z] T_X[Y] P_Z[Y]
//! ```

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{self, Matrix, Tolerances, Vector};

/// Expectation vector and variance matrix for a block of quantities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeliefSpec {
    expectation: Vector,
    variance: Matrix,
}

impl BeliefSpec {
    /// Checks shapes, finiteness and symmetry. Positive semi-definiteness is
    /// checked separately by [`BeliefSpec::check_psd`].
    pub fn new(expectation: Vector, variance: Matrix) -> Result<Self> {
        kernel::check_finite_vector(&expectation)?;
        kernel::check_finite(&variance)?;
        let n = expectation.len();
        if variance.shape() != (n, n) {
            return Err(Error::Shape(format!(
                "variance is {}x{} but expectation has length {n}",
                variance.nrows(),
                variance.ncols()
            )));
        }
        let asym = kernel::max_abs(&(&variance - variance.transpose()));
        if asym > 1e-9 * kernel::max_abs(&variance).max(1.0) {
            return Err(Error::InvalidMatrix(format!(
                "variance matrix is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let variance = kernel::symmetrize(&variance)?;
        Ok(BeliefSpec { expectation, variance })
    }

    pub fn from_slices(expectation: &[f64], variance_rows: &[&[f64]]) -> Result<Self> {
        let n = expectation.len();
        if variance_rows.len() != n || variance_rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape(format!(
                "variance must be {n}x{n} to match the expectation"
            )));
        }
        let flat: Vec<f64> = variance_rows.iter().flat_map(|r| r.iter().copied()).collect();
        BeliefSpec::new(
            Vector::from_column_slice(expectation),
            Matrix::from_row_slice(n, n, &flat),
        )
    }

    pub fn dim(&self) -> usize {
        self.expectation.len()
    }

    pub fn expectation(&self) -> &Vector {
        &self.expectation
    }

    pub fn variance(&self) -> &Matrix {
        &self.variance
    }

    pub fn check_psd(&self, tol: &Tolerances) -> Result<()> {
        kernel::check_psd(&self.variance, tol)
    }

    /// Replaces both moments; the variance is symmetrised on the way in.
    pub(crate) fn replace(&mut self, expectation: Vector, variance: Matrix) {
        debug_assert_eq!(expectation.len(), variance.nrows());
        self.variance = (&variance + variance.transpose()) * 0.5;
        self.expectation = expectation;
    }

    /// Keeps only the quantities at `keep`, in that order.
    pub(crate) fn restrict(&self, keep: &[usize]) -> BeliefSpec {
        BeliefSpec {
            expectation: self.expectation.select_rows(keep),
            variance: self.variance.select_rows(keep).select_columns(keep),
        }
    }
}

/// Covariance matrix attached to a tree arc, with its orientation.
///
/// `matrix` is `cov(row_block, col_block)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossCov {
    pub row_block: String,
    pub col_block: String,
    pub matrix: Matrix,
}

impl CrossCov {
    pub fn new(row_block: impl Into<String>, col_block: impl Into<String>, matrix: Matrix) -> Result<Self> {
        kernel::check_finite(&matrix)?;
        Ok(CrossCov {
            row_block: row_block.into(),
            col_block: col_block.into(),
            matrix,
        })
    }

    /// `cov(from, to)`, transposing if the arc is stored the other way round.
    pub fn oriented(&self, from: &str, to: &str) -> Result<Matrix> {
        if self.row_block == from && self.col_block == to {
            Ok(self.matrix.clone())
        } else if self.row_block == to && self.col_block == from {
            Ok(self.matrix.transpose())
        } else {
            Err(Error::UnknownNode(format!(
                "arc {} -- {} does not join {from} and {to}",
                self.row_block, self.col_block
            )))
        }
    }

    /// Stores `cov(from, to)` keeping the existing orientation.
    pub(crate) fn set_oriented(&mut self, from: &str, to: &str, m: Matrix) {
        if self.row_block == from && self.col_block == to {
            self.matrix = m;
        } else {
            debug_assert!(self.row_block == to && self.col_block == from);
            self.matrix = m.transpose();
        }
    }

    pub fn other_end(&self, name: &str) -> Option<&str> {
        if self.row_block == name {
            Some(&self.col_block)
        } else if self.col_block == name {
            Some(&self.row_block)
        } else {
            None
        }
    }
}

/// Projection and resolution transform for one target node under one
/// adjustment source.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformPair {
    pub source: String,
    pub target: String,
    /// Maps the source innovation to the change in the target expectation.
    pub projection: Matrix,
    /// `T`: the adjusted variance is `(I - T) V`.
    pub transform: Matrix,
}

impl TransformPair {
    /// Resolution of the target: the trace of the transform.
    pub fn resolution(&self) -> f64 {
        self.transform.trace()
    }

    pub fn spectrum_ok(&self, tol: &Tolerances) -> Result<bool> {
        kernel::spectrum_in_unit_interval(&self.transform, tol.spectrum)
    }
}

fn expect_shape(m: &Matrix, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Shape(format!(
            "{what} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// `P_D[B] = cov(B, D) Var(D)^+`.
pub fn projection(b: &BeliefSpec, d: &BeliefSpec, cov_bd: &Matrix, tol: &Tolerances) -> Result<Matrix> {
    expect_shape(cov_bd, b.dim(), d.dim(), "cov(B, D)")?;
    Ok(cov_bd * kernel::pseudo_inverse_with(d.variance(), tol)?)
}

/// `T_D[B] = cov(B, D) Var(D)^+ cov(D, B) Var(B)^+`.
pub fn resolution_transform(b: &BeliefSpec, d: &BeliefSpec, cov_bd: &Matrix, tol: &Tolerances) -> Result<Matrix> {
    let p_bd = projection(b, d, cov_bd, tol)?;
    let p_db = cov_bd.transpose() * kernel::pseudo_inverse_with(b.variance(), tol)?;
    Ok(p_bd * p_db)
}

/// `E_D[B] = E[B] + P_D[B] (d - E[D])`.
pub fn adjusted_expectation(
    b: &BeliefSpec,
    d: &BeliefSpec,
    cov_bd: &Matrix,
    observed: &Vector,
    tol: &Tolerances,
) -> Result<Vector> {
    if observed.len() != d.dim() {
        return Err(Error::Shape(format!(
            "observed vector has length {}, expected {}",
            observed.len(),
            d.dim()
        )));
    }
    kernel::check_finite_vector(observed)?;
    let p = projection(b, d, cov_bd, tol)?;
    Ok(b.expectation() + p * (observed - d.expectation()))
}

/// `cov_D(B, C) = cov(B, C) - cov(B, D) P_D[C]^T`.
#[allow(clippy::too_many_arguments)]
pub fn adjusted_covariance(
    b: &BeliefSpec,
    c: &BeliefSpec,
    d: &BeliefSpec,
    cov_bd: &Matrix,
    cov_cd: &Matrix,
    cov_bc: &Matrix,
    tol: &Tolerances,
) -> Result<Matrix> {
    expect_shape(cov_bd, b.dim(), d.dim(), "cov(B, D)")?;
    expect_shape(cov_cd, c.dim(), d.dim(), "cov(C, D)")?;
    expect_shape(cov_bc, b.dim(), c.dim(), "cov(B, C)")?;
    let p_dc = projection(c, d, cov_cd, tol)?;
    Ok(cov_bc - cov_bd * p_dc.transpose())
}

/// `Var_D(B) = (I - T_D[B]) Var(B)`, symmetrised.
pub fn adjusted_variance(b: &BeliefSpec, d: &BeliefSpec, cov_bd: &Matrix, tol: &Tolerances) -> Result<Matrix> {
    let t = resolution_transform(b, d, cov_bd, tol)?;
    let n = b.dim();
    kernel::symmetrize(&((Matrix::identity(n, n) - t) * b.variance()))
}

/// `cov(B, C) = cov(B, D) P_D[C]^T` when `B` and `C` are adjusted-orthogonal
/// given `D`.
pub fn covariance_via_separator(cov_bd: &Matrix, p_dc: &Matrix) -> Result<Matrix> {
    if cov_bd.ncols() != p_dc.ncols() {
        return Err(Error::Shape(format!(
            "cov(B, D) has {} columns but P_D[C] has {}",
            cov_bd.ncols(),
            p_dc.ncols()
        )));
    }
    Ok(cov_bd * p_dc.transpose())
}

/// `cov_X(Y, Z) = (I - T_X[Y]) cov(Y, Z)` when `X` and `Z` are
/// adjusted-orthogonal given `Y`.
pub fn update_cross_covariance(t_x_y: &Matrix, cov_yz: &Matrix) -> Result<Matrix> {
    let n = cov_yz.nrows();
    expect_shape(t_x_y, n, n, "T_X[Y]")?;
    Ok(cov_yz - t_x_y * cov_yz)
}

/// `P_X[Z] = P_Y[Z] P_X[Y]`.
pub fn compose_projection(p_yz: &Matrix, p_xy: &Matrix) -> Result<Matrix> {
    if p_yz.ncols() != p_xy.nrows() {
        return Err(Error::Shape(format!(
            "cannot compose {}x{} with {}x{}",
            p_yz.nrows(),
            p_yz.ncols(),
            p_xy.nrows(),
            p_xy.ncols()
        )));
    }
    Ok(p_yz * p_xy)
}

/// `T_X[Z] = P_Y[Z] T_X[Y] P_Z[Y]`.
pub fn compose_transform(p_yz: &Matrix, t_xy: &Matrix, p_zy: &Matrix) -> Result<Matrix> {
    let (z, y) = p_yz.shape();
    expect_shape(t_xy, y, y, "T_X[Y]")?;
    expect_shape(p_zy, y, z, "P_Z[Y]")?;
    Ok(p_yz * t_xy * p_zy)
}

/// `I - (I - T_partial)(I - T_first)`: the transform for two stages of
/// adjustment, the second computed on the structure already adjusted by the
/// first.
pub fn accumulate_transform(t_first: &Matrix, t_partial: &Matrix) -> Result<Matrix> {
    let n = t_first.nrows();
    expect_shape(t_first, n, n, "first-stage transform")?;
    expect_shape(t_partial, n, n, "partial transform")?;
    let id = Matrix::identity(n, n);
    Ok(&id - (&id - t_partial) * (&id - t_first))
}

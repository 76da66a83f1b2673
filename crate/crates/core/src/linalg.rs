//! Small dense linear-algebra helpers on top of nalgebra.
//!
//! Norm conventions follow the model: the maximum norm for vectors and the
//! induced row-sum norm for matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalues below this are treated as round-off when taking square roots.
pub const EIG_CLIP_TOL: f64 = 1e-12;

pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn row_sum_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.nrows())
        .map(|i| a.row(i).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = s;
            a[(j, i)] = s;
        }
    }
}

pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 1 {
        return a[(0, 0)];
    }
    a.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric PSD square root via eigendecomposition; eigenvalues in
/// `[-EIG_CLIP_TOL, 0)` are clipped to zero, anything lower is an error.
pub fn sym_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sym_fn(a, |x| x.sqrt())
}

/// Inverse symmetric square root of a positive definite matrix.
pub fn sym_inv_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if min_eigenvalue(a) <= 0.0 {
        return Err(Error::Numerical(
            "inverse square root of a singular matrix".into(),
        ));
    }
    sym_fn(a, |x| 1.0 / x.sqrt())
}

fn sym_fn(a: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n == 1 {
        let x = a[(0, 0)];
        if x < -EIG_CLIP_TOL {
            return Err(Error::Numerical(format!("negative eigenvalue {x}")));
        }
        return Ok(DMatrix::from_element(1, 1, f(x.max(0.0))));
    }
    let mut s = a.clone();
    symmetrize(&mut s);
    let eig = s.symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -EIG_CLIP_TOL * (1.0 + row_sum_norm(a)) {
            return Err(Error::Numerical(format!("negative eigenvalue {v}")));
        }
        *v = f(v.max(0.0));
    }
    let u = &eig.eigenvectors;
    let mut out = u * DMatrix::from_diagonal(&vals) * u.transpose();
    symmetrize(&mut out);
    Ok(out)
}

pub fn is_spd(a: &DMatrix<f64>) -> bool {
    asymmetry(a) <= 1e-10 * (1.0 + row_sum_norm(a)) && a.clone().cholesky().is_some()
}

pub fn is_psd(a: &DMatrix<f64>, tol: f64) -> bool {
    asymmetry(a) <= 1e-10 * (1.0 + row_sum_norm(a)) && min_eigenvalue(a) >= -tol
}

pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Clip a symmetric matrix to the PSD cone when its smallest eigenvalue is
/// within `tol` of zero; fail below that.
pub fn clip_psd(a: &mut DMatrix<f64>, tol: f64) -> Result<()> {
    symmetrize(a);
    let n = a.nrows();
    if n == 1 {
        let x = a[(0, 0)];
        if x < -tol {
            return Err(Error::Numerical(format!(
                "covariance lost positivity: eigenvalue {x}"
            )));
        }
        a[(0, 0)] = x.max(0.0);
        return Ok(());
    }
    let eig = a.clone().symmetric_eigen();
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if lo < -tol {
        return Err(Error::Numerical(format!(
            "covariance lost positivity: eigenvalue {lo}"
        )));
    }
    if lo < 0.0 {
        let vals = eig.eigenvalues.map(|v| v.max(0.0));
        let u = &eig.eigenvectors;
        *a = u * DMatrix::from_diagonal(&vals) * u.transpose();
        symmetrize(a);
    }
    Ok(())
}

/// Real parts of the eigenvalues of a general square matrix.
pub fn eigen_real_parts(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 1 {
        return vec![a[(0, 0)]];
    }
    a.complex_eigenvalues().iter().map(|z| z.re).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Input("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub fn to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Exact transition of `dx = -kappa x dt + sigma dW` over a step `h`:
/// returns `(exp(-kappa h), integrated covariance)` using Van Loan's block
/// exponential, which also covers singular `kappa`.
pub fn ou_transition(
    kappa: &DMatrix<f64>,
    sigma_cov: &DMatrix<f64>,
    h: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = kappa.nrows();
    if d == 1 {
        let k = kappa[(0, 0)];
        let s = sigma_cov[(0, 0)];
        let phi = (-k * h).exp();
        let var = if (k * h).abs() < 1e-8 {
            s * h * (1.0 - k * h)
        } else {
            s * (1.0 - (-2.0 * k * h).exp()) / (2.0 * k)
        };
        return (
            DMatrix::from_element(1, 1, phi),
            DMatrix::from_element(1, 1, var),
        );
    }
    let mut block = DMatrix::zeros(2 * d, 2 * d);
    block.view_mut((0, 0), (d, d)).copy_from(&(kappa * h));
    block.view_mut((0, d), (d, d)).copy_from(&(sigma_cov * h));
    block
        .view_mut((d, d), (d, d))
        .copy_from(&(-kappa.transpose() * h));
    let e = block.exp();
    let g12 = e.view((0, d), (d, d)).into_owned();
    let g22 = e.view((d, d), (d, d)).into_owned();
    let phi = g22.transpose();
    let mut cov = &phi * g12;
    symmetrize(&mut cov);
    (phi, cov)
}

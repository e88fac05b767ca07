use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub const COV_EPSILON: f64 = 1e-6;
const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Sample mean and unbiased covariance of the rows, plus `COV_EPSILON·I`.
pub fn fit_gaussian(features: &DMatrix<f64>) -> Result<Gaussian> {
    let (n, dim) = features.shape();
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 feature rows, got {n}")));
    }
    // Shift by the first row so identical rows give an exactly zero spread.
    let first = features.row(0).transpose();
    let mut shift = DVector::zeros(dim);
    for r in 0..n {
        shift += features.row(r).transpose() - &first;
    }
    let mean = first + shift / n as f64;
    let mut centered = features.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered / (n - 1) as f64;
    for i in 0..dim {
        cov[(i, i)] += COV_EPSILON;
    }
    Ok(Gaussian { mean, cov })
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!("{}x{} matrix is not square", m.nrows(), m.ncols())));
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::InvalidInput(format!("matrix is not symmetric (max deviation {asym:e})")));
    }
    Ok(())
}

/// Principal square root of a symmetric PSD matrix; negative eigenvalues
/// are clamped to zero.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(m)?;
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

/// Fréchet distance between Gaussians fitted to the two feature matrices.
pub fn fid(features_a: &DMatrix<f64>, features_b: &DMatrix<f64>) -> Result<f64> {
    if features_a.ncols() != features_b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "feature dims differ: {} vs {}",
            features_a.ncols(),
            features_b.ncols()
        )));
    }
    let a = fit_gaussian(features_a)?;
    let b = fit_gaussian(features_b)?;
    frechet_distance(&a, &b)
}

pub fn frechet_distance(a: &Gaussian, b: &Gaussian) -> Result<f64> {
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let sa = sqrtm_psd(&a.cov)?;
    let inner = &sa * &b.cov * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = sqrtm_psd(&inner)?.trace();
    Ok((mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross).max(0.0))
}

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{contract_err, Error, Result};

/// Eigenvalues above `−NEG_EIG_TOL · max(1, scale)` are clipped to zero
/// before square roots; anything more negative is a numeric error.
pub const NEG_EIG_TOL: f64 = 1e-8;

fn moments(features: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = features.len();
    if n < 2 {
        return contract_err("Fréchet distance needs at least two feature vectors per set");
    }
    let d = features[0].len();
    if d == 0 || features.iter().any(|f| f.len() != d) {
        return contract_err("feature vectors must share one positive width");
    }
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    Ok((mean, cov))
}

fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = clip(&eig.eigenvalues)?;
    let root = DMatrix::from_diagonal(&vals.map(f64::sqrt));
    Ok(&eig.eigenvectors * root * eig.eigenvectors.transpose())
}

fn clip(vals: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = vals.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if vals.iter().any(|&v| v < -NEG_EIG_TOL * scale) {
        return Err(Error::Numeric { op: "frechet", pass: "matrix square root" });
    }
    Ok(vals.map(|v| v.max(0.0)))
}

/// `‖μ_a − μ_b‖² + tr(Σ_a + Σ_b − 2 (Σ_a Σ_b)^{1/2})` for Gaussians fitted
/// (unbiased covariance) to two feature sets. The trace of the product root
/// is taken as `tr((√Σ_a Σ_b √Σ_a)^{1/2})`, which only needs symmetric
/// eigendecompositions.
pub fn frechet(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (mu_a, cov_a) = moments(a)?;
    let (mu_b, cov_b) = moments(b)?;
    if mu_a.len() != mu_b.len() {
        return contract_err(format!("feature widths differ: {} and {}", mu_a.len(), mu_b.len()));
    }
    let root_a = sym_sqrt(&cov_a)?;
    let inner = &root_a * &cov_b * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = clip(&SymmetricEigen::new(inner).eigenvalues)?.map(f64::sqrt).sum();
    let diff = mu_a - mu_b;
    Ok((diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * cross).max(0.0))
}

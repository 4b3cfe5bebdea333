//! Small dense linear algebra, special functions and seeded sampling.

mod linalg;
mod rng;

pub use linalg::{Matrix, Vector};
pub use rng::{stream_key, RngStream, StreamTag};

use crate::error::{Error, Result};

/// Error function.
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// Random symmetric positive definite matrix `Q Λ Qᵀ` with `Q` Haar-orthogonal
/// and the eigenvalues drawn uniformly from `[eig_min, eig_max]`.
pub fn make_spd_matrix(d: usize, eig_min: f64, eig_max: f64, rng: &mut RngStream) -> Result<Matrix> {
    let (m, _) = make_spd_with_spectrum(d, eig_min, eig_max, rng)?;
    Ok(m)
}

/// Like [`make_spd_matrix`] but also returns the drawn eigenvalues.
pub fn make_spd_with_spectrum(
    d: usize,
    eig_min: f64,
    eig_max: f64,
    rng: &mut RngStream,
) -> Result<(Matrix, Vec<f64>)> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be at least 1".into()));
    }
    if !(eig_min > 0.0) || !eig_min.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "eig_min must be positive, got {eig_min}"
        )));
    }
    if !(eig_max >= eig_min) || !eig_max.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "eig_max ({eig_max}) must be at least eig_min ({eig_min})"
        )));
    }
    let gaussian = Matrix::from_fn(d, d, |_, _| rng.standard_normal());
    let (q, _) = gaussian.qr()?;
    let lambda: Vec<f64> = (0..d)
        .map(|_| eig_min + (eig_max - eig_min) * rng.uniform())
        .collect();
    let m = q
        .matmul(&Matrix::from_diag(&lambda))?
        .matmul(&q.transpose())?
        .symmetrized();
    Ok((m, lambda))
}

/// Draws from `N(0, Σ)` via a cached pivoted Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: Matrix,
}

impl GaussianSampler {
    pub fn new(sigma: &Matrix) -> Result<Self> {
        Ok(GaussianSampler {
            factor: sigma.cholesky_psd()?,
        })
    }

    pub fn dim(&self) -> usize {
        self.factor.rows()
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vector {
        let z: Vec<f64> = (0..self.factor.cols()).map(|_| rng.standard_normal()).collect();
        self.factor.matvec_unchecked(&z)
    }
}

/// One draw from `N(0, Σ)`.
pub fn sample_gaussian_vector(sigma: &Matrix, rng: &mut RngStream) -> Result<Vector> {
    Ok(GaussianSampler::new(sigma)?.sample(rng))
}

/// `exp(g)` with `g ~ N(mu, sigma2)`.
pub fn sample_lognormal(mu: f64, sigma2: f64, rng: &mut RngStream) -> Result<f64> {
    if !(sigma2 >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "log-normal variance must be non-negative, got {sigma2}"
        )));
    }
    Ok(lognormal_unchecked(mu, sigma2.sqrt(), rng))
}

#[inline]
pub(crate) fn lognormal_unchecked(mu: f64, sigma: f64, rng: &mut RngStream) -> f64 {
    if sigma == 0.0 {
        return mu.exp();
    }
    (mu + sigma * rng.standard_normal()).exp()
}

use crate::error::{Error, Result};
use crate::numerics::{make_spd_with_spectrum, GaussianSampler, Matrix, RngStream, Vector};

/// Stochastic quadratic loss `½ (θ − c)ᵀ A (θ − c)` with `c ~ N(0, Σ)`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    a: Matrix,
    sigma: Matrix,
    eigenvalues: Vec<f64>,
    sampler: GaussianSampler,
}

impl QuadraticProblem {
    pub fn new(a: Matrix, sigma: Matrix) -> Result<Self> {
        if !a.is_square() || !sigma.is_square() || a.rows() != sigma.rows() {
            return Err(Error::shape(
                "square A and Σ of equal size",
                format!(
                    "A {}x{}, Σ {}x{}",
                    a.rows(),
                    a.cols(),
                    sigma.rows(),
                    sigma.cols()
                ),
            ));
        }
        if !a.is_symmetric(1e-12) {
            return Err(Error::InvalidParameter("A must be symmetric".into()));
        }
        let (eigenvalues, _) = a.symmetric_eigen()?;
        if eigenvalues[0] <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "A must be positive definite (smallest eigenvalue {})",
                eigenvalues[0]
            )));
        }
        let sampler = GaussianSampler::new(&sigma)?;
        Ok(QuadraticProblem {
            a: a.symmetrized(),
            sigma,
            eigenvalues,
            sampler,
        })
    }

    /// Random instance with `A`'s spectrum in `[eig_min, eig_max]` and `Σ = noise_var · I`.
    pub fn random(
        d: usize,
        eig_min: f64,
        eig_max: f64,
        noise_var: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if !(noise_var >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be non-negative, got {noise_var}"
            )));
        }
        let (a, _) = make_spd_with_spectrum(d, eig_min, eig_max, rng)?;
        QuadraticProblem::new(a, Matrix::identity(d).scaled(noise_var))
    }

    /// `A = I`, `Σ = noise_var · I`.
    pub fn isotropic(d: usize, noise_var: f64) -> Result<Self> {
        QuadraticProblem::new(Matrix::identity(d), Matrix::identity(d).scaled(noise_var))
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    /// Eigenvalues of `A`, ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn sample_c(&self, rng: &mut RngStream) -> Vector {
        self.sampler.sample(rng)
    }

    fn check(&self, theta: &Vector, c: &Vector) -> Result<()> {
        for v in [theta, c] {
            if v.dim() != self.dim() {
                return Err(Error::shape(
                    format!("dimension {}", self.dim()),
                    format!("dimension {}", v.dim()),
                ));
            }
        }
        Ok(())
    }

    pub fn loss(&self, theta: &Vector, c: &Vector) -> Result<f64> {
        self.check(theta, c)?;
        let diff = theta.sub(c)?;
        let ad = self.a.matvec_unchecked(&diff);
        Ok(0.5 * diff.dot(&ad))
    }

    /// `A (θ − c)`
    pub fn grad(&self, theta: &Vector, c: &Vector) -> Result<Vector> {
        self.check(theta, c)?;
        Ok(self.a.matvec_unchecked(&theta.sub(c)?))
    }

    /// `E_c L(θ) = ½ θᵀ A θ + ½ tr(A Σ)`
    pub fn expected_loss(&self, theta: &Vector) -> Result<f64> {
        let zero = Vector::zeros(self.dim());
        let base = self.loss(theta, &zero)?;
        Ok(base + 0.5 * self.a.matmul(&self.sigma)?.trace())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_zero_at_sample() {
        let p = QuadraticProblem::isotropic(3, 1.0).unwrap();
        let c = Vector::from(vec![0.3, -1.0, 2.0]);
        assert_eq!(p.loss(&c, &c).unwrap(), 0.0);
        assert_eq!(&p.grad(&c, &c).unwrap()[..], &[0.0; 3]);
    }

    #[test]
    fn hand_evaluations() {
        let p = QuadraticProblem::isotropic(2, 1.0).unwrap();
        let theta = Vector::from(vec![3.0, 4.0]);
        assert_eq!(p.loss(&theta, &Vector::zeros(2)).unwrap(), 12.5);

        let p2 = QuadraticProblem::new(Matrix::identity(2).scaled(2.0), Matrix::identity(2)).unwrap();
        let g = p2
            .grad(&Vector::from(vec![1.0, 0.0]), &Vector::zeros(2))
            .unwrap();
        assert_eq!(&g[..], &[2.0, 0.0]);
    }

    #[test]
    fn shape_errors() {
        let p = QuadraticProblem::isotropic(2, 1.0).unwrap();
        let bad = Vector::zeros(3);
        assert!(matches!(p.loss(&bad, &Vector::zeros(2)), Err(Error::Shape { .. })));
        assert!(matches!(p.grad(&Vector::zeros(2), &bad), Err(Error::Shape { .. })));
    }

    #[test]
    fn rejects_indefinite_a() {
        let a = Matrix::from_diag(&[1.0, -1.0]);
        assert!(QuadraticProblem::new(a, Matrix::identity(2)).is_err());
    }

    #[test]
    fn grad_matches_central_differences() {
        let mut rng = RngStream::new(11, 0);
        let p = QuadraticProblem::random(5, 0.2, 3.0, 1.0, &mut rng).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let theta: Vector = (0..5).map(|_| rng.standard_normal()).collect();
            let c = p.sample_c(&mut rng);
            let g = p.grad(&theta, &c).unwrap();
            for i in 0..5 {
                let mut up = theta.clone();
                up[i] += h;
                let mut down = theta.clone();
                down[i] -= h;
                let fd = (p.loss(&up, &c).unwrap() - p.loss(&down, &c).unwrap()) / (2.0 * h);
                worst = worst.max((fd - g[i]).abs() / (g[i].abs() + 1e-12));
            }
        }
        assert!(worst <= 1e-6, "worst relative error {worst}");
    }
}

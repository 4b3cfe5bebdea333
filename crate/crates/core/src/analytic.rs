//! Closed-form expectation and variance recursions for the outer iterates of
//! pairwise-averaged Nesterov momentum on a stochastic quadratic with an SGD
//! inner loop.
//!
//! With `B = I − ωA` and `m` inner steps per outer step the expected slow
//! weights follow `E φ_{t+1} = D E φ_t − α E φ_{t−1}` where
//! `D = (1 + α) I + β (Bᵐ − I)`. The cross-replica variance is tracked as a
//! vectorised `d × d` covariance through a second-order recursion with a
//! constant forcing term. Operators on vectorised covariances are `d² × d²`,
//! so the dimension is capped at [`MAX_DIM`].

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::QuadraticProblem;
use crate::numerics::{Matrix, Vector};
use crate::optimizers::gamma_bounds;

pub const MAX_DIM: usize = 16;

#[derive(Debug, Clone)]
pub struct AnalyticConfig {
    pub problem: QuadraticProblem,
    pub omega: f64,
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub n: usize,
    /// Number of outer steps T.
    pub horizon: usize,
}

impl AnalyticConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.problem.dim();
        if d > MAX_DIM {
            return Err(Error::InvalidParameter(format!(
                "analytic recursions support d ≤ {MAX_DIM}, got {d}"
            )));
        }
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "omega must be positive, got {}",
                self.omega
            )));
        }
        if self.m == 0 {
            return Err(Error::InvalidParameter("m must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in [0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if self.n < 2 {
            return Err(Error::InvalidParameter(format!(
                "group size must be at least 2, got {}",
                self.n
            )));
        }
        Ok(())
    }
}

/// `I − ωA`.
pub fn matrix_b(problem: &QuadraticProblem, omega: f64) -> Matrix {
    let d = problem.dim();
    Matrix::identity(d)
        .sub(&problem.a().scaled(omega))
        .expect("square by construction")
}

/// `(1 + α) I + β (Bᵐ − I)`.
pub fn matrix_d(problem: &QuadraticProblem, omega: f64, m: usize, alpha: f64, beta: f64) -> Matrix {
    let d = problem.dim();
    let bm = matrix_b(problem, omega).powi(m).expect("square");
    let eye = Matrix::identity(d);
    eye.scaled(1.0 + alpha)
        .add(&bm.sub(&eye).expect("square").scaled(beta))
        .expect("square")
}

/// Eigenvalue of D along an eigendirection of A with eigenvalue `lambda`.
pub fn eigen_d(alpha: f64, beta: f64, omega: f64, m: usize, lambda: f64) -> f64 {
    1.0 + alpha - (1.0 - (1.0 - omega * lambda).powi(m as i32)) * beta
}

/// Moduli of the roots of `r² − D r + α = 0`, largest first.
pub fn root_moduli(alpha: f64, d_eigen: f64) -> (f64, f64) {
    let disc = d_eigen * d_eigen - 4.0 * alpha;
    if disc < 0.0 {
        let m = alpha.sqrt();
        return (m, m);
    }
    let s = disc.sqrt();
    let a = ((d_eigen + s) / 2.0).abs();
    let b = ((d_eigen - s) / 2.0).abs();
    (a.max(b), a.min(b))
}

/// `E φ_0 = φ_0`, `E φ_1 = (I + β(Bᵐ − I)) φ_0`, then the two-term recursion,
/// for `horizon + 1` entries.
pub fn expected_phi_sequence(cfg: &AnalyticConfig, phi0: &Vector) -> Result<Vec<Vector>> {
    cfg.validate()?;
    let d = cfg.problem.dim();
    if phi0.dim() != d {
        return Err(Error::shape(format!("phi0 of dimension {d}"), phi0.dim()));
    }
    let dm = matrix_d(&cfg.problem, cfg.omega, cfg.m, cfg.alpha, cfg.beta);
    let first = dm
        .sub(&Matrix::identity(d).scaled(cfg.alpha))
        .expect("square");
    let mut seq = Vec::with_capacity(cfg.horizon + 1);
    seq.push(phi0.clone());
    if cfg.horizon == 0 {
        return Ok(seq);
    }
    seq.push(first.matvec(phi0)?);
    for t in 1..cfg.horizon {
        let mut next = dm.matvec(&seq[t])?;
        next.axpy(-cfg.alpha, &seq[t - 1]);
        seq.push(next);
    }
    Ok(seq)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceSequence {
    /// Trace of the cross-replica covariance, `horizon + 1` entries from 0.
    pub trace: Vec<f64>,
    /// Trace at the fixed point of the recursion, when it is stable.
    pub asymptote: Option<f64>,
    pub d_v: f64,
    /// Root-modulus and `|d_V| < 1` conditions.
    pub converges: bool,
    /// Whether the second-order recursion itself is bounded. Stricter than
    /// `converges` because `E_V` also feeds back.
    pub bounded: bool,
}

struct VarianceOperators {
    d_v: f64,
    e_v: Matrix,
    forcing: Vector,
}

/// Assembles `d_V`, `E_V` and the forcing term `R″`.
fn variance_operators(cfg: &AnalyticConfig) -> Result<VarianceOperators> {
    let p = &cfg.problem;
    let d = p.dim();
    let (omega, m, n) = (cfg.omega, cfg.m, cfg.n as f64);
    let a = p.a();
    let b = matrix_b(p, omega);
    let u = a.matmul(p.sigma())?.matmul(a)?.scaled(omega * omega);
    let eye2 = Matrix::identity(d * d);
    // vec(ℱ(X)) = (I − B⊗B) vec(X)
    let f_op = eye2.sub(&b.kron(&b))?;
    let bm = b.powi(m)?;
    let b_v = a
        .kron(a)
        .matmul(&f_op.solve(&eye2.sub(&bm.kron(&bm))?)?)?
        .scaled(omega * omega);

    // Σ_k ℱ⁻¹(U − Bᵏ U Bᵏ) = ℱ⁻¹(Σ_k (U − Bᵏ U Bᵏ)) by linearity.
    let mut acc = Matrix::zeros(d, d);
    let mut bk = Matrix::identity(d);
    for _ in 0..m {
        let term = u.sub(&bk.matmul(&u)?.matmul(&bk)?)?;
        acc = acc.add(&term)?;
        bk = bk.matmul(&b)?;
    }
    let inv = Matrix::from_vec_columns(d, d, &f_op.solve_vec(&acc.vec_columns())?)?;
    let r_prime = a
        .matmul(&inv)?
        .matmul(a)?
        .scaled(omega * omega)
        .add(&u.scaled(m as f64))?;
    let forcing = r_prime.vec_columns().scaled(cfg.beta * cfg.beta / n);

    let g2 = cfg.gamma * cfg.gamma;
    let frac = (n - 1.0) / n;
    let c_v = b_v
        .scaled(cfg.beta * cfg.beta / n)
        .add(&eye2.scaled(2.0 * g2 * frac * frac))?;
    let d_v = 1.0 + cfg.alpha * cfg.alpha - 2.0 * g2 * frac;
    let e_v = c_v.sub(&eye2.scaled(cfg.alpha * cfg.alpha * (1.0 - 2.0 * g2 * frac)))?;
    Ok(VarianceOperators { d_v, e_v, forcing })
}

fn trace_of_vec(v: &[f64], d: usize) -> f64 {
    (0..d).map(|i| v[i * d + i]).sum()
}

/// Unrolls `U_{t+1} = d_V U_t + E_V U_{t−1} + R″` from `U_0 = U_{−1} = 0`.
/// An unstable configuration still yields the sequence, flagged
/// `converges = false`.
pub fn variance_sequence(cfg: &AnalyticConfig) -> Result<VarianceSequence> {
    cfg.validate()?;
    let d = cfg.problem.dim();
    let ops = variance_operators(cfg)?;
    let mut prev = Vector::zeros(d * d);
    let mut cur = Vector::zeros(d * d);
    let mut trace = Vec::with_capacity(cfg.horizon + 1);
    trace.push(0.0);
    for _ in 0..cfg.horizon {
        let mut next = ops.e_v.matvec(&prev)?;
        next.axpy(ops.d_v, &cur);
        next.axpy(1.0, &ops.forcing);
        prev = std::mem::replace(&mut cur, next);
        trace.push(trace_of_vec(&cur, d));
    }
    let converges = ops.d_v.abs() < 1.0 && moduli_below_one(cfg);
    let bounded = recursion_bounded(cfg, ops.d_v);
    let asymptote = if bounded {
        let eye2 = Matrix::identity(d * d);
        let lhs = eye2.scaled(1.0 - ops.d_v).sub(&ops.e_v)?;
        lhs.solve_vec(&ops.forcing)
            .ok()
            .map(|fp| trace_of_vec(&fp, d))
    } else {
        None
    };
    Ok(VarianceSequence {
        trace,
        asymptote,
        d_v: ops.d_v,
        converges,
        bounded,
    })
}

/// `E_V` is a function of `A ⊗ I` and `I ⊗ A`, so it acts on each pair of
/// eigendirections `(i, j)` as a scalar `e_ij`. Each mode then follows
/// `x' = d_V x + e_ij x_prev`, which is bounded iff `|e| < 1` and
/// `|d_V| < 1 − e`.
fn recursion_bounded(cfg: &AnalyticConfig, d_v: f64) -> bool {
    let (omega, m, n) = (cfg.omega, cfg.m as i32, cfg.n as f64);
    let g2 = cfg.gamma * cfg.gamma;
    let frac = (n - 1.0) / n;
    let shift = 2.0 * g2 * frac * frac - cfg.alpha * cfg.alpha * (1.0 - 2.0 * g2 * frac);
    let lam = cfg.problem.eigenvalues();
    lam.iter().all(|&li| {
        lam.iter().all(|&lj| {
            let (bi, bj) = (1.0 - omega * li, 1.0 - omega * lj);
            let bb = bi * bj;
            let geometric = if (1.0 - bb).abs() < 1e-300 {
                m as f64
            } else {
                (1.0 - bb.powi(m)) / (1.0 - bb)
            };
            let b_v = omega * omega * li * lj * geometric;
            let e = cfg.beta * cfg.beta * b_v / n + shift;
            e.abs() < 1.0 && d_v.abs() < 1.0 - e
        })
    })
}

fn moduli_below_one(cfg: &AnalyticConfig) -> bool {
    cfg.problem.eigenvalues().iter().all(|&l| {
        let (r1, _) = root_moduli(cfg.alpha, eigen_d(cfg.alpha, cfg.beta, cfg.omega, cfg.m, l));
        r1 < 1.0
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyticPrediction {
    pub expected_phi: Vec<Vector>,
    pub variance_trace: Vec<f64>,
    pub variance_asymptote: Option<f64>,
    pub eigen_d: Vec<f64>,
    pub root_moduli: Vec<(f64, f64)>,
    pub gamma_interval: (f64, f64),
    pub d_v: f64,
    pub converges: bool,
    pub variance_bounded: bool,
}

pub fn predict(cfg: &AnalyticConfig, phi0: &Vector) -> Result<AnalyticPrediction> {
    let expected_phi = expected_phi_sequence(cfg, phi0)?;
    let var = variance_sequence(cfg)?;
    let eigen: Vec<f64> = cfg
        .problem
        .eigenvalues()
        .iter()
        .map(|&l| eigen_d(cfg.alpha, cfg.beta, cfg.omega, cfg.m, l))
        .collect();
    let root_mod: Vec<(f64, f64)> = eigen.iter().map(|&e| root_moduli(cfg.alpha, e)).collect();
    let roots_ok = root_mod.iter().all(|&(r1, _)| r1 < 1.0);
    Ok(AnalyticPrediction {
        expected_phi,
        variance_trace: var.trace,
        variance_asymptote: var.asymptote,
        eigen_d: eigen,
        root_moduli: root_mod,
        gamma_interval: gamma_bounds(cfg.alpha, cfg.n)?,
        d_v: var.d_v,
        converges: roots_ok && var.d_v.abs() < 1.0,
        variance_bounded: var.bounded,
    })
}

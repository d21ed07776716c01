//! Exact statistics of the finite-horizon quadratic cost.
//!
//! For the stationary closed loop x_{k+1} = A x_k + v_k the windowed cost
//! Ĵ_N(k) = Σ_{j=k−N+1..k} x_jᵀ Q x_j is a quadratic form zᵀ Ω z of the
//! jointly Gaussian state window z, with Ω = diag(Q, …, Q) and block-Toeplitz
//! covariance Σ. Everything about its distribution follows from that form:
//!
//! - mean: E[J_N] = trace(N V X̄^Q) with Aᵀ X̄^Q A − X̄^Q + Q = 0;
//! - second moment: E[J_N²] = E[J_N]² + 4 trace(ℰ X^V Q X^V) with ℰ built
//!   from finite and infinite Gramian sums of (A^k)ᵀ Q A^k;
//! - full distribution: the moment-generating function
//!   M(ξ) = Π_j (1 − 2 ξ λ_j)^{−1/2} over the eigenvalues λ_j of Ω Σ,
//!   valid for ξ < 1/(2 λ_max).
//!
//! The spectrum is computed from a symmetric similarity transform of Ω Σ, so
//! the eigenvalues are provably real and a symmetric eigensolver applies.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{solve_dlyap_observability, SpdMatrix};
use crate::system::{ClosedLoopSystem, Trajectory};

/// Eigenvalues λ_j of Ω Σ: a complete description of the zero-mean cost
/// distribution over a window of length `n_window`.
#[derive(Debug, Clone, PartialEq)]
pub struct MgfSpectrum {
    lambdas: Vec<f64>,
    n_window: usize,
    state_dim: usize,
}

impl MgfSpectrum {
    /// Wraps precomputed eigenvalues; descending order and the tiny-negative
    /// clamp are enforced here.
    pub fn from_eigenvalues(
        mut lambdas: Vec<f64>,
        n_window: usize,
        state_dim: usize,
    ) -> Result<Self> {
        if lambdas.len() != n_window * state_dim || lambdas.is_empty() {
            return Err(Error::ShapeMismatch { context: "spectrum length must equal N*n" });
        }
        lambdas.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let max = lambdas[0].max(0.0);
        let min = *lambdas.last().unwrap();
        if min < -1e-10 * max.max(f64::MIN_POSITIVE) {
            return Err(Error::NotPsd { min_eigenvalue: min });
        }
        for l in &mut lambdas {
            if *l < 0.0 {
                *l = 0.0;
            }
        }
        Ok(Self { lambdas, n_window, state_dim })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn n_window(&self) -> usize {
        self.n_window
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambdas[0]
    }

    /// Upper end of the MGF domain, 1/(2 λ_max); infinite for a zero
    /// spectrum.
    pub fn domain_sup(&self) -> f64 {
        if self.lambda_max() > 0.0 {
            1.0 / (2.0 * self.lambda_max())
        } else {
            f64::INFINITY
        }
    }

    /// Rescales every eigenvalue, as induced by Q → c Q.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::from_eigenvalues(
            self.lambdas.iter().map(|l| l * c).collect(),
            self.n_window,
            self.state_dim,
        )
    }
}

/// First and second moments of the cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostMoments {
    pub mean: f64,
    pub second_moment: f64,
    pub variance: f64,
}

/// Empirical windowed cost Ĵ_N(k) = Σ_{j=k−N+1..k} x_jᵀ Q x_j (unnormalized).
pub fn empirical_cost(
    traj: &Trajectory,
    q: &SpdMatrix,
    k: i64,
    n_window: usize,
) -> Result<f64> {
    if n_window == 0 {
        return Err(Error::ShapeMismatch { context: "cost window must be at least 1" });
    }
    let start = k - n_window as i64 + 1;
    if start < traj.start_index {
        return Err(Error::WindowOutOfRange { start_needed: start, start_have: traj.start_index });
    }
    let mut total = 0.0;
    for j in start..=k {
        let x = traj
            .state_at(j)
            .ok_or(Error::WindowOutOfRange { start_needed: k, start_have: traj.start_index })?;
        total += quadratic_form(q, x);
    }
    Ok(total)
}

pub(crate) fn quadratic_form(q: &SpdMatrix, x: &DVector<f64>) -> f64 {
    (q.as_matrix() * x).dot(x)
}

/// Expected cost E[J_N] = trace(N V X̄^Q).
pub fn expected_cost(cl: &ClosedLoopSystem, n_window: usize) -> Result<f64> {
    let x_bar = solve_dlyap_observability(cl.a(), cl.q())?;
    Ok(n_window as f64 * (cl.v().as_matrix() * x_bar.as_matrix()).trace())
}

/// Second moment E[J_N²] = E[J_N]² + 4 trace(ℰ X^V Q X^V) with
///
/// ℰ = N (ℱ − Q/2) + ℱ + N (A^N)ᵀ 𝒢 A^N − Σ_{k=0}^{N−1} (A^k)ᵀ 𝒢 A^k,
/// ℱ = Σ_{k=0}^{N−1} (A^k)ᵀ Q A^k,  𝒢 = Σ_{k=0}^{∞} (A^k)ᵀ Q A^k.
///
/// The infinite Gramian 𝒢 is the observability Lyapunov solution; the finite
/// sums accumulate directly. The (A^N)ᵀ 𝒢 A^N term keeps the identity exact
/// for every horizon; it vanishes geometrically as A^N → 0.
pub fn second_moment(cl: &ClosedLoopSystem, n_window: usize) -> Result<f64> {
    let n_f = n_window as f64;
    let a = cl.a();
    let q = cl.q().as_matrix();
    let g_inf = solve_dlyap_observability(a, cl.q())?;

    // runs W_k = (A^k)ᵀ 𝒢 A^k and F_k = (A^k)ᵀ Q A^k
    let mut w = g_inf.as_matrix().clone();
    let mut f_term = q.clone();
    let mut f_sum = DMatrix::zeros(a.nrows(), a.ncols());
    let mut w_sum = DMatrix::zeros(a.nrows(), a.ncols());
    for _ in 0..n_window {
        f_sum += &f_term;
        w_sum += &w;
        f_term = a.transpose() * f_term * a;
        w = a.transpose() * w * a;
    }
    let e_mat = (&f_sum - q * 0.5) * n_f + &f_sum + w * n_f - w_sum;

    let xv = cl.stationary_covariance().as_matrix();
    let mean = expected_cost(cl, n_window)?;
    let second = mean * mean + 4.0 * (e_mat * xv * q * xv).trace();
    Ok(second.max(mean * mean))
}

/// Eigenvalues of Ω Σ for the window of length `n_window`, obtained from the
/// symmetric similar matrix Ω^{1/2} Σ Ω^{1/2} assembled blockwise with
/// Q^{1/2}.
pub fn mgf_spectrum(cl: &ClosedLoopSystem, n_window: usize) -> Result<MgfSpectrum> {
    let sigma = cl.joint_state_covariance(n_window)?;
    let n = cl.state_dim();
    let q_root = cl.q().sqrt();
    let dim = n_window * n;
    let mut sandwich = DMatrix::zeros(dim, dim);
    for i in 0..n_window {
        for j in 0..n_window {
            let block = sigma.as_matrix().view((i * n, j * n), (n, n));
            let transformed = &q_root * block * &q_root;
            sandwich.view_mut((i * n, j * n), (n, n)).copy_from(&transformed);
        }
    }
    let sym = SpdMatrix::new_unchecked((&sandwich + sandwich.transpose()) * 0.5);
    let eigs = sym.eigenvalues()?;
    MgfSpectrum::from_eigenvalues(eigs, n_window, n)
}

fn check_domain(spectrum: &MgfSpectrum, xi: f64) -> Result<()> {
    let sup = spectrum.domain_sup();
    if xi >= sup - 1e-14 * sup.abs().max(1.0) {
        return Err(Error::OutOfDomain { xi, sup });
    }
    Ok(())
}

/// Zero-mean MGF M(ξ) = Π_j (1 − 2 ξ λ_j)^{−1/2}, evaluated in log space.
pub fn mgf(spectrum: &MgfSpectrum, xi: f64) -> Result<f64> {
    Ok(log_mgf(spectrum, xi)?.exp())
}

/// ln M(ξ) = −½ Σ_j ln(1 − 2 ξ λ_j).
pub fn log_mgf(spectrum: &MgfSpectrum, xi: f64) -> Result<f64> {
    check_domain(spectrum, xi)?;
    let sum: f64 = spectrum.lambdas().iter().map(|&l| (-2.0 * xi * l).ln_1p()).sum();
    Ok(-0.5 * sum)
}

/// General MGF of zᵀ Ω z for z ~ N(μ, Σ):
/// exp(½ μᵀ ((I − 2ξΩΣ)^{−1} − I) Σ^{−1} μ) / √det(I − 2ξΩΣ).
pub fn mgf_general(
    mu: &DVector<f64>,
    sigma: &SpdMatrix,
    omega: &SpdMatrix,
    xi: f64,
) -> Result<f64> {
    let dim = sigma.dim();
    if omega.dim() != dim || mu.len() != dim {
        return Err(Error::ShapeMismatch { context: "MGF operand dimensions" });
    }
    let t = DMatrix::identity(dim, dim) - omega.as_matrix() * sigma.as_matrix() * (2.0 * xi);
    let lu = t.lu();
    let det = lu.determinant();
    if det <= 0.0 {
        let root = sigma.sqrt();
        let lam = SpdMatrix::new_unchecked(&root * omega.as_matrix() * &root).eigenvalues()?[0];
        let sup = if lam > 0.0 { 1.0 / (2.0 * lam) } else { f64::INFINITY };
        return Err(Error::OutOfDomain { xi, sup });
    }
    let sigma_chol = nalgebra::linalg::Cholesky::new(sigma.as_matrix().clone())
        .ok_or(Error::SingularSigma)?;
    let s = sigma_chol.solve(mu);
    let z = lu.solve(&s).ok_or(Error::SingularSigma)? - &s;
    Ok((0.5 * mu.dot(&z)).exp() / det.sqrt())
}

/// Mean and second moment recovered from the MGF spectrum:
/// E[J_N] = Σ λ_j, E[J_N²] = 2 Σ λ_j² + (Σ λ_j)².
pub fn moments_from_mgf(spectrum: &MgfSpectrum) -> CostMoments {
    let mean: f64 = spectrum.lambdas().iter().sum();
    let sum_sq: f64 = spectrum.lambdas().iter().map(|l| l * l).sum();
    let variance = 2.0 * sum_sq;
    CostMoments { mean, second_moment: variance + mean * mean, variance }
}

/// Deterministic cost bound sup Ĵ_N = α² N λ_max(Wᵀ Q W) under the state
/// constraint ‖W^{−1} x_k‖ < α.
pub fn cost_bound(
    w: &DMatrix<f64>,
    alpha: f64,
    q: &SpdMatrix,
    n_window: usize,
) -> Result<f64> {
    crate::linalg::check_square(w)?;
    if w.nrows() != q.dim() {
        return Err(Error::ShapeMismatch { context: "W and Q dimensions differ" });
    }
    if alpha <= 0.0 {
        return Err(Error::Config("state bound radius alpha must be positive".into()));
    }
    let svd = w.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax <= 0.0 || smin <= 1e-12 * smax {
        return Err(Error::SingularW);
    }
    let wqw = w.transpose() * q.as_matrix() * w;
    let lam_max = SpdMatrix::new_unchecked((&wqw + wqw.transpose()) * 0.5).eigenvalues()?[0];
    Ok(alpha * alpha * n_window as f64 * lam_max)
}

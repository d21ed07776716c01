//! Dense linear-algebra kernel: discrete Lyapunov and Riccati solvers,
//! symmetric eigendecomposition, matrix square roots and spectral radius.
//!
//! Sized for moderate state dimensions (n up to a few tens) and joint window
//! dimensions N*n up to a few thousand. The Lyapunov solver vectorizes the
//! equation through the Kronecker product for small n and switches to
//! geometric-series doubling above `KRONECKER_MAX_DIM`. The Riccati solver is
//! doubling-accelerated value iteration (the structure-preserving doubling
//! recurrence), with plain value iteration kept in the tests as an
//! independent oracle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest dimension solved through the Kronecker vectorization.
const KRONECKER_MAX_DIM: usize = 30;

/// Relative symmetry tolerance accepted by [`SpdMatrix::new`].
const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenvalues above `-PSD_TOL * lambda_max` count as nonnegative.
const PSD_TOL: f64 = 1e-10;

/// Symmetric positive semidefinite matrix.
///
/// Construction symmetrizes the input ((M + Mᵀ)/2) and verifies that the
/// asymmetry and the most negative eigenvalue are within tolerance, so all
/// downstream eigenvalue routines see an exactly symmetric PSD matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    inner: DMatrix<f64>,
}

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let norm = m.norm();
        let asym = (&m - m.transpose()).norm() / norm.max(f64::MIN_POSITIVE);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let sym = (&m + m.transpose()) * 0.5;
        let eigs = eigvals_sym_raw(&sym)?;
        let max = eigs.first().copied().unwrap_or(0.0).max(0.0);
        let min = eigs.last().copied().unwrap_or(0.0);
        if min < -PSD_TOL * max.max(f64::MIN_POSITIVE) {
            return Err(Error::NotPsd { min_eigenvalue: min });
        }
        Ok(Self { inner: sym })
    }

    /// Identity of dimension `n`.
    pub fn identity(n: usize) -> Self {
        Self { inner: DMatrix::identity(n, n) }
    }

    /// Wraps a matrix that is symmetric PSD by construction.
    ///
    /// Used on hot paths (block-Toeplitz assembly, Lyapunov solutions) where
    /// the full eigenvalue check would dominate the cost; the caller
    /// guarantees symmetry.
    pub(crate) fn new_unchecked(m: DMatrix<f64>) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        Self { inner: m }
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.inner
    }

    /// Symmetric PSD square root S with S·S = M.
    pub fn sqrt(&self) -> DMatrix<f64> {
        let se = self
            .inner
            .clone()
            .symmetric_eigen();
        let roots = DVector::from_iterator(
            self.dim(),
            se.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
        );
        let s = &se.eigenvectors * DMatrix::from_diagonal(&roots) * se.eigenvectors.transpose();
        (&s + s.transpose()) * 0.5
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        eigvals_sym_raw(&self.inner)
    }

    /// Largest eigenvalue.
    pub fn max_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigenvalues()?[0])
    }

    pub fn trace(&self) -> f64 {
        self.inner.trace()
    }
}

pub(crate) fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(Error::ShapeMismatch { context: "matrix must be square and nonempty" });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::ShapeMismatch { context: "matrix has non-finite entries" });
    }
    Ok(())
}

fn eigvals_sym_raw(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let se = nalgebra::linalg::SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0)
        .ok_or(Error::NonConvergence { what: "symmetric eigendecomposition" })?;
    let mut eigs: Vec<f64> = se.eigenvalues.iter().copied().collect();
    eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(eigs)
}

/// Eigenvalues of a symmetric matrix, descending.
pub fn eigvals_sym(m: &SpdMatrix) -> Result<Vec<f64>> {
    m.eigenvalues()
}

/// Spectral radius max_i |lambda_i(A)|.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    check_square(a)?;
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 100_000)
        .ok_or(Error::NonConvergence { what: "Schur decomposition" })?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0f64, f64::max))
}

fn require_schur_stable(a: &DMatrix<f64>) -> Result<f64> {
    let rho = spectral_radius(a)?;
    if rho >= 1.0 - 1e-12 {
        return Err(Error::NotSchurStable { spectral_radius: rho });
    }
    Ok(rho)
}

/// Solves A X Aᵀ − X + C = 0 for Schur-stable A.
///
/// This is the controllability-Gramian form: X = Σ_k A^k C (Aᵀ)^k.
pub fn solve_dlyap_controllability(a: &DMatrix<f64>, c: &SpdMatrix) -> Result<SpdMatrix> {
    check_square(a)?;
    if a.nrows() != c.dim() {
        return Err(Error::ShapeMismatch { context: "Lyapunov: A and C dimensions differ" });
    }
    require_schur_stable(a)?;
    let x = if a.nrows() <= KRONECKER_MAX_DIM {
        dlyap_kronecker(a, c.as_matrix())?
    } else {
        dlyap_doubling(a, c.as_matrix())?
    };
    let residual = (a * &x * a.transpose() - &x + c.as_matrix()).norm();
    if residual > dlyap_residual_tolerance(a, c.as_matrix(), &x) {
        return Err(Error::SingularSystem);
    }
    Ok(SpdMatrix::new_unchecked(x))
}

/// Solves Aᵀ X A − X + Q = 0 (observability-Gramian form).
pub fn solve_dlyap_observability(a: &DMatrix<f64>, q: &SpdMatrix) -> Result<SpdMatrix> {
    solve_dlyap_controllability(&a.transpose(), q)
}

/// Acceptable Lyapunov residual: the nominal bound 1e-9·max(1, ‖C‖_F), or
/// the floating-point floor for the given solution magnitude, whichever is
/// larger. Highly non-normal stable systems produce ‖X‖ ≫ ‖C‖, where even
/// evaluating the residual of the exact solution exceeds the nominal bound.
pub fn dlyap_residual_tolerance(a: &DMatrix<f64>, c: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let nominal = 1e-9 * c.norm().max(1.0);
    let floor = 1e-13 * x.norm() * (1.0 + a.norm_squared());
    nominal.max(floor)
}

/// Kronecker vectorization: (I − A ⊗ A) vec(X) = vec(C), with iterative
/// refinement to push the residual down on nearly marginally stable systems.
fn dlyap_kronecker(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let kron = a.kronecker(a);
    let lhs = DMatrix::identity(n * n, n * n) - kron;
    let rhs = DVector::from_column_slice(c.as_slice());
    let lu = lhs.lu();
    let x = lu.solve(&rhs).ok_or(Error::SingularSystem)?;
    let mut m = DMatrix::from_column_slice(n, n, x.as_slice());
    m = (&m + m.transpose()) * 0.5;
    for _ in 0..4 {
        let residual = a * &m * a.transpose() - &m + c;
        if residual.norm() <= 1e-12 * c.norm().max(1.0) {
            break;
        }
        let r_vec = DVector::from_column_slice(residual.as_slice());
        let e = lu.solve(&r_vec).ok_or(Error::SingularSystem)?;
        let em = DMatrix::from_column_slice(n, n, e.as_slice());
        m += (&em + em.transpose()) * 0.5;
    }
    Ok(m)
}

/// Geometric-series doubling: X ← X + A^{2^k} X (Aᵀ)^{2^k}.
fn dlyap_doubling(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut x = c.clone();
    let mut p = a.clone();
    for _ in 0..200 {
        let update = &p * &x * p.transpose();
        let delta = update.norm();
        x += update;
        p = &p * &p;
        if delta <= 1e-16 * x.norm() && p.norm() < 1e-8 {
            return Ok((&x + x.transpose()) * 0.5);
        }
    }
    Err(Error::NonConvergence { what: "Lyapunov doubling iteration" })
}

/// Solves the discrete algebraic Riccati equation
/// P = AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA + Q
/// by doubling-accelerated value iteration.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &SpdMatrix,
    r: &SpdMatrix,
) -> Result<SpdMatrix> {
    check_square(a)?;
    let n = a.nrows();
    if b.nrows() != n || q.dim() != n || r.dim() != b.ncols() {
        return Err(Error::ShapeMismatch { context: "DARE operand dimensions" });
    }
    let r_chol = nalgebra::linalg::Cholesky::new(r.as_matrix().clone())
        .ok_or(Error::NotPositiveDefinite { min_eigenvalue: f64::NAN })?;
    // G0 = B R⁻¹ Bᵀ
    let g0 = b * r_chol.solve(&b.transpose());

    let mut ak = a.clone();
    let mut gk = (&g0 + g0.transpose()) * 0.5;
    let mut hk = q.as_matrix().clone();
    let eye = DMatrix::identity(n, n);

    for _ in 0..200 {
        // W = I + G H; all three recurrences share its inverse.
        let w = &eye + &gk * &hk;
        let w_lu = w.lu();
        if !w_lu.is_invertible() {
            return Err(Error::NotStabilizable);
        }
        let w_inv_a = w_lu.solve(&ak).ok_or(Error::NotStabilizable)?;
        let a_next = &ak * &w_inv_a;
        // G (I + HG)⁻¹ = (I + GH)⁻¹ G, so both updates reuse the W factorization.
        let w_inv_g_at = w_lu.solve(&(&gk * ak.transpose())).ok_or(Error::NotStabilizable)?;
        let g_next = &gk + &ak * w_inv_g_at;
        let h_next = &hk + ak.transpose() * &hk * &w_inv_a;

        let delta = (&h_next - &hk).norm();
        ak = a_next;
        gk = (&g_next + g_next.transpose()) * 0.5;
        hk = (&h_next + h_next.transpose()) * 0.5;
        if !hk.iter().all(|x| x.is_finite()) {
            return Err(Error::NotStabilizable);
        }
        if delta <= 1e-12 * hk.norm() {
            // A few plain value-iteration steps polish away the extra
            // rounding the doubling recurrences accumulate on stiff systems.
            let mut best = hk.clone();
            let mut best_res = dare_residual(a, b, q, r, &best)?;
            let mut p = hk;
            for _ in 0..30 {
                if best_res <= 1e-10 * best.norm() {
                    break;
                }
                p = dare_vi_step(a, b, q, r, &p)?;
                let res = dare_residual(a, b, q, r, &p)?;
                if res < best_res {
                    best_res = res;
                    best = p.clone();
                }
            }
            let floor = 1e-12 * (1.0 + a.norm_squared()) * best.norm();
            if best_res > (1e-8 * best.norm()).max(floor) {
                return Err(Error::NotStabilizable);
            }
            return Ok(SpdMatrix::new_unchecked(best));
        }
    }
    Err(Error::NotStabilizable)
}

/// One step of Riccati value iteration.
fn dare_vi_step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &SpdMatrix,
    r: &SpdMatrix,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let inner = r.as_matrix() + b.transpose() * p * b;
    let btpa = b.transpose() * p * a;
    let next = a.transpose() * p * a
        - a.transpose() * p * b * inner.lu().solve(&btpa).ok_or(Error::NotStabilizable)?
        + q.as_matrix();
    Ok((&next + next.transpose()) * 0.5)
}

fn dare_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &SpdMatrix,
    r: &SpdMatrix,
    p: &DMatrix<f64>,
) -> Result<f64> {
    let btpb = b.transpose() * p * b;
    let inner = r.as_matrix() + btpb;
    let lu = inner.lu();
    let btpa = b.transpose() * p * a;
    let correction = a.transpose() * p * b * lu.solve(&btpa).ok_or(Error::NotStabilizable)?;
    Ok((a.transpose() * p * a - correction + q.as_matrix() - p).norm())
}

/// Infinite-horizon LQR gain F = (R + BᵀPB)⁻¹ BᵀPA.
pub fn lqr_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &SpdMatrix,
    r: &SpdMatrix,
) -> Result<DMatrix<f64>> {
    let p = solve_dare(a, b, q, r)?;
    let btpb = b.transpose() * p.as_matrix() * b;
    let inner = r.as_matrix() + btpb;
    let btpa = b.transpose() * p.as_matrix() * a;
    let f = inner.lu().solve(&btpa).ok_or(Error::NotStabilizable)?;
    let rho = spectral_radius(&(a - b * &f))?;
    if rho >= 1.0 {
        return Err(Error::NotStabilizable);
    }
    Ok(f)
}

/// A^k by binary exponentiation.
pub fn matrix_power(a: &DMatrix<f64>, mut k: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let mut result = DMatrix::identity(n, n);
    let mut base = a.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        base = &base * &base;
        k >>= 1;
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    fn random_matrix(n: usize, m: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_stable(n: usize, rho_target: f64, rng: &mut impl Rng) -> DMatrix<f64> {
        let a = random_matrix(n, n, rng);
        let rho = spectral_radius(&a).unwrap();
        if rho > 1e-12 {
            a * (rho_target / rho)
        } else {
            a
        }
    }

    fn random_spd(n: usize, rng: &mut impl Rng) -> SpdMatrix {
        let g = random_matrix(n, n, rng);
        SpdMatrix::new(&g * g.transpose() + DMatrix::identity(n, n) * 0.1).unwrap()
    }

    /// Independent oracle: fixed-point iteration X ← A X Aᵀ + C.
    fn dlyap_fixed_point(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = c.clone();
        for _ in 0..100_000 {
            let next = a * &x * a.transpose() + c;
            let delta = (&next - &x).norm();
            x = next;
            if delta < 1e-14 * x.norm().max(1.0) {
                break;
            }
        }
        x
    }

    /// Independent oracle: plain Riccati value iteration.
    fn dare_value_iteration(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        let mut p = q.clone();
        for _ in 0..1_000_000 {
            let inner = r + b.transpose() * &p * b;
            let btpa = b.transpose() * &p * a;
            let next = a.transpose() * &p * a
                - a.transpose() * &p * b * inner.lu().solve(&btpa).unwrap()
                + q;
            let delta = (&next - &p).norm();
            p = next;
            if delta < 1e-13 * p.norm() {
                break;
            }
        }
        p
    }

    fn assert_lyap_residual(a: &DMatrix<f64>, c: &SpdMatrix, x: &SpdMatrix) {
        let res = (a * x.as_matrix() * a.transpose() - x.as_matrix() + c.as_matrix()).norm();
        let tol = dlyap_residual_tolerance(a, c.as_matrix(), x.as_matrix());
        assert!(res <= tol, "Lyapunov residual {res} above tolerance {tol}");
    }

    #[test]
    fn dlyap_zero_dynamics() {
        let a = DMatrix::zeros(2, 2);
        let c = SpdMatrix::identity(2);
        let x = solve_dlyap_controllability(&a, &c).unwrap();
        assert!((x.as_matrix() - DMatrix::identity(2, 2)).norm() < 1e-14);
        assert_lyap_residual(&a, &c, &x);
    }

    #[test]
    fn dlyap_scalar_closed_form() {
        let a = DMatrix::from_element(1, 1, 0.5);
        let c = SpdMatrix::identity(1);
        let x = solve_dlyap_controllability(&a, &c).unwrap();
        assert!(rel_err(x.as_matrix()[(0, 0)], 4.0 / 3.0) < 1e-12);
        assert_lyap_residual(&a, &c, &x);
    }

    #[test]
    fn dlyap_matches_fixed_point_oracle() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let a = random_stable(3, 0.8, &mut rng);
        let c = random_spd(3, &mut rng);
        let x = solve_dlyap_controllability(&a, &c).unwrap();
        let oracle = dlyap_fixed_point(&a, c.as_matrix());
        assert!((x.as_matrix() - &oracle).norm() <= 1e-8);
        assert_lyap_residual(&a, &c, &x);
    }

    #[test]
    fn dlyap_matches_truncated_series() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(12);
        let a = random_stable(4, 0.7, &mut rng);
        let c = random_spd(4, &mut rng);
        let x = solve_dlyap_controllability(&a, &c).unwrap();
        let mut series = DMatrix::zeros(4, 4);
        let mut k = 0usize;
        loop {
            let ak = matrix_power(&a, k);
            series += &ak * c.as_matrix() * ak.transpose();
            if ak.norm() < 1e-12 {
                break;
            }
            k += 1;
        }
        assert!((x.as_matrix() - &series).norm() < 1e-8);
    }

    #[test]
    fn dlyap_doubling_agrees_with_kronecker() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(13);
        let a = random_stable(8, 0.9, &mut rng);
        let c = random_spd(8, &mut rng);
        let xk = dlyap_kronecker(&a, c.as_matrix()).unwrap();
        let xd = dlyap_doubling(&a, c.as_matrix()).unwrap();
        assert!((&xk - &xd).norm() < 1e-9 * xk.norm());
    }

    #[test]
    fn dlyap_rejects_unstable() {
        let a = DMatrix::identity(2, 2);
        let c = SpdMatrix::identity(2);
        match solve_dlyap_controllability(&a, &c) {
            Err(Error::NotSchurStable { .. }) => {}
            other => panic!("expected NotSchurStable, got {other:?}"),
        }
    }

    #[test]
    fn dlyap_observability_transpose_symmetry() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(14);
        let a = random_stable(3, 0.6, &mut rng);
        let q = random_spd(3, &mut rng);
        let xo = solve_dlyap_observability(&a, &q).unwrap();
        let xc = solve_dlyap_controllability(&a.transpose(), &q).unwrap();
        assert!((xo.as_matrix() - xc.as_matrix()).norm() < 1e-12);
        let zero = solve_dlyap_observability(&DMatrix::zeros(2, 2), &SpdMatrix::identity(2))
            .unwrap();
        assert!((zero.as_matrix() - DMatrix::identity(2, 2)).norm() < 1e-14);
        let scalar = solve_dlyap_observability(
            &DMatrix::from_element(1, 1, 0.5),
            &SpdMatrix::identity(1),
        )
        .unwrap();
        assert!(rel_err(scalar.as_matrix()[(0, 0)], 4.0 / 3.0) < 1e-12);
    }

    #[test]
    fn dare_one_step_problem() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::identity(2, 2);
        let p = solve_dare(&a, &b, &SpdMatrix::identity(2), &SpdMatrix::identity(2)).unwrap();
        assert!((p.as_matrix() - DMatrix::identity(2, 2)).norm() < 1e-10);
    }

    #[test]
    fn dare_scalar_golden_ratio() {
        // a = b = q = r = 1: p² − p − 1 = 0, positive root (1+√5)/2.
        let a = DMatrix::from_element(1, 1, 1.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let p = solve_dare(&a, &b, &SpdMatrix::identity(1), &SpdMatrix::identity(1)).unwrap();
        let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
        assert!(rel_err(p.as_matrix()[(0, 0)], golden) < 1e-10);
    }

    #[test]
    fn dare_matches_value_iteration_oracle() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(15);
        let a = random_stable(4, 0.95, &mut rng);
        let b = random_matrix(4, 2, &mut rng);
        let q = random_spd(4, &mut rng);
        let r = random_spd(2, &mut rng);
        let p = solve_dare(&a, &b, &q, &r).unwrap();
        let oracle = dare_value_iteration(&a, &b, q.as_matrix(), r.as_matrix());
        assert!((p.as_matrix() - &oracle).norm() <= 1e-8 * oracle.norm());
        // one more value-iteration step changes P only marginally
        let inner = r.as_matrix() + b.transpose() * p.as_matrix() * &b;
        let btpa = b.transpose() * p.as_matrix() * &a;
        let next = a.transpose() * p.as_matrix() * &a
            - a.transpose() * p.as_matrix() * &b * inner.lu().solve(&btpa).unwrap()
            + q.as_matrix();
        assert!((&next - p.as_matrix()).norm() <= 1e-10 * p.as_matrix().norm());
    }

    #[test]
    fn lqr_gain_scalar_and_stability() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let f = lqr_gain(&a, &b, &SpdMatrix::identity(1), &SpdMatrix::identity(1)).unwrap();
        let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
        assert!(rel_err(f[(0, 0)], golden / (1.0 + golden)) < 1e-10);

        let zero = lqr_gain(
            &DMatrix::zeros(2, 2),
            &DMatrix::identity(2, 2),
            &SpdMatrix::identity(2),
            &SpdMatrix::identity(2),
        )
        .unwrap();
        assert!(zero.norm() < 1e-12);

        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(16);
        for _ in 0..5 {
            let a = random_matrix(4, 4, &mut rng);
            let b = random_matrix(4, 1, &mut rng);
            if let Ok(f) = lqr_gain(&a, &b, &SpdMatrix::identity(4), &SpdMatrix::identity(1)) {
                let rho = spectral_radius(&(&a - &b * &f)).unwrap();
                assert!(rho < 1.0, "closed loop unstable: rho = {rho}");
            }
        }
    }

    #[test]
    fn spectral_radius_cases() {
        assert!((spectral_radius(&DMatrix::identity(3, 3)).unwrap() - 1.0).abs() < 1e-12);
        assert!(spectral_radius(&DMatrix::zeros(3, 3)).unwrap() < 1e-12);
        // companion matrix of z² − 0.5 z: roots {0, 0.5}
        let companion = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 1.0, 0.0]);
        assert!((spectral_radius(&companion).unwrap() - 0.5).abs() < 1e-10);
    }

    #[test]
    fn symmetric_sqrt_cases() {
        let i = SpdMatrix::identity(3);
        assert!((i.sqrt() - DMatrix::identity(3, 3)).norm() < 1e-12);

        let d = SpdMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0])))
            .unwrap();
        let s = d.sqrt();
        assert!((s - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).norm() < 1e-10);

        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(17);
        let m = random_spd(5, &mut rng);
        let s = m.sqrt();
        assert!((&s * &s - m.as_matrix()).norm() <= 1e-9 * m.as_matrix().norm());
    }

    #[test]
    fn eigvals_sym_cases() {
        let eigs = eigvals_sym(&SpdMatrix::identity(3)).unwrap();
        assert_eq!(eigs.len(), 3);
        assert!(eigs.iter().all(|&l| (l - 1.0).abs() < 1e-14));

        let d = SpdMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0])))
            .unwrap();
        let eigs = eigvals_sym(&d).unwrap();
        assert!((eigs[0] - 3.0).abs() < 1e-14 && (eigs[1] - 1.0).abs() < 1e-14);

        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(18);
        let m = random_spd(6, &mut rng);
        let eigs = eigvals_sym(&m).unwrap();
        let sum: f64 = eigs.iter().sum();
        let prod: f64 = eigs.iter().product();
        assert!(rel_err(sum, m.as_matrix().trace()) < 1e-9);
        assert!(rel_err(prod, m.as_matrix().determinant()) < 1e-9);
    }

    #[test]
    fn spd_constructor_rejects_bad_inputs() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(SpdMatrix::new(asym), Err(Error::NotSymmetric { .. })));
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(SpdMatrix::new(indef), Err(Error::NotPsd { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn dlyap_residual_property(seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let n = rng.random_range(1..6usize);
            let a = random_stable(n, 0.9, &mut rng);
            let c = random_spd(n, &mut rng);
            let x = solve_dlyap_controllability(&a, &c).unwrap();
            assert_lyap_residual(&a, &c, &x);
        }
    }
}

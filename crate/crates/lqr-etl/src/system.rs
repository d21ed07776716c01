//! Linear-Gaussian system models and closed-loop machinery.
//!
//! The plant is x_{k+1} = A_o x_k + B u_k + v_k with v_k ~ N(0, V). Under
//! state feedback u_k = −F x_k + u_ref(k) the autonomous closed loop is
//! x_{k+1} = A x_k + v_k with A = A_o − B F, and the per-step quadratic cost
//! weight collapses to Q = Q_lqr + Fᵀ R_lqr F.
//!
//! The module provides stationary and joint window covariances of the closed
//! loop, seeded trajectory simulation, and the random generation and
//! norm-bounded perturbation procedures used by the simulation studies:
//! systems are drawn by sampling A_o − I, B and a noise root √V elementwise
//! uniformly, and perturbed by an additive increment of prescribed 2-norm in
//! the stacked (A_o, B, √V) parameter space, so the noise covariance
//! V = √V √Vᵀ stays positive semidefinite by construction.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::linalg::{
    check_square, lqr_gain, solve_dlyap_controllability, spectral_radius, SpdMatrix,
};
use crate::rng::standard_normal_vector;

/// States with any entry beyond this magnitude count as diverged.
pub const STATE_DIVERGENCE_LIMIT: f64 = 1e12;

/// Default cap on the joint window dimension N·n.
pub const JOINT_DIMENSION_CAP: usize = 4000;

/// Rank threshold for controllability/stabilizability tests, relative to the
/// largest singular value.
const RANK_TOL: f64 = 1e-8;

/// Open-loop plant (A_o, B, V), carrying the noise root G with G Gᵀ = V.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopSystem {
    a_open: DMatrix<f64>,
    b: DMatrix<f64>,
    noise_root: DMatrix<f64>,
    v: SpdMatrix,
}

impl OpenLoopSystem {
    /// Builds a system from (A_o, B, V); the noise root is the symmetric
    /// square root of V. Fails if (A_o, B) is not stabilizable.
    pub fn new(a_open: DMatrix<f64>, b: DMatrix<f64>, v: SpdMatrix) -> Result<Self> {
        let root = v.sqrt();
        Self::with_noise_root_and_cov(a_open, b, root, v)
    }

    /// Builds a system from (A_o, B, G) with V = G Gᵀ.
    pub fn with_noise_root(
        a_open: DMatrix<f64>,
        b: DMatrix<f64>,
        noise_root: DMatrix<f64>,
    ) -> Result<Self> {
        let v = SpdMatrix::new(&noise_root * noise_root.transpose())?;
        Self::with_noise_root_and_cov(a_open, b, noise_root, v)
    }

    fn with_noise_root_and_cov(
        a_open: DMatrix<f64>,
        b: DMatrix<f64>,
        noise_root: DMatrix<f64>,
        v: SpdMatrix,
    ) -> Result<Self> {
        check_square(&a_open)?;
        let n = a_open.nrows();
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::ShapeMismatch { context: "input matrix B rows must match A" });
        }
        if noise_root.nrows() != n || noise_root.ncols() != n || v.dim() != n {
            return Err(Error::ShapeMismatch { context: "noise covariance dimension" });
        }
        if !is_stabilizable(&a_open, &b)? {
            return Err(Error::NotStabilizable);
        }
        Ok(Self { a_open, b, noise_root, v })
    }

    pub fn state_dim(&self) -> usize {
        self.a_open.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn a_open(&self) -> &DMatrix<f64> {
        &self.a_open
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn v(&self) -> &SpdMatrix {
        &self.v
    }

    pub fn noise_root(&self) -> &DMatrix<f64> {
        &self.noise_root
    }
}

/// LQR weight matrices, both positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    q_lqr: SpdMatrix,
    r_lqr: SpdMatrix,
}

impl CostWeights {
    pub fn new(q_lqr: SpdMatrix, r_lqr: SpdMatrix) -> Result<Self> {
        for m in [&q_lqr, &r_lqr] {
            let eigs = m.eigenvalues()?;
            let min = *eigs.last().unwrap();
            if min <= 1e-12 * eigs[0].max(f64::MIN_POSITIVE) {
                return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
            }
        }
        Ok(Self { q_lqr, r_lqr })
    }

    /// Unity weights of the given dimensions.
    pub fn identity(state_dim: usize, input_dim: usize) -> Self {
        Self { q_lqr: SpdMatrix::identity(state_dim), r_lqr: SpdMatrix::identity(input_dim) }
    }

    pub fn q_lqr(&self) -> &SpdMatrix {
        &self.q_lqr
    }

    pub fn r_lqr(&self) -> &SpdMatrix {
        &self.r_lqr
    }
}

/// Closed loop x_{k+1} = A x_k + v_k with A = A_o − B F Schur stable,
/// effective state weight Q = Q_lqr + Fᵀ R_lqr F and cached stationary
/// covariance X^V solving A X^V Aᵀ − X^V + V = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopSystem {
    a: DMatrix<f64>,
    q: SpdMatrix,
    v: SpdMatrix,
    noise_root: DMatrix<f64>,
    gain: DMatrix<f64>,
    b: DMatrix<f64>,
    x_v: SpdMatrix,
    x_v_root: DMatrix<f64>,
}

impl ClosedLoopSystem {
    /// Designs the LQR gain for the system and closes the loop.
    pub fn design(sys: &OpenLoopSystem, weights: &CostWeights) -> Result<Self> {
        let gain = lqr_gain(&sys.a_open, &sys.b, &weights.q_lqr, &weights.r_lqr)?;
        Self::with_gain(sys, gain, weights)
    }

    /// Closes the loop with a caller-supplied gain (e.g. a stale controller
    /// applied to a changed plant). Fails with `NotSchurStable` when the
    /// resulting loop is unstable.
    pub fn with_gain(
        sys: &OpenLoopSystem,
        gain: DMatrix<f64>,
        weights: &CostWeights,
    ) -> Result<Self> {
        let n = sys.state_dim();
        if gain.nrows() != sys.input_dim() || gain.ncols() != n {
            return Err(Error::ShapeMismatch { context: "feedback gain dimensions" });
        }
        let a = &sys.a_open - &sys.b * &gain;
        let rho = spectral_radius(&a)?;
        if rho >= 1.0 {
            return Err(Error::NotSchurStable { spectral_radius: rho });
        }
        let q = SpdMatrix::new(
            weights.q_lqr.as_matrix() + gain.transpose() * weights.r_lqr.as_matrix() * &gain,
        )?;
        let x_v = solve_dlyap_controllability(&a, &sys.v)?;
        let x_v_root = x_v.sqrt();
        Ok(Self {
            a,
            q,
            v: sys.v.clone(),
            noise_root: sys.noise_root.clone(),
            gain,
            b: sys.b.clone(),
            x_v,
            x_v_root,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn q(&self) -> &SpdMatrix {
        &self.q
    }

    pub fn v(&self) -> &SpdMatrix {
        &self.v
    }

    pub fn noise_root(&self) -> &DMatrix<f64> {
        &self.noise_root
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Stationary state covariance X^V (cached at construction).
    pub fn stationary_covariance(&self) -> &SpdMatrix {
        &self.x_v
    }

    /// Joint covariance of a window of `n_window` consecutive stationary
    /// states, ordered oldest first: a symmetric block-Toeplitz matrix with
    /// diagonal blocks X^V and block (i, j) = A^{i−j} X^V for i > j.
    pub fn joint_state_covariance(&self, n_window: usize) -> Result<SpdMatrix> {
        self.joint_state_covariance_capped(n_window, JOINT_DIMENSION_CAP)
    }

    pub fn joint_state_covariance_capped(
        &self,
        n_window: usize,
        cap: usize,
    ) -> Result<SpdMatrix> {
        let n = self.state_dim();
        if n_window == 0 {
            return Err(Error::ShapeMismatch { context: "window length must be at least 1" });
        }
        let dim = n_window * n;
        if dim > cap {
            return Err(Error::DimensionCap { dim, cap });
        }
        let mut sigma = DMatrix::zeros(dim, dim);
        // running block A^d X^V
        let mut block = self.x_v.as_matrix().clone();
        for d in 0..n_window {
            if d > 0 {
                block = &self.a * &block;
            }
            let block_t = block.transpose();
            for i in d..n_window {
                let j = i - d;
                sigma.view_mut((i * n, j * n), (n, n)).copy_from(&block);
                if d > 0 {
                    sigma.view_mut((j * n, i * n), (n, n)).copy_from(&block_t);
                }
            }
        }
        Ok(SpdMatrix::new_unchecked(sigma))
    }

    /// Draw from the stationary distribution N(0, X^V).
    pub fn sample_stationary_state(&self, rng: &mut ChaCha12Rng) -> DVector<f64> {
        &self.x_v_root * standard_normal_vector(self.state_dim(), rng)
    }

    /// Smallest lag r₀ from which all entries of A^r X^V stay below
    /// `epsilon` in magnitude, i.e. states r₀ apart are approximately
    /// independent. Termination is certified by a window of norm decay long
    /// enough to dominate later powers of A.
    ///
    /// Panics if `epsilon <= 0`.
    pub fn decorrelation_lag(&self, epsilon: f64) -> usize {
        assert!(epsilon > 0.0, "decorrelation tolerance must be positive");
        // m*: first power with ||A^{m*}||_F <= 1/2, so ||A^{r+km*}|| <= ||A^r||.
        let mut m_star = 1usize;
        let mut p = self.a.clone();
        while p.norm() > 0.5 && m_star < 1_000_000 {
            p = &p * &self.a;
            m_star += 1;
        }

        let mut block = self.x_v.as_matrix().clone();
        let mut candidate: Option<usize> = None;
        let mut norm_run = 0usize;
        let mut r = 0usize;
        loop {
            let max_entry = block.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
            if max_entry < epsilon {
                if candidate.is_none() {
                    candidate = Some(r);
                }
                // Frobenius norm bounds every entry; once it stays below the
                // tolerance for m* consecutive lags, all later lags follow.
                if block.norm() < epsilon {
                    norm_run += 1;
                    if norm_run >= m_star {
                        return candidate.unwrap();
                    }
                } else {
                    norm_run = 0;
                }
            } else {
                candidate = None;
                norm_run = 0;
            }
            block = &self.a * &block;
            r += 1;
        }
    }
}

/// Time-indexed rollout of states and inputs, tagged with the seed that
/// produced it. Convention: `inputs[k]` is applied between `states[k]` and
/// `states[k + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub seed: u64,
    pub start_index: i64,
}

impl Trajectory {
    /// State at absolute time index `t`.
    pub fn state_at(&self, t: i64) -> Option<&DVector<f64>> {
        let offset = t - self.start_index;
        if offset < 0 {
            return None;
        }
        self.states.get(offset as usize)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Simulates `steps` transitions of the closed loop from `x0`, with noise
/// drawn from a ChaCha stream seeded by `seed`, and an optional reference
/// input added on top of the feedback: x_{k+1} = A x_k + B u_ref(k) + v_k.
///
/// Returns `NonFiniteState` if any state entry leaves the finite range; an
/// unstable plant makes this a legal outcome that callers report rather
/// than propagate as a panic.
pub fn simulate(
    cl: &ClosedLoopSystem,
    x0: &DVector<f64>,
    steps: usize,
    seed: u64,
    u_ref: Option<&dyn Fn(usize) -> DVector<f64>>,
) -> Result<Trajectory> {
    if x0.len() != cl.state_dim() {
        return Err(Error::ShapeMismatch { context: "initial state dimension" });
    }
    let mut rng = crate::rng::stream(seed, crate::rng::StreamId::ProcessNoise);
    let n = cl.state_dim();
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps);
    let mut x = x0.clone();
    states.push(x.clone());
    for k in 0..steps {
        let reference = u_ref.map(|f| f(k));
        let mut u = -(&cl.gain * &x);
        if let Some(ref r) = reference {
            u += r;
        }
        let noise = &cl.noise_root * standard_normal_vector(n, &mut rng);
        x = &cl.a * &x
            + reference.as_ref().map_or_else(|| DVector::zeros(n), |r| &cl.b * r)
            + noise;
        if x.iter().any(|e| e.abs() > STATE_DIVERGENCE_LIMIT) {
            return Err(Error::NonFiniteState { step: k + 1 });
        }
        inputs.push(u);
        states.push(x.clone());
    }
    Ok(Trajectory { states, inputs, seed, start_index: 0 })
}

/// Parameters of the random system generator and perturbation sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomSystemSpec {
    pub state_dim: usize,
    pub input_dim: usize,
    /// Elementwise uniform range for A_o − I, B and √V.
    pub entry_range: (f64, f64),
    /// Uniform range of the perturbation magnitude β.
    pub beta_range: (f64, f64),
}

impl Default for RandomSystemSpec {
    fn default() -> Self {
        Self { state_dim: 5, input_dim: 1, entry_range: (-1.0, 1.0), beta_range: (-0.1, 0.1) }
    }
}

impl RandomSystemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.input_dim == 0 {
            return Err(Error::Config("system dimensions must be at least 1".into()));
        }
        if self.entry_range.0 > self.entry_range.1 || self.beta_range.0 > self.beta_range.1 {
            return Err(Error::Config("sampling ranges must be nonempty".into()));
        }
        Ok(())
    }
}

const GENERATION_ATTEMPTS: usize = 1000;

fn sample_uniform_matrix(
    rows: usize,
    cols: usize,
    range: (f64, f64),
    rng: &mut ChaCha12Rng,
) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        if range.0 == range.1 {
            range.0
        } else {
            rng.random_range(range.0..range.1)
        }
    })
}

/// Raw candidate draw: A_o = I + U, B = U, √V = U elementwise uniform.
fn sample_candidate(
    spec: &RandomSystemSpec,
    rng: &mut ChaCha12Rng,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = spec.state_dim;
    let a_open = DMatrix::identity(n, n) + sample_uniform_matrix(n, n, spec.entry_range, rng);
    let b = sample_uniform_matrix(n, spec.input_dim, spec.entry_range, rng);
    let root = sample_uniform_matrix(n, n, spec.entry_range, rng);
    (a_open, b, root)
}

/// Draws random systems until one is stabilizable.
pub fn random_system(spec: &RandomSystemSpec, rng: &mut ChaCha12Rng) -> Result<OpenLoopSystem> {
    spec.validate()?;
    for _ in 0..GENERATION_ATTEMPTS {
        let (a_open, b, root) = sample_candidate(spec, rng);
        if is_stabilizable(&a_open, &b)? {
            return OpenLoopSystem::with_noise_root(a_open, b, root);
        }
    }
    Err(Error::GenerationFailed { attempts: GENERATION_ATTEMPTS })
}

/// Perturbs the system by an additive increment of 2-norm |β| in the stacked
/// (A_o, B, √V) parameter vector: Δ = β (candidate − current)/‖candidate −
/// current‖₂ with β uniform and the candidate drawn like a fresh random
/// system. Increments leading to an uncontrollable pair are resampled;
/// stability of the result is deliberately not enforced.
pub fn perturb_system(
    sys: &OpenLoopSystem,
    spec: &RandomSystemSpec,
    rng: &mut ChaCha12Rng,
) -> Result<OpenLoopSystem> {
    spec.validate()?;
    if spec.state_dim != sys.state_dim() || spec.input_dim != sys.input_dim() {
        return Err(Error::ShapeMismatch { context: "perturbation spec dimensions" });
    }
    for _ in 0..GENERATION_ATTEMPTS {
        let (ca, cb, cg) = sample_candidate(spec, rng);
        let da = ca - &sys.a_open;
        let db = cb - &sys.b;
        let dg = cg - &sys.noise_root;
        let norm = (da.norm_squared() + db.norm_squared() + dg.norm_squared()).sqrt();
        let beta = if spec.beta_range.0 == spec.beta_range.1 {
            spec.beta_range.0
        } else {
            rng.random_range(spec.beta_range.0..spec.beta_range.1)
        };
        if norm == 0.0 && beta != 0.0 {
            continue;
        }
        let scale = if norm > 0.0 { beta / norm } else { 0.0 };
        let a_new = &sys.a_open + da * scale;
        let b_new = &sys.b + db * scale;
        let g_new = &sys.noise_root + dg * scale;
        if is_controllable(&a_new, &b_new) {
            let v = SpdMatrix::new(&g_new * g_new.transpose())?;
            return OpenLoopSystem::with_noise_root_and_cov(a_new, b_new, g_new, v);
        }
    }
    Err(Error::GenerationFailed { attempts: GENERATION_ATTEMPTS })
}

/// Controllability via the rank of [B, AB, …, A^{n−1}B].
pub fn is_controllable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let q = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * q);
    let mut power = b.clone();
    for k in 0..n {
        ctrb.view_mut((0, k * q), (n, q)).copy_from(&power);
        power = a * power;
    }
    let svd = ctrb.svd(false, false);
    let smax = svd.singular_values.max();
    if smax <= 0.0 {
        return false;
    }
    svd.singular_values.iter().filter(|&&s| s > RANK_TOL * smax).count() == n
}

/// Stabilizability via the PBH test: every eigenvalue of A on or outside the
/// unit circle must leave [A − λI, B] at full rank. Complex eigenvalues are
/// handled through the real 2n × 2(n+q) embedding.
pub fn is_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<bool> {
    let n = a.nrows();
    let q = b.ncols();
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 100_000)
        .ok_or(Error::NonConvergence { what: "Schur decomposition" })?;
    for lambda in schur.complex_eigenvalues().iter() {
        if lambda.norm() < 1.0 - 1e-9 {
            continue;
        }
        // M = [A − λI, B]; embed as [[Re M, −Im M], [Im M, Re M]].
        let mut re = DMatrix::zeros(n, n + q);
        let mut im = DMatrix::zeros(n, n + q);
        re.view_mut((0, 0), (n, n)).copy_from(a);
        for i in 0..n {
            re[(i, i)] -= lambda.re;
            im[(i, i)] = -lambda.im;
        }
        re.view_mut((0, n), (n, q)).copy_from(b);
        let mut embed = DMatrix::zeros(2 * n, 2 * (n + q));
        embed.view_mut((0, 0), (n, n + q)).copy_from(&re);
        embed.view_mut((n, n + q), (n, n + q)).copy_from(&re);
        embed.view_mut((0, n + q), (n, n + q)).copy_from(&(-&im));
        embed.view_mut((n, 0), (n, n + q)).copy_from(&im);
        let svd = embed.svd(false, false);
        let smax = svd.singular_values.max();
        if smax <= 0.0 {
            return Ok(false);
        }
        let rank = svd.singular_values.iter().filter(|&&s| s > RANK_TOL * smax).count();
        if rank < 2 * n {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamId};

    fn scalar_system(a: f64, b: f64, v: f64) -> OpenLoopSystem {
        OpenLoopSystem::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            SpdMatrix::new(DMatrix::from_element(1, 1, v)).unwrap(),
        )
        .unwrap()
    }

    /// Stable scalar plant under zero feedback gain.
    fn scalar_loop(a: f64, v: f64) -> ClosedLoopSystem {
        ClosedLoopSystem::with_gain(
            &scalar_system(a, 1.0, v),
            DMatrix::zeros(1, 1),
            &CostWeights::identity(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn close_loop_scalar_example() {
        let sys = scalar_system(1.0, 1.0, 1.0);
        let cl = ClosedLoopSystem::design(&sys, &CostWeights::identity(1, 1)).unwrap();
        let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
        let f = golden / (1.0 + golden);
        assert!((cl.gain()[(0, 0)] - f).abs() < 1e-9);
        assert!((cl.a()[(0, 0)] - (1.0 - f)).abs() < 1e-9);
        assert!((cl.q().as_matrix()[(0, 0)] - (1.0 + f * f)).abs() < 1e-9);
    }

    #[test]
    fn close_loop_zero_dynamics_is_stable() {
        let sys = OpenLoopSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            SpdMatrix::identity(2),
        )
        .unwrap();
        let cl = ClosedLoopSystem::design(&sys, &CostWeights::identity(2, 2)).unwrap();
        assert!(spectral_radius(cl.a()).unwrap() < 1.0);
    }

    #[test]
    fn random_systems_close_stably() {
        let spec = RandomSystemSpec::default();
        for seed in 0..100 {
            let mut rng = stream(seed, StreamId::SystemGeneration);
            let sys = random_system(&spec, &mut rng).unwrap();
            let cl = ClosedLoopSystem::design(&sys, &CostWeights::identity(5, 1)).unwrap();
            assert!(spectral_radius(cl.a()).unwrap() < 1.0);
        }
    }

    #[test]
    fn stationary_covariance_cases() {
        let sys = OpenLoopSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            SpdMatrix::identity(2),
        )
        .unwrap();
        let cl = ClosedLoopSystem::with_gain(&sys, DMatrix::zeros(2, 2), &CostWeights::identity(2, 2))
            .unwrap();
        assert!((cl.stationary_covariance().as_matrix() - DMatrix::identity(2, 2)).norm() < 1e-9);

        let cl = scalar_loop(0.5, 1.0);
        assert!((cl.stationary_covariance().as_matrix()[(0, 0)] - 4.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn stationary_covariance_matches_monte_carlo() {
        let cl = scalar_loop(0.5, 1.0);
        let mut rng = stream(3, StreamId::InitialState);
        let x0 = cl.sample_stationary_state(&mut rng);
        let traj = simulate(&cl, &x0, 200_000, 99, None).unwrap();
        // batch means give an honest standard error under autocorrelation
        let batches = 10;
        let per = traj.states.len() / batches;
        let means: Vec<f64> = (0..batches)
            .map(|b| {
                traj.states[b * per..(b + 1) * per].iter().map(|x| x[0] * x[0]).sum::<f64>()
                    / per as f64
            })
            .collect();
        let mean = means.iter().sum::<f64>() / batches as f64;
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
        let se = (var / batches as f64).sqrt();
        assert!((mean - 4.0 / 3.0).abs() < 3.0 * se + 1e-9, "MC variance {mean} vs 4/3, se {se}");
    }

    #[test]
    fn joint_covariance_cases() {
        let cl = scalar_loop(0.5, 1.0);
        let s1 = cl.joint_state_covariance(1).unwrap();
        assert!((s1.as_matrix() - cl.stationary_covariance().as_matrix()).norm() < 1e-12);

        let s3 = cl.joint_state_covariance(3).unwrap();
        let expected =
            DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.5, 1.0])
                * (4.0 / 3.0);
        assert!((s3.as_matrix() - &expected).norm() < 1e-10);

        // A = 0: block diagonal
        let sys = OpenLoopSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            SpdMatrix::identity(2),
        )
        .unwrap();
        let cl0 =
            ClosedLoopSystem::with_gain(&sys, DMatrix::zeros(2, 2), &CostWeights::identity(2, 2))
                .unwrap();
        let s = cl0.joint_state_covariance(3).unwrap();
        assert!((s.as_matrix() - DMatrix::identity(6, 6)).norm() < 1e-9);
    }

    #[test]
    fn joint_covariance_is_block_toeplitz() {
        let spec = RandomSystemSpec::default();
        let mut rng = stream(5, StreamId::SystemGeneration);
        let sys = random_system(&spec, &mut rng).unwrap();
        let cl = ClosedLoopSystem::design(&sys, &CostWeights::identity(5, 1)).unwrap();
        let n = 5;
        let s = cl.joint_state_covariance(6).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let b1 = s.as_matrix().view((i * n, j * n), (n, n)).clone_owned();
                let b2 = s.as_matrix().view(((i + 1) * n, (j + 1) * n), (n, n)).clone_owned();
                assert!((b1 - b2).norm() < 1e-14, "block ({i},{j}) differs from shifted block");
            }
        }
    }

    #[test]
    fn joint_covariance_respects_cap() {
        let cl = scalar_loop(0.5, 1.0);
        assert!(matches!(
            cl.joint_state_covariance_capped(11, 10),
            Err(Error::DimensionCap { dim: 11, cap: 10 })
        ));
    }

    #[test]
    fn stationary_samples_reproducible_and_calibrated() {
        let sys = OpenLoopSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap(),
        )
        .unwrap();
        let cl =
            ClosedLoopSystem::with_gain(&sys, DMatrix::zeros(2, 2), &CostWeights::identity(2, 2))
                .unwrap();

        let mut r1 = stream(7, StreamId::InitialState);
        let mut r2 = stream(7, StreamId::InitialState);
        assert_eq!(cl.sample_stationary_state(&mut r1), cl.sample_stationary_state(&mut r2));

        let mut rng = stream(8, StreamId::InitialState);
        let m = 100_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..m {
            let x = cl.sample_stationary_state(&mut rng);
            acc += &x * x.transpose();
        }
        acc /= m as f64;
        let xv = cl.stationary_covariance().as_matrix();
        for i in 0..2 {
            for j in 0..2 {
                let se = ((xv[(i, i)] * xv[(j, j)] + xv[(i, j)].powi(2)) / m as f64).sqrt();
                assert!(
                    (acc[(i, j)] - xv[(i, j)]).abs() < 4.0 * se,
                    "entry ({i},{j}): {} vs {}",
                    acc[(i, j)],
                    xv[(i, j)]
                );
            }
        }
    }

    #[test]
    fn zero_noise_sampling_returns_zero() {
        let cl = ClosedLoopSystem::with_gain(
            &OpenLoopSystem::new(
                DMatrix::from_element(1, 1, 0.5),
                DMatrix::identity(1, 1),
                SpdMatrix::new(DMatrix::zeros(1, 1)).unwrap(),
            )
            .unwrap(),
            DMatrix::zeros(1, 1),
            &CostWeights::identity(1, 1),
        )
        .unwrap();
        let mut rng = stream(9, StreamId::InitialState);
        assert_eq!(cl.sample_stationary_state(&mut rng)[0], 0.0);
    }

    #[test]
    fn simulate_deterministic_cases() {
        // V = 0, x0 = 0: all-zero trajectory
        let cl = ClosedLoopSystem::with_gain(
            &OpenLoopSystem::new(
                DMatrix::from_element(1, 1, 0.5),
                DMatrix::identity(1, 1),
                SpdMatrix::new(DMatrix::zeros(1, 1)).unwrap(),
            )
            .unwrap(),
            DMatrix::zeros(1, 1),
            &CostWeights::identity(1, 1),
        )
        .unwrap();
        let traj = simulate(&cl, &DVector::zeros(1), 50, 1, None).unwrap();
        assert!(traj.states.iter().all(|x| x[0] == 0.0));
        assert_eq!(traj.states.len(), 51);
        assert_eq!(traj.inputs.len(), 50);

        // V = 0, x0 = 1: geometric decay 0.5^k
        let traj = simulate(&cl, &DVector::from_element(1, 1.0), 20, 1, None).unwrap();
        for (k, x) in traj.states.iter().enumerate() {
            assert!((x[0] - 0.5f64.powi(k as i32)).abs() < 1e-15);
        }

        // seeded repetition is bit-identical
        let cl = scalar_loop(0.5, 1.0);
        let t1 = simulate(&cl, &DVector::from_element(1, 0.3), 100, 42, None).unwrap();
        let t2 = simulate(&cl, &DVector::from_element(1, 0.3), 100, 42, None).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn simulate_flags_divergence() {
        let mut cl = scalar_loop(0.5, 0.0);
        cl.a = DMatrix::from_element(1, 1, 1.5);
        let res = simulate(&cl, &DVector::from_element(1, 1.0), 200, 1, None);
        assert!(matches!(res, Err(Error::NonFiniteState { .. })));
    }

    #[test]
    fn lemma3_cross_covariance_monte_carlo() {
        let spec = RandomSystemSpec { state_dim: 2, ..Default::default() };
        let mut rng = stream(21, StreamId::SystemGeneration);
        let sys = random_system(&spec, &mut rng).unwrap();
        let cl = ClosedLoopSystem::design(&sys, &CostWeights::identity(2, 1)).unwrap();
        let mut init = stream(22, StreamId::InitialState);
        let x0 = cl.sample_stationary_state(&mut init);
        let traj = simulate(&cl, &x0, 1_000_000, 23, None).unwrap();
        let xv = cl.stationary_covariance().as_matrix();
        for d in [0usize, 1, 2, 5] {
            let target = crate::linalg::matrix_power(cl.a(), d) * xv;
            let m = traj.states.len() - d;
            let mut acc = DMatrix::zeros(2, 2);
            for k in 0..m {
                acc += &traj.states[k + d] * traj.states[k].transpose();
            }
            acc /= m as f64;
            // i.i.d.-style standard error inflated by a mixing factor
            for i in 0..2 {
                for j in 0..2 {
                    let se = ((xv[(i, i)] * xv[(j, j)] + target[(i, j)].powi(2)) / m as f64)
                        .sqrt()
                        * 3.0;
                    assert!(
                        (acc[(i, j)] - target[(i, j)]).abs() < 4.0 * se,
                        "lag {d} entry ({i},{j}): {} vs {}",
                        acc[(i, j)],
                        target[(i, j)]
                    );
                }
            }
        }
    }

    #[test]
    fn random_system_degenerate_range_fails() {
        let spec = RandomSystemSpec { entry_range: (0.0, 0.0), ..Default::default() };
        let mut rng = stream(31, StreamId::SystemGeneration);
        assert!(matches!(random_system(&spec, &mut rng), Err(Error::GenerationFailed { .. })));
    }

    #[test]
    fn perturbation_norm_is_beta() {
        let spec = RandomSystemSpec::default();
        let mut rng = stream(33, StreamId::SystemGeneration);
        let sys = random_system(&spec, &mut rng).unwrap();
        let mut prng = stream(34, StreamId::Perturbation);
        for _ in 0..50 {
            let new = perturb_system(&sys, &spec, &mut prng).unwrap();
            let delta = ((new.a_open() - sys.a_open()).norm_squared()
                + (new.b() - sys.b()).norm_squared()
                + (new.noise_root() - sys.noise_root()).norm_squared())
            .sqrt();
            assert!(delta <= 0.1 + 1e-12, "perturbation norm {delta} exceeds beta range");
            let eigs = new.v().eigenvalues().unwrap();
            assert!(*eigs.last().unwrap() > -1e-12);
        }
    }

    #[test]
    fn perturbation_with_zero_beta_is_identity() {
        let spec = RandomSystemSpec::default();
        let mut rng = stream(35, StreamId::SystemGeneration);
        let sys = random_system(&spec, &mut rng).unwrap();
        let frozen = RandomSystemSpec { beta_range: (0.0, 0.0), ..spec };
        let mut prng = stream(36, StreamId::Perturbation);
        let new = perturb_system(&sys, &frozen, &mut prng).unwrap();
        assert_eq!(new.a_open(), sys.a_open());
        assert_eq!(new.b(), sys.b());
        assert_eq!(new.noise_root(), sys.noise_root());
    }

    #[test]
    fn decorrelation_lag_cases() {
        // A = 0: lag 1 suffices (X^V itself is nonzero)
        let sys = OpenLoopSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            SpdMatrix::identity(2),
        )
        .unwrap();
        let cl =
            ClosedLoopSystem::with_gain(&sys, DMatrix::zeros(2, 2), &CostWeights::identity(2, 2))
                .unwrap();
        assert_eq!(cl.decorrelation_lag(0.01), 1);

        // scalar a = 0.5: 0.5^8 · 4/3 ≈ 0.0052 < 0.01 < 0.5^7 · 4/3
        let cl = scalar_loop(0.5, 1.0);
        assert_eq!(cl.decorrelation_lag(0.01), 8);

        // nonincreasing in epsilon
        assert!(cl.decorrelation_lag(0.1) <= cl.decorrelation_lag(0.01));
        assert!(cl.decorrelation_lag(0.01) <= cl.decorrelation_lag(0.001));
    }

    #[test]
    fn stabilizability_test_cases() {
        // stable but uncontrollable: stabilizable
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.3]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        assert!(is_stabilizable(&a, &b).unwrap());
        // unstable uncontrollable mode: not stabilizable
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.3]);
        assert!(!is_stabilizable(&a, &b).unwrap());
        // unstable but controllable: stabilizable
        let b_full = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(is_stabilizable(&a, &b_full).unwrap());
        assert!(is_controllable(&a, &b_full));
        assert!(!is_controllable(&a, &b));
    }
}

//! Model updating after a trigger fires.
//!
//! Simulation studies use the oracle update (copy the true parameters);
//! hardware-style studies excite the plant with a chirp reference, fit
//! (Â_o, B̂) by ordinary least squares on the transitions x_{k+1} ≈
//! Â_o x_k + B̂ u_k, and estimate the noise covariance from the fit
//! residuals or from a stretch of steady-state data.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::system::{OpenLoopSystem, Trajectory};

/// Rank threshold of the least-squares regressor, relative to the largest
/// singular value.
const RANK_TOL: f64 = 1e-8;

/// Shape of the excitation reference used during learning experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExcitationKind {
    /// Frequency sweep up and back down (phase-continuous).
    Chirp,
    /// Independent Gaussian samples per step.
    White,
}

/// Excitation reference signal parameters. Frequencies are normalized to
/// the sample rate (cycles per step, Nyquist at 0.5).
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationSignal {
    pub kind: ExcitationKind,
    pub amplitude: f64,
    pub f_start: f64,
    pub f_end: f64,
    pub duration: usize,
}

impl ExcitationSignal {
    pub fn validate(&self) -> Result<()> {
        if self.amplitude <= 0.0 {
            return Err(Error::Config("excitation amplitude must be positive".into()));
        }
        for f in [self.f_start, self.f_end] {
            if !(0.0 < f && f < 0.5) {
                return Err(Error::Config(
                    "excitation frequencies must lie in (0, 0.5) of the sample rate".into(),
                ));
            }
        }
        if self.duration == 0 {
            return Err(Error::Config("excitation duration must be at least one step".into()));
        }
        Ok(())
    }
}

/// Chirp sample at step `k`: amplitude · sin(φ(k)) with the instantaneous
/// frequency ramping f_start → f_end over the first half of the signal and
/// back over the second, phase-continuous throughout.
pub fn chirp(signal: &ExcitationSignal, k: usize) -> Result<f64> {
    signal.validate()?;
    if k >= signal.duration {
        return Err(Error::OutOfRange { index: k, limit: signal.duration });
    }
    let half = (signal.duration as f64) / 2.0;
    let m = k as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    let df = signal.f_end - signal.f_start;
    let phase = if m <= half {
        two_pi * (signal.f_start * m + df * m * m / (2.0 * half))
    } else {
        let phase_half = two_pi * (signal.f_start * half + df * half / 2.0);
        let t = m - half;
        let down = signal.duration as f64 - half;
        phase_half + two_pi * (signal.f_end * t - df * t * t / (2.0 * down))
    };
    Ok(signal.amplitude * phase.sin())
}

/// Estimated model (Â_o, B̂, V̂) with fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentifiedModel {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub v_hat: SpdMatrix,
    pub sample_count: usize,
    pub residual_rms: f64,
}

impl IdentifiedModel {
    /// Converts into a system usable for control design; fails if the
    /// estimated pair is not stabilizable.
    pub fn to_system(&self) -> Result<OpenLoopSystem> {
        OpenLoopSystem::new(self.a_hat.clone(), self.b_hat.clone(), self.v_hat.clone())
    }
}

/// Oracle update: copy the true parameters exactly (the simulation-study
/// abstraction of a learning experiment).
pub fn oracle_update(truth: &OpenLoopSystem) -> IdentifiedModel {
    IdentifiedModel {
        a_hat: truth.a_open().clone(),
        b_hat: truth.b().clone(),
        v_hat: truth.v().clone(),
        sample_count: 0,
        residual_rms: 0.0,
    }
}

/// Ordinary least squares over the recorded transitions: (Â_o, B̂) minimize
/// Σ ‖x_{k+1} − Â_o x_k − B̂ u_k‖²; V̂ is the empirical covariance of the
/// residuals. Requires at least 10 (n + q) transitions and a numerically
/// full-rank regressor (sufficient excitation).
pub fn ols_estimate(traj: &Trajectory) -> Result<IdentifiedModel> {
    if traj.states.len() < 2 || traj.inputs.len() + 1 != traj.states.len() {
        return Err(Error::ShapeMismatch { context: "trajectory must pair inputs and states" });
    }
    let n = traj.states[0].len();
    let q = traj.inputs[0].len();
    let m = traj.inputs.len();
    let needed = 10 * (n + q);
    if m < needed {
        return Err(Error::TooFewSamples { have: m, need: needed });
    }

    let mut regressors = DMatrix::zeros(m, n + q);
    let mut targets = DMatrix::zeros(m, n);
    for k in 0..m {
        for i in 0..n {
            regressors[(k, i)] = traj.states[k][i];
            targets[(k, i)] = traj.states[k + 1][i];
        }
        for j in 0..q {
            regressors[(k, n + j)] = traj.inputs[k][j];
        }
    }

    let svd = regressors.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > RANK_TOL * smax).count();
    if smax <= 0.0 || rank < n + q {
        return Err(Error::RankDeficient { rank, needed: n + q });
    }
    let theta = svd
        .solve(&targets, RANK_TOL * smax)
        .map_err(|_| Error::RankDeficient { rank, needed: n + q })?;

    let a_hat = theta.rows(0, n).transpose();
    let b_hat = theta.rows(n, q).transpose();

    let mut residuals = Vec::with_capacity(m);
    let mut sq_sum = 0.0;
    for k in 0..m {
        let predicted = &a_hat * &traj.states[k] + &b_hat * &traj.inputs[k];
        let e = &traj.states[k + 1] - predicted;
        sq_sum += e.norm_squared();
        residuals.push(e);
    }
    let v_hat = empirical_covariance(&residuals)?;
    Ok(IdentifiedModel {
        a_hat,
        b_hat,
        v_hat,
        sample_count: m,
        residual_rms: (sq_sum / (m as f64 * n as f64)).sqrt(),
    })
}

/// Empirical covariance of the one-step-ahead residuals of `model` on a
/// trajectory (e.g. steady-state data recorded with the new controller).
pub fn residual_covariance(traj: &Trajectory, model: &IdentifiedModel) -> Result<SpdMatrix> {
    if traj.states.len() < 2 || traj.inputs.len() + 1 != traj.states.len() {
        return Err(Error::ShapeMismatch { context: "trajectory must pair inputs and states" });
    }
    let n = traj.states[0].len();
    let m = traj.inputs.len();
    if m < n + 1 {
        return Err(Error::TooFewSamples { have: m, need: n + 1 });
    }
    let residuals: Vec<DVector<f64>> = (0..m)
        .map(|k| {
            &traj.states[k + 1] - (&model.a_hat * &traj.states[k] + &model.b_hat * &traj.inputs[k])
        })
        .collect();
    empirical_covariance(&residuals)
}

/// Mean-centered sample covariance with divisor m − 1.
fn empirical_covariance(samples: &[DVector<f64>]) -> Result<SpdMatrix> {
    let m = samples.len();
    if m < 2 {
        return Err(Error::TooFewSamples { have: m, need: 2 });
    }
    let n = samples[0].len();
    let mut mean = DVector::zeros(n);
    for s in samples {
        mean += s;
    }
    mean /= m as f64;
    let mut cov = DMatrix::zeros(n, n);
    for s in samples {
        let d = s - &mean;
        cov += &d * d.transpose();
    }
    cov /= m as f64 - 1.0;
    SpdMatrix::new((&cov + cov.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::expected_cost;
    use crate::rng::{standard_normal_vector, stream, StreamId};
    use crate::system::{
        random_system, simulate, ClosedLoopSystem, CostWeights, RandomSystemSpec,
    };
    use rand::Rng;

    #[test]
    fn oracle_update_is_identity() {
        let spec = RandomSystemSpec::default();
        let mut rng = stream(70, StreamId::SystemGeneration);
        let sys = random_system(&spec, &mut rng).unwrap();
        let model = oracle_update(&sys);
        assert_eq!(&model.a_hat, sys.a_open());
        assert_eq!(&model.b_hat, sys.b());
        assert_eq!(model.v_hat.as_matrix(), sys.v().as_matrix());
        assert_eq!(model.residual_rms, 0.0);

        // statistics derived from the updated model match the truth's
        let weights = CostWeights::identity(5, 1);
        let truth_cl = ClosedLoopSystem::design(&sys, &weights).unwrap();
        let model_cl = ClosedLoopSystem::design(&model.to_system().unwrap(), &weights).unwrap();
        let e_truth = expected_cost(&truth_cl, 40).unwrap();
        let e_model = expected_cost(&model_cl, 40).unwrap();
        assert!((e_truth - e_model).abs() < 1e-9 * e_truth.abs().max(1.0));
    }

    #[test]
    fn chirp_basic_shape() {
        let sig = ExcitationSignal {
            kind: ExcitationKind::Chirp,
            amplitude: 2.0,
            f_start: 0.05,
            f_end: 0.15,
            duration: 400,
        };
        assert_eq!(chirp(&sig, 0).unwrap(), 0.0);
        assert!(matches!(chirp(&sig, 400), Err(Error::OutOfRange { .. })));
        assert!(chirp(&sig, 13).unwrap().abs() <= 2.0);

        // constant-frequency degenerate case: a pure sinusoid
        let tone = ExcitationSignal { f_start: 0.1, f_end: 0.1, ..sig.clone() };
        for k in 0..100 {
            let expected = 2.0 * (2.0 * std::f64::consts::PI * 0.1 * k as f64).sin();
            assert!((chirp(&tone, k).unwrap() - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn chirp_zero_crossing_rate_matches_mean_frequency() {
        let sig = ExcitationSignal {
            kind: ExcitationKind::Chirp,
            amplitude: 1.0,
            f_start: 0.05,
            f_end: 0.15,
            duration: 4000,
        };
        let half = 2000usize;
        let samples: Vec<f64> = (0..half).map(|k| chirp(&sig, k).unwrap()).collect();
        let crossings = samples.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
        // mean instantaneous frequency over the up-sweep is (f_start+f_end)/2;
        // each cycle contributes two sign changes
        let estimated = crossings as f64 / (2.0 * half as f64);
        assert!(
            (estimated - 0.1).abs() < 0.005,
            "zero-crossing frequency {estimated} far from 0.1"
        );
    }

    /// Trajectory of the plant under stabilizing feedback with an exogenous
    /// reference added on top: u_k = −F x_k + r_k. The recorded inputs are
    /// the total u_k, which is what the regression sees.
    fn drive_system(
        sys: &crate::system::OpenLoopSystem,
        references: &[DVector<f64>],
        noisy: bool,
        seed: u64,
    ) -> Trajectory {
        let gain = crate::linalg::lqr_gain(
            sys.a_open(),
            sys.b(),
            &SpdMatrix::identity(sys.state_dim()),
            &SpdMatrix::identity(sys.input_dim()),
        )
        .unwrap();
        let mut rng = stream(seed, StreamId::ProcessNoise);
        let n = sys.state_dim();
        let mut states = vec![DVector::zeros(n)];
        let mut inputs = Vec::with_capacity(references.len());
        for r in references {
            let x = states.last().unwrap();
            let u = -(&gain * x) + r;
            let mut next = sys.a_open() * x + sys.b() * &u;
            if noisy {
                next += sys.noise_root() * standard_normal_vector(n, &mut rng);
            }
            states.push(next);
            inputs.push(u);
        }
        Trajectory { states, inputs, seed, start_index: 0 }
    }

    #[test]
    fn ols_recovers_noise_free_dynamics() {
        let spec = RandomSystemSpec { state_dim: 3, ..Default::default() };
        let mut rng = stream(71, StreamId::SystemGeneration);
        let sys = random_system(&spec, &mut rng).unwrap();
        let mut urng = stream(72, StreamId::ProcessNoise);
        let inputs: Vec<DVector<f64>> =
            (0..200).map(|_| standard_normal_vector(1, &mut urng)).collect();
        let traj = drive_system(&sys, &inputs, false, 73);
        let model = ols_estimate(&traj).unwrap();
        assert!((&model.a_hat - sys.a_open()).norm() < 1e-8);
        assert!((&model.b_hat - sys.b()).norm() < 1e-8);
        assert!(model.residual_rms < 1e-8);
    }

    #[test]
    fn ols_rejects_uninformative_data() {
        let spec = RandomSystemSpec { state_dim: 2, ..Default::default() };
        let mut rng = stream(74, StreamId::SystemGeneration);
        let sys = random_system(&spec, &mut rng).unwrap();
        let inputs = vec![DVector::zeros(1); 100];
        let traj = drive_system(&sys, &inputs, false, 75);
        assert!(matches!(ols_estimate(&traj), Err(Error::RankDeficient { .. })));

        let short = drive_system(&sys, &inputs[..10], false, 76);
        assert!(matches!(ols_estimate(&short), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn ols_error_shrinks_with_sample_count() {
        let spec = RandomSystemSpec::default();
        let mut rng = stream(77, StreamId::SystemGeneration);
        let sys = random_system(&spec, &mut rng).unwrap();
        let sig = ExcitationSignal {
            kind: ExcitationKind::Chirp,
            amplitude: 10.0,
            f_start: 0.01,
            f_end: 0.2,
            duration: 10_000,
        };
        let mut errors = Vec::new();
        for &m in &[100usize, 1_000, 10_000] {
            // median over a few seeds to smooth out noise realizations
            let mut errs: Vec<f64> = (0..3)
                .map(|s| {
                    let inputs: Vec<DVector<f64>> = (0..m)
                        .map(|k| DVector::from_element(1, chirp(&sig, k % sig.duration).unwrap()))
                        .collect();
                    let traj = drive_system(&sys, &inputs, true, 78 + s);
                    let model = ols_estimate(&traj).unwrap();
                    (&model.a_hat - sys.a_open()).norm()
                })
                .collect();
            errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            errors.push(errs[1]);
        }
        assert!(errors[0] >= errors[1] && errors[1] >= errors[2], "errors not shrinking: {errors:?}");
        assert!(errors[2] < 0.05, "error at 10k samples too large: {}", errors[2]);
    }

    #[test]
    fn residual_covariance_estimates_noise() {
        let spec = RandomSystemSpec { state_dim: 2, ..Default::default() };
        let mut rng = stream(80, StreamId::SystemGeneration);
        let sys = random_system(&spec, &mut rng).unwrap();
        let model = oracle_update(&sys);
        let mut urng = stream(81, StreamId::ProcessNoise);
        let inputs: Vec<DVector<f64>> =
            (0..20_000).map(|_| standard_normal_vector(1, &mut urng) * 0.5).collect();
        let traj = drive_system(&sys, &inputs, true, 82);
        let est = residual_covariance(&traj, &model).unwrap();
        let v = sys.v().as_matrix();
        let m = inputs.len() as f64;
        for i in 0..2 {
            for j in 0..2 {
                let se = ((v[(i, i)] * v[(j, j)] + v[(i, j)].powi(2)) / m).sqrt();
                assert!(
                    (est.as_matrix()[(i, j)] - v[(i, j)]).abs() < 4.0 * se,
                    "entry ({i},{j}): {} vs {}",
                    est.as_matrix()[(i, j)],
                    v[(i, j)]
                );
            }
        }
    }

    #[test]
    fn residual_covariance_edge_cases() {
        let spec = RandomSystemSpec { state_dim: 2, ..Default::default() };
        let mut rng = stream(83, StreamId::SystemGeneration);
        let sys = random_system(&spec, &mut rng).unwrap();
        let model = oracle_update(&sys);
        // noise-free: residuals vanish, covariance is the zero matrix
        let mut urng = stream(84, StreamId::ProcessNoise);
        let inputs: Vec<DVector<f64>> =
            (0..50).map(|_| standard_normal_vector(1, &mut urng)).collect();
        let clean = drive_system(&sys, &inputs, false, 85);
        let est = residual_covariance(&clean, &model).unwrap();
        assert!(est.as_matrix().norm() < 1e-16);

        let tiny = drive_system(&sys, &inputs[..2], false, 86);
        assert!(matches!(
            residual_covariance(&tiny, &model),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn pipeline_closure_after_oracle_update() {
        // oracle update, re-close the loop, recompute thresholds: the
        // matched-model coverage property carries over
        let spec = RandomSystemSpec { state_dim: 2, ..Default::default() };
        let mut rng = stream(87, StreamId::SystemGeneration);
        let truth = random_system(&spec, &mut rng).unwrap();
        let weights = CostWeights::identity(2, 1);
        let model = oracle_update(&truth).to_system().unwrap();
        let cl = ClosedLoopSystem::design(&model, &weights).unwrap();
        let n_window = 6;
        let spectrum = crate::cost::mgf_spectrum(&cl, n_window).unwrap();
        let th = crate::triggers::chernoff_thresholds(&spectrum, 0.05).unwrap();
        let mut init = stream(88, StreamId::InitialState);
        let x0 = cl.sample_stationary_state(&mut init);
        let traj = simulate(&cl, &x0, 3000, 89, None).unwrap();
        let mut outside = 0usize;
        let mut windows = 0usize;
        for chunk_end in (n_window..traj.states.len()).step_by(n_window) {
            let j = crate::cost::empirical_cost(
                &traj,
                cl.q(),
                chunk_end as i64,
                n_window,
            )
            .unwrap();
            windows += 1;
            if j <= th.kappa_minus || j >= th.kappa_plus {
                outside += 1;
            }
        }
        let rate = outside as f64 / windows as f64;
        assert!(rate <= 0.05 + 3.0 * (0.05f64 / windows as f64).sqrt());
    }

    #[test]
    fn excitation_validation() {
        let mut sig = ExcitationSignal {
            kind: ExcitationKind::White,
            amplitude: 1.0,
            f_start: 0.1,
            f_end: 0.2,
            duration: 10,
        };
        assert!(sig.validate().is_ok());
        sig.f_end = 0.5;
        assert!(sig.validate().is_err());
        sig.f_end = 0.2;
        sig.amplitude = 0.0;
        assert!(sig.validate().is_err());
        let mut rng = stream(90, StreamId::ProcessNoise);
        let _unused: f64 = rng.random_range(0.0..1.0);
    }
}

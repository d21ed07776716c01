//! Closed-loop scenario harness.
//!
//! Runs the full event-triggered-learning loop: simulate the true plant
//! under the current controller, evaluate the learning trigger at every
//! step, and on a firing update the model (oracle copy or a chirp-excited
//! least-squares experiment), the controller, the expected cost and the
//! trigger thresholds. The true system is perturbed every `change_interval`
//! steps without touching model, controller or trigger; detections are
//! attributed to the outstanding change, fires with no outstanding change on
//! a matched model count as misfires.
//!
//! The Monte Carlo study runs many independent rollouts in parallel (one
//! seeded RNG universe per rollout, merged in rollout order, so results are
//! identical for any worker count), records a detection delay for every
//! stable change, and estimates the conditional delay density over the
//! system-change size δ_sys by Gaussian kernel smoothing.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::config::{LearningMode, ScenarioConfig, TriggerKind};
use crate::cost::{expected_cost, mgf_spectrum, moments_from_mgf, second_moment};
use crate::error::{Error, Result};
use crate::identification::{chirp, ols_estimate, oracle_update, ExcitationKind, ExcitationSignal};
use crate::linalg::spectral_radius;
use crate::metrics::{
    conditional_density, gaussian_kde_2d, marginal_on_grid, Density1d,
    DensityEstimate, DetectionRecord, MisfireReport,
};
use crate::report::{ChangeOutcome, Event, RunReport, RunSummary, StepRecord};
use crate::rng::{rollout_seed, standard_normal_vector, stream, StreamId};
use crate::system::{
    perturb_system, ClosedLoopSystem, CostWeights, OpenLoopSystem, RandomSystemSpec,
    STATE_DIVERGENCE_LIMIT,
};
use crate::triggers::{
    chernoff_thresholds, hoeffding_threshold, second_moment_threshold, ChernoffConfig,
    ChernoffEvaluator, ChernoffThresholds, HoeffdingConfig, HoeffdingEvaluator, TriggerDecision,
};

/// Engine knobs beyond the scenario config.
#[derive(Debug, Clone)]
pub struct EngineOptions {
    /// Keep the per-step series (disable for long Monte Carlo rollouts).
    pub record_series: bool,
    /// Redraw perturbations until the changed loop is stable under the
    /// running controller (the Monte Carlo protocol).
    pub resample_unstable_changes: bool,
    /// Force a dwell count (the Monte Carlo study uses first crossings).
    pub dwell_override: Option<usize>,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self { record_series: true, resample_unstable_changes: false, dwell_override: None }
    }
}

/// Runs the configured scenario and returns the full report.
pub fn run_etl_scenario(cfg: &ScenarioConfig) -> Result<RunReport> {
    run_scenario_with_options(cfg, &EngineOptions::default())
}

pub fn run_scenario_with_options(
    cfg: &ScenarioConfig,
    opts: &EngineOptions,
) -> Result<RunReport> {
    cfg.validate()?;
    Engine::new(cfg, opts.clone())?.run()
}

/// Trigger runtime selected by the configuration.
enum TriggerRuntime {
    Mean { eval: HoeffdingEvaluator, relative: bool },
    SecondMoment { eval: HoeffdingEvaluator },
    Chernoff { eval: ChernoffEvaluator },
}

impl TriggerRuntime {
    fn step(&mut self, x: &DVector<f64>) -> TriggerDecision {
        match self {
            TriggerRuntime::Mean { eval, .. } | TriggerRuntime::SecondMoment { eval } => {
                eval.step(x)
            }
            TriggerRuntime::Chernoff { eval } => eval.step(x),
        }
    }

    fn reset(&mut self) {
        match self {
            TriggerRuntime::Mean { eval, .. } | TriggerRuntime::SecondMoment { eval } => {
                eval.reset()
            }
            TriggerRuntime::Chernoff { eval } => eval.reset(),
        }
    }

    fn latest_window_cost(&self) -> Option<f64> {
        match self {
            TriggerRuntime::Mean { eval, .. } | TriggerRuntime::SecondMoment { eval } => {
                eval.latest_window_cost()
            }
            TriggerRuntime::Chernoff { eval } => eval.latest_window_cost(),
        }
    }

    /// Spacing of disjoint evaluation instants carrying the η guarantee.
    fn guarantee_spacing(&self) -> usize {
        match self {
            TriggerRuntime::Mean { eval, .. } | TriggerRuntime::SecondMoment { eval } => {
                eval.config().evaluation_spacing()
            }
            TriggerRuntime::Chernoff { eval } => eval.config().n_window,
        }
    }

    /// (lower, upper) bounds for the series columns, in display units.
    fn display_bounds(&self, expected: f64) -> (f64, f64) {
        match self {
            TriggerRuntime::Mean { eval, relative } => {
                let kappa = if *relative && expected > 0.0 {
                    eval.kappa() / expected
                } else {
                    eval.kappa()
                };
                (-kappa, kappa)
            }
            TriggerRuntime::SecondMoment { eval } => (-eval.kappa(), eval.kappa()),
            TriggerRuntime::Chernoff { eval } => {
                (eval.thresholds().kappa_minus, eval.thresholds().kappa_plus)
            }
        }
    }

    fn display_psi(&self, decision: &TriggerDecision, expected: f64) -> Option<f64> {
        match self {
            TriggerRuntime::Mean { relative: true, .. } if expected > 0.0 => {
                decision.signed_value.map(|v| v / expected)
            }
            _ => decision.signed_value,
        }
    }
}

/// Outstanding (not yet detected) system change.
struct PendingChange {
    outcome_index: usize,
}

struct LearningSegment {
    end_step: usize,
    signal: ExcitationSignal,
    start_step: usize,
    states: Vec<DVector<f64>>,
    inputs: Vec<DVector<f64>>,
}

struct Engine<'c> {
    cfg: &'c ScenarioConfig,
    opts: EngineOptions,
    weights: CostWeights,
    spec: RandomSystemSpec,
    truth: OpenLoopSystem,
    model: OpenLoopSystem,
    gain: DMatrix<f64>,
    model_cl: ClosedLoopSystem,
    plant_a: DMatrix<f64>,
    expected: f64,
    trigger: TriggerRuntime,
    x: DVector<f64>,
    noise_rng: ChaCha12Rng,
    perturb_rng: ChaCha12Rng,
    matched: bool,
    pending: Option<PendingChange>,
    learning: Option<LearningSegment>,
    full_evals_since_reset: usize,
    series: Vec<StepRecord>,
    events: Vec<(usize, Event)>,
    outcomes: Vec<ChangeOutcome>,
    misfires: usize,
    matched_windows: usize,
    matched_window_fires: usize,
    matched_steps: usize,
    matched_step_fires: usize,
    diverged: bool,
    terminated: Option<String>,
}

impl<'c> Engine<'c> {
    fn new(cfg: &'c ScenarioConfig, opts: EngineOptions) -> Result<Self> {
        let truth = cfg.build_system()?;
        let weights = cfg.build_weights(truth.state_dim(), truth.input_dim())?;
        let spec = cfg.random_spec();
        let model = truth.clone();
        let gain = crate::linalg::lqr_gain(
            model.a_open(),
            model.b(),
            weights.q_lqr(),
            weights.r_lqr(),
        )?;
        let model_cl = ClosedLoopSystem::with_gain(&model, gain.clone(), &weights)?;
        let plant_a = truth.a_open() - truth.b() * &gain;
        let n_window = cfg.trigger.window;
        let expected = expected_cost(&model_cl, n_window)?;

        let trigger = build_trigger(cfg, &model_cl, expected, &opts)?;

        let mut init_rng = stream(cfg.run.master_seed, StreamId::InitialState);
        let x = model_cl.sample_stationary_state(&mut init_rng);
        let noise_rng = stream(cfg.run.master_seed, StreamId::ProcessNoise);
        let system_seed = cfg.system.seed.unwrap_or(cfg.run.master_seed);
        let perturb_rng = stream(system_seed, StreamId::Perturbation);

        Ok(Self {
            cfg,
            opts,
            weights,
            spec,
            truth,
            model,
            gain,
            model_cl,
            plant_a,
            expected,
            trigger,
            x,
            noise_rng,
            perturb_rng,
            matched: true,
            pending: None,
            learning: None,
            full_evals_since_reset: 0,
            series: Vec::new(),
            events: Vec::new(),
            outcomes: Vec::new(),
            misfires: 0,
            matched_windows: 0,
            matched_window_fires: 0,
            matched_steps: 0,
            matched_step_fires: 0,
            diverged: false,
            terminated: None,
        })
    }

    fn run(mut self) -> Result<RunReport> {
        let total = self.cfg.run.total_steps;
        // state at step 0 feeds the trigger before the first transition
        let d0 = self.evaluate_trigger(0);
        self.record_step(0, &d0, "");

        for t in 0..total {
            if self.terminated.is_some() {
                break;
            }
            if t > 0 && t % self.cfg.run.change_interval == 0 {
                self.apply_change(t)?;
            }
            let next_step = t + 1;
            let diverged_now = self.advance_state(t);
            let mut event_tag = "";
            if diverged_now {
                self.handle_divergence(next_step)?;
                event_tag = "divergence";
                self.record_step(next_step, &TriggerDecision_pending(), event_tag);
                continue;
            }

            if let Some(segment) = &mut self.learning {
                segment.states.push(self.x.clone());
                if next_step == segment.end_step {
                    self.finish_learning(next_step)?;
                    self.record_step(next_step, &TriggerDecision_pending(), "model_update");
                } else {
                    self.record_step(next_step, &TriggerDecision_pending(), "learning");
                }
                continue;
            }

            let decision = self.evaluate_trigger(next_step);
            if decision.fired {
                event_tag = "detection";
                self.handle_fire(next_step, &decision)?;
            }
            self.record_step(next_step, &decision, event_tag);
        }

        let summary = RunSummary {
            total_steps: total,
            changes: self.outcomes,
            misfires: self.misfires,
            matched_windows: self.matched_windows,
            matched_window_fires: self.matched_window_fires,
            matched_steps: self.matched_steps,
            matched_step_fires: self.matched_step_fires,
            diverged: self.diverged,
            terminated: self.terminated,
        };
        // events are appended in step order by construction
        debug_assert!(self.events.windows(2).all(|w| w[0].0 <= w[1].0));
        Ok(RunReport { series: self.series, events: self.events, summary })
    }

    /// One plant transition; returns true when the new state left the
    /// finite range.
    fn advance_state(&mut self, t: usize) -> bool {
        let reference = self.learning.as_ref().map(|seg| {
            let k = t - seg.start_step;
            let value = chirp(&seg.signal, k).unwrap_or(0.0);
            DVector::from_element(self.truth.input_dim(), value)
        });
        if let (Some(seg), Some(r)) = (&mut self.learning, &reference) {
            seg.inputs.push(-(&self.gain * &self.x) + r);
        }
        let noise = self.truth.noise_root()
            * standard_normal_vector(self.truth.state_dim(), &mut self.noise_rng);
        let mut next = &self.plant_a * &self.x + noise;
        if let Some(r) = reference {
            next += self.truth.b() * r;
        }
        self.x = next;
        self.x.iter().any(|e| e.abs() > STATE_DIVERGENCE_LIMIT)
    }

    fn evaluate_trigger(&mut self, step: usize) -> TriggerDecision {
        let decision = self.trigger.step(&self.x);
        if decision.statistic.is_some() {
            self.full_evals_since_reset += 1;
            if self.matched {
                self.matched_steps += 1;
                if decision.fired {
                    self.matched_step_fires += 1;
                }
                if (self.full_evals_since_reset - 1) % self.trigger.guarantee_spacing() == 0 {
                    self.matched_windows += 1;
                    if decision.fired {
                        self.matched_window_fires += 1;
                    }
                }
            }
        }
        if decision.fired {
            // evaluators clear themselves after firing
            self.full_evals_since_reset = 0;
        }
        let _ = step;
        decision
    }

    fn record_step(&mut self, step: usize, decision: &TriggerDecision, event: &'static str) {
        if !self.opts.record_series {
            return;
        }
        let bounds = self.trigger.display_bounds(self.expected);
        self.series.push(StepRecord {
            step,
            cost: self
                .trigger
                .latest_window_cost()
                .map(|c| c / self.cfg.trigger.window as f64),
            psi: self.trigger.display_psi(decision, self.expected),
            kappa_minus: bounds.0,
            kappa_plus: bounds.1,
            expected: self.expected,
            event,
        });
    }

    fn apply_change(&mut self, step: usize) -> Result<()> {
        // an undetected previous change is now censored for good
        self.pending = None;

        let old_plant_a = self.plant_a.clone();
        let old_root = self.truth.noise_root().clone();

        let mut attempts = 0usize;
        let new_truth = loop {
            attempts += 1;
            if attempts > 1000 {
                self.terminated = Some("could not sample a stable system change".into());
                self.events.push((step, Event::Terminated {
                    reason: "could not sample a stable system change".into(),
                }));
                return Ok(());
            }
            let candidate = perturb_system(&self.truth, &self.spec, &mut self.perturb_rng)?;
            if !self.opts.resample_unstable_changes {
                break candidate;
            }
            let a_cl = candidate.a_open() - candidate.b() * &self.gain;
            if spectral_radius(&a_cl)? < 1.0 {
                break candidate;
            }
        };

        self.truth = new_truth;
        self.plant_a = self.truth.a_open() - self.truth.b() * &self.gain;
        self.matched = false;

        // δ_sys of the change under the running controller, when defined
        let delta_sys = {
            let old_stable = spectral_radius(&old_plant_a).map(|r| r < 1.0).unwrap_or(false);
            let new_stable = spectral_radius(&self.plant_a).map(|r| r < 1.0).unwrap_or(false);
            if old_stable && new_stable {
                let h_old = crate::metrics::h2_norm(&old_plant_a, &old_root)?;
                let h_new =
                    crate::metrics::h2_norm(&self.plant_a, self.truth.noise_root())?;
                if h_old > 0.0 {
                    Some(h_new / h_old)
                } else {
                    None
                }
            } else {
                None
            }
        };

        self.outcomes.push(ChangeOutcome {
            change_step: step,
            delta_sys,
            detect_step: None,
            by_divergence: false,
        });
        self.pending = Some(PendingChange { outcome_index: self.outcomes.len() - 1 });
        self.events.push((step, Event::Change { delta_sys }));
        Ok(())
    }

    fn handle_fire(&mut self, step: usize, decision: &TriggerDecision) -> Result<()> {
        self.events
            .push((step, Event::Detection { psi: decision.statistic.unwrap_or(f64::NAN) }));
        match self.pending.take() {
            Some(p) => {
                self.outcomes[p.outcome_index].detect_step = Some(step);
            }
            None => {
                if self.matched {
                    self.misfires += 1;
                }
            }
        }
        match self.cfg.run.learning {
            LearningMode::Oracle => self.apply_oracle_update(step),
            LearningMode::Ols => {
                self.events.push((step, Event::LearnStart));
                self.learning = Some(LearningSegment {
                    end_step: step + self.cfg.run.excitation_steps,
                    signal: ExcitationSignal {
                        kind: ExcitationKind::Chirp,
                        amplitude: self.cfg.run.excitation_amplitude,
                        f_start: 0.01,
                        f_end: 0.2,
                        duration: self.cfg.run.excitation_steps,
                    },
                    start_step: step,
                    states: vec![self.x.clone()],
                    inputs: Vec::new(),
                });
                Ok(())
            }
        }
    }

    fn apply_oracle_update(&mut self, step: usize) -> Result<()> {
        let identified = oracle_update(&self.truth);
        let model = match identified.to_system() {
            Ok(m) => m,
            Err(Error::NotStabilizable) => {
                self.terminated = Some("true system is not stabilizable".into());
                self.events.push((step, Event::Terminated {
                    reason: "true system is not stabilizable".into(),
                }));
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        match self.install_model(model) {
            Ok(()) => {
                self.matched = true;
                self.events.push((step, Event::ModelUpdate { mode: "oracle" }));
            }
            Err(Error::NotStabilizable) | Err(Error::NotSchurStable { .. }) => {
                self.terminated = Some("controller redesign failed".into());
                self.events.push((step, Event::Terminated {
                    reason: "controller redesign failed".into(),
                }));
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }

    fn finish_learning(&mut self, step: usize) -> Result<()> {
        let segment = self.learning.take().expect("learning segment active");
        self.events.push((step, Event::LearnEnd));
        let traj = crate::system::Trajectory {
            states: segment.states,
            inputs: segment.inputs,
            seed: self.cfg.run.master_seed,
            start_index: segment.start_step as i64,
        };
        match ols_estimate(&traj).and_then(|m| m.to_system()) {
            Ok(model) => match self.install_model(model) {
                Ok(()) => {
                    self.events.push((step, Event::ModelUpdate { mode: "ols" }));
                }
                Err(e) => {
                    self.trigger.reset();
                    self.full_evals_since_reset = 0;
                    self.events
                        .push((step, Event::ModelUpdateFailed { reason: e.to_string() }));
                }
            },
            Err(e) => {
                self.trigger.reset();
                self.full_evals_since_reset = 0;
                self.events.push((step, Event::ModelUpdateFailed { reason: e.to_string() }));
            }
        }
        Ok(())
    }

    /// Recomputes controller, statistics and thresholds from a new model.
    fn install_model(&mut self, model: OpenLoopSystem) -> Result<()> {
        let gain = crate::linalg::lqr_gain(
            model.a_open(),
            model.b(),
            self.weights.q_lqr(),
            self.weights.r_lqr(),
        )?;
        let model_cl = ClosedLoopSystem::with_gain(&model, gain.clone(), &self.weights)?;
        let n_window = self.cfg.trigger.window;
        let expected = expected_cost(&model_cl, n_window)?;

        match &mut self.trigger {
            TriggerRuntime::Mean { eval, .. } => {
                // κ stays fixed at its initial value; only E[J_N] moves
                eval.update_model(model_cl.q().clone(), expected);
            }
            TriggerRuntime::SecondMoment { eval } => {
                let expected_sq = second_moment(&model_cl, n_window)?;
                eval.update_model(model_cl.q().clone(), expected_sq);
            }
            TriggerRuntime::Chernoff { eval } => {
                let spectrum = mgf_spectrum(&model_cl, n_window)?;
                let thresholds = chernoff_thresholds(&spectrum, self.cfg.trigger.eta)?;
                eval.update_model(model_cl.q().clone(), thresholds);
            }
        }
        self.full_evals_since_reset = 0;
        self.model = model;
        self.gain = gain;
        self.plant_a = self.truth.a_open() - self.truth.b() * &self.gain;
        self.model_cl = model_cl;
        self.expected = expected;
        Ok(())
    }

    fn handle_divergence(&mut self, step: usize) -> Result<()> {
        self.diverged = true;
        self.events.push((step, Event::Divergence));
        if let Some(p) = self.pending.take() {
            self.outcomes[p.outcome_index].detect_step = Some(step);
            self.outcomes[p.outcome_index].by_divergence = true;
        }
        // a diverged plant leaves no identifiable regime; fall back to the
        // oracle update regardless of the configured learning mode
        self.learning = None;
        self.trigger.reset();
        self.full_evals_since_reset = 0;
        self.apply_oracle_update(step)
    }
}

#[allow(non_snake_case)]
fn TriggerDecision_pending() -> TriggerDecision {
    TriggerDecision {
        statistic: None,
        signed_value: None,
        fired: false,
        violation_side: crate::triggers::ViolationSide::None,
    }
}

/// Resolves the `[trigger]` section against the designed closed loop.
///
/// The default state-bound matrix is the whitening root (X^V)^{1/2} of the
/// stationary covariance, so that W⁻¹x is a standard normal vector and the
/// bound ‖W⁻¹x‖ < α describes a plausible operating region at small α.
pub fn resolve_hoeffding_config(
    cfg: &ScenarioConfig,
    model_cl: &ClosedLoopSystem,
) -> Result<HoeffdingConfig> {
    let w = match &cfg.trigger.w {
        Some(rows) => crate::config::rows_to_matrix(rows, "trigger.w")?,
        None => model_cl.stationary_covariance().sqrt(),
    };
    let gap = match cfg.trigger.gap {
        Some(g) => g,
        None => {
            let xv = model_cl.stationary_covariance().as_matrix();
            let max_entry = xv.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            model_cl.decorrelation_lag(0.01 * max_entry.max(f64::MIN_POSITIVE))
        }
    };
    Ok(HoeffdingConfig {
        n_window: cfg.trigger.window,
        gap,
        samples: cfg.trigger.samples,
        eta: cfg.trigger.eta,
        w,
        alpha: cfg.trigger.alpha,
    })
}

fn build_trigger(
    cfg: &ScenarioConfig,
    model_cl: &ClosedLoopSystem,
    expected: f64,
    opts: &EngineOptions,
) -> Result<TriggerRuntime> {
    let n_window = cfg.trigger.window;
    match cfg.trigger.kind {
        TriggerKind::Hoeffding | TriggerKind::Relative => {
            let hcfg = resolve_hoeffding_config(cfg, model_cl)?;
            let kappa = hoeffding_threshold(&hcfg, model_cl.q())?;
            let eval = HoeffdingEvaluator::mean(hcfg, model_cl.q().clone(), expected, kappa)?;
            Ok(TriggerRuntime::Mean {
                eval,
                relative: cfg.trigger.kind == TriggerKind::Relative,
            })
        }
        TriggerKind::SecondMoment => {
            let hcfg = resolve_hoeffding_config(cfg, model_cl)?;
            let kappa = second_moment_threshold(&hcfg, model_cl.q())?;
            let expected_sq = second_moment(model_cl, n_window)?;
            let eval = HoeffdingEvaluator::second_moment(
                hcfg,
                model_cl.q().clone(),
                expected_sq,
                kappa,
            )?;
            Ok(TriggerRuntime::SecondMoment { eval })
        }
        TriggerKind::Chernoff => {
            let spectrum = mgf_spectrum(model_cl, n_window)?;
            let thresholds = chernoff_thresholds(&spectrum, cfg.trigger.eta)?;
            let ccfg = ChernoffConfig {
                n_window,
                eta: cfg.trigger.eta,
                dwell: opts.dwell_override.unwrap_or(cfg.trigger.dwell),
            };
            let eval = ChernoffEvaluator::new(ccfg, thresholds, model_cl.q().clone())?;
            Ok(TriggerRuntime::Chernoff { eval })
        }
    }
}

/// Options of the Monte Carlo detection-delay study.
#[derive(Debug, Clone)]
pub struct MonteCarloOptions {
    pub rollouts: usize,
    pub total_changes: usize,
}

/// Merged output of the Monte Carlo study.
pub struct MonteCarloResult {
    /// (rollout index, record) for every stable change, in rollout order.
    pub records: Vec<(usize, DetectionRecord)>,
    pub joint: DensityEstimate,
    pub marginal: Density1d,
    pub conditional: DensityEstimate,
    pub conditional_normalized: DensityEstimate,
    pub misfire: MisfireReport,
    pub missed: usize,
    /// Modal detection delay among changes with |log₁₀ δ_sys| > 0.05.
    pub mode_delay_large_changes: Option<f64>,
    /// (bin label, sample count, median delay) for decreasing |log₁₀ δ_sys|.
    pub bin_medians: Vec<(String, usize, f64)>,
}

impl MonteCarloResult {
    pub fn summary_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let detected = self.records.iter().filter(|(_, r)| r.delay.is_some()).count();
        let _ = writeln!(out, "changes recorded      : {}", self.records.len());
        let _ = writeln!(out, "detected              : {detected}");
        let _ = writeln!(out, "missed (censored)     : {}", self.missed);
        if let Some(mode) = self.mode_delay_large_changes {
            let _ = writeln!(out, "modal delay (|log10 d|>0.05): {mode:.1}");
        }
        for (label, count, median) in &self.bin_medians {
            let _ = writeln!(out, "median delay {label}: {median:.1} over {count} samples");
        }
        let _ = writeln!(
            out,
            "matched window misfire rate: {:.6} [{:.6}, {:.6}] over {} windows",
            self.misfire.per_window.rate,
            self.misfire.per_window.wilson_low,
            self.misfire.per_window.wilson_high,
            self.misfire.per_window.trials
        );
        let _ = writeln!(
            out,
            "matched step misfire rate  : {:.6} [{:.6}, {:.6}] over {} steps",
            self.misfire.per_step.rate,
            self.misfire.per_step.wilson_low,
            self.misfire.per_step.wilson_high,
            self.misfire.per_step.trials
        );
        out
    }
}

/// Runs independent rollouts in parallel and merges their detection records
/// deterministically (by rollout index). Each rollout draws its own random
/// system and noise universe from a sub-master seed, so the result is
/// independent of the number of worker threads.
pub fn run_montecarlo(
    cfg: &ScenarioConfig,
    opts: &MonteCarloOptions,
) -> Result<MonteCarloResult> {
    cfg.validate()?;
    if opts.rollouts == 0 || opts.total_changes == 0 {
        return Err(Error::Config("rollouts and total_changes must be positive".into()));
    }
    let changes_per_rollout = opts.total_changes.div_ceil(opts.rollouts);
    let master = cfg.run.master_seed;

    let rollout_reports: Vec<Result<RunReport>> = (0..opts.rollouts)
        .into_par_iter()
        .map(|r| {
            let mut sub = cfg.clone();
            let seed = rollout_seed(master, r as u64);
            sub.run.master_seed = seed;
            sub.system.seed = Some(seed);
            sub.run.total_steps = (changes_per_rollout + 1) * sub.run.change_interval;
            let engine_opts = EngineOptions {
                record_series: false,
                resample_unstable_changes: true,
                dwell_override: Some(1),
            };
            run_scenario_with_options(&sub, &engine_opts)
        })
        .collect();

    let mut records: Vec<(usize, DetectionRecord)> = Vec::new();
    let mut missed = 0usize;
    let mut window_fires = 0usize;
    let mut windows = 0usize;
    let mut step_fires = 0usize;
    let mut steps = 0usize;
    for (rollout, report) in rollout_reports.into_iter().enumerate() {
        let report = report?;
        windows += report.summary.matched_windows;
        window_fires += report.summary.matched_window_fires;
        steps += report.summary.matched_steps;
        step_fires += report.summary.matched_step_fires;
        for outcome in &report.summary.changes {
            let delta = match outcome.delta_sys {
                Some(d) => d,
                // with unstable changes resampled away this does not occur
                None => continue,
            };
            let record = match outcome.detect_step {
                Some(detect) => {
                    let mut rec = DetectionRecord::detected(outcome.change_step, delta, detect)?;
                    rec.diverged = outcome.by_divergence;
                    rec
                }
                None => {
                    missed += 1;
                    DetectionRecord::censored(outcome.change_step, delta)
                }
            };
            records.push((rollout, record));
        }
    }

    // density estimation over detected, non-diverged changes
    let samples: Vec<(f64, f64)> = records
        .iter()
        .filter(|(_, r)| !r.diverged)
        .filter_map(|(_, r)| r.delay.map(|d| (d as f64, r.delta_sys.log10())))
        .collect();
    if samples.len() < 2 {
        return Err(Error::TooFewSamples { have: samples.len(), need: 2 });
    }
    let joint = gaussian_kde_2d(&samples, None)?;
    let logds: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let marginal = marginal_on_grid(&joint.grid_logdelta, &logds, joint.bandwidths.1);
    let conditional = conditional_density(&joint, &marginal)?;
    let conditional_normalized = conditional.column_max_normalized();
    let misfire = crate::metrics::misfire_rate(window_fires, windows, step_fires, steps)?;

    // delay histogram mode among clearly changed systems
    let large: Vec<f64> = samples
        .iter()
        .filter(|(_, l)| l.abs() > 0.05)
        .map(|(d, _)| *d)
        .collect();
    let mode_delay_large_changes = histogram_mode(&large, cfg.trigger.window as f64 / 4.0);

    // medians over |log10 delta| bins approaching zero change
    let mut bin_medians = Vec::new();
    for (label, lo, hi) in [
        ("|log10 d| in [0.05, inf)", 0.05, f64::INFINITY),
        ("|log10 d| in [0.02, 0.05)", 0.02, 0.05),
        ("|log10 d| in [0, 0.02)", 0.0, 0.02),
    ] {
        let mut delays: Vec<f64> = samples
            .iter()
            .filter(|(_, l)| l.abs() >= lo && l.abs() < hi)
            .map(|(d, _)| *d)
            .collect();
        if delays.is_empty() {
            continue;
        }
        delays.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = delays[delays.len() / 2];
        bin_medians.push((label.to_string(), delays.len(), median));
    }

    Ok(MonteCarloResult {
        records,
        joint,
        marginal,
        conditional,
        conditional_normalized,
        misfire,
        missed,
        mode_delay_large_changes,
        bin_medians,
    })
}

fn histogram_mode(samples: &[f64], bin_width: f64) -> Option<f64> {
    if samples.is_empty() || bin_width <= 0.0 {
        return None;
    }
    let mut counts = std::collections::BTreeMap::new();
    for &s in samples {
        let bin = (s / bin_width).floor() as i64;
        *counts.entry(bin).or_insert(0usize) += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1))
        .map(|(bin, _)| (bin as f64 + 0.5) * bin_width)
}

/// Moment self-check table: the Lyapunov-equation route against the MGF
/// spectrum route.
#[derive(Debug, Clone)]
pub struct MomentsReport {
    pub n_window: usize,
    pub mean_lyapunov: f64,
    pub mean_spectrum: f64,
    pub second_lyapunov: f64,
    pub second_spectrum: f64,
    pub variance: f64,
    pub lambda_max: f64,
    pub lambda_count: usize,
}

impl MomentsReport {
    pub fn mean_agrees(&self) -> bool {
        rel_diff(self.mean_lyapunov, self.mean_spectrum) <= 1e-8
    }

    pub fn second_agrees(&self) -> bool {
        rel_diff(self.second_lyapunov, self.second_spectrum) <= 1e-6
    }

    pub fn passes(&self) -> bool {
        self.mean_agrees() && self.second_agrees()
    }

    pub fn table(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "window length N          : {}", self.n_window);
        let _ = writeln!(out, "E[J_N]  (Lyapunov route) : {:.12e}", self.mean_lyapunov);
        let _ = writeln!(out, "E[J_N]  (spectrum route) : {:.12e}", self.mean_spectrum);
        let _ = writeln!(out, "E[J_N²] (Lyapunov route) : {:.12e}", self.second_lyapunov);
        let _ = writeln!(out, "E[J_N²] (spectrum route) : {:.12e}", self.second_spectrum);
        let _ = writeln!(out, "Var[J_N]                 : {:.12e}", self.variance);
        let _ = writeln!(out, "lambda_max               : {:.12e}", self.lambda_max);
        let _ = writeln!(out, "spectrum size N*n        : {}", self.lambda_count);
        let _ = writeln!(
            out,
            "cross-formula agreement  : mean {} (<=1e-8), second moment {} (<=1e-6)",
            if self.mean_agrees() { "ok" } else { "FAIL" },
            if self.second_agrees() { "ok" } else { "FAIL" },
        );
        out
    }
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn moments_report(cl: &ClosedLoopSystem, n_window: usize) -> Result<MomentsReport> {
    let mean_lyapunov = expected_cost(cl, n_window)?;
    let second_lyapunov = second_moment(cl, n_window)?;
    let spectrum = mgf_spectrum(cl, n_window)?;
    let m = moments_from_mgf(&spectrum);
    Ok(MomentsReport {
        n_window,
        mean_lyapunov,
        mean_spectrum: m.mean,
        second_lyapunov,
        second_spectrum: m.second_moment,
        variance: m.variance,
        lambda_max: spectrum.lambda_max(),
        lambda_count: spectrum.lambdas().len(),
    })
}

/// Threshold table for the configured trigger.
pub enum ThresholdsReport {
    Mean { kappa: f64, expected: f64, gap: usize },
    Relative { kappa: f64, expected: f64, gap: usize },
    SecondMoment { kappa: f64, expected_sq: f64, gap: usize },
    Chernoff { thresholds: ChernoffThresholds, expected: f64 },
}

impl ThresholdsReport {
    pub fn table(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        match self {
            ThresholdsReport::Mean { kappa, expected, gap } => {
                let _ = writeln!(out, "trigger                : mean (Hoeffding)");
                let _ = writeln!(out, "kappa                  : {kappa:.12e}");
                let _ = writeln!(out, "E[J_N]                 : {expected:.12e}");
                let _ = writeln!(out, "decorrelation gap r    : {gap}");
            }
            ThresholdsReport::Relative { kappa, expected, gap } => {
                let _ = writeln!(out, "trigger                : relative error");
                let _ = writeln!(out, "kappa_rel              : {kappa:.12e}");
                let _ = writeln!(out, "E[J_N]                 : {expected:.12e}");
                let _ = writeln!(out, "decorrelation gap r    : {gap}");
            }
            ThresholdsReport::SecondMoment { kappa, expected_sq, gap } => {
                let _ = writeln!(out, "trigger                : second moment");
                let _ = writeln!(out, "kappa                  : {kappa:.12e}");
                let _ = writeln!(out, "E[J_N^2]               : {expected_sq:.12e}");
                let _ = writeln!(out, "decorrelation gap r    : {gap}");
            }
            ThresholdsReport::Chernoff { thresholds, expected } => {
                let _ = writeln!(out, "trigger                : Chernoff");
                let _ = writeln!(out, "kappa_minus            : {:.12e}", thresholds.kappa_minus);
                let _ = writeln!(out, "kappa_plus             : {:.12e}", thresholds.kappa_plus);
                let _ = writeln!(out, "xi_minus               : {:.12e}", thresholds.xi_minus);
                let _ = writeln!(out, "xi_plus                : {:.12e}", thresholds.xi_plus);
                let _ = writeln!(out, "E[J_N]                 : {expected:.12e}");
            }
        }
        out
    }
}

pub fn thresholds_report(cfg: &ScenarioConfig) -> Result<ThresholdsReport> {
    let truth = cfg.build_system()?;
    let weights = cfg.build_weights(truth.state_dim(), truth.input_dim())?;
    let model_cl = ClosedLoopSystem::design(&truth, &weights)?;
    let n_window = cfg.trigger.window;
    let expected = expected_cost(&model_cl, n_window)?;
    match cfg.trigger.kind {
        TriggerKind::Hoeffding => {
            let hcfg = resolve_hoeffding_config(cfg, &model_cl)?;
            let kappa = hoeffding_threshold(&hcfg, model_cl.q())?;
            Ok(ThresholdsReport::Mean { kappa, expected, gap: hcfg.gap })
        }
        TriggerKind::Relative => {
            let hcfg = resolve_hoeffding_config(cfg, &model_cl)?;
            let kappa = crate::triggers::relative_threshold(&hcfg, model_cl.q(), expected)?;
            Ok(ThresholdsReport::Relative { kappa, expected, gap: hcfg.gap })
        }
        TriggerKind::SecondMoment => {
            let hcfg = resolve_hoeffding_config(cfg, &model_cl)?;
            let kappa = second_moment_threshold(&hcfg, model_cl.q())?;
            let expected_sq = second_moment(&model_cl, n_window)?;
            Ok(ThresholdsReport::SecondMoment { kappa, expected_sq, gap: hcfg.gap })
        }
        TriggerKind::Chernoff => {
            let spectrum = mgf_spectrum(&model_cl, n_window)?;
            let thresholds = chernoff_thresholds(&spectrum, cfg.trigger.eta)?;
            Ok(ThresholdsReport::Chernoff { thresholds, expected })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hoeffding_cfg_toml(total: usize, interval: usize, seed: u64) -> String {
        format!(
            r#"
[system]
source = "random"
state_dim = 3

[trigger]
kind = "hoeffding"
window = 10
gap = 10
samples = 4
eta = 0.25
alpha = 18.0

[run]
total_steps = {total}
change_interval = {interval}
master_seed = {seed}
"#
        )
    }

    #[test]
    fn matched_zero_noise_run_never_fires() {
        let toml_text = r#"
[system]
source = "explicit"
a_open = [[0.6, 0.1], [0.0, 0.5]]
b = [[1.0], [0.4]]
v = [[0.0, 0.0], [0.0, 0.0]]

[trigger]
kind = "hoeffding"
window = 5
gap = 5
samples = 3
eta = 0.25
alpha = 2.0
w = [[1.0, 0.0], [0.0, 1.0]]

[run]
total_steps = 2000
change_interval = 3000
master_seed = 3
"#;
        // no change is scheduled: the interval exceeds the horizon minus one
        let toml_text = toml_text.replace("change_interval = 3000", "change_interval = 2000");
        let cfg = ScenarioConfig::from_toml_str(&toml_text).unwrap();
        let report = run_etl_scenario(&cfg).unwrap();
        assert!(report.events.iter().all(|(_, e)| e.kind() != "detection"));
        assert_eq!(report.summary.misfires, 0);
        assert_eq!(report.summary.changes.len(), 0);
    }

    #[test]
    fn reports_are_bit_reproducible() {
        let cfg = ScenarioConfig::from_toml_str(&hoeffding_cfg_toml(6000, 2000, 11)).unwrap();
        let r1 = run_etl_scenario(&cfg).unwrap();
        let r2 = run_etl_scenario(&cfg).unwrap();
        assert_eq!(r1.series_csv(), r2.series_csv());
        assert_eq!(r1.events_csv(), r2.events_csv());
        assert_eq!(r1.summary_text(), r2.summary_text());
    }

    #[test]
    fn updates_follow_detections() {
        let cfg = ScenarioConfig::from_toml_str(&hoeffding_cfg_toml(9000, 3000, 5)).unwrap();
        let report = run_etl_scenario(&cfg).unwrap();
        assert_eq!(report.summary.changes.len(), 2);
        // the ETL contract: every model update is preceded by a detection or
        // divergence at the same step
        for (step, event) in &report.events {
            if event.kind() == "model_update" {
                assert!(report.events.iter().any(|(s, e)| {
                    s == step && matches!(e, Event::Detection { .. } | Event::Divergence)
                }));
            }
        }
        // chronological event log
        assert!(report.events.windows(2).all(|w| w[0].0 <= w[1].0));
    }

    #[test]
    fn chernoff_scenario_detects_changes() {
        let toml_text = r#"
[system]
source = "random"
state_dim = 3

[trigger]
kind = "chernoff"
window = 40
eta = 0.01

[run]
total_steps = 6000
change_interval = 2000
master_seed = 17
"#;
        let cfg = ScenarioConfig::from_toml_str(toml_text).unwrap();
        let report = run_etl_scenario(&cfg).unwrap();
        assert_eq!(report.summary.changes.len(), 2);
        // bounds in the series are the Chernoff interval
        let row = report.series.iter().find(|r| r.psi.is_some()).unwrap();
        assert!(row.kappa_minus >= 0.0 && row.kappa_plus > row.kappa_minus);
    }

    #[test]
    fn ols_learning_segments_are_logged_and_quiet() {
        let toml_text = r#"
[system]
source = "random"
state_dim = 3
beta_range = [0.4, 0.5]

[trigger]
kind = "chernoff"
window = 30
eta = 0.01

[run]
total_steps = 9000
change_interval = 3000
learning = "ols"
excitation_steps = 600
master_seed = 23
"#;
        let cfg = ScenarioConfig::from_toml_str(toml_text).unwrap();
        let report = run_etl_scenario(&cfg).unwrap();
        let starts: Vec<usize> = report
            .events
            .iter()
            .filter(|(_, e)| e.kind() == "learn_start")
            .map(|(s, _)| *s)
            .collect();
        let ends: Vec<usize> = report
            .events
            .iter()
            .filter(|(_, e)| e.kind() == "learn_end")
            .map(|(s, _)| *s)
            .collect();
        // detections exist and each completed segment spans excitation_steps
        assert!(!starts.is_empty());
        for (s, e) in starts.iter().zip(&ends) {
            assert_eq!(e - s, 600);
            // no detections inside the learning segment
            assert!(report
                .events
                .iter()
                .filter(|(step, ev)| ev.kind() == "detection" && step > s && step < e)
                .count()
                == 0);
        }
    }

    #[test]
    fn montecarlo_is_worker_count_invariant() {
        let toml_text = r#"
[system]
source = "random"
state_dim = 2

[trigger]
kind = "chernoff"
window = 20
eta = 0.05

[run]
total_steps = 2000
change_interval = 500
master_seed = 31
"#;
        let cfg = ScenarioConfig::from_toml_str(toml_text).unwrap();
        let opts = MonteCarloOptions { rollouts: 4, total_changes: 12 };
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool2 = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
        let r1 = pool1.install(|| run_montecarlo(&cfg, &opts)).unwrap();
        let r2 = pool2.install(|| run_montecarlo(&cfg, &opts)).unwrap();
        assert_eq!(crate::report::records_csv(&r1.records), crate::report::records_csv(&r2.records));
        assert_eq!(r1.summary_text(), r2.summary_text());
        // every record carries a positive delta and the joint density
        // integrates to one
        assert!(r1.records.iter().all(|(_, r)| r.delta_sys > 0.0));
        assert!((r1.joint.integral() - 1.0).abs() < 0.01);
    }

    #[test]
    fn moments_report_self_check() {
        let cfg = ScenarioConfig::from_toml_str(&hoeffding_cfg_toml(4000, 2000, 13)).unwrap();
        let truth = cfg.build_system().unwrap();
        let weights = cfg.build_weights(3, 1).unwrap();
        let cl = ClosedLoopSystem::design(&truth, &weights).unwrap();
        let report = moments_report(&cl, 25).unwrap();
        assert!(report.passes(), "{}", report.table());
        assert!(report.table().contains("ok"));
    }

    #[test]
    fn thresholds_report_variants() {
        let base = hoeffding_cfg_toml(4000, 2000, 19);
        let cfg = ScenarioConfig::from_toml_str(&base).unwrap();
        match thresholds_report(&cfg).unwrap() {
            ThresholdsReport::Mean { kappa, expected, .. } => {
                assert!(kappa > 0.0 && expected > 0.0);
            }
            _ => panic!("expected mean report"),
        }
        let chernoff = base.replace("kind = \"hoeffding\"", "kind = \"chernoff\"");
        let cfg = ScenarioConfig::from_toml_str(&chernoff).unwrap();
        match thresholds_report(&cfg).unwrap() {
            ThresholdsReport::Chernoff { thresholds, .. } => {
                assert!(thresholds.kappa_plus > thresholds.kappa_minus);
            }
            _ => panic!("expected chernoff report"),
        }
        let relative = base.replace("kind = \"hoeffding\"", "kind = \"relative\"");
        let cfg = ScenarioConfig::from_toml_str(&relative).unwrap();
        assert!(matches!(thresholds_report(&cfg).unwrap(), ThresholdsReport::Relative { .. }));
        let second = base.replace("kind = \"hoeffding\"", "kind = \"second_moment\"");
        let cfg = ScenarioConfig::from_toml_str(&second).unwrap();
        assert!(matches!(
            thresholds_report(&cfg).unwrap(),
            ThresholdsReport::SecondMoment { .. }
        ));
    }
}

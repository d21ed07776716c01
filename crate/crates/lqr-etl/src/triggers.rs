//! Learning triggers: statistical tests that fire when observed cost
//! windows cannot be explained by process noise under the current model.
//!
//! Two families are provided.
//!
//! **Mean-based (Hoeffding) trigger.** Sums 𝔏 approximately independent cost
//! windows, spaced N + r steps apart so the decorrelation gap r makes them
//! nearly independent, and fires when
//! |Σ_j Ĵ_N(j) − 𝔏 E[J_N]| ≥ κ with
//! κ = α² N λ_max(Wᵀ Q W) √(−(𝔏/2) ln(η/2)).
//! Under the state bound ‖W⁻¹x‖ < α the false-trigger probability at one
//! evaluation instant is at most η. Relative-error and second-moment
//! variants share the same structure.
//!
//! **Distribution-based (Chernoff) trigger.** Uses a single window and the
//! full cost distribution: with λ_j the eigenvalues of ΩΣ and
//! χ(ξ) = −(1/ξ) ln(η/2) − (1/2ξ) Σ_j ln(1 − 2ξλ_j),
//! the thresholds κ⁺ = inf_{0<ξ<1/(2λ_max)} χ(ξ) and κ⁻ = sup_{ξ<0} χ(ξ)
//! guarantee P[J_N ∉ (κ⁻, κ⁺)] ≤ η. χ is strictly convex on the κ⁺ range,
//! so a golden-section search finds the global minimum; any sub-optimal ξ
//! still yields a valid, merely conservative, bound.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::cost::{cost_bound, log_mgf, MgfSpectrum};
use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;

/// Configuration of the mean-based trigger family.
#[derive(Debug, Clone, PartialEq)]
pub struct HoeffdingConfig {
    /// Cost window length N.
    pub n_window: usize,
    /// Decorrelation gap r between windows.
    pub gap: usize,
    /// Number of windows 𝔏 per evaluation.
    pub samples: usize,
    /// Confidence level η ∈ (0, 1).
    pub eta: f64,
    /// State-bound shaping matrix W (invertible).
    pub w: DMatrix<f64>,
    /// State-bound radius α.
    pub alpha: f64,
}

impl HoeffdingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_window == 0 || self.samples == 0 {
            return Err(Error::Config("window length and sample count must be >= 1".into()));
        }
        if !(0.0 < self.eta && self.eta < 1.0) {
            return Err(Error::Config("confidence level eta must lie in (0, 1)".into()));
        }
        if self.alpha <= 0.0 {
            return Err(Error::Config("state bound radius alpha must be positive".into()));
        }
        Ok(())
    }

    /// States of history one evaluation needs: 𝔏(N + r) − r.
    pub fn history_needed(&self) -> usize {
        self.samples * (self.n_window + self.gap) - self.gap
    }

    /// Spacing of evaluation instants with the per-instant η guarantee.
    pub fn evaluation_spacing(&self) -> usize {
        self.samples * (self.n_window + self.gap)
    }
}

/// Configuration of the Chernoff trigger.
#[derive(Debug, Clone, PartialEq)]
pub struct ChernoffConfig {
    /// Cost window length N.
    pub n_window: usize,
    /// Confidence level η ∈ (0, 1).
    pub eta: f64,
    /// Consecutive violating evaluations required before firing.
    pub dwell: usize,
}

impl ChernoffConfig {
    pub fn new(n_window: usize, eta: f64) -> Self {
        Self { n_window, eta, dwell: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_window == 0 || self.dwell == 0 {
            return Err(Error::Config("window length and dwell must be >= 1".into()));
        }
        if !(0.0 < self.eta && self.eta < 1.0) {
            return Err(Error::Config("confidence level eta must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Optimized Chernoff interval with the optimizer arguments that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChernoffThresholds {
    pub kappa_minus: f64,
    pub kappa_plus: f64,
    pub xi_minus: f64,
    pub xi_plus: f64,
}

/// Which side of the confidence region a violation occurred on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationSide {
    Low,
    High,
    None,
}

/// Outcome of one trigger evaluation. `statistic` is `None` while the
/// evaluator has not yet accumulated a full history. `signed_value` is the
/// plottable quantity: the signed deviation Σ Ĵ − 𝔏 E for mean triggers and
/// the raw cost sample for the Chernoff trigger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerDecision {
    pub statistic: Option<f64>,
    pub signed_value: Option<f64>,
    pub fired: bool,
    pub violation_side: ViolationSide,
}

impl TriggerDecision {
    fn pending() -> Self {
        Self {
            statistic: None,
            signed_value: None,
            fired: false,
            violation_side: ViolationSide::None,
        }
    }
}

/// Evaluation indices {k − (N+r) i | i = 0, …, 𝔏−1}, most recent first.
pub fn summation_set(k: i64, cfg: &HoeffdingConfig, start_index: i64) -> Result<Vec<i64>> {
    cfg.validate()?;
    let span = (cfg.n_window + cfg.gap) as i64;
    let oldest_window_start = k - span * (cfg.samples as i64 - 1) - cfg.n_window as i64 + 1;
    if oldest_window_start < start_index {
        let have = (k - start_index + 1).max(0) as usize;
        return Err(Error::InsufficientHistory { have, need: cfg.history_needed() });
    }
    Ok((0..cfg.samples as i64).map(|i| k - span * i).collect())
}

fn confidence_radical(samples: usize, eta: f64) -> f64 {
    (-(samples as f64) / 2.0 * (eta / 2.0).ln()).sqrt()
}

/// Mean-trigger threshold κ = α² N λ_max(Wᵀ Q W) √(−(𝔏/2) ln(η/2)).
pub fn hoeffding_threshold(cfg: &HoeffdingConfig, q: &SpdMatrix) -> Result<f64> {
    cfg.validate()?;
    let bound = cost_bound(&cfg.w, cfg.alpha, q, cfg.n_window)?;
    Ok(bound * confidence_radical(cfg.samples, cfg.eta))
}

/// Mean-trigger statistic ψ = |Σ costs − 𝔏 E[J_N]|.
pub fn hoeffding_statistic(costs: &[f64], expected: f64, samples: usize) -> Result<f64> {
    if costs.len() != samples {
        return Err(Error::LengthMismatch { expected: samples, got: costs.len() });
    }
    Ok((costs.iter().sum::<f64>() - samples as f64 * expected).abs())
}

/// Relative-error threshold κ_rel = κ / E[J_N]; the relative trigger is an
/// equivalence transform of the mean trigger.
pub fn relative_threshold(cfg: &HoeffdingConfig, q: &SpdMatrix, expected: f64) -> Result<f64> {
    if expected <= 0.0 {
        return Err(Error::ZeroExpectedCost);
    }
    Ok(hoeffding_threshold(cfg, q)? / expected)
}

/// Relative-error statistic |Σ costs/E − 𝔏| = ψ / E[J_N].
pub fn relative_statistic(costs: &[f64], expected: f64, samples: usize) -> Result<f64> {
    if expected <= 0.0 {
        return Err(Error::ZeroExpectedCost);
    }
    Ok(hoeffding_statistic(costs, expected, samples)? / expected)
}

/// Second-moment threshold κ = α⁴ N² λ²_max(Wᵀ Q W) √(−(𝔏/2) ln(η/2)).
pub fn second_moment_threshold(cfg: &HoeffdingConfig, q: &SpdMatrix) -> Result<f64> {
    cfg.validate()?;
    let bound = cost_bound(&cfg.w, cfg.alpha, q, cfg.n_window)?;
    Ok(bound * bound * confidence_radical(cfg.samples, cfg.eta))
}

/// Second-moment statistic |Σ costs² − 𝔏 E[J_N²]|.
pub fn second_moment_statistic(costs: &[f64], expected_sq: f64, samples: usize) -> Result<f64> {
    if costs.len() != samples {
        return Err(Error::LengthMismatch { expected: samples, got: costs.len() });
    }
    Ok((costs.iter().map(|c| c * c).sum::<f64>() - samples as f64 * expected_sq).abs())
}

/// Chernoff objective χ(ξ) = −(1/ξ) ln(η/2) − (1/2ξ) Σ_j ln(1 − 2ξλ_j).
pub fn chi(xi: f64, spectrum: &MgfSpectrum, eta: f64) -> Result<f64> {
    if xi == 0.0 {
        return Err(Error::OutOfDomain { xi, sup: spectrum.domain_sup() });
    }
    Ok((-(eta / 2.0).ln() + log_mgf(spectrum, xi)?) / xi)
}

/// Golden-section minimization of a unimodal function on [a, b].
fn golden_min(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, rel_tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..400 {
        if (b - a).abs() <= rel_tol * (a.abs().max(b.abs()).max(1e-300)) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Chernoff interval (κ⁻, κ⁺) at confidence level η, each tail receiving
/// η/2. κ⁺ is the global minimum of the strictly convex χ on
/// (0, 1/(2λ_max)); κ⁻ comes from a log-reparametrized search over ξ < 0
/// (any sub-optimal value keeps the bound valid, only more conservative) and
/// is clamped below at zero because costs are nonnegative.
pub fn chernoff_thresholds(spectrum: &MgfSpectrum, eta: f64) -> Result<ChernoffThresholds> {
    if !(0.0 < eta && eta < 1.0) {
        return Err(Error::Config("confidence level eta must lie in (0, 1)".into()));
    }
    let lam_max = spectrum.lambda_max();
    if lam_max <= 0.0 {
        return Err(Error::DegenerateSpectrum);
    }
    let sup = spectrum.domain_sup();
    let delta = 1e-9 / lam_max;
    let objective_plus = |xi: f64| chi(xi, spectrum, eta).unwrap_or(f64::INFINITY);
    let (xi_plus, kappa_plus) = golden_min(&objective_plus, delta, sup - delta, 1e-10);

    // kappa_minus: xi = -exp(t)/(2 lam_max); widen the range while the
    // optimum sits on a boundary
    let mut lo = -30.0f64;
    let mut hi = 30.0f64;
    let objective_minus = |t: f64| {
        let xi = -(t.exp()) / (2.0 * lam_max);
        -chi(xi, spectrum, eta).unwrap_or(f64::NEG_INFINITY)
    };
    let (mut t_star, mut neg_kappa) = golden_min(&objective_minus, lo, hi, 1e-12);
    for _ in 0..6 {
        let width = hi - lo;
        if t_star - lo < 0.01 * width {
            lo -= 30.0;
        } else if hi - t_star < 0.01 * width {
            hi += 30.0;
        } else {
            break;
        }
        let refined = golden_min(&objective_minus, lo, hi, 1e-12);
        t_star = refined.0;
        neg_kappa = refined.1;
    }
    let xi_minus = -(t_star.exp()) / (2.0 * lam_max);
    let kappa_minus = (-neg_kappa).max(0.0);

    Ok(ChernoffThresholds { kappa_minus, kappa_plus, xi_minus, xi_plus })
}

/// Dwell-aware decision on one cost sample against fixed thresholds.
pub fn chernoff_step(
    violation_run: &mut usize,
    cost_sample: f64,
    thresholds: &ChernoffThresholds,
    cfg: &ChernoffConfig,
) -> TriggerDecision {
    let side = if cost_sample <= thresholds.kappa_minus {
        ViolationSide::Low
    } else if cost_sample >= thresholds.kappa_plus {
        ViolationSide::High
    } else {
        ViolationSide::None
    };
    if side == ViolationSide::None {
        *violation_run = 0;
        return TriggerDecision {
            statistic: Some(cost_sample),
            signed_value: Some(cost_sample),
            fired: false,
            violation_side: ViolationSide::None,
        };
    }
    *violation_run += 1;
    let fired = *violation_run >= cfg.dwell;
    if fired {
        *violation_run = 0;
    }
    TriggerDecision {
        statistic: Some(cost_sample),
        signed_value: Some(cost_sample),
        fired,
        violation_side: side,
    }
}

/// Which windowed statistic a mean-family evaluator accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MeanStatistic {
    Cost,
    SquaredCost,
}

/// Stateful runtime for the Hoeffding trigger family: keeps the last
/// 𝔏(N+r) − r per-step costs in a ring buffer and evaluates the statistic
/// at every step once the history is full. After a firing the buffer clears
/// and the trigger stays inactive until a fresh history accumulates.
#[derive(Debug, Clone)]
pub struct HoeffdingEvaluator {
    cfg: HoeffdingConfig,
    q: SpdMatrix,
    expected: f64,
    kappa: f64,
    statistic: MeanStatistic,
    ring: VecDeque<f64>,
}

impl HoeffdingEvaluator {
    /// Mean trigger: `expected` is E[J_N], `kappa` from
    /// [`hoeffding_threshold`].
    pub fn mean(cfg: HoeffdingConfig, q: SpdMatrix, expected: f64, kappa: f64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, q, expected, kappa, statistic: MeanStatistic::Cost, ring: VecDeque::new() })
    }

    /// Second-moment trigger: `expected_sq` is E[J_N²], `kappa` from
    /// [`second_moment_threshold`].
    pub fn second_moment(
        cfg: HoeffdingConfig,
        q: SpdMatrix,
        expected_sq: f64,
        kappa: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            q,
            expected: expected_sq,
            kappa,
            statistic: MeanStatistic::SquaredCost,
            ring: VecDeque::new(),
        })
    }

    pub fn config(&self) -> &HoeffdingConfig {
        &self.cfg
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn expected(&self) -> f64 {
        self.expected
    }

    /// Swap in statistics from an updated model; history is cleared.
    pub fn update_model(&mut self, q: SpdMatrix, expected: f64) {
        self.q = q;
        self.expected = expected;
        self.reset();
    }

    pub fn reset(&mut self) {
        self.ring.clear();
    }

    pub fn history_full(&self) -> bool {
        self.ring.len() >= self.cfg.history_needed()
    }

    /// Advance by one state observation.
    pub fn step(&mut self, x: &DVector<f64>) -> TriggerDecision {
        let c = crate::cost::quadratic_form(&self.q, x);
        self.step_cost(c)
    }

    /// Advance by one externally computed per-step cost.
    pub fn step_cost(&mut self, per_step_cost: f64) -> TriggerDecision {
        let needed = self.cfg.history_needed();
        self.ring.push_back(per_step_cost);
        if self.ring.len() > needed {
            self.ring.pop_front();
        }
        if self.ring.len() < needed {
            return TriggerDecision::pending();
        }

        let n = self.cfg.n_window;
        let span = n + self.cfg.gap;
        let len = self.ring.len();
        let mut sum = 0.0;
        for i in 0..self.cfg.samples {
            let end = len - 1 - span * i;
            let start = end + 1 - n;
            let mut window = 0.0;
            for j in start..=end {
                window += self.ring[j];
            }
            sum += match self.statistic {
                MeanStatistic::Cost => window,
                MeanStatistic::SquaredCost => window * window,
            };
        }
        let deviation = sum - self.cfg.samples as f64 * self.expected;
        let psi = deviation.abs();
        let fired = psi >= self.kappa;
        let side = if !fired {
            ViolationSide::None
        } else if deviation < 0.0 {
            ViolationSide::Low
        } else {
            ViolationSide::High
        };
        if fired {
            self.ring.clear();
        }
        TriggerDecision {
            statistic: Some(psi),
            signed_value: Some(deviation),
            fired,
            violation_side: side,
        }
    }

    /// Most recent complete cost window, if the history covers one.
    pub fn latest_window_cost(&self) -> Option<f64> {
        if self.ring.len() < self.cfg.n_window {
            return None;
        }
        let len = self.ring.len();
        Some((len - self.cfg.n_window..len).map(|i| self.ring[i]).sum())
    }
}

/// Stateful runtime for the Chernoff trigger: keeps the last N per-step
/// costs, forms the windowed cost sample every step, and applies dwell
/// filtering. After a firing the window clears and refills before the next
/// evaluation.
#[derive(Debug, Clone)]
pub struct ChernoffEvaluator {
    cfg: ChernoffConfig,
    thresholds: ChernoffThresholds,
    q: SpdMatrix,
    ring: VecDeque<f64>,
    running_sum: f64,
    violation_run: usize,
}

impl ChernoffEvaluator {
    pub fn new(cfg: ChernoffConfig, thresholds: ChernoffThresholds, q: SpdMatrix) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, thresholds, q, ring: VecDeque::new(), running_sum: 0.0, violation_run: 0 })
    }

    pub fn config(&self) -> &ChernoffConfig {
        &self.cfg
    }

    pub fn thresholds(&self) -> &ChernoffThresholds {
        &self.thresholds
    }

    pub fn update_model(&mut self, q: SpdMatrix, thresholds: ChernoffThresholds) {
        self.q = q;
        self.thresholds = thresholds;
        self.reset();
    }

    pub fn reset(&mut self) {
        self.ring.clear();
        self.running_sum = 0.0;
        self.violation_run = 0;
    }

    pub fn history_full(&self) -> bool {
        self.ring.len() >= self.cfg.n_window
    }

    pub fn step(&mut self, x: &DVector<f64>) -> TriggerDecision {
        let c = crate::cost::quadratic_form(&self.q, x);
        self.step_cost(c)
    }

    pub fn step_cost(&mut self, per_step_cost: f64) -> TriggerDecision {
        self.ring.push_back(per_step_cost);
        self.running_sum += per_step_cost;
        if self.ring.len() > self.cfg.n_window {
            self.running_sum -= self.ring.pop_front().unwrap();
        }
        if self.ring.len() < self.cfg.n_window {
            return TriggerDecision::pending();
        }
        let sample = self.running_sum;
        let decision = chernoff_step(&mut self.violation_run, sample, &self.thresholds, &self.cfg);
        if decision.fired {
            self.reset();
        }
        decision
    }

    /// Most recent windowed cost sample, if available.
    pub fn latest_window_cost(&self) -> Option<f64> {
        if self.ring.len() < self.cfg.n_window {
            None
        } else {
            Some(self.running_sum)
        }
    }
}

//! Detection-quality metrics: the H₂-based system-change size δ_sys,
//! detection-delay bookkeeping, misfire rates with Wilson intervals, and
//! Gaussian-kernel density estimates of the delay distribution.
//!
//! δ_sys compares the noise-driven closed loop before and after a change
//! through the H₂ norm of the realization (A, √V) with identity output:
//! ‖𝒢‖²_{H₂} = trace(P) with A P Aᵀ − P + V = 0, i.e. the steady-state
//! output energy under unit white-noise input. δ_sys = 1 means no change.
//!
//! The Monte Carlo study smooths (T_D, log₁₀ δ_sys) samples with a product
//! Gaussian kernel (Silverman bandwidths), conditions on δ_sys by dividing
//! out the smoothed marginal, and renormalizes each δ_sys column to peak at
//! one for display.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{solve_dlyap_controllability, SpdMatrix};
use crate::system::ClosedLoopSystem;

/// Outcome of one scheduled system change in a Monte Carlo rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub change_step: usize,
    pub delta_sys: f64,
    pub detect_step: Option<usize>,
    pub delay: Option<usize>,
    pub diverged: bool,
}

impl DetectionRecord {
    pub fn detected(change_step: usize, delta_sys: f64, detect_step: usize) -> Result<Self> {
        if detect_step < change_step {
            return Err(Error::NegativeDelay);
        }
        Ok(Self {
            change_step,
            delta_sys,
            detect_step: Some(detect_step),
            delay: Some(detect_step - change_step),
            diverged: false,
        })
    }

    pub fn censored(change_step: usize, delta_sys: f64) -> Self {
        Self { change_step, delta_sys, detect_step: None, delay: None, diverged: false }
    }
}

/// H₂ norm of the stable system (A, G) with identity output:
/// √trace(P), A P Aᵀ − P + G Gᵀ = 0.
pub fn h2_norm(a: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<f64> {
    if g.nrows() != a.nrows() {
        return Err(Error::ShapeMismatch { context: "input matrix rows must match A" });
    }
    let ggt = g * g.transpose();
    let c = SpdMatrix::new_unchecked((&ggt + ggt.transpose()) * 0.5);
    let p = solve_dlyap_controllability(a, &c)?;
    Ok(p.trace().max(0.0).sqrt())
}

/// System-change size δ_sys: ratio of the H₂ norms of the noise-driven
/// closed loops after and before the change.
pub fn system_change_metric(old: &ClosedLoopSystem, new: &ClosedLoopSystem) -> Result<f64> {
    let h_old = h2_norm(old.a(), old.noise_root())?;
    let h_new = h2_norm(new.a(), new.noise_root())?;
    if h_old <= 0.0 {
        return Err(Error::Config("reference system has zero H2 norm".into()));
    }
    Ok(h_new / h_old)
}

/// Steps from the system change to the first threshold crossing.
pub fn detection_delay(change_step: usize, fire_step: usize) -> Result<usize> {
    if fire_step < change_step {
        return Err(Error::NegativeDelay);
    }
    Ok(fire_step - change_step)
}

/// One-dimensional kernel density estimate on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Density1d {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub bandwidth: f64,
}

/// Two-dimensional kernel density estimate on a regular grid;
/// `values[i][j]` is the density at (grid_delay[i], grid_logdelta[j]).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub grid_delay: Vec<f64>,
    pub grid_logdelta: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub bandwidths: (f64, f64),
}

impl DensityEstimate {
    /// Total probability mass on the grid by the trapezoid rule.
    pub fn integral(&self) -> f64 {
        trapezoid_2d(&self.grid_delay, &self.grid_logdelta, &self.values)
    }

    /// Display normalization: every δ_sys column rescaled to peak at one.
    pub fn column_max_normalized(&self) -> DensityEstimate {
        let mut values = self.values.clone();
        for j in 0..self.grid_logdelta.len() {
            let max = self.values.iter().map(|row| row[j]).fold(0.0f64, f64::max);
            if max > 0.0 {
                for row in values.iter_mut() {
                    row[j] /= max;
                }
            }
        }
        DensityEstimate {
            grid_delay: self.grid_delay.clone(),
            grid_logdelta: self.grid_logdelta.clone(),
            values,
            bandwidths: self.bandwidths,
        }
    }
}

/// Grid shape of the joint density (delay × log₁₀ δ_sys).
pub const KDE_GRID_DELAY: usize = 256;
pub const KDE_GRID_LOGDELTA: usize = 128;

fn silverman(samples: &[f64]) -> f64 {
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
    let sigma = var.sqrt();
    let h = 1.06 * sigma * m.powf(-0.2);
    // degenerate (all-equal) samples still need a positive bandwidth
    h.max(1e-9 * mean.abs().max(1.0))
}

fn regular_grid(lo: f64, hi: f64, len: usize) -> Vec<f64> {
    (0..len).map(|i| lo + (hi - lo) * i as f64 / (len - 1) as f64).collect()
}

/// Per-grid-point kernel sums evaluated through a (grid × samples) matrix so
/// the 2-D product kernel reduces to one matrix multiplication.
fn kernel_matrix(grid: &[f64], samples: &[f64], bandwidth: f64) -> DMatrix<f64> {
    let norm = 1.0 / (bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    DMatrix::from_fn(grid.len(), samples.len(), |i, k| {
        let z = (grid[i] - samples[k]) / bandwidth;
        norm * (-0.5 * z * z).exp()
    })
}

/// One-dimensional Gaussian KDE with Silverman's rule by default.
pub fn gaussian_kde_1d(
    samples: &[f64],
    bandwidth: Option<f64>,
    grid_len: usize,
) -> Result<Density1d> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples { have: samples.len(), need: 2 });
    }
    let h = bandwidth.unwrap_or_else(|| silverman(samples));
    if h <= 0.0 {
        return Err(Error::Config("bandwidth must be positive".into()));
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let grid = regular_grid(lo, hi, grid_len);
    let k = kernel_matrix(&grid, samples, h);
    let m = samples.len() as f64;
    let values: Vec<f64> = (0..grid.len()).map(|i| k.row(i).sum() / m).collect();
    Ok(Density1d { grid, values, bandwidth: h })
}

/// Two-dimensional product-Gaussian KDE of (delay, log₁₀ δ_sys) samples on a
/// 256 × 128 grid clipped to the sample range ± 3 bandwidths.
pub fn gaussian_kde_2d(
    samples: &[(f64, f64)],
    bandwidths: Option<(f64, f64)>,
) -> Result<DensityEstimate> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples { have: samples.len(), need: 2 });
    }
    let delays: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let logds: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let (h_delay, h_logd) = match bandwidths {
        Some((a, b)) => (a, b),
        None => (silverman(&delays), silverman(&logds)),
    };
    if h_delay <= 0.0 || h_logd <= 0.0 {
        return Err(Error::Config("bandwidths must be positive".into()));
    }
    let grid_delay = regular_grid(
        delays.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * h_delay,
        delays.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h_delay,
        KDE_GRID_DELAY,
    );
    let grid_logdelta = regular_grid(
        logds.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * h_logd,
        logds.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h_logd,
        KDE_GRID_LOGDELTA,
    );
    // product kernel: density = K_delay · K_logdᵀ / m
    let k_delay = kernel_matrix(&grid_delay, &delays, h_delay);
    let k_logd = kernel_matrix(&grid_logdelta, &logds, h_logd);
    let joint = &k_delay * k_logd.transpose() / samples.len() as f64;
    let values: Vec<Vec<f64>> =
        (0..KDE_GRID_DELAY).map(|i| joint.row(i).iter().copied().collect()).collect();
    Ok(DensityEstimate { grid_delay, grid_logdelta, values, bandwidths: (h_delay, h_logd) })
}

/// Marginal KDE of scalar samples evaluated on a fixed grid with a fixed
/// bandwidth (used to condition a joint estimate on the same axis).
pub fn marginal_on_grid(grid: &[f64], samples: &[f64], bandwidth: f64) -> Density1d {
    let k = kernel_matrix(grid, samples, bandwidth);
    let m = samples.len() as f64;
    let values: Vec<f64> = (0..grid.len()).map(|i| k.row(i).sum() / m).collect();
    Density1d { grid: grid.to_vec(), values, bandwidth }
}

/// Conditional density P(T_D | δ_sys): columnwise division of the joint by
/// the smoothed marginal of log₁₀ δ_sys. Columns where the marginal carries
/// no mass are zeroed; if the joint still has visible mass there the
/// marginal does not cover the support and the division is refused.
pub fn conditional_density(
    joint: &DensityEstimate,
    marginal: &Density1d,
) -> Result<DensityEstimate> {
    if marginal.grid.len() != joint.grid_logdelta.len() {
        return Err(Error::ShapeMismatch { context: "marginal grid must match joint grid" });
    }
    let marg_max = marginal.values.iter().cloned().fold(0.0f64, f64::max);
    let joint_max =
        joint.values.iter().flat_map(|r| r.iter().cloned()).fold(0.0f64, f64::max);
    let floor = 1e-12 * marg_max;
    let mut values = joint.values.clone();
    for j in 0..joint.grid_logdelta.len() {
        let m = marginal.values[j];
        if m > floor {
            for row in values.iter_mut() {
                row[j] /= m;
            }
        } else {
            let column_mass = joint.values.iter().map(|r| r[j]).fold(0.0f64, f64::max);
            if column_mass > 1e-9 * joint_max {
                return Err(Error::ZeroMarginal);
            }
            for row in values.iter_mut() {
                row[j] = 0.0;
            }
        }
    }
    Ok(DensityEstimate {
        grid_delay: joint.grid_delay.clone(),
        grid_logdelta: joint.grid_logdelta.clone(),
        values,
        bandwidths: joint.bandwidths,
    })
}

fn trapezoid_2d(xs: &[f64], ys: &[f64], values: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for i in 0..xs.len() - 1 {
        let dx = xs[i + 1] - xs[i];
        for j in 0..ys.len() - 1 {
            let dy = ys[j + 1] - ys[j];
            let cell =
                values[i][j] + values[i + 1][j] + values[i][j + 1] + values[i + 1][j + 1];
            total += 0.25 * cell * dx * dy;
        }
    }
    total
}

/// Binomial rate with a 95% Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub rate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub events: usize,
    pub trials: usize,
}

impl RateEstimate {
    pub fn new(events: usize, trials: usize) -> Result<Self> {
        if trials == 0 {
            return Err(Error::TooFewSamples { have: 0, need: 1 });
        }
        let z = 1.959_963_984_540_054f64;
        let n = trials as f64;
        let p = events as f64 / n;
        let z2 = z * z;
        let denom = 1.0 + z2 / n;
        let center = (p + z2 / (2.0 * n)) / denom;
        let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
        Ok(Self {
            rate: p,
            wilson_low: (center - half).max(0.0),
            wilson_high: (center + half).min(1.0),
            events,
            trials,
        })
    }
}

/// Misfire rates of a matched-model run at both granularities: per disjoint
/// evaluation window (the granularity the η guarantee speaks about) and per
/// evaluation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MisfireReport {
    pub per_window: RateEstimate,
    pub per_step: RateEstimate,
}

pub fn misfire_rate(
    window_fires: usize,
    windows: usize,
    step_fires: usize,
    steps: usize,
) -> Result<MisfireReport> {
    Ok(MisfireReport {
        per_window: RateEstimate::new(window_fires, windows)?,
        per_step: RateEstimate::new(step_fires, steps)?,
    })
}

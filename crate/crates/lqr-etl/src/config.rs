//! Scenario configuration: a single TOML file describing the system source,
//! LQR weights, trigger choice and the run schedule.
//!
//! Matrices are row-major nested arrays. A minimal file:
//!
//! ```toml
//! [system]
//! source = "random"      # or "explicit" with a_open/b/v matrices
//! state_dim = 5
//! input_dim = 1
//!
//! [trigger]
//! kind = "hoeffding"     # hoeffding | chernoff | relative | second_moment
//! window = 60
//! gap = 60
//! samples = 20
//! eta = 0.25
//!
//! [run]
//! total_steps = 50000
//! change_interval = 10000
//! master_seed = 1
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::system::{CostWeights, OpenLoopSystem, RandomSystemSpec};

/// Which trigger the harness runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    Hoeffding,
    Chernoff,
    Relative,
    SecondMoment,
}

/// How the model is updated after a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningMode {
    /// Copy the true parameters (simulation-study abstraction).
    Oracle,
    /// Chirp-excited least-squares identification segment.
    Ols,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    #[serde(default = "default_source")]
    pub source: String,
    #[serde(default = "default_state_dim")]
    pub state_dim: usize,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    /// Seed of the system-generation stream; defaults to the master seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub a_open: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub v: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub noise_root: Option<Vec<Vec<f64>>>,
    /// Elementwise range for random entries.
    #[serde(default = "default_entry_range")]
    pub entry_range: (f64, f64),
    /// Range of the perturbation magnitude β.
    #[serde(default = "default_beta_range")]
    pub beta_range: (f64, f64),
}

fn default_source() -> String {
    "random".into()
}
fn default_state_dim() -> usize {
    5
}
fn default_input_dim() -> usize {
    1
}
fn default_entry_range() -> (f64, f64) {
    (-1.0, 1.0)
}
fn default_beta_range() -> (f64, f64) {
    (-0.1, 0.1)
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            source: default_source(),
            state_dim: default_state_dim(),
            input_dim: default_input_dim(),
            seed: None,
            a_open: None,
            b: None,
            v: None,
            noise_root: None,
            entry_range: default_entry_range(),
            beta_range: default_beta_range(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    #[serde(default)]
    pub q_lqr: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub r_lqr: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSection {
    pub kind: TriggerKind,
    /// Cost window length N.
    pub window: usize,
    /// Decorrelation gap r (mean-family triggers).
    #[serde(default)]
    pub gap: Option<usize>,
    /// Sample count 𝔏 (mean-family triggers).
    #[serde(default = "default_samples")]
    pub samples: usize,
    pub eta: f64,
    /// State-bound radius α (mean-family triggers).
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// State-bound matrix W; defaults to the stationary covariance of the
    /// initial closed loop.
    #[serde(default)]
    pub w: Option<Vec<Vec<f64>>>,
    /// Consecutive violations required before firing (Chernoff).
    #[serde(default = "default_dwell")]
    pub dwell: usize,
}

fn default_samples() -> usize {
    20
}
// Calibrated so the whitened default bound puts the mean-trigger threshold a
// few standard deviations above the matched statistic; see the trigger docs.
fn default_alpha() -> f64 {
    1.0
}
fn default_dwell() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub total_steps: usize,
    #[serde(default = "default_change_interval")]
    pub change_interval: usize,
    #[serde(default = "default_learning")]
    pub learning: LearningMode,
    #[serde(default = "default_excitation_steps")]
    pub excitation_steps: usize,
    #[serde(default = "default_excitation_amplitude")]
    pub excitation_amplitude: f64,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_change_interval() -> usize {
    10_000
}
fn default_learning() -> LearningMode {
    LearningMode::Oracle
}
fn default_excitation_steps() -> usize {
    2_000
}
fn default_excitation_amplitude() -> f64 {
    10.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    #[serde(default = "default_total_changes")]
    pub total_changes: usize,
    #[serde(default = "default_rollouts")]
    pub rollouts: usize,
}

fn default_total_changes() -> usize {
    1_000
}
fn default_rollouts() -> usize {
    16
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        Self { total_changes: default_total_changes(), rollouts: default_rollouts() }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default)]
    pub emit_svg: bool,
}

/// Full scenario description parsed from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub system: SystemSection,
    #[serde(default)]
    pub weights: WeightsSection,
    pub trigger: TriggerSection,
    pub run: RunSection,
    #[serde(default)]
    pub montecarlo: MonteCarloSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        match self.system.source.as_str() {
            "random" => {
                if self.system.state_dim == 0 || self.system.input_dim == 0 {
                    return Err(Error::Config("system dimensions must be at least 1".into()));
                }
            }
            "explicit" => {
                if self.system.a_open.is_none() || self.system.b.is_none() {
                    return Err(Error::Config(
                        "explicit system needs a_open and b matrices".into(),
                    ));
                }
                if self.system.v.is_none() && self.system.noise_root.is_none() {
                    return Err(Error::Config(
                        "explicit system needs v or noise_root".into(),
                    ));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown system source '{other}' (expected random | explicit)"
                )));
            }
        }
        if !(0.0 < self.trigger.eta && self.trigger.eta < 1.0) {
            return Err(Error::Config("trigger eta must lie in (0, 1)".into()));
        }
        if self.trigger.window == 0 {
            return Err(Error::Config("trigger window must be at least 1".into()));
        }
        if self.run.total_steps < self.run.change_interval {
            return Err(Error::Config(
                "total_steps must be at least change_interval".into(),
            ));
        }
        if self.run.change_interval == 0 {
            return Err(Error::Config("change_interval must be positive".into()));
        }
        Ok(())
    }

    /// The random-system spec implied by the `[system]` section.
    pub fn random_spec(&self) -> RandomSystemSpec {
        RandomSystemSpec {
            state_dim: self.system.state_dim,
            input_dim: self.system.input_dim,
            entry_range: self.system.entry_range,
            beta_range: self.system.beta_range,
        }
    }

    /// Builds the initial true system: explicit matrices, or a random draw
    /// from the generation stream of `seed`.
    pub fn build_system(&self) -> Result<OpenLoopSystem> {
        match self.system.source.as_str() {
            "explicit" => {
                let a = rows_to_matrix(self.system.a_open.as_ref().unwrap(), "a_open")?;
                let b = rows_to_matrix(self.system.b.as_ref().unwrap(), "b")?;
                if let Some(root) = &self.system.noise_root {
                    OpenLoopSystem::with_noise_root(a, b, rows_to_matrix(root, "noise_root")?)
                } else {
                    let v = rows_to_matrix(self.system.v.as_ref().unwrap(), "v")?;
                    OpenLoopSystem::new(a, b, SpdMatrix::new(v)?)
                }
            }
            _ => {
                let seed = self.system.seed.unwrap_or(self.run.master_seed);
                let mut rng = crate::rng::stream(seed, crate::rng::StreamId::SystemGeneration);
                crate::system::random_system(&self.random_spec(), &mut rng)
            }
        }
    }

    /// LQR weights: explicit matrices or identity.
    pub fn build_weights(&self, state_dim: usize, input_dim: usize) -> Result<CostWeights> {
        let q = match &self.weights.q_lqr {
            Some(rows) => SpdMatrix::new(rows_to_matrix(rows, "q_lqr")?)?,
            None => SpdMatrix::identity(state_dim),
        };
        let r = match &self.weights.r_lqr {
            Some(rows) => SpdMatrix::new(rows_to_matrix(rows, "r_lqr")?)?,
            None => SpdMatrix::identity(input_dim),
        };
        CostWeights::new(q, r)
    }
}

/// Row-major nested arrays → matrix.
pub fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::Config(format!("matrix {what} must be nonempty")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("matrix {what} has ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config(format!("matrix {what} has non-finite entries")));
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

/// Matrix → row-major nested arrays.
pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Serializes a system as an explicit `[system]` TOML block, the same schema
/// `ScenarioConfig` reads. Identified models export through this too.
pub fn system_to_toml(a_open: &DMatrix<f64>, b: &DMatrix<f64>, v: &DMatrix<f64>) -> String {
    #[derive(Serialize)]
    struct Block<'a> {
        system: Explicit<'a>,
    }
    #[derive(Serialize)]
    struct Explicit<'a> {
        source: &'a str,
        state_dim: usize,
        input_dim: usize,
        a_open: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    }
    let block = Block {
        system: Explicit {
            source: "explicit",
            state_dim: a_open.nrows(),
            input_dim: b.ncols(),
            a_open: matrix_to_rows(a_open),
            b: matrix_to_rows(b),
            v: matrix_to_rows(v),
        },
    };
    toml::to_string(&block).expect("system serialization cannot fail")
}

//! Run reports and file emission.
//!
//! CSV column orders are fixed contracts for downstream diffing:
//!
//! - series.csv: `step,cost,psi,kappa_minus,kappa_plus,expected,event`
//! - events.csv: `step,kind,delta_sys,delay,info`
//! - records.csv: `rollout,change_step,delta_sys,detect_step,delay,censored,diverged`
//! - density CSVs (long format): `delay,log10_delta_sys,value`
//!
//! Floats are written with Rust's shortest round-trip formatting; missing
//! values are empty fields.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{Density1d, DensityEstimate, MisfireReport};

/// Events logged by the scenario engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    /// The true system was perturbed; δ_sys is absent when the changed loop
    /// is unstable under the running controller.
    Change { delta_sys: Option<f64> },
    /// Trigger fired with statistic ψ.
    Detection { psi: f64 },
    /// State left the finite range; treated as a detection by divergence.
    Divergence,
    /// Learning experiment started (trigger disabled).
    LearnStart,
    /// Learning experiment finished.
    LearnEnd,
    /// Model, controller and thresholds were updated.
    ModelUpdate { mode: &'static str },
    /// A learning experiment failed; the previous model stays in place.
    ModelUpdateFailed { reason: String },
    /// The run could not continue (e.g. the true system is not
    /// stabilizable after a divergence).
    Terminated { reason: String },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::Change { .. } => "change",
            Event::Detection { .. } => "detection",
            Event::Divergence => "divergence",
            Event::LearnStart => "learn_start",
            Event::LearnEnd => "learn_end",
            Event::ModelUpdate { .. } => "model_update",
            Event::ModelUpdateFailed { .. } => "model_update_failed",
            Event::Terminated { .. } => "terminated",
        }
    }
}

/// One row of the per-step series.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Normalized windowed cost Ĵ_N / N, once a full window exists.
    pub cost: Option<f64>,
    /// Trigger statistic in its plottable (signed) form.
    pub psi: Option<f64>,
    pub kappa_minus: f64,
    pub kappa_plus: f64,
    pub expected: f64,
    pub event: &'static str,
}

/// Outcome of one scheduled change inside a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeOutcome {
    pub change_step: usize,
    pub delta_sys: Option<f64>,
    pub detect_step: Option<usize>,
    /// Detected because the state diverged rather than by a threshold test.
    pub by_divergence: bool,
}

impl ChangeOutcome {
    pub fn delay(&self) -> Option<usize> {
        self.detect_step.map(|d| d - self.change_step)
    }
}

/// Aggregated run statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub total_steps: usize,
    pub changes: Vec<ChangeOutcome>,
    /// Fires with no outstanding change while the model matched the truth.
    pub misfires: usize,
    /// Disjoint full-history evaluation instants while matched, and fires
    /// among them.
    pub matched_windows: usize,
    pub matched_window_fires: usize,
    /// Every matched evaluation step with full history, and fires among
    /// them.
    pub matched_steps: usize,
    pub matched_step_fires: usize,
    pub diverged: bool,
    pub terminated: Option<String>,
}

impl RunSummary {
    pub fn detected(&self) -> usize {
        self.changes.iter().filter(|c| c.detect_step.is_some()).count()
    }

    pub fn missed(&self) -> usize {
        self.changes.len() - self.detected()
    }

    pub fn delays(&self) -> Vec<usize> {
        self.changes.iter().filter_map(|c| c.delay()).collect()
    }

    pub fn misfire_report(&self) -> Result<MisfireReport> {
        crate::metrics::misfire_rate(
            self.matched_window_fires,
            self.matched_windows,
            self.matched_step_fires,
            self.matched_steps,
        )
    }
}

/// Full record of one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub series: Vec<StepRecord>,
    pub events: Vec<(usize, Event)>,
    pub summary: RunSummary,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| Error::Io(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

impl RunReport {
    pub fn series_csv(&self) -> String {
        let mut out = String::from("step,cost,psi,kappa_minus,kappa_plus,expected,event\n");
        for r in &self.series {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.step,
                fmt_opt(r.cost),
                fmt_opt(r.psi),
                r.kappa_minus,
                r.kappa_plus,
                r.expected,
                r.event
            );
        }
        out
    }

    pub fn events_csv(&self) -> String {
        let mut out = String::from("step,kind,delta_sys,delay,info\n");
        let mut change_for_delay: Option<usize> = None;
        for (step, event) in &self.events {
            let (delta, delay, info) = match event {
                Event::Change { delta_sys } => {
                    change_for_delay = Some(*step);
                    (fmt_opt(*delta_sys), String::new(), String::new())
                }
                Event::Detection { psi } => {
                    let delay = change_for_delay
                        .map(|c| (step - c).to_string())
                        .unwrap_or_default();
                    change_for_delay = None;
                    (String::new(), delay, psi.to_string())
                }
                Event::Divergence => (String::new(), String::new(), String::new()),
                Event::ModelUpdate { mode } => (String::new(), String::new(), (*mode).into()),
                Event::ModelUpdateFailed { reason } | Event::Terminated { reason } => {
                    (String::new(), String::new(), reason.clone())
                }
                _ => (String::new(), String::new(), String::new()),
            };
            let _ = writeln!(out, "{},{},{},{},{}", step, event.kind(), delta, delay, info);
        }
        out
    }

    pub fn summary_text(&self) -> String {
        let s = &self.summary;
        let mut out = String::new();
        let _ = writeln!(out, "steps simulated       : {}", s.total_steps);
        let _ = writeln!(out, "system changes        : {}", s.changes.len());
        let _ = writeln!(out, "detections            : {}", s.detected());
        let _ = writeln!(out, "missed changes        : {}", s.missed());
        let _ = writeln!(out, "misfires (matched)    : {}", s.misfires);
        if let Ok(report) = s.misfire_report() {
            let _ = writeln!(
                out,
                "matched window rate   : {:.6} [{:.6}, {:.6}] over {} windows",
                report.per_window.rate,
                report.per_window.wilson_low,
                report.per_window.wilson_high,
                report.per_window.trials
            );
            let _ = writeln!(
                out,
                "matched step rate     : {:.6} [{:.6}, {:.6}] over {} steps",
                report.per_step.rate,
                report.per_step.wilson_low,
                report.per_step.wilson_high,
                report.per_step.trials
            );
        }
        let delays = s.delays();
        if !delays.is_empty() {
            let mut sorted = delays.clone();
            sorted.sort_unstable();
            let median = sorted[sorted.len() / 2];
            let _ = writeln!(out, "detection delays      : {delays:?}");
            let _ = writeln!(out, "median delay          : {median}");
        }
        for c in &s.changes {
            let _ = writeln!(
                out,
                "change @ {:>8} delta_sys {} -> {}",
                c.change_step,
                c.delta_sys.map(|d| format!("{d:.6}")).unwrap_or_else(|| "unstable".into()),
                match (c.detect_step, c.by_divergence) {
                    (Some(d), false) => format!("detected @ {d} (delay {})", d - c.change_step),
                    (Some(d), true) => format!("diverged @ {d} (delay {})", d - c.change_step),
                    (None, _) => "missed".into(),
                }
            );
        }
        if s.diverged {
            let _ = writeln!(out, "divergence occurred   : yes");
        }
        if let Some(reason) = &s.terminated {
            let _ = writeln!(out, "terminated early      : {reason}");
        }
        out
    }

    pub fn write_series_csv(&self, path: &Path) -> Result<()> {
        write_file(path, &self.series_csv())
    }

    pub fn write_events_csv(&self, path: &Path) -> Result<()> {
        write_file(path, &self.events_csv())
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        write_file(path, &self.summary_text())
    }

    /// Two stacked SVG panels: normalized cost with its expectation, and the
    /// trigger statistic between its thresholds. Detections and changes are
    /// vertical rules.
    pub fn write_svg(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_svg())
    }

    pub fn to_svg(&self) -> String {
        const W: f64 = 960.0;
        const H: f64 = 540.0;
        const PAD: f64 = 45.0;
        let panel_h = (H - 3.0 * PAD) / 2.0;
        let steps: Vec<f64> = self.series.iter().map(|r| r.step as f64).collect();
        let max_step = steps.last().copied().unwrap_or(1.0).max(1.0);
        let x_of = |step: f64| PAD + (W - 2.0 * PAD) * step / max_step;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);

        let polyline = |points: &[(f64, f64)], color: &str, width: f64| -> String {
            if points.is_empty() {
                return String::new();
            }
            let pts: Vec<String> =
                points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            format!(
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"#,
                pts.join(" ")
            )
        };

        // panel 1: normalized cost and expectation
        let cost_pts: Vec<(f64, f64)> = self
            .series
            .iter()
            .filter_map(|r| r.cost.map(|c| (r.step as f64, c)))
            .collect();
        let expected_pts: Vec<(f64, f64)> = self
            .series
            .iter()
            .map(|r| (r.step as f64, r.expected / 1.0))
            .collect();
        let y_max1 = cost_pts
            .iter()
            .map(|p| p.1)
            .chain(expected_pts.iter().map(|p| p.1))
            .fold(1e-9f64, f64::max);
        let y1_of = |v: f64| PAD + panel_h - panel_h * (v / y_max1).clamp(0.0, 1.0);
        let cost_path: Vec<(f64, f64)> =
            cost_pts.iter().map(|&(s, v)| (x_of(s), y1_of(v))).collect();
        let _ = writeln!(svg, "{}", polyline(&cost_path, "#1f77b4", 1.0));
        let exp_path: Vec<(f64, f64)> =
            expected_pts.iter().map(|&(s, v)| (x_of(s), y1_of(v))).collect();
        let _ = writeln!(svg, "{}", polyline(&exp_path, "#ff7f0e", 1.2));

        // panel 2: statistic and thresholds
        let top2 = 2.0 * PAD + panel_h;
        let psi_pts: Vec<(f64, f64)> = self
            .series
            .iter()
            .filter_map(|r| r.psi.map(|p| (r.step as f64, p)))
            .collect();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in &self.series {
            lo = lo.min(r.kappa_minus);
            hi = hi.max(r.kappa_plus);
        }
        for p in &psi_pts {
            lo = lo.min(p.1);
            hi = hi.max(p.1);
        }
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            lo = -1.0;
            hi = 1.0;
        }
        let y2_of = |v: f64| top2 + panel_h - panel_h * ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        let psi_path: Vec<(f64, f64)> = psi_pts.iter().map(|&(s, v)| (x_of(s), y2_of(v))).collect();
        let _ = writeln!(svg, "{}", polyline(&psi_path, "#1f77b4", 1.0));
        let km: Vec<(f64, f64)> =
            self.series.iter().map(|r| (x_of(r.step as f64), y2_of(r.kappa_minus))).collect();
        let kp: Vec<(f64, f64)> =
            self.series.iter().map(|r| (x_of(r.step as f64), y2_of(r.kappa_plus))).collect();
        let _ = writeln!(svg, "{}", polyline(&km, "#000000", 0.8));
        let _ = writeln!(svg, "{}", polyline(&kp, "#000000", 0.8));

        // event rules across both panels
        for (step, event) in &self.events {
            let color = match event {
                Event::Change { .. } => "#2ca02c",
                Event::Detection { .. } | Event::Divergence => "#d62728",
                _ => continue,
            };
            let x = x_of(*step as f64);
            let _ = writeln!(
                svg,
                r#"<line x1="{x:.2}" y1="{PAD}" x2="{x:.2}" y2="{:.2}" stroke="{color}" stroke-width="0.8" stroke-dasharray="4 3"/>"#,
                top2 + panel_h
            );
        }
        let _ = writeln!(svg, "</svg>");
        svg
    }
}

/// Monte Carlo detection record rows.
pub fn records_csv(records: &[(usize, crate::metrics::DetectionRecord)]) -> String {
    let mut out =
        String::from("rollout,change_step,delta_sys,detect_step,delay,censored,diverged\n");
    for (rollout, r) in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            rollout,
            r.change_step,
            r.delta_sys,
            r.detect_step.map(|d| d.to_string()).unwrap_or_default(),
            r.delay.map(|d| d.to_string()).unwrap_or_default(),
            r.detect_step.is_none(),
            r.diverged
        );
    }
    out
}

/// Long-format density grid.
pub fn density_csv(density: &DensityEstimate) -> String {
    let mut out = String::from("delay,log10_delta_sys,value\n");
    for (i, d) in density.grid_delay.iter().enumerate() {
        for (j, l) in density.grid_logdelta.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", d, l, density.values[i][j]);
        }
    }
    out
}

pub fn density_1d_csv(density: &Density1d) -> String {
    let mut out = String::from("log10_delta_sys,value\n");
    for (g, v) in density.grid.iter().zip(&density.values) {
        let _ = writeln!(out, "{},{}", g, v);
    }
    out
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    write_file(path, contents)
}

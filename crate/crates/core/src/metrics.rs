//! Energy, detection and lifetime metrics, and the comparison tables built
//! from them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::RunResult;
use crate::policy::PolicyKind;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("run covers {rounds} rounds, less than one full day of {per_day}")]
    LessThanOneDay { rounds: usize, per_day: u32 },
    #[error("runs were produced from different traces ({0} vs {1})")]
    MismatchedTraces(String, String),
    #[error("nothing to compare")]
    Empty,
}

/// Capacity-division lifetime in whole days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifetime {
    Days(u64),
    Unbounded,
}

impl Lifetime {
    pub fn days(self) -> Option<u64> {
        match self {
            Lifetime::Days(d) => Some(d),
            Lifetime::Unbounded => None,
        }
    }
}

impl std::fmt::Display for Lifetime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Lifetime::Days(d) => write!(f, "{d}"),
            Lifetime::Unbounded => f.write_str("unbounded"),
        }
    }
}

/// Mean mAh per node per simulated day. Dead nodes stay in the denominator.
pub fn avg_daily_energy(run: &RunResult) -> Result<f64, MetricsError> {
    let per_day = run.config.rounds_per_day();
    let rounds = run.rounds.len();
    if rounds < per_day as usize || run.nodes.is_empty() {
        return Err(MetricsError::LessThanOneDay { rounds, per_day });
    }
    let days = rounds as f64 / per_day as f64;
    let spent: f64 = run.rounds.iter().map(|r| r.spent).sum();
    Ok(spent / (run.nodes.len() as f64 * days))
}

/// Detected fraction of injected events, or `None` if there were none.
pub fn detection_rate(run: &RunResult) -> Option<f64> {
    if run.events.is_empty() {
        return None;
    }
    let hit = run.events.iter().filter(|e| e.detected).count();
    Some(hit as f64 / run.events.len() as f64)
}

/// `battery_capacity / avg_daily_energy`, rounded half away from zero, at least one day.
pub fn lifetime_estimate(battery_capacity: f64, avg_daily_energy: f64) -> Lifetime {
    if avg_daily_energy <= 0.0 {
        return Lifetime::Unbounded;
    }
    Lifetime::Days(((battery_capacity / avg_daily_energy).round() as u64).max(1))
}

/// Percent saved relative to the reference.
pub fn reduction_pct(reference: f64, x: f64) -> f64 {
    (reference - x) / reference * 100.0
}

/// Percent gained relative to the reference.
pub fn gain_pct(reference: f64, x: f64) -> f64 {
    (x - reference) / reference * 100.0
}

/// Renders a percentage at fixed precision, e.g. `"21%"` or `"+71.7%"`.
pub fn format_percent(value: f64, decimals: usize, signed: bool) -> String {
    // avoid "-0%"
    let scale = 10f64.powi(decimals as i32);
    let v = if (value * scale).round() == 0.0 {
        0.0
    } else {
        value
    };
    if signed {
        format!("{v:+.decimals$}%")
    } else {
        format!("{v:.decimals$}%")
    }
}

/// First simulated day on which some node died, 1-based.
pub fn first_death_day(run: &RunResult) -> Option<f64> {
    let per_day = run.config.rounds_per_day() as f64;
    run.nodes
        .iter()
        .filter_map(|n| n.death_round)
        .min()
        .map(|r| (r as f64 + 1.0) / per_day)
}

/// Day by which half the fleet had died, if that happened within the run.
pub fn median_death_day(run: &RunResult) -> Option<f64> {
    let per_day = run.config.rounds_per_day() as f64;
    let mut deaths: Vec<u32> = run.nodes.iter().filter_map(|n| n.death_round).collect();
    let half = run.nodes.len().div_ceil(2);
    if deaths.len() < half || half == 0 {
        return None;
    }
    deaths.sort_unstable();
    Some((deaths[half - 1] as f64 + 1.0) / per_day)
}

/// Aggregate input for one table row.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRow {
    pub policy: PolicyKind,
    pub avg_daily_energy: f64,
    pub detection_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub policy: PolicyKind,
    pub label: String,
    pub runs: usize,
    /// mAh/day per node, mean over runs.
    pub avg_daily_energy: f64,
    pub avg_daily_energy_std: f64,
    pub detection_rate: Option<f64>,
    pub detection_rate_std: Option<f64>,
    pub lifetime_days: Lifetime,
    pub reduction_vs_static: Option<f64>,
    pub improvement_vs_static: Option<f64>,
    pub extension_vs_static: Option<f64>,
    pub first_death_day: Option<f64>,
    pub median_death_day: Option<f64>,
}

/// Table rows from already-aggregated values. Percentages are filled in
/// only when a static row is present.
pub fn summarize(rows: &[PolicyRow], battery_capacity: f64) -> Vec<MetricsSummary> {
    let reference = rows.iter().find(|r| r.policy == PolicyKind::Static);
    let ref_life = reference.map(|r| lifetime_estimate(battery_capacity, r.avg_daily_energy));
    rows.iter()
        .map(|r| {
            let lifetime = lifetime_estimate(battery_capacity, r.avg_daily_energy);
            let (reduction, improvement, extension) = match reference {
                Some(s) => (
                    Some(reduction_pct(s.avg_daily_energy, r.avg_daily_energy)),
                    match (s.detection_rate, r.detection_rate) {
                        (Some(a), Some(b)) if a > 0.0 => Some(gain_pct(a, b)),
                        _ => None,
                    },
                    match (ref_life.and_then(Lifetime::days), lifetime.days()) {
                        (Some(a), Some(b)) => Some(gain_pct(a as f64, b as f64)),
                        _ => None,
                    },
                ),
                None => (None, None, None),
            };
            MetricsSummary {
                policy: r.policy,
                label: r.policy.display_label().to_string(),
                runs: 1,
                avg_daily_energy: r.avg_daily_energy,
                avg_daily_energy_std: 0.0,
                detection_rate: r.detection_rate,
                detection_rate_std: r.detection_rate.map(|_| 0.0),
                lifetime_days: lifetime,
                reduction_vs_static: reduction,
                improvement_vs_static: improvement,
                extension_vs_static: extension,
                first_death_day: None,
                median_death_day: None,
            }
        })
        .collect()
}

/// Metrics of a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub policy: PolicyKind,
    pub seed: u64,
    pub avg_daily_energy: f64,
    pub detection_rate: Option<f64>,
    pub events: usize,
    pub detected: usize,
    pub first_death_day: Option<f64>,
    pub median_death_day: Option<f64>,
}

impl RunMetrics {
    pub fn of(run: &RunResult) -> Result<RunMetrics, MetricsError> {
        Ok(RunMetrics {
            policy: run.policy,
            seed: run.config.seed,
            avg_daily_energy: avg_daily_energy(run)?,
            detection_rate: detection_rate(run),
            events: run.events.len(),
            detected: run.events.iter().filter(|e| e.detected).count(),
            first_death_day: first_death_day(run),
            median_death_day: median_death_day(run),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub trace_hash: String,
    pub battery_capacity: f64,
    pub seeds: Vec<u64>,
    pub summaries: Vec<MetricsSummary>,
    pub per_run: Vec<RunMetrics>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates runs per policy (mean and sample std over seeds) and
/// computes percentages against the static row.
pub fn compare(runs: &[RunResult]) -> Result<Comparison, MetricsError> {
    let first = runs.first().ok_or(MetricsError::Empty)?;
    for r in runs {
        if r.trace_hash != first.trace_hash {
            return Err(MetricsError::MismatchedTraces(
                first.trace_hash.clone(),
                r.trace_hash.clone(),
            ));
        }
    }
    let per_run = runs
        .iter()
        .map(RunMetrics::of)
        .collect::<Result<Vec<_>, _>>()?;
    let mut seeds: Vec<u64> = per_run.iter().map(|m| m.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();

    let capacity = first.config.battery_capacity;
    let mut rows = Vec::new();
    let mut extra = Vec::new();
    for kind in PolicyKind::ALL {
        let group: Vec<&RunMetrics> = per_run.iter().filter(|m| m.policy == kind).collect();
        if group.is_empty() {
            continue;
        }
        let energy: Vec<f64> = group.iter().map(|m| m.avg_daily_energy).collect();
        let detection: Vec<f64> = group.iter().filter_map(|m| m.detection_rate).collect();
        let (e_mean, e_std) = mean_std(&energy);
        let det = (detection.len() == group.len()).then(|| mean_std(&detection));
        let firsts: Vec<f64> = group.iter().filter_map(|m| m.first_death_day).collect();
        let medians: Vec<f64> = group.iter().filter_map(|m| m.median_death_day).collect();
        extra.push((
            group.len(),
            e_std,
            det.map(|d| d.1),
            firsts.iter().copied().reduce(f64::min),
            (medians.len() == group.len()).then(|| mean_std(&medians).0),
        ));
        rows.push(PolicyRow {
            policy: kind,
            avg_daily_energy: e_mean,
            detection_rate: det.map(|d| d.0),
        });
    }
    let mut summaries = summarize(&rows, capacity);
    for (s, (n, e_std, d_std, first_death, median_death)) in summaries.iter_mut().zip(extra) {
        s.runs = n;
        s.avg_daily_energy_std = e_std;
        s.detection_rate_std = d_std;
        s.first_death_day = first_death;
        s.median_death_day = median_death;
    }
    Ok(Comparison {
        trace_hash: first.trace_hash.clone(),
        battery_capacity: capacity,
        seeds,
        summaries,
        per_run,
    })
}

fn opt_fmt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map(f).unwrap_or_else(|| "--".to_string())
}

impl Comparison {
    fn find(&self, kind: PolicyKind) -> Option<&MetricsSummary> {
        self.summaries.iter().find(|s| s.policy == kind)
    }

    pub fn get(&self, kind: PolicyKind) -> Option<&MetricsSummary> {
        self.find(kind)
    }

    /// Plain-text energy, coverage and lifetime tables.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let is_ref = |s: &MetricsSummary| s.policy == PolicyKind::Static;
        let w = self
            .summaries
            .iter()
            .map(|s| s.label.len())
            .max()
            .unwrap_or(6)
            .max(6);

        let _ = writeln!(out, "Energy Consumption Comparison");
        let _ = writeln!(
            out,
            "{:<w$}  {:>22}  {:>9}",
            "Method", "Avg Energy (mAh/day)", "Reduction"
        );
        for s in &self.summaries {
            let energy = format!("{:.1} ± {:.1}", s.avg_daily_energy, s.avg_daily_energy_std);
            let red = if is_ref(s) {
                "--".to_string()
            } else {
                opt_fmt(s.reduction_vs_static, |v| format_percent(v, 0, false))
            };
            let _ = writeln!(out, "{:<w$}  {:>22}  {:>9}", s.label, energy, red);
        }

        let _ = writeln!(out);
        let _ = writeln!(out, "Detection Coverage");
        let _ = writeln!(
            out,
            "{:<w$}  {:>22}  {:>11}",
            "Method", "Coverage Rate (%)", "Improvement"
        );
        for s in &self.summaries {
            let rate = match (s.detection_rate, s.detection_rate_std) {
                (Some(r), Some(sd)) => format!("{:.1} ± {:.1}", r * 100.0, sd * 100.0),
                _ => "n/a".to_string(),
            };
            let imp = if is_ref(s) {
                "--".to_string()
            } else {
                opt_fmt(s.improvement_vs_static, |v| format_percent(v, 1, true))
            };
            let _ = writeln!(out, "{:<w$}  {:>22}  {:>11}", s.label, rate, imp);
        }

        let _ = writeln!(out);
        let _ = writeln!(out, "Network Lifetime");
        let _ = writeln!(
            out,
            "{:<w$}  {:>22}  {:>9}  {:>17}  {:>18}",
            "Method",
            "Sensor Lifetime (Days)",
            "Extension",
            "First death (day)",
            "Median death (day)"
        );
        for s in &self.summaries {
            let ext = if is_ref(s) {
                "--".to_string()
            } else {
                opt_fmt(s.extension_vs_static, |v| format_percent(v, 1, true))
            };
            let beyond = || "> horizon".to_string();
            let _ = writeln!(
                out,
                "{:<w$}  {:>22}  {:>9}  {:>17}  {:>18}",
                s.label,
                s.lifetime_days.to_string(),
                ext,
                s.first_death_day
                    .map(|d| format!("{d:.2}"))
                    .unwrap_or_else(beyond),
                s.median_death_day
                    .map(|d| format!("{d:.2}"))
                    .unwrap_or_else(beyond),
            );
        }

        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "Notes: values are means ± sample std over {} seed(s); this multi-seed aggregation is a \
             methodological addition to single-run reporting.",
            self.seeds.len()
        );
        let _ = writeln!(
            out,
            "       Coverage rate and event detection rate are the same metric: the fraction of injected \
             events seen above threshold by an active sensor in the event zone."
        );
        let _ = writeln!(
            out,
            "       Lifetime = battery capacity ({} mAh) / avg daily energy, rounded to whole days; death \
             columns come from the simulation itself.",
            self.battery_capacity
        );
        out
    }

    /// One row per policy.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "policy,runs,avg_daily_energy,avg_daily_energy_std,detection_rate,detection_rate_std,\
             lifetime_days,reduction_vs_static,improvement_vs_static,extension_vs_static,\
             first_death_day,median_death_day\n",
        );
        let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                s.policy,
                s.runs,
                s.avg_daily_energy,
                s.avg_daily_energy_std,
                o(s.detection_rate),
                o(s.detection_rate_std),
                s.lifetime_days,
                o(s.reduction_vs_static),
                o(s.improvement_vs_static),
                o(s.extension_vs_static),
                o(s.first_death_day),
                o(s.median_death_day),
            );
        }
        out
    }

    /// Long-form `policy,metric,value` rows for external plotting.
    pub fn plot_csv(&self) -> String {
        let mut out = String::from("policy,metric,value\n");
        for s in &self.summaries {
            let _ = writeln!(out, "{},avg_daily_energy,{}", s.policy, s.avg_daily_energy);
            if let Some(d) = s.detection_rate {
                let _ = writeln!(out, "{},detection_rate,{}", s.policy, d);
            }
            if let Some(d) = s.lifetime_days.days() {
                let _ = writeln!(out, "{},lifetime_days,{}", s.policy, d);
            }
        }
        out
    }

    /// Per-(policy, seed) raw metrics.
    pub fn per_run_csv(&self) -> String {
        let mut out = String::from("policy,seed,avg_daily_energy,detection_rate,events,detected\n");
        for m in &self.per_run {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                m.policy,
                m.seed,
                m.avg_daily_energy,
                m.detection_rate.map(|d| d.to_string()).unwrap_or_default(),
                m.events,
                m.detected
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }
}

//! Shared domain types and the simulation configuration.
//!
//! Everything here is a plain value. Simulation logic lives in the
//! `engine`, `policy` and `hierarchy` modules.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{Purpose, StreamKey};

/// Minutes in one simulated day.
pub const MINUTES_PER_DAY: u32 = 1440;

/// The six tracked pollutants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PollutantKind {
    #[serde(rename = "PM25")]
    Pm25,
    #[serde(rename = "PM10")]
    Pm10,
    #[serde(rename = "CO")]
    Co,
    #[serde(rename = "NO2")]
    No2,
    #[serde(rename = "O3")]
    O3,
    #[serde(rename = "SO2")]
    So2,
}

impl PollutantKind {
    pub const ALL: [PollutantKind; 6] = [
        PollutantKind::Pm25,
        PollutantKind::Pm10,
        PollutantKind::Co,
        PollutantKind::No2,
        PollutantKind::O3,
        PollutantKind::So2,
    ];

    pub const COUNT: usize = Self::ALL.len();

    /// Position in [`PollutantKind::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    /// Label used in CSV files.
    pub fn label(self) -> &'static str {
        match self {
            PollutantKind::Pm25 => "PM25",
            PollutantKind::Pm10 => "PM10",
            PollutantKind::Co => "CO",
            PollutantKind::No2 => "NO2",
            PollutantKind::O3 => "O3",
            PollutantKind::So2 => "SO2",
        }
    }
}

impl fmt::Display for PollutantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown pollutant label {0:?} (expected one of PM25, PM10, CO, NO2, O3, SO2)")]
pub struct UnknownPollutant(pub String);

impl FromStr for PollutantKind {
    type Err = UnknownPollutant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "PM25" | "PM2.5" => Ok(PollutantKind::Pm25),
            "PM10" => Ok(PollutantKind::Pm10),
            "CO" => Ok(PollutantKind::Co),
            "NO2" => Ok(PollutantKind::No2),
            "O3" => Ok(PollutantKind::O3),
            "SO2" => Ok(PollutantKind::So2),
            other => Err(UnknownPollutant(other.to_string())),
        }
    }
}

/// One virtual sensor node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorNode {
    pub node_id: u32,
    pub zone_id: u32,
    /// mAh per activation.
    pub energy_cost: f64,
    /// mAh remaining.
    pub battery: f64,
    pub utility: f64,
    pub pull_count: u64,
    pub mean_reward: f64,
    pub alive: bool,
}

impl SensorNode {
    pub fn new(node_id: u32, zone_id: u32, energy_cost: f64, battery: f64) -> Self {
        assert!(energy_cost > 0.0, "energy_cost must be positive");
        assert!(battery >= 0.0, "battery must be non-negative");
        SensorNode {
            node_id,
            zone_id,
            energy_cost,
            battery,
            utility: 1.0,
            pull_count: 0,
            mean_reward: 0.0,
            alive: battery > 0.0,
        }
    }
}

/// Removes `amount` mAh from the node, clamping at zero.
///
/// Panics on a negative amount.
pub fn drain_battery(mut node: SensorNode, amount: f64) -> SensorNode {
    assert!(
        amount >= 0.0,
        "drain amount must be non-negative, got {amount}"
    );
    node.battery = (node.battery - amount).max(0.0);
    node.alive = node.battery > 0.0;
    node
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Zone {
    pub zone_id: u32,
    pub node_ids: Vec<u32>,
}

/// The sensor fleet, partitioned into zones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fleet {
    pub nodes: Vec<SensorNode>,
    pub zones: Vec<Zone>,
}

impl Fleet {
    /// Builds `n_zones * nodes_per_zone` nodes with per-node energy costs
    /// drawn uniformly from `energy_cost_range`, keyed by the config seed.
    pub fn build(cfg: &SimConfig) -> Fleet {
        let (lo, hi) = cfg.energy_cost_range;
        let mut nodes = Vec::with_capacity((cfg.n_zones * cfg.nodes_per_zone) as usize);
        let mut zones = Vec::with_capacity(cfg.n_zones as usize);
        for zone_id in 0..cfg.n_zones {
            let mut node_ids = Vec::with_capacity(cfg.nodes_per_zone as usize);
            for k in 0..cfg.nodes_per_zone {
                let node_id = zone_id * cfg.nodes_per_zone + k;
                let u = StreamKey::new(cfg.seed, Purpose::Fleet)
                    .node(node_id)
                    .uniform();
                let cost = if hi > lo { lo + (hi - lo) * u } else { lo };
                nodes.push(SensorNode::new(
                    node_id,
                    zone_id,
                    cost,
                    cfg.battery_capacity,
                ));
                node_ids.push(node_id);
            }
            zones.push(Zone { zone_id, node_ids });
        }
        Fleet { nodes, zones }
    }

    /// Builds a fleet from explicit per-node costs, one zone per inner list.
    pub fn from_costs(zone_costs: &[Vec<f64>], battery: f64) -> Fleet {
        let mut nodes = Vec::new();
        let mut zones = Vec::new();
        for (z, costs) in zone_costs.iter().enumerate() {
            let mut node_ids = Vec::new();
            for &c in costs {
                let id = nodes.len() as u32;
                nodes.push(SensorNode::new(id, z as u32, c, battery));
                node_ids.push(id);
            }
            zones.push(Zone {
                zone_id: z as u32,
                node_ids,
            });
        }
        Fleet { nodes, zones }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn alive_cost(&self) -> f64 {
        self.nodes
            .iter()
            .filter(|n| n.alive)
            .map(|n| n.energy_cost)
            .sum()
    }
}

/// The edge coordinator's view of one zone at one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextVector {
    pub round_index: u32,
    /// 0-based slot within the day.
    pub time_of_day_slot: u32,
    pub zone_id: u32,
    /// Trailing mean of observed readings per pollutant, indexed by [`PollutantKind::index`].
    pub recent_level: [f64; PollutantKind::COUNT],
    /// Least-squares slope per round over the trailing window.
    pub trend: [f64; PollutantKind::COUNT],
    /// Mean remaining battery fraction of the zone.
    pub energy_summary: f64,
    /// Number of observed rounds backing `recent_level` and `trend`.
    pub observed_rounds: usize,
}

/// Simulation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_zones: u32,
    pub nodes_per_zone: u32,
    pub rounds: u32,
    pub round_minutes: u32,
    pub budget_fraction: f64,
    pub eta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub ucb_c: f64,
    pub score_floor: f64,
    pub detect_threshold: f64,
    pub periodic_period: u32,
    pub periodic_duty: u32,
    pub battery_capacity: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub energy_cost_range: (f64, f64),
    /// Seed for the synthetic trace and event injection.
    pub trace_seed: u64,
    pub hierarchy: bool,
    pub interest_lambda: f64,
    pub interest_mu: f64,
    pub k_dev: f64,
    pub event_rate: f64,
    pub event_duration: (u32, u32),
    pub event_magnitude: (f64, f64),
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_zones: 20,
            nodes_per_zone: 50,
            rounds: 2880,
            round_minutes: 15,
            budget_fraction: 0.65,
            eta: 0.1,
            alpha: 1.0,
            beta: 0.5,
            ucb_c: 1.0,
            score_floor: 0.12,
            detect_threshold: 0.5,
            periodic_period: 5,
            periodic_duty: 4,
            battery_capacity: 21600.0,
            noise_sigma: 0.1,
            seed: 1,
            energy_cost_range: (0.75, 1.75),
            trace_seed: 0,
            hierarchy: true,
            interest_lambda: 1.0,
            interest_mu: 1.0,
            k_dev: 1.5,
            event_rate: 0.4,
            event_duration: (4, 16),
            event_magnitude: (2.0, 5.0),
        }
    }
}

/// A single violated constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub constraint: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.constraint)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {value:?} ({message})")]
    BadValue {
        key: String,
        value: String,
        message: String,
    },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

impl SimConfig {
    pub fn rounds_per_day(&self) -> u32 {
        MINUTES_PER_DAY / self.round_minutes.max(1)
    }

    pub fn n_nodes(&self) -> u32 {
        self.n_zones * self.nodes_per_zone
    }

    /// Checks every constraint and reports all violations at once.
    pub fn validate(self) -> Result<SimConfig, ConfigError> {
        let mut v = Vec::new();
        let mut bad = |field: &'static str, constraint: &str| {
            v.push(Violation {
                field,
                constraint: constraint.to_string(),
            })
        };
        let open01 = |x: f64| x > 0.0 && x < 1.0;

        if self.n_zones == 0 {
            bad("n_zones", "n_zones must be >= 1");
        }
        if self.nodes_per_zone == 0 {
            bad("nodes_per_zone", "nodes_per_zone must be >= 1");
        }
        if self.round_minutes == 0 || !MINUTES_PER_DAY.is_multiple_of(self.round_minutes) {
            bad("round_minutes", "1440 not divisible by round_minutes");
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            bad("budget_fraction", "budget_fraction ∉ (0,1]");
        }
        if !open01(self.eta) {
            bad("eta", "eta ∉ (0,1)");
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            bad("alpha", "alpha must be finite and >= 0");
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            bad("beta", "beta must be finite and >= 0");
        }
        if !self.ucb_c.is_finite() || self.ucb_c < 0.0 {
            bad("ucb_c", "ucb_c must be finite and >= 0");
        }
        if !self.score_floor.is_finite() || self.score_floor < 0.0 {
            bad("score_floor", "score_floor must be >= 0");
        }
        if !open01(self.detect_threshold) {
            bad("detect_threshold", "detect_threshold ∉ (0,1)");
        }
        if self.periodic_duty == 0 || self.periodic_duty > self.periodic_period {
            bad(
                "periodic_duty",
                "require 0 < periodic_duty <= periodic_period",
            );
        }
        if !(self.battery_capacity.is_finite() && self.battery_capacity > 0.0) {
            bad("battery_capacity", "battery_capacity must be > 0");
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            bad("noise_sigma", "noise_sigma must be >= 0");
        }
        let (lo, hi) = self.energy_cost_range;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            bad("energy_cost_range", "require 0 < lo <= hi");
        }
        if !self.interest_lambda.is_finite() || self.interest_lambda < 0.0 {
            bad("interest_lambda", "interest_lambda must be >= 0");
        }
        if !self.interest_mu.is_finite() || self.interest_mu < 0.0 {
            bad("interest_mu", "interest_mu must be >= 0");
        }
        if !(self.k_dev.is_finite() && self.k_dev > 0.0) {
            bad("k_dev", "k_dev must be > 0");
        }
        if !self.event_rate.is_finite() || self.event_rate < 0.0 {
            bad("event_rate", "event_rate must be >= 0");
        }
        let (dmin, dmax) = self.event_duration;
        if dmin == 0 || dmin > dmax {
            bad("event_duration", "require 1 <= min <= max");
        }
        let (mlo, mhi) = self.event_magnitude;
        if !(mlo.is_finite() && mhi.is_finite() && mlo > 1.0 && mlo <= mhi) {
            bad("event_magnitude", "require 1 < lo <= hi");
        }

        if v.is_empty() {
            Ok(self)
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        let bad = |message: &str| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            message: message.to_string(),
        };
        fn num<T: FromStr>(value: &str) -> Option<T> {
            value.parse().ok()
        }
        fn pair<T: FromStr>(value: &str) -> Option<(T, T)> {
            let (a, b) = value.split_once(',')?;
            Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
        }
        fn flag(value: &str) -> Option<bool> {
            match value {
                "on" | "true" | "1" | "yes" => Some(true),
                "off" | "false" | "0" | "no" => Some(false),
                _ => None,
            }
        }
        macro_rules! assign {
            ($field:expr, $parse:expr, $msg:literal) => {
                $field = $parse.ok_or_else(|| bad($msg))?
            };
        }
        match key.trim() {
            "n_zones" => assign!(self.n_zones, num(value), "expected integer"),
            "nodes_per_zone" => assign!(self.nodes_per_zone, num(value), "expected integer"),
            "rounds" => assign!(self.rounds, num(value), "expected integer"),
            "round_minutes" => assign!(self.round_minutes, num(value), "expected integer"),
            "budget_fraction" => assign!(self.budget_fraction, num(value), "expected number"),
            "eta" => assign!(self.eta, num(value), "expected number"),
            "alpha" => assign!(self.alpha, num(value), "expected number"),
            "beta" => assign!(self.beta, num(value), "expected number"),
            "ucb_c" => assign!(self.ucb_c, num(value), "expected number"),
            "score_floor" => assign!(self.score_floor, num(value), "expected number"),
            "detect_threshold" => assign!(self.detect_threshold, num(value), "expected number"),
            "periodic_period" => assign!(self.periodic_period, num(value), "expected integer"),
            "periodic_duty" => assign!(self.periodic_duty, num(value), "expected integer"),
            "battery_capacity" => assign!(self.battery_capacity, num(value), "expected number"),
            "noise_sigma" => assign!(self.noise_sigma, num(value), "expected number"),
            "seed" => assign!(self.seed, num(value), "expected unsigned integer"),
            "energy_cost_range" => {
                assign!(self.energy_cost_range, pair(value), "expected lo,hi")
            }
            "trace_seed" => assign!(self.trace_seed, num(value), "expected unsigned integer"),
            "hierarchy" => assign!(self.hierarchy, flag(value), "expected on|off"),
            "interest_lambda" => assign!(self.interest_lambda, num(value), "expected number"),
            "interest_mu" => assign!(self.interest_mu, num(value), "expected number"),
            "k_dev" => assign!(self.k_dev, num(value), "expected number"),
            "event_rate" => assign!(self.event_rate, num(value), "expected number"),
            "event_duration" => assign!(self.event_duration, pair(value), "expected min,max"),
            "event_magnitude" => assign!(self.event_magnitude, pair(value), "expected lo,hi"),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Parses a flat `key = value` file on top of the defaults.
    ///
    /// Blank lines and lines starting with `#` are ignored. The result is
    /// not validated.
    pub fn from_kv_str(text: &str) -> Result<SimConfig, ConfigError> {
        let mut cfg = SimConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            cfg.set(key.trim(), value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<SimConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        SimConfig::from_kv_str(&text)
    }

    /// Renders the config in the same `key = value` format `from_kv_str` reads.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("n_zones", self.n_zones.to_string());
        line("nodes_per_zone", self.nodes_per_zone.to_string());
        line("rounds", self.rounds.to_string());
        line("round_minutes", self.round_minutes.to_string());
        line("budget_fraction", self.budget_fraction.to_string());
        line("eta", self.eta.to_string());
        line("alpha", self.alpha.to_string());
        line("beta", self.beta.to_string());
        line("ucb_c", self.ucb_c.to_string());
        line("score_floor", self.score_floor.to_string());
        line("detect_threshold", self.detect_threshold.to_string());
        line("periodic_period", self.periodic_period.to_string());
        line("periodic_duty", self.periodic_duty.to_string());
        line("battery_capacity", self.battery_capacity.to_string());
        line("noise_sigma", self.noise_sigma.to_string());
        line("seed", self.seed.to_string());
        line(
            "energy_cost_range",
            format!("{},{}", self.energy_cost_range.0, self.energy_cost_range.1),
        );
        line("trace_seed", self.trace_seed.to_string());
        line(
            "hierarchy",
            if self.hierarchy { "on" } else { "off" }.to_string(),
        );
        line("interest_lambda", self.interest_lambda.to_string());
        line("interest_mu", self.interest_mu.to_string());
        line("k_dev", self.k_dev.to_string());
        line("event_rate", self.event_rate.to_string());
        line(
            "event_duration",
            format!("{},{}", self.event_duration.0, self.event_duration.1),
        );
        line(
            "event_magnitude",
            format!("{},{}", self.event_magnitude.0, self.event_magnitude.1),
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = SimConfig::default();
        assert_eq!(cfg.clone().validate().unwrap(), cfg);
        assert_eq!(cfg.rounds_per_day(), 96);
    }

    #[test]
    fn accepts_typical_values() {
        let cfg = SimConfig {
            eta: 0.1,
            budget_fraction: 0.65,
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn rejects_eta_out_of_range() {
        let err = SimConfig {
            eta: 1.5,
            ..SimConfig::default()
        }
        .validate()
        .unwrap_err();
        assert_eq!(err.violations().len(), 1);
        assert!(err.to_string().contains("eta ∉ (0,1)"));
    }

    #[test]
    fn rejects_non_divisor_round_minutes() {
        let err = SimConfig {
            round_minutes: 7,
            ..SimConfig::default()
        }
        .validate()
        .unwrap_err();
        assert!(err.to_string().contains("1440 not divisible"));
    }

    #[test]
    fn reports_every_violation() {
        let err = SimConfig {
            eta: 0.0,
            n_zones: 0,
            detect_threshold: 1.0,
            periodic_duty: 9,
            ..SimConfig::default()
        }
        .validate()
        .unwrap_err();
        let fields: Vec<_> = err.violations().iter().map(|v| v.field).collect();
        assert_eq!(
            fields,
            ["n_zones", "eta", "detect_threshold", "periodic_duty"]
        );
    }

    #[test]
    fn drain_identity_and_clamp() {
        let n = SensorNode::new(0, 0, 1.25, 10.0);
        let same = drain_battery(n.clone(), 0.0);
        assert_eq!(same.battery, 10.0);
        assert!(same.alive);

        let low = SensorNode::new(0, 0, 1.25, 1.0);
        let dead = drain_battery(low, 1.25);
        assert_eq!(dead.battery, 0.0);
        assert!(!dead.alive);
    }

    #[test]
    fn static_duty_depletes_capacity_in_180_days() {
        let mut n = SensorNode::new(0, 0, 1.25, 21600.0);
        let mut days = 0;
        while n.alive {
            for _ in 0..96 {
                n = drain_battery(n, 1.25);
            }
            days += 1;
        }
        assert_eq!(days, 180);
    }

    #[test]
    #[should_panic]
    fn negative_drain_panics() {
        drain_battery(SensorNode::new(0, 0, 1.0, 1.0), -0.5);
    }

    #[test]
    fn pollutant_labels() {
        for p in PollutantKind::ALL {
            assert_eq!(p.label().parse::<PollutantKind>().unwrap(), p);
        }
        assert_eq!(
            "PM2.5".parse::<PollutantKind>().unwrap(),
            PollutantKind::Pm25
        );
        assert!("CH4".parse::<PollutantKind>().is_err());
    }

    #[test]
    fn fleet_partition() {
        let cfg = SimConfig {
            n_zones: 4,
            nodes_per_zone: 10,
            ..SimConfig::default()
        };
        let fleet = Fleet::build(&cfg);
        assert_eq!(fleet.len(), 40);
        let total: usize = fleet.zones.iter().map(|z| z.node_ids.len()).sum();
        assert_eq!(total, 40);
        for z in &fleet.zones {
            for &id in &z.node_ids {
                assert_eq!(fleet.nodes[id as usize].zone_id, z.zone_id);
            }
        }
        for n in &fleet.nodes {
            assert!(n.energy_cost >= 0.75 && n.energy_cost <= 1.75);
            assert_eq!(n.utility, 1.0);
        }
        assert_eq!(Fleet::build(&cfg), fleet);
    }

    #[test]
    fn kv_round_trip_and_unknown_key() {
        let cfg = SimConfig {
            eta: 0.25,
            hierarchy: false,
            energy_cost_range: (1.0, 2.0),
            ..SimConfig::default()
        };
        let parsed = SimConfig::from_kv_str(&cfg.to_kv_string()).unwrap();
        assert_eq!(parsed, cfg);

        let err = SimConfig::from_kv_str("# comment\neta = 0.2\nfoo = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey(k) if k == "foo"));
        let err = SimConfig::from_kv_str("eta 0.2").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 1, .. }));
    }
}

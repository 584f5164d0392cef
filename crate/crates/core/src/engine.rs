//! The discrete-time simulation loop.
//!
//! Each round: build per-zone contexts from what has been observed so far,
//! split the budget, let the policy select, drain the selected nodes,
//! synthesize their readings and feedback, and feed that back into the
//! policy. Unselected nodes are dormant: no reading, no feedback, no
//! utility change.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{drain_battery, ConfigError, ContextVector, Fleet, PollutantKind, SimConfig};
use crate::hierarchy::{allocate_budgets, zone_interest};
use crate::policy::{
    select_budgeted, select_periodic, select_static, PolicyKind, PolicyState, SelectionResult,
};
use crate::rng::{Purpose, StreamKey};
use crate::trace::{EventSpec, TraceSet};

pub const RESULT_FORMAT_VERSION: u32 = 1;

/// Observed rounds kept per zone for level and trend.
pub const CONTEXT_WINDOW: usize = 8;

/// Floor on the feedback baseline scale.
pub const SCALE_EPS: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("trace has {have} rounds but the run needs {need}")]
    TraceTooShort { have: usize, need: usize },
    #[error("trace has {have} zones but the config has {want}")]
    ZoneMismatch { have: u32, want: u32 },
    #[error("trace step is {have} minutes but rounds are {want} minutes")]
    StepMismatch { have: u32, want: u32 },
    #[error("serialization failed: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Budget bookkeeping for one cluster in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLog {
    /// `None` for a single global cluster.
    pub zone_id: Option<u32>,
    pub budget: f64,
    pub total_cost: f64,
    pub budgeted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round_index: u32,
    /// Ascending node ids.
    pub selected: Vec<u32>,
    /// Feedback per selected node, parallel to `selected`.
    pub feedback: Vec<f64>,
    /// mAh.
    pub spent: f64,
    pub clusters: Vec<ClusterLog>,
    /// Indices into [`RunResult::events`] detected this round.
    pub detected_events: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub node_id: u32,
    pub zone_id: u32,
    pub energy_cost: f64,
    pub initial_battery: f64,
    pub final_battery: f64,
    pub activations: u64,
    pub death_round: Option<u32>,
    pub utility: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventOutcome {
    pub event: EventSpec,
    pub detected: bool,
    pub first_detection_round: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub format_version: u32,
    pub policy: PolicyKind,
    pub config: SimConfig,
    pub trace_hash: String,
    pub rounds: Vec<RoundLog>,
    pub nodes: Vec<NodeSummary>,
    pub events: Vec<EventOutcome>,
    pub clamped_feedback: u64,
}

impl RunResult {
    pub fn to_json(&self) -> Result<String, EngineError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<RunResult, EngineError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Streams `round,policy,zone,node,selected,spent_mAh,feedback`, one row per node per round.
    pub fn write_round_csv<W: Write>(&self, mut w: W) -> Result<(), EngineError> {
        writeln!(w, "round,policy,zone,node,selected,spent_mAh,feedback")?;
        for log in &self.rounds {
            let mut sel = log.selected.iter().zip(&log.feedback).peekable();
            for n in &self.nodes {
                match sel.peek() {
                    Some((&id, &fb)) if id == n.node_id => {
                        writeln!(
                            w,
                            "{},{},{},{},1,{},{}",
                            log.round_index, self.policy, n.zone_id, n.node_id, n.energy_cost, fb
                        )?;
                        sel.next();
                    }
                    _ => writeln!(
                        w,
                        "{},{},{},{},0,0,",
                        log.round_index, self.policy, n.zone_id, n.node_id
                    )?,
                }
            }
        }
        Ok(())
    }
}

/// Multiplicative Gaussian noise, floored at zero.
pub fn sensor_reading<R: Rng + ?Sized>(true_value: f64, noise_sigma: f64, rng: &mut R) -> f64 {
    if noise_sigma == 0.0 || true_value == 0.0 {
        return true_value.max(0.0);
    }
    let eps: f64 = rng.sample(StandardNormal);
    (true_value * (1.0 + noise_sigma * eps)).max(0.0)
}

/// Relative deviation from the baseline, saturating at 1 when the
/// deviation reaches `k_dev` times the scale.
pub fn feedback_proxy(measured: f64, baseline: f64, baseline_scale: f64, k_dev: f64) -> f64 {
    debug_assert!(baseline_scale > 0.0);
    ((measured - baseline).abs() / (k_dev * baseline_scale)).clamp(0.0, 1.0)
}

/// What the coordinator has seen of one zone.
#[derive(Debug, Clone)]
struct ZoneObserver {
    /// Per-round `(sum, count)` per pollutant over the last day of rounds.
    day: VecDeque<(u32, [f64; PollutantKind::COUNT], u32)>,
    day_sum: [f64; PollutantKind::COUNT],
    day_count: u32,
    /// Per observed round `(round, mean)` for context.
    recent: VecDeque<(u32, [f64; PollutantKind::COUNT])>,
}

impl ZoneObserver {
    fn new() -> Self {
        ZoneObserver {
            day: VecDeque::new(),
            day_sum: [0.0; PollutantKind::COUNT],
            day_count: 0,
            recent: VecDeque::with_capacity(CONTEXT_WINDOW + 1),
        }
    }

    fn expire(&mut self, round: u32, window: u32) {
        while let Some(&(r, sums, count)) = self.day.front() {
            if r + window > round {
                break;
            }
            for (s, x) in self.day_sum.iter_mut().zip(&sums) {
                *s -= x;
            }
            self.day_count -= count;
            self.day.pop_front();
        }
        if self.day.is_empty() {
            // drop accumulated round-off
            self.day_sum = [0.0; PollutantKind::COUNT];
        }
    }

    fn baseline(&self) -> Option<[f64; PollutantKind::COUNT]> {
        if self.day_count == 0 {
            return None;
        }
        let n = self.day_count as f64;
        Some(self.day_sum.map(|s| s / n))
    }

    fn record(&mut self, round: u32, sums: [f64; PollutantKind::COUNT], count: u32) {
        if count == 0 {
            return;
        }
        self.day.push_back((round, sums, count));
        for (s, x) in self.day_sum.iter_mut().zip(&sums) {
            *s += x;
        }
        self.day_count += count;
        self.recent
            .push_back((round, sums.map(|s| s / count as f64)));
        if self.recent.len() > CONTEXT_WINDOW {
            self.recent.pop_front();
        }
    }

    fn level_and_trend(&self) -> ([f64; PollutantKind::COUNT], [f64; PollutantKind::COUNT]) {
        let n = self.recent.len();
        let mut level = [0.0; PollutantKind::COUNT];
        let mut trend = [0.0; PollutantKind::COUNT];
        if n == 0 {
            return (level, trend);
        }
        let mean_x = self.recent.iter().map(|(r, _)| *r as f64).sum::<f64>() / n as f64;
        let sxx: f64 = self
            .recent
            .iter()
            .map(|(r, _)| (*r as f64 - mean_x).powi(2))
            .sum();
        for p in 0..PollutantKind::COUNT {
            level[p] = self.recent.iter().map(|(_, v)| v[p]).sum::<f64>() / n as f64;
            if sxx > 0.0 {
                let sxy: f64 = self
                    .recent
                    .iter()
                    .map(|(r, v)| (*r as f64 - mean_x) * (v[p] - level[p]))
                    .sum();
                trend[p] = sxy / sxx;
            }
        }
        (level, trend)
    }
}

fn build_context(
    cfg: &SimConfig,
    fleet: &Fleet,
    zone: u32,
    round: u32,
    obs: &ZoneObserver,
) -> ContextVector {
    let (recent_level, trend) = obs.level_and_trend();
    let members = &fleet.zones[zone as usize].node_ids;
    let energy_summary = if members.is_empty() {
        0.0
    } else {
        members
            .iter()
            .map(|&id| fleet.nodes[id as usize].battery / cfg.battery_capacity)
            .sum::<f64>()
            / members.len() as f64
    };
    ContextVector {
        round_index: round,
        time_of_day_slot: round % cfg.rounds_per_day(),
        zone_id: zone,
        recent_level,
        trend,
        energy_summary: energy_summary.clamp(0.0, 1.0),
        observed_rounds: obs.recent.len(),
    }
}

fn select_round(
    cfg: &SimConfig,
    fleet: &Fleet,
    state: &PolicyState,
    round: u32,
    observers: &[ZoneObserver],
) -> (Vec<u32>, Vec<ClusterLog>) {
    let unbudgeted = |r: SelectionResult| {
        let log = ClusterLog {
            zone_id: None,
            budget: r.budget,
            total_cost: r.total_cost,
            budgeted: false,
        };
        (r.selected, vec![log])
    };
    match state.kind {
        PolicyKind::Static => unbudgeted(select_static(&fleet.nodes)),
        PolicyKind::Periodic => unbudgeted(select_periodic(
            &fleet.nodes,
            round,
            cfg.periodic_period,
            cfg.periodic_duty,
        )),
        PolicyKind::Ucb | PolicyKind::AdaptiveUtility => {
            let global = cfg.budget_fraction * fleet.alive_cost();
            let floor = state.score_floor(cfg);
            if state.kind == PolicyKind::AdaptiveUtility && cfg.hierarchy {
                let contexts: Vec<ContextVector> = (0..cfg.n_zones)
                    .map(|z| build_context(cfg, fleet, z, round, &observers[z as usize]))
                    .collect();
                let weights = zone_interest(&contexts, cfg.interest_lambda, cfg.interest_mu);
                let pairs: Vec<(u32, f64)> = (0..cfg.n_zones).zip(weights).collect();
                let mut selected = Vec::new();
                let mut logs = Vec::with_capacity(pairs.len());
                for cb in allocate_budgets(global, &pairs) {
                    let members = fleet.zones[cb.zone_id as usize]
                        .node_ids
                        .iter()
                        .map(|&id| &fleet.nodes[id as usize])
                        .filter(|n| n.alive);
                    let r = select_budgeted(&state.candidates(members), cb.budget, floor);
                    logs.push(ClusterLog {
                        zone_id: Some(cb.zone_id),
                        budget: r.budget,
                        total_cost: r.total_cost,
                        budgeted: true,
                    });
                    selected.extend(r.selected);
                }
                (selected, logs)
            } else {
                let r = select_budgeted(
                    &state.candidates(fleet.nodes.iter().filter(|n| n.alive)),
                    global,
                    floor,
                );
                let log = ClusterLog {
                    zone_id: None,
                    budget: r.budget,
                    total_cost: r.total_cost,
                    budgeted: true,
                };
                (r.selected, vec![log])
            }
        }
    }
}

/// Runs one policy over `cfg.rounds` rounds of `traces`.
pub fn run_simulation(
    cfg: &SimConfig,
    traces: &TraceSet,
    kind: PolicyKind,
) -> Result<RunResult, EngineError> {
    let cfg = cfg.clone().validate()?;
    if traces.len() < cfg.rounds as usize {
        return Err(EngineError::TraceTooShort {
            have: traces.len(),
            need: cfg.rounds as usize,
        });
    }
    if traces.n_zones != cfg.n_zones {
        return Err(EngineError::ZoneMismatch {
            have: traces.n_zones,
            want: cfg.n_zones,
        });
    }
    if cfg.rounds > 0 && traces.step_minutes != cfg.round_minutes {
        return Err(EngineError::StepMismatch {
            have: traces.step_minutes,
            want: cfg.round_minutes,
        });
    }
    Ok(simulate(&cfg, Fleet::build(&cfg), traces, kind))
}

/// Runs on an explicit fleet (which must match `cfg`'s zone count).
pub fn simulate(
    cfg: &SimConfig,
    mut fleet: Fleet,
    traces: &TraceSet,
    kind: PolicyKind,
) -> RunResult {
    let rpd = cfg.rounds_per_day();
    let mut state = PolicyState::new(kind, fleet.len(), cfg);
    let mut observers = vec![ZoneObserver::new(); fleet.zones.len()];
    let initial: Vec<f64> = fleet.nodes.iter().map(|n| n.battery).collect();
    let mut death_round: Vec<Option<u32>> = vec![None; fleet.len()];
    let mut rounds = Vec::with_capacity(cfg.rounds as usize);

    for t in 0..cfg.rounds {
        for obs in observers.iter_mut() {
            obs.expire(t, rpd);
        }
        let (mut selected, clusters) = select_round(cfg, &fleet, &state, t, &observers);
        selected.sort_unstable();

        let frame = &traces.frames[t as usize];
        let mut spent = 0.0;
        let mut feedback = Vec::with_capacity(selected.len());
        let mut round_sums = vec![([0.0; PollutantKind::COUNT], 0u32); fleet.zones.len()];
        let mut first_obs: Vec<Option<[f64; PollutantKind::COUNT]>> = vec![None; fleet.zones.len()];

        for &id in &selected {
            let node = &fleet.nodes[id as usize];
            debug_assert!(node.alive);
            spent += node.energy_cost;
            let zone = node.zone_id;
            let mut rng = StreamKey::new(cfg.seed, Purpose::Reading)
                .round(t)
                .node(id)
                .rng();
            let truth = frame.zone(zone);
            let measured: [f64; PollutantKind::COUNT] =
                std::array::from_fn(|p| sensor_reading(truth[p], cfg.noise_sigma, &mut rng));
            let z = zone as usize;
            let baseline = observers[z]
                .baseline()
                .unwrap_or_else(|| *first_obs[z].get_or_insert(measured));
            let fb = measured
                .iter()
                .zip(&baseline)
                .map(|(&m, &b)| feedback_proxy(m, b, b.max(SCALE_EPS), cfg.k_dev))
                .fold(0.0, f64::max);
            feedback.push(fb);
            let (sums, count) = &mut round_sums[z];
            for (s, m) in sums.iter_mut().zip(&measured) {
                *s += m;
            }
            *count += 1;

            let cost = fleet.nodes[id as usize].energy_cost;
            let mut n = drain_battery(fleet.nodes[id as usize].clone(), cost);
            if !n.alive {
                death_round[id as usize] = Some(t);
            }
            state.observe(&mut n, fb);
            fleet.nodes[id as usize] = n;
        }
        for (z, (sums, count)) in round_sums.into_iter().enumerate() {
            observers[z].record(t, sums, count);
        }
        state.advance();
        rounds.push(RoundLog {
            round_index: t,
            selected,
            feedback,
            spent,
            clusters,
            detected_events: Vec::new(),
        });
    }

    let nodes = fleet
        .nodes
        .iter()
        .map(|n| NodeSummary {
            node_id: n.node_id,
            zone_id: n.zone_id,
            energy_cost: n.energy_cost,
            initial_battery: initial[n.node_id as usize],
            final_battery: n.battery,
            activations: n.pull_count,
            death_round: death_round[n.node_id as usize],
            utility: n.utility,
            mean_reward: n.mean_reward,
        })
        .collect();

    let run = RunResult {
        format_version: RESULT_FORMAT_VERSION,
        policy: kind,
        config: cfg.clone(),
        trace_hash: traces.content_hash(),
        rounds,
        nodes,
        events: Vec::new(),
        clamped_feedback: state.clamped_feedback,
    };
    mark_detections(run, &traces.events, cfg.detect_threshold)
}

/// Flags each event detected when some activated node in its zone reported
/// feedback at or above `detect_threshold` inside the event window.
pub fn mark_detections(
    mut run: RunResult,
    events: &[EventSpec],
    detect_threshold: f64,
) -> RunResult {
    for log in &mut run.rounds {
        log.detected_events.clear();
    }
    let zone_of: Vec<u32> = run.nodes.iter().map(|n| n.zone_id).collect();
    let mut outcomes = Vec::with_capacity(events.len());
    for (idx, e) in events.iter().enumerate() {
        let mut first = None;
        let end = (e.end_round as usize).min(run.rounds.len());
        for log in run.rounds[(e.start_round as usize).min(end)..end].iter_mut() {
            let hit = log
                .selected
                .iter()
                .zip(&log.feedback)
                .any(|(&id, &fb)| zone_of[id as usize] == e.zone_id && fb >= detect_threshold);
            if hit {
                log.detected_events.push(idx);
                first.get_or_insert(log.round_index);
            }
        }
        outcomes.push(EventOutcome {
            event: e.clone(),
            detected: first.is_some(),
            first_detection_round: first,
        });
    }
    run.events = outcomes;
    run
}

//! Sensor activation policies.
//!
//! Four policies share one selection vocabulary: a policy turns the alive
//! nodes of a cluster into scored [`Candidate`]s (or selects outright, for
//! the unbudgeted baselines) and [`select_budgeted`] packs them under an
//! energy budget.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{SensorNode, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyKind {
    Static,
    Periodic,
    Ucb,
    AdaptiveUtility,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Static,
        PolicyKind::Periodic,
        PolicyKind::Ucb,
        PolicyKind::AdaptiveUtility,
    ];

    /// CLI name.
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Static => "static",
            PolicyKind::Periodic => "periodic",
            PolicyKind::Ucb => "ucb",
            PolicyKind::AdaptiveUtility => "adaptive",
        }
    }

    /// Row label in rendered tables.
    pub fn display_label(self) -> &'static str {
        match self {
            PolicyKind::Static => "Static Sensing",
            PolicyKind::Periodic => "Periodic Sensing",
            PolicyKind::Ucb => "UCB-Based Sensing",
            PolicyKind::AdaptiveUtility => "Adaptive Utility",
        }
    }

    pub fn is_budgeted(self) -> bool {
        matches!(self, PolicyKind::Ucb | PolicyKind::AdaptiveUtility)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown policy {0:?}; valid policies: static, periodic, ucb, adaptive")]
pub struct UnknownPolicy(pub String);

impl FromStr for PolicyKind {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| UnknownPolicy(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub node_id: u32,
    pub score: f64,
    pub energy_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected: Vec<u32>,
    /// mAh.
    pub total_cost: f64,
    /// mAh. For unbudgeted policies this equals `total_cost`.
    pub budget: f64,
}

/// Sensing reward `alpha * info_gain - beta * energy_cost`.
pub fn reward(info_gain: f64, energy_cost: f64, alpha: f64, beta: f64) -> f64 {
    alpha * info_gain - beta * energy_cost
}

/// Expected information per unit energy.
pub fn score(utility: f64, energy_cost: f64) -> f64 {
    assert!(
        energy_cost > 0.0,
        "energy_cost must be positive, got {energy_cost}"
    );
    utility / energy_cost
}

fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.node_id.cmp(&b.node_id))
}

/// Greedy packing by descending score (ties: ascending node id).
///
/// Candidates below `score_floor` are never admitted. A candidate that does
/// not fit the remaining budget is skipped and the scan continues, so the
/// number selected falls out of the budget and costs.
pub fn select_budgeted(candidates: &[Candidate], budget: f64, score_floor: f64) -> SelectionResult {
    let mut order: Vec<&Candidate> = candidates.iter().collect();
    order.sort_unstable_by(|a, b| rank(a, b));
    let mut selected = Vec::new();
    let mut total = 0.0;
    for c in order {
        if c.score < score_floor {
            break;
        }
        if total + c.energy_cost <= budget {
            total += c.energy_cost;
            selected.push(c.node_id);
        }
    }
    SelectionResult {
        selected,
        total_cost: total,
        budget,
    }
}

/// Exponential moving average of the feedback signal.
///
/// Feedback outside `[0, 1]` is clamped before use.
pub fn update_utility(utility: f64, feedback: f64, eta: f64) -> f64 {
    debug_assert!(eta > 0.0 && eta <= 1.0, "eta must lie in (0, 1]");
    let feedback = feedback.clamp(0.0, 1.0);
    if eta == 1.0 {
        return feedback;
    }
    ((1.0 - eta) * utility + eta * feedback).clamp(0.0, 1.0)
}

fn unbudgeted<'a>(nodes: impl Iterator<Item = &'a SensorNode>) -> SelectionResult {
    let mut selected = Vec::new();
    let mut total = 0.0;
    for n in nodes {
        selected.push(n.node_id);
        total += n.energy_cost;
    }
    SelectionResult {
        selected,
        total_cost: total,
        budget: total,
    }
}

/// Every alive node.
pub fn select_static(fleet: &[SensorNode]) -> SelectionResult {
    unbudgeted(fleet.iter().filter(|n| n.alive))
}

/// Alive nodes whose staggered phase `(round + node_id) % period` is below `duty`.
pub fn select_periodic(
    fleet: &[SensorNode],
    round: u32,
    period: u32,
    duty: u32,
) -> SelectionResult {
    assert!(duty > 0 && duty <= period, "require 0 < duty <= period");
    let period = period as u64;
    let duty = duty as u64;
    unbudgeted(
        fleet
            .iter()
            .filter(|n| n.alive && (round as u64 + n.node_id as u64) % period < duty),
    )
}

/// UCB1 index; an untried node gets `+inf`.
pub fn ucb_index(mean_reward: f64, count: u64, round: u64, c: f64) -> f64 {
    if count == 0 {
        return f64::INFINITY;
    }
    ucb_index_at(mean_reward, count, (round.max(1) as f64).ln(), c)
}

fn ucb_index_at(mean_reward: f64, count: u64, ln_round: f64, c: f64) -> f64 {
    if count == 0 {
        return f64::INFINITY;
    }
    if c == 0.0 {
        return mean_reward;
    }
    mean_reward + c * (2.0 * ln_round / count as f64).sqrt()
}

/// Affine map taking the raw reward range onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffScale {
    pub alpha: f64,
    pub beta: f64,
    pub max_energy: f64,
}

impl PayoffScale {
    pub fn new(alpha: f64, beta: f64, max_energy: f64) -> Self {
        PayoffScale {
            alpha,
            beta,
            max_energy,
        }
    }

    /// With feedback in `[0,1]` and cost in `(0, max_energy]` the raw reward
    /// lies in `[-beta*max_energy, alpha]`.
    pub fn normalize(&self, raw: f64) -> f64 {
        let lo = -self.beta * self.max_energy;
        let span = self.alpha - lo;
        if span <= 0.0 {
            return 0.0;
        }
        ((raw - lo) / span).clamp(0.0, 1.0)
    }
}

/// Mutable learning state of one policy within one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub kind: PolicyKind,
    pub utilities: Vec<f64>,
    pub ucb_means: Vec<f64>,
    pub ucb_counts: Vec<u64>,
    /// Completed rounds.
    pub round: u64,
    /// Feedback values that arrived outside `[0, 1]` and were clamped.
    pub clamped_feedback: u64,
    pub payoff: PayoffScale,
    eta: f64,
    ucb_c: f64,
}

impl PolicyState {
    pub fn new(kind: PolicyKind, n_nodes: usize, cfg: &SimConfig) -> Self {
        PolicyState {
            kind,
            utilities: vec![1.0; n_nodes],
            ucb_means: vec![0.0; n_nodes],
            ucb_counts: vec![0; n_nodes],
            round: 0,
            clamped_feedback: 0,
            payoff: PayoffScale::new(cfg.alpha, cfg.beta, cfg.energy_cost_range.1),
            eta: cfg.eta,
            ucb_c: cfg.ucb_c,
        }
    }

    /// Cost-normalized scores for the given alive nodes.
    ///
    /// Panics for the unbudgeted kinds, which do not score.
    pub fn candidates<'a>(&self, nodes: impl Iterator<Item = &'a SensorNode>) -> Vec<Candidate> {
        match self.kind {
            PolicyKind::AdaptiveUtility => nodes
                .map(|n| Candidate {
                    node_id: n.node_id,
                    score: score(self.utilities[n.node_id as usize], n.energy_cost),
                    energy_cost: n.energy_cost,
                })
                .collect(),
            PolicyKind::Ucb => {
                // UCB rounds are 1-based
                let ln_round = ((self.round + 1) as f64).ln();
                nodes
                    .map(|n| {
                        let i = n.node_id as usize;
                        let idx = ucb_index_at(
                            self.ucb_means[i],
                            self.ucb_counts[i],
                            ln_round,
                            self.ucb_c,
                        );
                        Candidate {
                            node_id: n.node_id,
                            score: score(idx, n.energy_cost),
                            energy_cost: n.energy_cost,
                        }
                    })
                    .collect()
            }
            kind => panic!("{kind} policy does not score candidates"),
        }
    }

    /// Score floor applied at selection. Only the adaptive policy uses one.
    pub fn score_floor(&self, cfg: &SimConfig) -> f64 {
        match self.kind {
            PolicyKind::AdaptiveUtility => cfg.score_floor,
            _ => 0.0,
        }
    }

    /// Folds in the feedback of one activated node.
    pub fn observe(&mut self, node: &mut SensorNode, feedback: f64) {
        if !(0.0..=1.0).contains(&feedback) {
            self.clamped_feedback += 1;
        }
        let i = node.node_id as usize;
        match self.kind {
            PolicyKind::AdaptiveUtility => {
                self.utilities[i] = update_utility(self.utilities[i], feedback, self.eta);
                node.utility = self.utilities[i];
            }
            PolicyKind::Ucb => {
                let f = feedback.clamp(0.0, 1.0);
                let raw = reward(f, node.energy_cost, self.payoff.alpha, self.payoff.beta);
                let payoff = self.payoff.normalize(raw);
                self.ucb_counts[i] += 1;
                let n = self.ucb_counts[i] as f64;
                self.ucb_means[i] += (payoff - self.ucb_means[i]) / n;
                node.mean_reward = self.ucb_means[i];
            }
            PolicyKind::Static | PolicyKind::Periodic => {}
        }
        node.pull_count += 1;
    }

    pub fn advance(&mut self) {
        self.round += 1;
    }
}

//! Two-stage budget split: the round budget is first divided across zone
//! clusters by how interesting each zone currently looks, then each cluster
//! runs its own budgeted selection.

use serde::{Deserialize, Serialize};

use crate::config::{ContextVector, PollutantKind};

/// Levels below this are treated as this when forming relative slopes.
const LEVEL_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterBudget {
    pub zone_id: u32,
    pub weight: f64,
    /// mAh.
    pub budget: f64,
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect()
}

/// `1 + lambda * trend + mu * level` with both terms min-max normalized
/// across zones.
pub fn interest_weights(
    trend_magnitude: &[f64],
    recent_level: &[f64],
    lambda: f64,
    mu: f64,
) -> Vec<f64> {
    assert_eq!(trend_magnitude.len(), recent_level.len());
    let t = min_max(trend_magnitude);
    let l = min_max(recent_level);
    t.iter()
        .zip(&l)
        .map(|(t, l)| 1.0 + lambda * t + mu * l)
        .collect()
}

/// Per-zone interest weights from this round's contexts, in input order.
///
/// Trend magnitude is the largest relative slope over pollutants; recent
/// level is the mean over pollutants of the zone's level relative to the
/// cross-zone mean. A zone with no observed history contributes zeros.
pub fn zone_interest(contexts: &[ContextVector], lambda: f64, mu: f64) -> Vec<f64> {
    let n = contexts.len();
    let mut cross_mean = [0.0; PollutantKind::COUNT];
    for c in contexts {
        for (m, v) in cross_mean.iter_mut().zip(&c.recent_level) {
            *m += v / n as f64;
        }
    }
    let mut trend = Vec::with_capacity(n);
    let mut level = Vec::with_capacity(n);
    for c in contexts {
        if c.observed_rounds == 0 {
            trend.push(0.0);
            level.push(0.0);
            continue;
        }
        let tm = c
            .trend
            .iter()
            .zip(&c.recent_level)
            .map(|(s, l)| s.abs() / l.max(LEVEL_EPS))
            .fold(0.0, f64::max);
        let lv = c
            .recent_level
            .iter()
            .zip(&cross_mean)
            .map(|(l, m)| if *m > 0.0 { l / m } else { 0.0 })
            .sum::<f64>()
            / PollutantKind::COUNT as f64;
        trend.push(tm);
        level.push(lv);
    }
    interest_weights(&trend, &level, lambda, mu)
}

/// Splits `global_budget` in proportion to `weights` (`(zone_id, weight)`).
///
/// All-zero weights fall back to an equal split.
pub fn allocate_budgets(global_budget: f64, weights: &[(u32, f64)]) -> Vec<ClusterBudget> {
    assert!(global_budget >= 0.0, "global budget must be non-negative");
    assert!(
        weights.iter().all(|(_, w)| w.is_finite() && *w >= 0.0),
        "weights must be finite and non-negative"
    );
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        if !weights.is_empty() {
            log::warn!("all cluster weights are zero; splitting budget equally");
        }
        let share = global_budget / weights.len().max(1) as f64;
        return weights
            .iter()
            .map(|&(zone_id, weight)| ClusterBudget {
                zone_id,
                weight,
                budget: share,
            })
            .collect();
    }
    weights
        .iter()
        .map(|&(zone_id, weight)| ClusterBudget {
            zone_id,
            weight,
            budget: global_budget * (weight / total),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ctx(zone_id: u32, level: f64, slope: f64) -> ContextVector {
        ContextVector {
            round_index: 10,
            time_of_day_slot: 10,
            zone_id,
            recent_level: [level; PollutantKind::COUNT],
            trend: [slope; PollutantKind::COUNT],
            energy_summary: 1.0,
            observed_rounds: 8,
        }
    }

    #[test]
    fn identical_zones_weigh_equally() {
        let w = zone_interest(
            &[ctx(0, 5.0, 0.1), ctx(1, 5.0, 0.1), ctx(2, 5.0, 0.1)],
            1.0,
            1.0,
        );
        assert!(w.iter().all(|&x| x == w[0]));
    }

    #[test]
    fn doubled_pollutant_wins() {
        let mut hot = ctx(1, 5.0, 0.0);
        hot.recent_level[PollutantKind::No2.index()] = 10.0;
        let w = zone_interest(&[ctx(0, 5.0, 0.0), hot, ctx(2, 5.0, 0.0)], 1.0, 1.0);
        assert!(w[1] > w[0] && w[1] > w[2]);
    }

    #[test]
    fn trend_only_weights() {
        assert_eq!(
            interest_weights(&[0.0, 0.5, 1.0], &[3.0, 3.0, 3.0], 1.0, 0.0),
            [1.0, 1.5, 2.0]
        );
    }

    #[test]
    fn unobserved_zone_contributes_nothing() {
        let mut empty = ctx(0, 0.0, 0.0);
        empty.observed_rounds = 0;
        let w = zone_interest(&[empty, ctx(1, 5.0, 0.2)], 1.0, 1.0);
        assert_eq!(w, [1.0, 3.0]);
    }

    #[test]
    fn equal_split() {
        let b = allocate_budgets(100.0, &[(0, 1.0), (1, 1.0), (2, 1.0), (3, 1.0)]);
        assert!(b.iter().all(|c| c.budget == 25.0));
    }

    #[test]
    fn proportional_split() {
        let b = allocate_budgets(100.0, &[(0, 1.0), (1, 3.0)]);
        assert_eq!((b[0].budget, b[1].budget), (25.0, 75.0));
    }

    #[test]
    fn zero_weights_fall_back() {
        let b = allocate_budgets(9.0, &[(0, 0.0), (1, 0.0), (2, 0.0)]);
        assert!(b.iter().all(|c| c.budget == 3.0));
    }

    #[test]
    fn zero_weight_gets_nothing() {
        let b = allocate_budgets(9.0, &[(0, 0.0), (1, 2.0)]);
        assert_eq!(b[0].budget, 0.0);
        assert_eq!(b[1].budget, 9.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn allocations_sum_to_budget(budget in 0.0f64..1e4, w in prop::collection::vec(0.0f64..10.0, 1..30)) {
            prop_assume!(w.iter().any(|&x| x > 0.0));
            let weights: Vec<_> = w.iter().enumerate().map(|(i, &x)| (i as u32, x)).collect();
            let b = allocate_budgets(budget, &weights);
            let sum: f64 = b.iter().map(|c| c.budget).sum();
            prop_assert!((sum - budget).abs() <= 1e-9 * budget.max(1e-300));
        }

        #[test]
        fn homogeneous_and_scale_invariant(budget in 0.1f64..1e3, k in 0.1f64..10.0, w in prop::collection::vec(0.01f64..10.0, 1..10)) {
            let weights: Vec<_> = w.iter().enumerate().map(|(i, &x)| (i as u32, x)).collect();
            let scaled: Vec<_> = w.iter().enumerate().map(|(i, &x)| (i as u32, x * k)).collect();
            let base = allocate_budgets(budget, &weights);
            let by_w = allocate_budgets(budget, &scaled);
            let by_b = allocate_budgets(budget * k, &weights);
            for i in 0..w.len() {
                prop_assert!((base[i].budget - by_w[i].budget).abs() <= 1e-9 * budget);
                prop_assert!((base[i].budget * k - by_b[i].budget).abs() <= 1e-9 * budget * k);
            }
        }
    }
}

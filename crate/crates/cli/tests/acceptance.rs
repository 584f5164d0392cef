//! Acceptance criteria, one line per criterion. Exits nonzero if any fail.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use edgesense_core::metrics::{format_percent, lifetime_estimate, summarize, PolicyRow};
use edgesense_core::policy::{select_budgeted, update_utility, Candidate};
use edgesense_core::trace::{self, interpolate};
use edgesense_core::{
    compare, run_simulation, Lifetime, PolicyKind, PollutantKind, RunResult, SimConfig, TraceFrame,
    TraceSet,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_edgesense");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn desk_config() -> SimConfig {
    SimConfig {
        n_zones: 4,
        nodes_per_zone: 10,
        rounds: 2880,
        ..SimConfig::default()
    }
}

struct DeskRuns {
    runs: Vec<RunResult>,
    elapsed: Duration,
}

fn desk_runs() -> DeskRuns {
    let start = Instant::now();
    let base = desk_config();
    let traces = trace::build_synthetic(&base).expect("synthetic trace");
    let mut runs = Vec::new();
    for seed in 1..=5 {
        let cfg = SimConfig {
            seed,
            ..base.clone()
        };
        for kind in PolicyKind::ALL {
            runs.push(run_simulation(&cfg, &traces, kind).expect("desk run"));
        }
    }
    DeskRuns {
        runs,
        elapsed: start.elapsed(),
    }
}

fn lifetime_table() -> Outcome {
    let got: Vec<Lifetime> = [120.0, 95.0, 76.0, 70.0]
        .iter()
        .map(|&e| lifetime_estimate(21600.0, e))
        .collect();
    let want = [180, 227, 284, 309].map(Lifetime::Days);
    outcome(got == want, format!("{got:?}"))
}

fn percentage_round_trip() -> Outcome {
    let rows: Vec<PolicyRow> = PolicyKind::ALL
        .iter()
        .zip([120.0, 95.0, 76.0, 70.0])
        .map(|(&policy, avg_daily_energy)| PolicyRow {
            policy,
            avg_daily_energy,
            detection_rate: None,
        })
        .collect();
    let s = summarize(&rows, 21600.0);
    // reference strings use whole percents except the UCB reduction
    let reductions = [
        format_percent(s[1].reduction_vs_static.unwrap_or(f64::NAN), 0, false),
        format_percent(s[2].reduction_vs_static.unwrap_or(f64::NAN), 1, false),
        format_percent(s[3].reduction_vs_static.unwrap_or(f64::NAN), 0, false),
    ];
    let extensions: Vec<String> = s[1..]
        .iter()
        .map(|r| format_percent(r.extension_vs_static.unwrap_or(f64::NAN), 1, true))
        .collect();
    let pass =
        reductions == ["21%", "36.7%", "42%"] && extensions == ["+26.1%", "+57.8%", "+71.7%"];
    outcome(
        pass,
        format!("reductions {reductions:?}, extensions {extensions:?}"),
    )
}

fn policy_means(runs: &[RunResult]) -> BTreeMap<&'static str, (f64, f64)> {
    let cmp = compare(runs).expect("comparison");
    PolicyKind::ALL
        .iter()
        .filter_map(|&k| {
            cmp.get(k).map(|s| {
                (
                    k.name(),
                    (s.avg_daily_energy, s.detection_rate.unwrap_or(f64::NAN)),
                )
            })
        })
        .collect()
}

fn energy_ordering(desk: &DeskRuns) -> Outcome {
    let m = policy_means(&desk.runs);
    let e: Vec<f64> = ["static", "periodic", "ucb", "adaptive"]
        .iter()
        .map(|k| m[k].0)
        .collect();
    let gaps: Vec<f64> = e.windows(2).map(|w| (w[0] - w[1]) / w[0]).collect();
    let pass = gaps.iter().all(|&g| g >= 0.05) && desk.elapsed < Duration::from_secs(10);
    outcome(
        pass,
        format!(
            "static {:.1} > periodic {:.1} > ucb {:.1} > adaptive {:.1} mAh/day; gaps {:.1}%, {:.1}%, {:.1}%; 20 runs in {:.1}s",
            e[0],
            e[1],
            e[2],
            e[3],
            gaps[0] * 100.0,
            gaps[1] * 100.0,
            gaps[2] * 100.0,
            desk.elapsed.as_secs_f64()
        ),
    )
}

fn detection_ordering(desk: &DeskRuns) -> Outcome {
    let m = policy_means(&desk.runs);
    let (st, ucb, ad) = (m["static"].1, m["ucb"].1, m["adaptive"].1);
    let vs_ucb = ad >= ucb - 0.02;
    let vs_static = ad - st >= 0.05;
    outcome(
        vs_ucb && vs_static,
        format!(
            "adaptive {:.3}, ucb {:.3}, static {:.3}; adaptive >= ucb - 0.02: {vs_ucb}; adaptive - static >= 0.05: {vs_static}",
            ad, ucb, st
        ),
    )
}

fn budget_safety(desk: &DeskRuns) -> Outcome {
    let mut checked = 0usize;
    let mut violations = 0usize;
    for run in &desk.runs {
        for log in &run.rounds {
            for c in log.clusters.iter().filter(|c| c.budgeted) {
                checked += 1;
                if c.total_cost > c.budget {
                    violations += 1;
                }
            }
        }
    }
    outcome(
        checked > 0 && violations == 0,
        format!("{violations} violations over {checked} budgeted selections"),
    )
}

/// Repeatedly takes the best remaining candidate by linear scan.
fn naive_select(candidates: &[Candidate], budget: f64, floor: f64) -> Vec<u32> {
    let mut left: Vec<Candidate> = candidates.to_vec();
    let mut chosen = Vec::new();
    let mut used = 0.0;
    while !left.is_empty() {
        let mut best = 0;
        for i in 1..left.len() {
            let (a, b) = (&left[i], &left[best]);
            if a.score > b.score || (a.score == b.score && a.node_id < b.node_id) {
                best = i;
            }
        }
        let c = left.remove(best);
        if c.score < floor {
            break;
        }
        if used + c.energy_cost <= budget {
            used += c.energy_cost;
            chosen.push(c.node_id);
        }
    }
    chosen
}

fn selection_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1ec7);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(0..=12);
        let candidates: Vec<Candidate> = (0..n)
            .map(|id| {
                let energy_cost = rng.random_range(0.5..2.0);
                // coarse utilities make score ties common
                let utility = rng.random_range(0..=4) as f64 / 4.0;
                Candidate {
                    node_id: id,
                    score: utility / energy_cost,
                    energy_cost,
                }
            })
            .collect();
        let budget = rng.random_range(0.0..8.0);
        let floor = if rng.random_bool(0.5) { 0.0 } else { 0.12 };
        if select_budgeted(&candidates, budget, floor).selected
            != naive_select(&candidates, budget, floor)
        {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} mismatches over 1000 instances"),
    )
}

fn ema_safety() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut out_of_range = 0;
    let mut eta_one = 0;
    let mut eta_zero = 0;
    for _ in 0..100_000 {
        let u: f64 = rng.random_range(0.0..=1.0);
        let fb: f64 = rng.random_range(0.0..=1.0);
        let eta: f64 = rng.random_range(f64::EPSILON..=1.0);
        let next = update_utility(u, fb, eta);
        if !(0.0..=1.0).contains(&next) {
            out_of_range += 1;
        }
        if update_utility(u, fb, 1.0) != fb {
            eta_one += 1;
        }
        if update_utility(u, fb, f64::MIN_POSITIVE) != u {
            eta_zero += 1;
        }
    }
    outcome(
        out_of_range + eta_one + eta_zero == 0,
        format!(
            "out of range {out_of_range}, eta=1 mismatches {eta_one}, eta->0 mismatches {eta_zero}"
        ),
    )
}

fn run_compare(out: &Path) -> Result<(), String> {
    let status = Command::new(BIN)
        .args([
            "compare",
            "--seeds",
            "1-2",
            "--jobs",
            "2",
            "--set",
            "n_zones=4",
            "--set",
            "nodes_per_zone=10",
            "--set",
            "rounds=960",
        ])
        .arg("--out")
        .arg(out)
        .env("EDGESENSE_LOG", "quiet")
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(String::from_utf8_lossy(&status.stderr).into_owned());
    }
    Ok(())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    if let Err(e) = run_compare(&a).and_then(|_| run_compare(&b)) {
        return outcome(false, format!("compare failed: {e}"));
    }
    let files = [
        "summary.json",
        "summary.csv",
        "summary.txt",
        "plot.csv",
        "per_seed.csv",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| {
            fs::read(a.join(f)).ok() != fs::read(b.join(f)).ok() || fs::read(a.join(f)).is_err()
        })
        .collect();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} files byte-identical", files.len())
        } else {
            format!("differing or missing: {differing:?}")
        },
    )
}

fn interpolation_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cells = 2 * PollutantKind::COUNT;
    let mut frames: Vec<TraceFrame> = (0..25)
        .map(|i| TraceFrame {
            round_index: i,
            values: (0..cells).map(|_| rng.random_range(0.0..500.0)).collect(),
        })
        .collect();
    frames[0].values[0] = 10.0;
    frames[1].values[0] = 20.0;
    let hourly = TraceSet {
        n_zones: 2,
        step_minutes: 60,
        start: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        frames,
        events: Vec::new(),
    };
    let fine = match interpolate(&hourly, 15) {
        Ok(t) => t,
        Err(e) => return outcome(false, e.to_string()),
    };
    let preserved = hourly.frames.iter().enumerate().all(|(h, f)| {
        fine.frames[h * 4]
            .values
            .iter()
            .zip(&f.values)
            .all(|(a, b)| a.to_bits() == b.to_bits())
    });
    let midpoint = fine.frames[2].values[0];
    outcome(
        preserved && midpoint == 15.0 && fine.len() == 97,
        format!(
            "hour marks bit-identical: {preserved}; midpoint {midpoint}; {} frames",
            fine.len()
        ),
    )
}

fn peak_rss_kb(pid: u32) -> Option<u64> {
    let status = fs::read_to_string(format!("/proc/{pid}/status")).ok()?;
    status
        .lines()
        .find(|l| l.starts_with("VmHWM:"))
        .and_then(|l| l.split_whitespace().nth(1))
        .and_then(|v| v.parse().ok())
}

fn full_scale() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let start = Instant::now();
    let mut child = match Command::new(BIN)
        .args(["compare", "--seeds", "1", "--out"])
        .arg(dir.path().join("full"))
        .env("EDGESENSE_LOG", "quiet")
        .stdout(std::process::Stdio::null())
        .spawn()
    {
        Ok(c) => c,
        Err(e) => return outcome(false, e.to_string()),
    };
    let mut peak: Option<u64> = None;
    let status = loop {
        if let Some(kb) = peak_rss_kb(child.id()) {
            peak = Some(peak.map_or(kb, |p| p.max(kb)));
        }
        match child.try_wait() {
            Ok(Some(s)) => break s,
            Ok(None) => std::thread::sleep(Duration::from_millis(50)),
            Err(e) => return outcome(false, e.to_string()),
        }
    };
    let elapsed = start.elapsed();
    let mem_ok = peak.is_none_or(|kb| kb < 1024 * 1024);
    let mem = peak.map_or("peak memory not measurable here".to_string(), |kb| {
        format!("peak RSS {:.0} MiB", kb as f64 / 1024.0)
    });
    outcome(
        status.success() && elapsed < Duration::from_secs(60) && mem_ok,
        format!(
            "20 zones x 50 nodes, 2880 rounds, 4 policies in {:.1}s; {mem}",
            elapsed.as_secs_f64()
        ),
    )
}

fn main() {
    let desk = desk_runs();
    let results = [
        (1, "lifetime arithmetic", lifetime_table()),
        (2, "percentage round trip", percentage_round_trip()),
        (3, "energy ordering", energy_ordering(&desk)),
        (4, "detection ordering", detection_ordering(&desk)),
        (5, "budget safety", budget_safety(&desk)),
        (6, "selection oracle", selection_oracle()),
        (7, "EMA safety", ema_safety()),
        (8, "determinism", determinism()),
        (9, "interpolation exactness", interpolation_exactness()),
        (10, "full scale", full_scale()),
    ];
    let mut failed = 0;
    for (n, name, o) in &results {
        println!(
            "criterion {n:>2} {} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

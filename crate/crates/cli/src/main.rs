use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use edgesense_core::metrics::{avg_daily_energy, detection_rate, lifetime_estimate, Comparison};
use edgesense_core::trace::{self, hourly_frames_for};
use edgesense_core::{
    compare, run_simulation, PolicyKind, PollutantKind, RunResult, SimConfig, TraceSet,
};
use rayon::prelude::*;

#[derive(Parser)]
#[command(
    name = "edgesense",
    version,
    about = "Energy-aware sensor activation simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic hourly trace and its injected events.
    GenTrace(GenTraceArgs),
    /// Run one policy and print its metrics.
    Run(RunArgs),
    /// Run several policies over several seeds and write comparison tables.
    Compare(CompareArgs),
    /// Re-render tables from a summary.json or from saved run results.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file; unspecified keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set n_zones=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Budget split across zone clusters for the adaptive policy.
    #[arg(long, value_enum)]
    hierarchy: Option<OnOff>,
}

#[derive(Args)]
struct TraceArgs {
    /// Hourly trace CSV (`timestamp,zone_id,pollutant,value`).
    #[arg(long, conflicts_with = "synthetic")]
    trace: Option<PathBuf>,
    /// Event CSV to apply to `--trace`; without it events are injected from `trace_seed`.
    #[arg(long, requires = "trace")]
    events: Option<PathBuf>,
    /// Generate the trace from `trace_seed` (the default when no `--trace` is given).
    #[arg(long)]
    synthetic: bool,
}

#[derive(Args)]
struct GenTraceArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Hourly trace CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Event CSV to write; defaults to `<out>.events.csv`.
    #[arg(long)]
    events_out: Option<PathBuf>,
    /// Trace seed; overrides `trace_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    trace: TraceArgs,
    #[arg(long)]
    policy: String,
    /// Simulation seed; overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// RunResult JSON to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-node, per-round CSV log to write.
    #[arg(long)]
    round_log: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    trace: TraceArgs,
    /// Comma-separated policy names.
    #[arg(long, default_value = "static,periodic,ucb,adaptive")]
    policies: String,
    /// Comma-separated seeds or inclusive ranges such as `1-5`.
    #[arg(long, default_value = "1-5")]
    seeds: String,
    /// Parallel runs; defaults to the number of CPUs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// A summary.json, or one or more RunResult JSON files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Also write the summary files into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn init_logging() {
    let level = match std::env::var("EDGESENSE_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Off,
        Ok("info") => log::LevelFilter::Info,
        Ok("debug") => log::LevelFilter::Debug,
        _ => log::LevelFilter::Warn,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTrace(a) => gen_trace(a),
        Command::Run(a) => run(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("edgesense: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn load_config(args: &ConfigArgs) -> Result<SimConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => SimConfig::load(p).map_err(usage)?,
        None => SimConfig::default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim()).map_err(usage)?;
    }
    if let Some(h) = args.hierarchy {
        cfg.hierarchy = matches!(h, OnOff::On);
    }
    Ok(cfg)
}

fn parse_policy(name: &str) -> Result<PolicyKind, CliError> {
    name.trim().parse().map_err(usage)
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || usage(format!("bad seed list entry {part:?}"));
        match part.split_once(['-', ':']) {
            Some((lo, hi)) => {
                let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
                let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
                if lo > hi {
                    return Err(bad());
                }
                seeds.extend(lo..=hi);
            }
            None => seeds.push(part.parse().map_err(|_| bad())?),
        }
    }
    if seeds.is_empty() {
        return Err(usage("no seeds given"));
    }
    Ok(seeds)
}

fn load_traces(cfg: &SimConfig, args: &TraceArgs) -> Result<TraceSet, CliError> {
    let Some(path) = &args.trace else {
        return trace::build_synthetic(cfg).map_err(runtime);
    };
    if !path.exists() {
        return Err(usage(format!("trace not found: {}", path.display())));
    }
    let hourly = trace::load_csv(path, cfg.n_zones, &PollutantKind::ALL).map_err(usage)?;
    let events = match &args.events {
        Some(p) => {
            if !p.exists() {
                return Err(usage(format!("events not found: {}", p.display())));
            }
            let file = fs::File::open(p).map_err(runtime)?;
            Some(trace::read_events_csv(file).map_err(usage)?)
        }
        None => None,
    };
    trace::prepare(cfg, &hourly, events).map_err(usage)
}

/// Writes through a temp file in the target directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let fail = |e: &dyn std::fmt::Display| runtime(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| fail(&e))?;
    tmp.write_all(bytes).map_err(|e| fail(&e))?;
    tmp.as_file().sync_all().map_err(|e| fail(&e))?;
    tmp.persist(path).map_err(|e| fail(&e.error))?;
    Ok(())
}

fn gen_trace(args: GenTraceArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.trace_seed = s;
    }
    let cfg = cfg.validate().map_err(usage)?;
    let hourly = trace::generate_synthetic(&cfg, cfg.trace_seed);
    let prepared = trace::prepare(&cfg, &hourly, None).map_err(runtime)?;

    let mut csv = Vec::new();
    trace::write_csv(&hourly, &mut csv).map_err(runtime)?;
    let mut ev = Vec::new();
    trace::write_events_csv(&prepared.events, &mut ev).map_err(runtime)?;
    let events_out = args.events_out.unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".events.csv");
        PathBuf::from(p)
    });
    write_atomic(&args.out, &csv)?;
    write_atomic(&events_out, &ev)?;
    println!(
        "zones={} pollutants={} hourly_rows={} rounds={} events={}",
        cfg.n_zones,
        PollutantKind::COUNT,
        hourly_frames_for(&cfg),
        prepared.len(),
        prepared.events.len()
    );
    println!("trace: {}", args.out.display());
    println!("events: {}", events_out.display());
    Ok(())
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let kind = parse_policy(&args.policy)?;
    let mut cfg = load_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let cfg = cfg.validate().map_err(usage)?;
    let traces = load_traces(&cfg, &args.trace)?;
    let result = run_simulation(&cfg, &traces, kind).map_err(runtime)?;

    if let Some(out) = &args.out {
        write_atomic(out, result.to_json().map_err(runtime)?.as_bytes())?;
    }
    if let Some(path) = &args.round_log {
        let mut buf = Vec::new();
        result.write_round_csv(&mut buf).map_err(runtime)?;
        write_atomic(path, &buf)?;
    }
    let energy = avg_daily_energy(&result).map_err(runtime)?;
    println!("policy: {}", kind.name());
    println!("seed: {}", cfg.seed);
    println!("avg_daily_energy: {energy:.3} mAh/day");
    match detection_rate(&result) {
        Some(d) => println!(
            "detection_rate: {:.4} ({} of {} events)",
            d,
            result.events.iter().filter(|e| e.detected).count(),
            result.events.len()
        ),
        None => println!("detection_rate: n/a (no events)"),
    }
    println!(
        "lifetime_days: {}",
        lifetime_estimate(cfg.battery_capacity, energy)
    );
    if result.clamped_feedback > 0 {
        log::warn!(
            "{} feedback values were clamped into [0, 1]",
            result.clamped_feedback
        );
    }
    Ok(())
}

fn write_comparison(dir: &Path, cmp: &Comparison) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
    write_atomic(&dir.join("summary.json"), cmp.to_json().as_bytes())?;
    write_atomic(&dir.join("summary.csv"), cmp.to_csv().as_bytes())?;
    write_atomic(&dir.join("summary.txt"), cmp.render_text().as_bytes())?;
    write_atomic(&dir.join("plot.csv"), cmp.plot_csv().as_bytes())?;
    write_atomic(&dir.join("per_seed.csv"), cmp.per_run_csv().as_bytes())?;
    Ok(())
}

fn compare_cmd(args: CompareArgs) -> Result<(), CliError> {
    let mut policies = Vec::new();
    for name in args.policies.split(',').filter(|s| !s.trim().is_empty()) {
        let kind = parse_policy(name)?;
        if !policies.contains(&kind) {
            policies.push(kind);
        }
    }
    if policies.len() < 2 {
        return Err(usage("compare needs at least two policies"));
    }
    let seeds = parse_seeds(&args.seeds)?;
    let cfg = load_config(&args.config)?.validate().map_err(usage)?;
    let traces = load_traces(&cfg, &args.trace)?;

    let jobs: Vec<(u64, PolicyKind)> = seeds
        .iter()
        .flat_map(|&s| policies.iter().map(move |&k| (s, k)))
        .collect();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.jobs {
        if n == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(runtime)?;
    log::info!(
        "{} runs on {} threads",
        jobs.len(),
        pool.current_num_threads()
    );
    let runs: Vec<Result<RunResult, CliError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(seed, kind)| {
                let cfg = SimConfig {
                    seed,
                    ..cfg.clone()
                };
                log::debug!("start {} seed {seed}", kind.name());
                run_simulation(&cfg, &traces, kind)
                    .map_err(|e| runtime(format!("run {} seed {seed} failed: {e}", kind.name())))
            })
            .collect()
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let cmp = compare(&runs).map_err(runtime)?;
    write_comparison(&args.out, &cmp)?;
    print!("{}", cmp.render_text());
    println!("wrote {}", args.out.display());
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), CliError> {
    let mut runs = Vec::new();
    let mut summary = None;
    for path in &args.inputs {
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        if let Ok(cmp) = serde_json::from_str::<Comparison>(&text) {
            if args.inputs.len() > 1 {
                return Err(usage("a summary.json must be the only input"));
            }
            summary = Some(cmp);
            break;
        }
        runs.push(
            RunResult::from_json(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?,
        );
    }
    let cmp = match summary {
        Some(c) => c,
        None => compare(&runs).map_err(usage)?,
    };
    if let Some(dir) = &args.out {
        write_comparison(dir, &cmp)?;
    }
    print!("{}", cmp.render_text());
    Ok(())
}

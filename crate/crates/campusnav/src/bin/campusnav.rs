//! Command-line front end: map validation, scenario batches, and
//! plot-ready data extraction from logs.

use campusnav::roadmap::RoadMap;
use campusnav::sim::{self, compute_metrics, ConfigOverlay, SimLog, TerminalStatus};
use clap::{Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "campusnav", about = "Campus shuttle navigation stack and scenario simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Table,
    Machine,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a map file and check its invariants.
    ValidateMap { path: PathBuf },
    /// Run one or more scenarios and write logs plus metrics.
    Run {
        /// Scenario files.
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        /// Seed override applied to every scenario.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for logs and reports.
        #[arg(long, env = "CAMPUSNAV_OUT_DIR", default_value = "out")]
        out: PathBuf,
        /// Replacement configuration overlay (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        format: ReportFormat,
    },
    /// Emit plot-ready CSV series from a simulation log.
    Plotdata {
        log: PathBuf,
        #[arg(long, env = "CAMPUSNAV_OUT_DIR", default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ValidateMap { path } => validate_map(&path),
        Command::Run {
            scenarios,
            seed,
            out,
            config,
            format,
        } => run(&scenarios, seed, &out, config.as_deref(), format),
        Command::Plotdata { log, out } => plotdata(&log, &out),
    }
}

fn validate_map(path: &Path) -> ExitCode {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return ExitCode::from(2);
        }
    };
    match RoadMap::load(&text) {
        Ok(map) => {
            println!(
                "ok: {} nodes, {} edges, {} stations",
                map.nodes.len(),
                map.edges.len(),
                map.stations.len()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

/// Write via a temporary sibling then rename, so failures never leave a
/// partial artifact behind.
fn write_atomic(path: &Path, content: &str) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content)?;
    std::fs::rename(&tmp, path)
}

fn run(
    scenarios: &[PathBuf],
    seed: Option<u64>,
    out: &Path,
    config: Option<&Path>,
    format: ReportFormat,
) -> ExitCode {
    if let Err(e) = std::fs::create_dir_all(out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return ExitCode::from(2);
    }
    let overlay: Option<ConfigOverlay> = match config {
        Some(p) => match std::fs::read_to_string(p)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
        {
            Ok(c) => Some(c),
            Err(e) => {
                eprintln!("error: bad config overlay {}: {e}", p.display());
                return ExitCode::from(2);
            }
        },
        None => None,
    };

    let mut all_ok = true;
    let mut rows = Vec::new();
    for path in scenarios {
        let (mut sc, map) = match sim::load_scenario(path) {
            Ok(x) => x,
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(2);
            }
        };
        if let Some(overlay) = &overlay {
            sc.config = overlay.clone();
        }
        let log = match sim::run_scenario(&sc, &map, seed) {
            Ok(l) => l,
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(2);
            }
        };
        let metrics = compute_metrics(&log);
        let ok = log.status == TerminalStatus::GoalReached;
        all_ok &= ok;

        let stem = sc.name.replace([' ', '/'], "_");
        let log_path = out.join(format!("{stem}.log.jsonl"));
        let metrics_path = out.join(format!("{stem}.metrics.json"));
        if let Err(e) = write_atomic(&log_path, &log.to_jsonl()) {
            eprintln!("error: writing {}: {e}", log_path.display());
            return ExitCode::from(2);
        }
        let metrics_json = serde_json::to_string_pretty(&metrics).expect("metrics json");
        if let Err(e) = write_atomic(&metrics_path, &metrics_json) {
            eprintln!("error: writing {}: {e}", metrics_path.display());
            return ExitCode::from(2);
        }
        println!("{}: {:?} (digest {})", sc.name, log.status, log.digest());
        match format {
            ReportFormat::Table => println!("{}\n", metrics.table()),
            ReportFormat::Machine => println!("{metrics_json}\n"),
        }
        rows.push((sc.name.clone(), log.status, metrics));
    }

    if rows.len() > 1 {
        println!("summary:");
        for (name, status, m) in &rows {
            println!(
                "  {name:<28} {status:?}  max {:.2} km/h  avg {:.2} km/h  >=9 {:.1}%  acc [{:.2},{:.2}]  jerk [{:.2},{:.2}]  BT {}  takeovers {}",
                m.max_speed_kmh,
                m.avg_speed_kmh,
                m.pct_at_least_9_kmh,
                m.min_accel,
                m.max_accel,
                m.min_jerk,
                m.max_jerk,
                m.brake_events,
                m.takeover_proxies,
            );
        }
    }
    if all_ok {
        ExitCode::SUCCESS
    } else {
        eprintln!("error: at least one scenario did not reach its goal");
        ExitCode::FAILURE
    }
}

fn plotdata(log_path: &Path, out: &Path) -> ExitCode {
    let text = match std::fs::read_to_string(log_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", log_path.display());
            return ExitCode::from(2);
        }
    };
    let log = match SimLog::from_jsonl(&text) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: malformed log: {e}");
            return ExitCode::FAILURE;
        }
    };
    if log.records.is_empty() {
        eprintln!("error: log has no records");
        return ExitCode::FAILURE;
    }
    if let Err(e) = std::fs::create_dir_all(out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return ExitCode::from(2);
    }
    let stem = log_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "log".into());
    let stem = stem.trim_end_matches(".log").to_string();

    // Speed histogram: 1 km/h bins over driving ticks.
    let driving: Vec<f64> = log
        .records
        .iter()
        .filter(|r| r.v > sim::metrics::DRIVING_SPEED)
        .map(|r| r.v * 3.6)
        .collect();
    let max_bin = driving.iter().cloned().fold(0.0, f64::max).floor() as usize;
    let mut bins = vec![0usize; max_bin + 1];
    for v in &driving {
        bins[v.floor() as usize] += 1;
    }
    let mut hist = String::from("bin_kmh_low,bin_kmh_high,count\n");
    for (i, c) in bins.iter().enumerate() {
        hist.push_str(&format!("{},{},{}\n", i, i + 1, c));
    }

    // Speed vs distance and accel/jerk time series.
    let mut speed_dist = String::from("distance_m,speed_kmh\n");
    let mut dist = 0.0;
    for r in &log.records {
        dist += r.v * log.dt;
        speed_dist.push_str(&format!("{},{}\n", dist, r.v * 3.6));
    }
    let mut aj = String::from("t,accel_mps2,jerk_mps3\n");
    let mut prev_v: Option<f64> = None;
    let mut prev_a: Option<f64> = None;
    for r in &log.records {
        let a = prev_v.map(|pv| (r.v - pv) / log.dt).unwrap_or(0.0);
        let j = prev_a.map(|pa| (a - pa) / log.dt).unwrap_or(0.0);
        aj.push_str(&format!("{},{},{}\n", r.t, a, j));
        prev_a = Some(a);
        prev_v = Some(r.v);
    }

    for (suffix, content) in [
        ("speed_hist.csv", hist),
        ("speed_distance.csv", speed_dist),
        ("accel_jerk.csv", aj),
    ] {
        let path = out.join(format!("{stem}.{suffix}"));
        if let Err(e) = write_atomic(&path, &content) {
            eprintln!("error: writing {}: {e}", path.display());
            return ExitCode::from(2);
        }
        println!("wrote {}", path.display());
    }
    ExitCode::SUCCESS
}

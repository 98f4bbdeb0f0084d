use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use setrend_core::artifacts::write_run;
use setrend_core::control::gain_condition;
use setrend_core::graph::{is_connected, joint_connectivity, laplacian_spectral_radius, GraphSchedule, WeightedGraph};
use setrend_core::replicate::{self, Replication, EXPERIMENTS};
use setrend_core::scenario::{Overrides, ScenarioError, ScenarioFile};
use setrend_core::{run, summarize, Termination};

const EXIT_FAIL: u8 = 1;
const EXIT_SAFETY: u8 = 2;
const EXIT_INVALID: u8 = 3;
const SEED_VAR: &str = "SETREND_SEED";

#[derive(Parser)]
#[command(name = "setrend", version, about = "Set aggregation of networked two-link manipulators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write trajectory, report and plots.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        k: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long = "t-end")]
        t_end: Option<f64>,
    },
    /// Report connectivity, joint connectivity and gain thresholds of a scenario's graphs.
    CheckGraph {
        scenario: PathBuf,
        #[arg(long)]
        window: f64,
        /// Horizon of the joint-connectivity scan; defaults to the scenario's t_end.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Run a bundled experiment and check its expected outcome.
    Replicate {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(EXPERIMENTS), required_unless_present = "all")]
        name: Option<String>,
        #[arg(long, conflicts_with = "name")]
        all: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// Reads a scenario path; a bare bundled name such as `paper_4c1_circles.json`
/// falls back to the copy shipped in the binary.
fn load_scenario(path: &Path) -> Result<ScenarioFile, ScenarioError> {
    match ScenarioFile::load(path) {
        Err(ScenarioError::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            match replicate::bundled(stem) {
                Some(text) if path.parent().is_none_or(|p| p.as_os_str().is_empty()) => ScenarioFile::from_json(text),
                _ => Err(ScenarioError::Io(e)),
            }
        }
        other => other,
    }
}

fn seed_override() -> anyhow::Result<Option<u64>> {
    match std::env::var(SEED_VAR) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("{SEED_VAR}={v:?} is not an unsigned integer"))?)),
        Err(_) => Ok(None),
    }
}

fn cmd_run(scenario: &Path, out: &Path, overrides: Overrides) -> anyhow::Result<ExitCode> {
    let mut file = match load_scenario(scenario) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {}: {e}", scenario.display());
            return Ok(ExitCode::from(EXIT_INVALID));
        }
    };
    file.apply(&overrides);
    let scenario = match file.build() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(EXIT_INVALID));
        }
    };
    let trajectory = run(&scenario)?;
    let report = summarize(&scenario, &trajectory)?;
    let artifacts = write_run(out, &scenario, &trajectory, &report)
        .with_context(|| format!("writing artifacts to {}", out.display()))?;

    let f = &report.final_values;
    println!("scenario      {} ({} law, k = {})", report.scenario, report.law, report.k);
    println!("termination   {}", report.termination);
    println!("final t       {}", f.t);
    match f.max_dist_x0 {
        Some(d) => println!("max dist_X0   {d:.6e}"),
        None => println!("max dist_own  {:.6e}", f.max_dist_own),
    }
    println!("consensus     {:.6e}", f.consensus_error);
    println!("max speed     {:.6e}", f.max_speed);
    println!("min pairwise  {:.6}", report.min_pairwise);
    println!("lyapunov      non-increasing = {}", report.lyapunov.non_increasing);
    println!("aggregation   {}", report.aggregation);
    println!("artifacts     {}", artifacts.report.parent().unwrap_or(out).display());

    Ok(match &report.termination {
        Termination::Completed => ExitCode::SUCCESS,
        t @ Termination::SafetyViolation { .. } => {
            eprintln!("{t}");
            ExitCode::from(EXIT_SAFETY)
        }
        t @ Termination::NumericFailure { .. } => {
            eprintln!("{t}");
            ExitCode::from(EXIT_FAIL)
        }
    })
}

fn cmd_check_graph(scenario: &Path, window: f64, horizon: Option<f64>) -> anyhow::Result<ExitCode> {
    let built = load_scenario(scenario).and_then(|file| {
        let schedule = match (&file.graph, &file.schedule) {
            (Some(g), None) => GraphSchedule::constant(WeightedGraph::from_config(g)?),
            (None, Some(s)) => GraphSchedule::from_config(s)?,
            _ => return Err(ScenarioError::Invalid("exactly one of `graph` and `schedule` is required".into())),
        };
        Ok((file, schedule))
    });
    let (file, schedule) = match built {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {}: {e}", scenario.display());
            return Ok(ExitCode::from(EXIT_INVALID));
        }
    };
    for (p, g) in schedule.graphs().iter().enumerate() {
        println!(
            "graph {}      nodes {}, connected = {}, components {}, λmax = {:.6}",
            p,
            g.node_count(),
            is_connected(g),
            g.component_count(),
            laplacian_spectral_radius(g)
        );
    }
    let horizon = horizon.unwrap_or(file.t_end);
    let ujc = match joint_connectivity(&schedule, horizon, window) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(EXIT_INVALID));
        }
    };
    println!("UJC={} (T = {window}, horizon {horizon}, {} windows)", ujc.connected, ujc.windows_checked);
    if let Some(t) = ujc.first_failure {
        println!("first disconnected window starts at t = {t}");
    }
    if let Some(note) = &ujc.note {
        println!("note: {note}");
    }
    let gain = gain_condition(&schedule, file.controller.k);
    println!(
        "gain          threshold 2 + λmax/4 = {:.6}, coarse 2 + (n-1)a*/2 = {:.6}",
        gain.threshold, gain.coarse_threshold
    );
    println!(
        "configured k  {} ({} law): exceeds threshold = {}, exceeds coarse bound = {}",
        gain.k, file.controller.law, gain.ok, gain.coarse_ok
    );
    Ok(ExitCode::SUCCESS)
}

fn write_replication(r: &Replication, out: &Path) -> anyhow::Result<()> {
    for o in &r.runs {
        let dir = out.join(r.experiment).join(&o.scenario.name);
        write_run(&dir, &o.scenario, &o.trajectory, &o.report).with_context(|| format!("writing {}", dir.display()))?;
    }
    Ok(())
}

fn cmd_replicate(name: Option<String>, all: bool, out: &Path) -> anyhow::Result<ExitCode> {
    let names: Vec<&str> = if all { EXPERIMENTS.to_vec() } else { vec![name.as_deref().unwrap_or_default()] };
    let results: Vec<_> = names
        .par_iter()
        .map(|n| {
            let r = replicate::replicate(n)?;
            write_replication(&r, out)?;
            anyhow::Ok(r)
        })
        .collect();
    let mut passed = true;
    for (n, r) in names.iter().zip(results) {
        let r = r.with_context(|| format!("experiment {n}"))?;
        println!("== {n}");
        for c in &r.checks {
            println!("{c}");
        }
        passed &= r.passed();
    }
    println!("{}", if passed { "PASS" } else { "FAIL" });
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAIL) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, out, k, dt, t_end } => {
            seed_override().and_then(|seed| cmd_run(&scenario, &out, Overrides { k, dt, t_end, seed }))
        }
        Command::CheckGraph { scenario, window, horizon } => cmd_check_graph(&scenario, window, horizon),
        Command::Replicate { name, all, out } => cmd_replicate(name, all, &out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAIL)
        }
    }
}

//! Bundled experiments and their pass/fail checks.

use std::fmt;

use thiserror::Error;

use crate::graph::{joint_connectivity, GraphError};
use crate::metrics::{summarize, AggregationReport, MetricsError, StepMetrics};
use crate::scenario::{Overrides, Scenario, ScenarioError, ScenarioFile};
use crate::sim::{run, SimError, Termination, Trajectory};

/// Bundled scenario files by name.
pub const BUNDLED: [(&str, &str); 7] = [
    ("paper_4c1_circles", include_str!("../scenarios/paper_4c1_circles.json")),
    ("paper_4c2_switching", include_str!("../scenarios/paper_4c2_switching.json")),
    ("paper_4c2_switching_k6", include_str!("../scenarios/paper_4c2_switching_k6.json")),
    ("paper_4c3_nonconvex", include_str!("../scenarios/paper_4c3_nonconvex.json")),
    ("paper_5b_star", include_str!("../scenarios/paper_5b_star.json")),
    ("paper_5b_complete", include_str!("../scenarios/paper_5b_complete.json")),
    ("paper_5c_switching_collision", include_str!("../scenarios/paper_5c_switching_collision.json")),
];

pub const EXPERIMENTS: [&str; 6] = ["4c1", "4c2", "4c3", "5b-star", "5b-complete", "5c"];

/// Window length for the joint-connectivity check of the switching experiment.
pub const UJC_WINDOW: f64 = 10.0;
/// Final window searched for expansion–contraction cycles.
pub const CYCLE_WINDOW: f64 = 40.0;

#[derive(Debug, Error)]
pub enum ReplicateError {
    #[error("unknown experiment {0:?}; known: {known}", known = EXPERIMENTS.join(", "))]
    Unknown(String),
    #[error("bundled scenario {name}: {source}")]
    Scenario { name: String, source: ScenarioError },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn bundled_file(name: &str) -> Result<ScenarioFile, ReplicateError> {
    let text = bundled(name).ok_or_else(|| ReplicateError::Unknown(name.to_owned()))?;
    ScenarioFile::from_json(text).map_err(|source| ReplicateError::Scenario { name: name.to_owned(), source })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub scenario: Scenario,
    pub trajectory: Trajectory,
    pub report: AggregationReport,
}

#[derive(Debug)]
pub struct Replication {
    pub experiment: &'static str,
    pub runs: Vec<RunOutcome>,
    pub checks: Vec<Check>,
}

impl Replication {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn run_bundled(name: &str, overrides: &Overrides) -> Result<RunOutcome, ReplicateError> {
    let mut file = bundled_file(name)?;
    file.apply(overrides);
    let scenario = file.build().map_err(|source| ReplicateError::Scenario { name: name.to_owned(), source })?;
    let trajectory = run(&scenario)?;
    let report = summarize(&scenario, &trajectory)?;
    Ok(RunOutcome { scenario, trajectory, report })
}

fn aggregation_check(label: &str, r: &AggregationReport) -> Check {
    let f = &r.final_values;
    Check::new(
        format!("{label} aggregation"),
        r.aggregation,
        format!(
            "max dist_X0 {:.3e}, consensus {:.3e}, max speed {:.3e} at t = {}",
            f.max_dist_x0.unwrap_or(f64::NAN),
            f.consensus_error,
            f.max_speed,
            f.t
        ),
    )
}

fn lyapunov_check(label: &str, r: &AggregationReport) -> Check {
    Check::new(
        format!("{label} Lyapunov non-increasing"),
        r.lyapunov.non_increasing,
        format!("worst sample increase {:.3e}, allowed {:.3e}", r.lyapunov.worst_increase, r.lyapunov.tolerance),
    )
}

fn safety_check(label: &str, o: &RunOutcome) -> Check {
    let r = o.scenario.law.potential().map_or(0.0, |p| p.safety_radius);
    let held = o.trajectory.termination == Termination::Completed && o.trajectory.min_pairwise > r;
    Check::new(
        format!("{label} safety"),
        held,
        format!("min pairwise distance {:.4} over every step, r = {r}", o.trajectory.min_pairwise),
    )
}

/// Peaks of the consensus error over the final `window` that stand at least
/// half the window's range above the neighbouring troughs.
pub fn expansion_cycles(metrics: &[StepMetrics], window: f64) -> usize {
    let Some(last) = metrics.last() else { return 0 };
    let xs: Vec<f64> = metrics.iter().filter(|m| m.t >= last.t - window).map(|m| m.consensus_error).collect();
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &x| (a.0.min(x), a.1.max(x)));
    let min_rise = 0.5 * (hi - lo);
    if !(min_rise > 0.0) {
        return 0;
    }
    let mut cycles = 0;
    let (mut trough, mut peak) = (xs[0], xs[0]);
    let mut seeking_peak = true;
    for &x in &xs[1..] {
        if seeking_peak {
            if x < trough {
                trough = x;
                peak = x;
            }
            peak = peak.max(x);
            if peak - x >= min_rise && peak - trough >= min_rise {
                cycles += 1;
                seeking_peak = false;
                trough = x;
            }
        } else {
            trough = trough.min(x);
            if x - trough >= min_rise {
                seeking_peak = true;
                peak = x;
            }
        }
    }
    cycles
}

fn avoidance_checks(label: &str, o: &RunOutcome) -> Vec<Check> {
    let r = &o.report;
    let mut checks = vec![
        safety_check(label, o),
        Check::new(
            format!("{label} final velocities"),
            r.clauses.at_rest,
            format!("max speed {:.3e} < {}", r.final_values.max_speed, r.tolerances.velocity),
        ),
    ];
    match &r.avoidance {
        Some(a) => checks.push(Check::new(
            format!("{label} ultimate bound"),
            a.within_bound,
            format!(
                "max dist_X0 {:.4} <= B* {:.4} (V0 {:.3}, λ2 {:.4}, ρ̂ {:.4}, {})",
                a.max_dist_x0, a.bound, a.v0, a.lambda2, a.rho_hat, a.rho_label
            ),
        )),
        None => checks.push(Check::new(format!("{label} ultimate bound"), false, "no bound computed")),
    }
    checks
}

pub fn replicate(experiment: &str) -> Result<Replication, ReplicateError> {
    let none = Overrides::default();
    let (name, runs, checks) = match experiment {
        "4c1" => {
            let o = run_bundled("paper_4c1_circles", &none)?;
            let checks = vec![aggregation_check("4c1", &o.report), lyapunov_check("4c1", &o.report)];
            ("4c1", vec![o], checks)
        }
        "4c2" => {
            let published = run_bundled("paper_4c2_switching", &none)?;
            let k6 = run_bundled("paper_4c2_switching_k6", &none)?;
            let ujc = joint_connectivity(&k6.scenario.schedule, k6.scenario.t_end, UJC_WINDOW)?;
            let mut checks = vec![Check::new(
                "4c2 uniform joint connectivity",
                ujc.connected,
                format!("T = {UJC_WINDOW}, {} windows", ujc.windows_checked),
            )];
            for (label, o) in [("4c2 k=6", &k6), ("4c2 k=5", &published)] {
                if let Some(g) = &o.report.gain {
                    checks.push(Check::new(
                        format!("{label} gain condition"),
                        g.ok,
                        format!(
                            "threshold 2 + λmax/4 = {:.4}; coarse bound {:.1} {}",
                            g.threshold,
                            g.coarse_threshold,
                            if g.coarse_ok { "met" } else { "not met" }
                        ),
                    ));
                }
                checks.push(aggregation_check(label, &o.report));
                let spread = o.report.spread.as_ref();
                checks.push(Check::new(
                    format!("{label} spread-rate bound"),
                    spread.is_some_and(|s| s.holds),
                    spread.map_or("not tracked".into(), |s| {
                        format!("worst excess {:.3e} over {} steps, slack {}", s.worst_excess, s.steps, s.slack)
                    }),
                ));
            }
            ("4c2", vec![k6, published], checks)
        }
        "4c3" => {
            let o = run_bundled("paper_4c3_nonconvex", &none)?;
            let r = &o.report;
            let checks = vec![Check::new(
                "4c3 aggregation not achieved",
                r.termination == Termination::Completed && !r.aggregation,
                format!(
                    "max dist_own {:.3}, consensus {:.3}, max speed {:.3e}",
                    r.final_values.max_dist_own, r.final_values.consensus_error, r.final_values.max_speed
                ),
            )];
            ("4c3", vec![o], checks)
        }
        "5b-star" => {
            let o = run_bundled("paper_5b_star", &none)?;
            let checks = avoidance_checks("5b star", &o);
            ("5b-star", vec![o], checks)
        }
        "5b-complete" => {
            let complete = run_bundled("paper_5b_complete", &none)?;
            let star = run_bundled("paper_5b_star", &none)?;
            let mut checks = avoidance_checks("5b complete", &complete);
            let (c, s) = (complete.report.final_values.consensus_error, star.report.final_values.consensus_error);
            checks.push(Check::new(
                "5b complete tighter than star",
                c < s,
                format!("final spread {c:.4} (complete) vs {s:.4} (star)"),
            ));
            ("5b-complete", vec![complete, star], checks)
        }
        "5c" => {
            let o = run_bundled("paper_5c_switching_collision", &none)?;
            let osc = &o.report.oscillation;
            let cycles = expansion_cycles(&o.trajectory.metrics, CYCLE_WINDOW);
            let checks = vec![
                safety_check("5c", &o),
                Check::new(
                    "5c sustained motion",
                    osc.oscillating,
                    format!("max speed over final {} s is {:.3e} > {}", osc.window, osc.max_speed, osc.threshold),
                ),
                Check::new(
                    "5c expansion-contraction cycles",
                    cycles >= 2,
                    format!("{cycles} cycles of the consensus error over the final {CYCLE_WINDOW} s"),
                ),
            ];
            ("5c", vec![o], checks)
        }
        other => return Err(ReplicateError::Unknown(other.to_owned())),
    };
    Ok(Replication { experiment: name, runs, checks })
}

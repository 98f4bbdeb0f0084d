//! Fixed-step RK4 integration of the closed loop.
//!
//! The graph is looked up once per step, at the step midpoint, and held for all
//! four stages. Switch times sit on step boundaries, so every stage sees the
//! graph of the interval the step belongs to.

use serde::Serialize;
use thiserror::Error;

use crate::control::{spread_diagnostic, ControlError, ControlInput, SpreadDiagnostic};
use crate::dynamics::{forward_dynamics, AgentState, Vec2};
use crate::graph::WeightedGraph;
use crate::metrics::{min_pairwise_distance, Evaluator, MetricsError, StepMetrics};
use crate::scenario::Scenario;

/// Slack on the spread-rate bound, per unit time.
pub const SPREAD_SLACK: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("metric evaluation failed at t = {t}: {source}")]
    Metrics { t: f64, source: MetricsError },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    /// `agents` are 1-based; `None` when the violation was found at a stage.
    SafetyViolation {
        t: f64,
        agents: Option<[usize; 2]>,
        distance: f64,
    },
    NumericFailure {
        t: f64,
        reason: String,
    },
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Completed => write!(f, "completed"),
            Self::SafetyViolation { t, agents: Some([i, j]), distance } => {
                write!(f, "safety violation at t = {t} between agents {i} and {j} (distance {distance})")
            }
            Self::SafetyViolation { t, agents: None, distance } => {
                write!(f, "safety violation at t = {t} (distance {distance})")
            }
            Self::NumericFailure { t, reason } => write!(f, "numeric failure at t = {t}: {reason}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Dynamics(#[from] crate::dynamics::DynamicsError),
    #[error("state of agent {0} is not finite")]
    NonFinite(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub states: Vec<AgentState>,
    pub torques: Vec<Vec2>,
}

/// Worst violation of the spread-rate bound over all steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpreadRecord {
    pub steps: usize,
    pub worst_excess: f64,
    pub slack: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub metrics: Vec<StepMetrics>,
    pub termination: Termination,
    /// Minimum pairwise distance over every integration step.
    pub min_pairwise: f64,
    pub steps_taken: usize,
    pub spread: Option<SpreadRecord>,
}

impl Trajectory {
    pub fn final_states(&self) -> &[AgentState] {
        &self.samples.last().expect("trajectory always holds the initial sample").states
    }
}

/// State handed to observers before each step and once after the last.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    pub step: usize,
    pub t: f64,
    pub states: &'a [AgentState],
    /// Graph held over `[t, t + dt)`.
    pub graph: &'a WeightedGraph,
}

fn input<'a>(s: &'a Scenario, graph: &'a WeightedGraph, states: &'a [AgentState]) -> ControlInput<'a> {
    ControlInput { states, regions: &s.regions, graph, params: &s.params }
}

/// `(q̇, q̈)` of every agent, packed as `AgentState { q: q̇, qdot: q̈ }`.
fn derivative(s: &Scenario, graph: &WeightedGraph, states: &[AgentState]) -> Result<Vec<AgentState>, StepError> {
    let tau = s.law.torques(&input(s, graph, states))?;
    states
        .iter()
        .zip(&tau)
        .zip(&s.params)
        .map(|((st, t), p)| Ok(AgentState { q: st.qdot, qdot: forward_dynamics(p, st, t)? }))
        .collect()
}

fn axpy(y: &[AgentState], h: f64, k: &[AgentState]) -> Vec<AgentState> {
    y.iter().zip(k).map(|(a, b)| AgentState { q: a.q + h * b.q, qdot: a.qdot + h * b.qdot }).collect()
}

/// One classic RK4 step with `graph` held over the whole step.
pub fn step(s: &Scenario, graph: &WeightedGraph, states: &[AgentState], dt: f64) -> Result<Vec<AgentState>, StepError> {
    let k1 = derivative(s, graph, states)?;
    let k2 = derivative(s, graph, &axpy(states, 0.5 * dt, &k1))?;
    let k3 = derivative(s, graph, &axpy(states, 0.5 * dt, &k2))?;
    let k4 = derivative(s, graph, &axpy(states, dt, &k3))?;
    let next: Vec<AgentState> = (0..states.len())
        .map(|i| AgentState {
            q: states[i].q + dt / 6.0 * (k1[i].q + 2.0 * k2[i].q + 2.0 * k3[i].q + k4[i].q),
            qdot: states[i].qdot + dt / 6.0 * (k1[i].qdot + 2.0 * k2[i].qdot + 2.0 * k3[i].qdot + k4[i].qdot),
        })
        .collect();
    match next.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(StepError::NonFinite(i + 1)),
        None => Ok(next),
    }
}

fn closest_pair(states: &[AgentState]) -> Option<([usize; 2], f64)> {
    let mut best: Option<([usize; 2], f64)> = None;
    for i in 0..states.len() {
        for j in (i + 1)..states.len() {
            let d = (states[i].q - states[j].q).norm();
            if best.is_none_or(|b| d < b.1) {
                best = Some(([i + 1, j + 1], d));
            }
        }
    }
    best
}

struct SpreadMonitor {
    prev: Option<(f64, SpreadDiagnostic)>,
    record: SpreadRecord,
}

impl SpreadMonitor {
    fn observe(&mut self, s: &Scenario, view: &StepView<'_>) -> Result<(), ControlError> {
        let diag = spread_diagnostic(view.states, &s.regions, view.graph, s.law.gain())?;
        if let Some((t0, d0)) = &self.prev {
            let h = view.t - t0;
            for c in 0..2 {
                let up = (diag.hbar[c] - d0.hbar[c]) / h - d0.max_delta;
                let down = -(diag.ell[c] - d0.ell[c]) / h - d0.max_delta;
                self.record.worst_excess = self.record.worst_excess.max(up).max(down);
            }
            self.record.steps += 1;
        }
        self.prev = Some((view.t, diag));
        Ok(())
    }
}

pub fn run(s: &Scenario) -> Result<Trajectory, SimError> {
    run_observed(s, |_| {})
}

/// [`run`] with `observer` called on the state before every step and on the final state.
pub fn run_observed(s: &Scenario, mut observer: impl FnMut(&StepView<'_>)) -> Result<Trajectory, SimError> {
    let evaluator = Evaluator::new(s).map_err(|source| SimError::Metrics { t: 0.0, source })?;
    let mut monitor = s.law.tracks_spread().then_some(SpreadMonitor {
        prev: None,
        record: SpreadRecord { steps: 0, worst_excess: f64::NEG_INFINITY, slack: SPREAD_SLACK },
    });
    let safety = s.law.potential().map(|p| p.safety_radius);

    let mut samples = Vec::new();
    let mut metrics = Vec::new();
    let mut record = |t: f64, states: &[AgentState], graph: &WeightedGraph| -> Result<(), SimError> {
        let err = |source| SimError::Metrics { t, source };
        let torques = s.law.torques(&input(s, graph, states)).map_err(|e| err(e.into()))?;
        metrics.push(evaluator.evaluate(t, states).map_err(err)?);
        samples.push(Sample { t, states: states.to_vec(), torques });
        Ok(())
    };

    let mut states = s.initial.clone();
    let mut min_pairwise = min_pairwise_distance(&states);
    let mut termination = Termination::Completed;
    let mut steps_taken = 0;
    let mut last_recorded = None;
    let graph_at = |t: f64| s.schedule.active_graph(t).expect("schedule starts at or before 0");

    for n in 0..s.steps {
        let t = n as f64 * s.dt;
        let graph = graph_at(t + 0.5 * s.dt);
        let view = StepView { step: n, t, states: &states, graph };
        observer(&view);
        if let Some(m) = monitor.as_mut() {
            if let Err(e) = m.observe(s, &view) {
                termination = Termination::NumericFailure { t, reason: e.to_string() };
                break;
            }
        }
        if n % s.record_every == 0 {
            record(t, &states, graph)?;
            last_recorded = Some(n);
        }
        let next = match step(s, graph, &states, s.dt) {
            Ok(next) => next,
            Err(StepError::Control(ControlError::SafetyViolation { pair, distance, .. })) => {
                termination = Termination::SafetyViolation { t, agents: pair.map(|(i, j)| [i + 1, j + 1]), distance };
                break;
            }
            Err(e) => {
                termination = Termination::NumericFailure { t, reason: e.to_string() };
                break;
            }
        };
        let t_next = (n + 1) as f64 * s.dt;
        if let Some((pair, d)) = closest_pair(&next) {
            min_pairwise = min_pairwise.min(d);
            if let Some(r) = safety {
                if d <= r {
                    termination = Termination::SafetyViolation { t: t_next, agents: Some(pair), distance: d };
                    break;
                }
            }
        }
        states = next;
        steps_taken = n + 1;
    }

    let t_last = steps_taken as f64 * s.dt;
    let graph = graph_at(t_last);
    if termination == Termination::Completed {
        let view = StepView { step: steps_taken, t: t_last, states: &states, graph };
        observer(&view);
        if let Some(m) = monitor.as_mut() {
            m.observe(s, &view).map_err(|e| SimError::Metrics { t: t_last, source: e.into() })?;
        }
    }
    if last_recorded != Some(steps_taken) {
        record(t_last, &states, graph)?;
    }

    Ok(Trajectory { samples, metrics, termination, min_pairwise, steps_taken, spread: monitor.map(|m| m.record) })
}

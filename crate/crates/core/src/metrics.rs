//! Lyapunov functions, aggregation errors and the report written after a run.

use serde::Serialize;
use thiserror::Error;

use crate::control::{potential, ControlError, ControlInput, GainCheck, PotentialParams};
use crate::convex::{project_intersection, ConvexError, Region, FEASIBILITY_TOL};
use crate::dynamics::{mass_matrix, AgentState, ManipulatorParams, Vec2};
use crate::graph::{algebraic_connectivity, is_connected, GraphError, WeightedGraph};
use crate::scenario::{Scenario, Tolerances};
use crate::sim::{Termination, Trajectory};

/// Tolerance of the Dykstra iteration behind `‖q‖_{X0}`.
pub const INTERSECTION_TOL: f64 = 1e-8;
const INTERSECTION_MAX_ITER: usize = 200_000;
/// Allowed growth of `V` between samples, relative to `V(t0)`.
pub const MONOTONE_SLACK: f64 = 1e-6;
/// Final window over which speeds are inspected for sustained motion.
pub const OSCILLATION_WINDOW: f64 = 20.0;
pub const OSCILLATION_SPEED: f64 = 1e-2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("anchor point lies {0} outside the target intersection")]
    AnchorOutside(f64),
    #[error("trajectory has no samples")]
    EmptyTrajectory,
    #[error(transparent)]
    Convex(#[from] ConvexError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn own_error(region: &Region, q: &Vec2) -> Result<Vec2, ConvexError> {
    let p = region.project(q.as_slice())?.point;
    Ok(Vec2::new(q.x - p[0], q.y - p[1]))
}

fn edge_energy(states: &[AgentState], graph: &WeightedGraph) -> f64 {
    let mut e = 0.0;
    for i in 0..states.len() {
        for &(j, a) in graph.neighbors(i) {
            e += a * (states[i].q - states[j].q).norm_squared();
        }
    }
    0.25 * e
}

/// `½Σ q̇ᵀM q̇ + ¼ΣΣ a_ij‖q_i − q_j‖² + ½Σ‖q_i − P(q_i)‖²`.
pub fn lyapunov_fixed(
    states: &[AgentState],
    regions: &[Region],
    graph: &WeightedGraph,
    params: &[ManipulatorParams],
) -> Result<f64, MetricsError> {
    let mut v = edge_energy(states, graph);
    for ((s, region), p) in states.iter().zip(regions).zip(params) {
        v += 0.5 * s.qdot.dot(&(mass_matrix(p, &s.q) * s.qdot));
        v += 0.5 * own_error(region, &s.q)?.norm_squared();
    }
    Ok(v)
}

/// `½Σ‖q̇_i‖² + Σ(q_i − q0)ᵀq̇_i + (k/2)Σ‖q_i − q0‖² + ½Σ‖q_i − P(q_i)‖²`,
/// with `q0` inside every region.
pub fn lyapunov_switching(states: &[AgentState], regions: &[Region], k: f64, q0: &Vec2) -> Result<f64, MetricsError> {
    for r in regions {
        let d = r.distance(q0.as_slice())?;
        if d > FEASIBILITY_TOL {
            return Err(MetricsError::AnchorOutside(d));
        }
    }
    let mut v = 0.0;
    for (s, region) in states.iter().zip(regions) {
        let e = s.q - q0;
        v += 0.5 * s.qdot.norm_squared() + e.dot(&s.qdot) + 0.5 * k * e.norm_squared();
        v += 0.5 * own_error(region, &s.q)?.norm_squared();
    }
    Ok(v)
}

/// [`lyapunov_fixed`] plus `½ΣΣ V_ij` over ordered pairs.
pub fn lyapunov_collision(
    states: &[AgentState],
    regions: &[Region],
    graph: &WeightedGraph,
    params: &[ManipulatorParams],
    pot: &PotentialParams,
) -> Result<f64, MetricsError> {
    let mut v = lyapunov_fixed(states, regions, graph, params)?;
    for i in 0..states.len() {
        for j in (i + 1)..states.len() {
            v += potential(pot, (states[i].q - states[j].q).norm_squared())?;
        }
    }
    Ok(v)
}

/// `B* = ρ(√2 + 2/√λ₂)√V0`. The smallest nonzero eigenvalue of `L ⊗ I_m`
/// equals `λ₂(L)`, so the coordinate dimension does not enter.
pub fn ultimate_bound(v0: f64, graph: &WeightedGraph, rho: f64) -> Result<f64, MetricsError> {
    let lambda2 = algebraic_connectivity(graph)?;
    Ok(rho * (2f64.sqrt() + 2.0 / lambda2.sqrt()) * v0.max(0.0).sqrt())
}

pub fn consensus_error(states: &[AgentState]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in states.iter().enumerate() {
        for b in &states[i + 1..] {
            worst = worst.max((a.q - b.q).norm());
        }
    }
    worst
}

/// `+∞` for fewer than two agents.
pub fn min_pairwise_distance(states: &[AgentState]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in states.iter().enumerate() {
        for b in &states[i + 1..] {
            best = best.min((a.q - b.q).norm());
        }
    }
    best
}

/// Distance from `q` to the intersection of `regions`.
pub fn intersection_distance(regions: &[Region], q: &Vec2) -> Result<f64, MetricsError> {
    Ok(project_intersection(regions, q.as_slice(), INTERSECTION_TOL, INTERSECTION_MAX_ITER)?.distance)
}

/// Projection of the origin onto the intersection of `regions`.
pub fn intersection_anchor(regions: &[Region]) -> Result<Vec2, MetricsError> {
    let p = project_intersection(regions, &[0.0, 0.0], INTERSECTION_TOL, INTERSECTION_MAX_ITER)?.point;
    Ok(Vec2::new(p[0], p[1]))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub t: f64,
    pub lyapunov: f64,
    pub dist_own: Vec<f64>,
    /// `None` when the target sets are not all convex.
    pub dist_x0: Option<Vec<f64>>,
    pub consensus_error: f64,
    pub speed: Vec<f64>,
    pub min_pairwise: f64,
    /// `ℏ − ℓ` per coordinate, for laws that track it.
    pub spread: Option<[f64; 2]>,
}

impl StepMetrics {
    pub fn max_dist_own(&self) -> f64 {
        self.dist_own.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_dist_x0(&self) -> Option<f64> {
        self.dist_x0.as_ref().map(|d| d.iter().copied().fold(0.0, f64::max))
    }

    pub fn max_speed(&self) -> f64 {
        self.speed.iter().copied().fold(0.0, f64::max)
    }
}

/// Evaluates every per-sample quantity of a scenario state.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    scenario: &'a Scenario,
    anchor: Vec2,
    convex: bool,
}

impl<'a> Evaluator<'a> {
    pub fn new(scenario: &'a Scenario) -> Result<Self, MetricsError> {
        let convex = scenario.regions.iter().all(Region::is_convex);
        let anchor = if convex { intersection_anchor(&scenario.regions)? } else { Vec2::zeros() };
        Ok(Self { scenario, anchor, convex })
    }

    pub fn anchor(&self) -> Vec2 {
        self.anchor
    }

    pub fn lyapunov(&self, t: f64, states: &[AgentState]) -> Result<f64, MetricsError> {
        let s = self.scenario;
        let input = ControlInput { states, regions: &s.regions, graph: s.schedule.active_graph(t)?, params: &s.params };
        s.law.lyapunov(&input, &self.anchor)
    }

    pub fn evaluate(&self, t: f64, states: &[AgentState]) -> Result<StepMetrics, MetricsError> {
        let s = self.scenario;
        let dist_own =
            states.iter().zip(&s.regions).map(|(st, r)| r.distance(st.q.as_slice())).collect::<Result<Vec<_>, _>>()?;
        let dist_x0 = if self.convex {
            Some(states.iter().map(|st| intersection_distance(&s.regions, &st.q)).collect::<Result<Vec<_>, _>>()?)
        } else {
            None
        };
        let spread = if s.law.tracks_spread() {
            let d = crate::control::spread_diagnostic(states, &s.regions, s.schedule.active_graph(t)?, s.law.gain())?;
            Some(d.spread())
        } else {
            None
        };
        Ok(StepMetrics {
            t,
            lyapunov: self.lyapunov(t, states)?,
            dist_own,
            dist_x0,
            consensus_error: consensus_error(states),
            speed: states.iter().map(|st| st.qdot.norm()).collect(),
            min_pairwise: min_pairwise_distance(states),
            spread,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalValues {
    pub t: f64,
    pub max_dist_own: f64,
    pub max_dist_x0: Option<f64>,
    pub consensus_error: f64,
    pub max_speed: f64,
    pub lyapunov: f64,
}

/// Clauses of the aggregation definition at the final sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregationClauses {
    /// Judged on `‖q‖_{X0}` when available, otherwise on the own-set distance.
    pub in_target: bool,
    pub target_measure: &'static str,
    pub consensus: bool,
    pub at_rest: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityCheck {
    pub initial: f64,
    pub last: f64,
    pub worst_increase: f64,
    pub tolerance: f64,
    pub non_increasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OscillationCheck {
    pub window: f64,
    pub max_speed: f64,
    pub threshold: f64,
    pub oscillating: bool,
}

/// Checks tied to the avoidance law on a fixed connected graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AvoidanceCheck {
    pub safety_radius: f64,
    pub min_pairwise: f64,
    pub safety_held: bool,
    pub v0: f64,
    pub lambda2: f64,
    /// Sampled ρ̂, a lower bound on the linear-regularity constant.
    pub rho_hat: f64,
    pub rho_label: &'static str,
    pub bound: f64,
    pub max_dist_x0: f64,
    pub within_bound: bool,
    /// `2√(V0/λ₂)`.
    pub pair_bound: f64,
    pub consensus_error: f64,
    pub pairs_within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpreadCheck {
    pub steps: usize,
    /// Largest `D⁺ℏ − max‖δ‖` (or `−D⁺ℓ − max‖δ‖`) seen over all steps.
    pub worst_excess: f64,
    pub slack: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregationReport {
    pub scenario: String,
    pub law: String,
    pub k: f64,
    pub termination: Termination,
    pub samples: usize,
    pub tolerances: Tolerances,
    pub final_values: FinalValues,
    pub clauses: AggregationClauses,
    pub aggregation: bool,
    pub lyapunov: MonotonicityCheck,
    pub min_pairwise: f64,
    pub oscillation: OscillationCheck,
    pub gain: Option<GainCheck>,
    pub avoidance: Option<AvoidanceCheck>,
    pub spread: Option<SpreadCheck>,
}

pub const RHO_SAMPLES: usize = 2_000;

/// Builds the report from the recorded samples of `trajectory`.
pub fn summarize(scenario: &Scenario, trajectory: &Trajectory) -> Result<AggregationReport, MetricsError> {
    let metrics = &trajectory.metrics;
    let first = metrics.first().ok_or(MetricsError::EmptyTrajectory)?;
    let last = metrics.last().ok_or(MetricsError::EmptyTrajectory)?;
    let tol = &scenario.tolerances;

    let final_values = FinalValues {
        t: last.t,
        max_dist_own: last.max_dist_own(),
        max_dist_x0: last.max_dist_x0(),
        consensus_error: last.consensus_error,
        max_speed: last.max_speed(),
        lyapunov: last.lyapunov,
    };
    let (target_measure, target) = match final_values.max_dist_x0 {
        Some(d) => ("dist_X0", d),
        None => ("dist_own", final_values.max_dist_own),
    };
    let clauses = AggregationClauses {
        in_target: target < tol.distance,
        target_measure,
        consensus: final_values.consensus_error < tol.consensus,
        at_rest: final_values.max_speed < tol.velocity,
    };
    let completed = trajectory.termination == Termination::Completed;
    let aggregation = completed && clauses.in_target && clauses.consensus && clauses.at_rest;

    let v0 = first.lyapunov;
    let slack = MONOTONE_SLACK * v0.abs();
    let worst_increase = metrics.windows(2).map(|w| w[1].lyapunov - w[0].lyapunov).fold(f64::NEG_INFINITY, f64::max);
    let lyapunov = MonotonicityCheck {
        initial: v0,
        last: last.lyapunov,
        worst_increase: if metrics.len() > 1 { worst_increase } else { 0.0 },
        tolerance: slack,
        non_increasing: metrics.len() < 2 || worst_increase <= slack,
    };

    let window_start = last.t - OSCILLATION_WINDOW;
    let late_speed = metrics.iter().filter(|m| m.t >= window_start).map(StepMetrics::max_speed).fold(0.0, f64::max);
    let oscillation = OscillationCheck {
        window: OSCILLATION_WINDOW,
        max_speed: late_speed,
        threshold: OSCILLATION_SPEED,
        oscillating: completed && window_start >= metrics[0].t && late_speed > OSCILLATION_SPEED,
    };

    let gain =
        scenario.law.tracks_spread().then(|| crate::control::gain_condition(&scenario.schedule, scenario.law.gain()));

    let avoidance = match scenario.law.potential() {
        Some(pot)
            if scenario.schedule.is_constant()
                && is_connected(&scenario.schedule.graphs()[0])
                && final_values.max_dist_x0.is_some() =>
        {
            Some(avoidance_check(scenario, trajectory, &pot, v0, last)?)
        }
        _ => None,
    };

    let spread = trajectory.spread.as_ref().map(|s| SpreadCheck {
        steps: s.steps,
        worst_excess: s.worst_excess,
        slack: s.slack,
        holds: s.worst_excess <= s.slack,
    });

    Ok(AggregationReport {
        scenario: scenario.name.clone(),
        law: scenario.law.name().to_owned(),
        k: scenario.law.gain(),
        termination: trajectory.termination.clone(),
        samples: metrics.len(),
        tolerances: *tol,
        final_values,
        clauses,
        aggregation,
        lyapunov,
        min_pairwise: trajectory.min_pairwise,
        oscillation,
        gain,
        avoidance,
        spread,
    })
}

fn avoidance_check(
    scenario: &Scenario,
    trajectory: &Trajectory,
    pot: &PotentialParams,
    v0: f64,
    last: &StepMetrics,
) -> Result<AvoidanceCheck, MetricsError> {
    let graph = &scenario.schedule.graphs()[0];
    let lambda2 = algebraic_connectivity(graph)?;
    let rho_hat = sampled_rho(scenario)?;
    let bound = ultimate_bound(v0, graph, rho_hat)?;
    let max_dist_x0 = last.max_dist_x0().unwrap_or(f64::INFINITY);
    let pair_bound = 2.0 * (v0.max(0.0) / lambda2).sqrt();
    let safety_held = trajectory.termination == Termination::Completed && trajectory.min_pairwise > pot.safety_radius;
    Ok(AvoidanceCheck {
        safety_radius: pot.safety_radius,
        min_pairwise: trajectory.min_pairwise,
        safety_held,
        v0,
        lambda2,
        rho_hat,
        rho_label: "sampled lower-bound certificate",
        bound,
        max_dist_x0,
        within_bound: max_dist_x0 <= bound,
        pair_bound,
        consensus_error: last.consensus_error,
        pairs_within: last.consensus_error <= pair_bound,
    })
}

/// ρ̂ sampled over the bounding box of the initial positions, padded by one unit.
pub fn sampled_rho(scenario: &Scenario) -> Result<f64, MetricsError> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for s in &scenario.initial {
        for c in 0..2 {
            lo[c] = lo[c].min(s.q[c] - 1.0);
            hi[c] = hi[c].max(s.q[c] + 1.0);
        }
    }
    Ok(crate::convex::estimate_linear_regularity(&scenario.regions, &lo, &hi, RHO_SAMPLES, scenario.seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::library::ladder8;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lyapunov_fixed_examples() {
        let g = WeightedGraph::empty(1);
        let p = [ManipulatorParams::DEFAULT];
        let x = [Region::ball(vec![0.0, 0.0], 3.0)];
        assert_eq!(lyapunov_fixed(&[AgentState::at_rest([1.0, 1.0])], &x, &g, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(
            lyapunov_fixed(&[AgentState::at_rest([4.0, 0.0])], &x, &g, &p).unwrap(),
            0.5,
            epsilon = 1e-12
        );

        let g8 = ladder8();
        let states = vec![AgentState::at_rest([0.5, 0.5]); 8];
        let regions = vec![Region::ball(vec![0.0, 0.0], 1.0); 8];
        assert_eq!(lyapunov_fixed(&states, &regions, &g8, &[ManipulatorParams::DEFAULT; 8]).unwrap(), 0.0);
    }

    #[test]
    fn lyapunov_fixed_kinetic_term() {
        let g = WeightedGraph::empty(1);
        let p = [ManipulatorParams::DEFAULT];
        let x = [Region::ball(vec![0.0, 0.0], 3.0)];
        // M at q_y = 0 is [[1.813, 0.352], [0.352, 0.096]]
        let v = lyapunov_fixed(&[AgentState::new([0.0, 0.0], [1.0, 1.0])], &x, &g, &p).unwrap();
        assert_abs_diff_eq!(v, 0.5 * (1.813 + 2.0 * 0.352 + 0.096), epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_switching_examples() {
        let x = [Region::ball(vec![0.0, 0.0], 3.0)];
        let q0 = Vec2::new(0.5, 0.0);
        assert_eq!(lyapunov_switching(&[AgentState::at_rest([0.5, 0.0])], &x, 5.0, &q0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            lyapunov_switching(&[AgentState::at_rest([1.5, 0.0])], &x, 5.0, &q0).unwrap(),
            2.5,
            epsilon = 1e-12
        );
        let outside = Vec2::new(4.0, 0.0);
        assert!(matches!(
            lyapunov_switching(&[AgentState::at_rest([0.0, 0.0])], &x, 5.0, &outside),
            Err(MetricsError::AnchorOutside(_))
        ));
    }

    #[test]
    fn lyapunov_collision_examples() {
        let pot = PotentialParams::new(2.0, 0.2).unwrap();
        let g = WeightedGraph::empty(2);
        let p = [ManipulatorParams::DEFAULT; 2];
        let x = vec![Region::ball(vec![0.0, 0.0], 5.0); 2];
        let near = [AgentState::at_rest([0.5, 0.0]), AgentState::at_rest([-0.5, 0.0])];
        assert_abs_diff_eq!(lyapunov_collision(&near, &x, &g, &p, &pot).unwrap(), 9.765625, epsilon = 1e-12);
        let far = [AgentState::new([2.0, 0.0], [0.1, 0.2]), AgentState::at_rest([-2.0, 0.0])];
        assert_eq!(lyapunov_collision(&far, &x, &g, &p, &pot).unwrap(), lyapunov_fixed(&far, &x, &g, &p).unwrap());
    }

    #[test]
    fn ultimate_bound_examples() {
        let k16 = WeightedGraph::complete(16, 1.0);
        assert_abs_diff_eq!(ultimate_bound(1.0, &k16, 1.0).unwrap(), 2f64.sqrt() + 0.5, epsilon = 1e-10);
        let s16 = WeightedGraph::star(16, 1.0);
        assert_abs_diff_eq!(ultimate_bound(1.0, &s16, 1.0).unwrap(), 2f64.sqrt() + 2.0, epsilon = 1e-10);
        assert_eq!(ultimate_bound(0.0, &s16, 1.0).unwrap(), 0.0);
        assert!(ultimate_bound(1.0, &WeightedGraph::empty(3), 1.0).is_err());
    }

    #[test]
    fn pairwise_helpers() {
        let s = [AgentState::at_rest([0.0, 0.0]), AgentState::at_rest([3.0, 4.0]), AgentState::at_rest([0.0, 1.0])];
        assert_eq!(consensus_error(&s), 5.0);
        assert_eq!(min_pairwise_distance(&s), 1.0);
        assert_eq!(min_pairwise_distance(&s[..1]), f64::INFINITY);
    }
}

use serde::Serialize;

use super::laws::set_error;
use super::ControlError;
use crate::convex::Region;
use crate::dynamics::{AgentState, Vec2};
use crate::graph::{max_laplacian_eigenvalue, GraphSchedule, WeightedGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainCheck {
    pub k: f64,
    pub ok: bool,
    /// `2 + λmax/4` over every graph of the schedule.
    pub threshold: f64,
    pub lambda_max: f64,
    /// `2 + (n − 1) a^*/2`; never smaller than `threshold`.
    pub coarse_threshold: f64,
    pub coarse_ok: bool,
}

pub fn gain_condition(schedule: &GraphSchedule, k: f64) -> GainCheck {
    let lambda_max = max_laplacian_eigenvalue(schedule);
    let threshold = 2.0 + 0.25 * lambda_max;
    let a_max = schedule.weight_bounds().map_or(0.0, |b| b.1);
    let coarse_threshold = 2.0 + (schedule.node_count() as f64 - 1.0) * a_max / 2.0;
    GainCheck { k, ok: k > threshold, threshold, lambda_max, coarse_threshold, coarse_ok: k > coarse_threshold }
}

/// Extremes of the transformed coordinates `x_i = q_i`, `x_{n+i} = q_i + (2/k) q̇_i`
/// and the perturbation bound `max_i ‖δ_i‖`, where
/// `δ_i = (4/k²) Σ_j a_ij (q̇_i − q̇_j) − (2/k)(q_i − P(q_i))`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpreadDiagnostic {
    /// Per-coordinate maximum over the `2n` transformed values.
    pub hbar: [f64; 2],
    /// Per-coordinate minimum.
    pub ell: [f64; 2],
    pub max_delta: f64,
}

impl SpreadDiagnostic {
    pub fn spread(&self) -> [f64; 2] {
        [self.hbar[0] - self.ell[0], self.hbar[1] - self.ell[1]]
    }
}

pub fn spread_diagnostic(
    states: &[AgentState],
    regions: &[Region],
    graph: &WeightedGraph,
    k: f64,
) -> Result<SpreadDiagnostic, ControlError> {
    if !(k > 0.0) {
        return Err(ControlError::Config(format!("gain k must be positive, got {k}")));
    }
    let mut hbar = [f64::NEG_INFINITY; 2];
    let mut ell = [f64::INFINITY; 2];
    let mut max_delta: f64 = 0.0;
    for (i, s) in states.iter().enumerate() {
        for x in [s.q, s.q + (2.0 / k) * s.qdot] {
            for c in 0..2 {
                hbar[c] = hbar[c].max(x[c]);
                ell[c] = ell[c].min(x[c]);
            }
        }
        let rel = graph.neighbors(i).iter().fold(Vec2::zeros(), |acc, &(j, a)| acc + a * (s.qdot - states[j].qdot));
        let delta = (4.0 / (k * k)) * rel - (2.0 / k) * set_error(&regions[i], &s.q)?;
        max_delta = max_delta.max(delta.norm());
    }
    Ok(SpreadDiagnostic { hbar, ell, max_delta })
}

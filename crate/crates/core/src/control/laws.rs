use super::{
    potential_gradient, require_no_avoidance, require_positive_gain, ControlError, ControlInput, ControlLaw,
    ControllerConfig, PotentialParams,
};
use crate::convex::{ConvexError, Region};
use crate::dynamics::{coriolis_matrix, mass_matrix, AgentState, ManipulatorParams, Vec2};
use crate::graph::{GraphSchedule, WeightedGraph};
use crate::metrics::{self, MetricsError};

/// `q − P_X(q)`.
pub(crate) fn set_error(region: &Region, q: &Vec2) -> Result<Vec2, ConvexError> {
    let p = region.project(q.as_slice())?.point;
    Ok(Vec2::new(q.x - p[0], q.y - p[1]))
}

/// `Σ_j a_ij (q_i − q_j)`.
pub(crate) fn consensus_term(states: &[AgentState], graph: &WeightedGraph, i: usize) -> Vec2 {
    graph.neighbors(i).iter().fold(Vec2::zeros(), |acc, &(j, a)| acc + a * (states[i].q - states[j].q))
}

fn avoidance_term(states: &[AgentState], params: &PotentialParams, i: usize) -> Result<Vec2, ControlError> {
    let mut sum = Vec2::zeros();
    for (j, other) in states.iter().enumerate() {
        if j == i {
            continue;
        }
        sum += potential_gradient(params, &states[i].q, &other.q).map_err(|e| match e {
            ControlError::SafetyViolation { distance, safety_radius, .. } => {
                ControlError::SafetyViolation { pair: Some((i.min(j), i.max(j))), distance, safety_radius }
            }
            other => other,
        })?;
    }
    Ok(sum)
}

pub fn control_fixed(
    i: usize,
    states: &[AgentState],
    region: &Region,
    graph: &WeightedGraph,
    k: f64,
) -> Result<Vec2, ControlError> {
    let s = &states[i];
    Ok(-k * s.qdot - set_error(region, &s.q)? - consensus_term(states, graph, i))
}

pub fn control_switching(
    i: usize,
    states: &[AgentState],
    region: &Region,
    graph: &WeightedGraph,
    k: f64,
    params: &ManipulatorParams,
) -> Result<Vec2, ControlError> {
    let s = &states[i];
    let desired = k * s.qdot + set_error(region, &s.q)? + consensus_term(states, graph, i);
    Ok(coriolis_matrix(params, &s.q, &s.qdot) * s.qdot - mass_matrix(params, &s.q) * desired)
}

pub fn control_collision(
    i: usize,
    states: &[AgentState],
    region: &Region,
    graph: &WeightedGraph,
    k: f64,
    params: &PotentialParams,
) -> Result<Vec2, ControlError> {
    Ok(control_fixed(i, states, region, graph, k)? - avoidance_term(states, params, i)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedGraphLaw {
    pub k: f64,
}

impl FixedGraphLaw {
    pub const NAME: &'static str = "fixed";

    pub fn from_config(cfg: &ControllerConfig) -> Result<Self, ControlError> {
        require_positive_gain(cfg)?;
        require_no_avoidance(cfg)?;
        Ok(Self { k: cfg.k })
    }
}

impl ControlLaw for FixedGraphLaw {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn gain(&self) -> f64 {
        self.k
    }

    fn torque(&self, input: &ControlInput<'_>, i: usize) -> Result<Vec2, ControlError> {
        control_fixed(i, input.states, &input.regions[i], input.graph, self.k)
    }

    fn lyapunov(&self, input: &ControlInput<'_>, _anchor: &Vec2) -> Result<f64, MetricsError> {
        metrics::lyapunov_fixed(input.states, input.regions, input.graph, input.params)
    }
}

/// Requires exact knowledge of `M` and `C`; the closed loop becomes
/// `q̈ = −k q̇ − Σ a_ij(t)(q_i − q_j) − (q − P(q))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchingFeedbackLaw {
    pub k: f64,
}

impl SwitchingFeedbackLaw {
    pub const NAME: &'static str = "switching";

    /// The gain is checked against the schedule in [`ControlLaw::check_schedule`].
    pub fn from_config(cfg: &ControllerConfig) -> Result<Self, ControlError> {
        require_no_avoidance(cfg)?;
        if !cfg.k.is_finite() {
            return Err(ControlError::Config(format!("gain k must be finite, got {}", cfg.k)));
        }
        Ok(Self { k: cfg.k })
    }
}

impl ControlLaw for SwitchingFeedbackLaw {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn gain(&self) -> f64 {
        self.k
    }

    fn check_schedule(&self, schedule: &GraphSchedule) -> Result<(), ControlError> {
        let check = super::gain_condition(schedule, self.k);
        if check.ok {
            Ok(())
        } else {
            Err(ControlError::GainTooSmall { k: self.k, threshold: check.threshold, coarse: check.coarse_threshold })
        }
    }

    fn torque(&self, input: &ControlInput<'_>, i: usize) -> Result<Vec2, ControlError> {
        control_switching(i, input.states, &input.regions[i], input.graph, self.k, &input.params[i])
    }

    fn lyapunov(&self, input: &ControlInput<'_>, anchor: &Vec2) -> Result<f64, MetricsError> {
        metrics::lyapunov_switching(input.states, input.regions, self.k, anchor)
    }

    fn tracks_spread(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionAvoidingLaw {
    pub k: f64,
    pub potential: PotentialParams,
}

impl CollisionAvoidingLaw {
    pub const NAME: &'static str = "collision";

    pub fn from_config(cfg: &ControllerConfig) -> Result<Self, ControlError> {
        require_positive_gain(cfg)?;
        let (Some(big_r), Some(r)) = (cfg.sensing_radius, cfg.safety_radius) else {
            return Err(ControlError::Config("law \"collision\" needs both R and r".into()));
        };
        Ok(Self { k: cfg.k, potential: PotentialParams::new(big_r, r)? })
    }
}

impl ControlLaw for CollisionAvoidingLaw {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn gain(&self) -> f64 {
        self.k
    }

    fn potential(&self) -> Option<PotentialParams> {
        Some(self.potential)
    }

    fn torque(&self, input: &ControlInput<'_>, i: usize) -> Result<Vec2, ControlError> {
        control_collision(i, input.states, &input.regions[i], input.graph, self.k, &self.potential)
    }

    fn lyapunov(&self, input: &ControlInput<'_>, _anchor: &Vec2) -> Result<f64, MetricsError> {
        metrics::lyapunov_collision(input.states, input.regions, input.graph, input.params, &self.potential)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::forward_dynamics;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ball(c: [f64; 2], r: f64) -> Region {
        Region::ball(c.to_vec(), r)
    }

    fn random_states(rng: &mut ChaCha8Rng, n: usize, span: f64) -> Vec<AgentState> {
        (0..n)
            .map(|_| {
                AgentState::new(
                    [rng.gen_range(-span..span), rng.gen_range(-span..span)],
                    [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
                )
            })
            .collect()
    }

    #[test]
    fn fixed_law_examples() {
        let g1 = WeightedGraph::empty(1);
        let x = ball([0.0, 0.0], 3.0);
        let at_rest = [AgentState::at_rest([1.0, 1.0])];
        assert_eq!(control_fixed(0, &at_rest, &x, &g1, 1.0).unwrap(), Vec2::zeros());
        let outside = [AgentState::at_rest([4.0, 0.0])];
        assert_abs_diff_eq!(control_fixed(0, &outside, &x, &g1, 1.0).unwrap(), Vec2::new(-1.0, 0.0));

        let g2 = WeightedGraph::from_edges(2, &[(1, 2, 1.0)]).unwrap();
        let states = [AgentState::at_rest([1.0, 0.0]), AgentState::at_rest([0.0, 0.0])];
        let big = ball([0.0, 0.0], 10.0);
        assert_eq!(control_fixed(0, &states, &big, &g2, 1.0).unwrap(), Vec2::new(-1.0, 0.0));
        assert_eq!(control_fixed(1, &states, &big, &g2, 1.0).unwrap(), Vec2::new(1.0, 0.0));
    }

    #[test]
    fn consensus_terms_cancel() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = crate::graph::library::ladder8();
        for _ in 0..100 {
            let states = random_states(&mut rng, 8, 10.0);
            let total: Vec2 = (0..8).map(|i| consensus_term(&states, &g, i)).sum();
            assert!(total.amax() <= 1e-12);
        }
    }

    #[test]
    fn switching_law_examples() {
        let p = ManipulatorParams::DEFAULT;
        let g1 = WeightedGraph::empty(1);
        let rest = [AgentState::at_rest([0.5, 0.0])];
        assert_eq!(control_switching(0, &rest, &ball([0.0, 0.0], 1.0), &g1, 5.0, &p).unwrap(), Vec2::zeros());
        let out = [AgentState::at_rest([2.0, 0.0])];
        let tau = control_switching(0, &out, &ball([0.0, 0.0], 1.0), &g1, 5.0, &p).unwrap();
        assert_abs_diff_eq!(tau, Vec2::new(-1.813, -0.352), epsilon = 1e-12);
    }

    #[test]
    fn switching_closed_loop_is_linearized() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = crate::graph::library::ladder8();
        let regions: Vec<Region> = (0..8).map(|i| ball([i as f64 * 0.3, -1.0], 2.0)).collect();
        let params: Vec<ManipulatorParams> =
            (0..8).map(|i| ManipulatorParams::new(1.301 + 0.01 * i as f64, 0.256, 0.096).unwrap()).collect();
        let k = 5.0;
        for _ in 0..200 {
            let states = random_states(&mut rng, 8, 8.0);
            for i in 0..8 {
                let tau = control_switching(i, &states, &regions[i], &g, k, &params[i]).unwrap();
                let acc = forward_dynamics(&params[i], &states[i], &tau).unwrap();
                let expected = -k * states[i].qdot
                    - consensus_term(&states, &g, i)
                    - set_error(&regions[i], &states[i].q).unwrap();
                assert!((acc - expected).amax() <= 1e-12 * (1.0 + expected.amax()), "{acc} vs {expected}");
            }
        }
    }

    #[test]
    fn collision_law_reduces_to_fixed_when_far() {
        let pot = PotentialParams::new(2.0, 0.2).unwrap();
        let g = crate::graph::library::ladder8();
        let x = ball([0.0, 0.0], 3.0);
        let states: Vec<AgentState> =
            (0..8).map(|i| AgentState::new([i as f64 * 3.0, -(i as f64)], [0.1 * i as f64, -0.3])).collect();
        for i in 0..8 {
            assert_eq!(
                control_collision(i, &states, &x, &g, 1.0, &pot).unwrap(),
                control_fixed(i, &states, &x, &g, 1.0).unwrap()
            );
        }
    }

    #[test]
    fn collision_law_two_agent_symmetry() {
        let pot = PotentialParams::new(2.0, 0.2).unwrap();
        let g = WeightedGraph::from_edges(2, &[(1, 2, 1.0)]).unwrap();
        let x = ball([0.0, 0.0], 0.5);
        let states = [AgentState::new([0.7, 0.2], [0.3, -0.1]), AgentState::new([-0.7, -0.2], [-0.3, 0.1])];
        let t0 = control_collision(0, &states, &x, &g, 1.0, &pot).unwrap();
        let t1 = control_collision(1, &states, &x, &g, 1.0, &pot).unwrap();
        assert_abs_diff_eq!(t0, -t1, epsilon = 1e-12);
    }

    #[test]
    fn avoidance_terms_cancel_pairwise() {
        let pot = PotentialParams::new(2.0, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut checked = 0;
        while checked < 1_000 {
            let states = random_states(&mut rng, 6, 2.0);
            let Ok(terms) = (0..6).map(|i| avoidance_term(&states, &pot, i)).collect::<Result<Vec<_>, _>>() else {
                continue;
            };
            let total: Vec2 = terms.iter().sum();
            let scale = terms.iter().map(|t| t.amax()).fold(1.0, f64::max);
            assert!(total.amax() <= 1e-10 * scale, "{total}");
            checked += 1;
        }
    }

    #[test]
    fn collision_law_flags_safety_pair() {
        let pot = PotentialParams::new(2.0, 0.2).unwrap();
        let g = WeightedGraph::empty(3);
        let states =
            [AgentState::at_rest([0.0, 0.0]), AgentState::at_rest([5.0, 0.0]), AgentState::at_rest([0.1, 0.0])];
        match control_collision(0, &states, &ball([0.0, 0.0], 1.0), &g, 1.0, &pot) {
            Err(ControlError::SafetyViolation { pair: Some((0, 2)), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}

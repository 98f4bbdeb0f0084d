//! Scenario files and their validated form.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControlError, ControlLaw, ControllerConfig, LawRegistry};
use crate::convex::{ConvexError, Region};
use crate::dynamics::{AgentState, DynamicsError, ManipulatorParams};
use crate::graph::{GraphConfig, GraphError, GraphSchedule, ScheduleConfig, WeightedGraph};
use crate::metrics::{self, min_pairwise_distance, MetricsError};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_T_END: f64 = 100.0;
pub const DEFAULT_RECORD_EVERY: usize = 100;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("invalid region {index}: {source}")]
    Region { index: usize, source: ConvexError },
    #[error("target sets have no common point: {0}")]
    Intersection(MetricsError),
    #[error("invalid dynamics: {0}")]
    Dynamics(#[from] DynamicsError),
    #[error("invalid graph: {0}")]
    Graph(#[from] GraphError),
    #[error("invalid controller: {0}")]
    Control(#[from] ControlError),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    pub theta: ManipulatorParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_agent: Option<Vec<ManipulatorParams>>,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self { theta: ManipulatorParams::DEFAULT, per_agent: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub q: Vec<[f64; 2]>,
    pub qdot: Vec<[f64; 2]>,
}

/// Seeded placement: one agent per cell of a `rows × cols` grid over
/// `[lo, hi]²`, jittered around the cell center, with velocity components
/// drawn from the multiples of `speed_step` in `[−speed_max, speed_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPlacement {
    pub rows: usize,
    pub cols: usize,
    pub lo: f64,
    pub hi: f64,
    pub jitter: f64,
    pub speed_step: f64,
    pub speed_max: f64,
}

impl GridPlacement {
    pub fn agents(&self) -> usize {
        self.rows * self.cols
    }

    pub fn generate(&self, seed: u64) -> Result<Vec<AgentState>, ScenarioError> {
        let width = (self.hi - self.lo) / self.cols.max(1) as f64;
        let height = (self.hi - self.lo) / self.rows.max(1) as f64;
        if self.agents() == 0 || !(width > 0.0) {
            return Err(invalid("placement grid must have rows, cols ≥ 1 and lo < hi"));
        }
        if !(self.jitter >= 0.0 && 2.0 * self.jitter < width.min(height)) {
            return Err(invalid(format!("placement jitter {} must stay inside half a cell", self.jitter)));
        }
        if !(self.speed_step > 0.0 && self.speed_max >= 0.0) {
            return Err(invalid("placement needs speed_step > 0 and speed_max ≥ 0"));
        }
        let levels = (self.speed_max / self.speed_step + 1e-9).floor() as i64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(self.agents());
        for r in 0..self.rows {
            for c in 0..self.cols {
                let cx = self.lo + (c as f64 + 0.5) * width;
                let cy = self.hi - (r as f64 + 0.5) * height;
                let mut jitter = || if self.jitter > 0.0 { rng.gen_range(-self.jitter..=self.jitter) } else { 0.0 };
                let q = [cx + jitter(), cy + jitter()];
                let mut speed = || rng.gen_range(-levels..=levels) as f64 * self.speed_step;
                let qdot = [speed(), speed()];
                out.push(AgentState::new(q, qdot));
            }
        }
        Ok(out)
    }
}

/// Final-time thresholds for the aggregation clauses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub distance: f64,
    pub consensus: f64,
    pub velocity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { distance: 1e-2, consensus: 1e-2, velocity: 1e-3 }
    }
}

fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_t_end() -> f64 {
    DEFAULT_T_END
}
fn default_record_every() -> usize {
    DEFAULT_RECORD_EVERY
}
fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    pub regions: Vec<Region>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
    pub controller: ControllerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<GridPlacement>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub nonconvex_demo: bool,
    #[serde(default)]
    pub tolerances: Tolerances,
}

/// Command-line style overrides applied before validation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub k: Option<f64>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    /// Only affects seeded placement.
    pub seed: Option<u64>,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(k) = o.k {
            self.controller.k = k;
        }
        if let Some(dt) = o.dt {
            self.dt = dt;
        }
        if let Some(t) = o.t_end {
            self.t_end = t;
        }
        if let (Some(seed), Some(_)) = (o.seed, &self.placement) {
            self.seed = seed;
        }
    }

    pub fn build(&self) -> Result<Scenario, ScenarioError> {
        self.build_with(&LawRegistry::builtin())
    }

    pub fn build_with(&self, registry: &LawRegistry) -> Result<Scenario, ScenarioError> {
        Scenario::validate(self, registry)
    }
}

/// A validated scenario, ready to run.
#[derive(Debug)]
pub struct Scenario {
    pub name: String,
    pub params: Vec<ManipulatorParams>,
    pub regions: Vec<Region>,
    pub schedule: GraphSchedule,
    pub controller: ControllerConfig,
    pub law: Box<dyn ControlLaw>,
    pub initial: Vec<AgentState>,
    pub dt: f64,
    pub t_end: f64,
    pub steps: usize,
    pub record_every: usize,
    pub seed: u64,
    pub nonconvex_demo: bool,
    pub tolerances: Tolerances,
}

/// `x / dt` when it is an integer up to rounding.
fn steps_of(x: f64, dt: f64) -> Option<usize> {
    let s = x / dt;
    let r = s.round();
    ((s - r).abs() <= 1e-9 * r.max(1.0) && r >= 0.0).then_some(r as usize)
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        ScenarioFile::from_json(text)?.build()
    }

    pub fn agent_count(&self) -> usize {
        self.initial.len()
    }

    pub fn is_convex(&self) -> bool {
        self.regions.iter().all(Region::is_convex)
    }

    fn validate(file: &ScenarioFile, registry: &LawRegistry) -> Result<Self, ScenarioError> {
        let initial = match (&file.initial, &file.placement) {
            (Some(init), None) => {
                if init.q.len() != init.qdot.len() {
                    return Err(invalid(format!(
                        "initial q has {} entries but qdot has {}",
                        init.q.len(),
                        init.qdot.len()
                    )));
                }
                init.q.iter().zip(&init.qdot).map(|(q, v)| AgentState::new(*q, *v)).collect::<Vec<_>>()
            }
            (None, Some(p)) => p.generate(file.seed)?,
            _ => return Err(invalid("exactly one of `initial` and `placement` is required")),
        };
        let n = initial.len();
        if n == 0 {
            return Err(invalid("scenario has no agents"));
        }
        if let Some(i) = initial.iter().position(|s| !s.is_finite()) {
            return Err(invalid(format!("initial state of agent {} is not finite", i + 1)));
        }

        if file.regions.len() != n {
            return Err(invalid(format!("{} regions for {} agents", file.regions.len(), n)));
        }
        let regions: Vec<Region> = file.regions.iter().cloned().map(Region::normalized).collect();
        for (index, r) in regions.iter().enumerate() {
            r.validate().map_err(|source| ScenarioError::Region { index: index + 1, source })?;
            if r.dim() != 2 {
                return Err(ScenarioError::Region {
                    index: index + 1,
                    source: ConvexError::Dimension { expected: 2, got: r.dim() },
                });
            }
        }
        let convex = regions.iter().all(Region::is_convex);
        if !convex && !file.nonconvex_demo {
            return Err(invalid("non-convex target sets need \"nonconvex_demo\": true"));
        }
        if convex {
            metrics::intersection_anchor(&regions).map_err(ScenarioError::Intersection)?;
        }

        let theta = file.dynamics.theta;
        theta.validate()?;
        let params = match &file.dynamics.per_agent {
            Some(list) if list.len() != n => {
                return Err(invalid(format!("dynamics.per_agent has {} entries for {} agents", list.len(), n)))
            }
            Some(list) => {
                for p in list {
                    p.validate()?;
                }
                list.clone()
            }
            None => vec![theta; n],
        };

        let schedule = match (&file.graph, &file.schedule) {
            (Some(g), None) => GraphSchedule::constant(WeightedGraph::from_config(g)?),
            (None, Some(s)) => GraphSchedule::from_config(s)?,
            _ => return Err(invalid("exactly one of `graph` and `schedule` is required")),
        };
        if schedule.node_count() != n {
            return Err(invalid(format!("graph has {} nodes for {} agents", schedule.node_count(), n)));
        }
        if schedule.start() > 0.0 {
            return Err(invalid(format!("schedule starts at {} after the run start 0", schedule.start())));
        }

        if !(file.dt > 0.0 && file.dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {}", file.dt)));
        }
        if !(file.t_end > 0.0 && file.t_end.is_finite()) {
            return Err(invalid(format!("t_end must be positive, got {}", file.t_end)));
        }
        if file.record_every == 0 {
            return Err(invalid("record_every must be at least 1"));
        }
        let steps = steps_of(file.t_end, file.dt)
            .ok_or_else(|| invalid(format!("t_end {} is not a multiple of dt {}", file.t_end, file.dt)))?;
        if !schedule.is_constant() {
            for &t in &schedule.switch_times()[1..] {
                if steps_of(t, file.dt).is_none() {
                    return Err(invalid(format!("switch time {t} is not a multiple of dt {}", file.dt)));
                }
            }
        }

        let law = registry.build(&file.controller)?;
        law.check_schedule(&schedule)?;
        if law.tracks_spread() && !convex {
            return Err(invalid(format!("law {:?} needs convex target sets", law.name())));
        }
        if let Some(pot) = law.potential() {
            let d = min_pairwise_distance(&initial);
            if d <= pot.safety_radius {
                return Err(ControlError::SafetyViolation {
                    pair: None,
                    distance: d,
                    safety_radius: pot.safety_radius,
                }
                .into());
            }
        }

        Ok(Self {
            name: file.name.clone(),
            params,
            regions,
            schedule,
            controller: file.controller.clone(),
            law,
            initial,
            dt: file.dt,
            t_end: file.t_end,
            steps,
            record_every: file.record_every,
            seed: file.seed,
            nonconvex_demo: file.nonconvex_demo,
            tolerances: file.tolerances,
        })
    }
}

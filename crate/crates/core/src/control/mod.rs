//! Distributed set-aggregation control laws.
//!
//! Each law implements [`ControlLaw`] and is constructed by name through a
//! [`LawRegistry`]. The built-in registry knows three laws:
//!
//! | name        | torque for agent `i`                                                        |
//! |-------------|------------------------------------------------------------------------------|
//! | `fixed`     | `−k q̇ − (q − P(q)) − Σ a_ij (q_i − q_j)`                                     |
//! | `switching` | `C q̇ − M [k q̇ + (q − P(q)) + Σ a_ij(t) (q_i − q_j)]` (feedback linearized) |
//! | `collision` | `fixed` plus `−Σ_j ∂V_ij/∂q_i` over every agent within the sensing radius   |

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex::{ConvexError, Region};
use crate::dynamics::{AgentState, DynamicsError, ManipulatorParams, Vec2};
use crate::graph::{GraphSchedule, WeightedGraph};
use crate::metrics::MetricsError;

mod analysis;
mod laws;
mod potential;

pub use analysis::{gain_condition, spread_diagnostic, GainCheck, SpreadDiagnostic};
pub use laws::{
    control_collision, control_fixed, control_switching, CollisionAvoidingLaw, FixedGraphLaw, SwitchingFeedbackLaw,
};
pub use potential::{potential, potential_gradient, PotentialParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("safety radius {safety_radius} violated{}: distance {distance}", pair_label(.pair))]
    SafetyViolation { pair: Option<(usize, usize)>, distance: f64, safety_radius: f64 },
    #[error("gain k = {k} does not exceed the gain threshold {threshold:.6} (2 + λmax/4; coarse bound {coarse:.6})")]
    GainTooSmall { k: f64, threshold: f64, coarse: f64 },
    #[error("unknown control law {name:?}; registered laws: {known}")]
    UnknownLaw { name: String, known: String },
    #[error("invalid controller configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Convex(#[from] ConvexError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

fn pair_label(pair: &Option<(usize, usize)>) -> String {
    pair.map(|(i, j)| format!(" by agents {} and {}", i + 1, j + 1)).unwrap_or_default()
}

/// `"controller": {"law": "fixed"|"switching"|"collision", "k": .., "R": .., "r": ..}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub law: String,
    pub k: f64,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub sensing_radius: Option<f64>,
    #[serde(rename = "r", default, skip_serializing_if = "Option::is_none")]
    pub safety_radius: Option<f64>,
}

impl ControllerConfig {
    pub fn new(law: &str, k: f64) -> Self {
        Self { law: law.to_owned(), k, sensing_radius: None, safety_radius: None }
    }

    pub fn with_avoidance(mut self, sensing_radius: f64, safety_radius: f64) -> Self {
        self.sensing_radius = Some(sensing_radius);
        self.safety_radius = Some(safety_radius);
        self
    }

    fn has_avoidance(&self) -> bool {
        self.sensing_radius.is_some() || self.safety_radius.is_some()
    }
}

/// Snapshot the laws read from. All slices are indexed by agent.
#[derive(Debug, Clone, Copy)]
pub struct ControlInput<'a> {
    pub states: &'a [AgentState],
    pub regions: &'a [Region],
    pub graph: &'a WeightedGraph,
    pub params: &'a [ManipulatorParams],
}

pub trait ControlLaw: fmt::Debug + Send + Sync {
    /// Registry name.
    fn name(&self) -> &'static str;

    /// Damping gain `k`.
    fn gain(&self) -> f64;

    fn potential(&self) -> Option<PotentialParams> {
        None
    }

    /// Load-time check of the law against the graph schedule it will run on.
    fn check_schedule(&self, _schedule: &GraphSchedule) -> Result<(), ControlError> {
        Ok(())
    }

    fn torque(&self, input: &ControlInput<'_>, i: usize) -> Result<Vec2, ControlError>;

    fn torques(&self, input: &ControlInput<'_>) -> Result<Vec<Vec2>, ControlError> {
        (0..input.states.len()).map(|i| self.torque(input, i)).collect()
    }

    /// The Lyapunov function the law's convergence argument uses. `anchor` is a
    /// fixed point of the target intersection; only the switching law reads it.
    fn lyapunov(&self, input: &ControlInput<'_>, anchor: &Vec2) -> Result<f64, MetricsError>;

    /// Whether the spread diagnostic of the transformed states applies.
    fn tracks_spread(&self) -> bool {
        false
    }
}

pub type LawFactory = fn(&ControllerConfig) -> Result<Box<dyn ControlLaw>, ControlError>;

/// Name → constructor table for control laws.
#[derive(Clone, Default)]
pub struct LawRegistry {
    factories: BTreeMap<String, LawFactory>,
}

impl fmt::Debug for LawRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl LawRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut r = Self::new();
        r.register(FixedGraphLaw::NAME, |c| Ok(Box::new(FixedGraphLaw::from_config(c)?)));
        r.register(SwitchingFeedbackLaw::NAME, |c| Ok(Box::new(SwitchingFeedbackLaw::from_config(c)?)));
        r.register(CollisionAvoidingLaw::NAME, |c| Ok(Box::new(CollisionAvoidingLaw::from_config(c)?)));
        r
    }

    /// Adds or replaces a law.
    pub fn register(&mut self, name: &str, factory: LawFactory) {
        self.factories.insert(name.to_owned(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(&self, cfg: &ControllerConfig) -> Result<Box<dyn ControlLaw>, ControlError> {
        let factory = self.factories.get(&cfg.law).ok_or_else(|| ControlError::UnknownLaw {
            name: cfg.law.clone(),
            known: self.names().collect::<Vec<_>>().join(", "),
        })?;
        factory(cfg)
    }
}

fn require_no_avoidance(cfg: &ControllerConfig) -> Result<(), ControlError> {
    if cfg.has_avoidance() {
        return Err(ControlError::Config(format!("law {:?} does not take avoidance radii R/r", cfg.law)));
    }
    Ok(())
}

fn require_positive_gain(cfg: &ControllerConfig) -> Result<(), ControlError> {
    if !(cfg.k.is_finite() && cfg.k > 0.0) {
        return Err(ControlError::Config(format!("gain k must be positive, got {}", cfg.k)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_builds_each_law() {
        let reg = LawRegistry::builtin();
        assert_eq!(reg.names().collect::<Vec<_>>(), ["collision", "fixed", "switching"]);
        assert_eq!(reg.build(&ControllerConfig::new("fixed", 1.0)).unwrap().name(), "fixed");
        assert_eq!(reg.build(&ControllerConfig::new("switching", 5.0)).unwrap().name(), "switching");
        let c = reg.build(&ControllerConfig::new("collision", 1.0).with_avoidance(2.0, 0.2)).unwrap();
        assert_eq!(c.potential(), Some(PotentialParams::new(2.0, 0.2).unwrap()));
    }

    #[test]
    fn registry_rejects_bad_configs() {
        let reg = LawRegistry::builtin();
        assert!(matches!(reg.build(&ControllerConfig::new("pid", 1.0)), Err(ControlError::UnknownLaw { .. })));
        assert!(reg.build(&ControllerConfig::new("fixed", 0.0)).is_err());
        assert!(reg.build(&ControllerConfig::new("fixed", 1.0).with_avoidance(2.0, 0.2)).is_err());
        assert!(reg.build(&ControllerConfig::new("collision", 1.0)).is_err());
        assert!(reg.build(&ControllerConfig::new("collision", 1.0).with_avoidance(0.2, 2.0)).is_err());
    }

    #[test]
    fn custom_law_registration() {
        let mut reg = LawRegistry::new();
        reg.register("damped", |c| Ok(Box::new(FixedGraphLaw::from_config(c)?)));
        assert_eq!(reg.build(&ControllerConfig::new("damped", 2.0)).unwrap().gain(), 2.0);
    }

    #[test]
    fn config_json_keys() {
        let c: ControllerConfig = serde_json::from_str(r#"{"law":"collision","k":1,"R":2,"r":0.2}"#).unwrap();
        assert_eq!(c, ControllerConfig::new("collision", 1.0).with_avoidance(2.0, 0.2));
        let text = serde_json::to_string(&ControllerConfig::new("fixed", 1.0)).unwrap();
        assert_eq!(text, r#"{"law":"fixed","k":1.0}"#);
    }
}

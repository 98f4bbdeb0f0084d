//! Distributed set aggregation for networked two-link manipulators.
//!
//! Agents with Euler–Lagrange dynamics `M(q)q̈ + C(q,q̇)q̇ = τ` each see one
//! convex target set and exchange relative positions over a (possibly
//! switching) graph. The crate provides the plant, projections, graphs, the
//! control laws, a deterministic RK4 simulator, and the metrics used to judge a
//! run.

// `!(x > 0.0)` guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod control;
pub mod convex;
pub mod dynamics;
pub mod graph;
pub mod metrics;
pub mod replicate;
pub mod scenario;
pub mod sim;

pub use control::{ControlLaw, ControllerConfig, LawRegistry};
pub use convex::Region;
pub use dynamics::{AgentState, ManipulatorParams, Vec2};
pub use graph::{GraphSchedule, WeightedGraph};
pub use metrics::{summarize, AggregationReport};
pub use scenario::{Overrides, Scenario, ScenarioFile};
pub use sim::{run, Termination, Trajectory};

//! Undirected weighted communication graphs and piecewise-constant switching
//! schedules.
//!
//! Node labels in configuration files are 1-based (`1..=n`); everything in
//! memory is 0-based.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    NoNodes,
    #[error("edge ({0}, {1}) references a node outside 1..={2}")]
    NodeOutOfRange(usize, usize, usize),
    #[error("self loop on node {0}")]
    SelfLoop(usize),
    #[error("edge ({0}, {1}) has non-positive or non-finite weight {2}")]
    BadWeight(usize, usize, f64),
    #[error("adjacency is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("schedule has no graphs")]
    NoGraphs,
    #[error("schedule graphs disagree on node count ({0} vs {1})")]
    NodeCountMismatch(usize, usize),
    #[error("switch times must be finite and strictly increasing (at index {0})")]
    SwitchTimesNotIncreasing(usize),
    #[error("switch times list is empty")]
    NoSwitchTimes,
    #[error("graph index {0} out of range for {1} graphs")]
    BadGraphIndex(usize, usize),
    #[error("dwell time must be positive, got {0}")]
    BadDwell(f64),
    #[error("interval {index} lasts {length} which is shorter than the dwell time {dwell}")]
    DwellViolated { index: usize, length: f64, dwell: f64 },
    #[error("time {t} precedes schedule start {start}")]
    BeforeStart { t: f64, start: f64 },
    #[error("window length must be positive, got {0}")]
    BadWindow(f64),
    #[error("graph is disconnected, so its smallest nonzero Laplacian eigenvalue is undefined")]
    Disconnected,
}

/// `{"nodes": n, "edges": [[i, j, w], ...]}` with 1-based labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub nodes: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    n: usize,
    adjacency: DMatrix<f64>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl WeightedGraph {
    pub fn empty(n: usize) -> Self {
        Self::from_adjacency(DMatrix::zeros(n, n)).expect("zero matrix is a valid adjacency")
    }

    pub fn from_adjacency(adjacency: DMatrix<f64>) -> Result<Self, GraphError> {
        let n = adjacency.nrows();
        if n == 0 {
            return Err(GraphError::NoNodes);
        }
        if adjacency.ncols() != n {
            return Err(GraphError::NodeCountMismatch(n, adjacency.ncols()));
        }
        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return Err(GraphError::SelfLoop(i + 1));
            }
            for j in 0..n {
                let w = adjacency[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(GraphError::BadWeight(i + 1, j + 1, w));
                }
                if w != adjacency[(j, i)] {
                    return Err(GraphError::Asymmetric(i + 1, j + 1));
                }
                if w > 0.0 {
                    neighbors[i].push((j, w));
                }
            }
        }
        Ok(Self { n, adjacency, neighbors })
    }

    /// Builds from 1-based `(i, j, w)` edges. Repeated edges keep the last weight.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::NoNodes);
        }
        let mut a = DMatrix::zeros(n, n);
        for &(i, j, w) in edges {
            if i == 0 || j == 0 || i > n || j > n {
                return Err(GraphError::NodeOutOfRange(i, j, n));
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(GraphError::BadWeight(i, j, w));
            }
            a[(i - 1, j - 1)] = w;
            a[(j - 1, i - 1)] = w;
        }
        Self::from_adjacency(a)
    }

    pub fn from_config(cfg: &GraphConfig) -> Result<Self, GraphError> {
        Self::from_edges(cfg.nodes, &cfg.edges)
    }

    pub fn to_config(&self) -> GraphConfig {
        let mut edges = Vec::new();
        for i in 0..self.n {
            for &(j, w) in &self.neighbors[i] {
                if j > i {
                    edges.push((i + 1, j + 1, w));
                }
            }
        }
        GraphConfig { nodes: self.n, edges }
    }

    pub fn complete(n: usize, w: f64) -> Self {
        let edges: Vec<_> = (1..=n).flat_map(|i| ((i + 1)..=n).map(move |j| (i, j, w))).collect();
        Self::from_edges(n, &edges).expect("complete graph is valid")
    }

    /// Star centered at node 1 (0-based index 0).
    pub fn star(n: usize, w: f64) -> Self {
        let edges: Vec<_> = (2..=n).map(|j| (1, j, w)).collect();
        Self::from_edges(n, &edges).expect("star graph is valid")
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[(i, j)]
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    /// `(j, a_ij)` for every neighbor `j` of node `i` (0-based).
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// Edge-wise union; shared edges keep the larger weight.
    pub fn union(&self, other: &WeightedGraph) -> Result<WeightedGraph, GraphError> {
        if self.n != other.n {
            return Err(GraphError::NodeCountMismatch(self.n, other.n));
        }
        Self::from_adjacency(self.adjacency.zip_map(&other.adjacency, f64::max))
    }

    /// Smallest and largest positive weight, if there are any edges.
    pub fn weight_bounds(&self) -> Option<(f64, f64)> {
        self.adjacency.iter().filter(|w| **w > 0.0).fold(None, |acc, &w| match acc {
            None => Some((w, w)),
            Some((lo, hi)) => Some((lo.min(w), hi.max(w))),
        })
    }

    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut count = 0;
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &(v, _) in &self.neighbors[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        count
    }
}

/// `l_ii = Σ_j a_ij`, `l_ij = −a_ij`.
pub fn laplacian(g: &WeightedGraph) -> DMatrix<f64> {
    let mut l = -g.adjacency.clone();
    for i in 0..g.n {
        l[(i, i)] = g.adjacency.row(i).sum();
    }
    l
}

pub fn is_connected(g: &WeightedGraph) -> bool {
    g.component_count() == 1
}

/// Largest Laplacian eigenvalue by power iteration, refined with a few
/// Rayleigh-quotient iterations.
pub fn laplacian_spectral_radius(g: &WeightedGraph) -> f64 {
    let l = laplacian(g);
    let n = g.n;
    if l.amax() == 0.0 {
        return 0.0;
    }
    // Start away from the constant vector, which spans the kernel.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + i as f64 + 0.5 * ((i * i) as f64).sin());
    let mean = v.mean();
    v.add_scalar_mut(-mean);
    v.normalize_mut();
    let mut mu = v.dot(&(&l * &v));
    for _ in 0..20_000 {
        let w = &l * &v;
        let norm = w.norm();
        if norm == 0.0 {
            break;
        }
        v = w / norm;
        let next = v.dot(&(&l * &v));
        let done = (next - mu).abs() <= 1e-13 * next.max(1.0);
        mu = next;
        if done {
            break;
        }
    }
    for _ in 0..5 {
        let shifted = &l - DMatrix::identity(n, n) * mu;
        let Some(w) = shifted.lu().solve(&v) else { break };
        let norm = w.norm();
        if !norm.is_finite() || norm == 0.0 {
            break;
        }
        let candidate = w / norm;
        let next = candidate.dot(&(&l * &candidate));
        // Only accept refinements that stay on the top of the spectrum.
        if next + 1e-9 < mu {
            break;
        }
        let done = (next - mu).abs() <= 1e-14 * next.max(1.0);
        v = candidate;
        mu = next;
        if done {
            break;
        }
    }
    mu
}

/// Smallest nonzero Laplacian eigenvalue of a connected graph.
pub fn algebraic_connectivity(g: &WeightedGraph) -> Result<f64, GraphError> {
    if !is_connected(g) {
        return Err(GraphError::Disconnected);
    }
    if g.n == 1 {
        return Err(GraphError::Disconnected);
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(laplacian(g)).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev[1])
}

/// Schedule file form: interval `l` starts at `switch_times[l]` and uses graph
/// `period[l % period.len()]`; the last interval never ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub graphs: Vec<GraphConfig>,
    pub period: Vec<usize>,
    pub switch_times: Vec<f64>,
    pub dwell: f64,
}

/// Piecewise-constant graph signal `σ(t)`, right-continuous at switches.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSchedule {
    graphs: Vec<WeightedGraph>,
    switch_times: Vec<f64>,
    indices: Vec<usize>,
    dwell: f64,
}

impl GraphSchedule {
    pub fn new(
        graphs: Vec<WeightedGraph>,
        switch_times: Vec<f64>,
        indices: Vec<usize>,
        dwell: f64,
    ) -> Result<Self, GraphError> {
        let first = graphs.first().ok_or(GraphError::NoGraphs)?;
        for g in &graphs {
            if g.n != first.n {
                return Err(GraphError::NodeCountMismatch(first.n, g.n));
            }
        }
        if switch_times.is_empty() {
            return Err(GraphError::NoSwitchTimes);
        }
        if indices.len() != switch_times.len() {
            return Err(GraphError::BadGraphIndex(indices.len(), switch_times.len()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= graphs.len()) {
            return Err(GraphError::BadGraphIndex(bad, graphs.len()));
        }
        if !(dwell > 0.0) {
            return Err(GraphError::BadDwell(dwell));
        }
        for (i, t) in switch_times.iter().enumerate() {
            if !t.is_finite() || (i > 0 && *t <= switch_times[i - 1]) {
                return Err(GraphError::SwitchTimesNotIncreasing(i));
            }
        }
        for (index, w) in switch_times.windows(2).enumerate() {
            let length = w[1] - w[0];
            if length < dwell * (1.0 - 1e-12) {
                return Err(GraphError::DwellViolated { index, length, dwell });
            }
        }
        Ok(Self { graphs, switch_times, indices, dwell })
    }

    pub fn constant(g: WeightedGraph) -> Self {
        Self { graphs: vec![g], switch_times: vec![0.0], indices: vec![0], dwell: f64::INFINITY }
    }

    pub fn from_config(cfg: &ScheduleConfig) -> Result<Self, GraphError> {
        let graphs = cfg.graphs.iter().map(WeightedGraph::from_config).collect::<Result<Vec<_>, _>>()?;
        if cfg.period.is_empty() {
            return Err(GraphError::NoGraphs);
        }
        let indices = (0..cfg.switch_times.len()).map(|l| cfg.period[l % cfg.period.len()]).collect();
        Self::new(graphs, cfg.switch_times.clone(), indices, cfg.dwell)
    }

    /// Two graphs alternating every `interval` from `t = 0` up to `horizon`.
    pub fn alternating(a: WeightedGraph, b: WeightedGraph, interval: f64, horizon: f64) -> Result<Self, GraphError> {
        let count = (horizon / interval).ceil().max(1.0) as usize;
        let times = (0..count).map(|l| l as f64 * interval).collect();
        let indices = (0..count).map(|l| l % 2).collect();
        Self::new(vec![a, b], times, indices, interval)
    }

    pub fn graphs(&self) -> &[WeightedGraph] {
        &self.graphs
    }

    pub fn switch_times(&self) -> &[f64] {
        &self.switch_times
    }

    pub fn dwell(&self) -> f64 {
        self.dwell
    }

    pub fn start(&self) -> f64 {
        self.switch_times[0]
    }

    pub fn node_count(&self) -> usize {
        self.graphs[0].n
    }

    pub fn is_constant(&self) -> bool {
        self.indices.iter().all(|&i| i == self.indices[0])
    }

    /// Index of the interval containing `t`.
    pub fn interval_at(&self, t: f64) -> Result<usize, GraphError> {
        if t < self.start() {
            return Err(GraphError::BeforeStart { t, start: self.start() });
        }
        Ok(self.switch_times.partition_point(|&s| s <= t) - 1)
    }

    pub fn active_graph(&self, t: f64) -> Result<&WeightedGraph, GraphError> {
        Ok(&self.graphs[self.indices[self.interval_at(t)?]])
    }

    /// `(a_*, a^*)` over every positive weight in every graph.
    pub fn weight_bounds(&self) -> Option<(f64, f64)> {
        self.graphs.iter().filter_map(WeightedGraph::weight_bounds).reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)))
    }

    /// Union of all graphs active somewhere in `[t, t + window)`.
    pub fn union_over(&self, t: f64, window: f64) -> Result<WeightedGraph, GraphError> {
        let first = self.interval_at(t)?;
        let mut g = self.graphs[self.indices[first]].clone();
        for l in (first + 1)..self.switch_times.len() {
            if self.switch_times[l] >= t + window {
                break;
            }
            g = g.union(&self.graphs[self.indices[l]])?;
        }
        Ok(g)
    }
}

pub fn active_graph(schedule: &GraphSchedule, t: f64) -> Result<&WeightedGraph, GraphError> {
    schedule.active_graph(t)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointConnectivity {
    pub connected: bool,
    pub windows_checked: usize,
    /// Start of the first window whose union graph is disconnected.
    pub first_failure: Option<f64>,
    pub note: Option<String>,
}

/// Checks that the union graph over every window `[t, t + window)` is
/// connected, for window starts on the switch lattice in `[start, horizon − window]`.
///
/// Unions only grow as the start slides forward inside an interval, so the
/// lattice points are the worst cases.
pub fn joint_connectivity(
    schedule: &GraphSchedule,
    horizon: f64,
    window: f64,
) -> Result<JointConnectivity, GraphError> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(GraphError::BadWindow(window));
    }
    let last_start = (horizon - window).max(schedule.start());
    let mut windows_checked = 0;
    let mut first_failure = None;
    for &t in schedule.switch_times.iter().take_while(|&&t| t <= last_start) {
        windows_checked += 1;
        if !is_connected(&schedule.union_over(t, window)?) {
            first_failure = Some(t);
            break;
        }
    }
    let note = (window <= schedule.dwell && !schedule.is_constant()).then(|| {
        format!("window {window} is shorter than the dwell time {}; windows may see a single graph", schedule.dwell)
    });
    Ok(JointConnectivity { connected: first_failure.is_none(), windows_checked, first_failure, note })
}

pub fn is_uniformly_jointly_connected(schedule: &GraphSchedule, horizon: f64, window: f64) -> Result<bool, GraphError> {
    joint_connectivity(schedule, horizon, window).map(|r| r.connected)
}

pub fn max_laplacian_eigenvalue(schedule: &GraphSchedule) -> f64 {
    schedule.graphs.iter().map(laplacian_spectral_radius).fold(0.0, f64::max)
}

/// Communication graphs used by the bundled eight-agent scenarios.
pub mod library {
    use super::WeightedGraph;

    /// Two rows of four (1-2-3-4 over 8-7-6-5) joined by every column.
    pub fn ladder8() -> WeightedGraph {
        let mut edges = rows8();
        edges.extend(columns8());
        WeightedGraph::from_edges(8, &edges).expect("static graph")
    }

    /// The two rows only.
    pub fn rows_only8() -> WeightedGraph {
        WeightedGraph::from_edges(8, &rows8()).expect("static graph")
    }

    /// The four column links only.
    pub fn columns_only8() -> WeightedGraph {
        WeightedGraph::from_edges(8, &columns8()).expect("static graph")
    }

    fn rows8() -> Vec<(usize, usize, f64)> {
        vec![(1, 2, 1.0), (2, 3, 1.0), (4, 3, 1.0), (8, 7, 1.0), (7, 6, 1.0), (6, 5, 1.0)]
    }

    fn columns8() -> Vec<(usize, usize, f64)> {
        vec![(1, 8, 1.0), (2, 7, 1.0), (3, 6, 1.0), (4, 5, 1.0)]
    }
}

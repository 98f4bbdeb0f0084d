//! Target regions and projection operators.
//!
//! Every region lives in `R^m` for a fixed `m` and is handled through plain
//! `f64` slices so the same code serves any coordinate dimension. Balls and
//! boxes project in closed form; polytopes and intersections of regions use
//! Dykstra's alternating projection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance for "point lies in region".
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Iterate-change tolerance for polytope projection.
pub const POLYTOPE_TOL: f64 = 1e-10;
pub const POLYTOPE_MAX_ITER: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvexError {
    #[error("ball radius must be positive and finite, got {0}")]
    BadRadius(f64),
    #[error("box bounds inverted on axis {axis}: lo {lo} > hi {hi}")]
    InvertedBox { axis: usize, lo: f64, hi: f64 },
    #[error("polytope needs at least one halfspace")]
    EmptyPolytope,
    #[error("halfspace {index} normal is not a unit vector (norm {norm})")]
    NonUnitNormal { index: usize, norm: f64 },
    #[error("polytope is infeasible (residual {residual:.3e} after {iterations} sweeps)")]
    InfeasiblePolytope { residual: f64, iterations: usize },
    #[error("union must have at least one member")]
    EmptyUnion,
    #[error("region coordinates must be finite")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("region {0} is a non-convex union; this operation requires convex regions")]
    NonConvex(usize),
    #[error("region list is empty")]
    NoRegions,
    #[error("intersection appears empty: regions {first} and {second} are separated by {gap:.3e}")]
    EmptyIntersection { first: usize, second: usize, gap: f64 },
    #[error("reference point is outside the region (distance {0:.3e})")]
    OutsideRegion(f64),
    #[error("no informative samples: every sample lies inside every region")]
    NoInformativeSamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    /// Outward unit normal; the halfspace is `normal · x <= offset`.
    pub normal: Vec<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Region {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Polytope { halfspaces: Vec<Halfspace> },
    Union { members: Vec<Region> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub point: Vec<f64>,
    pub distance: f64,
    /// Zero for closed-form projections.
    pub iterations: usize,
    pub converged: bool,
}

impl ProjectionResult {
    fn exact(x: &[f64], point: Vec<f64>) -> Self {
        let distance = dist(x, &point);
        Self { point, distance, iterations: 0, converged: true }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Region {
    pub fn ball(center: impl Into<Vec<f64>>, radius: f64) -> Self {
        Region::Ball { center: center.into(), radius }
    }

    pub fn aabb(lo: impl Into<Vec<f64>>, hi: impl Into<Vec<f64>>) -> Self {
        Region::Box { lo: lo.into(), hi: hi.into() }
    }

    /// Builds a polytope, rescaling each halfspace so its normal has unit length.
    pub fn polytope(halfspaces: Vec<Halfspace>) -> Self {
        Region::Polytope { halfspaces }.normalized()
    }

    pub fn union(members: Vec<Region>) -> Self {
        Region::Union { members }
    }

    /// Rescales polytope halfspaces to unit normals. Other variants are unchanged.
    pub fn normalized(self) -> Self {
        match self {
            Region::Polytope { halfspaces } => Region::Polytope {
                halfspaces: halfspaces
                    .into_iter()
                    .map(|h| {
                        let norm = dot(&h.normal, &h.normal).sqrt();
                        if norm > 0.0 && norm.is_finite() {
                            Halfspace { normal: h.normal.iter().map(|v| v / norm).collect(), offset: h.offset / norm }
                        } else {
                            h
                        }
                    })
                    .collect(),
            },
            Region::Union { members } => {
                Region::Union { members: members.into_iter().map(Region::normalized).collect() }
            }
            other => other,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::Ball { center, .. } => center.len(),
            Region::Box { lo, .. } => lo.len(),
            Region::Polytope { halfspaces } => halfspaces.first().map_or(0, |h| h.normal.len()),
            Region::Union { members } => members.first().map_or(0, Region::dim),
        }
    }

    pub fn is_convex(&self) -> bool {
        !matches!(self, Region::Union { .. })
    }

    pub fn validate(&self) -> Result<(), ConvexError> {
        match self {
            Region::Ball { center, radius } => {
                if center.iter().any(|c| !c.is_finite()) {
                    return Err(ConvexError::NonFinite);
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(ConvexError::BadRadius(*radius));
                }
            }
            Region::Box { lo, hi } => {
                if lo.len() != hi.len() {
                    return Err(ConvexError::Dimension { expected: lo.len(), got: hi.len() });
                }
                for (axis, (l, h)) in lo.iter().zip(hi).enumerate() {
                    if !l.is_finite() || !h.is_finite() {
                        return Err(ConvexError::NonFinite);
                    }
                    if l > h {
                        return Err(ConvexError::InvertedBox { axis, lo: *l, hi: *h });
                    }
                }
            }
            Region::Polytope { halfspaces } => {
                let Some(first) = halfspaces.first() else {
                    return Err(ConvexError::EmptyPolytope);
                };
                let m = first.normal.len();
                for (index, h) in halfspaces.iter().enumerate() {
                    if h.normal.len() != m {
                        return Err(ConvexError::Dimension { expected: m, got: h.normal.len() });
                    }
                    if h.normal.iter().any(|v| !v.is_finite()) || !h.offset.is_finite() {
                        return Err(ConvexError::NonFinite);
                    }
                    let norm = dot(&h.normal, &h.normal).sqrt();
                    if (norm - 1.0).abs() > 1e-9 {
                        return Err(ConvexError::NonUnitNormal { index, norm });
                    }
                }
                // A feasible point must exist: project the origin and check the residual.
                let origin = vec![0.0; m];
                let r = dykstra_halfspaces(halfspaces, &origin, POLYTOPE_TOL, POLYTOPE_MAX_ITER);
                let residual = halfspace_violation(halfspaces, &r.point);
                if residual > FEASIBILITY_TOL {
                    return Err(ConvexError::InfeasiblePolytope { residual, iterations: r.iterations });
                }
            }
            Region::Union { members } => {
                let Some(first) = members.first() else {
                    return Err(ConvexError::EmptyUnion);
                };
                let m = first.dim();
                for member in members {
                    member.validate()?;
                    if member.dim() != m {
                        return Err(ConvexError::Dimension { expected: m, got: member.dim() });
                    }
                }
            }
        }
        Ok(())
    }

    /// Nearest point of the region to `x`.
    ///
    /// For a union the nearest member wins; ties go to the lowest member index.
    pub fn project(&self, x: &[f64]) -> Result<ProjectionResult, ConvexError> {
        let m = self.dim();
        if x.len() != m {
            return Err(ConvexError::Dimension { expected: m, got: x.len() });
        }
        Ok(self.project_unchecked(x))
    }

    fn project_unchecked(&self, x: &[f64]) -> ProjectionResult {
        match self {
            Region::Ball { center, radius } => {
                let d = dist(x, center);
                if d <= *radius {
                    ProjectionResult { point: x.to_vec(), distance: 0.0, iterations: 0, converged: true }
                } else {
                    let s = radius / d;
                    let point = center.iter().zip(x).map(|(c, xi)| c + s * (xi - c)).collect();
                    ProjectionResult { point, distance: d - radius, iterations: 0, converged: true }
                }
            }
            Region::Box { lo, hi } => {
                let point = x.iter().zip(lo.iter().zip(hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect();
                ProjectionResult::exact(x, point)
            }
            Region::Polytope { halfspaces } => {
                if halfspace_violation(halfspaces, x) <= 0.0 {
                    return ProjectionResult { point: x.to_vec(), distance: 0.0, iterations: 0, converged: true };
                }
                dykstra_halfspaces(halfspaces, x, POLYTOPE_TOL, POLYTOPE_MAX_ITER)
            }
            Region::Union { members } => {
                let mut best: Option<ProjectionResult> = None;
                for member in members {
                    let r = member.project_unchecked(x);
                    if best.as_ref().is_none_or(|b| r.distance < b.distance) {
                        best = Some(r);
                    }
                }
                best.expect("validated union has members")
            }
        }
    }

    /// Euclidean distance from `x` to the region.
    pub fn distance(&self, x: &[f64]) -> Result<f64, ConvexError> {
        self.project(x).map(|r| r.distance)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> Result<bool, ConvexError> {
        Ok(self.distance(x)? <= tol)
    }
}

fn halfspace_violation(halfspaces: &[Halfspace], x: &[f64]) -> f64 {
    halfspaces.iter().map(|h| dot(&h.normal, x) - h.offset).fold(f64::NEG_INFINITY, f64::max).max(0.0)
}

fn project_halfspace(h: &Halfspace, y: &[f64]) -> Vec<f64> {
    let excess = dot(&h.normal, y) - h.offset;
    if excess <= 0.0 {
        y.to_vec()
    } else {
        y.iter().zip(&h.normal).map(|(v, n)| v - excess * n).collect()
    }
}

/// Dykstra's algorithm over `count` sets given by `project_onto(k, y)`.
///
/// Returns the final iterate, the number of sweeps, and whether the iterate
/// change dropped to `tol` while `feasible` held.
fn dykstra<P, F>(
    count: usize,
    x0: &[f64],
    tol: f64,
    max_iter: usize,
    mut project_onto: P,
    feasible: F,
) -> (Vec<f64>, usize, bool)
where
    P: FnMut(usize, &[f64]) -> Vec<f64>,
    F: Fn(&[f64]) -> bool,
{
    let m = x0.len();
    let mut x = x0.to_vec();
    let mut increments = vec![vec![0.0; m]; count];
    let mut y = vec![0.0; m];
    for sweep in 1..=max_iter {
        let mut change2 = 0.0;
        for (k, inc) in increments.iter_mut().enumerate() {
            for ((yi, xi), pi) in y.iter_mut().zip(&x).zip(inc.iter()) {
                *yi = xi + pi;
            }
            let next = project_onto(k, &y);
            for (((pi, yi), ni), xi) in inc.iter_mut().zip(&y).zip(&next).zip(x.iter_mut()) {
                *pi = yi - ni;
                change2 += (ni - *xi) * (ni - *xi);
                *xi = *ni;
            }
        }
        if change2.sqrt() <= tol && feasible(&x) {
            return (x, sweep, true);
        }
    }
    (x, max_iter, false)
}

fn dykstra_halfspaces(halfspaces: &[Halfspace], x: &[f64], tol: f64, max_iter: usize) -> ProjectionResult {
    let (point, iterations, converged) = dykstra(
        halfspaces.len(),
        x,
        tol,
        max_iter,
        |k, y| project_halfspace(&halfspaces[k], y),
        |p| halfspace_violation(halfspaces, p) <= FEASIBILITY_TOL,
    );
    let distance = dist(x, &point);
    ProjectionResult { point, distance, iterations, converged }
}

fn require_convex(regions: &[Region]) -> Result<usize, ConvexError> {
    let first = regions.first().ok_or(ConvexError::NoRegions)?;
    let m = first.dim();
    for (i, r) in regions.iter().enumerate() {
        if !r.is_convex() {
            return Err(ConvexError::NonConvex(i));
        }
        if r.dim() != m {
            return Err(ConvexError::Dimension { expected: m, got: r.dim() });
        }
    }
    Ok(m)
}

/// Projection onto the intersection of convex regions by Dykstra's method.
///
/// The loop stops once a full sweep moves the iterate by less than `tol / 100`
/// and the iterate is within [`FEASIBILITY_TOL`] of every region. If the budget
/// runs out with a point still outside some region, the intersection is
/// treated as empty and the error names a separated pair.
pub fn project_intersection(
    regions: &[Region],
    x: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<ProjectionResult, ConvexError> {
    let m = require_convex(regions)?;
    if x.len() != m {
        return Err(ConvexError::Dimension { expected: m, got: x.len() });
    }
    if regions.len() == 1 {
        return Ok(regions[0].project_unchecked(x));
    }
    let residual = |p: &[f64]| regions.iter().map(|r| r.project_unchecked(p).distance).fold(0.0, f64::max);
    let (point, iterations, converged) = dykstra(
        regions.len(),
        x,
        tol * 1e-2,
        max_iter,
        |k, y| regions[k].project_unchecked(y).point,
        |p| residual(p) <= FEASIBILITY_TOL,
    );
    if !converged && residual(&point) > FEASIBILITY_TOL {
        return Err(separated_pair(regions, &point));
    }
    let distance = dist(x, &point);
    Ok(ProjectionResult { point, distance, iterations, converged })
}

/// Finds the pair of regions with the largest gap, by alternating projections
/// between each pair starting from `hint`.
fn separated_pair(regions: &[Region], hint: &[f64]) -> ConvexError {
    let mut worst = (0, 1, f64::NEG_INFINITY);
    for i in 0..regions.len() {
        for j in (i + 1)..regions.len() {
            let mut a = regions[i].project_unchecked(hint).point;
            let mut gap = 0.0;
            for _ in 0..2_000 {
                let b = regions[j].project_unchecked(&a).point;
                let a_next = regions[i].project_unchecked(&b).point;
                gap = dist(&a_next, &b);
                let moved = dist(&a_next, &a);
                a = a_next;
                if moved <= 1e-14 {
                    break;
                }
            }
            if gap > worst.2 {
                worst = (i, j, gap);
            }
        }
    }
    ConvexError::EmptyIntersection { first: worst.0, second: worst.1, gap: worst.2 }
}

/// Ratio `dist(x, X0) / max_i dist(x, X_i)`, or `None` when `x` lies inside
/// every region (within [`FEASIBILITY_TOL`]).
pub fn linear_regularity_ratio(regions: &[Region], x: &[f64], tol: f64) -> Result<Option<f64>, ConvexError> {
    require_convex(regions)?;
    let mut denom: f64 = 0.0;
    for r in regions {
        denom = denom.max(r.distance(x)?);
    }
    if denom <= FEASIBILITY_TOL {
        return Ok(None);
    }
    let numer = project_intersection(regions, x, tol, 100_000)?.distance;
    Ok(Some(numer / denom))
}

/// Sampled lower bound on the linear-regularity constant of `regions`.
///
/// Draws `n_samples` points uniformly from the box `[lo, hi]` with a ChaCha8
/// stream seeded by `seed`, and returns the largest distance ratio seen.
pub fn estimate_linear_regularity(
    regions: &[Region],
    lo: &[f64],
    hi: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<f64, ConvexError> {
    let m = require_convex(regions)?;
    Region::aabb(lo.to_vec(), hi.to_vec()).validate()?;
    if lo.len() != m {
        return Err(ConvexError::Dimension { expected: m, got: lo.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<f64> = None;
    let mut x = vec![0.0; m];
    for _ in 0..n_samples {
        for (xi, (l, h)) in x.iter_mut().zip(lo.iter().zip(hi)) {
            *xi = if h > l { rng.gen_range(*l..*h) } else { *l };
        }
        if let Some(ratio) = linear_regularity_ratio(regions, &x, 1e-10)? {
            best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
        }
    }
    best.ok_or(ConvexError::NoInformativeSamples)
}

/// Evaluates `(P(x) - x) · (P(x) - y)` for `y` in the region; the value is
/// never positive for a convex region up to rounding.
pub fn check_projection_inequality(region: &Region, x: &[f64], y: &[f64]) -> Result<f64, ConvexError> {
    let dy = region.distance(y)?;
    if dy > FEASIBILITY_TOL {
        return Err(ConvexError::OutsideRegion(dy));
    }
    let p = region.project(x)?.point;
    Ok(p.iter().zip(x).zip(y).map(|((pi, xi), yi)| (pi - xi) * (pi - yi)).sum())
}

//! Two-link planar manipulator in Euler–Lagrange form, `M(q) q̈ + C(q, q̇) q̇ = τ`.
//!
//! No gravity term. Parameters are the three lumped inertia constants of the
//! arm; the defaults are `θ = (1.301, 0.256, 0.096)`.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid manipulator parameters {0:?}: inertia matrix is not positive definite for all q")]
    NotPositiveDefinite([f64; 3]),
    #[error("inertia matrix is near singular (det {0:.3e})")]
    Singular(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct ManipulatorParams {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
}

impl ManipulatorParams {
    pub const DEFAULT: Self = Self { theta1: 1.301, theta2: 0.256, theta3: 0.096 };

    pub fn new(theta1: f64, theta2: f64, theta3: f64) -> Result<Self, DynamicsError> {
        let p = Self { theta1, theta2, theta3 };
        p.validate()?;
        Ok(p)
    }

    /// M(q) is positive definite for every `q` iff `θ1 > 2θ2`, `θ3 > 0`, and the
    /// determinant `θ1θ3 − θ3² − θ2² cos² q_y` is positive; the determinant is
    /// additionally scanned over a `q_y` grid.
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let Self { theta1, theta2, theta3 } = *self;
        let bad = || DynamicsError::NotPositiveDefinite([theta1, theta2, theta3]);
        if ![theta1, theta2, theta3].iter().all(|v| v.is_finite()) {
            return Err(bad());
        }
        if theta1 <= 2.0 * theta2.abs() + 1e-12 || theta3 <= 0.0 {
            return Err(bad());
        }
        if theta1 * theta3 - theta3 * theta3 - theta2 * theta2 <= 1e-12 {
            return Err(bad());
        }
        for k in 0..=360 {
            let qy = (k as f64).to_radians();
            if mass_matrix(self, &Vec2::new(0.0, qy)).determinant() <= 0.0 {
                return Err(bad());
            }
        }
        Ok(())
    }
}

impl Default for ManipulatorParams {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<[f64; 3]> for ManipulatorParams {
    type Error = DynamicsError;
    fn try_from(t: [f64; 3]) -> Result<Self, Self::Error> {
        Self::new(t[0], t[1], t[2])
    }
}

impl From<ManipulatorParams> for [f64; 3] {
    fn from(p: ManipulatorParams) -> Self {
        [p.theta1, p.theta2, p.theta3]
    }
}

/// Generalized coordinates and their derivatives for one agent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentState {
    pub q: Vec2,
    pub qdot: Vec2,
}

impl AgentState {
    pub fn new(q: [f64; 2], qdot: [f64; 2]) -> Self {
        Self { q: Vec2::from(q), qdot: Vec2::from(qdot) }
    }

    pub fn at_rest(q: [f64; 2]) -> Self {
        Self::new(q, [0.0, 0.0])
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite())
    }
}

pub fn mass_matrix(p: &ManipulatorParams, q: &Vec2) -> Mat2 {
    let c = q.y.cos();
    let off = p.theta3 + p.theta2 * c;
    Mat2::new(p.theta1 + 2.0 * p.theta2 * c, off, off, p.theta3)
}

/// Time derivative of `M(q)` along `q̇`.
pub fn mass_matrix_rate(p: &ManipulatorParams, q: &Vec2, qdot: &Vec2) -> Mat2 {
    let s = -p.theta2 * q.y.sin() * qdot.y;
    Mat2::new(2.0 * s, s, s, 0.0)
}

pub fn coriolis_matrix(p: &ManipulatorParams, q: &Vec2, qdot: &Vec2) -> Mat2 {
    let h = p.theta2 * q.y.sin();
    Mat2::new(-h * qdot.y, -h * (qdot.x + qdot.y), h * qdot.x, 0.0)
}

/// `q̈ = M(q)⁻¹ (τ − C(q, q̇) q̇)` via the 2×2 adjugate.
pub fn forward_dynamics(p: &ManipulatorParams, state: &AgentState, tau: &Vec2) -> Result<Vec2, DynamicsError> {
    let m = mass_matrix(p, &state.q);
    let rhs = tau - coriolis_matrix(p, &state.q, &state.qdot) * state.qdot;
    let det = m.m11 * m.m22 - m.m12 * m.m21;
    if det.abs() < 1e-12 {
        return Err(DynamicsError::Singular(det));
    }
    Ok(Vec2::new(m.m22 * rhs.x - m.m12 * rhs.y, -m.m21 * rhs.x + m.m11 * rhs.y) / det)
}

/// Largest entry of `|N + Nᵀ|` with `N = Ṁ − 2C`; zero when `N` is skew symmetric.
pub fn check_skew_symmetry(p: &ManipulatorParams, q: &Vec2, qdot: &Vec2) -> f64 {
    let n = mass_matrix_rate(p, q, qdot) - 2.0 * coriolis_matrix(p, q, qdot);
    (n + n.transpose()).amax()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    const P: ManipulatorParams = ManipulatorParams::DEFAULT;

    #[test]
    fn mass_matrix_values() {
        let m0 = mass_matrix(&P, &Vec2::new(0.3, 0.0));
        assert_abs_diff_eq!(m0, Mat2::new(1.813, 0.352, 0.352, 0.096), epsilon = 1e-12);
        let m1 = mass_matrix(&P, &Vec2::new(-2.0, FRAC_PI_2));
        assert_abs_diff_eq!(m1, Mat2::new(1.301, 0.096, 0.096, 0.096), epsilon = 1e-12);
        for k in 0..50 {
            let m = mass_matrix(&P, &Vec2::new(0.0, k as f64 * 0.37));
            assert_eq!(m.m12, m.m21);
        }
    }

    #[test]
    fn coriolis_values() {
        assert_eq!(coriolis_matrix(&P, &Vec2::new(1.0, 0.7), &Vec2::zeros()), Mat2::zeros());
        assert_abs_diff_eq!(coriolis_matrix(&P, &Vec2::new(1.0, 0.0), &Vec2::new(3.0, -2.0)), Mat2::zeros());
        let c = coriolis_matrix(&P, &Vec2::new(0.0, FRAC_PI_2), &Vec2::new(1.0, 1.0));
        assert_abs_diff_eq!(c, Mat2::new(-0.256, -0.512, 0.256, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn forward_dynamics_at_rest() {
        let s = AgentState::at_rest([0.4, 1.1]);
        assert_eq!(forward_dynamics(&P, &s, &Vec2::zeros()).unwrap(), Vec2::zeros());
        let tau = Vec2::new(0.7, -1.3);
        let acc = forward_dynamics(&P, &s, &tau).unwrap();
        let expected = mass_matrix(&P, &s.q).try_inverse().unwrap() * tau;
        assert_abs_diff_eq!(acc, expected, epsilon = 1e-12);
    }

    #[test]
    fn skew_symmetry_trivial_cases() {
        assert_eq!(check_skew_symmetry(&P, &Vec2::new(2.0, 0.0), &Vec2::new(1.0, 5.0)), 0.0);
        assert_eq!(check_skew_symmetry(&P, &Vec2::new(2.0, 1.0), &Vec2::zeros()), 0.0);
    }

    #[test]
    fn mass_rate_matches_finite_difference() {
        let q = Vec2::new(0.3, 0.8);
        let qdot = Vec2::new(-1.2, 0.9);
        let h = 1e-6;
        let fd = (mass_matrix(&P, &(q + h * qdot)) - mass_matrix(&P, &(q - h * qdot))) / (2.0 * h);
        assert_abs_diff_eq!(fd, mass_matrix_rate(&P, &q, &qdot), epsilon = 1e-8);
    }

    #[test]
    fn parameter_validation() {
        assert!(ManipulatorParams::new(1.301, 0.256, 0.096).is_ok());
        assert!(ManipulatorParams::new(0.5, 0.256, 0.096).is_err());
        assert!(ManipulatorParams::new(1.301, 0.256, 0.0).is_err());
        // θ1 > 2θ2 but det(M) goes negative at cos q_y = ±1
        assert!(ManipulatorParams::new(1.0, 0.45, 0.2).is_err());
        let parsed: ManipulatorParams = serde_json::from_str("[1.301, 0.256, 0.096]").unwrap();
        assert_eq!(parsed, P);
        assert!(serde_json::from_str::<ManipulatorParams>("[0.1, 0.256, 0.096]").is_err());
    }
}

use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::dynamics::Vec2;

/// Avoidance barrier with sensing radius `R` and safety radius `r`, `R > r > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialParams {
    #[serde(rename = "R")]
    pub sensing_radius: f64,
    #[serde(rename = "r")]
    pub safety_radius: f64,
}

impl PotentialParams {
    pub fn new(sensing_radius: f64, safety_radius: f64) -> Result<Self, ControlError> {
        if !(safety_radius > 0.0 && sensing_radius > safety_radius && sensing_radius.is_finite()) {
            return Err(ControlError::Config(format!(
                "avoidance radii need R > r > 0, got R = {sensing_radius}, r = {safety_radius}"
            )));
        }
        Ok(Self { sensing_radius, safety_radius })
    }

    fn violation(&self, d2: f64) -> ControlError {
        ControlError::SafetyViolation { pair: None, distance: d2.max(0.0).sqrt(), safety_radius: self.safety_radius }
    }
}

/// `V(d²) = ((d² − R²)/(d² − r²))²` inside the sensing radius, zero outside.
pub fn potential(params: &PotentialParams, d2: f64) -> Result<f64, ControlError> {
    let r2 = params.safety_radius * params.safety_radius;
    let big_r2 = params.sensing_radius * params.sensing_radius;
    if !(d2 > r2) {
        return Err(params.violation(d2));
    }
    if d2 >= big_r2 {
        return Ok(0.0);
    }
    let u = (d2 - big_r2) / (d2 - r2);
    Ok(u * u)
}

/// `∂V_ij/∂q_i = 4(R² − r²)(d² − R²)/(d² − r²)³ · (q_i − q_j)`.
pub fn potential_gradient(params: &PotentialParams, qi: &Vec2, qj: &Vec2) -> Result<Vec2, ControlError> {
    let diff = qi - qj;
    let d2 = diff.norm_squared();
    let r2 = params.safety_radius * params.safety_radius;
    let big_r2 = params.sensing_radius * params.sensing_radius;
    if !(d2 > r2) {
        return Err(params.violation(d2));
    }
    if d2 >= big_r2 {
        return Ok(Vec2::zeros());
    }
    let gap = d2 - r2;
    Ok(diff * (4.0 * (big_r2 - r2) * (d2 - big_r2) / (gap * gap * gap)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p() -> PotentialParams {
        PotentialParams::new(2.0, 0.2).unwrap()
    }

    #[test]
    fn potential_values() {
        assert_eq!(potential(&p(), 4.0).unwrap(), 0.0);
        assert_eq!(potential(&p(), 9.0).unwrap(), 0.0);
        assert_abs_diff_eq!(potential(&p(), 1.0).unwrap(), 9.765625, epsilon = 1e-12);
        assert!(matches!(potential(&p(), 0.04), Err(ControlError::SafetyViolation { .. })));
        assert!(matches!(potential(&p(), 0.01), Err(ControlError::SafetyViolation { .. })));
    }

    #[test]
    fn gradient_values() {
        let at_r = potential_gradient(&p(), &Vec2::new(2.0, 0.0), &Vec2::zeros()).unwrap();
        assert_eq!(at_r, Vec2::zeros());
        let g = potential_gradient(&p(), &Vec2::new(1.0, 0.0), &Vec2::zeros()).unwrap();
        assert_abs_diff_eq!(g, Vec2::new(-53.7109375, 0.0), epsilon = 1e-10);
        let a = Vec2::new(0.3, -0.4);
        let b = Vec2::new(-0.2, 0.5);
        assert_eq!(potential_gradient(&p(), &a, &b).unwrap(), -potential_gradient(&p(), &b, &a).unwrap());
    }

    #[test]
    fn smooth_at_sensing_radius() {
        // one-sided slopes vanish linearly in the step, so the step is small
        let h = 1e-10;
        let v = |d: f64| potential(&p(), d * d).unwrap();
        assert!(v(2.0) == 0.0);
        assert!(((v(2.0 + h) - v(2.0)) / h).abs() <= 1e-9);
        assert!(((v(2.0) - v(2.0 - h)) / h).abs() <= 1e-9);
    }
}

//! Comparison strategies: PI perimeter gating on the receiving region's
//! accumulation, logit route choice, and pure backpressure plan selection.

use crate::boundaryctl::{plan_pressure, select_plan};
use crate::mesosim::MicroObservation;
use crate::netmodel::Scenario;
use crate::routectl::RouteSet;

/// Proportional-integral gating of one arc `i → h`:
/// `M(t) = clamp(M(t-1) - K_P (N_h(t) - N_h(t-1)) - K_I (N_h(t) - N_h^crit), M^min, M^max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiController {
    pub kp: f64,
    pub ki: f64,
    last_flow: Option<f64>,
    last_accumulation: Option<f64>,
}

impl PiController {
    pub fn new(kp: f64, ki: f64) -> Self {
        PiController {
            kp,
            ki,
            last_flow: None,
            last_accumulation: None,
        }
    }

    /// Next boundary-flow target, veh/s. The first call starts from `m_max`
    /// and treats the accumulation as unchanged.
    pub fn update(&mut self, n_h: f64, n_crit_h: f64, m_min: f64, m_max: f64) -> f64 {
        let prev_m = self.last_flow.unwrap_or(m_max);
        let prev_n = self.last_accumulation.unwrap_or(n_h);
        let raw = prev_m - self.kp * (n_h - prev_n) - self.ki * (n_h - n_crit_h);
        let m = raw.min(m_max).max(m_min);
        self.last_flow = Some(m);
        self.last_accumulation = Some(n_h);
        m
    }
}

/// Logit probabilities over each vehicle's candidate routes,
/// `φ_r ∝ exp(-θ · cost_r)`.
pub fn logit_probabilities(set: &RouteSet, theta: f64) -> Vec<Vec<f64>> {
    set.vehicles
        .iter()
        .map(|v| logit(&v.options.iter().map(|o| o.cost_s).collect::<Vec<_>>(), theta))
        .collect()
}

pub fn logit(costs: &[f64], theta: f64) -> Vec<f64> {
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = costs.iter().map(|c| (-theta * (c - min)).exp()).collect();
    let sum: f64 = w.iter().sum();
    w.iter().map(|x| x / sum).collect()
}

/// Highest-pressure plan of every boundary, ties to the lowest index.
pub fn backpressure_plans(scenario: &Scenario, obs: &MicroObservation) -> Vec<usize> {
    (0..scenario.boundaries.len())
        .map(|b| {
            let n = scenario.boundaries[b].plans.len();
            let w: Vec<f64> = (0..n).map(|s| plan_pressure(scenario, b, s, obs)).collect();
            select_plan(&(0..n).collect::<Vec<_>>(), &w).unwrap_or(0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logit_two_routes() {
        let p = logit(&[100.0, 200.0], 0.01);
        assert!((p[0] - 0.731_058_578_6).abs() < 1e-9);
        assert!((p[1] - 0.268_941_421_4).abs() < 1e-9);
        assert_eq!(logit(&[5.0], 0.01), vec![1.0]);
    }

    #[test]
    fn pi_step_by_hand() {
        let mut pi = PiController::new(0.05, 0.01);
        // First call: no change term, integral pulls down by 0.01 * 100.
        let m = pi.update(1100.0, 1000.0, 0.0, 3.0);
        assert!((m - 2.0).abs() < 1e-12);
        // Accumulation rose by 10: -0.5 more, and -1.1 from the integral term.
        let m = pi.update(1110.0, 1000.0, 0.0, 3.0);
        assert!((m - 0.4).abs() < 1e-12);
        // Clamped at the envelope.
        assert_eq!(pi.update(2000.0, 1000.0, 0.1, 3.0), 0.1);
    }

    #[test]
    fn pi_opens_when_receiver_uncongested() {
        let mut pi = PiController::new(0.05, 0.01);
        pi.update(100.0, 1000.0, 0.0, 3.0);
        assert_eq!(pi.update(100.0, 1000.0, 0.0, 3.0), 3.0);
    }
}

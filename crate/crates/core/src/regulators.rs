//! Proportional-integral regulators for the cascade loops.
//!
//! The same gains serve two callers: the discrete [`PiRegulator::update`],
//! which owns its integral and advances it one sample at a time, and the
//! continuous pair [`PiRegulator::output_with`] / [`PiRegulator::integral_rate`],
//! used when the integral lives inside an ODE state vector and is advanced
//! by the simulation integrator.

/// PI regulator with optional symmetric output limit and conditional
/// anti-windup (the integral freezes while the output is saturated and the
/// error would drive it deeper).
#[derive(Debug, Clone, PartialEq)]
pub struct PiRegulator {
    pub kp: f64,
    pub ki: f64,
    pub integral: f64,
    pub output_limit: Option<f64>,
}

impl PiRegulator {
    pub fn new(kp: f64, ki: f64) -> Self {
        PiRegulator {
            kp,
            ki,
            integral: 0.0,
            output_limit: None,
        }
    }

    pub fn with_limit(kp: f64, ki: f64, limit: f64) -> Self {
        assert!(limit > 0.0, "output limit must be positive");
        PiRegulator {
            kp,
            ki,
            integral: 0.0,
            output_limit: Some(limit),
        }
    }

    /// One discrete sample: the integral is advanced first, then the
    /// output is formed from the updated integral.  If the result exceeds
    /// the output limit, the integral update is rolled back (frozen) and
    /// the clamped output is returned.
    pub fn update(&mut self, error: f64, dt: f64) -> f64 {
        let candidate = self.integral + error * dt;
        let raw = self.kp * error + self.ki * candidate;
        match self.output_limit {
            Some(limit) if raw.abs() > limit => raw.clamp(-limit, limit),
            _ => {
                self.integral = candidate;
                raw
            }
        }
    }

    /// Output for an externally held integral (clamped to the limit).
    pub fn output_with(&self, error: f64, integral: f64) -> f64 {
        let raw = self.kp * error + self.ki * integral;
        match self.output_limit {
            Some(limit) => raw.clamp(-limit, limit),
            None => raw,
        }
    }

    /// Rate of an externally held integral: the error, or zero while the
    /// output is saturated and the error pushes further into saturation.
    pub fn integral_rate(&self, error: f64, integral: f64) -> f64 {
        if let Some(limit) = self.output_limit {
            let raw = self.kp * error + self.ki * integral;
            if raw.abs() > limit && error * raw > 0.0 {
                return 0.0;
            }
        }
        error
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integral_updates_before_output() {
        // kp = 1, ki = 10, unit error held for 10 samples of 0.01 s:
        // integral = 0.1, output = 1 + 10 * 0.1 = 2.
        let mut pi = PiRegulator::new(1.0, 10.0);
        let mut out = 0.0;
        for _ in 0..10 {
            out = pi.update(1.0, 0.01);
        }
        assert!((out - 2.0).abs() < 1e-12, "output {out}");
        assert!((pi.integral - 0.1).abs() < 1e-12);
    }

    #[test]
    fn proportional_only_when_ki_zero() {
        let mut pi = PiRegulator::new(3.0, 0.0);
        assert_eq!(pi.update(2.0, 0.1), 6.0);
        assert_eq!(pi.update(-1.0, 0.1), -3.0);
    }

    #[test]
    fn anti_windup_freezes_integral() {
        let mut pi = PiRegulator::with_limit(1.0, 10.0, 0.5);
        let first = pi.update(10.0, 0.01);
        assert_eq!(first, 0.5, "output must clamp to the limit");
        assert_eq!(pi.integral, 0.0, "integral must freeze while clamped");
        // Small error inside the limit integrates normally.
        let second = pi.update(0.01, 0.01);
        assert!(second.abs() < 0.5);
        assert!((pi.integral - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn continuous_view_matches_discrete_when_unsaturated() {
        let mut pi = PiRegulator::new(2.0, 5.0);
        let mut integral = 0.0;
        for step in 0..50 {
            let e = (step as f64 * 0.1).sin();
            integral += pi.integral_rate(e, integral) * 0.01;
            let cont = pi.output_with(e, integral);
            let disc = pi.update(e, 0.01);
            assert!((cont - disc).abs() < 1e-12);
        }
    }

    #[test]
    fn continuous_rate_freezes_only_into_saturation() {
        let pi = PiRegulator::with_limit(1.0, 1.0, 1.0);
        // Saturated high, positive error: frozen.
        assert_eq!(pi.integral_rate(0.5, 1.0), 0.0);
        // Saturated high, negative error (unwinding): integrates.
        assert_eq!(pi.integral_rate(-0.5, 1.6), -0.5);
        // Unsaturated: integrates.
        assert_eq!(pi.integral_rate(0.3, 0.0), 0.3);
    }

    #[test]
    fn reset_clears_integral() {
        let mut pi = PiRegulator::new(1.0, 1.0);
        pi.update(1.0, 1.0);
        assert!(pi.integral != 0.0);
        pi.reset();
        assert_eq!(pi.integral, 0.0);
    }
}

//! Positional PID controller sampled at a time-varying period.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains<T> {
    pub kp: T,
    pub ki: T,
    pub kd: T,
}

impl<T: Real> PidGains<T> {
    pub fn new(kp: T, ki: T, kd: T) -> Self {
        Self { kp, ki, kd }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.kp, self.ki, self.kd].iter().any(|g| !g.is_finite()) {
            return Err(Error::Config("PID gains must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidState<T> {
    pub integral: T,
    pub prev_error: T,
    pub has_prev: bool,
}

impl<T: Real> Default for PidState<T> {
    fn default() -> Self {
        Self {
            integral: T::zero(),
            prev_error: T::zero(),
            has_prev: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pid<T> {
    gains: PidGains<T>,
    state: PidState<T>,
}

impl<T: Real> Pid<T> {
    pub fn new(gains: PidGains<T>) -> Self {
        Self {
            gains,
            state: PidState::default(),
        }
    }

    pub fn gains(&self) -> &PidGains<T> {
        &self.gains
    }

    pub fn state(&self) -> &PidState<T> {
        &self.state
    }

    pub fn reset(&mut self) {
        self.state = PidState::default();
    }

    /// Control output for the signed error `e = r - y` sampled `h` after the
    /// previous sample.
    ///
    /// The integral accumulates `ki * h * e` before it is used; the
    /// derivative is a plain backward difference and is zero on the first
    /// sample after a reset.
    pub fn compute(&mut self, e: T, h: T) -> Result<T> {
        if !(h > T::zero()) {
            return Err(Error::Input(format!(
                "sampling period must be positive, got {h:?}"
            )));
        }
        let g = self.gains;
        self.state.integral = self.state.integral + g.ki * h * e;
        let derivative = if self.state.has_prev {
            g.kd * (e - self.state.prev_error) / h
        } else {
            T::zero()
        };
        self.state.prev_error = e;
        self.state.has_prev = true;
        Ok(g.kp * e + self.state.integral + derivative)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportional_only() {
        let mut pid = Pid::<f64>::new(PidGains::new(1.0, 0.0, 0.0));
        assert_eq!(pid.compute(0.5, 0.01).unwrap(), 0.5);
    }

    #[test]
    fn integral_accumulates() {
        let mut pid = Pid::<f64>::new(PidGains::new(0.0, 2.0, 0.0));
        assert!((pid.compute(1.0, 0.01).unwrap() - 0.02).abs() < 1e-15);
        assert!((pid.compute(1.0, 0.01).unwrap() - 0.04).abs() < 1e-15);
    }

    #[test]
    fn derivative_kick_and_first_sample() {
        let mut pid = Pid::<f64>::new(PidGains::new(0.0, 0.0, 1.0));
        assert_eq!(pid.compute(0.0, 0.01).unwrap(), 0.0);
        assert!((pid.compute(0.1, 0.01).unwrap() - 10.0).abs() < 1e-12);

        let mut pid = Pid::<f64>::new(PidGains::new(0.0, 0.0, 7.0));
        assert_eq!(pid.compute(3.0, 0.01).unwrap(), 0.0);
    }

    #[test]
    fn reset_behaves_like_fresh() {
        let gains = PidGains::new(3.0, 2.0, 1.0);
        let mut used = Pid::new(gains);
        used.compute(1.0, 0.01).unwrap();
        used.compute(-0.4, 0.02).unwrap();
        used.reset();
        used.reset();
        assert_eq!(used.gains(), &gains);
        let mut fresh = Pid::new(gains);
        for (e, h) in [(0.3, 0.01), (0.1, 0.03), (-0.2, 0.007)] {
            assert_eq!(used.compute(e, h).unwrap(), fresh.compute(e, h).unwrap());
        }
    }

    #[test]
    fn rejects_non_positive_period() {
        let mut pid = Pid::<f64>::new(PidGains::new(1.0, 1.0, 1.0));
        assert!(matches!(pid.compute(1.0, 0.0), Err(Error::Input(_))));
        assert!(pid.compute(1.0, -0.01).is_err());
    }
}

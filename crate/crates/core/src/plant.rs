//! Continuous LTI plants driven through a zero-order hold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Rational transfer function with coefficients in ascending powers of `s`.
///
/// `1 / (1000 s + 50)` is `numerator = [1]`, `denominator = [50, 1000]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction<T> {
    pub numerator: Vec<T>,
    pub denominator: Vec<T>,
}

impl<T: Real> TransferFunction<T> {
    pub fn new(numerator: Vec<T>, denominator: Vec<T>) -> Self {
        Self {
            numerator,
            denominator,
        }
    }

    /// Degree of the denominator after dropping zero leading coefficients.
    fn order(&self) -> Option<usize> {
        self.denominator.iter().rposition(|c| *c != T::zero())
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .numerator
            .iter()
            .chain(&self.denominator)
            .any(|c| !c.is_finite())
        {
            return Err(Error::Config(
                "transfer function has non-finite coefficients".into(),
            ));
        }
        let Some(n) = self.order() else {
            return Err(Error::Config("denominator is zero".into()));
        };
        if self.denominator.last() != Some(&self.denominator[n]) {
            return Err(Error::Config(
                "leading denominator coefficient is zero".into(),
            ));
        }
        let num_deg = self.numerator.iter().rposition(|c| *c != T::zero());
        if n == 0 || num_deg.is_some_and(|d| d >= n) {
            return Err(Error::Config(
                "transfer function must be strictly proper".into(),
            ));
        }
        Ok(())
    }

    /// Steady-state gain `num(0) / den(0)`.
    pub fn dc_gain(&self) -> T {
        let num = self.numerator.first().copied().unwrap_or_else(T::zero);
        num / self.denominator[0]
    }
}

/// Controllable canonical realization of a strictly proper plant.
///
/// The companion matrix is stored implicitly by its last row, so the state
/// derivative is `x'[i] = x[i+1]` for `i < n-1` and
/// `x'[n-1] = -sum a[j] x[j] + u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpacePlant<T> {
    /// Monic denominator coefficients `a_0 .. a_{n-1}`.
    den: Vec<T>,
    /// Output row `C`.
    out: Vec<T>,
    x: Vec<T>,
    u: T,
    micro_step: T,
    loop_id: usize,
}

pub fn tf_to_state_space<T: Real>(
    tf: &TransferFunction<T>,
    micro_step: T,
) -> Result<StateSpacePlant<T>> {
    tf.validate()?;
    if !(micro_step > T::zero()) {
        return Err(Error::Config("micro step must be positive".into()));
    }
    let n = tf.denominator.len() - 1;
    let lead = tf.denominator[n];
    let den: Vec<T> = tf.denominator[..n].iter().map(|&a| a / lead).collect();
    let mut out = vec![T::zero(); n];
    for (o, &b) in out.iter_mut().zip(&tf.numerator) {
        *o = b / lead;
    }
    Ok(StateSpacePlant {
        den,
        out,
        x: vec![T::zero(); n],
        u: T::zero(),
        micro_step,
        loop_id: 0,
    })
}

impl<T: Real> StateSpacePlant<T> {
    /// Tags the plant with the loop it belongs to, for error reports.
    pub fn with_loop_id(mut self, loop_id: usize) -> Self {
        self.loop_id = loop_id;
        self
    }

    pub fn order(&self) -> usize {
        self.x.len()
    }

    /// Companion matrix `A` in row-major order.
    pub fn a_matrix(&self) -> Vec<Vec<T>> {
        let n = self.order();
        let mut a = vec![vec![T::zero(); n]; n];
        for (i, row) in a.iter_mut().enumerate().take(n - 1) {
            row[i + 1] = T::one();
        }
        for (j, &c) in self.den.iter().enumerate() {
            a[n - 1][j] = -c;
        }
        a
    }

    pub fn b_vector(&self) -> Vec<T> {
        let mut b = vec![T::zero(); self.order()];
        b[self.order() - 1] = T::one();
        b
    }

    pub fn c_vector(&self) -> &[T] {
        &self.out
    }

    pub fn state(&self) -> &[T] {
        &self.x
    }

    pub fn input(&self) -> T {
        self.u
    }

    pub fn micro_step(&self) -> T {
        self.micro_step
    }

    pub fn reset(&mut self) {
        self.x.iter_mut().for_each(|v| *v = T::zero());
        self.u = T::zero();
    }

    /// Current output `y = C x`.
    pub fn sample(&self) -> T {
        output(&self.out, &self.x)
    }

    /// Replaces the held actuator value.
    pub fn actuate(&mut self, u: T) {
        self.u = u;
    }

    fn derivative(&self, x: &[T], dx: &mut [T]) {
        let n = x.len();
        dx[..n - 1].copy_from_slice(&x[1..]);
        let mut acc = self.u;
        for (&a, &xi) in self.den.iter().zip(x) {
            acc = acc - a * xi;
        }
        dx[n - 1] = acc;
    }

    /// One classical RK4 step of length `dt` with the input held.
    fn rk4_step(&mut self, dt: T) {
        let n = self.order();
        let half = T::lit(0.5) * dt;
        let mut k1 = vec![T::zero(); n];
        let mut k2 = vec![T::zero(); n];
        let mut k3 = vec![T::zero(); n];
        let mut k4 = vec![T::zero(); n];
        let mut tmp = vec![T::zero(); n];

        self.derivative(&self.x, &mut k1);
        for i in 0..n {
            tmp[i] = self.x[i] + half * k1[i];
        }
        self.derivative(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = self.x[i] + half * k2[i];
        }
        self.derivative(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = self.x[i] + dt * k3[i];
        }
        self.derivative(&tmp, &mut k4);
        let sixth = dt / T::lit(6.0);
        for i in 0..n {
            self.x[i] = self.x[i] + sixth * (k1[i] + T::lit(2.0) * (k2[i] + k3[i]) + k4[i]);
        }
    }

    /// Advances the plant by `duration` with fixed micro steps, calling
    /// `observe(dt, y_before, y_after)` after each one. The last step takes
    /// whatever remainder is left.
    pub fn integrate_with<F>(&mut self, duration: T, mut observe: F) -> Result<()>
    where
        F: FnMut(T, T, T),
    {
        if !(duration >= T::zero()) {
            return Err(Error::Internal(format!(
                "negative integration interval {duration:?}"
            )));
        }
        let mut left = duration;
        let mut y = self.sample();
        // stop when the remainder is a rounding artifact of the division
        let eps = self.micro_step * T::lit(1e-9);
        while left > eps {
            let dt = if left < self.micro_step {
                left
            } else {
                self.micro_step
            };
            self.rk4_step(dt);
            let y_next = self.sample();
            observe(dt, y, y_next);
            y = y_next;
            left = left - dt;
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                loop_id: self.loop_id,
                time_s: f64::NAN,
            });
        }
        Ok(())
    }

    pub fn integrate(&mut self, duration: T) -> Result<()> {
        self.integrate_with(duration, |_, _, _| {})
    }
}

fn output<T: Real>(c: &[T], x: &[T]) -> T {
    c.iter()
        .zip(x)
        .fold(T::zero(), |acc, (&ci, &xi)| acc + ci * xi)
}

/// Square-wave reference shared by all loops: 1 during even intervals,
/// 0 during odd ones, with the first step up at t = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSignal {
    pub amplitude: f64,
    /// Length of one half-period in microseconds.
    pub interval_us: u64,
}

impl ReferenceSignal {
    pub fn new(interval_us: u64) -> Self {
        Self {
            amplitude: 1.0,
            interval_us,
        }
    }

    pub fn value(&self, t_us: u64) -> f64 {
        if (t_us / self.interval_us).is_multiple_of(2) {
            self.amplitude
        } else {
            0.0
        }
    }

    /// First step instant strictly after `t_us`.
    pub fn next_step_after(&self, t_us: u64) -> u64 {
        (t_us / self.interval_us + 1) * self.interval_us
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn second_order() -> TransferFunction<f64> {
        TransferFunction::new(vec![1.0], vec![20.0, 10.0, 1.0])
    }

    #[test]
    fn first_order_realization() {
        let tf = TransferFunction::<f64>::new(vec![1.0], vec![50.0, 1000.0]);
        let p = tf_to_state_space(&tf, 1e-4).unwrap();
        assert_eq!(p.a_matrix(), vec![vec![-0.05]]);
        assert_eq!(p.c_vector(), &[0.001]);
        assert_eq!(p.b_vector(), vec![1.0]);
        assert!((tf.dc_gain() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn normalizes_to_monic() {
        let tf = TransferFunction::<f64>::new(vec![1.0], vec![10.0, 6.0, 0.5]);
        let p = tf_to_state_space(&tf, 1e-4).unwrap();
        assert_eq!(p.a_matrix(), vec![vec![0.0, 1.0], vec![-20.0, -12.0]]);
        assert_eq!(p.c_vector(), &[2.0, 0.0]);
        assert!((tf.dc_gain() - 0.1).abs() < 1e-15);
        assert!((second_order().dc_gain() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn rejects_improper_and_degenerate() {
        let improper = TransferFunction::new(vec![1.0, 1.0], vec![1.0, 1.0]);
        assert!(matches!(
            tf_to_state_space(&improper, 1e-4),
            Err(Error::Config(_))
        ));
        let zero_lead = TransferFunction::new(vec![1.0], vec![1.0, 0.0]);
        assert!(tf_to_state_space(&zero_lead, 1e-4).is_err());
        let constant = TransferFunction::new(vec![1.0], vec![2.0]);
        assert!(tf_to_state_space(&constant, 1e-4).is_err());
    }

    #[test]
    fn settles_to_dc_gain() {
        let mut p = tf_to_state_space(&second_order(), 1e-4).unwrap();
        p.actuate(1.0);
        p.integrate(10.0).unwrap();
        assert!((p.sample() - 0.05).abs() < 1e-9);
    }

    #[test]
    fn zero_interval_is_noop() {
        let mut p = tf_to_state_space(&second_order(), 1e-4).unwrap();
        p.actuate(1.0);
        p.integrate(0.3).unwrap();
        let before = p.state().to_vec();
        p.integrate(0.0).unwrap();
        assert_eq!(p.state(), &before[..]);
    }

    #[test]
    fn actuation_does_not_jump_output() {
        let mut p = tf_to_state_space(&second_order(), 1e-4).unwrap();
        p.actuate(1.0);
        p.integrate(0.2).unwrap();
        let y = p.sample();
        p.actuate(-50.0);
        assert_eq!(p.sample(), y);
    }

    #[test]
    fn remainder_step_is_exact_length() {
        let mut a = tf_to_state_space(&second_order(), 1e-4).unwrap();
        let mut b = a.clone();
        a.actuate(1.0);
        b.actuate(1.0);
        let mut total = 0.0;
        a.integrate_with(0.00025, |dt, _, _| total += dt).unwrap();
        assert!((total - 0.00025).abs() < 1e-18);
        b.integrate(0.0001).unwrap();
        b.integrate(0.0001).unwrap();
        b.integrate(0.00005).unwrap();
        assert!((a.sample() - b.sample()).abs() < 1e-15);
    }

    #[test]
    fn reference_square_wave() {
        let r = ReferenceSignal::new(1_000_000);
        assert_eq!(r.value(0), 1.0);
        assert_eq!(r.value(500_000), 1.0);
        assert_eq!(r.value(1_500_000), 0.0);
        assert_eq!(r.value(2_000_000), 1.0);
        assert_eq!(r.next_step_after(0), 1_000_000);
        assert_eq!(r.next_step_after(1_000_000), 2_000_000);
    }
}

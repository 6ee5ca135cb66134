//! QoC-aware power manager: period adaptation, discrete voltage scaling and
//! resource reclaiming.
//!
//! Every function here is pure. The simulation kernel calls [`policy_step`]
//! on each job release and applies the returned [`PolicyDecision`].
//!
//! Time quantities are unit-agnostic; only ratios of periods and execution
//! times enter the formulas. The kernel passes microseconds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Real, Scalar};

/// Shape of the error-to-period mapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptationParams<T> {
    /// Exponent gain of the interpolation curve.
    pub beta: T,
    /// At or below this error the period is stretched to its maximum.
    pub e_min: T,
    /// At or above this error the period snaps back to nominal.
    pub e_max: T,
}

impl<T: Scalar> AdaptationParams<T> {
    pub fn new(beta: T, e_min: T, e_max: T) -> Result<Self> {
        let params = Self { beta, e_min, e_max };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > T::zero()) {
            return Err(Error::Config(format!(
                "beta must be positive, got {:?}",
                self.beta
            )));
        }
        if !(self.e_min >= T::zero()) || !(self.e_min < self.e_max) {
            return Err(Error::Config(format!(
                "need 0 <= e_min < e_max, got e_min = {:?}, e_max = {:?}",
                self.e_min, self.e_max
            )));
        }
        Ok(())
    }
}

/// Static timing and adaptation parameters of one periodic control task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec<T> {
    pub id: usize,
    /// Execution time at full speed.
    pub c_nom: T,
    /// Nominal (shortest adapted) period.
    pub h0: T,
    /// Longest allowed period.
    pub h_max: T,
    pub adaptation: AdaptationParams<T>,
}

impl<T: Scalar> TaskSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_nom > T::zero()) || !(self.c_nom <= self.h0) || !(self.h0 <= self.h_max) {
            return Err(Error::Config(format!(
                "task {}: need 0 < c_nom <= h0 <= h_max, got c_nom = {:?}, h0 = {:?}, h_max = {:?}",
                self.id, self.c_nom, self.h0, self.h_max
            )));
        }
        self.adaptation.validate()
    }

    /// Largest period scale factor, `h_max / h0`.
    pub fn max_scale(&self) -> T {
        self.h_max / self.h0
    }
}

/// Nominal workload `sum c_nom / h0` of a task set.
pub fn nominal_workload<T: Scalar>(tasks: &[TaskSpec<T>]) -> Result<T> {
    let pairs: Vec<(T, T)> = tasks.iter().map(|t| (t.c_nom, t.h0)).collect();
    ideal_speed(&pairs)
}

/// The set of speeds a processor supports, normalized to full speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpuLevels<T> {
    levels: Vec<T>,
    ideal: bool,
}

impl<T: Scalar> CpuLevels<T> {
    /// A processor with finitely many speeds. Levels must ascend strictly
    /// and end at full speed.
    pub fn discrete(levels: Vec<T>) -> Result<Self> {
        let cpu = Self {
            levels,
            ideal: false,
        };
        cpu.validate()?;
        Ok(cpu)
    }

    /// A processor whose speed may take any value in (0, 1].
    pub fn continuous() -> Self {
        Self {
            levels: vec![T::one()],
            ideal: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.levels.first() else {
            return Err(Error::Config("level set is empty".into()));
        };
        if !(*first > T::zero()) {
            return Err(Error::Config(format!(
                "lowest level must be positive, got {first:?}"
            )));
        }
        if self.levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("levels not ascending".into()));
        }
        let last = *self.levels.last().unwrap();
        if last != T::one() {
            return Err(Error::Config(format!(
                "highest level must equal 1, got {last:?}"
            )));
        }
        Ok(())
    }

    pub fn levels(&self) -> &[T] {
        &self.levels
    }

    pub fn is_continuous(&self) -> bool {
        self.ideal
    }

    /// Lowest selectable speed (full speed for a continuous processor is
    /// not a floor, so this returns the first level only when discrete).
    pub fn min_level(&self) -> Option<T> {
        if self.ideal {
            None
        } else {
            self.levels.first().copied()
        }
    }

    /// Whether `alpha` is a speed this processor can run at.
    pub fn admits(&self, alpha: T) -> bool {
        if self.ideal {
            alpha > T::zero() && alpha <= T::one()
        } else {
            self.levels.contains(&alpha)
        }
    }
}

/// Outcome of one power-manager invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDecision<T> {
    /// Workload at full speed; the speed a continuous processor would pick.
    pub alpha_ideal: T,
    /// Selected speed.
    pub alpha: T,
    /// Utilization that the selected speed would give before reclaiming.
    pub u_expected: T,
    /// Periods produced by error-driven adaptation.
    pub base_periods: Vec<T>,
    /// Periods after reclaiming, used for the next releases.
    pub effective_periods: Vec<T>,
}

impl<T: Scalar> PolicyDecision<T> {
    /// `sum (c_nom / alpha) / h_eff` for the given execution times.
    pub fn utilization(&self, c_nom: &[T]) -> T {
        c_nom
            .iter()
            .zip(&self.effective_periods)
            .fold(T::zero(), |acc, (&c, &h)| acc + (c / self.alpha) / h)
    }
}

/// Period scale factor as a function of the absolute control error.
///
/// Returns `h_max / h0` when the error is at most `e_min`, 1 when it is at
/// least `e_max`, and an exponential interpolation in between.
pub fn period_scale_factor<T: Real>(e: T, spec: &TaskSpec<T>) -> Result<T> {
    if !e.is_finite() || e < T::zero() {
        return Err(Error::Input(format!(
            "control error must be finite and non-negative, got {e:?}"
        )));
    }
    spec.validate()?;
    let max_scale = spec.max_scale();
    let AdaptationParams { beta, e_min, e_max } = spec.adaptation;
    if max_scale == T::one() || e >= e_max {
        return Ok(T::one());
    }
    if e <= e_min {
        return Ok(max_scale);
    }
    // (exp(-b e) - exp(-b e_max)) / (exp(-b e_min) - exp(-b e_max)), rescaled by
    // exp(b e_min) so that large beta cannot underflow both terms to zero.
    let span = beta * (e_max - e_min);
    let num = (-beta * (e - e_min)).exp() - (-span).exp();
    let den = -(-span).exp_m1();
    let weight = num / den;
    let eta = weight * (max_scale - T::one()) + T::one();
    Ok(eta.max(T::one()).min(max_scale))
}

/// Adapted base period `eta(e) * h0`, always within `[h0, h_max]`.
pub fn adapt_period<T: Real>(e: T, spec: &TaskSpec<T>) -> Result<T> {
    let eta = period_scale_factor(e, spec)?;
    Ok((eta * spec.h0).max(spec.h0).min(spec.h_max))
}

/// Full-speed workload `sum c_nom / h` of `(c_nom, period)` pairs.
pub fn ideal_speed<T: Scalar>(tasks: &[(T, T)]) -> Result<T> {
    if tasks.is_empty() {
        return Err(Error::Config("task set is empty".into()));
    }
    tasks.iter().try_fold(T::zero(), |acc, &(c, h)| {
        if h > T::zero() {
            Ok(acc + c / h)
        } else {
            Err(Error::Input(format!("period must be positive, got {h:?}")))
        }
    })
}

/// Picks the slowest available speed that keeps the workload schedulable.
///
/// Below the lowest level the lowest level is used. A continuous processor
/// runs at exactly `alpha_ideal`.
pub fn quantize_speed<T: Scalar>(alpha_ideal: T, levels: &CpuLevels<T>) -> Result<T> {
    let tol = T::level_tolerance();
    if !(alpha_ideal > T::zero()) {
        return Err(Error::Input(format!(
            "ideal speed must be positive, got {alpha_ideal:?}"
        )));
    }
    if alpha_ideal > T::one() + tol {
        return Err(Error::Schedulability {
            required: alpha_ideal.to_f64().unwrap_or(f64::NAN),
        });
    }
    if levels.is_continuous() {
        return Ok(if alpha_ideal > T::one() {
            T::one()
        } else {
            alpha_ideal
        });
    }
    levels
        .levels()
        .iter()
        .copied()
        .find(|&level| level.abs_diff(alpha_ideal) <= tol || level > alpha_ideal)
        .ok_or_else(|| Error::Internal("validated level set has no level >= 1".into()))
}

/// Shrinks every period by `alpha_ideal / alpha` so the selected speed is
/// fully used.
pub fn reclaim_periods<T: Scalar>(base_periods: &[T], alpha_ideal: T, alpha: T) -> Result<Vec<T>> {
    if !(alpha > T::zero()) {
        return Err(Error::Input(format!(
            "speed must be positive, got {alpha:?}"
        )));
    }
    let factor = alpha_ideal / alpha;
    Ok(base_periods.iter().map(|&h| factor * h).collect())
}

/// Voltage scaling followed by reclaiming over the given base periods.
pub fn scale_and_reclaim<T: Scalar>(
    c_nom: &[T],
    base_periods: Vec<T>,
    levels: &CpuLevels<T>,
) -> Result<PolicyDecision<T>> {
    if c_nom.len() != base_periods.len() {
        return Err(Error::Input(format!(
            "{} execution times for {} periods",
            c_nom.len(),
            base_periods.len()
        )));
    }
    let pairs: Vec<(T, T)> = c_nom
        .iter()
        .copied()
        .zip(base_periods.iter().copied())
        .collect();
    let alpha_ideal = ideal_speed(&pairs)?;
    let alpha = quantize_speed(alpha_ideal, levels)?;
    let effective_periods = reclaim_periods(&base_periods, alpha_ideal, alpha)?;
    Ok(PolicyDecision {
        alpha_ideal,
        alpha,
        u_expected: alpha_ideal / alpha,
        base_periods,
        effective_periods,
    })
}

/// One invocation of the power manager, triggered by a release of task
/// `trigger` whose sampled absolute error is `e`.
///
/// Only the triggering task's base period is re-adapted. Speed and
/// reclaimed periods are then recomputed over all tasks.
pub fn policy_step<T: Real>(
    trigger: usize,
    e: T,
    tasks: &[TaskSpec<T>],
    base_periods: &[T],
    levels: &CpuLevels<T>,
) -> Result<PolicyDecision<T>> {
    let c_nom: Vec<T> = tasks.iter().map(|t| t.c_nom).collect();
    policy_step_with_exec(trigger, e, tasks, &c_nom, base_periods, levels)
}

/// As [`policy_step`], with per-task execution times that may differ from
/// the nominal ones (execution-time variation).
pub fn policy_step_with_exec<T: Real>(
    trigger: usize,
    e: T,
    tasks: &[TaskSpec<T>],
    c_nom: &[T],
    base_periods: &[T],
    levels: &CpuLevels<T>,
) -> Result<PolicyDecision<T>> {
    if tasks.len() != base_periods.len() {
        return Err(Error::Input(format!(
            "{} tasks but {} base periods",
            tasks.len(),
            base_periods.len()
        )));
    }
    let spec = tasks
        .get(trigger)
        .ok_or_else(|| Error::Input(format!("no task at index {trigger}")))?;
    let mut base = base_periods.to_vec();
    base[trigger] = adapt_period(e, spec)?;
    scale_and_reclaim(c_nom, base, levels)
}

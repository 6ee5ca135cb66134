//! Control-cost and energy accounting, trace records and run reports.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{SimEvent, SimTime};
use crate::scenario::Mode;

/// Per-loop integral of absolute error, accumulated with the trapezoid rule.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IaeAccumulator {
    per_loop: Vec<f64>,
}

impl IaeAccumulator {
    pub fn new(loops: usize) -> Self {
        Self {
            per_loop: vec![0.0; loops],
        }
    }

    /// Adds one integration step of length `dt` seconds whose error went
    /// from `e0` to `e1`.
    pub fn add_step(&mut self, loop_idx: usize, dt: f64, e0: f64, e1: f64) {
        self.per_loop[loop_idx] += 0.5 * dt * (e0.abs() + e1.abs());
    }

    pub fn per_loop(&self) -> &[f64] {
        &self.per_loop
    }

    pub fn total(&self) -> f64 {
        self.per_loop.iter().sum()
    }
}

/// Integral of `alpha^2` over time for a piecewise-constant speed.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyAccumulator {
    integral: f64,
    alpha: f64,
    since: SimTime,
}

impl EnergyAccumulator {
    pub fn new(alpha: f64) -> Self {
        Self {
            integral: 0.0,
            alpha,
            since: SimTime::ZERO,
        }
    }

    /// Normalized power at speed `alpha`.
    pub fn power(alpha: f64) -> f64 {
        alpha * alpha
    }

    /// Closes the current constant-speed interval at `now` and continues at
    /// `alpha`.
    pub fn set_speed(&mut self, now: SimTime, alpha: f64) -> Result<()> {
        self.close(now)?;
        self.alpha = alpha;
        Ok(())
    }

    fn close(&mut self, now: SimTime) -> Result<()> {
        if now < self.since {
            return Err(Error::Internal(format!(
                "energy update at {now} precedes {}",
                self.since
            )));
        }
        self.integral += Self::power(self.alpha) * (now - self.since).as_secs_f64();
        self.since = now;
        Ok(())
    }

    /// Energy integral up to `now`, in normalized-power seconds.
    pub fn integral_at(&mut self, now: SimTime) -> Result<f64> {
        self.close(now)?;
        Ok(self.integral)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Recomputes the average energy from a list of speed changes.
pub fn average_energy(changes: &[SpeedChange], end: SimTime) -> Option<f64> {
    if end == SimTime::ZERO {
        return None;
    }
    let mut integral = 0.0;
    for (i, c) in changes.iter().enumerate() {
        let until = changes.get(i + 1).map_or(end, |n| n.time).min(end);
        if until > c.time {
            integral += EnergyAccumulator::power(c.alpha) * (until - c.time).as_secs_f64();
        }
    }
    Some(integral / end.as_secs_f64())
}

/// One row of the trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub time_s: f64,
    #[serde(rename = "loop")]
    pub loop_id: usize,
    pub r: f64,
    pub y: f64,
    pub e: f64,
    pub u: f64,
    pub h_eff_ms: f64,
    pub alpha: f64,
    pub energy_inst: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeedChange {
    pub time: SimTime,
    pub alpha: f64,
}

/// A maximal interval during which the CPU ran one job at one speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleSegment {
    pub start: SimTime,
    pub end: SimTime,
    pub task: usize,
    pub k: u64,
    pub alpha: f64,
}

/// Lifetime of one job.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JobRecord {
    pub task: usize,
    pub k: u64,
    pub release: SimTime,
    pub abs_deadline: SimTime,
    pub completion: Option<SimTime>,
    pub missed: bool,
}

impl JobRecord {
    /// Effective period the job was released with.
    pub fn period(&self) -> SimTime {
        self.abs_deadline - self.release
    }
}

/// Everything observable about a run beyond the summary report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub events: Vec<SimEvent>,
    pub rows: Vec<TraceRow>,
    pub speed_changes: Vec<SpeedChange>,
    pub schedule: Vec<ScheduleSegment>,
    pub jobs: Vec<JobRecord>,
    pub busy: SimTime,
    pub idle: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodStats {
    #[serde(rename = "loop")]
    pub loop_id: usize,
    pub min_ms: f64,
    pub max_ms: f64,
    pub mean_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilizationSample {
    /// Start of the window.
    pub t_s: f64,
    /// Fraction of the window the CPU was busy.
    pub busy_fraction: f64,
}

/// End-of-run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub mode: Mode,
    pub cpu: String,
    pub duration_s: f64,
    /// Integral of absolute error per loop.
    pub iae: Vec<f64>,
    pub j_sum: f64,
    /// Time-averaged normalized energy; `None` for an empty run.
    pub e_avg: Option<f64>,
    pub deadline_misses: usize,
    pub jobs_released: usize,
    pub speed_changes: usize,
    pub periods: Vec<PeriodStats>,
    pub utilization: Vec<UtilizationSample>,
}

/// Rounds to 6 significant digits.
pub fn sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

impl RunReport {
    /// Copy with every number rounded to 6 significant digits.
    pub fn rounded(&self) -> Self {
        let mut r = self.clone();
        r.duration_s = sig6(r.duration_s);
        r.iae.iter_mut().for_each(|v| *v = sig6(*v));
        r.j_sum = sig6(r.j_sum);
        r.e_avg = r.e_avg.map(sig6);
        for p in &mut r.periods {
            p.min_ms = sig6(p.min_ms);
            p.max_ms = sig6(p.max_ms);
            p.mean_ms = sig6(p.mean_ms);
        }
        for u in &mut r.utilization {
            u.t_s = sig6(u.t_s);
            u.busy_fraction = sig6(u.busy_fraction);
        }
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.rounded())?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_json()?.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

/// Builds the report from the accumulated quantities.
#[allow(clippy::too_many_arguments)]
pub fn finalize(
    scenario: String,
    mode: Mode,
    cpu: String,
    duration: SimTime,
    iae: &IaeAccumulator,
    energy_integral: f64,
    trace: &RunTrace,
    loops: usize,
    utilization_window: SimTime,
) -> RunReport {
    let duration_s = duration.as_secs_f64();
    let e_avg = (duration > SimTime::ZERO).then(|| energy_integral / duration_s);

    let periods = (0..loops)
        .map(|l| {
            let hs: Vec<f64> = trace
                .jobs
                .iter()
                .filter(|j| j.task == l)
                .map(|j| j.period().as_secs_f64() * 1e3)
                .collect();
            let (min_ms, max_ms, mean_ms) = if hs.is_empty() {
                (0.0, 0.0, 0.0)
            } else {
                (
                    hs.iter().copied().fold(f64::INFINITY, f64::min),
                    hs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    hs.iter().sum::<f64>() / hs.len() as f64,
                )
            };
            PeriodStats {
                loop_id: l + 1,
                min_ms,
                max_ms,
                mean_ms,
            }
        })
        .collect();

    RunReport {
        scenario,
        mode,
        cpu,
        duration_s,
        iae: iae.per_loop().to_vec(),
        j_sum: iae.total(),
        e_avg,
        deadline_misses: trace.jobs.iter().filter(|j| j.missed).count(),
        jobs_released: trace.jobs.len(),
        speed_changes: trace.speed_changes.len().saturating_sub(1),
        periods,
        utilization: busy_windows(&trace.schedule, duration, utilization_window),
    }
}

fn busy_windows(
    schedule: &[ScheduleSegment],
    duration: SimTime,
    window: SimTime,
) -> Vec<UtilizationSample> {
    if duration == SimTime::ZERO || window == SimTime::ZERO {
        return Vec::new();
    }
    let n = duration.ticks().div_ceil(window.ticks()) as usize;
    let mut busy = vec![0u64; n];
    for seg in schedule {
        let mut t = seg.start.ticks();
        while t < seg.end.ticks() {
            let w = (t / window.ticks()) as usize;
            let w_end = ((w as u64 + 1) * window.ticks()).min(seg.end.ticks());
            busy[w] += w_end - t;
            t = w_end;
        }
    }
    busy.iter()
        .enumerate()
        .map(|(w, &b)| {
            let start = w as u64 * window.ticks();
            let len = (start + window.ticks()).min(duration.ticks()) - start;
            UtilizationSample {
                t_s: start as f64 * 1e-6,
                busy_fraction: b as f64 / len as f64,
            }
        })
        .collect()
}

pub fn write_trace_csv(rows: &[TraceRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "time_s",
        "loop",
        "r",
        "y",
        "e",
        "u",
        "h_eff_ms",
        "alpha",
        "energy_inst",
    ])?;
    for row in rows {
        w.write_record([
            format!("{:.6}", row.time_s),
            row.loop_id.to_string(),
            format!("{}", row.r),
            format!("{:.9}", row.y),
            format!("{:.9}", row.e),
            format!("{:.9}", row.u),
            format!("{:.6}", row.h_eff_ms),
            format!("{:.9}", row.alpha),
            format!("{:.9}", row.energy_inst),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_schedule_csv(schedule: &[ScheduleSegment], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["start_s", "end_s", "loop", "job", "alpha"])?;
    for s in schedule {
        w.write_record([
            format!("{:.6}", s.start.as_secs_f64()),
            format!("{:.6}", s.end.as_secs_f64()),
            (s.task + 1).to_string(),
            s.k.to_string(),
            format!("{:.9}", s.alpha),
        ])?;
    }
    w.flush()?;
    Ok(())
}

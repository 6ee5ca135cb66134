//! Discrete-event co-simulation of EDF-scheduled control tasks on a
//! variable-speed processor.
//!
//! Time advances in integer microsecond ticks. Between events every plant is
//! integrated and the running job consumes nominal work at the current
//! speed. On each release the loop's output is sampled, the power manager is
//! invoked and a job carrying the new control output is queued; the output
//! reaches the plant when the job completes.
//!
//! A new period only applies from the next release, so jobs released under
//! older decisions stay in flight while the speed changes. The kernel keeps
//! the summed work density of the open job windows within the speed it
//! runs at: it raises the speed above the power manager's choice when that
//! choice is too slow for them, and lengthens the new window when even full
//! speed is not enough.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::{Add, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{
    finalize, EnergyAccumulator, IaeAccumulator, JobRecord, RunReport, RunTrace, ScheduleSegment,
    SpeedChange, TraceRow,
};
use crate::pid::Pid;
use crate::plant::{tf_to_state_space, ReferenceSignal, StateSpacePlant};
use crate::policy::{ideal_speed, policy_step_with_exec, quantize_speed, CpuLevels, TaskSpec};
use crate::scenario::{Jitter, Mode, Scenario};

/// Remaining nominal work (in microseconds) below which a job is finished.
const WORK_EPS: f64 = 1e-6;

/// Width of the busy-fraction windows in the report.
const UTILIZATION_WINDOW: SimTime = SimTime(100_000);

/// Simulation time in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    pub const fn ticks(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-6
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// Event kinds in the order they are processed when simultaneous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum EventKind {
    JobCompletion,
    ReferenceStep,
    JobRelease,
    TraceSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SimEvent {
    pub time: SimTime,
    pub kind: EventKind,
    pub task: Option<usize>,
    pub seq: u64,
}

/// One released instance of a control task.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub task: usize,
    pub k: u64,
    pub release: SimTime,
    pub abs_deadline: SimTime,
    /// Work left, in microseconds of full-speed execution.
    pub remaining_work: f64,
    /// Control output to apply on completion.
    pub output: f64,
    record: usize,
}

impl Job {
    pub fn new(task: usize, k: u64, release: SimTime, period: SimTime, work: f64) -> Self {
        Self {
            task,
            k,
            release,
            abs_deadline: release + period,
            remaining_work: work,
            output: 0.0,
            record: 0,
        }
    }

    /// Consumes `elapsed_us` of CPU time at speed `alpha`.
    pub fn advance(&mut self, elapsed_us: f64, alpha: f64) -> Result<()> {
        if !(elapsed_us >= 0.0) {
            return Err(Error::Internal(format!(
                "job {}#{} advanced by negative time {elapsed_us}",
                self.task, self.k
            )));
        }
        if !(alpha > 0.0) {
            return Err(Error::Internal(format!("non-positive speed {alpha}")));
        }
        self.remaining_work -= elapsed_us * alpha;
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.remaining_work <= WORK_EPS
    }

    /// Whole ticks needed to finish at speed `alpha`.
    pub fn ticks_to_complete(&self, alpha: f64) -> u64 {
        if self.is_complete() {
            return 0;
        }
        // the small slack keeps an exact quotient from rounding up a whole tick
        (self.remaining_work / alpha - 1e-9).ceil().max(0.0) as u64
    }
}

/// Earliest-deadline-first choice among ready jobs; ties go to the earlier
/// release, then to the lower task index.
pub fn edf_select(ready: &[Job]) -> Option<usize> {
    ready
        .iter()
        .enumerate()
        .min_by_key(|(_, j)| (j.abs_deadline, j.release, j.task))
        .map(|(i, _)| i)
}

/// Current processor configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CpuState {
    pub levels: CpuLevels<f64>,
    pub alpha: f64,
    pub switch_overhead: SimTime,
}

struct LoopRuntime {
    plant: StateSpacePlant<f64>,
    pid: Pid<f64>,
    /// Base period in microseconds, before reclaiming.
    base_period: f64,
    /// Effective period decided at the latest release.
    effective_period: SimTime,
    last_sample: Option<SimTime>,
    next_k: u64,
    /// Execution time of the latest job, in microseconds.
    exec: f64,
    /// Full-speed work of the job whose window is open, zero before the
    /// first release.
    window_work: f64,
    /// Length of the open window in microseconds before tick rounding.
    window_len: f64,
}

/// Result of a completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: RunReport,
    pub trace: RunTrace,
}

pub struct Simulator {
    name: String,
    mode: Mode,
    cpu_name: String,
    duration: SimTime,
    trace_cadence: SimTime,
    reference: ReferenceSignal,
    cpu: CpuState,
    specs: Vec<TaskSpec<f64>>,
    loops: Vec<LoopRuntime>,
    queue: BinaryHeap<Reverse<SimEvent>>,
    seq: u64,
    ready: Vec<Job>,
    running: Option<usize>,
    segment: Option<ScheduleSegment>,
    /// Work a completed job overshot within its last tick, credited to the
    /// next job dispatched at the same instant.
    carry: f64,
    blocked_until: SimTime,
    now: SimTime,
    iae: IaeAccumulator,
    energy: EnergyAccumulator,
    trace: RunTrace,
    jitter: Option<(Jitter, ChaCha8Rng)>,
    work_scale: f64,
}

/// Validates and runs a scenario to completion.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput> {
    Simulator::new(scenario)?.run()
}

impl Simulator {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let issues = scenario.validate();
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        let cpu_spec = scenario.effective_cpu();
        let levels = cpu_spec.to_levels()?;
        let specs = scenario.task_specs();
        let micro_step = scenario.micro_step_us as f64 * 1e-6;

        let loops = scenario
            .loops
            .iter()
            .zip(&specs)
            .enumerate()
            .map(|(i, (cfg, spec))| {
                Ok(LoopRuntime {
                    plant: tf_to_state_space(&cfg.transfer_function(), micro_step)?
                        .with_loop_id(i + 1),
                    pid: Pid::new(cfg.gains()),
                    base_period: spec.h0,
                    effective_period: SimTime(cfg.h0_us),
                    last_sample: None,
                    next_k: 0,
                    exec: spec.c_nom,
                    window_work: 0.0,
                    window_len: spec.h0,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let nominal: Vec<(f64, f64)> = specs.iter().map(|s| (s.c_nom, s.h0)).collect();
        let alpha = quantize_speed(ideal_speed(&nominal)?, &levels)?;

        let trace = RunTrace {
            speed_changes: vec![SpeedChange {
                time: SimTime::ZERO,
                alpha,
            }],
            ..RunTrace::default()
        };

        Ok(Self {
            name: scenario.name.clone(),
            mode: scenario.mode,
            cpu_name: cpu_spec.name.clone(),
            duration: SimTime(scenario.duration_us),
            trace_cadence: SimTime(scenario.trace_cadence_us),
            reference: ReferenceSignal::new(scenario.perturbation_interval_us),
            cpu: CpuState {
                levels,
                alpha,
                switch_overhead: SimTime(scenario.switch_overhead_us),
            },
            iae: IaeAccumulator::new(specs.len()),
            specs,
            loops,
            queue: BinaryHeap::new(),
            seq: 0,
            ready: Vec::new(),
            running: None,
            segment: None,
            carry: 0.0,
            blocked_until: SimTime::ZERO,
            now: SimTime::ZERO,
            energy: EnergyAccumulator::new(alpha),
            trace,
            jitter: scenario
                .jitter
                .map(|j| (j, ChaCha8Rng::seed_from_u64(scenario.seed))),
            work_scale: 1.0,
        })
    }

    /// Multiplies the work of every job without the power manager seeing
    /// it. Used to inject overload.
    pub fn with_work_scale(mut self, factor: f64) -> Self {
        self.work_scale = factor;
        self
    }

    fn push(&mut self, time: SimTime, kind: EventKind, task: Option<usize>) {
        if time < self.duration {
            self.seq += 1;
            self.queue.push(Reverse(SimEvent {
                time,
                kind,
                task,
                seq: self.seq,
            }));
        }
    }

    pub fn run(mut self) -> Result<RunOutput> {
        let mut step = SimTime::ZERO;
        while step < self.duration {
            self.push(step, EventKind::ReferenceStep, None);
            step = SimTime(self.reference.next_step_after(step.0));
        }
        for i in 0..self.loops.len() {
            self.push(SimTime::ZERO, EventKind::JobRelease, Some(i));
        }
        self.push(SimTime::ZERO, EventKind::TraceSample, None);

        loop {
            let next_static = self.queue.peek().map(|Reverse(e)| e.time);
            let completion = self.running_completion_time();
            let t_next = [next_static, completion]
                .into_iter()
                .flatten()
                .fold(self.duration, SimTime::min);
            self.advance_to(t_next)?;
            if t_next >= self.duration {
                break;
            }
            if completion == Some(t_next) {
                self.complete_running()?;
            } else {
                let Reverse(ev) = self.queue.pop().expect("peeked event exists");
                self.handle(ev)?;
            }
            self.dispatch();
        }

        self.close_segment();
        let energy = self.energy.integral_at(self.duration)?;
        let report = finalize(
            self.name,
            self.mode,
            self.cpu_name,
            self.duration,
            &self.iae,
            energy,
            &self.trace,
            self.loops.len(),
            UTILIZATION_WINDOW,
        );
        Ok(RunOutput {
            report,
            trace: self.trace,
        })
    }

    fn running_completion_time(&self) -> Option<SimTime> {
        let job = &self.ready[self.running?];
        let start = self.now.max(self.blocked_until);
        Some(start + SimTime(job.ticks_to_complete(self.cpu.alpha)))
    }

    /// Integrates plants, metrics and CPU work over `[now, t)`.
    fn advance_to(&mut self, t: SimTime) -> Result<()> {
        if t < self.now {
            return Err(Error::Internal(format!(
                "event at {t} precedes current time {}",
                self.now
            )));
        }
        if t == self.now {
            return Ok(());
        }
        let dt = t - self.now;
        let r = self.reference.value(self.now.0);
        for (i, lp) in self.loops.iter_mut().enumerate() {
            let iae = &mut self.iae;
            lp.plant
                .integrate_with(dt.as_secs_f64(), |h, y0, y1| {
                    iae.add_step(i, h, r - y0, r - y1)
                })
                .map_err(|e| match e {
                    Error::Divergence { loop_id, .. } => Error::Divergence {
                        loop_id,
                        time_s: t.as_secs_f64(),
                    },
                    other => other,
                })?;
        }

        match self.running {
            Some(idx) => {
                let exec_start = self.now.max(self.blocked_until).min(t);
                let alpha = self.cpu.alpha;
                self.ready[idx].advance((t - exec_start).0 as f64, alpha)?;
                self.trace.busy = self.trace.busy + dt;
            }
            None => self.trace.idle = self.trace.idle + dt,
        }
        self.carry = 0.0;
        self.now = t;
        self.check_deadlines();
        Ok(())
    }

    /// Flags every ready job whose deadline has passed. Jobs keep running.
    fn check_deadlines(&mut self) {
        for job in &self.ready {
            let rec = &mut self.trace.jobs[job.record];
            if !rec.missed && job.abs_deadline < self.now {
                rec.missed = true;
            }
        }
    }

    fn log(&mut self, kind: EventKind, task: Option<usize>, seq: u64) {
        self.trace.events.push(SimEvent {
            time: self.now,
            kind,
            task,
            seq,
        });
    }

    fn complete_running(&mut self) -> Result<()> {
        let idx = self
            .running
            .take()
            .ok_or_else(|| Error::Internal("completion without running job".into()))?;
        self.close_segment();
        let job = self.ready.remove(idx);
        if job.remaining_work > WORK_EPS {
            return Err(Error::Internal(format!(
                "job {}#{} completed with {} work left",
                job.task, job.k, job.remaining_work
            )));
        }
        self.carry = (-job.remaining_work).max(0.0);
        self.loops[job.task].plant.actuate(job.output);
        self.trace.jobs[job.record].completion = Some(self.now);
        self.seq += 1;
        let seq = self.seq;
        self.log(EventKind::JobCompletion, Some(job.task), seq);
        Ok(())
    }

    fn handle(&mut self, ev: SimEvent) -> Result<()> {
        self.log(ev.kind, ev.task, ev.seq);
        match ev.kind {
            EventKind::JobRelease => self.release(ev.task.expect("release carries a task")),
            EventKind::ReferenceStep => Ok(()),
            EventKind::TraceSample => {
                self.sample_trace();
                self.push(self.now + self.trace_cadence, EventKind::TraceSample, None);
                Ok(())
            }
            EventKind::JobCompletion => Err(Error::Internal("queued completion event".into())),
        }
    }

    fn release(&mut self, task: usize) -> Result<()> {
        let now = self.now;
        let r = self.reference.value(now.0);
        let y = self.loops[task].plant.sample();
        let e = r - y;

        if let Some((j, rng)) = self.jitter.as_mut() {
            let factor = if j.low < j.high {
                rng.random_range(j.low..=j.high)
            } else {
                j.low
            };
            self.loops[task].exec = self.specs[task].c_nom * factor;
        }
        let exec: Vec<f64> = self.loops.iter().map(|l| l.exec).collect();

        let (alpha, effective) = match self.mode {
            Mode::Qapm => {
                let base: Vec<f64> = self.loops.iter().map(|l| l.base_period).collect();
                let d = policy_step_with_exec(
                    task,
                    e.abs(),
                    &self.specs,
                    &exec,
                    &base,
                    &self.cpu.levels,
                )?;
                for (lp, &b) in self.loops.iter_mut().zip(&d.base_periods) {
                    lp.base_period = b;
                }
                (d.alpha, d.effective_periods[task])
            }
            Mode::Osdvs | Mode::DvsOnly => {
                let pairs: Vec<(f64, f64)> = exec
                    .iter()
                    .zip(&self.specs)
                    .map(|(&c, s)| (c, s.h0))
                    .collect();
                let alpha = quantize_speed(ideal_speed(&pairs)?, &self.cpu.levels)?;
                (alpha, self.specs[task].h0)
            }
        };
        // nearest tick, halves rounded up
        let work = self.loops[task].exec * self.work_scale;
        let len = self.fit_window(task, work, effective);
        let period = SimTime(((len + 0.5).floor() as u64).max(1));
        let lp = &mut self.loops[task];
        lp.window_work = work;
        lp.window_len = len;
        lp.effective_period = period;
        let alpha = self.guarded_speed(alpha)?;
        self.set_speed(alpha)?;

        let lp = &mut self.loops[task];
        let h = lp.last_sample.map_or(period, |s| now - s).as_secs_f64();
        let u = lp.pid.compute(e, h)?;
        lp.last_sample = Some(now);
        let k = lp.next_k;
        lp.next_k += 1;

        let mut job = Job::new(task, k, now, period, work);
        job.output = u;
        job.record = self.trace.jobs.len();
        self.trace.jobs.push(JobRecord {
            task,
            k,
            release: now,
            abs_deadline: job.abs_deadline,
            completion: None,
            missed: false,
        });
        self.ready.push(job);
        self.push(now + period, EventKind::JobRelease, Some(task));
        Ok(())
    }

    /// Lengthens the new window of `task` when the other open windows leave
    /// too little full-speed capacity for `work` within `period`.
    fn fit_window(&self, task: usize, work: f64, period: f64) -> f64 {
        let others: f64 = self
            .loops
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != task)
            .map(|(_, l)| l.window_work / l.window_len)
            .sum();
        let spare = 1.0 - others;
        if spare <= 0.0 || work / period <= spare {
            return period;
        }
        period.max(work / spare)
    }

    /// Raises `alpha` to cover the windows already open.
    ///
    /// Every loop has exactly one open job window, so the work density
    /// summed over loops only changes at releases. Keeping the speed at or
    /// above it lets EDF meet every deadline across period and speed
    /// changes; at full speed an overload is left to the miss checker.
    fn guarded_speed(&self, alpha: f64) -> Result<f64> {
        let density: f64 = self
            .loops
            .iter()
            .map(|l| l.window_work / l.window_len)
            .sum();
        if density <= alpha * (1.0 + 1e-12) {
            return Ok(alpha);
        }
        quantize_speed(density.min(1.0), &self.cpu.levels)
    }

    fn set_speed(&mut self, alpha: f64) -> Result<()> {
        if alpha == self.cpu.alpha {
            return Ok(());
        }
        if !self.cpu.levels.admits(alpha) {
            return Err(Error::Internal(format!("speed {alpha} not supported")));
        }
        self.close_segment();
        self.energy.set_speed(self.now, alpha)?;
        self.cpu.alpha = alpha;
        self.trace.speed_changes.push(SpeedChange {
            time: self.now,
            alpha,
        });
        if self.cpu.switch_overhead > SimTime::ZERO {
            self.blocked_until = self.now + self.cpu.switch_overhead;
        }
        Ok(())
    }

    fn sample_trace(&mut self) {
        let r = self.reference.value(self.now.0);
        let alpha = self.cpu.alpha;
        for (i, lp) in self.loops.iter().enumerate() {
            let y = lp.plant.sample();
            self.trace.rows.push(TraceRow {
                time_s: self.now.as_secs_f64(),
                loop_id: i + 1,
                r,
                y,
                e: r - y,
                u: lp.plant.input(),
                h_eff_ms: lp.effective_period.0 as f64 * 1e-3,
                alpha,
                energy_inst: EnergyAccumulator::power(alpha),
            });
        }
    }

    fn close_segment(&mut self) {
        if let Some(mut seg) = self.segment.take() {
            seg.end = self.now;
            if seg.end > seg.start {
                self.trace.schedule.push(seg);
            }
        }
    }

    /// Re-evaluates the EDF choice; preempts when a ready job has an
    /// earlier deadline.
    fn dispatch(&mut self) {
        let chosen = edf_select(&self.ready);
        if chosen != self.running || self.segment.is_none() {
            self.close_segment();
            self.running = chosen;
        }
        if let Some(idx) = chosen {
            if self.carry > 0.0 {
                self.ready[idx].remaining_work -= self.carry;
                self.carry = 0.0;
            }
            if self.segment.is_none() {
                let job = &self.ready[idx];
                self.segment = Some(ScheduleSegment {
                    start: self.now,
                    end: self.now,
                    task: job.task,
                    k: job.k,
                    alpha: self.cpu.alpha,
                });
            }
        }
    }
}

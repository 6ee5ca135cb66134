//! Scenario definition, the built-in four-loop benchmark and the TOML
//! scenario file format.
//!
//! A scenario file looks like this (all times are integer microseconds):
//!
//! ```toml
//! name = "table1"
//! mode = "qapm"                  # qapm | osdvs | dvs-only
//! duration_us = 12000000
//! perturbation_interval_us = 1000000
//! micro_step_us = 100
//! trace_cadence_us = 1000
//! seed = 0
//! switch_overhead_us = 0
//!
//! [adaptation]                  # shared by all loops unless overridden
//! beta = 40.0
//! e_min = 0.02
//! e_max = 0.3
//!
//! [cpu]
//! name = "CPU-2"
//! levels = [0.45, 0.64, 0.92, 1.0]
//! continuous = false
//!
//! [jitter]                      # optional execution-time variation
//! low = 0.9
//! high = 1.1
//!
//! [[loops]]                     # one section per control loop
//! numerator = [1.0]             # ascending powers of s
//! denominator = [50.0, 1000.0]
//! kp = 10000.0
//! ki = 400.0
//! kd = 0.0
//! c_nom_us = 2000
//! h0_us = 10000
//! h_max_us = 40000
//! # [loops.adaptation] may override the shared parameters
//! ```

use std::fmt;
use std::path::Path;

use num_rational::Ratio;
use num_traits::CheckedAdd;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pid::PidGains;
use crate::plant::TransferFunction;
use crate::policy::{AdaptationParams, CpuLevels, TaskSpec};

/// Which power-management scheme drives the processor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Period adaptation, discrete voltage scaling and reclaiming.
    Qapm,
    /// Fixed nominal periods on a continuous-speed processor.
    Osdvs,
    /// Fixed nominal periods with discrete voltage scaling only.
    DvsOnly,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Qapm => "qapm",
            Mode::Osdvs => "osdvs",
            Mode::DvsOnly => "dvs-only",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qapm" => Ok(Mode::Qapm),
            "osdvs" => Ok(Mode::Osdvs),
            "dvs-only" | "dvs_only" | "dvsonly" => Ok(Mode::DvsOnly),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

/// A named processor speed set as it appears in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpuSpec {
    pub name: String,
    pub levels: Vec<f64>,
    #[serde(default)]
    pub continuous: bool,
}

impl CpuSpec {
    pub fn to_levels(&self) -> Result<CpuLevels<f64>> {
        if self.continuous {
            Ok(CpuLevels::continuous())
        } else {
            CpuLevels::discrete(self.levels.clone())
        }
    }

    pub fn ideal() -> Self {
        Self {
            name: "CPU-ideal".into(),
            levels: vec![1.0],
            continuous: true,
        }
    }
}

/// The five processors of the benchmark, slowest level set first.
pub fn builtin_cpus() -> Vec<CpuSpec> {
    let discrete = |name: &str, levels: &[f64]| CpuSpec {
        name: name.into(),
        levels: levels.to_vec(),
        continuous: false,
    };
    vec![
        discrete("CPU-1", &[0.5, 1.0]),
        discrete("CPU-2", &[0.45, 0.64, 0.92, 1.0]),
        discrete("CPU-3", &[0.36, 0.55, 0.64, 0.73, 0.82, 0.91, 1.0]),
        discrete(
            "CPU-4",
            &[
                0.285, 0.333, 0.380, 0.428, 0.476, 0.523, 0.571, 0.619, 0.666, 0.714, 0.761, 0.809,
                0.857, 0.904, 0.952, 1.0,
            ],
        ),
        CpuSpec::ideal(),
    ]
}

/// Looks up a built-in processor by name, ignoring case and dashes
/// (`cpu-2`, `CPU2`, `ideal` all work).
pub fn builtin_cpu(name: &str) -> Option<CpuSpec> {
    let norm = |s: &str| s.to_ascii_lowercase().replace(['-', '_'], "");
    let wanted = norm(name);
    builtin_cpus().into_iter().find(|c| {
        let n = norm(&c.name);
        n == wanted || (wanted == "ideal" && n == "cpuideal")
    })
}

/// Uniform multiplicative variation of each job's execution time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jitter {
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub c_nom_us: u64,
    pub h0_us: u64,
    pub h_max_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptation: Option<AdaptationParams<f64>>,
}

impl LoopConfig {
    pub fn transfer_function(&self) -> TransferFunction<f64> {
        TransferFunction::new(self.numerator.clone(), self.denominator.clone())
    }

    pub fn gains(&self) -> PidGains<f64> {
        PidGains::new(self.kp, self.ki, self.kd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub duration_us: u64,
    pub perturbation_interval_us: u64,
    pub micro_step_us: u64,
    pub trace_cadence_us: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub switch_overhead_us: u64,
    pub adaptation: AdaptationParams<f64>,
    pub cpu: CpuSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter: Option<Jitter>,
    pub loops: Vec<LoopConfig>,
}

/// The four-loop benchmark: plants, PID gains and timing of the evaluation
/// setup, run for 12 s with the reference toggling every second.
pub fn builtin_table1() -> Scenario {
    let lp = |num: f64, den: &[f64], kp, ki, kd, h0_ms: u64, h_max_ms: u64| LoopConfig {
        numerator: vec![num],
        denominator: den.to_vec(),
        kp,
        ki,
        kd,
        c_nom_us: 2_000,
        h0_us: h0_ms * 1_000,
        h_max_us: h_max_ms * 1_000,
        adaptation: None,
    };
    Scenario {
        name: "table1".into(),
        mode: Mode::Qapm,
        duration_us: 12_000_000,
        perturbation_interval_us: 1_000_000,
        micro_step_us: 100,
        trace_cadence_us: 1_000,
        seed: 0,
        switch_overhead_us: 0,
        adaptation: AdaptationParams {
            beta: 40.0,
            e_min: 0.02,
            e_max: 0.3,
        },
        cpu: CpuSpec::ideal(),
        jitter: None,
        loops: vec![
            lp(1.0, &[50.0, 1000.0], 1e4, 400.0, 0.0, 10, 40),
            lp(1.0, &[20.0, 10.0, 1.0], 30.0, 70.0, 0.0, 7, 30),
            lp(1.0, &[10.0, 6.0, 0.5], 100.0, 200.0, 2.0, 8, 30),
            lp(1.0, &[20.0, 10.0, 1.0], 200.0, 350.0, 3.0, 9, 40),
        ],
    }
}

/// One violated constraint, located by its path in the scenario tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl Scenario {
    /// Adaptation parameters in effect for loop `idx`.
    pub fn adaptation_for(&self, idx: usize) -> AdaptationParams<f64> {
        self.loops[idx].adaptation.unwrap_or(self.adaptation)
    }

    /// Task specs with times in microseconds.
    pub fn task_specs(&self) -> Vec<TaskSpec<f64>> {
        self.loops
            .iter()
            .enumerate()
            .map(|(i, l)| TaskSpec {
                id: i + 1,
                c_nom: l.c_nom_us as f64,
                h0: l.h0_us as f64,
                h_max: l.h_max_us as f64,
                adaptation: self.adaptation_for(i),
            })
            .collect()
    }

    /// Processor the scheme actually runs on. The optimal standard DVS
    /// baseline always uses a continuous processor.
    pub fn effective_cpu(&self) -> CpuSpec {
        match self.mode {
            Mode::Osdvs => CpuSpec::ideal(),
            _ => self.cpu.clone(),
        }
    }

    /// Exact `sum c_nom / h0`.
    pub fn nominal_workload(&self) -> Ratio<i128> {
        exact_workload(self.loops.iter().map(|l| (l.c_nom_us, l.h0_us)))
            .unwrap_or_else(|| Ratio::from_integer(i128::MAX))
    }

    /// Every violated constraint; empty when the scenario is runnable.
    pub fn validate(&self) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();
        let mut push =
            |path: String, message: String| issues.push(ValidationIssue { path, message });

        if self.perturbation_interval_us == 0 {
            push("perturbation_interval_us".into(), "must be positive".into());
        }
        if self.micro_step_us == 0 || self.micro_step_us > 1_000 {
            push(
                "micro_step_us".into(),
                format!("must be in 1..=1000, got {}", self.micro_step_us),
            );
        }
        if self.trace_cadence_us == 0 {
            push("trace_cadence_us".into(), "must be positive".into());
        }
        // TOML integers are signed
        if i64::try_from(self.seed).is_err() {
            push(
                "seed".into(),
                format!("must be at most {}, got {}", i64::MAX, self.seed),
            );
        }
        if let Err(e) = self.adaptation.validate() {
            push("adaptation".into(), strip(e));
        }
        if let Err(e) = self.cpu.to_levels() {
            push("cpu.levels".into(), strip(e));
        }
        if let Some(j) = self.jitter {
            if !(j.low > 0.0 && j.low <= j.high && j.high.is_finite()) {
                push(
                    "jitter".into(),
                    format!(
                        "need 0 < low <= high, got low = {}, high = {}",
                        j.low, j.high
                    ),
                );
            }
        }
        if self.loops.is_empty() {
            push("loops".into(), "at least one loop is required".into());
        }
        for (i, l) in self.loops.iter().enumerate() {
            let at = |field: &str| format!("loops[{i}].{field}");
            if let Err(e) = l.transfer_function().validate() {
                push(at("denominator"), strip(e));
            }
            if let Err(e) = l.gains().validate() {
                push(at("kp"), strip(e));
            }
            if !(l.c_nom_us > 0 && l.c_nom_us <= l.h0_us && l.h0_us <= l.h_max_us) {
                push(
                    at("c_nom_us"),
                    format!(
                        "need 0 < c_nom_us <= h0_us <= h_max_us, got {} / {} / {}",
                        l.c_nom_us, l.h0_us, l.h_max_us
                    ),
                );
            }
            if let Some(a) = l.adaptation {
                if let Err(e) = a.validate() {
                    push(at("adaptation"), strip(e));
                }
            }
        }
        if self.loops.iter().all(|l| l.h0_us > 0) && !self.loops.is_empty() {
            let w = self.nominal_workload();
            if w > Ratio::from_integer(1) {
                push(
                    "loops".into(),
                    format!(
                        "infeasible: nominal utilization sum c_nom/h0 = {:.6} exceeds 1",
                        *w.numer() as f64 / *w.denom() as f64
                    ),
                );
            }
        }
        issues
    }

    pub fn validated(self) -> Result<Self> {
        let issues = self.validate();
        if issues.is_empty() {
            Ok(self)
        } else {
            Err(Error::Validation(issues))
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(format!("serializing scenario: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
            Error::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    Scenario::from_toml(&text)?.validated()
}

/// Reads a processor description: a `[cpu]`-style table on its own.
pub fn load_cpu(path: &Path) -> Result<CpuSpec> {
    let text = std::fs::read_to_string(path)?;
    let spec: CpuSpec = toml::from_str(&text).map_err(|e| {
        let (line, column) = e.span().map(|s| line_col(&text, s.start)).unwrap_or((0, 0));
        Error::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    spec.to_levels()?;
    Ok(spec)
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) | Error::Input(m) => m,
        other => other.to_string(),
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

/// Exact `sum c/h`, or `None` if the common denominator overflows.
fn exact_workload(pairs: impl Iterator<Item = (u64, u64)>) -> Option<Ratio<i128>> {
    pairs
        .into_iter()
        .try_fold(Ratio::from_integer(0i128), |acc, (c, h)| {
            if h == 0 {
                return None;
            }
            acc.checked_add(&Ratio::new(c as i128, h as i128))
        })
}

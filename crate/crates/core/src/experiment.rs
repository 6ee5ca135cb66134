//! Run orchestration and output files.
//!
//! A run directory holds `scenario.toml` (the exact input), `trace.csv`,
//! `schedule.csv` and `report.json`. A sweep writes one run directory per
//! column plus `comparison.csv` and `comparison.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{run_scenario, RunOutput};
use crate::metrics::{sig6, write_schedule_csv, write_trace_csv, RunReport};
use crate::scenario::{CpuSpec, Mode, Scenario};

/// Runs `scenario` and writes its output files into `out`.
pub fn run_to_dir(scenario: &Scenario, out: &Path) -> Result<RunOutput> {
    let output = run_scenario(scenario)?;
    write_run(scenario, &output, out)?;
    Ok(output)
}

pub fn write_run(scenario: &Scenario, output: &RunOutput, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    scenario.save(&out.join("scenario.toml"))?;
    write_trace_csv(&output.trace.rows, &out.join("trace.csv"))?;
    write_schedule_csv(&output.trace.schedule, &out.join("schedule.csv"))?;
    output.report.write_json(&out.join("report.json"))?;
    Ok(())
}

/// Average energy and total control cost side by side, one column per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub columns: Vec<String>,
    pub e_avg: Vec<Option<f64>>,
    pub j_sum: Vec<f64>,
}

impl Comparison {
    pub fn from_reports(reports: &[RunReport]) -> Self {
        Self {
            columns: reports.iter().map(column_name).collect(),
            e_avg: reports.iter().map(|r| r.e_avg).collect(),
            j_sum: reports.iter().map(|r| r.j_sum).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "null".to_string(), |x| sig6(x).to_string());
        let mut s = String::from("metric");
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push_str("\nE_AVG");
        for v in &self.e_avg {
            s.push(',');
            s.push_str(&fmt(*v));
        }
        s.push_str("\nJ_SUM");
        for v in &self.j_sum {
            s.push(',');
            s.push_str(&fmt(Some(*v)));
        }
        s.push('\n');
        s
    }

    pub fn to_json(&self) -> Result<String> {
        let rounded = Comparison {
            columns: self.columns.clone(),
            e_avg: self.e_avg.iter().map(|v| v.map(sig6)).collect(),
            j_sum: self.j_sum.iter().map(|&v| sig6(v)).collect(),
        };
        Ok(serde_json::to_string_pretty(&rounded)?)
    }
}

fn column_name(r: &RunReport) -> String {
    match r.mode {
        Mode::Osdvs => "osDVS".to_string(),
        Mode::Qapm => r.cpu.clone(),
        Mode::DvsOnly => format!("{} (dvs-only)", r.cpu),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// osDVS baseline first, then one adaptive run per processor.
    pub runs: Vec<(Scenario, RunOutput)>,
    pub table: Comparison,
}

/// Scenario variants compared by a sweep: the fixed-period baseline and the
/// full scheme on every processor.
pub fn sweep_scenarios(base: &Scenario, cpus: &[CpuSpec]) -> Vec<Scenario> {
    let mut osdvs = base.clone();
    osdvs.mode = Mode::Osdvs;
    osdvs.cpu = CpuSpec::ideal();
    std::iter::once(osdvs)
        .chain(cpus.iter().map(|cpu| {
            let mut s = base.clone();
            s.mode = Mode::Qapm;
            s.cpu = cpu.clone();
            s
        }))
        .collect()
}

/// Runs every sweep variant, each on its own thread.
pub fn sweep(base: &Scenario, cpus: &[CpuSpec]) -> Result<SweepResult> {
    let scenarios = sweep_scenarios(base, cpus);
    let outputs: Vec<Result<RunOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .iter()
            .map(|s| scope.spawn(move || run_scenario(s)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Internal("simulation thread panicked".into())))
            })
            .collect()
    });
    let runs = scenarios
        .into_iter()
        .zip(outputs)
        .map(|(s, o)| o.map(|o| (s, o)))
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<RunReport> = runs.iter().map(|(_, o)| o.report.clone()).collect();
    Ok(SweepResult {
        table: Comparison::from_reports(&reports),
        runs,
    })
}

/// Runs a sweep and writes every run directory plus the comparison table.
pub fn sweep_to_dir(base: &Scenario, cpus: &[CpuSpec], out: &Path) -> Result<SweepResult> {
    let result = sweep(base, cpus)?;
    std::fs::create_dir_all(out)?;
    for (scenario, output) in &result.runs {
        let dir = match scenario.mode {
            Mode::Osdvs => "osdvs".to_string(),
            _ => scenario.cpu.name.to_ascii_lowercase(),
        };
        write_run(scenario, output, &out.join(dir))?;
    }
    std::fs::write(out.join("comparison.csv"), result.table.to_csv())?;
    std::fs::write(out.join("comparison.json"), result.table.to_json()? + "\n")?;
    Ok(result)
}

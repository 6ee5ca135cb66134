use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use qapm_core::experiment::sweep_to_dir;
use qapm_core::scenario::{load_cpu, Mode as ScenarioMode};
use qapm_core::{
    builtin_cpu, builtin_cpus, builtin_table1, load_scenario, run_to_dir, CpuSpec, Error,
    RunReport, Scenario,
};

const EXIT_RUN_ERROR: u8 = 1;
const EXIT_CONFIG_ERROR: u8 = 2;
const EXIT_DEADLINE_MISS: u8 = 3;

#[derive(Parser)]
#[command(
    name = "qapm",
    version,
    about = "Power-managed control loop co-simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its trace and report.
    Run(RunArgs),
    /// Run the fixed-period baseline and the adaptive scheme on several processors.
    Sweep(SweepArgs),
    /// Check a scenario file and list every problem found.
    Validate {
        #[arg(long, env = "QAPM_SCENARIO")]
        scenario: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Builtin {
    Table1,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Qapm,
    Osdvs,
    DvsOnly,
}

impl From<Mode> for ScenarioMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Qapm => ScenarioMode::Qapm,
            Mode::Osdvs => ScenarioMode::Osdvs,
            Mode::DvsOnly => ScenarioMode::DvsOnly,
        }
    }
}

#[derive(Args)]
struct Source {
    /// Scenario file (TOML).
    #[arg(long, env = "QAPM_SCENARIO", conflicts_with = "builtin")]
    scenario: Option<PathBuf>,
    /// Built-in scenario.
    #[arg(long, env = "QAPM_BUILTIN", value_enum)]
    builtin: Option<Builtin>,
}

impl Source {
    fn load(&self) -> anyhow::Result<Scenario> {
        match (&self.scenario, self.builtin) {
            (Some(path), _) => Ok(load_scenario(path)?),
            (None, Some(Builtin::Table1)) => Ok(builtin_table1()),
            (None, None) => bail!(Error::Config(
                "pass --scenario <file> or --builtin table1".into()
            )),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    /// Processor: CPU-1..CPU-4, CPU-ideal, or a file with a [cpu]-style table.
    #[arg(long, env = "QAPM_CPU")]
    cpu: Option<String>,
    #[arg(long, env = "QAPM_MODE", value_enum)]
    mode: Option<Mode>,
    /// Simulated time in seconds.
    #[arg(long, env = "QAPM_DURATION")]
    duration: Option<f64>,
    #[arg(long, env = "QAPM_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "QAPM_OUT", default_value = "out")]
    out: PathBuf,
    /// Trace sampling interval in milliseconds.
    #[arg(long, env = "QAPM_TRACE_CADENCE")]
    trace_cadence: Option<f64>,
    /// Plant integration step in microseconds.
    #[arg(long, env = "QAPM_MICRO_STEP")]
    micro_step: Option<u64>,
    /// Exit with a distinct code if any deadline is missed.
    #[arg(long, env = "QAPM_STRICT")]
    strict: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: Source,
    /// Compare all built-in processors.
    #[arg(long)]
    all_cpus: bool,
    /// Processors to compare (repeatable); ignored with --all-cpus.
    #[arg(long, env = "QAPM_CPU")]
    cpu: Vec<String>,
    #[arg(long, env = "QAPM_OUT", default_value = "out")]
    out: PathBuf,
    #[arg(long, env = "QAPM_STRICT")]
    strict: bool,
}

fn resolve_cpu(name: &str) -> anyhow::Result<CpuSpec> {
    if let Some(cpu) = builtin_cpu(name) {
        return Ok(cpu);
    }
    let path = Path::new(name);
    if path.exists() {
        return Ok(load_cpu(path)?);
    }
    bail!(Error::Config(format!(
        "unknown processor '{name}' (expected CPU-1..CPU-4, CPU-ideal or a file)"
    )))
}

fn micros(value: f64, unit: f64, what: &str) -> anyhow::Result<u64> {
    let us = value * unit;
    if !us.is_finite() || us < 0.0 {
        bail!(Error::Config(format!(
            "{what} must be non-negative, got {value}"
        )));
    }
    Ok(us.round() as u64)
}

fn print_report(r: &RunReport) {
    let e_avg = r
        .e_avg
        .map_or_else(|| "n/a".to_string(), |e| format!("{e:.4}"));
    let iae: Vec<String> = r.iae.iter().map(|j| format!("{j:.4}")).collect();
    println!(
        "{:<6} {:<10} E_AVG {e_avg}  J_SUM {:.4}  IAE [{}]  misses {}",
        r.mode,
        r.cpu,
        r.j_sum,
        iae.join(", "),
        r.deadline_misses
    );
}

fn run(args: RunArgs) -> anyhow::Result<bool> {
    let mut scenario = args.source.load()?;
    if let Some(cpu) = &args.cpu {
        scenario.cpu = resolve_cpu(cpu)?;
    }
    if let Some(mode) = args.mode {
        scenario.mode = mode.into();
    }
    if let Some(d) = args.duration {
        scenario.duration_us = micros(d, 1e6, "duration")?;
    }
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(c) = args.trace_cadence {
        scenario.trace_cadence_us = micros(c, 1e3, "trace cadence")?;
    }
    if let Some(m) = args.micro_step {
        scenario.micro_step_us = m;
    }
    let scenario = scenario.validated()?;
    let output = run_to_dir(&scenario, &args.out)
        .with_context(|| format!("running scenario '{}'", scenario.name))?;
    print_report(&output.report);
    println!("wrote {}", args.out.display());
    Ok(args.strict && output.report.deadline_misses > 0)
}

fn sweep(args: SweepArgs) -> anyhow::Result<bool> {
    let scenario = args.source.load()?.validated()?;
    let cpus = if args.all_cpus || args.cpu.is_empty() {
        builtin_cpus()
    } else {
        args.cpu
            .iter()
            .map(|c| resolve_cpu(c))
            .collect::<anyhow::Result<_>>()?
    };
    let result = sweep_to_dir(&scenario, &cpus, &args.out)?;
    for (_, out) in &result.runs {
        print_report(&out.report);
    }
    print!("{}", result.table.to_csv());
    println!("wrote {}", args.out.display());
    Ok(args.strict
        && result
            .runs
            .iter()
            .any(|(_, o)| o.report.deadline_misses > 0))
}

fn validate(path: &Path) -> anyhow::Result<bool> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let scenario = Scenario::from_toml(&text)?;
    let issues = scenario.validate();
    if issues.is_empty() {
        println!("{}: ok", path.display());
        Ok(false)
    } else {
        Err(anyhow!(Error::Validation(issues)))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
        Command::Validate { scenario } => validate(&scenario),
    };
    match result {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("deadline misses detected");
            ExitCode::from(EXIT_DEADLINE_MISS)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            let config = err.chain().any(|e| {
                e.downcast_ref::<Error>()
                    .is_some_and(Error::is_configuration)
            });
            ExitCode::from(if config {
                EXIT_CONFIG_ERROR
            } else {
                EXIT_RUN_ERROR
            })
        }
    }
}

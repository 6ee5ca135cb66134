//! Co-simulation of periodic control loops scheduled by EDF on a processor
//! with a finite set of voltage/speed levels, managed by a QoC-aware power
//! manager that stretches sampling periods when control errors are small,
//! picks the slowest sufficient speed and shrinks periods again to use up
//! the slack left by speed quantization.
//!
//! The policy, plant and controller code is generic over the scalar type;
//! the aliases below fix it to `f64` (or exact rationals where the policy
//! allows it).

// `!(x > 0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod kernel;
pub mod metrics;
pub mod pid;
pub mod plant;
pub mod policy;
pub mod scalar;
pub mod scenario;

pub use error::{Error, Result};
pub use experiment::{run_to_dir, sweep, sweep_to_dir, SweepResult, Comparison};
pub use kernel::{edf_select, run_scenario, Job, RunOutput, SimEvent, SimTime, Simulator};
pub use metrics::{RunReport, RunTrace};
pub use scalar::{Real, Scalar};
pub use scenario::{
    builtin_cpu, builtin_cpus, builtin_table1, load_scenario, CpuSpec, Mode, Scenario,
};

/// Exact rational scalar for workload and reclaiming arithmetic.
pub type Rational = num_rational::Ratio<i64>;

pub type AdaptationParams = policy::AdaptationParams<f64>;
pub type TaskSpec = policy::TaskSpec<f64>;
pub type CpuLevels = policy::CpuLevels<f64>;
pub type PolicyDecision = policy::PolicyDecision<f64>;
pub type TransferFunction = plant::TransferFunction<f64>;
pub type StateSpacePlant = plant::StateSpacePlant<f64>;
pub type PidGains = pid::PidGains<f64>;
pub type Pid = pid::Pid<f64>;

pub type RationalCpuLevels = policy::CpuLevels<Rational>;
pub type RationalPolicyDecision = policy::PolicyDecision<Rational>;

//! Behavioral ReRAM device model with a decaying leakage capacity,
//! reproducible parameter variability, a small transient network solver and
//! Monte Carlo studies of stateful memristive logic gates.

pub mod analysis;
pub mod device;
pub mod error;
pub mod experiments;
pub mod gates;
pub mod network;
pub mod params;
pub mod stimulus;

pub use analysis::{average_deviation, extract_thresholds, histogram, Binning, Histogram, SlopeMethod, Thresholds};
pub use device::{
    current, resistance, step, window_off, window_on, DeviceParams, DeviceState, IntegratorConfig, Polarity, Scheme,
    StepReport,
};
pub use error::{Error, Result};
pub use experiments::{replay_dynamics, replay_leakage, replay_ron_roff, replay_thresholds, LeakageMode, ReplayConfig};
pub use gates::{
    correctness_study, logic_value, run_gate, stable_time_study, GateFamily, GateInput, GateOptions, GateSpec,
    GateTrialResult, StableTimeStats,
};
pub use network::{run_transient, solve_dc, Element, Netlist, SourceValue, TransientOptions, TransientTrace};
pub use params::{
    default_distributions, sample, DistKind, DistributionSpec, ParamDistributions, SamplingMode, SamplingPolicy,
};
pub use stimulus::{ProtocolTiming, Segment, SegmentKind, Waveform};

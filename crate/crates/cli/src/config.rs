//! TOML run configuration and its resolution against command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use reram_core::device::{DeviceParams, IntegratorConfig};
use reram_core::experiments::{LeakageMode, SweepConfig};
use reram_core::gates::{GateFamily, GateSpec};
use reram_core::network::{Netlist, TransientOptions};
use reram_core::params::{DistributionSpec, ParamDistributions, ParamId, SamplingMode, SamplingPolicy};
use reram_core::stimulus::{ProtocolTiming, Waveform};
use reram_core::Error;
use serde::{Deserialize, Serialize};

pub const DEFAULT_PRESET: &str = "believer-default";
pub const DEFAULT_HORIZON: f64 = 200.0;

/// Everything a config file may set. Absent keys fall back to defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub out: Option<PathBuf>,
    pub horizon: Option<f64>,
    pub sampling: Option<SamplingMode>,
    pub uniform_halfwidth: Option<f64>,
    pub gaussian_truncation: Option<f64>,
    /// Replaces the distribution of a varied parameter, keyed by name.
    pub distributions: BTreeMap<String, DistributionSpec>,
    /// Pins any model parameter to a constant, keyed by field name.
    pub fixed: BTreeMap<String, f64>,
    pub integrator: Option<IntegratorConfig>,
    pub transient: TransientFile,
    pub timing: Option<ProtocolTiming>,
    pub waveform: Option<Waveform>,
    pub netlist: Option<Netlist>,
    pub gate: GateFile,
    pub leakage: LeakageSettings,
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransientFile {
    pub dt: Option<f64>,
    pub quiet_dt: Option<f64>,
    pub sample_dt: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateFile {
    pub t_op: Option<f64>,
    pub v_set: Option<f64>,
    pub v_cond: Option<f64>,
    pub v0: Option<f64>,
    pub r_g: Option<f64>,
    pub points_per_decade: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeakageSettings {
    /// `single` or `series`.
    pub mode: LeakageKind,
    /// SET pulses in series mode.
    pub n_set: usize,
    pub probes: usize,
    pub interval: f64,
    /// Parameter draw index.
    pub run: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakageKind {
    #[default]
    Single,
    Series,
}

impl Default for LeakageSettings {
    fn default() -> Self {
        Self { mode: LeakageKind::Single, n_set: 4, probes: 100, interval: 1.0, run: 0 }
    }
}

impl LeakageSettings {
    pub fn mode(&self) -> LeakageMode {
        match self.mode {
            LeakageKind::Single => LeakageMode::Single,
            LeakageKind::Series => LeakageMode::Series { n_set: self.n_set },
        }
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub out: Option<PathBuf>,
    pub horizon: Option<f64>,
}

/// Fully resolved settings; echoed into every manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub preset: String,
    pub seed: u64,
    pub trials: Option<usize>,
    #[serde(skip)]
    pub out: PathBuf,
    pub horizon: f64,
    pub distributions: ParamDistributions,
    pub policy: SamplingPolicy,
    pub transient: TransientOptions,
    pub timing: ProtocolTiming,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub waveform: Option<Waveform>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub netlist: Option<Netlist>,
    /// Overrides of the per-family gate defaults.
    pub gate: GateFile,
    pub points_per_decade: usize,
    pub leakage: LeakageSettings,
    pub sweep: SweepConfig,
}

pub fn load(path: Option<&Path>) -> anyhow::Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn set_param(p: &mut DeviceParams, name: &str, v: f64) -> anyhow::Result<()> {
    let slot = match name {
        "alpha_off" => &mut p.alpha_off,
        "alpha_on" => &mut p.alpha_on,
        "a_off" => &mut p.a_off,
        "a_on" => &mut p.a_on,
        "w_c" => &mut p.w_c,
        "w_off" => &mut p.w_off,
        "w_on" => &mut p.w_on,
        "theta_off" => &mut p.theta_off,
        "theta_on" => &mut p.theta_on,
        "tau_l" => &mut p.tau_l,
        _ => return Err(Error::Config(format!("unknown model parameter '{name}'")).into()),
    };
    *slot = v;
    Ok(())
}

fn param_id(name: &str) -> Option<ParamId> {
    ParamId::ALL.into_iter().find(|id| id.name() == name)
}

pub fn resolve(file: FileConfig, flags: Overrides) -> anyhow::Result<Resolved> {
    let preset = flags.preset.or(file.preset).unwrap_or_else(|| DEFAULT_PRESET.to_owned());
    let mut dists = ParamDistributions::preset(&preset)?;
    if let Some(m) = file.uniform_halfwidth {
        dists.uniform_halfwidth = m;
    }
    if let Some(m) = file.gaussian_truncation {
        dists.gaussian_truncation = m;
    }
    for (name, spec) in &file.distributions {
        let Some(id) = param_id(name) else {
            return Err(Error::Config(format!("'{name}' is not a varied parameter")).into());
        };
        *dists.spec_mut(id) = *spec;
    }
    for (name, &v) in &file.fixed {
        match param_id(name) {
            Some(id) => *dists.spec_mut(id) = DistributionSpec::fixed(v),
            None => set_param(&mut dists.base, name, v)?,
        }
    }
    dists.validate()?;

    let seed = flags.seed.or(file.seed).unwrap_or(0);
    let policy = SamplingPolicy { mode: file.sampling.unwrap_or_default(), base_seed: seed };
    let horizon = flags.horizon.or(file.horizon).unwrap_or(DEFAULT_HORIZON);
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!("horizon must be positive, got {horizon}")).into());
    }
    let trials = flags.trials.or(file.trials);
    if trials == Some(0) {
        return Err(Error::Config(format!("trials must be at least 1")).into());
    }
    let transient = TransientOptions {
        dt: file.transient.dt,
        quiet_dt: file.transient.quiet_dt,
        sample_dt: file.transient.sample_dt,
        record: true,
        integrator: file.integrator.unwrap_or_default(),
    };
    Ok(Resolved {
        preset,
        seed,
        trials,
        out: flags.out.or(file.out).unwrap_or_else(|| PathBuf::from("results")),
        horizon,
        distributions: dists,
        policy,
        transient,
        timing: file.timing.unwrap_or_default(),
        waveform: file.waveform,
        netlist: file.netlist,
        gate: file.gate,
        points_per_decade: file.gate.points_per_decade.unwrap_or(40),
        leakage: file.leakage,
        sweep: file.sweep.unwrap_or_default(),
    })
}

impl Resolved {
    pub fn gate_spec(&self, family: GateFamily) -> GateSpec {
        let g = self.gate;
        let d = GateSpec::default_for(family);
        GateSpec {
            family,
            t_op: g.t_op.unwrap_or(d.t_op),
            v_set: g.v_set.or(d.v_set),
            v_cond: g.v_cond.or(d.v_cond),
            v0: g.v0.or(d.v0),
            r_g: g.r_g.or(d.r_g),
        }
    }
}

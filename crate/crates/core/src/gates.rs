//! Stateful logic gates and their Monte Carlo studies.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{histogram, Binning, Histogram};
use crate::device::{self, DeviceParams, DeviceState, IntegratorConfig, Polarity};
use crate::error::{Error, Result};
use crate::network::{run_transient, Element, Netlist, SourceValue, TransientOptions};
use crate::params::{sample, ParamDistributions, SamplingPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateFamily {
    #[serde(rename = "IMPLY")]
    Imply,
    #[serde(rename = "MAGIC_NOR")]
    MagicNor,
    #[serde(rename = "FELIX_OR")]
    FelixOr,
    #[serde(rename = "TMSL_NOR")]
    TmslNor,
}

impl GateFamily {
    pub const ALL: [GateFamily; 4] = [Self::Imply, Self::MagicNor, Self::FelixOr, Self::TmslNor];

    pub fn name(self) -> &'static str {
        match self {
            Self::Imply => "IMPLY",
            Self::MagicNor => "MAGIC_NOR",
            Self::FelixOr => "FELIX_OR",
            Self::TmslNor => "TMSL_NOR",
        }
    }

    /// Expected output bit for inputs `(a, b)`.
    pub fn truth(self, a: bool, b: bool) -> bool {
        match self {
            Self::Imply => !a || b,
            Self::MagicNor | Self::TmslNor => !(a || b),
            Self::FelixOr => a || b,
        }
    }

    pub fn device_count(self) -> usize {
        match self {
            Self::Imply => 2,
            _ => 3,
        }
    }

    /// Index of the device holding the result.
    pub fn output_device(self) -> usize {
        match self {
            Self::Imply => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for GateFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GateFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "IMPLY" => Ok(Self::Imply),
            "MAGIC" | "MAGIC_NOR" => Ok(Self::MagicNor),
            "FELIX" | "FELIX_OR" => Ok(Self::FelixOr),
            "TMSL" | "TMSL_NOR" => Ok(Self::TmslNor),
            _ => Err(Error::Config(format!("unknown gate family '{s}'"))),
        }
    }
}

/// Two-bit input; `bits = 0b01` means a = 0, b = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct GateInput(u8);

impl GateInput {
    pub const ALL: [GateInput; 4] = [GateInput(0), GateInput(1), GateInput(2), GateInput(3)];

    pub fn new(bits: u8) -> Result<Self> {
        if bits < 4 {
            Ok(Self(bits))
        } else {
            Err(Error::Config(format!("gate input {bits} is not two bits")))
        }
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn a(self) -> bool {
        self.0 & 2 != 0
    }

    pub fn b(self) -> bool {
        self.0 & 1 != 0
    }
}

impl fmt::Display for GateInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.a() as u8, self.b() as u8)
    }
}

impl FromStr for GateInput {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "00" => Ok(Self(0)),
            "01" => Ok(Self(1)),
            "10" => Ok(Self(2)),
            "11" => Ok(Self(3)),
            _ => Err(Error::Config(format!("gate input must be one of 00, 01, 10, 11; got '{s}'"))),
        }
    }
}

impl From<GateInput> for String {
    fn from(i: GateInput) -> Self {
        i.to_string()
    }
}

impl TryFrom<String> for GateInput {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Logic value of a normalized state (1 = LRS).
pub fn logic_value(s: f64) -> bool {
    s >= 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    pub family: GateFamily,
    /// Operation time, s.
    pub t_op: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_set: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_cond: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_g: Option<f64>,
}

impl GateSpec {
    pub fn default_for(family: GateFamily) -> Self {
        let base = Self { family, t_op: 0.0, v_set: None, v_cond: None, v0: None, r_g: None };
        match family {
            GateFamily::Imply => Self { t_op: 50e-6, v_set: Some(0.6), v_cond: Some(0.4), r_g: Some(40e3), ..base },
            GateFamily::MagicNor | GateFamily::FelixOr => Self { t_op: 10e-3, v0: Some(1.0), ..base },
            GateFamily::TmslNor => Self { t_op: 100e-6, v_set: Some(1.0), v_cond: Some(0.5), r_g: Some(40e3), ..base },
        }
    }

    fn need(&self, v: Option<f64>, name: &str) -> Result<f64> {
        match v {
            Some(x) if x.is_finite() => Ok(x),
            _ => Err(Error::Config(format!("{} gate needs a finite {name}", self.family))),
        }
    }

    /// Checks the design constraints against nominal device parameters.
    pub fn validate(&self, nominal: &DeviceParams) -> Result<()> {
        if !(self.t_op > 0.0 && self.t_op.is_finite()) {
            return Err(Error::Config(format!("operation time must be positive, got {}", self.t_op)));
        }
        match self.family {
            GateFamily::Imply | GateFamily::TmslNor => {
                let v_set = self.need(self.v_set, "v_set")?;
                let v_cond = self.need(self.v_cond, "v_cond")?;
                let r_g = self.need(self.r_g, "r_g")?;
                if !(r_g > 0.0) {
                    return Err(Error::Config("r_g must be positive".into()));
                }
                if self.family == GateFamily::Imply {
                    if !(v_set > nominal.v_off) {
                        return Err(Error::Config(format!("IMPLY needs v_set > v_off ({})", nominal.v_off)));
                    }
                    if !(v_set > v_cond) {
                        return Err(Error::Config("IMPLY needs v_set > v_cond".into()));
                    }
                    if !(nominal.r_on < r_g && r_g < nominal.r_off) {
                        return Err(Error::Config("IMPLY needs r_on < r_g < r_off".into()));
                    }
                }
            }
            GateFamily::MagicNor | GateFamily::FelixOr => {
                let v0 = self.need(self.v0, "v0")?;
                if !(v0 > 0.0) {
                    return Err(Error::Config("v0 must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn expected(&self, input: GateInput) -> bool {
        self.family.truth(input.a(), input.b())
    }

    /// Circuit with the operation voltages applied as constant sources.
    pub fn netlist(&self) -> Result<Netlist> {
        let n = |s: &str| s.to_owned();
        let src = |v: f64, pos: &str| Element::Vsource { value: SourceValue::Constant(v), pos: n(pos), neg: n("gnd") };
        let mem = |device: usize, pos: &str, neg: &str, polarity: Polarity| Element::Memristor {
            device,
            pos: n(pos),
            neg: n(neg),
            polarity,
        };
        let res = |ohms: f64, pos: &str, neg: &str| Element::Resistor { ohms, pos: n(pos), neg: n(neg) };
        use Polarity::{Forward, Reverse};
        match self.family {
            GateFamily::Imply => Netlist::new(
                vec![n("gnd"), n("vcond"), n("vset"), n("x")],
                "gnd",
                vec![
                    src(self.need(self.v_cond, "v_cond")?, "vcond"),
                    src(self.need(self.v_set, "v_set")?, "vset"),
                    mem(0, "vcond", "x", Forward),
                    mem(1, "vset", "x", Forward),
                    res(self.need(self.r_g, "r_g")?, "x", "gnd"),
                ],
            ),
            GateFamily::MagicNor => Netlist::new(
                vec![n("gnd"), n("top"), n("mid")],
                "gnd",
                vec![
                    src(self.need(self.v0, "v0")?, "top"),
                    mem(0, "top", "mid", Reverse),
                    mem(1, "top", "mid", Reverse),
                    mem(2, "mid", "gnd", Reverse),
                ],
            ),
            GateFamily::FelixOr => Netlist::new(
                vec![n("gnd"), n("top"), n("mid")],
                "gnd",
                vec![
                    src(self.need(self.v0, "v0")?, "top"),
                    mem(0, "mid", "gnd", Reverse),
                    mem(1, "mid", "gnd", Reverse),
                    mem(2, "top", "mid", Forward),
                ],
            ),
            GateFamily::TmslNor => Netlist::new(
                vec![n("gnd"), n("vcond"), n("vset"), n("x")],
                "gnd",
                vec![
                    src(self.need(self.v_cond, "v_cond")?, "vcond"),
                    src(self.need(self.v_set, "v_set")?, "vset"),
                    mem(0, "vcond", "x", Forward),
                    mem(1, "vcond", "x", Forward),
                    mem(2, "x", "gnd", Forward),
                    res(self.need(self.r_g, "r_g")?, "x", "vset"),
                ],
            ),
        }
    }

    /// Inputs at full HRS/LRS per bit; the output per family rule.
    pub fn initial_states(
        &self,
        input: GateInput,
        params: &[DeviceParams],
        polarities: &[Polarity],
    ) -> Vec<DeviceState> {
        let at = |k: usize, lrs: bool| {
            if lrs {
                DeviceState::lrs(&params[k], polarities[k])
            } else {
                DeviceState::hrs(&params[k], polarities[k])
            }
        };
        match self.family {
            GateFamily::Imply => vec![at(0, input.a()), at(1, input.b())],
            GateFamily::MagicNor => vec![at(0, input.a()), at(1, input.b()), at(2, true)],
            GateFamily::FelixOr | GateFamily::TmslNor => vec![at(0, input.a()), at(1, input.b()), at(2, false)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateOptions {
    pub transient: TransientOptions,
    /// Integrator used for the post-operation relaxation.
    pub relax: IntegratorConfig,
    /// Observation grid points per decade of the relaxation.
    pub points_per_decade: usize,
}

impl Default for GateOptions {
    fn default() -> Self {
        Self {
            transient: TransientOptions { record: false, ..TransientOptions::default() },
            relax: IntegratorConfig::default(),
            points_per_decade: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateTrialResult {
    pub input: GateInput,
    pub trial: u64,
    pub params: Vec<DeviceParams>,
    /// Normalized state of every device at the end of the operation.
    pub final_states: Vec<f64>,
    pub output_state: f64,
    pub correct: bool,
    /// Time after the operation at which the output flipped; `None` if it
    /// never did within the horizon or was not observed.
    pub flip_time: Option<f64>,
    #[serde(skip)]
    pub devices: Vec<DeviceState>,
}

fn trial_key(input: GateInput, trial: u64) -> u64 {
    ((input.bits() as u64) << 40) | trial
}

/// Runs one operation with freshly sampled parameters.
pub fn run_gate(
    spec: &GateSpec,
    input: GateInput,
    dists: &ParamDistributions,
    policy: &SamplingPolicy,
    trial: u64,
    opts: &GateOptions,
) -> Result<GateTrialResult> {
    let net = spec.netlist()?;
    let key = trial_key(input, trial);
    let params =
        (0..spec.family.device_count()).map(|d| sample(dists, policy, key, d as u64)).collect::<Result<Vec<_>>>()?;
    run_gate_with(spec, &net, input, params, trial, opts)
}

/// Runs one operation with the given per-device parameters.
pub fn run_gate_with(
    spec: &GateSpec,
    net: &Netlist,
    input: GateInput,
    params: Vec<DeviceParams>,
    trial: u64,
    opts: &GateOptions,
) -> Result<GateTrialResult> {
    let init = spec.initial_states(input, &params, &net.polarities());
    let run = run_transient(net, &init, &params, spec.t_op, &opts.transient)?;
    let final_states: Vec<f64> = run.final_states.iter().zip(&params).map(|(s, p)| s.normalized(p)).collect();
    let out = spec.family.output_device();
    let output_state = final_states[out];
    Ok(GateTrialResult {
        input,
        trial,
        correct: logic_value(output_state) == spec.expected(input),
        output_state,
        final_states,
        params,
        flip_time: None,
        devices: run.final_states,
    })
}

/// Relaxes a device at 0 V and returns the first time its logic value
/// changes, or `None` if it holds until `horizon`.
pub fn relax_until_flip(
    state: &DeviceState,
    p: &DeviceParams,
    horizon: f64,
    points_per_decade: usize,
    cfg: &IntegratorConfig,
) -> Result<Option<f64>> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
    }
    let start = logic_value(state.normalized(p));
    let t_min = 1e-9_f64.min(horizon);
    let decades = (horizon / t_min).log10();
    let n = ((decades * points_per_decade.max(1) as f64).ceil() as usize).max(1);
    let mut grid = vec![0.0];
    grid.extend((0..=n).map(|k| t_min * 10f64.powf(decades * k as f64 / n as f64)));
    *grid.last_mut().expect("grid is non-empty") = horizon;

    let mut lo_t = 0.0;
    let mut lo_s = *state;
    for &t in &grid[1..] {
        let (next, _) = device::step(&lo_s, 0.0, t - lo_t, p, cfg)?;
        if logic_value(next.normalized(p)) != start {
            let mut hi_t = t;
            for _ in 0..60 {
                let mid = 0.5 * (lo_t + hi_t);
                if mid <= lo_t || mid >= hi_t {
                    break;
                }
                let (m, _) = device::step(&lo_s, 0.0, mid - lo_t, p, cfg)?;
                if logic_value(m.normalized(p)) != start {
                    hi_t = mid;
                } else {
                    lo_t = mid;
                    lo_s = m;
                }
            }
            return Ok(Some(hi_t));
        }
        lo_t = t;
        lo_s = next;
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseProbability {
    pub input: GateInput,
    pub correct: usize,
    pub trials: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessReport {
    pub family: GateFamily,
    pub cases: Vec<CaseProbability>,
    pub overall: f64,
    #[serde(skip)]
    pub trials: Vec<GateTrialResult>,
}

/// Unweighted mean over the four input cases.
pub fn overall_probability(p: [f64; 4]) -> f64 {
    0.25 * p[0] + 0.25 * p[1] + 0.25 * p[2] + 0.25 * p[3]
}

/// Monte Carlo over all four inputs; results are ordered by (input, trial).
pub fn correctness_study(
    spec: &GateSpec,
    dists: &ParamDistributions,
    policy: &SamplingPolicy,
    n_trials: usize,
    opts: &GateOptions,
) -> Result<CorrectnessReport> {
    if n_trials == 0 {
        return Err(Error::Config("n_trials must be at least 1".into()));
    }
    spec.validate(&dists.nominal())?;
    dists.validate()?;
    let net = spec.netlist()?;
    let trials = GateInput::ALL
        .iter()
        .flat_map(|&i| (0..n_trials as u64).map(move |t| (i, t)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(input, trial)| {
            let key = trial_key(input, trial);
            let params = (0..spec.family.device_count())
                .map(|d| sample(dists, policy, key, d as u64))
                .collect::<Result<Vec<_>>>()?;
            run_gate_with(spec, &net, input, params, trial, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let cases: Vec<CaseProbability> = GateInput::ALL
        .iter()
        .map(|&input| {
            let correct = trials.iter().filter(|r| r.input == input && r.correct).count();
            CaseProbability { input, correct, trials: n_trials, probability: correct as f64 / n_trials as f64 }
        })
        .collect();
    let p = [cases[0].probability, cases[1].probability, cases[2].probability, cases[3].probability];
    Ok(CorrectnessReport { family: spec.family, overall: overall_probability(p), cases, trials })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableTimeStats {
    pub horizon: f64,
    /// Initially correct outputs. With none, every time reads as the horizon.
    pub considered: usize,
    pub flipped: usize,
    /// Time up to which at least 90 % of the considered outputs still hold.
    pub t_90: f64,
    pub t_99: f64,
    /// Mean and median over flipped outputs only.
    pub t_avg: Option<f64>,
    pub t_med: Option<f64>,
    /// Sorted flip times.
    pub flip_times: Vec<f64>,
    pub histogram: Option<Histogram>,
}

impl StableTimeStats {
    pub fn from_flips(mut flips: Vec<f64>, considered: usize, horizon: f64) -> Result<Self> {
        if flips.len() > considered {
            return Err(Error::Config("more flips than considered outputs".into()));
        }
        flips.sort_by(f64::total_cmp);
        let quantile = |pct: usize| {
            let m = considered * (100 - pct) / 100;
            flips.get(m).copied().unwrap_or(horizon)
        };
        let (t_90, t_99) = (quantile(90), quantile(99));
        let t_avg = (!flips.is_empty()).then(|| flips.iter().sum::<f64>() / flips.len() as f64);
        let t_med = (!flips.is_empty()).then(|| {
            let k = flips.len();
            if k % 2 == 1 {
                flips[k / 2]
            } else {
                0.5 * (flips[k / 2 - 1] + flips[k / 2])
            }
        });
        let histogram = if flips.is_empty() { None } else { Some(histogram(&flips, Binning::Count(20))?) };
        Ok(Self { horizon, considered, flipped: flips.len(), t_90, t_99, t_avg, t_med, flip_times: flips, histogram })
    }

    /// Fraction of considered outputs still correct at time `t`.
    pub fn survival(&self, t: f64) -> f64 {
        if self.considered == 0 {
            return 1.0;
        }
        let gone = self.flip_times.partition_point(|&f| f <= t);
        1.0 - gone as f64 / self.considered as f64
    }

    /// Cumulative flip fraction at each sorted flip time.
    pub fn cdf(&self) -> Vec<(f64, f64)> {
        self.flip_times.iter().enumerate().map(|(k, &t)| (t, (k + 1) as f64 / self.considered as f64)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableTimeReport {
    pub family: GateFamily,
    pub input: GateInput,
    pub trials: usize,
    pub stats: StableTimeStats,
    #[serde(skip)]
    pub results: Vec<GateTrialResult>,
}

/// Operation followed by a 0 V relaxation of the output until `horizon`.
pub fn stable_time_study(
    spec: &GateSpec,
    input: GateInput,
    dists: &ParamDistributions,
    policy: &SamplingPolicy,
    n_trials: usize,
    horizon: f64,
    opts: &GateOptions,
) -> Result<StableTimeReport> {
    if n_trials == 0 {
        return Err(Error::Config("n_trials must be at least 1".into()));
    }
    spec.validate(&dists.nominal())?;
    dists.validate()?;
    let net = spec.netlist()?;
    let out = spec.family.output_device();
    let results = (0..n_trials as u64)
        .into_par_iter()
        .map(|trial| {
            let key = trial_key(input, trial);
            let params = (0..spec.family.device_count())
                .map(|d| sample(dists, policy, key, d as u64))
                .collect::<Result<Vec<_>>>()?;
            let mut r = run_gate_with(spec, &net, input, params, trial, opts)?;
            if r.correct {
                r.flip_time =
                    relax_until_flip(&r.devices[out], &r.params[out], horizon, opts.points_per_decade, &opts.relax)?;
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let considered = results.iter().filter(|r| r.correct).count();
    let flips = results.iter().filter_map(|r| r.flip_time).collect();
    let stats = StableTimeStats::from_flips(flips, considered, horizon)?;
    Ok(StableTimeReport { family: spec.family, input, trials: n_trials, stats, results })
}

/// Per-trial CSV rows: `trial,input,verdict,final_state,flip_time`.
pub fn trials_csv(trials: &[GateTrialResult]) -> String {
    let mut s = String::from("trial,input,verdict,final_state,flip_time\n");
    for r in trials {
        let verdict = if r.correct { "correct" } else { "incorrect" };
        let flip = r.flip_time.map(|t| t.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{},{}\n", r.trial, r.input, verdict, r.output_state, flip));
    }
    s
}

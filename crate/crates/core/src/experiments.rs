//! Replays of the single-device characterization experiments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    self, extract_thresholds, fit_exponential, gaussian_fit, histogram, Binning, ExpFit, GaussianFit, Histogram,
    SlopeMethod, Thresholds,
};
use crate::device::{resistance, DeviceParams, DeviceState, Polarity};
use crate::error::{Error, Result};
use crate::network::{run_transient, Element, Netlist, SourceValue, TransientOptions, TransientTrace};
use crate::params::{sample, ParamDistributions, SamplingPolicy};
use crate::stimulus::{
    dynamics_protocol, forming_sweep, leakage_series_protocol, ron_roff_protocol, ProtocolTiming, Waveform,
    MEASURE_LABEL, RESET_LABEL, SET_LABEL,
};

/// One device driven by `wf` between `drive` and ground.
pub fn single_device(wf: Waveform, polarity: Polarity) -> Result<Netlist> {
    Netlist::new(
        vec!["gnd".into(), "drive".into()],
        "gnd",
        vec![
            Element::Vsource { value: SourceValue::Waveform(wf), pos: "drive".into(), neg: "gnd".into() },
            Element::Memristor { device: 0, pos: "drive".into(), neg: "gnd".into(), polarity },
        ],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    pub dists: ParamDistributions,
    pub policy: SamplingPolicy,
    pub timing: ProtocolTiming,
    pub transient: TransientOptions,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            dists: ParamDistributions::default(),
            policy: SamplingPolicy::new(0),
            timing: ProtocolTiming::default(),
            transient: TransientOptions::default(),
        }
    }
}

impl ReplayConfig {
    fn params(&self, run: u64) -> Result<DeviceParams> {
        sample(&self.dists, &self.policy, run, 0)
    }

    fn simulate(&self, wf: &Waveform, state: DeviceState, p: DeviceParams) -> Result<(TransientTrace, DeviceState)> {
        let net = single_device(wf.clone(), state.polarity)?;
        let mut opts = self.transient;
        opts.record = true;
        if opts.sample_dt.is_none() {
            opts.sample_dt = Some(wf.sample_dt().min(2e-6));
        }
        let r = run_transient(&net, &[state], &[p], wf.total_duration(), &opts)?;
        Ok((r.trace, r.final_states[0]))
    }
}

/// Mean device resistance over the second half of segment `seg`.
pub fn read_resistance(trace: &TransientTrace, wf: &Waveform, seg: usize) -> Result<f64> {
    let (a, b) = wf.span(seg);
    let from = a + 0.5 * (b - a);
    let rs: Vec<f64> = trace.samples.iter().filter(|s| s.t >= from && s.t < b).map(|s| s.devices[0].r).collect();
    if rs.is_empty() {
        return Err(Error::EmptyInput("samples inside the read window"));
    }
    Ok(rs.iter().sum::<f64>() / rs.len() as f64)
}

/// Device state recorded at time `t` (a segment boundary).
fn state_at(trace: &TransientTrace, t: f64) -> Result<(f64, f64, f64)> {
    let s = trace
        .samples
        .iter()
        .find(|s| (s.t - t).abs() <= 1e-12 * t.max(1e-9))
        .ok_or(Error::EmptyInput("sample at segment boundary"))?;
    Ok((s.t, s.devices[0].w, s.devices[0].theta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RonRoffReplay {
    pub ron: Vec<f64>,
    pub roff: Vec<f64>,
    /// Sampled parameters per cycle, for read-back comparisons.
    pub programmed_ron: Vec<f64>,
    pub programmed_roff: Vec<f64>,
    pub ron_fit: GaussianFit,
    pub roff_fit: GaussianFit,
    pub ron_histogram: Histogram,
    pub roff_histogram: Histogram,
}

/// Cycles SET/read/RESET/read `n_cycles` times with per-cycle parameters.
/// The device state carries over between cycles.
pub fn replay_ron_roff(cfg: &ReplayConfig, n_cycles: usize) -> Result<RonRoffReplay> {
    if n_cycles < 2 {
        return Err(Error::Config("ron/roff replay needs at least 2 cycles".into()));
    }
    let wf = ron_roff_protocol(cfg.timing)?;
    let reads = wf.labeled(MEASURE_LABEL);
    let mut state = DeviceState::hrs(&cfg.dists.nominal(), Polarity::Forward);
    let (mut ron, mut roff, mut pon, mut poff) = (vec![], vec![], vec![], vec![]);
    for cycle in 0..n_cycles as u64 {
        let p = cfg.params(cycle)?;
        let (trace, end) = cfg.simulate(&wf, state, p)?;
        ron.push(read_resistance(&trace, &wf, reads[0])?);
        roff.push(read_resistance(&trace, &wf, reads[1])?);
        pon.push(p.r_on);
        poff.push(p.r_off);
        state = end;
    }
    Ok(RonRoffReplay {
        ron_fit: gaussian_fit(&ron)?,
        roff_fit: gaussian_fit(&roff)?,
        ron_histogram: histogram(&ron, Binning::Count(20))?,
        roff_histogram: histogram(&roff, Binning::Count(20))?,
        ron,
        roff,
        programmed_ron: pon,
        programmed_roff: poff,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsReplay {
    /// Resistance read after each of the eight SET pulses, per run.
    pub staircase: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Reading 3 minus reading 1, per run.
    pub set_change: Vec<f64>,
    /// `(t, R)` during the RESET pulse of the first run, t from pulse start.
    pub reset_trace: Vec<(f64, f64)>,
}

/// Eight-pulse SET staircase from full HRS, one parameter draw per run.
pub fn replay_dynamics(cfg: &ReplayConfig, n_runs: usize) -> Result<DynamicsReplay> {
    if n_runs == 0 {
        return Err(Error::Config("dynamics replay needs at least 1 run".into()));
    }
    let wf = dynamics_protocol(cfg.timing)?;
    let reads = wf.labeled(MEASURE_LABEL);
    let reset = wf.labeled(RESET_LABEL)[0];
    let runs = (0..n_runs as u64)
        .into_par_iter()
        .map(|run| {
            let p = cfg.params(run)?;
            let (trace, _) = cfg.simulate(&wf, DeviceState::hrs(&p, Polarity::Forward), p)?;
            let stairs = reads.iter().map(|&k| read_resistance(&trace, &wf, k)).collect::<Result<Vec<_>>>()?;
            let (a, b) = wf.span(reset);
            let rt = trace
                .samples
                .iter()
                .filter(|s| s.t >= a && s.t <= b)
                .map(|s| (s.t - a, s.devices[0].r))
                .collect::<Vec<_>>();
            Ok((stairs, rt))
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = (0..reads.len()).map(|k| runs.iter().map(|r| r.0[k]).sum::<f64>() / runs.len() as f64).collect();
    let set_change = runs.iter().map(|r| r.0[2] - r.0[0]).collect();
    let reset_trace = runs[0].1.clone();
    Ok(DynamicsReplay { staircase: runs.into_iter().map(|r| r.0).collect(), mean, set_change, reset_trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LeakageMode {
    Single,
    Series { n_set: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeBlock {
    /// Label of the programming pulse that precedes the block.
    pub after: String,
    /// End of that programming pulse, s.
    pub t_program_end: f64,
    /// Probe start times, s.
    pub t: Vec<f64>,
    /// Read-back resistance per probe.
    pub r: Vec<f64>,
    /// Closed-form hold-band drift evaluated on the same read windows.
    pub model: Vec<f64>,
    /// Last minus first reading.
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReplay {
    pub params: DeviceParams,
    pub blocks: Vec<ProbeBlock>,
    /// Exponential fit of the first post-SET block (t from SET end).
    pub fit: ExpFit,
    /// Deviation of post-SET readings from the closed form.
    pub deviation_avg: f64,
    pub deviation_max: f64,
}

/// `w(t) = w_T + Θ_T·τ·(1 − e^(−t/τ))`, clamped to the state bounds.
pub fn hold_drift(w_t: f64, theta_t: f64, t: f64, p: &DeviceParams) -> f64 {
    (w_t + theta_t * p.tau_l * (1.0 - (-t / p.tau_l).exp())).clamp(p.w_on, p.w_off)
}

pub fn replay_leakage(
    cfg: &ReplayConfig,
    mode: LeakageMode,
    n_probe: usize,
    interval: f64,
    run: u64,
) -> Result<LeakageReplay> {
    let n_set = match mode {
        LeakageMode::Single => 1,
        LeakageMode::Series { n_set } => n_set,
    };
    let wf = leakage_series_protocol(n_set, n_probe, interval, cfg.timing)?;
    let p = cfg.params(run)?;
    let (trace, _) = cfg.simulate(&wf, DeviceState::hrs(&p, Polarity::Forward), p)?;
    let probes = wf.labeled(MEASURE_LABEL);
    let programs: Vec<usize> = wf
        .segments()
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(s.label.as_deref(), Some(SET_LABEL) | Some(RESET_LABEL)))
        .map(|(i, _)| i)
        .collect();

    let mut blocks = Vec::new();
    for (b, &prog) in programs.iter().enumerate() {
        let (_, t_end) = wf.span(prog);
        let (_, w_t, theta_t) = state_at(&trace, t_end)?;
        let mine = &probes[b * n_probe..(b + 1) * n_probe];
        let mut t = Vec::with_capacity(n_probe);
        let mut r = Vec::with_capacity(n_probe);
        let mut model = Vec::with_capacity(n_probe);
        for &k in mine {
            let (a, e) = wf.span(k);
            let from = a + 0.5 * (e - a);
            let window: Vec<_> = trace.samples.iter().filter(|s| s.t >= from && s.t < e).collect();
            if window.is_empty() {
                return Err(Error::EmptyInput("samples inside the read window"));
            }
            let n = window.len() as f64;
            r.push(window.iter().map(|s| s.devices[0].r).sum::<f64>() / n);
            let m = window
                .iter()
                .map(|s| resistance(hold_drift(w_t, theta_t, s.t - t_end, &p), &p))
                .sum::<Result<f64>>()?;
            model.push(m / n);
            t.push(a);
        }
        let drift = r[r.len() - 1] - r[0];
        let after = wf.segments()[prog].label.clone().unwrap_or_default();
        blocks.push(ProbeBlock { after, t_program_end: t_end, t, r, model, drift });
    }

    let set_blocks: Vec<&ProbeBlock> = blocks.iter().filter(|b| b.after == SET_LABEL).collect();
    let first = set_blocks[0];
    let rel: Vec<f64> = first.t.iter().map(|t| t - first.t_program_end).collect();
    let fit = fit_exponential(&rel, &first.r)?;
    let sim: Vec<f64> = set_blocks.iter().flat_map(|b| b.r.iter().copied()).collect();
    let model: Vec<f64> = set_blocks.iter().flat_map(|b| b.model.iter().copied()).collect();
    Ok(LeakageReplay {
        params: p,
        deviation_avg: analysis::average_deviation(&sim, &model)?,
        deviation_max: analysis::max_deviation(&sim, &model)?,
        blocks,
        fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReplay {
    pub thresholds: Thresholds,
    pub sample_dt: f64,
    /// `(v, i)` of the sweep at `sample_dt`.
    pub trace: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub start_amplitude: f64,
    pub end_amplitude: f64,
    pub cycles: usize,
    pub delta_i: f64,
    pub slope: SlopeMethod,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            start_amplitude: 0.2,
            end_amplitude: 1.2,
            cycles: 10,
            delta_i: analysis::DEFAULT_DELTA_I,
            slope: SlopeMethod::Smoothed,
        }
    }
}

/// Sine sweep over a formed device, followed by slope-based threshold detection.
pub fn replay_thresholds(cfg: &ReplayConfig, sweep: &SweepConfig, run: u64) -> Result<ThresholdReplay> {
    let wf = forming_sweep(sweep.start_amplitude, sweep.end_amplitude, sweep.cycles)?;
    let p = cfg.params(run)?;
    let net = single_device(wf.clone(), Polarity::Forward)?;
    let sample_dt = wf.sample_dt();
    let mut opts = cfg.transient;
    opts.record = true;
    opts.sample_dt = Some(sample_dt);
    let res = run_transient(&net, &[DeviceState::hrs(&p, Polarity::Forward)], &[p], wf.total_duration(), &opts)?;
    // Resample onto the uniform grid the detector expects.
    let mut trace = Vec::new();
    let mut next = 0.0;
    for s in &res.trace.samples {
        if s.t + 1e-12 >= next {
            trace.push((s.devices[0].v, s.devices[0].i));
            next += sample_dt;
        }
    }
    let v: Vec<f64> = trace.iter().map(|x| x.0).collect();
    let i: Vec<f64> = trace.iter().map(|x| x.1).collect();
    let thresholds = extract_thresholds(&v, &i, sample_dt, sweep.delta_i, sweep.slope)?;
    Ok(ThresholdReplay { thresholds, sample_dt, trace })
}

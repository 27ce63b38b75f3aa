//! Piecewise voltage waveforms and the characterization protocols.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Pulse,
    Ramp,
    Sine,
    Hold,
}

/// One piece of a waveform.
///
/// * `pulse`: constant `amplitude`.
/// * `ramp`: linear from `amplitude` to `end_amplitude`.
/// * `sine`: `A(t)·sin(2πft)` with `A` growing linearly from `amplitude` to
///   `end_amplitude` (constant when `end_amplitude` is absent).
/// * `hold`: 0 V.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    #[serde(default)]
    pub amplitude: f64,
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Segment {
    pub fn pulse(amplitude: f64, duration: f64) -> Self {
        Self { kind: SegmentKind::Pulse, amplitude, duration, frequency: None, end_amplitude: None, label: None }
    }

    pub fn hold(duration: f64) -> Self {
        Self { kind: SegmentKind::Hold, ..Self::pulse(0.0, duration) }
    }

    pub fn ramp(from: f64, to: f64, duration: f64) -> Self {
        Self { kind: SegmentKind::Ramp, end_amplitude: Some(to), ..Self::pulse(from, duration) }
    }

    pub fn sine(amplitude: f64, frequency: f64, duration: f64) -> Self {
        Self { kind: SegmentKind::Sine, frequency: Some(frequency), ..Self::pulse(amplitude, duration) }
    }

    /// Sine whose envelope grows linearly from `start` to `end`.
    pub fn growing_sine(start: f64, end: f64, frequency: f64, duration: f64) -> Self {
        Self { end_amplitude: Some(end), ..Self::sine(start, frequency, duration) }
    }

    pub fn labeled(mut self, label: &str) -> Self {
        self.label = Some(label.to_owned());
        self
    }

    /// Voltage at `local` seconds into the segment.
    pub fn voltage(&self, local: f64) -> f64 {
        match self.kind {
            SegmentKind::Hold => 0.0,
            SegmentKind::Pulse => self.amplitude,
            SegmentKind::Ramp => {
                let to = self.end_amplitude.unwrap_or(self.amplitude);
                self.amplitude + (to - self.amplitude) * (local / self.duration)
            }
            SegmentKind::Sine => {
                let f = self.frequency.unwrap_or(0.0);
                let envelope = match self.end_amplitude {
                    Some(end) => self.amplitude + (end - self.amplitude) * (local / self.duration),
                    None => self.amplitude,
                };
                envelope * (2.0 * std::f64::consts::PI * f * local).sin()
            }
        }
    }

    /// Whether the segment is identically 0 V.
    pub fn is_quiet(&self) -> bool {
        match self.kind {
            SegmentKind::Hold => true,
            SegmentKind::Pulse => self.amplitude == 0.0,
            SegmentKind::Ramp => self.amplitude == 0.0 && self.end_amplitude.unwrap_or(0.0) == 0.0,
            SegmentKind::Sine => self.amplitude == 0.0 && self.end_amplitude.unwrap_or(0.0) == 0.0,
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("segment {index}: {msg}")));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if !self.amplitude.is_finite() {
            return bad("amplitude must be finite".into());
        }
        match self.kind {
            SegmentKind::Sine => match self.frequency {
                Some(f) if f > 0.0 && f.is_finite() => {}
                _ => return bad("sine needs a positive frequency".into()),
            },
            SegmentKind::Ramp if self.end_amplitude.is_none() => return bad("ramp needs end_amplitude".into()),
            _ => {}
        }
        if let Some(e) = self.end_amplitude {
            if !e.is_finite() {
                return bad("end_amplitude must be finite".into());
            }
        }
        Ok(())
    }
}

/// Ordered list of segments plus a sampling period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWaveform", into = "RawWaveform")]
pub struct Waveform {
    segments: Vec<Segment>,
    sample_dt: f64,
    starts: Vec<f64>,
    total: f64,
}

#[derive(Serialize, Deserialize)]
struct RawWaveform {
    segments: Vec<Segment>,
    /// Defaults to a quarter of the shortest segment.
    #[serde(default)]
    sample_dt: Option<f64>,
}

impl TryFrom<RawWaveform> for Waveform {
    type Error = Error;
    fn try_from(raw: RawWaveform) -> Result<Self> {
        match raw.sample_dt {
            Some(dt) => Waveform::new(raw.segments, dt),
            None => Waveform::with_default_sampling(raw.segments),
        }
    }
}

impl From<Waveform> for RawWaveform {
    fn from(w: Waveform) -> Self {
        RawWaveform { segments: w.segments, sample_dt: Some(w.sample_dt) }
    }
}

impl Waveform {
    pub fn new(segments: Vec<Segment>, sample_dt: f64) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::EmptyInput("waveform segments"));
        }
        for (i, s) in segments.iter().enumerate() {
            s.validate(i)?;
        }
        let shortest = segments.iter().map(|s| s.duration).fold(f64::INFINITY, f64::min);
        // A few ulps of slack so text round trips of the bound still validate.
        if !(sample_dt > 0.0 && sample_dt <= shortest / 4.0 * (1.0 + 1e-12)) {
            return Err(Error::Config(format!("sample_dt must lie in (0, {}], got {sample_dt}", shortest / 4.0)));
        }
        let mut starts = Vec::with_capacity(segments.len());
        let mut total = 0.0;
        for s in &segments {
            starts.push(total);
            total += s.duration;
        }
        Ok(Self { segments, sample_dt, starts, total })
    }

    /// Waveform with `sample_dt` set to a quarter of its shortest segment.
    pub fn with_default_sampling(segments: Vec<Segment>) -> Result<Self> {
        let shortest = segments.iter().map(|s| s.duration).fold(f64::INFINITY, f64::min);
        Self::new(segments, shortest / 4.0)
    }

    /// Single constant level for `duration`.
    pub fn constant(level: f64, duration: f64) -> Result<Self> {
        Self::with_default_sampling(vec![Segment::pulse(level, duration)])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn sample_dt(&self) -> f64 {
        self.sample_dt
    }

    /// Sum of all segment durations.
    pub fn total_duration(&self) -> f64 {
        self.total
    }

    /// Start time of every segment.
    pub fn starts(&self) -> &[f64] {
        &self.starts
    }

    /// `(start, end)` of segment `i`.
    pub fn span(&self, i: usize) -> (f64, f64) {
        let start = self.starts[i];
        let end = self.starts.get(i + 1).copied().unwrap_or(self.total);
        (start, end)
    }

    pub fn shortest_segment(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).fold(f64::INFINITY, f64::min)
    }

    /// Index of the segment active at `t` (segments are half-open on the right,
    /// except that `t = total` maps to the last one).
    pub fn segment_index(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0 && t <= self.total) {
            return Err(Error::TimeOutOfRange { t, total: self.total });
        }
        let idx = self.starts.partition_point(|&s| s <= t);
        Ok(idx.saturating_sub(1))
    }

    pub fn voltage_at(&self, t: f64) -> Result<f64> {
        let i = self.segment_index(t)?;
        Ok(self.segments[i].voltage(t - self.starts[i]))
    }

    /// Indices of segments carrying `label`.
    pub fn labeled(&self, label: &str) -> Vec<usize> {
        self.segments.iter().enumerate().filter(|(_, s)| s.label.as_deref() == Some(label)).map(|(i, _)| i).collect()
    }
}

/// Timing knobs shared by the protocol builders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolTiming {
    /// 0 V dwell inserted after every programming or measurement pulse.
    pub gap: f64,
    /// Rise/fall time of linear edges around each pulse; 0 gives ideal edges.
    pub edge: f64,
}

impl Default for ProtocolTiming {
    fn default() -> Self {
        Self { gap: 100e-6, edge: 0.0 }
    }
}

pub const SET_LABEL: &str = "set";
pub const RESET_LABEL: &str = "reset";
pub const MEASURE_LABEL: &str = "measure";

const MEASURE_V: f64 = 0.05;
const MEASURE_T: f64 = 200e-6;

struct Builder {
    timing: ProtocolTiming,
    segments: Vec<Segment>,
}

impl Builder {
    fn new(timing: ProtocolTiming) -> Self {
        Self { timing, segments: Vec::new() }
    }

    fn pulse(&mut self, amplitude: f64, duration: f64, label: &str) -> &mut Self {
        let edge = self.timing.edge;
        if edge > 0.0 {
            self.segments.push(Segment::ramp(0.0, amplitude, edge));
        }
        self.segments.push(Segment::pulse(amplitude, duration).labeled(label));
        if edge > 0.0 {
            self.segments.push(Segment::ramp(amplitude, 0.0, edge));
        }
        self
    }

    fn gap(&mut self) -> &mut Self {
        if self.timing.gap > 0.0 {
            self.segments.push(Segment::hold(self.timing.gap));
        }
        self
    }

    fn hold(&mut self, duration: f64) -> &mut Self {
        if duration > 0.0 {
            self.segments.push(Segment::hold(duration));
        }
        self
    }

    fn probes(&mut self, n: usize, interval: f64) -> &mut Self {
        for _ in 0..n {
            self.pulse(MEASURE_V, MEASURE_T, MEASURE_LABEL);
            self.hold(interval - MEASURE_T - 2.0 * self.timing.edge);
        }
        self
    }

    fn finish(self) -> Result<Waveform> {
        Waveform::with_default_sampling(self.segments)
    }
}

/// SET 500 mV × 1 ms, read 50 mV × 200 µs, RESET −1 V × 1 ms, read again.
pub fn ron_roff_protocol(timing: ProtocolTiming) -> Result<Waveform> {
    let mut b = Builder::new(timing);
    b.pulse(0.5, 1e-3, SET_LABEL).gap();
    b.pulse(MEASURE_V, MEASURE_T, MEASURE_LABEL).gap();
    b.pulse(-1.0, 1e-3, RESET_LABEL).gap();
    b.pulse(MEASURE_V, MEASURE_T, MEASURE_LABEL).gap();
    b.finish()
}

/// Eight (SET 500 mV × 100 µs, read 50 mV × 200 µs) pairs, then RESET −1 V × 2 ms.
pub fn dynamics_protocol(timing: ProtocolTiming) -> Result<Waveform> {
    let mut b = Builder::new(timing);
    for _ in 0..8 {
        b.pulse(0.5, 100e-6, SET_LABEL).gap();
        b.pulse(MEASURE_V, MEASURE_T, MEASURE_LABEL).gap();
    }
    b.pulse(-1.0, 2e-3, RESET_LABEL);
    b.finish()
}

/// RESET, `n_probe` reads spaced by `interval`, SET, `n_probe` reads.
pub fn leakage_protocol(n_probe: usize, interval: f64, timing: ProtocolTiming) -> Result<Waveform> {
    leakage_series_protocol(1, n_probe, interval, timing)
}

/// RESET, `n_probe` reads, then `n_set` rounds of (SET, `n_probe` reads).
pub fn leakage_series_protocol(
    n_set: usize,
    n_probe: usize,
    interval: f64,
    timing: ProtocolTiming,
) -> Result<Waveform> {
    if n_probe == 0 || n_set == 0 {
        return Err(Error::Config("need at least one SET and one probe".into()));
    }
    if !(interval > MEASURE_T + 2.0 * timing.edge) {
        return Err(Error::Config(format!("probe interval {interval} s shorter than the probe pulse")));
    }
    let mut b = Builder::new(timing);
    b.pulse(-1.0, 1e-3, RESET_LABEL).gap();
    b.probes(n_probe, interval);
    for _ in 0..n_set {
        b.pulse(0.5, 1e-3, SET_LABEL).gap();
        b.probes(n_probe, interval);
    }
    b.finish()
}

/// 100 Hz sine sweep with a linearly growing envelope.
pub fn forming_sweep(start_amplitude: f64, end_amplitude: f64, cycles: usize) -> Result<Waveform> {
    const F: f64 = 100.0;
    let duration = cycles as f64 / F;
    let seg = Segment::growing_sine(start_amplitude, end_amplitude, F, duration);
    // Fine sampling so that slope-based threshold detection sees each cycle.
    Waveform::new(vec![seg], 1.0 / (F * 2000.0))
}

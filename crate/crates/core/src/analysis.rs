//! Trace analysis: deviation metric, histograms with a gaussian fit,
//! slope-based threshold detection and single-exponential fitting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean relative deviation `(1/N)·Σ|x̃ᵢ − xᵢ|/|xᵢ|` of `model` against `measured`.
pub fn average_deviation(model: &[f64], measured: &[f64]) -> Result<f64> {
    let d = pointwise_deviation(model, measured)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Largest pointwise relative deviation.
pub fn max_deviation(model: &[f64], measured: &[f64]) -> Result<f64> {
    let d = pointwise_deviation(model, measured)?;
    Ok(d.into_iter().fold(0.0, f64::max))
}

pub fn pointwise_deviation(model: &[f64], measured: &[f64]) -> Result<Vec<f64>> {
    if model.is_empty() || measured.is_empty() {
        return Err(Error::EmptyInput("deviation series"));
    }
    if model.len() != measured.len() {
        return Err(Error::Config(format!("series lengths differ: {} vs {}", model.len(), measured.len())));
    }
    model
        .iter()
        .zip(measured)
        .enumerate()
        .map(|(i, (m, x))| {
            if *x == 0.0 {
                Err(Error::UndefinedMetric(format!("measured value {i} is zero")))
            } else {
                Ok(((m - x) / x).abs())
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mean: f64,
    pub sigma: f64,
}

/// Maximum-likelihood normal fit (population σ).
pub fn gaussian_fit(samples: &[f64]) -> Result<GaussianFit> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("samples"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(GaussianFit { mean, sigma: var.sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    Count(usize),
    Width(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<Bin>,
    pub fit: GaussianFit,
}

impl Histogram {
    /// `bin_low,bin_high,count` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_low,bin_high,count\n");
        for b in &self.bins {
            s.push_str(&format!("{},{},{}\n", b.low, b.high, b.count));
        }
        s
    }
}

pub fn histogram(samples: &[f64], binning: Binning) -> Result<Histogram> {
    let fit = gaussian_fit(samples)?;
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "histogram sample", value: f64::NAN });
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        let bins = vec![Bin { low: lo, high: hi, count: samples.len() }];
        return Ok(Histogram { bins, fit });
    }
    let n_bins = match binning {
        Binning::Count(n) if n > 0 => n,
        Binning::Width(w) if w > 0.0 && w.is_finite() => ((hi - lo) / w).ceil().max(1.0) as usize,
        other => return Err(Error::Config(format!("invalid binning {other:?}"))),
    };
    let width = (hi - lo) / n_bins as f64;
    let mut bins: Vec<Bin> = (0..n_bins)
        .map(|k| Bin {
            low: lo + k as f64 * width,
            high: if k + 1 == n_bins { hi } else { lo + (k + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for x in samples {
        let k = (((x - lo) / width) as usize).min(n_bins - 1);
        bins[k].count += 1;
    }
    Ok(Histogram { bins, fit })
}

/// How the current slope is estimated from a uniformly sampled trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeMethod {
    /// 5-sample centered moving average, then central difference.
    #[default]
    Smoothed,
    /// Backward difference of consecutive samples.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub v_th_plus: Option<f64>,
    pub v_th_minus: Option<f64>,
}

pub const DEFAULT_DELTA_I: f64 = 2.0;

/// Voltage at the first sample of each polarity whose |di/dt| exceeds
/// `delta_i` (A/s). `None` means no threshold was detected.
pub fn extract_thresholds(v: &[f64], i: &[f64], dt: f64, delta_i: f64, method: SlopeMethod) -> Result<Thresholds> {
    if v.len() != i.len() {
        return Err(Error::Config("voltage and current traces differ in length".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidTimeStep(dt));
    }
    let n = v.len();
    let mut out = Thresholds { v_th_plus: None, v_th_minus: None };
    if n < 3 {
        return Ok(out);
    }
    let slope: Vec<Option<f64>> = match method {
        SlopeMethod::Raw => (0..n).map(|k| (k > 0).then(|| (i[k] - i[k - 1]) / dt)).collect(),
        SlopeMethod::Smoothed => {
            let smooth: Vec<Option<f64>> =
                (0..n).map(|k| (k >= 2 && k + 2 < n).then(|| i[k - 2..=k + 2].iter().sum::<f64>() / 5.0)).collect();
            (0..n)
                .map(|k| match (k.checked_sub(1).and_then(|a| smooth[a]), smooth.get(k + 1).copied().flatten()) {
                    (Some(a), Some(b)) => Some((b - a) / (2.0 * dt)),
                    _ => None,
                })
                .collect()
        }
    };
    for k in 0..n {
        let Some(s) = slope[k] else { continue };
        if !(s.abs() > delta_i) {
            continue;
        }
        if v[k] > 0.0 && out.v_th_plus.is_none() {
            out.v_th_plus = Some(v[k]);
        } else if v[k] < 0.0 && out.v_th_minus.is_none() {
            out.v_th_minus = Some(v[k]);
        }
    }
    Ok(out)
}

/// Least-squares fit of `y = c − a·exp(−t/τ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub c: f64,
    pub a: f64,
    pub tau: f64,
    pub rmse: f64,
}

impl ExpFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.c - self.a * (-t / self.tau).exp()
    }
}

/// Linear least squares in (c, a) for fixed τ; returns (c, a, sse).
fn linear_part(t: &[f64], y: &[f64], tau: f64) -> (f64, f64, f64) {
    let n = t.len() as f64;
    let e: Vec<f64> = t.iter().map(|x| -(-x / tau).exp()).collect();
    let (se, see) = e.iter().fold((0.0, 0.0), |(s, ss), v| (s + v, ss + v * v));
    let sy: f64 = y.iter().sum();
    let sey: f64 = e.iter().zip(y).map(|(a, b)| a * b).sum();
    let det = n * see - se * se;
    let (c, a) =
        if det.abs() > 1e-300 { ((see * sy - se * sey) / det, (n * sey - se * sy) / det) } else { (sy / n, 0.0) };
    let sse = e.iter().zip(y).map(|(ev, yv)| (yv - c - a * ev).powi(2)).sum();
    (c, a, sse)
}

pub fn fit_exponential(t: &[f64], y: &[f64]) -> Result<ExpFit> {
    if t.len() != y.len() {
        return Err(Error::Config("time and value series differ in length".into()));
    }
    if t.len() < 4 {
        return Err(Error::EmptyInput("exponential fit needs at least 4 points"));
    }
    let t0 = t.iter().copied().fold(f64::INFINITY, f64::min);
    let t1 = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = t1 - t0;
    if !(span > 0.0) {
        return Err(Error::Config("time series has zero span".into()));
    }
    let step = t.windows(2).map(|w| (w[1] - w[0]).abs()).filter(|d| *d > 0.0).fold(span, f64::min);
    let ts: Vec<f64> = t.iter().map(|x| x - t0).collect();
    let sse = |lt: f64| linear_part(&ts, y, lt.exp()).2;

    // Coarse scan over log τ, then golden-section refinement around the best cell.
    let (lo, hi) = ((step / 10.0).ln(), (span * 100.0).ln());
    let n = 200;
    let grid: Vec<f64> = (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
    let best = (0..=n).map(|k| (k, sse(grid[k]))).fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b }).0;
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(n)]);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (sse(x1), sse(x2));
    for _ in 0..200 {
        if (b - a).abs() < 1e-12 {
            break;
        }
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = sse(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = sse(x2);
        }
    }
    let tau = (0.5 * (a + b)).exp();
    let (c, amp, sse) = linear_part(&ts, y, tau);
    // Shift the amplitude back to the caller's time origin.
    let amp = amp * (t0 / tau).exp();
    Ok(ExpFit { c, a: amp, tau, rmse: (sse / t.len() as f64).sqrt() })
}

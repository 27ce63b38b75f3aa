//! Threshold-switching ReRAM device with a decaying leakage capacity.
//!
//! The internal state `w` is a bounded length between `w_on` (low resistive
//! state) and `w_off` (high resistive state). Above the positive threshold the
//! device SETs and `w` moves toward `w_on`; below the negative threshold it
//! RESETs and `w` moves toward `w_off`. Inside the threshold band the state
//! drifts with the leakage capacity `theta`, which is charged by switching
//! activity and drains exponentially with time constant `tau_l`.
//!
//! Rate constants `k_off`/`k_on` are used as magnitudes. The sign of every
//! term is fixed by the direction it acts in, not by the sign of the
//! fitted constant, so a SET always lowers the resistance and the charge it
//! leaves in `theta` pushes the state back toward HRS afterwards.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Full set of model constants for one device instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Resistance at `w_off` (HRS), Ω.
    pub r_off: f64,
    /// Resistance at `w_on` (LRS), Ω.
    pub r_on: f64,
    /// Positive (SET) threshold voltage, V.
    pub v_off: f64,
    /// Negative (RESET) threshold voltage, V.
    pub v_on: f64,
    /// SET rate, m/s. Only the magnitude is used.
    pub k_off: f64,
    /// RESET rate, m/s. Only the magnitude is used.
    pub k_on: f64,
    pub alpha_off: f64,
    pub alpha_on: f64,
    /// Window boundary of the SET window, m.
    pub a_off: f64,
    /// Window boundary of the RESET window, m.
    pub a_on: f64,
    /// Window shaping length, m.
    pub w_c: f64,
    /// State bound at HRS, m.
    pub w_off: f64,
    /// State bound at LRS, m.
    pub w_on: f64,
    /// Coupling of SET activity into the leakage capacity, 1/s.
    pub theta_off: f64,
    /// Coupling of RESET activity into the leakage capacity, 1/s (≤ 0).
    pub theta_on: f64,
    /// Leakage decay time constant, s.
    pub tau_l: f64,
}

impl DeviceParams {
    /// Mean values of the fitted parameter table.
    pub fn nominal() -> Self {
        Self {
            r_off: 545.54e3,
            r_on: 4.92e3,
            v_off: 0.3702,
            v_on: -0.3738,
            k_off: 780e-6,
            k_on: -4.67e-6,
            alpha_off: 3.0,
            alpha_on: 3.0,
            a_off: 1.3e-9,
            a_on: 1.8e-9,
            w_c: 980e-12,
            w_off: 3e-9,
            w_on: 0.0,
            theta_off: 0.0173,
            theta_on: 0.0,
            tau_l: 10.3,
        }
    }

    /// Same device with both leakage couplings switched off.
    pub fn without_leakage(mut self) -> Self {
        self.theta_off = 0.0;
        self.theta_on = 0.0;
        self
    }

    /// Width of the state interval, `w_off - w_on`.
    pub fn span(&self) -> f64 {
        self.w_off - self.w_on
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("r_off", self.r_off),
            ("r_on", self.r_on),
            ("v_off", self.v_off),
            ("v_on", self.v_on),
            ("k_off", self.k_off),
            ("k_on", self.k_on),
            ("alpha_off", self.alpha_off),
            ("alpha_on", self.alpha_on),
            ("a_off", self.a_off),
            ("a_on", self.a_on),
            ("w_c", self.w_c),
            ("w_off", self.w_off),
            ("w_on", self.w_on),
            ("theta_off", self.theta_off),
            ("theta_on", self.theta_on),
            ("tau_l", self.tau_l),
        ];
        for (what, value) in fields {
            ensure_finite(what, value)?;
        }
        let bad = |msg: &str| Err(Error::InvalidParams(msg.to_owned()));
        if !(self.r_on > 0.0) {
            return bad("r_on must be > 0");
        }
        if !(self.r_off > self.r_on) {
            return bad("r_off must exceed r_on");
        }
        if !(self.v_off > 0.0) {
            return bad("v_off must be > 0");
        }
        if !(self.v_on < 0.0) {
            return bad("v_on must be < 0");
        }
        if !(self.w_on >= 0.0 && self.w_off > self.w_on) {
            return bad("need w_off > w_on >= 0");
        }
        if !(self.w_c > 0.0) {
            return bad("w_c must be > 0");
        }
        if !(self.tau_l > 0.0) {
            return bad("tau_l must be > 0");
        }
        if self.theta_off < 0.0 {
            return bad("theta_off must be >= 0");
        }
        if self.theta_on > 0.0 {
            return bad("theta_on must be <= 0");
        }
        if self.alpha_off <= 0.0 || self.alpha_on <= 0.0 {
            return bad("alpha exponents must be > 0");
        }
        Ok(())
    }
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self::nominal()
    }
}

/// Orientation of the device in its circuit. `Forward` means a positive
/// terminal voltage (n+ minus n-) drives a SET.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    #[default]
    Forward,
    Reverse,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Forward => 1.0,
            Polarity::Reverse => -1.0,
        }
    }
}

/// Dynamic state of one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    /// Internal state, m.
    pub w: f64,
    /// Leakage capacity (state drift rate), m/s.
    pub theta: f64,
    pub polarity: Polarity,
}

impl DeviceState {
    /// Device at `w` with an empty leakage capacity.
    pub fn new(w: f64, polarity: Polarity) -> Self {
        Self { w, theta: 0.0, polarity }
    }

    /// Fully RESET device (`w = w_off`).
    pub fn hrs(p: &DeviceParams, polarity: Polarity) -> Self {
        Self::new(p.w_off, polarity)
    }

    /// Fully SET device (`w = w_on`).
    pub fn lrs(p: &DeviceParams, polarity: Polarity) -> Self {
        Self::new(p.w_on, polarity)
    }

    /// Normalized state: 1 at LRS, 0 at HRS.
    pub fn normalized(&self, p: &DeviceParams) -> f64 {
        (p.w_off - self.w) / p.span()
    }

    /// Effective voltage seen by the switching law.
    pub fn effective_voltage(&self, v: f64) -> f64 {
        self.polarity.sign() * v
    }
}

/// Which branch of the piecewise state law is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Set,
    Hold,
    Reset,
}

/// Branch selection on the effective voltage. Both thresholds belong to the
/// hold band.
pub fn branch(v_eff: f64, p: &DeviceParams) -> Branch {
    if v_eff > p.v_off {
        Branch::Set
    } else if v_eff < p.v_on {
        Branch::Reset
    } else {
        Branch::Hold
    }
}

/// SET window, `exp(-exp((w - a_off) / w_c))`.
pub fn window_off(w: f64, p: &DeviceParams) -> f64 {
    (-((w - p.a_off) / p.w_c).exp()).exp()
}

/// RESET window, `exp(-exp((-w - a_on) / w_c))`.
pub fn window_on(w: f64, p: &DeviceParams) -> f64 {
    (-((-w - p.a_on) / p.w_c).exp()).exp()
}

#[inline]
fn pow(x: f64, a: f64) -> f64 {
    if a == 3.0 {
        x * x * x
    } else {
        x.powf(a)
    }
}

/// Active branch and the (non-negative) magnitude of its switching rate.
/// The magnitude is zero in the hold band.
pub fn switching_rate(v_eff: f64, w: f64, p: &DeviceParams) -> (Branch, f64) {
    match branch(v_eff, p) {
        Branch::Set => {
            let drive = pow(v_eff / p.v_off - 1.0, p.alpha_off);
            (Branch::Set, p.k_off.abs() * drive * window_off(w, p))
        }
        Branch::Reset => {
            let drive = pow(v_eff / p.v_on - 1.0, p.alpha_on);
            (Branch::Reset, p.k_on.abs() * drive * window_on(w, p))
        }
        Branch::Hold => (Branch::Hold, 0.0),
    }
}

/// `(dw/dt, dtheta/dt)` for an already validated effective voltage. A state
/// pinned at a bound does not move, and so feeds nothing into the capacity.
#[inline]
fn derivatives(v_eff: f64, w: f64, theta: f64, p: &DeviceParams) -> (f64, f64) {
    let decay = -theta / p.tau_l;
    let (dw, gain) = match switching_rate(v_eff, w, p) {
        (Branch::Set, m) => (-m, p.theta_off),
        (Branch::Reset, m) => (m, p.theta_on),
        (Branch::Hold, _) => return (moving_rate(theta, w, p), decay),
    };
    let dw = moving_rate(dw, w, p);
    (dw, decay + gain * dw.abs())
}

/// State velocity `dw/dt` in m/s for terminal voltage `v`.
pub fn state_derivative(v: f64, s: &DeviceState, p: &DeviceParams) -> Result<f64> {
    ensure_finite("voltage", v)?;
    Ok(derivatives(s.effective_voltage(v), s.w, s.theta, p).0)
}

/// Leakage capacity rate `dtheta/dt` in m/s² for terminal voltage `v`.
pub fn leakage_derivative(v: f64, s: &DeviceState, p: &DeviceParams) -> Result<f64> {
    ensure_finite("voltage", v)?;
    Ok(derivatives(s.effective_voltage(v), s.w, s.theta, p).1)
}

/// Resistance, affine in `w` between `r_on` at `w_on` and `r_off` at `w_off`.
pub fn resistance(w: f64, p: &DeviceParams) -> Result<f64> {
    ensure_finite("state", w)?;
    if w < p.w_on || w > p.w_off {
        return Err(Error::StateOutOfBounds { w, lo: p.w_on, hi: p.w_off });
    }
    Ok(resistance_unchecked(w, p))
}

#[inline]
pub(crate) fn resistance_unchecked(w: f64, p: &DeviceParams) -> f64 {
    p.r_on + (p.r_off - p.r_on) * (w - p.w_on) / (p.w_off - p.w_on)
}

/// Ohmic current, optionally clamped to `|i| <= limit`.
pub fn current(v: f64, w: f64, p: &DeviceParams, limit: Option<f64>) -> Result<f64> {
    ensure_finite("voltage", v)?;
    let i = v / resistance(w, p)?;
    Ok(match limit {
        Some(l) => i.clamp(-l.abs(), l.abs()),
        None => i,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Euler,
    Rk4,
}

/// Substepping controls for [`step`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    /// Largest state change per substep as a fraction of `w_off - w_on`.
    pub max_dw_fraction: f64,
    /// Largest substep as a fraction of `tau_l`.
    pub max_decay_fraction: f64,
    pub max_substeps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Euler,
            max_dw_fraction: 1.0 / 1000.0,
            max_decay_fraction: 1e-3,
            max_substeps: 10_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_dw_fraction > 0.0 && self.max_dw_fraction <= 1.0) {
            return Err(Error::Config(format!("max_dw_fraction must lie in (0, 1], got {}", self.max_dw_fraction)));
        }
        if !(self.max_decay_fraction > 0.0 && self.max_decay_fraction.is_finite()) {
            return Err(Error::Config(format!("max_decay_fraction must be positive, got {}", self.max_decay_fraction)));
        }
        if self.max_substeps == 0 {
            return Err(Error::Config("max_substeps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub dt_used: f64,
    pub substeps: usize,
    pub w_before: f64,
    pub w_after: f64,
    /// Whether any substep had to be clamped to the state bounds.
    pub clamped: bool,
}

/// Velocity that actually moves `w`: zero when pinned against a bound.
#[inline]
fn moving_rate(dw: f64, w: f64, p: &DeviceParams) -> f64 {
    if (w <= p.w_on && dw < 0.0) || (w >= p.w_off && dw > 0.0) {
        0.0
    } else {
        dw
    }
}

/// Advances the device by `dt` under a constant terminal voltage `v`.
pub fn step(
    s: &DeviceState,
    v: f64,
    dt: f64,
    p: &DeviceParams,
    cfg: &IntegratorConfig,
) -> Result<(DeviceState, StepReport)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidTimeStep(dt));
    }
    ensure_finite("voltage", v)?;
    ensure_finite("state", s.w)?;
    ensure_finite("leakage capacity", s.theta)?;

    let v_eff = s.effective_voltage(v);
    let max_dw = cfg.max_dw_fraction * p.span();
    let max_h = cfg.max_decay_fraction * p.tau_l;
    let clamp = |w: f64| w.clamp(p.w_on, p.w_off);

    let mut w = clamp(s.w);
    let mut theta = s.theta;
    let mut clamped = w != s.w;
    let mut done = 0.0;
    let mut substeps = 0usize;

    while done < dt {
        let (dw, dth) = derivatives(v_eff, w, theta, p);
        let moving = moving_rate(dw, w, p).abs();
        let remaining = dt - done;
        let mut h = remaining.min(max_h);
        if moving * h > max_dw {
            h = max_dw / moving;
        }

        let (w_next, theta_next) = match cfg.scheme {
            Scheme::Euler => (w + h * dw, theta + h * dth),
            Scheme::Rk4 => {
                let (k1w, k1t) = (dw, dth);
                let (k2w, k2t) = derivatives(v_eff, clamp(w + 0.5 * h * k1w), theta + 0.5 * h * k1t, p);
                let (k3w, k3t) = derivatives(v_eff, clamp(w + 0.5 * h * k2w), theta + 0.5 * h * k2t, p);
                let (k4w, k4t) = derivatives(v_eff, clamp(w + h * k3w), theta + h * k3t, p);
                (
                    w + h / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w),
                    theta + h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t),
                )
            }
        };

        w = clamp(w_next);
        clamped |= w != w_next;
        theta = theta_next;
        done = if h >= remaining { dt } else { done + h };
        substeps += 1;
        if substeps > cfg.max_substeps {
            return Err(Error::SubstepLimit(cfg.max_substeps));
        }
    }

    let next = DeviceState { w, theta, polarity: s.polarity };
    let report = StepReport { dt_used: dt, substeps, w_before: s.w, w_after: w, clamped };
    Ok((next, report))
}

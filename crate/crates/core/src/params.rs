//! Parameter distributions and reproducible sampling of [`DeviceParams`].
//!
//! Every draw comes from its own ChaCha8 stream keyed by
//! `(base_seed, trial, device, parameter)`, so results never depend on the
//! order in which trials or devices are sampled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::device::DeviceParams;
use crate::error::{Error, Result};

const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistKind {
    Fixed,
    Gaussian,
    Uniform,
}

/// One parameter's distribution. For `uniform`, `sigma` is a third of the
/// half-width of the support (see [`ParamDistributions::uniform_halfwidth`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub kind: DistKind,
    pub mean: f64,
    #[serde(default)]
    pub sigma: f64,
}

impl DistributionSpec {
    pub const fn fixed(mean: f64) -> Self {
        Self { kind: DistKind::Fixed, mean, sigma: 0.0 }
    }

    pub const fn gaussian(mean: f64, sigma: f64) -> Self {
        Self { kind: DistKind::Gaussian, mean, sigma }
    }

    pub const fn uniform(mean: f64, sigma: f64) -> Self {
        Self { kind: DistKind::Uniform, mean, sigma }
    }

    /// Interval draws are confined to before sign checks.
    pub fn support(&self, uniform_halfwidth: f64, gaussian_truncation: f64) -> (f64, f64) {
        let half = match self.kind {
            DistKind::Fixed => 0.0,
            DistKind::Gaussian => gaussian_truncation * self.sigma,
            DistKind::Uniform => uniform_halfwidth * self.sigma,
        };
        (self.mean - half, self.mean + half)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !self.mean.is_finite() || !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::Config(format!(
                "{name}: need finite mean and sigma >= 0, got mean={} sigma={}",
                self.mean, self.sigma
            )));
        }
        Ok(())
    }
}

/// Identifies a varied parameter; also used as part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamId {
    ROff = 0,
    ROn = 1,
    VOff = 2,
    VOn = 3,
    KOff = 4,
    KOn = 5,
}

impl ParamId {
    pub const ALL: [ParamId; 6] =
        [ParamId::ROff, ParamId::ROn, ParamId::VOff, ParamId::VOn, ParamId::KOff, ParamId::KOn];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::ROff => "r_off",
            ParamId::ROn => "r_on",
            ParamId::VOff => "v_off",
            ParamId::VOn => "v_on",
            ParamId::KOff => "k_off",
            ParamId::KOn => "k_on",
        }
    }

    /// Required sign of a draw: +1 strictly positive, -1 strictly negative.
    fn sign(self) -> f64 {
        match self {
            ParamId::VOn | ParamId::KOn => -1.0,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDistributions {
    pub r_off: DistributionSpec,
    pub r_on: DistributionSpec,
    pub v_off: DistributionSpec,
    pub v_on: DistributionSpec,
    pub k_off: DistributionSpec,
    pub k_on: DistributionSpec,
    /// Values of all parameters that are not varied. The six varied fields
    /// of `base` are ignored.
    pub base: DeviceParams,
    /// Uniform support is `mean ± uniform_halfwidth · sigma`.
    pub uniform_halfwidth: f64,
    /// Gaussian draws outside `mean ± gaussian_truncation · sigma` are redrawn.
    pub gaussian_truncation: f64,
}

impl Default for ParamDistributions {
    fn default() -> Self {
        default_distributions()
    }
}

/// Final fitted distributions (preset `believer-default`).
pub fn default_distributions() -> ParamDistributions {
    ParamDistributions {
        r_off: DistributionSpec::gaussian(545.54e3, 77.095e3),
        r_on: DistributionSpec::gaussian(4.92e3, 858.8),
        v_off: DistributionSpec::uniform(0.3702, 0.0377),
        v_on: DistributionSpec::uniform(-0.3738, 0.0411),
        k_off: DistributionSpec::uniform(780e-6, 174.2e-6),
        k_on: DistributionSpec::uniform(-4.67e-6, 0.747e-6),
        base: DeviceParams::nominal(),
        uniform_halfwidth: 3.0,
        gaussian_truncation: 4.0,
    }
}

pub const PRESETS: [&str; 2] = ["believer-default", "believer-sec2b"];

impl ParamDistributions {
    /// Named preset. `believer-sec2b` swaps in the resistance statistics of
    /// the raw R_on/R_off measurement run.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "believer-default" => Ok(default_distributions()),
            "believer-sec2b" => {
                let mut d = default_distributions();
                d.r_on = DistributionSpec::gaussian(4.64e3, 427.9);
                d.r_off = DistributionSpec::gaussian(545.52e3, 77.095e3);
                d.base.r_on = 4.64e3;
                d.base.r_off = 545.52e3;
                Ok(d)
            }
            other => Err(Error::Config(format!("unknown preset '{other}', expected one of {PRESETS:?}"))),
        }
    }

    pub fn spec(&self, id: ParamId) -> &DistributionSpec {
        match id {
            ParamId::ROff => &self.r_off,
            ParamId::ROn => &self.r_on,
            ParamId::VOff => &self.v_off,
            ParamId::VOn => &self.v_on,
            ParamId::KOff => &self.k_off,
            ParamId::KOn => &self.k_on,
        }
    }

    pub fn spec_mut(&mut self, id: ParamId) -> &mut DistributionSpec {
        match id {
            ParamId::ROff => &mut self.r_off,
            ParamId::ROn => &mut self.r_on,
            ParamId::VOff => &mut self.v_off,
            ParamId::VOn => &mut self.v_on,
            ParamId::KOff => &mut self.k_off,
            ParamId::KOn => &mut self.k_on,
        }
    }

    /// Device built from the distribution means.
    pub fn nominal(&self) -> DeviceParams {
        let mut p = self.base;
        p.r_off = self.r_off.mean;
        p.r_on = self.r_on.mean;
        p.v_off = self.v_off.mean;
        p.v_on = self.v_on.mean;
        p.k_off = self.k_off.mean;
        p.k_on = self.k_on.mean;
        p
    }

    /// Same distributions with every varied parameter pinned to its mean.
    pub fn fixed(&self) -> Self {
        let mut d = self.clone();
        for id in ParamId::ALL {
            let s = d.spec_mut(id);
            *s = DistributionSpec::fixed(s.mean);
        }
        d
    }

    /// Same distributions with the leakage couplings set to zero.
    pub fn without_leakage(&self) -> Self {
        let mut d = self.clone();
        d.base = d.base.without_leakage();
        d
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.uniform_halfwidth >= 0.0 && self.uniform_halfwidth.is_finite()) {
            return Err(Error::Config("uniform_halfwidth must be >= 0".into()));
        }
        if !(self.gaussian_truncation > 0.0) {
            return Err(Error::Config("gaussian_truncation must be > 0".into()));
        }
        for id in ParamId::ALL {
            let spec = self.spec(id);
            spec.validate(id.name())?;
            let (lo, hi) = spec.support(self.uniform_halfwidth, self.gaussian_truncation);
            let feasible = if id.sign() > 0.0 { hi > 0.0 } else { lo < 0.0 };
            if !feasible {
                return Err(Error::Config(format!(
                    "{}: truncation region [{lo}, {hi}] contains no value of the required sign",
                    id.name()
                )));
            }
        }
        let (_, r_off_hi) = self.r_off.support(self.uniform_halfwidth, self.gaussian_truncation);
        let (r_on_lo, _) = self.r_on.support(self.uniform_halfwidth, self.gaussian_truncation);
        if r_off_hi <= r_on_lo.max(0.0) {
            return Err(Error::Config("r_off can never exceed r_on under these distributions".into()));
        }
        self.nominal().validate()
    }
}

/// Which indices a draw depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// One draw per trial, shared by every device of that trial.
    PerCycle,
    /// One draw per device, reused across trials.
    PerDevice,
    /// Independent draw for every (trial, device) pair.
    #[default]
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub mode: SamplingMode,
    pub base_seed: u64,
}

impl SamplingPolicy {
    pub fn new(base_seed: u64) -> Self {
        Self { mode: SamplingMode::Both, base_seed }
    }

    fn key(&self, trial: u64, device: u64) -> (u64, u64) {
        match self.mode {
            SamplingMode::PerCycle => (trial, 0),
            SamplingMode::PerDevice => (0, device),
            SamplingMode::Both => (trial, device),
        }
    }
}

/// Independent stream for one parameter of one (trial, device) pair.
pub fn stream(base_seed: u64, trial: u64, device: u64, param: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&base_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&trial.to_le_bytes());
    seed[16..24].copy_from_slice(&device.to_le_bytes());
    seed[24..32].copy_from_slice(&param.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

fn draw_one(
    spec: &DistributionSpec,
    id: ParamId,
    rng: &mut ChaCha8Rng,
    uniform_halfwidth: f64,
    truncation: f64,
) -> Result<f64> {
    for _ in 0..MAX_ATTEMPTS {
        let x = match spec.kind {
            DistKind::Fixed => spec.mean,
            DistKind::Gaussian => {
                let z: f64 = rng.sample(StandardNormal);
                if z.abs() > truncation {
                    continue;
                }
                spec.mean + spec.sigma * z
            }
            DistKind::Uniform => {
                let half = uniform_halfwidth * spec.sigma;
                let u: f64 = rng.random();
                spec.mean - half + 2.0 * half * u
            }
        };
        if x * id.sign() > 0.0 {
            return Ok(x);
        }
        if spec.kind == DistKind::Fixed {
            break;
        }
    }
    Err(Error::Config(format!("{}: no admissible draw after {MAX_ATTEMPTS} attempts", id.name())))
}

/// Draws one device's parameters.
pub fn sample(dists: &ParamDistributions, policy: &SamplingPolicy, trial: u64, device: u64) -> Result<DeviceParams> {
    dists.validate()?;
    let (tk, dk) = policy.key(trial, device);
    let mut streams: Vec<ChaCha8Rng> =
        ParamId::ALL.iter().map(|&id| stream(policy.base_seed, tk, dk, id as u64)).collect();
    let mut draw = |id: ParamId| {
        draw_one(dists.spec(id), id, &mut streams[id as usize], dists.uniform_halfwidth, dists.gaussian_truncation)
    };

    let mut p = dists.base;
    let mut resistances = None;
    for _ in 0..MAX_ATTEMPTS {
        let r_off = draw(ParamId::ROff)?;
        let r_on = draw(ParamId::ROn)?;
        if r_off > r_on {
            resistances = Some((r_off, r_on));
            break;
        }
    }
    let (r_off, r_on) =
        resistances.ok_or_else(|| Error::Config(format!("no draw with r_off > r_on after {MAX_ATTEMPTS} attempts")))?;
    p.r_off = r_off;
    p.r_on = r_on;
    p.v_off = draw(ParamId::VOff)?;
    p.v_on = draw(ParamId::VOn)?;
    p.k_off = draw(ParamId::KOff)?;
    p.k_on = draw(ParamId::KOn)?;
    p.validate()?;
    Ok(p)
}

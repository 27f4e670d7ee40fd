//! Experiment harness: flat configuration files, Monte-Carlo orchestration,
//! rate fitting, bound cross-checks and CSV output.
//!
//! Replication `i` of a run seeded with `s` uses seed `s ^ i`. Results are
//! collected in replication order and reduced sequentially with compensated
//! sums, so the output does not depend on the number of worker threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::bounds::{self, BoundInputs, ConditionConstants, ConditionFixture, ConditionReport, PastSampler, VerifySettings};
use crate::error::{Error, Result};
use crate::gains::{
    Ar1NormalizedGain, Ar1TruncatedGain, Arch1Gain, GainSpec, GaussianKnownCovGain, KieferWolfowitzGain,
    LaggedNormalizedGain, Past, QuantileGain, RobbinsMonroGain, SignalNoiseGain, SpsaGain,
};
use crate::kalman::{self, KalmanConfig, StateNoise};
use crate::linalg::Matrix;
use crate::models::{
    ArLagged, Arch1, ArdBatch, CondGaussian, CovRule, Noise, ParameterPath, PathFunction, PathKind, QuantileModel,
    QueryModel, RobbinsMonroModel, SignalNoise, Simulator,
};
use crate::schedules::{default_c_gamma, ScheduleKind, StepSchedule};
use crate::stats::{mean_se, norm2, norm_p, KahanSum, MeanSe};
use crate::rng::mix64;
use crate::tracking::{run_tracking, TrackingConfig, TrackingRun};

// ---------------------------------------------------------------------------
// Configuration

/// Flat `key = value` pairs; `#` starts a comment.
#[derive(Debug, Clone, Default)]
struct ConfigMap {
    entries: BTreeMap<String, (usize, String)>,
    used: std::cell::RefCell<BTreeSet<String>>,
}

impl ConfigMap {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            if entries.insert(key.to_string(), (i + 1, value.trim().to_string())).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(Self {
            entries,
            used: Default::default(),
        })
    }

    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        let v = self.entries.get(key);
        if v.is_some() {
            self.used.borrow_mut().insert(key.to_string());
        }
        v
    }

    fn str(&self, key: &str) -> Option<&str> {
        self.raw(key).map(|(_, v)| v.as_str())
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("line {line}: cannot parse `{key} = {v}`"))),
        }
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| Error::Config(format!("line {line}: `{key}` needs comma-separated numbers"))),
        }
    }

    fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.entries.iter().find(|(k, _)| !used.contains(*k)) {
            Some((k, (line, _))) => Err(Error::Config(format!("line {line}: unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    SingleRun,
    RateSweep,
    BoundCheck,
    ConditionVerify,
    KalmanCompare,
}

impl ExperimentKind {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "single-run" => Self::SingleRun,
            "rate-sweep" => Self::RateSweep,
            "bound-check" => Self::BoundCheck,
            "condition-verify" => Self::ConditionVerify,
            "kalman-compare" => Self::KalmanCompare,
            other => return Err(Error::Config(format!("unknown experiment `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PathSpec {
    Static { theta: Vec<f64> },
    Stabilizing { start: Vec<f64>, c_rho: f64, beta: f64 },
    /// `ϑ(t) = a sin(2π f t)` in every coordinate.
    Lipschitz { amplitude: f64, frequency: f64, beta: f64, d: usize },
}

impl PathSpec {
    pub fn dim(&self) -> usize {
        match self {
            PathSpec::Static { theta } => theta.len(),
            PathSpec::Stabilizing { start, .. } => start.len(),
            PathSpec::Lipschitz { d, .. } => *d,
        }
    }

    /// The path for horizon `n`.
    pub fn build(&self, n: usize, c_theta: f64) -> Result<ParameterPath> {
        let kind = match self {
            PathSpec::Static { theta } => PathKind::Static { theta: theta.clone() },
            PathSpec::Stabilizing { start, c_rho, beta } => PathKind::Stabilizing {
                start: start.clone(),
                c_rho: *c_rho,
                beta: *beta,
            },
            PathSpec::Lipschitz {
                amplitude,
                frequency,
                beta,
                d,
            } => {
                let (a, f, d) = (*amplitude, *frequency, *d);
                let func: PathFunction = Arc::new(move |t| vec![a * (2.0 * std::f64::consts::PI * f * t).sin(); d]);
                PathKind::Lipschitz {
                    f: func,
                    l: 2.0 * std::f64::consts::PI * a.abs() * f.abs() * (d as f64).sqrt(),
                    beta: *beta,
                    n,
                }
            }
        };
        ParameterPath::new(kind, c_theta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    SignalNoise,
    Quantile { alpha: f64 },
    RobbinsMonro { level: f64, slope: f64 },
    Query { curvature: f64, c: f64, spsa: bool },
    /// Constant diagonal covariance.
    Gaussian { cov: Vec<f64> },
    Arch1 { x0: f64 },
    Ar1 { rho: f64 },
    ArLagged { y0: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum GainKind {
    SignalNoise,
    Quantile { alpha: f64 },
    RobbinsMonro { level: f64 },
    KieferWolfowitz { c: f64 },
    Spsa { c: f64 },
    Gaussian { cov: Vec<f64> },
    Arch1 { t: f64 },
    Ar1Truncated { t: f64 },
    Ar1Normalized { mu: f64 },
    LaggedNormalized { mu: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleSpec {
    Static { c_gamma: f64 },
    Stabilizing { c_gamma: f64, beta: f64 },
    Lipschitz { c_gamma: f64, beta: f64 },
    Constant { gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Declared {
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub c_g: Option<f64>,
    pub lipschitz: Option<f64>,
    pub g_bar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PastMode {
    Pinned,
    /// `X_{k−1}` drawn from the model given the pinned `X_{k−2}`.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifySpec {
    pub samples: usize,
    pub pasts: usize,
    pub batches: usize,
    pub past: Option<Vec<f64>>,
    pub mode: PastMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanSpec {
    pub m0: f64,
    pub sigma0_sq: f64,
    pub sigma_xi_sq: f64,
    pub delta_c: f64,
    pub delta_beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub model: ModelSpec,
    pub noise: Noise,
    /// `σ` of AR models.
    pub model_sigma: f64,
    pub path: PathSpec,
    pub c_theta: f64,
    pub gain: GainKind,
    pub schedule: ScheduleSpec,
    pub step_cap: Option<f64>,
    pub lambda2_guard: bool,
    pub initial_estimate: Vec<f64>,
    pub horizons: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub burn_in_fraction: f64,
    pub p: f64,
    pub output: Option<PathBuf>,
    pub declared: Declared,
    pub rate_tolerance: f64,
    pub rate_slope: Option<f64>,
    pub rate_log_power: Option<f64>,
    pub checkpoints: usize,
    pub verify: VerifySpec,
    pub kalman: KalmanSpec,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses the flat format; see the README for the key list.
    pub fn parse(text: &str) -> Result<Self> {
        let m = ConfigMap::parse(text)?;
        let kind = ExperimentKind::parse(m.str("experiment").unwrap_or("single-run"))?;

        let declared = Declared {
            lambda1: m.parsed("constants.lambda1")?,
            lambda2: m.parsed("constants.lambda2")?,
            c_g: m.parsed("constants.C_g")?,
            lipschitz: m.parsed("constants.L")?,
            g_bar: m.parsed("constants.G_bar")?,
        };

        let sigma = m.f64_or("model.sigma", 1.0)?;
        let noise = match m.str("model.noise").unwrap_or("normal") {
            "zero" => Noise::Zero,
            "normal" => Noise::Normal { sigma },
            "uniform" => Noise::Uniform {
                half_width: m.f64_or("model.half_width", 0.5)?,
            },
            "rademacher" => Noise::Rademacher { sigma },
            other => return Err(Error::Config(format!("unknown noise `{other}`"))),
        };

        let theta = m.list("path.theta")?;
        let path_beta = m.f64_or("path.beta", 1.0)?;
        let path = match m.str("path.kind").unwrap_or("static") {
            "static" => PathSpec::Static {
                theta: theta.unwrap_or_else(|| vec![0.0]),
            },
            "stabilizing" => PathSpec::Stabilizing {
                start: theta.unwrap_or_else(|| vec![0.0]),
                c_rho: m.f64_or("path.c_rho", 1.0)?,
                beta: path_beta,
            },
            "lipschitz" => PathSpec::Lipschitz {
                amplitude: m.f64_or("path.amplitude", 0.5)?,
                frequency: m.f64_or("path.frequency", 1.0)?,
                beta: path_beta,
                d: m.parsed("path.d")?.unwrap_or(1),
            },
            other => return Err(Error::Config(format!("unknown path kind `{other}`"))),
        };
        let d = path.dim();

        let alpha = m.f64_or("model.alpha", 0.5)?;
        let query_c = m.f64_or("model.c", 0.1)?;
        let cov = m.list("model.cov")?.unwrap_or_else(|| vec![1.0; d]);
        let model_kind = m.str("model.kind").unwrap_or("signal-noise").to_string();
        let model = match model_kind.as_str() {
            "signal-noise" => ModelSpec::SignalNoise,
            "quantile" => ModelSpec::Quantile { alpha },
            "robbins-monro" => ModelSpec::RobbinsMonro {
                level: m.f64_or("model.level", 0.0)?,
                slope: m.f64_or("model.slope", 1.0)?,
            },
            "kiefer-wolfowitz" | "spsa" => ModelSpec::Query {
                curvature: m.f64_or("model.curvature", 1.0)?,
                c: query_c,
                spsa: model_kind == "spsa",
            },
            "gaussian" => ModelSpec::Gaussian { cov: cov.clone() },
            "arch1" => ModelSpec::Arch1 {
                x0: m.f64_or("model.x0", 0.0)?,
            },
            "ar1" => ModelSpec::Ar1 {
                rho: m.f64_or("model.rho", 0.95)?,
            },
            "ar-lagged" => ModelSpec::ArLagged {
                y0: m.list("model.y0")?.unwrap_or_else(|| vec![1.0; d]),
            },
            other => return Err(Error::Config(format!("unknown model kind `{other}`"))),
        };

        let t = m.f64_or("gain.T", 1.5)?;
        let mu = m.f64_or("gain.mu", 1.0)?;
        let default_gain = match &model {
            ModelSpec::SignalNoise => "signal-noise",
            ModelSpec::Quantile { .. } => "quantile",
            ModelSpec::RobbinsMonro { .. } => "robbins-monro",
            ModelSpec::Query { spsa: false, .. } => "kiefer-wolfowitz",
            ModelSpec::Query { spsa: true, .. } => "spsa",
            ModelSpec::Gaussian { .. } => "gaussian",
            ModelSpec::Arch1 { .. } => "arch1",
            ModelSpec::Ar1 { .. } => "ar1-truncated",
            ModelSpec::ArLagged { .. } => "lagged-normalized",
        };
        let gain = match m.str("gain.kind").unwrap_or(default_gain) {
            "signal-noise" => GainKind::SignalNoise,
            "quantile" => GainKind::Quantile {
                alpha: m.f64_or("gain.alpha", alpha)?,
            },
            "robbins-monro" => GainKind::RobbinsMonro {
                level: match &model {
                    ModelSpec::RobbinsMonro { level, .. } => *level,
                    _ => 0.0,
                },
            },
            "kiefer-wolfowitz" => GainKind::KieferWolfowitz { c: query_c },
            "spsa" => GainKind::Spsa { c: query_c },
            "gaussian" => GainKind::Gaussian { cov },
            "arch1" => GainKind::Arch1 { t },
            "ar1-truncated" => GainKind::Ar1Truncated { t },
            "ar1-normalized" => GainKind::Ar1Normalized { mu },
            "lagged-normalized" => GainKind::LaggedNormalized { mu },
            other => return Err(Error::Config(format!("unknown gain kind `{other}`"))),
        };

        let c_gamma = m.f64_or("schedule.C_gamma", default_c_gamma(declared.lambda1))?;
        let default_schedule = match &path {
            PathSpec::Static { .. } => "static",
            PathSpec::Stabilizing { .. } => "stabilizing",
            PathSpec::Lipschitz { .. } => "lipschitz",
        };
        let sched_beta = m.f64_or("schedule.beta", path_beta)?;
        let schedule = match m.str("schedule.kind").unwrap_or(default_schedule) {
            "static" => ScheduleSpec::Static { c_gamma },
            "stabilizing" => ScheduleSpec::Stabilizing { c_gamma, beta: sched_beta },
            "lipschitz" => ScheduleSpec::Lipschitz { c_gamma, beta: sched_beta },
            "constant" => ScheduleSpec::Constant {
                gamma: m
                    .parsed("schedule.gamma")?
                    .ok_or_else(|| Error::Config("constant schedule needs schedule.gamma".into()))?,
            },
            other => return Err(Error::Config(format!("unknown schedule kind `{other}`"))),
        };

        let horizons = match m.raw("horizons") {
            None => vec![1000],
            Some((line, v)) => v
                .split(',')
                .map(|s| s.trim().parse::<f64>().ok().filter(|x| x.fract() == 0.0 && *x >= 0.0).map(|x| x as usize))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::Config(format!("line {line}: horizons must be whole numbers")))?,
        };

        let mode = match m.str("verify.past_mode").unwrap_or("pinned") {
            "pinned" => PastMode::Pinned,
            "random" => PastMode::Random,
            other => return Err(Error::Config(format!("unknown verify.past_mode `{other}`"))),
        };

        let cfg = Self {
            kind,
            model,
            noise,
            model_sigma: sigma,
            path,
            c_theta: m.f64_or("path.c_theta", 1.0)?,
            gain,
            schedule,
            step_cap: m.parsed("schedule.cap")?,
            lambda2_guard: m.parsed("schedule.lambda2_guard")?.unwrap_or(false),
            initial_estimate: m.list("init.theta")?.unwrap_or_else(|| vec![0.0; d]),
            horizons,
            replications: m.parsed("replications")?.unwrap_or(200),
            seed: m.parsed("seed")?.unwrap_or(0),
            burn_in_fraction: m.f64_or("burn_in_fraction", 0.5)?,
            p: m.f64_or("p", 2.0)?,
            output: m.str("output").map(PathBuf::from),
            declared,
            rate_tolerance: m.f64_or("rate.tolerance", 0.1)?,
            rate_slope: m.parsed("rate.slope")?,
            rate_log_power: m.parsed("rate.log_power")?,
            checkpoints: m.parsed("bound.checkpoints")?.unwrap_or(20),
            verify: VerifySpec {
                samples: m.parsed("verify.samples")?.unwrap_or(20_000),
                pasts: m.parsed("verify.pasts")?.unwrap_or(1),
                batches: m.parsed("verify.batches")?.unwrap_or(20),
                past: m.list("verify.past")?,
                mode,
            },
            kalman: KalmanSpec {
                m0: m.f64_or("kalman.m0", 0.0)?,
                sigma0_sq: m.f64_or("kalman.sigma0_sq", 1.0)?,
                sigma_xi_sq: m.f64_or("kalman.sigma_xi_sq", 1.0)?,
                delta_c: m.f64_or("kalman.delta_c", 0.0)?,
                delta_beta: m.f64_or("kalman.delta_beta", 1.0)?,
            },
        };
        m.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.replications == 0 {
            return bad("replications must be >= 1".into());
        }
        if self.horizons.is_empty() || self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return bad("horizons must be nonempty and strictly increasing".into());
        }
        if self.horizons[0] < 2 {
            return bad("horizons must be >= 2".into());
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return bad(format!("burn_in_fraction must lie in [0,1), got {}", self.burn_in_fraction));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return bad(format!("p must be >= 1, got {}", self.p));
        }
        if self.initial_estimate.len() != self.path.dim() {
            return bad(format!(
                "init.theta has {} entries, parameter dimension is {}",
                self.initial_estimate.len(),
                self.path.dim()
            ));
        }
        if self.checkpoints == 0 {
            return bad("bound.checkpoints must be >= 1".into());
        }
        if self.lambda2_guard && self.declared.lambda2.is_none() {
            return bad("schedule.lambda2_guard needs constants.lambda2".into());
        }
        Ok(())
    }

    pub fn model_for(&self, n: usize) -> Result<Arc<dyn Simulator>> {
        let path = self.path.build(n, self.c_theta)?;
        let d = path.d;
        Ok(match &self.model {
            ModelSpec::SignalNoise => Arc::new(SignalNoise::new(path, self.noise)?),
            ModelSpec::Quantile { alpha } => Arc::new(QuantileModel::new(path, *alpha, self.noise)?),
            ModelSpec::RobbinsMonro { level, slope } => Arc::new(RobbinsMonroModel {
                path,
                alpha: vec![*level; d],
                slope: *slope,
                noise: self.noise,
            }),
            ModelSpec::Query { curvature, c, spsa } => Arc::new(QueryModel {
                path,
                curvature: *curvature,
                c: *c,
                noise: self.noise,
                spsa: *spsa,
            }),
            ModelSpec::Gaussian { cov } => {
                let sigma = diag(cov, d)?;
                let lo = cov.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = cov.iter().copied().fold(0.0, f64::max);
                Arc::new(CondGaussian::new(path, CovRule::Constant(sigma), (lo, hi))?)
            }
            ModelSpec::Arch1 { x0 } => Arc::new(Arch1::new(path, self.noise, *x0)?),
            ModelSpec::Ar1 { rho } => Arc::new(ArdBatch::new(path, self.model_sigma, *rho, vec![0.0; d])?),
            ModelSpec::ArLagged { y0 } => Arc::new(ArLagged::new(path, self.model_sigma, y0.clone())?),
        })
    }

    pub fn gain_spec(&self) -> Result<GainSpec> {
        let d = self.path.dim();
        let spec = match &self.gain {
            GainKind::SignalNoise => GainSpec::new(SignalNoiseGain { d }),
            GainKind::Quantile { alpha } => GainSpec::new(QuantileGain { alpha: *alpha }),
            GainKind::RobbinsMonro { level } => GainSpec::new(RobbinsMonroGain { alpha: vec![*level; d] }),
            GainKind::KieferWolfowitz { c } => GainSpec::new(KieferWolfowitzGain { d, c: *c }),
            GainKind::Spsa { c } => GainSpec::new(SpsaGain { d, c: *c }),
            GainKind::Gaussian { cov } => GainSpec::new(GaussianKnownCovGain::new(&diag(cov, d)?)?),
            GainKind::Arch1 { t } => GainSpec::new(Arch1Gain { t: *t }),
            GainKind::Ar1Truncated { t } => GainSpec::new(Ar1TruncatedGain { t: *t }),
            GainKind::Ar1Normalized { mu } => GainSpec::new(Ar1NormalizedGain { mu: *mu }),
            GainKind::LaggedNormalized { mu } => GainSpec::new(LaggedNormalizedGain { d, mu: *mu }),
        };
        Ok(spec)
    }

    pub fn schedule_for(&self, n: usize) -> Result<StepSchedule> {
        let kind = match &self.schedule {
            ScheduleSpec::Static { c_gamma } => ScheduleKind::Static { c_gamma: *c_gamma },
            ScheduleSpec::Stabilizing { c_gamma, beta } => ScheduleKind::Stabilizing {
                c_gamma: *c_gamma,
                beta: *beta,
            },
            ScheduleSpec::Lipschitz { c_gamma, beta } => ScheduleKind::Lipschitz {
                c_gamma: *c_gamma,
                beta: *beta,
                n,
            },
            ScheduleSpec::Constant { gamma } => ScheduleKind::Constant { gamma: *gamma },
        };
        let mut s = StepSchedule::new(kind)?;
        if let Some(cap) = self.step_cap {
            s = s.with_cap(cap)?;
        }
        if self.lambda2_guard {
            s = s.with_lambda2_guard(self.declared.lambda2.expect("checked in validate"))?;
        }
        Ok(s)
    }

    pub fn tracking_config(&self, n: usize) -> Result<TrackingConfig> {
        TrackingConfig::new(self.initial_estimate.clone(), n, self.schedule_for(n)?)
    }

    /// Theoretical slope and log power of the error rate for the schedule.
    pub fn theoretical_rate(&self) -> Result<(f64, f64)> {
        let regime = match &self.schedule {
            ScheduleSpec::Static { .. } => Some((-0.5, 1.0)),
            ScheduleSpec::Stabilizing { beta, .. } if *beta >= 1.5 => Some((-0.5, 1.0)),
            ScheduleSpec::Stabilizing { beta, .. } => Some((-beta / 3.0, 2.0 / 3.0)),
            ScheduleSpec::Lipschitz { beta, .. } => {
                let q = 2.0 * beta + 1.0;
                Some((-beta / q, 2.0 * beta / q))
            }
            ScheduleSpec::Constant { .. } => None,
        };
        let slope = self.rate_slope.or(regime.map(|r| r.0));
        let power = self.rate_log_power.or(regime.map(|r| r.1)).unwrap_or(0.0);
        match slope {
            Some(s) => Ok((s, power)),
            None => Err(Error::Config("constant schedules need rate.slope".into())),
        }
    }

    fn burn_in(&self, n: usize) -> usize {
        ((self.burn_in_fraction * n as f64).ceil() as usize).min(n - 1)
    }
}

fn diag(values: &[f64], d: usize) -> Result<Matrix> {
    if values.len() != d {
        return Err(Error::Config(format!("covariance has {} entries, dimension is {d}", values.len())));
    }
    Ok(Matrix::from_diagonal(&DVector::from_column_slice(values)))
}

// ---------------------------------------------------------------------------
// Monte-Carlo orchestration

/// Seed of replication `i`. A plain `seed ^ i` would map small seeds onto
/// permutations of the same replication set, so the offset is mixed.
pub fn replication_seed(seed: u64, i: usize) -> u64 {
    mix64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1)))
}

/// Runs `f(i, replication_seed(seed, i))` for `i < r` in parallel and returns results in
/// replication order.
pub fn replicate<T: Send>(r: usize, seed: u64, f: impl Fn(usize, u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    (0..r).into_par_iter().map(|i| f(i, replication_seed(seed, i))).collect()
}

/// Replications are processed in blocks of this size; per-step sums are
/// folded in replication order after each block.
const BLOCK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub horizon: usize,
    pub replication: usize,
    pub l1: f64,
    pub l2: f64,
    pub lp: f64,
    pub p: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub k: usize,
    pub empirical_mean: f64,
    pub empirical_se: f64,
    pub bound_rhs: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundTable {
    pub horizon: usize,
    pub k0: usize,
    /// Measured `sup_k E‖θ̂_k‖²`.
    pub c_theta_bar: f64,
    pub rows: Vec<BoundRow>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    /// 95% half-width; infinite without residual degrees of freedom.
    pub half_width: f64,
    /// Coefficient on `log log n` (zero for fixed-power fits).
    pub log_log: f64,
    pub dof: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub regime: &'static str,
    pub horizons: Vec<usize>,
    pub mean_l1: Vec<MeanSe>,
    pub mean_l2: Vec<MeanSe>,
    pub mean_lp: Vec<MeanSe>,
    pub p: f64,
    /// Slope of `log E‖δ_n‖ − a log log n` on `log n`, `a = log_power`;
    /// absent with a single horizon.
    pub fit: Option<RateFit>,
    pub log_power: f64,
    /// Unconstrained fit on `(log n, log log n)` when at least four horizons exist.
    pub free_fit: Option<RateFit>,
    pub theoretical: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<RateRow>,
    pub report: RateReport,
    pub bounds: Vec<BoundTable>,
}

struct RepStats {
    finals: [f64; 3],
    /// `‖δ_{k+1}‖` at the checkpoints.
    checkpoint_errors: Vec<f64>,
    /// `‖θ̂_k‖²`, `k = 0..=n`.
    est_sq: Vec<f64>,
    /// `‖θ_{i+1} − θ_{k₀}‖`, `i = k₀..n−1`.
    oscillation: Vec<f64>,
}

fn rep_stats(run: &TrackingRun, p: f64, k0: usize, checkpoints: &[usize], with_bounds: bool) -> RepStats {
    let last = run.error(run.n);
    let finals = [norm_p(last, 1.0), norm2(last), norm_p(last, p)];
    if !with_bounds {
        return RepStats {
            finals,
            checkpoint_errors: Vec::new(),
            est_sq: Vec::new(),
            oscillation: Vec::new(),
        };
    }
    let base = run.target(k0);
    RepStats {
        finals,
        checkpoint_errors: checkpoints.iter().map(|k| run.error_norm(k + 1)).collect(),
        est_sq: (0..=run.n).map(|k| run.estimate(k).iter().map(|v| v * v).sum()).collect(),
        oscillation: (k0..run.n).map(|i| norm2(&crate::stats::sub(run.target(i + 1), base))).collect(),
    }
}

/// Evenly spaced checkpoints in `[k₀, n − 1]`, both ends included.
pub fn checkpoints(k0: usize, n: usize, count: usize) -> Vec<usize> {
    let hi = n - 1;
    if count <= 1 || hi <= k0 {
        return vec![hi];
    }
    let mut out: Vec<usize> = (0..count)
        .map(|j| k0 + ((hi - k0) as f64 * j as f64 / (count - 1) as f64).round() as usize)
        .collect();
    out.dedup();
    out
}

/// Runs every horizon once. With `with_bounds`, the same replications feed
/// the first-moment bound comparison on the post-burn-in window.
pub fn run_sweep(cfg: &ExperimentConfig, with_bounds: bool) -> Result<SweepOutput> {
    cfg.validate()?;
    let (theoretical, log_power) = cfg.theoretical_rate()?;
    let gain = cfg.gain_spec()?;
    let constants = if with_bounds { Some(bound_constants(cfg)?) } else { None };
    let mut rows = Vec::new();
    let mut tables = Vec::new();
    let (mut m1, mut m2, mut mp) = (Vec::new(), Vec::new(), Vec::new());

    for &n in &cfg.horizons {
        let model = cfg.model_for(n)?;
        let tcfg = cfg.tracking_config(n)?;
        let k0 = cfg.burn_in(n);
        let cps = checkpoints(k0, n, cfg.checkpoints);
        let mut finals = Vec::with_capacity(cfg.replications);
        let mut err_sums = vec![(KahanSum::new(), KahanSum::new()); cps.len()];
        let mut est_sums = vec![KahanSum::new(); if with_bounds { n + 1 } else { 0 }];
        let mut osc_sums = vec![KahanSum::new(); if with_bounds { n - k0 } else { 0 }];

        for start in (0..cfg.replications).step_by(BLOCK) {
            let end = (start + BLOCK).min(cfg.replications);
            let block: Vec<RepStats> = (start..end)
                .into_par_iter()
                .map(|i| {
                    let seed = replication_seed(cfg.seed, i);
                    run_tracking(&tcfg, model.as_ref(), &gain, seed)
                        .map(|run| rep_stats(&run, cfg.p, k0, &cps, with_bounds))
                        .map_err(|e| Error::Replication {
                            horizon: n,
                            replication: i,
                            source: Box::new(e),
                        })
                })
                .collect::<Result<_>>()?;
            for (j, s) in block.into_iter().enumerate() {
                let i = start + j;
                rows.push(RateRow {
                    horizon: n,
                    replication: i,
                    l1: s.finals[0],
                    l2: s.finals[1],
                    lp: s.finals[2],
                    p: cfg.p,
                    seed: replication_seed(cfg.seed, i),
                });
                finals.push(s.finals);
                for ((a, b), v) in err_sums.iter_mut().zip(&s.checkpoint_errors) {
                    a.add(*v);
                    b.add(v * v);
                }
                for (a, v) in est_sums.iter_mut().zip(&s.est_sq) {
                    a.add(*v);
                }
                for (a, v) in osc_sums.iter_mut().zip(&s.oscillation) {
                    a.add(*v);
                }
            }
        }
        let col = |c: usize| finals.iter().map(|f| f[c]).collect::<Vec<_>>();
        m1.push(mean_se(&col(0)));
        m2.push(mean_se(&col(1)));
        mp.push(mean_se(&col(2)));

        if let Some(consts) = &constants {
            let r = cfg.replications as f64;
            let c_theta_bar = est_sums.iter().map(|s| s.value() / r).fold(0.0, f64::max);
            let osc_means: Vec<f64> = osc_sums.iter().map(|s| s.value() / r).collect();
            let empirical: Vec<MeanSe> = err_sums
                .iter()
                .map(|(a, b)| {
                    let mean = a.value() / r;
                    let var = if r > 1.0 { ((b.value() - r * mean * mean) / (r - 1.0)).max(0.0) } else { 0.0 };
                    MeanSe {
                        mean,
                        se: (var / r).sqrt(),
                    }
                })
                .collect();
            let gammas = tcfg.schedule.sequence(n)?;
            tables.push(bound_table(consts, n, k0, &cps, &gammas, c_theta_bar, &osc_means, &empirical)?);
        }
    }

    let pairs: Vec<(f64, f64)> = cfg.horizons.iter().zip(&m2).map(|(n, m)| (*n as f64, m.mean)).collect();
    let fit = if pairs.len() >= 2 { Some(fit_rate_fixed_log(&pairs, log_power)?) } else { None };
    let free_fit = if pairs.len() >= 4 { Some(fit_rate(&pairs)?) } else { None };
    let pass = fit.as_ref().is_some_and(|f| (f.slope - theoretical).abs() <= cfg.rate_tolerance);
    let regime = cfg.schedule_for(cfg.horizons[0])?.regime_name();
    Ok(SweepOutput {
        rows,
        report: RateReport {
            regime,
            horizons: cfg.horizons.clone(),
            mean_l1: m1,
            mean_l2: m2,
            mean_lp: mp,
            p: cfg.p,
            fit,
            log_power,
            free_fit,
            theoretical,
            tolerance: cfg.rate_tolerance,
            pass,
        },
        bounds: tables,
    })
}

struct BoundConstants {
    lambda1: f64,
    lambda2: f64,
    c_g: f64,
    c_theta: f64,
}

fn bound_constants(cfg: &ExperimentConfig) -> Result<BoundConstants> {
    let need = |v: Option<f64>, key: &str| v.ok_or_else(|| Error::Config(format!("bound checks need {key}")));
    Ok(BoundConstants {
        lambda1: need(cfg.declared.lambda1, "constants.lambda1")?,
        lambda2: need(cfg.declared.lambda2, "constants.lambda2")?,
        c_g: need(cfg.declared.c_g, "constants.C_g")?,
        c_theta: cfg.c_theta,
    })
}

#[allow(clippy::too_many_arguments)]
fn bound_table(
    c: &BoundConstants,
    n: usize,
    k0: usize,
    cps: &[usize],
    gammas: &[f64],
    c_theta_bar: f64,
    osc_means: &[f64],
    empirical: &[MeanSe],
) -> Result<BoundTable> {
    let hi = *cps.last().expect("at least one checkpoint");
    bounds::check_steps(&gammas[k0..=hi], k0, c.lambda2)?;
    let inputs = BoundInputs::new(c.lambda1, c.lambda2, c.c_g, c.c_theta, c_theta_bar, k0, Vec::new());
    let (mut s, mut s2) = (KahanSum::new(), KahanSum::new());
    let mut osc = 0.0_f64;
    let mut next = k0;
    let mut rows = Vec::with_capacity(cps.len());
    for (cp, emp) in cps.iter().zip(empirical) {
        while next <= *cp {
            s.add(gammas[next]);
            s2.add(gammas[next] * gammas[next]);
            osc = osc.max(osc_means[next - k0]);
            next += 1;
        }
        let rhs = bounds::first_moment_rhs(&inputs, s.value(), s2.value(), osc);
        rows.push(BoundRow {
            k: *cp,
            empirical_mean: emp.mean,
            empirical_se: emp.se,
            bound_rhs: rhs,
            pass: emp.mean <= rhs + 4.0 * emp.se,
        });
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(BoundTable {
        horizon: n,
        k0,
        c_theta_bar,
        rows,
        pass,
    })
}

pub fn run_rate_sweep(cfg: &ExperimentConfig) -> Result<(RateReport, Vec<RateRow>)> {
    let out = run_sweep(cfg, false)?;
    Ok((out.report, out.rows))
}

pub fn run_bound_check(cfg: &ExperimentConfig) -> Result<Vec<BoundTable>> {
    Ok(run_sweep(cfg, true)?.bounds)
}

// ---------------------------------------------------------------------------
// Rate fitting

fn check_pairs(pairs: &[(f64, f64)], min: usize) -> Result<()> {
    if pairs.len() < min {
        return Err(Error::InvalidParameter(format!("rate fit needs at least {min} points, got {}", pairs.len())));
    }
    if pairs.iter().any(|(n, e)| !(*n > 1.0 && *e > 0.0 && n.is_finite() && e.is_finite())) {
        return Err(Error::InvalidParameter("rate fit needs n > 1 and positive finite errors".into()));
    }
    Ok(())
}

fn t_quantile(dof: usize) -> f64 {
    if dof == 0 {
        return f64::INFINITY;
    }
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

/// OLS of `log e` on `(1, log n, log log n)`; returns the `log n`
/// coefficient with its 95% half-width.
pub fn fit_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    check_pairs(pairs, 3)?;
    let m = pairs.len();
    let x = DMatrix::from_fn(m, 3, |i, j| {
        let ln = pairs[i].0.ln();
        [1.0, ln, ln.ln()][j]
    });
    let y = DVector::from_iterator(m, pairs.iter().map(|(_, e)| e.ln()));
    let xtx = x.transpose() * &x;
    let inv = xtx
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("rate fit design is singular".into()))?;
    let beta = &inv * x.transpose() * &y;
    let dof = m - 3;
    let half_width = if dof == 0 {
        f64::INFINITY
    } else {
        let resid = &y - &x * &beta;
        let s2 = resid.norm_squared() / dof as f64;
        t_quantile(dof) * (s2 * inv[(1, 1)]).sqrt()
    };
    Ok(RateFit {
        slope: beta[1],
        half_width,
        log_log: beta[2],
        dof,
    })
}

/// OLS of `log e − a log log n` on `(1, log n)`: the log factor enters with
/// a fixed power instead of a free coefficient.
pub fn fit_rate_fixed_log(pairs: &[(f64, f64)], log_power: f64) -> Result<RateFit> {
    check_pairs(pairs, 2)?;
    let m = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|(n, _)| n.ln()).collect();
    let ys: Vec<f64> = pairs.iter().zip(&xs).map(|((_, e), x)| e.ln() - log_power * x.ln()).collect();
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let dof = pairs.len() - 2;
    let half_width = if dof == 0 {
        f64::INFINITY
    } else {
        let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
        t_quantile(dof) * (rss / dof as f64 / sxx).sqrt()
    };
    Ok(RateFit {
        slope,
        half_width,
        log_log: log_power,
        dof,
    })
}

// ---------------------------------------------------------------------------
// Condition verification

pub fn condition_fixture(cfg: &ExperimentConfig) -> Result<ConditionFixture> {
    let PathSpec::Static { theta } = &cfg.path else {
        return Err(Error::Config("condition checks need a static path".into()));
    };
    let model = cfg.model_for(cfg.horizons[0])?;
    let gain = cfg.gain_spec()?;
    let need = |v: Option<f64>, key: &str| v.ok_or_else(|| Error::Config(format!("condition checks need {key}")));
    let constants = ConditionConstants {
        lambda1: need(cfg.declared.lambda1, "constants.lambda1")?,
        lipschitz: need(cfg.declared.lipschitz, "constants.L")?,
        lambda2: cfg.declared.lambda2,
        c_g: cfg.declared.c_g,
    };
    let depth = gain.history_depth();
    let pinned = cfg
        .verify
        .past
        .clone()
        .unwrap_or_else(|| vec![0.0; model.record_dim() * depth]);
    let past: PastSampler = match cfg.verify.mode {
        PastMode::Pinned => bounds::pinned_past(pinned),
        PastMode::Random => {
            let m = model.clone();
            let th = theta.clone();
            let stride = m.record_dim();
            Arc::new(move |rng| m.observe(0, &th, &th, Past::new(&pinned, stride), rng))
        }
    };
    Ok(ConditionFixture {
        name: format!("{:?}", cfg.gain),
        gain,
        model,
        truth: theta.clone(),
        past,
        constants,
    })
}

pub fn run_condition_verify(cfg: &ExperimentConfig) -> Result<ConditionReport> {
    let fixture = condition_fixture(cfg)?;
    let probes = bounds::default_probes(&fixture.truth);
    bounds::verify_mean_field_conditions(
        &fixture,
        &probes,
        VerifySettings {
            pasts: cfg.verify.pasts,
            samples: cfg.verify.samples,
            batches: cfg.verify.batches,
            seed: cfg.seed,
        },
    )
}

// ---------------------------------------------------------------------------
// Kalman comparison

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanRow {
    pub horizon: usize,
    pub kalman_error: MeanSe,
    pub tracker_error: MeanSe,
    pub kalman_gamma: f64,
    pub tracker_gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanReport {
    pub rows: Vec<KalmanRow>,
    /// With no state noise and `σ₀² = σ_ξ²` at the largest horizon: largest
    /// gap between the tracker on Kalman steps and the filter, and between
    /// the filter and the running mean of `(m₀, X_1, ..., X_k)`.
    pub tracker_gap: f64,
    pub mean_gap: f64,
    pub pass: bool,
}

/// Equivalence tolerance for the no-drift reduction.
pub const KALMAN_TOLERANCE: f64 = 1e-12;

/// Gaps of the no-drift reduction over `n` steps.
pub fn kalman_equivalence(m0: f64, sigma_sq: f64, n: usize, seed: u64) -> Result<(f64, f64)> {
    let kc = KalmanConfig {
        m0,
        sigma0_sq: sigma_sq,
        sigma_xi_sq: sigma_sq,
        delta: StateNoise::Zero,
    };
    let (thetas, obs) = kalman::simulate_kalman_model(&kc, n, seed)?;
    let filter = kalman::kalman_filter_run(&kc, &obs)?;
    let tracker = kalman::tracker_on_observations(m0, &obs, &thetas, kalman::kalman_steps(&kc, n)?)?;
    let tracker_gap = tracker
        .iter()
        .zip(&filter.estimates)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mut acc = KahanSum::new();
    acc.add(m0);
    let mut mean_gap = (filter.estimates[0] - m0).abs();
    for (k, x) in obs.iter().enumerate() {
        acc.add(*x);
        mean_gap = mean_gap.max((filter.estimates[k + 1] - acc.value() / (k as f64 + 2.0)).abs());
    }
    Ok((tracker_gap, mean_gap))
}

pub fn run_kalman_compare(cfg: &ExperimentConfig) -> Result<KalmanReport> {
    cfg.validate()?;
    let k = &cfg.kalman;
    let kc = KalmanConfig {
        m0: k.m0,
        sigma0_sq: k.sigma0_sq,
        sigma_xi_sq: k.sigma_xi_sq,
        delta: if k.delta_c == 0.0 {
            StateNoise::Zero
        } else {
            StateNoise::Power {
                c: k.delta_c,
                beta: k.delta_beta,
            }
        },
    };
    kc.validate()?;
    let mut rows = Vec::new();
    for &n in &cfg.horizons {
        let steps = cfg.schedule_for(n)?.sequence(n)?;
        let pairs = replicate(cfg.replications, cfg.seed, |_, seed| {
            let (thetas, obs) = kalman::simulate_kalman_model(&kc, n, seed)?;
            let filter = kalman::kalman_filter_run(&kc, &obs)?;
            let tracker = kalman::tracker_on_observations(k.m0, &obs, &thetas, steps.clone())?;
            Ok(((filter.estimates[n] - thetas[n]).abs(), (tracker[n] - thetas[n]).abs()))
        })?;
        let kf: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let tr: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        rows.push(KalmanRow {
            horizon: n,
            kalman_error: mean_se(&kf),
            tracker_error: mean_se(&tr),
            kalman_gamma: kalman::kalman_gain_sequence(&kc, n)?[n],
            tracker_gamma: steps[n - 1],
        });
    }
    let n = *cfg.horizons.last().expect("validated nonempty");
    let (tracker_gap, mean_gap) = kalman_equivalence(k.m0, k.sigma_xi_sq, n, cfg.seed)?;
    Ok(KalmanReport {
        rows,
        tracker_gap,
        mean_gap,
        pass: tracker_gap <= KALMAN_TOLERANCE && mean_gap <= KALMAN_TOLERANCE,
    })
}

// ---------------------------------------------------------------------------
// CSV

/// Seventeen significant digits: enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Io("empty CSV".into()))?
            .split(',')
            .map(str::to_string)
            .collect();
        let rows = lines
            .map(|l| {
                let r: Vec<String> = l.split(',').map(str::to_string).collect();
                if r.len() == header.len() {
                    Ok(r)
                } else {
                    Err(Error::Io(format!("CSV row has {} fields, header has {}", r.len(), header.len())))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { header, rows })
    }

    /// Numeric column; empty fields read as `None`.
    pub fn column(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let idx = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Io(format!("no column `{name}`")))?;
        self.rows
            .iter()
            .map(|r| {
                let v = &r[idx];
                if v.is_empty() {
                    Ok(None)
                } else {
                    v.parse().map(Some).map_err(|_| Error::Io(format!("`{v}` in `{name}` is not numeric")))
                }
            })
            .collect()
    }
}

/// Writes `csv` to `path` (UTF-8, LF line endings).
pub fn emit_csv(csv: &Csv, path: &Path) -> Result<()> {
    std::fs::write(path, csv.render())?;
    Ok(())
}

pub fn rate_csv(rows: &[RateRow]) -> Csv {
    let mut csv = Csv::new(&["horizon", "replication", "final_error_l1", "final_error_l2", "final_error_lp", "p", "seed"]);
    for r in rows {
        csv.push(vec![
            r.horizon.to_string(),
            r.replication.to_string(),
            fmt_f64(r.l1),
            fmt_f64(r.l2),
            fmt_f64(r.lp),
            fmt_f64(r.p),
            r.seed.to_string(),
        ]);
    }
    csv
}

/// Rows of every horizon, in increasing horizon order.
pub fn bound_csv(tables: &[BoundTable]) -> Csv {
    let mut csv = Csv::new(&["k", "empirical_mean", "empirical_se", "bound_rhs", "pass"]);
    for t in tables {
        for r in &t.rows {
            csv.push(vec![
                r.k.to_string(),
                fmt_f64(r.empirical_mean),
                fmt_f64(r.empirical_se),
                fmt_f64(r.bound_rhs),
                pass_str(r.pass),
            ]);
        }
    }
    csv
}

/// One row per probe, then a `lambda_min` row carrying the smallest fitted
/// eigenvalue, its SE and the largest eigenvalue.
pub fn verify_csv(report: &ConditionReport) -> Csv {
    let mut csv = Csv::new(&["probe_index", "r_hat", "r_se", "g_norm_ratio", "c_g_hat", "pass"]);
    for (i, p) in report.probes.iter().enumerate() {
        csv.push(vec![
            i.to_string(),
            fmt_f64(p.r_hat),
            fmt_f64(p.r_se),
            fmt_f64(p.g_norm_ratio),
            fmt_f64(p.c_g_hat),
            pass_str(p.pass),
        ]);
    }
    if let Some(e) = report.eigen {
        csv.push(vec![
            "lambda_min".into(),
            fmt_f64(e.lambda_min),
            fmt_f64(e.lambda_min_se),
            fmt_f64(e.lambda_max),
            String::new(),
            pass_str(e.pass),
        ]);
    }
    csv
}

pub fn kalman_csv(report: &KalmanReport) -> Csv {
    let mut csv = Csv::new(&[
        "horizon",
        "kalman_error",
        "kalman_se",
        "tracker_error",
        "tracker_se",
        "kalman_gamma",
        "tracker_gamma",
    ]);
    for r in &report.rows {
        csv.push(vec![
            r.horizon.to_string(),
            fmt_f64(r.kalman_error.mean),
            fmt_f64(r.kalman_error.se),
            fmt_f64(r.tracker_error.mean),
            fmt_f64(r.tracker_error.se),
            fmt_f64(r.kalman_gamma),
            fmt_f64(r.tracker_gamma),
        ]);
    }
    csv
}

/// `k, gamma, error_norm, estimate_1..d, target_1..d`; the last row has no step.
pub fn single_run_csv(run: &TrackingRun) -> Csv {
    let mut header = vec!["k".to_string(), "gamma".into(), "error_norm".into()];
    header.extend((1..=run.d).map(|i| format!("estimate_{i}")));
    header.extend((1..=run.d).map(|i| format!("target_{i}")));
    let mut csv = Csv {
        header,
        rows: Vec::with_capacity(run.n + 1),
    };
    for k in 0..=run.n {
        let mut row = vec![
            k.to_string(),
            run.gammas.get(k).map_or(String::new(), |g| fmt_f64(*g)),
            fmt_f64(run.error_norm(k)),
        ];
        row.extend(run.estimate(k).iter().map(|v| fmt_f64(*v)));
        row.extend(run.target(k).iter().map(|v| fmt_f64(*v)));
        csv.push(row);
    }
    csv
}

fn pass_str(pass: bool) -> String {
    if pass { "PASS" } else { "FAIL" }.to_string()
}

// ---------------------------------------------------------------------------
// Dispatch

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub pass: bool,
    pub csv: Csv,
    /// Human-readable summary lines.
    pub summary: String,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut summary = String::new();
    let (pass, csv) = match cfg.kind {
        ExperimentKind::SingleRun => {
            let n = *cfg.horizons.last().expect("validated nonempty");
            let model = cfg.model_for(n)?;
            let run = run_tracking(&cfg.tracking_config(n)?, model.as_ref(), &cfg.gain_spec()?, cfg.seed)?;
            let _ = writeln!(summary, "n = {n}, final error {:.6e}", run.error_norm(n));
            (true, single_run_csv(&run))
        }
        ExperimentKind::RateSweep => {
            let (r, rows) = run_rate_sweep(cfg)?;
            for (n, m) in r.horizons.iter().zip(&r.mean_l2) {
                let _ = writeln!(summary, "n = {n}: E|delta_n| = {:.6e} (se {:.2e})", m.mean, m.se);
            }
            match &r.fit {
                Some(f) => {
                    let _ = writeln!(
                        summary,
                        "{} slope {:.4} +/- {:.4} (log power {:.4}), theory {:.4}, tolerance {}: {}",
                        r.regime,
                        f.slope,
                        f.half_width,
                        r.log_power,
                        r.theoretical,
                        r.tolerance,
                        pass_str(r.pass)
                    );
                }
                None => {
                    let _ = writeln!(summary, "a slope needs at least two horizons: FAIL");
                }
            }
            if let Some(f) = &r.free_fit {
                let _ = writeln!(summary, "free fit slope {:.4} +/- {:.4}, log log coefficient {:.4}", f.slope, f.half_width, f.log_log);
            }
            (r.pass, rate_csv(&rows))
        }
        ExperimentKind::BoundCheck => {
            let tables = run_bound_check(cfg)?;
            for t in &tables {
                let worst = t
                    .rows
                    .iter()
                    .map(|r| r.empirical_mean / r.bound_rhs)
                    .fold(0.0, f64::max);
                let _ = writeln!(
                    summary,
                    "n = {}: k0 = {}, measured bar C_Theta = {:.4e}, max empirical/bound = {:.4}: {}",
                    t.horizon,
                    t.k0,
                    t.c_theta_bar,
                    worst,
                    pass_str(t.pass)
                );
            }
            (tables.iter().all(|t| t.pass), bound_csv(&tables))
        }
        ExperimentKind::ConditionVerify => {
            let r = run_condition_verify(cfg)?;
            let failed = r.probes.iter().filter(|p| !p.pass).count();
            let _ = writeln!(summary, "{} probes, {failed} failed", r.probes.len());
            if let Some(e) = r.eigen {
                let _ = writeln!(
                    summary,
                    "fitted eigenvalues: min {:.4e} (se {:.2e}), max {:.4e}: {}",
                    e.lambda_min,
                    e.lambda_min_se,
                    e.lambda_max,
                    pass_str(e.pass)
                );
            }
            let _ = writeln!(summary, "|g(theta)| = {:.3e} (se {:.2e})", r.gain_at_truth.mean, r.gain_at_truth.se);
            (r.pass, verify_csv(&r))
        }
        ExperimentKind::KalmanCompare => {
            let r = run_kalman_compare(cfg)?;
            for row in &r.rows {
                let _ = writeln!(
                    summary,
                    "n = {}: Kalman {:.4e}, tracker {:.4e}",
                    row.horizon, row.kalman_error.mean, row.tracker_error.mean
                );
            }
            let _ = writeln!(
                summary,
                "no-drift reduction: tracker gap {:.2e}, running-mean gap {:.2e}: {}",
                r.tracker_gap,
                r.mean_gap,
                pass_str(r.pass)
            );
            (r.pass, kalman_csv(&r))
        }
    };
    Ok(Outcome { pass, csv, summary })
}

//! Scalar Kalman filter for a random-walk parameter observed in Gaussian
//! noise, and its reading as a tracker with a particular step sequence.
//!
//! State `θ_k = θ_{k−1} + δ_k ε_k`, observation `X_k = θ_k + ξ_k`, prior
//! `θ_0 ~ N(m₀, σ₀²)`. The filter is `θ̂_k = θ̂_{k−1} + γ_k(X_k − θ̂_{k−1})`
//! with `γ_0 = σ₀²/σ_ξ²` and
//! `γ_k = (γ_{k−1} + δ_k²/σ_ξ²) / (γ_{k−1} + δ_k²/σ_ξ² + 1)`.

use crate::error::{Error, Result};
use crate::gains::{GainSpec, SignalNoiseGain};
use crate::models::Replay;
use crate::rng::{streams, SplitMix64};
use crate::schedules::{ScheduleKind, StepSchedule};
use crate::tracking::{run_tracking, TrackingConfig};

/// State-noise scales `δ_k`, `k ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum StateNoise {
    Zero,
    Constant(f64),
    /// `c k^{−β}`.
    Power { c: f64, beta: f64 },
    /// `δ_1, δ_2, ...`.
    Explicit(Vec<f64>),
}

impl StateNoise {
    pub fn delta(&self, k: usize) -> f64 {
        match self {
            StateNoise::Zero => 0.0,
            StateNoise::Constant(c) => *c,
            StateNoise::Power { c, beta } => c * (k as f64).powf(-beta),
            StateNoise::Explicit(v) => v.get(k.wrapping_sub(1)).copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanConfig {
    pub m0: f64,
    pub sigma0_sq: f64,
    pub sigma_xi_sq: f64,
    pub delta: StateNoise,
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0_sq > 0.0 && self.sigma_xi_sq > 0.0) || !self.m0.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Kalman variances must be positive and m0 finite, got sigma0^2={}, sigma_xi^2={}, m0={}",
                self.sigma0_sq, self.sigma_xi_sq, self.m0
            )));
        }
        Ok(())
    }
}

/// `γ_0, γ_1, ..., γ_n`.
pub fn kalman_gain_sequence(config: &KalmanConfig, n: usize) -> Result<Vec<f64>> {
    config.validate()?;
    let mut out = Vec::with_capacity(n + 1);
    let mut g = config.sigma0_sq / config.sigma_xi_sq;
    out.push(g);
    for k in 1..=n {
        let d = config.delta.delta(k);
        if !(d >= 0.0 && d.is_finite()) {
            return Err(Error::InvalidParameter(format!("state noise delta_{k} = {d} is not a finite nonnegative value")));
        }
        let a = g + d * d / config.sigma_xi_sq;
        g = a / (a + 1.0);
        out.push(g);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanOutput {
    /// `θ̂_0 = m₀, θ̂_1, ..., θ̂_n`.
    pub estimates: Vec<f64>,
    /// `σ_ξ² γ_k`, `k = 0..=n`.
    pub mse: Vec<f64>,
    pub gammas: Vec<f64>,
}

/// Filters `X_1, ..., X_n` (passed as `observations[0..n]`).
pub fn kalman_filter_run(config: &KalmanConfig, observations: &[f64]) -> Result<KalmanOutput> {
    let n = observations.len();
    let gammas = kalman_gain_sequence(config, n)?;
    let mut estimates = Vec::with_capacity(n + 1);
    let mut th = config.m0;
    estimates.push(th);
    for (k, x) in observations.iter().enumerate() {
        th += gammas[k + 1] * (x - th);
        estimates.push(th);
    }
    let mse = gammas.iter().map(|g| config.sigma_xi_sq * g).collect();
    Ok(KalmanOutput { estimates, mse, gammas })
}

/// Filter with explicit observation-count check.
pub fn kalman_filter_run_checked(config: &KalmanConfig, observations: &[f64], n: usize) -> Result<KalmanOutput> {
    if observations.len() != n {
        return Err(Error::Dimension {
            context: "Kalman observations",
            expected: n,
            got: observations.len(),
        });
    }
    kalman_filter_run(config, observations)
}

/// Draws `θ_0..θ_n` and `X_1..X_n` from the state-space model.
pub fn simulate_kalman_model(config: &KalmanConfig, n: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    config.validate()?;
    let mut rng = SplitMix64::stream(seed, streams::OBSERVATIONS);
    let mut path_rng = SplitMix64::stream(seed, streams::PATH);
    let mut theta = config.m0 + config.sigma0_sq.sqrt() * path_rng.normal();
    let mut thetas = vec![theta];
    let mut obs = Vec::with_capacity(n);
    let sxi = config.sigma_xi_sq.sqrt();
    for k in 1..=n {
        theta += config.delta.delta(k) * path_rng.normal();
        thetas.push(theta);
        obs.push(theta + sxi * rng.normal());
    }
    Ok((thetas, obs))
}

/// Runs the tracker with the signal gain on `X_1..X_n`, starting from
/// `θ̂_0 = m₀`. Tracker step `j` consumes `X_{j+1}` with step
/// `steps[j]`; `targets` are `θ_0..θ_n` and only feed the error columns.
pub fn tracker_on_observations(
    m0: f64,
    observations: &[f64],
    targets: &[f64],
    steps: Vec<f64>,
) -> Result<Vec<f64>> {
    let n = observations.len();
    if targets.len() != n + 1 || steps.len() < n {
        return Err(Error::Precondition(format!(
            "need {} targets and {n} steps, got {} and {}",
            n + 1,
            targets.len(),
            steps.len()
        )));
    }
    let c_theta = targets.iter().fold(f64::MIN_POSITIVE, |m, t| m.max(t * t));
    let replay = Replay::new(
        observations.to_vec(),
        1,
        targets.iter().map(|t| vec![*t]).collect(),
        Vec::new(),
        c_theta,
    )?;
    let schedule = StepSchedule::new(ScheduleKind::Explicit(steps))?;
    let cfg = TrackingConfig::new(vec![m0], n, schedule)?;
    let run = run_tracking(&cfg, &replay, &GainSpec::new(SignalNoiseGain { d: 1 }), 0)?;
    Ok(run.estimates)
}

/// Kalman gains `γ_1..γ_n` laid out as tracker steps.
pub fn kalman_steps(config: &KalmanConfig, n: usize) -> Result<Vec<f64>> {
    Ok(kalman_gain_sequence(config, n)?[1..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::KahanSum;

    fn unit() -> KalmanConfig {
        KalmanConfig {
            m0: 0.0,
            sigma0_sq: 1.0,
            sigma_xi_sq: 1.0,
            delta: StateNoise::Zero,
        }
    }

    #[test]
    fn gain_sequence_examples() {
        let g = kalman_gain_sequence(&unit(), 50).unwrap();
        for (k, v) in g.iter().enumerate() {
            assert!((v - 1.0 / (k as f64 + 1.0)).abs() < 1e-15, "{k}");
        }
        let big = KalmanConfig {
            delta: StateNoise::Constant(1e3),
            ..unit()
        };
        let g = kalman_gain_sequence(&big, 10).unwrap();
        assert!(g[1..].iter().all(|v| *v < 1.0 && *v > 1.0 - 1e-6));
        let c = KalmanConfig {
            sigma0_sq: 3.0,
            sigma_xi_sq: 2.0,
            ..unit()
        };
        assert_eq!(kalman_gain_sequence(&c, 0).unwrap(), vec![1.5]);
    }

    #[test]
    fn gains_stay_in_unit_interval() {
        let c = KalmanConfig {
            sigma0_sq: 40.0,
            delta: StateNoise::Power { c: 2.0, beta: 0.75 },
            ..unit()
        };
        let g = kalman_gain_sequence(&c, 10_000).unwrap();
        assert!(g[1..].iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn filter_examples() {
        let c = KalmanConfig {
            sigma0_sq: 1.0,
            sigma_xi_sq: 1.0,
            ..unit()
        };
        let out = kalman_filter_run(&c, &[3.0]).unwrap();
        assert_eq!(out.gammas[1], 0.5);
        assert_eq!(out.estimates[1], 1.5);
        for (m, g) in out.mse.iter().zip(&out.gammas) {
            assert_eq!(*m, g * c.sigma_xi_sq);
        }
        assert!(kalman_filter_run_checked(&c, &[1.0, 2.0], 3).is_err());
    }

    #[test]
    fn zero_drift_is_running_mean_with_prior_as_first_sample() {
        let c = KalmanConfig { m0: 0.7, ..unit() };
        let (_, obs) = simulate_kalman_model(&c, 10_000, 3).unwrap();
        let out = kalman_filter_run(&c, &obs).unwrap();
        let mut acc = KahanSum::new();
        acc.add(c.m0);
        for (k, x) in obs.iter().enumerate() {
            acc.add(*x);
            let mean = acc.value() / (k as f64 + 2.0);
            assert!((out.estimates[k + 1] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn tracker_reproduces_filter() {
        let c = KalmanConfig {
            m0: -0.2,
            sigma0_sq: 2.0,
            sigma_xi_sq: 0.5,
            delta: StateNoise::Power { c: 0.3, beta: 1.0 },
        };
        let (thetas, obs) = simulate_kalman_model(&c, 2000, 8).unwrap();
        let out = kalman_filter_run(&c, &obs).unwrap();
        let tr = tracker_on_observations(c.m0, &obs, &thetas, kalman_steps(&c, 2000).unwrap()).unwrap();
        assert_eq!(tr, out.estimates);
    }

    #[test]
    fn mse_matches_monte_carlo() {
        let c = KalmanConfig {
            m0: 1.0,
            sigma0_sq: 1.0,
            sigma_xi_sq: 1.0,
            delta: StateNoise::Constant(0.5),
        };
        let n = 40;
        let reps = 20_000;
        let mut sq = Vec::with_capacity(reps);
        for r in 0..reps {
            let (th, obs) = simulate_kalman_model(&c, n, r as u64).unwrap();
            let out = kalman_filter_run(&c, &obs).unwrap();
            sq.push((out.estimates[n] - th[n]).powi(2));
        }
        let m = crate::stats::mean_se(&sq);
        let g = kalman_gain_sequence(&c, n).unwrap()[n];
        assert!((m.mean - g).abs() < 4.0 * m.se, "{m:?} vs {g}");
    }
}

//! The online recursion `θ̂_{k+1} = θ̂_k + γ_k G_k(θ̂_k, X_k)`, optionally
//! followed by a projection onto a box or ball.

use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::gains::{check_output, GainSpec, Past};
use crate::models::Simulator;
use crate::rng::{streams, SplitMix64};
use crate::schedules::StepSchedule;
use crate::stats::norm2;

/// Estimates beyond `DIVERGENCE_FACTOR · (1 + ‖θ̂_0‖)` abort the run.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// `θ̂ + γG`.
pub fn step_update(theta_hat: &[f64], gamma: f64, g: &[f64]) -> Result<Vec<f64>> {
    ensure_dim("step update", theta_hat.len(), g.len())?;
    check_step_inputs(theta_hat, gamma, g)?;
    Ok(theta_hat.iter().zip(g).map(|(t, g)| t + gamma * g).collect())
}

fn check_step_inputs(theta_hat: &[f64], gamma: f64, g: &[f64]) -> Result<()> {
    ensure_finite(theta_hat, "estimate")?;
    ensure_finite(g, "gain")?;
    if !gamma.is_finite() {
        return Err(Error::NonFinite("step size"));
    }
    // γ = 0 is allowed so that frozen schedules can be expressed.
    if gamma < 0.0 {
        return Err(Error::InvalidParameter(format!("step size must be >= 0, got {gamma}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionRegion {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl ProjectionRegion {
    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        ensure_dim("box bounds", lower.len(), upper.len())?;
        ensure_finite(&lower, "box bounds")?;
        ensure_finite(&upper, "box bounds")?;
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(Error::InvalidParameter("box needs lower <= upper componentwise".into()));
        }
        Ok(ProjectionRegion::Box { lower, upper })
    }

    pub fn new_ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        ensure_finite(&center, "ball center")?;
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!("ball radius must be positive, got {radius}")));
        }
        Ok(ProjectionRegion::Ball { center, radius })
    }

    pub fn dim(&self) -> usize {
        match self {
            ProjectionRegion::Box { lower, .. } => lower.len(),
            ProjectionRegion::Ball { center, .. } => center.len(),
        }
    }

    /// Membership with a relative slack of a few ulps for points that were
    /// produced by [`ProjectionRegion::project`].
    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            ProjectionRegion::Box { lower, upper } => {
                x.iter().zip(lower.iter().zip(upper)).all(|(v, (l, u))| *l <= *v && *v <= *u)
            }
            ProjectionRegion::Ball { center, radius } => {
                let r = norm2(&crate::stats::sub(x, center));
                r <= radius * (1.0 + 4.0 * f64::EPSILON)
            }
        }
    }

    /// Nearest point of the region: componentwise clamp or radial scaling.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ProjectionRegion::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, u))| v.clamp(*l, *u))
                .collect(),
            ProjectionRegion::Ball { center, radius } => {
                let diff = crate::stats::sub(x, center);
                let r = norm2(&diff);
                if r <= *radius {
                    return x.to_vec();
                }
                let s = radius / r;
                center.iter().zip(&diff).map(|(c, d)| c + s * d).collect()
            }
        }
    }
}

/// `Π(θ̂ + γG)`; `θ̂` must already lie in the region.
pub fn projected_step_update(
    theta_hat: &[f64],
    gamma: f64,
    g: &[f64],
    region: &ProjectionRegion,
) -> Result<Vec<f64>> {
    ensure_dim("projected step", region.dim(), theta_hat.len())?;
    let next = step_update(theta_hat, gamma, g)?;
    if !region.contains(theta_hat) {
        return Err(Error::Precondition(format!(
            "estimate {theta_hat:?} lies outside the projection region"
        )));
    }
    Ok(region.project(&next))
}

#[derive(Debug, Clone)]
pub struct TrackingConfig {
    pub d: usize,
    pub n: usize,
    pub initial_estimate: Vec<f64>,
    pub schedule: StepSchedule,
    pub projection: Option<ProjectionRegion>,
}

impl TrackingConfig {
    pub fn new(initial_estimate: Vec<f64>, n: usize, schedule: StepSchedule) -> Result<Self> {
        let cfg = Self {
            d: initial_estimate.len(),
            n,
            initial_estimate,
            schedule,
            projection: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_projection(mut self, region: ProjectionRegion) -> Result<Self> {
        self.projection = Some(region);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        if self.d == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        ensure_dim("initial estimate", self.d, self.initial_estimate.len())?;
        ensure_finite(&self.initial_estimate, "initial estimate")?;
        if let Some(region) = &self.projection {
            ensure_dim("projection region", self.d, region.dim())?;
            if !region.contains(&self.initial_estimate) {
                return Err(Error::Precondition("initial estimate lies outside the projection region".into()));
            }
        }
        Ok(())
    }
}

/// A stored trajectory. Vectors are flattened row by row: estimates,
/// targets and errors hold `n + 1` rows of width `d`; observations hold `n`
/// records `X_0, ..., X_{n−1}` of width `record_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingRun {
    pub d: usize,
    pub n: usize,
    pub record_dim: usize,
    pub estimates: Vec<f64>,
    pub targets: Vec<f64>,
    pub errors: Vec<f64>,
    pub observations: Vec<f64>,
    pub initial_history: Vec<f64>,
    pub gammas: Vec<f64>,
    pub seed: u64,
    pub oracle_queries: u64,
}

impl TrackingRun {
    pub fn estimate(&self, k: usize) -> &[f64] {
        &self.estimates[k * self.d..(k + 1) * self.d]
    }

    pub fn target(&self, k: usize) -> &[f64] {
        &self.targets[k * self.d..(k + 1) * self.d]
    }

    /// `δ_k = θ̂_k − θ_k`.
    pub fn error(&self, k: usize) -> &[f64] {
        &self.errors[k * self.d..(k + 1) * self.d]
    }

    pub fn observation(&self, k: usize) -> &[f64] {
        &self.observations[k * self.record_dim..(k + 1) * self.record_dim]
    }

    pub fn error_norm(&self, k: usize) -> f64 {
        norm2(self.error(k))
    }

    pub fn error_norms(&self) -> Vec<f64> {
        (0..=self.n).map(|k| self.error_norm(k)).collect()
    }

    /// Initial history followed by `X_0, ..., X_{k−1}`: the past seen at step `k`.
    pub fn past_at(&self, k: usize) -> Vec<f64> {
        let mut v = self.initial_history.clone();
        v.extend_from_slice(&self.observations[..k * self.record_dim]);
        v
    }
}

/// Runs the online loop for `config.n` steps. At step `k` the model emits
/// `θ_k` from the past, draws `X_k`, and the estimate moves along
/// `γ_k G(θ̂_k, X_k, past)`. Deterministic in `seed`.
pub fn run_tracking(
    config: &TrackingConfig,
    model: &dyn Simulator,
    gain: &GainSpec,
    seed: u64,
) -> Result<TrackingRun> {
    config.validate()?;
    let (d, n) = (config.d, config.n);
    ensure_dim("model parameter", d, model.param_dim())?;
    ensure_dim("gain", d, gain.dim())?;
    if gain.history_depth() > model.history_depth() {
        return Err(Error::Precondition(format!(
            "gain reads {} past record(s) but the model provides {}",
            gain.history_depth(),
            model.history_depth()
        )));
    }
    let stride = model.record_dim();
    let gammas = config.schedule.sequence(n)?;

    let mut init_rng = SplitMix64::stream(seed, streams::INITIAL);
    let mut obs_rng = SplitMix64::stream(seed, streams::OBSERVATIONS);
    let mut gain_rng = SplitMix64::stream(seed, streams::GAIN);
    let mut history = model.initial_history(&mut init_rng)?;
    ensure_dim("initial history", stride * model.history_depth(), history.len())?;
    let h0 = history.len();
    history.reserve(n * stride);

    let mut walker = model.path().walker(seed);
    let mut estimates = Vec::with_capacity((n + 1) * d);
    let mut targets = Vec::with_capacity((n + 1) * d);
    let mut theta_hat = config.initial_estimate.clone();
    let limit = DIVERGENCE_FACTOR * (1.0 + norm2(&theta_hat));

    for k in 0..n {
        let past = Past::new(&history, stride);
        let theta = walker.next(past)?;
        estimates.extend_from_slice(&theta_hat);
        targets.extend_from_slice(&theta);

        let x = model.observe(k, &theta, &theta_hat, past, &mut obs_rng)?;
        ensure_dim("observation record", stride, x.len())?;
        let g = gain
            .gain
            .evaluate(&theta_hat, &x, past, &mut gain_rng)
            .and_then(|e| check_output(&e.value, d).map(|_| e.value))
            .map_err(|e| Error::Gain {
                step: k,
                reason: e.to_string(),
            })?;
        history.extend_from_slice(&x);

        let gamma = gammas[k];
        if !gamma.is_finite() {
            return Err(Error::Gain {
                step: k,
                reason: format!("step size {gamma} is not finite"),
            });
        }
        theta_hat = match &config.projection {
            Some(region) => projected_step_update(&theta_hat, gamma, &g, region)?,
            None => step_update(&theta_hat, gamma, &g)?,
        };
        let norm = norm2(&theta_hat);
        if !(norm <= limit) {
            return Err(Error::Divergence { step: k + 1, norm, limit });
        }
    }
    let theta_n = walker.next(Past::new(&history, stride))?;
    estimates.extend_from_slice(&theta_hat);
    targets.extend_from_slice(&theta_n);

    let errors = estimates.iter().zip(&targets).map(|(e, t)| e - t).collect();
    let observations = history.split_off(h0);
    Ok(TrackingRun {
        d,
        n,
        record_dim: stride,
        estimates,
        targets,
        errors,
        observations,
        initial_history: history,
        gammas,
        seed,
        oracle_queries: (n * model.queries_per_step()) as u64,
    })
}

/// Recomputes `θ̂_1, ..., θ̂_n` from a stored run using only the pure update
/// and the stored records. The gain is evaluated with a fresh gain stream,
/// so randomized gains replay exactly as well.
pub fn replay_estimates(run: &TrackingRun, config: &TrackingConfig, gain: &GainSpec) -> Result<Vec<f64>> {
    let mut gain_rng = SplitMix64::stream(run.seed, streams::GAIN);
    let all = run.past_at(run.n);
    let h0 = run.initial_history.len();
    let mut theta_hat = config.initial_estimate.clone();
    let mut out = theta_hat.clone();
    for k in 0..run.n {
        let past = Past::new(&all[..h0 + k * run.record_dim], run.record_dim);
        let g = gain.gain.evaluate(&theta_hat, run.observation(k), past, &mut gain_rng)?.value;
        theta_hat = match &config.projection {
            Some(region) => projected_step_update(&theta_hat, run.gammas[k], &g, region)?,
            None => step_update(&theta_hat, run.gammas[k], &g)?,
        };
        out.extend_from_slice(&theta_hat);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gains::{Gain, GainEvaluation, QuantileGain, SignalNoiseGain};
    use crate::models::{Noise, ParameterPath, PathKind, QuantileModel, SignalNoise};
    use crate::schedules::ScheduleKind;
    use proptest::prelude::*;

    #[test]
    fn step_examples() {
        assert_eq!(step_update(&[0.0], 0.5, &[2.0]).unwrap(), vec![1.0]);
        assert_eq!(step_update(&[1.0, 2.0], 0.0, &[5.0, 5.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(step_update(&[1.0, 0.0], 1.0, &[-1.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert!(step_update(&[f64::NAN], 1.0, &[0.0]).is_err());
        assert!(step_update(&[0.0], 1.0, &[f64::INFINITY]).is_err());
    }

    #[test]
    fn projection_examples() {
        let bx = ProjectionRegion::new_box(vec![-1.0], vec![1.0]).unwrap();
        assert_eq!(projected_step_update(&[0.8], 1.0, &[1.0], &bx).unwrap(), vec![1.0]);
        assert_eq!(projected_step_update(&[0.0], 0.1, &[1.0], &bx).unwrap(), vec![0.1]);
        assert!(projected_step_update(&[1.5], 0.1, &[1.0], &bx).is_err());
        let ball = ProjectionRegion::new_ball(vec![0.0, 0.0], 1.0).unwrap();
        let p = projected_step_update(&[0.0, 0.0], 1.0, &[3.0, 4.0], &ball).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        assert!(ProjectionRegion::new_box(vec![1.0], vec![0.0]).is_err());
        assert!(ProjectionRegion::new_ball(vec![0.0], 0.0).is_err());
    }

    fn zero_noise_static(theta: f64) -> SignalNoise {
        SignalNoise::new(ParameterPath::static_path(vec![theta], 4.0).unwrap(), Noise::Zero).unwrap()
    }

    #[test]
    fn unit_step_converges_in_one_step() {
        let model = zero_noise_static(1.0);
        let sched = StepSchedule::new(ScheduleKind::Constant { gamma: 1.0 }).unwrap();
        let cfg = TrackingConfig::new(vec![-3.0], 20, sched).unwrap();
        let run = run_tracking(&cfg, &model, &GainSpec::new(SignalNoiseGain { d: 1 }), 0).unwrap();
        assert_eq!(run.estimate(0), &[-3.0]);
        for k in 1..=20 {
            assert_eq!(run.estimate(k), &[1.0]);
            assert_eq!(run.error(k), &[0.0]);
        }
    }

    #[test]
    fn zero_step_keeps_initial_estimate() {
        let model = zero_noise_static(1.0);
        let sched = StepSchedule::new(ScheduleKind::Explicit(vec![0.0; 15])).unwrap();
        let cfg = TrackingConfig::new(vec![0.25], 15, sched).unwrap();
        let run = run_tracking(&cfg, &model, &GainSpec::new(SignalNoiseGain { d: 1 }), 0).unwrap();
        assert!((0..=15).all(|k| run.estimate(k) == [0.25]));
    }

    #[test]
    fn layout_and_error_identity() {
        let model = SignalNoise::new(ParameterPath::static_path(vec![0.5, -0.5], 1.0).unwrap(), Noise::Normal { sigma: 1.0 }).unwrap();
        let sched = StepSchedule::new(ScheduleKind::Static { c_gamma: 2.0 }).unwrap();
        let cfg = TrackingConfig::new(vec![0.0, 0.0], 50, sched).unwrap();
        let run = run_tracking(&cfg, &model, &GainSpec::new(SignalNoiseGain { d: 2 }), 9).unwrap();
        assert_eq!(run.estimates.len(), 51 * 2);
        assert_eq!(run.targets.len(), 51 * 2);
        assert_eq!(run.gammas.len(), 50);
        assert_eq!(run.observations.len(), 50 * 2);
        for k in 0..=50 {
            for i in 0..2 {
                assert_eq!(run.error(k)[i], run.estimate(k)[i] - run.target(k)[i]);
            }
        }
    }

    struct NanGain;
    impl Gain for NanGain {
        fn dim(&self) -> usize {
            1
        }
        fn evaluate(&self, th: &[f64], _: &[f64], _: Past<'_>, _: &mut SplitMix64) -> Result<GainEvaluation> {
            Ok(GainEvaluation::raw(vec![if th[0] > 0.35 { f64::NAN } else { 0.1 }]))
        }
    }

    #[test]
    fn non_finite_gain_reports_step() {
        let model = zero_noise_static(0.0);
        let sched = StepSchedule::new(ScheduleKind::Constant { gamma: 1.0 }).unwrap();
        let cfg = TrackingConfig::new(vec![0.0], 10, sched).unwrap();
        match run_tracking(&cfg, &model, &GainSpec::new(NanGain), 0) {
            Err(Error::Gain { step, .. }) => assert_eq!(step, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn divergence_guard_trips() {
        // γ = 3 on the signal gain doubles the error in magnitude every step.
        let model = zero_noise_static(1.0);
        let sched = StepSchedule::new(ScheduleKind::Constant { gamma: 3.0 }).unwrap();
        let cfg = TrackingConfig::new(vec![0.0], 100, sched).unwrap();
        match run_tracking(&cfg, &model, &GainSpec::new(SignalNoiseGain { d: 1 }), 0) {
            Err(Error::Divergence { step, limit, .. }) => {
                assert_eq!(limit, 1e6);
                assert_eq!(step, 20);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn replay_reproduces_estimates() {
        let path = ParameterPath::new(PathKind::Stabilizing { start: vec![0.2], c_rho: 0.5, beta: 1.0 }, 1.0).unwrap();
        let model = QuantileModel::new(path, 0.3, Noise::Normal { sigma: 1.0 }).unwrap();
        let sched = StepSchedule::new(ScheduleKind::Stabilizing { c_gamma: 2.0, beta: 1.0 }).unwrap();
        let cfg = TrackingConfig::new(vec![0.0], 500, sched).unwrap();
        let gain = GainSpec::new(QuantileGain { alpha: 0.3 });
        let run = run_tracking(&cfg, &model, &gain, 77).unwrap();
        assert_eq!(replay_estimates(&run, &cfg, &gain).unwrap(), run.estimates);
    }

    #[test]
    fn determinism() {
        let model = SignalNoise::new(ParameterPath::static_path(vec![0.0], 1.0).unwrap(), Noise::Normal { sigma: 1.0 }).unwrap();
        let sched = StepSchedule::new(ScheduleKind::Static { c_gamma: 4.0 }).unwrap();
        let cfg = TrackingConfig::new(vec![0.5], 1000, sched).unwrap();
        let gain = GainSpec::new(SignalNoiseGain { d: 1 });
        let a = run_tracking(&cfg, &model, &gain, 5).unwrap();
        let b = run_tracking(&cfg, &model, &gain, 5).unwrap();
        assert_eq!(a, b);
        let c = run_tracking(&cfg, &model, &gain, 6).unwrap();
        assert_ne!(a.estimates, c.estimates);
    }

    struct ZeroGain(usize);
    impl Gain for ZeroGain {
        fn dim(&self) -> usize {
            self.0
        }
        fn evaluate(&self, _: &[f64], _: &[f64], _: Past<'_>, _: &mut SplitMix64) -> Result<GainEvaluation> {
            Ok(GainEvaluation::raw(vec![0.0; self.0]))
        }
    }

    proptest! {
        #[test]
        fn projection_keeps_estimates_inside(
            seed in any::<u64>(),
            c in 0.5f64..20.0,
            radius in 0.05f64..2.0,
            use_ball in any::<bool>(),
        ) {
            let model = SignalNoise::new(
                ParameterPath::static_path(vec![1.0, -1.0], 2.0).unwrap(),
                Noise::Normal { sigma: 3.0 },
            ).unwrap();
            let region = if use_ball {
                ProjectionRegion::new_ball(vec![0.0, 0.0], radius).unwrap()
            } else {
                ProjectionRegion::new_box(vec![-radius, -radius], vec![radius, radius]).unwrap()
            };
            let sched = StepSchedule::new(ScheduleKind::Static { c_gamma: c }).unwrap();
            let cfg = TrackingConfig::new(vec![0.0, 0.0], 200, sched).unwrap().with_projection(region.clone()).unwrap();
            let run = run_tracking(&cfg, &model, &GainSpec::new(SignalNoiseGain { d: 2 }), seed).unwrap();
            for k in 0..=200 {
                prop_assert!(region.contains(run.estimate(k)));
            }
        }

        #[test]
        fn zero_gain_is_a_fixed_point(seed in any::<u64>(), x0 in -5.0f64..5.0, c in 0.1f64..10.0) {
            let model = SignalNoise::new(
                ParameterPath::static_path(vec![0.0], 1.0).unwrap(),
                Noise::Normal { sigma: 1.0 },
            ).unwrap();
            let sched = StepSchedule::new(ScheduleKind::Static { c_gamma: c }).unwrap();
            let cfg = TrackingConfig::new(vec![x0], 100, sched).unwrap();
            let run = run_tracking(&cfg, &model, &GainSpec::new(ZeroGain(1)), seed).unwrap();
            prop_assert!((0..=100).all(|k| run.estimate(k) == [x0]));
        }

        #[test]
        fn runs_are_bitwise_deterministic(seed in any::<u64>()) {
            let path = ParameterPath::new(
                PathKind::Stabilizing { start: vec![0.0, 0.1], c_rho: 0.3, beta: 0.75 },
                1.0,
            ).unwrap();
            let model = SignalNoise::new(path, Noise::Uniform { half_width: 1.0 }).unwrap();
            let sched = StepSchedule::new(ScheduleKind::Stabilizing { c_gamma: 3.0, beta: 0.75 }).unwrap();
            let cfg = TrackingConfig::new(vec![0.0, 0.0], 150, sched).unwrap();
            let gain = GainSpec::new(SignalNoiseGain { d: 2 });
            let a = run_tracking(&cfg, &model, &gain, seed).unwrap();
            let b = run_tracking(&cfg, &model, &gain, seed).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

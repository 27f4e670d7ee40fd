//! Observation models and generators for the drifting parameter `θ_k`.
//!
//! A [`Simulator`] draws `X_k` given the stored past and the current
//! parameter. The parameter itself comes from a [`ParameterPath`], walked
//! step by step so that predictable paths can read past observations.

use std::fmt;
use std::sync::Arc;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::gains::Past;
use crate::linalg::{self, Matrix};
use crate::rng::{streams, SplitMix64};
use crate::stats::{dot, norm2};

// ---------------------------------------------------------------------------
// Noise

/// Zero-mean noise laws, parameterized by their standard deviation except
/// for the uniform law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    Zero,
    Normal { sigma: f64 },
    /// Uniform on `[−h, h]`.
    Uniform { half_width: f64 },
    /// `±σ` with equal probability.
    Rademacher { sigma: f64 },
}

impl Noise {
    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            Noise::Zero => return Ok(()),
            Noise::Normal { sigma } | Noise::Rademacher { sigma } => sigma,
            Noise::Uniform { half_width } => half_width,
        };
        if v >= 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("noise scale must be finite and >= 0, got {v}")))
        }
    }

    pub fn sample(&self, rng: &mut SplitMix64) -> f64 {
        match *self {
            Noise::Zero => 0.0,
            Noise::Normal { sigma } => sigma * rng.normal(),
            Noise::Uniform { half_width } => half_width * (2.0 * rng.uniform() - 1.0),
            Noise::Rademacher { sigma } => sigma * rng.sign(),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Noise::Zero => 0.0,
            Noise::Normal { sigma } | Noise::Rademacher { sigma } => sigma * sigma,
            Noise::Uniform { half_width } => half_width * half_width / 3.0,
        }
    }

    /// `E ε⁴ / (E ε²)²`; 0 for the degenerate law.
    pub fn kurtosis(&self) -> f64 {
        match *self {
            Noise::Zero => 0.0,
            Noise::Normal { .. } => 3.0,
            Noise::Uniform { .. } => 1.8,
            Noise::Rademacher { .. } => 1.0,
        }
    }

    /// The `α`-quantile.
    pub fn quantile(&self, alpha: f64) -> f64 {
        match *self {
            Noise::Zero => 0.0,
            Noise::Normal { sigma } => {
                if sigma == 0.0 {
                    0.0
                } else {
                    Normal::new(0.0, sigma).expect("positive sigma").inverse_cdf(alpha)
                }
            }
            Noise::Uniform { half_width } => half_width * (2.0 * alpha - 1.0),
            Noise::Rademacher { sigma } => {
                if alpha <= 0.5 {
                    -sigma
                } else {
                    sigma
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Parameter paths

/// `t ↦ ϑ(t)` on `[0, 1]`.
pub type PathFunction = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;
/// `(k, past window) ↦ θ_k`.
pub type PredictableRule = Arc<dyn Fn(usize, Past<'_>) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub enum PathKind {
    Static {
        theta: Vec<f64>,
    },
    /// Random walk from `start` with increments `‖θ_{i+1} − θ_i‖ = c_ρ i^{−β}`
    /// for `i ≥ 1`, directions uniform on the sphere; `θ_1 = θ_0`.
    Stabilizing {
        start: Vec<f64>,
        c_rho: f64,
        beta: f64,
    },
    /// `θ_k = ϑ(k/n)`; `f` is trusted to be Hölder with constants `(L, β)`.
    Lipschitz {
        f: PathFunction,
        l: f64,
        beta: f64,
        n: usize,
    },
    /// `θ_k` computed from the last `window` observation records.
    Predictable {
        rule: PredictableRule,
        window: usize,
    },
    /// Prescribed values `θ_0, θ_1, ...`.
    Explicit(Arc<Vec<Vec<f64>>>),
}

impl fmt::Debug for PathKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathKind::Static { theta } => f.debug_struct("Static").field("theta", theta).finish(),
            PathKind::Stabilizing { start, c_rho, beta } => f
                .debug_struct("Stabilizing")
                .field("start", start)
                .field("c_rho", c_rho)
                .field("beta", beta)
                .finish(),
            PathKind::Lipschitz { l, beta, n, .. } => f
                .debug_struct("Lipschitz")
                .field("l", l)
                .field("beta", beta)
                .field("n", n)
                .finish(),
            PathKind::Predictable { window, .. } => {
                f.debug_struct("Predictable").field("window", window).finish()
            }
            PathKind::Explicit(v) => write!(f, "Explicit({} values)", v.len()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParameterPath {
    pub kind: PathKind,
    pub d: usize,
    /// `sup ‖θ‖²` over the parameter set.
    pub c_theta: f64,
}

/// Relative slack on the `‖θ‖² ≤ C_Θ` check.
const C_THETA_SLACK: f64 = 1e-12;

impl ParameterPath {
    pub fn static_path(theta: Vec<f64>, c_theta: f64) -> Result<Self> {
        Self::new(PathKind::Static { theta }, c_theta)
    }

    /// Validates parameters; `d` is taken from the kind.
    pub fn new(kind: PathKind, c_theta: f64) -> Result<Self> {
        if !(c_theta > 0.0 && c_theta.is_finite()) {
            return Err(Error::InvalidParameter(format!("C_Theta must be positive, got {c_theta}")));
        }
        let d = match &kind {
            PathKind::Static { theta } => {
                ensure_finite(theta, "static parameter")?;
                theta.len()
            }
            PathKind::Stabilizing { start, c_rho, beta } => {
                ensure_finite(start, "path start")?;
                if !(*c_rho > 0.0 && c_rho.is_finite()) {
                    return Err(Error::InvalidParameter(format!("c_rho must be positive, got {c_rho}")));
                }
                if !(*beta >= 0.0 && beta.is_finite()) {
                    return Err(Error::InvalidParameter(format!("beta must be >= 0, got {beta}")));
                }
                start.len()
            }
            PathKind::Lipschitz { f, l, beta, n } => {
                if !(*l >= 0.0 && *beta > 0.0 && *beta <= 1.0 && *n >= 1) {
                    return Err(Error::InvalidParameter(format!(
                        "lipschitz path needs L >= 0, beta in (0,1], n >= 1; got L={l}, beta={beta}, n={n}"
                    )));
                }
                f(0.0).len()
            }
            PathKind::Predictable { rule, window } => {
                if *window == 0 {
                    return Err(Error::InvalidParameter("predictable window must be >= 1".into()));
                }
                rule(0, Past::empty()).len()
            }
            PathKind::Explicit(values) => {
                let d = values.first().map_or(0, Vec::len);
                if values.iter().any(|v| v.len() != d) {
                    return Err(Error::InvalidParameter("explicit path has ragged values".into()));
                }
                d
            }
        };
        if d == 0 {
            return Err(Error::InvalidParameter("parameter dimension must be >= 1".into()));
        }
        let path = Self { kind, d, c_theta };
        if let PathKind::Static { theta } | PathKind::Stabilizing { start: theta, .. } = &path.kind {
            path.check_compact(theta, 0)?;
        }
        Ok(path)
    }

    fn check_compact(&self, theta: &[f64], k: usize) -> Result<()> {
        ensure_dim("parameter path", self.d, theta.len())?;
        ensure_finite(theta, "path value")?;
        let sq = dot(theta, theta);
        if sq > self.c_theta * (1.0 + C_THETA_SLACK) {
            return Err(Error::Precondition(format!(
                "path value at step {k} has squared norm {sq} > C_Theta = {}",
                self.c_theta
            )));
        }
        Ok(())
    }

    /// Increment budget `ρ_i = c_ρ i^{−β}` of a stabilizing path.
    pub fn increment_budget(&self, i: usize) -> Option<f64> {
        match &self.kind {
            PathKind::Stabilizing { c_rho, beta, .. } if i >= 1 => Some(c_rho * (i as f64).powf(-beta)),
            _ => None,
        }
    }

    pub fn walker(&self, seed: u64) -> PathWalker<'_> {
        PathWalker {
            path: self,
            k: 0,
            current: None,
            rng: SplitMix64::stream(seed, streams::PATH),
        }
    }

    /// `θ_0, ..., θ_n` for paths that do not read observations.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if matches!(self.kind, PathKind::Predictable { .. }) {
            return Err(Error::Precondition(
                "predictable paths need observations; walk them inside a simulation".into(),
            ));
        }
        let mut w = self.walker(seed);
        (0..=n).map(|_| w.next(Past::empty())).collect()
    }

    /// Records read by the path rule.
    pub fn window(&self) -> usize {
        match &self.kind {
            PathKind::Predictable { window, .. } => *window,
            _ => 0,
        }
    }
}

/// Per-run state of a path: emits `θ_0, θ_1, ...` in order.
#[derive(Debug, Clone)]
pub struct PathWalker<'a> {
    path: &'a ParameterPath,
    k: usize,
    current: Option<Vec<f64>>,
    rng: SplitMix64,
}

impl PathWalker<'_> {
    /// Index of the next value.
    pub fn index(&self) -> usize {
        self.k
    }

    /// Next value `θ_k`; `past` holds records up to `X_{k−1}`.
    pub fn next(&mut self, past: Past<'_>) -> Result<Vec<f64>> {
        let k = self.k;
        let theta = match &self.path.kind {
            PathKind::Static { theta } => theta.clone(),
            PathKind::Stabilizing { start, .. } => match self.current.take() {
                None => start.clone(),
                // θ_1 = θ_0; afterwards step i goes from θ_i to θ_{i+1}.
                Some(prev) if k == 1 => prev,
                Some(prev) => {
                    let budget = self.path.increment_budget(k - 1).expect("stabilizing");
                    self.stabilizing_step(prev, budget)
                }
            },
            PathKind::Lipschitz { f, n, .. } => f(k as f64 / *n as f64),
            PathKind::Predictable { rule, window } => rule(k, past.last(*window)),
            PathKind::Explicit(values) => values.get(k).cloned().ok_or_else(|| {
                Error::Precondition(format!("explicit path has {} values, step {k} requested", values.len()))
            })?,
        };
        self.path.check_compact(&theta, k)?;
        if matches!(self.path.kind, PathKind::Stabilizing { .. }) {
            self.current = Some(theta.clone());
        }
        self.k += 1;
        Ok(theta)
    }

    /// One increment of length `budget` in a uniform direction; reflected
    /// once when it would leave the ball of radius `√C_Θ`, and pulled
    /// radially inward (possibly shorter) as a last resort.
    fn stabilizing_step(&mut self, prev: Vec<f64>, budget: f64) -> Vec<f64> {
        let d = prev.len();
        let u = self.rng.unit_vector(d).unwrap_or_else(|| {
            let mut e = vec![0.0; d];
            e[0] = 1.0;
            e
        });
        let inside = |v: &[f64]| dot(v, v) <= self.path.c_theta;
        let fwd: Vec<f64> = prev.iter().zip(&u).map(|(p, u)| p + budget * u).collect();
        if inside(&fwd) {
            return fwd;
        }
        let back: Vec<f64> = prev.iter().zip(&u).map(|(p, u)| p - budget * u).collect();
        if inside(&back) {
            return back;
        }
        let r = norm2(&prev);
        if r == 0.0 {
            return prev;
        }
        let step = budget.min(r);
        prev.iter().map(|p| p - step * p / r).collect()
    }
}

// ---------------------------------------------------------------------------
// Simulator trait

/// An observation model. Records have a fixed width; `past` passed to
/// [`Simulator::observe`] always contains at least `history_depth` records.
pub trait Simulator: Send + Sync {
    fn param_dim(&self) -> usize;

    /// Width of one observation record.
    fn record_dim(&self) -> usize;

    /// Records the model reads back; the initial history has this many.
    fn history_depth(&self) -> usize {
        1
    }

    /// Noisy oracle evaluations spent per step.
    fn queries_per_step(&self) -> usize {
        0
    }

    fn path(&self) -> &ParameterPath;

    /// Records standing in for `X_{−h}, ..., X_{−1}`.
    fn initial_history(&self, rng: &mut SplitMix64) -> Result<Vec<f64>>;

    /// Draws `X_k` under parameter `θ_k`. Query-based models evaluate their
    /// objective around `θ̂_k`.
    fn observe(
        &self,
        k: usize,
        theta: &[f64],
        theta_hat: &[f64],
        past: Past<'_>,
        rng: &mut SplitMix64,
    ) -> Result<Vec<f64>>;

    /// Innovation of a stored record, for martingale-difference checks.
    /// Empty when the model has no natural additive innovation.
    fn innovation(&self, _theta: &[f64], _record: &[f64], _past: Past<'_>) -> Vec<f64> {
        Vec::new()
    }
}

/// One simulated step.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub observation: Vec<f64>,
    pub theta: Vec<f64>,
    pub innovation: Vec<f64>,
}

/// Draws `n` records from a model with `θ̂ = θ` (only query models look at
/// the estimate). The initial history is not included.
pub fn simulate(model: &dyn Simulator, n: usize, seed: u64) -> Result<Vec<ModelRecord>> {
    let stride = model.record_dim();
    let mut init_rng = SplitMix64::stream(seed, streams::INITIAL);
    let mut obs_rng = SplitMix64::stream(seed, streams::OBSERVATIONS);
    let mut history = model.initial_history(&mut init_rng)?;
    let mut walker = model.path().walker(seed);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let past = Past::new(&history, stride);
        let theta = walker.next(past)?;
        let x = model.observe(k, &theta, &theta, past, &mut obs_rng)?;
        ensure_dim("observation record", stride, x.len())?;
        let innovation = model.innovation(&theta, &x, past);
        history.extend_from_slice(&x);
        out.push(ModelRecord {
            observation: x,
            theta,
            innovation,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Concrete models

/// `X_k = θ_k + ξ_k`.
#[derive(Debug, Clone)]
pub struct SignalNoise {
    pub path: ParameterPath,
    pub noise: Noise,
}

impl SignalNoise {
    pub fn new(path: ParameterPath, noise: Noise) -> Result<Self> {
        noise.validate()?;
        Ok(Self { path, noise })
    }
}

impl Simulator for SignalNoise {
    fn param_dim(&self) -> usize {
        self.path.d
    }
    fn record_dim(&self) -> usize {
        self.path.d
    }
    fn history_depth(&self) -> usize {
        self.path.window()
    }
    fn path(&self) -> &ParameterPath {
        &self.path
    }
    fn initial_history(&self, _: &mut SplitMix64) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.path.d * self.history_depth()])
    }
    fn observe(&self, _: usize, theta: &[f64], _: &[f64], _: Past<'_>, rng: &mut SplitMix64) -> Result<Vec<f64>> {
        Ok(theta.iter().map(|t| t + self.noise.sample(rng)).collect())
    }
    fn innovation(&self, theta: &[f64], x: &[f64], _: Past<'_>) -> Vec<f64> {
        x.iter().zip(theta).map(|(x, t)| x - t).collect()
    }
}

pub fn simulate_signal_noise(path: ParameterPath, noise: Noise, n: usize, seed: u64) -> Result<Vec<ModelRecord>> {
    simulate(&SignalNoise::new(path, noise)?, n, seed)
}

/// Scalar `X_k = θ_k + ε_k − q_α(ε)`, so that `θ_k` is the `α`-quantile.
#[derive(Debug, Clone)]
pub struct QuantileModel {
    pub path: ParameterPath,
    pub alpha: f64,
    pub noise: Noise,
    shift: f64,
}

impl QuantileModel {
    pub fn new(path: ParameterPath, alpha: f64, noise: Noise) -> Result<Self> {
        noise.validate()?;
        ensure_dim("quantile model", 1, path.d)?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0,1), got {alpha}")));
        }
        Ok(Self {
            shift: noise.quantile(alpha),
            path,
            alpha,
            noise,
        })
    }
}

impl Simulator for QuantileModel {
    fn param_dim(&self) -> usize {
        1
    }
    fn record_dim(&self) -> usize {
        1
    }
    fn history_depth(&self) -> usize {
        self.path.window()
    }
    fn path(&self) -> &ParameterPath {
        &self.path
    }
    fn initial_history(&self, _: &mut SplitMix64) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.history_depth()])
    }
    fn observe(&self, _: usize, theta: &[f64], _: &[f64], _: Past<'_>, rng: &mut SplitMix64) -> Result<Vec<f64>> {
        Ok(vec![theta[0] + self.noise.sample(rng) - self.shift])
    }
}

/// Level observations `X_k = α + a(ϑ − θ_k) + ξ_k` at the current estimate
/// `ϑ`; the root of `f(ϑ) = α` is `θ_k`.
#[derive(Debug, Clone)]
pub struct RobbinsMonroModel {
    pub path: ParameterPath,
    pub alpha: Vec<f64>,
    pub slope: f64,
    pub noise: Noise,
}

impl Simulator for RobbinsMonroModel {
    fn param_dim(&self) -> usize {
        self.path.d
    }
    fn record_dim(&self) -> usize {
        self.path.d
    }
    fn history_depth(&self) -> usize {
        self.path.window()
    }
    fn queries_per_step(&self) -> usize {
        1
    }
    fn path(&self) -> &ParameterPath {
        &self.path
    }
    fn initial_history(&self, _: &mut SplitMix64) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.path.d * self.history_depth()])
    }
    fn observe(&self, _: usize, theta: &[f64], th: &[f64], _: Past<'_>, rng: &mut SplitMix64) -> Result<Vec<f64>> {
        Ok((0..self.path.d)
            .map(|i| self.alpha[i] + self.slope * (th[i] - theta[i]) + self.noise.sample(rng))
            .collect())
    }
}

/// Noisy concave objective `F(ϑ) = −(a/2)‖ϑ − θ_k‖² + ξ` queried around the
/// estimate. With `spsa`, records are `(D, F(ϑ+cD), F(ϑ−cD))` for `D`
/// uniform on the sphere; otherwise `(F(ϑ+c e_i))_i, (F(ϑ−c e_i))_i`.
#[derive(Debug, Clone)]
pub struct QueryModel {
    pub path: ParameterPath,
    pub curvature: f64,
    pub c: f64,
    pub noise: Noise,
    pub spsa: bool,
}

impl QueryModel {
    fn objective(&self, point: &[f64], theta: &[f64], rng: &mut SplitMix64) -> f64 {
        let sq: f64 = point.iter().zip(theta).map(|(p, t)| (p - t) * (p - t)).sum();
        -0.5 * self.curvature * sq + self.noise.sample(rng)
    }
}

impl Simulator for QueryModel {
    fn param_dim(&self) -> usize {
        self.path.d
    }
    fn record_dim(&self) -> usize {
        if self.spsa {
            self.path.d + 2
        } else {
            2 * self.path.d
        }
    }
    fn history_depth(&self) -> usize {
        self.path.window()
    }
    fn queries_per_step(&self) -> usize {
        if self.spsa {
            2
        } else {
            2 * self.path.d
        }
    }
    fn path(&self) -> &ParameterPath {
        &self.path
    }
    fn initial_history(&self, _: &mut SplitMix64) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.record_dim() * self.history_depth()])
    }
    fn observe(&self, _: usize, theta: &[f64], th: &[f64], _: Past<'_>, rng: &mut SplitMix64) -> Result<Vec<f64>> {
        let d = self.path.d;
        let mut point = th.to_vec();
        if self.spsa {
            let dir = rng.unit_vector(d).ok_or_else(|| Error::Precondition("empty direction".into()))?;
            for i in 0..d {
                point[i] = th[i] + self.c * dir[i];
            }
            let plus = self.objective(&point, theta, rng);
            for i in 0..d {
                point[i] = th[i] - self.c * dir[i];
            }
            let minus = self.objective(&point, theta, rng);
            let mut rec = dir;
            rec.push(plus);
            rec.push(minus);
            Ok(rec)
        } else {
            let mut rec = vec![0.0; 2 * d];
            for i in 0..d {
                point[i] = th[i] + self.c;
                rec[i] = self.objective(&point, theta, rng);
                point[i] = th[i] - self.c;
                rec[d + i] = self.objective(&point, theta, rng);
                point[i] = th[i];
            }
            Ok(rec)
        }
    }
}

/// Intensity `λ(t)` on `[0, 1]`.
pub type Intensity = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Cumulative counts `X_k = N((k+1)/n)` of a Poisson process with
/// intensity `nλ(t)`; step `k` (from 0) covers `[k/n, (k+1)/n]`.
#[derive(Clone)]
pub struct PoissonCounts {
    path: ParameterPath,
    pub n: usize,
}

impl fmt::Debug for PoissonCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PoissonCounts").field("n", &self.n).finish()
    }
}

impl PoissonCounts {
    /// Averages `λ` over each slot by adaptive quadrature; `bound` is the
    /// declared `L ≥ sup λ`, which fixes `C_Θ = L²`.
    pub fn new(intensity: Intensity, n: usize, bound: f64) -> Result<Self> {
        let thetas = poisson_slot_means(&intensity, n)?;
        if let Some(t) = thetas.iter().find(|t| **t > bound * (1.0 + 1e-9)) {
            return Err(Error::InvalidParameter(format!("slot mean {t} exceeds intensity bound {bound}")));
        }
        let values: Vec<Vec<f64>> = thetas.into_iter().map(|t| vec![t]).collect();
        let path = ParameterPath::new(PathKind::Explicit(Arc::new(values)), bound.max(f64::MIN_POSITIVE).powi(2))?;
        Ok(Self { path, n })
    }

    /// `θ` for slots `1..=n` (slot `k` covers `[(k−1)/n, k/n]`).
    pub fn slot_means(&self) -> Vec<f64> {
        match &self.path.kind {
            PathKind::Explicit(v) => v.iter().map(|t| t[0]).collect(),
            _ => unreachable!(),
        }
    }
}

impl Simulator for PoissonCounts {
    fn param_dim(&self) -> usize {
        1
    }
    fn record_dim(&self) -> usize {
        1
    }
    fn path(&self) -> &ParameterPath {
        &self.path
    }
    fn initial_history(&self, _: &mut SplitMix64) -> Result<Vec<f64>> {
        Ok(vec![0.0])
    }
    fn observe(&self, k: usize, theta: &[f64], _: &[f64], past: Past<'_>, rng: &mut SplitMix64) -> Result<Vec<f64>> {
        if k >= self.n {
            return Err(Error::Precondition(format!("Poisson horizon is {}, step {k} requested", self.n)));
        }
        let prev = past.require(1, "Poisson counts")?[0];
        Ok(vec![prev + rng.poisson(theta[0]) as f64])
    }
    fn innovation(&self, theta: &[f64], x: &[f64], past: Past<'_>) -> Vec<f64> {
        let prev = past.back(1).map_or(0.0, |p| p[0]);
        vec![x[0] - prev - theta[0]]
    }
}

/// `θ_k = n ∫_{(k−1)/n}^{k/n} λ(t) dt` for `k = 1..=n`.
pub fn poisson_slot_means(intensity: &Intensity, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    (1..=n)
        .map(|k| {
            let a = (k - 1) as f64 / n as f64;
            let b = k as f64 / n as f64;
            Ok(n as f64 * adaptive_simpson(intensity.as_ref(), a, b, 1e-10)?)
        })
        .collect()
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`. Fails on a
/// negative or non-finite integrand value at any node.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    let eval = |t: f64| -> Result<f64> {
        let v = f(t);
        if !v.is_finite() {
            return Err(Error::NonFinite("intensity"));
        }
        if v < 0.0 {
            return Err(Error::InvalidParameter(format!("negative intensity {v} at t = {t}")));
        }
        Ok(v)
    };
    let fa = eval(a)?;
    let fb = eval(b)?;
    let m = 0.5 * (a + b);
    let fm = eval(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(&eval, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> Result<f64>,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return Ok(left + right + diff / 15.0);
    }
    Ok(simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

/// Cumulative counts `N(0), N(1/n), ..., N(1)`; `records[k].theta` is the
/// mean of increment `k + 1`.
pub fn simulate_poisson_counts(intensity: Intensity, n: usize, seed: u64) -> Result<Vec<ModelRecord>> {
    let thetas = poisson_slot_means(&intensity, n)?;
    let bound = thetas.iter().fold(0.0_f64, |m, t| m.max(*t)).max(1.0);
    simulate(&PoissonCounts::new(intensity, n, bound)?, n, seed)
}

/// Covariance of the conditionally Gaussian model.
#[derive(Clone)]
pub enum CovRule {
    Constant(Matrix),
    /// `Σ_k` from the last record.
    Predictable(Arc<dyn Fn(usize, Past<'_>) -> Matrix + Send + Sync>),
}

impl fmt::Debug for CovRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovRule::Constant(m) => write!(f, "Constant({m:?})"),
            CovRule::Predictable(_) => write!(f, "Predictable"),
        }
    }
}

/// `X_k ~ N(θ_k, Σ_k)` given the past, with eigenvalues of `Σ_k` required
/// to lie in a declared band.
#[derive(Debug, Clone)]
pub struct CondGaussian {
    pub path: ParameterPath,
    pub cov: CovRule,
    pub band: (f64, f64),
    constant_sqrt: Option<Matrix>,
}

impl CondGaussian {
    pub fn new(path: ParameterPath, cov: CovRule, band: (f64, f64)) -> Result<Self> {
        if !(band.0 > 0.0 && band.0 <= band.1) {
            return Err(Error::InvalidParameter(format!("eigenvalue band must satisfy 0 < lo <= hi, got {band:?}")));
        }
        let constant_sqrt = match &cov {
            CovRule::Constant(s) => Some(banded_sqrt(s, band, path.d)?),
            CovRule::Predictable(_) => None,
        };
        Ok(Self {
            path,
            cov,
            band,
            constant_sqrt,
        })
    }
}

fn banded_sqrt(sigma: &Matrix, band: (f64, f64), d: usize) -> Result<Matrix> {
    ensure_dim("covariance", d, sigma.nrows())?;
    ensure_dim("covariance", d, sigma.ncols())?;
    let eig = linalg::sym_eigenvalues(sigma)?;
    let (lo, hi) = (eig[0], eig[d - 1]);
    if lo < band.0 * (1.0 - 1e-12) || hi > band.1 * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!(
            "covariance eigenvalues [{lo}, {hi}] leave the declared band [{}, {}]",
            band.0, band.1
        )));
    }
    linalg::sym_sqrt(sigma)
}

impl Simulator for CondGaussian {
    fn param_dim(&self) -> usize {
        self.path.d
    }
    fn record_dim(&self) -> usize {
        self.path.d
    }
    fn history_depth(&self) -> usize {
        self.path.window().max(1)
    }
    fn path(&self) -> &ParameterPath {
        &self.path
    }
    fn initial_history(&self, _: &mut SplitMix64) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.path.d * self.history_depth()])
    }
    fn observe(&self, k: usize, theta: &[f64], _: &[f64], past: Past<'_>, rng: &mut SplitMix64) -> Result<Vec<f64>> {
        let d = self.path.d;
        let root = match (&self.constant_sqrt, &self.cov) {
            (Some(r), _) => r.clone(),
            (None, CovRule::Predictable(rule)) => banded_sqrt(&rule(k, past), self.band, d)?,
            (None, CovRule::Constant(_)) => unreachable!(),
        };
        let z = nalgebra::DVector::from_iterator(d, (0..d).map(|_| rng.normal()));
        let e = root * z;
        Ok((0..d).map(|i| theta[i] + e[i]).collect())
    }
    fn innovation(&self, theta: &[f64], x: &[f64], _: Past<'_>) -> Vec<f64> {
        x.iter().zip(theta).map(|(x, t)| x - t).collect()
    }
}

pub fn simulate_cond_gaussian(
    path: ParameterPath,
    cov: CovRule,
    band: (f64, f64),
    n: usize,
    seed: u64,
) -> Result<Vec<ModelRecord>> {
    simulate(&CondGaussian::new(path, cov, band)?, n, seed)
}

/// `X_k = (1 + θ_k X_{k−1}²)^{1/2} ε_k`.
#[derive(Debug, Clone)]
pub struct Arch1 {
    pub path: ParameterPath,
    pub noise: Noise,
    pub x0: f64,
}

impl Arch1 {
    pub fn new(path: ParameterPath, noise: Noise, x0: f64) -> Result<Self> {
        noise.validate()?;
        ensure_dim("ARCH(1) model", 1, path.d)?;
        if !(x0.abs() <= 1.0) {
            return Err(Error::InvalidParameter(format!("|X_0| must be <= 1, got {x0}")));
        }
        Ok(Self { path, noise, x0 })
    }
}

impl Simulator for Arch1 {
    fn param_dim(&self) -> usize {
        1
    }
    fn record_dim(&self) -> usize {
        1
    }
    fn history_depth(&self) -> usize {
        self.path.window().max(1)
    }
    fn path(&self) -> &ParameterPath {
        &self.path
    }
    fn initial_history(&self, _: &mut SplitMix64) -> Result<Vec<f64>> {
        let mut h = vec![0.0; self.history_depth()];
        *h.last_mut().expect("depth >= 1") = self.x0;
        Ok(h)
    }
    fn observe(&self, k: usize, theta: &[f64], _: &[f64], past: Past<'_>, rng: &mut SplitMix64) -> Result<Vec<f64>> {
        if theta[0] < 0.0 {
            return Err(Error::Precondition(format!("ARCH(1) needs theta >= 0, got {} at step {k}", theta[0])));
        }
        let prev = past.require(1, "ARCH(1) model")?[0];
        Ok(vec![(1.0 + theta[0] * prev * prev).sqrt() * self.noise.sample(rng)])
    }
    fn innovation(&self, theta: &[f64], x: &[f64], past: Past<'_>) -> Vec<f64> {
        let prev = past.back(1).map_or(0.0, |p| p[0]);
        vec![x[0] / (1.0 + theta[0] * prev * prev).sqrt()]
    }
}

pub fn simulate_arch1(path: ParameterPath, noise: Noise, x0: f64, n: usize, seed: u64) -> Result<Vec<ModelRecord>> {
    simulate(&Arch1::new(path, noise, x0)?, n, seed)
}

/// AR(d) in batches: each record is `(X_{kd+1}, ..., X_{kd+d})` (in the
/// order of the triangular system) and solves `A(θ)x = B(θ)y + σξ` for the
/// previous batch `y`. With `d = 1` this is the plain AR(1) recursion.
#[derive(Debug, Clone)]
pub struct ArdBatch {
    pub path: ParameterPath,
    pub sigma: f64,
    pub rho: f64,
    pub y0: Vec<f64>,
}

impl ArdBatch {
    pub fn new(path: ParameterPath, sigma: f64, rho: f64, y0: Vec<f64>) -> Result<Self> {
        ensure_dim("AR(d) initial batch", path.d, y0.len())?;
        ensure_finite(&y0, "AR(d) initial batch")?;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
        }
        linalg::StabilityRegion::new(rho, path.d)?;
        Ok(Self { path, sigma, rho, y0 })
    }
}

impl Simulator for ArdBatch {
    fn param_dim(&self) -> usize {
        self.path.d
    }
    fn record_dim(&self) -> usize {
        self.path.d
    }
    fn history_depth(&self) -> usize {
        self.path.window().max(1)
    }
    fn path(&self) -> &ParameterPath {
        &self.path
    }
    fn initial_history(&self, _: &mut SplitMix64) -> Result<Vec<f64>> {
        let mut h = vec![0.0; self.path.d * self.history_depth()];
        let start = h.len() - self.path.d;
        h[start..].copy_from_slice(&self.y0);
        Ok(h)
    }
    fn observe(&self, _: usize, theta: &[f64], _: &[f64], past: Past<'_>, rng: &mut SplitMix64) -> Result<Vec<f64>> {
        let check = linalg::ar_stability_check(theta, self.rho)?;
        if !check.member {
            return Err(Error::Unstable(theta.to_vec()));
        }
        let y = past.require(1, "AR(d) model")?;
        let b = linalg::ar_b_matrix(theta) * nalgebra::DVector::from_column_slice(y);
        let rhs: Vec<f64> = (0..self.path.d).map(|i| b[i] + self.sigma * rng.normal()).collect();
        Ok(linalg::solve_unit_upper(&linalg::ar_a_matrix(theta), &rhs))
    }
    fn innovation(&self, theta: &[f64], x: &[f64], past: Past<'_>) -> Vec<f64> {
        match past.back(1) {
            Some(y) => crate::gains::ard_residual(theta, x, y),
            None => Vec::new(),
        }
    }
}

pub fn simulate_ard(path: ParameterPath, sigma: f64, rho: f64, n: usize, seed: u64) -> Result<Vec<ModelRecord>> {
    let y0 = vec![0.0; path.d];
    simulate(&ArdBatch::new(path, sigma, rho, y0)?, n, seed)
}

/// Scalar AR(d) `X_k = θᵀ(X_{k−1}, ..., X_{k−d}) + σξ_k` whose record `k`
/// is the lag vector `(X_k, ..., X_{k−d+1})`, so `past.back(1)` is the
/// regressor of step `k`.
#[derive(Debug, Clone)]
pub struct ArLagged {
    pub path: ParameterPath,
    pub sigma: f64,
    pub y0: Vec<f64>,
}

impl ArLagged {
    pub fn new(path: ParameterPath, sigma: f64, y0: Vec<f64>) -> Result<Self> {
        ensure_dim("AR lag vector", path.d, y0.len())?;
        ensure_finite(&y0, "AR lag vector")?;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
        }
        Ok(Self { path, sigma, y0 })
    }
}

impl Simulator for ArLagged {
    fn param_dim(&self) -> usize {
        self.path.d
    }
    fn record_dim(&self) -> usize {
        self.path.d
    }
    fn history_depth(&self) -> usize {
        self.path.window().max(1)
    }
    fn path(&self) -> &ParameterPath {
        &self.path
    }
    fn initial_history(&self, _: &mut SplitMix64) -> Result<Vec<f64>> {
        let mut h = vec![0.0; self.path.d * self.history_depth()];
        let start = h.len() - self.path.d;
        h[start..].copy_from_slice(&self.y0);
        Ok(h)
    }
    fn observe(&self, _: usize, theta: &[f64], _: &[f64], past: Past<'_>, rng: &mut SplitMix64) -> Result<Vec<f64>> {
        let lag = past.require(1, "lagged AR model")?;
        let x = dot(theta, lag) + self.sigma * rng.normal();
        let mut rec = Vec::with_capacity(self.path.d);
        rec.push(x);
        rec.extend_from_slice(&lag[..self.path.d - 1]);
        Ok(rec)
    }
}

/// Replays stored records against stored targets.
#[derive(Debug, Clone)]
pub struct Replay {
    path: ParameterPath,
    records: Arc<Vec<f64>>,
    stride: usize,
    history: Vec<f64>,
}

impl Replay {
    /// `records` holds `X_0, X_1, ...` back to back; `targets` holds
    /// `θ_0, θ_1, ...`; `history` the records before `X_0`.
    pub fn new(records: Vec<f64>, stride: usize, targets: Vec<Vec<f64>>, history: Vec<f64>, c_theta: f64) -> Result<Self> {
        if stride == 0 || records.len() % stride != 0 || history.len() % stride != 0 {
            return Err(Error::InvalidParameter("replay records do not match the stride".into()));
        }
        let path = ParameterPath::new(PathKind::Explicit(Arc::new(targets)), c_theta)?;
        Ok(Self {
            path,
            records: Arc::new(records),
            stride,
            history,
        })
    }
}

impl Simulator for Replay {
    fn param_dim(&self) -> usize {
        self.path.d
    }
    fn record_dim(&self) -> usize {
        self.stride
    }
    fn history_depth(&self) -> usize {
        self.history.len() / self.stride
    }
    fn path(&self) -> &ParameterPath {
        &self.path
    }
    fn initial_history(&self, _: &mut SplitMix64) -> Result<Vec<f64>> {
        Ok(self.history.clone())
    }
    fn observe(&self, k: usize, _: &[f64], _: &[f64], _: Past<'_>, _: &mut SplitMix64) -> Result<Vec<f64>> {
        let start = k * self.stride;
        self.records
            .get(start..start + self.stride)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| Error::Precondition(format!("replay has no record for step {k}")))
    }
}

/// Builds a path from the common kinds.
pub fn make_parameter_path(kind: PathKind, c_theta: f64) -> Result<ParameterPath> {
    ParameterPath::new(kind, c_theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean_se;
    use proptest::prelude::*;

    fn static1(theta: f64) -> ParameterPath {
        ParameterPath::static_path(vec![theta], 1e6).unwrap()
    }

    #[test]
    fn lagged_records_shift_the_window() {
        let m = ArLagged::new(ParameterPath::static_path(vec![0.5, 0.2], 1.0).unwrap(), 0.0, vec![1.0, 2.0]).unwrap();
        let recs = simulate(&m, 3, 0).unwrap();
        assert_eq!(recs[0].observation, vec![0.9, 1.0]);
        assert!((recs[1].observation[0] - (0.45 + 0.2)).abs() < 1e-15);
        assert_eq!(recs[1].observation[1], 0.9);
    }

    #[test]
    fn zero_noise_reproduces_target() {
        let path = ParameterPath::new(
            PathKind::Stabilizing {
                start: vec![0.2, -0.1],
                c_rho: 0.5,
                beta: 1.0,
            },
            1.0,
        )
        .unwrap();
        let recs = simulate_signal_noise(path, Noise::Zero, 200, 3).unwrap();
        for r in &recs {
            assert_eq!(r.observation, r.theta);
        }
    }

    #[test]
    fn signal_noise_sample_variance() {
        let recs = simulate_signal_noise(static1(0.0), Noise::Normal { sigma: 1.0 }, 100_000, 11).unwrap();
        let sq: Vec<f64> = recs.iter().map(|r| r.observation[0].powi(2)).collect();
        let m = mean_se(&sq);
        assert!((m.mean - 1.0).abs() < 3.0 * m.se, "{m:?}");
    }

    #[test]
    fn stabilizing_budget_example() {
        let path = ParameterPath::new(
            PathKind::Stabilizing {
                start: vec![0.0, 0.0],
                c_rho: 1.0,
                beta: 1.0,
            },
            4.0,
        )
        .unwrap();
        let th = path.generate(5000, 7).unwrap();
        assert_eq!(th[0], th[1]);
        for i in 1..5000 {
            let inc = norm2(&crate::stats::sub(&th[i + 1], &th[i]));
            assert!(inc <= 1.0 / i as f64 * (1.0 + 1e-12), "{i}: {inc}");
            assert!(dot(&th[i], &th[i]) <= 4.0 * (1.0 + 1e-12));
        }
        // Away from the boundary the increment is exactly the budget.
        let inc = norm2(&crate::stats::sub(&th[11], &th[10]));
        assert!((inc - 0.1).abs() < 1e-12);
    }

    #[test]
    fn lipschitz_example() {
        let f: PathFunction = Arc::new(|t| vec![(std::f64::consts::TAU * t).sin() / 2.0]);
        let path = ParameterPath::new(PathKind::Lipschitz { f, l: std::f64::consts::PI, beta: 1.0, n: 100 }, 0.25).unwrap();
        let th = path.generate(100, 0).unwrap();
        assert!(th[50][0].abs() < 1e-15);
        assert!((th[25][0] - 0.5).abs() < 1e-15);
        for k in 0..100 {
            assert!((th[k + 1][0] - th[k][0]).abs() <= std::f64::consts::PI / 100.0 + 1e-15);
        }
    }

    #[test]
    fn static_path_constant() {
        let path = ParameterPath::static_path(vec![1.0, 2.0], 5.0).unwrap();
        let th = path.generate(10, 1).unwrap();
        assert!(th.iter().all(|t| t == &vec![1.0, 2.0]));
        assert!(ParameterPath::static_path(vec![1.0, 2.0], 4.9).is_err());
    }

    #[test]
    fn path_parameter_errors() {
        let bad_beta = PathKind::Stabilizing { start: vec![0.0], c_rho: 1.0, beta: -0.5 };
        assert!(ParameterPath::new(bad_beta, 1.0).is_err());
        let bad_c = PathKind::Stabilizing { start: vec![0.0], c_rho: 0.0, beta: 1.0 };
        assert!(ParameterPath::new(bad_c, 1.0).is_err());
    }

    #[test]
    fn poisson_slot_examples() {
        let two: Intensity = Arc::new(|_| 2.0);
        let m = poisson_slot_means(&two, 10).unwrap();
        assert!(m.iter().all(|t| (t - 2.0).abs() < 1e-12));
        let lin: Intensity = Arc::new(|t| t);
        let m = poisson_slot_means(&lin, 2).unwrap();
        assert!((m[0] - 0.25).abs() < 1e-12 && (m[1] - 0.75).abs() < 1e-12);
        let zero: Intensity = Arc::new(|_| 0.0);
        let recs = simulate_poisson_counts(zero, 20, 4).unwrap();
        assert!(recs.iter().all(|r| r.observation[0] == 0.0));
        let neg: Intensity = Arc::new(|t| t - 0.5);
        assert!(poisson_slot_means(&neg, 4).is_err());
    }

    #[test]
    fn poisson_quadrature_against_closed_form() {
        // n ∫ sin²(πt) over [(k−1)/n, k/n], by the antiderivative t/2 − sin(2πt)/4π.
        let f: Intensity = Arc::new(|t| (std::f64::consts::PI * t).sin().powi(2));
        let n = 7;
        let m = poisson_slot_means(&f, n).unwrap();
        let anti = |t: f64| t / 2.0 - (std::f64::consts::TAU * t).sin() / (2.0 * std::f64::consts::TAU);
        for k in 1..=n {
            let exact = n as f64 * (anti(k as f64 / n as f64) - anti((k - 1) as f64 / n as f64));
            assert!((m[k - 1] - exact).abs() < 1e-9);
        }
    }

    #[test]
    fn poisson_counts_are_cumulative() {
        let f: Intensity = Arc::new(|t| 3.0 + t);
        let recs = simulate_poisson_counts(f, 500, 9).unwrap();
        let mut prev = 0.0;
        let mut innov = Vec::new();
        for r in &recs {
            assert!(r.observation[0] >= prev);
            prev = r.observation[0];
            innov.push(r.innovation[0]);
        }
        let m = mean_se(&innov);
        assert!(m.mean.abs() < 4.0 * m.se);
    }

    #[test]
    fn cond_gaussian_band_and_moments() {
        let tiny = Matrix::identity(2, 2) * 1e-12;
        assert!(CondGaussian::new(static_d(2), CovRule::Constant(tiny), (0.1, 10.0)).is_err());
        let recs = simulate_cond_gaussian(static_d(2), CovRule::Constant(Matrix::identity(2, 2)), (0.5, 2.0), 50_000, 5).unwrap();
        for i in 0..2 {
            let sq: Vec<f64> = recs.iter().map(|r| r.observation[i].powi(2)).collect();
            let m = mean_se(&sq);
            assert!((m.mean - 1.0).abs() < 4.0 * m.se);
        }
        let four = Matrix::from_element(1, 1, 4.0);
        let recs = simulate_cond_gaussian(ParameterPath::static_path(vec![1.0], 4.0).unwrap(), CovRule::Constant(four), (1.0, 5.0), 40_000, 6).unwrap();
        let z: Vec<f64> = recs.iter().map(|r| (r.observation[0] - 1.0) / 2.0).collect();
        let m = mean_se(&z);
        assert!(m.mean.abs() < 4.0 / (z.len() as f64).sqrt());
        let var = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
        assert!((var - 1.0).abs() < 0.03);
    }

    fn static_d(d: usize) -> ParameterPath {
        ParameterPath::static_path(vec![0.0; d], 1.0).unwrap()
    }

    #[test]
    fn arch_examples() {
        let recs = simulate_arch1(static1(0.0), Noise::Normal { sigma: 1.0 }, 0.5, 100, 1).unwrap();
        for r in &recs {
            assert_eq!(r.observation[0], r.innovation[0]);
        }
        let recs = simulate_arch1(static1(0.5), Noise::Zero, 1.0, 10, 1).unwrap();
        assert!(recs.iter().all(|r| r.observation[0] == 0.0));
        let neg = ParameterPath::static_path(vec![-0.1], 1.0).unwrap();
        assert!(simulate_arch1(neg, Noise::Normal { sigma: 1.0 }, 0.0, 5, 1).is_err());
        assert!(Arch1::new(static1(0.1), Noise::Zero, 1.5).is_err());
    }

    #[test]
    fn arch_conditional_second_moment() {
        let model = Arch1::new(static1(0.5), Noise::Normal { sigma: 1.0 }, 0.0).unwrap();
        let mut rng = SplitMix64::new(12);
        for x_prev in [0.0, 1.0, 2.5] {
            let hist = [x_prev];
            let sq: Vec<f64> = (0..100_000)
                .map(|k| model.observe(k, &[0.5], &[0.5], Past::new(&hist, 1), &mut rng).unwrap()[0].powi(2))
                .collect();
            let m = mean_se(&sq);
            assert!((m.mean - (1.0 + 0.5 * x_prev * x_prev)).abs() < 4.0 * m.se);
        }
    }

    #[test]
    fn ard_examples() {
        let path = ParameterPath::static_path(vec![0.5], 1.0).unwrap();
        let model = ArdBatch::new(path, 0.0, 0.9, vec![1.0]).unwrap();
        let recs = simulate(&model, 10, 0).unwrap();
        let mut prev = 1.0;
        for r in &recs {
            assert_eq!(r.observation[0], 0.5 * prev);
            prev = r.observation[0];
        }
        let recs = simulate_ard(ParameterPath::static_path(vec![0.0; 3], 1.0).unwrap(), 1.0, 0.9, 20_000, 2).unwrap();
        for i in 0..3 {
            let sq: Vec<f64> = recs.iter().map(|r| r.observation[i].powi(2)).collect();
            let m = mean_se(&sq);
            assert!((m.mean - 1.0).abs() < 4.0 * m.se);
        }
        let recs = simulate_ard(ParameterPath::static_path(vec![0.5, 0.2], 1.0).unwrap(), 1.0, 0.9, 10_000, 3).unwrap();
        let max_sq = recs.iter().map(|r| dot(&r.observation, &r.observation)).fold(0.0, f64::max);
        assert!(max_sq < 200.0, "{max_sq}");
        let unstable = ParameterPath::static_path(vec![1.2], 4.0).unwrap();
        assert!(simulate_ard(unstable, 1.0, 0.9, 5, 0).is_err());
    }

    #[test]
    fn ar1_stationary_variance() {
        let theta = 0.6_f64;
        let recs = simulate_ard(static1(theta), 1.0, 0.9, 400_000, 21).unwrap();
        let var = recs.iter().map(|r| r.observation[0].powi(2)).sum::<f64>() / recs.len() as f64;
        let expected = 1.0 / (1.0 - theta * theta);
        assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
    }

    #[test]
    fn innovations_have_zero_conditional_mean() {
        let mut rng = SplitMix64::new(30);
        let n = 50_000;
        let check = |model: &dyn Simulator, theta: &[f64], hist: &[f64], rng: &mut SplitMix64| {
            let past = Past::new(hist, model.record_dim());
            let d = theta.len();
            let mut cols = vec![Vec::with_capacity(n); d];
            for k in 0..n {
                let x = model.observe(k, theta, theta, past, rng).unwrap();
                for (i, v) in model.innovation(theta, &x, past).into_iter().enumerate() {
                    cols[i].push(v);
                }
            }
            for c in cols {
                let m = mean_se(&c);
                assert!(m.mean.abs() < 4.0 * m.se.max(1e-300), "{m:?}");
            }
        };
        let sn = SignalNoise::new(static1(0.3), Noise::Uniform { half_width: 2.0 }).unwrap();
        check(&sn, &[0.3], &[], &mut rng);
        let arch = Arch1::new(static1(0.4), Noise::Normal { sigma: 1.0 }, 0.0).unwrap();
        check(&arch, &[0.4], &[1.7], &mut rng);
        let ard = ArdBatch::new(ParameterPath::static_path(vec![0.3, 0.1], 1.0).unwrap(), 1.0, 0.9, vec![0.0, 0.0]).unwrap();
        check(&ard, &[0.3, 0.1], &[1.0, -2.0], &mut rng);
        let pois = PoissonCounts::new(Arc::new(|_| 2.5), 1, 3.0).unwrap();
        let mut cols = Vec::with_capacity(n);
        for _ in 0..n {
            let x = pois.observe(0, &[2.5], &[2.5], Past::new(&[4.0], 1), &mut rng).unwrap();
            cols.push(pois.innovation(&[2.5], &x, Past::new(&[4.0], 1))[0]);
        }
        let m = mean_se(&cols);
        assert!(m.mean.abs() < 4.0 * m.se);
    }

    #[test]
    fn quantile_model_places_quantile_at_theta() {
        let model = QuantileModel::new(static1(0.5), 0.5, Noise::Uniform { half_width: 0.5 }).unwrap();
        let recs = simulate(&model, 20_000, 8).unwrap();
        assert!(recs.iter().all(|r| (0.0..1.0).contains(&r.observation[0])));
        let model = QuantileModel::new(static1(1.0), 0.9, Noise::Normal { sigma: 2.0 }).unwrap();
        let recs = simulate(&model, 50_000, 9).unwrap();
        let below: Vec<f64> = recs.iter().map(|r| if r.observation[0] <= 1.0 { 1.0 } else { 0.0 }).collect();
        let m = mean_se(&below);
        assert!((m.mean - 0.9).abs() < 4.0 * m.se);
    }

    #[test]
    fn predictable_path_reads_window() {
        let rule: PredictableRule = Arc::new(|_, past: Past<'_>| vec![past.back(1).map_or(0.0, |x| 0.5 * x[0].tanh())]);
        let path = ParameterPath::new(PathKind::Predictable { rule, window: 1 }, 0.25).unwrap();
        let model = SignalNoise::new(path, Noise::Normal { sigma: 1.0 }).unwrap();
        let recs = simulate(&model, 50, 4).unwrap();
        for k in 1..50 {
            assert_eq!(recs[k].theta[0], 0.5 * recs[k - 1].observation[0].tanh());
        }
    }

    proptest! {
        #[test]
        fn stabilizing_paths_respect_budget_and_bound(
            seed in any::<u64>(),
            c_rho in 0.01f64..3.0,
            beta in 0.0f64..2.0,
            d in 1usize..4,
            c_theta in 0.1f64..4.0,
        ) {
            let path = ParameterPath::new(
                PathKind::Stabilizing { start: vec![0.0; d], c_rho, beta },
                c_theta,
            ).unwrap();
            let th = path.generate(300, seed).unwrap();
            for i in 1..300 {
                let inc = norm2(&crate::stats::sub(&th[i + 1], &th[i]));
                // Differences of nearby vectors lose absolute precision ~ eps·‖θ‖.
                let slack = 4.0 * f64::EPSILON * norm2(&th[i]).max(1.0);
                prop_assert!(inc <= path.increment_budget(i).unwrap() * (1.0 + 1e-12) + slack);
                prop_assert!(dot(&th[i + 1], &th[i + 1]) <= c_theta * (1.0 + 1e-12));
            }
        }

        #[test]
        fn lipschitz_grid_respects_holder_bound(n in 2usize..500, amp in 0.0f64..1.0) {
            let f: PathFunction = Arc::new(move |t| vec![amp * (std::f64::consts::TAU * t).sin()]);
            let l = amp * std::f64::consts::TAU;
            let path = ParameterPath::new(PathKind::Lipschitz { f, l, beta: 1.0, n }, 1.0).unwrap();
            let th = path.generate(n, 0).unwrap();
            for k in 0..n {
                prop_assert!((th[k + 1][0] - th[k][0]).abs() <= l / n as f64 * (1.0 + 1e-12) + 1e-15);
            }
        }
    }
}

//! Gain functions `G_k(ϑ, X_k, past)` and their direction-preserving
//! modifiers.
//!
//! Each gain comes as a pure function plus a [`Gain`] implementation that
//! reads its inputs from an observation record and the past window.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DVector, Dyn};

use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::SplitMix64;
use crate::stats::{norm2, sub};

/// Read-only window over past observation records stored back to back.
#[derive(Debug, Clone, Copy)]
pub struct Past<'a> {
    data: &'a [f64],
    stride: usize,
}

impl<'a> Past<'a> {
    pub fn new(data: &'a [f64], stride: usize) -> Self {
        debug_assert!(stride > 0 && data.len() % stride == 0);
        Self { data, stride }
    }

    pub fn empty() -> Past<'static> {
        Past {
            data: &[],
            stride: 1,
        }
    }

    /// Number of records available.
    pub fn len(&self) -> usize {
        self.data.len() / self.stride
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The `i`-th most recent record; `back(1)` is `X_{k−1}`.
    pub fn back(&self, i: usize) -> Option<&'a [f64]> {
        let n = self.len();
        if i == 0 || i > n {
            return None;
        }
        let start = (n - i) * self.stride;
        Some(&self.data[start..start + self.stride])
    }

    /// The most recent `window` records (all of them if fewer exist).
    pub fn last(&self, window: usize) -> Past<'a> {
        let keep = window.min(self.len()) * self.stride;
        Past {
            data: &self.data[self.data.len() - keep..],
            stride: self.stride,
        }
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub(crate) fn require(&self, i: usize, what: &str) -> Result<&'a [f64]> {
        self.back(i)
            .ok_or_else(|| Error::Precondition(format!("{what} needs {i} past record(s)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainEvaluation {
    pub value: Vec<f64>,
    /// Raw gain before a modifier; `value` is a nonnegative multiple of it.
    pub direction_preserved_from: Option<Vec<f64>>,
}

impl GainEvaluation {
    pub fn raw(value: Vec<f64>) -> Self {
        Self {
            value,
            direction_preserved_from: None,
        }
    }
}

/// A gain function over observation records.
pub trait Gain: Send + Sync {
    fn dim(&self) -> usize;

    /// Number of past records the gain reads.
    fn history_depth(&self) -> usize {
        0
    }

    fn evaluate(
        &self,
        theta_hat: &[f64],
        x: &[f64],
        past: Past<'_>,
        rng: &mut SplitMix64,
    ) -> Result<GainEvaluation>;
}

/// Constants from the conditions on the average gain and the gain noise.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DeclaredConstants {
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub c_g: Option<f64>,
    pub g_bar: Option<f64>,
}

#[derive(Clone)]
pub struct GainSpec {
    pub gain: Arc<dyn Gain>,
    pub declared: DeclaredConstants,
}

impl GainSpec {
    pub fn new(gain: impl Gain + 'static) -> Self {
        Self {
            gain: Arc::new(gain),
            declared: DeclaredConstants::default(),
        }
    }

    pub fn with_constants(mut self, declared: DeclaredConstants) -> Self {
        self.declared = declared;
        self
    }

    pub fn dim(&self) -> usize {
        self.gain.dim()
    }

    pub fn history_depth(&self) -> usize {
        self.gain.history_depth()
    }
}

impl fmt::Debug for GainSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GainSpec")
            .field("dim", &self.gain.dim())
            .field("history_depth", &self.gain.history_depth())
            .field("declared", &self.declared)
            .finish()
    }
}

// ---------------------------------------------------------------------------
// Pure gain functions

/// `x − ϑ`.
pub fn gain_signal_noise(theta_hat: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    ensure_dim("signal+noise gain", theta_hat.len(), x.len())?;
    Ok(x.iter().zip(theta_hat).map(|(a, b)| a - b).collect())
}

/// `−(x − α)`.
pub fn gain_robbins_monro(x: &[f64], alpha: &[f64]) -> Result<Vec<f64>> {
    ensure_dim("Robbins-Monro gain", alpha.len(), x.len())?;
    Ok(x.iter().zip(alpha).map(|(a, b)| b - a).collect())
}

/// Noisy scalar objective queried at a design point.
pub type Oracle<'a> = dyn FnMut(&[f64], &mut SplitMix64) -> Result<f64> + 'a;

/// Central differences `(F(ϑ + c e_i) − F(ϑ − c e_i)) / 2c` over all basis
/// vectors: `2d` oracle queries.
pub fn gain_kw_finite_difference(
    theta_hat: &[f64],
    c: f64,
    oracle: &mut Oracle<'_>,
    rng: &mut SplitMix64,
) -> Result<Vec<f64>> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("difference width must be positive, got {c}")));
    }
    let d = theta_hat.len();
    let mut out = vec![0.0; d];
    let mut point = theta_hat.to_vec();
    for i in 0..d {
        point[i] = theta_hat[i] + c;
        let plus = query(oracle, &point, rng)?;
        point[i] = theta_hat[i] - c;
        let minus = query(oracle, &point, rng)?;
        point[i] = theta_hat[i];
        out[i] = (plus - minus) / (2.0 * c);
    }
    Ok(out)
}

fn query(oracle: &mut Oracle<'_>, point: &[f64], rng: &mut SplitMix64) -> Result<f64> {
    oracle(point, rng).map_err(|e| Error::Oracle {
        point: point.to_vec(),
        reason: e.to_string(),
    })
}

/// Random-direction difference `D (F(ϑ + cD) − F(ϑ − cD)) / 2c`: two
/// oracle queries. Zero-norm directions are redrawn up to 16 times.
pub fn gain_spsa(
    theta_hat: &[f64],
    c: f64,
    oracle: &mut Oracle<'_>,
    direction: &mut dyn FnMut(&mut SplitMix64) -> Vec<f64>,
    rng: &mut SplitMix64,
) -> Result<Vec<f64>> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("difference width must be positive, got {c}")));
    }
    let mut dir = None;
    for _ in 0..16 {
        let v = direction(rng);
        ensure_dim("SPSA direction", theta_hat.len(), v.len())?;
        if norm2(&v) > 0.0 {
            dir = Some(v);
            break;
        }
    }
    let dir = dir.ok_or_else(|| Error::Precondition("direction sampler kept returning zero".into()))?;
    let plus: Vec<f64> = theta_hat.iter().zip(&dir).map(|(t, v)| t + c * v).collect();
    let minus: Vec<f64> = theta_hat.iter().zip(&dir).map(|(t, v)| t - c * v).collect();
    let xp = query(oracle, &plus, rng)?;
    let xm = query(oracle, &minus, rng)?;
    let scale = (xp - xm) / (2.0 * c);
    Ok(dir.iter().map(|v| v * scale).collect())
}

/// `α − 1{x ≤ ϑ}`; ties count as `≤`.
pub fn gain_quantile(theta_hat: f64, x: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0,1), got {alpha}")));
    }
    Ok(if x <= theta_hat { alpha - 1.0 } else { alpha })
}

/// `(x_k − x_{k−1}) − ϑ` for cumulative counts.
pub fn gain_poisson(theta_hat: f64, x_k: f64, x_km1: f64) -> Result<f64> {
    if x_k < x_km1 {
        return Err(Error::InvalidParameter(format!(
            "counts must not decrease: {x_km1} -> {x_k}"
        )));
    }
    Ok((x_k - x_km1) - theta_hat)
}

/// `Σ⁻¹(x − ϑ)` by a Cholesky solve.
pub fn gain_gaussian_known_cov(theta_hat: &[f64], x: &[f64], sigma: &Matrix) -> Result<Vec<f64>> {
    let solver = CovSolver::new(sigma)?;
    ensure_dim("gaussian gain", solver.dim, x.len())?;
    ensure_dim("gaussian gain", solver.dim, theta_hat.len())?;
    Ok(solver.solve(&sub(x, theta_hat)))
}

/// Cholesky factor of a covariance checked for positive definiteness.
#[derive(Debug, Clone)]
struct CovSolver {
    dim: usize,
    chol: Cholesky<f64, Dyn>,
}

impl CovSolver {
    fn new(sigma: &Matrix) -> Result<Self> {
        ensure_dim("covariance", sigma.nrows(), sigma.ncols())?;
        let eig = linalg::sym_eigenvalues(sigma)?;
        let tol = 1e-12 * eig.last().copied().unwrap_or(1.0).abs().max(1.0);
        if eig[0] <= tol {
            return Err(Error::NotPositiveDefinite(eig[0]));
        }
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite(eig[0]))?;
        Ok(Self {
            dim: sigma.nrows(),
            chol,
        })
    }

    fn solve(&self, r: &[f64]) -> Vec<f64> {
        self.chol
            .solve(&DVector::from_column_slice(r))
            .as_slice()
            .to_vec()
    }
}

/// `min(s, T)/s` with `s = x²`, and 0 at `s = 0`.
fn truncation_factor(x: f64, t: f64) -> f64 {
    let s = x * x;
    if s == 0.0 {
        0.0
    } else {
        s.min(t) / s
    }
}

/// `(min(x_{k−1}², T)/x_{k−1}²)(x_k² − 1 − ϑ x_{k−1}²)`; 0 when `x_{k−1} = 0`.
pub fn gain_arch1(theta_hat: f64, x_k: f64, x_km1: f64, t: f64) -> Result<f64> {
    positive("truncation level T", t)?;
    let f = truncation_factor(x_km1, t);
    if f == 0.0 {
        return Ok(0.0);
    }
    Ok(f * (x_k * x_k - 1.0 - theta_hat * x_km1 * x_km1))
}

/// `x_{k−1}(x_k − ϑ x_{k−1}) / (1 + μ x_{k−1}²)`.
pub fn gain_ar1_normalized(theta_hat: f64, x_k: f64, x_km1: f64, mu: f64) -> Result<f64> {
    positive("normalization mu", mu)?;
    Ok(x_km1 * (x_k - theta_hat * x_km1) / (1.0 + mu * x_km1 * x_km1))
}

/// `(min(x_{k−1}², T)/x_{k−1}²)(x_k x_{k−1} − ϑ x_{k−1}²)`; 0 when `x_{k−1} = 0`.
pub fn gain_ar1_truncated(theta_hat: f64, x_k: f64, x_km1: f64, t: f64) -> Result<f64> {
    positive("truncation level T", t)?;
    let f = truncation_factor(x_km1, t);
    if f == 0.0 {
        return Ok(0.0);
    }
    Ok(f * (x_k * x_km1 - theta_hat * x_km1 * x_km1))
}

/// Vector form of the normalized AR gain,
/// `X_{k−1,d}(X_k − ϑᵀX_{k−1,d}) / (1 + μ‖X_{k−1,d}‖²)` with
/// `X_{k−1,d} = (X_{k−1}, ..., X_{k−d})`. Its matrix `M_k` has rank one, so
/// for `d ≥ 2` the smallest eigenvalue is always zero.
pub fn gain_ar_normalized_lagged(theta_hat: &[f64], x_k: f64, lagged: &[f64], mu: f64) -> Result<Vec<f64>> {
    ensure_dim("normalized AR gain", theta_hat.len(), lagged.len())?;
    positive("normalization mu", mu)?;
    let resid = x_k - crate::stats::dot(theta_hat, lagged);
    let scale = resid / (1.0 + mu * crate::stats::dot(lagged, lagged));
    Ok(lagged.iter().map(|v| v * scale).collect())
}

/// Residual `r(ϑ) = A(ϑ)x − B(ϑ)y` of one AR(d) batch.
pub fn ard_residual(theta: &[f64], x: &[f64], y: &[f64]) -> Vec<f64> {
    let a = linalg::ar_a_matrix(theta);
    let b = linalg::ar_b_matrix(theta);
    let r = a * DVector::from_column_slice(x) - b * DVector::from_column_slice(y);
    r.as_slice().to_vec()
}

/// Log density of batch `x` given the previous batch `y`:
/// `−(d/2) ln(2πσ²) − ‖r(ϑ)‖² / 2σ²` (`det A = 1`).
pub fn ard_log_density(theta: &[f64], x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    let d = theta.len();
    ensure_dim("AR(d) batch", d, x.len())?;
    ensure_dim("AR(d) batch", d, y.len())?;
    positive("sigma", sigma)?;
    let r = ard_residual(theta, x, y);
    let rr = crate::stats::dot(&r, &r);
    Ok(-0.5 * d as f64 * (std::f64::consts::TAU * sigma * sigma).ln() - 0.5 * rr / (sigma * sigma))
}

/// Score of the batch density: `−σ⁻² Jᵀ r(ϑ)`, where column `i` of `J` is
/// `−S^i x − (S^{d−i})ᵀ y`.
pub fn gain_ard_score(theta_hat: &[f64], x: &[f64], y: &[f64], sigma: f64) -> Result<Vec<f64>> {
    let d = theta_hat.len();
    ensure_dim("AR(d) batch", d, x.len())?;
    ensure_dim("AR(d) batch", d, y.len())?;
    positive("sigma", sigma)?;
    let r = ard_residual(theta_hat, x, y);
    let mut out = vec![0.0; d];
    for i in 1..=d {
        // (S^i x)_j = x_{j+i}; ((S^{d−i})ᵀ y)_j = y_{j−(d−i)}
        let mut dot = 0.0;
        for j in 0..d {
            let sx = if j + i < d { x[j + i] } else { 0.0 };
            let sy = if j >= d - i { y[j + i - d] } else { 0.0 };
            dot += (-sx - sy) * r[j];
        }
        out[i - 1] = -dot / (sigma * sigma);
    }
    Ok(out)
}

/// `−M(θ, y)(ϑ − θ)`: the conditional mean of the AR(d) score.
pub fn average_gain_ard(theta_hat: &[f64], theta: &[f64], y: &[f64], sigma: f64) -> Result<Vec<f64>> {
    ensure_dim("average AR(d) gain", theta.len(), theta_hat.len())?;
    let form = linalg::ard_quadratic_matrix(theta, y, sigma)?;
    let delta = DVector::from_column_slice(&sub(theta_hat, theta));
    Ok((-(form.m * delta)).as_slice().to_vec())
}

// ---------------------------------------------------------------------------
// Modifiers

/// `G / (1 + ‖G‖)`.
pub fn modifier_soft_normalize(g: &[f64]) -> Vec<f64> {
    let s = 1.0 / (1.0 + norm2(g));
    g.iter().map(|v| v * s).collect()
}

/// `G` when `‖G‖ ≤ κ`, else `κ G / ‖G‖`.
pub fn modifier_norm_truncate(g: &[f64], kappa: f64) -> Result<Vec<f64>> {
    positive("kappa", kappa)?;
    let n = norm2(g);
    if n <= kappa {
        return Ok(g.to_vec());
    }
    let s = kappa / n;
    Ok(g.iter().map(|v| v * s).collect())
}

/// `G min(s, κ) / s`.
pub fn modifier_predictable_rescale(g: &[f64], s: f64, kappa: f64) -> Result<Vec<f64>> {
    positive("scale s", s)?;
    positive("kappa", kappa)?;
    let f = s.min(kappa) / s;
    Ok(g.iter().map(|v| v * f).collect())
}

/// Predictable scale `s_k(X_{k−1})` for [`Modifier::PredictableRescale`].
pub type ScaleRule = Arc<dyn Fn(Past<'_>) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Modifier {
    SoftNormalize,
    NormTruncate { kappa: f64 },
    PredictableRescale { kappa: f64, scale: ScaleRule },
}

impl fmt::Debug for Modifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modifier::SoftNormalize => write!(f, "SoftNormalize"),
            Modifier::NormTruncate { kappa } => write!(f, "NormTruncate({kappa})"),
            Modifier::PredictableRescale { kappa, .. } => write!(f, "PredictableRescale({kappa})"),
        }
    }
}

impl Modifier {
    pub fn apply(&self, g: &[f64], past: Past<'_>) -> Result<Vec<f64>> {
        match self {
            Modifier::SoftNormalize => Ok(modifier_soft_normalize(g)),
            Modifier::NormTruncate { kappa } => modifier_norm_truncate(g, *kappa),
            Modifier::PredictableRescale { kappa, scale } => {
                let s = scale(past);
                if s == 0.0 {
                    // Nothing to rescale against; keep the raw value.
                    return Ok(g.to_vec());
                }
                modifier_predictable_rescale(g, s, *kappa)
            }
        }
    }

    /// Past records read by the modifier itself.
    fn history_depth(&self) -> usize {
        match self {
            Modifier::PredictableRescale { .. } => 1,
            _ => 0,
        }
    }
}

// ---------------------------------------------------------------------------
// Gain implementations over observation records

#[derive(Debug, Clone)]
pub struct SignalNoiseGain {
    pub d: usize,
}

impl Gain for SignalNoiseGain {
    fn dim(&self) -> usize {
        self.d
    }
    fn evaluate(&self, th: &[f64], x: &[f64], _: Past<'_>, _: &mut SplitMix64) -> Result<GainEvaluation> {
        Ok(GainEvaluation::raw(gain_signal_noise(th, x)?))
    }
}

/// Reads `x` as the observed level `f(ϑ) + noise`; the target level is fixed.
#[derive(Debug, Clone)]
pub struct RobbinsMonroGain {
    pub alpha: Vec<f64>,
}

impl Gain for RobbinsMonroGain {
    fn dim(&self) -> usize {
        self.alpha.len()
    }
    fn evaluate(&self, _: &[f64], x: &[f64], _: Past<'_>, _: &mut SplitMix64) -> Result<GainEvaluation> {
        Ok(GainEvaluation::raw(gain_robbins_monro(x, &self.alpha)?))
    }
}

/// Reads `x = (X⁺_1..X⁺_d, X⁻_1..X⁻_d)` queried at `ϑ ± c e_i`.
#[derive(Debug, Clone)]
pub struct KieferWolfowitzGain {
    pub d: usize,
    pub c: f64,
}

impl Gain for KieferWolfowitzGain {
    fn dim(&self) -> usize {
        self.d
    }
    fn evaluate(&self, _: &[f64], x: &[f64], _: Past<'_>, _: &mut SplitMix64) -> Result<GainEvaluation> {
        ensure_dim("Kiefer-Wolfowitz record", 2 * self.d, x.len())?;
        let (plus, minus) = x.split_at(self.d);
        Ok(GainEvaluation::raw(
            plus.iter().zip(minus).map(|(p, m)| (p - m) / (2.0 * self.c)).collect(),
        ))
    }
}

/// Reads `x = (D_1..D_d, X⁺, X⁻)` queried at `ϑ ± c D`.
#[derive(Debug, Clone)]
pub struct SpsaGain {
    pub d: usize,
    pub c: f64,
}

impl Gain for SpsaGain {
    fn dim(&self) -> usize {
        self.d
    }
    fn evaluate(&self, _: &[f64], x: &[f64], _: Past<'_>, _: &mut SplitMix64) -> Result<GainEvaluation> {
        ensure_dim("SPSA record", self.d + 2, x.len())?;
        let scale = (x[self.d] - x[self.d + 1]) / (2.0 * self.c);
        Ok(GainEvaluation::raw(x[..self.d].iter().map(|v| v * scale).collect()))
    }
}

#[derive(Debug, Clone)]
pub struct QuantileGain {
    pub alpha: f64,
}

impl Gain for QuantileGain {
    fn dim(&self) -> usize {
        1
    }
    fn evaluate(&self, th: &[f64], x: &[f64], _: Past<'_>, _: &mut SplitMix64) -> Result<GainEvaluation> {
        Ok(GainEvaluation::raw(vec![gain_quantile(th[0], x[0], self.alpha)?]))
    }
}

/// Cumulative counts; `past.back(1)` holds the previous count.
#[derive(Debug, Clone)]
pub struct PoissonGain;

impl Gain for PoissonGain {
    fn dim(&self) -> usize {
        1
    }
    fn history_depth(&self) -> usize {
        1
    }
    fn evaluate(&self, th: &[f64], x: &[f64], past: Past<'_>, _: &mut SplitMix64) -> Result<GainEvaluation> {
        let prev = past.require(1, "Poisson gain")?;
        Ok(GainEvaluation::raw(vec![gain_poisson(th[0], x[0], prev[0])?]))
    }
}

#[derive(Debug, Clone)]
pub struct GaussianKnownCovGain {
    solver: CovSolver,
}

impl GaussianKnownCovGain {
    pub fn new(sigma: &Matrix) -> Result<Self> {
        Ok(Self {
            solver: CovSolver::new(sigma)?,
        })
    }
}

impl Gain for GaussianKnownCovGain {
    fn dim(&self) -> usize {
        self.solver.dim
    }
    fn evaluate(&self, th: &[f64], x: &[f64], _: Past<'_>, _: &mut SplitMix64) -> Result<GainEvaluation> {
        ensure_dim("gaussian gain", self.solver.dim, x.len())?;
        Ok(GainEvaluation::raw(self.solver.solve(&sub(x, th))))
    }
}

#[derive(Debug, Clone)]
pub struct Arch1Gain {
    pub t: f64,
}

impl Gain for Arch1Gain {
    fn dim(&self) -> usize {
        1
    }
    fn history_depth(&self) -> usize {
        1
    }
    fn evaluate(&self, th: &[f64], x: &[f64], past: Past<'_>, _: &mut SplitMix64) -> Result<GainEvaluation> {
        let prev = past.require(1, "ARCH(1) gain")?;
        Ok(GainEvaluation::raw(vec![gain_arch1(th[0], x[0], prev[0], self.t)?]))
    }
}

/// Scalar AR(1) only; the vector form violates the excitation condition.
#[derive(Debug, Clone)]
pub struct Ar1NormalizedGain {
    pub mu: f64,
}

impl Gain for Ar1NormalizedGain {
    fn dim(&self) -> usize {
        1
    }
    fn history_depth(&self) -> usize {
        1
    }
    fn evaluate(&self, th: &[f64], x: &[f64], past: Past<'_>, _: &mut SplitMix64) -> Result<GainEvaluation> {
        let prev = past.require(1, "AR(1) gain")?;
        Ok(GainEvaluation::raw(vec![gain_ar1_normalized(th[0], x[0], prev[0], self.mu)?]))
    }
}

#[derive(Debug, Clone)]
pub struct Ar1TruncatedGain {
    pub t: f64,
}

impl Gain for Ar1TruncatedGain {
    fn dim(&self) -> usize {
        1
    }
    fn history_depth(&self) -> usize {
        1
    }
    fn evaluate(&self, th: &[f64], x: &[f64], past: Past<'_>, _: &mut SplitMix64) -> Result<GainEvaluation> {
        let prev = past.require(1, "AR(1) gain")?;
        Ok(GainEvaluation::raw(vec![gain_ar1_truncated(th[0], x[0], prev[0], self.t)?]))
    }
}

/// Vector normalized AR gain reading `x = [X_k]` and `past.back(1)` as the
/// lag vector `(X_{k−1}, ..., X_{k−d})`. Kept for condition checks only.
#[derive(Debug, Clone)]
pub struct LaggedNormalizedGain {
    pub d: usize,
    pub mu: f64,
}

impl Gain for LaggedNormalizedGain {
    fn dim(&self) -> usize {
        self.d
    }
    fn history_depth(&self) -> usize {
        1
    }
    fn evaluate(&self, th: &[f64], x: &[f64], past: Past<'_>, _: &mut SplitMix64) -> Result<GainEvaluation> {
        let lagged = past.require(1, "lagged AR gain")?;
        Ok(GainEvaluation::raw(gain_ar_normalized_lagged(th, x[0], lagged, self.mu)?))
    }
}

/// AR(d) batch score; `past.back(1)` is the previous batch.
#[derive(Debug, Clone)]
pub struct ArdScoreGain {
    pub d: usize,
    pub sigma: f64,
}

impl Gain for ArdScoreGain {
    fn dim(&self) -> usize {
        self.d
    }
    fn history_depth(&self) -> usize {
        1
    }
    fn evaluate(&self, th: &[f64], x: &[f64], past: Past<'_>, _: &mut SplitMix64) -> Result<GainEvaluation> {
        let y = past.require(1, "AR(d) score")?;
        Ok(GainEvaluation::raw(gain_ard_score(th, x, y, self.sigma)?))
    }
}

/// A gain passed through a direction-preserving modifier.
#[derive(Clone)]
pub struct ModifiedGain {
    pub inner: Arc<dyn Gain>,
    pub modifier: Modifier,
}

impl Gain for ModifiedGain {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn history_depth(&self) -> usize {
        self.inner.history_depth().max(self.modifier.history_depth())
    }
    fn evaluate(&self, th: &[f64], x: &[f64], past: Past<'_>, rng: &mut SplitMix64) -> Result<GainEvaluation> {
        let raw = self.inner.evaluate(th, x, past, rng)?.value;
        let value = self.modifier.apply(&raw, past)?;
        Ok(GainEvaluation {
            value,
            direction_preserved_from: Some(raw),
        })
    }
}

/// Scale `‖X_{k−1}‖²`, turning [`Modifier::PredictableRescale`] into the
/// truncation used by the ARCH(1) and AR(1) gains.
pub fn lagged_square_scale() -> ScaleRule {
    Arc::new(|past: Past<'_>| past.back(1).map_or(0.0, |x| crate::stats::dot(x, x)))
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// Checks that a gain output has the gain's dimension and finite entries.
pub(crate) fn check_output(g: &[f64], d: usize) -> Result<()> {
    ensure_dim("gain output", d, g.len())?;
    ensure_finite(g, "gain output")
}

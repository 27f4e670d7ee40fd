//! Non-asymptotic error bounds and Monte-Carlo checks of the conditions
//! they rest on.
//!
//! With `Σγ` and `Σγ²` taken over `i = k₀..=k`, the first-moment bound is
//!
//! ```text
//! E‖δ_{k+1}‖ ≤ C₁ exp(−λ₁/2 Σγ) + C₂ (Σγ²)^{1/2} + C₃ max_{k₀≤i≤k} E‖θ_{i+1} − θ_{k₀}‖
//! ```
//!
//! with `C₁ = √2 (C̄_Θ + C_Θ)^{1/2}`, `C₂ = C_g^{1/2}(1 + λ₂/λ₁)` and
//! `C₃ = 1 + λ₂/λ₁`. It requires `γ_i λ₂ ≤ 1` on the window.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{ensure_dim, Error, Result};
use crate::gains::{GainSpec, Past};
use crate::linalg::{self, Matrix};
use crate::models::{Noise, Simulator};
use crate::rng::SplitMix64;
use crate::stats::{dot, mean_se, norm2, norm_p, KahanSum, MeanSe};

/// Slack on `γ_i λ₂ ≤ 1`, so that steps clipped to exactly `1/λ₂` pass.
const STEP_SLACK: f64 = 1e-12;

/// Relative slack in the condition checks, so that exact ties survive rounding.
const TIE_SLACK: f64 = 1e-9;

/// Default for the `p = 1` martingale-moment constant, which has no
/// explicit value in the source inequality.
pub const DEFAULT_B1: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub lambda1: f64,
    pub lambda2: f64,
    pub c_g: f64,
    pub c_theta: f64,
    /// `sup_k E‖θ̂_k‖²`.
    pub c_theta_bar: f64,
    pub k0: usize,
    /// `γ_{k₀}, ..., γ_k`.
    pub gammas: Vec<f64>,
    pub p: f64,
    pub d: usize,
    pub g_bar: Option<f64>,
    /// `‖η_{k₀}‖, ..., ‖η_k‖` (in the chosen norm) for biased gains.
    pub bias_norms: Vec<f64>,
    pub b1: f64,
}

impl BoundInputs {
    pub fn new(
        lambda1: f64,
        lambda2: f64,
        c_g: f64,
        c_theta: f64,
        c_theta_bar: f64,
        k0: usize,
        gammas: Vec<f64>,
    ) -> Self {
        Self {
            lambda1,
            lambda2,
            c_g,
            c_theta,
            c_theta_bar,
            k0,
            gammas,
            p: 2.0,
            d: 1,
            g_bar: None,
            bias_norms: Vec::new(),
            b1: DEFAULT_B1,
        }
    }

    /// Last index `k` of the window.
    pub fn k(&self) -> usize {
        (self.k0 + self.gammas.len()).saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 > 0.0 && self.lambda1 <= self.lambda2 && self.lambda2.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < lambda1 <= lambda2 < inf, got {} and {}",
                self.lambda1, self.lambda2
            )));
        }
        if !(self.c_g >= 0.0 && self.c_theta > 0.0 && self.c_theta_bar >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need C_g >= 0, C_Theta > 0, bar C_Theta >= 0; got {}, {}, {}",
                self.c_g, self.c_theta, self.c_theta_bar
            )));
        }
        check_steps(&self.gammas, self.k0, self.lambda2)
    }

    /// `(C₁, C₂, C₃)` of the first-moment bound.
    pub fn first_moment_constants(&self) -> (f64, f64, f64) {
        let ratio = 1.0 + self.lambda2 / self.lambda1;
        (
            std::f64::consts::SQRT_2 * (self.c_theta_bar + self.c_theta).sqrt(),
            self.c_g.sqrt() * ratio,
            ratio,
        )
    }

    /// `(C'₁, C'₂, C'₃)` of the `p`-th moment bound.
    pub fn lp_moment_constants(&self) -> Result<(f64, f64, f64)> {
        let p = self.p;
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::InvalidParameter(format!("p must be >= 1, got {p}")));
        }
        let g_bar = self
            .g_bar
            .ok_or_else(|| Error::Precondition("the p-th moment bound needs G_bar".into()))?;
        let kp = linalg::k_p(p, self.d);
        let three = 3f64.powf(p - 1.0);
        let ratio = (1.0 + kp * kp * self.lambda2 / self.lambda1).powf(p);
        let bp = burkholder_constant(p, self.b1);
        Ok((
            three * kp.powf(p),
            three * 2f64.powf(p) * self.d as f64 * bp * g_bar.powf(p) * ratio,
            three * ratio,
        ))
    }
}

/// `B_p = (18 p^{5/2} / (p − 1)^{3/2})^p` for `p > 1`; `b1` at `p = 1`.
pub fn burkholder_constant(p: f64, b1: f64) -> f64 {
    if p == 1.0 {
        b1
    } else {
        (18.0 * p.powf(2.5) / (p - 1.0).powf(1.5)).powf(p)
    }
}

/// Checks `γ_i λ₂ ≤ 1`, naming the first offending index.
pub fn check_steps(gammas: &[f64], k0: usize, lambda2: f64) -> Result<()> {
    for (j, g) in gammas.iter().enumerate() {
        let product = g * lambda2;
        if !(*g >= 0.0) || product > 1.0 + STEP_SLACK {
            return Err(Error::StepPrecondition {
                index: k0 + j,
                product,
            });
        }
    }
    Ok(())
}

fn step_sums(gammas: &[f64]) -> (f64, f64) {
    let s: KahanSum = gammas.iter().copied().collect();
    let s2: KahanSum = gammas.iter().map(|g| g * g).collect();
    (s.value(), s2.value())
}

/// Right-hand side of the first-moment bound from precomputed sums.
pub fn first_moment_rhs(inputs: &BoundInputs, sum_gamma: f64, sum_gamma_sq: f64, oscillation: f64) -> f64 {
    let (c1, c2, c3) = inputs.first_moment_constants();
    c1 * (-0.5 * inputs.lambda1 * sum_gamma).exp() + c2 * sum_gamma_sq.sqrt() + c3 * oscillation
}

/// Bound on `E‖δ_{k+1}‖` over the window `k₀..=k`.
pub fn first_moment_bound(inputs: &BoundInputs, max_oscillation: f64) -> Result<f64> {
    inputs.validate()?;
    nonneg("oscillation", max_oscillation)?;
    let (s, s2) = step_sums(&inputs.gammas);
    Ok(first_moment_rhs(inputs, s, s2, max_oscillation))
}

/// Bound on `E‖δ_{k+1}‖_p^p` given `E‖δ_{k₀}‖_p^p` and
/// `max_i E‖θ_{i+1} − θ_{k₀}‖_p^p`.
pub fn lp_moment_bound(inputs: &BoundInputs, delta_k0_p: f64, max_oscillation_p: f64) -> Result<f64> {
    inputs.validate()?;
    nonneg("E|delta_k0|_p^p", delta_k0_p)?;
    nonneg("oscillation", max_oscillation_p)?;
    let (s, s2) = step_sums(&inputs.gammas);
    lp_moment_rhs(inputs, s, s2, delta_k0_p, max_oscillation_p)
}

fn lp_moment_rhs(inputs: &BoundInputs, s: f64, s2: f64, delta_k0_p: f64, osc_term: f64) -> Result<f64> {
    let (c1, c2, c3) = inputs.lp_moment_constants()?;
    let p = inputs.p;
    Ok(c1 * delta_k0_p * (-p * inputs.lambda1 * s).exp() + c2 * s2.powf(p / 2.0) + c3 * osc_term)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasMode {
    /// First-moment bound plus `C₃ Σγ_i‖η_i‖`.
    L1,
    /// `p`-th moment bound with `Σγ_i‖η_i‖_p` added to the oscillation
    /// before raising to `p`.
    Lp,
}

/// Bounds for gains whose average misses the linear form by `η_i`. The
/// sums run over the same window as the unbiased bounds, so zero bias
/// reproduces them exactly. In `Lp` mode `max_oscillation` is
/// `max_i E‖θ_{i+1} − θ_{k₀}‖_p^p` and `delta_k0_p` is `E‖δ_{k₀}‖_p^p`.
pub fn biased_bound(inputs: &BoundInputs, mode: BiasMode, max_oscillation: f64, delta_k0_p: f64) -> Result<f64> {
    if inputs.bias_norms.len() != inputs.gammas.len() {
        return Err(Error::Precondition(format!(
            "bias norms cover {} indices, window has {}",
            inputs.bias_norms.len(),
            inputs.gammas.len()
        )));
    }
    if inputs.bias_norms.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
        return Err(Error::InvalidParameter("bias norms must be finite and nonnegative".into()));
    }
    let bias: KahanSum = inputs.gammas.iter().zip(&inputs.bias_norms).map(|(g, b)| g * b).collect();
    let bias = bias.value();
    match mode {
        BiasMode::L1 => {
            let base = first_moment_bound(inputs, max_oscillation)?;
            if bias == 0.0 {
                return Ok(base);
            }
            Ok(base + inputs.first_moment_constants().2 * bias)
        }
        BiasMode::Lp => {
            inputs.validate()?;
            nonneg("oscillation", max_oscillation)?;
            nonneg("E|delta_k0|_p^p", delta_k0_p)?;
            let (s, s2) = step_sums(&inputs.gammas);
            let osc = if bias == 0.0 {
                max_oscillation
            } else {
                (max_oscillation.powf(1.0 / inputs.p) + bias).powf(inputs.p)
            };
            lp_moment_rhs(inputs, s, s2, delta_k0_p, osc)
        }
    }
}

/// Bias bound for `η = M ε`: `λ₂ K_p(d) ‖ε‖_p`, which is `λ₂‖ε‖` at `p = 2`.
pub fn eta_norm_bound(lambda2: f64, epsilon: &[f64], p: f64) -> f64 {
    let kp = linalg::k_p(p, epsilon.len());
    lambda2 * kp * norm_p(epsilon, p)
}

fn nonneg(what: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} must be finite and >= 0, got {v}")))
    }
}

/// `max_{j≥1} ‖θ_j − θ_0‖_p` for a path slice starting at `θ_{k₀}`.
pub fn estimate_oscillation(path: &[Vec<f64>], p: f64) -> f64 {
    let Some(first) = path.first() else {
        return 0.0;
    };
    path[1..]
        .iter()
        .map(|t| norm_p(&crate::stats::sub(t, first), p))
        .fold(0.0, f64::max)
}

/// `max_j mean_r ‖θ^{(r)}_j − θ^{(r)}_0‖_p^power` across replications, with
/// the expectation inside the max as in the bound. All slices must have
/// equal length.
pub fn oscillation_across_replications(paths: &[Vec<Vec<f64>>], p: f64, power: f64) -> Result<f64> {
    let Some(len) = paths.first().map(Vec::len) else {
        return Ok(0.0);
    };
    if paths.iter().any(|q| q.len() != len) {
        return Err(Error::Precondition("replication paths differ in length".into()));
    }
    let mut best = 0.0_f64;
    for j in 1..len {
        let mean: KahanSum = paths
            .iter()
            .map(|q| norm_p(&crate::stats::sub(&q[j], &q[0]), p).powf(power))
            .collect();
        best = best.max(mean.value() / paths.len() as f64);
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Empirical condition checks

/// Draws the flattened past (oldest record first) at which a condition is
/// checked. Pinned pasts ignore the generator.
pub type PastSampler = Arc<dyn Fn(&mut SplitMix64) -> Result<Vec<f64>> + Send + Sync>;

pub fn pinned_past(records: Vec<f64>) -> PastSampler {
    Arc::new(move |_| Ok(records.clone()))
}

/// Declared constants that the probes are judged against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionConstants {
    pub lambda1: f64,
    /// `L` with `‖g‖ ≤ L‖ϑ − θ‖`.
    pub lipschitz: f64,
    pub lambda2: Option<f64>,
    pub c_g: Option<f64>,
}

/// A gain, the model feeding it, the true parameter, and how pasts are drawn.
#[derive(Clone)]
pub struct ConditionFixture {
    pub name: String,
    pub gain: GainSpec,
    pub model: Arc<dyn Simulator>,
    pub truth: Vec<f64>,
    pub past: PastSampler,
    pub constants: ConditionConstants,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifySettings {
    /// Pasts drawn from the sampler.
    pub pasts: usize,
    /// Fresh observations per past.
    pub samples: usize,
    /// Batches for the eigenvalue standard errors.
    pub batches: usize,
    pub seed: u64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            pasts: 1,
            samples: 20_000,
            batches: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub probe: Vec<f64>,
    /// `−(ϑ − θ)ᵀ ĝ / ‖ϑ − θ‖²`.
    pub r_hat: f64,
    pub r_se: f64,
    /// Largest `‖ĝ‖ / ‖ϑ − θ‖` over the drawn pasts.
    pub g_norm_ratio: f64,
    pub g_norm_ratio_se: f64,
    /// Within-past `E‖G − ĝ‖²`.
    pub c_g_hat: f64,
    pub c_g_se: f64,
    pub pass: bool,
}

/// Smallest and largest eigenvalues of the fitted matrix `M` in
/// `ĝ(ϑ) − ĝ(θ) ≈ −M(ϑ − θ)`, averaged over pasts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenProbe {
    pub lambda_min: f64,
    pub lambda_min_se: f64,
    pub lambda_max: f64,
    pub lambda_max_se: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub probes: Vec<ProbeResult>,
    /// `‖ĝ(θ)‖` averaged over pasts; zero for an unbiased gain.
    pub gain_at_truth: MeanSe,
    pub eigen: Option<EigenProbe>,
    pub pass: bool,
}

/// Default probe grid: `θ ± s e_i` for `s ∈ {0.1, 0.5}` and the diagonal
/// directions `θ ± s(1, ..., 1)/√d`.
pub fn default_probes(truth: &[f64]) -> Vec<Vec<f64>> {
    let d = truth.len();
    let mut out = Vec::new();
    for s in [0.1, 0.5] {
        for i in 0..d {
            for sign in [1.0, -1.0] {
                let mut p = truth.to_vec();
                p[i] += sign * s;
                out.push(p);
            }
        }
        if d > 1 {
            for sign in [1.0, -1.0] {
                out.push(truth.iter().map(|t| t + sign * s / (d as f64).sqrt()).collect());
            }
        }
    }
    out
}

/// Per-past sample statistics for one probe.
struct PastStats {
    /// Raw gain draws, `samples × d`.
    values: Vec<f64>,
    mean: Vec<f64>,
    /// Mean of each batch.
    batch_means: Vec<Vec<f64>>,
    /// Projections of samples on the mean direction (for the norm SE).
    norm_se: f64,
    /// Within-past squared deviations.
    dev_sq: Vec<f64>,
    /// Per-sample `−ΔᵀG/‖Δ‖²`.
    r_values: Vec<f64>,
}

/// Monte-Carlo check of the average-gain conditions on a probe grid.
///
/// For every past and every probe, the same per-sample seeds drive the
/// observation draws, so differences between probes carry little noise.
pub fn verify_mean_field_conditions(
    fixture: &ConditionFixture,
    probes: &[Vec<f64>],
    settings: VerifySettings,
) -> Result<ConditionReport> {
    let d = fixture.truth.len();
    ensure_dim("condition fixture", d, fixture.gain.dim())?;
    if probes.is_empty() {
        return Err(Error::Precondition("probe set is empty".into()));
    }
    for p in probes {
        ensure_dim("probe", d, p.len())?;
        if norm2(&crate::stats::sub(p, &fixture.truth)) == 0.0 {
            return Err(Error::Precondition("probes must differ from the true parameter".into()));
        }
    }
    if settings.samples < 2 || settings.pasts == 0 || settings.batches < 2 || settings.samples < settings.batches {
        return Err(Error::InvalidParameter("need samples >= batches >= 2 and pasts >= 1".into()));
    }

    // Index 0 is the truth itself, used to centre the matrix fit.
    let mut points = vec![fixture.truth.clone()];
    points.extend(probes.iter().cloned());

    let mut past_rng = SplitMix64::stream(settings.seed, 11);
    let pasts: Vec<Vec<f64>> = (0..settings.pasts)
        .map(|_| (fixture.past)(&mut past_rng))
        .collect::<Result<_>>()?;

    let per_past: Vec<Vec<PastStats>> = pasts
        .par_iter()
        .enumerate()
        .map(|(pi, past)| {
            points
                .iter()
                .map(|pt| sample_point(fixture, past, pt, pi as u64, settings))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let c = fixture.constants;
    let mut results = Vec::with_capacity(probes.len());
    for (j, probe) in probes.iter().enumerate() {
        let idx = j + 1;
        let delta = crate::stats::sub(probe, &fixture.truth);
        let dn = norm2(&delta);
        // Control variate: the same draws evaluated at the truth, whose mean
        // is zero under the condition. It is reported separately below.
        let r_all: Vec<f64> = per_past
            .iter()
            .flat_map(|pp| pp[idx].r_values.iter().zip(&pp[0].projections(&delta, dn)).map(|(r, c)| r - c).collect::<Vec<_>>())
            .collect();
        let r = mean_se(&r_all);
        let (ratio, ratio_se) = per_past
            .iter()
            .map(|pp| (norm2(&pp[idx].mean) / dn, pp[idx].norm_se / dn))
            .fold((0.0_f64, 0.0_f64), |acc, v| if v.0 > acc.0 { v } else { acc });
        let dev: Vec<f64> = per_past.iter().flat_map(|pp| pp[idx].dev_sq.iter().copied()).collect();
        let cg = mean_se(&dev);
        let mut pass = r.mean >= c.lambda1 * (1.0 - TIE_SLACK) - 4.0 * r.se
            && ratio <= c.lipschitz * (1.0 + TIE_SLACK) + 4.0 * ratio_se;
        if let Some(declared) = c.c_g {
            pass &= cg.mean <= declared + 4.0 * cg.se;
        }
        results.push(ProbeResult {
            probe: probe.clone(),
            r_hat: r.mean,
            r_se: r.se,
            g_norm_ratio: ratio,
            g_norm_ratio_se: ratio_se,
            c_g_hat: cg.mean,
            c_g_se: cg.se,
            pass,
        });
    }

    let eigen = if probes.len() >= d {
        Some(eigen_probe(fixture, probes, &per_past, settings.batches)?)
    } else {
        None
    };
    let truth_norms: Vec<f64> = per_past.iter().map(|pp| norm2(&pp[0].mean)).collect();
    let gain_at_truth = if truth_norms.len() > 1 {
        mean_se(&truth_norms)
    } else {
        MeanSe { mean: truth_norms[0], se: per_past[0][0].norm_se }
    };
    let pass = results.iter().all(|r| r.pass) && eigen.map_or(true, |e| e.pass);
    Ok(ConditionReport {
        probes: results,
        gain_at_truth,
        eigen,
        pass,
    })
}

fn sample_point(
    fixture: &ConditionFixture,
    past: &[f64],
    point: &[f64],
    past_index: u64,
    settings: VerifySettings,
) -> Result<PastStats> {
    let d = point.len();
    let stride = fixture.model.record_dim();
    let view = Past::new(past, stride);
    let delta = crate::stats::sub(point, &fixture.truth);
    let dd = dot(&delta, &delta);
    let n = settings.samples;
    let mut values = Vec::with_capacity(n * d);
    let mut r_values = Vec::with_capacity(n);
    for s in 0..n {
        // Common random numbers: the seed depends on the past and sample only.
        let key = settings.seed ^ crate::rng::mix64(past_index.wrapping_mul(0x1_0000_0001) ^ s as u64);
        let mut obs_rng = SplitMix64::stream(key, crate::rng::streams::OBSERVATIONS);
        let mut gain_rng = SplitMix64::stream(key, crate::rng::streams::GAIN);
        let x = fixture.model.observe(0, &fixture.truth, point, view, &mut obs_rng)?;
        let g = fixture.gain.gain.evaluate(point, &x, view, &mut gain_rng)?.value;
        ensure_dim("gain output", d, g.len())?;
        if dd > 0.0 {
            r_values.push(-dot(&delta, &g) / dd);
        }
        values.extend_from_slice(&g);
    }
    let mean = column_means(&values, d, 0, n);
    let b = settings.batches;
    let batch_means = (0..b)
        .map(|i| column_means(&values, d, i * n / b, (i + 1) * n / b))
        .collect();
    let mn = norm2(&mean);
    let norm_se = if mn > 0.0 {
        let proj: Vec<f64> = values.chunks(d).map(|g| dot(g, &mean) / mn).collect();
        mean_se(&proj).se
    } else {
        // Without a direction, bound the SE of the norm by the total SE.
        (0..d)
            .map(|i| {
                let col: Vec<f64> = values.chunks(d).map(|g| g[i]).collect();
                mean_se(&col).se.powi(2)
            })
            .sum::<f64>()
            .sqrt()
    };
    let correction = n as f64 / (n as f64 - 1.0);
    let dev_sq: Vec<f64> = values
        .chunks(d)
        .map(|g| correction * g.iter().zip(&mean).map(|(a, m)| (a - m) * (a - m)).sum::<f64>())
        .collect();
    Ok(PastStats {
        values,
        mean,
        batch_means,
        norm_se,
        dev_sq,
        r_values,
    })
}

impl PastStats {
    /// Per-sample `−ΔᵀG/‖Δ‖²` for a given direction.
    fn projections(&self, delta: &[f64], dn: f64) -> Vec<f64> {
        let dd = dn * dn;
        self.values.chunks(delta.len()).map(|g| -dot(delta, g) / dd).collect()
    }
}

fn column_means(values: &[f64], d: usize, from: usize, to: usize) -> Vec<f64> {
    let mut sums = vec![KahanSum::new(); d];
    for g in values[from * d..to * d].chunks(d) {
        for (s, v) in sums.iter_mut().zip(g) {
            s.add(*v);
        }
    }
    let count = (to - from) as f64;
    sums.iter().map(|s| s.value() / count).collect()
}

/// Least-squares `M` with `Y ≈ −M D`, symmetrized, from probe columns.
fn fit_matrix(deltas: &Matrix, diffs: &Matrix) -> Result<Matrix> {
    let gram = deltas * deltas.transpose();
    let inv = gram
        .try_inverse()
        .ok_or_else(|| Error::Precondition("probe directions do not span the parameter space".into()))?;
    let m = -(diffs * deltas.transpose() * inv);
    Ok((&m + m.transpose()) * 0.5)
}

fn eigen_probe(
    fixture: &ConditionFixture,
    probes: &[Vec<f64>],
    per_past: &[Vec<PastStats>],
    batches: usize,
) -> Result<EigenProbe> {
    let d = fixture.truth.len();
    let j = probes.len();
    let deltas = DMatrix::from_fn(d, j, |r, c| probes[c][r] - fixture.truth[r]);
    let extremes = |means: &dyn Fn(usize) -> Vec<f64>| -> Result<(f64, f64)> {
        let base = means(0);
        let diffs = DMatrix::from_fn(d, j, |r, c| means(c + 1)[r] - base[r]);
        let ev = linalg::sym_eigenvalues(&fit_matrix(&deltas, &diffs)?)?;
        Ok((ev[0], ev[d - 1]))
    };
    let mut mins = Vec::with_capacity(per_past.len());
    let mut maxs = Vec::with_capacity(per_past.len());
    let mut batch_min = vec![KahanSum::new(); batches];
    let mut batch_max = vec![KahanSum::new(); batches];
    for pp in per_past {
        let (lo, hi) = extremes(&|i| pp[i].mean.clone())?;
        mins.push(lo);
        maxs.push(hi);
        for b in 0..batches {
            let (lo, hi) = extremes(&|i| pp[i].batch_means[b].clone())?;
            batch_min[b].add(lo);
            batch_max[b].add(hi);
        }
    }
    let np = per_past.len() as f64;
    let lambda_min = mins.iter().sum::<f64>() / np;
    let lambda_max = maxs.iter().sum::<f64>() / np;
    // Batch spread gives the SE for a fixed past; a spread over pasts adds to it.
    let bmin: Vec<f64> = batch_min.iter().map(|s| s.value() / np).collect();
    let bmax: Vec<f64> = batch_max.iter().map(|s| s.value() / np).collect();
    let within = |v: &[f64]| mean_se(v).se;
    let across = |v: &[f64]| if v.len() > 1 { mean_se(v).se } else { 0.0 };
    let lambda_min_se = within(&bmin).hypot(across(&mins));
    let lambda_max_se = within(&bmax).hypot(across(&maxs));
    let c = fixture.constants;
    let mut pass = lambda_min >= c.lambda1 * (1.0 - TIE_SLACK) - 4.0 * lambda_min_se;
    if let Some(l2) = c.lambda2 {
        pass &= lambda_max <= l2 * (1.0 + TIE_SLACK) + 4.0 * lambda_max_se;
    }
    Ok(EigenProbe {
        lambda_min,
        lambda_min_se,
        lambda_max,
        lambda_max_se,
        pass,
    })
}

/// Monte-Carlo `E‖G − ĝ‖²` at one probe, with `ĝ` the within-past mean.
pub fn verify_gain_variance(fixture: &ConditionFixture, probe: &[f64], settings: VerifySettings) -> Result<MeanSe> {
    ensure_dim("probe", fixture.truth.len(), probe.len())?;
    let mut past_rng = SplitMix64::stream(settings.seed, 11);
    let mut dev = Vec::with_capacity(settings.pasts * settings.samples);
    for pi in 0..settings.pasts {
        let past = (fixture.past)(&mut past_rng)?;
        let stats = sample_point(fixture, &past, probe, pi as u64, settings)?;
        dev.extend(stats.dev_sq);
    }
    Ok(mean_se(&dev))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedMomentReport {
    pub mean: f64,
    pub se: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Monte-Carlo `E min(X², T)` for `X = θ x_prev + ξ`, compared with the
/// floor `(5 − c)σ²/4`, where `σ² = E ξ²` and `c = E ξ⁴ / σ⁴`. Requires
/// `T ≥ (9 − c)σ²/4` and `0 < c < 5`.
pub fn truncated_moment_check(
    theta: f64,
    x_prev: f64,
    noise: Noise,
    t: f64,
    samples: usize,
    seed: u64,
) -> Result<TruncatedMomentReport> {
    let sigma2 = noise.variance();
    let c = noise.kurtosis();
    if !(sigma2 > 0.0 && c > 0.0 && c < 5.0) {
        return Err(Error::Precondition(format!(
            "noise needs positive variance and kurtosis in (0,5), got {sigma2} and {c}"
        )));
    }
    let floor_t = (9.0 - c) * sigma2 / 4.0;
    if t < floor_t * (1.0 - 1e-12) {
        return Err(Error::Precondition(format!("truncation T = {t} is below (9-c)sigma^2/4 = {floor_t}")));
    }
    if samples < 2 {
        return Err(Error::InvalidParameter("need at least 2 samples".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let vals: Vec<f64> = (0..samples)
        .map(|_| {
            let x = theta * x_prev + noise.sample(&mut rng);
            (x * x).min(t)
        })
        .collect();
    let m = mean_se(&vals);
    let threshold = (5.0 - c) * sigma2 / 4.0;
    Ok(TruncatedMomentReport {
        mean: m.mean,
        se: m.se,
        threshold,
        pass: m.mean >= threshold - 4.0 * m.se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gains::{
        Ar1TruncatedGain, Arch1Gain, GaussianKnownCovGain, LaggedNormalizedGain, QuantileGain, SignalNoiseGain,
    };
    use crate::models::{Arch1, ArdBatch, CondGaussian, CovRule, ParameterPath, QuantileModel, SignalNoise};
    use proptest::prelude::*;

    fn inputs(gammas: Vec<f64>) -> BoundInputs {
        BoundInputs::new(1.0, 1.0, 1.0, 0.5, 0.5, 0, gammas)
    }

    #[test]
    fn first_moment_examples() {
        let b = first_moment_bound(&inputs(vec![0.0; 5]), 0.0).unwrap();
        assert_eq!(b, std::f64::consts::SQRT_2);
        let b = first_moment_bound(&inputs(vec![0.1; 10]), 0.0).unwrap();
        // √2 e^{−1/2} + 2√0.1
        let hand = std::f64::consts::SQRT_2 * (-0.5f64).exp() + 2.0 * 0.1f64.sqrt();
        assert!((b - hand).abs() < 1e-14);
        assert!((b - 1.49022).abs() < 1e-5);
        let with_osc = first_moment_bound(&inputs(vec![0.1; 10]), 0.3).unwrap();
        assert!((with_osc - b - 0.6).abs() < 1e-14);
    }

    #[test]
    fn step_precondition_names_index() {
        let mut i = inputs(vec![0.1, 0.5, 1.5, 0.1]);
        i.k0 = 7;
        match first_moment_bound(&i, 0.0) {
            Err(Error::StepPrecondition { index, product }) => {
                assert_eq!(index, 9);
                assert_eq!(product, 1.5);
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut exact = inputs(vec![1.0 / 3.0]);
        exact.lambda2 = 3.0;
        assert!(first_moment_bound(&exact, 0.0).is_ok());
    }

    #[test]
    fn lp_moment_examples() {
        let mut i = inputs(vec![0.0; 4]);
        i.p = 2.0;
        i.d = 1;
        i.g_bar = Some(1.0);
        assert!((burkholder_constant(2.0, 2.0) - 10368.0).abs() < 1e-9);
        let b = lp_moment_bound(&i, 0.7, 0.0).unwrap();
        assert!((b - 3.0 * 0.7).abs() < 1e-15);
        i.p = 1.0;
        let b = lp_moment_bound(&i, 1.0, 0.0).unwrap();
        assert_eq!(b, 1.0);
        i.g_bar = None;
        assert!(lp_moment_bound(&i, 1.0, 0.0).is_err());
    }

    #[test]
    fn lp_moment_hand_value() {
        // p = 2, d = 3: K_2 = 1, C'_1 = 3, C'_2 = 3·4·3·10368·Ḡ²·(1+λ2/λ1)², C'_3 = 3(1+λ2/λ1)².
        let mut i = BoundInputs::new(0.5, 1.0, 0.0, 1.0, 1.0, 0, vec![0.1; 4]);
        i.p = 2.0;
        i.d = 3;
        i.g_bar = Some(0.5);
        let b = lp_moment_bound(&i, 2.0, 0.1).unwrap();
        let hand = 3.0 * 2.0 * (-2.0 * 0.5 * 0.4f64).exp() + 3.0 * 4.0 * 3.0 * 10368.0 * 0.25 * 9.0 * 0.04 + 3.0 * 9.0 * 0.1;
        assert!((b - hand).abs() < 1e-9 * hand);
    }

    #[test]
    fn biased_examples() {
        let mut i = inputs(vec![0.1; 10]);
        i.bias_norms = vec![0.0; 10];
        assert_eq!(biased_bound(&i, BiasMode::L1, 0.2, 0.0).unwrap(), first_moment_bound(&i, 0.2).unwrap());
        i.bias_norms = vec![0.5; 10];
        let extra = biased_bound(&i, BiasMode::L1, 0.0, 0.0).unwrap() - first_moment_bound(&i, 0.0).unwrap();
        assert!((extra - 1.0).abs() < 1e-14);
        i.bias_norms.pop();
        assert!(biased_bound(&i, BiasMode::L1, 0.0, 0.0).is_err());

        let mut l = inputs(vec![0.05; 6]);
        l.g_bar = Some(1.0);
        l.p = 3.0;
        l.d = 2;
        l.bias_norms = vec![0.0; 6];
        assert_eq!(biased_bound(&l, BiasMode::Lp, 0.4, 0.9).unwrap(), lp_moment_bound(&l, 0.9, 0.4).unwrap());
        l.bias_norms = vec![0.2; 6];
        let (_, _, c3) = l.lp_moment_constants().unwrap();
        let extra = biased_bound(&l, BiasMode::Lp, 0.4, 0.9).unwrap() - lp_moment_bound(&l, 0.9, 0.4).unwrap();
        let hand = c3 * ((0.4f64.cbrt() + 0.06).powi(3) - 0.4);
        assert!((extra - hand).abs() < 1e-9 * hand);
    }

    #[test]
    fn eta_bound_case_one() {
        assert!((eta_norm_bound(2.0, &[3.0, 4.0], 2.0) - 10.0).abs() < 1e-14);
        // p = 4, d = 4: K_4 = 4^{1/4}.
        let v = eta_norm_bound(1.0, &[1.0, 1.0, 1.0, 1.0], 4.0);
        assert!((v - 4f64.powf(0.25) * 4f64.powf(0.25)).abs() < 1e-14);
        // The bound dominates ‖Mε‖_p for SPD M with top eigenvalue λ2.
        let mut rng = SplitMix64::new(3);
        for _ in 0..200 {
            let a = Matrix::from_fn(3, 3, |_, _| rng.normal());
            let m = &a * a.transpose();
            let l2 = linalg::sym_eigenvalues(&m).unwrap()[2];
            let e: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            for p in [1.0, 2.0, 3.0, 6.0] {
                let eta = &m * nalgebra::DVector::from_column_slice(&e);
                assert!(norm_p(eta.as_slice(), p) <= eta_norm_bound(l2, &e, p) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn oscillation_examples() {
        assert_eq!(estimate_oscillation(&vec![vec![1.0, 2.0]; 6], 2.0), 0.0);
        let v = [0.3, -0.4];
        let path: Vec<Vec<f64>> = (0..=10).map(|i| v.iter().map(|x| x * i as f64).collect()).collect();
        assert!((estimate_oscillation(&path, 2.0) - 5.0).abs() < 1e-14);
        let path = ParameterPath::new(
            crate::models::PathKind::Stabilizing { start: vec![0.0], c_rho: 1.0, beta: 1.0 },
            100.0,
        )
        .unwrap()
        .generate(200, 4)
        .unwrap();
        let k0 = 50;
        let budget: f64 = (k0..200).map(|i| 1.0 / i as f64).sum();
        assert!(estimate_oscillation(&path[k0..], 2.0) <= budget + 1e-12);
        let reps = vec![path[k0..].to_vec(), path[k0..].to_vec()];
        let o = oscillation_across_replications(&reps, 2.0, 1.0).unwrap();
        assert!((o - estimate_oscillation(&path[k0..], 2.0)).abs() < 1e-15);
    }

    fn settings(samples: usize, pasts: usize) -> VerifySettings {
        VerifySettings {
            pasts,
            samples,
            batches: 20,
            seed: 17,
        }
    }

    #[test]
    fn signal_noise_probes_are_exact() {
        let model = SignalNoise::new(ParameterPath::static_path(vec![0.5, -0.5], 1.0).unwrap(), Noise::Normal { sigma: 1.0 }).unwrap();
        let fx = ConditionFixture {
            name: "signal".into(),
            gain: GainSpec::new(SignalNoiseGain { d: 2 }),
            model: Arc::new(model),
            truth: vec![0.5, -0.5],
            past: pinned_past(Vec::new()),
            constants: ConditionConstants { lambda1: 1.0, lipschitz: 1.0, lambda2: Some(1.0), c_g: Some(2.0) },
        };
        let rep = verify_mean_field_conditions(&fx, &default_probes(&fx.truth), settings(10_000, 1)).unwrap();
        assert!(rep.pass, "{rep:?}");
        // Common random numbers make the fitted M exactly the identity.
        let e = rep.eigen.unwrap();
        assert!((e.lambda_min - 1.0).abs() < 1e-10 && (e.lambda_max - 1.0).abs() < 1e-10);
        for p in &rep.probes {
            assert!((p.c_g_hat - 2.0).abs() < 4.0 * p.c_g_se);
        }
        let a2 = verify_gain_variance(&fx, &[0.0, 0.0], settings(20_000, 1)).unwrap();
        assert!((a2.mean - 2.0).abs() < 4.0 * a2.se);
    }

    #[test]
    fn gaussian_probe_ratio_range() {
        let sigma = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 4.0]));
        let model = CondGaussian::new(ParameterPath::static_path(vec![0.0, 0.0], 1.0).unwrap(), CovRule::Constant(sigma.clone()), (2.0, 4.0)).unwrap();
        let fx = ConditionFixture {
            name: "gaussian".into(),
            gain: GainSpec::new(GaussianKnownCovGain::new(&sigma).unwrap()),
            model: Arc::new(model),
            truth: vec![0.0, 0.0],
            past: pinned_past(vec![0.0, 0.0]),
            constants: ConditionConstants { lambda1: 0.25, lipschitz: 0.5, lambda2: Some(0.5), c_g: Some(0.75) },
        };
        let rep = verify_mean_field_conditions(&fx, &default_probes(&fx.truth), settings(10_000, 1)).unwrap();
        assert!(rep.pass, "{rep:?}");
        for p in &rep.probes {
            assert!(p.r_hat >= 0.25 - 1e-9 && p.r_hat <= 0.5 + 1e-9, "{}", p.r_hat);
        }
    }

    #[test]
    fn quantile_probe_near_unit_density() {
        let model = QuantileModel::new(ParameterPath::static_path(vec![0.5], 1.0).unwrap(), 0.5, Noise::Uniform { half_width: 0.5 }).unwrap();
        let fx = ConditionFixture {
            name: "quantile".into(),
            gain: GainSpec::new(QuantileGain { alpha: 0.5 }),
            model: Arc::new(model),
            truth: vec![0.5],
            past: pinned_past(Vec::new()),
            constants: ConditionConstants { lambda1: 1.0, lipschitz: 1.0, lambda2: Some(1.0), c_g: Some(0.25) },
        };
        let rep = verify_mean_field_conditions(&fx, &[vec![0.6], vec![0.4], vec![0.9]], settings(40_000, 1)).unwrap();
        assert!(rep.pass, "{rep:?}");
        let p = &rep.probes[0];
        assert!((p.r_hat - 1.0).abs() < 4.0 * p.r_se);
    }

    #[test]
    fn arch_and_ar1_truncated_pass_with_random_past() {
        let theta = 0.5;
        let t = 1.5;
        let arch = Arch1::new(ParameterPath::static_path(vec![theta], 1.0).unwrap(), Noise::Normal { sigma: 1.0 }, 0.0).unwrap();
        let arch = Arc::new(arch);
        let sampler_model = arch.clone();
        let past: PastSampler = Arc::new(move |rng| sampler_model.observe(0, &[theta], &[theta], Past::new(&[1.0], 1), rng));
        let fx = ConditionFixture {
            name: "arch".into(),
            gain: GainSpec::new(Arch1Gain { t }),
            model: arch,
            truth: vec![theta],
            past,
            constants: ConditionConstants {
                lambda1: 0.5,
                lipschitz: t,
                lambda2: Some(t),
                c_g: Some(2.0 * (1.0 + theta * t) * (1.0 + theta * t)),
            },
        };
        let rep = verify_mean_field_conditions(&fx, &default_probes(&fx.truth), settings(1000, 200)).unwrap();
        assert!(rep.pass, "{rep:?}");

        let ar = Arc::new(ArdBatch::new(ParameterPath::static_path(vec![theta], 1.0).unwrap(), 1.0, 0.9, vec![0.0]).unwrap());
        let sampler_model = ar.clone();
        let past: PastSampler = Arc::new(move |rng| sampler_model.observe(0, &[theta], &[theta], Past::new(&[1.0], 1), rng));
        let fx = ConditionFixture {
            name: "ar1".into(),
            gain: GainSpec::new(Ar1TruncatedGain { t }),
            model: ar,
            truth: vec![theta],
            past,
            constants: ConditionConstants { lambda1: 0.5, lipschitz: t, lambda2: Some(t), c_g: Some(t) },
        };
        let rep = verify_mean_field_conditions(&fx, &default_probes(&fx.truth), settings(1000, 200)).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn lagged_vector_gain_fails_eigen_probe() {
        let theta = vec![0.4, 0.2];
        // Observation X_k given the lag vector (X_{k−1}, X_{k−2}) = (1, −0.5).
        struct Lagged(ParameterPath);
        impl Simulator for Lagged {
            fn param_dim(&self) -> usize {
                2
            }
            fn record_dim(&self) -> usize {
                2
            }
            fn path(&self) -> &ParameterPath {
                &self.0
            }
            fn initial_history(&self, _: &mut SplitMix64) -> Result<Vec<f64>> {
                Ok(vec![0.0, 0.0])
            }
            fn observe(&self, _: usize, th: &[f64], _: &[f64], past: Past<'_>, rng: &mut SplitMix64) -> Result<Vec<f64>> {
                let lag = past.back(1).unwrap();
                Ok(vec![dot(th, lag) + rng.normal(), 0.0])
            }
        }
        let fx = ConditionFixture {
            name: "lagged".into(),
            gain: GainSpec::new(LaggedNormalizedGain { d: 2, mu: 1.0 }),
            model: Arc::new(Lagged(ParameterPath::static_path(theta.clone(), 1.0).unwrap())),
            truth: theta.clone(),
            past: pinned_past(vec![1.0, -0.5]),
            constants: ConditionConstants { lambda1: 0.05, lipschitz: 1.0, lambda2: None, c_g: None },
        };
        let rep = verify_mean_field_conditions(&fx, &default_probes(&fx.truth), settings(10_000, 1)).unwrap();
        let e = rep.eigen.unwrap();
        assert!(e.lambda_min.abs() < 1e-9, "{e:?}");
        assert!(!e.pass);
        assert!(!rep.pass);
    }

    #[test]
    fn truncated_moment_grid_and_guards() {
        let normal = Noise::Normal { sigma: 1.0 };
        for theta in [0.0, 0.3, 0.9] {
            for x_prev in [0.0, 1.0, 5.0] {
                for t in [1.5, 3.0] {
                    let r = truncated_moment_check(theta, x_prev, normal, t, 20_000, 5).unwrap();
                    assert_eq!(r.threshold, 0.5);
                    assert!(r.pass, "{theta} {x_prev} {t}: {r:?}");
                }
            }
        }
        let r = truncated_moment_check(0.0, 0.0, normal, 1e12, 50_000, 6).unwrap();
        assert!((r.mean - 1.0).abs() < 4.0 * r.se);
        assert!(truncated_moment_check(0.0, 0.0, normal, 1.4, 100, 0).is_err());
    }

    proptest! {
        #[test]
        fn bounds_are_monotone(
            cg in 0.0f64..5.0,
            osc in 0.0f64..2.0,
            bump in 1e-3f64..1.0,
            g in 1e-3f64..0.5,
            len in 1usize..40,
        ) {
            let mut i = inputs(vec![g; len]);
            i.c_g = cg;
            let base = first_moment_bound(&i, osc).unwrap();
            prop_assert!(first_moment_bound(&i, osc + bump).unwrap() > base);
            let mut j = i.clone();
            j.c_g = cg + bump;
            prop_assert!(first_moment_bound(&j, osc).unwrap() > base);
            let mut b = i.clone();
            b.bias_norms = vec![bump; len];
            prop_assert!(biased_bound(&b, BiasMode::L1, osc, 0.0).unwrap() > base);
            // A longer window adds to Σγ²; with C_g > 0 the second term grows.
            let mut longer = i.clone();
            longer.g_bar = Some(1.0);
            let t2 = lp_moment_bound(&longer, 0.0, osc).unwrap();
            longer.gammas.push(g);
            prop_assert!(lp_moment_bound(&longer, 0.0, osc).unwrap() > t2);
        }

        #[test]
        fn zero_bias_reduces_bitwise(
            g in 1e-3f64..0.5,
            len in 1usize..30,
            osc in 0.0f64..2.0,
            dk in 0.0f64..3.0,
            p in 1.0f64..5.0,
        ) {
            let mut i = inputs(vec![g; len]);
            i.bias_norms = vec![0.0; len];
            i.g_bar = Some(0.7);
            i.p = p;
            i.d = 2;
            prop_assert_eq!(biased_bound(&i, BiasMode::L1, osc, dk).unwrap(), first_moment_bound(&i, osc).unwrap());
            prop_assert_eq!(biased_bound(&i, BiasMode::Lp, osc, dk).unwrap(), lp_moment_bound(&i, dk, osc).unwrap());
        }
    }
}

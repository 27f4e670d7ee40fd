//! Step-size sequences for the static, stabilizing and Lipschitz regimes.
//!
//! Indices `k < 2` reuse the `k = 2` value. Every emitted step is clipped
//! to the cap `Γ` and, when a `λ2` guard is set, to `1/λ2`.

use crate::error::{Error, Result};

/// `C_γ ln(k) / k`, unguarded.
pub fn schedule_static(c_gamma: f64, k: usize) -> f64 {
    let k = k.max(2) as f64;
    c_gamma * k.ln() / k
}

/// `C_γ (ln k)^{1/3} k^{−2β/3}` for `0 < β < 3/2`; larger `β` falls back to
/// the static schedule.
pub fn schedule_stabilizing(c_gamma: f64, beta: f64, k: usize) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "stabilizing schedule needs beta > 0, got {beta}"
        )));
    }
    if beta >= 1.5 {
        return Ok(schedule_static(c_gamma, k));
    }
    let k = k.max(2) as f64;
    Ok(c_gamma * k.ln().cbrt() * k.powf(-2.0 * beta / 3.0))
}

/// Constant step `C_γ (ln n)^{(2β−1)/(2β+1)} n^{−2β/(2β+1)}` for a horizon
/// of `n` samples, `0 < β ≤ 1`.
pub fn schedule_lipschitz(c_gamma: f64, beta: f64, n: usize) -> Result<f64> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "lipschitz schedule needs beta in (0,1], got {beta}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "lipschitz schedule needs n >= 2, got {n}"
        )));
    }
    let n = n as f64;
    let q = 2.0 * beta + 1.0;
    Ok(c_gamma * n.ln().powf((2.0 * beta - 1.0) / q) * n.powf(-2.0 * beta / q))
}

pub fn schedule_constant(gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "constant step must be positive, got {gamma}"
        )));
    }
    Ok(gamma)
}

/// `4/λ1` when `λ1` is declared, else 1.
pub fn default_c_gamma(lambda1: Option<f64>) -> f64 {
    match lambda1 {
        Some(l) if l > 0.0 => 4.0 / l,
        _ => 1.0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleKind {
    Static { c_gamma: f64 },
    Stabilizing { c_gamma: f64, beta: f64 },
    Lipschitz { c_gamma: f64, beta: f64, n: usize },
    Constant { gamma: f64 },
    /// Prescribed sequence, e.g. Kalman gains; index `k` reads entry `k`.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule {
    pub kind: ScheduleKind,
    pub cap: f64,
    pub lambda2_guard: Option<f64>,
}

impl StepSchedule {
    pub fn new(kind: ScheduleKind) -> Result<Self> {
        match &kind {
            ScheduleKind::Static { c_gamma } => positive("C_gamma", *c_gamma)?,
            ScheduleKind::Stabilizing { c_gamma, beta } => {
                positive("C_gamma", *c_gamma)?;
                schedule_stabilizing(*c_gamma, *beta, 2)?;
            }
            ScheduleKind::Lipschitz { c_gamma, beta, n } => {
                positive("C_gamma", *c_gamma)?;
                schedule_lipschitz(*c_gamma, *beta, *n)?;
            }
            ScheduleKind::Constant { gamma } => {
                schedule_constant(*gamma)?;
            }
            ScheduleKind::Explicit(seq) => {
                if seq.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
                    return Err(Error::InvalidParameter(
                        "explicit steps must be finite and nonnegative".into(),
                    ));
                }
            }
        }
        Ok(Self {
            kind,
            cap: f64::INFINITY,
            lambda2_guard: None,
        })
    }

    pub fn with_cap(mut self, cap: f64) -> Result<Self> {
        positive("cap", cap)?;
        self.cap = cap;
        Ok(self)
    }

    pub fn with_lambda2_guard(mut self, lambda2: f64) -> Result<Self> {
        positive("lambda2", lambda2)?;
        self.lambda2_guard = Some(lambda2);
        Ok(self)
    }

    /// Unguarded value at index `k`.
    fn raw(&self, k: usize) -> f64 {
        match &self.kind {
            ScheduleKind::Static { c_gamma } => schedule_static(*c_gamma, k),
            ScheduleKind::Stabilizing { c_gamma, beta } => {
                schedule_stabilizing(*c_gamma, *beta, k).expect("validated at construction")
            }
            ScheduleKind::Lipschitz { c_gamma, beta, n } => {
                schedule_lipschitz(*c_gamma, *beta, *n).expect("validated at construction")
            }
            ScheduleKind::Constant { gamma } => *gamma,
            ScheduleKind::Explicit(seq) => seq.get(k).copied().unwrap_or(f64::NAN),
        }
    }

    /// Guarded step `γ_k`.
    pub fn gamma(&self, k: usize) -> f64 {
        let mut g = self.raw(k).min(self.cap);
        if let Some(l2) = self.lambda2_guard {
            g = g.min(1.0 / l2);
        }
        g
    }

    /// `γ_0, ..., γ_{n−1}`.
    pub fn sequence(&self, n: usize) -> Result<Vec<f64>> {
        if let ScheduleKind::Explicit(seq) = &self.kind {
            if seq.len() < n {
                return Err(Error::InvalidParameter(format!(
                    "explicit schedule has {} steps, horizon needs {n}",
                    seq.len()
                )));
            }
        }
        Ok((0..n).map(|k| self.gamma(k)).collect())
    }

    pub fn regime_name(&self) -> &'static str {
        match self.kind {
            ScheduleKind::Static { .. } => "static",
            ScheduleKind::Stabilizing { .. } => "stabilizing",
            ScheduleKind::Lipschitz { .. } => "lipschitz",
            ScheduleKind::Constant { .. } => "constant",
            ScheduleKind::Explicit(_) => "explicit",
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    // Hand evaluations: 2/e², 2 ln 10 / 10, 3^{1/3} e^{-3/2}, (ln 8)^{1/3}/4.
    #[test]
    fn static_values() {
        // k = e² is not an integer; evaluate the closed form directly.
        let at_e2 = 1.0 * (E * E).ln() / (E * E);
        assert!((at_e2 - 2.0 / (E * E)).abs() < 1e-15);
        assert!((2.0 / (E * E) - 0.2707).abs() < 1e-4);
        assert!((schedule_static(2.0, 10) - 0.460_517_018_598_809_1).abs() < 1e-15);
        assert_eq!(schedule_static(1.0, 0), schedule_static(1.0, 2));
        assert_eq!(schedule_static(1.0, 1), schedule_static(1.0, 2));
    }

    #[test]
    fn static_decreases_after_three() {
        for k in 3..2000 {
            assert!(schedule_static(1.0, k + 1) < schedule_static(1.0, k));
        }
    }

    #[test]
    fn stabilizing_values() {
        assert!((schedule_stabilizing(1.0, 1.0, 8).unwrap() - 8f64.ln().cbrt() / 4.0).abs() < 1e-15);
        assert!((8f64.ln().cbrt() / 4.0 - 0.3191).abs() < 1e-4);
        // β = 3/4 at k = e³: 3^{1/3} e^{-3/2}
        let k = E.powi(3);
        let v = k.ln().cbrt() * k.powf(-0.5);
        assert!((v - 3f64.cbrt() * (-1.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.3218).abs() < 1e-4);
        assert!(schedule_stabilizing(1.0, 0.0, 5).is_err());
        assert_eq!(
            schedule_stabilizing(2.0, 1.5, 50).unwrap(),
            schedule_static(2.0, 50)
        );
    }

    #[test]
    fn lipschitz_values() {
        // n = e³ in closed form
        let n = E.powi(3);
        let v = n.ln().cbrt() * n.powf(-2.0 / 3.0);
        assert!((v - 0.1952).abs() < 1e-4);
        let g = schedule_lipschitz(1.0, 1.0, 1_000_000).unwrap();
        // (ln 10⁶)^{1/3} · 10⁻⁴ = 2.39945...e-4
        assert!((g - 1e6f64.ln().cbrt() * 1e-4).abs() < 1e-18);
        assert!((g - 2.3995e-4).abs() < 1e-8);
        let half = schedule_lipschitz(3.0, 0.5, 400).unwrap();
        assert!((half - 3.0 / 20.0).abs() < 1e-15);
        assert!(schedule_lipschitz(1.0, 1.5, 10).is_err());
        assert!(schedule_lipschitz(1.0, 1.0, 1).is_err());
    }

    #[test]
    fn constant_and_guards() {
        let s = StepSchedule::new(ScheduleKind::Constant { gamma: 0.1 }).unwrap();
        assert_eq!(s.gamma(7), 0.1);
        let g = s.clone().with_lambda2_guard(20.0).unwrap();
        assert_eq!(g.gamma(0), 0.05);
        let c = s.with_cap(0.01).unwrap();
        assert_eq!(c.gamma(3), 0.01);
        assert!(schedule_constant(0.0).is_err());
    }

    #[test]
    fn default_c_gamma_rule() {
        assert_eq!(default_c_gamma(Some(0.5)), 8.0);
        assert_eq!(default_c_gamma(None), 1.0);
    }

    #[test]
    fn explicit_sequence_length_checked() {
        let s = StepSchedule::new(ScheduleKind::Explicit(vec![0.5, 0.25])).unwrap();
        assert_eq!(s.sequence(2).unwrap(), vec![0.5, 0.25]);
        assert!(s.sequence(3).is_err());
    }
}

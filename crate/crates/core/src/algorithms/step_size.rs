//! Step-size bounds, schedules and weighted iterate averaging.

use serde::{Deserialize, Serialize};

use crate::{Error, ParamVector, Result};

/// The individual learning-rate limits. A limit whose denominator carries a
/// zero `ω` factor is `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaBounds {
    /// `1/(2L(1 + ω_up/N))`
    pub up: f64,
    /// `1/(8 L ω_dwn)`
    pub dwn: f64,
    /// `1/(8√2 L ω_dwn √(8ω_dwn + ω_up/N))`
    pub upsilon: f64,
    /// `1/(8L(1 + ω_dwn)(1 + ω_up/N))`, the limit of the degraded update.
    pub degraded: f64,
}

impl GammaBounds {
    pub fn non_degraded_max(&self) -> f64 {
        self.up.min(self.dwn).min(self.upsilon)
    }
}

fn inv_or_inf(denominator: f64) -> f64 {
    if denominator == 0.0 {
        f64::INFINITY
    } else {
        1.0 / denominator
    }
}

pub fn gamma_bounds(l: f64, omega_up: f64, omega_dwn: f64, workers: usize) -> GammaBounds {
    let up_ratio = omega_up / workers as f64;
    GammaBounds {
        up: inv_or_inf(2.0 * l * (1.0 + up_ratio)),
        dwn: inv_or_inf(8.0 * l * omega_dwn),
        upsilon: inv_or_inf(8.0 * std::f64::consts::SQRT_2 * l * omega_dwn * (8.0 * omega_dwn + up_ratio).sqrt()),
        degraded: inv_or_inf(8.0 * l * (1.0 + omega_dwn) * (1.0 + up_ratio)),
    }
}

/// Largest step with a convergence guarantee: the degraded limit when
/// `degraded`, otherwise the minimum of the three non-degraded limits.
pub fn gamma_max(l: f64, omega_up: f64, omega_dwn: f64, workers: usize, degraded: bool) -> f64 {
    let b = gamma_bounds(l, omega_up, omega_dwn, workers);
    if degraded {
        b.degraded
    } else {
        b.non_degraded_max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaPolicy {
    Constant {
        gamma: f64,
    },
    /// `γ_k = 2/(μ(k+1) + L̃)`
    Decaying {
        mu: f64,
        l_tilde: f64,
    },
}

impl GammaPolicy {
    pub fn gamma_at(&self, k: u64) -> f64 {
        match *self {
            GammaPolicy::Constant { gamma } => gamma,
            GammaPolicy::Decaying { mu, l_tilde } => 2.0 / (mu * (k as f64 + 1.0) + l_tilde),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            GammaPolicy::Constant { gamma } if gamma >= 0.0 && gamma.is_finite() => Ok(()),
            GammaPolicy::Constant { .. } => Err(Error::config("gamma", "must be finite and non-negative")),
            GammaPolicy::Decaying { mu, l_tilde }
                if mu >= 0.0 && l_tilde > 0.0 && mu.is_finite() && l_tilde.is_finite() =>
            {
                Ok(())
            }
            GammaPolicy::Decaying { .. } => Err(Error::config("gamma", "decaying schedule needs μ ≥ 0 and L̃ > 0")),
        }
    }
}

/// A schedule together with the bound it is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPolicy {
    pub gamma_max: f64,
    pub l_tilde: f64,
    pub schedule: GammaPolicy,
}

impl StepPolicy {
    pub fn new(gamma_max: f64, schedule: GammaPolicy) -> Result<Self> {
        if gamma_max.is_nan() || gamma_max <= 0.0 {
            return Err(Error::config("gamma_max", "must be positive"));
        }
        schedule.validate()?;
        Ok(Self { gamma_max, l_tilde: 1.0 / (2.0 * gamma_max), schedule })
    }

    /// The decaying schedule anchored at `L̃ = 1/(2γ_max)`.
    pub fn decaying(gamma_max: f64, mu: f64) -> Result<Self> {
        let l_tilde = 1.0 / (2.0 * gamma_max);
        Self::new(gamma_max, GammaPolicy::Decaying { mu, l_tilde })
    }

    pub fn gamma_at(&self, k: u64) -> f64 {
        self.schedule.gamma_at(k)
    }

    /// A warning when a constant step exceeds the bound; such runs proceed.
    pub fn warning(&self) -> Option<String> {
        match self.schedule {
            GammaPolicy::Constant { gamma } if gamma > self.gamma_max => {
                Some(format!("constant step {gamma:e} exceeds the maximal learning rate {:e}", self.gamma_max))
            }
            _ => None,
        }
    }
}

/// `Σ_j λ_j w_j / Σ_j λ_j` with `λ_j = 1/γ_j`, over iterates `w_0, w_1, …`.
/// A constant step gives the uniform average.
pub fn polyak_ruppert_weighted(iterates: &[ParamVector], policy: &GammaPolicy) -> Result<ParamVector> {
    let first = iterates.first().ok_or_else(|| Error::config("iterates", "at least one iterate is required"))?;
    if let GammaPolicy::Constant { .. } = policy {
        return Ok(ParamVector::mean_of(iterates, first.dim()));
    }
    let mut acc = ParamVector::zeros(first.dim());
    let mut total = 0.0;
    for (j, w) in iterates.iter().enumerate() {
        let lambda = 1.0 / policy.gamma_at(j as u64);
        acc.axpy(lambda, w);
        total += lambda;
    }
    acc.scale_mut(1.0 / total);
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncompressed_limit() {
        assert_eq!(gamma_max(2.0, 0.0, 0.0, 5, false), 0.25);
    }

    #[test]
    fn mixed_limits_by_hand() {
        let b = gamma_bounds(1.0, 1.0, 1.0, 20);
        assert!((b.up - 1.0 / 2.1).abs() < 1e-15);
        assert_eq!(b.dwn, 0.125);
        let ups = 1.0 / (8.0 * 2f64.sqrt() * (8.05f64).sqrt());
        assert!((b.upsilon - ups).abs() < 1e-15);
        assert_eq!(b.non_degraded_max(), ups);
    }

    #[test]
    fn schedules() {
        let p = GammaPolicy::Decaying { mu: 1.0, l_tilde: 3.0 };
        assert_eq!(p.gamma_at(0), 0.5);
        let c = GammaPolicy::Constant { gamma: 0.1 };
        assert!((0..100).all(|k| c.gamma_at(k) == 0.1));
        let s = StepPolicy::new(0.1, GammaPolicy::Constant { gamma: 0.2 }).unwrap();
        assert_eq!(s.l_tilde, 5.0);
        assert!(s.warning().is_some());
        assert!(StepPolicy::new(0.1, GammaPolicy::Constant { gamma: 0.05 }).unwrap().warning().is_none());
    }

    #[test]
    fn uniform_and_weighted_averages() {
        let its = [ParamVector::new(vec![0.0]).unwrap(), ParamVector::new(vec![2.0]).unwrap()];
        let c = GammaPolicy::Constant { gamma: 0.3 };
        assert_eq!(polyak_ruppert_weighted(&its, &c).unwrap()[0], 1.0);
        assert_eq!(polyak_ruppert_weighted(&its[..1], &c).unwrap()[0], 0.0);
        assert!(polyak_ruppert_weighted(&[], &c).is_err());
        // γ_0 = 2/2 = 1 and γ_1 = 2/3, so weights are 1 and 3/2.
        let d = GammaPolicy::Decaying { mu: 1.0, l_tilde: 1.0 };
        let avg = polyak_ruppert_weighted(&its, &d).unwrap()[0];
        assert!((avg - 3.0 / 2.5).abs() < 1e-15);
    }
}

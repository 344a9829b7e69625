//! Problem description: the nonlinearity, exponent of the weight, and solver settings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-hand side nonlinearity f(u) of u'' + lambda |x|^l f(u) = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    /// f(u) = e^u.
    Exponential,
    /// f(u) = (u + 1)^p with p > 1.
    Power { p: f64 },
}

impl Nonlinearity {
    pub fn f(&self, u: f64) -> f64 {
        match *self {
            Nonlinearity::Exponential => u.exp(),
            // Clamped at u = -1: only reached past a blow-down point, where the
            // continuation of the field is irrelevant but must stay finite.
            Nonlinearity::Power { p } => (u + 1.0).max(0.0).powf(p),
        }
    }

    pub fn f_prime(&self, u: f64) -> f64 {
        match *self {
            Nonlinearity::Exponential => u.exp(),
            Nonlinearity::Power { p } => p * (u + 1.0).max(0.0).powf(p - 1.0),
        }
    }

    /// g(s) = s f'(s) / f(s).
    pub fn g(&self, s: f64) -> f64 {
        match *self {
            Nonlinearity::Exponential => s,
            Nonlinearity::Power { p } => p * s / (s + 1.0),
        }
    }

    /// f'(0), the coefficient of the first nonlinear correction near u = 0.
    pub fn f_prime_at_zero(&self) -> f64 {
        match *self {
            Nonlinearity::Exponential => 1.0,
            Nonlinearity::Power { p } => p,
        }
    }

    pub fn is_power(&self) -> bool {
        matches!(self, Nonlinearity::Power { .. })
    }
}

/// Integration and root-finding tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative tolerance of the ODE integrator.
    pub ode_rel: f64,
    /// Absolute tolerance of the ODE integrator.
    pub ode_abs: f64,
    /// Abscissa tolerance of scalar root refinement (relative to scale).
    pub root: f64,
    /// Optional cap on the integrator step size.
    pub max_step: Option<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            ode_rel: 1e-10,
            ode_abs: 1e-12,
            root: 1e-13,
            max_step: None,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        if !(self.ode_rel > 0.0 && self.ode_abs > 0.0 && self.root > 0.0) {
            return Err(Error::Domain("tolerances must be positive".into()));
        }
        if let Some(h) = self.max_step {
            if !(h > 0.0) {
                return Err(Error::Domain("max_step must be positive".into()));
            }
        }
        Ok(())
    }
}

/// The full problem description: u'' + lambda |x|^l f(u) = 0 on (-1, 1), u(+-1) = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    /// Exponent of the weight |x|^l; l >= 0 (l > 0 for the theorem claims).
    pub l: f64,
    pub nonlinearity: Nonlinearity,
    pub tolerances: Tolerances,
    /// Cap for branch sweeps in the sup-norm parameter alpha.
    pub alpha_max: f64,
}

impl ProblemSpec {
    pub fn exponential(l: f64) -> Self {
        ProblemSpec {
            l,
            nonlinearity: Nonlinearity::Exponential,
            tolerances: Tolerances::default(),
            alpha_max: 30.0,
        }
    }

    pub fn power(l: f64, p: f64) -> Self {
        ProblemSpec {
            l,
            nonlinearity: Nonlinearity::Power { p },
            tolerances: Tolerances::default(),
            alpha_max: 50.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l >= 0.0) {
            return Err(Error::Domain(format!("l must be >= 0, got {}", self.l)));
        }
        if let Nonlinearity::Power { p } = self.nonlinearity {
            if !(p > 1.0) {
                return Err(Error::Domain(format!("power exponent p must be > 1, got {p}")));
            }
        }
        if !(self.alpha_max > 0.0) {
            return Err(Error::Domain("alpha_max must be positive".into()));
        }
        self.tolerances.validate()
    }

    /// Whether the symmetry-breaking theorem's hypotheses hold for this spec.
    /// Exponential: l > 0. Power: additionally (p - 1) l > 4.
    pub fn theorem_hypotheses_met(&self) -> bool {
        match self.nonlinearity {
            Nonlinearity::Exponential => self.l > 0.0,
            Nonlinearity::Power { p } => self.l > 0.0 && (p - 1.0) * self.l > 4.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_matches_definition() {
        let e = Nonlinearity::Exponential;
        assert_eq!(e.g(3.5), 3.5);
        let p = Nonlinearity::Power { p: 7.0 };
        let s = 2.0;
        let expect = s * p.f_prime(s) / p.f(s);
        assert!((p.g(s) - expect).abs() < 1e-15);
    }

    #[test]
    fn validation_rejects_bad_specs() {
        assert!(ProblemSpec::exponential(-0.5).validate().is_err());
        assert!(ProblemSpec::power(1.0, 1.0).validate().is_err());
        let mut s = ProblemSpec::exponential(1.0);
        s.tolerances.ode_rel = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn hypothesis_gate() {
        assert!(ProblemSpec::exponential(1.0).theorem_hypotheses_met());
        assert!(!ProblemSpec::exponential(0.0).theorem_hypotheses_met());
        assert!(ProblemSpec::power(1.0, 7.0).theorem_hypotheses_met());
        // (p-1) l = 1 <= 4
        assert!(!ProblemSpec::power(1.0, 2.0).theorem_hypotheses_met());
    }
}

//! Dispersion penalties `f` and their conjugate machinery.
//!
//! For a strictly convex `f`, the second-step dual uses
//! `rho(t) = t * (f')^{-1}(t) - f((f')^{-1}(t))`, whose derivative
//! `rho'(t) = (f')^{-1}(t)` maps a dual linear predictor back to a weight.
//! The first-step dual is written in terms of
//! `zeta(y) = y/n - y (h')^{-1}(y) + h((h')^{-1}(y))` with `h(x) = f(1/n - x)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A user-supplied dispersion function given by `f`, `f'`, `(f')^{-1}` and `f''`.
pub trait Dispersion: Send + Sync {
    fn f(&self, w: f64) -> f64;
    fn f_prime(&self, w: f64) -> f64;
    fn f_prime_inv(&self, t: f64) -> f64;
    fn f_second(&self, w: f64) -> f64;
    fn in_domain(&self, w: f64) -> bool {
        w.is_finite()
    }
    fn name(&self) -> &str {
        "custom"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    Entropy,
    Quadratic,
}

impl std::str::FromStr for PenaltyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy" => Ok(PenaltyKind::Entropy),
            "quadratic" => Ok(PenaltyKind::Quadratic),
            other => Err(Error::Config(format!("unknown penalty `{other}`"))),
        }
    }
}

#[derive(Clone)]
pub struct Penalty {
    kind: PenaltyKind,
    /// Reference sample size; the quadratic penalty is centred at `1 / n_ref`.
    /// `None` gives the uncentred `w^2`.
    n_ref: Option<usize>,
    custom: Option<Arc<dyn Dispersion>>,
}

impl fmt::Debug for Penalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Penalty")
            .field("kind", &self.name())
            .field("n_ref", &self.n_ref)
            .finish()
    }
}

impl Penalty {
    /// `f(w) = w log w` on `w > 0`.
    pub fn entropy() -> Self {
        Self {
            kind: PenaltyKind::Entropy,
            n_ref: None,
            custom: None,
        }
    }

    /// `f(w) = (w - 1/n_ref)^2`, or `w^2` when `n_ref` is `None`.
    pub fn quadratic(n_ref: Option<usize>) -> Self {
        Self {
            kind: PenaltyKind::Quadratic,
            n_ref,
            custom: None,
        }
    }

    pub fn from_kind(kind: PenaltyKind) -> Self {
        match kind {
            PenaltyKind::Entropy => Self::entropy(),
            PenaltyKind::Quadratic => Self::quadratic(None),
        }
    }

    pub fn custom(f: Arc<dyn Dispersion>) -> Self {
        Self {
            kind: PenaltyKind::Quadratic,
            n_ref: None,
            custom: Some(f),
        }
    }

    pub fn kind(&self) -> Option<PenaltyKind> {
        self.custom.is_none().then_some(self.kind)
    }

    pub fn n_ref(&self) -> Option<usize> {
        self.n_ref
    }

    pub fn name(&self) -> &str {
        match (&self.custom, self.kind) {
            (Some(c), _) => c.name(),
            (None, PenaltyKind::Entropy) => "entropy",
            (None, PenaltyKind::Quadratic) => "quadratic",
        }
    }

    /// Quadratic penalties without an explicit reference size get centred on
    /// `1 / group_size`; everything else is returned unchanged.
    pub fn resolved_for_group(&self, group_size: usize) -> Self {
        if self.custom.is_none() && self.kind == PenaltyKind::Quadratic && self.n_ref.is_none() {
            Self::quadratic(Some(group_size))
        } else {
            self.clone()
        }
    }

    /// True when negative weights can come out of `rho'`.
    pub fn allows_negative(&self) -> bool {
        match (&self.custom, self.kind) {
            (Some(_), _) => true,
            (None, PenaltyKind::Entropy) => false,
            (None, PenaltyKind::Quadratic) => true,
        }
    }

    fn center(&self) -> f64 {
        self.n_ref.map_or(0.0, |n| 1.0 / n as f64)
    }

    pub fn in_domain(&self, w: f64) -> bool {
        match (&self.custom, self.kind) {
            (Some(c), _) => c.in_domain(w),
            (None, PenaltyKind::Entropy) => w >= 0.0 && w.is_finite(),
            (None, PenaltyKind::Quadratic) => w.is_finite(),
        }
    }

    pub fn f(&self, w: f64) -> f64 {
        match (&self.custom, self.kind) {
            (Some(c), _) => c.f(w),
            (None, PenaltyKind::Entropy) => {
                if w == 0.0 {
                    0.0
                } else if w > 0.0 {
                    w * w.ln()
                } else {
                    f64::INFINITY
                }
            }
            (None, PenaltyKind::Quadratic) => (w - self.center()).powi(2),
        }
    }

    pub fn f_prime(&self, w: f64) -> f64 {
        match (&self.custom, self.kind) {
            (Some(c), _) => c.f_prime(w),
            (None, PenaltyKind::Entropy) => w.ln() + 1.0,
            (None, PenaltyKind::Quadratic) => 2.0 * (w - self.center()),
        }
    }

    pub fn f_second(&self, w: f64) -> f64 {
        match (&self.custom, self.kind) {
            (Some(c), _) => c.f_second(w),
            (None, PenaltyKind::Entropy) => 1.0 / w,
            (None, PenaltyKind::Quadratic) => 2.0,
        }
    }

    /// `(f')^{-1}(t)`.
    pub fn f_prime_inv(&self, t: f64) -> f64 {
        match (&self.custom, self.kind) {
            (Some(c), _) => c.f_prime_inv(t),
            (None, PenaltyKind::Entropy) => (t - 1.0).exp(),
            (None, PenaltyKind::Quadratic) => 0.5 * t + self.center(),
        }
    }

    /// Convex conjugate `rho(t) = sup_w t w - f(w)`.
    pub fn rho(&self, t: f64) -> f64 {
        match (&self.custom, self.kind) {
            (None, PenaltyKind::Entropy) => (t - 1.0).exp(),
            (None, PenaltyKind::Quadratic) => 0.25 * t * t + t * self.center(),
            (Some(_), _) => {
                let w = self.f_prime_inv(t);
                t * w - self.f(w)
            }
        }
    }

    /// `rho'(t) = (f')^{-1}(t)`: the weight recovered from a dual predictor.
    pub fn rho_prime(&self, t: f64) -> f64 {
        self.f_prime_inv(t)
    }

    /// `rho''(t) = 1 / f''(rho'(t))`.
    pub fn rho_second(&self, t: f64) -> f64 {
        match (&self.custom, self.kind) {
            (None, PenaltyKind::Entropy) => (t - 1.0).exp(),
            (None, PenaltyKind::Quadratic) => 0.5,
            (Some(_), _) => 1.0 / self.f_second(self.f_prime_inv(t)),
        }
    }

    fn h(&self, x: f64, n: f64) -> f64 {
        self.f(1.0 / n - x)
    }

    /// `(h')^{-1}(y)` where `h'(x) = -f'(1/n - x)`.
    fn h_prime_inv(&self, y: f64, n: f64) -> f64 {
        1.0 / n - self.f_prime_inv(-y)
    }

    /// First-step conjugate `zeta(y)` for sample size `n`.
    pub fn zeta(&self, y: f64, n: usize) -> Result<f64> {
        let n = n as f64;
        let x = self.h_prime_inv(y, n);
        if !x.is_finite() || !self.in_domain(1.0 / n - x) {
            return Err(Error::Domain(format!("zeta undefined at y = {y}")));
        }
        Ok(y / n - y * x + self.h(x, n))
    }

    /// `zeta'(y) = 1/n - (h')^{-1}(y)`: the first-step weight at predictor `y`.
    pub fn zeta_prime(&self, y: f64, n: usize) -> Result<f64> {
        let n = n as f64;
        let x = self.h_prime_inv(y, n);
        if !x.is_finite() {
            return Err(Error::Domain(format!("zeta' undefined at y = {y}")));
        }
        Ok(1.0 / n - x)
    }
}

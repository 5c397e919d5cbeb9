//! Wald's sequential probability ratio test of `theta0` against `theta1`.
//!
//! Boundaries are Wald's approximations `A = (1 - beta) / alpha` and
//! `B = beta / (1 - alpha)`; the OC and ASN formulas below are Wald's
//! approximations as well and are reported as such.

use serde::{Deserialize, Serialize};

use crate::error::{check_risk, domain, Error, Result};
use crate::models::Model;
use crate::numeric::bisect_boundary;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SprtSpec {
    pub model: Model,
    pub theta0: f64,
    pub theta1: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Forced decision after this many samples.
    pub cap: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SprtOutcome {
    pub sample_count: u64,
    /// 0 accepts `H0`, 1 rejects it.
    pub accepted_index: usize,
    pub terminal_estimate: f64,
    /// Log-likelihood ratio at termination.
    pub statistic: f64,
    /// Stopped by the cap rather than a boundary.
    pub forced: bool,
}

/// Wald's approximate OC (`Pr{accept H0}`) and ASN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SprtApprox {
    pub theta: f64,
    pub oc: f64,
    pub asn: f64,
    /// Nonzero root of `E[exp(h Z)] = 1`, zero at the singular point.
    pub h: f64,
}

impl SprtSpec {
    pub fn new(model: Model, theta0: f64, theta1: f64, alpha: f64, beta: f64) -> Result<Self> {
        let spec = Self { model, theta0, theta1, alpha, beta, cap: None };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_cap(mut self, cap: u64) -> Self {
        self.cap = Some(cap);
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_risk("alpha", self.alpha)?;
        check_risk("beta", self.beta)?;
        if !self.model.in_parameter_space(self.theta0) || !self.model.in_parameter_space(self.theta1) {
            return domain("theta0 and theta1 must lie in the parameter space");
        }
        if !(self.theta0 < self.theta1) {
            return domain("SPRT needs theta0 < theta1");
        }
        if self.alpha + self.beta >= 1.0 {
            return domain("alpha + beta must be below 1");
        }
        if self.cap == Some(0) {
            return domain("cap must be positive");
        }
        Ok(())
    }

    pub fn ln_a(&self) -> f64 {
        ((1.0 - self.beta) / self.alpha).ln()
    }

    pub fn ln_b(&self) -> f64 {
        (self.beta / (1.0 - self.alpha)).ln()
    }

    /// Log-likelihood-ratio increment of one observation.
    pub fn increment(&self, x: u64) -> f64 {
        self.model.ln_likelihood_ratio(1, x, self.theta1, self.theta0)
    }

    /// Runs the test, stopping at the first boundary crossing or at the cap.
    pub fn run(&self, samples: impl IntoIterator<Item = u64>) -> Result<SprtOutcome> {
        let (ln_a, ln_b) = (self.ln_a(), self.ln_b());
        let mut llr = 0.0;
        let mut n = 0u64;
        let mut sum = 0u64;
        let mut it = samples.into_iter();
        loop {
            let x = it
                .next()
                .ok_or_else(|| Error::Input(format!("sample stream exhausted after {n} samples")))?;
            self.model.check_sample(x)?;
            llr += self.increment(x);
            n += 1;
            sum += x;
            let decided = if llr >= ln_a {
                Some((1, false))
            } else if llr <= ln_b {
                Some((0, false))
            } else if self.cap == Some(n) {
                Some((usize::from(llr > 0.0), true))
            } else {
                None
            };
            if let Some((accepted_index, forced)) = decided {
                return Ok(SprtOutcome {
                    sample_count: n,
                    accepted_index,
                    terminal_estimate: sum as f64 / n as f64,
                    statistic: llr,
                    forced,
                });
            }
        }
    }

    /// `ln E[exp(h Z)]` for one increment `Z` under `theta`.
    fn cumulant(&self, theta: f64, h: f64) -> f64 {
        let (t0, t1) = (self.theta0, self.theta1);
        match self.model {
            Model::Bernoulli => {
                let a = h * (t1 / t0).ln();
                let b = h * ((1.0 - t1) / (1.0 - t0)).ln();
                let hi = a.max(b);
                hi + (theta * (a - hi).exp() + (1.0 - theta) * (b - hi).exp()).ln()
            }
            Model::Poisson => theta * ((h * (t1 / t0).ln()).exp() - 1.0) - h * (t1 - t0),
        }
    }

    fn mean_increment(&self, theta: f64) -> f64 {
        let (t0, t1) = (self.theta0, self.theta1);
        match self.model {
            Model::Bernoulli => {
                theta * (t1 / t0).ln() + (1.0 - theta) * ((1.0 - t1) / (1.0 - t0)).ln()
            }
            Model::Poisson => theta * (t1 / t0).ln() - (t1 - t0),
        }
    }

    fn second_moment(&self, theta: f64) -> f64 {
        let (t0, t1) = (self.theta0, self.theta1);
        match self.model {
            Model::Bernoulli => {
                let a = (t1 / t0).ln();
                let b = ((1.0 - t1) / (1.0 - t0)).ln();
                theta * a * a + (1.0 - theta) * b * b
            }
            Model::Poisson => {
                let r = (t1 / t0).ln();
                let d = t1 - t0;
                // E[(X r - d)^2] with X ~ Poisson(theta)
                r * r * (theta + theta * theta) - 2.0 * r * d * theta + d * d
            }
        }
    }

    /// Wald's approximations at `theta`.
    pub fn oc_asn(&self, theta: f64) -> Result<SprtApprox> {
        self.validate()?;
        self.model.check_theta(theta)?;
        let (ln_a, ln_b) = (self.ln_a(), self.ln_b());
        let mu = self.mean_increment(theta);
        let scale = mu.abs() / self.second_moment(theta).max(f64::MIN_POSITIVE);
        if scale < 1e-9 {
            let oc = ln_a / (ln_a - ln_b);
            let asn = -ln_a * ln_b / self.second_moment(theta);
            return Ok(SprtApprox { theta, oc, asn, h: 0.0 });
        }
        // The cumulant is convex, zero at 0, with slope mu there: the other
        // root lies on the side opposite to the sign of mu.
        let dir = if mu < 0.0 { 1.0 } else { -1.0 };
        let below = |h: f64| self.cumulant(theta, dir * h) < 0.0;
        let mut hi = 1.0;
        while below(hi) {
            hi *= 2.0;
            if hi > 1e6 {
                return Err(Error::Domain("SPRT exponent root not bracketed".into()));
            }
        }
        let (_, root) = bisect_boundary(0.0, hi, 1e-14 * hi, below);
        let h = dir * root;
        // OC = (A^h - 1) / (A^h - B^h), evaluated stably in log space.
        let (ha, hb) = (h * ln_a, h * ln_b);
        let oc = if ha > hb {
            let top = ha;
            ((1.0 - (-top).exp()) / (1.0 - (hb - top).exp())).clamp(0.0, 1.0)
        } else {
            let top = hb;
            (((ha - top).exp() - (-top).exp()) / ((ha - top).exp() - 1.0)).clamp(0.0, 1.0)
        };
        let asn = (oc * ln_b + (1.0 - oc) * ln_a) / mu;
        Ok(SprtApprox { theta, oc, asn, h })
    }
}

pub fn run_sprt(spec: &SprtSpec, samples: impl IntoIterator<Item = u64>) -> Result<SprtOutcome> {
    spec.validate()?;
    spec.run(samples)
}

pub fn sprt_oc_asn(spec: &SprtSpec, theta: f64) -> Result<SprtApprox> {
    spec.oc_asn(theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym() -> SprtSpec {
        SprtSpec::new(Model::Bernoulli, 0.4, 0.6, 0.05, 0.05).unwrap()
    }

    #[test]
    fn boundaries() {
        let s = sym();
        assert!((s.ln_a() - 19f64.ln()).abs() < 1e-12);
        assert!((s.ln_b() + 19f64.ln()).abs() < 1e-12);
        assert!((s.increment(1) - 1.5f64.ln()).abs() < 1e-12);
        assert!((s.increment(0) - (2.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn replay_matches_hand_walk() {
        let s = sym();
        let stream = [1u64, 1, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1];
        // walk: each 1 adds ln 1.5, each 0 subtracts it
        let step = 1.5f64.ln();
        let mut llr = 0.0;
        let mut stop = 0;
        for (i, &x) in stream.iter().enumerate() {
            llr += if x == 1 { step } else { -step };
            if llr >= 19f64.ln() {
                stop = i + 1;
                break;
            }
        }
        let out = s.run(stream).unwrap();
        assert_eq!(out.sample_count as usize, stop);
        assert_eq!(out.accepted_index, 1);
        assert!(!out.forced);
    }

    #[test]
    fn cap_forces_by_sign() {
        let s = sym().with_cap(3);
        let out = s.run([1u64, 0, 1]).unwrap();
        assert!(out.forced);
        assert_eq!(out.accepted_index, 1);
        assert!(s.run([1u64]).is_err());
    }

    #[test]
    fn wald_approximations_at_hypotheses() {
        let s = sym();
        let a0 = s.oc_asn(0.4).unwrap();
        assert!((a0.h - 1.0).abs() < 1e-9);
        let a_big = (1.0 - 0.05) / 0.05;
        let b_small = 0.05 / 0.95;
        assert!((a0.oc - (a_big - 1.0) / (a_big - b_small)).abs() < 1e-9);
        let a1 = s.oc_asn(0.6).unwrap();
        assert!((a1.h + 1.0).abs() < 1e-9);
        assert!((a1.oc - 0.05).abs() < 0.01);
        let mid = s.oc_asn(0.5).unwrap();
        assert_eq!(mid.h, 0.0);
        assert!((mid.oc - 0.5).abs() < 1e-12);
        let near = s.oc_asn(0.5 + 1e-6).unwrap();
        assert!((near.asn - mid.asn).abs() / mid.asn < 1e-3);
    }

    #[test]
    fn poisson_oc_at_theta0() {
        let s = SprtSpec::new(Model::Poisson, 1.0, 2.0, 0.05, 0.1).unwrap();
        let a = s.oc_asn(1.0).unwrap();
        assert!((a.h - 1.0).abs() < 1e-9);
        assert!(a.asn > 0.0);
    }
}

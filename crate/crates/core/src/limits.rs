//! Confidence-limit families for the mean parameter and the crossing tests
//! that decide `lower >= theta_ref` / `upper <= theta_ref` without solving for
//! the limit.
//!
//! * `Exact`: inverted exact tails (Clopper-Pearson for Bernoulli, Garwood
//!   for Poisson).
//! * `Chernoff`: inverted Chernoff bounds `C(z, theta)^n <= delta`.
//! * `Approx(w)`: normal approximation with the variance evaluated at
//!   `z + w (theta - z)`; `w = 1` is the score interval, `w = 0` the Wald
//!   interval. Each side has approximate level `delta / 2`.

use serde::{Deserialize, Serialize};

use crate::error::{check_risk, domain, Error, Result};
use crate::models::{Model, SumStatistic};
use crate::numeric::{bisect_boundary, two_sided_critical};

/// Absolute tolerance of the bisection solvers in theta.
pub const LIMIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum LimitFamily {
    Exact,
    Chernoff,
    Approx { w: f64 },
}

/// A solved limit; `boundary` is set when the defining set was empty and the
/// edge of the parameter space was returned instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limit {
    pub value: f64,
    pub boundary: bool,
}

impl Limit {
    fn solved(value: f64) -> Self {
        Self { value, boundary: false }
    }

    fn edge(value: f64) -> Self {
        Self { value, boundary: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crossing {
    pub lower_crossed: bool,
    pub upper_crossed: bool,
}

fn check_args(model: Model, n: u64, k: u64, delta: f64) -> Result<()> {
    SumStatistic::new(model, n, k)?;
    check_risk("delta", delta)
}

/// Relative margin for tail-versus-risk comparisons. Ties are broken towards
/// "not crossed", so rounding in the tail evaluation never costs coverage.
pub const RISK_MARGIN: f64 = 1e-12;

fn below(tail: f64, delta: f64) -> bool {
    tail <= delta * (1.0 - RISK_MARGIN)
}

fn ln_below(ln_tail: f64, delta: f64) -> bool {
    ln_tail <= delta.ln() - RISK_MARGIN
}

/// Smallest power-of-two multiple of `start` at which `pred` becomes false.
fn expand_until_false(start: f64, mut pred: impl FnMut(f64) -> bool) -> Result<f64> {
    let mut hi = start.max(1.0);
    for _ in 0..200 {
        if !pred(hi) {
            return Ok(hi);
        }
        hi *= 2.0;
    }
    Err(Error::Domain("limit solver failed to bracket the root".into()))
}

/// `L = max{theta : G(z, theta) <= delta}`.
pub fn exact_lower(model: Model, n: u64, k: u64, delta: f64) -> Result<Limit> {
    check_args(model, n, k, delta)?;
    if k == 0 {
        return Ok(Limit::edge(0.0));
    }
    let pred = |t: f64| below(model.sf_unchecked(n, k, t), delta);
    let hi = match model {
        Model::Bernoulli => 1.0,
        Model::Poisson => expand_until_false(k as f64 / n as f64, pred)?,
    };
    let (lo, _) = bisect_boundary(0.0, hi, LIMIT_TOL, pred);
    Ok(Limit::solved(lo))
}

/// `U = min{theta : F(z, theta) <= delta}`.
pub fn exact_upper(model: Model, n: u64, k: u64, delta: f64) -> Result<Limit> {
    check_args(model, n, k, delta)?;
    if model == Model::Bernoulli && k == n {
        return Ok(Limit::edge(1.0));
    }
    // `F` is non-increasing in theta, so "not yet below delta" is the prefix.
    let above = |t: f64| !below(model.cdf_unchecked(n, k, t), delta);
    let hi = match model {
        Model::Bernoulli => 1.0,
        Model::Poisson => expand_until_false(k as f64 / n as f64 + 1.0, above)?,
    };
    let (_, hi) = bisect_boundary(0.0, hi, LIMIT_TOL, above);
    Ok(Limit::solved(hi))
}

/// `L = max{theta <= z : C(z, theta)^n <= delta}`.
pub fn chernoff_lower(model: Model, n: u64, k: u64, delta: f64) -> Result<Limit> {
    check_args(model, n, k, delta)?;
    let z = k as f64 / n as f64;
    if k == 0 {
        return Ok(Limit::edge(0.0));
    }
    let nf = n as f64;
    let pred = |t: f64| ln_below(nf * model.ln_chernoff(z, t), delta);
    let (lo, _) = bisect_boundary(0.0, z, LIMIT_TOL, pred);
    Ok(Limit::solved(lo))
}

/// `U = min{theta >= z : C(z, theta)^n <= delta}`.
pub fn chernoff_upper(model: Model, n: u64, k: u64, delta: f64) -> Result<Limit> {
    check_args(model, n, k, delta)?;
    let z = k as f64 / n as f64;
    if model == Model::Bernoulli && k == n {
        return Ok(Limit::edge(1.0));
    }
    let nf = n as f64;
    let above = |t: f64| !ln_below(nf * model.ln_chernoff(z, t), delta);
    let hi = match model {
        Model::Bernoulli => 1.0,
        Model::Poisson => expand_until_false(z + 1.0, above)?,
    };
    let (_, hi) = bisect_boundary(z, hi, LIMIT_TOL, above);
    Ok(Limit::solved(hi))
}

/// Normal-approximation limits with variance evaluated at `z + w (theta - z)`.
pub fn approx_limits(model: Model, n: u64, k: u64, delta: f64, w: f64) -> Result<(f64, f64)> {
    check_args(model, n, k, delta)?;
    if !(0.0..=1.0).contains(&w) {
        return domain(format!("w = {w} must lie in [0, 1]"));
    }
    let nf = n as f64;
    let z = k as f64 / nf;
    let crit = two_sided_critical(delta);
    match model {
        Model::Bernoulli => {
            let wz = w * crit;
            let center = z + w * crit * crit / (2.0 * nf) * (1.0 - 2.0 * (1.0 - w) * z);
            let spread = crit * (z * (1.0 - z) / nf + (wz / (2.0 * nf)).powi(2)).sqrt();
            let denom = 1.0 + wz * wz / nf;
            let lower = ((center - spread) / denom).clamp(0.0, z);
            let upper = ((center + spread) / denom).clamp(z, 1.0);
            Ok((lower, upper))
        }
        Model::Poisson => {
            // n d^2 - Z^2 w d - Z^2 z = 0 with d = theta - z and V = theta / n.
            let c2 = crit * crit;
            let disc = (c2 * c2 * w * w + 4.0 * nf * c2 * z).sqrt();
            let lower = (z + (c2 * w - disc) / (2.0 * nf)).clamp(0.0, z);
            let upper = (z + (c2 * w + disc) / (2.0 * nf)).max(z);
            Ok((lower, upper))
        }
    }
}

impl LimitFamily {
    pub fn validate(&self) -> Result<()> {
        if let LimitFamily::Approx { w } = self {
            if !(0.0..=1.0).contains(w) {
                return domain(format!("w = {w} must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        match self {
            LimitFamily::Exact => "exact".into(),
            LimitFamily::Chernoff => "chernoff".into(),
            LimitFamily::Approx { w } => format!("approx({w})"),
        }
    }

    pub fn lower(&self, model: Model, n: u64, k: u64, delta: f64) -> Result<Limit> {
        match *self {
            LimitFamily::Exact => exact_lower(model, n, k, delta),
            LimitFamily::Chernoff => chernoff_lower(model, n, k, delta),
            LimitFamily::Approx { w } => {
                approx_limits(model, n, k, delta, w).map(|(l, _)| Limit::solved(l))
            }
        }
    }

    pub fn upper(&self, model: Model, n: u64, k: u64, delta: f64) -> Result<Limit> {
        match *self {
            LimitFamily::Exact => exact_upper(model, n, k, delta),
            LimitFamily::Chernoff => chernoff_upper(model, n, k, delta),
            LimitFamily::Approx { w } => {
                approx_limits(model, n, k, delta, w).map(|(_, u)| Limit::solved(u))
            }
        }
    }

    /// Whether the lower limit at level `delta` is at least `theta_ref`.
    /// Arguments are assumed valid.
    pub(crate) fn lower_crossed_unchecked(
        &self,
        model: Model,
        n: u64,
        k: u64,
        theta_ref: f64,
        delta: f64,
    ) -> bool {
        match *self {
            LimitFamily::Exact => k > 0 && below(model.sf_unchecked(n, k, theta_ref), delta),
            LimitFamily::Chernoff => {
                let z = k as f64 / n as f64;
                k > 0 && z >= theta_ref && ln_below(n as f64 * model.ln_chernoff(z, theta_ref), delta)
            }
            LimitFamily::Approx { w } => approx_limits(model, n, k, delta, w)
                .map(|(l, _)| l >= theta_ref)
                .unwrap_or(false),
        }
    }

    /// Whether the upper limit at level `delta` is at most `theta_ref`.
    pub(crate) fn upper_crossed_unchecked(
        &self,
        model: Model,
        n: u64,
        k: u64,
        theta_ref: f64,
        delta: f64,
    ) -> bool {
        let top = model.max_sum(n) == Some(k);
        match *self {
            LimitFamily::Exact => !top && below(model.cdf_unchecked(n, k, theta_ref), delta),
            LimitFamily::Chernoff => {
                let z = k as f64 / n as f64;
                !top && z <= theta_ref && ln_below(n as f64 * model.ln_chernoff(z, theta_ref), delta)
            }
            LimitFamily::Approx { w } => approx_limits(model, n, k, delta, w)
                .map(|(_, u)| u <= theta_ref)
                .unwrap_or(false),
        }
    }
}

/// Decide `lower >= theta_ref` and `upper <= theta_ref` from tail or Chernoff
/// values at `theta_ref`, without solving for the limits.
pub fn crossing_test(
    family: LimitFamily,
    model: Model,
    n: u64,
    k: u64,
    theta_ref: f64,
    delta: f64,
) -> Result<Crossing> {
    family.validate()?;
    check_args(model, n, k, delta)?;
    if !model.in_parameter_space(theta_ref) {
        return domain(format!("reference value {theta_ref} outside the parameter space"));
    }
    Ok(Crossing {
        lower_crossed: family.lower_crossed_unchecked(model, n, k, theta_ref, delta),
        upper_crossed: family.upper_crossed_unchecked(model, n, k, theta_ref, delta),
    })
}

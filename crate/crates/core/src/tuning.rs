//! Bisection tuning of the risk coefficient `zeta`.
//!
//! Feasibility is assumed monotone (feasible at `zeta` implies feasible
//! below it) only for bracketing. The returned coefficient is always one
//! that was verified, so a non-monotone pocket can cost accuracy but never
//! soundness; any pocket that shows up in the evaluations is reported.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oc::{verify_risk, RiskReport, RiskRequirement};
use crate::plans::{MultiHypPlan, PlanSpec};

/// Smallest coefficient probed before giving up.
pub const ZETA_FLOOR: f64 = 1e-8;

pub const DEFAULT_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneStep {
    pub zeta: f64,
    pub feasible: bool,
    /// Worst `risk / delta` seen by the verifier (infinite when no plan).
    #[serde(with = "crate::serde_ext::extended")]
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult<R> {
    pub zeta: f64,
    pub iterations: usize,
    /// Final bracket `[feasible, infeasible]`; the upper end is the
    /// exclusive maximum when nothing was infeasible.
    pub bracket: (f64, f64),
    pub trace: Vec<TuneStep>,
    pub warnings: Vec<String>,
    pub report: R,
}

impl<R> TuneResult<R> {
    pub fn bracket_width(&self) -> f64 {
        self.bracket.1 - self.bracket.0
    }
}

/// Outcome of one evaluation: a report when feasible, and the worst
/// `risk / delta` ratio used to watch for non-monotone risk.
pub struct Probe<R> {
    pub report: Option<R>,
    pub score: f64,
}

/// Largest feasible `zeta` in `(0, zeta_max)` to relative width `tol`.
pub fn bisect_zeta<R>(
    zeta_max: f64,
    tol: f64,
    mut evaluate: impl FnMut(f64) -> Result<Probe<R>>,
) -> Result<TuneResult<R>> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::Domain(format!("tolerance {tol} must lie in (0, 1)")));
    }
    if !(zeta_max > 0.0) {
        return Err(Error::Domain("zeta_max must be positive".into()));
    }
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut probe = |z: f64, trace: &mut Vec<TuneStep>| -> Result<Option<R>> {
        let p = evaluate(z)?;
        trace.push(TuneStep { zeta: z, feasible: p.report.is_some(), score: p.score });
        Ok(p.report)
    };

    let mut hi = zeta_max;
    let mut z = zeta_max * (1.0 - tol);
    let (mut lo, mut report) = loop {
        iterations += 1;
        if let Some(r) = probe(z, &mut trace)? {
            break (z, r);
        }
        hi = z;
        z *= 0.5;
        if z < ZETA_FLOOR {
            return Err(Error::Infeasible(format!(
                "no feasible zeta down to {ZETA_FLOOR:e}"
            )));
        }
    };
    while (hi - lo) > tol * hi * (1.0 + 1e-9) {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        match probe(mid, &mut trace)? {
            Some(r) => {
                lo = mid;
                report = r;
            }
            None => hi = mid,
        }
    }
    let warnings = monotonicity_warnings(&trace);
    Ok(TuneResult { zeta: lo, iterations, bracket: (lo, hi), trace, warnings, report })
}

fn monotonicity_warnings(trace: &[TuneStep]) -> Vec<String> {
    let mut sorted: Vec<&TuneStep> = trace.iter().filter(|s| s.score.is_finite()).collect();
    sorted.sort_by(|a, b| a.zeta.total_cmp(&b.zeta));
    sorted
        .windows(2)
        .filter(|w| w[0].score > w[1].score * (1.0 + 1e-9) + 1e-15)
        .map(|w| {
            format!(
                "risk not monotone in zeta: worst risk ratio {} at zeta {} exceeds {} at zeta {}",
                w[0].score, w[0].zeta, w[1].score, w[1].zeta
            )
        })
        .collect()
}

/// Builds the plan at `zeta` and verifies it exactly. Plans that cannot be
/// closed (fixed stage sizes too small) count as infeasible.
pub fn evaluate_zeta(
    spec: &PlanSpec,
    req: &RiskRequirement,
    zeta: f64,
) -> Result<Probe<(MultiHypPlan, RiskReport)>> {
    let plan = match spec.clone().with_zeta(zeta).build() {
        Ok(p) => p,
        Err(Error::Infeasible(_)) => return Ok(Probe { report: None, score: f64::INFINITY }),
        Err(e) => return Err(e),
    };
    let rep = verify_risk(&plan, req)?;
    let score = rep.worst_ratio();
    Ok(Probe { report: rep.satisfied.then_some((plan, rep)), score })
}

/// Largest `zeta` whose plan satisfies the requirement exactly.
pub fn tune_zeta(
    spec: &PlanSpec,
    req: &RiskRequirement,
    tol: f64,
) -> Result<TuneResult<(MultiHypPlan, RiskReport)>> {
    spec.clone().with_zeta(spec.zeta_max() * 0.5).validate()?;
    bisect_zeta(spec.zeta_max(), tol, |z| evaluate_zeta(spec, req, z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Model;
    use crate::plans::Schedule;

    fn step(feasible: bool, score: f64) -> Result<Probe<()>> {
        Ok(Probe { report: feasible.then_some(()), score })
    }

    #[test]
    fn bisection_on_threshold_predicate() {
        let r = bisect_zeta(10.0, 1e-4, |z| step(z <= 3.0, z / 3.0)).unwrap();
        assert!(r.zeta <= 3.0 && r.zeta > 3.0 * (1.0 - 2e-4));
        assert!(r.bracket.1 > 3.0);
        assert!(r.warnings.is_empty());
        assert!(r.trace.iter().all(|s| s.feasible == (s.zeta <= 3.0)));
    }

    #[test]
    fn everything_feasible_returns_top_edge() {
        let r = bisect_zeta(4.0, 1e-3, |_| step(true, 0.0)).unwrap();
        assert_eq!(r.zeta, 4.0 * (1.0 - 1e-3));
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn nothing_feasible_is_an_error() {
        let e = bisect_zeta(1.0, 1e-3, |_| step(false, 2.0)).unwrap_err();
        assert!(matches!(e, Error::Infeasible(_)));
    }

    #[test]
    fn non_monotone_pocket_is_reported() {
        // a spike of risk below larger, less risky coefficients
        let risk = |z: f64| if (0.2..0.3).contains(&z) { 3.0 } else { 5.0 * z };
        let r = bisect_zeta(1.0, 1e-2, |z| step(risk(z) <= 1.0, risk(z))).unwrap();
        assert!(!r.warnings.is_empty());
        assert!(risk(r.zeta) <= 1.0);
    }

    #[test]
    fn loose_requirement() {
        let spec = PlanSpec::one_sided(Model::Bernoulli, 0.3, 0.7, 0.1, 0.1)
            .with_schedule(Schedule::Geometric { stages: 3 });
        let r = tune_zeta(&spec, &RiskRequirement::one_sided(0.99, 0.99), 1e-3).unwrap();
        assert!((r.zeta - spec.zeta_max() * (1.0 - 1e-3)).abs() < 1e-12);
    }
}

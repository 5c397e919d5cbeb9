//! Branch-and-bound certification of `Pr{reject H_i} <= delta_i` over the
//! part of `[0, 1]^2` where `p_x - p_y` lies in the zone of `H_i`, and
//! bisection tuning on top of it.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::oc::fmt_num;
use crate::tuning::{bisect_zeta, Probe, TuneResult};

use super::bounds::{Bounder, Rect};
use super::{TwoPropPlan, TwoPropSpec};

/// Truncation mass is never refined below this.
const ETA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    /// Initial truncation mass per stage and arm.
    pub eta: f64,
    /// Rectangles narrower than this are not split further.
    pub tol: f64,
    /// Maximum number of bound evaluations.
    pub budget: usize,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self { eta: 1e-4, tol: 1e-4, budget: 20_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Proved,
    Disproved,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RectStatus {
    Pruned,
    Split,
    /// Re-bounded with half the truncation mass.
    Refined,
    Disproved,
    /// Too narrow to split with the bounds straddling `delta`.
    Unresolved,
    /// Still queued when the search stopped.
    Pending,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectRecord {
    pub rect: Rect,
    pub lower: f64,
    pub upper: f64,
    pub eta: f64,
    pub status: RectStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCertificate {
    pub hypothesis: usize,
    pub delta: f64,
    /// Range of `p_x - p_y` covered.
    pub band: (f64, f64),
    pub verdict: Verdict,
    /// Number of bound evaluations.
    pub explored: usize,
    /// Largest upper bound over the final leaves.
    pub max_upper: f64,
    /// Rectangle (possibly a point) where the requirement fails.
    pub witness: Option<Rect>,
    pub witness_value: Option<f64>,
    pub records: Vec<RectRecord>,
}

impl RiskCertificate {
    /// Worst `risk / delta` this certificate can vouch for.
    pub fn score(&self) -> f64 {
        let v = self.witness_value.unwrap_or(self.max_upper);
        if self.delta > 0.0 {
            v / self.delta
        } else if v > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "px_lo,px_hi,py_lo,py_hi,lower,upper,eta,status")?;
        for r in &self.records {
            let status = serde_json::to_value(r.status).ok().and_then(|v| v.as_str().map(String::from));
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                fmt_num(r.rect.px_lo),
                fmt_num(r.rect.px_hi),
                fmt_num(r.rect.py_lo),
                fmt_num(r.rect.py_hi),
                fmt_num(r.lower),
                fmt_num(r.upper),
                fmt_num(r.eta),
                status.unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

struct Node {
    rect: Rect,
    lower: f64,
    upper: f64,
    eta: f64,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.upper.total_cmp(&other.upper)
    }
}

/// Zone of `H_i` in terms of `p_x - p_y`.
pub(crate) fn band(spec: &TwoPropSpec, i: usize) -> (f64, f64) {
    let m = spec.m();
    let lo = if i == 0 { -1.0 } else { spec.zones[i - 1].upper };
    let hi = if i + 1 == m { 1.0 } else { spec.zones[i].lower };
    (lo, hi)
}

/// Points of the rectangle inside the band worth an exact evaluation.
fn probe_points(rect: &Rect, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let (cx, cy) = rect.center();
    let d = cx - cy;
    let shift = if d < lo {
        0.5 * (lo - d)
    } else if d > hi {
        0.5 * (hi - d)
    } else {
        0.0
    };
    let mut pts = vec![(cx + shift, cy - shift)];
    pts.extend([
        (rect.px_lo, rect.py_lo),
        (rect.px_lo, rect.py_hi),
        (rect.px_hi, rect.py_lo),
        (rect.px_hi, rect.py_hi),
    ]);
    pts.retain(|&(x, y)| rect.contains(x, y) && (lo..=hi).contains(&(x - y)));
    pts
}

/// Best-first branch and bound on the rectangle with the largest upper bound.
pub fn certify_risk(plan: &TwoPropPlan, i: usize, delta: f64, opts: &CertifyOptions) -> Result<RiskCertificate> {
    let bounder = Bounder::new(plan)?;
    certify_with(&bounder, i, delta, opts)
}

fn certify_with(b: &Bounder<'_>, i: usize, delta: f64, opts: &CertifyOptions) -> Result<RiskCertificate> {
    let plan = b.plan();
    if i >= plan.m() {
        return domain(format!("hypothesis {i} out of range"));
    }
    if !(0.0..=1.0).contains(&delta) {
        return domain("delta must lie in [0, 1]");
    }
    if !(opts.eta > 0.0 && opts.eta < 1.0) || !(opts.tol > 0.0) || opts.budget == 0 {
        return domain("certification needs eta in (0, 1), positive tol and budget");
    }
    let (lo, hi) = band(&plan.spec, i);
    let slack = |eta: f64| 2.0 * plan.s() as f64 * eta;
    let root = Rect::new(lo.max(0.0), (1.0 + hi).min(1.0), (-hi).max(0.0), (1.0 - lo).min(1.0))?;

    let mut records = Vec::new();
    let mut explored = 0usize;
    let evaluate = |rect: Rect, eta: f64, explored: &mut usize| -> Result<Node> {
        *explored += 1;
        let (lower, upper) = b.bounds(i, &rect, eta)?;
        Ok(Node { rect, lower, upper, eta })
    };
    let record = |n: &Node, status: RectStatus| RectRecord {
        rect: n.rect,
        lower: n.lower,
        upper: n.upper,
        eta: n.eta,
        status,
    };

    let mut heap = BinaryHeap::new();
    heap.push(evaluate(root, opts.eta, &mut explored)?);
    let mut unresolved: Vec<Node> = Vec::new();
    let mut witness = None;
    let mut exhausted = false;
    let mut top = 0.0f64;

    while let Some(node) = heap.pop() {
        if node.upper <= delta {
            records.push(record(&node, RectStatus::Pruned));
            for rest in heap.drain() {
                records.push(record(&rest, RectStatus::Pruned));
            }
            let max_upper = unresolved.iter().map(|n| n.upper).fold(node.upper, f64::max);
            let verdict = if unresolved.is_empty() { Verdict::Proved } else { Verdict::Inconclusive };
            for n in &unresolved {
                records.push(record(n, RectStatus::Unresolved));
            }
            return Ok(RiskCertificate {
                hypothesis: i,
                delta,
                band: (lo, hi),
                verdict,
                explored,
                max_upper,
                witness: None,
                witness_value: None,
                records,
            });
        }
        for (px, py) in probe_points(&node.rect, lo, hi) {
            let v = b.exact_rejection(i, px, py)?;
            if v > delta {
                witness = Some((Rect::point(px, py)?, v));
                break;
            }
        }
        if witness.is_none() && node.rect.inside_band(lo, hi) && node.lower > delta {
            witness = Some((node.rect, node.lower));
        }
        if witness.is_some() {
            records.push(record(&node, RectStatus::Disproved));
            top = node.upper;
            break;
        }
        if explored + 2 > opts.budget {
            exhausted = true;
            heap.push(node);
            break;
        }
        if node.upper - slack(node.eta) <= delta && node.eta > ETA_FLOOR {
            records.push(record(&node, RectStatus::Refined));
            heap.push(evaluate(node.rect, (0.5 * node.eta).max(ETA_FLOOR), &mut explored)?);
            continue;
        }
        if node.rect.width() < opts.tol {
            unresolved.push(node);
            continue;
        }
        records.push(record(&node, RectStatus::Split));
        let (a, c) = node.rect.split();
        for child in [a, c] {
            if child.meets_band(lo, hi) {
                heap.push(evaluate(child, node.eta, &mut explored)?);
            }
        }
    }

    let max_upper = heap.iter().chain(&unresolved).map(|n| n.upper).fold(top, f64::max);
    for n in &unresolved {
        records.push(record(n, RectStatus::Unresolved));
    }
    for n in heap.iter() {
        records.push(record(n, RectStatus::Pending));
    }
    let verdict = match (&witness, exhausted, unresolved.is_empty()) {
        (Some(_), _, _) => Verdict::Disproved,
        (None, false, true) => Verdict::Proved,
        _ => Verdict::Inconclusive,
    };
    Ok(RiskCertificate {
        hypothesis: i,
        delta,
        band: (lo, hi),
        verdict,
        explored,
        max_upper,
        witness: witness.map(|w| w.0),
        witness_value: witness.map(|w| w.1),
        records,
    })
}

impl TwoPropSpec {
    /// `delta_0 = alpha_1`, `delta_{m-1} = beta_{m-1}`, middle
    /// `delta_i = alpha_{i+1} + beta_i`, all nominal.
    pub fn nominal_deltas(&self) -> Vec<f64> {
        let m = self.m();
        (0..m)
            .map(|i| {
                if i == 0 {
                    self.alphas[0]
                } else if i == m - 1 {
                    self.betas[m - 2]
                } else {
                    self.alphas[i] + self.betas[i - 1]
                }
            })
            .collect()
    }
}

/// Certifies every hypothesis of a plan.
pub fn certify_all(plan: &TwoPropPlan, deltas: &[f64], opts: &CertifyOptions) -> Result<Vec<RiskCertificate>> {
    if deltas.len() != plan.m() {
        return domain(format!("need {} deltas, got {}", plan.m(), deltas.len()));
    }
    let b = Bounder::new(plan)?;
    (0..plan.m()).into_par_iter().map(|i| certify_with(&b, i, deltas[i], opts)).collect()
}

/// Largest `zeta` whose plan is proved to meet every `delta_i`.
pub fn tune_two_prop(
    spec: &TwoPropSpec,
    deltas: &[f64],
    tol: f64,
    opts: &CertifyOptions,
) -> Result<TuneResult<(TwoPropPlan, Vec<RiskCertificate>)>> {
    spec.clone().with_zeta(0.5 * spec.zeta_max()).validate()?;
    if deltas.len() != spec.m() {
        return domain(format!("need {} deltas, got {}", spec.m(), deltas.len()));
    }
    bisect_zeta(spec.zeta_max(), tol, |z| {
        let plan = match spec.clone().with_zeta(z).build() {
            Ok(p) => p,
            Err(Error::Infeasible(_)) => return Ok(Probe { report: None, score: f64::INFINITY }),
            Err(e) => return Err(e),
        };
        let certs = certify_all(&plan, deltas, opts)?;
        let score = certs.iter().map(RiskCertificate::score).fold(0.0, f64::max);
        let ok = certs.iter().all(|c| c.verdict == Verdict::Proved);
        Ok(Probe { report: ok.then_some((plan, certs)), score })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plans::Schedule;

    fn plan() -> TwoPropPlan {
        TwoPropSpec::two(-0.2, 0.2, 0.1, 0.1)
            .with_schedule(Schedule::Geometric { stages: 2 })
            .build()
            .unwrap()
    }

    fn grid_max(b: &Bounder<'_>, i: usize, n: usize) -> f64 {
        let (lo, hi) = band(&b.plan().spec, i);
        let mut best: f64 = 0.0;
        for a in 0..=n {
            for c in 0..=n {
                let (px, py) = (a as f64 / n as f64, c as f64 / n as f64);
                if (lo..=hi).contains(&(px - py)) {
                    best = best.max(b.exact_rejection(i, px, py).unwrap());
                }
            }
        }
        best
    }

    #[test]
    fn trivial_deltas() {
        let p = plan();
        let one = certify_risk(&p, 0, 1.0, &CertifyOptions::default()).unwrap();
        assert_eq!(one.verdict, Verdict::Proved);
        assert_eq!(one.explored, 1);
        let zero = certify_risk(&p, 0, 0.0, &CertifyOptions::default()).unwrap();
        assert_eq!(zero.verdict, Verdict::Disproved);
        assert!(zero.witness_value.unwrap() > 0.0);
    }

    #[test]
    fn verdicts_bracket_the_grid_maximum() {
        let p = plan();
        let b = Bounder::new(&p).unwrap();
        let opts = CertifyOptions { eta: 1e-4, tol: 1e-3, budget: 20_000 };
        for i in 0..2 {
            let worst = grid_max(&b, i, 60);
            let hi = certify_with(&b, i, worst * 1.1 + 1e-6, &opts).unwrap();
            assert_eq!(hi.verdict, Verdict::Proved, "hypothesis {i} worst {worst}");
            let low = certify_with(&b, i, worst * 0.9, &opts).unwrap();
            assert_eq!(low.verdict, Verdict::Disproved);
        }
    }

    #[test]
    fn budget_exhaustion_is_inconclusive() {
        let p = plan();
        let b = Bounder::new(&p).unwrap();
        let worst = grid_max(&b, 0, 40);
        let c = certify_with(&b, 0, worst * 1.05, &CertifyOptions { eta: 1e-4, tol: 1e-6, budget: 3 }).unwrap();
        assert_eq!(c.verdict, Verdict::Inconclusive);
        assert!(c.explored <= 3);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("px_lo,px_hi,py_lo,py_hi,"));
    }

    #[test]
    fn loose_requirement_tunes_to_top() {
        let spec = TwoPropSpec::two(-0.3, 0.3, 0.2, 0.2).with_schedule(Schedule::Geometric { stages: 2 });
        let r = tune_two_prop(&spec, &[1.0, 1.0], 1e-2, &CertifyOptions::default()).unwrap();
        assert!((r.zeta - spec.zeta_max() * (1.0 - 1e-2)).abs() < 1e-12);
        assert_eq!(r.iterations, 1);
    }
}

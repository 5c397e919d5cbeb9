//! Exact operating characteristics by forward dynamic programming over the
//! running sum, and verification of risk requirements.
//!
//! The state after stage `l` is the distribution of the sum on the event that
//! sampling continued through stage `l`. Each stage convolves it with the
//! increment distribution of `n_l - n_{l-1}` further samples and then removes
//! the mass that stops.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::numeric::CompensatedSum;
use crate::plans::{MultiHypPlan, PlanSpec};

/// Poisson increments are cut where the remaining upper tail falls below this.
pub const POISSON_TAIL_CUT: f64 = 1e-14;

/// Deepest bisection of a middle zone in [`verify_risk`].
const MAX_ZONE_SPLITS: usize = 7;

/// Mass that stops at a given stage and sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terminal {
    /// 1-based stage index.
    pub stage: usize,
    pub n: u64,
    pub k: u64,
    pub accepted: usize,
    pub mass: f64,
}

impl Terminal {
    pub fn estimate(&self) -> f64 {
        self.k as f64 / self.n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalDistribution {
    pub theta: f64,
    pub entries: Vec<Terminal>,
    /// Upper bound on mass lost to truncated Poisson increments.
    pub truncated: f64,
    /// Mass still continuing after the last stage (zero for closed plans).
    pub unresolved: f64,
}

impl TerminalDistribution {
    /// Total mass of terminal points satisfying `pred`.
    pub fn mass_where(&self, pred: impl Fn(&Terminal) -> bool) -> f64 {
        let mut acc = CompensatedSum::new();
        for t in self.entries.iter().filter(|t| pred(t)) {
            acc.add(t.mass);
        }
        acc.value()
    }
}

fn increment_pmf(model: Model, delta_n: u64, theta: f64) -> (Vec<f64>, f64) {
    match model {
        Model::Bernoulli => {
            let p = (0..=delta_n).map(|j| model.ln_pmf_sum(delta_n, j, theta).exp()).collect();
            (p, 0.0)
        }
        Model::Poisson => {
            let lambda = delta_n as f64 * theta;
            let mut top = lambda.ceil() as u64;
            while model.sf_unchecked(delta_n, top + 1, theta) > POISSON_TAIL_CUT {
                top += 1 + top / 16;
            }
            let p = (0..=top).map(|j| model.ln_pmf_sum(delta_n, j, theta).exp()).collect();
            (p, model.sf_unchecked(delta_n, top + 1, theta))
        }
    }
}

/// Where the sampling stops, and with what decision, at parameter `theta`.
pub fn terminal_distribution(plan: &MultiHypPlan, theta: f64) -> Result<TerminalDistribution> {
    let model = plan.model();
    model.check_theta(theta)?;
    let mut dist = vec![1.0f64];
    let mut prev_n = 0u64;
    let mut entries = Vec::new();
    let mut truncated = 0.0;
    for (idx, stage) in plan.stages.iter().enumerate() {
        let (inc, lost) = increment_pmf(model, stage.n - prev_n, theta);
        let alive: f64 = dist.iter().sum();
        truncated += alive * lost;
        let mut next = vec![0.0f64; dist.len() + inc.len() - 1];
        for (k, &a) in dist.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in inc.iter().enumerate() {
                next[k + j] += a * b;
            }
        }
        let windows = stage.windows();
        for (k, mass) in next.iter_mut().enumerate() {
            if *mass == 0.0 {
                continue;
            }
            let k = k as u64;
            if let Some(i) = windows.iter().position(|w| w.contains(k)) {
                entries.push(Terminal { stage: idx + 1, n: stage.n, k, accepted: i, mass: *mass });
                *mass = 0.0;
            }
        }
        while next.last() == Some(&0.0) && next.len() > 1 {
            next.pop();
        }
        dist = next;
        prev_n = stage.n;
    }
    Ok(TerminalDistribution { theta, entries, truncated, unresolved: dist.iter().sum() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcPoint {
    pub theta: f64,
    /// `Pr{accept H_i | theta}`, `i = 0..m-1`.
    pub accept: Vec<f64>,
    pub asn: f64,
    /// Probability of stopping at each stage.
    pub stage_probs: Vec<f64>,
    pub truncation_bound: f64,
}

pub fn oc_point(plan: &MultiHypPlan, theta: f64) -> Result<OcPoint> {
    let td = terminal_distribution(plan, theta)?;
    let mut accept = vec![CompensatedSum::new(); plan.m()];
    let mut stages = vec![CompensatedSum::new(); plan.s()];
    let mut asn = CompensatedSum::new();
    for t in &td.entries {
        accept[t.accepted].add(t.mass);
        stages[t.stage - 1].add(t.mass);
        asn.add(t.mass * t.n as f64);
    }
    Ok(OcPoint {
        theta,
        accept: accept.iter().map(CompensatedSum::value).collect(),
        asn: asn.value(),
        stage_probs: stages.iter().map(CompensatedSum::value).collect(),
        truncation_bound: td.truncated + td.unresolved,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcReport {
    pub m: usize,
    pub sizes: Vec<u64>,
    pub points: Vec<OcPoint>,
}

/// OC, ASN and stopping-stage probabilities over a grid; grid points are
/// evaluated in parallel and reported in grid order.
pub fn oc_curve(plan: &MultiHypPlan, grid: &[f64]) -> Result<OcReport> {
    let points = grid.par_iter().map(|&t| oc_point(plan, t)).collect::<Result<Vec<_>>>()?;
    Ok(OcReport { m: plan.m(), sizes: plan.sizes(), points })
}

impl OcReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = vec!["theta".to_string()];
        header.extend((0..self.m).map(|i| format!("accept_prob_{i}")));
        header.push("asn".into());
        header.extend((1..=self.sizes.len()).map(|l| format!("stage_prob_{l}")));
        header.push("truncation_bound".into());
        writeln!(out, "{}", header.join(","))?;
        for p in &self.points {
            let mut row = vec![fmt_num(p.theta)];
            row.extend(p.accept.iter().map(|&x| fmt_num(x)));
            row.push(fmt_num(p.asn));
            row.extend(p.stage_probs.iter().map(|&x| fmt_num(x)));
            row.push(fmt_num(p.truncation_bound));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Shortest round-trip decimal.
pub fn fmt_num(x: f64) -> String {
    format!("{x:?}")
}

/// Parses `lo:hi:step` into an inclusive grid; a comma list of values is
/// taken as is.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Error::Input(format!("grid '{text}' is neither lo:hi:step nor a list of values"));
    if parts.len() == 1 {
        return text.split(',').map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect();
    }
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let (lo, hi, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || !(hi >= lo) {
        return Err(bad());
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    // Rounding to 12 decimals keeps grid values like 0.3 + 4 * 0.01 tidy.
    Ok((0..=count)
        .map(|i| {
            let v = lo + i as f64 * step;
            (v * 1e12).round() / 1e12
        })
        .collect())
}

/// Required bounds `delta_i` on `Pr{reject H_i | theta}` over each zone
/// `Theta_i` of the parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRequirement {
    pub deltas: Vec<f64>,
}

impl RiskRequirement {
    pub fn one_sided(alpha: f64, beta: f64) -> Self {
        Self { deltas: vec![alpha, beta] }
    }

    /// `delta_0 = alpha_1`, `delta_{m-1} = beta_{m-1}`, and for the middle
    /// hypotheses `delta_i = alpha_{i+1} + beta_i` (error in either direction).
    pub fn nominal(spec: &PlanSpec) -> Self {
        let m = spec.m();
        let deltas = (0..m)
            .map(|i| {
                if i == 0 {
                    spec.alphas[0]
                } else if i == m - 1 {
                    spec.betas[m - 2]
                } else {
                    spec.alphas[i] + spec.betas[i - 1]
                }
            })
            .collect();
        Self { deltas }
    }
}

/// One evaluated piece of a zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCheck {
    pub hypothesis: usize,
    /// Parameter interval covered by this check (a point when `lo == hi`).
    pub lo: f64,
    pub hi: f64,
    /// Exact risk at a point, or a bound over the interval.
    pub risk: f64,
    pub exact: bool,
    pub delta: f64,
}

impl RiskCheck {
    pub fn passes(&self) -> bool {
        self.risk <= self.delta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub satisfied: bool,
    /// Per hypothesis, the check with the largest risk.
    pub worst_points: Vec<RiskCheck>,
    pub checks: Vec<RiskCheck>,
    /// Analytic caps `s (max_{j>i} alpha_j + max_{j<=i} beta_j)`.
    pub caps: Vec<f64>,
}

impl RiskReport {
    /// Largest `risk / delta` over all checks.
    pub fn worst_ratio(&self) -> f64 {
        self.checks.iter().map(|c| c.risk / c.delta).fold(0.0, f64::max)
    }
}

struct Evaluator<'a> {
    plan: &'a MultiHypPlan,
    cache: HashMap<u64, TerminalDistribution>,
}

impl<'a> Evaluator<'a> {
    fn get(&mut self, theta: f64) -> Result<&TerminalDistribution> {
        let key = theta.to_bits();
        if !self.cache.contains_key(&key) {
            let td = terminal_distribution(self.plan, theta)?;
            self.cache.insert(key, td);
        }
        Ok(&self.cache[&key])
    }

    fn reject(&mut self, i: usize, theta: f64) -> Result<f64> {
        let td = self.get(theta)?;
        Ok(td.mass_where(|t| t.accepted != i) + td.truncated + td.unresolved)
    }

    /// Bound on `sup Pr{reject H_i}` over `[a, b]` inside a middle zone.
    fn sandwich(&mut self, i: usize, a: f64, b: f64) -> Result<f64> {
        let low = self.get(a)?.mass_where(|t| t.accepted != i && t.estimate() <= a);
        let slack_a = self.get(a)?.truncated;
        let high = self.get(b)?.mass_where(|t| t.accepted != i && t.estimate() >= b);
        let slack_b = self.get(b)?.truncated;
        Ok(low + high + slack_a + slack_b)
    }
}

/// Checks `Pr{reject H_i | theta} <= delta_i` over every zone.
///
/// The outer zones are evaluated at their inner endpoint, where the risk is
/// largest. A middle zone `[a, b]` is covered by
/// `Pr{reject, est <= a | a} + Pr{reject, est >= b | b}`, bisected until each
/// piece passes or the depth limit is hit.
pub fn verify_risk(plan: &MultiHypPlan, req: &RiskRequirement) -> Result<RiskReport> {
    let m = plan.m();
    if req.deltas.len() != m {
        return Err(Error::Domain(format!("requirement needs {m} deltas, got {}", req.deltas.len())));
    }
    let spec = &plan.spec;
    let s = plan.s() as f64;
    let mut ev = Evaluator { plan, cache: HashMap::new() };
    let mut checks = Vec::new();
    for i in 0..m {
        let delta = req.deltas[i];
        if i == 0 || i == m - 1 {
            let theta = if i == 0 { spec.zones[0].lower } else { spec.zones[m - 2].upper };
            let risk = ev.reject(i, theta)?;
            checks.push(RiskCheck { hypothesis: i, lo: theta, hi: theta, risk, exact: true, delta });
            continue;
        }
        let (a, b) = (spec.zones[i - 1].upper, spec.zones[i].lower);
        let mut pending = vec![(a, b, 0usize)];
        while let Some((lo, hi, depth)) = pending.pop() {
            if lo == hi {
                let risk = ev.reject(i, lo)?;
                checks.push(RiskCheck { hypothesis: i, lo, hi, risk, exact: true, delta });
                continue;
            }
            let bound = ev.sandwich(i, lo, hi)?;
            if bound <= delta || depth >= MAX_ZONE_SPLITS {
                checks.push(RiskCheck { hypothesis: i, lo, hi, risk: bound, exact: false, delta });
            } else {
                let mid = 0.5 * (lo + hi);
                pending.push((mid, hi, depth + 1));
                pending.push((lo, mid, depth + 1));
            }
        }
    }
    let worst_points = (0..m)
        .filter_map(|i| {
            checks
                .iter()
                .filter(|c| c.hypothesis == i)
                .max_by(|x, y| x.risk.total_cmp(&y.risk))
                .cloned()
        })
        .collect();
    let caps = (0..m)
        .map(|i| {
            let a = (i + 1..=m).map(|j| spec.alpha(j)).fold(0.0, f64::max);
            let b = (0..=i).map(|j| spec.beta(j)).fold(0.0, f64::max);
            s * (a + b)
        })
        .collect();
    let satisfied = checks.iter().all(RiskCheck::passes);
    Ok(RiskReport { satisfied, worst_points, checks, caps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plans::{build_thresholds, PlanSpec, Schedule, Zone};

    fn one_stage() -> MultiHypPlan {
        let spec = PlanSpec::one_sided(Model::Bernoulli, 0.3, 0.7, 0.1, 0.1);
        let n = spec.closing_size().unwrap();
        build_thresholds(&spec, &[n]).unwrap()
    }

    #[test]
    fn single_stage_is_a_binomial_tail() {
        let plan = one_stage();
        let st = &plan.stages[0];
        let cut = st.window(1).hi.unwrap();
        for theta in [0.2, 0.5, 0.65] {
            let p = oc_point(&plan, theta).unwrap();
            let tail = Model::Bernoulli.cdf_sum(st.n, cut, theta).unwrap();
            assert!((p.accept[0] - tail).abs() < 1e-13);
            assert!((p.accept.iter().sum::<f64>() - 1.0).abs() < 1e-13);
            assert!((p.asn - st.n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn asn_between_first_and_last_stage() {
        let plan = PlanSpec::one_sided(Model::Bernoulli, 0.4, 0.6, 0.05, 0.05)
            .with_zeta(0.5)
            .with_schedule(Schedule::Geometric { stages: 4 })
            .build()
            .unwrap();
        let sizes = plan.sizes();
        for p in oc_curve(&plan, &[0.1, 0.45, 0.5, 0.9]).unwrap().points {
            assert!(p.asn >= sizes[0] as f64 - 1e-9 && p.asn <= *sizes.last().unwrap() as f64 + 1e-9);
            assert!((p.stage_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn poisson_truncation_is_accounted() {
        let plan = PlanSpec::one_sided(Model::Poisson, 1.0, 2.0, 0.05, 0.05)
            .with_schedule(Schedule::Arithmetic { stages: 3 })
            .build()
            .unwrap();
        let p = oc_point(&plan, 1.5).unwrap();
        let total: f64 = p.accept.iter().sum();
        assert!(p.truncation_bound < 1e-12);
        assert!((total + p.truncation_bound - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0.3:0.7:0.01").unwrap();
        assert_eq!(g.len(), 41);
        assert_eq!(g[4], 0.34);
        assert_eq!(*g.last().unwrap(), 0.7);
        assert!(parse_grid("0.3:0.7").is_err());
        assert_eq!(parse_grid("0.5").unwrap(), vec![0.5]);
        assert_eq!(parse_grid("0.2, 0.4").unwrap(), vec![0.2, 0.4]);
        assert!(parse_grid("0.2,x").is_err());
        assert!(parse_grid("0.7:0.3:0.1").is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let plan = one_stage();
        let rep = oc_curve(&plan, &[0.25, 0.5]).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "theta,accept_prob_0,accept_prob_1,asn,stage_prob_1,truncation_bound");
        assert_eq!(lines.len(), 3);
        assert!(!text.contains('\r'));
    }

    #[test]
    fn verify_small_zeta_has_margin() {
        let spec = PlanSpec::one_sided(Model::Bernoulli, 0.4, 0.6, 0.05, 0.05)
            .with_zeta(0.05)
            .with_schedule(Schedule::Geometric { stages: 3 });
        let plan = spec.build().unwrap();
        let rep = verify_risk(&plan, &RiskRequirement::one_sided(0.05, 0.05)).unwrap();
        assert!(rep.satisfied);
        assert!(rep.worst_ratio() < 0.5);
        assert_eq!(rep.caps.len(), 2);
        assert!((rep.caps[0] - 3.0 * 0.05 * 0.05).abs() < 1e-15);
    }

    #[test]
    fn middle_zone_bound_dominates_exact_values() {
        let spec = PlanSpec::multi(
            Model::Bernoulli,
            vec![Zone::new(0.15, 0.25), Zone::new(0.45, 0.55)],
            vec![0.05, 0.05],
            vec![0.05, 0.05],
        )
        .with_schedule(Schedule::Arithmetic { stages: 3 });
        let plan = spec.build().unwrap();
        let rep = verify_risk(&plan, &RiskRequirement::nominal(&spec)).unwrap();
        for c in rep.checks.iter().filter(|c| c.hypothesis == 1) {
            for t in [c.lo, 0.5 * (c.lo + c.hi), c.hi] {
                let p = oc_point(&plan, t).unwrap();
                assert!(1.0 - p.accept[1] <= c.risk + 1e-12);
            }
        }
    }
}

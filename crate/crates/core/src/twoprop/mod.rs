//! Multistage tests on the difference `theta = p_x - p_y` of two Bernoulli
//! proportions, with hybrid score limits, rectangle bounds on rejection
//! probabilities and a branch-and-bound risk certifier.
//!
//! Stage `l` draws `N_{l,x}` samples of `X` and `N_{l,y} = link(N_{l,x})`
//! samples of `Y`. The stage regions are materialized on the support grid
//! `{0..N_x} x {0..N_y}` of the cumulative sums, so execution and exact
//! evaluation never recompute limits.

mod bounds;
mod certify;
mod newcombe;
mod truncation;

pub use bounds::{rejection_prob_bounds, Bounder, Rect, TwoPropOcPoint};
pub use certify::{
    certify_all,
    certify_risk, tune_two_prop, CertifyOptions, RectRecord, RectStatus, RiskCertificate, Verdict,
};
pub use newcombe::{newcombe_limits, score_roots};
pub use truncation::{truncation_bounds, truncation_sums};

use serde::{Deserialize, Serialize};

use crate::error::{check_risk, domain, Error, Result};
use crate::numeric::{snap, two_sided_critical};
use crate::plans::{progression, Schedule, Zone};

use newcombe::{lower_from_roots, upper_from_roots};

/// Default cap on `N_x` during size determination.
pub const DEFAULT_MAX_NX: u64 = 5_000;

/// Row character for a continuation point.
pub const CONTINUE: char = '.';

/// Map from `N_x` to `N_y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Link {
    Identity,
    /// `N_y = max(1, ceil(factor * N_x))`.
    Scale { factor: f64 },
}

impl Link {
    pub fn apply(self, nx: u64) -> u64 {
        match self {
            Link::Identity => nx,
            Link::Scale { factor } => (snap(factor * nx as f64).ceil() as u64).max(1),
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            Link::Scale { factor } if !(factor > 0.0 && factor.is_finite()) => {
                domain(format!("link factor {factor} must be positive"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPropSpec {
    /// Indifference zones `(theta'_i, theta''_i)` on `[-1, 1]`.
    pub zones: Vec<Zone>,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub zeta: f64,
    pub link: Link,
    pub schedule: Schedule,
    pub max_nx: u64,
}

impl TwoPropSpec {
    pub fn new(zones: Vec<Zone>, alphas: Vec<f64>, betas: Vec<f64>) -> Self {
        Self {
            zones,
            alphas,
            betas,
            zeta: 1.0,
            link: Link::Identity,
            schedule: Schedule::Geometric { stages: 3 },
            max_nx: DEFAULT_MAX_NX,
        }
    }

    /// Two hypotheses `theta <= theta0` and `theta >= theta1`.
    pub fn two(theta0: f64, theta1: f64, alpha: f64, beta: f64) -> Self {
        Self::new(vec![Zone::new(theta0, theta1)], vec![alpha], vec![beta])
    }

    pub fn with_zeta(mut self, zeta: f64) -> Self {
        self.zeta = zeta;
        self
    }

    pub fn with_link(mut self, link: Link) -> Self {
        self.link = link;
        self
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_max_nx(mut self, cap: u64) -> Self {
        self.max_nx = cap;
        self
    }

    pub fn m(&self) -> usize {
        self.zones.len() + 1
    }

    /// Effective `alpha_i`, `alpha_0 = alpha_1`.
    pub fn alpha(&self, i: usize) -> f64 {
        self.zeta * self.alphas[i.max(1) - 1]
    }

    /// Effective `beta_i`, `beta_m = beta_{m-1}`.
    pub fn beta(&self, i: usize) -> f64 {
        self.zeta * self.betas[i.min(self.m() - 1) - 1]
    }

    pub fn zeta_max(&self) -> f64 {
        1.0 / self.alphas.iter().chain(&self.betas).fold(0.0f64, |a, &b| a.max(b))
    }

    pub fn validate(&self) -> Result<()> {
        if self.zones.is_empty() {
            return domain("at least one indifference zone is required");
        }
        if self.m() > 36 {
            return domain("at most 36 hypotheses are supported");
        }
        if self.alphas.len() != self.zones.len() || self.betas.len() != self.zones.len() {
            return domain("need one alpha and one beta per indifference zone");
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, z) in self.zones.iter().enumerate() {
            if !(z.lower > -1.0 && z.upper < 1.0 && z.lower < z.upper) {
                return domain(format!("zone {} must satisfy -1 < theta' < theta'' < 1", i + 1));
            }
            if z.lower < prev {
                return domain(format!("zone {} overlaps the previous zone", i + 1));
            }
            prev = z.upper;
        }
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return domain(format!("zeta = {} must be positive", self.zeta));
        }
        for i in 1..self.m() {
            check_risk("alpha", self.alphas[i - 1])?;
            check_risk("beta", self.betas[i - 1])?;
            check_risk("zeta * alpha", self.alpha(i))?;
            check_risk("zeta * beta", self.beta(i))?;
        }
        if self.max_nx == 0 {
            return domain("maximum N_x must be positive");
        }
        self.link.validate()?;
        match &self.schedule {
            Schedule::Geometric { stages } | Schedule::Arithmetic { stages } if *stages == 0 => {
                domain("number of stages must be positive")
            }
            Schedule::Fixed { sizes } => {
                if sizes.is_empty() || sizes[0] == 0 || sizes.windows(2).any(|w| w[0] >= w[1]) {
                    domain("stage sizes must be positive and strictly increasing")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    fn grid(&self, nx: u64) -> Grid<'_> {
        Grid::new(self, nx, self.link.apply(nx))
    }

    /// Decision regions at `N_x = nx`.
    pub fn stage(&self, nx: u64) -> Result<TwoPropStage> {
        self.validate()?;
        if nx == 0 {
            return domain("N_x must be positive");
        }
        Ok(self.grid(nx).materialize())
    }

    /// Smallest `N_x` at which, for every zone, some grid point has both
    /// limits inside it.
    pub fn zone_resolving_size(&self) -> Result<u64> {
        self.validate()?;
        (1..=self.max_nx)
            .find(|&nx| {
                let g = self.grid(nx);
                (1..self.m()).all(|i| g.any(|kx, ky| g.lower_ok(i, kx, ky) && g.upper_ok(i, kx, ky)))
            })
            .ok_or_else(|| self.over_cap("resolve every zone"))
    }

    /// Smallest `N_x` at or above the zone-resolving size whose grid has no
    /// continuation point.
    pub fn closing_size(&self) -> Result<u64> {
        let start = self.zone_resolving_size()?;
        (start..=self.max_nx)
            .find(|&nx| {
                let g = self.grid(nx);
                !g.any(|kx, ky| g.decision(kx, ky).is_none())
            })
            .ok_or_else(|| self.over_cap("close the last stage"))
    }

    /// Smallest `N_x <= upto` at which some grid point stops.
    pub fn first_stop_size(&self, upto: u64) -> Result<u64> {
        self.validate()?;
        Ok((1..=upto)
            .find(|&nx| {
                let g = self.grid(nx);
                g.any(|kx, ky| g.decision(kx, ky).is_some())
            })
            .unwrap_or(upto))
    }

    fn over_cap(&self, what: &str) -> Error {
        Error::Infeasible(format!("no N_x <= {} is large enough to {what}", self.max_nx))
    }

    /// Stage sizes of `X`.
    pub fn stage_sizes(&self) -> Result<Vec<u64>> {
        self.validate()?;
        match &self.schedule {
            Schedule::Fixed { sizes } => Ok(sizes.clone()),
            Schedule::FullySequential => Ok((1..=self.closing_size()?).collect()),
            Schedule::Geometric { stages } | Schedule::Arithmetic { stages } => {
                let ns = self.closing_size()?;
                let n1 = self.first_stop_size(ns)?;
                progression(n1, ns, *stages, matches!(self.schedule, Schedule::Geometric { .. }))
            }
        }
    }

    pub fn build(&self) -> Result<TwoPropPlan> {
        let sizes = self.stage_sizes()?;
        let stages: Vec<TwoPropStage> = sizes.iter().map(|&nx| self.grid(nx).materialize()).collect();
        let plan = TwoPropPlan { spec: self.clone(), stages };
        if plan.stages.last().is_some_and(|st| st.continuation_count() > 0) {
            return Err(Error::Infeasible(format!(
                "last stage N_x = {} leaves continuation points",
                plan.stages.last().map_or(0, |st| st.nx)
            )));
        }
        plan.check()?;
        Ok(plan)
    }
}

/// Score roots for one critical value on both axes.
struct Roots {
    crit: f64,
    x: Vec<(f64, f64)>,
    y: Vec<(f64, f64)>,
}

impl Roots {
    fn new(delta: f64, nx: u64, ny: u64) -> Self {
        let crit = two_sided_critical(delta);
        let side = |n: u64| (0..=n).map(|k| newcombe::score_roots(k as f64 / n as f64, n, crit)).collect();
        Self { crit, x: side(nx), y: side(ny) }
    }
}

/// Limit comparisons on one stage grid.
struct Grid<'a> {
    spec: &'a TwoPropSpec,
    nx: u64,
    ny: u64,
    /// Entry `i - 1` serves `alpha_i`, `i = 1..m-1`.
    lower: Vec<Roots>,
    upper: Vec<Roots>,
}

impl<'a> Grid<'a> {
    fn new(spec: &'a TwoPropSpec, nx: u64, ny: u64) -> Self {
        let lower = (1..spec.m()).map(|i| Roots::new(spec.alpha(i), nx, ny)).collect();
        let upper = (1..spec.m()).map(|i| Roots::new(spec.beta(i), nx, ny)).collect();
        Self { spec, nx, ny, lower, upper }
    }

    fn diff(&self, kx: u64, ky: u64) -> f64 {
        kx as f64 / self.nx as f64 - ky as f64 / self.ny as f64
    }

    /// `theta'_i <= L(alpha_i)`, vacuous for `i = 0`.
    fn lower_ok(&self, i: usize, kx: u64, ky: u64) -> bool {
        if i == 0 {
            return true;
        }
        let r = &self.lower[i - 1];
        let l = lower_from_roots(self.diff(kx, ky), r.x[kx as usize].0, r.y[ky as usize].1, self.nx, self.ny, r.crit);
        self.spec.zones[i - 1].lower <= l
    }

    /// `U(beta_i) <= theta''_i`, vacuous for `i = m`.
    fn upper_ok(&self, i: usize, kx: u64, ky: u64) -> bool {
        if i >= self.spec.m() {
            return true;
        }
        let r = &self.upper[i - 1];
        let u = upper_from_roots(self.diff(kx, ky), r.x[kx as usize].1, r.y[ky as usize].0, self.nx, self.ny, r.crit);
        u <= self.spec.zones[i - 1].upper
    }

    /// Accepted hypothesis, or `None` to continue. A single satisfied
    /// bracket `i` accepts `H_{i-1}`; two adjacent ones are split at the
    /// midpoint of the zone between them.
    fn decision(&self, kx: u64, ky: u64) -> Option<usize> {
        let mut hit = (1..=self.spec.m()).filter(|&i| self.lower_ok(i - 1, kx, ky) && self.upper_ok(i, kx, ky));
        let first = hit.next()?;
        if hit.next().is_none() || first == self.spec.m() {
            return Some(first - 1);
        }
        if self.diff(kx, ky) <= self.spec.zones[first - 1].midpoint() {
            Some(first - 1)
        } else {
            Some(first)
        }
    }

    fn any(&self, pred: impl Fn(u64, u64) -> bool) -> bool {
        (0..=self.nx).any(|kx| (0..=self.ny).any(|ky| pred(kx, ky)))
    }

    fn materialize(&self) -> TwoPropStage {
        let rows = (0..=self.nx)
            .map(|kx| (0..=self.ny).map(|ky| encode(self.decision(kx, ky))).collect())
            .collect();
        TwoPropStage { nx: self.nx, ny: self.ny, rows }
    }
}

fn encode(d: Option<usize>) -> char {
    d.map_or(CONTINUE, |i| std::char::from_digit(i as u32, 36).expect("at most 36 hypotheses"))
}

fn decode(c: char) -> Option<usize> {
    c.to_digit(36).map(|d| d as usize)
}

/// Regions of one stage: row `k_x` holds one character per `k_y`, either
/// [`CONTINUE`] or the base-36 index of the accepted hypothesis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoPropStage {
    pub nx: u64,
    pub ny: u64,
    pub rows: Vec<String>,
}

impl TwoPropStage {
    pub fn decision(&self, kx: u64, ky: u64) -> Option<usize> {
        decode(self.rows[kx as usize].as_bytes()[ky as usize] as char)
    }

    pub fn continuation_count(&self) -> usize {
        self.rows.iter().map(|r| r.bytes().filter(|&b| b == CONTINUE as u8).count()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPropOutcome {
    /// 1-based stage index at termination.
    pub stage_index: usize,
    pub nx: u64,
    pub ny: u64,
    pub accepted_index: usize,
    pub px_hat: f64,
    pub py_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPropPlan {
    pub spec: TwoPropSpec,
    pub stages: Vec<TwoPropStage>,
}

impl TwoPropPlan {
    pub fn m(&self) -> usize {
        self.spec.m()
    }

    pub fn s(&self) -> usize {
        self.stages.len()
    }

    pub fn sizes(&self) -> Vec<(u64, u64)> {
        self.stages.iter().map(|st| (st.nx, st.ny)).collect()
    }

    /// Structural checks for plans read from documents.
    pub fn check(&self) -> Result<()> {
        self.spec.validate()?;
        if self.stages.is_empty() {
            return domain("plan has no stages");
        }
        for (l, st) in self.stages.iter().enumerate() {
            if l > 0 {
                let prev = &self.stages[l - 1];
                if st.nx <= prev.nx || st.ny < prev.ny {
                    return domain(format!("stage {} sizes do not increase", l + 1));
                }
            }
            if st.nx == 0 || st.ny == 0 || st.rows.len() as u64 != st.nx + 1 {
                return domain(format!("stage {} has a malformed grid", l + 1));
            }
            for row in &st.rows {
                if row.len() as u64 != st.ny + 1 {
                    return domain(format!("stage {} has a row of the wrong length", l + 1));
                }
                if row.chars().any(|c| c != CONTINUE && decode(c).is_none_or(|d| d >= self.m())) {
                    return domain(format!("stage {} has an invalid region code", l + 1));
                }
            }
        }
        if self.stages.last().is_some_and(|st| st.continuation_count() > 0) {
            return domain("the last stage must not continue");
        }
        Ok(())
    }

    /// Consumes both streams stage by stage until a region decides.
    pub fn run(
        &self,
        stream_x: impl IntoIterator<Item = u64>,
        stream_y: impl IntoIterator<Item = u64>,
    ) -> Result<TwoPropOutcome> {
        let (mut xs, mut ys) = (stream_x.into_iter(), stream_y.into_iter());
        let (mut tx, mut ty, mut kx, mut ky) = (0u64, 0u64, 0u64, 0u64);
        let draw = |it: &mut dyn Iterator<Item = u64>, taken: &mut u64, sum: &mut u64, upto: u64, name: &str| {
            while *taken < upto {
                let v = it.next().ok_or_else(|| {
                    Error::Input(format!("{name} stream exhausted after {taken} samples"))
                })?;
                if v > 1 {
                    return Err(Error::Input(format!("{name} sample {v} is not 0 or 1")));
                }
                *sum += v;
                *taken += 1;
            }
            Ok(())
        };
        for (l, st) in self.stages.iter().enumerate() {
            draw(&mut xs, &mut tx, &mut kx, st.nx, "x")?;
            draw(&mut ys, &mut ty, &mut ky, st.ny, "y")?;
            if let Some(d) = st.decision(kx, ky) {
                return Ok(TwoPropOutcome {
                    stage_index: l + 1,
                    nx: st.nx,
                    ny: st.ny,
                    accepted_index: d,
                    px_hat: kx as f64 / st.nx as f64,
                    py_hat: ky as f64 / st.ny as f64,
                });
            }
        }
        Err(Error::Infeasible("plan did not terminate at its last stage".into()))
    }
}

pub fn build_two_prop_plan(spec: &TwoPropSpec) -> Result<TwoPropPlan> {
    spec.build()
}

pub fn run_two_prop(
    plan: &TwoPropPlan,
    stream_x: impl IntoIterator<Item = u64>,
    stream_y: impl IntoIterator<Item = u64>,
) -> Result<TwoPropOutcome> {
    plan.run(stream_x, stream_y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> TwoPropSpec {
        TwoPropSpec::two(-0.1, 0.1, 0.05, 0.05)
    }

    /// Direct rule evaluated from the public limits.
    fn oracle_decision(spec: &TwoPropSpec, nx: u64, ny: u64, kx: u64, ky: u64) -> Option<usize> {
        let (px, py) = (kx as f64 / nx as f64, ky as f64 / ny as f64);
        let m = spec.m();
        let cond = |i: usize| {
            let lo_ok = i == 1 || {
                let (l, _) = newcombe_limits(px, py, nx, ny, spec.alpha(i - 1)).unwrap();
                spec.zones[i - 2].lower <= l
            };
            let up_ok = i == m || {
                let (_, u) = newcombe_limits(px, py, nx, ny, spec.beta(i)).unwrap();
                u <= spec.zones[i - 1].upper
            };
            lo_ok && up_ok
        };
        let hits: Vec<usize> = (1..=m).filter(|&i| cond(i)).collect();
        match hits.as_slice() {
            [] => None,
            [i] => Some(i - 1),
            [i, ..] => Some(if px - py <= spec.zones[i - 1].midpoint() { i - 1 } else { *i }),
        }
    }

    #[test]
    fn regions_match_direct_rule() {
        let s = TwoPropSpec::new(
            vec![Zone::new(-0.3, -0.1), Zone::new(0.1, 0.3)],
            vec![0.1, 0.1],
            vec![0.1, 0.1],
        )
        .with_link(Link::Scale { factor: 1.5 });
        for nx in [4u64, 9, 17] {
            let st = s.stage(nx).unwrap();
            assert_eq!(st.ny, s.link.apply(nx));
            for kx in 0..=st.nx {
                for ky in 0..=st.ny {
                    assert_eq!(st.decision(kx, ky), oracle_decision(&s, st.nx, st.ny, kx, ky));
                }
            }
        }
    }

    #[test]
    fn closing_size_is_minimal() {
        let s = spec();
        let ns = s.closing_size().unwrap();
        let resolve = s.zone_resolving_size().unwrap();
        assert!(ns >= resolve);
        assert_eq!(s.stage(ns).unwrap().continuation_count(), 0);
        for nx in resolve..ns {
            assert!(s.stage(nx).unwrap().continuation_count() > 0);
        }
    }

    #[test]
    fn wide_zone_needs_few_samples() {
        let s = TwoPropSpec::two(-0.9, 0.9, 0.2, 0.2);
        assert!(s.zone_resolving_size().unwrap() < 10);
    }

    #[test]
    fn built_plan_is_closed_and_runs() {
        let plan = spec().with_schedule(Schedule::Geometric { stages: 3 }).build().unwrap();
        assert_eq!(plan.s(), 3);
        assert_eq!(plan.stages[2].continuation_count(), 0);
        let top = plan.run(std::iter::repeat(1), std::iter::repeat(0)).unwrap();
        assert_eq!(top.accepted_index, 1);
        let bottom = plan.run(std::iter::repeat(0), std::iter::repeat(1)).unwrap();
        assert_eq!(bottom.accepted_index, 0);
        assert!(plan.run([1u64, 0], [0u64]).is_err());
    }

    #[test]
    fn fixed_sizes_too_small_are_infeasible() {
        let e = spec().with_schedule(Schedule::Fixed { sizes: vec![2, 4] }).build().unwrap_err();
        assert!(matches!(e, Error::Infeasible(_)));
    }

    #[test]
    fn cap_is_enforced() {
        let e = spec().with_max_nx(5).build().unwrap_err();
        assert!(matches!(e, Error::Infeasible(_)));
    }

    #[test]
    fn malformed_plans_are_rejected() {
        let mut plan = TwoPropSpec::two(-0.5, 0.5, 0.1, 0.1).build().unwrap();
        plan.check().unwrap();
        plan.stages[0].rows[0].push('0');
        assert!(plan.check().is_err());
    }
}

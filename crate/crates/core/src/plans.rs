//! Confidence-limit sequential plans: fully sequential and multistage
//! one-sided tests and their multi-hypothesis generalisation.
//!
//! A plan is a list of stage sizes `n_1 < ... < n_s` together with per-stage
//! thresholds `f_{l,i}`, `g_{l,i}` on the sample mean. At stage `l` with mean
//! `t` the decision variable is `D = i` when `g_{l,i-1} < t <= f_{l,i}` and
//! `0` (keep sampling) otherwise; `D = i` accepts hypothesis `H_{i-1}`.
//!
//! For every `i = 1..m-1` the thresholds come from the sets
//!
//! * `A_i = {z : L(z, alpha_i) >= theta'_i}`  (evidence above the zone),
//! * `B_i = {z : U(z, beta_i) <= theta''_i}`  (evidence below the zone),
//! * `C_i = A_i ∩ B_i`                        (tie: both hold).
//!
//! If `C_i` is nonempty both thresholds equal a tie point `c`; otherwise
//! `f = max B_i` and `g` is the last support point below `min A_i`, so that
//! `min A_i` itself satisfies `g < t` and stops.

use serde::{Deserialize, Serialize};

use crate::error::{check_risk, domain, Error, Result};
use crate::limits::{crossing_test, LimitFamily};
use crate::models::{Model, SumStatistic};
use crate::numeric::snap;
use crate::serde_ext::extended_vec;

/// Default search cap for the closing sample size.
pub const DEFAULT_MAX_SAMPLE_SIZE: u64 = 200_000;

/// How a tie (both limits crossed) is settled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiePolicy {
    /// Accept the lower hypothesis iff `f(x; theta') / f(x; theta'') >= alpha_i / beta_i`.
    LikelihoodRatio,
    /// Always accept the lower hypothesis.
    AlwaysAccept,
    /// Always accept the upper hypothesis.
    AlwaysReject,
    /// Split the tie set at its midpoint.
    SupportMidpoint,
    /// Split at the zone midpoint, clamped into the tie set.
    ZoneMidpoint,
}

impl TiePolicy {
    pub fn name(self) -> &'static str {
        match self {
            TiePolicy::LikelihoodRatio => "likelihood-ratio",
            TiePolicy::AlwaysAccept => "always-accept",
            TiePolicy::AlwaysReject => "always-reject",
            TiePolicy::SupportMidpoint => "support-midpoint",
            TiePolicy::ZoneMidpoint => "zone-midpoint",
        }
    }
}

impl std::str::FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "likelihood-ratio" | "lr" => Ok(TiePolicy::LikelihoodRatio),
            "always-accept" | "accept" => Ok(TiePolicy::AlwaysAccept),
            "always-reject" | "reject" => Ok(TiePolicy::AlwaysReject),
            "support-midpoint" | "midpoint" => Ok(TiePolicy::SupportMidpoint),
            "zone-midpoint" => Ok(TiePolicy::ZoneMidpoint),
            other => Err(Error::Input(format!("unknown tie policy '{other}'"))),
        }
    }
}

/// Indifference zone `(theta'_i, theta''_i)` between `H_{i-1}` and `H_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub lower: f64,
    pub upper: f64,
}

impl Zone {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Schedule {
    /// Every sample size from 1 to the closing size.
    FullySequential,
    Geometric { stages: usize },
    Arithmetic { stages: usize },
    Fixed { sizes: Vec<u64> },
}

/// Everything that defines a plan except the computed thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSpec {
    pub model: Model,
    pub family: LimitFamily,
    pub zones: Vec<Zone>,
    /// Nominal `alpha_i`, `i = 1..m-1`; the plan uses `zeta * alpha_i`.
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub zeta: f64,
    pub tie: TiePolicy,
    pub schedule: Schedule,
    pub max_sample_size: u64,
}

impl PlanSpec {
    /// Two hypotheses `theta <= theta0` vs `theta >= theta1`.
    pub fn one_sided(model: Model, theta0: f64, theta1: f64, alpha: f64, beta: f64) -> Self {
        Self {
            model,
            family: LimitFamily::Exact,
            zones: vec![Zone::new(theta0, theta1)],
            alphas: vec![alpha],
            betas: vec![beta],
            zeta: 1.0,
            tie: TiePolicy::LikelihoodRatio,
            schedule: Schedule::FullySequential,
            max_sample_size: DEFAULT_MAX_SAMPLE_SIZE,
        }
    }

    /// `m = zones.len() + 1` hypotheses.
    pub fn multi(model: Model, zones: Vec<Zone>, alphas: Vec<f64>, betas: Vec<f64>) -> Self {
        let tie = if zones.len() == 1 { TiePolicy::LikelihoodRatio } else { TiePolicy::SupportMidpoint };
        Self {
            model,
            family: LimitFamily::Exact,
            zones,
            alphas,
            betas,
            zeta: 1.0,
            tie,
            schedule: Schedule::FullySequential,
            max_sample_size: DEFAULT_MAX_SAMPLE_SIZE,
        }
    }

    pub fn with_family(mut self, family: LimitFamily) -> Self {
        self.family = family;
        self
    }

    pub fn with_zeta(mut self, zeta: f64) -> Self {
        self.zeta = zeta;
        self
    }

    pub fn with_tie(mut self, tie: TiePolicy) -> Self {
        self.tie = tie;
        self
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_max_sample_size(mut self, cap: u64) -> Self {
        self.max_sample_size = cap;
        self
    }

    /// Number of hypotheses.
    pub fn m(&self) -> usize {
        self.zones.len() + 1
    }

    /// Effective `alpha_i = zeta * alpha_i`, with `alpha_0 = alpha_1` and `alpha_m = 0`.
    pub fn alpha(&self, i: usize) -> f64 {
        let m = self.m();
        match i {
            0 => self.zeta * self.alphas[0],
            i if i >= m => 0.0,
            i => self.zeta * self.alphas[i - 1],
        }
    }

    /// Effective `beta_i`, with `beta_0 = 0` and `beta_m = beta_{m-1}`.
    pub fn beta(&self, i: usize) -> f64 {
        let m = self.m();
        match i {
            0 => 0.0,
            i if i >= m => self.zeta * self.betas[m - 2],
            i => self.zeta * self.betas[i - 1],
        }
    }

    /// Largest admissible `zeta` (exclusive): every effective risk stays below 1.
    pub fn zeta_max(&self) -> f64 {
        let top = self.alphas.iter().chain(&self.betas).fold(0.0f64, |a, &b| a.max(b));
        1.0 / top
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        if self.zones.is_empty() {
            return domain("at least one indifference zone (two hypotheses) is required");
        }
        if self.alphas.len() != self.zones.len() || self.betas.len() != self.zones.len() {
            return domain("need one alpha and one beta per indifference zone");
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, z) in self.zones.iter().enumerate() {
            if !self.model.in_parameter_space(z.lower) || !self.model.in_parameter_space(z.upper) {
                return domain(format!("zone {} endpoints outside the parameter space", i + 1));
            }
            if !(z.lower < z.upper) {
                return domain(format!("zone {} needs theta' < theta''", i + 1));
            }
            if z.lower < prev {
                return domain(format!("zone {} overlaps the previous zone", i + 1));
            }
            prev = z.upper;
        }
        if !(self.zeta > 0.0) || !self.zeta.is_finite() {
            return domain(format!("zeta = {} must be positive", self.zeta));
        }
        for i in 1..self.m() {
            check_risk("alpha", self.alphas[i - 1])?;
            check_risk("beta", self.betas[i - 1])?;
            check_risk("zeta * alpha", self.alpha(i))?;
            check_risk("zeta * beta", self.beta(i))?;
        }
        if self.max_sample_size == 0 {
            return domain("maximum sample size must be positive");
        }
        match &self.schedule {
            Schedule::Geometric { stages } | Schedule::Arithmetic { stages } if *stages == 0 => {
                domain("number of stages must be positive")
            }
            Schedule::Fixed { sizes } => check_sizes(sizes),
            _ => Ok(()),
        }
    }

    fn lower_crossed(&self, n: u64, k: u64, i: usize) -> bool {
        self.family.lower_crossed_unchecked(self.model, n, k, self.zones[i - 1].lower, self.alpha(i))
    }

    fn upper_crossed(&self, n: u64, k: u64, i: usize) -> bool {
        self.family.upper_crossed_unchecked(self.model, n, k, self.zones[i - 1].upper, self.beta(i))
    }

    /// `(min A_i, max B_i, C_i as [min, max])` at sample size `n`.
    fn crossing_sets(&self, n: u64, i: usize) -> Result<SetSummary> {
        match self.family {
            LimitFamily::Approx { .. } => self.crossing_sets_scan(n, i),
            _ => self.crossing_sets_monotone(n, i),
        }
    }

    /// Exact and Chernoff limits are monotone in `z`, so `A_i` is an upper
    /// set and `B_i` a lower set of the support; binary search suffices.
    fn crossing_sets_monotone(&self, n: u64, i: usize) -> Result<SetSummary> {
        let a = |k: u64| self.lower_crossed(n, k, i);
        let b = |k: u64| self.upper_crossed(n, k, i);
        let min_a = match self.model.max_sum(n) {
            Some(top) => {
                if a(top) {
                    Some(first_true(0, top, a))
                } else {
                    None
                }
            }
            None => {
                let hi = grow_until(n, self.zones[i - 1].lower, |k| a(k))?;
                Some(first_true(0, hi, a))
            }
        };
        let max_b = if !b(0) {
            None
        } else {
            let hi = match self.model.max_sum(n) {
                Some(top) if b(top) => return Err(Error::Domain("upper limit below the zone at the top of the support".into())),
                Some(top) => top,
                None => grow_until(n, self.zones[i - 1].upper, |k| !b(k))?,
            };
            // b is true on [0, j] and false after; first false minus one.
            Some(first_true(0, hi, |k| !b(k)) - 1)
        };
        let tie = match (min_a, max_b) {
            (Some(lo), Some(hi)) if lo <= hi => Some((lo, hi)),
            _ => None,
        };
        Ok(SetSummary { min_a, max_b, tie })
    }

    /// Approximate limits carry no monotonicity guarantee: scan the support.
    fn crossing_sets_scan(&self, n: u64, i: usize) -> Result<SetSummary> {
        let top = match self.model.max_sum(n) {
            Some(top) => top,
            None => {
                // Scan until both sets have settled above the zone.
                let start = (self.zones[i - 1].upper * n as f64).ceil() as u64;
                let mut k = start;
                loop {
                    if self.lower_crossed(n, k, i) && !self.upper_crossed(n, k, i) {
                        break k;
                    }
                    k = k.checked_mul(2).map(|v| v.max(1)).ok_or_else(|| {
                        Error::Domain("support scan failed to terminate".into())
                    })?;
                    if k == 0 {
                        k = 1;
                    }
                }
            }
        };
        let mut summary = SetSummary { min_a: None, max_b: None, tie: None };
        for k in 0..=top {
            let a = self.lower_crossed(n, k, i);
            let b = self.upper_crossed(n, k, i);
            if a && summary.min_a.is_none() {
                summary.min_a = Some(k);
            }
            if b {
                summary.max_b = Some(k);
            }
            if a && b {
                summary.tie = Some(match summary.tie {
                    None => (k, k),
                    Some((lo, _)) => (lo, k),
                });
            }
        }
        Ok(summary)
    }

    fn tie_point(&self, n: u64, i: usize, lo: u64, hi: u64) -> f64 {
        let nf = n as f64;
        let below = (lo as f64 - 0.5) / nf;
        let zone = self.zones[i - 1];
        match self.tie {
            TiePolicy::AlwaysAccept => hi as f64 / nf,
            TiePolicy::AlwaysReject => below,
            TiePolicy::SupportMidpoint => (lo + hi) as f64 / (2.0 * nf),
            TiePolicy::ZoneMidpoint => zone.midpoint().clamp(lo as f64 / nf, hi as f64 / nf),
            TiePolicy::LikelihoodRatio => {
                let target = (self.alpha(i) / self.beta(i)).ln();
                let accept = |k: u64| self.model.ln_likelihood_ratio(n, k, zone.lower, zone.upper) >= target;
                if !accept(lo) {
                    below
                } else if accept(hi) {
                    hi as f64 / nf
                } else {
                    // accept holds on [lo, j] and fails after
                    (first_true(lo, hi, |k| !accept(k)) - 1) as f64 / nf
                }
            }
        }
    }

    /// Thresholds of a single stage of size `n`.
    pub fn stage(&self, n: u64) -> Result<Stage> {
        if n == 0 {
            return domain("stage sizes must be positive");
        }
        let m = self.m();
        let nf = n as f64;
        let mut f = Vec::with_capacity(m - 1);
        let mut g = Vec::with_capacity(m - 1);
        let mut ties = Vec::with_capacity(m - 1);
        for i in 1..m {
            let sets = self.crossing_sets(n, i)?;
            match sets.tie {
                Some((lo, hi)) => {
                    let c = self.tie_point(n, i, lo, hi);
                    f.push(c);
                    g.push(c);
                    ties.push(Some(TieWindow { lo, hi }));
                }
                None => {
                    f.push(sets.max_b.map_or(f64::NEG_INFINITY, |k| k as f64 / nf));
                    g.push(match sets.min_a {
                        None => f64::INFINITY,
                        Some(0) => f64::NEG_INFINITY,
                        Some(k) => (k - 1) as f64 / nf,
                    });
                    ties.push(None);
                }
            }
        }
        Ok(Stage { n, f, g, ties })
    }

    fn stage_closes(&self, stage: &Stage) -> bool {
        let cover = stage.coverage(self.model);
        if self.m() == 2 {
            cover.closed
        } else {
            cover.closed && stage.ties.iter().all(Option::is_some)
        }
    }

    /// Smallest sample size at which the plan can be closed: no continuation
    /// for `m = 2`, every tie set nonempty for `m >= 3`.
    pub fn closing_size(&self) -> Result<u64> {
        self.validate()?;
        for n in 1..=self.max_sample_size {
            if self.stage_closes(&self.stage(n)?) {
                return Ok(n);
            }
        }
        Err(Error::Infeasible(format!(
            "no closing sample size up to {}",
            self.max_sample_size
        )))
    }

    /// Smallest sample size at which some support point stops.
    pub fn first_stop_size(&self, upto: u64) -> Result<u64> {
        for n in 1..=upto {
            if self.stage(n)?.coverage(self.model).stops_any {
                return Ok(n);
            }
        }
        Ok(upto)
    }

    /// Stage sizes from the schedule.
    pub fn stage_sizes(&self) -> Result<Vec<u64>> {
        self.validate()?;
        match &self.schedule {
            Schedule::Fixed { sizes } => Ok(sizes.clone()),
            Schedule::FullySequential => Ok((1..=self.closing_size()?).collect()),
            Schedule::Geometric { stages } | Schedule::Arithmetic { stages } => {
                let ns = self.closing_size()?;
                let n1 = self.first_stop_size(ns)?;
                let geometric = matches!(self.schedule, Schedule::Geometric { .. });
                progression(n1, ns, *stages, geometric)
            }
        }
    }

    /// Builds the plan over the schedule's stage sizes.
    pub fn build(&self) -> Result<MultiHypPlan> {
        let sizes = self.stage_sizes()?;
        build_thresholds(self, &sizes)
    }
}

fn check_sizes(sizes: &[u64]) -> Result<()> {
    if sizes.is_empty() {
        return domain("at least one stage size is required");
    }
    if sizes[0] == 0 || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return domain("stage sizes must be positive and strictly increasing");
    }
    Ok(())
}

/// `s` strictly increasing sizes from `n1` to `ns`, geometric or arithmetic.
pub fn progression(n1: u64, ns: u64, s: usize, geometric: bool) -> Result<Vec<u64>> {
    if s == 0 {
        return domain("number of stages must be positive");
    }
    if s == 1 {
        return Ok(vec![ns]);
    }
    if (ns as usize) < s {
        // fewer sizes than stages: every size up to the closing one
        return Ok((1..=ns).collect());
    }
    let n1 = n1.min(ns + 1 - s as u64).max(1);
    let mut sizes: Vec<u64> = (0..s)
        .map(|l| {
            let t = l as f64 / (s - 1) as f64;
            let v = if geometric {
                n1 as f64 * (ns as f64 / n1 as f64).powf(t)
            } else {
                n1 as f64 + t * (ns - n1) as f64
            };
            (snap(v).ceil() as u64).clamp(n1, ns)
        })
        .collect();
    sizes[0] = n1;
    sizes[s - 1] = ns;
    for l in 1..s {
        sizes[l] = sizes[l].max(sizes[l - 1] + 1);
    }
    for l in (0..s - 1).rev() {
        sizes[l] = sizes[l].min(sizes[l + 1] - 1);
    }
    Ok(sizes)
}

/// Binary search for the first `k` in `[lo, hi]` where `pred` holds, given
/// that `pred(hi)` holds and `pred` is monotone.
fn first_true(mut lo: u64, mut hi: u64, pred: impl Fn(u64) -> bool) -> u64 {
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    hi
}

/// First power-of-two multiple of a starting sum at which `pred` holds.
fn grow_until(n: u64, theta: f64, pred: impl Fn(u64) -> bool) -> Result<u64> {
    let mut k = ((theta * n as f64).ceil() as u64).max(1);
    for _ in 0..64 {
        if pred(k) {
            return Ok(k);
        }
        k = k.saturating_mul(2);
    }
    Err(Error::Domain("threshold search did not terminate".into()))
}

#[derive(Debug, Clone, Copy)]
struct SetSummary {
    min_a: Option<u64>,
    max_b: Option<u64>,
    tie: Option<(u64, u64)>,
}

/// Sums `lo..=hi` at which both limits cross a zone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TieWindow {
    pub lo: u64,
    pub hi: u64,
}

/// Stopping window of a decision, as an inclusive range of sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SumWindow {
    pub lo: u64,
    /// `None` when unbounded above.
    pub hi: Option<u64>,
}

impl SumWindow {
    pub fn contains(&self, k: u64) -> bool {
        k >= self.lo && self.hi.is_none_or(|h| k <= h)
    }

    pub fn is_empty(&self) -> bool {
        self.hi.is_some_and(|h| h < self.lo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coverage {
    /// Some support point stops.
    pub stops_any: bool,
    /// Every support point stops.
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub n: u64,
    /// `f_{l,i}`, `i = 1..m-1`.
    #[serde(with = "extended_vec")]
    pub f: Vec<f64>,
    /// `g_{l,i}`, `i = 1..m-1`.
    #[serde(with = "extended_vec")]
    pub g: Vec<f64>,
    pub ties: Vec<Option<TieWindow>>,
}

impl Stage {
    pub fn m(&self) -> usize {
        self.f.len() + 1
    }

    /// `f_{l,i}` for `i = 1..=m`, with `f_{l,m} = +inf`.
    pub fn f_at(&self, i: usize) -> f64 {
        if i >= self.m() {
            f64::INFINITY
        } else {
            self.f[i - 1]
        }
    }

    /// `g_{l,i}` for `i = 0..m`, with `g_{l,0} = -inf`.
    pub fn g_at(&self, i: usize) -> f64 {
        if i == 0 {
            f64::NEG_INFINITY
        } else {
            self.g[i - 1]
        }
    }

    /// Decision variable for a sample mean `t`.
    pub fn decision(&self, t: f64) -> usize {
        (1..=self.m())
            .find(|&i| self.g_at(i - 1) < t && t <= self.f_at(i))
            .unwrap_or(0)
    }

    /// Sums at which `D = i`, `i = 1..=m`; inverted (empty) when none.
    pub fn window(&self, i: usize) -> SumWindow {
        const EMPTY: SumWindow = SumWindow { lo: 1, hi: Some(0) };
        let nf = self.n as f64;
        let g = self.g_at(i - 1);
        let f = self.f_at(i);
        if g == f64::INFINITY || f == f64::NEG_INFINITY {
            return EMPTY;
        }
        let lo = if g == f64::NEG_INFINITY {
            0
        } else {
            let c = snap(g * nf).floor();
            if c < 0.0 {
                0
            } else {
                c as u64 + 1
            }
        };
        let hi = if f == f64::INFINITY {
            None
        } else {
            let c = snap(f * nf).floor();
            if c < 0.0 {
                return EMPTY;
            }
            Some(c as u64)
        };
        SumWindow { lo, hi }
    }

    pub fn windows(&self) -> Vec<SumWindow> {
        (1..=self.m()).map(|i| self.window(i)).collect()
    }

    /// Decision variable for the sum `k` of `n` samples.
    pub fn decision_for_sum(&self, k: u64) -> usize {
        (1..=self.m()).find(|&i| self.window(i).contains(k)).unwrap_or(0)
    }

    /// Whether any, or every, support point stops.
    pub fn coverage(&self, model: Model) -> Coverage {
        let top = model.max_sum(self.n);
        let mut ws: Vec<SumWindow> = self
            .windows()
            .into_iter()
            .filter(|w| !w.is_empty())
            .map(|w| SumWindow { lo: w.lo, hi: match (w.hi, top) {
                (Some(h), Some(t)) => Some(h.min(t)),
                (None, Some(t)) => Some(t),
                (h, None) => h,
            } })
            .filter(|w| !w.is_empty())
            .collect();
        ws.sort_by_key(|w| w.lo);
        let stops_any = !ws.is_empty();
        // sweep from sum 0
        let mut next = 0u64;
        let mut closed = true;
        let mut reached_top = false;
        for w in &ws {
            if w.lo > next {
                closed = false;
                break;
            }
            match w.hi {
                None => {
                    reached_top = true;
                    break;
                }
                Some(h) => next = next.max(h + 1),
            }
        }
        if closed && !reached_top {
            closed = matches!(top, Some(t) if next > t);
        }
        Coverage { stops_any, closed }
    }

    /// Whether the mean `t` falls in a tie set.
    pub fn is_tie(&self, k: u64) -> bool {
        self.ties.iter().flatten().any(|w| (w.lo..=w.hi).contains(&k))
    }
}

/// Computes thresholds for the given stage sizes. The last stage must close
/// the plan.
pub fn build_thresholds(spec: &PlanSpec, sizes: &[u64]) -> Result<MultiHypPlan> {
    spec.validate()?;
    check_sizes(sizes)?;
    let stages = sizes.iter().map(|&n| spec.stage(n)).collect::<Result<Vec<_>>>()?;
    let last = stages.last().expect("nonempty sizes");
    if !last.coverage(spec.model).closed {
        return Err(Error::Infeasible(format!(
            "plan is not closed at the final stage size {}",
            last.n
        )));
    }
    Ok(MultiHypPlan { spec: spec.clone(), stages })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    /// 1-based stage index at termination.
    pub stage_index: usize,
    pub sample_count: u64,
    /// Index of the accepted hypothesis.
    pub accepted_index: usize,
    pub terminal_estimate: f64,
    pub tie_occurred: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHypPlan {
    pub spec: PlanSpec,
    pub stages: Vec<Stage>,
}

impl MultiHypPlan {
    pub fn model(&self) -> Model {
        self.spec.model
    }

    pub fn m(&self) -> usize {
        self.spec.m()
    }

    pub fn s(&self) -> usize {
        self.stages.len()
    }

    pub fn sizes(&self) -> Vec<u64> {
        self.stages.iter().map(|st| st.n).collect()
    }

    pub fn max_sample_size(&self) -> u64 {
        self.stages.last().map_or(0, |st| st.n)
    }

    /// Decision variable at stage `l` (1-based) for the sample mean `t`.
    pub fn decision_variable(&self, l: usize, t: f64) -> Result<usize> {
        let stage = self
            .stages
            .get(l.wrapping_sub(1))
            .ok_or_else(|| Error::Domain(format!("stage {l} out of range")))?;
        SumStatistic::from_mean(self.model(), stage.n, t)?;
        Ok(stage.decision(t))
    }

    /// Consumes samples stage by stage until a decision is reached.
    pub fn run(&self, samples: impl IntoIterator<Item = u64>) -> Result<TestOutcome> {
        let mut it = samples.into_iter();
        let mut taken = 0u64;
        let mut sum = 0u64;
        for (idx, stage) in self.stages.iter().enumerate() {
            while taken < stage.n {
                let x = it.next().ok_or_else(|| {
                    Error::Input(format!("sample stream exhausted after {taken} samples"))
                })?;
                self.model().check_sample(x)?;
                sum += x;
                taken += 1;
            }
            let d = stage.decision_for_sum(sum);
            if d != 0 {
                return Ok(TestOutcome {
                    stage_index: idx + 1,
                    sample_count: stage.n,
                    accepted_index: d - 1,
                    terminal_estimate: sum as f64 / stage.n as f64,
                    tie_occurred: stage.is_tie(sum),
                });
            }
        }
        Err(Error::Infeasible("plan did not terminate at its last stage".into()))
    }
}

/// Two-hypothesis view of a plan with direct stopping rules.
#[derive(Debug, Clone, PartialEq)]
pub struct OneSidedPlan {
    pub plan: MultiHypPlan,
}

impl OneSidedPlan {
    pub fn new(plan: MultiHypPlan) -> Result<Self> {
        if plan.m() != 2 {
            return domain(format!("a one-sided plan has two hypotheses, got {}", plan.m()));
        }
        Ok(Self { plan })
    }

    pub fn build(spec: &PlanSpec) -> Result<Self> {
        Self::new(spec.build()?)
    }

    pub fn theta0(&self) -> f64 {
        self.plan.spec.zones[0].lower
    }

    pub fn theta1(&self) -> f64 {
        self.plan.spec.zones[0].upper
    }

    /// Nominal risks.
    pub fn alpha(&self) -> f64 {
        self.plan.spec.alphas[0]
    }

    pub fn beta(&self) -> f64 {
        self.plan.spec.betas[0]
    }

    pub fn zeta(&self) -> f64 {
        self.plan.spec.zeta
    }

    /// Stopping rule at the stage of size `n` with sum `k`, evaluated from the
    /// limits directly: `None` to continue, `Some(0)` to accept `H0`,
    /// `Some(1)` to reject it.
    pub fn direct_decision(&self, n: u64, k: u64) -> Result<Option<usize>> {
        let spec = &self.plan.spec;
        let (t0, t1) = (self.theta0(), self.theta1());
        let za = spec.alpha(1);
        let zb = spec.beta(1);
        let lower = crossing_test(spec.family, spec.model, n, k, t0, za)?.lower_crossed;
        let upper = crossing_test(spec.family, spec.model, n, k, t1, zb)?.upper_crossed;
        Ok(match (lower, upper) {
            (false, false) => None,
            (true, false) => Some(1),
            (false, true) => Some(0),
            (true, true) => {
                let accept = match spec.tie {
                    TiePolicy::LikelihoodRatio => {
                        spec.model.ln_likelihood_ratio(n, k, t0, t1) >= (self.alpha() / self.beta()).ln()
                    }
                    TiePolicy::AlwaysAccept => true,
                    TiePolicy::AlwaysReject => false,
                    TiePolicy::SupportMidpoint | TiePolicy::ZoneMidpoint => {
                        let (lo, hi) = self.tie_range(n)?;
                        let c = if spec.tie == TiePolicy::SupportMidpoint {
                            (lo + hi) as f64 / 2.0
                        } else {
                            (0.5 * (t0 + t1) * n as f64).clamp(lo as f64, hi as f64)
                        };
                        k as f64 <= c
                    }
                };
                Some(if accept { 0 } else { 1 })
            }
        })
    }

    fn tie_range(&self, n: u64) -> Result<(u64, u64)> {
        let spec = &self.plan.spec;
        let top = spec.model.max_sum(n).ok_or_else(|| {
            Error::Unsupported("midpoint tie rules need a bounded support".into())
        })?;
        let mut range: Option<(u64, u64)> = None;
        for k in 0..=top {
            let l = crossing_test(spec.family, spec.model, n, k, self.theta0(), spec.alpha(1))?;
            let u = crossing_test(spec.family, spec.model, n, k, self.theta1(), spec.beta(1))?;
            if l.lower_crossed && u.upper_crossed {
                range = Some(range.map_or((k, k), |(lo, _)| (lo, k)));
            }
        }
        range.ok_or_else(|| Error::Domain("no tie at this sample size".into()))
    }

    /// Runs the direct rules on a sample stream.
    pub fn run_direct(&self, samples: impl IntoIterator<Item = u64>) -> Result<TestOutcome> {
        let mut it = samples.into_iter();
        let mut taken = 0u64;
        let mut sum = 0u64;
        for (idx, stage) in self.plan.stages.iter().enumerate() {
            while taken < stage.n {
                let x = it.next().ok_or_else(|| {
                    Error::Input(format!("sample stream exhausted after {taken} samples"))
                })?;
                self.plan.model().check_sample(x)?;
                sum += x;
                taken += 1;
            }
            if let Some(d) = self.direct_decision(stage.n, sum)? {
                return Ok(TestOutcome {
                    stage_index: idx + 1,
                    sample_count: stage.n,
                    accepted_index: d,
                    terminal_estimate: sum as f64 / stage.n as f64,
                    tie_occurred: stage.is_tie(sum),
                });
            }
        }
        Err(Error::Infeasible("plan did not terminate at its last stage".into()))
    }

    pub fn sample_bound(&self) -> Result<u64> {
        let spec = &self.plan.spec;
        sample_bound(spec.model, self.theta0(), self.theta1(), spec.alpha(1), spec.beta(1))
    }
}

/// `max{ln(za) / ln C(mid, theta0), ln(zb) / ln C(mid, theta1)}` with
/// `mid = (theta0 + theta1) / 2`. Fully sequential sample numbers stay
/// strictly below it.
pub fn sample_bound_value(model: Model, theta0: f64, theta1: f64, za: f64, zb: f64) -> Result<f64> {
    check_risk("zeta * alpha", za)?;
    check_risk("zeta * beta", zb)?;
    if !model.in_parameter_space(theta0) || !model.in_parameter_space(theta1) {
        return domain("theta0 and theta1 must lie in the parameter space");
    }
    if !(theta0 < theta1) {
        return domain("sample bound needs theta0 < theta1");
    }
    let mid = 0.5 * (theta0 + theta1);
    let c0 = model.ln_chernoff(mid, theta0);
    let c1 = model.ln_chernoff(mid, theta1);
    if c0 == 0.0 || c1 == 0.0 {
        return domain("Chernoff function equals 1 at the midpoint");
    }
    Ok((za.ln() / c0).max(zb.ln() / c1))
}

/// Largest integer strictly below [`sample_bound_value`].
pub fn sample_bound(model: Model, theta0: f64, theta1: f64, za: f64, zb: f64) -> Result<u64> {
    let x = sample_bound_value(model, theta0, theta1, za, zb)?;
    Ok((x.ceil() - 1.0).max(0.0) as u64)
}

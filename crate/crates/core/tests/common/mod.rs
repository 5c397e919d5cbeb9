//! Reference computations shared by the integration tests. Everything here is
//! written from first principles and only reads plan data (sizes, thresholds,
//! decision grids), never the library's probability code.
#![allow(dead_code)]

use seqlimit::twoprop::TwoPropPlan;
use seqlimit::MultiHypPlan;

/// `ln n!` for `n < len`, by cumulative summation.
pub struct LnFact(Vec<f64>);

impl LnFact {
    pub fn new(len: usize) -> Self {
        let mut v = vec![0.0; len.max(2)];
        for i in 2..v.len() {
            v[i] = v[i - 1] + (i as f64).ln();
        }
        Self(v)
    }

    pub fn get(&self, n: u64) -> f64 {
        self.0[n as usize]
    }

    pub fn ln_choose(&self, n: u64, k: u64) -> f64 {
        self.get(n) - self.get(k) - self.get(n - k)
    }
}

pub fn binom_pmf(n: u64, k: u64, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    if p <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    // exact integer coefficient for small n, logs otherwise
    if n <= 60 {
        let mut c = 1.0f64;
        for j in 0..k.min(n - k) {
            c = c * (n - j) as f64 / (j + 1) as f64;
        }
        c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
    } else {
        let lf = LnFact::new(n as usize + 1);
        (lf.ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
    }
}

pub fn binom_pmfs(n: u64, p: f64) -> Vec<f64> {
    (0..=n).map(|k| binom_pmf(n, k, p)).collect()
}

/// Pmf of a Poisson variable with mean `lambda`, for `k = 0..len`.
pub fn poisson_pmfs(lambda: f64, len: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(len);
    let mut ln_fact = 0.0f64;
    for k in 0..len {
        if k > 0 {
            ln_fact += (k as f64).ln();
        }
        v.push(if lambda == 0.0 {
            if k == 0 { 1.0 } else { 0.0 }
        } else {
            (-lambda + k as f64 * lambda.ln() - ln_fact).exp()
        });
    }
    v
}

/// Decision of a stage at sample mean `t`: `0` continues, `i` accepts `H_{i-1}`.
pub fn stage_decision(plan: &MultiHypPlan, l: usize, k: u64) -> usize {
    let st = &plan.stages[l];
    let t = k as f64 / st.n as f64;
    let m = plan.m();
    for i in 1..=m {
        let g = if i == 1 { f64::NEG_INFINITY } else { st.g[i - 2] };
        let f = if i == m { f64::INFINITY } else { st.f[i - 1] };
        if g < t && t <= f {
            return i;
        }
    }
    0
}

/// Terminal mass keyed by stage, sum and accepted hypothesis.
#[derive(Debug, Clone, Default)]
pub struct Terminals {
    pub entries: Vec<(usize, u64, usize, f64)>,
}

impl Terminals {
    pub fn accept(&self, m: usize) -> Vec<f64> {
        let mut a = vec![0.0; m];
        for &(_, _, i, w) in &self.entries {
            a[i] += w;
        }
        a
    }

    pub fn mass(&self, pred: impl Fn(usize, u64, usize) -> bool) -> f64 {
        self.entries.iter().filter(|e| pred(e.0, e.1, e.2)).map(|e| e.3).sum()
    }
}

/// Every Bernoulli sequence of length `n_s` walked through the plan; the
/// counts of stopping prefixes are then weighted at `theta`.
pub struct BruteForce {
    sizes: Vec<u64>,
    /// `(stage, sum, accepted) -> number of full sequences`.
    counts: std::collections::BTreeMap<(usize, u64, usize), u64>,
}

impl BruteForce {
    pub fn new(plan: &MultiHypPlan) -> Self {
        let sizes: Vec<u64> = plan.stages.iter().map(|s| s.n).collect();
        let ns = *sizes.last().unwrap();
        assert!(ns <= 24, "brute force limited to 2^24 sequences");
        let mut counts = std::collections::BTreeMap::new();
        for mask in 0u64..(1u64 << ns) {
            for (l, &n) in sizes.iter().enumerate() {
                let k = (mask & ((1u64 << n) - 1)).count_ones() as u64;
                let d = stage_decision(plan, l, k);
                if d != 0 {
                    *counts.entry((l, k, d - 1)).or_insert(0) += 1;
                    break;
                }
            }
        }
        Self { sizes, counts }
    }

    pub fn terminals(&self, theta: f64) -> Terminals {
        let ns = *self.sizes.last().unwrap();
        let entries = self
            .counts
            .iter()
            .map(|(&(l, k, i), &c)| {
                let n = self.sizes[l];
                let prefixes = c as f64 / 2f64.powi((ns - n) as i32);
                let w = prefixes * theta.powi(k as i32) * (1.0 - theta).powi((n - k) as i32);
                (l, k, i, w)
            })
            .collect();
        Terminals { entries }
    }
}

/// Path-class enumeration: branches on every increment of every stage
/// without merging equal sums.
pub fn path_enumeration(plan: &MultiHypPlan, theta: f64) -> Terminals {
    fn walk(plan: &MultiHypPlan, theta: f64, l: usize, prev_n: u64, k: u64, w: f64, out: &mut Vec<(usize, u64, usize, f64)>) {
        let n = plan.stages[l].n;
        let pm = binom_pmfs(n - prev_n, theta);
        for (j, &p) in pm.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let kk = k + j as u64;
            let d = stage_decision(plan, l, kk);
            if d != 0 {
                out.push((l, kk, d - 1, w * p));
            } else if l + 1 < plan.stages.len() {
                walk(plan, theta, l + 1, n, kk, w * p, out);
            }
        }
    }
    let mut out = Vec::new();
    walk(plan, theta, 0, 0, 0, 1.0, &mut out);
    Terminals { entries: out }
}

/// Forward recursion on the running sum for Bernoulli or Poisson plans; the
/// Poisson support is cut at `cut` per stage.
pub fn sum_recursion(plan: &MultiHypPlan, theta: f64, poisson: bool) -> Terminals {
    let mut state: Vec<f64> = vec![1.0];
    let mut prev_n = 0u64;
    let mut out = Vec::new();
    for (l, st) in plan.stages.iter().enumerate() {
        let inc = st.n - prev_n;
        let step = if poisson {
            let lam = inc as f64 * theta;
            let len = (lam + 12.0 * lam.sqrt() + 40.0) as usize;
            poisson_pmfs(lam, len)
        } else {
            binom_pmfs(inc, theta)
        };
        let mut next = vec![0.0; state.len() + step.len() - 1];
        for (a, &pa) in state.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (b, &pb) in step.iter().enumerate() {
                next[a + b] += pa * pb;
            }
        }
        for (k, w) in next.iter_mut().enumerate() {
            let d = stage_decision(plan, l, k as u64);
            if d != 0 {
                out.push((l, k as u64, d - 1, *w));
                *w = 0.0;
            }
        }
        state = next;
        prev_n = st.n;
    }
    Terminals { entries: out }
}

/// Probability that a two-proportion plan rejects `H_i` at `(px, py)`, by
/// enumerating every per-stage increment pair.
pub fn two_prop_rejection(plan: &TwoPropPlan, i: usize, px: f64, py: f64) -> f64 {
    let mut state: Vec<Vec<f64>> = vec![vec![1.0]];
    let (mut pnx, mut pny) = (0u64, 0u64);
    let mut reject = 0.0;
    for st in &plan.stages {
        let ax = binom_pmfs(st.nx - pnx, px);
        let ay = binom_pmfs(st.ny - pny, py);
        let mut next = vec![vec![0.0; st.ny as usize + 1]; st.nx as usize + 1];
        for (kx, row) in state.iter().enumerate() {
            for (ky, &w) in row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (jx, &qx) in ax.iter().enumerate() {
                    for (jy, &qy) in ay.iter().enumerate() {
                        next[kx + jx][ky + jy] += w * qx * qy;
                    }
                }
            }
        }
        for (kx, row) in next.iter_mut().enumerate() {
            for (ky, w) in row.iter_mut().enumerate() {
                let code = st.rows[kx].as_bytes()[ky];
                if code != b'.' {
                    let acc = (code as char).to_digit(36).unwrap() as usize;
                    if acc != i {
                        reject += *w;
                    }
                    *w = 0.0;
                }
            }
        }
        state = next;
        pnx = st.nx;
        pny = st.ny;
    }
    reject
}

//! Exact and rectangle-wide bounds on rejection probabilities.
//!
//! Given the stage-`j` sums `K_j = k`, the path of earlier sums is
//! hypergeometric and free of `p`. So every event of the form "earlier sums
//! stayed in p-free sets, and `K_j = k`" has probability
//! `R_j(k) * Pr_p{K_j = k}`, where `R_j` is a conditional weight in `[0, 1]`
//! computed once by a forward recursion with hypergeometric kernels. Bounds
//! over a rectangle then only need the range of a binomial mass in `p`,
//! which is unimodal with its mode at `k / N`.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{domain, Result};

use super::truncation::truncation_sums;
use super::TwoPropPlan;

/// Relative outward rounding applied to both bounds.
const ROUNDING: f64 = 1e-12;

const CONT: u8 = u8::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub px_lo: f64,
    pub px_hi: f64,
    pub py_lo: f64,
    pub py_hi: f64,
}

impl Rect {
    pub fn new(px_lo: f64, px_hi: f64, py_lo: f64, py_hi: f64) -> Result<Self> {
        let ok = |lo: f64, hi: f64| (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi;
        if !ok(px_lo, px_hi) || !ok(py_lo, py_hi) {
            return domain("rectangle must be a nonempty subset of [0, 1]^2");
        }
        Ok(Self { px_lo, px_hi, py_lo, py_hi })
    }

    pub fn unit() -> Self {
        Self { px_lo: 0.0, px_hi: 1.0, py_lo: 0.0, py_hi: 1.0 }
    }

    pub fn point(px: f64, py: f64) -> Result<Self> {
        Self::new(px, px, py, py)
    }

    pub fn width(&self) -> f64 {
        (self.px_hi - self.px_lo).max(self.py_hi - self.py_lo)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.px_lo + self.px_hi), 0.5 * (self.py_lo + self.py_hi))
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        (self.px_lo..=self.px_hi).contains(&px) && (self.py_lo..=self.py_hi).contains(&py)
    }

    /// Halves along the longer side.
    pub fn split(&self) -> (Self, Self) {
        if self.px_hi - self.px_lo >= self.py_hi - self.py_lo {
            let mid = 0.5 * (self.px_lo + self.px_hi);
            (Self { px_hi: mid, ..*self }, Self { px_lo: mid, ..*self })
        } else {
            let mid = 0.5 * (self.py_lo + self.py_hi);
            (Self { py_hi: mid, ..*self }, Self { py_lo: mid, ..*self })
        }
    }

    /// Some point has `p_x - p_y` in `[lo, hi]`.
    pub fn meets_band(&self, lo: f64, hi: f64) -> bool {
        self.px_hi - self.py_lo >= lo && self.px_lo - self.py_hi <= hi
    }

    /// Every point has `p_x - p_y` in `[lo, hi]`.
    pub fn inside_band(&self, lo: f64, hi: f64) -> bool {
        self.px_lo - self.py_hi >= lo && self.px_hi - self.py_lo <= hi
    }
}

fn binom_pmf(n: u64, k: u64, p: f64) -> f64 {
    if p <= 0.0 {
        return f64::from(k == 0);
    }
    if p >= 1.0 {
        return f64::from(k == n);
    }
    (ln_binomial(n, k) + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p()).exp()
}

fn pmf_vec(n: u64, p: f64) -> Vec<f64> {
    (0..=n).map(|k| binom_pmf(n, k, p)).collect()
}

/// Largest and smallest `Pr_p{sum = k}` for `p` in `[lo, hi]`.
fn pmf_range(n: u64, k: u64, lo: f64, hi: f64) -> (f64, f64) {
    let mode = (k as f64 / n as f64).clamp(lo, hi);
    let (a, b) = (binom_pmf(n, k, lo), binom_pmf(n, k, hi));
    (binom_pmf(n, k, mode).max(a).max(b), a.min(b))
}

/// `Pr{K_prev = k | K_next = k'}` as a dense `(n + 1) x (prev + 1)` matrix.
fn kernel(prev: u64, n: u64) -> Vec<f64> {
    let w = (prev + 1) as usize;
    let mut out = vec![0.0; (n as usize + 1) * w];
    let step = n - prev;
    for kn in 0..=n {
        let ln_total = ln_binomial(n, kn);
        let lo = kn.saturating_sub(step);
        for kp in lo..=kn.min(prev) {
            out[kn as usize * w + kp as usize] =
                (ln_binomial(prev, kp) + ln_binomial(step, kn - kp) - ln_total).exp();
        }
    }
    out
}

type Window = (u64, u64);

/// Precomputed kernels and region codes for one plan.
pub struct Bounder<'a> {
    plan: &'a TwoPropPlan,
    codes: Vec<Vec<u8>>,
    kx: Vec<Vec<f64>>,
    ky: Vec<Vec<f64>>,
    /// Weights without truncation.
    full: Vec<Vec<f64>>,
}

/// Exact operating characteristic at one `(p_x, p_y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPropOcPoint {
    pub px: f64,
    pub py: f64,
    pub accept: Vec<f64>,
    pub stage_probs: Vec<f64>,
    pub asn_x: f64,
    pub asn_y: f64,
}

impl<'a> Bounder<'a> {
    pub fn new(plan: &'a TwoPropPlan) -> Result<Self> {
        plan.check()?;
        let codes = plan
            .stages
            .iter()
            .map(|st| {
                st.rows
                    .iter()
                    .flat_map(|r| r.chars().map(|c| c.to_digit(36).map_or(CONT, |d| d as u8)))
                    .collect()
            })
            .collect();
        let mut kx = vec![Vec::new()];
        let mut ky = vec![Vec::new()];
        for w in plan.stages.windows(2) {
            kx.push(kernel(w[0].nx, w[1].nx));
            ky.push(kernel(w[0].ny, w[1].ny));
        }
        let mut b = Self { plan, codes, kx, ky, full: Vec::new() };
        let all: Vec<(Window, Window)> = plan.stages.iter().map(|st| ((0, st.nx), (0, st.ny))).collect();
        b.full = b.weights(&all);
        Ok(b)
    }

    pub fn plan(&self) -> &TwoPropPlan {
        self.plan
    }

    /// `R_j(k)` for every stage, with sums restricted to the given windows
    /// at stages `<= j` and to continuation before `j`.
    fn weights(&self, windows: &[(Window, Window)]) -> Vec<Vec<f64>> {
        let stages = &self.plan.stages;
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(stages.len());
        for (j, st) in stages.iter().enumerate() {
            let (wx, wy) = windows[j];
            let wny = (st.ny + 1) as usize;
            let mut r = vec![0.0; (st.nx as usize + 1) * wny];
            if j == 0 {
                for kx in wx.0..=wx.1.min(st.nx) {
                    for ky in wy.0..=wy.1.min(st.ny) {
                        r[kx as usize * wny + ky as usize] = 1.0;
                    }
                }
            } else {
                let prev = &stages[j - 1];
                let pny = (prev.ny + 1) as usize;
                let pnx = (prev.nx + 1) as usize;
                let mut cont = out[j - 1].clone();
                for (v, &c) in cont.iter_mut().zip(&self.codes[j - 1]) {
                    if c != CONT {
                        *v = 0.0;
                    }
                }
                let live_rows: Vec<usize> =
                    (0..pnx).filter(|&a| cont[a * pny..(a + 1) * pny].iter().any(|&v| v > 0.0)).collect();
                if live_rows.is_empty() || wx.0 > wx.1 || wy.0 > wy.1 {
                    out.push(r);
                    continue;
                }
                let (kxm, kym) = (&self.kx[j], &self.ky[j]);
                let mut tmp = vec![0.0; pny];
                for kx in wx.0..=wx.1.min(st.nx) {
                    tmp.iter_mut().for_each(|v| *v = 0.0);
                    let krow = &kxm[kx as usize * pnx..(kx as usize + 1) * pnx];
                    for &a in &live_rows {
                        let h = krow[a];
                        if h > 0.0 {
                            for (t, &c) in tmp.iter_mut().zip(&cont[a * pny..(a + 1) * pny]) {
                                *t += h * c;
                            }
                        }
                    }
                    for ky in wy.0..=wy.1.min(st.ny) {
                        let krow = &kym[ky as usize * pny..(ky as usize + 1) * pny];
                        r[kx as usize * wny + ky as usize] =
                            krow.iter().zip(&tmp).map(|(h, t)| h * t).sum();
                    }
                }
            }
            out.push(r);
        }
        out
    }

    /// Exact OC, stage probabilities and per-arm ASN at a point.
    pub fn oc_point(&self, px: f64, py: f64) -> Result<TwoPropOcPoint> {
        Rect::point(px, py)?;
        let m = self.plan.m();
        let mut accept = vec![0.0; m];
        let mut stage_probs = Vec::with_capacity(self.plan.s());
        let (mut asn_x, mut asn_y) = (0.0, 0.0);
        for (j, st) in self.plan.stages.iter().enumerate() {
            let (fx, fy) = (pmf_vec(st.nx, px), pmf_vec(st.ny, py));
            let wny = (st.ny + 1) as usize;
            let mut stop = 0.0;
            for (idx, (&r, &c)) in self.full[j].iter().zip(&self.codes[j]).enumerate() {
                if c != CONT && r > 0.0 {
                    let mass = r * fx[idx / wny] * fy[idx % wny];
                    accept[c as usize] += mass;
                    stop += mass;
                }
            }
            asn_x += stop * st.nx as f64;
            asn_y += stop * st.ny as f64;
            stage_probs.push(stop);
        }
        Ok(TwoPropOcPoint { px, py, accept, stage_probs, asn_x, asn_y })
    }

    /// Exact `Pr{reject H_i}` at a point.
    pub fn exact_rejection(&self, i: usize, px: f64, py: f64) -> Result<f64> {
        let oc = self.oc_point(px, py)?;
        if i >= oc.accept.len() {
            return domain(format!("hypothesis {i} out of range"));
        }
        Ok(oc.accept.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, v)| v).sum())
    }

    /// `(lower, upper)` on `Pr{reject H_i}` over the rectangle.
    pub fn bounds(&self, i: usize, rect: &Rect, eta: f64) -> Result<(f64, f64)> {
        if i >= self.plan.m() {
            return domain(format!("hypothesis {i} out of range"));
        }
        if !(eta > 0.0 && eta < 1.0) {
            return domain("eta must lie in (0, 1)");
        }
        let stages = &self.plan.stages;
        let outer: Vec<(Window, Window)> = stages
            .iter()
            .map(|st| {
                (
                    (truncation_sums(rect.px_lo, st.nx, eta).0, truncation_sums(rect.px_hi, st.nx, eta).1),
                    (truncation_sums(rect.py_lo, st.ny, eta).0, truncation_sums(rect.py_hi, st.ny, eta).1),
                )
            })
            .collect();
        let inner: Vec<(Window, Window)> = stages
            .iter()
            .map(|st| {
                (
                    (truncation_sums(rect.px_hi, st.nx, eta).0, truncation_sums(rect.px_lo, st.nx, eta).1),
                    (truncation_sums(rect.py_hi, st.ny, eta).0, truncation_sums(rect.py_lo, st.ny, eta).1),
                )
            })
            .collect();
        let (wu, wl) = (self.weights(&outer), self.weights(&inner));
        let (mut upper, mut lower) = (0.0, 0.0);
        for (j, st) in stages.iter().enumerate() {
            let rx: Vec<(f64, f64)> = (0..=st.nx).map(|k| pmf_range(st.nx, k, rect.px_lo, rect.px_hi)).collect();
            let ry: Vec<(f64, f64)> = (0..=st.ny).map(|k| pmf_range(st.ny, k, rect.py_lo, rect.py_hi)).collect();
            let wny = (st.ny + 1) as usize;
            for (idx, &c) in self.codes[j].iter().enumerate() {
                if c == CONT || c as usize == i {
                    continue;
                }
                let (a, b) = (idx / wny, idx % wny);
                upper += wu[j][idx] * rx[a].0 * ry[b].0;
                lower += wl[j][idx] * rx[a].1 * ry[b].1;
            }
        }
        let slack = 2.0 * stages.len() as f64 * eta;
        Ok((lower * (1.0 - ROUNDING), ((upper + slack) * (1.0 + ROUNDING)).min(1.0)))
    }
}

/// `(lower, upper)` on `Pr{reject H_i}` for every `p` in the rectangle.
pub fn rejection_prob_bounds(plan: &TwoPropPlan, i: usize, rect: &Rect, eta: f64) -> Result<(f64, f64)> {
    Bounder::new(plan)?.bounds(i, rect, eta)
}

//! Small numerical helpers shared by the tail, limit and tuning code.

use statrs::distribution::{ContinuousCDF, Normal};

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Bisection on a predicate that is `true` on a prefix `[lo, x*)` and `false`
/// after it. Requires `pred(lo) == true` and `pred(hi) == false`; returns the
/// final bracket `(lo, hi)` with `hi - lo <= tol`.
pub fn bisect_boundary(
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    mut pred: impl FnMut(f64) -> bool,
) -> (f64, f64) {
    // 200 halvings exhaust the f64 mantissa for any bracket we use.
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

/// `ln(exp(a) + exp(b))` that tolerates `-inf` arguments.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `a * ln(b / a)` with the conventions `0 ln(.) = 0` and `a ln 0 = -inf`.
pub fn xlog_ratio(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else if b == 0.0 {
        f64::NEG_INFINITY
    } else {
        a * (b / a).ln()
    }
}

/// Upper standard-normal quantile `Z` with `Phi(Z) = 1 - delta / 2`.
pub fn two_sided_critical(delta: f64) -> f64 {
    let normal = Normal::standard();
    normal.inverse_cdf(1.0 - 0.5 * delta)
}

/// Snap a scaled threshold to the nearest integer when it is within rounding
/// noise of one, so that grid thresholds stored as reals convert back exactly.
pub fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 * r.abs().max(1.0) {
        r
    } else {
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::new();
        s.add(1.0);
        for _ in 0..10 {
            s.add(1e-17);
        }
        s.add(-1.0);
        assert!((s.value() - 1e-16).abs() < 1e-30);
    }

    #[test]
    fn bisect_finds_sqrt_two() {
        let (lo, hi) = bisect_boundary(0.0, 2.0, 1e-13, |x| x * x <= 2.0);
        assert!(lo * lo <= 2.0 && hi * hi > 2.0);
        assert!((lo - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn critical_value_matches_table() {
        assert!((two_sided_critical(0.05) - 1.959_963_984_540_054).abs() < 1e-9);
    }

    #[test]
    fn log_add_exp_handles_infinities() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 1.5), 1.5);
        assert!((log_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }
}

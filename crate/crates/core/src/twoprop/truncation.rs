//! Truncation window for a binomial proportion: `p_hat` falls outside
//! `[T_lb, T_ub]` with probability at most `eta`.

use crate::numeric::snap;

fn shift(theta: f64, n: u64, eta: f64, sign: f64) -> f64 {
    let nf = n as f64;
    let l = (2.0 / eta).ln();
    let root = (1.0 + 18.0 * nf * theta * (1.0 - theta) / l).sqrt();
    (1.0 - 2.0 * theta + sign * root) / (2.0 / (3.0 * nf) + 3.0 / l)
}

/// `(T_lb, T_ub)`, both multiples of `1 / n` clamped to `[0, 1]`.
pub fn truncation_bounds(theta: f64, n: u64, eta: f64) -> (f64, f64) {
    let nf = n as f64;
    let lo = snap(nf * theta + shift(theta, n, eta, -1.0)).ceil() / nf;
    let hi = snap(nf * theta + shift(theta, n, eta, 1.0)).floor() / nf;
    (lo.max(0.0), hi.min(1.0))
}

/// The same window as integer sums `[lo, hi]`.
pub fn truncation_sums(theta: f64, n: u64, eta: f64) -> (u64, u64) {
    let nf = n as f64;
    let lo = snap(nf * theta + shift(theta, n, eta, -1.0)).ceil().max(0.0);
    let hi = snap(nf * theta + shift(theta, n, eta, 1.0)).floor().min(nf);
    (lo as u64, hi.max(0.0) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_value() {
        assert_eq!(truncation_bounds(0.5, 100, 0.01), (0.34, 0.66));
        assert_eq!(truncation_sums(0.5, 100, 0.01), (34, 66));
    }

    #[test]
    fn reference_window_loses_at_most_eta() {
        // oracle: binomial tails summed term by term in log space
        let ln_choose = |n: u64, k: u64| -> f64 {
            (1..=k).map(|j| ((n - k + j) as f64).ln() - (j as f64).ln()).sum()
        };
        let pmf = |k: u64| (ln_choose(100, k) + 100.0 * 0.5f64.ln()).exp();
        let out: f64 = (0..34).chain(67..=100).map(pmf).sum();
        assert!(out <= 0.01);
    }

    #[test]
    fn windows_move_monotonically_with_theta() {
        for n in [1u64, 7, 30, 200] {
            for eta in [0.3, 1e-2, 1e-9] {
                let mut prev = (0, 0);
                for i in 0..=2000 {
                    let w = truncation_sums(i as f64 / 2000.0, n, eta);
                    assert!(w.0 >= prev.0 && w.1 >= prev.1);
                    prev = w;
                }
            }
        }
    }

    #[test]
    fn edges() {
        assert_eq!(truncation_bounds(0.0, 50, 0.1).0, 0.0);
        assert_eq!(truncation_bounds(1.0, 50, 0.1).1, 1.0);
    }
}

//! Hybrid score limits for the difference of two proportions.

use crate::error::{check_risk, domain, Result};
use crate::numeric::two_sided_critical;

/// Score interval roots `(l, u)` of `|p_hat - p| = z sqrt(p (1 - p) / n)`.
pub fn score_roots(p_hat: f64, n: u64, crit: f64) -> (f64, f64) {
    let nf = n as f64;
    let c = crit * crit;
    let disc = (c * c + 4.0 * c * nf * p_hat * (1.0 - p_hat)).max(0.0).sqrt();
    let base = c + 2.0 * nf * p_hat;
    let den = 2.0 * (c + nf);
    (((base - disc) / den).clamp(0.0, 1.0), ((base + disc) / den).clamp(0.0, 1.0))
}

pub(crate) fn lower_from_roots(d: f64, lx: f64, uy: f64, nx: u64, ny: u64, crit: f64) -> f64 {
    (d - crit * (lx * (1.0 - lx) / nx as f64 + uy * (1.0 - uy) / ny as f64).sqrt()).min(d)
}

pub(crate) fn upper_from_roots(d: f64, ux: f64, ly: f64, nx: u64, ny: u64, crit: f64) -> f64 {
    (d + crit * (ux * (1.0 - ux) / nx as f64 + ly * (1.0 - ly) / ny as f64).sqrt()).max(d)
}

fn limits_with_crit(px: f64, py: f64, nx: u64, ny: u64, crit: f64) -> (f64, f64) {
    let (lx, ux) = score_roots(px, nx, crit);
    let (ly, uy) = score_roots(py, ny, crit);
    let d = px - py;
    (lower_from_roots(d, lx, uy, nx, ny, crit), upper_from_roots(d, ux, ly, nx, ny, crit))
}

/// Lower and upper limits for `p_x - p_y` at level `delta`, with the
/// critical value `Z` solving `Phi(Z) = 1 - delta / 2`.
pub fn newcombe_limits(px: f64, py: f64, nx: u64, ny: u64, delta: f64) -> Result<(f64, f64)> {
    check_risk("delta", delta)?;
    if nx == 0 || ny == 0 {
        return domain("sample sizes must be positive");
    }
    if !(0.0..=1.0).contains(&px) || !(0.0..=1.0).contains(&py) {
        return domain("proportions must lie in [0, 1]");
    }
    Ok(limits_with_crit(px, py, nx, ny, two_sided_critical(delta)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_when_estimates_agree() {
        let (l, u) = newcombe_limits(0.3, 0.3, 20, 20, 0.05).unwrap();
        assert!((l + u).abs() < 1e-15);
    }

    #[test]
    fn extreme_estimates() {
        // oracle: the quadratic roots evaluated by hand
        let z = two_sided_critical(0.05);
        let c = z * z;
        let n = 10.0;
        let disc = c;
        let ux = (c + 2.0 * n + disc) / (2.0 * (c + n));
        let lx = (c + 2.0 * n - disc) / (2.0 * (c + n));
        let ly = 0.0;
        let uy = (c + disc) / (2.0 * (c + n));
        assert!((ux - 1.0).abs() < 1e-15 && ly == 0.0);
        let (l, u) = newcombe_limits(1.0, 0.0, 10, 10, 0.05).unwrap();
        let want_l = 1.0 - z * (lx * (1.0 - lx) / n + uy * (1.0 - uy) / n).sqrt();
        assert!((l - want_l).abs() < 1e-14);
        assert!((u - 1.0).abs() < 1e-15);
        assert!(l > 0.6 && l < 0.8);
    }

    #[test]
    fn collapse_as_delta_tends_to_one() {
        let (l, u) = newcombe_limits(0.7, 0.2, 12, 9, 1.0 - 1e-12).unwrap();
        assert!((l - 0.5).abs() < 1e-9 && (u - 0.5).abs() < 1e-9);
    }

    #[test]
    fn roots_solve_the_quadratic() {
        let z = 1.7;
        let (l, u) = score_roots(0.35, 40, z);
        for p in [l, u] {
            assert!(((0.35f64 - p).abs() - z * (p * (1.0 - p) / 40.0).sqrt()).abs() < 1e-13);
        }
    }
}

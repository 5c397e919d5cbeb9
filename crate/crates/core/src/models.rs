//! Parametric families whose sample mean is a unimodal-likelihood estimator of
//! the mean parameter: exact sum probabilities, tails of the sample mean and
//! the Chernoff function `C(z, theta) = inf_r e^{-rz} E[e^{rX}]`.
//!
//! Everything is expressed through the sufficient statistic `K = X_1 + ... +
//! X_n`; the sample mean is `K / n`.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::{ln_binomial, ln_factorial};

use crate::error::{domain, Error, Result};
use crate::numeric::{snap, xlog_ratio, CompensatedSum};

/// Terms smaller than this fraction of the running total end a monotone tail sum.
const TAIL_REL_EPS: f64 = 1e-18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Bernoulli,
    Poisson,
}

/// Sample count together with the sum of the samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SumStatistic {
    pub n: u64,
    pub k: u64,
}

impl SumStatistic {
    pub fn new(model: Model, n: u64, k: u64) -> Result<Self> {
        if n == 0 {
            return domain("sample count must be positive");
        }
        if model == Model::Bernoulli && k > n {
            return domain(format!("Bernoulli sum {k} exceeds sample count {n}"));
        }
        Ok(Self { n, k })
    }

    /// The statistic whose sample mean is `z`; `z * n` must be an integer.
    pub fn from_mean(model: Model, n: u64, z: f64) -> Result<Self> {
        let scaled = snap(z * n as f64);
        if !(scaled >= 0.0) || scaled.fract() != 0.0 {
            return domain(format!("{z} is not in the support of the mean of {n} samples"));
        }
        Self::new(model, n, scaled as u64)
    }

    pub fn mean(&self) -> f64 {
        self.k as f64 / self.n as f64
    }
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Bernoulli => "bernoulli",
            Model::Poisson => "poisson",
        }
    }

    /// Open parameter space `(lo, hi)`.
    pub fn parameter_space(self) -> (f64, f64) {
        match self {
            Model::Bernoulli => (0.0, 1.0),
            Model::Poisson => (0.0, f64::INFINITY),
        }
    }

    pub fn in_parameter_space(self, theta: f64) -> bool {
        let (lo, hi) = self.parameter_space();
        theta > lo && theta < hi
    }

    /// Accepts the closure of the parameter space; the degenerate boundary
    /// laws are needed by the limit solvers.
    pub fn check_theta(self, theta: f64) -> Result<()> {
        let ok = match self {
            Model::Bernoulli => (0.0..=1.0).contains(&theta),
            Model::Poisson => theta >= 0.0 && theta.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            domain(format!("theta = {theta} outside the {} parameter space", self.name()))
        }
    }

    /// Largest attainable sum of `n` samples, `None` when unbounded.
    pub fn max_sum(self, n: u64) -> Option<u64> {
        match self {
            Model::Bernoulli => Some(n),
            Model::Poisson => None,
        }
    }

    pub fn check_sample(self, x: u64) -> Result<()> {
        if self == Model::Bernoulli && x > 1 {
            return Err(Error::Input(format!("Bernoulli sample {x} is not 0 or 1")));
        }
        Ok(())
    }

    /// Log-probability that the sum of `n` samples equals `k`.
    pub fn ln_pmf_sum(self, n: u64, k: u64, theta: f64) -> f64 {
        match self {
            Model::Bernoulli => {
                if k > n {
                    return f64::NEG_INFINITY;
                }
                let kf = k as f64;
                let rest = (n - k) as f64;
                let a = if k == 0 { 0.0 } else { kf * theta.ln() };
                let b = if k == n { 0.0 } else { rest * (1.0 - theta).ln() };
                ln_binomial(n, k) + a + b
            }
            Model::Poisson => {
                let lambda = n as f64 * theta;
                if lambda == 0.0 {
                    return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
                }
                -lambda + k as f64 * lambda.ln() - ln_factorial(k)
            }
        }
    }

    pub fn pmf_sum(self, n: u64, k: u64, theta: f64) -> Result<f64> {
        self.check_theta(theta)?;
        SumStatistic::new(self, n, k)?;
        Ok(self.ln_pmf_sum(n, k, theta).exp())
    }

    /// `Pr{K <= k}` for the sum of `n` samples.
    pub fn cdf_sum(self, n: u64, k: u64, theta: f64) -> Result<f64> {
        self.check_theta(theta)?;
        if n == 0 {
            return domain("sample count must be positive");
        }
        Ok(self.cdf_unchecked(n, k, theta))
    }

    /// `Pr{K >= k}` for the sum of `n` samples.
    pub fn sf_sum(self, n: u64, k: u64, theta: f64) -> Result<f64> {
        self.check_theta(theta)?;
        if n == 0 {
            return domain("sample count must be positive");
        }
        Ok(self.sf_unchecked(n, k, theta))
    }

    /// `F(z, theta) = Pr{ mean of n samples <= z }`.
    pub fn tail_lower(self, n: u64, z: f64, theta: f64) -> Result<f64> {
        self.check_theta(theta)?;
        if n == 0 {
            return domain("sample count must be positive");
        }
        let x = snap(z * n as f64);
        if x < 0.0 {
            return Ok(0.0);
        }
        Ok(self.cdf_unchecked(n, x.floor() as u64, theta))
    }

    /// `G(z, theta) = Pr{ mean of n samples >= z }`.
    pub fn tail_upper(self, n: u64, z: f64, theta: f64) -> Result<f64> {
        self.check_theta(theta)?;
        if n == 0 {
            return domain("sample count must be positive");
        }
        let x = snap(z * n as f64);
        if x <= 0.0 {
            return Ok(1.0);
        }
        Ok(self.sf_unchecked(n, x.ceil() as u64, theta))
    }

    pub(crate) fn cdf_unchecked(self, n: u64, k: u64, theta: f64) -> f64 {
        if let Some(max) = self.max_sum(n) {
            if k >= max {
                return 1.0;
            }
        }
        let mean = n as f64 * theta;
        if mean == 0.0 {
            return 1.0;
        }
        if self == Model::Bernoulli && theta >= 1.0 {
            return 0.0;
        }
        if (k as f64) < mean {
            self.lower_direct(n, k, theta).min(1.0)
        } else {
            (1.0 - self.upper_direct(n, k + 1, theta)).clamp(0.0, 1.0)
        }
    }

    pub(crate) fn sf_unchecked(self, n: u64, k: u64, theta: f64) -> f64 {
        if k == 0 {
            return 1.0;
        }
        if let Some(max) = self.max_sum(n) {
            if k > max {
                return 0.0;
            }
        }
        let mean = n as f64 * theta;
        if mean == 0.0 {
            return 0.0;
        }
        if self == Model::Bernoulli && theta >= 1.0 {
            return 1.0;
        }
        if (k as f64) > mean {
            self.upper_direct(n, k, theta).min(1.0)
        } else {
            (1.0 - self.lower_direct(n, k - 1, theta)).clamp(0.0, 1.0)
        }
    }

    /// Sum of masses `0..=k`, assuming they increase up to `k`.
    fn lower_direct(self, n: u64, k: u64, theta: f64) -> f64 {
        let mut term = self.ln_pmf_sum(n, k, theta).exp();
        let mut acc = CompensatedSum::new();
        acc.add(term);
        let mut j = k;
        while j > 0 {
            let ratio = match self {
                Model::Bernoulli => j as f64 / (n - j + 1) as f64 * (1.0 - theta) / theta,
                Model::Poisson => j as f64 / (n as f64 * theta),
            };
            term *= ratio;
            acc.add(term);
            if term < TAIL_REL_EPS * acc.value() {
                break;
            }
            j -= 1;
        }
        acc.value()
    }

    /// Sum of masses from `k` upwards, assuming they decrease after `k`.
    fn upper_direct(self, n: u64, k: u64, theta: f64) -> f64 {
        if let Some(max) = self.max_sum(n) {
            if k > max {
                return 0.0;
            }
        }
        let mut term = self.ln_pmf_sum(n, k, theta).exp();
        let mut acc = CompensatedSum::new();
        acc.add(term);
        let mut j = k;
        loop {
            let ratio = match self {
                Model::Bernoulli => {
                    if j >= n {
                        break;
                    }
                    (n - j) as f64 / (j + 1) as f64 * theta / (1.0 - theta)
                }
                Model::Poisson => n as f64 * theta / (j + 1) as f64,
            };
            term *= ratio;
            acc.add(term);
            if term < TAIL_REL_EPS * acc.value() || term == 0.0 {
                break;
            }
            j += 1;
        }
        acc.value()
    }

    fn check_hull(self, z: f64) -> Result<()> {
        let ok = match self {
            Model::Bernoulli => (0.0..=1.0).contains(&z),
            Model::Poisson => z >= 0.0 && z.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            domain(format!("z = {z} outside the convex hull of the {} support", self.name()))
        }
    }

    /// `ln C(z, theta)`, no argument checks; `-inf` where `C` vanishes.
    pub fn ln_chernoff(self, z: f64, theta: f64) -> f64 {
        match self {
            Model::Bernoulli => xlog_ratio(z, theta) + xlog_ratio(1.0 - z, 1.0 - theta),
            Model::Poisson => z - theta + xlog_ratio(z, theta),
        }
        .min(0.0)
    }

    pub fn chernoff_value(self, z: f64, theta: f64) -> Result<f64> {
        self.check_hull(z)?;
        self.check_theta(theta)?;
        Ok(self.ln_chernoff(z, theta).exp())
    }

    /// `ln f(x; theta_a) - ln f(x; theta_b)` for `n` samples summing to `k`.
    pub fn ln_likelihood_ratio(self, n: u64, k: u64, theta_a: f64, theta_b: f64) -> f64 {
        let kf = k as f64;
        let nf = n as f64;
        match self {
            Model::Bernoulli => {
                let a = if k == 0 { 0.0 } else { kf * (theta_a / theta_b).ln() };
                let b = if k == n { 0.0 } else { (nf - kf) * ((1.0 - theta_a) / (1.0 - theta_b)).ln() };
                a + b
            }
            Model::Poisson => {
                let a = if k == 0 { 0.0 } else { kf * (theta_a / theta_b).ln() };
                a - nf * (theta_a - theta_b)
            }
        }
    }
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bernoulli" | "binomial" => Ok(Model::Bernoulli),
            "poisson" => Ok(Model::Poisson),
            other => Err(Error::Input(format!("unknown model '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u64) -> f64 {
        (1..=n).map(|i| i as f64).product()
    }

    fn binom_direct(n: u64, k: u64, p: f64) -> f64 {
        factorial(n) / (factorial(k) * factorial(n - k)) * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
    }

    #[test]
    fn pmf_examples() {
        let m = Model::Bernoulli;
        assert!((m.pmf_sum(2, 1, 0.5).unwrap() - 0.5).abs() < 1e-15);
        let expect = binom_direct(10, 3, 0.3);
        assert!((m.pmf_sum(10, 3, 0.3).unwrap() - expect).abs() < 1e-14);
        let p0 = Model::Poisson.pmf_sum(1, 0, 1.0).unwrap();
        assert!((p0 - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn pmf_rejects_bad_parameters() {
        assert!(Model::Bernoulli.pmf_sum(3, 1, 1.2).is_err());
        assert!(Model::Poisson.pmf_sum(3, 1, -0.5).is_err());
        assert!(Model::Bernoulli.pmf_sum(3, 4, 0.5).is_err());
        assert!(Model::Bernoulli.pmf_sum(0, 0, 0.5).is_err());
    }

    #[test]
    fn tail_examples() {
        let m = Model::Bernoulli;
        assert!((m.tail_lower(1, 0.0, 0.5).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(m.tail_upper(1, 0.0, 0.5).unwrap(), 1.0);

        let expect: f64 = (0..=2).map(|k| binom_direct(5, k, 0.4)).sum();
        assert!((m.tail_lower(5, 0.4, 0.4).unwrap() - expect).abs() < 1e-14);

        // Pr{Pois(6) <= 3} from the partial exponential series.
        let lam: f64 = 6.0;
        let mut term = (-lam).exp();
        let mut series = term;
        for j in 1..=3 {
            term *= lam / j as f64;
            series += term;
        }
        let f = Model::Poisson.tail_lower(3, 1.0, 2.0).unwrap();
        assert!((f - series).abs() < 1e-14);
    }

    #[test]
    fn tails_overlap_at_atoms() {
        for &(n, k, p) in &[(20u64, 7u64, 0.3), (50, 25, 0.5), (9, 0, 0.2), (9, 9, 0.8)] {
            let m = Model::Bernoulli;
            let f = m.cdf_sum(n, k, p).unwrap();
            let g = m.sf_sum(n, k, p).unwrap();
            let atom = m.pmf_sum(n, k, p).unwrap();
            assert!((f + g - 1.0 - atom).abs() < 1e-13);
        }
        for &(n, k, t) in &[(4u64, 3u64, 1.1), (10, 40, 3.0), (2, 0, 0.7)] {
            let m = Model::Poisson;
            let f = m.cdf_sum(n, k, t).unwrap();
            let g = m.sf_sum(n, k, t).unwrap();
            let atom = m.pmf_sum(n, k, t).unwrap();
            assert!((f + g - 1.0 - atom).abs() < 1e-13);
        }
    }

    #[test]
    fn chernoff_closed_forms() {
        let m = Model::Bernoulli;
        assert!((m.chernoff_value(0.3, 0.3).unwrap() - 1.0).abs() < 1e-15);
        assert!((m.chernoff_value(0.0, 0.3).unwrap() - 0.7).abs() < 1e-15);
        assert!((m.chernoff_value(1.0, 0.3).unwrap() - 0.3).abs() < 1e-15);
        let p = Model::Poisson.chernoff_value(2.0, 1.0).unwrap();
        assert!((p - std::f64::consts::E / 4.0).abs() < 1e-14);
        assert!((Model::Poisson.chernoff_value(0.0, 1.5).unwrap() - (-1.5f64).exp()).abs() < 1e-15);
        assert!(m.chernoff_value(1.5, 0.3).is_err());
    }

    #[test]
    fn chernoff_matches_grid_minimisation() {
        // oracle: scan e^{-rz} E[e^{rX}] over a fine r grid
        let scan = |f: &dyn Fn(f64) -> f64| {
            (-4000..=4000)
                .map(|i| f(i as f64 * 0.0025))
                .fold(f64::INFINITY, f64::min)
        };
        let (z, t) = (0.5, 0.25);
        let oracle = scan(&|r: f64| (-r * z).exp() * (1.0 - t + t * r.exp()));
        let got = Model::Bernoulli.chernoff_value(z, t).unwrap();
        assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
        assert!((got - 0.8660).abs() < 1e-4);

        let (z, t) = (2.0, 1.0);
        let oracle = scan(&|r: f64| (-r * z).exp() * (t * (r.exp() - 1.0)).exp());
        let got = Model::Poisson.chernoff_value(z, t).unwrap();
        assert!((got - oracle).abs() < 1e-6);
    }

    #[test]
    fn sample_mean_is_unimodal_likelihood_estimator() {
        for n in [1u64, 5, 17] {
            for k in 0..=n {
                let z = k as f64 / n as f64;
                let thetas: Vec<f64> = (1..200).map(|i| i as f64 / 200.0).collect();
                for w in thetas.windows(2) {
                    let (a, b) = (w[0], w[1]);
                    let la = Model::Bernoulli.ln_pmf_sum(n, k, a);
                    let lb = Model::Bernoulli.ln_pmf_sum(n, k, b);
                    if b <= z {
                        assert!(lb >= la - 1e-12);
                    }
                    if a >= z {
                        assert!(lb <= la + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn likelihood_ratio_matches_pmfs() {
        let m = Model::Bernoulli;
        let lr = m.ln_likelihood_ratio(12, 5, 0.4, 0.6);
        let direct = m.ln_pmf_sum(12, 5, 0.4) - m.ln_pmf_sum(12, 5, 0.6);
        assert!((lr - direct).abs() < 1e-12);
        let m = Model::Poisson;
        let lr = m.ln_likelihood_ratio(3, 7, 1.0, 2.5);
        let direct = m.ln_pmf_sum(3, 7, 1.0) - m.ln_pmf_sum(3, 7, 2.5);
        assert!((lr - direct).abs() < 1e-12);
    }

    #[test]
    fn from_mean_requires_grid_point() {
        assert_eq!(SumStatistic::from_mean(Model::Bernoulli, 10, 0.3).unwrap().k, 3);
        assert!(SumStatistic::from_mean(Model::Bernoulli, 10, 0.35).is_err());
    }
}

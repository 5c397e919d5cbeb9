//! Seeded Monte Carlo evaluation of plans and SPRTs.
//!
//! Trial `t` draws its samples from a ChaCha8 generator seeded with the run
//! seed and switched to stream `t`, so results do not depend on thread count
//! or scheduling, and every runner in a comparison sees the same samples for
//! the same trial (common random numbers).

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::oc::fmt_num;
use crate::plans::MultiHypPlan;
use crate::sprt::SprtSpec;

/// Uncapped SPRT runs are cut here and counted as forced.
pub const SPRT_SAFETY_LIMIT: u64 = 10_000_000;

/// Result of one simulated test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunRecord {
    pub accepted: usize,
    pub sample_count: u64,
    pub forced: bool,
}

pub trait Runner: Sync {
    fn name(&self) -> String;
    fn model(&self) -> Model;
    /// Number of hypotheses.
    fn m(&self) -> usize;
    fn run_stream(&self, stream: &mut dyn Iterator<Item = u64>) -> Result<RunRecord>;
}

impl Runner for MultiHypPlan {
    fn name(&self) -> String {
        format!("plan(s={})", self.s())
    }

    fn model(&self) -> Model {
        self.spec.model
    }

    fn m(&self) -> usize {
        MultiHypPlan::m(self)
    }

    fn run_stream(&self, stream: &mut dyn Iterator<Item = u64>) -> Result<RunRecord> {
        let out = self.run(stream)?;
        Ok(RunRecord { accepted: out.accepted_index, sample_count: out.sample_count, forced: false })
    }
}

impl Runner for SprtSpec {
    fn name(&self) -> String {
        match self.cap {
            Some(c) => format!("sprt(cap={c})"),
            None => "sprt".into(),
        }
    }

    fn model(&self) -> Model {
        self.model
    }

    fn m(&self) -> usize {
        2
    }

    fn run_stream(&self, stream: &mut dyn Iterator<Item = u64>) -> Result<RunRecord> {
        let spec = if self.cap.is_some() { *self } else { self.with_cap(SPRT_SAFETY_LIMIT) };
        let out = spec.run(stream)?;
        Ok(RunRecord { accepted: out.accepted_index, sample_count: out.sample_count, forced: out.forced })
    }
}

/// Endless sample stream for one trial.
pub struct TrialStream {
    rng: ChaCha8Rng,
    model: Model,
    theta: f64,
    poisson: Option<Poisson<f64>>,
}

impl TrialStream {
    pub fn new(model: Model, theta: f64, seed: u64, trial: u64) -> Result<Self> {
        model.check_theta(theta)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial);
        let poisson = match model {
            Model::Poisson if theta > 0.0 => Some(
                Poisson::new(theta).map_err(|e| Error::Domain(format!("Poisson sampler: {e}")))?,
            ),
            _ => None,
        };
        Ok(Self { rng, model, theta, poisson })
    }
}

impl Iterator for TrialStream {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        Some(match self.model {
            Model::Bernoulli => u64::from(self.rng.random::<f64>() < self.theta),
            Model::Poisson => match &self.poisson {
                Some(p) => p.sample(&mut self.rng) as u64,
                None => 0,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPoint {
    pub theta: f64,
    pub accept_freq: Vec<f64>,
    pub accept_se: Vec<f64>,
    pub asn: f64,
    pub asn_se: f64,
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
    pub max: u64,
    pub forced_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub runner: String,
    pub seed: u64,
    pub trials: u64,
    pub points: Vec<SimPoint>,
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[u64], p: f64) -> u64 {
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn summarize(theta: f64, m: usize, records: &[RunRecord]) -> SimPoint {
    let n = records.len() as f64;
    let mut counts = vec![0u64; m];
    let mut forced = 0u64;
    let mut sizes: Vec<u64> = Vec::with_capacity(records.len());
    for r in records {
        counts[r.accepted] += 1;
        forced += u64::from(r.forced);
        sizes.push(r.sample_count);
    }
    let accept_freq: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let accept_se = accept_freq.iter().map(|&f| (f * (1.0 - f) / n).sqrt()).collect();
    let mean = sizes.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = if records.len() > 1 {
        sizes.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    sizes.sort_unstable();
    SimPoint {
        theta,
        accept_freq,
        accept_se,
        asn: mean,
        asn_se: (var / n).sqrt(),
        p50: percentile(&sizes, 0.5),
        p90: percentile(&sizes, 0.9),
        p99: percentile(&sizes, 0.99),
        max: *sizes.last().unwrap_or(&0),
        forced_rate: forced as f64 / n,
    }
}

/// Runs `trials` independent tests at `theta`.
pub fn simulate(runner: &dyn Runner, theta: f64, trials: u64, seed: u64) -> Result<SimPoint> {
    if trials == 0 {
        return Err(Error::Domain("trials must be positive".into()));
    }
    let records = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut stream = TrialStream::new(runner.model(), theta, seed, t)?;
            runner.run_stream(&mut stream)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(theta, runner.m(), &records))
}

pub fn simulate_grid(runner: &dyn Runner, grid: &[f64], trials: u64, seed: u64) -> Result<SimReport> {
    let points = grid.iter().map(|&t| simulate(runner, t, trials, seed)).collect::<Result<_>>()?;
    Ok(SimReport { runner: runner.name(), seed, trials, points })
}

/// Simulates every runner on the same trial streams.
pub fn compare(runners: &[&dyn Runner], grid: &[f64], trials: u64, seed: u64) -> Result<Vec<SimReport>> {
    if let Some(first) = runners.first() {
        if runners.iter().any(|r| r.model() != first.model()) {
            return Err(Error::Domain("compared runners must share a model".into()));
        }
    }
    runners.iter().map(|r| simulate_grid(*r, grid, trials, seed)).collect()
}

/// One CSV for any number of reports; `accept_freq_i` columns run to the
/// largest hypothesis count among them.
pub fn write_csv<W: Write>(reports: &[SimReport], mut out: W) -> Result<()> {
    let m = reports
        .iter()
        .flat_map(|r| r.points.iter().map(|p| p.accept_freq.len()))
        .max()
        .unwrap_or(0);
    let mut header: Vec<String> = ["runner", "seed", "trials", "theta"].iter().map(|s| s.to_string()).collect();
    for i in 0..m {
        header.push(format!("accept_freq_{i}"));
        header.push(format!("accept_se_{i}"));
    }
    header.extend(
        ["asn", "asn_se", "p50", "p90", "p99", "max", "forced_rate"].iter().map(|s| s.to_string()),
    );
    writeln!(out, "{}", header.join(","))?;
    for r in reports {
        for p in &r.points {
            let mut row = vec![r.runner.clone(), r.seed.to_string(), r.trials.to_string(), fmt_num(p.theta)];
            for i in 0..m {
                row.push(p.accept_freq.get(i).map_or(String::new(), |&x| fmt_num(x)));
                row.push(p.accept_se.get(i).map_or(String::new(), |&x| fmt_num(x)));
            }
            row.push(fmt_num(p.asn));
            row.push(fmt_num(p.asn_se));
            row.extend([p.p50, p.p90, p.p99, p.max].iter().map(|x| x.to_string()));
            row.push(fmt_num(p.forced_rate));
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}

//! Python bindings: plan design, exact OC, tuning, two-proportion
//! certification, SPRT and simulation.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use seqlimit::limits;
use seqlimit::sim;
use seqlimit::twoprop::{self, CertifyOptions, Rect};
use seqlimit::{
    Error, LimitFamily, Model, MultiHypPlan, PlanDocument, PlanSpec, RiskRequirement, Schedule, SprtSpec,
    TiePolicy, TwoPropSpec, Zone,
};

fn err(e: Error) -> PyErr {
    match e {
        Error::Infeasible(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn model(name: &str) -> PyResult<Model> {
    name.parse().map_err(err)
}

fn family(name: &str, w: f64) -> PyResult<LimitFamily> {
    match name {
        "exact" => Ok(LimitFamily::Exact),
        "chernoff" => Ok(LimitFamily::Chernoff),
        "approx" => Ok(LimitFamily::Approx { w }),
        other => Err(PyValueError::new_err(format!("unknown limit family '{other}'"))),
    }
}

fn schedule(name: &str, stages: usize, sizes: Option<Vec<u64>>) -> PyResult<Schedule> {
    Ok(match name {
        "fully-sequential" => Schedule::FullySequential,
        "geometric" => Schedule::Geometric { stages },
        "arithmetic" => Schedule::Arithmetic { stages },
        "fixed" => Schedule::Fixed {
            sizes: sizes.ok_or_else(|| PyValueError::new_err("fixed schedule needs sizes"))?,
        },
        other => return Err(PyValueError::new_err(format!("unknown schedule '{other}'"))),
    })
}

/// `(lower, upper)` exact confidence limits for the sum `k` of `n` samples.
#[pyfunction]
fn exact_limits(model_name: &str, n: u64, k: u64, delta: f64) -> PyResult<(f64, f64)> {
    let m = model(model_name)?;
    let l = limits::exact_lower(m, n, k, delta).map_err(err)?;
    let u = limits::exact_upper(m, n, k, delta).map_err(err)?;
    Ok((l.value, u.value))
}

#[pyfunction]
fn chernoff_limits(model_name: &str, n: u64, k: u64, delta: f64) -> PyResult<(f64, f64)> {
    let m = model(model_name)?;
    let l = limits::chernoff_lower(m, n, k, delta).map_err(err)?;
    let u = limits::chernoff_upper(m, n, k, delta).map_err(err)?;
    Ok((l.value, u.value))
}

#[pyfunction]
fn sample_bound(model_name: &str, theta0: f64, theta1: f64, zeta_alpha: f64, zeta_beta: f64) -> PyResult<u64> {
    seqlimit::sample_bound(model(model_name)?, theta0, theta1, zeta_alpha, zeta_beta).map_err(err)
}

#[pyfunction]
fn truncation_bounds(theta: f64, n: u64, eta: f64) -> (f64, f64) {
    twoprop::truncation_bounds(theta, n, eta)
}

#[pyfunction]
fn newcombe_limits(px: f64, py: f64, nx: u64, ny: u64, delta: f64) -> PyResult<(f64, f64)> {
    twoprop::newcombe_limits(px, py, nx, ny, delta).map_err(err)
}

/// Multistage plan with one or more indifference zones.
#[pyclass(name = "Plan", module = "seqlimit_py", skip_from_py_object)]
#[derive(Clone)]
struct PyPlan {
    inner: MultiHypPlan,
}

#[pymethods]
impl PyPlan {
    #[staticmethod]
    #[pyo3(signature = (model_name, theta0, theta1, alpha, beta, zeta=1.0, limits="exact", approx_weight=1.0, schedule_name="geometric", stages=5, sizes=None, tie="likelihood-ratio"))]
    #[allow(clippy::too_many_arguments)]
    fn one_sided(
        model_name: &str,
        theta0: f64,
        theta1: f64,
        alpha: f64,
        beta: f64,
        zeta: f64,
        limits: &str,
        approx_weight: f64,
        schedule_name: &str,
        stages: usize,
        sizes: Option<Vec<u64>>,
        tie: &str,
    ) -> PyResult<Self> {
        Self::multi(model_name, vec![(theta0, theta1)], vec![alpha], vec![beta], zeta, limits, approx_weight, schedule_name, stages, sizes, tie)
    }

    #[staticmethod]
    #[pyo3(signature = (model_name, zones, alphas, betas, zeta=1.0, limits="exact", approx_weight=1.0, schedule_name="geometric", stages=5, sizes=None, tie="support-midpoint"))]
    #[allow(clippy::too_many_arguments)]
    fn multi(
        model_name: &str,
        zones: Vec<(f64, f64)>,
        alphas: Vec<f64>,
        betas: Vec<f64>,
        zeta: f64,
        limits: &str,
        approx_weight: f64,
        schedule_name: &str,
        stages: usize,
        sizes: Option<Vec<u64>>,
        tie: &str,
    ) -> PyResult<Self> {
        let zones = zones.into_iter().map(|(a, b)| Zone::new(a, b)).collect();
        let spec = PlanSpec::multi(model(model_name)?, zones, alphas, betas)
            .with_family(family(limits, approx_weight)?)
            .with_zeta(zeta)
            .with_tie(tie.parse::<TiePolicy>().map_err(err)?)
            .with_schedule(schedule(schedule_name, stages, sizes)?);
        Ok(Self { inner: spec.build().map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let doc = PlanDocument::from_json(text).map_err(err)?;
        doc.plan
            .map(|inner| Self { inner })
            .ok_or_else(|| PyValueError::new_err("document holds a two-proportion plan"))
    }

    fn to_json(&self) -> PyResult<String> {
        PlanDocument::from_plan(self.inner.clone(), "python").to_json().map_err(err)
    }

    #[getter]
    fn sizes(&self) -> Vec<u64> {
        self.inner.sizes()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn zeta(&self) -> f64 {
        self.inner.spec.zeta
    }

    /// Exact acceptance probabilities, ASN and stopping-stage distribution.
    fn oc<'py>(&self, py: Python<'py>, theta: f64) -> PyResult<Bound<'py, PyDict>> {
        let p = seqlimit::oc_point(&self.inner, theta).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("theta", p.theta)?;
        d.set_item("accept", p.accept)?;
        d.set_item("asn", p.asn)?;
        d.set_item("stage_probs", p.stage_probs)?;
        d.set_item("truncation_bound", p.truncation_bound)?;
        Ok(d)
    }

    /// `(satisfied, worst risk / delta)`; nominal risks when `deltas` is omitted.
    #[pyo3(signature = (deltas=None))]
    fn verify_risk(&self, deltas: Option<Vec<f64>>) -> PyResult<(bool, f64)> {
        let req = match deltas {
            Some(d) => RiskRequirement { deltas: d },
            None => RiskRequirement::nominal(&self.inner.spec),
        };
        let rep = seqlimit::verify_risk(&self.inner, &req).map_err(err)?;
        Ok((rep.satisfied, rep.worst_ratio()))
    }

    /// Largest feasible `zeta` and the plan built with it.
    #[pyo3(signature = (tol=1e-3, deltas=None))]
    fn tune(&self, tol: f64, deltas: Option<Vec<f64>>) -> PyResult<(f64, PyPlan)> {
        let req = match deltas {
            Some(d) => RiskRequirement { deltas: d },
            None => RiskRequirement::nominal(&self.inner.spec),
        };
        let res = seqlimit::tune_zeta(&self.inner.spec, &req, tol).map_err(err)?;
        Ok((res.zeta, PyPlan { inner: res.report.0 }))
    }

    /// `(stage index, sample count, accepted hypothesis)` for a sample list.
    fn run(&self, samples: Vec<u64>) -> PyResult<(usize, u64, usize)> {
        let out = self.inner.run(samples).map_err(err)?;
        Ok((out.stage_index, out.sample_count, out.accepted_index))
    }

    fn simulate<'py>(&self, py: Python<'py>, theta: f64, trials: u64, seed: u64) -> PyResult<Bound<'py, PyDict>> {
        sim_dict(py, &self.inner, theta, trials, seed)
    }

    fn __repr__(&self) -> String {
        format!("Plan(m={}, sizes={:?})", self.inner.m(), self.inner.sizes())
    }
}

fn sim_dict<'py>(py: Python<'py>, runner: &dyn sim::Runner, theta: f64, trials: u64, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let p = sim::simulate(runner, theta, trials, seed).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("accept_freq", p.accept_freq)?;
    d.set_item("asn", p.asn)?;
    d.set_item("asn_se", p.asn_se)?;
    d.set_item("p99", p.p99)?;
    d.set_item("max", p.max)?;
    Ok(d)
}

/// Wald's sequential probability ratio test.
#[pyclass(name = "Sprt", module = "seqlimit_py")]
struct PySprt {
    inner: SprtSpec,
}

#[pymethods]
impl PySprt {
    #[new]
    #[pyo3(signature = (model_name, theta0, theta1, alpha, beta, cap=None))]
    fn new(model_name: &str, theta0: f64, theta1: f64, alpha: f64, beta: f64, cap: Option<u64>) -> PyResult<Self> {
        let mut inner = SprtSpec::new(model(model_name)?, theta0, theta1, alpha, beta).map_err(err)?;
        inner.cap = cap;
        Ok(Self { inner })
    }

    /// Wald's approximate `(OC, ASN)` at `theta`.
    fn oc_asn(&self, theta: f64) -> PyResult<(f64, f64)> {
        let a = seqlimit::sprt_oc_asn(&self.inner, theta).map_err(err)?;
        Ok((a.oc, a.asn))
    }

    fn run(&self, samples: Vec<u64>) -> PyResult<(u64, usize)> {
        let out = seqlimit::run_sprt(&self.inner, samples).map_err(err)?;
        Ok((out.sample_count, out.accepted_index))
    }

    fn simulate<'py>(&self, py: Python<'py>, theta: f64, trials: u64, seed: u64) -> PyResult<Bound<'py, PyDict>> {
        sim_dict(py, &self.inner, theta, trials, seed)
    }
}

/// Two-proportion plan on `p_x - p_y`.
#[pyclass(name = "TwoPropPlan", module = "seqlimit_py")]
struct PyTwoPropPlan {
    inner: twoprop::TwoPropPlan,
}

#[pymethods]
impl PyTwoPropPlan {
    #[staticmethod]
    #[pyo3(signature = (zones, alphas, betas, zeta=1.0, stages=3, link_factor=None))]
    fn build(
        zones: Vec<(f64, f64)>,
        alphas: Vec<f64>,
        betas: Vec<f64>,
        zeta: f64,
        stages: usize,
        link_factor: Option<f64>,
    ) -> PyResult<Self> {
        let zones = zones.into_iter().map(|(a, b)| Zone::new(a, b)).collect();
        let link = match link_factor {
            Some(factor) => twoprop::Link::Scale { factor },
            None => twoprop::Link::Identity,
        };
        let spec = TwoPropSpec::new(zones, alphas, betas)
            .with_zeta(zeta)
            .with_link(link)
            .with_schedule(Schedule::Geometric { stages });
        Ok(Self { inner: spec.build().map_err(err)? })
    }

    #[getter]
    fn sizes(&self) -> Vec<(u64, u64)> {
        self.inner.sizes()
    }

    fn to_json(&self) -> PyResult<String> {
        PlanDocument::from_two_prop(self.inner.clone(), "python").to_json().map_err(err)
    }

    /// `(lower, upper)` bounds on `Pr{reject H_i}` over a rectangle.
    #[pyo3(signature = (i, px_lo, px_hi, py_lo, py_hi, eta=1e-4))]
    #[allow(clippy::too_many_arguments)]
    fn rejection_bounds(&self, i: usize, px_lo: f64, px_hi: f64, py_lo: f64, py_hi: f64, eta: f64) -> PyResult<(f64, f64)> {
        let rect = Rect::new(px_lo, px_hi, py_lo, py_hi).map_err(err)?;
        twoprop::rejection_prob_bounds(&self.inner, i, &rect, eta).map_err(err)
    }

    /// Certificate summary: verdict, maximum upper bound and evaluations.
    #[pyo3(signature = (i, delta, eta=1e-4, tol=1e-4, budget=20_000))]
    fn certify<'py>(&self, py: Python<'py>, i: usize, delta: f64, eta: f64, tol: f64, budget: usize) -> PyResult<Bound<'py, PyDict>> {
        let c = twoprop::certify_risk(&self.inner, i, delta, &CertifyOptions { eta, tol, budget }).map_err(err)?;
        let d = PyDict::new(py);
        let verdict = match c.verdict {
            twoprop::Verdict::Proved => "proved",
            twoprop::Verdict::Disproved => "disproved",
            twoprop::Verdict::Inconclusive => "inconclusive",
        };
        d.set_item("verdict", verdict)?;
        d.set_item("max_upper", c.max_upper)?;
        d.set_item("explored", c.explored)?;
        d.set_item("witness_value", c.witness_value)?;
        Ok(d)
    }

    /// `(stage index, accepted hypothesis)` for two sample lists.
    fn run(&self, xs: Vec<u64>, ys: Vec<u64>) -> PyResult<(usize, usize)> {
        let out = self.inner.run(xs, ys).map_err(err)?;
        Ok((out.stage_index, out.accepted_index))
    }
}

#[pymodule]
fn seqlimit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(exact_limits, m)?)?;
    m.add_function(wrap_pyfunction!(chernoff_limits, m)?)?;
    m.add_function(wrap_pyfunction!(sample_bound, m)?)?;
    m.add_function(wrap_pyfunction!(truncation_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(newcombe_limits, m)?)?;
    m.add_class::<PyPlan>()?;
    m.add_class::<PySprt>()?;
    m.add_class::<PyTwoPropPlan>()?;
    Ok(())
}

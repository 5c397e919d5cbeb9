//! Confidence-limit sequential and multistage hypothesis tests.
//!
//! Plans are built from exact, Chernoff or normal-approximation confidence
//! limits, evaluated exactly by dynamic programming, and risk-tuned by
//! bisection on a single coefficient. Two-proportion plans are certified over
//! parameter rectangles by branch and bound. Wald's SPRT is included as a
//! baseline together with a seeded Monte Carlo harness.

pub mod document;
pub mod error;
pub mod limits;
pub mod models;
pub mod numeric;
pub mod oc;
pub mod plans;
pub mod sim;
pub mod sprt;
pub mod tuning;
pub mod twoprop;
mod serde_ext;

pub use document::{PlanDocument, PlanKind};
pub use error::{Error, Result};
pub use limits::{crossing_test, Crossing, Limit, LimitFamily};
pub use models::{Model, SumStatistic};
pub use plans::{
    build_thresholds, sample_bound, MultiHypPlan, OneSidedPlan, PlanSpec, Schedule, Stage,
    TestOutcome, TiePolicy, Zone,
};
pub use oc::{oc_curve, oc_point, terminal_distribution, verify_risk, OcReport, RiskReport, RiskRequirement};
pub use sprt::{run_sprt, sprt_oc_asn, SprtSpec};
pub use tuning::{tune_zeta, TuneResult};
pub use twoprop::{
    build_two_prop_plan, certify_risk, newcombe_limits, rejection_prob_bounds, run_two_prop, truncation_bounds,
    tune_two_prop, RiskCertificate, TwoPropPlan, TwoPropSpec,
};

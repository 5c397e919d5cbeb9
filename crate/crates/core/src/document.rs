//! Versioned JSON plan documents.
//!
//! A document stores the full plan, including computed thresholds or
//! regions, so executing or evaluating it never rebuilds anything. Numbers
//! are written as shortest round-trip decimals, infinities as strings, and
//! the pretty layout is deterministic, so parse followed by serialize
//! reproduces the input byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plans::MultiHypPlan;
use crate::tuning::TuneStep;
use crate::twoprop::TwoPropPlan;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanKind {
    OneSided,
    Multi,
    TwoProp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRecord {
    pub tol: f64,
    pub zeta: f64,
    pub iterations: usize,
    pub bracket: (f64, f64),
    pub trace: Vec<TuneStep>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    /// Subcommand or call that produced the document.
    pub created_by: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuning: Option<TuningRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanDocument {
    pub schema_version: u32,
    pub kind: PlanKind,
    /// Risk bounds `delta_i` per hypothesis; nominal ones when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
    /// One-sided and multi-hypothesis plans.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<MultiHypPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_prop_plan: Option<TwoPropPlan>,
    pub provenance: Provenance,
}

fn provenance(created_by: &str) -> Provenance {
    Provenance {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        created_by: created_by.to_string(),
        tuning: None,
    }
}

impl PlanDocument {
    /// Wraps a one-sided (`m = 2`) or multi-hypothesis plan.
    pub fn from_plan(plan: MultiHypPlan, created_by: &str) -> Self {
        let kind = if plan.m() == 2 { PlanKind::OneSided } else { PlanKind::Multi };
        Self {
            schema_version: SCHEMA_VERSION,
            kind,
            deltas: None,
            plan: Some(plan),
            two_prop_plan: None,
            provenance: provenance(created_by),
        }
    }

    pub fn from_two_prop(plan: TwoPropPlan, created_by: &str) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: PlanKind::TwoProp,
            deltas: None,
            plan: None,
            two_prop_plan: Some(plan),
            provenance: provenance(created_by),
        }
    }

    pub fn with_deltas(mut self, deltas: Option<Vec<f64>>) -> Self {
        self.deltas = deltas;
        self
    }

    /// Number of hypotheses of the stored plan.
    pub fn m(&self) -> usize {
        match (&self.plan, &self.two_prop_plan) {
            (Some(p), _) => p.m(),
            (_, Some(p)) => p.m(),
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parse(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        match (self.kind, &self.plan, &self.two_prop_plan) {
            (PlanKind::OneSided | PlanKind::Multi, Some(p), None) => {
                p.spec.validate().map_err(|e| Error::Parse(format!("field `plan.spec`: {e}")))?;
                if p.stages.is_empty() {
                    return bad("field `plan.stages`: no stages".into());
                }
                if p.stages.windows(2).any(|w| w[0].n >= w[1].n) {
                    return bad("field `plan.stages`: sizes must increase".into());
                }
                if p.stages.iter().any(|st| st.m() != p.m()) {
                    return bad("field `plan.stages`: threshold count does not match the zones".into());
                }
                if (self.kind == PlanKind::OneSided) != (p.m() == 2) {
                    return bad(format!("kind {:?} does not match a plan with {} hypotheses", self.kind, p.m()));
                }
            }
            (PlanKind::TwoProp, None, Some(p)) => {
                p.check().map_err(|e| Error::Parse(format!("field `two_prop_plan`: {e}")))?;
            }
            _ => return bad(format!("kind {:?} needs exactly its own plan field", self.kind)),
        }
        if let Some(d) = &self.deltas {
            if d.len() != self.m() || d.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return bad(format!("field `deltas`: need {} values in [0, 1]", self.m()));
            }
        }
        Ok(())
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text).map_err(|e| {
            Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Model;
    use crate::plans::{PlanSpec, Schedule};
    use crate::twoprop::TwoPropSpec;

    fn doc() -> PlanDocument {
        let plan = PlanSpec::one_sided(Model::Bernoulli, 0.4, 0.6, 0.05, 0.05)
            .with_zeta(0.5)
            .with_schedule(Schedule::Geometric { stages: 4 })
            .build()
            .unwrap();
        PlanDocument::from_plan(plan, "test")
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let text = doc().to_json().unwrap();
        let back = PlanDocument::from_json(&text).unwrap();
        assert_eq!(back, doc());
        assert_eq!(back.to_json().unwrap(), text);
        let tp = TwoPropSpec::two(-0.4, 0.4, 0.1, 0.1).build().unwrap();
        let text = PlanDocument::from_two_prop(tp, "test").to_json().unwrap();
        assert_eq!(PlanDocument::from_json(&text).unwrap().to_json().unwrap(), text);
    }

    #[test]
    fn parse_errors_carry_position() {
        let text = doc().to_json().unwrap().replace("\"zeta\": 0.5", "\"zeta\": \"half\"");
        match PlanDocument::from_json(&text) {
            Err(Error::Parse(msg)) => assert!(msg.contains("line ") && msg.contains("column"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let mut d = doc();
        d.kind = PlanKind::TwoProp;
        let text = d.to_json().unwrap();
        assert!(matches!(PlanDocument::from_json(&text), Err(Error::Parse(_))));
        let mut d = doc();
        d.schema_version = 7;
        assert!(PlanDocument::from_json(&d.to_json().unwrap()).is_err());
    }
}

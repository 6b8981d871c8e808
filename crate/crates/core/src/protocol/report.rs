use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::StabilityResult;
use crate::overlay::MaterialProperties;

pub const REPORT_SCHEMA: &str = "artready.readiness/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Pass,
    EstimationFailure,
    InvalidJointConfig,
    PenetrationFailure,
    Instability,
}

impl Classification {
    pub const ALL: [Classification; 5] = [
        Classification::Pass,
        Classification::EstimationFailure,
        Classification::InvalidJointConfig,
        Classification::PenetrationFailure,
        Classification::Instability,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Pass => "pass",
            Classification::EstimationFailure => "estimation-failure",
            Classification::InvalidJointConfig => "invalid-joint-config",
            Classification::PenetrationFailure => "penetration-failure",
            Classification::Instability => "instability",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalSource {
    Proposer,
    Perturbation,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub q: BTreeMap<String, f64>,
    pub phi: f64,
    pub source: ProposalSource,
    pub accepted: bool,
    /// Joints the candidate was allowed to move.
    pub focus: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineTrace {
    pub initial_q: BTreeMap<String, f64>,
    pub initial_phi: f64,
    pub entries: Vec<TraceEntry>,
    pub best_q: BTreeMap<String, f64>,
    pub best_phi: f64,
    pub iterations: usize,
    pub query_count: usize,
    pub converged: bool,
    /// Set when the proposer failed hard and fallbacks had to carry on.
    pub proposer_failure: Option<String>,
}

impl RefineTrace {
    pub fn accepted(&self) -> impl Iterator<Item = &TraceEntry> {
        self.entries.iter().filter(|e| e.accepted)
    }
}

/// Component results that decide the classification.
#[derive(Debug, Clone, Copy, Default)]
pub struct FailureInputs<'a> {
    pub estimation_failure: bool,
    pub invalid_joint_config: bool,
    pub penetration: f64,
    pub tolerance: f64,
    pub stability: Option<&'a StabilityResult>,
    pub blew_up: bool,
}

/// Highest-priority failure, else pass.
pub fn classify_failure(c: &FailureInputs) -> Classification {
    if c.estimation_failure {
        Classification::EstimationFailure
    } else if c.invalid_joint_config {
        Classification::InvalidJointConfig
    } else if !(c.penetration <= c.tolerance) {
        Classification::PenetrationFailure
    } else if c.blew_up || c.stability.is_none_or(|s| !s.passed()) {
        Classification::Instability
    } else {
        Classification::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDepth {
    pub pair: String,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadinessReport {
    pub schema_version: String,
    pub asset_id: String,
    pub classification: Classification,
    pub scale: f64,
    pub initial_state: BTreeMap<String, f64>,
    pub final_state: BTreeMap<String, f64>,
    pub penetration: Option<f64>,
    pub top_penetrations: Vec<PairDepth>,
    pub stability: Option<StabilityResult>,
    /// Distance used for the orientation drift.
    pub orientation_metric: String,
    pub instability: Option<String>,
    pub scale_deviation: Option<f64>,
    pub joint_deviation: Option<BTreeMap<String, f64>>,
    pub prompt_alignment: Option<f64>,
    pub refinement: Option<RefineTrace>,
    pub query_count: usize,
    /// Contact material metadata from the overlay, carried through untouched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material_properties: Option<MaterialProperties>,
    pub notes: Vec<String>,
}

impl ReadinessReport {
    pub fn new(asset_id: impl Into<String>) -> Self {
        ReadinessReport {
            schema_version: REPORT_SCHEMA.to_string(),
            asset_id: asset_id.into(),
            classification: Classification::EstimationFailure,
            scale: 1.0,
            initial_state: BTreeMap::new(),
            final_state: BTreeMap::new(),
            penetration: None,
            top_penetrations: Vec::new(),
            stability: None,
            orientation_metric: "geodesic".to_string(),
            instability: None,
            scale_deviation: None,
            joint_deviation: None,
            prompt_alignment: None,
            refinement: None,
            query_count: 0,
            material_properties: None,
            notes: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stable(pass: bool) -> StabilityResult {
        StabilityResult {
            d_pos: 0.0,
            d_ori: 0.0,
            pos_pass: pass,
            ori_pass: true,
            oscillating_joints: vec![],
        }
    }

    #[test]
    fn priority_order() {
        let ok = stable(true);
        let base = FailureInputs {
            penetration: 0.0,
            tolerance: 0.002,
            stability: Some(&ok),
            ..Default::default()
        };
        assert_eq!(classify_failure(&base), Classification::Pass);
        assert_eq!(
            classify_failure(&FailureInputs {
                penetration: 0.05,
                ..base
            }),
            Classification::PenetrationFailure
        );
        assert_eq!(
            classify_failure(&FailureInputs {
                estimation_failure: true,
                invalid_joint_config: true,
                penetration: 0.05,
                ..base
            }),
            Classification::EstimationFailure
        );
        assert_eq!(
            classify_failure(&FailureInputs {
                invalid_joint_config: true,
                penetration: 0.05,
                ..base
            }),
            Classification::InvalidJointConfig
        );
        let bad = stable(false);
        assert_eq!(
            classify_failure(&FailureInputs {
                stability: Some(&bad),
                ..base
            }),
            Classification::Instability
        );
        assert_eq!(
            classify_failure(&FailureInputs {
                blew_up: true,
                stability: None,
                ..base
            }),
            Classification::Instability
        );
    }

    #[test]
    fn report_json_roundtrip() {
        let mut r = ReadinessReport::new("box");
        r.penetration = Some(0.001);
        let text = r.to_json();
        assert!(text.contains("\"schema_version\": \"artready.readiness/1\""));
        assert!(text.contains("\"classification\": \"estimation-failure\""));
        assert_eq!(ReadinessReport::from_json(&text).unwrap(), r);
    }

    #[test]
    fn material_metadata_passes_through() {
        let mut r = ReadinessReport::new("box");
        assert!(!r.to_json().contains("material_properties"));
        r.material_properties = Some(serde_json::from_str(r#"{"friction": 0.4, "grain": "oak"}"#).unwrap());
        let text = r.to_json();
        assert!(text.contains("\"grain\": \"oak\""));
        assert_eq!(ReadinessReport::from_json(&text).unwrap(), r);
    }
}

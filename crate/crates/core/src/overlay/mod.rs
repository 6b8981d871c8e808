//! Structured parameter overlays: wire format, inertia feasibility,
//! validation and application to an [`AssetModel`].

mod inertia;
mod validate;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use inertia::{
    check_inertia, estimate_link_mass, principal_moments, shape_inertia, InertiaCheck, Shape,
    SYMMETRY_TOLERANCE,
};
pub use validate::{
    apply_overlay, default_dynamics, validate_overlay, Diagnostic, MINIMAL_INERTIA, MINIMAL_MASS,
};

use crate::asset::{AssetError, Inertia};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OverlayError {
    #[error("invalid overlay value at `{path}`: {message}")]
    Invalid { path: String, message: String },
    #[error("overlay references unknown link `{0}`")]
    UnknownLink(String),
    #[error("overlay references unknown joint `{0}`")]
    UnknownJoint(String),
    #[error("overlay JSON does not match the schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Asset(#[from] AssetError),
}

impl OverlayError {
    pub(crate) fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        OverlayError::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MaterialProperties {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub friction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restitution: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact_stiffness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact_damping: Option<f64>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalModifications {
    #[serde(default = "default_scale")]
    pub uniform_scale_factor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material_properties: Option<MaterialProperties>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Default for GlobalModifications {
    fn default() -> Self {
        GlobalModifications {
            uniform_scale_factor: 1.0,
            material_properties: None,
            extra: BTreeMap::new(),
        }
    }
}

/// Inertia in the overlay's field order; omitted products default to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InertiaSpec {
    pub ixx: f64,
    pub iyy: f64,
    pub izz: f64,
    #[serde(default)]
    pub ixy: f64,
    #[serde(default)]
    pub ixz: f64,
    #[serde(default)]
    pub iyz: f64,
}

impl From<InertiaSpec> for Inertia {
    fn from(s: InertiaSpec) -> Inertia {
        Inertia {
            ixx: s.ixx,
            ixy: s.ixy,
            ixz: s.ixz,
            iyy: s.iyy,
            iyz: s.iyz,
            izz: s.izz,
        }
    }
}

impl From<Inertia> for InertiaSpec {
    fn from(i: Inertia) -> InertiaSpec {
        InertiaSpec {
            ixx: i.ixx,
            iyy: i.iyy,
            izz: i.izz,
            ixy: i.ixy,
            ixz: i.ixz,
            iyz: i.iyz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LinkModification {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<InertiaSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_of_mass: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material_override: Option<Value>,
    /// Advisory fields such as `_action` and `_visual_notes`.
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

/// Final joint limits written by the validator, in the joint's own units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitSpec {
    #[serde(deserialize_with = "de_quantity")]
    pub lower: f64,
    #[serde(deserialize_with = "de_quantity")]
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JointModification {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub friction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stiffness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<LimitSpec>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl JointModification {
    pub fn triplet(damping: f64, friction: f64, stiffness: f64) -> Self {
        JointModification {
            damping: Some(damping),
            friction: Some(friction),
            stiffness: Some(stiffness),
            ..Default::default()
        }
    }
}

/// Requested joint positions plus underscore-prefixed advisory entries.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, Value>", into = "BTreeMap<String, Value>")]
pub struct InitialPositions {
    pub positions: BTreeMap<String, f64>,
    pub extra: BTreeMap<String, Value>,
}

impl TryFrom<BTreeMap<String, Value>> for InitialPositions {
    type Error = String;

    fn try_from(map: BTreeMap<String, Value>) -> Result<Self, String> {
        let mut out = InitialPositions::default();
        for (k, v) in map {
            if k.starts_with('_') {
                out.extra.insert(k, v);
            } else {
                let x = quantity(&v).map_err(|e| format!("initial_joint_positions.{k}: {e}"))?;
                out.positions.insert(k, x);
            }
        }
        Ok(out)
    }
}

impl From<InitialPositions> for BTreeMap<String, Value> {
    fn from(p: InitialPositions) -> Self {
        let mut map: BTreeMap<String, Value> = p
            .positions
            .into_iter()
            .map(|(k, v)| (k, Value::from(v)))
            .collect();
        map.extend(p.extra);
        map
    }
}

/// Reads a number that may carry a unit hint: `0.5`, `"30deg"`, `"30 °"`,
/// `"0.2 rad"`, or `{"value": 30, "unit": "deg"}`. Degrees become radians.
pub fn quantity(v: &Value) -> Result<f64, String> {
    let convert = |x: f64, unit: &str| -> Result<f64, String> {
        match unit.trim().to_ascii_lowercase().as_str() {
            "" | "rad" | "radian" | "radians" | "m" | "meter" | "meters" => Ok(x),
            "deg" | "degree" | "degrees" | "°" => Ok(x * PI / 180.0),
            other => Err(format!("unknown unit `{other}`")),
        }
    };
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| "not a finite number".to_string()),
        Value::String(s) => {
            let s = s.trim();
            let split = s
                .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')))
                .unwrap_or(s.len());
            let (num, unit) = s.split_at(split);
            let x: f64 = num
                .trim()
                .parse()
                .map_err(|_| format!("cannot read `{s}` as a number"))?;
            convert(x, unit)
        }
        Value::Object(o) => {
            let x = o
                .get("value")
                .and_then(Value::as_f64)
                .ok_or_else(|| "object quantity needs a numeric `value`".to_string())?;
            convert(x, o.get("unit").and_then(Value::as_str).unwrap_or(""))
        }
        _ => Err(format!("expected a number, got {v}")),
    }
}

fn de_quantity<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    let v = Value::deserialize(d)?;
    quantity(&v).map_err(serde::de::Error::custom)
}

/// The overlay 𝒪 = {global, links, joints, initial state}.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Overlay {
    #[serde(default)]
    pub global_modifications: GlobalModifications,
    #[serde(default)]
    pub link_modifications: BTreeMap<String, LinkModification>,
    #[serde(default)]
    pub joint_modifications: BTreeMap<String, JointModification>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_joint_positions: Option<InitialPositions>,
    #[serde(default)]
    pub validation_notes: Vec<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

/// Marker set by [`validate_overlay`] so a second pass does not rescale.
pub const VALIDATED_MARKER: &str = "_validated";

impl Overlay {
    pub fn from_json(text: &str) -> Result<Self, OverlayError> {
        serde_json::from_str(text).map_err(|e| OverlayError::Schema(e.to_string()))
    }

    pub fn from_value(v: Value) -> Result<Self, OverlayError> {
        serde_json::from_value(v).map_err(|e| OverlayError::Schema(e.to_string()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("overlay serializes")
    }

    pub fn scale(&self) -> f64 {
        self.global_modifications.uniform_scale_factor
    }

    pub fn is_validated(&self) -> bool {
        self.extra.get(VALIDATED_MARKER) == Some(&Value::Bool(true))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
      "global_modifications": {
        "uniform_scale_factor": 0.1,
        "material_properties": {"friction": 0.5, "restitution": 0.1, "contact_stiffness": 1000, "contact_damping": 10}
      },
      "link_modifications": {
        "link_name": {
          "mass": 0.5,
          "inertia": {"ixx": 0.001, "iyy": 0.001, "izz": 0.001, "ixy": 0.0, "ixz": 0.0, "iyz": 0.0},
          "center_of_mass": [0.0, 0.0, 0.0],
          "material_override": {"friction": 0.8},
          "_action": "new",
          "_visual_notes": "matte grey plastic"
        }
      },
      "joint_modifications": {
        "joint_name": {"damping": 0.15, "friction": 0.01, "stiffness": 0.0, "_action": "new"}
      },
      "initial_joint_positions": {"joint_name": 1.57, "_reasoning": "requested open"},
      "validation_notes": ["SIZE REASONING: ..."]
    }"#;

    #[test]
    fn schema_fields_round_trip() {
        let o = Overlay::from_json(SAMPLE).unwrap();
        assert_eq!(o.scale(), 0.1);
        let l = &o.link_modifications["link_name"];
        assert_eq!(l.mass, Some(0.5));
        assert_eq!(l.extra["_action"], "new");
        let j = &o.joint_modifications["joint_name"];
        assert_eq!(
            (j.damping, j.friction, j.stiffness),
            (Some(0.15), Some(0.01), Some(0.0))
        );
        let ip = o.initial_joint_positions.as_ref().unwrap();
        assert_eq!(ip.positions["joint_name"], 1.57);
        assert_eq!(ip.extra["_reasoning"], "requested open");
        let back = Overlay::from_json(&o.to_json_pretty()).unwrap();
        assert_eq!(o, back);
    }

    #[test]
    fn degree_hints_converted() {
        let o = Overlay::from_json(r#"{"initial_joint_positions": {"a": "90deg", "b": {"value": 45, "unit": "degrees"}, "c": 0.3}}"#).unwrap();
        let p = &o.initial_joint_positions.unwrap().positions;
        assert!((p["a"] - PI / 2.0).abs() < 1e-15);
        assert!((p["b"] - PI / 4.0).abs() < 1e-15);
        assert_eq!(p["c"], 0.3);
    }

    #[test]
    fn bad_unit_is_schema_error() {
        assert!(matches!(
            Overlay::from_json(r#"{"initial_joint_positions": {"a": "3 furlongs"}}"#),
            Err(OverlayError::Schema(_))
        ));
    }

    #[test]
    fn empty_object_is_identity_overlay() {
        let o = Overlay::from_json("{}").unwrap();
        assert_eq!(o.scale(), 1.0);
        assert!(o.link_modifications.is_empty());
    }
}

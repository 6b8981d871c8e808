//! Overlay and joint-state proposals: a deterministic heuristic proposer and
//! a client for remote multi-modal models.

mod heuristic;
pub mod prompt;
mod remote;

use std::collections::BTreeMap;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use heuristic::{classify_material, HeuristicConfig, HeuristicProposer, SPRING_KEYWORDS};
pub use remote::{
    extract_json, ChatTransport, HttpTransport, RateCap, RemoteProposer, TransportError,
    DEFAULT_MAX_RETRIES,
};

use crate::asset::{AssetModel, JointConfig, SemanticMap};
use crate::collision::ContactReport;
use crate::mesh::{MeshAnalysis, MeshError, MeshStore, RenderOptions, View};
use crate::overlay::{Overlay, OverlayError};

#[derive(Debug, thiserror::Error)]
pub enum ProposerError {
    #[error("no mesh analysis for link `{0}`")]
    MissingAnalysis(String),
    #[error("no focus joints to adjust while penetration {phi:.6} m exceeds tolerance")]
    NoProposal { phi: f64 },
    #[error("transport failure: {0}")]
    Transport(#[from] TransportError),
    #[error("no usable JSON after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: usize, last: String },
    #[error("final response did not match the schema: {0}")]
    SchemaInvalid(String),
    #[error("prompt template: {0}")]
    Template(String),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaterialClass {
    Metal,
    Plastic,
    Rubber,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialPrior {
    pub class: MaterialClass,
    /// kg/m³.
    pub density_range: (f64, f64),
    pub default_density: f64,
}

impl MaterialPrior {
    pub fn of(class: MaterialClass) -> MaterialPrior {
        let (density_range, default_density) = match class {
            MaterialClass::Metal => ((2700.0, 8000.0), 2700.0),
            MaterialClass::Plastic => ((900.0, 1400.0), 1040.0),
            MaterialClass::Rubber => ((1000.0, 1500.0), 1200.0),
        };
        MaterialPrior {
            class,
            density_range,
            default_density,
        }
    }
}

/// Everything a proposer may look at for one asset.
#[derive(Debug, Clone)]
pub struct ExtractedInfo {
    pub model: AssetModel,
    pub semantics: SemanticMap,
    pub analyses: BTreeMap<String, MeshAnalysis>,
    /// Canonical views in [`View::ALL`] order, when rendered.
    pub views: Option<Vec<RgbImage>>,
    pub guidance: Option<String>,
}

impl ExtractedInfo {
    /// Analyzes every link with mesh geometry and optionally renders the views.
    pub fn extract(
        model: AssetModel,
        semantics: SemanticMap,
        store: &MeshStore,
        guidance: Option<String>,
        render: Option<&RenderOptions>,
    ) -> Result<Self, MeshError> {
        let analyses = store.analyze_links(&model)?;
        let views = match render {
            Some(opts) => Some(crate::mesh::render_views(
                &model,
                &JointConfig::new(),
                &View::ALL,
                store,
                opts,
            )?),
            None => None,
        };
        Ok(ExtractedInfo {
            model,
            semantics,
            analyses,
            views,
            guidance,
        })
    }

    /// The `object_info` block handed to a remote model.
    pub fn object_info(&self) -> Value {
        let m = &self.model;
        let links: serde_json::Map<String, Value> = m
            .links
            .iter()
            .map(|l| {
                let a = self.analyses.get(&l.name);
                (
                    l.name.clone(),
                    json!({
                        "semantic_name": self.semantics.label(&l.name),
                        "existing_mass": l.mass,
                        "existing_inertia": l.inertia,
                        "mesh_analysis": a.map(|a| json!({
                            "volume_m3": a.volume,
                            "volume_source": a.volume_source,
                            "surface_area_m2": a.surface_area,
                            "bbox_m": a.bbox,
                            "center_of_mass": a.center_of_mass,
                            "watertight": a.watertight,
                        })),
                    }),
                )
            })
            .collect();
        let joints: serde_json::Map<String, Value> = m
            .joints
            .iter()
            .map(|j| {
                (
                    j.name.clone(),
                    json!({
                        "type": j.kind.as_str(),
                        "parent": j.parent,
                        "child": j.child,
                        "axis": j.axis,
                        "limit": j.limits.map(|l| json!({"lower": l.lower, "upper": l.upper})),
                        "existing_dynamics": j.dynamics,
                    }),
                )
            })
            .collect();
        let dims = heuristic::assembled_extents(self);
        json!({
            "name": m.name,
            "metadata": m.metadata,
            "user_guidance": self.guidance.as_deref().unwrap_or(""),
            "urdf_structure": {"root": m.root, "links": links, "joints": joints},
            "documented_initial_state": m.documented_initial_state,
            "current_dimensions_m": dims,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateAction {
    Approve,
    CollisionReduction,
    StateCorrection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointUpdate {
    pub joint: String,
    pub delta: f64,
}

/// One proposed Δq, or an approval of the current state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateUpdateWire", into = "StateUpdateWire")]
pub struct StateUpdate {
    pub approved: bool,
    pub state_ok: bool,
    pub action: UpdateAction,
    pub joint_deltas: BTreeMap<String, f64>,
    pub reason: String,
}

#[derive(Serialize, Deserialize)]
struct StateUpdateWire {
    approved: bool,
    #[serde(default = "yes")]
    state_ok: bool,
    action: UpdateAction,
    #[serde(default)]
    reason: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    joint_updates: Vec<JointUpdate>,
}

fn yes() -> bool {
    true
}

impl TryFrom<StateUpdateWire> for StateUpdate {
    type Error = String;

    fn try_from(w: StateUpdateWire) -> Result<Self, String> {
        if w.approved && !w.joint_updates.is_empty() {
            return Err("an approval must not carry joint_updates".into());
        }
        let mut joint_deltas = BTreeMap::new();
        for u in w.joint_updates {
            if !u.delta.is_finite() {
                return Err(format!("delta for `{}` is not finite", u.joint));
            }
            *joint_deltas.entry(u.joint).or_insert(0.0) += u.delta;
        }
        Ok(StateUpdate {
            approved: w.approved,
            state_ok: w.state_ok,
            action: w.action,
            joint_deltas,
            reason: w.reason,
        })
    }
}

impl From<StateUpdate> for StateUpdateWire {
    fn from(s: StateUpdate) -> Self {
        StateUpdateWire {
            approved: s.approved,
            state_ok: s.state_ok,
            action: s.action,
            reason: s.reason,
            joint_updates: s
                .joint_deltas
                .into_iter()
                .map(|(joint, delta)| JointUpdate { joint, delta })
                .collect(),
        }
    }
}

impl StateUpdate {
    pub fn approve(reason: impl Into<String>) -> Self {
        StateUpdate {
            approved: true,
            state_ok: true,
            action: UpdateAction::Approve,
            joint_deltas: BTreeMap::new(),
            reason: reason.into(),
        }
    }
}

/// What a proposer sees on one refinement iteration.
#[derive(Debug, Clone, Copy)]
pub struct StateContext<'a> {
    pub model: &'a AssetModel,
    pub semantics: Option<&'a SemanticMap>,
    pub store: Option<&'a MeshStore>,
    pub q: &'a JointConfig,
    /// The requested state q_VLM.
    pub target: &'a JointConfig,
    pub report: &'a ContactReport,
    pub focus: &'a [String],
    pub hint: &'a str,
    pub iteration: usize,
    /// Consecutive rejections of earlier proposals from this state.
    pub rejections: usize,
    pub tolerance: f64,
}

/// Source of overlays and state updates for the pipeline.
pub trait Proposer: Send + Sync {
    fn propose_overlay(&self, info: &ExtractedInfo) -> Result<Overlay, ProposerError>;
    fn propose_state_update(&self, ctx: &StateContext<'_>) -> Result<StateUpdate, ProposerError>;
    /// Remote requests sent so far.
    fn queries(&self) -> usize {
        0
    }
    fn name(&self) -> &str;
}

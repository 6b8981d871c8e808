use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{refine_state, RefineConfig, RefineEnv};
use crate::asset::{
    parse_semantics, parse_urdf, write_urdf, AssetError, AssetModel, JointConfig, JointKind,
    SemanticMap,
};
use crate::collision::CollisionModel;
use crate::dynamics::{simulate_passive, DynError, DynParams, Simulator};
use crate::mesh::{MeshError, MeshStore, RenderOptions};
use crate::overlay::{apply_overlay, validate_overlay};
use crate::proposer::{ExtractedInfo, Proposer};
use crate::protocol::{
    classify_failure, joint_deviation, scale_deviation, stability_metrics, Classification,
    FailureInputs, PairDepth, ReadinessReport, StabilityThresholds,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Asset { path: String, source: AssetError },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("worker pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One asset to process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetInput {
    /// Defaults to the URDF file stem.
    #[serde(default)]
    pub id: Option<String>,
    pub urdf: PathBuf,
    #[serde(default)]
    pub semantics: Option<PathBuf>,
    #[serde(default)]
    pub guidance: Option<String>,
    /// Reference scale for the scale deviation.
    #[serde(default)]
    pub reference_scale: Option<f64>,
    /// Reference joint state for the joint deviation.
    #[serde(default)]
    pub reference_state: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub prompt_alignment: Option<f64>,
}

impl AssetInput {
    pub fn new(urdf: impl Into<PathBuf>) -> Self {
        AssetInput {
            id: None,
            urdf: urdf.into(),
            semantics: None,
            guidance: None,
            reference_scale: None,
            reference_state: None,
            prompt_alignment: None,
        }
    }

    pub fn asset_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            self.urdf
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "asset".to_string())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub refine: RefineConfig,
    pub dynamics: DynParams,
    pub t_set: f64,
    pub t_test: f64,
    pub thresholds: StabilityThresholds,
    /// Render views for the overlay proposer.
    pub render: bool,
    /// Largest allowed clamp when projecting the initial state, per joint.
    pub projection_tolerance: f64,
    /// Skip overlay synthesis and evaluate the asset as given.
    pub evaluate_only: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            refine: RefineConfig::default(),
            dynamics: DynParams::default(),
            t_set: 1.0,
            t_test: 2.0,
            thresholds: StabilityThresholds::default(),
            render: false,
            projection_tolerance: 1e-6,
            evaluate_only: false,
        }
    }
}

pub struct PipelineOutput {
    pub report: ReadinessReport,
    /// None when no usable overlay was produced.
    pub model: Option<AssetModel>,
    pub store: MeshStore,
    pub source_dir: PathBuf,
}

fn limits_inconsistent(model: &AssetModel) -> Option<String> {
    model.joints.iter().find_map(|j| {
        let l = j.limits?;
        (matches!(j.kind, JointKind::Revolute | JointKind::Prismatic)
            && !(l.lower.is_finite() && l.upper.is_finite() && l.lower <= l.upper))
            .then(|| {
                format!(
                    "joint `{}` has inconsistent limits [{}, {}]",
                    j.name, l.lower, l.upper
                )
            })
    })
}

fn projection_clamp(model: &AssetModel, q: &JointConfig) -> f64 {
    model
        .joints
        .iter()
        .filter(|j| matches!(j.kind, JointKind::Revolute | JointKind::Prismatic))
        .filter_map(|j| {
            let l = j.limits?;
            let v = q.values.get(&j.name)?;
            Some((v - v.clamp(l.lower, l.upper)).abs())
        })
        .fold(0.0, f64::max)
}

/// Runs the whole pipeline for one asset. Errors are reserved for inputs
/// that cannot be read; every later failure ends up in the report.
pub fn refine_asset(
    input: &AssetInput,
    proposer: &dyn Proposer,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    let text = std::fs::read_to_string(&input.urdf).map_err(io_err(&input.urdf))?;
    let model = parse_urdf(&text).map_err(|source| PipelineError::Asset {
        path: input.urdf.display().to_string(),
        source,
    })?;
    let semantics = match &input.semantics {
        Some(p) => {
            let t = std::fs::read_to_string(p).map_err(io_err(p))?;
            parse_semantics(&t).map_err(|source| PipelineError::Asset {
                path: p.display().to_string(),
                source,
            })?
        }
        None => SemanticMap::default(),
    };
    let source_dir = input
        .urdf
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let mut store = MeshStore::new(&source_dir);
    store.preload(&model)?;
    let id = input.asset_id();
    let mut report = ReadinessReport::new(&id);
    report.prompt_alignment = input.prompt_alignment;

    let revised = if cfg.evaluate_only {
        model.clone()
    } else {
        let render = cfg.render.then(RenderOptions::default);
        let info = ExtractedInfo::extract(
            model.clone(),
            semantics.clone(),
            &store,
            input.guidance.clone(),
            render.as_ref(),
        )?;
        let overlay = proposer
            .propose_overlay(&info)
            .map_err(|e| format!("overlay proposal failed: {e}"))
            .and_then(|o| {
                validate_overlay(&o, &model).map_err(|e| format!("overlay rejected: {e}"))
            })
            .and_then(|(o, diags)| {
                let m = apply_overlay(&model, &o)
                    .map_err(|e| format!("overlay could not be applied: {e}"))?;
                Ok((o, diags, m))
            });
        match overlay {
            Ok((o, diags, m)) => {
                report.scale = o.scale();
                report.material_properties = o.global_modifications.material_properties.clone();
                report
                    .notes
                    .extend(diags.iter().map(|d| format!("{}: {}", d.path, d.message)));
                report.notes.extend(o.validation_notes.iter().cloned());
                m
            }
            Err(msg) => {
                report.notes.push(msg);
                report.classification = Classification::EstimationFailure;
                return Ok(PipelineOutput {
                    report,
                    model: None,
                    store,
                    source_dir,
                });
            }
        }
    };

    let mut q_vlm = JointConfig::zeros(&revised);
    if let Some(doc) = &revised.documented_initial_state {
        for (k, v) in doc {
            if q_vlm.values.contains_key(k) {
                q_vlm.set(k.clone(), *v);
            }
        }
    }
    report.initial_state = q_vlm.values.clone();

    let mut invalid = limits_inconsistent(&revised);
    let clamp = projection_clamp(&revised, &q_vlm);
    if invalid.is_none() && clamp > cfg.projection_tolerance {
        invalid = Some(format!(
            "initial state clamped by {clamp:.6} onto the joint limits"
        ));
    }
    if let Some(msg) = &invalid {
        report.notes.push(msg.clone());
    }

    let collision = CollisionModel::new(&revised, &store)?;
    report.notes.extend(
        collision
            .skipped
            .iter()
            .map(|s| format!("no collision hull for {s}")),
    );
    let env = RefineEnv {
        model: &revised,
        collision: &collision,
        store: Some(&store),
        semantics: Some(&semantics),
        asset_id: &id,
    };
    let hint = input.guidance.as_deref().unwrap_or("");
    let (q_final, trace) = if cfg.evaluate_only {
        let q = crate::asset::project_to_limits(&q_vlm, &revised);
        let phi = env.phi(&q);
        let trace = crate::protocol::RefineTrace {
            initial_q: q.values.clone(),
            initial_phi: phi,
            entries: Vec::new(),
            best_q: q.values.clone(),
            best_phi: phi,
            iterations: 0,
            query_count: 0,
            converged: phi <= cfg.refine.tolerance,
            proposer_failure: None,
        };
        (q, trace)
    } else {
        refine_state(&env, &q_vlm, hint, proposer, &cfg.refine)
    };
    let final_contacts = env.report(&q_final);
    report.penetration = Some(trace.best_phi);
    report.top_penetrations = final_contacts
        .per_pair_penetration
        .iter()
        .take(5)
        .map(|p| PairDepth {
            pair: p.pair.to_string(),
            depth: p.depth,
        })
        .collect();
    report.final_state = q_final.values.clone();
    report.query_count = trace.query_count;
    if let Some(f) = &trace.proposer_failure {
        report
            .notes
            .push(format!("proposer failed during refinement: {f}"));
    }
    let estimation_failure = trace.proposer_failure.is_some() && !trace.converged;

    let mut blew_up = false;
    let mut missing_inertial = false;
    match Simulator::from_store(&revised, &store, cfg.dynamics.clone())
        .and_then(|sim| simulate_passive(&sim, &q_final, cfg.t_set, cfg.t_test))
    {
        Ok((reference, traj)) => {
            match stability_metrics(&traj, &reference, &cfg.thresholds, Some(&revised)) {
                Ok(s) => report.stability = Some(s),
                Err(e) => report.notes.push(format!("stability: {e}")),
            }
        }
        Err(e @ DynError::Instability { .. }) => {
            blew_up = true;
            report.instability = Some(e.to_string());
        }
        Err(e) => {
            missing_inertial = matches!(e, DynError::MissingInertial { .. });
            report.notes.push(format!("simulation: {e}"));
        }
    }

    if let Some(s_ref) = input.reference_scale {
        match scale_deviation(report.scale, s_ref) {
            Ok(d) => report.scale_deviation = Some(d),
            Err(e) => report.notes.push(format!("scale deviation: {e}")),
        }
    }
    if let Some(r) = &input.reference_state {
        report.joint_deviation = Some(
            r.iter()
                .filter(|(k, _)| q_final.values.contains_key(*k))
                .map(|(k, v)| (k.clone(), joint_deviation(q_final.get(k), *v)))
                .collect(),
        );
    }
    report.classification = classify_failure(&FailureInputs {
        estimation_failure: estimation_failure || missing_inertial,
        invalid_joint_config: invalid.is_some(),
        penetration: trace.best_phi,
        tolerance: cfg.refine.tolerance,
        stability: report.stability.as_ref(),
        blew_up,
    });
    report.refinement = Some(trace);

    let mut out_model = revised;
    out_model.documented_initial_state = Some(q_final.values.clone());
    Ok(PipelineOutput {
        report,
        model: Some(out_model),
        store,
        source_dir,
    })
}

/// Per-asset outcome of a batch, keyed by asset id.
pub type BatchResult = Vec<(String, Result<PipelineOutput, PipelineError>)>;

/// Processes every input on a pool of `workers` threads. Results come back
/// sorted by asset id, whatever the completion order.
pub fn run_batch(
    inputs: &[AssetInput],
    proposer: &dyn Proposer,
    cfg: &PipelineConfig,
    workers: usize,
) -> Result<BatchResult, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let mut results: Vec<(String, Result<PipelineOutput, PipelineError>)> = pool.install(|| {
        inputs
            .par_iter()
            .map(|i| (i.asset_id(), refine_asset(i, proposer, cfg)))
            .collect()
    });
    results.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(results)
}

/// Mesh filenames that can be copied next to a revised URDF.
fn relative_mesh(name: &str) -> Option<&Path> {
    if name.contains("://") {
        return None;
    }
    let p = Path::new(name);
    p.components()
        .all(|c| matches!(c, Component::Normal(_)))
        .then_some(p)
}

/// Writes `<out>/<id>/<id>.urdf`, its relative meshes and `report.json`.
pub fn write_outputs(out_dir: &Path, output: &PipelineOutput) -> Result<(), PipelineError> {
    let id = &output.report.asset_id;
    let dir = out_dir.join(id);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    if let Some(model) = &output.model {
        let urdf = write_urdf(model).map_err(|source| PipelineError::Asset {
            path: id.clone(),
            source,
        })?;
        let path = dir.join(format!("{id}.urdf"));
        std::fs::write(&path, urdf).map_err(io_err(&path))?;
        for name in output.store.filenames() {
            if let Some(rel) = relative_mesh(name) {
                let src = output.source_dir.join(rel);
                let dst = dir.join(rel);
                if src.exists() {
                    if let Some(parent) = dst.parent() {
                        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
                    }
                    std::fs::copy(&src, &dst).map_err(io_err(&dst))?;
                }
            }
        }
    }
    let path = dir.join("report.json");
    std::fs::write(&path, output.report.to_json() + "\n").map_err(io_err(&path))?;
    Ok(())
}

/// One row per report: classification and the headline numbers.
pub fn aggregate_csv(reports: &[ReadinessReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "asset_id",
        "classification",
        "penetration",
        "d_pos",
        "d_ori",
        "oscillating_joints",
        "iterations",
        "query_count",
        "scale",
    ])
    .expect("in-memory write");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in reports {
        let s = r.stability.as_ref();
        w.write_record([
            r.asset_id.clone(),
            r.classification.to_string(),
            opt(r.penetration),
            opt(s.map(|s| s.d_pos)),
            opt(s.map(|s| s.d_ori)),
            s.map(|s| s.oscillating_joints.len().to_string())
                .unwrap_or_default(),
            r.refinement
                .as_ref()
                .map_or(0, |t| t.iterations)
                .to_string(),
            r.query_count.to_string(),
            r.scale.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

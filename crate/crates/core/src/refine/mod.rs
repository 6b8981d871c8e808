//! Closed-loop joint-state refinement and the end-to-end asset pipeline.

mod pipeline;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::protocol::{ProposalSource, RefineTrace, TraceEntry};
pub use pipeline::{
    aggregate_csv, refine_asset, run_batch, write_outputs, AssetInput, BatchResult, PipelineConfig,
    PipelineError, PipelineOutput,
};

use crate::asset::{project_to_limits, AssetModel, JointConfig, SemanticMap};
use crate::collision::{localize_focus_joints, CollisionModel, ContactReport};
use crate::mesh::MeshStore;
use crate::proposer::{Proposer, ProposerError, StateContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Penetration tolerance ε, m.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Perturbation half-width as a fraction of each joint's range.
    pub perturbation_scale: f64,
    pub perturbations: usize,
    pub grid_points_per_joint: usize,
    pub focus_cap: usize,
    /// Extra proposer queries after a rejected proposal before falling back.
    pub requeries: usize,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            tolerance: 0.002,
            max_iterations: 20,
            perturbation_scale: 0.02,
            perturbations: 8,
            grid_points_per_joint: 7,
            focus_cap: 8,
            requeries: 1,
            seed: 0,
        }
    }
}

/// What the refinement loop needs besides the proposer.
#[derive(Clone, Copy)]
pub struct RefineEnv<'a> {
    pub model: &'a AssetModel,
    pub collision: &'a CollisionModel,
    pub store: Option<&'a MeshStore>,
    pub semantics: Option<&'a SemanticMap>,
    /// Seeds the fallback perturbations.
    pub asset_id: &'a str,
}

impl RefineEnv<'_> {
    fn report(&self, q: &JointConfig) -> ContactReport {
        self.collision
            .contacts(self.model, q, &nalgebra::Isometry3::identity(), None)
    }

    fn phi(&self, q: &JointConfig) -> f64 {
        self.collision.self_penetration(self.model, q)
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf29ce484222325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100000001b3)
    })
}

fn fallback_rng(asset_id: &str, iteration: usize, seed: u64) -> ChaCha8Rng {
    let mix = fnv1a(asset_id) ^ (iteration as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ seed;
    ChaCha8Rng::seed_from_u64(mix)
}

fn joint_range(model: &AssetModel, joint: &str) -> Option<(f64, f64)> {
    model.joint(joint).and_then(|j| j.bounds())
}

/// Copy of `q` where only `focus` joints may take values from `cand`,
/// projected onto the limits.
fn restricted(
    model: &AssetModel,
    q: &JointConfig,
    cand: &JointConfig,
    focus: &[String],
) -> JointConfig {
    let mut out = q.clone();
    for j in focus {
        if let Some(&v) = cand.values.get(j) {
            out.set(j.clone(), v);
        }
    }
    let projected = project_to_limits(&out, model);
    let mut merged = q.clone();
    for j in focus {
        if let Some(&v) = projected.values.get(j) {
            merged.set(j.clone(), v);
        }
    }
    merged
}

/// A candidate found by the fallback search, with every evaluation made.
pub struct FallbackResult {
    pub found: Option<(JointConfig, f64, ProposalSource)>,
    pub evaluated: Vec<(JointConfig, f64, ProposalSource)>,
}

/// Random perturbations of the focus joints, then a per-joint grid over
/// the limits. Returns the first configuration strictly better than `phi_best`.
pub fn fallback_search(
    env: &RefineEnv,
    q_best: &JointConfig,
    phi_best: f64,
    focus: &[String],
    cfg: &RefineConfig,
    iteration: usize,
) -> FallbackResult {
    let model = env.model;
    let mut evaluated = Vec::new();
    let mut rng = fallback_rng(env.asset_id, iteration, cfg.seed);
    for _ in 0..cfg.perturbations {
        let mut cand = q_best.clone();
        for j in focus {
            if let Some((lo, hi)) = joint_range(model, j) {
                let step = rng.gen_range(-1.0..=1.0) * cfg.perturbation_scale * (hi - lo);
                cand.set(j.clone(), q_best.get(j) + step);
            }
        }
        let cand = restricted(model, q_best, &cand, focus);
        let phi = env.phi(&cand);
        evaluated.push((cand.clone(), phi, ProposalSource::Perturbation));
        if phi < phi_best {
            return FallbackResult {
                found: Some((cand, phi, ProposalSource::Perturbation)),
                evaluated,
            };
        }
    }
    let n = cfg.grid_points_per_joint;
    for j in focus {
        let Some((lo, hi)) = joint_range(model, j) else {
            continue;
        };
        let mut best: Option<(JointConfig, f64)> = None;
        for k in 0..n {
            let v = if n == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * k as f64 / (n - 1) as f64
            };
            let cand = restricted(model, q_best, &q_best.clone().with(j.clone(), v), focus);
            let phi = env.phi(&cand);
            evaluated.push((cand.clone(), phi, ProposalSource::Grid));
            if best.as_ref().is_none_or(|(_, b)| phi < *b) {
                best = Some((cand, phi));
            }
        }
        if let Some((cand, phi)) = best {
            if phi < phi_best {
                return FallbackResult {
                    found: Some((cand, phi, ProposalSource::Grid)),
                    evaluated,
                };
            }
        }
    }
    FallbackResult {
        found: None,
        evaluated,
    }
}

/// Refines `q_init` toward a collision-free state near it.
///
/// Returns the lowest-penetration configuration seen. A proposer that fails
/// hard is recorded in the trace and the fallbacks carry on alone.
pub fn refine_state(
    env: &RefineEnv,
    q_init: &JointConfig,
    hint: &str,
    proposer: &dyn Proposer,
    cfg: &RefineConfig,
) -> (JointConfig, RefineTrace) {
    let model = env.model;
    let mut full = JointConfig::zeros(model);
    for (k, v) in &q_init.values {
        if full.values.contains_key(k) {
            full.set(k.clone(), *v);
        }
    }
    let target = project_to_limits(&full, model);
    let mut q = target.clone();
    let mut phi = env.phi(&q);
    let mut trace = RefineTrace {
        initial_q: q.values.clone(),
        initial_phi: phi,
        entries: Vec::new(),
        best_q: BTreeMap::new(),
        best_phi: phi,
        iterations: 0,
        query_count: 0,
        converged: false,
        proposer_failure: None,
    };
    let mut proposer_alive = true;
    for iteration in 0..cfg.max_iterations {
        if phi <= cfg.tolerance {
            break;
        }
        trace.iterations = iteration + 1;
        let report = env.report(&q);
        let focus = localize_focus_joints(model, &report, cfg.focus_cap);
        let mut improved = false;
        let mut rejections = 0;
        while proposer_alive && rejections <= cfg.requeries {
            let ctx = StateContext {
                model,
                semantics: env.semantics,
                store: env.store,
                q: &q,
                target: &target,
                report: &report,
                focus: &focus,
                hint,
                iteration,
                rejections,
                tolerance: cfg.tolerance,
            };
            trace.query_count += 1;
            let update = match proposer.propose_state_update(&ctx) {
                Ok(u) => u,
                Err(ProposerError::NoProposal { .. }) => break,
                Err(e) => {
                    trace.proposer_failure = Some(e.to_string());
                    proposer_alive = false;
                    break;
                }
            };
            if update.approved {
                break;
            }
            let mut cand = q.clone();
            for (j, d) in &update.joint_deltas {
                if focus.contains(j) {
                    cand.set(j.clone(), q.get(j) + d);
                }
            }
            let cand = restricted(model, &q, &cand, &focus);
            let cand_phi = env.phi(&cand);
            let accepted = cand_phi < phi;
            trace.entries.push(TraceEntry {
                iteration,
                q: cand.values.clone(),
                phi: cand_phi,
                source: ProposalSource::Proposer,
                accepted,
                focus: focus.clone(),
            });
            if accepted {
                q = cand;
                phi = cand_phi;
                improved = true;
                break;
            }
            rejections += 1;
        }
        if improved {
            continue;
        }
        let fb = fallback_search(env, &q, phi, &focus, cfg, iteration);
        let found = fb.found.as_ref().map(|(c, _, _)| c.clone());
        for (cand, cand_phi, source) in fb.evaluated {
            let accepted = found.as_ref() == Some(&cand) && cand_phi < phi;
            trace.entries.push(TraceEntry {
                iteration,
                q: cand.values,
                phi: cand_phi,
                source,
                accepted,
                focus: focus.clone(),
            });
        }
        if let Some((cand, cand_phi, _)) = fb.found {
            q = cand;
            phi = cand_phi;
        }
    }
    trace.converged = phi <= cfg.tolerance;
    trace.best_q = q.values.clone();
    trace.best_phi = phi;
    (q, trace)
}

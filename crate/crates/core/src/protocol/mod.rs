//! Readiness metrics. Everything here is a pure function.

mod report;
mod reward;
mod tables;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use report::{
    classify_failure, Classification, FailureInputs, PairDepth, ProposalSource, ReadinessReport,
    RefineTrace, TraceEntry, REPORT_SCHEMA,
};
pub use reward::{reward_step, success_metric, RewardBreakdown, RewardObs, RewardWeights};
pub use tables::{read_rate_table, srcc_by_method, MethodSummary, RateRow};

use crate::asset::AssetModel;
use crate::dynamics::{DynState, Trajectory};

/// Deltas smaller than this do not count as direction changes.
pub const SIGN_CHANGE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("reference scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("no scores")]
    Empty,
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two samples, got {0}")]
    TooShort(usize),
    #[error("task `{0}` has no samples")]
    EmptyTask(String),
    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("rate table: {0}")]
    Table(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityThresholds {
    pub tau_pos: f64,
    pub tau_ori: f64,
    pub amp_revolute: f64,
    pub amp_prismatic: f64,
}

impl Default for StabilityThresholds {
    fn default() -> Self {
        StabilityThresholds {
            tau_pos: 1e-3,
            tau_ori: 1e-2,
            amp_revolute: 0.05,
            amp_prismatic: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oscillation {
    pub joint: String,
    pub amplitude: f64,
    pub reversals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityResult {
    pub d_pos: f64,
    pub d_ori: f64,
    pub pos_pass: bool,
    pub ori_pass: bool,
    pub oscillating_joints: Vec<Oscillation>,
}

impl StabilityResult {
    pub fn passed(&self) -> bool {
        self.pos_pass && self.ori_pass && self.oscillating_joints.is_empty()
    }
}

/// Number of direction reversals in a scalar series.
pub fn sign_changes(series: &[f64]) -> usize {
    let mut last = 0.0f64;
    let mut count = 0;
    for w in series.windows(2) {
        let d = w[1] - w[0];
        if d.abs() < SIGN_CHANGE_FLOOR {
            continue;
        }
        if last != 0.0 && d.signum() != last {
            count += 1;
        }
        last = d.signum();
    }
    count
}

/// Drift of the base from `reference` over the window, plus per-joint
/// oscillation. Prismatic joints in `model` use the prismatic amplitude.
pub fn stability_metrics(
    traj: &Trajectory,
    reference: &DynState,
    th: &StabilityThresholds,
    model: Option<&AssetModel>,
) -> Result<StabilityResult, ProtocolError> {
    if traj.samples.is_empty() {
        return Err(ProtocolError::EmptyTrajectory);
    }
    let x_ref = reference.base_pose.translation.vector;
    let r_ref = reference.base_pose.rotation;
    let mut d_pos = 0.0f64;
    let mut d_ori = 0.0f64;
    for s in &traj.samples {
        d_pos = d_pos.max((s.base_pose.translation.vector - x_ref).norm());
        d_ori = d_ori.max(r_ref.angle_to(&s.base_pose.rotation));
    }
    let mut series: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in &traj.samples {
        for (j, v) in &s.q.values {
            series.entry(j.as_str()).or_default().push(*v);
        }
    }
    let mut oscillating_joints = Vec::new();
    for (j, xs) in series {
        let prismatic = model
            .and_then(|m| m.joint(j))
            .is_some_and(|js| js.kind == crate::asset::JointKind::Prismatic);
        let eps = if prismatic {
            th.amp_prismatic
        } else {
            th.amp_revolute
        };
        let (lo, hi) = xs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                (a.min(x), b.max(x))
            });
        let amplitude = hi - lo;
        let reversals = sign_changes(&xs);
        if reversals >= 3 && amplitude > eps {
            oscillating_joints.push(Oscillation {
                joint: j.to_string(),
                amplitude,
                reversals,
            });
        }
    }
    Ok(StabilityResult {
        d_pos,
        d_ori,
        pos_pass: d_pos <= th.tau_pos,
        ori_pass: d_ori <= th.tau_ori,
        oscillating_joints,
    })
}

pub fn scale_deviation(s_cand: f64, s_ref: f64) -> Result<f64, ProtocolError> {
    if !(s_ref > 0.0) {
        return Err(ProtocolError::NonPositiveScale(s_ref));
    }
    Ok((s_cand - s_ref).abs() / s_ref)
}

pub fn joint_deviation(q_cand: f64, q_ref: f64) -> f64 {
    (q_cand - q_ref).abs()
}

pub fn prompt_alignment_mean(scores: &[f64]) -> Result<f64, ProtocolError> {
    if scores.is_empty() {
        return Err(ProtocolError::Empty);
    }
    if let Some(&bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(ProtocolError::ScoreOutOfRange(bad));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Correlation result; `Undefined` when either series has zero variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Srcc {
    Value(f64),
    Undefined,
}

impl Srcc {
    pub fn value(self) -> Option<f64> {
        match self {
            Srcc::Value(v) => Some(v),
            Srcc::Undefined => None,
        }
    }
}

impl fmt::Display for Srcc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Srcc::Value(v) => write!(f, "{v:.4}"),
            Srcc::Undefined => f.write_str("N/A"),
        }
    }
}

/// Pearson correlation of simulated against real success rates.
pub fn srcc(sim: &[f64], real: &[f64]) -> Result<Srcc, ProtocolError> {
    if sim.len() != real.len() {
        return Err(ProtocolError::LengthMismatch(sim.len(), real.len()));
    }
    if sim.len() < 2 {
        return Err(ProtocolError::TooShort(sim.len()));
    }
    let n = sim.len() as f64;
    let ms = sim.iter().sum::<f64>() / n;
    let mr = real.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in sim.iter().zip(real) {
        sxy += (x - ms) * (y - mr);
        sxx += (x - ms).powi(2);
        syy += (y - mr).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Srcc::Undefined);
    }
    Ok(Srcc::Value((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

/// Mean over tasks of per-task means, and sqrt(Σ SE_t²)/|T| where SE_t is
/// the sample standard deviation over sqrt(n) (0 for a single sample).
pub fn realism_mean(per_task: &BTreeMap<String, Vec<f64>>) -> Result<(f64, f64), ProtocolError> {
    if per_task.is_empty() {
        return Err(ProtocolError::Empty);
    }
    let mut sum = 0.0;
    let mut se2 = 0.0;
    for (task, xs) in per_task {
        if xs.is_empty() {
            return Err(ProtocolError::EmptyTask(task.clone()));
        }
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        sum += m;
        if xs.len() > 1 {
            let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            se2 += var / n;
        }
    }
    let t = per_task.len() as f64;
    Ok((sum / t, se2.sqrt() / t))
}

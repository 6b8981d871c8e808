use serde::{Deserialize, Serialize};

use super::ProtocolError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w_reach: f64,
    pub w_reach_xy: f64,
    pub w_joint: f64,
    pub sigma_reach: f64,
    pub sigma_reach_xy: f64,
    /// Proximity gate for the joint term, m.
    pub delta: f64,
    pub alpha: f64,
    pub lambda_grip: f64,
    pub lambda_orient: f64,
    pub lambda_xy: f64,
    pub dt: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_reach: 1.0,
            w_reach_xy: 1.0,
            w_joint: 2.0,
            sigma_reach: 0.1,
            sigma_reach_xy: 0.1,
            delta: 0.1,
            alpha: 5.0,
            lambda_grip: 0.1,
            lambda_orient: 0.1,
            lambda_xy: 0.1,
            dt: 1.0 / 60.0,
        }
    }
}

/// One control step. Joint vectors are normalized by their limits.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardObs {
    pub p_ee: [f64; 3],
    pub p_obj: [f64; 3],
    pub x: Vec<f64>,
    pub x_target: Vec<f64>,
    /// Gripper closure in [0, 1].
    pub gripper: f64,
    /// End-effector z axis, unit length.
    pub z_ee: [f64; 3],
}

/// Unscaled terms (penalties negative) and the Δt-scaled total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub reach: f64,
    pub reach_xy: f64,
    pub joint: f64,
    pub grip_penalty: f64,
    pub orient_penalty: f64,
    pub xy_penalty: f64,
    pub total: f64,
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn reward_step(obs: &RewardObs, w: &RewardWeights) -> Result<RewardBreakdown, ProtocolError> {
    if obs.x.len() != obs.x_target.len() {
        return Err(ProtocolError::LengthMismatch(
            obs.x.len(),
            obs.x_target.len(),
        ));
    }
    let dx = obs.p_ee[0] - obs.p_obj[0];
    let dy = obs.p_ee[1] - obs.p_obj[1];
    let dz = obs.p_ee[2] - obs.p_obj[2];
    let d_xy = (dx * dx + dy * dy).sqrt();
    let d = (d_xy * d_xy + dz * dz).sqrt();
    let reach = w.w_reach * (1.0 - (d / w.sigma_reach).tanh());
    let reach_xy = w.w_reach_xy * (1.0 - (d_xy / w.sigma_reach_xy).tanh());
    let joint = if d < w.delta {
        w.w_joint * (-w.alpha * l1(&obs.x, &obs.x_target)).exp()
    } else {
        0.0
    };
    let grip_penalty = -w.lambda_grip * obs.gripper;
    // ⟨z_ee, (0, 0, −1)⟩ = −z_ee.z
    let orient_penalty = -w.lambda_orient * (1.0 + obs.z_ee[2]);
    let xy_penalty = -w.lambda_xy * d_xy;
    let total = w.dt * (reach + reach_xy + joint + grip_penalty + orient_penalty + xy_penalty);
    Ok(RewardBreakdown {
        reach,
        reach_xy,
        joint,
        grip_penalty,
        orient_penalty,
        xy_penalty,
        total,
    })
}

/// Normalized progress toward the target state, clipped to [0, 1].
pub fn success_metric(
    x_t: &[f64],
    x0: &[f64],
    x_target: &[f64],
    eps: f64,
) -> Result<f64, ProtocolError> {
    if !(eps > 0.0) {
        return Err(ProtocolError::NonPositiveEpsilon(eps));
    }
    if x_t.len() != x_target.len() {
        return Err(ProtocolError::LengthMismatch(x_t.len(), x_target.len()));
    }
    if x0.len() != x_target.len() {
        return Err(ProtocolError::LengthMismatch(x0.len(), x_target.len()));
    }
    let norm = l1(x0, x_target).max(eps);
    Ok((1.0 - l1(x_t, x_target) / norm).clamp(0.0, 1.0))
}

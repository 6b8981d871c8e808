use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::OverlayError;
use crate::asset::Inertia;

/// Tolerance for treating an input tensor as symmetric.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// m = v · ρ · s³ · η.
pub fn estimate_link_mass(
    volume: f64,
    density: f64,
    scale: f64,
    hollow: f64,
) -> Result<f64, OverlayError> {
    for (name, v) in [
        ("volume", volume),
        ("density", density),
        ("scale", scale),
        ("hollow", hollow),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(OverlayError::invalid(
                name,
                format!("must be positive, got {v}"),
            ));
        }
    }
    if hollow > 1.0 {
        return Err(OverlayError::invalid(
            "hollow",
            format!("must not exceed 1, got {hollow}"),
        ));
    }
    Ok(volume * density * scale.powi(3) * hollow)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    /// Extents along x, y, z.
    Box { w: f64, h: f64, d: f64 },
    /// Axis along z.
    Cylinder { r: f64, h: f64 },
}

/// Solid-body inertia about the center of mass.
pub fn shape_inertia(mass: f64, shape: Shape) -> Result<Inertia, OverlayError> {
    if !(mass.is_finite() && mass > 0.0) {
        return Err(OverlayError::invalid(
            "mass",
            format!("must be positive, got {mass}"),
        ));
    }
    match shape {
        Shape::Box { w, h, d } => {
            if !(w > 0.0 && h > 0.0 && d > 0.0) || ![w, h, d].iter().all(|v| v.is_finite()) {
                return Err(OverlayError::invalid(
                    "shape",
                    format!("box dims must be positive, got ({w}, {h}, {d})"),
                ));
            }
            let k = mass / 12.0;
            Ok(Inertia::diagonal(
                k * (h * h + d * d),
                k * (w * w + d * d),
                k * (w * w + h * h),
            ))
        }
        Shape::Cylinder { r, h } => {
            if !(r > 0.0 && h >= 0.0 && r.is_finite() && h.is_finite()) {
                return Err(OverlayError::invalid(
                    "shape",
                    format!("cylinder needs r > 0, h >= 0, got ({r}, {h})"),
                ));
            }
            let side = mass * (3.0 * r * r + h * h) / 12.0;
            Ok(Inertia::diagonal(side, side, 0.5 * mass * r * r))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InertiaCheck {
    pub spd_ok: bool,
    pub triangle_ok: bool,
    pub offdiag_dropped: bool,
    /// Eigenvalues of the input tensor, ascending.
    pub principal_moments: [f64; 3],
    /// Input with every off-diagonal that broke |I_ab| <= sqrt(I_aa·I_bb) set to zero.
    pub corrected: Inertia,
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn principal_moments(m: &Matrix3<f64>) -> [f64; 3] {
    let eig = SymmetricEigen::new(*m);
    let mut ev = [eig.eigenvalues[0], eig.eigenvalues[1], eig.eigenvalues[2]];
    ev.sort_by(f64::total_cmp);
    ev
}

/// Feasibility of a rotational inertia tensor.
///
/// SPD and triangle tests use the input tensor; the Cauchy–Schwarz pass
/// reports and zeroes off-diagonals that exceed the geometric mean of
/// their diagonal pair.
pub fn check_inertia(m: &Matrix3<f64>) -> Result<InertiaCheck, OverlayError> {
    let asym = (m - m.transpose()).amax();
    if !asym.is_finite() || asym > SYMMETRY_TOLERANCE {
        return Err(OverlayError::invalid(
            "inertia",
            format!("tensor is not symmetric (max |I - I^T| = {asym})"),
        ));
    }
    let sym = (m + m.transpose()) * 0.5;
    let ev = principal_moments(&sym);
    let spd_ok = ev[0] > 0.0;
    let slack = 1e-12 * ev[2].abs();
    let triangle_ok = ev[0] + ev[1] >= ev[2] - slack
        && ev[1] + ev[2] >= ev[0] - slack
        && ev[0] + ev[2] >= ev[1] - slack;

    let mut corrected = sym;
    let mut dropped = false;
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let bound = (sym[(a, a)] * sym[(b, b)]).max(0.0).sqrt();
        if sym[(a, b)].abs() > bound {
            corrected[(a, b)] = 0.0;
            corrected[(b, a)] = 0.0;
            dropped = true;
        }
    }
    Ok(InertiaCheck {
        spd_ok,
        triangle_ok,
        offdiag_dropped: dropped,
        principal_moments: ev,
        corrected: Inertia::from_matrix(&corrected),
    })
}

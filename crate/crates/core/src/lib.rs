//! Interaction-readiness synthesis and evaluation for articulated assets.

pub mod asset;
pub mod collision;
pub mod dynamics;
pub mod mesh;
pub mod overlay;
pub mod proposer;
pub mod protocol;
pub mod refine;

use std::path::{Path, PathBuf};

use artready_core::dynamics::DynParams;
use artready_core::proposer::HeuristicConfig;
use artready_core::protocol::{RewardWeights, StabilityThresholds};
use artready_core::refine::{AssetInput, PipelineConfig, RefineConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProposerKind {
    #[default]
    Heuristic,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposerConfig {
    pub kind: ProposerKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub timeout_s: u64,
    pub max_retries: usize,
    /// Concurrent requests allowed across all workers.
    pub max_in_flight: usize,
}

impl Default for ProposerConfig {
    fn default() -> Self {
        ProposerConfig {
            kind: ProposerKind::Heuristic,
            endpoint: None,
            model: None,
            timeout_s: 120,
            max_retries: 2,
            max_in_flight: 4,
        }
    }
}

/// Everything a run can be configured with. Loaded from TOML; flags win.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub thresholds: StabilityThresholds,
    pub dynamics: DynParams,
    pub t_set: f64,
    pub t_test: f64,
    pub refine: RefineConfig,
    pub proposer: ProposerConfig,
    pub heuristic: HeuristicConfig,
    pub reward: RewardWeights,
    pub workers: usize,
    pub render: bool,
    pub projection_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        RunConfig {
            thresholds: p.thresholds,
            dynamics: p.dynamics,
            t_set: p.t_set,
            t_test: p.t_test,
            refine: p.refine,
            proposer: ProposerConfig::default(),
            heuristic: HeuristicConfig::default(),
            reward: RewardWeights::default(),
            workers: 1,
            render: false,
            projection_tolerance: p.projection_tolerance,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), String> {
        let positive = [
            ("thresholds.tau_pos", self.thresholds.tau_pos),
            ("thresholds.tau_ori", self.thresholds.tau_ori),
            ("thresholds.amp_revolute", self.thresholds.amp_revolute),
            ("thresholds.amp_prismatic", self.thresholds.amp_prismatic),
            ("dynamics.dt", self.dynamics.dt),
            ("t_set", self.t_set),
            ("t_test", self.t_test),
            ("refine.tolerance", self.refine.tolerance),
            ("refine.perturbation_scale", self.refine.perturbation_scale),
            ("reward.dt", self.reward.dt),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.refine.max_iterations == 0
            || self.refine.grid_points_per_joint == 0
            || self.refine.focus_cap == 0
        {
            return Err("refine counts must be positive".into());
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            refine: self.refine.clone(),
            dynamics: self.dynamics.clone(),
            t_set: self.t_set,
            t_test: self.t_test,
            thresholds: self.thresholds,
            render: self.render || self.proposer.kind == ProposerKind::Remote,
            projection_tolerance: self.projection_tolerance,
            evaluate_only: false,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    #[serde(default)]
    asset: Vec<AssetInput>,
}

/// Reads `[[asset]]` records; relative paths resolve against the manifest.
pub fn load_manifest(path: &Path) -> Result<Vec<AssetInput>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if m.asset.is_empty() {
        return Err(format!("{}: no [[asset]] entries", path.display()));
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let rel = |p: &PathBuf| {
        if p.is_absolute() {
            p.clone()
        } else {
            base.join(p)
        }
    };
    Ok(m.asset
        .into_iter()
        .map(|mut a| {
            a.urdf = rel(&a.urdf);
            a.semantics = a.semantics.as_ref().map(rel);
            a
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let text = toml::to_string(&RunConfig::default()).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_file_overrides() {
        let cfg = RunConfig::parse(
            "workers = 3\n[refine]\ntolerance = 0.001\n[proposer]\nkind = \"remote\"\n",
        )
        .unwrap();
        assert_eq!(cfg.workers, 3);
        assert_eq!(cfg.refine.tolerance, 0.001);
        assert_eq!(cfg.refine.max_iterations, 20);
        assert_eq!(cfg.proposer.kind, ProposerKind::Remote);
        assert!(cfg.pipeline().render);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::parse("t_set = -1.0").is_err());
        assert!(RunConfig::parse("unknown_key = 1").is_err());
    }

    #[test]
    fn manifest_paths_are_relative_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.toml");
        std::fs::write(
            &path,
            "[[asset]]\nurdf = \"a/x.urdf\"\nsemantics = \"a/s.txt\"\nguidance = \"closed\"\n",
        )
        .unwrap();
        let inputs = load_manifest(&path).unwrap();
        assert_eq!(inputs[0].urdf, dir.path().join("a/x.urdf"));
        assert_eq!(
            inputs[0].semantics.as_deref(),
            Some(dir.path().join("a/s.txt").as_path())
        );
        assert_eq!(inputs[0].guidance.as_deref(), Some("closed"));
    }
}

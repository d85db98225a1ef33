//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use raybundle::losses::LossArm;
use raybundle::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// File name of the resolved configuration inside a run directory.
pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Marching-cubes cells per axis over the unit cube `[-1, 1]³`.
    pub mesh_resolution: usize,
    /// Points sampled on each surface for Chamfer.
    pub chamfer_points: usize,
    /// Seed for surface sampling.
    pub seed: u64,
    /// Render held-out views and report PSNR.
    pub psnr: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mesh_resolution: 128,
            chamfer_points: 100_000,
            seed: 0,
            psnr: true,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.mesh_resolution < 2 {
            return Err(CliError::usage("eval.mesh_resolution must be at least 2"));
        }
        if self.chamfer_points == 0 {
            return Err(CliError::usage("eval.chamfer_points must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Worker threads; all cores when unset.
    pub threads: Option<usize>,
    pub deterministic: bool,
    /// Applied on top of `train.weights` when set.
    pub loss_arm: Option<LossArm>,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_toml()).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    /// Folds `loss_arm` into the training weights and validates everything.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        if let Some(arm) = self.loss_arm {
            let (w, o) = arm.configure(&self.train.weights);
            self.train.weights = w;
            self.train.loss = o;
        }
        if self.threads == Some(0) {
            return Err(CliError::usage("threads must be at least 1"));
        }
        self.train.validate().map_err(CliError::from)?;
        self.eval.validate()?;
        Ok(self)
    }

    pub fn scene_dir(&self) -> Result<&Path, CliError> {
        self.scene
            .as_deref()
            .ok_or_else(|| CliError::usage("no scene given (use --scene or `scene` in the config)"))
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::usage("no output directory given (use --out or `out` in the config)"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use raybundle::geometry::PatchSize;

    #[test]
    fn resolved_config_round_trips_with_the_same_hash() {
        let mut cfg = RunConfig {
            scene: Some("scene".into()),
            loss_arm: Some(LossArm::MeanVarL1),
            ..RunConfig::default()
        };
        cfg.train.iterations = Some(7);
        cfg.train.patch_rect = Some(PatchSize::new(5, 7));
        cfg.train.sampling.guided = None;
        cfg.train.lr = 1.0 / 3.0;
        let cfg = cfg.resolve().unwrap();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.train.hash(), cfg.train.hash());
        assert_eq!(back.clone().resolve().unwrap(), back);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = toml::from_str::<RunConfig>("[train]\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }
}

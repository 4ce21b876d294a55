//! TOML run configuration, one section per command.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use hsi_pest::detect::{IOU_THRESHOLD, MIN_OBJECT_PIXELS};
use hsi_pest::pipeline::{GridSettings, MaskConfig, ReproConfig, SampleSource, UnetRun};
use hsi_pest::sampling::SelectOptions;
use hsi_pest::synth::CorpusSpec;

use crate::UserError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of the seed hierarchy.
    pub seed: u64,
    pub paths: Paths,
    pub synth: CorpusSpec,
    pub mask: MaskConfig,
    pub sample: SampleSection,
    pub train: TrainSection,
    pub unet: UnetRun,
    pub evaluate: EvaluateSection,
    pub repro: ReproSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let r = ReproConfig::default();
        Self {
            seed: r.seed,
            paths: Paths::default(),
            synth: r.corpus,
            mask: r.mask,
            sample: SampleSection::default(),
            train: TrainSection::default(),
            unet: UnetRun::default(),
            evaluate: EvaluateSection::default(),
            repro: ReproSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Cubes and ground-truth masks.
    pub corpus: PathBuf,
    /// Everything a command writes.
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { corpus: "corpus".into(), output: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSection {
    #[serde(flatten)]
    pub options: SelectOptions,
    pub source: SampleSource,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self { options: SelectOptions::default(), source: SampleSource::Score }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    #[serde(flatten)]
    pub grid: GridSettings,
    pub train_groups: Vec<u8>,
    pub test_groups: Vec<u8>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { grid: GridSettings::default(), train_groups: vec![1, 2, 3], test_groups: vec![4, 5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub min_pixels: usize,
    pub iou_threshold: f64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self { min_pixels: MIN_OBJECT_PIXELS, iou_threshold: IOU_THRESHOLD }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReproSection {
    pub dense: bool,
    /// Train the U-Nets of the `[unet]` section as well.
    pub unet: bool,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| UserError(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| UserError(format!("config {}: {}", path.display(), e.message())))?;
        Ok(cfg)
    }

    /// The whole-pipeline view used by `repro` and for validation.
    pub fn repro(&self) -> ReproConfig {
        ReproConfig {
            seed: self.seed,
            corpus: self.synth.clone(),
            mask: self.mask.clone(),
            sample: self.sample.options,
            sample_source: self.sample.source,
            train_groups: self.train.train_groups.clone(),
            test_groups: self.train.test_groups.clone(),
            grid: self.train.grid.clone(),
            dense: self.repro.dense,
            min_pixels: self.evaluate.min_pixels,
            iou_threshold: self.evaluate.iou_threshold,
            unet: self.repro.unet.then(|| self.unet.clone()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.repro().validate().map_err(|e| UserError(e.to_string()))?;
        for p in &self.train.grid.preprocess {
            p.validate().map_err(|e| UserError(e.to_string()))?;
        }
        Ok(())
    }
}

/// Fails with a user error unless `path` exists.
pub fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(UserError(format!("{what} {} does not exist", path.display())).into())
    }
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.repro(), ReproConfig::default());
    }

    #[test]
    fn sections_override_defaults() {
        let cfg: RunConfig = toml::from_str(
            r#"
            seed = 7
            [paths]
            corpus = "c"
            [synth.scene]
            noise_sigma = 0.02
            [sample]
            n = 50
            source = "truth"
            [train]
            lv_max = 4
            k_grid = [10, 20]
            preprocess = [{ steps = [{ step = "snv" }, { step = "mean_center" }] }]
            [unet.train]
            epochs = 3
            [evaluate]
            iou_threshold = 0.5
            [repro]
            unet = true
            "#,
        )
        .unwrap();
        let r = cfg.repro();
        assert_eq!(r.seed, 7);
        assert_eq!(cfg.paths.corpus, PathBuf::from("c"));
        assert_eq!(r.corpus.scene.noise_sigma, 0.02);
        assert_eq!(r.corpus.scene.height, 64);
        assert_eq!(r.sample.n, 50);
        assert_eq!(r.sample.n_pc, 3);
        assert_eq!(r.sample_source, SampleSource::Truth);
        assert_eq!(r.grid.lv_max, 4);
        assert_eq!(r.grid.k_grid, Some(vec![10, 20]));
        assert_eq!(r.grid.preprocess.len(), 1);
        assert_eq!(r.iou_threshold, 0.5);
        assert_eq!(r.unet.unwrap().train.epochs, 3);
    }

    #[test]
    fn validation_catches_fractions() {
        let mut cfg = RunConfig::default();
        cfg.evaluate.iou_threshold = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.mask.dark_threshold = 0.0;
        assert!(cfg.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[paths]\ncorpsu = \"x\"").is_err());
    }
}

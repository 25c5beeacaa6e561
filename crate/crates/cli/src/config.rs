//! One TOML document holding every stage's parameters.

use std::path::Path;

use anyhow::{Context, Result};
use dlvgrasp::classifier::{Architecture, TrainConfig};
use dlvgrasp::dlv::{DepthSampling, SuppressionConfig, VolumeSpec};
use dlvgrasp::features::{FeatureConfig, GripperParams};
use dlvgrasp::lf_geometry::PatchSpec;
use dlvgrasp::plenoptic_io::CameraIntrinsics;
use dlvgrasp::search::DiffusionConfig;
use dlvgrasp::synth::{scenes, CameraRig, OracleConfig, TrainingDraw};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    pub intrinsics: CameraIntrinsics,
    pub grid_extent: [usize; 2],
    pub target: [f64; 3],
    pub distance: f64,
    pub elevation_deg: f64,
    pub view_count: usize,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics {
                focal_length_px: 150.0,
                principal_point: [63.5, 63.5],
                image_size: [128, 128],
                aperture_baseline: 8.0,
            },
            grid_extent: [5, 5],
            target: [0.0, 0.0, 0.05],
            distance: 0.5,
            elevation_deg: 50.0,
            view_count: 4,
        }
    }
}

impl RigConfig {
    pub fn rig(&self) -> CameraRig {
        scenes::ring_rig(
            self.intrinsics,
            self.grid_extent,
            self.target,
            self.distance,
            self.elevation_deg,
            self.view_count,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureKind {
    #[default]
    LeNet,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub architecture: ArchitectureKind,
    pub train: TrainConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            architecture: ArchitectureKind::LeNet,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub diffusion: DiffusionConfig,
    pub top_k: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            diffusion: DiffusionConfig::default(),
            top_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Rayon worker count; `None` uses the available parallelism.
    pub workers: Option<usize>,
    pub seed: u64,
    pub rig: RigConfig,
    pub volume: VolumeSpec,
    pub hypothesis_count: usize,
    pub patch: PatchSpec,
    pub sampling: DepthSampling,
    pub suppression: SuppressionConfig,
    pub gripper: GripperParams,
    pub features: FeatureConfig,
    pub classifier: ClassifierConfig,
    pub search: SearchConfig,
    pub oracle: OracleConfig,
    pub training_draw: TrainingDraw,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            workers: None,
            seed: 0,
            rig: RigConfig::default(),
            volume: VolumeSpec {
                origin: [-0.12, -0.08, -0.03],
                extent: [0.24, 0.16, 0.18],
                resolution: [48, 32, 36],
            },
            hypothesis_count: 48,
            patch: PatchSpec::default(),
            sampling: DepthSampling::default(),
            suppression: SuppressionConfig::default(),
            gripper: GripperParams::default(),
            features: FeatureConfig::default(),
            classifier: ClassifierConfig::default(),
            search: SearchConfig::default(),
            oracle: OracleConfig::default(),
            training_draw: TrainingDraw::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == Some(0) {
            anyhow::bail!("invalid config: workers must be at least 1");
        }
        if self.rig.view_count == 0 {
            anyhow::bail!("invalid config: rig.view_count must be at least 1");
        }
        if self.hypothesis_count < 2 {
            anyhow::bail!("invalid config: hypothesis_count must be at least 2");
        }
        if self.search.top_k == 0 {
            anyhow::bail!("invalid config: search.top_k must be at least 1");
        }
        self.rig.intrinsics.validate()?;
        self.volume.validate()?;
        self.patch.validate()?;
        self.suppression.validate()?;
        self.gripper.validate()?;
        self.features.validate()?;
        self.architecture().validate()?;
        self.classifier.train.validate()?;
        self.search.diffusion.validate()?;
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        let input_size = self.features.target_size;
        match self.classifier.architecture {
            ArchitectureKind::LeNet => Architecture::LeNet { input_size },
            ArchitectureKind::Logistic => Architecture::Logistic { input_size },
        }
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

//! Run configuration, stored as JSON.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VlqaError};
use crate::synth::FEATURE_DIMS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionMode {
    /// Pooled visual and question vectors, concatenated.
    #[serde(rename = "concat")]
    Concat,
    /// Context-gated convex mix of the pooled visual and question vectors.
    #[serde(rename = "scalar", alias = "scalar-attn")]
    Scalar,
    /// Cross-attention, adaptive fusion, semantic attention and gating.
    #[serde(rename = "hier", alias = "hierarchical")]
    Hier,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::Concat, FusionMode::Scalar, FusionMode::Hier];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Concat => "concat",
            FusionMode::Scalar => "scalar",
            FusionMode::Hier => "hier",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMode {
    type Err = VlqaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(FusionMode::Concat),
            "scalar" | "scalar-attn" => Ok(FusionMode::Scalar),
            "hier" | "hierarchical" => Ok(FusionMode::Hier),
            other => Err(VlqaError::Config(format!(
                "unknown fusion mode {other:?} (expected concat, scalar or hier)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub scales: usize,
    /// Raw feature width per scale.
    pub k: Vec<usize>,
    pub channels: usize,
    pub d: usize,
    pub d_answer: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            scales: FEATURE_DIMS.len(),
            k: FEATURE_DIMS.to_vec(),
            channels: 6,
            d: 32,
            d_answer: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Rescale each batch gradient to at most this global Euclidean norm.
    pub clip_norm: Option<f64>,
    /// L2 penalty coefficient, added to each gradient as `weight_decay · w`.
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            momentum: 0.9,
            batch_size: 8,
            epochs: 50,
            clip_norm: Some(2.0),
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub dir: PathBuf,
    pub train_count: usize,
    pub test_count: usize,
    pub noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            train_count: 2000,
            test_count: 500,
            noise: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// Evaluate knockouts with the full model's weights instead of retraining.
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub fusion: FusionMode,
    pub dims: Dims,
    /// Task-mismatch penalty weight of the alignment score.
    pub gamma: f64,
    pub refine_rounds: usize,
    pub optim: OptimConfig,
    pub data: DataConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            fusion: FusionMode::Hier,
            dims: Dims::default(),
            gamma: 0.5,
            refine_rounds: 2,
            optim: OptimConfig::default(),
            data: DataConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        if d.scales == 0 || d.k.len() != d.scales {
            return Err(VlqaError::Config(format!(
                "dims.k lists {} widths for {} scales",
                d.k.len(),
                d.scales
            )));
        }
        for (name, v) in [("channels", d.channels), ("d", d.d), ("d_answer", d.d_answer)] {
            if v == 0 {
                return Err(VlqaError::Config(format!("dims.{name} must be positive")));
            }
        }
        if d.k.contains(&0) {
            return Err(VlqaError::Config("dims.k entries must be positive".into()));
        }
        if self.refine_rounds == 0 {
            return Err(VlqaError::Config("refine_rounds must be at least 1".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(VlqaError::Config(format!("gamma {} must be >= 0", self.gamma)));
        }
        let o = &self.optim;
        if !(o.lr >= 0.0) || !o.lr.is_finite() {
            return Err(VlqaError::Config(format!("optim.lr {} must be finite and >= 0", o.lr)));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(VlqaError::Config(format!("optim.momentum {} outside [0, 1)", o.momentum)));
        }
        if let Some(c) = o.clip_norm {
            if !(c > 0.0) || !c.is_finite() {
                return Err(VlqaError::Config(format!("optim.clip_norm {c} must be positive")));
            }
        }
        if !(o.weight_decay >= 0.0) || !o.weight_decay.is_finite() {
            return Err(VlqaError::Config(format!("optim.weight_decay {} must be >= 0", o.weight_decay)));
        }
        if o.batch_size == 0 {
            return Err(VlqaError::Config("optim.batch_size must be positive".into()));
        }
        if !(self.data.noise >= 0.0) || !self.data.noise.is_finite() {
            return Err(VlqaError::Config(format!("data.noise {} must be >= 0", self.data.noise)));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VlqaError::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| VlqaError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| VlqaError::io(path, e))
    }
}

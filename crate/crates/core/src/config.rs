//! Run configuration: one TOML document with a section per module.
//!
//! Unknown keys are rejected. [`RunConfig::canonical`] re-serializes with
//! every default filled in; that text is echoed into each run directory
//! and loads back to the same value.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::InferenceConfig;
use crate::loss::LossKind;
use crate::model::{BranchKind, ModelConfig};
use crate::phantom::PhantomSpec;
use crate::sampler::SamplerConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSection {
    /// Number of volumes the `phantom` command writes; volume `i` uses
    /// seed `spec.seed + i`.
    pub count: usize,
    pub spec: PhantomSpec,
}

impl Default for PhantomSection {
    fn default() -> Self {
        Self {
            count: 4,
            spec: PhantomSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Label used for this run in summary tables.
    pub name: String,
    pub seed: u64,
    pub deterministic: bool,
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub phantom: PhantomSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "ynetr".into(),
            seed: 0,
            deterministic: true,
            model: ModelConfig::default(),
            sampler: SamplerConfig::default(),
            train: TrainConfig::default(),
            inference: InferenceConfig::default(),
            phantom: PhantomSection::default(),
        }
    }
}

impl RunConfig {
    /// Desk-scale preset: 32³ windows with the tiny model.
    pub fn tiny() -> Self {
        Self {
            model: ModelConfig::tiny(),
            sampler: SamplerConfig {
                window: [32, 32, 32],
                ..SamplerConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let cfg = cfg.normalized();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn normalized(mut self) -> Self {
        self.model = self.model.normalized();
        self
    }

    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.sampler.validate()?;
        self.train.validate()?;
        self.inference.validate()?;
        self.phantom.spec.validate()?;
        let [wx, wy, wz] = self.sampler.window;
        if self.model.input_dims != [wz, wy, wx] {
            return Err(Error::Config(format!(
                "sampler.window {:?} is (x, y, z) and must be model.input_dims {:?} reversed",
                self.sampler.window, self.model.input_dims
            )));
        }
        Ok(())
    }

    /// Training settings with the run-level seed and flag applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            deterministic: self.deterministic,
            ..self.train.clone()
        }
    }
}

/// Names of the built-in ablation variants.
pub const ABLATION_VARIANTS: [&str; 8] = [
    "cnn-cnn",
    "lf-transformer-hf-cnn",
    "lf-cnn-hf-transformer",
    "transformer-p32",
    "transformer-p16",
    "loss-dice",
    "loss-ce",
    "loss-dice-ce",
];

/// Apply an ablation variant on top of `base`: encoder families and patch
/// size for the architecture variants, loss kind for the loss variants.
pub fn apply_variant(base: &RunConfig, variant: &str) -> Result<RunConfig> {
    let mut c = base.clone();
    let branches = |c: &mut RunConfig, lf, hf| {
        c.model.lf_branch = lf;
        c.model.hf_branch = hf;
    };
    use BranchKind::{Cnn, Transformer};
    match variant {
        "cnn-cnn" => branches(&mut c, Cnn, Cnn),
        "lf-transformer-hf-cnn" => branches(&mut c, Transformer, Cnn),
        "lf-cnn-hf-transformer" => branches(&mut c, Cnn, Transformer),
        "transformer-p32" => {
            branches(&mut c, Transformer, Transformer);
            c.model.patch_size = 32;
        }
        "transformer-p16" => {
            branches(&mut c, Transformer, Transformer);
            c.model.patch_size = 16;
        }
        "loss-dice" => c.train.loss.kind = LossKind::Dice,
        "loss-ce" => c.train.loss.kind = LossKind::Ce,
        "loss-dice-ce" => c.train.loss.kind = LossKind::DiceCe,
        other => {
            return Err(Error::Config(format!(
                "unknown variant `{other}`; expected one of {}",
                ABLATION_VARIANTS.join(", ")
            )))
        }
    }
    c.name = variant.to_string();
    c.validate()?;
    Ok(c)
}

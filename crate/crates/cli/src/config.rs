//! Run configuration: defaults, then a JSON file, then command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use skinaux_core::imaging::PreprocessConfig;
use skinaux_core::metadata::{ImputeMode, SplitConfig};
use skinaux_core::model::ModelConfig;
use skinaux_core::synth::SynthConfig;
use skinaux_core::training::{LossConfig, TrainConfig};
use skinaux_core::Error;

use crate::CliError;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

/// Everything a subcommand needs. Paths left unset fall back to the
/// conventional layout under `data_dir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed; overrides every component seed when set on the command line.
    pub seed: u64,
    pub data_dir: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    /// Image folder, relative to `data_dir` unless absolute.
    pub images: PathBuf,
    pub split_file: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub paper_scale: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub preprocess: PreprocessConfig,
    pub split: SplitConfig,
    pub impute: ImputeMode,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let seed = 0;
        RunConfig {
            seed,
            data_dir: None,
            metadata: None,
            schema: None,
            images: PathBuf::from("images"),
            split_file: None,
            out: None,
            paper_scale: false,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            preprocess: PreprocessConfig::default(),
            split: SplitConfig::default(),
            impute: ImputeMode::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Recursively overlays `patch` onto `base`; objects merge key by key, any
/// other value replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Defaults overlaid with the JSON file at `path`, if any. Unknown keys
    /// are rejected so typos do not silently fall back to defaults.
    pub fn from_file(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut base = serde_json::to_value(RunConfig::default()).map_err(Error::from)?;
        check_keys(&base, &patch, "")?;
        merge(&mut base, patch);
        serde_json::from_value(base)
            .map_err(|e| CliError::from(Error::Config(format!("{}: {e}", path.display()))))
    }

    /// Propagates the master seed into every seeded component.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.split.seed = seed;
        self.synth.seed = seed;
    }

    /// 224 px input, five encoder stages and matching preprocessing.
    pub fn apply_paper_scale(&mut self) {
        self.paper_scale = true;
        let full = ModelConfig::paper_scale();
        self.model.input_size = full.input_size;
        self.model.encoder_channels = full.encoder_channels;
        self.preprocess.size = full.input_size;
    }

    pub fn data_dir(&self) -> Result<&Path, CliError> {
        self.data_dir
            .as_deref()
            .ok_or_else(|| CliError::Usage("--data-dir is required".into()))
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("--out is required".into()))
    }

    pub fn metadata_path(&self) -> Result<PathBuf, CliError> {
        match &self.metadata {
            Some(p) => Ok(p.clone()),
            None => Ok(self.data_dir()?.join("metadata.csv")),
        }
    }

    pub fn schema_path(&self) -> Result<PathBuf, CliError> {
        match &self.schema {
            Some(p) => Ok(p.clone()),
            None => Ok(self.data_dir()?.join("schema.json")),
        }
    }

    pub fn image_dir(&self) -> Result<PathBuf, CliError> {
        Ok(self.data_dir()?.join(&self.images))
    }

    /// Writes `resolved_config.json` into the output directory, creating it.
    pub fn persist(&self) -> Result<PathBuf, CliError> {
        let out = self.out_dir()?;
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join(RESOLVED_CONFIG);
        let text = serde_json::to_string_pretty(self).map_err(Error::from)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn check_keys(base: &Value, patch: &Value, prefix: &str) -> Result<(), CliError> {
    let (Value::Object(b), Value::Object(p)) = (base, patch) else {
        return Ok(());
    };
    for (k, v) in p {
        let name = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match b.get(k) {
            // free-form sections (tagged enums, optional values) are checked on deserialization
            Some(Value::Object(_)) if k == "impute" => {}
            Some(inner) => check_keys(inner, v, &name)?,
            None if b.is_empty() => {}
            None => return Err(Error::Config(format!("unknown config key `{name}`")).into()),
        }
    }
    Ok(())
}

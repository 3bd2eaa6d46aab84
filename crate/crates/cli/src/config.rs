//! Optional JSON config file, merged underneath explicit flags.
//!
//! Sections mirror the library configs; unknown keys anywhere are rejected
//! before any computation runs.

use std::path::{Path, PathBuf};

use gc_core::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub scene: Option<SceneSection>,
    pub saliency: Option<SaliencySection>,
    pub binding: Option<BindingSection>,
    pub pipeline: Option<PipelineSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub dim: Option<usize>,
    pub objects: Option<usize>,
    pub frames: Option<usize>,
    pub radius_min: Option<f64>,
    pub radius_max: Option<f64>,
    pub speed_min: Option<f64>,
    pub speed_max: Option<f64>,
    pub noise: Option<f64>,
    pub separation: Option<f64>,
    pub seed: Option<u64>,
    pub allow_overlap: Option<bool>,
    pub symmetric_prototypes: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaliencySection {
    pub alpha: Option<f64>,
    pub radius: Option<usize>,
    pub strategy: Option<String>,
    pub pca_components: Option<usize>,
    pub include_center: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BindingSection {
    pub iters_first: Option<usize>,
    pub iters_rest: Option<usize>,
    pub temperature: Option<f64>,
    pub update_rule: Option<String>,
    pub weights_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub mode: Option<String>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub pre_normalize: Option<bool>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("invalid config file {}: {e}", path.display())))
    }

    pub fn scene(&self) -> SceneSection {
        self.scene.clone().unwrap_or_default()
    }

    pub fn saliency(&self) -> SaliencySection {
        self.saliency.clone().unwrap_or_default()
    }

    pub fn binding(&self) -> BindingSection {
        self.binding.clone().unwrap_or_default()
    }

    pub fn pipeline(&self) -> PipelineSection {
        self.pipeline.clone().unwrap_or_default()
    }
}

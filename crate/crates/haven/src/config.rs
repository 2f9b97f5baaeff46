//! Run manifests: one TOML file describing a complete evaluation run.
//!
//! Manifests support `${VAR}` environment interpolation so tokens and
//! host-specific paths never need to be committed; referencing an unset
//! variable is a configuration error naming the variable.
//!
//! ```toml
//! [dataset]
//! path = "data/questions.jsonl"
//!
//! [model]
//! base_url = "https://api.example.com/v1"
//! api_key_env = "MODEL_API_KEY"
//! model_name = "video-lmm-7b"
//! max_concurrency = 4
//! timeout_s = 120.0
//! max_retries = 3
//!
//! [judge]
//! base_url = "${JUDGE_BASE_URL}"
//! api_key_env = "JUDGE_API_KEY"
//! model_name = "strong-text-model"
//! max_concurrency = 4
//! timeout_s = 60.0
//! max_retries = 3
//!
//! [sampling]
//! n_frames = 8
//! prompt_mode = "direct"
//!
//! [frames]
//! mode = "synthetic"
//!
//! [output]
//! dir = "runs/video-lmm-7b"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_client::{EndpointConfig, FrameSource, SamplingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSection {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    pub dir: PathBuf,
}

/// Where frames come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameMode {
    /// Tiny built-in placeholder frames; no files needed.
    Synthetic,
    /// Pre-extracted frames under `root/<video stem>/`.
    Directory,
    /// Run `extractor_cmd` to populate the frame directory on demand.
    Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramesSection {
    pub mode: FrameMode,
    #[serde(default)]
    pub root: Option<PathBuf>,
    /// Template with `{video}`, `{out_dir}`, `{n_frames}`, `{resize}`
    /// placeholders, run without a shell.
    #[serde(default)]
    pub extractor_cmd: Option<String>,
}

impl Default for FramesSection {
    fn default() -> Self {
        FramesSection {
            mode: FrameMode::Synthetic,
            root: None,
            extractor_cmd: None,
        }
    }
}

impl FramesSection {
    pub fn to_frame_source(&self) -> Result<FrameSource> {
        match self.mode {
            FrameMode::Synthetic => Ok(FrameSource::Synthetic),
            FrameMode::Directory => {
                let root = self.root.clone().ok_or_else(|| {
                    Error::Config("frames.mode = \"directory\" requires frames.root".into())
                })?;
                Ok(FrameSource::Directory { root })
            }
            FrameMode::Command => {
                let root = self.root.clone().ok_or_else(|| {
                    Error::Config("frames.mode = \"command\" requires frames.root".into())
                })?;
                let template = self.extractor_cmd.clone().ok_or_else(|| {
                    Error::Config("frames.mode = \"command\" requires frames.extractor_cmd".into())
                })?;
                Ok(FrameSource::Command { template, root })
            }
        }
    }
}

/// Everything one evaluation run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset: DatasetSection,
    pub model: EndpointConfig,
    pub judge: EndpointConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub frames: FramesSection,
    pub output: OutputSection,
}

impl RunManifest {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.judge.validate()?;
        self.sampling.validate()?;
        self.frames.to_frame_source().map(|_| ())
    }
}

/// Replaces every `${NAME}` with the value of the environment variable
/// `NAME`; unset variables are configuration errors.
pub fn interpolate_env(text: &str) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(pos) = rest.find("${") {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos + 2..];
        let end = tail.find('}').ok_or_else(|| {
            Error::Config(format!(
                "unterminated ${{...}} reference near: {}",
                &rest[pos..rest.len().min(pos + 24)]
            ))
        })?;
        let name = &tail[..end];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::Config(format!(
                "invalid environment variable name in ${{{name}}}"
            )));
        }
        let value = std::env::var(name)
            .map_err(|_| Error::Config(format!("environment variable {name} is not set")))?;
        out.push_str(&value);
        rest = &tail[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Loads, interpolates, parses and validates a manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<RunManifest> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {}", path.display(), e),
        ))
    })?;
    let interpolated = interpolate_env(&raw)?;
    let manifest: RunManifest = toml::from_str(&interpolated)
        .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
    manifest.validate()?;
    Ok(manifest)
}

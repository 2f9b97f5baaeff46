//! Frame acquisition.
//!
//! The harness never decodes video. Frames arrive as pre-extracted image
//! files — either already on disk, or produced on demand by an external
//! extractor command — and are sampled by index with
//! [`plan_frame_indices`](super::plan_frame_indices). A synthetic source
//! exists for scripted runs and demos, where frame content is irrelevant.

use std::path::{Path, PathBuf};

use crate::dataset::Question;
use crate::error::{Error, Result};

use super::SamplingConfig;

/// One frame image, ready for base64 embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePayload {
    pub bytes: Vec<u8>,
    pub mime: &'static str,
}

/// Smallest valid PNG (1x1 transparent pixel); payload of the synthetic
/// frame source.
pub const TINY_PNG: [u8; 67] = [
    0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x48, 0x44,
    0x52, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00, 0x00, 0x1F,
    0x15, 0xC4, 0x89, 0x00, 0x00, 0x00, 0x0A, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9C, 0x63, 0x00,
    0x01, 0x00, 0x00, 0x05, 0x00, 0x01, 0x0D, 0x0A, 0x2D, 0xB4, 0x00, 0x00, 0x00, 0x00, 0x49,
    0x45, 0x4E, 0x44, 0xAE, 0x42, 0x60, 0x82,
];

/// Where frame images come from.
pub enum FrameSource {
    /// Pre-extracted frames under `<root>/<video stem>/`, one image file per
    /// frame, ordered by file name.
    Directory { root: PathBuf },
    /// Like `Directory`, but when a video's frame folder is missing or empty
    /// the configured extractor command is run first. The template may use
    /// the placeholders `{video}`, `{out_dir}`, `{n_frames}` and `{resize}`;
    /// it is split on whitespace after substitution (no shell involved).
    Command { template: String, root: PathBuf },
    /// `n_frames` identical tiny PNGs; for scripted runs.
    Synthetic,
}

impl FrameSource {
    /// Loads and samples the frames for one question according to the
    /// sampling config.
    pub fn frames_for(&self, question: &Question, sampling: &SamplingConfig) -> Result<Vec<FramePayload>> {
        match self {
            FrameSource::Synthetic => Ok((0..sampling.n_frames)
                .map(|_| FramePayload {
                    bytes: TINY_PNG.to_vec(),
                    mime: "image/png",
                })
                .collect()),
            FrameSource::Directory { root } => {
                let dir = frame_dir(root, &question.video_ref);
                sample_from_dir(&dir, question, sampling)
            }
            FrameSource::Command { template, root } => {
                let dir = frame_dir(root, &question.video_ref);
                if list_frame_files(&dir)?.is_empty() {
                    run_extractor(template, question, sampling, &dir)?;
                }
                sample_from_dir(&dir, question, sampling)
            }
        }
    }
}

/// Directory holding the extracted frames of one video: the video's file
/// stem under the frames root.
pub fn frame_dir(root: &Path, video_ref: &str) -> PathBuf {
    let stem = Path::new(video_ref)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| video_ref.to_string());
    root.join(stem)
}

fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
                Some(ref ext) if matches!(ext.as_str(), "png" | "jpg" | "jpeg" | "webp" | "bmp")
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

fn mime_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => "image/png",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        _ => "image/jpeg",
    }
}

fn sample_from_dir(dir: &Path, question: &Question, sampling: &SamplingConfig) -> Result<Vec<FramePayload>> {
    let files = list_frame_files(dir)?;
    if files.is_empty() {
        return Err(Error::Argument(format!(
            "question {}: no frame images found under {}",
            question.id,
            dir.display()
        )));
    }
    let plan = super::plan_frame_indices(files.len() as u64, sampling.n_frames)?;
    plan.into_iter()
        .map(|idx| {
            let path = &files[idx as usize];
            Ok(FramePayload {
                bytes: std::fs::read(path)?,
                mime: mime_for(path),
            })
        })
        .collect()
}

fn run_extractor(template: &str, question: &Question, sampling: &SamplingConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let resize = sampling
        .resize_long_edge_px
        .map(|px| px.to_string())
        .unwrap_or_else(|| "0".into());
    let rendered = template
        .replace("{video}", &question.video_ref)
        .replace("{out_dir}", &out_dir.to_string_lossy())
        .replace("{n_frames}", &sampling.n_frames.to_string())
        .replace("{resize}", &resize);
    let mut parts = rendered.split_whitespace();
    let program = parts
        .next()
        .ok_or_else(|| Error::Config("frame extractor command template is empty".into()))?;
    let status = std::process::Command::new(program)
        .args(parts)
        .status()
        .map_err(|e| Error::Config(format!("frame extractor {program:?} failed to start: {e}")))?;
    if !status.success() {
        return Err(Error::Config(format!(
            "frame extractor exited with {status} for video {:?}",
            question.video_ref
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Aspect, Cause, QFormat, VariantTag};
    use crate::model_client::PromptMode;

    fn question(video_ref: &str) -> Question {
        Question {
            id: "q1".into(),
            group_id: "g1".into(),
            variant_tag: VariantTag::Sole,
            video_ref: video_ref.into(),
            cause: Cause::PriorConflict,
            aspect: Aspect::Object,
            format: QFormat::ShortAnswer,
            text: "What is shown?".into(),
            gold_answer: "A cat.".into(),
            duration_s: 10.0,
            frame_count: 100,
        }
    }

    fn sampling(n: u32) -> SamplingConfig {
        SamplingConfig {
            n_frames: n,
            resize_long_edge_px: None,
            prompt_mode: PromptMode::Direct,
            cot_suffix: None,
        }
    }

    #[test]
    fn synthetic_source_yields_identical_frames() {
        let frames = FrameSource::Synthetic.frames_for(&question("videos/a.mp4"), &sampling(4)).unwrap();
        assert_eq!(frames.len(), 4);
        assert!(frames.iter().all(|f| f.bytes == TINY_PNG.to_vec()));
        assert!(frames.iter().all(|f| f.mime == "image/png"));
    }

    #[test]
    fn directory_source_samples_by_sorted_name() {
        let dir = tempfile::tempdir().unwrap();
        let frames_dir = dir.path().join("clip7");
        std::fs::create_dir_all(&frames_dir).unwrap();
        // Ten frames, content = index byte, names sort numerically via padding.
        for i in 0..10u8 {
            std::fs::write(frames_dir.join(format!("{i:04}.png")), [i]).unwrap();
        }
        let source = FrameSource::Directory {
            root: dir.path().to_path_buf(),
        };
        let frames = source.frames_for(&question("videos/clip7.mp4"), &sampling(5)).unwrap();
        // Midpoint plan over 10 frames: indices 1,3,5,7,9.
        let contents: Vec<u8> = frames.iter().map(|f| f.bytes[0]).collect();
        assert_eq!(contents, vec![1, 3, 5, 7, 9]);
    }

    #[test]
    fn missing_frame_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let source = FrameSource::Directory {
            root: dir.path().to_path_buf(),
        };
        assert!(source.frames_for(&question("videos/absent.mp4"), &sampling(2)).is_err());
    }
}

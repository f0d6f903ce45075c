//! On-disk dataset layout: per-clip directories of PPM frames plus a JSONL
//! annotation file, described by one manifest carrying every derived seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use vts_core::data::io::{annotated_to_instances, clip_to_annotated, read_annotations, read_ppm, write_annotations, write_ppm};
use vts_core::data::{generate_clip, SynthConfig, VideoClipSample};
use vts_core::error::{Error, Result};

use crate::config::mix_seed;

pub const TRAIN_STREAM: u64 = 1;
pub const VAL_STREAM: u64 = 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipRef {
    /// Directory relative to the dataset root.
    pub id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config: SynthConfig,
    pub train: Vec<ClipRef>,
    pub val: Vec<ClipRef>,
}

impl DatasetManifest {
    pub fn load(root: &Path) -> Result<DatasetManifest> {
        let path = root.join("manifest.json");
        let text = fs::read_to_string(&path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn clip_dir(root: &Path, clip: &ClipRef) -> PathBuf {
    root.join(&clip.id)
}

/// Writes one clip as numbered PPM frames plus `annotations.jsonl`.
pub fn write_clip(dir: &Path, sample: &VideoClipSample) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, frame) in sample.frames.iter().enumerate() {
        write_ppm(&dir.join(format!("frame_{i:03}.ppm")), frame)?;
    }
    write_annotations(&dir.join("annotations.jsonl"), &[clip_to_annotated(sample)])
}

/// Reads the PPM frames of a directory in name order.
pub fn read_frames(dir: &Path) -> Result<Vec<vts_core::Tensor>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |e| e == "ppm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no .ppm frames under {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| read_ppm(p)).collect()
}

/// Loads one stored clip back into memory.
pub fn read_clip(dir: &Path) -> Result<VideoClipSample> {
    let frames = read_frames(dir)?;
    let videos = read_annotations(&dir.join("annotations.jsonl"))?;
    let video = videos.into_iter().next().ok_or_else(|| {
        Error::Validation(format!("{}: empty annotation file", dir.display()))
    })?;
    let annotations = annotated_to_instances(&video, frames.len());
    let sample = VideoClipSample {
        video_id: video.video_id,
        frames,
        annotations,
    };
    sample.validate()?;
    Ok(sample)
}

/// The synth configuration of one clip: the shared base with a derived seed.
pub fn clip_config(base: &SynthConfig, master_seed: u64, stream: u64, index: u64) -> SynthConfig {
    SynthConfig {
        seed: mix_seed(master_seed, stream, index),
        ..base.clone()
    }
}

/// Generates and writes the full dataset; the manifest records every seed.
pub fn generate_dataset(
    root: &Path,
    base: &SynthConfig,
    master_seed: u64,
    n_train: usize,
    n_val: usize,
) -> Result<DatasetManifest> {
    let mut manifest = DatasetManifest {
        seed: master_seed,
        config: base.clone(),
        train: Vec::with_capacity(n_train),
        val: Vec::with_capacity(n_val),
    };
    for (stream, count, list_name) in [
        (TRAIN_STREAM, n_train, "train"),
        (VAL_STREAM, n_val, "val"),
    ] {
        for i in 0..count {
            let config = clip_config(base, master_seed, stream, i as u64);
            let sample = generate_clip(&config, config.video_len)?;
            let id = format!("{list_name}/clip_{i:05}");
            write_clip(&root.join(&id), &sample)?;
            let clip = ClipRef {
                id,
                seed: config.seed,
            };
            if stream == TRAIN_STREAM {
                manifest.train.push(clip);
            } else {
                manifest.val.push(clip);
            }
        }
    }
    fs::create_dir_all(root)?;
    fs::write(
        root.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

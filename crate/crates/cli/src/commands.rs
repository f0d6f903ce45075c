//! The five operator commands. Each validates its inputs before touching the
//! filesystem, never mutates its inputs, and is reproducible from
//! (config, seed).

use std::fs;
use std::path::Path;

use vts_core::data::io::{read_annotations, trajectories_to_annotated, write_annotations, write_ppm};
use vts_core::error::{Error, Result};
use vts_core::metrics::{MotAccumulator, MotReport, TrackSet};
use vts_core::model::Model;
use vts_core::tracker::spot_video;

use crate::config::RunConfig;
use crate::dataset::{clip_dir, generate_dataset, read_clip, read_frames, DatasetManifest};
use crate::draw::draw_observation;
use crate::train::{run_training, TrainSummary};

/// IoU threshold of the evaluation matching.
pub const EVAL_IOU: f64 = 0.5;

fn ensure_output_dir(out_dir: &Path, force: bool) -> Result<()> {
    if out_dir.exists() {
        let non_empty = fs::read_dir(out_dir)?.next().is_some();
        if non_empty && !force {
            return Err(Error::InvalidArgument(format!(
                "{} exists and is not empty; pass --force to overwrite",
                out_dir.display()
            )));
        }
    }
    fs::create_dir_all(out_dir)?;
    Ok(())
}

/// Deterministic dataset on disk: clip directories plus a seed manifest.
pub fn cmd_gen_data(
    config: &RunConfig,
    n_train: usize,
    n_val: usize,
    out_dir: &Path,
    force: bool,
) -> Result<()> {
    config.validate()?;
    ensure_output_dir(out_dir, force)?;
    generate_dataset(out_dir, &config.synth, config.seed, n_train, n_val)?;
    Ok(())
}

/// Clip-sampled training with CSV logs and periodic checkpoints.
pub fn cmd_train(
    config: &RunConfig,
    data_dir: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainSummary> {
    run_training(config, data_dir, out_dir, resume)
}

/// Spots every validation clip of the dataset and aggregates the metrics.
pub fn cmd_eval(
    checkpoint: &Path,
    data_dir: &Path,
    out_dir: &Path,
    tau: f64,
    expected_alphabet: Option<&str>,
) -> Result<MotReport> {
    let model = Model::load(checkpoint)?;
    if let Some(alphabet) = expected_alphabet {
        if alphabet != model.config().alphabet {
            return Err(Error::Incompatible(format!(
                "checkpoint vocabulary {:?} does not match configured {:?}",
                model.config().alphabet,
                alphabet
            )));
        }
    }
    let manifest = DatasetManifest::load(data_dir)?;
    let mut acc = MotAccumulator::new();
    for clip_ref in &manifest.val {
        let clip = read_clip(&clip_dir(data_dir, clip_ref))?;
        let trajectories = spot_video(&clip.frames, &model, tau)?;
        let pred = TrackSet::from_trajectories(&trajectories);
        let mut gt = TrackSet::new();
        for (f, objs) in clip.annotations.iter().enumerate() {
            for inst in objs {
                gt.push(f, inst.id, inst.bbox, Some(inst.text.clone()));
            }
        }
        acc.add(&gt, &pred, EVAL_IOU)?;
    }
    let report = acc.report()?;
    fs::create_dir_all(out_dir)?;
    fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    fs::write(out_dir.join("report.txt"), report.table())?;
    Ok(report)
}

/// Spots a directory of PPM frames into a JSONL trajectory file.
pub fn cmd_spot(checkpoint: &Path, frames_dir: &Path, out_path: &Path, tau: f64) -> Result<()> {
    let model = Model::load(checkpoint)?;
    let frames = read_frames(frames_dir)?;
    let first_shape = frames[0].shape().to_vec();
    for f in &frames {
        if f.shape() != first_shape {
            return Err(Error::InvalidArgument(
                "frames have inconsistent resolutions".into(),
            ));
        }
    }
    if first_shape[1] % 8 != 0 || first_shape[2] % 8 != 0 {
        return Err(Error::InvalidArgument(format!(
            "frame resolution {}x{} must divide by 8",
            first_shape[2], first_shape[1]
        )));
    }
    let trajectories = spot_video(&frames, &model, tau)?;
    let video_id = frames_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "video".to_string());
    write_annotations(
        out_path,
        &[trajectories_to_annotated(&video_id, &trajectories)],
    )
}

/// Draws trajectories onto their frames; untouched frames are copied.
pub fn cmd_render(frames_dir: &Path, trajectories_path: &Path, out_dir: &Path, force: bool) -> Result<()> {
    let mut frames = read_frames(frames_dir)?;
    let videos = read_annotations(trajectories_path)?;
    for video in &videos {
        for (frame_idx, _) in &video.frames {
            if *frame_idx >= frames.len() {
                return Err(Error::Validation(format!(
                    "trajectory references frame {frame_idx} but only {} frames exist",
                    frames.len()
                )));
            }
        }
    }
    ensure_output_dir(out_dir, force)?;
    for video in &videos {
        for (frame_idx, objs) in &video.frames {
            for inst in objs {
                draw_observation(&mut frames[*frame_idx], &inst.bbox, inst.id, &inst.text);
            }
        }
    }
    for (i, frame) in frames.iter().enumerate() {
        write_ppm(&out_dir.join(format!("frame_{i:03}.ppm")), frame)?;
    }
    Ok(())
}

//! Clip-level training: every frame's queries are the carried text queries
//! plus fresh empty queries, new-born ground truths are Hungarian-matched
//! against the empty slots, tracked queries are supervised by inherited
//! identity, and the whole clip backpropagates through the propagated
//! embeddings in one tape.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vts_core::assignment::{build_cost_matrix, hungarian_solve, MatchGt, MatchPred};
use vts_core::data::{sample_training_clip, VideoClipSample};
use vts_core::error::{Error, Result};
use vts_core::losses::{
    frame_detection_loss, recognition_loss, temporal_tracking_loss, total_loss,
    tracked_query_loss, LossWeights, TrackedTerm,
};
use vts_core::model::{Binding, Model, QueryEntry, QuerySet};
use vts_core::optim::AdamW;
use vts_core::tensor::{read_checkpoint, write_checkpoint};
use vts_core::tracker::advance_query_set;
use vts_core::{Tape, Tensor};

use crate::config::{mix_seed, RunConfig};
use crate::dataset::{clip_dir, read_clip, DatasetManifest};

const STEP_STREAM: u64 = 3;

/// Differentiable loss of one clip under ground-truth-driven query
/// lifecycle. Returns the combined loss plus the plain track/recognition
/// components.
pub fn clip_loss(
    model: &Model,
    bind: &Binding,
    clip: &VideoClipSample,
    weights: &LossWeights,
) -> Result<(Tensor, f64, f64)> {
    let n = model.num_queries();
    let mut text_queries: Vec<QueryEntry> = Vec::new();
    let mut per_frame = Vec::with_capacity(clip.frames.len());
    let mut rec_logits = Vec::new();
    let mut rec_targets = Vec::new();

    for (frame_idx, frame) in clip.frames.iter().enumerate() {
        let queries: QuerySet = advance_query_set(&text_queries, model.query_table(bind))?;
        let pyramid = model.backbone_forward(bind, frame)?;
        let encoded = model.encoder_forward(bind, &pyramid.stride8)?;
        let (updated, preds) = model.decoder_forward(bind, &encoded, &queries)?;
        let gts = &clip.annotations[frame_idx];
        let k = text_queries.len(); // text slots sit first in the query set

        let tracked: Vec<TrackedTerm> = (0..k)
            .map(|i| TrackedTerm {
                terms: preds.terms[i].clone(),
                track_id: updated.entries()[i]
                    .track_id
                    .expect("text query carries an id"),
            })
            .collect();
        let gt_pairs: Vec<(u64, vts_core::RotatedBox)> =
            gts.iter().map(|g| (g.id, g.bbox)).collect();
        let trk = tracked_query_loss(&tracked, &gt_pairs, weights);

        let bound: BTreeSet<u64> = text_queries
            .iter()
            .map(|q| q.track_id.expect("text query carries an id"))
            .collect();
        let newborn: Vec<&vts_core::data::Instance> =
            gts.iter().filter(|g| !bound.contains(&g.id)).collect();
        let empty_preds: Vec<MatchPred<f64>> = (k..n)
            .map(|i| MatchPred {
                score: preds.scores[i],
                bbox: preds.boxes[i],
            })
            .collect();
        let match_gts: Vec<MatchGt<f64>> = newborn.iter().map(|g| MatchGt { bbox: g.bbox }).collect();
        let assignment = hungarian_solve(&build_cost_matrix(&empty_preds, &match_gts, weights)?)?;
        let newborn_boxes: Vec<vts_core::RotatedBox> = newborn.iter().map(|g| g.bbox).collect();
        let det = frame_detection_loss(&preds.terms[k..], &newborn_boxes, &assignment, weights)?;
        per_frame.push((det, trk));

        if weights.sigma2 > 0.0 {
            for g in gts {
                let roi = model.roi_features(&pyramid.fused4, &g.bbox)?;
                rec_logits.push(model.recognition_forward(bind, &roi, &g.text)?);
                rec_targets.push(model.recognition_targets(&g.text)?);
            }
        }

        // lifecycle: queries tracking a still-present ground truth survive,
        // queries whose ground truth ended were supervised toward no-object
        // above and drop out now; matched empty slots bind to their ground
        // truth for the rest of the clip.
        let present: BTreeSet<u64> = gts.iter().map(|g| g.id).collect();
        let mut next: Vec<QueryEntry> = Vec::new();
        for i in 0..k {
            let entry = &updated.entries()[i];
            if present.contains(&entry.track_id.expect("text query")) {
                next.push(entry.clone());
            }
        }
        for (row, col) in assignment.pairs() {
            let slot = k + row;
            next.push(QueryEntry::text(
                updated.entries()[slot].embedding.clone(),
                newborn[col].id,
                preds.scores[slot],
            ));
        }
        text_queries = next;
    }

    let track = temporal_tracking_loss(&per_frame, &clip.gt_counts());
    let rec = recognition_loss(&rec_logits, &rec_targets)?;
    let total = total_loss(&track, &rec, weights);
    Ok((total, track.item(), rec.item()))
}

/// One optimization step on one clip; returns (total, track, rec, grad norm).
pub fn train_step(
    model: &mut Model,
    opt: &mut AdamW,
    clip: &VideoClipSample,
    weights: &LossWeights,
    grad_clip: Option<f64>,
) -> Result<(f64, f64, f64, f64)> {
    let tape = Tape::new();
    let bind = model.bind(Some(&tape));
    let (total, track, rec) = clip_loss(model, &bind, clip, weights)?;
    let total_value = total.item();
    if !total_value.is_finite() {
        return Err(Error::NonFinite(format!(
            "clip loss (track {track}, rec {rec})"
        )));
    }
    let grads = total.backward()?;
    let norm = opt.step(model.store_mut(), &bind, &grads, grad_clip);
    Ok((total_value, track, rec, norm))
}

pub struct TrainSummary {
    pub steps_run: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub checkpoint: PathBuf,
}

fn optim_path(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    checkpoint.with_file_name(format!("{stem}.optim.json"))
}

fn save_state(model: &Model, opt: &AdamW, path: &Path) -> Result<()> {
    model.save(path)?;
    write_checkpoint(&optim_path(path), &opt.state_entries(model.store()), None, None)
}

/// The deterministic per-step clip sampler: which training video and which
/// window of it step `s` sees depends only on the run seed and `s`.
pub fn sample_step_clip(
    config: &RunConfig,
    manifest: &DatasetManifest,
    data_dir: &Path,
    step: usize,
) -> Result<VideoClipSample> {
    if manifest.train.is_empty() {
        return Err(Error::InvalidArgument("dataset has no training clips".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, STEP_STREAM, step as u64));
    let clip_ref = &manifest.train[rng.gen_range(0..manifest.train.len())];
    let video = read_clip(&clip_dir(data_dir, clip_ref))?;
    sample_training_clip(&video, config.clip_len, config.max_interval, &mut rng)
}

/// Full training run; resumes exactly when `resume` points at a checkpoint
/// written by a previous run with the same config.
pub fn run_training(
    config: &RunConfig,
    data_dir: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainSummary> {
    config.validate()?;
    let manifest = DatasetManifest::load(data_dir)?;
    fs::create_dir_all(out_dir)?;
    config.save(&out_dir.join("config.json"))?;

    let mut model = match resume {
        Some(path) => {
            let model = Model::load(path)?;
            if model.config() != &config.model {
                return Err(Error::Incompatible(
                    "checkpoint model config differs from the run config".into(),
                ));
            }
            model
        }
        None => Model::new(config.model.clone(), config.seed)?,
    };
    let mut opt = AdamW::new(model.store(), config.train.lr, config.train.weight_decay);
    if let Some(path) = resume {
        let (entries, _) = read_checkpoint(&optim_path(path))?;
        opt.load_state(model.store(), &entries)?;
    }
    let start_step = opt.step_count() as usize;

    let log_path = out_dir.join("train_log.csv");
    let mut log = if start_step == 0 {
        let mut f = fs::File::create(&log_path)?;
        writeln!(f, "step,l_track,l_rec,l_total,grad_norm")?;
        f
    } else {
        fs::OpenOptions::new().append(true).create(true).open(&log_path)?
    };

    let final_path = out_dir.join("checkpoint_final.json");
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    for step in start_step..config.train.steps {
        let clip = sample_step_clip(config, &manifest, data_dir, step)?;
        opt.lr = if step >= config.train.steps / 2 {
            config.train.lr * config.train.lr_decay_factor
        } else {
            config.train.lr
        };
        let result = train_step(&mut model, &mut opt, &clip, &config.loss, config.train.grad_clip);
        let (total, track, rec, norm) = match result {
            Ok(v) => v,
            Err(Error::NonFinite(what)) => {
                // diagnostic dump so the offending clip can be replayed
                let dump = out_dir.join(format!("nonfinite_step_{step}.json"));
                fs::write(
                    &dump,
                    serde_json::to_string_pretty(&serde_json::json!({
                        "step": step,
                        "video_id": clip.video_id,
                        "run_seed": config.seed,
                    }))?,
                )?;
                return Err(Error::NonFinite(format!(
                    "{what} at step {step}; diagnostics in {}",
                    dump.display()
                )));
            }
            Err(e) => return Err(e),
        };
        if initial_loss.is_nan() {
            initial_loss = total;
        }
        final_loss = total;
        writeln!(log, "{step},{track:.6},{rec:.6},{total:.6},{norm:.6}")?;
        let done = step + 1;
        if done % config.train.checkpoint_every == 0 && done < config.train.steps {
            save_state(&model, &opt, &out_dir.join(format!("checkpoint_{done:06}.json")))?;
        }
    }
    save_state(&model, &opt, &final_path)?;
    Ok(TrainSummary {
        steps_run: config.train.steps - start_step,
        initial_loss,
        final_loss,
        checkpoint: final_path,
    })
}

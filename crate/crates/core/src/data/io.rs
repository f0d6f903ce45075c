//! Annotation/trajectory JSON Lines and binary PPM frames.
//!
//! One line per frame:
//! `{"video_id": str, "frame": int, "instances": [{"id", "cx", "cy", "w",
//! "h", "theta", "text"}]}` with six-decimal reals, UTF-8, LF endings.
//! Trajectory files carry an extra `"score"` per instance. Reading is
//! strict: unknown fields are rejected and invariants are validated.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::RotatedBox as GRotatedBox;
use crate::metrics::TrackSet;
use crate::tracker::Trajectory;
use crate::{RotatedBox, Tensor};

use super::synth::{Instance, VideoClipSample};

/// One instance of one frame as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedInstance {
    pub id: u64,
    pub bbox: RotatedBox,
    pub text: String,
    pub score: Option<f64>,
}

/// All frames of one video, sparse over frame indices.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedFrames {
    pub video_id: String,
    pub frames: Vec<(usize, Vec<AnnotatedInstance>)>,
}

impl AnnotatedFrames {
    pub fn to_track_set(&self) -> TrackSet {
        let mut set = TrackSet::new();
        for (frame, objs) in &self.frames {
            for inst in objs {
                set.push(*frame, inst.id, inst.bbox, Some(inst.text.clone()));
            }
        }
        set
    }
}

pub fn clip_to_annotated(sample: &VideoClipSample) -> AnnotatedFrames {
    AnnotatedFrames {
        video_id: sample.video_id.clone(),
        frames: sample
            .annotations
            .iter()
            .enumerate()
            .map(|(f, objs)| {
                (
                    f,
                    objs.iter()
                        .map(|i| AnnotatedInstance {
                            id: i.id,
                            bbox: i.bbox,
                            text: i.text.clone(),
                            score: None,
                        })
                        .collect(),
                )
            })
            .collect(),
    }
}

pub fn annotated_to_instances(frames: &AnnotatedFrames, frame_count: usize) -> Vec<Vec<Instance>> {
    let mut out = vec![Vec::new(); frame_count];
    for (f, objs) in &frames.frames {
        if *f < frame_count {
            out[*f] = objs
                .iter()
                .map(|i| Instance {
                    id: i.id,
                    bbox: i.bbox,
                    text: i.text.clone(),
                })
                .collect();
        }
    }
    out
}

pub fn trajectories_to_annotated(video_id: &str, trajectories: &[Trajectory]) -> AnnotatedFrames {
    let mut by_frame: std::collections::BTreeMap<usize, Vec<AnnotatedInstance>> =
        std::collections::BTreeMap::new();
    for t in trajectories {
        for o in &t.observations {
            by_frame.entry(o.frame).or_default().push(AnnotatedInstance {
                id: t.track_id,
                bbox: o.bbox,
                text: o.text.clone(),
                score: Some(o.score),
            });
        }
    }
    AnnotatedFrames {
        video_id: video_id.to_string(),
        frames: by_frame.into_iter().collect(),
    }
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

fn write_line(out: &mut String, video_id: &str, frame: usize, objs: &[AnnotatedInstance]) {
    out.push_str("{\"video_id\": ");
    out.push_str(&serde_json::to_string(video_id).expect("string encodes"));
    let _ = write!(out, ", \"frame\": {frame}, \"instances\": [");
    for (k, inst) in objs.iter().enumerate() {
        if k > 0 {
            out.push_str(", ");
        }
        let _ = write!(
            out,
            "{{\"id\": {}, \"cx\": {}, \"cy\": {}, \"w\": {}, \"h\": {}, \"theta\": {}, \"text\": {}",
            inst.id,
            f6(inst.bbox.cx()),
            f6(inst.bbox.cy()),
            f6(inst.bbox.w()),
            f6(inst.bbox.h()),
            f6(inst.bbox.theta()),
            serde_json::to_string(&inst.text).expect("string encodes"),
        );
        if let Some(score) = inst.score {
            let _ = write!(out, ", \"score\": {}", f6(score));
        }
        out.push('}');
    }
    out.push_str("]}\n");
}

/// Writes videos in order, one line per frame.
pub fn write_annotations(path: &Path, videos: &[AnnotatedFrames]) -> Result<()> {
    let mut out = String::new();
    for video in videos {
        for (frame, objs) in &video.frames {
            write_line(&mut out, &video.video_id, *frame, objs);
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LineRecord {
    video_id: String,
    frame: usize,
    instances: Vec<InstanceRecord>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    id: u64,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    theta: f64,
    text: String,
    #[serde(default)]
    score: Option<f64>,
}

/// Strict reader: unknown fields, malformed JSON, invalid boxes, decreasing
/// frame indices and non-contiguous tracks are all errors. An empty file is
/// a valid empty set.
pub fn read_annotations(path: &Path) -> Result<Vec<AnnotatedFrames>> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut videos: Vec<AnnotatedFrames> = Vec::new();
    let path_str = path.display().to_string();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LineRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path_str.clone(),
            line: line_no,
            message: e.to_string(),
        })?;
        let mut objs = Vec::with_capacity(rec.instances.len());
        for inst in rec.instances {
            for (name, v) in [("cx", inst.cx), ("cy", inst.cy)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Validation(format!(
                        "{path_str}:{line_no}: {name} = {v} outside [0, 1]"
                    )));
                }
            }
            if !(inst.w > 0.0 && inst.w <= 1.0 && inst.h > 0.0 && inst.h <= 1.0) {
                return Err(Error::Validation(format!(
                    "{path_str}:{line_no}: box extents w={} h={} outside (0, 1]",
                    inst.w, inst.h
                )));
            }
            objs.push(AnnotatedInstance {
                id: inst.id,
                bbox: GRotatedBox::new(inst.cx, inst.cy, inst.w, inst.h, inst.theta)?,
                text: inst.text,
                score: inst.score,
            });
        }
        match videos.last_mut() {
            Some(v) if v.video_id == rec.video_id => {
                if let Some((last, _)) = v.frames.last() {
                    if rec.frame <= *last {
                        return Err(Error::Validation(format!(
                            "{path_str}:{line_no}: frame {} not increasing (last {})",
                            rec.frame, last
                        )));
                    }
                }
                v.frames.push((rec.frame, objs));
            }
            _ => {
                if videos.iter().any(|v| v.video_id == rec.video_id) {
                    return Err(Error::Validation(format!(
                        "{path_str}:{line_no}: video {} appears in two separate groups",
                        rec.video_id
                    )));
                }
                videos.push(AnnotatedFrames {
                    video_id: rec.video_id,
                    frames: vec![(rec.frame, objs)],
                });
            }
        }
    }
    for video in &videos {
        validate_tracks(video, &path_str)?;
    }
    Ok(videos)
}

fn validate_tracks(video: &AnnotatedFrames, path_str: &str) -> Result<()> {
    let mut tracks: std::collections::BTreeMap<u64, (usize, String)> =
        std::collections::BTreeMap::new();
    for (frame, objs) in &video.frames {
        for inst in objs {
            match tracks.get_mut(&inst.id) {
                None => {
                    tracks.insert(inst.id, (*frame, inst.text.clone()));
                }
                Some((last, text)) => {
                    if *frame != *last + 1 {
                        return Err(Error::Validation(format!(
                            "{path_str}: video {} track {} not contiguous ({} after {})",
                            video.video_id, inst.id, frame, last
                        )));
                    }
                    if *text != inst.text {
                        return Err(Error::Validation(format!(
                            "{path_str}: video {} track {} changes transcription",
                            video.video_id, inst.id
                        )));
                    }
                    *last = *frame;
                }
            }
        }
    }
    Ok(())
}

/// Writes a `[3,H,W]` frame in [0,1] as binary PPM (P6, maxval 255).
pub fn write_ppm(path: &Path, frame: &Tensor) -> Result<()> {
    let shape = frame.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::ShapeMismatch {
            op: "write_ppm",
            lhs: shape.to_vec(),
            rhs: vec![3, 0, 0],
        });
    }
    let (h, w) = (shape[1], shape[2]);
    let v = frame.values();
    let mut bytes = Vec::with_capacity(3 * h * w + 32);
    bytes.extend_from_slice(format!("P6\n{w} {h}\n255\n").as_bytes());
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let val = (v[c * h * w + y * w + x] * 255.0).round().clamp(0.0, 255.0);
                bytes.push(val as u8);
            }
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

/// Reads a binary PPM (P6, maxval 255) into a `[3,H,W]` tensor in [0,1].
pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        while pos < bytes.len() {
            if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Validation(format!(
                "{}: truncated PPM header",
                path.display()
            )));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token(&bytes)?;
    if magic != "P6" {
        return Err(Error::Validation(format!(
            "{}: not a P6 PPM (magic {magic})",
            path.display()
        )));
    }
    let w: usize = token(&bytes)?.parse().map_err(|_| {
        Error::Validation(format!("{}: bad width", path.display()))
    })?;
    let h: usize = token(&bytes)?.parse().map_err(|_| {
        Error::Validation(format!("{}: bad height", path.display()))
    })?;
    let maxval: usize = token(&bytes)?.parse().map_err(|_| {
        Error::Validation(format!("{}: bad maxval", path.display()))
    })?;
    if maxval != 255 {
        return Err(Error::Validation(format!(
            "{}: unsupported maxval {maxval}",
            path.display()
        )));
    }
    pos += 1; // single whitespace after maxval
    if bytes.len() < pos + 3 * h * w {
        return Err(Error::Validation(format!(
            "{}: truncated pixel data",
            path.display()
        )));
    }
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data[c * h * w + y * w + x] = bytes[pos + (y * w + x) * 3 + c] as f64 / 255.0;
            }
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_frames() -> AnnotatedFrames {
        AnnotatedFrames {
            video_id: "clip-1".into(),
            frames: vec![
                (
                    0,
                    vec![AnnotatedInstance {
                        id: 0,
                        bbox: GRotatedBox::new(0.5, 0.5, 0.25, 0.1, 0.1).unwrap(),
                        text: "abc".into(),
                        score: None,
                    }],
                ),
                (
                    1,
                    vec![AnnotatedInstance {
                        id: 0,
                        bbox: GRotatedBox::new(0.52, 0.5, 0.25, 0.1, 0.1).unwrap(),
                        text: "abc".into(),
                        score: None,
                    }],
                ),
            ],
        }
    }

    #[test]
    fn round_trip_is_stable_at_six_decimals() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.jsonl");
        let data = vec![sample_frames()];
        write_annotations(&path, &data).unwrap();
        let back = read_annotations(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].video_id, "clip-1");
        // writing the read-back bytes is idempotent
        let first = fs::read(&path).unwrap();
        write_annotations(&path, &back).unwrap();
        let second = fs::read(&path).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn unknown_fields_and_zero_width_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(
            &path,
            "{\"video_id\": \"v\", \"frame\": 0, \"instances\": [], \"extra\": 1}\n",
        )
        .unwrap();
        assert!(matches!(
            read_annotations(&path).unwrap_err(),
            Error::Parse { line: 1, .. }
        ));

        fs::write(
            &path,
            "{\"video_id\": \"v\", \"frame\": 0, \"instances\": [{\"id\": 1, \"cx\": 0.5, \"cy\": 0.5, \"w\": 0.0, \"h\": 0.1, \"theta\": 0.0, \"text\": \"a\"}]}\n",
        )
        .unwrap();
        assert!(matches!(
            read_annotations(&path).unwrap_err(),
            Error::Validation(_)
        ));
    }

    #[test]
    fn empty_file_is_a_valid_empty_set() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        assert!(read_annotations(&path).unwrap().is_empty());
    }

    #[test]
    fn non_contiguous_tracks_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gap.jsonl");
        let inst = "{\"id\": 1, \"cx\": 0.5, \"cy\": 0.5, \"w\": 0.2, \"h\": 0.1, \"theta\": 0.0, \"text\": \"a\"}";
        fs::write(
            &path,
            format!(
                "{{\"video_id\": \"v\", \"frame\": 0, \"instances\": [{inst}]}}\n{{\"video_id\": \"v\", \"frame\": 1, \"instances\": []}}\n{{\"video_id\": \"v\", \"frame\": 2, \"instances\": [{inst}]}}\n"
            ),
        )
        .unwrap();
        assert!(matches!(
            read_annotations(&path).unwrap_err(),
            Error::Validation(_)
        ));
    }

    #[test]
    fn score_field_round_trips_for_trajectories() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.jsonl");
        let mut frames = sample_frames();
        for (_, objs) in frames.frames.iter_mut() {
            for o in objs.iter_mut() {
                o.score = Some(0.875);
            }
        }
        write_annotations(&path, &[frames]).unwrap();
        let back = read_annotations(&path).unwrap();
        assert_eq!(back[0].frames[0].1[0].score, Some(0.875));
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ppm");
        let mut data = vec![0.0; 3 * 4 * 5];
        for (i, v) in data.iter_mut().enumerate() {
            *v = (i % 256) as f64 / 255.0;
        }
        let frame = Tensor::from_vec(&[3, 4, 5], data).unwrap();
        write_ppm(&path, &frame).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(back.shape(), &[3, 4, 5]);
        for (a, b) in frame.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 0.5 / 255.0 + 1e-12);
        }
    }
}

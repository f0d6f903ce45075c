//! CLEAR-MOT, identity metrics, mostly-tracked/lost, and per-frame detection
//! precision/recall.
//!
//! Matching measures overlap as plain IoU of the rotated boxes' bounding
//! rectangles at a threshold (default 0.5). CLEAR matching first continues
//! the previous frame's correspondences, then solves the remainder with the
//! Hungarian solver, which minimizes spurious switches.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assignment::{hungarian_solve, CostMatrix};
use crate::error::{Error, Result};
use crate::geometry::bounding_rect_iou;
use crate::RotatedBox;

/// Cost standing in for "forbidden pair" in metric matching; any valid pair
/// (cost <= 1) dominates it.
const FORBIDDEN: f64 = 1e9;

/// Frame-indexed identities with boxes and optional transcriptions.
#[derive(Debug, Clone, Default)]
pub struct TrackSet {
    frames: BTreeMap<usize, Vec<(u64, RotatedBox, Option<String>)>>,
}

impl TrackSet {
    pub fn new() -> TrackSet {
        TrackSet::default()
    }

    pub fn push(&mut self, frame: usize, id: u64, bbox: RotatedBox, text: Option<String>) {
        self.frames.entry(frame).or_default().push((id, bbox, text));
    }

    pub fn from_trajectories(trajectories: &[crate::tracker::Trajectory]) -> TrackSet {
        let mut set = TrackSet::new();
        for t in trajectories {
            for o in &t.observations {
                set.push(o.frame, t.track_id, o.bbox, Some(o.text.clone()));
            }
        }
        set
    }

    pub fn frames(&self) -> impl Iterator<Item = (usize, &[(u64, RotatedBox, Option<String>)])> {
        self.frames.iter().map(|(f, v)| (*f, v.as_slice()))
    }

    pub fn total_boxes(&self) -> usize {
        self.frames.values().map(|v| v.len()).sum()
    }

    /// Number of annotated frames per identity.
    pub fn id_lifespans(&self) -> BTreeMap<u64, usize> {
        let mut spans = BTreeMap::new();
        for objs in self.frames.values() {
            for (id, _, _) in objs {
                *spans.entry(*id).or_insert(0) += 1;
            }
        }
        spans
    }

    fn text_of(&self, frame: usize, id: u64) -> Option<&str> {
        self.frames.get(&frame)?.iter().find_map(|(i, _, t)| {
            if *i == id {
                t.as_deref()
            } else {
                None
            }
        })
    }
}

/// One matched (ground truth, prediction) pair in one frame.
#[derive(Debug, Clone, Copy)]
pub struct MatchedPair {
    pub frame: usize,
    pub gt_id: u64,
    pub pred_id: u64,
    pub iou: f64,
}

#[derive(Debug, Clone)]
pub struct ClearMot {
    pub mota: f64,
    pub motp: f64,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub id_switches: usize,
    pub gt_total: usize,
    pub matches: Vec<MatchedPair>,
}

/// Hungarian matching of one frame restricted to pairs with IoU at or above
/// the threshold; returns (gt index, pred index, iou).
fn frame_matching(
    gts: &[(u64, RotatedBox, Option<String>)],
    preds: &[(u64, RotatedBox, Option<String>)],
    iou_threshold: f64,
) -> Vec<(usize, usize, f64)> {
    if gts.is_empty() || preds.is_empty() {
        return Vec::new();
    }
    // rows must cover columns; put the smaller side on the columns
    let transpose = preds.len() > gts.len();
    let (rows, cols): (usize, usize) = if transpose {
        (preds.len(), gts.len())
    } else {
        (gts.len(), preds.len())
    };
    let mut entries = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (g, p) = if transpose { (c, r) } else { (r, c) };
            let iou = bounding_rect_iou(&gts[g].1, &preds[p].1);
            entries.push(if iou >= iou_threshold {
                1.0 - iou
            } else {
                FORBIDDEN
            });
        }
    }
    let costs = CostMatrix::new(rows, cols, entries).expect("finite costs");
    let assignment = hungarian_solve(&costs).expect("rows >= cols");
    let mut out = Vec::new();
    for (r, c) in assignment.pairs() {
        let (g, p) = if transpose { (c, r) } else { (r, c) };
        let iou = bounding_rect_iou(&gts[g].1, &preds[p].1);
        if iou >= iou_threshold {
            out.push((g, p, iou));
        }
    }
    out
}

/// Per-frame correspondences under the CLEAR convention: continue previous
/// matches first, Hungarian on the rest.
fn clear_matches(gt: &TrackSet, pred: &TrackSet, iou_threshold: f64) -> Vec<MatchedPair> {
    let mut all_frames: Vec<usize> = gt
        .frames
        .keys()
        .chain(pred.frames.keys())
        .copied()
        .collect();
    all_frames.sort_unstable();
    all_frames.dedup();

    let empty = Vec::new();
    let mut prev: BTreeMap<u64, u64> = BTreeMap::new(); // gt id -> pred id
    let mut out = Vec::new();
    for f in all_frames {
        let gts = gt.frames.get(&f).unwrap_or(&empty);
        let preds = pred.frames.get(&f).unwrap_or(&empty);
        let mut gt_used = vec![false; gts.len()];
        let mut pred_used = vec![false; preds.len()];
        let mut frame_pairs = Vec::new();

        for (&gt_id, &pred_id) in prev.iter() {
            let gi = gts.iter().position(|(id, _, _)| *id == gt_id);
            let pi = preds.iter().position(|(id, _, _)| *id == pred_id);
            if let (Some(gi), Some(pi)) = (gi, pi) {
                let iou = bounding_rect_iou(&gts[gi].1, &preds[pi].1);
                if iou >= iou_threshold {
                    gt_used[gi] = true;
                    pred_used[pi] = true;
                    frame_pairs.push((gi, pi, iou));
                }
            }
        }

        let rem_gts: Vec<usize> = (0..gts.len()).filter(|&i| !gt_used[i]).collect();
        let rem_preds: Vec<usize> = (0..preds.len()).filter(|&i| !pred_used[i]).collect();
        let sub_gts: Vec<_> = rem_gts.iter().map(|&i| gts[i].clone()).collect();
        let sub_preds: Vec<_> = rem_preds.iter().map(|&i| preds[i].clone()).collect();
        for (g, p, iou) in frame_matching(&sub_gts, &sub_preds, iou_threshold) {
            frame_pairs.push((rem_gts[g], rem_preds[p], iou));
        }

        prev = frame_pairs
            .iter()
            .map(|&(g, p, _)| (gts[g].0, preds[p].0))
            .collect();
        out.extend(frame_pairs.into_iter().map(|(g, p, iou)| MatchedPair {
            frame: f,
            gt_id: gts[g].0,
            pred_id: preds[p].0,
            iou,
        }));
    }
    out
}

/// CLEAR-MOT: MOTA/MOTP (percent) with FP/FN/switch counts. Errors when the
/// ground truth is empty, which leaves MOTA undefined.
pub fn clear_mot(gt: &TrackSet, pred: &TrackSet, iou_threshold: f64) -> Result<ClearMot> {
    let gt_total = gt.total_boxes();
    if gt_total == 0 {
        return Err(Error::InvalidArgument(
            "MOTA undefined: ground truth contains no boxes".into(),
        ));
    }
    let matches = clear_matches(gt, pred, iou_threshold);
    let matched_per_frame: BTreeMap<usize, usize> =
        matches.iter().fold(BTreeMap::new(), |mut acc, m| {
            *acc.entry(m.frame).or_insert(0) += 1;
            acc
        });

    let mut false_positives = 0;
    let mut false_negatives = 0;
    for (f, objs) in gt.frames() {
        false_negatives += objs.len() - matched_per_frame.get(&f).copied().unwrap_or(0);
    }
    for (f, objs) in pred.frames() {
        false_positives += objs.len() - matched_per_frame.get(&f).copied().unwrap_or(0);
    }

    let mut id_switches = 0;
    let mut last_pred: BTreeMap<u64, u64> = BTreeMap::new();
    for m in &matches {
        if let Some(&prev) = last_pred.get(&m.gt_id) {
            if prev != m.pred_id {
                id_switches += 1;
            }
        }
        last_pred.insert(m.gt_id, m.pred_id);
    }

    let motp = if matches.is_empty() {
        0.0
    } else {
        100.0 * matches.iter().map(|m| m.iou).sum::<f64>() / matches.len() as f64
    };
    let mota = 100.0
        * (1.0 - (false_positives + false_negatives + id_switches) as f64 / gt_total as f64);
    Ok(ClearMot {
        mota,
        motp,
        false_positives,
        false_negatives,
        id_switches,
        gt_total,
        matches,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct IdMetrics {
    pub idf1: f64,
    pub idp: f64,
    pub idr: f64,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

/// Identity metrics under a global bipartite matching between ground-truth
/// and predicted identities.
pub fn id_metrics(gt: &TrackSet, pred: &TrackSet, iou_threshold: f64) -> Result<IdMetrics> {
    if gt.total_boxes() == 0 {
        return Err(Error::InvalidArgument(
            "identity metrics undefined: ground truth contains no boxes".into(),
        ));
    }
    let gt_spans = gt.id_lifespans();
    let pred_spans = pred.id_lifespans();
    let gt_ids: Vec<u64> = gt_spans.keys().copied().collect();
    let pred_ids: Vec<u64> = pred_spans.keys().copied().collect();

    // per-frame overlap count of every (gt id, pred id) pair
    let mut overlap: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    let empty = Vec::new();
    for (f, gts) in gt.frames() {
        let preds = pred.frames.get(&f).unwrap_or(&empty);
        for (g, p, _) in frame_matching(gts, preds, iou_threshold) {
            *overlap.entry((gts[g].0, preds[p].0)).or_insert(0) += 1;
        }
    }

    let n = gt_ids.len() + pred_ids.len();
    let mut entries = vec![FORBIDDEN; n * n];
    for (i, g) in gt_ids.iter().enumerate() {
        for (j, p) in pred_ids.iter().enumerate() {
            let o = overlap.get(&(*g, *p)).copied().unwrap_or(0);
            entries[i * n + j] = (gt_spans[g] + pred_spans[p] - 2 * o) as f64;
        }
        // unmatched ground truth: its whole lifespan becomes IDFN
        entries[i * n + pred_ids.len() + i] = gt_spans[g] as f64;
    }
    for (j, p) in pred_ids.iter().enumerate() {
        entries[(gt_ids.len() + j) * n + j] = pred_spans[p] as f64;
    }
    for i in 0..pred_ids.len() {
        for j in 0..gt_ids.len() {
            entries[(gt_ids.len() + i) * n + (pred_ids.len() + j)] = 0.0;
        }
    }

    let total_gt: usize = gt_spans.values().sum();
    let total_pred: usize = pred_spans.values().sum();
    let cost = if n > 0 {
        hungarian_solve(&CostMatrix::new(n, n, entries)?)?.total_cost
    } else {
        0.0
    };
    let errors = cost.round() as usize; // counts, exact in f64
    let idtp = (total_gt + total_pred - errors) / 2;
    let idfn = total_gt - idtp;
    let idfp = total_pred - idtp;
    let idf1 = 100.0 * 2.0 * idtp as f64 / (total_gt + total_pred) as f64;
    let idp = if total_pred > 0 {
        100.0 * idtp as f64 / total_pred as f64
    } else {
        0.0
    };
    let idr = 100.0 * idtp as f64 / total_gt as f64;
    Ok(IdMetrics {
        idf1,
        idp,
        idr,
        idtp,
        idfp,
        idfn,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct TrackCoverage {
    pub mostly_tracked: usize,
    pub mostly_lost: usize,
    pub mt_pct: f64,
    pub ml_pct: f64,
}

/// Mostly-Tracked (coverage >= 0.8 of lifespan) and Mostly-Lost (< 0.2).
pub fn mostly_tracked_lost(gt: &TrackSet, pred: &TrackSet, iou_threshold: f64) -> TrackCoverage {
    let spans = gt.id_lifespans();
    let mut covered: BTreeMap<u64, usize> = BTreeMap::new();
    for m in clear_matches(gt, pred, iou_threshold) {
        *covered.entry(m.gt_id).or_insert(0) += 1;
    }
    let mut mostly_tracked = 0;
    let mut mostly_lost = 0;
    for (id, span) in &spans {
        let cov = covered.get(id).copied().unwrap_or(0) as f64 / *span as f64;
        if cov >= 0.8 {
            mostly_tracked += 1;
        } else if cov < 0.2 {
            mostly_lost += 1;
        }
    }
    let total = spans.len().max(1) as f64;
    TrackCoverage {
        mostly_tracked,
        mostly_lost,
        mt_pct: 100.0 * mostly_tracked as f64 / total,
        ml_pct: 100.0 * mostly_lost as f64 / total,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DetectionPrf {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Per-frame detection matching with identity ignored.
pub fn detection_prf(gt: &TrackSet, pred: &TrackSet, iou_threshold: f64) -> DetectionPrf {
    let empty = Vec::new();
    let mut tp = 0;
    let mut fp = 0;
    let mut fned = 0;
    let mut all_frames: Vec<usize> = gt
        .frames
        .keys()
        .chain(pred.frames.keys())
        .copied()
        .collect();
    all_frames.sort_unstable();
    all_frames.dedup();
    for f in all_frames {
        let gts = gt.frames.get(&f).unwrap_or(&empty);
        let preds = pred.frames.get(&f).unwrap_or(&empty);
        let matched = frame_matching(gts, preds, iou_threshold).len();
        tp += matched;
        fp += preds.len() - matched;
        fned += gts.len() - matched;
    }
    let vacuous = tp + fp + fned == 0;
    let precision = if vacuous {
        100.0
    } else if tp + fp == 0 {
        0.0
    } else {
        100.0 * tp as f64 / (tp + fp) as f64
    };
    let recall = if vacuous {
        100.0
    } else if tp + fned == 0 {
        0.0
    } else {
        100.0 * tp as f64 / (tp + fned) as f64
    };
    let f_measure = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    DetectionPrf {
        precision,
        recall,
        f_measure,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fned,
    }
}

/// The aggregate report, all rates in percent.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MotReport {
    pub mota: f64,
    pub motp: f64,
    pub idf1: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub id_switches: usize,
    pub mostly_tracked: usize,
    pub mostly_lost: usize,
    pub mt_pct: f64,
    pub ml_pct: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_accuracy: Option<f64>,
}

impl MotReport {
    /// Plain-text table in the reporting shape of the tracking benchmarks.
    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str("metric          value\n");
        s.push_str(&format!("ID_F1           {:>8.2}\n", self.idf1));
        s.push_str(&format!("MOTA            {:>8.2}\n", self.mota));
        s.push_str(&format!("MOTP            {:>8.2}\n", self.motp));
        s.push_str(&format!("Precision       {:>8.2}\n", self.precision));
        s.push_str(&format!("Recall          {:>8.2}\n", self.recall));
        s.push_str(&format!("F-measure       {:>8.2}\n", self.f_measure));
        s.push_str(&format!("FP              {:>8}\n", self.false_positives));
        s.push_str(&format!("FN              {:>8}\n", self.false_negatives));
        s.push_str(&format!("IDSW            {:>8}\n", self.id_switches));
        s.push_str(&format!(
            "M-Tracked       {:>8} ({:.2}%)\n",
            self.mostly_tracked, self.mt_pct
        ));
        s.push_str(&format!(
            "M-Lost          {:>8} ({:.2}%)\n",
            self.mostly_lost, self.ml_pct
        ));
        if let Some(wa) = self.word_accuracy {
            s.push_str(&format!("Word accuracy   {:>8.2}\n", wa));
        }
        s
    }
}

/// Accumulates metrics over independent sequences (one per clip) into one
/// aggregate report.
#[derive(Debug, Default)]
pub struct MotAccumulator {
    gt_total: usize,
    fp: usize,
    fnd: usize,
    idsw: usize,
    iou_sum: f64,
    matched: usize,
    idtp: usize,
    idfp: usize,
    idfn: usize,
    mt: usize,
    ml: usize,
    gt_tracks: usize,
    tp_det: usize,
    fp_det: usize,
    fn_det: usize,
    words_matched: usize,
    words_correct: usize,
}

impl MotAccumulator {
    pub fn new() -> MotAccumulator {
        MotAccumulator::default()
    }

    /// Adds one sequence. Sequences with empty ground truth only contribute
    /// false positives and detection counts.
    pub fn add(&mut self, gt: &TrackSet, pred: &TrackSet, iou_threshold: f64) -> Result<()> {
        if gt.total_boxes() > 0 {
            let cm = clear_mot(gt, pred, iou_threshold)?;
            self.gt_total += cm.gt_total;
            self.fp += cm.false_positives;
            self.fnd += cm.false_negatives;
            self.idsw += cm.id_switches;
            self.matched += cm.matches.len();
            self.iou_sum += cm.matches.iter().map(|m| m.iou).sum::<f64>();
            for m in &cm.matches {
                if let (Some(gt_text), Some(pred_text)) =
                    (gt.text_of(m.frame, m.gt_id), pred.text_of(m.frame, m.pred_id))
                {
                    self.words_matched += 1;
                    if gt_text == pred_text {
                        self.words_correct += 1;
                    }
                }
            }
            let id = id_metrics(gt, pred, iou_threshold)?;
            self.idtp += id.idtp;
            self.idfp += id.idfp;
            self.idfn += id.idfn;
            let cov = mostly_tracked_lost(gt, pred, iou_threshold);
            self.mt += cov.mostly_tracked;
            self.ml += cov.mostly_lost;
            self.gt_tracks += gt.id_lifespans().len();
        } else {
            self.fp += pred.total_boxes();
            self.idfp += pred.total_boxes();
        }
        let det = detection_prf(gt, pred, iou_threshold);
        self.tp_det += det.true_positives;
        self.fp_det += det.false_positives;
        self.fn_det += det.false_negatives;
        Ok(())
    }

    pub fn report(&self) -> Result<MotReport> {
        if self.gt_total == 0 {
            return Err(Error::InvalidArgument(
                "MOTA undefined: no ground truth accumulated".into(),
            ));
        }
        let mota = 100.0 * (1.0 - (self.fp + self.fnd + self.idsw) as f64 / self.gt_total as f64);
        let motp = if self.matched > 0 {
            100.0 * self.iou_sum / self.matched as f64
        } else {
            0.0
        };
        let idf1 = 100.0 * 2.0 * self.idtp as f64 / (2 * self.idtp + self.idfp + self.idfn) as f64;
        let precision = if self.tp_det + self.fp_det > 0 {
            100.0 * self.tp_det as f64 / (self.tp_det + self.fp_det) as f64
        } else {
            0.0
        };
        let recall = if self.tp_det + self.fn_det > 0 {
            100.0 * self.tp_det as f64 / (self.tp_det + self.fn_det) as f64
        } else {
            0.0
        };
        let f_measure = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let tracks = self.gt_tracks.max(1) as f64;
        Ok(MotReport {
            mota,
            motp,
            idf1,
            precision,
            recall,
            f_measure,
            false_positives: self.fp,
            false_negatives: self.fnd,
            id_switches: self.idsw,
            mostly_tracked: self.mt,
            mostly_lost: self.ml,
            mt_pct: 100.0 * self.mt as f64 / tracks,
            ml_pct: 100.0 * self.ml as f64 / tracks,
            word_accuracy: if self.words_matched > 0 {
                Some(100.0 * self.words_correct as f64 / self.words_matched as f64)
            } else {
                None
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(cx: f64, cy: f64) -> RotatedBox {
        RotatedBox::new(cx, cy, 0.2, 0.1, 0.0).unwrap()
    }

    fn perfect_pair() -> (TrackSet, TrackSet) {
        let mut gt = TrackSet::new();
        let mut pred = TrackSet::new();
        for f in 0..4 {
            let x = 0.2 + 0.1 * f as f64;
            gt.push(f, 1, bb(x, 0.3), Some("abc".into()));
            pred.push(f, 11, bb(x, 0.3), Some("abc".into()));
            gt.push(f, 2, bb(x, 0.7), Some("de".into()));
            pred.push(f, 12, bb(x, 0.7), Some("de".into()));
        }
        (gt, pred)
    }

    #[test]
    fn perfect_tracking_scores_hundred_everywhere() {
        let (gt, pred) = perfect_pair();
        let cm = clear_mot(&gt, &pred, 0.5).unwrap();
        assert_eq!(cm.mota, 100.0);
        assert_eq!(cm.motp, 100.0);
        assert_eq!(
            (cm.false_positives, cm.false_negatives, cm.id_switches),
            (0, 0, 0)
        );
        let id = id_metrics(&gt, &pred, 0.5).unwrap();
        assert_eq!(id.idf1, 100.0);
        let cov = mostly_tracked_lost(&gt, &pred, 0.5);
        assert_eq!(cov.mostly_tracked, 2);
        assert_eq!(cov.mostly_lost, 0);
        let det = detection_prf(&gt, &pred, 0.5);
        assert_eq!(
            (det.precision, det.recall, det.f_measure),
            (100.0, 100.0, 100.0)
        );
    }

    #[test]
    fn one_missed_frame_halves_mota() {
        // 1 GT over 2 frames, matched frame 0 only
        let mut gt = TrackSet::new();
        gt.push(0, 1, bb(0.3, 0.3), None);
        gt.push(1, 1, bb(0.35, 0.3), None);
        let mut pred = TrackSet::new();
        pred.push(0, 7, bb(0.3, 0.3), None);
        let cm = clear_mot(&gt, &pred, 0.5).unwrap();
        assert_eq!(cm.false_negatives, 1);
        assert_eq!(cm.false_positives, 0);
        assert_eq!(cm.id_switches, 0);
        assert_eq!(cm.mota, 50.0);
    }

    #[test]
    fn id_change_counts_one_switch() {
        // 3-frame GT fully matched, pred id changes at frame 2
        let mut gt = TrackSet::new();
        let mut pred = TrackSet::new();
        for f in 0..3 {
            let b = bb(0.3 + 0.05 * f as f64, 0.4);
            gt.push(f, 1, b, None);
            pred.push(f, if f < 2 { 5 } else { 6 }, b, None);
        }
        let cm = clear_mot(&gt, &pred, 0.5).unwrap();
        assert_eq!(cm.id_switches, 1);
        assert_eq!((cm.false_positives, cm.false_negatives), (0, 0));
        // MOTA reduced by exactly 1/sum(G)
        assert!((cm.mota - 100.0 * (1.0 - 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn split_track_gives_fifty_percent_idf1() {
        // one GT track of 4 frames covered by two pred tracks of 2 frames
        let mut gt = TrackSet::new();
        let mut pred = TrackSet::new();
        for f in 0..4 {
            let b = bb(0.3 + 0.05 * f as f64, 0.4);
            gt.push(f, 1, b, None);
            pred.push(f, if f < 2 { 5 } else { 6 }, b, None);
        }
        let id = id_metrics(&gt, &pred, 0.5).unwrap();
        assert_eq!(id.idtp, 2);
        assert_eq!(id.idfp, 2);
        assert_eq!(id.idfn, 2);
        assert_eq!(id.idf1, 50.0);
    }

    #[test]
    fn no_predictions_gives_zero_idf1() {
        let mut gt = TrackSet::new();
        gt.push(0, 1, bb(0.3, 0.3), None);
        let id = id_metrics(&gt, &TrackSet::new(), 0.5).unwrap();
        assert_eq!(id.idf1, 0.0);
        assert_eq!(id.idtp, 0);
    }

    #[test]
    fn zero_ground_truth_is_an_error() {
        let mut pred = TrackSet::new();
        pred.push(0, 1, bb(0.3, 0.3), None);
        assert!(matches!(
            clear_mot(&TrackSet::new(), &pred, 0.5).unwrap_err(),
            Error::InvalidArgument(_)
        ));
        assert!(id_metrics(&TrackSet::new(), &pred, 0.5).is_err());
    }

    #[test]
    fn coverage_boundaries() {
        // 5-frame GT track matched in 4 frames: coverage 0.8 -> MT
        let mut gt = TrackSet::new();
        let mut pred = TrackSet::new();
        for f in 0..5 {
            let b = bb(0.3, 0.4);
            gt.push(f, 1, b, None);
            if f < 4 {
                pred.push(f, 9, b, None);
            }
        }
        let cov = mostly_tracked_lost(&gt, &pred, 0.5);
        assert_eq!(cov.mostly_tracked, 1);
        assert_eq!(cov.mostly_lost, 0);

        // matched 0 of 5 frames: ML; matched 1 of 5 (0.2): neither
        let cov = mostly_tracked_lost(&gt, &TrackSet::new(), 0.5);
        assert_eq!(cov.mostly_lost, 1);
        let mut one = TrackSet::new();
        one.push(0, 9, bb(0.3, 0.4), None);
        let cov = mostly_tracked_lost(&gt, &one, 0.5);
        assert_eq!((cov.mostly_tracked, cov.mostly_lost), (0, 0));
    }

    #[test]
    fn half_recall_prf() {
        let mut gt = TrackSet::new();
        let mut pred = TrackSet::new();
        gt.push(0, 1, bb(0.2, 0.2), None);
        gt.push(0, 2, bb(0.7, 0.7), None);
        pred.push(0, 1, bb(0.2, 0.2), None);
        let det = detection_prf(&gt, &pred, 0.5);
        assert_eq!(det.precision, 100.0);
        assert_eq!(det.recall, 50.0);
        assert!((det.f_measure - 200.0 / 3.0).abs() < 1e-9);

        let det = detection_prf(&TrackSet::new(), &TrackSet::new(), 0.5);
        assert_eq!(
            (det.precision, det.recall, det.f_measure),
            (100.0, 100.0, 100.0)
        );
    }

    #[test]
    fn metrics_invariant_to_id_relabeling() {
        let (gt, pred) = perfect_pair();
        let mut relabeled = TrackSet::new();
        for (f, objs) in pred.frames() {
            for (id, b, t) in objs {
                relabeled.push(f, id * 131 + 7, *b, t.clone());
            }
        }
        let a = clear_mot(&gt, &pred, 0.5).unwrap();
        let b = clear_mot(&gt, &relabeled, 0.5).unwrap();
        assert_eq!(a.mota, b.mota);
        let ia = id_metrics(&gt, &pred, 0.5).unwrap();
        let ib = id_metrics(&gt, &relabeled, 0.5).unwrap();
        assert_eq!(ia.idf1, ib.idf1);
    }

    #[test]
    fn count_consistency_per_frame() {
        // FP + matched = total predictions; FN + matched = total GT
        let (gt, mut pred) = perfect_pair();
        pred.push(0, 99, bb(0.05, 0.05), None); // stray false positive
        let cm = clear_mot(&gt, &pred, 0.5).unwrap();
        assert_eq!(cm.matches.len() + cm.false_positives, pred.total_boxes());
        assert_eq!(cm.matches.len() + cm.false_negatives, gt.total_boxes());
    }

    #[test]
    fn accumulator_matches_single_sequence_and_counts_words() {
        let (gt, pred) = perfect_pair();
        let mut acc = MotAccumulator::new();
        acc.add(&gt, &pred, 0.5).unwrap();
        let report = acc.report().unwrap();
        assert_eq!(report.mota, 100.0);
        assert_eq!(report.idf1, 100.0);
        assert_eq!(report.word_accuracy, Some(100.0));

        // a wrong transcription lowers word accuracy only
        let mut pred2 = TrackSet::new();
        for (f, objs) in pred.frames() {
            for (id, b, _) in objs {
                pred2.push(f, *id, *b, Some("zz".into()));
            }
        }
        let mut acc = MotAccumulator::new();
        acc.add(&gt, &pred2, 0.5).unwrap();
        let report = acc.report().unwrap();
        assert_eq!(report.mota, 100.0);
        assert_eq!(report.word_accuracy, Some(0.0));
    }

    #[test]
    fn idf1_capacity_bound_holds() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let mut gt = TrackSet::new();
            let mut pred = TrackSet::new();
            for f in 0..4 {
                for id in 0..rng.gen_range(1..4u64) {
                    gt.push(f, id, bb(rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)), None);
                }
                for id in 0..rng.gen_range(0..4u64) {
                    pred.push(f, id, bb(rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)), None);
                }
            }
            let total_gt = gt.total_boxes() as f64;
            let total_pred = pred.total_boxes() as f64;
            let id = id_metrics(&gt, &pred, 0.5).unwrap();
            let bound = 100.0 * 2.0 * total_gt.min(total_pred) / (total_gt + total_pred);
            assert!(id.idf1 <= bound + 1e-9);
        }
    }
}

//! Query lifecycle across frames and threshold-driven track assembly.
//!
//! Surviving text queries carry their embeddings (and identities) into the
//! next frame's query set, topped up with fresh empty queries from the
//! learned table. At inference an empty query whose score reaches tau starts
//! a new track; a text query whose score falls below tau is removed. A score
//! exactly at tau counts as present. There is no post-hoc association and no
//! suppression pass.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{FeatureMap, RotatedBox};
use crate::model::{FramePredictions, Model, QueryEntry, QueryKind, QuerySet};
use crate::Tensor;

/// Model surface the tracker drives; scripted fakes implement this in tests.
pub trait SpottingModel {
    /// Per-frame context handed back to [`SpottingModel::transcribe`].
    type Ctx;

    fn num_queries(&self) -> usize;

    /// The `[N, d]` empty-query embedding table (untracked).
    fn empty_query_table(&self) -> Tensor;

    /// Runs one frame against the query set, returning the frame context,
    /// the updated query set and the per-query predictions.
    fn decode_frame(&self, frame: &Tensor, queries: &QuerySet)
        -> Result<(Self::Ctx, QuerySet, FramePredictions)>;

    /// Reads the text under a predicted box.
    fn transcribe(&self, ctx: &Self::Ctx, bbox: &RotatedBox<f64>) -> Result<String>;
}

/// Live tracking state: surviving text queries and the id counter.
pub struct TrackerState {
    live: Vec<QueryEntry>,
    misses: BTreeMap<u64, usize>,
    next_track_id: u64,
    pub tau: f64,
    /// Consecutive sub-tau frames tolerated before termination.
    pub patience: usize,
}

impl TrackerState {
    pub fn new(tau: f64) -> TrackerState {
        TrackerState {
            live: Vec::new(),
            misses: BTreeMap::new(),
            next_track_id: 0,
            tau,
            patience: 0,
        }
    }

    pub fn live_queries(&self) -> &[QueryEntry] {
        &self.live
    }

    pub fn next_track_id(&self) -> u64 {
        self.next_track_id
    }
}

/// One emitted track observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub frame: usize,
    pub bbox: RotatedBox<f64>,
    pub score: f64,
    pub text: String,
}

/// All observations of one track identity, in frame order.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub track_id: u64,
    pub observations: Vec<Observation>,
}

/// Builds the next frame's query set: every surviving text query (embedding
/// carried over) plus fresh empty queries from the table until exactly N
/// slots are filled.
pub fn advance_query_set(prev_text_queries: &[QueryEntry], table: &Tensor) -> Result<QuerySet> {
    let n = table.shape()[0];
    if prev_text_queries.len() > n {
        return Err(Error::Capacity(format!(
            "{} live text queries exceed the configured {} query slots",
            prev_text_queries.len(),
            n
        )));
    }
    let mut entries = Vec::with_capacity(n);
    for e in prev_text_queries {
        if e.kind != QueryKind::Text {
            return Err(Error::Contract(
                "advance_query_set expects text queries only".into(),
            ));
        }
        entries.push(e.clone());
    }
    for slot in 0..n - prev_text_queries.len() {
        entries.push(QueryEntry::empty(table.row(slot)?));
    }
    QuerySet::new(entries)
}

/// Runs one frame of threshold-based lifecycle: promotes confident empty
/// queries to new tracks, drops text queries that fell below tau, and emits
/// an observation (with transcription) for every surviving track.
pub fn inference_step<M: SpottingModel>(
    model: &M,
    frame: &Tensor,
    frame_idx: usize,
    state: &mut TrackerState,
) -> Result<Vec<(u64, Observation)>> {
    let queries = advance_query_set(&state.live, &model.empty_query_table())?;
    let (ctx, updated, preds) = model.decode_frame(frame, &queries)?;
    let mut emitted = Vec::new();
    let mut live = Vec::new();
    for (i, entry) in updated.entries().iter().enumerate() {
        let score = preds.scores[i];
        match entry.kind {
            QueryKind::Text => {
                let id = entry.track_id.expect("text query carries an id");
                if score >= state.tau {
                    let text = model.transcribe(&ctx, &preds.boxes[i])?;
                    emitted.push((
                        id,
                        Observation {
                            frame: frame_idx,
                            bbox: preds.boxes[i],
                            score,
                            text,
                        },
                    ));
                    state.misses.remove(&id);
                    live.push(entry.clone());
                } else {
                    // below tau: never emit; terminate once patience runs out
                    let miss = state.misses.entry(id).or_insert(0);
                    *miss += 1;
                    if *miss <= state.patience {
                        live.push(entry.clone());
                    } else {
                        state.misses.remove(&id);
                    }
                }
            }
            QueryKind::Empty => {
                if score >= state.tau {
                    let id = state.next_track_id;
                    state.next_track_id += 1;
                    let text = model.transcribe(&ctx, &preds.boxes[i])?;
                    emitted.push((
                        id,
                        Observation {
                            frame: frame_idx,
                            bbox: preds.boxes[i],
                            score,
                            text,
                        },
                    ));
                    live.push(QueryEntry::text(entry.embedding.clone(), id, score));
                }
            }
        }
    }
    state.live = live;
    Ok(emitted)
}

/// Folds [`inference_step`] over a frame sequence from a fresh state and
/// assembles trajectories sorted by track id.
pub fn spot_video<M: SpottingModel>(
    frames: &[Tensor],
    model: &M,
    tau: f64,
) -> Result<Vec<Trajectory>> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("spot_video needs at least one frame".into()));
    }
    let mut state = TrackerState::new(tau);
    let mut by_id: BTreeMap<u64, Vec<Observation>> = BTreeMap::new();
    for (idx, frame) in frames.iter().enumerate() {
        for (id, obs) in inference_step(model, frame, idx, &mut state)? {
            by_id.entry(id).or_default().push(obs);
        }
    }
    Ok(by_id
        .into_iter()
        .map(|(track_id, observations)| Trajectory {
            track_id,
            observations,
        })
        .collect())
}

impl SpottingModel for Model {
    type Ctx = (crate::model::Binding, FeatureMap<f64>);

    fn num_queries(&self) -> usize {
        self.config().num_queries
    }

    fn empty_query_table(&self) -> Tensor {
        let bind = self.bind(None);
        self.query_table(&bind).clone()
    }

    fn decode_frame(
        &self,
        frame: &Tensor,
        queries: &QuerySet,
    ) -> Result<(Self::Ctx, QuerySet, FramePredictions)> {
        let bind = self.bind(None);
        let (pyramid, updated, preds) = self.forward_frame(&bind, frame, queries)?;
        Ok(((bind, pyramid.fused4), updated, preds))
    }

    fn transcribe(&self, ctx: &Self::Ctx, bbox: &RotatedBox<f64>) -> Result<String> {
        let roi = self.roi_features(&ctx.1, bbox)?;
        self.recognition_decode(&ctx.0, &roi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scripted model: per frame, a list of (slot, score, box) the "decoder"
    /// reports; everything else scores 0.
    pub(crate) struct FakeModel {
        pub n: usize,
        pub frames: Vec<Vec<(usize, f64, RotatedBox<f64>)>>,
    }

    impl FakeModel {
        fn frame_tensor(idx: usize) -> Tensor {
            Tensor::scalar(idx as f64)
        }
    }

    impl SpottingModel for FakeModel {
        type Ctx = ();

        fn num_queries(&self) -> usize {
            self.n
        }

        fn empty_query_table(&self) -> Tensor {
            Tensor::zeros(&[self.n, 4])
        }

        fn decode_frame(
            &self,
            frame: &Tensor,
            queries: &QuerySet,
        ) -> Result<(Self::Ctx, QuerySet, FramePredictions)> {
            let t = frame.values()[0] as usize;
            let script = &self.frames[t];
            let mut scores = vec![0.0; self.n];
            let mut boxes = vec![RotatedBox::new(0.5, 0.5, 0.2, 0.1, 0.0).unwrap(); self.n];
            for &(slot, score, bbox) in script {
                scores[slot] = score;
                boxes[slot] = bbox;
            }
            let terms = (0..self.n)
                .map(|i| crate::losses::PredictionTerms {
                    logits: Tensor::from_vec(&[2], vec![scores[i], 1.0 - scores[i]]).unwrap(),
                    bbox: Tensor::from_vec(
                        &[4],
                        vec![boxes[i].cx(), boxes[i].cy(), boxes[i].w(), boxes[i].h()],
                    )
                    .unwrap(),
                    theta: Tensor::scalar(boxes[i].theta()),
                })
                .collect();
            let entries = queries
                .entries()
                .iter()
                .enumerate()
                .map(|(i, e)| QueryEntry {
                    embedding: e.embedding.clone(),
                    kind: e.kind,
                    track_id: e.track_id,
                    last_score: scores[i],
                })
                .collect();
            Ok((
                (),
                QuerySet::new(entries)?,
                FramePredictions {
                    terms,
                    scores,
                    boxes,
                },
            ))
        }

        fn transcribe(&self, _ctx: &Self::Ctx, _bbox: &RotatedBox<f64>) -> Result<String> {
            Ok(String::new())
        }
    }

    fn bb(cx: f64) -> RotatedBox<f64> {
        RotatedBox::new(cx, 0.5, 0.2, 0.1, 0.0).unwrap()
    }

    #[test]
    fn advance_query_set_composition() {
        let table: Tensor = Tensor::zeros(&[5, 4]);
        // t = 1: no text queries -> all five slots empty
        let qs = advance_query_set(&[], &table).unwrap();
        assert_eq!(qs.len(), 5);
        assert_eq!(qs.count_text(), 0);

        let text: Vec<QueryEntry> = vec![
            QueryEntry::text(Tensor::zeros(&[4]), 3, 0.9),
            QueryEntry::text(Tensor::zeros(&[4]), 8, 0.8),
        ];
        let qs = advance_query_set(&text, &table).unwrap();
        assert_eq!(qs.len(), 5);
        assert_eq!(qs.count_text(), 2);
        assert_eq!(qs.entries()[0].track_id, Some(3));
        assert_eq!(qs.entries()[1].track_id, Some(8));

        let too_many: Vec<QueryEntry> = (0..6)
            .map(|i| QueryEntry::text(Tensor::zeros(&[4]), i, 0.9))
            .collect();
        assert!(matches!(
            advance_query_set(&too_many, &table).unwrap_err(),
            Error::Capacity(_)
        ));
    }

    #[test]
    fn lifecycle_promote_track_terminate() {
        // slot scores: frame 0 promotes slot 0; frame 1 keeps it (text
        // queries sit first after advance); frame 2 drops it.
        let model = FakeModel {
            n: 3,
            frames: vec![
                vec![(0, 0.6, bb(0.3))],
                vec![(0, 0.7, bb(0.35))],
                vec![(0, 0.4, bb(0.4))],
            ],
        };
        let mut state = TrackerState::new(0.5);
        let e0 = inference_step(&model, &FakeModel::frame_tensor(0), 0, &mut state).unwrap();
        assert_eq!(e0.len(), 1);
        assert_eq!(e0[0].0, 0);
        assert_eq!(state.live_queries().len(), 1);

        let e1 = inference_step(&model, &FakeModel::frame_tensor(1), 1, &mut state).unwrap();
        assert_eq!(e1.len(), 1);
        assert_eq!(e1[0].0, 0, "same track id across frames");

        let e2 = inference_step(&model, &FakeModel::frame_tensor(2), 2, &mut state).unwrap();
        assert!(e2.is_empty(), "sub-tau frame emits nothing");
        assert!(state.live_queries().is_empty(), "track terminated");
    }

    #[test]
    fn score_exactly_tau_counts_as_present() {
        let model = FakeModel {
            n: 2,
            frames: vec![vec![(1, 0.5, bb(0.6))]],
        };
        let mut state = TrackerState::new(0.5);
        let emitted = inference_step(&model, &FakeModel::frame_tensor(0), 0, &mut state).unwrap();
        assert_eq!(emitted.len(), 1);
        assert_eq!(emitted[0].1.score, 0.5);
    }

    #[test]
    fn spot_video_assembles_trajectories() {
        let model = FakeModel {
            n: 4,
            frames: vec![
                vec![(0, 0.9, bb(0.2)), (1, 0.8, bb(0.7))],
                vec![(0, 0.9, bb(0.25)), (1, 0.85, bb(0.72))],
                vec![(0, 0.9, bb(0.3))],
            ],
        };
        let frames: Vec<Tensor> = (0..3).map(FakeModel::frame_tensor).collect();
        let trajs = spot_video(&frames, &model, 0.5).unwrap();
        assert_eq!(trajs.len(), 2);
        assert_eq!(trajs[0].track_id, 0);
        assert_eq!(trajs[0].observations.len(), 3);
        assert_eq!(trajs[1].track_id, 1);
        assert_eq!(trajs[1].observations.len(), 2);
        for t in &trajs {
            for pair in t.observations.windows(2) {
                assert!(pair[0].frame < pair[1].frame);
            }
        }
        assert!(matches!(
            spot_video(&[], &model, 0.5).unwrap_err(),
            Error::InvalidArgument(_)
        ));
    }

    #[test]
    fn terminated_ids_are_never_reused() {
        // track appears, dies, a new one appears: ids must differ
        let model = FakeModel {
            n: 2,
            frames: vec![
                vec![(0, 0.9, bb(0.2))],
                vec![],
                vec![(0, 0.9, bb(0.2))],
            ],
        };
        let frames: Vec<Tensor> = (0..3).map(FakeModel::frame_tensor).collect();
        let trajs = spot_video(&frames, &model, 0.5).unwrap();
        assert_eq!(trajs.len(), 2);
        assert_eq!(trajs[0].track_id, 0);
        assert_eq!(trajs[1].track_id, 1);
    }
}

//! Query-conditioned transformer decoder and the per-query output heads.
//!
//! The N decoder slots mix carried-over text queries and fresh empty queries;
//! each slot cross-attends to the encoded frame and emits a two-way score,
//! a sigmoid-bounded box, and an angle predicted as a (sin, cos) pair that is
//! converted through atan2 and canonicalized.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::RotatedBox;
use crate::losses::{PredictionTerms, TEXT_CLASS};
use crate::Tensor;

use super::layers::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
use super::vars::{Binding, VarStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryKind {
    Empty,
    Text,
}

/// One decoder slot.
#[derive(Debug, Clone)]
pub struct QueryEntry {
    /// `[d]` query embedding; tracked during training when it came from the
    /// previous frame's decoder output.
    pub embedding: Tensor,
    pub kind: QueryKind,
    pub track_id: Option<u64>,
    pub last_score: f64,
}

impl QueryEntry {
    pub fn empty(embedding: Tensor) -> QueryEntry {
        QueryEntry {
            embedding,
            kind: QueryKind::Empty,
            track_id: None,
            last_score: 0.0,
        }
    }

    pub fn text(embedding: Tensor, track_id: u64, last_score: f64) -> QueryEntry {
        QueryEntry {
            embedding,
            kind: QueryKind::Text,
            track_id: Some(track_id),
            last_score,
        }
    }
}

/// The per-frame set of decoder queries.
#[derive(Debug, Clone)]
pub struct QuerySet {
    entries: Vec<QueryEntry>,
}

impl QuerySet {
    /// Validates that text queries (and only they) carry a track id.
    pub fn new(entries: Vec<QueryEntry>) -> Result<QuerySet> {
        for (i, e) in entries.iter().enumerate() {
            let consistent = match e.kind {
                QueryKind::Text => e.track_id.is_some(),
                QueryKind::Empty => e.track_id.is_none(),
            };
            if !consistent {
                return Err(Error::Contract(format!(
                    "query slot {i}: kind {:?} inconsistent with track id {:?}",
                    e.kind, e.track_id
                )));
            }
        }
        Ok(QuerySet { entries })
    }

    pub fn entries(&self) -> &[QueryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count_text(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == QueryKind::Text)
            .count()
    }

    /// Stacks the entry embeddings into an `[N, d]` matrix, preserving any
    /// tape bindings.
    pub fn matrix(&self) -> Tensor {
        let rows: Vec<Tensor> = self
            .entries
            .iter()
            .map(|e| {
                let d = e.embedding.len();
                e.embedding.reshape(&[1, d]).expect("row reshape")
            })
            .collect();
        let refs: Vec<&Tensor> = rows.iter().collect();
        Tensor::concat(&refs, 0)
    }
}

/// Per-query outputs of one decoder pass: differentiable terms for the
/// losses plus plain mirrors for matching and the tracker.
#[derive(Debug, Clone)]
pub struct FramePredictions {
    pub terms: Vec<PredictionTerms>,
    /// Text-class probability per query.
    pub scores: Vec<f64>,
    /// Box (with canonical angle) per query.
    pub boxes: Vec<RotatedBox<f64>>,
}

impl FramePredictions {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

pub(crate) struct DecoderLayer {
    self_attn: MultiHeadAttention,
    cross_attn: MultiHeadAttention,
    norm1: LayerNorm,
    norm2: LayerNorm,
    norm3: LayerNorm,
    ff: FeedForward,
}

impl DecoderLayer {
    pub(crate) fn new(
        vs: &mut VarStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        n_heads: usize,
    ) -> DecoderLayer {
        DecoderLayer {
            self_attn: MultiHeadAttention::new(vs, rng, &format!("{name}.self_attn"), d_model, n_heads),
            cross_attn: MultiHeadAttention::new(vs, rng, &format!("{name}.cross_attn"), d_model, n_heads),
            norm1: LayerNorm::new(vs, &format!("{name}.norm1"), d_model),
            norm2: LayerNorm::new(vs, &format!("{name}.norm2"), d_model),
            norm3: LayerNorm::new(vs, &format!("{name}.norm3"), d_model),
            ff: FeedForward::new(vs, rng, &format!("{name}.ff"), d_model, 2 * d_model),
        }
    }

    pub(crate) fn forward(
        &self,
        bind: &Binding,
        q: &Tensor,
        memory: &Tensor,
        pos: &Tensor,
    ) -> Result<Tensor> {
        let h = self.norm1.forward(bind, q);
        let q = q.add(&self.self_attn.forward(bind, &h, &h, &h)?);
        let h = self.norm2.forward(bind, &q);
        let keys = memory.add(pos);
        let q = q.add(&self.cross_attn.forward(bind, &h, &keys, memory)?);
        let h = self.norm3.forward(bind, &q);
        Ok(q.add(&self.ff.forward(bind, &h)?))
    }
}

pub(crate) struct Heads {
    score: Linear,
    bbox: Linear,
    angle: Linear,
}

impl Heads {
    pub(crate) fn new(vs: &mut VarStore, rng: &mut ChaCha8Rng, d_model: usize) -> Heads {
        Heads {
            score: Linear::new(vs, rng, "heads.score", d_model, 2),
            bbox: Linear::new(vs, rng, "heads.bbox", d_model, 4),
            // cos component biased to 1 so atan2 starts away from the origin
            angle: Linear::with_bias(vs, rng, "heads.angle", d_model, 2, vec![0.0, 1.0]),
        }
    }

    pub(crate) fn forward(&self, bind: &Binding, queries: &Tensor) -> Result<FramePredictions> {
        let n = queries.shape()[0];
        let logits_all = self.score.forward(bind, queries)?;
        let bbox_all = self.bbox.forward(bind, queries)?.sigmoid();
        let angle_all = self.angle.forward(bind, queries)?;
        let probs = logits_all.detached().softmax(1);

        let mut terms = Vec::with_capacity(n);
        let mut scores = Vec::with_capacity(n);
        let mut boxes = Vec::with_capacity(n);
        for i in 0..n {
            let logits = logits_all.row(i)?;
            let bbox = bbox_all.row(i)?;
            let angle_pair = angle_all.row(i)?;
            let theta = angle_pair
                .element(0)?
                .atan2(&angle_pair.element(1)?)
                .mod_angle();
            let b = bbox.values();
            boxes.push(RotatedBox::new(b[0], b[1], b[2], b[3], theta.item())?);
            scores.push(probs.values()[i * 2 + TEXT_CLASS]);
            terms.push(PredictionTerms {
                logits,
                bbox,
                theta,
            });
        }
        Ok(FramePredictions {
            terms,
            scores,
            boxes,
        })
    }
}

pub(crate) struct Decoder {
    layers: Vec<DecoderLayer>,
    pub(crate) heads: Heads,
}

impl Decoder {
    pub(crate) fn new(
        vs: &mut VarStore,
        rng: &mut ChaCha8Rng,
        d_model: usize,
        n_heads: usize,
        n_layers: usize,
    ) -> Decoder {
        let layers = (0..n_layers)
            .map(|i| DecoderLayer::new(vs, rng, &format!("decoder.layer{i}"), d_model, n_heads))
            .collect();
        let heads = Heads::new(vs, rng, d_model);
        Decoder { layers, heads }
    }

    /// Runs the layers and heads; returns the updated query set (same kinds
    /// and ids, refreshed embeddings and scores) plus the predictions.
    pub(crate) fn forward(
        &self,
        bind: &Binding,
        memory: &Tensor,
        pos: &Tensor,
        queries: &QuerySet,
    ) -> Result<(QuerySet, FramePredictions)> {
        let mut q = queries.matrix();
        for layer in &self.layers {
            q = layer.forward(bind, &q, memory, pos)?;
        }
        let preds = self.heads.forward(bind, &q)?;
        let mut entries = Vec::with_capacity(queries.len());
        for (i, e) in queries.entries().iter().enumerate() {
            let embedding = q.row(i)?;
            entries.push(QueryEntry {
                embedding,
                kind: e.kind,
                track_id: e.track_id,
                last_score: preds.scores[i],
            });
        }
        Ok((QuerySet::new(entries)?, preds))
    }
}

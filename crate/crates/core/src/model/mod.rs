//! The learned network: conv backbone, single-scale transformer encoder,
//! query-conditioned decoder with score/box/angle heads, and the attention
//! recognition head over rotated-RoI features.

mod backbone;
pub mod config;
mod decoder;
mod encoder;
mod layers;
mod recognition;
pub mod vars;

pub use config::{ModelConfig, Vocab, EOS, PAD, SOS};
pub use decoder::{FramePredictions, QueryEntry, QueryKind, QuerySet};
pub use vars::{Binding, ParamId, VarStore};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{rotated_roi_align, FeatureMap, RoIParams, RotatedBox};
use crate::tensor::{read_checkpoint, write_checkpoint};
use crate::{Tape, Tensor};

use backbone::Backbone;
use decoder::Decoder;
use encoder::Encoder;
use recognition::RecognitionHead;

/// Number of channels of the fused stride-4 map (and so of RoI features).
pub const ROI_CHANNELS: usize = backbone::C_ROI;

pub struct Model {
    config: ModelConfig,
    vocab: Vocab,
    seed: u64,
    store: VarStore,
    backbone: Backbone,
    encoder: Encoder,
    decoder: Decoder,
    recognition: RecognitionHead,
    query_table: ParamId,
}

/// Backbone output pair: the fused stride-4 map RoI features are cut from
/// and the stride-8 map the encoder consumes.
#[derive(Debug)]
pub struct Pyramid {
    pub fused4: FeatureMap<f64>,
    pub stride8: FeatureMap<f64>,
}

/// Encoded frame: flattened memory tokens plus their position table.
pub struct EncodedFrame {
    pub memory: Tensor,
    pub pos: Tensor,
    pub height: usize,
    pub width: usize,
}

impl EncodedFrame {
    /// The encoder output as a `[d, H, W]` feature map (same spatial shape
    /// as its input).
    pub fn feature_map(&self) -> FeatureMap<f64> {
        let d = self.memory.shape()[1];
        FeatureMap::new(
            self.memory
                .transpose()
                .reshape(&[d, self.height, self.width])
                .expect("token count matches extent"),
        )
        .expect("rank 3")
    }
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let vocab = Vocab::new(&config.alphabet);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = VarStore::new();
        let backbone = Backbone::new(&mut store, &mut rng);
        let encoder = Encoder::new(
            &mut store,
            &mut rng,
            backbone::C_ENC,
            config.d_model,
            config.n_heads,
            config.encoder_layers,
        );
        let decoder = Decoder::new(
            &mut store,
            &mut rng,
            config.d_model,
            config.n_heads,
            config.decoder_layers,
        );
        let recognition = RecognitionHead::new(
            &mut store,
            &mut rng,
            backbone::C_ROI,
            config.d_model,
            vocab.size(),
        );
        let query_table = store.add(
            "query_table",
            layers::uniform_init(&mut rng, &[config.num_queries, config.d_model], config.d_model),
        );
        Ok(Model {
            config,
            vocab,
            seed,
            store,
            backbone,
            encoder,
            decoder,
            recognition,
            query_table,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_queries(&self) -> usize {
        self.config.num_queries
    }

    pub fn store(&self) -> &VarStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut VarStore {
        &mut self.store
    }

    /// Binds the parameters onto `tape` for training, or detached for frozen
    /// inference.
    pub fn bind(&self, tape: Option<&Tape>) -> Binding {
        self.store.bind(tape)
    }

    /// The `[N, d]` learned empty-query embedding table under `bind`.
    pub fn query_table<'a>(&self, bind: &'a Binding) -> &'a Tensor {
        bind.get(self.query_table)
    }

    /// Feature pyramid of one `[3, H, W]` frame; extents must divide by 8.
    pub fn backbone_forward(&self, bind: &Binding, frame: &Tensor) -> Result<Pyramid> {
        let p = self.backbone.forward(bind, frame)?;
        Ok(Pyramid {
            fused4: p.fused4,
            stride8: p.stride8,
        })
    }

    /// Encodes the stride-8 features into decoder memory.
    pub fn encoder_forward(&self, bind: &Binding, features: &FeatureMap<f64>) -> Result<EncodedFrame> {
        let (memory, pos) = self.encoder.forward(bind, features.tensor())?;
        Ok(EncodedFrame {
            memory,
            pos,
            height: features.height(),
            width: features.width(),
        })
    }

    /// Decodes the query set against an encoded frame; the query count must
    /// equal the configured N.
    pub fn decoder_forward(
        &self,
        bind: &Binding,
        encoded: &EncodedFrame,
        queries: &QuerySet,
    ) -> Result<(QuerySet, FramePredictions)> {
        assert!(
            queries.len() == self.config.num_queries,
            "decoder expects exactly {} queries, got {}",
            self.config.num_queries,
            queries.len()
        );
        self.decoder
            .forward(bind, &encoded.memory, &encoded.pos, queries)
    }

    /// RoI features of a normalized box on the fused stride-4 map.
    pub fn roi_features(
        &self,
        fused4: &FeatureMap<f64>,
        bbox: &RotatedBox<f64>,
    ) -> Result<Tensor> {
        let px = bbox.to_pixels(fused4.width(), fused4.height());
        let roi = RoIParams::new(px, self.config.roi_h, self.config.roi_w)?;
        rotated_roi_align(fused4, &roi)
    }

    /// Teacher-forced recognition logits for `target` (one `[V]` tensor per
    /// character plus one for EOS). Unknown symbols yield a vocabulary error.
    pub fn recognition_forward(
        &self,
        bind: &Binding,
        roi_features: &Tensor,
        target: &str,
    ) -> Result<Vec<Tensor>> {
        let ids = self.vocab.encode(target)?;
        self.recognition.teacher_forced(bind, roi_features, &ids)
    }

    /// Supervision classes aligned with [`Model::recognition_forward`].
    pub fn recognition_targets(&self, target: &str) -> Result<Vec<usize>> {
        let mut ids = self.vocab.encode(target)?;
        ids.push(EOS);
        Ok(ids)
    }

    /// Greedy decode of RoI features into a string.
    pub fn recognition_decode(&self, bind: &Binding, roi_features: &Tensor) -> Result<String> {
        let ids = self
            .recognition
            .greedy(bind, roi_features, self.config.max_text_len)?;
        Ok(self.vocab.decode(&ids))
    }

    /// Full frozen-frame pass: backbone, encoder, decoder.
    pub fn forward_frame(
        &self,
        bind: &Binding,
        frame: &Tensor,
        queries: &QuerySet,
    ) -> Result<(Pyramid, QuerySet, FramePredictions)> {
        let pyramid = self.backbone_forward(bind, frame)?;
        let encoded = self.encoder_forward(bind, &pyramid.stride8)?;
        let (updated, preds) = self.decoder_forward(bind, &encoded, queries)?;
        Ok((pyramid, updated, preds))
    }

    /// Writes the checkpoint manifest (with config and seed) plus blob.
    pub fn save(&self, path: &Path) -> Result<()> {
        let entries: Vec<(String, Tensor)> = self
            .store
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        write_checkpoint(
            path,
            &entries,
            Some(serde_json::to_value(&self.config)?),
            Some(self.seed),
        )
    }

    /// Rebuilds a model from a checkpoint written by [`Model::save`].
    pub fn load(path: &Path) -> Result<Model> {
        let (entries, manifest) = read_checkpoint(path)?;
        let config_value = manifest
            .model_config
            .ok_or_else(|| Error::Incompatible("checkpoint lacks a model config".into()))?;
        let config: ModelConfig = serde_json::from_value(config_value)?;
        let seed = manifest
            .seed
            .ok_or_else(|| Error::Incompatible("checkpoint lacks the RNG seed".into()))?;
        let mut model = Model::new(config, seed)?;
        model.store_mut().load_from(&entries)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_check;
    use rand::Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            num_queries: 5,
            alphabet: "ab".into(),
            max_text_len: 4,
            roi_h: 2,
            roi_w: 4,
            ..ModelConfig::default()
        }
    }

    fn random_frame(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::from_vec(&[3, h, w], data).unwrap()
    }

    fn empty_queries(model: &Model, bind: &Binding) -> QuerySet {
        let table = model.query_table(bind);
        let entries = (0..model.num_queries())
            .map(|i| QueryEntry::empty(table.row(i).unwrap()))
            .collect();
        QuerySet::new(entries).unwrap()
    }

    #[test]
    fn backbone_shapes_and_determinism() {
        let model = Model::new(tiny_config(), 3).unwrap();
        let bind = model.bind(None);
        let frame = random_frame(96, 96, 1);
        let p = model.backbone_forward(&bind, &frame).unwrap();
        assert_eq!(p.stride8.tensor().shape(), &[48, 12, 12]);
        assert_eq!(p.fused4.tensor().shape(), &[32, 24, 24]);
        let p2 = model.backbone_forward(&bind, &frame).unwrap();
        assert_eq!(p.fused4.tensor().values(), p2.fused4.tensor().values());

        let bad = random_frame(90, 96, 2);
        assert!(matches!(
            model.backbone_forward(&bind, &bad).unwrap_err(),
            Error::ShapeMismatch { .. }
        ));
    }

    #[test]
    fn backbone_head_is_differentiable() {
        let model = Model::new(tiny_config(), 3).unwrap();
        let frame = random_frame(16, 16, 4);
        let err = finite_diff_check(
            |leaf| {
                let bind = model.bind(None);
                let p = model.backbone_forward(&bind, leaf).unwrap();
                p.fused4.tensor().mean()
            },
            &frame,
            1e-6,
        );
        assert!(err < 1e-5, "backbone gradient error {err}");
    }

    #[test]
    fn encoder_layers_are_identity_at_init() {
        // same seed, different depth: identical projections, so identical
        // outputs exactly when every residual block starts at zero
        let mut deep_cfg = tiny_config();
        deep_cfg.encoder_layers = 3;
        let shallow = Model::new(tiny_config(), 7).unwrap();
        let deep = Model::new(deep_cfg, 7).unwrap();
        let frame = random_frame(48, 48, 5);
        let bs = shallow.bind(None);
        let bd = deep.bind(None);
        let ps = shallow.backbone_forward(&bs, &frame).unwrap();
        let pd = deep.backbone_forward(&bd, &frame).unwrap();
        let es = shallow.encoder_forward(&bs, &ps.stride8).unwrap();
        let ed = deep.encoder_forward(&bd, &pd.stride8).unwrap();
        assert_eq!(es.memory.values(), ed.memory.values());
        let fm = es.feature_map();
        assert_eq!(
            (fm.height(), fm.width()),
            (ps.stride8.height(), ps.stride8.width())
        );
    }

    #[test]
    fn decoder_emits_one_bounded_prediction_per_query() {
        let model = Model::new(tiny_config(), 11).unwrap();
        let bind = model.bind(None);
        let frame = random_frame(48, 48, 6);
        let (_, updated, preds) = model
            .forward_frame(&bind, &frame, &empty_queries(&model, &bind))
            .unwrap();
        assert_eq!(preds.len(), model.num_queries());
        assert_eq!(updated.len(), model.num_queries());
        for (i, b) in preds.boxes.iter().enumerate() {
            let s = preds.scores[i];
            assert!((0.0..=1.0).contains(&s));
            for v in [b.cx(), b.cy(), b.w(), b.h()] {
                assert!((0.0..=1.0).contains(&v));
            }
            assert!((-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2).contains(&b.theta()));
        }
        // determinism
        let (_, _, preds2) = model
            .forward_frame(&bind, &frame, &empty_queries(&model, &bind))
            .unwrap();
        assert_eq!(preds.scores, preds2.scores);
    }

    #[test]
    fn teacher_forcing_length_and_greedy_cap() {
        let model = Model::new(tiny_config(), 13).unwrap();
        let bind = model.bind(None);
        let frame = random_frame(48, 48, 7);
        let p = model.backbone_forward(&bind, &frame).unwrap();
        let bbox = RotatedBox::new(0.5, 0.5, 0.4, 0.2, 0.1).unwrap();
        let roi = model.roi_features(&p.fused4, &bbox).unwrap();
        let logits = model.recognition_forward(&bind, &roi, "ab").unwrap();
        assert_eq!(logits.len(), 3);
        assert_eq!(model.recognition_targets("ab").unwrap().len(), 3);
        let decoded = model.recognition_decode(&bind, &roi).unwrap();
        assert!(decoded.chars().count() <= model.config().max_text_len);
        assert!(matches!(
            model.recognition_forward(&bind, &roi, "xy").unwrap_err(),
            Error::Vocabulary('x')
        ));
    }

    #[test]
    fn checkpoint_round_trip_reproduces_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = Model::new(tiny_config(), 17).unwrap();
        model.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();
        assert_eq!(loaded.seed(), 17);
        let frame = random_frame(48, 48, 8);
        let b1 = model.bind(None);
        let b2 = loaded.bind(None);
        let (_, _, p1) = model
            .forward_frame(&b1, &frame, &empty_queries(&model, &b1))
            .unwrap();
        let (_, _, p2) = loaded
            .forward_frame(&b2, &frame, &empty_queries(&loaded, &b2))
            .unwrap();
        assert_eq!(p1.scores, p2.scores);
    }
}

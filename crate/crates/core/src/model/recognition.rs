//! Attention seq2seq recognition head over rotated-RoI features: a starter
//! embedding for SOS, one gated recurrent layer, and one content-based
//! attention layer over the RoI cells. Teacher forcing yields per-step
//! logits; greedy decoding stops at EOS or the length cap.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::config::{EOS, SOS};
use crate::Tensor;

use super::layers::{uniform_init, Linear};
use super::vars::{Binding, ParamId, VarStore};

pub(crate) struct RecognitionHead {
    /// `[V, d]` token embeddings; also produces the SOS starter vector.
    embed: ParamId,
    key_proj: Linear,
    val_proj: Linear,
    // gated recurrent cell over [token embedding ; attention context]
    gate_z: Linear,
    gate_r: Linear,
    cand: Linear,
    out: Linear,
    d: usize,
    vocab_size: usize,
}

impl RecognitionHead {
    pub(crate) fn new(
        vs: &mut VarStore,
        rng: &mut ChaCha8Rng,
        roi_channels: usize,
        d: usize,
        vocab_size: usize,
    ) -> RecognitionHead {
        let embed = vs.add("rec.embed", uniform_init(rng, &[vocab_size, d], d));
        RecognitionHead {
            embed,
            key_proj: Linear::new(vs, rng, "rec.key_proj", roi_channels, d),
            val_proj: Linear::new(vs, rng, "rec.val_proj", roi_channels, d),
            gate_z: Linear::new(vs, rng, "rec.gate_z", 3 * d, d),
            gate_r: Linear::new(vs, rng, "rec.gate_r", 3 * d, d),
            cand: Linear::new(vs, rng, "rec.cand", 3 * d, d),
            out: Linear::new(vs, rng, "rec.out", 2 * d, vocab_size),
            d,
            vocab_size,
        }
    }

    /// Projects `[C, oh, ow]` RoI features into attention keys and values
    /// `[oh*ow, d]`.
    fn memory(&self, bind: &Binding, roi: &Tensor) -> Result<(Tensor, Tensor)> {
        let (c, oh, ow) = (roi.shape()[0], roi.shape()[1], roi.shape()[2]);
        let cells = roi.reshape(&[c, oh * ow])?.transpose();
        Ok((
            self.key_proj.forward(bind, &cells)?,
            self.val_proj.forward(bind, &cells)?,
        ))
    }

    /// One recurrent step; `x` is `[1, 2d]` (embedding and previous context),
    /// `h` is `[1, d]`.
    fn cell(&self, bind: &Binding, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        let xh = Tensor::concat(&[x, h], 1);
        let z = self.gate_z.forward(bind, &xh)?.sigmoid();
        let r = self.gate_r.forward(bind, &xh)?.sigmoid();
        let x_rh = Tensor::concat(&[x, &r.mul(h)], 1);
        let n = self.cand.forward(bind, &x_rh)?.tanh();
        Ok(n.neg().add(h).mul(&z).add(&n)) // (1 - z) n + z h
    }

    /// Attention context `[1, d]` of state `h` over keys/values.
    fn context(&self, h: &Tensor, keys: &Tensor, vals: &Tensor) -> Result<Tensor> {
        let scale = 1.0 / (self.d as f64).sqrt();
        let scores = h.matmul(&keys.transpose())?.scale(scale);
        scores.softmax(1).matmul(vals)
    }

    fn embed_token(&self, bind: &Binding, token: usize) -> Result<Tensor> {
        bind.get(self.embed).select_rows(&[token])
    }

    fn step(
        &self,
        bind: &Binding,
        token: usize,
        h: &Tensor,
        ctx: &Tensor,
        keys: &Tensor,
        vals: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let emb = self.embed_token(bind, token)?;
        let x = Tensor::concat(&[&emb, ctx], 1);
        let h = self.cell(bind, &x, h)?;
        let ctx = self.context(&h, keys, vals)?;
        let logits = self
            .out
            .forward(bind, &Tensor::concat(&[&h, &ctx], 1))?
            .reshape(&[self.vocab_size])?;
        Ok((h, ctx, logits))
    }

    /// Teacher-forced logits: one `[V]` tensor per supervised position
    /// (`target` characters followed by EOS).
    pub(crate) fn teacher_forced(
        &self,
        bind: &Binding,
        roi: &Tensor,
        target_ids: &[usize],
    ) -> Result<Vec<Tensor>> {
        let (keys, vals) = self.memory(bind, roi)?;
        let mut h = Tensor::zeros(&[1, self.d]);
        let mut ctx = Tensor::zeros(&[1, self.d]);
        let mut inputs = Vec::with_capacity(target_ids.len() + 1);
        inputs.push(SOS);
        inputs.extend_from_slice(target_ids);
        let mut logits_seq = Vec::with_capacity(inputs.len());
        for &token in &inputs {
            let (h2, ctx2, logits) = self.step(bind, token, &h, &ctx, &keys, &vals)?;
            h = h2;
            ctx = ctx2;
            logits_seq.push(logits);
        }
        Ok(logits_seq)
    }

    /// Greedy decode, stopping at EOS or after `max_len` characters.
    pub(crate) fn greedy(&self, bind: &Binding, roi: &Tensor, max_len: usize) -> Result<Vec<usize>> {
        let (keys, vals) = self.memory(bind, roi)?;
        let mut h = Tensor::zeros(&[1, self.d]);
        let mut ctx = Tensor::zeros(&[1, self.d]);
        let mut token = SOS;
        let mut out = Vec::new();
        for _ in 0..max_len {
            let (h2, ctx2, logits) = self.step(bind, token, &h, &ctx, &keys, &vals)?;
            h = h2;
            ctx = ctx2;
            let next = logits
                .values()
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i)
                .expect("non-empty vocabulary");
            if next == EOS {
                break;
            }
            out.push(next);
            token = next;
        }
        Ok(out)
    }
}

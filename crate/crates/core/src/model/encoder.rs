//! Single-scale transformer encoder over the flattened stride-8 features,
//! with 2-D sinusoidal position encodings added to queries and keys.
//! Pre-norm blocks with zeroed residual projections make the whole encoder
//! the identity at initialization.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::Tensor;

use super::layers::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
use super::vars::{Binding, VarStore};

/// Fixed 2-D sinusoidal position table `[h*w, d]`; half the channels encode
/// y, half encode x.
pub(crate) fn position_encoding_2d(h: usize, w: usize, d: usize) -> Tensor {
    assert!(d % 4 == 0, "position encoding needs d divisible by 4");
    let quarter = d / 4;
    let temperature = 10000.0f64;
    let mut data = vec![0.0; h * w * d];
    for y in 0..h {
        for x in 0..w {
            let row = (y * w + x) * d;
            for i in 0..quarter {
                let freq = temperature.powf(2.0 * i as f64 / (d as f64 / 2.0));
                data[row + 2 * i] = (y as f64 / freq).sin();
                data[row + 2 * i + 1] = (y as f64 / freq).cos();
                data[row + d / 2 + 2 * i] = (x as f64 / freq).sin();
                data[row + d / 2 + 2 * i + 1] = (x as f64 / freq).cos();
            }
        }
    }
    Tensor::from_vec(&[h * w, d], data).expect("table shape")
}

pub(crate) struct EncoderLayer {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    norm2: LayerNorm,
    ff: FeedForward,
}

impl EncoderLayer {
    pub(crate) fn new(
        vs: &mut VarStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        n_heads: usize,
    ) -> EncoderLayer {
        EncoderLayer {
            attn: MultiHeadAttention::new(vs, rng, &format!("{name}.attn"), d_model, n_heads),
            norm1: LayerNorm::new(vs, &format!("{name}.norm1"), d_model),
            norm2: LayerNorm::new(vs, &format!("{name}.norm2"), d_model),
            ff: FeedForward::new(vs, rng, &format!("{name}.ff"), d_model, 2 * d_model),
        }
    }

    pub(crate) fn forward(&self, bind: &Binding, x: &Tensor, pos: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(bind, x);
        let qk = h.add(pos);
        let x = x.add(&self.attn.forward(bind, &qk, &qk, &h)?);
        let h = self.norm2.forward(bind, &x);
        Ok(x.add(&self.ff.forward(bind, &h)?))
    }
}

pub(crate) struct Encoder {
    input_proj: Linear,
    layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub(crate) fn new(
        vs: &mut VarStore,
        rng: &mut ChaCha8Rng,
        in_channels: usize,
        d_model: usize,
        n_heads: usize,
        n_layers: usize,
    ) -> Encoder {
        let input_proj = Linear::new(vs, rng, "encoder.input_proj", in_channels, d_model);
        let layers = (0..n_layers)
            .map(|i| EncoderLayer::new(vs, rng, &format!("encoder.layer{i}"), d_model, n_heads))
            .collect();
        Encoder { input_proj, layers }
    }

    /// `[C,H,W] -> ([H*W, d] memory, [H*W, d] position table)`.
    pub(crate) fn forward(&self, bind: &Binding, features: &Tensor) -> Result<(Tensor, Tensor)> {
        let (c, h, w) = (
            features.shape()[0],
            features.shape()[1],
            features.shape()[2],
        );
        let tokens = features.reshape(&[c, h * w])?.transpose();
        let mut x = self.input_proj.forward(bind, &tokens)?;
        let pos = position_encoding_2d(h, w, self.input_proj.out_dim);
        for layer in &self.layers {
            x = layer.forward(bind, &x, &pos)?;
        }
        Ok((x, pos))
    }
}

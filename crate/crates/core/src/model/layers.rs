//! Layer primitives: affine maps, layer norm, multi-head attention, conv
//! blocks. Weights initialize uniformly scaled by fan-in; residual output
//! projections start at zero so every residual block is the identity at
//! step 0.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::Tensor;

use super::vars::{Binding, ParamId, VarStore};

pub(crate) fn uniform_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
    pub(crate) out_dim: usize,
}

impl Linear {
    pub(crate) fn new(
        vs: &mut VarStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Linear {
        let w = vs.add(&format!("{name}.w"), uniform_init(rng, &[in_dim, out_dim], in_dim));
        let b = vs.add(&format!("{name}.b"), Tensor::zeros(&[out_dim]));
        Linear { w, b, out_dim }
    }

    pub(crate) fn new_zeroed(vs: &mut VarStore, name: &str, in_dim: usize, out_dim: usize) -> Linear {
        let w = vs.add(&format!("{name}.w"), Tensor::zeros(&[in_dim, out_dim]));
        let b = vs.add(&format!("{name}.b"), Tensor::zeros(&[out_dim]));
        Linear { w, b, out_dim }
    }

    pub(crate) fn with_bias(
        vs: &mut VarStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: Vec<f64>,
    ) -> Linear {
        let w = vs.add(&format!("{name}.w"), uniform_init(rng, &[in_dim, out_dim], in_dim));
        let b = vs.add(
            &format!("{name}.b"),
            Tensor::from_vec(&[out_dim], bias).expect("bias shape"),
        );
        Linear { w, b, out_dim }
    }

    /// `[n, in] -> [n, out]`
    pub(crate) fn forward(&self, bind: &Binding, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(bind.get(self.w))?.add_row_vector(bind.get(self.b)))
    }
}

pub(crate) struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm {
    pub(crate) fn new(vs: &mut VarStore, name: &str, dim: usize) -> LayerNorm {
        let gamma = vs.add(&format!("{name}.gamma"), Tensor::full(&[dim], 1.0));
        let beta = vs.add(&format!("{name}.beta"), Tensor::zeros(&[dim]));
        LayerNorm { gamma, beta }
    }

    pub(crate) fn forward(&self, bind: &Binding, x: &Tensor) -> Tensor {
        x.layer_norm(bind.get(self.gamma), bind.get(self.beta), 1e-5)
    }
}

pub(crate) struct MultiHeadAttention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    n_heads: usize,
    d_model: usize,
}

impl MultiHeadAttention {
    pub(crate) fn new(
        vs: &mut VarStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        n_heads: usize,
    ) -> MultiHeadAttention {
        MultiHeadAttention {
            wq: Linear::new(vs, rng, &format!("{name}.wq"), d_model, d_model),
            wk: Linear::new(vs, rng, &format!("{name}.wk"), d_model, d_model),
            wv: Linear::new(vs, rng, &format!("{name}.wv"), d_model, d_model),
            // zero output projection keeps the surrounding residual an identity at init
            wo: Linear::new_zeroed(vs, &format!("{name}.wo"), d_model, d_model),
            n_heads,
            d_model,
        }
    }

    /// Scaled dot-product attention of `q: [Lq,d]` over `k, v: [Lk,d]`.
    pub(crate) fn forward(
        &self,
        bind: &Binding,
        q: &Tensor,
        k: &Tensor,
        v: &Tensor,
    ) -> Result<Tensor> {
        let dh = self.d_model / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qq = self.wq.forward(bind, q)?;
        let kk = self.wk.forward(bind, k)?;
        let vv = self.wv.forward(bind, v)?;
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (a, b) = (h * dh, (h + 1) * dh);
            let qh = qq.slice_cols(a, b);
            let kh = kk.slice_cols(a, b);
            let vh = vv.slice_cols(a, b);
            let scores = qh.matmul(&kh.transpose())?.scale(scale);
            let attn = scores.softmax(1);
            heads.push(attn.matmul(&vh)?);
        }
        let head_refs: Vec<&Tensor> = heads.iter().collect();
        self.wo.forward(bind, &Tensor::concat(&head_refs, 1))
    }
}

pub(crate) struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv {
    pub(crate) fn new(
        vs: &mut VarStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Conv {
        let w = vs.add(
            &format!("{name}.w"),
            uniform_init(rng, &[cout, cin, k, k], cin * k * k),
        );
        let b = vs.add(&format!("{name}.b"), Tensor::zeros(&[cout]));
        Conv { w, b, stride, pad }
    }

    pub(crate) fn forward(&self, bind: &Binding, x: &Tensor) -> Result<Tensor> {
        x.conv2d(bind.get(self.w), bind.get(self.b), self.stride, self.pad)
    }
}

/// Two-layer feed-forward block with zeroed second layer (identity residual
/// at init).
pub(crate) struct FeedForward {
    lin1: Linear,
    lin2: Linear,
}

impl FeedForward {
    pub(crate) fn new(
        vs: &mut VarStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        hidden: usize,
    ) -> FeedForward {
        FeedForward {
            lin1: Linear::new(vs, rng, &format!("{name}.lin1"), d_model, hidden),
            lin2: Linear::new_zeroed(vs, &format!("{name}.lin2"), hidden, d_model),
        }
    }

    pub(crate) fn forward(&self, bind: &Binding, x: &Tensor) -> Result<Tensor> {
        self.lin2.forward(bind, &self.lin1.forward(bind, x)?.relu())
    }
}

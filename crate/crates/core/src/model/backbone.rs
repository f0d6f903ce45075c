//! Small conv stack trained from scratch: two stride-2 blocks, a refining
//! block, and a final stride-2 block. The stride-8 output feeds the encoder;
//! the stride-4 path is fused with the upsampled stride-8 features into the
//! map the RoI crops read from.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::FeatureMap;
use crate::Tensor;

use super::layers::Conv;
use super::vars::{Binding, VarStore};

pub(crate) const C1: usize = 16;
pub(crate) const C2: usize = 32;
/// Channels of the stride-8 map entering the encoder projection.
pub(crate) const C_ENC: usize = 48;
/// Channels of the fused stride-4 map the RoI features are cut from.
pub(crate) const C_ROI: usize = 32;

pub(crate) struct Backbone {
    conv1: Conv,
    conv2: Conv,
    conv3: Conv,
    conv4: Conv,
    fuse: Conv,
}

pub(crate) struct Pyramid {
    /// `[C_ROI, H/4, W/4]`
    pub fused4: FeatureMap<f64>,
    /// `[C_ENC, H/8, W/8]`
    pub stride8: FeatureMap<f64>,
}

impl Backbone {
    pub(crate) fn new(vs: &mut VarStore, rng: &mut ChaCha8Rng) -> Backbone {
        Backbone {
            conv1: Conv::new(vs, rng, "backbone.conv1", 3, C1, 3, 2, 1),
            conv2: Conv::new(vs, rng, "backbone.conv2", C1, C2, 3, 2, 1),
            conv3: Conv::new(vs, rng, "backbone.conv3", C2, C2, 3, 1, 1),
            conv4: Conv::new(vs, rng, "backbone.conv4", C2, C_ENC, 3, 2, 1),
            fuse: Conv::new(vs, rng, "backbone.fuse", C2 + C_ENC, C_ROI, 1, 1, 0),
        }
    }

    pub(crate) fn forward(&self, bind: &Binding, frame: &Tensor) -> Result<Pyramid> {
        let shape = frame.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::ShapeMismatch {
                op: "backbone",
                lhs: shape.to_vec(),
                rhs: vec![3, 0, 0],
            });
        }
        let (h, w) = (shape[1], shape[2]);
        if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch {
                op: "backbone (extents must divide by 8)",
                lhs: vec![h, w],
                rhs: vec![8, 8],
            });
        }
        let x1 = self.conv1.forward(bind, frame)?.relu();
        let x2 = self.conv2.forward(bind, &x1)?.relu();
        let x3 = self.conv3.forward(bind, &x2)?.relu();
        let x4 = self.conv4.forward(bind, &x3)?.relu();

        let (h4, w4) = (h / 4, w / 4);
        let up = x4.upsample2x();
        // channel concat via the flattened-2-D view
        let low = x3.reshape(&[C2, h4 * w4])?;
        let high = up.reshape(&[C_ENC, h4 * w4])?;
        let cat = Tensor::concat(&[&low, &high], 0).reshape(&[C2 + C_ENC, h4, w4])?;
        let fused = self.fuse.forward(bind, &cat)?.relu();

        Ok(Pyramid {
            fused4: FeatureMap::new(fused)?,
            stride8: FeatureMap::new(x4)?,
        })
    }
}

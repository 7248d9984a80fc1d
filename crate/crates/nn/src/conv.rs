//! Small strided CNN that turns a square binary mask into a flat embedding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::graph::{ConvGeometry, Graph, Var};
use crate::layers::Linear;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskEncoderConfig {
    /// Side length of the (square) input mask.
    pub resolution: usize,
    /// Output channels of each stride-2 3x3 convolution.
    pub channels: Vec<usize>,
    pub embedding_dim: usize,
}

impl Default for MaskEncoderConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            channels: vec![8, 16, 16],
            embedding_dim: 64,
        }
    }
}

#[derive(Clone, Debug)]
struct ConvLayer {
    kernel: Linear,
    in_channels: usize,
    in_side: usize,
}

#[derive(Clone, Debug)]
pub struct MaskEncoder {
    layers: Vec<ConvLayer>,
    project: Linear,
    pub config: MaskEncoderConfig,
}

const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;

impl MaskEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        config: MaskEncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if config.resolution == 0 || config.channels.is_empty() {
            return Err(NnError::Config(
                "mask encoder needs a resolution and at least one conv".into(),
            ));
        }
        let mut layers = Vec::new();
        let mut side = config.resolution;
        let mut cin = 1;
        for (i, &cout) in config.channels.iter().enumerate() {
            let kernel = Linear::new(
                store,
                &format!("{name}.conv{i}"),
                KERNEL * KERNEL * cin,
                cout,
                true,
                rng,
            );
            layers.push(ConvLayer {
                kernel,
                in_channels: cin,
                in_side: side,
            });
            side = (side + 2 * PAD - KERNEL) / STRIDE + 1;
            cin = cout;
        }
        let flat = side * side * cin;
        let project = Linear::new(
            store,
            &format!("{name}.project"),
            flat,
            config.embedding_dim,
            true,
            rng,
        );
        Ok(Self {
            layers,
            project,
            config,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    /// `masks[B, res*res]` (row-major pixels, 0/1) to `[B, embedding_dim]`.
    pub fn forward(&self, g: &mut Graph, masks: Var) -> Result<Var> {
        let res = self.config.resolution;
        let t = g.value(masks);
        if t.cols() != res * res {
            return Err(NnError::Shape(format!(
                "mask encoder expects {res}x{res} masks, got {} values per row",
                t.cols()
            )));
        }
        let batch = t.rows();
        let mut x = g.reshape(masks, &[batch * res * res, 1]);
        for layer in &self.layers {
            let geo = ConvGeometry {
                batch,
                height: layer.in_side,
                width: layer.in_side,
                channels: layer.in_channels,
                kernel: KERNEL,
                stride: STRIDE,
                pad: PAD,
            };
            let cols = g.im2col(x, geo);
            let y = layer.kernel.forward(g, cols);
            x = g.relu(y);
        }
        let rows = g.value(x).len() / batch;
        let flat = g.reshape(x, &[batch, rows]);
        let e = self.project.forward(g, flat);
        Ok(g.tanh(e))
    }

    /// Convenience wrapper for inference on plain bitmaps.
    pub fn embed(&self, store: &ParamStore, masks: &[Vec<f64>]) -> Result<Tensor> {
        let res = self.config.resolution;
        let data: Vec<f64> = masks.iter().flatten().copied().collect();
        let t = Tensor::new(&[masks.len(), res * res], data)?;
        let mut g = Graph::new(store);
        let m = g.constant(t);
        let e = self.forward(&mut g, m)?;
        Ok(g.value(e).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn embedding_shape_contract() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc =
            MaskEncoder::new(&mut store, "m", MaskEncoderConfig::default(), &mut rng).unwrap();
        let e = enc
            .embed(&store, &[vec![0.0; 64 * 64], vec![1.0; 64 * 64]])
            .unwrap();
        assert_eq!(e.shape(), &[2, 64]);
    }

    #[test]
    fn blank_mask_is_deterministic() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc =
            MaskEncoder::new(&mut store, "m", MaskEncoderConfig::default(), &mut rng).unwrap();
        let a = enc.embed(&store, &[vec![0.0; 64 * 64]]).unwrap();
        let b = enc.embed(&store, &[vec![0.0; 64 * 64]]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_resolution_rejected() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc =
            MaskEncoder::new(&mut store, "m", MaskEncoderConfig::default(), &mut rng).unwrap();
        assert!(enc.embed(&store, &[vec![0.0; 32 * 32]]).is_err());
    }
}

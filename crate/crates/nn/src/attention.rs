//! Causal multi-head self-attention and pre-norm transformer blocks.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::layers::{FeedForward, LayerNorm, Linear};
use crate::params::ParamStore;

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

/// Output of one attention call: the mixed sequence plus each head's `[T, T]` weight node.
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(NnError::Config(format!(
                "{heads} heads do not divide model dim {dim}"
            )));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), dim, dim, true, rng),
            key: Linear::new(store, &format!("{name}.k"), dim, dim, true, rng),
            value: Linear::new(store, &format!("{name}.v"), dim, dim, true, rng),
            output: Linear::new(store, &format!("{name}.o"), dim, dim, true, rng),
            heads,
            dim,
        })
    }

    /// Masked self-attention over `x[T, dim]`: position `i` only sees positions `0..=i`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> AttentionOutput {
        let q = self.query.forward(g, x);
        let k = self.key.forward(g, x);
        let v = self.value.forward(g, x);
        let hd = self.dim / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut mixed = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * hd, hd);
            let kh = g.slice_cols(k, h * hd, hd);
            let vh = g.slice_cols(v, h * hd, hd);
            let scores = g.matmul_nt(qh, kh);
            let scores = g.scale(scores, scale);
            let w = g.softmax_rows(scores, true);
            mixed.push(g.matmul(w, vh));
            weights.push(w);
        }
        let cat = if mixed.len() == 1 {
            mixed[0]
        } else {
            g.concat_cols(&mixed)
        };
        AttentionOutput {
            output: self.output.forward(g, cat),
            weights,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_ff: LayerNorm,
    pub ff: FeedForward,
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            norm_attn: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng)?,
            norm_ff: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            ff: FeedForward::new(store, &format!("{name}.ff"), dim, ff_dim, rng),
        })
    }

    /// `x + attn(ln(x))`, then `x + ff(ln(x))`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<AttentionOutput> {
        if g.value(x).rows() == 0 {
            return Err(NnError::Input(
                "transformer block on an empty sequence".into(),
            ));
        }
        let h = self.norm_attn.forward(g, x);
        let att = self.attn.forward(g, h);
        let x = g.add(x, att.output);
        let h = self.norm_ff.forward(g, x);
        let h = self.ff.forward(g, h);
        Ok(AttentionOutput {
            output: g.add(x, h),
            weights: att.weights,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Tensor {
        Tensor::new(
            &[t, d],
            (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn heads_must_divide_dim() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            MultiHeadAttention::new(&mut store, "a", 10, 3, &mut rng),
            Err(NnError::Config(_))
        ));
    }

    #[test]
    fn single_position_attends_to_itself() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mha = MultiHeadAttention::new(&mut store, "a", 8, 2, &mut rng).unwrap();
        let mut g = Graph::new(&store);
        let x = g.constant(random_input(&mut rng, 1, 8));
        let out = mha.forward(&mut g, x);
        for w in out.weights {
            assert_eq!(g.value(w).data(), &[1.0]);
        }
    }

    #[test]
    fn rows_are_simplices_and_causal() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mha = MultiHeadAttention::new(&mut store, "a", 8, 4, &mut rng).unwrap();
        let mut g = Graph::new(&store);
        let x = g.constant(random_input(&mut rng, 6, 8));
        let out = mha.forward(&mut g, x);
        for w in out.weights {
            let t = g.value(w);
            for i in 0..6 {
                assert!((t.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-5);
                for j in i + 1..6 {
                    assert_eq!(t.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn future_positions_do_not_leak() {
        // two forward passes differing only after position 2 agree on rows 0..=2
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let block = TransformerBlock::new(&mut store, "b", 8, 2, 16, &mut rng).unwrap();
        let base = random_input(&mut rng, 5, 8);
        let mut shuffled = base.clone();
        let tail: Vec<f64> = base.data()[3 * 8..].to_vec();
        let (a, b) = tail.split_at(8);
        shuffled.data_mut()[3 * 8..4 * 8].copy_from_slice(b);
        shuffled.data_mut()[4 * 8..].copy_from_slice(a);
        let run = |input: Tensor| {
            let mut g = Graph::new(&store);
            let x = g.constant(input);
            let y = block.forward(&mut g, x).unwrap().output;
            g.value(y).data()[..3 * 8].to_vec()
        };
        assert_eq!(run(base), run(shuffled));
    }

    #[test]
    fn block_preserves_shape_and_rejects_empty() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let block = TransformerBlock::new(&mut store, "b", 8, 2, 16, &mut rng).unwrap();
        let mut g = Graph::new(&store);
        let x = g.constant(random_input(&mut rng, 7, 8));
        let y = block.forward(&mut g, x).unwrap().output;
        assert_eq!(g.shape(y), &[7, 8]);
        let e = g.constant(Tensor::zeros(&[0, 8]));
        assert!(block.forward(&mut g, e).is_err());
    }
}

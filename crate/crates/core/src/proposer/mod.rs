//! Autoregressive scene-layout transformer over interleaved dialogue and scene tokens.

mod attention;
mod data;
mod loss;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sketchdial_nn::{
    Checkpoint, Graph, LayerNorm, Linear, ParamId, ParamStore, Tensor, TransformerBlock, Var,
};

use crate::error::{CoreError, Result};
use crate::scene::{
    build_context_sequence, scene_token_row, ContextWindow, Scene, SceneToken, SequenceRow,
    TurnOrder, CONTEXT_TURNS, DEFAULT_MAX_OBJECTS, OBJECT_DIM, PADDED_DIM,
};

pub use attention::{
    attention_for_object, detect_unknown_object, AttentionLayer, AttentionMap, AttentionWeight,
    STOPWORDS,
};
pub use data::{
    build_examples, session_examples, session_turns, turn_example, window_for_turn, TrainingExample,
};
pub use loss::{
    graph_loss, loss_cm, loss_cm_eval, scene_targets, softmax, LossComponents, LossSums,
    LossWeights, ObjectPrediction, KIND_END, KIND_OBJECT, KIND_START,
};
pub use train::{EpochMetrics, MetricsRecord, TrainReport};

pub const CHECKPOINT_KIND: &str = "composition_proposer";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposerConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    /// Length of the learned positional table; longer sequences are rejected.
    pub max_positions: usize,
    pub context_turns: usize,
    pub lambda_sub: f64,
    pub lambda_flip: f64,
    pub lambda_size: f64,
    pub lambda_xy: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Training examples per optimizer step.
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub max_objects: usize,
    pub turn_order: TurnOrder,
    /// Score a whole session as one sequence when its history fits the window.
    pub pack_sessions: bool,
    pub attention_layer: AttentionLayer,
}

impl Default for ProposerConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            heads: 8,
            model_dim: 128,
            ff_dim: 512,
            max_positions: 1024,
            context_turns: CONTEXT_TURNS,
            lambda_sub: 5e-2,
            lambda_flip: 5e-2,
            lambda_size: 5e-2,
            lambda_xy: 1.0,
            lr: 1e-4,
            epochs: 200,
            batch_size: 4,
            clip_norm: None,
            seed: 0,
            max_objects: DEFAULT_MAX_OBJECTS,
            turn_order: TurnOrder::InstructionFirst,
            pack_sessions: true,
            attention_layer: AttentionLayer::Last,
        }
    }
}

impl ProposerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.layers == 0 || self.model_dim == 0 || self.ff_dim == 0 {
            return bad("layers, model_dim and ff_dim must be positive".into());
        }
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return bad(format!(
                "{} heads do not divide model dim {}",
                self.heads, self.model_dim
            ));
        }
        if self.context_turns == 0 || self.context_turns > CONTEXT_TURNS {
            return bad(format!("context_turns must be in 1..={CONTEXT_TURNS}"));
        }
        if self.max_objects == 0 || self.max_positions <= self.max_objects {
            return bad("max_positions must exceed max_objects > 0".into());
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return bad("batch_size and lr must be positive".into());
        }
        if let AttentionLayer::Index(i) = self.attention_layer {
            if i >= self.layers {
                return bad(format!("attention layer {i} out of range"));
            }
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_sub: self.lambda_sub,
            lambda_flip: self.lambda_flip,
            lambda_size: self.lambda_size,
            lambda_xy: self.lambda_xy,
        }
    }
}

/// Result of one full scene regeneration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub scene: Scene,
    pub attention: AttentionMap,
    /// The object cap was reached before an end token.
    pub truncated: bool,
    /// Row that produced the end token.
    pub end_position: Option<usize>,
    /// Oldest turns dropped to fit the positional table.
    pub dropped_turns: usize,
}

#[derive(Clone, Debug)]
pub struct CompositionProposer {
    pub config: ProposerConfig,
    pub store: ParamStore,
    input: Linear,
    positions: ParamId,
    blocks: Vec<TransformerBlock>,
    final_norm: LayerNorm,
    head: Linear,
}

struct GraphOutput {
    output: Var,
    weights: Vec<Vec<Var>>,
}

impl CompositionProposer {
    pub fn new(config: ProposerConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.model_dim;
        let input = Linear::new(&mut store, "input", PADDED_DIM, d, true, &mut rng);
        let positions = store.add_uniform("positions", &[config.max_positions, d], d, &mut rng);
        let blocks = (0..config.layers)
            .map(|i| {
                TransformerBlock::new(
                    &mut store,
                    &format!("block{i}"),
                    d,
                    config.heads,
                    config.ff_dim,
                    &mut rng,
                )
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let final_norm = LayerNorm::new(&mut store, "final_norm", d);
        let head = Linear::new(&mut store, "head", d, OBJECT_DIM, true, &mut rng);
        Ok(Self {
            config,
            store,
            input,
            positions,
            blocks,
            final_norm,
            head,
        })
    }

    /// Output bias of the head; exposed for tests that force a particular token kind.
    pub fn head_bias_mut(&mut self) -> &mut [f64] {
        let id = self.head.bias.expect("head has a bias");
        self.store.get_mut(id).data_mut()
    }

    fn check_rows(&self, rows: &Tensor) -> Result<()> {
        if rows.rows() == 0 {
            return Err(CoreError::Input("empty input sequence".into()));
        }
        if rows.cols() != PADDED_DIM {
            return Err(CoreError::Dimension {
                expected: PADDED_DIM,
                got: rows.cols(),
            });
        }
        if rows.rows() > self.config.max_positions {
            return Err(CoreError::Input(format!(
                "sequence of {} rows exceeds {} positions",
                rows.rows(),
                self.config.max_positions
            )));
        }
        Ok(())
    }

    fn graph_forward(&self, g: &mut Graph, rows: &Tensor) -> Result<GraphOutput> {
        self.check_rows(rows)?;
        let t = rows.rows();
        let x = g.constant(rows.clone());
        let h = self.input.forward(g, x);
        let pos = g.param(self.positions);
        let pos = g.slice_rows(pos, 0, t);
        let mut h = g.add(h, pos);
        let mut weights = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let out = b.forward(g, h)?;
            h = out.output;
            weights.push(out.weights);
        }
        let h = self.final_norm.forward(g, h);
        Ok(GraphOutput {
            output: self.head.forward(g, h),
            weights,
        })
    }

    /// Raw 102-wide outputs and per-layer, per-head attention for a `[T, 402]` input.
    pub fn forward_raw(&self, rows: &Tensor) -> Result<(Tensor, Vec<Vec<Tensor>>)> {
        let mut g = Graph::new(&self.store);
        let out = self.graph_forward(&mut g, rows)?;
        let weights = out
            .weights
            .iter()
            .map(|layer| layer.iter().map(|&w| g.value(w).clone()).collect())
            .collect();
        Ok((g.value(out.output).clone(), weights))
    }

    /// One prediction per input row plus the attention map labelled by the rows.
    pub fn forward(&self, seq: &[SequenceRow]) -> Result<(Vec<ObjectPrediction>, AttentionMap)> {
        let rows = rows_tensor(seq)?;
        let (out, weights) = self.forward_raw(&rows)?;
        let preds = (0..out.rows())
            .map(|r| ObjectPrediction::from_output(out.row(r)))
            .collect::<Result<Vec<_>>>()?;
        let prompt = seq
            .iter()
            .rposition(|r| r.label == crate::scene::InputLabel::Start && r.turn.is_none());
        Ok((
            preds,
            AttentionMap::from_tensors(seq, prompt.unwrap_or(0), &weights),
        ))
    }

    pub fn predictions_at(&self, rows: &Tensor, slots: &[usize]) -> Result<Vec<ObjectPrediction>> {
        let (out, _) = self.forward_raw(rows)?;
        slots
            .iter()
            .map(|&s| {
                if s >= out.rows() {
                    return Err(CoreError::Alignment(format!(
                        "slot {s} beyond sequence of {}",
                        out.rows()
                    )));
                }
                ObjectPrediction::from_output(out.row(s))
            })
            .collect()
    }

    /// Greedy autoregressive regeneration of the whole scene for the window's instruction.
    pub fn generate_scene(&self, ctx: &ContextWindow) -> Result<Generation> {
        let mut ctx = ctx.clone();
        let keep = self.config.context_turns;
        let mut dropped = ctx.turns.len().saturating_sub(keep);
        ctx.turns.drain(..dropped);
        let mut seq = build_context_sequence(&ctx, self.config.turn_order)?;
        while seq.len() + self.config.max_objects > self.config.max_positions {
            if ctx.turns.is_empty() {
                return Err(CoreError::Input(
                    "instruction too long for the positional table".into(),
                ));
            }
            ctx.turns.remove(0);
            dropped += 1;
            seq = build_context_sequence(&ctx, self.config.turn_order)?;
        }
        let prompt = seq.len() - 1;
        let mut objects = Vec::new();
        loop {
            let rows = rows_tensor(&seq)?;
            let (out, weights) = self.forward_raw(&rows)?;
            let pred = ObjectPrediction::from_output(out.row(out.rows() - 1))?;
            let token = pred.to_token();
            let done = !matches!(token, SceneToken::Object(_));
            if let SceneToken::Object(o) = token {
                objects.push(o);
                seq.push(scene_token_row(&token, None));
            }
            let truncated = !done && objects.len() >= self.config.max_objects;
            if done || truncated {
                return Ok(Generation {
                    scene: Scene::new(objects),
                    attention: AttentionMap::from_tensors(&seq[..rows.rows()], prompt, &weights),
                    truncated,
                    end_position: done.then_some(rows.rows() - 1),
                    dropped_turns: dropped,
                });
            }
        }
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::json!({ "model": CHECKPOINT_KIND, "config": self.config });
        Ok(Checkpoint::from_store(&self.store, meta.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.checkpoint()?.save(path)?)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: serde_json::Value = serde_json::from_str(&ck.metadata)?;
        if meta["model"] != CHECKPOINT_KIND {
            return Err(CoreError::Config(format!(
                "checkpoint holds {}, not a proposer",
                meta["model"]
            )));
        }
        let config: ProposerConfig = serde_json::from_value(meta["config"].clone())?;
        let mut model = Self::new(config)?;
        ck.restore_into(&mut model.store)?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

pub fn rows_tensor(seq: &[SequenceRow]) -> Result<Tensor> {
    if seq.is_empty() {
        return Err(CoreError::Input("empty input sequence".into()));
    }
    Ok(Tensor::from_rows(
        &seq.iter().map(|r| r.vector.clone()).collect::<Vec<_>>(),
    )?)
}

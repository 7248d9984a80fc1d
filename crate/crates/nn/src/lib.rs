//! Minimal neural-network toolkit: an `f64` tensor type, a tape-based reverse-mode
//! autodiff graph, layers (linear, layer norm, attention, LSTM, strided conv), mixture
//! density heads, Adam, schedules and checkpointing.

pub mod attention;
pub mod checkpoint;
pub mod conv;
pub mod error;
pub mod gmm;
pub mod gradcheck;
pub mod gradsuite;
pub mod graph;
pub mod layers;
pub mod lstm;
pub mod optim;
pub mod params;
pub mod schedule;
pub mod tensor;

pub use attention::{AttentionOutput, MultiHeadAttention, TransformerBlock};
pub use checkpoint::{Checkpoint, OptimizerSnapshot};
pub use conv::{MaskEncoder, MaskEncoderConfig};
pub use error::{NnError, Result};
pub use gmm::{gmm_nll, sample_categorical, tempered_softmax, GmmParams};
pub use gradcheck::{check_gradients, relative_error, GradCheck};
pub use gradsuite::{attention_causality_leak, check_param_gradients, run_suite, OpCheck};
pub use graph::{ConvGeometry, Gradients, Graph, Var};
pub use layers::{Activation, Embedding, FeedForward, LayerNorm, Linear};
pub use lstm::{BiLstm, Lstm, LstmState};
pub use optim::{AdamConfig, AdamState};
pub use params::{Grads, ParamId, ParamStore};
pub use schedule::{Direction, ExpSchedule};
pub use tensor::{argmax, matmul, Tensor};

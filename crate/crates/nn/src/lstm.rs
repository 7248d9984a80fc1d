//! LSTM cells, a masked bidirectional encoder and single-step decoding.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::layers::Linear;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Lstm {
    /// Input projection `in -> 4H`, carries the gate bias.
    pub input: Linear,
    /// Recurrent weights `[H, 4H]`.
    pub recurrent: ParamId,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl Lstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let input = Linear::new(
            store,
            &format!("{name}.input"),
            in_dim,
            4 * hidden,
            true,
            rng,
        );
        // forget gate bias starts at 1
        let bias = input.bias.expect("bias");
        store.get_mut(bias).data_mut()[hidden..2 * hidden]
            .iter_mut()
            .for_each(|v| *v = 1.0);
        let recurrent = store.add_uniform(
            format!("{name}.recurrent"),
            &[hidden, 4 * hidden],
            hidden,
            rng,
        );
        Self {
            input,
            recurrent,
            hidden,
        }
    }

    pub fn zero_state(&self, g: &mut Graph, batch: usize) -> LstmState {
        LstmState {
            h: g.constant(Tensor::zeros(&[batch, self.hidden])),
            c: g.constant(Tensor::zeros(&[batch, self.hidden])),
        }
    }

    /// Projects a whole time-major input `[T*B, in]` through the input weights at once.
    pub fn project_inputs(&self, g: &mut Graph, xs: Var) -> Var {
        self.input.forward(g, xs)
    }

    /// One recurrence step from already-projected input gates `[B, 4H]`.
    /// `extra` is added to the gates unchanged (per-sequence conditioning).
    pub fn step_projected(
        &self,
        g: &mut Graph,
        gates_x: Var,
        state: LstmState,
        extra: Option<Var>,
    ) -> LstmState {
        let u = g.param(self.recurrent);
        let gh = g.matmul(state.h, u);
        let mut gates = g.add(gates_x, gh);
        if let Some(e) = extra {
            gates = g.add(gates, e);
        }
        let hc = g.lstm_cell(gates, state.c);
        LstmState {
            h: g.slice_cols(hc, 0, self.hidden),
            c: g.slice_cols(hc, self.hidden, self.hidden),
        }
    }

    /// One decoding step: `input[B, in]` and the previous state to the new state.
    /// The returned state's `h` is the step output.
    pub fn decode_step(
        &self,
        g: &mut Graph,
        state: LstmState,
        input: Var,
        extra: Option<Var>,
    ) -> LstmState {
        let gx = self.input.forward(g, input);
        self.step_projected(g, gx, state, extra)
    }

    /// Runs over a time-major input `[T*B, in]`; returns every step's state.
    /// `masks[t]` (`[B,1]`, 1 for real steps) freezes the state of finished rows.
    pub fn run(
        &self,
        g: &mut Graph,
        xs: Var,
        batch: usize,
        init: LstmState,
        masks: Option<&[Tensor]>,
        reverse: bool,
        extra: Option<Var>,
    ) -> Vec<LstmState> {
        let steps = g.value(xs).rows() / batch.max(1);
        let proj = self.project_inputs(g, xs);
        let mut state = init;
        let mut out = vec![state; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let gx = g.slice_rows(proj, t * batch, batch);
            let next = self.step_projected(g, gx, state, extra);
            state = match masks {
                Some(m) => {
                    let keep = &m[t];
                    if keep.data().iter().all(|&v| v == 1.0) {
                        next
                    } else {
                        let mask = g.constant(keep.clone());
                        let mask = g.broadcast_cols(mask, self.hidden);
                        let inv = g.constant(keep.map(|v| 1.0 - v));
                        let inv = g.broadcast_cols(inv, self.hidden);
                        let blend = |g: &mut Graph, new: Var, old: Var| {
                            let a = g.mul(mask, new);
                            let b = g.mul(inv, old);
                            g.add(a, b)
                        };
                        LstmState {
                            h: blend(g, next.h, state.h),
                            c: blend(g, next.c, state.c),
                        }
                    }
                }
                None => next,
            };
            out[t] = state;
        }
        out
    }
}

/// Bidirectional encoder returning the concatenated final hidden states `[B, 2H]`.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            forward: Lstm::new(store, &format!("{name}.fwd"), in_dim, hidden, rng),
            backward: Lstm::new(store, &format!("{name}.bwd"), in_dim, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    /// Per-direction final states for a time-major `[T*B, in]` input.
    pub fn encode_states(
        &self,
        g: &mut Graph,
        xs: Var,
        batch: usize,
        masks: Option<&[Tensor]>,
    ) -> (LstmState, LstmState) {
        let f0 = self.forward.zero_state(g, batch);
        let b0 = self.backward.zero_state(g, batch);
        let fwd = self.forward.run(g, xs, batch, f0, masks, false, None);
        let bwd = self.backward.run(g, xs, batch, b0, masks, true, None);
        // forward direction: state after the last step (masking froze it at the true end);
        // backward direction: state after reaching t = 0
        let f = *fwd.last().expect("non-empty sequence");
        let b = bwd[0];
        (f, b)
    }

    pub fn encode(&self, g: &mut Graph, xs: Var, batch: usize, masks: Option<&[Tensor]>) -> Var {
        let (f, b) = self.encode_states(g, xs, batch, masks);
        g.concat_cols(&[f.h, b.h])
    }
}

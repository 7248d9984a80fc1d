//! Catalogue of finite-difference checks covering every differentiable graph op and the
//! composite layers built from them. Each entry runs on three random shapes.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::attention::{MultiHeadAttention, TransformerBlock};
use crate::conv::{MaskEncoder, MaskEncoderConfig};
use crate::error::Result;
use crate::gmm::gmm_nll;
use crate::gradcheck::{check_gradients, relative_error, DEFAULT_STEP};
use crate::graph::{ConvGeometry, Graph, Var};
use crate::layers::{Embedding, Linear};
use crate::lstm::{BiLstm, Lstm};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct OpCheck {
    pub name: String,
    pub shape: String,
    pub error: f64,
}

fn uniform(rng: &mut StdRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// `Σ y ⊙ w` for a fixed random `w`, so every output element gets a distinct weight.
fn project(g: &mut Graph, y: Var, seed: u64) -> Var {
    let mut rng = StdRng::seed_from_u64(seed ^ 0x9e37_79b9);
    let w = uniform(&mut rng, g.shape(y), -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(y, w);
    g.sum(p)
}

/// Checks gradients with respect to the parameters in `store`, holding inputs fixed.
pub fn check_param_gradients(
    store: &ParamStore,
    f: &dyn Fn(&mut Graph) -> Var,
    step: f64,
) -> Result<f64> {
    let mut g = Graph::new(store);
    let out = f(&mut g);
    let grads = g.backward(out)?;
    let pg = g.param_grads(&grads);
    let mut analytic = Vec::new();
    for id in store.ids() {
        match pg.get(id) {
            Some(t) => analytic.extend_from_slice(t.data()),
            None => analytic.extend(std::iter::repeat_n(0.0, store.get(id).len())),
        }
    }
    let mut work = store.clone();
    let mut numeric = Vec::with_capacity(analytic.len());
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for k in 0..store.get(id).len() {
            let orig = work.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + step;
            let up = {
                let mut g = Graph::new(&work);
                let o = f(&mut g);
                g.value(o).item()
            };
            work.get_mut(id).data_mut()[k] = orig - step;
            let down = {
                let mut g = Graph::new(&work);
                let o = f(&mut g);
                g.value(o).item()
            };
            work.get_mut(id).data_mut()[k] = orig;
            numeric.push((up - down) / (2.0 * step));
        }
    }
    Ok(relative_error(&analytic, &numeric))
}

struct Runner {
    rng: StdRng,
    checks: Vec<OpCheck>,
}

impl Runner {
    fn dims(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..=hi)
    }

    fn inputs(
        &mut self,
        name: &str,
        inputs: Vec<Tensor>,
        f: &dyn Fn(&mut Graph, &[Var]) -> Var,
    ) -> Result<()> {
        let shape = inputs
            .iter()
            .map(|t| format!("{:?}", t.shape()))
            .collect::<Vec<_>>()
            .join(" ");
        let seed = self.rng.random();
        let wrapped = |g: &mut Graph, v: &[Var]| {
            let y = f(g, v);
            project(g, y, seed)
        };
        let r = check_gradients(&wrapped, &inputs, DEFAULT_STEP)?;
        self.checks.push(OpCheck {
            name: name.to_string(),
            shape,
            error: r.max_error(),
        });
        Ok(())
    }

    fn params(
        &mut self,
        name: &str,
        shape: String,
        store: &ParamStore,
        f: &dyn Fn(&mut Graph) -> Var,
    ) -> Result<()> {
        let seed = self.rng.random();
        let wrapped = |g: &mut Graph| {
            let y = f(g);
            project(g, y, seed)
        };
        let error = check_param_gradients(store, &wrapped, DEFAULT_STEP)?;
        self.checks.push(OpCheck {
            name: name.to_string(),
            shape,
            error,
        });
        Ok(())
    }
}

type Unary = fn(&mut Graph, Var) -> Var;

/// Runs the whole catalogue. Every op appears with three shapes drawn from `seed`.
pub fn run_suite(seed: u64) -> Result<Vec<OpCheck>> {
    let mut r = Runner {
        rng: StdRng::seed_from_u64(seed),
        checks: Vec::new(),
    };
    for _ in 0..3 {
        one_round(&mut r)?;
    }
    Ok(r.checks)
}

fn one_round(r: &mut Runner) -> Result<()> {
    let m = r.dims(1, 4);
    let k = r.dims(1, 5);
    let n = r.dims(1, 4);

    let a = uniform(&mut r.rng, &[m, k], -1.0, 1.0);
    let b = uniform(&mut r.rng, &[k, n], -1.0, 1.0);
    r.inputs("matmul", vec![a.clone(), b], &|g, v| g.matmul(v[0], v[1]))?;
    let bt = uniform(&mut r.rng, &[n, k], -1.0, 1.0);
    r.inputs("matmul_nt", vec![a.clone(), bt], &|g, v| {
        g.matmul_nt(v[0], v[1])
    })?;

    let x = uniform(&mut r.rng, &[m, k], -1.0, 1.0);
    let y = uniform(&mut r.rng, &[m, k], -1.0, 1.0);
    let pos = uniform(&mut r.rng, &[m, k], 0.5, 2.0);
    r.inputs("add", vec![x.clone(), y.clone()], &|g, v| g.add(v[0], v[1]))?;
    r.inputs("sub", vec![x.clone(), y.clone()], &|g, v| g.sub(v[0], v[1]))?;
    r.inputs("mul", vec![x.clone(), y.clone()], &|g, v| g.mul(v[0], v[1]))?;
    r.inputs("div", vec![x.clone(), pos.clone()], &|g, v| {
        g.div(v[0], v[1])
    })?;
    let row = uniform(&mut r.rng, &[1, k], -1.0, 1.0);
    r.inputs("add_row", vec![x.clone(), row], &|g, v| {
        g.add_row(v[0], v[1])
    })?;
    let col = uniform(&mut r.rng, &[m, 1], -1.0, 1.0);
    r.inputs("broadcast_cols", vec![col], &|g, v| {
        g.broadcast_cols(v[0], 3)
    })?;
    r.inputs("scale", vec![x.clone()], &|g, v| g.scale(v[0], -1.7))?;
    r.inputs("neg", vec![x.clone()], &|g, v| g.neg(v[0]))?;
    r.inputs("add_scalar", vec![x.clone()], &|g, v| {
        g.add_scalar(v[0], 0.3)
    })?;

    let unary: [(&str, Unary, bool); 8] = [
        ("exp", |g, v| g.exp(v), false),
        ("log", |g, v| g.log(v), true),
        ("tanh", |g, v| g.tanh(v), false),
        ("sigmoid", |g, v| g.sigmoid(v), false),
        ("relu", |g, v| g.relu(v), false),
        ("square", |g, v| g.square(v), false),
        ("sqrt", |g, v| g.sqrt(v), true),
        ("row_norm", |g, v| g.row_norm(v), false),
    ];
    for (name, f, positive) in unary {
        let mut t = if positive { pos.clone() } else { x.clone() };
        if name == "relu" {
            // keep inputs away from the kink
            t = t.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        }
        r.inputs(name, vec![t], &move |g, v| f(g, v[0]))?;
    }

    let sq = r.dims(2, 5);
    let s = uniform(&mut r.rng, &[sq, sq], -2.0, 2.0);
    r.inputs("softmax_rows", vec![x.clone()], &|g, v| {
        g.softmax_rows(v[0], false)
    })?;
    r.inputs("softmax_rows_causal", vec![s], &|g, v| {
        g.softmax_rows(v[0], true)
    })?;
    r.inputs("log_softmax_rows", vec![x.clone()], &|g, v| {
        g.log_softmax_rows(v[0])
    })?;
    r.inputs("logsumexp_rows", vec![x.clone()], &|g, v| {
        g.logsumexp_rows(v[0])
    })?;

    let kk = k.max(2);
    let ln_x = uniform(&mut r.rng, &[m, kk], -1.0, 1.0);
    let gain = uniform(&mut r.rng, &[1, kk], 0.5, 1.5);
    let bias = uniform(&mut r.rng, &[1, kk], -0.5, 0.5);
    r.inputs("layer_norm", vec![ln_x, gain, bias], &|g, v| {
        g.layer_norm(v[0], v[1], v[2], 1e-5)
    })?;

    let start = r.rng.random_range(0..k);
    let len = r.rng.random_range(1..=k - start);
    r.inputs("slice_cols", vec![x.clone()], &move |g, v| {
        g.slice_cols(v[0], start, len)
    })?;
    r.inputs("concat_cols", vec![x.clone(), a.clone()], &|g, v| {
        g.concat_cols(&[v[0], v[1]])
    })?;
    let rstart = r.rng.random_range(0..m);
    let rlen = r.rng.random_range(1..=m - rstart);
    r.inputs("slice_rows", vec![x.clone()], &move |g, v| {
        g.slice_rows(v[0], rstart, rlen)
    })?;
    r.inputs("concat_rows", vec![x.clone(), y.clone()], &|g, v| {
        g.concat_rows(&[v[0], v[1]])
    })?;
    r.inputs("reshape", vec![x.clone()], &move |g, v| {
        g.reshape(v[0], &[m * k, 1])
    })?;
    r.inputs("sum", vec![x.clone()], &|g, v| g.sum(v[0]))?;
    r.inputs("mean", vec![x.clone()], &|g, v| g.mean(v[0]))?;
    r.inputs("sum_cols", vec![x.clone()], &|g, v| g.sum_cols(v[0]))?;
    let idx: Vec<usize> = (0..m).map(|_| r.rng.random_range(0..k)).collect();
    r.inputs("pick", vec![x.clone()], &move |g, v| g.pick(v[0], &idx))?;
    let gidx: Vec<usize> = (0..r.dims(1, 5))
        .map(|_| r.rng.random_range(0..m))
        .collect();
    r.inputs("gather_rows", vec![x.clone()], &move |g, v| {
        g.gather_rows(v[0], &gidx)
    })?;

    let geo = ConvGeometry {
        batch: r.dims(1, 2),
        height: r.dims(3, 5),
        width: r.dims(3, 5),
        channels: r.dims(1, 2),
        kernel: 3,
        stride: r.dims(1, 2),
        pad: 1,
    };
    let img = uniform(
        &mut r.rng,
        &[geo.batch * geo.height * geo.width, geo.channels],
        -1.0,
        1.0,
    );
    r.inputs("im2col", vec![img], &move |g, v| g.im2col(v[0], geo))?;

    let hb = r.dims(1, 3);
    let hh = r.dims(1, 4);
    let gates = uniform(&mut r.rng, &[hb, 4 * hh], -2.0, 2.0);
    let cprev = uniform(&mut r.rng, &[hb, hh], -1.0, 1.0);
    r.inputs("lstm_cell", vec![gates, cprev], &|g, v| {
        g.lstm_cell(v[0], v[1])
    })?;

    let comps = r.dims(1, 3);
    let rows = r.dims(1, 3);
    let raw = uniform(&mut r.rng, &[rows, 6 * comps], -1.0, 1.0);
    let px = uniform(&mut r.rng, &[rows, 1], -1.0, 1.0);
    let py = uniform(&mut r.rng, &[rows, 1], -1.0, 1.0);
    r.inputs("gmm_nll", vec![raw, px, py], &move |g, v| {
        gmm_nll(g, v[0], v[1], v[2], comps)
    })?;

    composites(r)
}

fn composites(r: &mut Runner) -> Result<()> {
    let mut init = StdRng::seed_from_u64(r.rng.random());

    let (m, din, dout) = (r.dims(1, 4), r.dims(1, 5), r.dims(1, 4));
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "lin", din, dout, true, &mut init);
    randomize(&mut store, &mut init);
    let x = uniform(&mut r.rng, &[m, din], -1.0, 1.0);
    r.params("linear", format!("[{m}, {din}] -> {dout}"), &store, &|g| {
        let xv = g.input(x.clone());
        lin.forward(g, xv)
    })?;
    r.inputs("linear_input", vec![x.clone()], &|g, v| {
        let w = g.constant(
            Tensor::new(
                &[din, dout],
                (0..din * dout).map(|i| (i as f64 * 0.7).sin()).collect(),
            )
            .unwrap(),
        );
        g.matmul(v[0], w)
    })?;

    let mut store = ParamStore::new();
    let count = r.dims(2, 6);
    let emb = Embedding::new(&mut store, "emb", count, 3, &mut init);
    let ids: Vec<usize> = (0..r.dims(1, 4))
        .map(|_| r.rng.random_range(0..count))
        .collect();
    r.params(
        "embedding",
        format!("{count}x3, {} ids", ids.len()),
        &store,
        &|g| emb.forward(g, &ids),
    )?;

    let heads = r.dims(1, 2);
    let dim = 4 * heads;
    let t = r.dims(1, 5);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "mha", dim, heads, &mut init)?;
    randomize(&mut store, &mut init);
    let seq = uniform(&mut r.rng, &[t, dim], -1.0, 1.0);
    r.params(
        "attention",
        format!("T={t} dim={dim} heads={heads}"),
        &store,
        &|g| {
            let xv = g.input(seq.clone());
            mha.forward(g, xv).output
        },
    )?;

    let mut store = ParamStore::new();
    let block = TransformerBlock::new(&mut store, "blk", dim, heads, 2 * dim, &mut init)?;
    randomize(&mut store, &mut init);
    r.params(
        "transformer_block",
        format!("T={t} dim={dim} heads={heads}"),
        &store,
        &|g| {
            let xv = g.input(seq.clone());
            block.forward(g, xv).expect("block").output
        },
    )?;
    r.checks.push(
        input_grad_check(
            &store,
            &seq,
            &|g, xv| block.forward(g, xv).expect("block").output,
            r.rng.random(),
        )?
        .named("transformer_block_input"),
    );

    let (steps, batch, din, hidden) = (r.dims(1, 4), r.dims(1, 2), r.dims(1, 3), r.dims(1, 3));
    let mut store = ParamStore::new();
    let bi = BiLstm::new(&mut store, "bi", din, hidden, &mut init);
    randomize(&mut store, &mut init);
    let xs = uniform(&mut r.rng, &[steps * batch, din], -1.0, 1.0);
    r.params(
        "bilstm_encode",
        format!("T={steps} B={batch} in={din} H={hidden}"),
        &store,
        &|g| {
            let xv = g.input(xs.clone());
            bi.encode(g, xv, batch, None)
        },
    )?;
    r.checks.push(
        input_grad_check(
            &store,
            &xs,
            &|g, xv| bi.encode(g, xv, batch, None),
            r.rng.random(),
        )?
        .named("bilstm_encode_input"),
    );

    let mut store = ParamStore::new();
    let dec = Lstm::new(&mut store, "dec", din, hidden, &mut init);
    randomize(&mut store, &mut init);
    let xin = uniform(&mut r.rng, &[batch, din], -1.0, 1.0);
    let h0 = uniform(&mut r.rng, &[batch, hidden], -1.0, 1.0);
    let c0 = uniform(&mut r.rng, &[batch, hidden], -1.0, 1.0);
    r.params(
        "lstm_decode_step",
        format!("B={batch} in={din} H={hidden}"),
        &store,
        &|g| {
            let state = crate::lstm::LstmState {
                h: g.input(h0.clone()),
                c: g.input(c0.clone()),
            };
            let xv = g.input(xin.clone());
            let s = dec.decode_step(g, state, xv, None);
            g.concat_cols(&[s.h, s.c])
        },
    )?;

    let res = 4 * r.dims(1, 2);
    let mut store = ParamStore::new();
    let cfg = MaskEncoderConfig {
        resolution: res,
        channels: vec![2, 3],
        embedding_dim: 4,
    };
    let enc = MaskEncoder::new(&mut store, "menc", cfg, &mut init)?;
    randomize(&mut store, &mut init);
    let masks =
        uniform(&mut r.rng, &[2, res * res], 0.0, 1.0).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    r.params(
        "conv_mask_encoder",
        format!("B=2 {res}x{res}"),
        &store,
        &|g| {
            let mv = g.constant(masks.clone());
            enc.forward(g, mv).expect("encoder")
        },
    )?;
    Ok(())
}

impl OpCheck {
    fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }
}

/// Input-gradient check for a layer bound to a parameter store.
fn input_grad_check(
    store: &ParamStore,
    x: &Tensor,
    f: &dyn Fn(&mut Graph, Var) -> Var,
    seed: u64,
) -> Result<OpCheck> {
    let eval = |t: &Tensor, want_grad: bool| -> Result<(f64, Option<Tensor>)> {
        let mut g = Graph::new(store);
        let xv = g.input(t.clone());
        let y = f(&mut g, xv);
        let out = project(&mut g, y, seed);
        let v = g.value(out).item();
        if want_grad {
            let grads = g.backward(out)?;
            Ok((v, grads.wrt(xv).cloned()))
        } else {
            Ok((v, None))
        }
    };
    let (_, analytic) = eval(x, true)?;
    let analytic = analytic.unwrap_or_else(|| Tensor::zeros(x.shape()));
    let mut work = x.clone();
    let mut numeric = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let orig = work.data()[k];
        work.data_mut()[k] = orig + DEFAULT_STEP;
        let up = eval(&work, false)?.0;
        work.data_mut()[k] = orig - DEFAULT_STEP;
        let down = eval(&work, false)?.0;
        work.data_mut()[k] = orig;
        numeric.push((up - down) / (2.0 * DEFAULT_STEP));
    }
    Ok(OpCheck {
        name: String::new(),
        shape: format!("{:?}", x.shape()),
        error: relative_error(analytic.data(), &numeric),
    })
}

/// Overwrites every parameter (including zero-initialised biases) with random values.
fn randomize(store: &mut ParamStore, rng: &mut StdRng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
    }
}

/// Largest `|∂ y_i / ∂ x_j|` over `j > i` for one causal transformer block.
pub fn attention_causality_leak(seed: u64) -> Result<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    let (t, dim, heads) = (6, 8, 2);
    let mut store = ParamStore::new();
    let block = TransformerBlock::new(&mut store, "blk", dim, heads, 16, &mut rng)?;
    randomize(&mut store, &mut rng);
    let x = uniform(&mut rng, &[t, dim], -1.0, 1.0);
    let mut worst: f64 = 0.0;
    for i in 0..t {
        let mut g = Graph::new(&store);
        let xv = g.input(x.clone());
        let y = block.forward(&mut g, xv)?.output;
        let mut seed_grad = Tensor::zeros(&[t, dim]);
        for c in 0..dim {
            seed_grad.data_mut()[i * dim + c] = 1.0;
        }
        let grads = g.backward_with(y, seed_grad)?;
        let gx = grads.wrt(xv).expect("input gradient");
        for j in i + 1..t {
            for c in 0..dim {
                worst = worst.max(gx.get(j, c).abs());
            }
        }
    }
    Ok(worst)
}

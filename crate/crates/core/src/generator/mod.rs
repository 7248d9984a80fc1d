//! Per-category conditional sequence VAE: a bidirectional LSTM encodes a drawing to a
//! latent vector; an LSTM decoder conditioned on the latent, a mask embedding and the
//! aspect ratio emits a mixture over offsets and a pen-state distribution per step.

mod batch;
mod train;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sketchdial_nn::{
    gmm_nll, sample_categorical, tempered_softmax, BiLstm, Checkpoint, ExpSchedule, GmmParams,
    Graph, Linear, Lstm, LstmState, MaskEncoder, MaskEncoderConfig, ParamStore, Tensor, Var,
};

use crate::error::{CoreError, Result};
use crate::stroke::{Pen, SketchDrawing, Stroke5};

pub use batch::{GeneratorCondition, PreparedSketch, StrokeBatch, PAD_ROW};
pub use train::{GeneratorTrainReport, StepMetrics};

pub const CHECKPOINT_KIND: &str = "object_generator";
pub const PEN_STATES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub category: String,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub latent_dim: usize,
    pub mixtures: usize,
    pub mask_encoder: MaskEncoderConfig,
    pub kl_schedule: ExpSchedule,
    pub lr_schedule: ExpSchedule,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Validation is scored every this many steps (and after the last).
    pub eval_every: usize,
    pub max_decode_steps: usize,
    pub temperature: f64,
    pub ratio_max: f64,
    pub seed: u64,
    /// Offset scale of the training corpus; decoded offsets are multiplied by it.
    pub sigma: f64,
    /// Longest training sequence in point rows; set by training.
    pub max_seq_len: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            category: String::new(),
            encoder_hidden: 256,
            decoder_hidden: 512,
            latent_dim: 128,
            mixtures: 20,
            mask_encoder: MaskEncoderConfig::default(),
            kl_schedule: ExpSchedule::kl_weight(),
            lr_schedule: ExpSchedule::generator_learning_rate(),
            clip_norm: 1.0,
            batch_size: 100,
            steps: 10_000,
            eval_every: 100,
            max_decode_steps: 250,
            temperature: 0.4,
            ratio_max: 10.0,
            seed: 0,
            sigma: 1.0,
            max_seq_len: 0,
        }
    }
}

impl GeneratorConfig {
    /// Narrow widths for fast tests and continuous integration.
    pub fn compact(category: &str) -> Self {
        Self {
            category: category.to_string(),
            encoder_hidden: 64,
            decoder_hidden: 128,
            batch_size: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_hidden == 0
            || self.decoder_hidden == 0
            || self.latent_dim == 0
            || self.mixtures == 0
        {
            return Err(CoreError::Config(
                "generator widths and mixture count must be positive".into(),
            ));
        }
        if self.batch_size == 0 || self.max_decode_steps == 0 || self.eval_every == 0 {
            return Err(CoreError::Config(
                "batch_size, eval_every and max_decode_steps must be positive".into(),
            ));
        }
        if !(self.sigma > 0.0)
            || !(self.ratio_max > 0.0)
            || !(self.clip_norm > 0.0)
            || self.temperature < 0.0
        {
            return Err(CoreError::Config(
                "sigma, ratio_max and clip_norm must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        6 * self.mixtures + PEN_STATES
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderOutput {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    /// `mu + exp(logvar / 2) · ε`
    pub z: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// Offsets in the corpus's original units.
    pub drawing: SketchDrawing,
    /// The step limit ended the drawing.
    pub forced_end: bool,
    pub ratio: f64,
    pub z: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLoss {
    #[serde(rename = "L_R")]
    pub l_r: f64,
    #[serde(rename = "L_KL")]
    pub l_kl: f64,
    pub kl_weight: f64,
    pub total: f64,
}

/// Closed-form `KL(N(μ, e^logvar) ‖ N(0, 1))` averaged over dimensions and batch.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    let n = mu.len().max(1) as f64;
    -0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
        / n
}

pub fn sample_prior(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

#[derive(Clone, Debug)]
pub struct ObjectGenerator {
    pub config: GeneratorConfig,
    pub store: ParamStore,
    encoder: BiLstm,
    to_mu: Linear,
    to_logvar: Linear,
    init_state: Linear,
    mask_encoder: MaskEncoder,
    condition: Linear,
    decoder: Lstm,
    output: Linear,
}

struct Encoded {
    mu: Var,
    logvar: Var,
}

impl ObjectGenerator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (he, hd, l) = (
            config.encoder_hidden,
            config.decoder_hidden,
            config.latent_dim,
        );
        let encoder = BiLstm::new(&mut store, "encoder", 5, he, &mut rng);
        let to_mu = Linear::new(&mut store, "to_mu", 2 * he, l, true, &mut rng);
        let to_logvar = Linear::new(&mut store, "to_logvar", 2 * he, l, true, &mut rng);
        let init_state = Linear::new(&mut store, "init_state", l, 2 * hd, true, &mut rng);
        let mask_encoder =
            MaskEncoder::new(&mut store, "mask", config.mask_encoder.clone(), &mut rng)?;
        let cond_dim = l + 1 + mask_encoder.embedding_dim();
        let condition = Linear::new(&mut store, "condition", cond_dim, 4 * hd, false, &mut rng);
        let decoder = Lstm::new(&mut store, "decoder", 5, hd, &mut rng);
        let output = Linear::new(
            &mut store,
            "output",
            hd,
            config.output_dim(),
            true,
            &mut rng,
        );
        Ok(Self {
            config,
            store,
            encoder,
            to_mu,
            to_logvar,
            init_state,
            mask_encoder,
            condition,
            decoder,
            output,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn mask_resolution(&self) -> usize {
        self.config.mask_encoder.resolution
    }

    pub fn condition_for(&self, d: &SketchDrawing) -> Result<GeneratorCondition> {
        GeneratorCondition::from_drawing(d, self.mask_resolution(), self.config.ratio_max)
    }

    pub fn prepare(&self, drawings: &[SketchDrawing]) -> Result<Vec<PreparedSketch>> {
        drawings
            .iter()
            .map(|d| {
                if d.is_empty() {
                    return Err(CoreError::EmptySketch);
                }
                Ok(PreparedSketch {
                    drawing: d.clone(),
                    condition: self.condition_for(d)?,
                })
            })
            .collect()
    }

    fn encode_graph(&self, g: &mut Graph, b: &StrokeBatch) -> Encoded {
        let x = g.constant(b.encoder_inputs.clone());
        let h = self.encoder.encode(g, x, b.batch, Some(&b.encoder_masks));
        Encoded {
            mu: self.to_mu.forward(g, h),
            logvar: self.to_logvar.forward(g, h),
        }
    }

    /// `mu + exp(logvar / 2) · eps`
    pub fn reparameterize(g: &mut Graph, mu: Var, logvar: Var, eps: Var) -> Var {
        let half = g.scale(logvar, 0.5);
        let std = g.exp(half);
        let noise = g.mul(std, eps);
        g.add(mu, noise)
    }

    fn initial_state(&self, g: &mut Graph, z: Var) -> LstmState {
        let hd = self.config.decoder_hidden;
        let s = self.init_state.forward(g, z);
        let s = g.tanh(s);
        LstmState {
            h: g.slice_cols(s, 0, hd),
            c: g.slice_cols(s, hd, hd),
        }
    }

    /// Gate contribution of `[z, r, mask embedding]`, added at every decoder step.
    fn condition_gates(&self, g: &mut Graph, z: Var, ratios: Var, masks: Var) -> Result<Var> {
        let e = self.mask_encoder.forward(g, masks)?;
        let c = g.concat_cols(&[z, ratios, e]);
        Ok(self.condition.forward(g, c))
    }

    /// Raw decoder outputs `[steps * batch, 6M + 3]` under teacher forcing.
    fn decode_graph(&self, g: &mut Graph, b: &StrokeBatch, z: Var) -> Result<Var> {
        let init = self.initial_state(g, z);
        let ratios = g.constant(b.ratios.clone());
        let masks = g.constant(b.masks.clone());
        let extra = self.condition_gates(g, z, ratios, masks)?;
        let x = g.constant(b.decoder_inputs.clone());
        let states = self
            .decoder
            .run(g, x, b.batch, init, None, false, Some(extra));
        let hs: Vec<Var> = states.iter().map(|s| s.h).collect();
        let h = g.concat_rows(&hs);
        Ok(self.output.forward(g, h))
    }

    /// Graph for the full objective; `eps` is the `[batch, latent]` reparameterization noise.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        b: &StrokeBatch,
        eps: &Tensor,
        kl_weight: f64,
    ) -> Result<(Var, GeneratorLoss)> {
        let enc = self.encode_graph(g, b);
        let e = g.constant(eps.clone());
        let z = Self::reparameterize(g, enc.mu, enc.logvar, e);
        let out = self.decode_graph(g, b, z)?;
        let l_r = reconstruction_loss(g, out, b, self.config.mixtures)?;
        let l_kl = kl_graph(g, enc.mu, enc.logvar);
        let weighted = g.scale(l_kl, kl_weight);
        let total = g.add(l_r, weighted);
        let loss = GeneratorLoss {
            l_r: g.value(l_r).item(),
            l_kl: g.value(l_kl).item(),
            kl_weight,
            total: g.value(total).item(),
        };
        Ok((total, loss))
    }

    /// Objective of one normalized drawing under `condition` at a training step (for the KL weight).
    pub fn loss_s(
        &self,
        drawing: &SketchDrawing,
        condition: &GeneratorCondition,
        step: u64,
        rng: &mut impl Rng,
    ) -> Result<GeneratorLoss> {
        let item = PreparedSketch {
            drawing: drawing.clone(),
            condition: condition.clone(),
        };
        self.loss_prepared(std::slice::from_ref(&item), step, rng)
    }

    /// Objective of a batch of prepared drawings, padded to the longest.
    pub fn loss_prepared(
        &self,
        items: &[PreparedSketch],
        step: u64,
        rng: &mut impl Rng,
    ) -> Result<GeneratorLoss> {
        let res = self.mask_resolution();
        if items.iter().any(|p| p.condition.mask.width() != res) {
            return Err(CoreError::Input(format!(
                "condition masks must be {res}x{res}"
            )));
        }
        let refs: Vec<&PreparedSketch> = items.iter().collect();
        let steps = refs.iter().map(|p| p.drawing.len()).max().unwrap_or(0);
        let b = StrokeBatch::new(&refs, steps, self.config.ratio_max)?;
        let eps = self.noise(b.batch, rng);
        let mut g = Graph::new(&self.store);
        let (_, loss) = self.loss_graph(&mut g, &b, &eps, self.config.kl_schedule.value(step))?;
        Ok(loss)
    }

    pub fn noise(&self, batch: usize, rng: &mut impl Rng) -> Tensor {
        let l = self.config.latent_dim;
        Tensor::new(
            &[batch, l],
            (0..batch * l).map(|_| StandardNormal.sample(rng)).collect(),
        )
        .expect("shape")
    }

    /// Posterior of one normalized drawing with a reparameterized sample.
    pub fn encode(&self, drawing: &SketchDrawing, rng: &mut impl Rng) -> Result<EncoderOutput> {
        if drawing.is_empty() {
            return Err(CoreError::EmptySketch);
        }
        let p = PreparedSketch {
            drawing: drawing.clone(),
            condition: GeneratorCondition::new(crate::raster::Bitmap::new(1, 1)?, 0.0)?,
        };
        let b = StrokeBatch::new(&[&p], drawing.len(), self.config.ratio_max)?;
        let mut g = Graph::new(&self.store);
        let enc = self.encode_graph(&mut g, &b);
        let mu = g.value(enc.mu).data().to_vec();
        let logvar = g.value(enc.logvar).data().to_vec();
        let z = mu
            .iter()
            .zip(&logvar)
            .map(|(m, lv)| {
                m + (0.5 * lv).exp() * {
                    let e: f64 = StandardNormal.sample(rng);
                    e
                }
            })
            .collect();
        Ok(EncoderOutput { mu, logvar, z })
    }

    pub fn sample_prior(&self, rng: &mut impl Rng) -> Vec<f64> {
        sample_prior(self.config.latent_dim, rng)
    }

    /// Autoregressive sampling until the end pen state or the step limit, which forces an end.
    /// At temperature 0 both the offsets and the pen state are taken greedily.
    pub fn decode(
        &self,
        z: &[f64],
        condition: &GeneratorCondition,
        temperature: f64,
        max_steps: usize,
        rng: &mut impl Rng,
    ) -> Result<DecodeResult> {
        if z.len() != self.config.latent_dim {
            return Err(CoreError::Dimension {
                expected: self.config.latent_dim,
                got: z.len(),
            });
        }
        let res = self.mask_resolution();
        if condition.mask.width() != res || condition.mask.height() != res {
            return Err(CoreError::Input(format!(
                "condition mask must be {res}x{res}"
            )));
        }
        if max_steps == 0 {
            return Err(CoreError::Input("max_steps must be positive".into()));
        }
        let ratio = condition.ratio.clamp(0.0, self.config.ratio_max);
        let (mut h, mut c, extra) = {
            let mut g = Graph::new(&self.store);
            let zv = g.constant(Tensor::row_vector(z));
            let s = self.initial_state(&mut g, zv);
            let r = g.constant(Tensor::scalar(ratio));
            let m = g.constant(Tensor::row_vector(&condition.mask.to_f64()));
            let e = self.condition_gates(&mut g, zv, r, m)?;
            (
                g.value(s.h).clone(),
                g.value(s.c).clone(),
                g.value(e).clone(),
            )
        };
        let m = self.config.mixtures;
        let mut strokes = vec![Stroke5::INITIAL];
        let mut input = Stroke5::INITIAL.to_array();
        let mut forced_end = false;
        for step in 0..max_steps {
            let mut g = Graph::new(&self.store);
            let state = LstmState {
                h: g.constant(h),
                c: g.constant(c),
            };
            let x = g.constant(Tensor::row_vector(&input));
            let e = g.constant(extra.clone());
            let next = self.decoder.decode_step(&mut g, state, x, Some(e));
            let out = self.output.forward(&mut g, next.h);
            let raw = g.value(out).data().to_vec();
            h = g.value(next.h).clone();
            c = g.value(next.c).clone();
            let gmm = GmmParams::from_raw(&raw[..6 * m])?;
            let pen_probs = tempered_softmax(&raw[6 * m..], temperature);
            let mut pen = Pen::from_index(sample_categorical(&pen_probs, rng));
            let (dx, dy) = gmm.sample(temperature, rng)?;
            if pen != Pen::End && step + 1 == max_steps {
                pen = Pen::End;
                forced_end = true;
            }
            let s = Stroke5::new(dx * self.config.sigma, dy * self.config.sigma, pen);
            strokes.push(s);
            input = Stroke5::new(dx, dy, pen).to_array();
            if pen == Pen::End {
                break;
            }
        }
        let drawing = SketchDrawing {
            strokes,
            category: self.config.category.clone(),
        };
        drawing.validate()?;
        Ok(DecodeResult {
            drawing,
            forced_end,
            ratio: condition.ratio,
            z: z.to_vec(),
        })
    }

    /// Decodes a fresh prior sample.
    pub fn generate(
        &self,
        condition: &GeneratorCondition,
        temperature: f64,
        rng: &mut impl Rng,
    ) -> Result<DecodeResult> {
        let z = self.sample_prior(rng);
        self.decode(
            &z,
            condition,
            temperature,
            self.config.max_decode_steps,
            rng,
        )
    }

    /// Encodes a normalized drawing and decodes its posterior mean under `condition`.
    pub fn reconstruct(
        &self,
        drawing: &SketchDrawing,
        condition: &GeneratorCondition,
        temperature: f64,
        rng: &mut impl Rng,
    ) -> Result<DecodeResult> {
        let enc = self.encode(drawing, rng)?;
        self.decode(
            &enc.mu,
            condition,
            temperature,
            self.config.max_decode_steps,
            rng,
        )
    }

    /// Redraws with a previously used latent under a new mask or ratio.
    pub fn regenerate_with_pose(
        &self,
        z: &[f64],
        condition: &GeneratorCondition,
        temperature: f64,
        rng: &mut impl Rng,
    ) -> Result<DecodeResult> {
        self.decode(z, condition, temperature, self.config.max_decode_steps, rng)
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
                "checkpoint holds {}, not a generator",
                meta["model"]
            )));
        }
        let config: GeneratorConfig = serde_json::from_value(meta["config"].clone())?;
        let mut model = Self::new(config)?;
        ck.restore_into(&mut model.store)?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// `-0.5 · mean(1 + logvar - mu² - exp(logvar))`
pub fn kl_graph(g: &mut Graph, mu: Var, logvar: Var) -> Var {
    let mu2 = g.square(mu);
    let var = g.exp(logvar);
    let a = g.sub(logvar, mu2);
    let a = g.sub(a, var);
    let a = g.add_scalar(a, 1.0);
    let m = g.mean(a);
    g.scale(m, -0.5)
}

/// Offset negative log-likelihood over real points plus pen cross-entropy over every
/// step, divided by `steps · batch`.
pub fn reconstruction_loss(
    g: &mut Graph,
    out: Var,
    b: &StrokeBatch,
    mixtures: usize,
) -> Result<Var> {
    let rows = b.steps * b.batch;
    if g.value(out).rows() != rows || g.value(out).cols() != 6 * mixtures + PEN_STATES {
        return Err(CoreError::Alignment(format!(
            "decoder output {:?} does not match {} steps x {} sequences",
            g.shape(out),
            b.steps,
            b.batch
        )));
    }
    let pen_logits = g.slice_cols(out, 6 * mixtures, PEN_STATES);
    let pen_ls = g.log_softmax_rows(pen_logits);
    let pen = g.pick(pen_ls, &b.target_pen);
    let pen = g.sum(pen);
    let mut total = g.neg(pen);
    if !b.offset_rows.is_empty() {
        let gmm = g.slice_cols(out, 0, 6 * mixtures);
        let sel = g.gather_rows(gmm, &b.offset_rows);
        let x = g.constant(b.target_dx.clone());
        let y = g.constant(b.target_dy.clone());
        let nll = gmm_nll(g, sel, x, y, mixtures);
        let nll = g.sum(nll);
        total = g.add(total, nll);
    }
    Ok(g.scale(total, 1.0 / rows as f64))
}

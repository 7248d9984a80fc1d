//! Minibatch training with scheduled learning rate and KL weight.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sketchdial_nn::{AdamConfig, AdamState, Graph};

use crate::error::{CoreError, Result};
use crate::quickdraw::StrokeCorpus;
use crate::stroke::SketchDrawing;

use super::{GeneratorLoss, ObjectGenerator, PreparedSketch, StrokeBatch};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub split: String,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: GeneratorLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTrainReport {
    pub steps: Vec<StepMetrics>,
    pub best_step: u64,
    pub best_loss: f64,
}

impl GeneratorTrainReport {
    pub fn train_losses(&self) -> impl Iterator<Item = &GeneratorLoss> {
        self.steps
            .iter()
            .filter(|s| s.split == "train")
            .map(|s| &s.loss)
    }
}

impl ObjectGenerator {
    pub fn optimizer(&self) -> AdamState {
        AdamState::new(
            &self.store,
            AdamConfig {
                clip_norm: Some(self.config.clip_norm),
                ..AdamConfig::default()
            },
        )
    }

    /// One update on `batch` at schedule position `adam.step`; returns the loss before it.
    pub fn train_step(
        &mut self,
        adam: &mut AdamState,
        batch: &[&PreparedSketch],
        rng: &mut ChaCha8Rng,
    ) -> Result<(GeneratorLoss, f64)> {
        let step = adam.step;
        let steps = batch.iter().map(|p| p.drawing.len()).max().unwrap_or(0);
        let b = StrokeBatch::new(batch, steps, self.config.ratio_max)?;
        let eps = self.noise(b.batch, rng);
        let kl_weight = self.config.kl_schedule.value(step);
        let lr = self.config.lr_schedule.value(step);
        let (loss, mut grads) = {
            let mut g = Graph::new(&self.store);
            let (root, loss) = self.loss_graph(&mut g, &b, &eps, kl_weight)?;
            let grads = g.backward(root)?;
            (loss, g.param_grads(&grads))
        };
        if !loss.total.is_finite() {
            return Err(CoreError::Input(format!(
                "non-finite generator loss at step {step}"
            )));
        }
        adam.step(&mut self.store, &mut grads, lr);
        Ok((loss, lr))
    }

    /// Mean objective over `drawings` in chunks of the configured batch size, with fixed noise.
    pub fn evaluate(&self, drawings: &[PreparedSketch], step: u64) -> Result<GeneratorLoss> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0xe7a1);
        let kl_weight = self.config.kl_schedule.value(step);
        let mut acc = GeneratorLoss {
            kl_weight,
            ..GeneratorLoss::default()
        };
        let mut n = 0usize;
        for chunk in drawings.chunks(self.config.batch_size) {
            let refs: Vec<&PreparedSketch> = chunk.iter().collect();
            let steps = refs.iter().map(|p| p.drawing.len()).max().unwrap_or(0);
            let b = StrokeBatch::new(&refs, steps, self.config.ratio_max)?;
            let eps = self.noise(b.batch, &mut rng);
            let mut g = Graph::new(&self.store);
            let (_, l) = self.loss_graph(&mut g, &b, &eps, kl_weight)?;
            let k = chunk.len() as f64;
            acc.l_r += l.l_r * k;
            acc.l_kl += l.l_kl * k;
            acc.total += l.total * k;
            n += chunk.len();
        }
        let n = n.max(1) as f64;
        acc.l_r /= n;
        acc.l_kl /= n;
        acc.total /= n;
        Ok(acc)
    }

    /// Trains on a loaded corpus, adopting its category and offset scale.
    pub fn train_corpus(
        &mut self,
        corpus: &StrokeCorpus,
        metrics: Option<&mut dyn Write>,
        best_path: Option<&Path>,
    ) -> Result<GeneratorTrainReport> {
        self.config.category = corpus.category.clone();
        self.config.sigma = corpus.sigma;
        self.train(&corpus.train, &corpus.valid, metrics, best_path)
    }

    /// Runs `config.steps` updates over shuffled minibatches of normalized drawings.
    /// Every step logs a training line; every `eval_every` steps (and the last) the
    /// validation split is scored, and the best-scoring parameters are kept.
    pub fn train(
        &mut self,
        train: &[SketchDrawing],
        val: &[SketchDrawing],
        mut metrics: Option<&mut dyn Write>,
        best_path: Option<&Path>,
    ) -> Result<GeneratorTrainReport> {
        if train.is_empty() {
            return Err(CoreError::Input("no training drawings".into()));
        }
        let train = self.prepare(train)?;
        let val = self.prepare(val)?;
        self.config.max_seq_len = train
            .iter()
            .chain(&val)
            .map(|p| p.drawing.len())
            .max()
            .unwrap_or(0);
        let mut adam = self.optimizer();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut cursor = order.len();
        let bs = self.config.batch_size.min(train.len());
        let mut report = GeneratorTrainReport {
            steps: Vec::new(),
            best_step: 0,
            best_loss: f64::INFINITY,
        };
        let mut best_store = self.store.clone();
        for step in 0..self.config.steps as u64 {
            if cursor + bs > order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let batch: Vec<&PreparedSketch> = order[cursor..cursor + bs]
                .iter()
                .map(|&i| &train[i])
                .collect();
            cursor += bs;
            let (loss, lr) = self.train_step(&mut adam, &batch, &mut rng)?;
            let rec = StepMetrics {
                step,
                split: "train".into(),
                lr,
                loss,
            };
            log(&mut metrics, &rec)?;
            let mut score = None;
            let last = step + 1 == self.config.steps as u64;
            if (step + 1) % self.config.eval_every as u64 == 0 || last {
                score = Some(if val.is_empty() {
                    self.evaluate(&train, step + 1)?.l_r
                } else {
                    let v = self.evaluate(&val, step + 1)?;
                    let rec = StepMetrics {
                        step: step + 1,
                        split: "val".into(),
                        lr,
                        loss: v,
                    };
                    log(&mut metrics, &rec)?;
                    report.steps.push(rec);
                    v.l_r
                });
            }
            report.steps.push(rec);
            if let Some(s) = score {
                if s < report.best_loss {
                    report.best_loss = s;
                    report.best_step = step + 1;
                    best_store = self.store.clone();
                    if let Some(p) = best_path {
                        self.save(p)?;
                    }
                }
            }
        }
        self.store = best_store;
        Ok(report)
    }
}

fn log(out: &mut Option<&mut dyn Write>, rec: &StepMetrics) -> Result<()> {
    if let Some(w) = out.as_deref_mut() {
        serde_json::to_writer(&mut *w, rec)?;
        writeln!(w)?;
    }
    Ok(())
}

//! Mini-batch Adam training with per-epoch metrics and best-checkpoint retention.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sketchdial_nn::{AdamConfig, AdamState, Grads, Graph};

use crate::error::{CoreError, Result};

use super::loss::{graph_loss, loss_cm_eval, LossComponents, LossSums};
use super::{CompositionProposer, TrainingExample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: String,
    #[serde(flatten)]
    pub loss: LossComponents,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train: LossComponents,
    pub val: Option<LossComponents>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_loss: f64,
}

impl CompositionProposer {
    /// Loss and parameter gradients of one example, normalised by batch totals.
    pub fn example_gradients(
        &self,
        ex: &TrainingExample,
        slot_total: usize,
        object_total: usize,
    ) -> Result<(Grads, LossSums, f64)> {
        let mut g = Graph::new(&self.store);
        let out = self.graph_forward(&mut g, &ex.rows)?;
        let w = self.config.loss_weights();
        let (loss, sums) = graph_loss(
            &mut g,
            out.output,
            &ex.slots,
            &ex.targets,
            slot_total,
            object_total,
            &w,
        )?;
        let value = g.value(loss).item();
        let grads = g.backward(loss)?;
        Ok((g.param_grads(&grads), sums, value))
    }

    /// Teacher-forced loss sums of one example, computed without the autodiff graph.
    pub fn example_loss(&self, ex: &TrainingExample) -> Result<LossSums> {
        let preds = self.predictions_at(&ex.rows, &ex.slots)?;
        loss_cm_eval(&preds, &ex.targets)
    }

    pub fn evaluate_examples(&self, examples: &[TrainingExample]) -> Result<LossComponents> {
        let mut total = LossSums::default();
        for ex in examples {
            total.add(&self.example_loss(ex)?);
        }
        Ok(total.components(&self.config.loss_weights()))
    }

    /// One optimizer step over `batch`; returns the batch's loss sums before the update.
    pub fn train_step(
        &mut self,
        adam: &mut AdamState,
        batch: &[&TrainingExample],
    ) -> Result<LossSums> {
        let slot_total: usize = batch.iter().map(|e| e.slots.len()).sum();
        let object_total: usize = batch.iter().map(|e| e.object_count()).sum();
        let mut grads = Grads::new(self.store.len());
        let mut sums = LossSums::default();
        for ex in batch {
            let (g, s, _) = self.example_gradients(ex, slot_total, object_total)?;
            grads.merge(&g);
            sums.add(&s);
        }
        adam.step(&mut self.store, &mut grads, self.config.lr);
        Ok(sums)
    }

    pub fn optimizer(&self) -> AdamState {
        AdamState::new(
            &self.store,
            AdamConfig {
                clip_norm: self.config.clip_norm,
                ..AdamConfig::default()
            },
        )
    }

    /// Trains for `config.epochs`, logging one JSON line per split and epoch to `metrics`.
    /// The parameters with the lowest validation loss (training loss when `val` is empty)
    /// are restored at the end and, when `best_path` is given, saved there on each improvement.
    pub fn train(
        &mut self,
        train: &[TrainingExample],
        val: &[TrainingExample],
        mut metrics: Option<&mut dyn Write>,
        best_path: Option<&Path>,
    ) -> Result<TrainReport> {
        if train.is_empty() {
            return Err(CoreError::Input("no training examples".into()));
        }
        let mut adam = self.optimizer();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed);
        let w = self.config.loss_weights();
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut report = TrainReport {
            epochs: Vec::new(),
            best_epoch: 0,
            best_loss: f64::INFINITY,
        };
        let mut best_store = self.store.clone();
        for epoch in 1..=self.config.epochs {
            order.shuffle(&mut rng);
            let mut sums = LossSums::default();
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &train[i]).collect();
                sums.add(&self.train_step(&mut adam, &batch)?);
            }
            let train_loss = sums.components(&w);
            let val_loss = if val.is_empty() {
                None
            } else {
                Some(self.evaluate_examples(val)?)
            };
            if let Some(out) = metrics.as_deref_mut() {
                write_record(out, epoch, "train", &train_loss)?;
                if let Some(v) = &val_loss {
                    write_record(out, epoch, "val", v)?;
                }
            }
            let score = val_loss.as_ref().unwrap_or(&train_loss).total;
            if score < report.best_loss {
                report.best_loss = score;
                report.best_epoch = epoch;
                best_store = self.store.clone();
                if let Some(p) = best_path {
                    self.save(p)?;
                }
            }
            report.epochs.push(EpochMetrics {
                epoch,
                train: train_loss,
                val: val_loss,
            });
        }
        self.store = best_store;
        Ok(report)
    }
}

fn write_record(
    out: &mut dyn Write,
    epoch: usize,
    split: &str,
    loss: &LossComponents,
) -> Result<()> {
    let rec = MetricsRecord {
        epoch,
        split: split.to_string(),
        loss: *loss,
    };
    serde_json::to_writer(&mut *out, &rec)?;
    writeln!(out)?;
    Ok(())
}

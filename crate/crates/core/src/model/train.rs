use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sgd_step, SgdConfig};
use crate::dataset::{Dataset, LoadedSegment};
use crate::error::{Error, Result};
use crate::metrics::argmax_row;
use crate::model::TbnModel;
use crate::rng::derive_rng;
use crate::sampler::{sample_training_tuples, SamplingMode};
use crate::tensor::Scalar;

/// Optimization settings; the defaults follow the reference training recipe
/// (SGD momentum 0.9, lr 0.01 decayed by 10x at epoch 60 of 80, batch 128).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_decay_epoch: Option<usize>,
    pub lr_decay_factor: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lr: 0.01,
            momentum: 0.9,
            batch_size: 128,
            epochs: 80,
            lr_decay_epoch: Some(60),
            lr_decay_factor: 0.1,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 || self.momentum < 0.0 || self.lr_decay_factor < 0.0 {
            return Err(Error::Config("negative optimizer setting".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay_epoch {
            Some(at) if epoch >= at => self.lr * self.lr_decay_factor,
            _ => self.lr,
        }
    }
}

/// One training-log row; rendered as CSV by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub verb_top1: f64,
    pub noun_top1: f64,
    pub action_top1: f64,
}

/// Trains in place. Deterministic in `seed`: batch order, window sampling
/// and dropout all come from named sub-streams, so identical seeds produce
/// bit-identical weights.
pub fn train<E: Scalar>(
    model: &mut TbnModel<E>,
    data: &Dataset,
    hp: &Hyperparams,
    seed: u64,
) -> Result<Vec<EpochLog>> {
    hp.validate()?;
    model.check_dataset(data)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training on an empty dataset".into()));
    }
    let specs = model.config.modality_specs();
    let tbw = model.config.tbw_config(SamplingMode::TrainRandom);
    let mut logs = Vec::with_capacity(hp.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..hp.epochs {
        let lr = hp.lr_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut derive_rng(seed, "order", &[epoch as u64]));

        let mut loss_sum = 0.0f64;
        let mut rows = 0usize;
        let mut verb_hits = 0usize;
        let mut noun_hits = 0usize;
        let mut action_hits = 0usize;

        for (batch_idx, chunk) in order.chunks(hp.batch_size).enumerate() {
            let batch: Vec<&LoadedSegment> = chunk.iter().map(|&i| &data.segments[i]).collect();
            let tuples = chunk
                .iter()
                .map(|&i| {
                    let mut rng = derive_rng(seed, "sampler", &[epoch as u64, i as u64]);
                    sample_training_tuples(&data.segments[i].segment, &specs, &tbw, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut dropout_rng = derive_rng(seed, "dropout", &[epoch as u64, batch_idx as u64]);
            let (tape, loss, logits) =
                model.forward_loss(&batch, &tuples, true, &mut dropout_rng)?;

            loss_sum += tape.value(loss).item().to_f64() * batch.len() as f64;
            let verb_agg = tape.value(logits.verb_agg);
            let noun_agg = tape.value(logits.noun_agg);
            for (row, seg) in batch.iter().enumerate() {
                let vrow: Vec<f64> = verb_agg.row(row).iter().map(|v| v.to_f64()).collect();
                let nrow: Vec<f64> = noun_agg.row(row).iter().map(|v| v.to_f64()).collect();
                let v_ok = argmax_row(&vrow) == seg.segment.verb_class;
                let n_ok = argmax_row(&nrow) == seg.segment.noun_class;
                verb_hits += v_ok as usize;
                noun_hits += n_ok as usize;
                action_hits += (v_ok && n_ok) as usize;
            }
            rows += batch.len();

            tape.backward(loss, &mut model.store)?;
            sgd_step(&mut model.store, SgdConfig { lr, momentum: hp.momentum })?;
        }

        logs.push(EpochLog {
            epoch,
            split: "train".to_string(),
            loss: loss_sum / rows as f64,
            verb_top1: verb_hits as f64 / rows as f64,
            noun_top1: noun_hits as f64 / rows as f64,
            action_top1: action_hits as f64 / rows as f64,
        });
    }
    Ok(logs)
}

/// Renders epoch logs as the canonical CSV.
pub fn logs_to_csv(logs: &[EpochLog]) -> String {
    let mut out = String::from("epoch,split,loss,verb_top1,noun_top1,action_top1\n");
    for l in logs {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6}\n",
            l.epoch, l.split, l.loss, l.verb_top1, l.noun_top1, l.action_top1
        ));
    }
    out
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classify_video;
use super::config::Config;
use super::model::{Model, SnippetInput};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::tensor::{Sgd, Tape};

/// One labelled training snippet.
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: SnippetInput,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's mini-batches, before each update.
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation accuracy (training
    /// accuracy when there is no validation set); earliest epoch on ties.
    pub best: Model,
    pub best_epoch: usize,
    pub last: Model,
    pub log: Vec<EpochLog>,
}

/// Fraction of `samples` the model labels correctly.
pub fn accuracy(model: &Model, samples: &[Sample], mode: Execution) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let inputs: Vec<SnippetInput> = samples.iter().map(|s| s.input.clone()).collect();
    let preds = classify_video(model, &inputs, mode)?;
    let hits = preds.iter().zip(samples).filter(|((p, _), s)| p.label == s.label).count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Mini-batch SGD with momentum on the mean snippet cross-entropy. The
/// sample order is reshuffled every epoch from `config.seed`, so identical
/// inputs and configuration give identical parameters.
pub fn train(
    train: &[Sample],
    val: &[Sample],
    config: &Config,
    n_classes: usize,
    mode: Execution,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(s) = train.iter().chain(val).find(|s| s.label >= n_classes) {
        return Err(Error::TargetOutOfRange {
            target: s.label,
            n_class: n_classes,
        });
    }
    let mut model = Model::new(config, n_classes)?;
    let mut sgd = Sgd::new(config.lr, config.momentum)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_0b5e);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape);
            let inputs: Vec<&SnippetInput> = batch.iter().map(|&i| &train[i].input).collect();
            let outs = model.forward(&mut tape, &vars, &inputs)?;
            let mut total = None;
            for (o, &i) in outs.iter().zip(batch) {
                if o.label == train[i].label {
                    hits += 1;
                }
                let l = tape.softmax_cross_entropy(o.logits, train[i].label)?;
                total = Some(match total {
                    Some(t) => tape.add(t, l)?,
                    None => l,
                });
            }
            let total = total.expect("non-empty batch");
            let loss = tape.scale(total, 1.0 / batch.len() as f64);
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, loss: value });
            }
            loss_sum += value * batch.len() as f64;
            let grads = tape.backward(loss)?;
            model.params.accumulate(&vars, &grads)?;
            sgd.step(&mut model.params)?;
        }
        let train_accuracy = hits as f64 / train.len() as f64;
        let val_accuracy = if val.is_empty() { None } else { Some(accuracy(&model, val, mode)?) };
        let entry = EpochLog {
            epoch,
            loss: loss_sum / train.len() as f64,
            train_accuracy,
            val_accuracy,
        };
        on_epoch(&entry);
        let score = val_accuracy.unwrap_or(train_accuracy);
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch, model.clone()));
        }
        log.push(entry);
    }
    let (best_model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model.clone(), 0),
    };
    Ok(TrainOutcome {
        best: best_model,
        best_epoch,
        last: model,
        log,
    })
}

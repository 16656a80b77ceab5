//! Training and evaluation loops. Batch members run forward/backward on
//! their own tapes (in parallel when configured) and their gradients are
//! averaged in sample order, so results are bit-identical at any thread
//! count. Everything downstream of the seed is deterministic, including the
//! per-epoch shuffle and the metric log.

use std::path::Path;

use expnet_core::{par, Tape};
use expnet_model::checkpoint;
use expnet_model::net::{expnet_forward, training_loss};
use expnet_model::{ExpNetParams, ModelConfig, SaliencyMode};
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::dataset::{Dataset, Sample};
use crate::error::TrainError;
use crate::optim::AdamW;

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
    /// Mean absolute score difference between 4-neighbor saliency patches,
    /// averaged over stages and batch members. Diagnostic only.
    pub coherence: f64,
}

impl EpochLog {
    pub fn line(&self) -> String {
        let eval = match self.eval_acc {
            Some(acc) => format!(" eval_acc={acc:.6}"),
            None => String::new(),
        };
        format!(
            "epoch={} loss={:.6} acc={:.6}{} coherence={:.6}",
            self.epoch, self.train_loss, self.train_acc, eval, self.coherence
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ExpNetParams,
    pub logs: Vec<EpochLog>,
    /// Epochs actually run (early stop may end the run before `epochs`).
    pub epochs_run: usize,
    pub train_indices: Vec<usize>,
    pub eval_indices: Vec<usize>,
}

impl TrainOutcome {
    pub fn log_text(&self) -> String {
        let mut out = String::new();
        for log in &self.logs {
            out.push_str(&log.line());
            out.push('\n');
        }
        out
    }
}

/// Per-class seeded 80/20-style split; balanced up to rounding.
pub fn split_indices(
    dataset: &Dataset,
    eval_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5911);
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for class in 0..dataset.classes {
        let mut indices: Vec<usize> = dataset
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == class)
            .map(|(i, _)| i)
            .collect();
        indices.shuffle(&mut rng);
        let eval_count = (indices.len() as f64 * eval_fraction).round() as usize;
        let split = indices.len() - eval_count;
        train.extend_from_slice(&indices[..split]);
        eval.extend_from_slice(&indices[split..]);
    }
    train.sort_unstable();
    eval.sort_unstable();
    (train, eval)
}

struct SampleGrads {
    grads: Vec<Vec<f64>>,
    loss: f64,
    correct: bool,
    coherence: f64,
}

fn forward_backward(
    params: &ExpNetParams,
    config: &ModelConfig,
    sample: &Sample,
) -> Result<SampleGrads, TrainError> {
    let mut tape = Tape::new();
    let tracked = params.track(&mut tape);
    let output = expnet_forward(&mut tape, &sample.image, &tracked, config, SaliencyMode::Hard)?;
    let loss = training_loss(&mut tape, &output, sample.label)?;
    let loss_value = loss.item();
    let predicted = argmax(output.logits.values());
    let coherence = if output.saliency_maps.is_empty() {
        0.0
    } else {
        output.saliency_maps.iter().map(|m| m.coherence()).sum::<f64>()
            / output.saliency_maps.len() as f64
    };
    tape.backward(&loss)?;
    let grads = tracked
        .named()
        .iter()
        .map(|(_, t)| tape.grad(t).expect("leaf gradient").to_vec())
        .collect();
    Ok(SampleGrads { grads, loss: loss_value, correct: predicted == sample.label, coherence })
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean gradients over a batch, reduced in sample order.
fn batch_step(
    params: &ExpNetParams,
    config: &ModelConfig,
    batch: &[&Sample],
) -> Result<(Vec<Vec<f64>>, f64, usize, f64), TrainError> {
    let results: Vec<SampleGrads> =
        par::try_map_indexed(batch, |_, sample| forward_backward(params, config, sample))?;
    let scale = 1.0 / batch.len() as f64;
    let mut iter = results.into_iter();
    let first = iter.next().expect("non-empty batch");
    let mut grads = first.grads;
    let mut loss = first.loss;
    let mut correct = first.correct as usize;
    let mut coherence = first.coherence;
    for r in iter {
        for (acc, g) in grads.iter_mut().zip(&r.grads) {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        loss += r.loss;
        correct += r.correct as usize;
        coherence += r.coherence;
    }
    for g in &mut grads {
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
    Ok((grads, loss * scale, correct, coherence * scale))
}

/// Predicted class per sample, evaluated in parallel on parameter snapshots.
pub fn predict(
    params: &ExpNetParams,
    config: &ModelConfig,
    samples: &[&Sample],
) -> Result<Vec<usize>, TrainError> {
    par::try_map_indexed(samples, |_, sample| {
        let mut tape = Tape::eval();
        let output = expnet_forward(&mut tape, &sample.image, params, config, SaliencyMode::Hard)?;
        Ok::<usize, TrainError>(argmax(output.logits.values()))
    })
}

#[derive(Debug)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_class: Vec<f64>,
    pub predictions: Vec<usize>,
}

/// Top-1 accuracy and per-class accuracy.
pub fn evaluate(
    params: &ExpNetParams,
    config: &ModelConfig,
    samples: &[&Sample],
) -> Result<Evaluation, TrainError> {
    if samples.iter().any(|s| s.label >= config.classes) {
        return Err(TrainError::invalid(format!(
            "dataset labels exceed the model's {} classes",
            config.classes
        )));
    }
    let predictions = predict(params, config, samples)?;
    let mut correct = vec![0usize; config.classes];
    let mut totals = vec![0usize; config.classes];
    for (pred, sample) in predictions.iter().zip(samples) {
        totals[sample.label] += 1;
        if *pred == sample.label {
            correct[sample.label] += 1;
        }
    }
    let accuracy =
        correct.iter().sum::<usize>() as f64 / samples.len().max(1) as f64;
    let per_class = correct
        .iter()
        .zip(&totals)
        .map(|(c, t)| if *t == 0 { 0.0 } else { *c as f64 / *t as f64 })
        .collect();
    Ok(Evaluation { accuracy, per_class, predictions })
}

/// Trains a fresh model on the dataset. When `out_dir` is given, writes
/// `metrics.log`, periodic checkpoints (`checkpoint-<epoch>/`), and the
/// final `checkpoint/`.
pub fn train(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    dataset: &Dataset,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    model_config.validate()?;
    train_config.validate()?;
    if dataset.classes != model_config.classes {
        return Err(TrainError::invalid(format!(
            "dataset has {} classes, model expects {}",
            dataset.classes, model_config.classes
        )));
    }
    if dataset.image_size != model_config.image_size {
        return Err(TrainError::invalid(format!(
            "dataset image size {} does not match model {}",
            dataset.image_size, model_config.image_size
        )));
    }
    let (train_idx, eval_idx) = split_indices(dataset, train_config.eval_fraction, train_config.seed);
    if train_idx.is_empty() {
        return Err(TrainError::invalid("empty training split".to_string()));
    }
    let mut params = ExpNetParams::init(model_config, train_config.seed);
    let sizes: Vec<usize> = params.named().iter().map(|(_, t)| t.numel()).collect();
    let mut optimizer = AdamW::new(train_config, &sizes);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(train_config.seed ^ 0x0BAD_CAFE);
    let mut order = train_idx.clone();
    let mut logs: Vec<EpochLog> = Vec::new();
    let mut epochs_run = 0;

    for epoch in 1..=train_config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;
        let mut epoch_coherence = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(train_config.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &dataset.samples[i]).collect();
            let (grads, loss, correct, coherence) = batch_step(&params, model_config, &batch)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: batch_idx });
            }
            let mut named = params.named_mut();
            optimizer.step(&mut named, &grads)?;
            epoch_loss += loss * batch.len() as f64;
            epoch_correct += correct;
            epoch_coherence += coherence;
            batches += 1;
        }
        let eval_acc = if eval_idx.is_empty() {
            None
        } else {
            let eval_samples: Vec<&Sample> =
                eval_idx.iter().map(|&i| &dataset.samples[i]).collect();
            Some(evaluate(&params, model_config, &eval_samples)?.accuracy)
        };
        let log = EpochLog {
            epoch,
            train_loss: epoch_loss / train_idx.len() as f64,
            train_acc: epoch_correct as f64 / train_idx.len() as f64,
            eval_acc,
            coherence: epoch_coherence / batches.max(1) as f64,
        };
        logs.push(log.clone());
        epochs_run = epoch;
        if let Some(dir) = out_dir {
            if train_config.checkpoint_every > 0 && epoch % train_config.checkpoint_every == 0 {
                checkpoint::save(
                    dir.join(format!("checkpoint-{epoch}")),
                    model_config,
                    &params,
                    epoch,
                    train_config.seed,
                )?;
            }
        }
        if train_config.early_stop_acc > 0.0 && log.train_acc >= train_config.early_stop_acc {
            break;
        }
    }

    let outcome = TrainOutcome { params, logs, epochs_run, train_indices: train_idx, eval_indices: eval_idx };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
        std::fs::write(dir.join("metrics.log"), outcome.log_text())
            .map_err(|e| TrainError::io(dir, e))?;
        checkpoint::save(
            dir.join("checkpoint"),
            model_config,
            &outcome.params,
            epochs_run,
            train_config.seed,
        )?;
    }
    Ok(outcome)
}

use crate::data::{batches, Split};
use crate::error::{Error, Result};
use crate::metrics::{summarize, Summary};
use crate::numerics::{Adam, AdamConfig, Graph, Rng, LOG_CLAMP};

use super::model::{argmax, predict_batch, EncodedExample, EnsembleClassifier};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub freeze_electra: bool,
    pub freeze_glove: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            freeze_electra: false,
            freeze_glove: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub summary: Summary,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    /// Train row then test row (when a test set is given) for each epoch.
    pub rows: Vec<EpochMetrics>,
}

impl TrainTrace {
    pub fn last(&self, split: Split) -> Option<&EpochMetrics> {
        self.rows.iter().rev().find(|r| r.split == split)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub summary: Summary,
    pub predictions: Vec<usize>,
}

/// Mean cross-entropy, metric summary and argmax predictions over `examples`.
pub fn evaluate(model: &EnsembleClassifier, examples: &[EncodedExample]) -> Result<Evaluation> {
    let probs = predict_batch(model, examples)?;
    let predictions: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let golds: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let loss = probs
        .iter()
        .zip(&golds)
        .map(|(p, &y)| -p[y].max(LOG_CLAMP).ln())
        .sum::<f64>()
        / examples.len() as f64;
    Ok(Evaluation {
        loss,
        summary: summarize(&predictions, &golds)?,
        predictions,
    })
}

/// Mini-batch Adam on mean cross-entropy. After each epoch the train set and, if
/// non-empty, the test set are evaluated in full.
pub fn train_ensemble(
    model: &mut EnsembleClassifier,
    train: &[EncodedExample],
    test: &[EncodedExample],
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if !(cfg.lr > 0.0) {
        return Err(Error::Config(format!(
            "learning rate must be positive, got {}",
            cfg.lr
        )));
    }
    model.set_frozen(cfg.freeze_electra, cfg.freeze_glove);
    let mut adam = Adam::new(model.store(), AdamConfig::with_lr(cfg.lr));
    let mut rng = Rng::new(cfg.seed).derive(3);
    let mut trace = TrainTrace::default();
    for epoch in 1..=cfg.epochs {
        for idx in batches(train.len(), cfg.batch_size, &mut rng)? {
            let batch: Vec<&EncodedExample> = idx.iter().map(|&i| &train[i]).collect();
            let grads = {
                let e: Vec<&[usize]> = batch.iter().map(|x| x.electra.tokens()).collect();
                let w: Vec<&[usize]> = batch.iter().map(|x| x.glove.tokens()).collect();
                let labels: Vec<usize> = batch.iter().map(|x| x.label).collect();
                let mut g = Graph::new(model.store());
                let probs = model.forward(&mut g, &e, &w)?;
                let loss = g.cross_entropy(probs, &labels)?;
                g.backward(loss)?
            };
            grads.accumulate_into(model.store_mut());
            adam.step(model.store_mut())?;
        }
        let tr = evaluate(model, train)?;
        log::info!(
            "epoch {epoch}: train loss {:.4} accuracy {:.4}",
            tr.loss,
            tr.summary.accuracy
        );
        trace.rows.push(EpochMetrics {
            epoch,
            split: Split::Train,
            loss: tr.loss,
            summary: tr.summary,
        });
        if !test.is_empty() {
            let te = evaluate(model, test)?;
            log::info!(
                "epoch {epoch}: test loss {:.4} accuracy {:.4}",
                te.loss,
                te.summary.accuracy
            );
            trace.rows.push(EpochMetrics {
                epoch,
                split: Split::Test,
                loss: te.loss,
                summary: te.summary,
            });
        }
    }
    Ok(trace)
}

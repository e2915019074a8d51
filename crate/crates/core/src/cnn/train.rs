use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bce_from_logit, CnnModel, CnnSpec, Real};
use crate::error::{Error, Result};
use crate::image::ImageStack;
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub holdout_fraction: f64,
    /// Weight each class so both contribute equally to the loss.
    pub class_balance: bool,
    /// Targets become `s/2` and `1 - s/2` instead of 0 and 1.
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 50,
            patience: 5,
            holdout_fraction: 0.1,
            class_balance: true,
            label_smoothing: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epoch budget must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config(format!("holdout fraction {} outside [0, 1)", self.holdout_fraction)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!("label smoothing {} outside [0, 1)", self.label_smoothing)));
        }
        Ok(())
    }

    fn target<F: Real>(&self, y: bool) -> F {
        let s = self.label_smoothing / 2.0;
        F::of(if y { 1.0 - s } else { s })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs_run: usize,
    /// 1-based epoch whose parameters were kept; 0 for an untrained model.
    pub best_epoch: usize,
    /// Mean inference-mode loss on the training split after each epoch.
    pub train_loss: Vec<f64>,
    /// Mean loss on the holdout split after each epoch (empty without holdout).
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<F> {
    pub input: Vec<F>,
    pub label: bool,
}

/// One sample per non-missing day of each stack, labelled with its car's label.
pub fn day_samples<F: Real>(stacks: &[(&ImageStack, bool)]) -> Vec<Sample<F>> {
    stacks
        .iter()
        .flat_map(|&(s, label)| {
            super::day_inputs::<F>(s)
                .into_iter()
                .map(move |input| Sample { input, label })
        })
        .collect()
}

pub fn car_samples<F: Real>(stacks: &[(&ImageStack, bool)]) -> Vec<Sample<F>> {
    stacks
        .iter()
        .map(|&(s, label)| Sample {
            input: super::car_input(s),
            label,
        })
        .collect()
}

/// Stratified split: about `fraction` of each class goes to the holdout,
/// always leaving at least one sample of each class for training.
fn split_holdout(labels: &[bool], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = rng_for(seed, "cnn-holdout");
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_hold = ((idx.len() as f64 * fraction).round() as usize).min(idx.len().saturating_sub(1));
        holdout.extend_from_slice(&idx[..n_hold]);
        train.extend_from_slice(&idx[n_hold..]);
    }
    train.sort_unstable();
    holdout.sort_unstable();
    (train, holdout)
}

fn evaluate<F: Real>(
    model: &CnnModel<F>,
    samples: &[Sample<F>],
    idx: &[usize],
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let outs = idx
        .par_iter()
        .map(|&i| model.forward_with(&samples[i].input, None).map(|a| (a.logit, samples[i].label)))
        .collect::<Result<Vec<_>>>()?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (z, y) in outs {
        loss += bce_from_logit(z, cfg.target(y)).to_f64().unwrap_or(f64::NAN);
        if (z >= F::zero()) == y {
            correct += 1;
        }
    }
    let n = idx.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mini-batch SGD with momentum and early stopping on holdout loss.
///
/// Per-sample gradients within a batch are computed in parallel and reduced
/// in sample order, so results do not depend on the thread count.
pub fn train_cnn<F: Real>(spec: CnnSpec, samples: &[Sample<F>], cfg: &TrainConfig) -> Result<CnnModel<F>> {
    cfg.validate()?;
    spec.validate()?;
    let labels: Vec<bool> = samples.iter().map(|s| s.label).collect();
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::DegenerateLabels(format!(
            "CNN training needs both classes, got {n_pos} positive of {}",
            labels.len()
        )));
    }
    if let Some(bad) = samples.iter().find(|s| s.input.len() != spec.input_len()) {
        return Err(Error::Shape(format!(
            "sample has {} values, network expects {}",
            bad.input.len(),
            spec.input_len()
        )));
    }

    let mut model = CnnModel::<F>::init(spec, derive_seed(cfg.seed, "cnn-init"))?;
    model.meta.seed = cfg.seed;
    let (train_idx, holdout_idx) = split_holdout(&labels, cfg.holdout_fraction, cfg.seed);

    let train_pos = train_idx.iter().filter(|&&i| labels[i]).count() as f64;
    let train_neg = train_idx.len() as f64 - train_pos;
    let (w_pos, w_neg) = if cfg.class_balance {
        let n = train_idx.len() as f64;
        (F::of(n / (2.0 * train_pos)), F::of(n / (2.0 * train_neg)))
    } else {
        (F::one(), F::one())
    };

    let lr = F::of(cfg.learning_rate);
    let mu = F::of(cfg.momentum);
    let mut velocity = vec![F::zero(); model.params.len()];
    let mut best = model.params.clone();
    let mut best_loss = f64::INFINITY;
    let mut since_best = 0usize;
    let mut order = train_idx.clone();

    for epoch in 1..=cfg.epochs {
        let mut rng = rng_for(cfg.seed, &format!("cnn-epoch-{epoch}"));
        order.shuffle(&mut rng);
        let dropout_seed = derive_seed(cfg.seed, &format!("cnn-dropout-{epoch}"));

        for batch in order.chunks(cfg.batch_size) {
            let grads = batch
                .par_iter()
                .map(|&i| {
                    let s = &samples[i];
                    let mut drop = ChaCha8Rng::seed_from_u64(dropout_seed);
                    drop.set_stream(i as u64);
                    let mut g = vec![F::zero(); model.params.len()];
                    let w = if s.label { w_pos } else { w_neg };
                    model.accumulate_gradient(&s.input, cfg.target(s.label), w, Some(&mut drop), &mut g)?;
                    Ok(g)
                })
                .collect::<Result<Vec<_>>>()?;
            let scale = F::one() / F::of(batch.len() as f64);
            for (k, v) in velocity.iter_mut().enumerate() {
                let mut g = F::zero();
                for sample_grad in &grads {
                    g = g + sample_grad[k];
                }
                *v = mu * *v - lr * g * scale;
            }
            for (p, &v) in model.params.iter_mut().zip(&velocity) {
                *p = *p + v;
            }
        }

        let (train_loss, _) = evaluate(&model, samples, &train_idx, cfg)?;
        if !train_loss.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingDiverged(format!("loss became {train_loss} at epoch {epoch}")));
        }
        model.meta.train_loss.push(train_loss);
        let monitored = if holdout_idx.is_empty() {
            train_loss
        } else {
            let (val_loss, val_acc) = evaluate(&model, samples, &holdout_idx, cfg)?;
            model.meta.val_loss.push(val_loss);
            model.meta.val_accuracy.push(val_acc);
            val_loss
        };
        model.meta.epochs_run = epoch;
        if monitored < best_loss {
            best_loss = monitored;
            best.clone_from(&model.params);
            model.meta.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    model.params = best;
    Ok(model)
}

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::layer::{LayerSpec, WeightInit};
use super::model::{Gradients, Model};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::record::{Class, Prediction, RunRecord};
use crate::seed;
use crate::volume::{Dims, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub init: WeightInit,
}

impl Default for Hyperparams {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            epochs: 30,
            batch_size: 20,
            learning_rate: a.learning_rate,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            init: WeightInit::Glorot,
        }
    }
}

impl Hyperparams {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

/// A preprocessed, labelled network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub subject_id: String,
    pub label: Class,
    pub image: Volume,
}

/// Borrowed train / validation / test partition.
#[derive(Debug, Clone, Copy)]
pub struct Partition<'a> {
    pub train: &'a [Sample],
    pub val: &'a [Sample],
    pub test: &'a [Sample],
}

impl Partition<'_> {
    fn validate(&self, batch_size: usize) -> Result<Dims> {
        if self.train.is_empty() || self.val.is_empty() || self.test.is_empty() {
            return Err(Error::Empty("train, validation and test sets must be non-empty"));
        }
        if batch_size == 0 || batch_size > self.train.len() {
            return Err(Error::InvalidSpec(format!("batch size {batch_size} must lie in 1..={}", self.train.len())));
        }
        let dims = self.train[0].image.dims();
        let all = self.train.iter().chain(self.val).chain(self.test);
        if all.clone().any(|s| s.image.dims() != dims) {
            return Err(Error::ShapeMismatch("samples have differing dims".into()));
        }
        let train_subjects: Vec<&str> = self.train.iter().map(|s| s.subject_id.as_str()).collect();
        let overlaps = self.val.iter().chain(self.test).any(|s| train_subjects.contains(&s.subject_id.as_str()))
            || self.val.iter().any(|v| self.test.iter().any(|t| t.subject_id == v.subject_id));
        if overlaps {
            return Err(Error::InvalidSpec("train/val/test share a subject".into()));
        }
        Ok(dims)
    }
}

/// Per-epoch learning curves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainCurves {
    /// Mean training loss of the untrained model.
    pub initial_train_loss: f64,
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
}

impl TrainCurves {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    pub fn final_val_accuracy(&self) -> f64 {
        self.val_accuracy.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_train_loss(&self) -> f64 {
        self.train_loss.last().copied().unwrap_or(f64::NAN)
    }
}

/// Rule deciding whether a session counts as converged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceCriterion {
    /// Required validation accuracy above chance (0.5).
    pub margin: f64,
}

impl Default for ConvergenceCriterion {
    fn default() -> Self {
        Self { margin: 0.05 }
    }
}

impl ConvergenceCriterion {
    /// `Ok(())` when converged, otherwise the exclusion reason.
    pub fn screen(&self, curves: &TrainCurves) -> core::result::Result<(), String> {
        let acc = curves.final_val_accuracy();
        let loss = curves.final_train_loss();
        if !loss.is_finite() {
            return Err("non-finite training loss".into());
        }
        if !curves.initial_train_loss.is_finite() || loss >= curves.initial_train_loss {
            return Err(format!("final training loss {loss:.6} not below initial {:.6}", curves.initial_train_loss));
        }
        if !(acc >= 0.5 + self.margin) {
            return Err(format!("final validation accuracy {acc:.4} below {:.4}", 0.5 + self.margin));
        }
        Ok(())
    }
}

/// Result of one training session.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub curves: TrainCurves,
    pub predictions: Vec<Prediction>,
    /// Set when a non-finite loss or gradient stopped training early.
    pub diverged: bool,
}

impl<T: Real> TrainOutcome<T> {
    pub fn into_record(
        self,
        config_id: &str,
        sampling: usize,
        init: usize,
        criterion: &ConvergenceCriterion,
    ) -> (Model<T>, TrainCurves, RunRecord) {
        let screen =
            if self.diverged { Err("training diverged (non-finite loss or gradient)".into()) } else { criterion.screen(&self.curves) };
        let record = RunRecord {
            config_id: config_id.into(),
            sampling,
            init,
            converged: screen.is_ok(),
            exclusion: screen.err(),
            final_val_accuracy: self.curves.final_val_accuracy(),
            predictions: self.predictions,
            curves_path: None,
            checkpoint_path: None,
        };
        (self.model, self.curves, record)
    }
}

/// Loss and accuracy of a model over a sample set.
pub fn evaluate<T: Real>(model: &Model<T>, samples: &[Sample]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in samples {
        let p = model.predict(&s.image)?;
        loss += super::model::bce_loss(&p, s.label.index());
        if predicted_class(&p) == s.label {
            correct += 1;
        }
    }
    let n = samples.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// AD when its probability exceeds one half.
pub fn predicted_class<T: Real>(scores: &[T]) -> Class {
    if scores[Class::Ad.index()].as_f64() > 0.5 {
        Class::Ad
    } else {
        Class::Nc
    }
}

pub fn predict_all<T: Real>(model: &Model<T>, samples: &[Sample]) -> Result<Vec<Prediction>> {
    samples
        .iter()
        .map(|s| {
            let p = model.predict(&s.image)?;
            Ok(Prediction { image_id: s.id.clone(), truth: s.label, predicted: predicted_class(&p), score: p[Class::Ad.index()].as_f64() })
        })
        .collect()
}

/// Trains a freshly initialized model with mini-batch Adam.
///
/// Weights come from `init_seed`; the per-epoch shuffle of the training set
/// comes from `shuffle_seed`. A non-finite loss or gradient stops training
/// and marks the outcome as diverged; the remaining epochs are recorded as
/// NaN.
pub fn train<T: Real>(
    specs: &[LayerSpec],
    init_seed: u64,
    shuffle_seed: u64,
    data: Partition<'_>,
    hp: &Hyperparams,
) -> Result<TrainOutcome<T>> {
    let dims = data.validate(hp.batch_size)?;
    let mut model = Model::<T>::init_with(dims, specs, init_seed, hp.init)?;
    let mut adam = AdamState::new(&model, hp.adam())?;
    let mut rng = seed::rng(shuffle_seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut grads = Gradients::zeros_like(&model);

    let (initial_train_loss, _) = evaluate(&model, data.train)?;
    let mut curves = TrainCurves { initial_train_loss, ..Default::default() };
    let mut diverged = false;

    for _epoch in 0..hp.epochs {
        if diverged {
            for v in [&mut curves.train_loss, &mut curves.train_accuracy, &mut curves.val_loss, &mut curves.val_accuracy] {
                v.push(f64::NAN);
            }
            continue;
        }
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(hp.batch_size) {
            grads.fill_zero();
            for &i in batch {
                let s = &data.train[i];
                let trace = model.forward(&s.image)?;
                if predicted_class(&trace.scores) == s.label {
                    correct += 1;
                }
                loss_sum += model.backward(&trace, s.label.index(), &mut grads)?;
            }
            grads.scale(T::one() / T::from_f64(batch.len() as f64));
            if !loss_sum.is_finite() || adam.step(&mut model, &grads).is_err() {
                diverged = true;
                break;
            }
        }
        if diverged {
            for v in [&mut curves.train_loss, &mut curves.train_accuracy, &mut curves.val_loss, &mut curves.val_accuracy] {
                v.push(f64::NAN);
            }
            continue;
        }
        let n = data.train.len() as f64;
        curves.train_loss.push(loss_sum / n);
        curves.train_accuracy.push(correct as f64 / n);
        let (vl, va) = evaluate(&model, data.val)?;
        curves.val_loss.push(vl);
        curves.val_accuracy.push(va);
    }

    let predictions = predict_all(&model, data.test)?;
    Ok(TrainOutcome { model, curves, predictions, diverged })
}

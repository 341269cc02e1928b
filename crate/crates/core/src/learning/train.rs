use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fgm::{perturb_in_place, FgmConfig};
use super::head::{head_gradients, ClassifierHead};
use super::optim::Adam;
use crate::encoder::Embedding;
use crate::error::{Error, Result};

/// Learning rate for heads on top of a fine-tuned pretrained backend.
pub const FINE_TUNE_LEARNING_RATE: f64 = 5e-6;
/// Learning rate for heads on top of a frozen backend.
pub const FROZEN_LEARNING_RATE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub dropout: f64,
    pub seed: u64,
    /// Per-class loss weights; `None` means all ones.
    pub class_weights: Option<Vec<f64>>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 4,
            epochs: 10,
            learning_rate: FROZEN_LEARNING_RATE,
            optimizer: Optimizer::Adam,
            dropout: 0.5,
            seed: 0,
            class_weights: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if let Some(w) = &self.class_weights {
            if w.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
                return Err(Error::Config("class weights must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn weights_for(&self, num_classes: usize) -> Result<Vec<f64>> {
        match &self.class_weights {
            None => Ok(vec![1.0; num_classes]),
            Some(w) if w.len() == num_classes => Ok(w.clone()),
            Some(w) => Err(Error::Config(format!(
                "{} class weights for a {num_classes}-class head",
                w.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub loss: f64,
    /// Mean loss on the perturbed inputs when FGM is on.
    pub adversarial_loss: Option<f64>,
    /// Largest perturbation norm applied in the batch.
    pub max_perturbation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_adversarial_loss: Option<f64>,
}

/// Mini-batch trainer for one [`ClassifierHead`].
///
/// Owns the training inputs. With FGM enabled each step perturbs the batch
/// inputs in place, takes the adversarial gradients and restores the
/// originals before the optimizer update.
pub struct Trainer {
    head: ClassifierHead,
    inputs: Vec<Embedding>,
    labels: Vec<usize>,
    class_weights: Vec<f64>,
    config: TrainingConfig,
    fgm: FgmConfig,
    optimizer: Adam,
    rng: ChaCha8Rng,
    step: usize,
    epoch: usize,
}

impl Trainer {
    pub fn new(
        examples: Vec<(Embedding, usize)>,
        num_classes: usize,
        config: &TrainingConfig,
        fgm: &FgmConfig,
    ) -> Result<Self> {
        config.validate()?;
        if fgm.enabled {
            fgm.validate()?;
        }
        let Some(first) = examples.first() else {
            return Err(Error::Config("training needs at least one example".into()));
        };
        let input_dim = first.0.len();
        if let Some((i, _)) = examples.iter().enumerate().find(|(_, (x, _))| x.len() != input_dim) {
            return Err(Error::Contract(format!("example {i} has a different input dim than example 0")));
        }
        if let Some((i, (_, y))) = examples.iter().enumerate().find(|(_, (_, y))| *y >= num_classes) {
            return Err(Error::Contract(format!("example {i} has class {y} for a {num_classes}-class head")));
        }
        let head = ClassifierHead::zeros(num_classes, input_dim, config.dropout)?;
        let num_params = num_classes * input_dim + num_classes;
        let (inputs, labels) = examples.into_iter().unzip();
        Ok(Trainer {
            head,
            inputs,
            labels,
            class_weights: config.weights_for(num_classes)?,
            config: config.clone(),
            fgm: fgm.clone(),
            optimizer: Adam::new(num_params, config.learning_rate),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            step: 0,
            epoch: 0,
        })
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    pub fn inputs(&self) -> &[Embedding] {
        &self.inputs
    }

    pub fn into_head(self) -> ClassifierHead {
        self.head
    }

    pub fn epoch_batches(&mut self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.inputs.len()).collect();
        order.shuffle(&mut self.rng);
        order.chunks(self.config.batch_size).map(<[usize]>::to_vec).collect()
    }

    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        let batches = self.epoch_batches();
        let (mut loss, mut adv, mut n) = (0.0, 0.0, 0usize);
        for batch in &batches {
            let stats = self.step(batch)?;
            loss += stats.loss * batch.len() as f64;
            adv += stats.adversarial_loss.unwrap_or(0.0) * batch.len() as f64;
            n += batch.len();
        }
        let stats = EpochStats {
            epoch: self.epoch,
            mean_loss: loss / n as f64,
            mean_adversarial_loss: self.fgm.enabled.then(|| adv / n as f64),
        };
        log::debug!("epoch {} mean loss {:.6}", stats.epoch, stats.mean_loss);
        self.epoch += 1;
        Ok(stats)
    }

    fn dropout_mask(&mut self, dim: usize) -> Option<Vec<f64>> {
        let rate = self.config.dropout;
        if rate == 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - rate);
        Some((0..dim).map(|_| if self.rng.gen::<f64>() < rate { 0.0 } else { keep }).collect())
    }

    /// One optimizer step over the given example indices.
    pub fn step(&mut self, batch: &[usize]) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let dim = self.head.input_dim();
        let mut grad_w = vec![0.0; self.head.weight().len()];
        let mut grad_b = vec![0.0; self.head.num_classes()];
        let masks: Vec<Option<Vec<f64>>> = batch.iter().map(|_| self.dropout_mask(dim)).collect();

        let mut input_grads = Vec::with_capacity(batch.len());
        let mut loss = 0.0;
        for (&i, mask) in batch.iter().zip(&masks) {
            let x = apply_mask(self.inputs[i].as_slice(), mask.as_deref());
            let g = head_gradients(&self.head, &x, self.labels[i], &self.class_weights)?;
            loss += g.loss;
            accumulate(&mut grad_w, &g.weight);
            accumulate(&mut grad_b, &g.bias);
            let mut gx = g.input;
            if let Some(m) = mask {
                gx.iter_mut().zip(m).for_each(|(g, m)| *g *= m);
            }
            input_grads.push(gx);
        }
        loss /= batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Training {
                step: self.step,
                batch: batch.to_vec(),
                message: format!("loss is {loss}"),
            });
        }

        let mut adversarial_loss = None;
        let mut max_perturbation: f64 = 0.0;
        if self.fgm.enabled {
            let backups: Vec<Embedding> = batch.iter().map(|&i| self.inputs[i].clone()).collect();
            for (&i, gx) in batch.iter().zip(&input_grads) {
                let applied = perturb_in_place(self.inputs[i].as_mut_slice(), gx, self.fgm.epsilon);
                max_perturbation = max_perturbation.max(applied);
            }
            let mut adv = 0.0;
            let mut failure = None;
            for (&i, mask) in batch.iter().zip(&masks) {
                let x = apply_mask(self.inputs[i].as_slice(), mask.as_deref());
                match head_gradients(&self.head, &x, self.labels[i], &self.class_weights) {
                    Ok(g) => {
                        adv += g.loss;
                        accumulate(&mut grad_w, &g.weight);
                        accumulate(&mut grad_b, &g.bias);
                    }
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                }
            }
            for (&i, original) in batch.iter().zip(backups) {
                self.inputs[i] = original;
            }
            if let Some(e) = failure {
                return Err(e);
            }
            adv /= batch.len() as f64;
            if !adv.is_finite() {
                return Err(Error::Training {
                    step: self.step,
                    batch: batch.to_vec(),
                    message: format!("adversarial loss is {adv}"),
                });
            }
            adversarial_loss = Some(adv);
        }

        let scale = 1.0 / batch.len() as f64;
        grad_w.iter_mut().chain(grad_b.iter_mut()).for_each(|g| *g *= scale);
        let (w, b) = self.head.params_mut();
        self.optimizer.update(&mut [w, b], &[&grad_w, &grad_b]);

        let stats = StepStats {
            step: self.step,
            loss,
            adversarial_loss,
            max_perturbation,
        };
        self.step += 1;
        Ok(stats)
    }

    /// Runs all configured epochs.
    pub fn fit(&mut self) -> Result<Vec<EpochStats>> {
        (0..self.config.epochs).map(|_| self.run_epoch()).collect()
    }
}

fn apply_mask<'a>(x: &'a [f64], mask: Option<&[f64]>) -> std::borrow::Cow<'a, [f64]> {
    match mask {
        None => std::borrow::Cow::Borrowed(x),
        Some(m) => std::borrow::Cow::Owned(x.iter().zip(m).map(|(a, b)| a * b).collect()),
    }
}

fn accumulate(into: &mut [f64], from: &[f64]) {
    into.iter_mut().zip(from).for_each(|(a, b)| *a += b);
}

/// Trains a fresh zero-initialized head on `examples`.
pub fn train_head(
    examples: &[(Embedding, usize)],
    num_classes: usize,
    config: &TrainingConfig,
    fgm: &FgmConfig,
) -> Result<ClassifierHead> {
    Ok(train_head_with_history(examples.to_vec(), num_classes, config, fgm)?.0)
}

pub fn train_head_with_history(
    examples: Vec<(Embedding, usize)>,
    num_classes: usize,
    config: &TrainingConfig,
    fgm: &FgmConfig,
) -> Result<(ClassifierHead, Vec<EpochStats>)> {
    let mut trainer = Trainer::new(examples, num_classes, config, fgm)?;
    let history = trainer.fit()?;
    Ok((trainer.into_head(), history))
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS, DEFAULT_LEARNING_RATE};
use crate::data::TrainingExample;
use crate::error::{Error, Result};
use crate::model::{forward, loss_and_gradients, ModelConfig, ModelParams, SoiPrediction};
use crate::seed::mix;

pub const DEFAULT_BATCH_SIZE: usize = 256;
pub const DEFAULT_EPOCHS: usize = 200;

/// Examples per gradient-accumulation chunk. Chunks run in parallel and are
/// reduced in chunk order, so the sum does not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// SOI examples per optimizer step; the last batch of an epoch may be
    /// smaller.
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: DEFAULT_EPOCHS,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        self.adam().validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub params: ModelParams,
    /// Mean training loss of each epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
    /// The training set held only one class.
    pub single_class: bool,
}

fn add_into(acc: &mut ModelParams, g: &ModelParams) {
    for ((_, a), (_, b)) in acc.named_mut().into_iter().zip(g.named()) {
        for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
            *x += y;
        }
    }
}

fn scale(p: &mut ModelParams, s: f64) {
    for (_, m) in p.named_mut() {
        m.data_mut().iter_mut().for_each(|v| *v *= s);
    }
}

/// Label of a supervised example, or an error naming it.
pub(crate) fn label_of(ex: &TrainingExample) -> Result<usize> {
    ex.label.ok_or_else(|| {
        Error::Contract(format!(
            "{}/{} slice {} has no label",
            ex.patient_id,
            ex.biopsy_id,
            ex.soi_slice_index()
        ))
    })
}

/// Summed loss and gradients of a batch.
fn batch_gradients(
    batch: &[&TrainingExample],
    config: &ModelConfig,
    params: &ModelParams,
) -> Result<(f64, ModelParams)> {
    let partials = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = params.zeros_like();
            let mut loss = 0.0;
            for ex in chunk {
                let (l, _, g) = loss_and_gradients(&ex.bag_refs(), ex.soi_pos, label_of(ex)?, config, params)?;
                loss += l;
                add_into(&mut acc, &g);
            }
            Ok((loss, acc))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &partials {
        loss += l;
        add_into(&mut total, g);
    }
    Ok((loss, total))
}

/// Trains one model from a seeded initialization. Each epoch visits the
/// examples in a fresh seeded order, in batches of `batch_size`, with the
/// batch-mean gradient driving one Adam step.
pub fn train_fold(
    examples: &[&TrainingExample],
    config: &TrainConfig,
    model_config: &ModelConfig,
    seed: u64,
) -> Result<FitResult> {
    config.validate()?;
    model_config.validate()?;
    if examples.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let mut has = [false; 2];
    for ex in examples {
        let l = label_of(ex)?;
        if l >= model_config.n_classes {
            return Err(Error::Contract(format!("label {l} outside {} classes", model_config.n_classes)));
        }
        has[l.min(1)] = true;
    }
    let mut params = ModelParams::init(model_config, seed)?;
    let mut state = AdamState::new(&params);
    let adam = config.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5348_5546));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&TrainingExample> = idx.iter().map(|&i| examples[i]).collect();
            let (loss, mut grads) = batch_gradients(&batch, model_config, &params)?;
            scale(&mut grads, 1.0 / batch.len() as f64);
            adam_step(&mut params, &grads, &mut state, &adam)?;
            epoch_loss += loss;
        }
        let mean = epoch_loss / examples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite { op: "train_fold" });
        }
        epoch_losses.push(mean);
    }
    Ok(FitResult {
        params,
        epoch_losses,
        single_class: !(has[0] && has[1]),
    })
}

pub fn predict(example: &TrainingExample, config: &ModelConfig, params: &ModelParams) -> Result<SoiPrediction> {
    forward(&example.bag_refs(), example.soi_pos, config, params)
}

/// Fraction of examples whose argmax class equals the label.
pub fn accuracy(examples: &[&TrainingExample], config: &ModelConfig, params: &ModelParams) -> Result<f64> {
    let hits = examples
        .par_iter()
        .map(|ex| {
            let p = predict(ex, config, params)?;
            let argmax = (0..p.probs.len())
                .fold(0, |best, k| if p.probs[k] > p.probs[best] { k } else { best });
            Ok(usize::from(argmax == label_of(ex)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / examples.len().max(1) as f64)
}

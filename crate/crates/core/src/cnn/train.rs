use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::engine::{forward, gradient_sum, loss, probs_into};
use super::io::parameter_checksum;
use super::network::{NetworkSpec, Parameters};
use crate::datasets::TupleRecord;
use crate::error::{Error, Result};
use crate::numerics::RngState;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Threads for gradient and validation passes. Results are identical
    /// for any value; 1 is the reference mode.
    pub workers: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 1024,
            epochs: 10,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            validation_fraction: 0.05,
            seed: 0,
            workers: 1,
        }
    }
}

impl TrainerConfig {
    /// Settings for training at unit = 10^4: learning rate 3e-3, batch 256, 20 epochs.
    pub fn desk_scale() -> Self {
        Self {
            learning_rate: 3e-3,
            batch_size: 256,
            epochs: 20,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("trainer: {what}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.workers == 0 {
            return bad("batch_size, epochs and workers must be positive");
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0 && self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0) {
            return bad("adam betas must lie in (0, 1)");
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive");
        }
        if !(0.0..=0.5).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 0.5]");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Validation misclassification rate after each epoch (empty without a validation split).
    pub validation_error: Vec<f64>,
    pub final_loss: f64,
    /// Epoch (0-based) whose parameters were kept.
    pub best_epoch: usize,
    pub training_records: usize,
    pub validation_records: usize,
    /// Initialization draws until a live network was found.
    pub init_attempts: u64,
    pub duration_secs: f64,
    /// SHA-256 of the returned parameters as little-endian f64.
    pub checksum: String,
}

/// Misclassified count and summed loss over `idx`.
fn validate<S: Scalar>(spec: &NetworkSpec, params: &Parameters<S>, data: &[TupleRecord<S>], idx: &[usize]) -> (u64, f64) {
    let parts: Vec<(u64, f64)> = idx
        .par_chunks(4096)
        .map(|c| {
            let mut act = Vec::new();
            c.iter().fold((0, 0.0), |(wrong, l), &i| {
                let r = &data[i];
                let p = probs_into(spec.plan(), params.as_slice(), r.values(), &mut act);
                (wrong + u64::from((p[1] > S::lit(0.5)) != r.label), l + loss(p, r.label).as_f64())
            })
        })
        .collect();
    parts.into_iter().fold((0, 0.0), |(w, l), (a, b)| (w + a, l + b))
}

/// Inputs used to tell a live initialization from a dead one.
const PROBE_INPUTS: usize = 256;
/// Upper bound on initialization redraws.
pub const MAX_INIT_ATTEMPTS: u64 = 1 << 20;

/// Draws `N(0, 2/fan_in)` weights until the network output depends on the
/// input; returns the parameters and the number of draws.
///
/// With zero biases and ReLU after every narrow convolution, most draws
/// produce a network that is constant in its input (nearly all of them at
/// n = 1). Such a network has zero gradient everywhere and cannot train.
/// Draw `i` uses substream `i` of `rng`.
pub fn init_live<S: Scalar>(spec: &NetworkSpec, rng: &RngState) -> Result<(Parameters<S>, u64)> {
    let mut probe_rng = rng.derive_substream(u64::MAX);
    let probes: Vec<Vec<S>> = (0..PROBE_INPUTS)
        .map(|_| (0..spec.n()).map(|_| S::lit(probe_rng.normal(0.0, 3.0))).collect())
        .collect();
    for attempt in 0..MAX_INIT_ATTEMPTS {
        let p = Parameters::<S>::init(spec, &mut rng.derive_substream(attempt));
        let first = forward(spec, &p, &probes[0])?;
        for x in &probes[1..] {
            if forward(spec, &p, x)? != first {
                return Ok((p, attempt + 1));
            }
        }
    }
    Err(Error::Domain(format!(
        "no initialization with input-dependent output in {MAX_INIT_ATTEMPTS} draws"
    )))
}

/// Trains from a live `N(0, 2/fan_in)` initialization (see [`init_live`])
/// with Adam on minibatches.
///
/// Random streams derived from `config.seed`: 0 initializes, 1 splits off
/// the validation set, `2 + e` shuffles epoch `e`. The parameters with the
/// lowest validation error (then lowest validation loss) are returned;
/// without a validation split, the last ones.
pub fn train<S: Scalar>(
    spec: &NetworkSpec,
    data: &[TupleRecord<S>],
    config: &TrainerConfig,
) -> Result<(Parameters<S>, TrainReport)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for r in data {
        spec.check_input(r.values())?;
    }
    crate::with_workers(config.workers, || train_inner(spec, data, config))
}

fn train_inner<S: Scalar>(
    spec: &NetworkSpec,
    data: &[TupleRecord<S>],
    config: &TrainerConfig,
) -> Result<(Parameters<S>, TrainReport)> {
    let start = Instant::now();
    let root = RngState::new(config.seed);
    let (mut params, init_attempts) = init_live::<S>(spec, &root.derive_substream(0))?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    root.derive_substream(1).shuffle(&mut order);
    let n_val = (data.len() as f64 * config.validation_fraction).round() as usize;
    let n_val = n_val.min(data.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();

    let adam = config.adam();
    let mut state = AdamState::new(params.len());
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let mut validation_error = Vec::new();
    let mut best: Option<(u64, f64, usize, Parameters<S>)> = None;

    for epoch in 0..config.epochs {
        root.derive_substream(2 + epoch as u64).shuffle(&mut train_idx);
        let mut loss_total = 0.0;
        for batch in train_idx.chunks(config.batch_size) {
            let (loss_sum, mut grad) = gradient_sum(spec.plan(), params.as_slice(), batch, |&i| {
                (data[i].values(), data[i].label)
            });
            let loss = loss_sum.as_f64();
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    loss: loss / batch.len() as f64,
                });
            }
            loss_total += loss;
            let scale = S::one() / S::lit(batch.len() as f64);
            grad.iter_mut().for_each(|g| *g *= scale);
            adam_step(&mut params, &grad, &mut state, &adam)?;
        }
        epoch_loss.push(loss_total / train_idx.len() as f64);
        if !val_idx.is_empty() {
            let (wrong, val_loss) = validate(spec, &params, data, val_idx);
            validation_error.push(wrong as f64 / val_idx.len() as f64);
            if best.as_ref().is_none_or(|(w, l, _, _)| (wrong, val_loss) < (*w, *l)) {
                best = Some((wrong, val_loss, epoch, params.clone()));
            }
        }
    }

    let (best_epoch, params) = match best {
        Some((_, _, e, p)) => (e, p),
        None => (config.epochs - 1, params),
    };
    let report = TrainReport {
        final_loss: *epoch_loss.last().expect("at least one epoch"),
        epoch_loss,
        validation_error,
        best_epoch,
        training_records: train_idx.len(),
        validation_records: val_idx.len(),
        init_attempts,
        duration_secs: start.elapsed().as_secs_f64(),
        checksum: parameter_checksum(&params),
    };
    Ok((params, report))
}

//! Minibatch SGD with global-norm clipping.
//!
//! The minibatch for step `s` is drawn from an RNG seeded by `(seed, s)`, so a
//! run resumed from a checkpoint at step `s` continues exactly as the
//! uninterrupted run would have.

use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::FsrConfig;
use crate::model::{LossBreakdown, Parameters, TinyTransducer};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    /// Worker threads for per-utterance gradients within a batch.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 8,
            learning_rate: 0.1,
            clip_norm: 5.0,
            seed: 7,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config(format!("clip_norm must be >= 0, got {}", self.clip_norm)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based index of the completed step.
    pub step: u64,
    pub transducer: f64,
    pub ctc: f64,
    pub fsr_surrogate: f64,
    pub joint: f64,
    /// Norm of the batch-mean gradient before clipping.
    pub grad_norm: f64,
}

impl StepRecord {
    pub const CSV_HEADER: &'static str = "step,transducer_loss,ctc_loss,fsr_surrogate,grad_norm";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.8},{:.8},{:.8},{:.8}",
            self.step, self.transducer, self.ctc, self.fsr_surrogate, self.grad_norm
        )
    }
}

fn batch_indices(seed: u64, step: u64, batch_size: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    (0..batch_size).map(|_| rng.random_range(0..n)).collect()
}

/// Per-utterance results in batch order, independent of `threads`.
fn batch_gradients(
    model: &TinyTransducer,
    data: &Dataset,
    indices: &[usize],
    fsr: &FsrConfig,
    threads: usize,
) -> Vec<Result<(LossBreakdown, Parameters)>> {
    let work = |i: usize| {
        let u = &data.utterances[i];
        model.loss_and_grads(&u.features, &u.targets, fsr)
    };
    if threads <= 1 || indices.len() <= 1 {
        return indices.iter().map(|&i| work(i)).collect();
    }
    let chunk = indices.len().div_ceil(threads);
    thread::scope(|s| {
        let handles: Vec<_> = indices
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|&i| work(i)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("gradient worker panicked"))
            .collect()
    })
}

/// One SGD step at global step index `step` (0-based). The model is left
/// untouched when the step fails.
pub fn train_step(
    model: &mut TinyTransducer,
    data: &Dataset,
    fsr: &FsrConfig,
    cfg: &TrainConfig,
    step: u64,
) -> Result<StepRecord> {
    let indices = batch_indices(cfg.seed, step, cfg.batch_size, data.len());
    let mut total = Parameters::zeros(&model.config);
    let mut sums = [0.0f64; 4];
    for result in batch_gradients(model, data, &indices, fsr, cfg.threads) {
        let (loss, grads) = result?;
        total.add_scaled(1.0, &grads);
        sums[0] += loss.transducer;
        sums[1] += loss.ctc;
        sums[2] += loss.fsr_surrogate;
        sums[3] += loss.joint;
    }
    let inv = 1.0 / cfg.batch_size as f64;
    total.scale(inv);
    let grad_norm = total.squared_norm().sqrt();
    let record = StepRecord {
        step: step + 1,
        transducer: sums[0] * inv,
        ctc: sums[1] * inv,
        fsr_surrogate: sums[2] * inv,
        joint: sums[3] * inv,
        grad_norm,
    };
    if !record.joint.is_finite() || !grad_norm.is_finite() {
        return Err(Error::NonFinite {
            step: step + 1,
            detail: format!(
                "transducer {} ctc {} grad_norm {}",
                record.transducer, record.ctc, grad_norm
            ),
        });
    }
    let mut factor = -cfg.learning_rate;
    if cfg.clip_norm > 0.0 && grad_norm > cfg.clip_norm {
        factor *= cfg.clip_norm / grad_norm;
    }
    model.params.add_scaled(factor, &total);
    Ok(record)
}

/// Run steps `start_step..cfg.steps`, reporting each record to `on_step`.
pub fn train(
    model: &mut TinyTransducer,
    data: &Dataset,
    fsr: &FsrConfig,
    cfg: &TrainConfig,
    start_step: u64,
    mut on_step: impl FnMut(&TinyTransducer, &StepRecord) -> Result<()>,
) -> Result<Vec<StepRecord>> {
    cfg.validate()?;
    fsr.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    if data.feat_dim != model.config.feat_dim || data.vocab_size != model.config.vocab_size {
        return Err(Error::Config(format!(
            "dataset (V={}, F={}) does not match model (V={}, F={})",
            data.vocab_size, data.feat_dim, model.config.vocab_size, model.config.feat_dim
        )));
    }
    let mut log = Vec::new();
    for step in start_step..cfg.steps {
        let record = train_step(model, data, fsr, cfg, step)?;
        on_step(model, &record)?;
        log.push(record);
    }
    Ok(log)
}

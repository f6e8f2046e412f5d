//! The training loop: oversample, augment, forward, BCE, SGD; validation
//! after every epoch and test evaluation of the last and best-validation
//! parameters.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::encoders::tabular::Standardizer;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamStore;
use crate::scalar::Scalar;

use super::augment::{augment, preprocess, AugmentConfig};
use super::data::{oversample, Dataset, MINORITY};
use super::metrics::{compute_metrics, MetricsReport, DEFAULT_THRESHOLD};
use super::optim::sgd_step;

pub const EVAL_BATCH: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub threshold: f64,
    pub oversample: bool,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 1e-4,
            weight_decay: 0.01,
            batch_size: 4,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            oversample: true,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: MetricsReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Predictions {
    pub fn metrics(&self, threshold: f64) -> Result<MetricsReport> {
        compute_metrics(&self.scores, &self.labels, threshold)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub last: ParamStore<T>,
    pub best: ParamStore<T>,
    /// 1-based epoch of the best validation AUROC (earliest on ties).
    pub best_epoch: usize,
    pub epochs: Vec<EpochRecord>,
    pub standardizer: Standardizer,
    pub last_test: Predictions,
    pub best_test: Predictions,
}

/// Scores the samples at `idx` with dropout off.
pub fn predict<T: Scalar>(
    model: &Model,
    store: &ParamStore<T>,
    data: &Dataset,
    idx: &[usize],
    stats: &Standardizer,
    augment_cfg: &AugmentConfig,
) -> Result<Predictions> {
    let mut scores = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let vb = data.volume_batch::<T>(chunk, |v| preprocess(v, augment_cfg))?;
        let mut tape = Tape::inference();
        let x = tape.constant(vb.volumes);
        let tab = if model.mode().uses_tabular() {
            let tb = data.tabular_batch::<T>(chunk, stats)?;
            Some(tape.constant(tb.features))
        } else {
            None
        };
        let p = model.predict(&mut tape, store, x, tab, None)?;
        scores.extend(tape.value(p).data().iter().map(|s| s.as_f64()));
    }
    Ok(Predictions {
        ids: idx.iter().map(|&i| data.samples[i].id.clone()).collect(),
        scores,
        labels: data.labels(idx),
    })
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn diverged(err: Error, epoch: usize, step: usize) -> Error {
    match err {
        Error::NonFinite { op } => Error::Diverged { epoch, step, op },
        e => e,
    }
}

/// Trains `store` in place of a copy and returns the last and
/// best-validation parameters. `on_epoch` sees each record as it is made.
pub fn train<T: Scalar>(
    model: &Model,
    store: ParamStore<T>,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    data.validate()?;
    if data.geometry != model.config.backbone.geometry {
        return Err(Error::Config(format!(
            "dataset geometry {:?} differs from model geometry {:?}",
            data.geometry, model.config.backbone.geometry
        )));
    }
    if data.schema != model.config.schema {
        return Err(Error::Config("dataset tabular schema differs from the model schema".into()));
    }
    let stats = data.fit_standardizer()?;
    let all_labels = data.labels(&(0..data.samples.len()).collect::<Vec<_>>());
    let mut order = if cfg.oversample {
        oversample(&data.splits.train, &all_labels, MINORITY, None, cfg.seed)?
    } else {
        data.splits.train.clone()
    };
    let mut shuffle_rng = seeded(cfg.seed, 3);
    let mut aug_rng = seeded(cfg.seed, 4);
    let mut dropout_rng = seeded(cfg.seed, 5);
    let (lr, wd) = (T::lit(cfg.lr), T::lit(cfg.weight_decay));

    let mut store = store;
    let mut best = store.clone();
    let mut best_auroc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let run = |store: &ParamStore<T>, aug_rng: &mut ChaCha8Rng, dropout_rng: &mut ChaCha8Rng| -> Result<(f64, Vec<_>)> {
                let vb = data.volume_batch::<T>(chunk, |v| augment(v, &cfg.augment, aug_rng))?;
                let mut tape = Tape::new();
                let x = tape.constant(vb.volumes);
                let tab = if model.mode().uses_tabular() {
                    Some(tape.constant(data.tabular_batch::<T>(chunk, &stats)?.features))
                } else {
                    None
                };
                let p = model.predict(&mut tape, store, x, tab, Some(dropout_rng))?;
                let labels: Vec<T> = vb.labels.iter().map(|&l| T::lit(f64::from(l))).collect();
                let loss = tape.bce_loss(p, &labels)?;
                let value = tape.value(loss).item()?.as_f64();
                tape.backward(loss)?;
                Ok((value, tape.param_grads()))
            };
            let (loss, grads) = run(&store, &mut aug_rng, &mut dropout_rng).map_err(|e| diverged(e, epoch, step + 1))?;
            sgd_step(&mut store, &grads, lr, wd).map_err(|e| diverged(e, epoch, step + 1))?;
            loss_sum += loss * chunk.len() as f64;
        }
        let val = predict(model, &store, data, &data.splits.val, &stats, &cfg.augment)?.metrics(cfg.threshold)?;
        let score = val.auroc.unwrap_or(f64::NEG_INFINITY);
        if best_epoch == 0 || score > best_auroc {
            best_auroc = score;
            best_epoch = epoch;
            best = store.clone();
        }
        let rec = EpochRecord { epoch, train_loss: loss_sum / order.len() as f64, val };
        on_epoch(&rec);
        epochs.push(rec);
    }
    let last_test = predict(model, &store, data, &data.splits.test, &stats, &cfg.augment)?;
    let best_test = predict(model, &best, data, &data.splits.test, &stats, &cfg.augment)?;
    Ok(TrainOutcome { last: store, best, best_epoch, epochs, standardizer: stats, last_test, best_test })
}

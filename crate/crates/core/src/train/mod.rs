//! Supervised training with cross-entropy, Adam and a cosine learning-rate
//! schedule, evaluated per fold of a split plan.

mod metrics;
mod optim;

pub use metrics::{binary_auroc, compute_metrics, ovo_auroc, MetricsReport};
pub use optim::{cosine_schedule, Adam};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Fold, SplitPlan};
use crate::error::{ConfigError, Error, Result, TensorError};
use crate::model::{DFast, ModelConfig};
use crate::nn::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Evaluate every this many epochs; the last epoch is always evaluated.
    pub eval_every: usize,
    pub positive_class: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 16,
            lr_start: 1e-4,
            lr_end: 1e-5,
            weight_decay: 1e-4,
            seed: 0,
            eval_every: 1,
            positive_class: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return bad(format!(
                "learning rates must satisfy lr_start >= lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay {} must be non-negative", self.weight_decay));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches; `None` for epoch 0.
    pub train_loss: Option<f64>,
    /// Learning rate at the epoch's last step.
    pub lr: f64,
    pub eval: Option<MetricsReport>,
}

/// What an observer sees after each epoch.
pub struct Progress<'a> {
    pub fold: usize,
    pub epochs: usize,
    pub record: &'a EpochRecord,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

pub struct FoldOutcome {
    pub index: usize,
    pub init_seed: u64,
    pub best_epoch: usize,
    pub report: MetricsReport,
    pub history: Vec<EpochRecord>,
    /// The model as it was at the best epoch.
    pub model: DFast<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(MeanStd { mean, std })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub folds: usize,
    pub accuracy: MeanStd,
    /// Over folds where the metric is defined.
    pub auroc: Option<MeanStd>,
    pub sensitivity: Option<MeanStd>,
    pub specificity: Option<MeanStd>,
    pub best_epochs: Vec<usize>,
}

impl Summary {
    pub fn from_folds(folds: &[FoldOutcome]) -> Option<Summary> {
        let collect = |f: &dyn Fn(&MetricsReport) -> Option<f64>| -> Option<MeanStd> {
            let v: Vec<f64> = folds.iter().filter_map(|o| f(&o.report)).collect();
            MeanStd::of(&v)
        };
        Some(Summary {
            folds: folds.len(),
            accuracy: collect(&|r| Some(r.accuracy))?,
            auroc: collect(&|r| r.auroc),
            sensitivity: collect(&|r| r.sensitivity),
            specificity: collect(&|r| r.specificity),
            best_epochs: folds.iter().map(|f| f.best_epoch).collect(),
        })
    }

    pub fn to_text(&self) -> String {
        let fmt = |m: Option<MeanStd>| m.map_or_else(|| "null".into(), |m| format!("{:.6} +- {:.6}", m.mean, m.std));
        let epochs: Vec<String> = self.best_epochs.iter().map(|e| e.to_string()).collect();
        format!(
            "folds={}\naccuracy={}\nauroc={}\nsensitivity={}\nspecificity={}\nbest_epochs={}\n",
            self.folds,
            fmt(Some(self.accuracy)),
            fmt(self.auroc),
            fmt(self.sensitivity),
            fmt(self.specificity),
            epochs.join(",")
        )
    }
}

pub struct TrainOutcome {
    pub folds: Vec<FoldOutcome>,
    pub summary: Summary,
}

/// Stable per-purpose seed derivation (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_geometry(cfg: &ModelConfig, ds: &Dataset) -> Result<()> {
    let pairs = [
        ("channels", cfg.channels, ds.channels),
        ("timepoints", cfg.timepoints, ds.timepoints),
        ("classes", cfg.classes, ds.classes),
    ];
    for (what, m, d) in pairs {
        if m != d {
            return Err(ConfigError::Invalid(format!("model expects {what} = {m}, the dataset has {d}")).into());
        }
    }
    if cfg.rate != ds.rate {
        return Err(ConfigError::Invalid(format!(
            "model expects a {} Hz sampling rate, the dataset has {} Hz",
            cfg.rate, ds.rate
        ))
        .into());
    }
    Ok(())
}

/// Eval-mode class probabilities for `indices`, row-major `[B, C]`.
pub fn predict(model: &DFast<f32>, ds: &Dataset, indices: &[usize], batch: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(indices.len() * ds.classes);
    for chunk in indices.chunks(batch.max(1)) {
        let (x, _) = ds.batch::<f32>(chunk);
        let p = model.predict_proba(&x)?;
        out.extend(p.data().iter().map(|&v| v as f64));
    }
    Ok(out)
}

pub fn evaluate(
    model: &DFast<f32>,
    ds: &Dataset,
    indices: &[usize],
    batch: usize,
    positive_class: usize,
) -> Result<MetricsReport> {
    let scores = predict(model, ds, indices, batch)?;
    let labels: Vec<usize> = indices.iter().map(|&i| ds.trials()[i].label).collect();
    Ok(compute_metrics(&scores, ds.classes, &labels, positive_class)?)
}

/// One optimizer step on a mini-batch; returns the batch loss.
pub fn train_step(
    model: &mut DFast<f32>,
    adam: &mut Adam,
    ds: &Dataset,
    batch: &[usize],
    lr: f64,
    dropout_seed: u64,
) -> Result<f64> {
    let (x, labels) = ds.batch::<f32>(batch);
    let (loss, grads, stats) = {
        let mut s = model.session(true, dropout_seed);
        let xv = s.input(x);
        let trace = model.forward(&mut s, xv)?;
        let loss = s.tape.cross_entropy(trace.logits, &labels)?;
        let value = s.tape.value(loss).data()[0] as f64;
        let mut g = s.tape.backward(loss)?;
        let grads = s.param_grads(&mut g);
        (value, grads, s.take_batch_stats())
    };
    if !loss.is_finite() {
        return Err(TensorError::InvalidArgument {
            op: "train",
            detail: format!("loss became {loss}"),
        }
        .into());
    }
    let store = model.store_mut();
    store.apply_batch_stats(stats);
    adam.step(store.params_mut(), &grads, lr);
    Ok(loss)
}

/// Trains a fresh model on one fold and keeps the state of the epoch with
/// the highest eval accuracy (earliest on ties).
pub fn train_fold(
    model_cfg: &ModelConfig,
    ds: &Dataset,
    fold: &Fold,
    index: usize,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&Progress<'_>) -> Flow,
) -> Result<FoldOutcome> {
    cfg.validate()?;
    check_geometry(model_cfg, ds)?;
    if fold.train.is_empty() || fold.eval.is_empty() {
        return Err(Error::Config(ConfigError::Invalid(format!("fold {index} has an empty side"))));
    }
    if cfg.positive_class >= ds.classes {
        return Err(ConfigError::Invalid(format!(
            "positive class {} out of range for {} classes",
            cfg.positive_class, ds.classes
        ))
        .into());
    }
    let fold_seed = derive_seed(cfg.seed, index as u64);
    let init_seed = derive_seed(fold_seed, 1);
    let mut model = DFast::<f32>::new(model_cfg.clone(), init_seed)?;
    let mut shuffler = ChaCha8Rng::seed_from_u64(derive_seed(fold_seed, 2));
    let mut dropout = ChaCha8Rng::seed_from_u64(derive_seed(fold_seed, 3));
    let mut adam = Adam::new(cfg.weight_decay);
    let per_epoch = fold.train.len().div_ceil(cfg.batch_size);
    let total = cfg.epochs * per_epoch;
    let mut history = Vec::new();
    let mut best: Option<(usize, MetricsReport, ParamStore<f32>)> = None;
    let mut order = fold.train.clone();
    let mut step = 0;

    if cfg.epochs == 0 {
        let report = evaluate(&model, ds, &fold.eval, cfg.batch_size, cfg.positive_class)?;
        let record = EpochRecord {
            epoch: 0,
            train_loss: None,
            lr: cfg.lr_start,
            eval: Some(report.clone()),
        };
        observer(&Progress {
            fold: index,
            epochs: 0,
            record: &record,
        });
        history.push(record);
        best = Some((0, report, model.store().clone()));
    }

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffler);
        let mut loss_sum = 0.0;
        let mut lr = cfg.lr_start;
        for chunk in order.chunks(cfg.batch_size) {
            lr = cosine_schedule(step, total, cfg.lr_start, cfg.lr_end);
            loss_sum += train_step(&mut model, &mut adam, ds, chunk, lr, dropout.next_u64())?;
            step += 1;
        }
        let eval = if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            Some(evaluate(&model, ds, &fold.eval, cfg.batch_size, cfg.positive_class)?)
        } else {
            None
        };
        if let Some(r) = &eval {
            if best.as_ref().is_none_or(|b| r.accuracy > b.1.accuracy) {
                best = Some((epoch, r.clone(), model.store().clone()));
            }
        }
        let record = EpochRecord {
            epoch,
            train_loss: Some(loss_sum / per_epoch as f64),
            lr,
            eval,
        };
        let flow = observer(&Progress {
            fold: index,
            epochs: cfg.epochs,
            record: &record,
        });
        history.push(record);
        if flow == Flow::Stop {
            if best.is_none() {
                let r = evaluate(&model, ds, &fold.eval, cfg.batch_size, cfg.positive_class)?;
                best = Some((epoch, r, model.store().clone()));
            }
            break;
        }
    }

    let (best_epoch, report, store) = best.expect("at least one evaluation ran");
    *model.store_mut() = store;
    Ok(FoldOutcome {
        index,
        init_seed,
        best_epoch,
        report,
        history,
        model,
    })
}

/// Runs every fold in order and summarizes the best-epoch reports.
pub fn train(
    model_cfg: &ModelConfig,
    ds: &Dataset,
    plan: &SplitPlan,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&Progress<'_>) -> Flow,
) -> Result<TrainOutcome> {
    let mut folds = Vec::with_capacity(plan.folds.len());
    for (i, fold) in plan.folds.iter().enumerate() {
        folds.push(train_fold(model_cfg, ds, fold, i, cfg, observer)?);
    }
    let summary = Summary::from_folds(&folds)
        .ok_or_else(|| ConfigError::Invalid("split plan has no folds".into()))?;
    Ok(TrainOutcome { folds, summary })
}

//! Trials, datasets, file formats, the synthetic generator and
//! cross-validation splits.

mod io;
mod split;
mod synth;

pub use io::{load_dataset, save_dataset, write_csv, write_dfsb, Format, DFSB_MAGIC, DFSB_VERSION};
pub use split::{make_splits, Fold, SplitPlan, Strategy};
pub use synth::{synth_generate, Cues, SynthSpec};

use std::collections::BTreeSet;

use crate::error::DataError;
use crate::real::Real;
use crate::tensor::Tensor;

/// One recording: `x` is `[N, T]`, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub x: Tensor<f32>,
    pub label: usize,
    pub subject: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub channels: usize,
    pub timepoints: usize,
    pub classes: usize,
    /// Sampling rate in Hz.
    pub rate: f64,
    trials: Vec<Trial>,
}

impl Dataset {
    /// Checks that every trial matches the declared geometry, holds finite
    /// values and a valid label, and that every class occurs.
    pub fn new(
        name: impl Into<String>,
        channels: usize,
        timepoints: usize,
        classes: usize,
        rate: f64,
        trials: Vec<Trial>,
    ) -> Result<Self, DataError> {
        if channels == 0 || timepoints == 0 || classes == 0 {
            return Err(DataError::Invalid("channels, timepoints and classes must be positive".into()));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(DataError::Invalid(format!("sampling rate {rate} must be positive")));
        }
        let mut seen = vec![false; classes];
        for (i, t) in trials.iter().enumerate() {
            if t.x.shape() != [channels, timepoints] {
                return Err(DataError::Invalid(format!(
                    "trial {i} has shape {:?}, expected [{channels}, {timepoints}]",
                    t.x.shape()
                )));
            }
            if t.label >= classes {
                return Err(DataError::LabelOutOfRange {
                    trial: i,
                    label: t.label,
                    classes,
                });
            }
            if !t.x.all_finite() {
                return Err(DataError::Invalid(format!("trial {i} holds non-finite samples")));
            }
            seen[t.label] = true;
        }
        if let Some(c) = seen.iter().position(|&s| !s) {
            return Err(DataError::Invalid(format!("class {c} has no trials")));
        }
        Ok(Dataset {
            name: name.into(),
            channels,
            timepoints,
            classes,
            rate,
            trials,
        })
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.trials.iter().map(|t| t.label).collect()
    }

    /// Distinct subject ids in ascending order.
    pub fn subjects(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.trials.iter().map(|t| t.subject).collect();
        set.into_iter().collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for t in &self.trials {
            counts[t.label] += 1;
        }
        counts
    }

    /// Stacks the selected trials into a `[B, 1, N, T]` model input.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let per = self.channels * self.timepoints;
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let t = &self.trials[i];
            data.extend(t.x.data().iter().map(|&v| T::lit(v as f64)));
            labels.push(t.label);
        }
        let shape = [indices.len(), 1, self.channels, self.timepoints];
        (Tensor::new(&shape, data).expect("trial sizes checked on construction"), labels)
    }

    /// Mean of the selected trials as a single `[N, T]` signal.
    pub fn average(&self, indices: &[usize]) -> Option<Tensor<f32>> {
        if indices.is_empty() {
            return None;
        }
        let per = self.channels * self.timepoints;
        let mut acc = vec![0f64; per];
        for &i in indices {
            for (a, &v) in acc.iter_mut().zip(self.trials[i].x.data()) {
                *a += v as f64;
            }
        }
        let n = indices.len() as f64;
        let data = acc.into_iter().map(|a| (a / n) as f32).collect();
        Tensor::new(&[self.channels, self.timepoints], data).ok()
    }
}

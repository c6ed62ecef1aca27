//! Leave-one-subject-out and stratified k-fold cross-validation plans.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Loso,
    StratifiedKFold(usize),
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Loso => write!(f, "loso"),
            Strategy::StratifiedKFold(k) => write!(f, "kfold:{k}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = DataError;

    /// Accepts `loso` or `kfold:<k>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("loso") {
            return Ok(Strategy::Loso);
        }
        let k = s
            .strip_prefix("kfold:")
            .and_then(|k| k.parse::<usize>().ok())
            .ok_or_else(|| DataError::Invalid(format!("split {s:?} is neither loso nor kfold:<k>")))?;
        Ok(Strategy::StratifiedKFold(k))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    /// Ascending trial indices.
    pub train: Vec<usize>,
    /// Ascending trial indices.
    pub eval: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub strategy: Strategy,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

fn complement(n: usize, eval: &[usize]) -> Vec<usize> {
    let mut in_eval = vec![false; n];
    for &i in eval {
        in_eval[i] = true;
    }
    (0..n).filter(|&i| !in_eval[i]).collect()
}

/// LOSO folds come in ascending subject order. Stratified folds deal each
/// class's trials round-robin after a seeded shuffle and a stable sort by
/// subject, so both class and subject proportions stay even across folds.
pub fn make_splits(ds: &Dataset, strategy: Strategy, seed: u64) -> Result<SplitPlan, DataError> {
    let n = ds.len();
    let folds = match strategy {
        Strategy::Loso => {
            let subjects = ds.subjects();
            if subjects.len() < 2 {
                return Err(DataError::Invalid(format!(
                    "leave-one-subject-out needs at least 2 subjects, found {}",
                    subjects.len()
                )));
            }
            subjects
                .iter()
                .map(|&s| {
                    let eval: Vec<usize> = (0..n).filter(|&i| ds.trials()[i].subject == s).collect();
                    Fold {
                        train: complement(n, &eval),
                        eval,
                    }
                })
                .collect()
        }
        Strategy::StratifiedKFold(k) => {
            if k < 2 {
                return Err(DataError::Invalid(format!("k-fold needs k >= 2, got {k}")));
            }
            let counts = ds.class_counts();
            let smallest = counts.iter().copied().min().unwrap_or(0);
            if k > smallest {
                return Err(DataError::Invalid(format!(
                    "k = {k} exceeds the smallest class count {smallest}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut evals = vec![Vec::new(); k];
            let mut dealt = 0usize;
            for c in 0..ds.classes {
                let mut members: Vec<usize> = (0..n).filter(|&i| ds.trials()[i].label == c).collect();
                members.shuffle(&mut rng);
                members.sort_by_key(|&i| ds.trials()[i].subject);
                for i in members {
                    evals[dealt % k].push(i);
                    dealt += 1;
                }
            }
            evals
                .into_iter()
                .map(|mut eval| {
                    eval.sort_unstable();
                    Fold {
                        train: complement(n, &eval),
                        eval,
                    }
                })
                .collect()
        }
    };
    Ok(SplitPlan { strategy, seed, folds })
}

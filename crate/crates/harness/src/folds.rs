//! Subject-exclusive k-fold assignment.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Folds {
    pub k: usize,
    pub seed: u64,
    /// Subject ids of each fold.
    pub folds: Vec<Vec<String>>,
}

/// Shuffles the distinct subjects with `seed` and deals them round-robin, so
/// fold sizes differ by at most one and earlier folds get the extras.
pub fn kfold_split(subjects: &[String], k: usize, seed: u64) -> Result<Folds> {
    let set: BTreeSet<&String> = subjects.iter().collect();
    if set.len() != subjects.len() {
        return Err(HarnessError::input("duplicate subject id"));
    }
    if k < 2 || k > subjects.len() {
        return Err(HarnessError::config(format!(
            "cannot split {} subjects into {k} folds",
            subjects.len()
        )));
    }
    let mut order: Vec<String> = set.into_iter().cloned().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, s) in order.into_iter().enumerate() {
        folds[i % k].push(s);
    }
    Ok(Folds { k, seed, folds })
}

impl Folds {
    /// `(train, test)` subject ids for fold `i`.
    pub fn split(&self, i: usize) -> (Vec<String>, Vec<String>) {
        let test = self.folds[i].clone();
        let train = self
            .folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect();
        (train, test)
    }

    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.folds.iter().position(|f| f.iter().any(|s| s == subject))
    }
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::UtilityMatrix;

/// Fold index for every matrix entry, aligned with `UtilityMatrix::entries`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: Vec<usize>,
}

impl FoldAssignment {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.folds {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn members(&self, fold: usize) -> impl Iterator<Item = usize> + '_ {
        self.folds
            .iter()
            .enumerate()
            .filter(move |(_, &f)| f == fold)
            .map(|(pos, _)| pos)
    }
}

/// Randomly partitions the observed entries into `k` folds whose sizes
/// differ by at most one.
///
/// When `stratified`, successes and failures are shuffled separately and
/// dealt round-robin one class after the other, so each fold's success count
/// stays within one entry of its proportional share.
pub fn kfold_split(matrix: &UtilityMatrix, k: usize, seed: u64, stratified: bool) -> Result<FoldAssignment> {
    let n = matrix.len();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} entries into {k} folds"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<usize> = if stratified {
        let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&i| matrix.entries()[i].rating.is_success());
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        pos.into_iter().chain(neg).collect()
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        all
    };
    let mut folds = vec![0; n];
    for (slot, &entry) in order.iter().enumerate() {
        folds[entry] = slot % k;
    }
    Ok(FoldAssignment { k, folds })
}

//! Synthetic block-structured utility matrices for desk-scale evaluation.
//!
//! Pipelines and datasets are dealt into compatibility blocks; a pair
//! succeeds iff both sides share a block. A `density` fraction of cells is
//! observed, and each observed rating is flipped with probability
//! `noise_rate`.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Entry, Rating, UtilityMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_pipelines: usize,
    pub n_datasets: usize,
    pub n_blocks: usize,
    /// Observed fraction of cells, in (0, 1].
    pub density: f64,
    /// Probability of flipping an observed rating, in [0, 0.5).
    pub noise_rate: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// 32 pipelines x 22 datasets with 288 observed cells.
    pub fn desk_scale(n_blocks: usize, noise_rate: f64, seed: u64) -> Self {
        SynthSpec {
            n_pipelines: 32,
            n_datasets: 22,
            n_blocks,
            density: 288.0 / 704.0,
            noise_rate,
            seed,
        }
    }

    pub fn observed_count(&self) -> usize {
        let cells = self.n_pipelines * self.n_datasets;
        ((self.density * cells as f64).round() as usize).clamp(1, cells)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub pipeline_block: Vec<usize>,
    pub dataset_block: Vec<usize>,
}

impl GroundTruth {
    pub fn rating(&self, row: usize, col: usize) -> Rating {
        if self.pipeline_block[row] == self.dataset_block[col] {
            Rating::Success
        } else {
            Rating::Failed
        }
    }
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<(UtilityMatrix, GroundTruth)> {
    if spec.n_pipelines == 0 || spec.n_datasets == 0 || spec.n_blocks == 0 {
        return Err(Error::InvalidArgument(format!(
            "degenerate dimensions {}x{} with {} blocks",
            spec.n_pipelines, spec.n_datasets, spec.n_blocks
        )));
    }
    if !(spec.density > 0.0 && spec.density <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "density must be in (0, 1], got {}",
            spec.density
        )));
    }
    if !(spec.noise_rate >= 0.0 && spec.noise_rate < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "noise rate must be in [0, 0.5), got {}",
            spec.noise_rate
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut deal = |n: usize| {
        let mut blocks: Vec<usize> = (0..n).map(|x| x % spec.n_blocks).collect();
        blocks.shuffle(&mut rng);
        blocks
    };
    let truth = GroundTruth {
        pipeline_block: deal(spec.n_pipelines),
        dataset_block: deal(spec.n_datasets),
    };

    let cells = spec.n_pipelines * spec.n_datasets;
    let mut chosen = index::sample(&mut rng, cells, spec.observed_count()).into_vec();
    chosen.sort_unstable();
    let entries = chosen
        .into_iter()
        .map(|cell| {
            let (row, col) = (cell / spec.n_datasets, cell % spec.n_datasets);
            let mut rating = truth.rating(row, col);
            if rng.gen::<f64>() < spec.noise_rate {
                rating = match rating {
                    Rating::Success => Rating::Failed,
                    Rating::Failed => Rating::Success,
                };
            }
            Entry { row, col, rating }
        })
        .collect();

    let matrix = UtilityMatrix::new(
        (0..spec.n_pipelines).map(|u| format!("pipeline-{u:03}")),
        (0..spec.n_datasets).map(|i| format!("dataset-{i:03}")),
        entries,
    )?;
    Ok((matrix, truth))
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::kfold_split;
use super::roc::{auc, default_thresholds, roc_curve, RocPoint};
use super::survey::{ConfidenceComparison, ExpertBaseline};
use crate::error::{Error, Result};
use crate::factorization::{als_fit, predict_raw, TrainConfig};
use crate::io::RunMetadata;
use crate::matrix::{Rating, UtilityMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub k_folds: usize,
    /// Seed of the fold split; training uses `TrainConfig::seed`.
    pub seed: u64,
    pub stratified: bool,
    /// Sweep thresholds; `None` means every held-out score plus ±∞.
    pub thresholds: Option<Vec<f64>>,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            k_folds: 10,
            seed: 0,
            stratified: true,
            thresholds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutScore {
    pub pipeline_id: String,
    pub dataset_id: String,
    pub fold: usize,
    pub label: Rating,
    pub score: f64,
    pub cold_start: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub cold_start: usize,
    pub iterations: usize,
    pub final_objective: f64,
    /// `None` when the held-out fold contains a single class.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_entries: usize,
    pub n_pipelines: usize,
    pub n_datasets: usize,
    pub options: CvOptions,
    pub train_config: TrainConfig,
    /// Fold of every matrix entry, in entry order.
    pub fold_assignments: Vec<usize>,
    pub folds: Vec<FoldSummary>,
    pub per_fold_auc: Vec<Option<f64>>,
    pub cold_start_count: usize,
    pub scores: Vec<HeldOutScore>,
    pub roc: Vec<RocPoint>,
    pub auc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<ExpertBaseline>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<ConfidenceComparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunMetadata>,
}

impl EvaluationReport {
    /// Mean of the defined per-fold AUCs.
    pub fn mean_fold_auc(&self) -> Option<f64> {
        let defined: Vec<f64> = self.per_fold_auc.iter().flatten().copied().collect();
        if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        }
    }
}

/// k-fold cross validation at entry level.
///
/// Each fold is held out in turn, the model is fitted on the remaining
/// entries (same index maps, so held-out rows may become cold-start), and
/// every held-out entry is scored. The ROC and AUC are computed over the
/// pooled held-out scores; per-fold AUCs are reported alongside.
pub fn cross_validate(
    matrix: &UtilityMatrix,
    train_config: &TrainConfig,
    options: &CvOptions,
) -> Result<EvaluationReport> {
    train_config.validate()?;
    if let Some(t) = &options.thresholds {
        if t.is_empty() {
            return Err(Error::InvalidArgument("empty threshold list".into()));
        }
    }
    let split = kfold_split(matrix, options.k_folds, options.seed, options.stratified)?;

    let per_fold: Vec<(FoldSummary, Vec<HeldOutScore>)> = (0..split.k)
        .into_par_iter()
        .map(|fold| {
            let train = matrix.subset(|pos, _| split.folds[pos] != fold);
            let model = als_fit(&train, train_config)?;
            let mut scored = Vec::new();
            for pos in split.members(fold) {
                let e = matrix.entries()[pos];
                let pred = predict_raw(&model, e.row, e.col)?;
                scored.push(HeldOutScore {
                    pipeline_id: matrix.pipeline_id(e.row).unwrap_or_default().to_string(),
                    dataset_id: matrix.dataset_id(e.col).unwrap_or_default().to_string(),
                    fold,
                    label: e.rating,
                    score: pred.score,
                    cold_start: pred.cold_start,
                });
            }
            let pairs: Vec<(f64, Rating)> = scored.iter().map(|s| (s.score, s.label)).collect();
            let fold_auc = match roc_curve(&pairs, &default_thresholds(pairs.iter().map(|p| p.0))) {
                Ok(points) => Some(auc(&points)?),
                Err(Error::SingleClass(_)) => None,
                Err(e) => return Err(e),
            };
            let summary = FoldSummary {
                fold,
                n_train: train.len(),
                n_test: scored.len(),
                cold_start: scored.iter().filter(|s| s.cold_start).count(),
                iterations: model.iterations,
                final_objective: model.final_objective().unwrap_or(f64::NAN),
                auc: fold_auc,
            };
            Ok((summary, scored))
        })
        .collect::<Result<_>>()?;

    let mut folds = Vec::with_capacity(split.k);
    let mut scores = Vec::with_capacity(matrix.len());
    for (summary, scored) in per_fold {
        folds.push(summary);
        scores.extend(scored);
    }
    let pooled: Vec<(f64, Rating)> = scores.iter().map(|s| (s.score, s.label)).collect();
    let thresholds = match &options.thresholds {
        Some(t) => t.clone(),
        None => default_thresholds(pooled.iter().map(|p| p.0)),
    };
    let roc = roc_curve(&pooled, &thresholds)?;
    let auc = auc(&roc)?;

    Ok(EvaluationReport {
        n_entries: matrix.len(),
        n_pipelines: matrix.n_pipelines(),
        n_datasets: matrix.n_datasets(),
        options: options.clone(),
        train_config: train_config.clone(),
        fold_assignments: split.folds,
        per_fold_auc: folds.iter().map(|f| f.auc).collect(),
        cold_start_count: folds.iter().map(|f| f.cold_start).sum(),
        folds,
        scores,
        roc,
        auc,
        baseline: None,
        confidence: None,
        run: None,
    })
}

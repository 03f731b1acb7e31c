//! Binary outcome prediction and ranked recommendations from a fitted model.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::factorization::{predict_raw, FactorModel};
use crate::io::fmt_f64;
use crate::matrix::Rating;

/// Rounds a raw score to an outcome: success iff `score >= threshold`.
pub fn classify(score: f64, threshold: f64) -> Result<Rating> {
    if !score.is_finite() {
        return Err(Error::NonFinite(format!("score {score}")));
    }
    if threshold.is_nan() {
        return Err(Error::NonFinite("threshold is NaN".into()));
    }
    Ok(if score >= threshold {
        Rating::Success
    } else {
        Rating::Failed
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recommendation {
    pub subject_id: String,
    pub score: f64,
    pub predicted_outcome: Rating,
    pub cold_start: bool,
}

/// Pipelines predicted to run on `dataset_id`, best first.
pub fn recommend_pipelines(
    model: &FactorModel,
    dataset_id: &str,
    top_n: usize,
    threshold: f64,
) -> Result<Vec<Recommendation>> {
    let col = model.dataset_index(dataset_id).ok_or_else(|| Error::UnknownId {
        kind: "dataset",
        id: dataset_id.to_string(),
    })?;
    rank(
        (0..model.n_pipelines()).map(|u| (u, predict_raw(model, u, col))),
        &model.pipelines,
        top_n,
        threshold,
    )
}

/// Datasets that `pipeline_id` is predicted to process, best first.
pub fn recommend_datasets(
    model: &FactorModel,
    pipeline_id: &str,
    top_n: usize,
    threshold: f64,
) -> Result<Vec<Recommendation>> {
    let row = model.pipeline_index(pipeline_id).ok_or_else(|| Error::UnknownId {
        kind: "pipeline",
        id: pipeline_id.to_string(),
    })?;
    rank(
        (0..model.n_datasets()).map(|i| (i, predict_raw(model, row, i))),
        &model.datasets,
        top_n,
        threshold,
    )
}

fn rank<I>(scored: I, ids: &[String], top_n: usize, threshold: f64) -> Result<Vec<Recommendation>>
where
    I: Iterator<Item = (usize, Result<crate::factorization::Prediction>)>,
{
    if threshold.is_nan() {
        return Err(Error::NonFinite("threshold is NaN".into()));
    }
    let mut kept = Vec::new();
    for (idx, pred) in scored {
        let pred = pred?;
        if classify(pred.score, threshold)? == Rating::Success {
            kept.push((idx, pred));
        }
    }
    // descending score, ascending index on ties
    kept.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0)));
    kept.truncate(top_n);
    Ok(kept
        .into_iter()
        .map(|(idx, pred)| Recommendation {
            subject_id: ids[idx].clone(),
            score: pred.score,
            predicted_outcome: Rating::Success,
            cold_start: pred.cold_start,
        })
        .collect())
}

/// `rank,subject_id,score,predicted_outcome,cold_start`, rank starting at 1.
pub fn write_recommendations<W: Write>(writer: W, recs: &[Recommendation]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::parse("recommendations", e.to_string());
    wtr.write_record(["rank", "subject_id", "score", "predicted_outcome", "cold_start"])
        .map_err(csv_err)?;
    for (n, r) in recs.iter().enumerate() {
        wtr.write_record([
            (n + 1).to_string(),
            r.subject_id.clone(),
            fmt_f64(r.score),
            r.predicted_outcome.to_string(),
            r.cold_start.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

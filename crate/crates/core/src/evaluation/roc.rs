//! Threshold-sweep ROC curves and trapezoidal AUC. Both the model and the
//! expert baseline go through these two functions.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::matrix::Rating;
use crate::recommend::classify;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    #[serde(with = "extended_f64")]
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// JSON has no infinities; the ±∞ sentinel thresholds are written as the
/// strings "inf" / "-inf".
mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&crate::io::fmt_f64(*x))
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => crate::io::parse_f64(&t)
                .ok_or_else(|| de::Error::custom(format!("bad threshold {t:?}"))),
        }
    }
}

/// Every distinct score plus ±∞, which yields the exact empirical ROC.
pub fn default_thresholds(scores: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut t: Vec<f64> = scores.into_iter().filter(|s| !s.is_nan()).collect();
    t.push(f64::INFINITY);
    t.push(f64::NEG_INFINITY);
    t.sort_by(|a, b| b.total_cmp(a));
    t.dedup();
    t
}

/// One confusion-matrix point per threshold (success predicted iff
/// `score >= threshold`), sorted by ascending fpr then tpr. Positives are
/// entries rated [`Rating::Success`].
pub fn roc_curve(scored: &[(f64, Rating)], thresholds: &[f64]) -> Result<Vec<RocPoint>> {
    let positives = scored.iter().filter(|(_, r)| r.is_success()).count();
    let negatives = scored.len() - positives;
    if positives == 0 {
        return Err(Error::SingleClass("positive (success)"));
    }
    if negatives == 0 {
        return Err(Error::SingleClass("negative (failure)"));
    }
    if thresholds.is_empty() {
        return Err(Error::Empty("no thresholds".into()));
    }

    // sort once by descending score; each threshold is then a prefix
    let mut sorted: Vec<(f64, Rating)> = scored.to_vec();
    for (s, _) in &sorted {
        if !s.is_finite() {
            return Err(Error::NonFinite(format!("score {s}")));
        }
    }
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut cum_tp = Vec::with_capacity(sorted.len() + 1);
    cum_tp.push(0usize);
    for (_, r) in &sorted {
        cum_tp.push(cum_tp.last().unwrap() + usize::from(r.is_success()));
    }

    let mut points = Vec::with_capacity(thresholds.len());
    for &tau in thresholds {
        if tau.is_nan() {
            return Err(Error::NonFinite("threshold is NaN".into()));
        }
        // number of leading entries classified as success
        let predicted = sorted.partition_point(|&(s, _)| {
            classify(s, tau).map(|r| r.is_success()).unwrap_or(false)
        });
        let tp = cum_tp[predicted];
        let fp = predicted - tp;
        points.push(RocPoint {
            threshold: tau,
            tpr: tp as f64 / positives as f64,
            fpr: fp as f64 / negatives as f64,
            tp,
            fp,
            tn: negatives - fp,
            fn_: positives - tp,
        });
    }
    points.sort_by(|a, b| {
        a.fpr
            .total_cmp(&b.fpr)
            .then(a.tpr.total_cmp(&b.tpr))
            .then(b.threshold.total_cmp(&a.threshold))
    });
    Ok(points)
}

/// Trapezoidal area under an ROC curve. (0,0) and (1,1) are added when
/// missing.
pub fn auc(points: &[RocPoint]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Empty("no ROC points".into()));
    }
    let mut xy: Vec<(f64, f64)> = Vec::with_capacity(points.len() + 2);
    for p in points {
        if !p.fpr.is_finite() || !p.tpr.is_finite() {
            return Err(Error::NonFinite("ROC rates".into()));
        }
        xy.push((p.fpr, p.tpr));
    }
    if !xy.contains(&(0.0, 0.0)) {
        xy.push((0.0, 0.0));
    }
    if !xy.contains(&(1.0, 1.0)) {
        xy.push((1.0, 1.0));
    }
    xy.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    if xy.len() < 2 {
        return Err(Error::Empty("fewer than two ROC points".into()));
    }
    Ok(xy
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum())
}

/// `threshold,fpr,tpr,tp,fp,tn,fn`
pub fn write_roc<W: Write>(writer: W, points: &[RocPoint]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::parse("roc", e.to_string());
    wtr.write_record(["threshold", "fpr", "tpr", "tp", "fp", "tn", "fn"])
        .map_err(csv_err)?;
    for p in points {
        wtr.write_record([
            fmt_f64(p.threshold),
            fmt_f64(p.fpr),
            fmt_f64(p.tpr),
            p.tp.to_string(),
            p.fp.to_string(),
            p.tn.to_string(),
            p.fn_.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

//! Expert survey baseline: vote fractions as a predictor, and a comparison
//! of expert confidence between executions that succeeded and failed.

use std::io::Read;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::roc::{auc, default_thresholds, roc_curve, RocPoint};
use crate::error::{Error, Result};
use crate::matrix::{Rating, UtilityMatrix};

/// Self-assessed knowledge of a pipeline/dataset pair, encoded 0-3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    None = 0,
    Some = 1,
    Good = 2,
    Expert = 3,
}

impl Confidence {
    pub fn level(self) -> u8 {
        self as u8
    }

    /// Only good or expert knowledge comes with an outcome prediction.
    pub fn allows_prediction(self) -> bool {
        self >= Confidence::Good
    }

    pub fn parse(s: &str) -> Option<Confidence> {
        match s.trim().to_ascii_lowercase().as_str() {
            "0" | "none" => Some(Confidence::None),
            "1" | "some" => Some(Confidence::Some),
            "2" | "good" => Some(Confidence::Good),
            "3" | "expert" => Some(Confidence::Expert),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub expert_id: String,
    /// `None` when the expert did not predict (confidence below good).
    pub prediction: Option<Rating>,
    pub confidence: Confidence,
}

impl Vote {
    pub fn new(expert_id: impl Into<String>, prediction: Option<Rating>, confidence: Confidence) -> Result<Self> {
        if prediction.is_some() && !confidence.allows_prediction() {
            return Err(Error::InvalidArgument(format!(
                "prediction given with confidence {:?}",
                confidence
            )));
        }
        Ok(Vote {
            expert_id: expert_id.into(),
            prediction,
            confidence,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExpertSurvey {
    votes: IndexMap<(String, String), Vec<Vote>>,
}

impl ExpertSurvey {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, pipeline_id: impl Into<String>, dataset_id: impl Into<String>, vote: Vote) {
        self.votes
            .entry((pipeline_id.into(), dataset_id.into()))
            .or_default()
            .push(vote);
    }

    pub fn votes(&self, pipeline_id: &str, dataset_id: &str) -> &[Vote] {
        self.votes
            .get(&(pipeline_id.to_string(), dataset_id.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Pairs in order of first appearance.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str, &[Vote])> + '_ {
        self.votes
            .iter()
            .map(|((p, d), v)| (p.as_str(), d.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.votes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.votes.is_empty()
    }
}

/// Reads `pipeline_id,dataset_id,expert_id,prediction,confidence` rows.
/// `prediction` is `success`, `failure`, or empty; `confidence` is 0-3 or
/// one of none/some/good/expert.
pub fn parse_survey<R: Read>(reader: R) -> Result<ExpertSurvey> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse("survey", e.to_string()))?
        .clone();
    let expected = ["pipeline_id", "dataset_id", "expert_id", "prediction", "confidence"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::parse(
            "survey",
            format!("expected header `{}`", expected.join(",")),
        ));
    }
    let mut survey = ExpertSurvey::new();
    for (idx, rec) in rdr.records().enumerate() {
        let ctx = format!("survey row {}", idx + 2);
        let rec = rec.map_err(|e| Error::parse(&ctx, e.to_string()))?;
        if rec[0].is_empty() || rec[1].is_empty() {
            return Err(Error::parse(&ctx, "empty pipeline or dataset id"));
        }
        let prediction = match rec[3].to_ascii_lowercase().as_str() {
            "success" | "2" => Some(Rating::Success),
            "failure" | "1" => Some(Rating::Failed),
            "" => None,
            other => return Err(Error::parse(&ctx, format!("bad prediction {other:?}"))),
        };
        let confidence = Confidence::parse(&rec[4])
            .ok_or_else(|| Error::parse(&ctx, format!("bad confidence {:?}", &rec[4])))?;
        let vote = Vote::new(&rec[2], prediction, confidence).map_err(|e| Error::parse(&ctx, e.to_string()))?;
        survey.add(&rec[0], &rec[1], vote);
    }
    Ok(survey)
}

pub fn read_survey(path: &Path) -> Result<ExpertSurvey> {
    parse_survey(crate::io::open(path)?).map_err(|e| match e {
        Error::Parse { context, message } => Error::Parse {
            context: format!("{}: {context}", path.display()),
            message,
        },
        other => other,
    })
}

/// Share of predicting experts who expect success; `None` without
/// predictions.
pub fn expert_fraction(survey: &ExpertSurvey, pipeline_id: &str, dataset_id: &str) -> Option<f64> {
    fraction_of(survey.votes(pipeline_id, dataset_id))
}

fn fraction_of(votes: &[Vote]) -> Option<f64> {
    let predictions: Vec<Rating> = votes.iter().filter_map(|v| v.prediction).collect();
    if predictions.is_empty() {
        return None;
    }
    let wins = predictions.iter().filter(|r| r.is_success()).count();
    Some(wins as f64 / predictions.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertBaseline {
    pub n_pairs: usize,
    pub roc: Vec<RocPoint>,
    pub auc: f64,
}

/// (fraction, actual outcome) for pairs that were both voted on and executed.
pub fn expert_scores(survey: &ExpertSurvey, matrix: &UtilityMatrix) -> Vec<(f64, Rating)> {
    survey
        .pairs()
        .filter_map(|(p, d, votes)| Some((fraction_of(votes)?, matrix.get_by_id(p, d)?)))
        .collect()
}

/// ROC of the vote-fraction predictor against actual outcomes. Without
/// explicit thresholds every distinct fraction (plus ±∞) is used.
pub fn expert_roc(
    survey: &ExpertSurvey,
    matrix: &UtilityMatrix,
    thresholds: Option<&[f64]>,
) -> Result<ExpertBaseline> {
    let scored = expert_scores(survey, matrix);
    if scored.is_empty() {
        return Err(Error::Empty(
            "no pair has both expert predictions and an observed outcome".into(),
        ));
    }
    let owned;
    let thresholds = match thresholds {
        Some(t) => t,
        None => {
            owned = default_thresholds(scored.iter().map(|s| s.0));
            &owned
        }
    };
    let roc = roc_curve(&scored, thresholds)?;
    let auc = auc(&roc)?;
    Ok(ExpertBaseline {
        n_pairs: scored.len(),
        roc,
        auc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub z: f64,
    /// Two-sided, normal approximation with tie correction.
    pub p_value: f64,
}

/// Two-sided Mann–Whitney U test (normal approximation, tie-corrected
/// variance, no continuity correction).
pub fn mann_whitney_u(first: &[f64], second: &[f64]) -> Result<MannWhitney> {
    let (n1, n2) = (first.len(), second.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::Empty("Mann-Whitney needs two nonempty samples".into()));
    }
    if first.iter().chain(second).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("Mann-Whitney sample".into()));
    }
    let mut all: Vec<(f64, bool)> = first
        .iter()
        .map(|&x| (x, true))
        .chain(second.iter().map(|&x| (x, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = all.len();
    let mut rank_sum = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        rank_sum += all[i..=j].iter().filter(|x| x.1).count() as f64 * mid;
        i = j + 1;
    }
    let (n1f, n2f, nf) = (n1 as f64, n2 as f64, n as f64);
    let u = rank_sum - n1f * (n1f + 1.0) / 2.0;
    let mean = n1f * n2f / 2.0;
    let var = if n > 1 {
        n1f * n2f / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)))
    } else {
        0.0
    };
    if var <= 0.0 {
        return Ok(MannWhitney { u, z: 0.0, p_value: 1.0 });
    }
    let z = (u - mean) / var.sqrt();
    let p_value = erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0);
    Ok(MannWhitney { u, z, p_value })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceComparison {
    pub n_success: usize,
    pub n_failure: usize,
    pub mean_conf_success: f64,
    pub mean_conf_failure: f64,
    /// U of the successful-execution group.
    pub u_statistic: f64,
    pub p_value: f64,
}

/// Compares per-pair mean expert confidence between pairs whose execution
/// succeeded and pairs whose execution failed.
pub fn confidence_comparison(survey: &ExpertSurvey, matrix: &UtilityMatrix) -> Result<ConfidenceComparison> {
    let mut success = Vec::new();
    let mut failure = Vec::new();
    for (p, d, votes) in survey.pairs() {
        if votes.is_empty() {
            continue;
        }
        let Some(outcome) = matrix.get_by_id(p, d) else {
            continue;
        };
        let mean = votes.iter().map(|v| f64::from(v.confidence.level())).sum::<f64>() / votes.len() as f64;
        match outcome {
            Rating::Success => success.push(mean),
            Rating::Failed => failure.push(mean),
        }
    }
    if success.is_empty() {
        return Err(Error::SingleClass("successful executed pairs with votes"));
    }
    if failure.is_empty() {
        return Err(Error::SingleClass("failed executed pairs with votes"));
    }
    let test = mann_whitney_u(&success, &failure)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ConfidenceComparison {
        n_success: success.len(),
        n_failure: failure.len(),
        mean_conf_success: mean(&success),
        mean_conf_failure: mean(&failure),
        u_statistic: test.u,
        p_value: test.p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{aggregate, ConflictPolicy};
    use crate::provenance::ExecutionTriplet;

    fn vote(e: &str, pred: Option<Rating>, c: Confidence) -> Vote {
        Vote::new(e, pred, c).unwrap()
    }

    #[test]
    fn fraction_cases() {
        let mut s = ExpertSurvey::new();
        s.add("p", "d", vote("a", Some(Rating::Success), Confidence::Good));
        s.add("p", "d", vote("b", Some(Rating::Success), Confidence::Expert));
        s.add("p", "d", vote("c", Some(Rating::Failed), Confidence::Good));
        s.add("p", "d", vote("e", None, Confidence::Some));
        assert_eq!(expert_fraction(&s, "p", "d"), Some(2.0 / 3.0));
        assert_eq!(expert_fraction(&s, "p", "x"), None);
        s.add("q", "d", vote("a", None, Confidence::None));
        assert_eq!(expert_fraction(&s, "q", "d"), None);
    }

    #[test]
    fn prediction_requires_confidence() {
        assert!(Vote::new("a", Some(Rating::Success), Confidence::Some).is_err());
        let csv = "pipeline_id,dataset_id,expert_id,prediction,confidence\np,d,a,success,1\n";
        assert!(parse_survey(csv.as_bytes()).is_err());
    }

    #[test]
    fn parse_fixture() {
        let csv = "pipeline_id,dataset_id,expert_id,prediction,confidence\n\
                   p1,d1,e1,success,3\n\
                   p1,d1,e2,failure,good\n\
                   p2,d1,e1,,none\n";
        let s = parse_survey(csv.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(expert_fraction(&s, "p1", "d1"), Some(0.5));
        assert_eq!(s.votes("p2", "d1")[0].confidence, Confidence::None);
    }

    #[test]
    fn mann_whitney_hand_example() {
        // a = {1,2}, b = {3,4}: U_a = 0, var = 2*2*5/12
        let t = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(t.u, 0.0);
        let z = (0.0 - 2.0) / (20.0f64 / 12.0).sqrt();
        assert!((t.z - z).abs() < 1e-12);
    }

    #[test]
    fn identical_values_give_p_one() {
        let t = mann_whitney_u(&[2.0; 5], &[2.0; 7]).unwrap();
        assert_eq!(t.p_value, 1.0);
    }

    #[test]
    fn swap_negates_direction() {
        let a = [1.0, 2.0, 2.0, 3.0, 2.5];
        let b = [2.0, 3.0, 3.0, 3.0];
        let ab = mann_whitney_u(&a, &b).unwrap();
        let ba = mann_whitney_u(&b, &a).unwrap();
        assert!((ab.u + ba.u - (a.len() * b.len()) as f64).abs() < 1e-12);
        assert!((ab.z + ba.z).abs() < 1e-12);
        assert!((ab.p_value - ba.p_value).abs() < 1e-15);
    }

    #[test]
    fn expert_roc_perfect_agreement() {
        let triplets: Vec<ExecutionTriplet> = (0..6)
            .map(|i| {
                let r = if i % 2 == 0 { Rating::Success } else { Rating::Failed };
                ExecutionTriplet::new(format!("p{i}"), "d", r)
            })
            .collect();
        let m = aggregate(&triplets, ConflictPolicy::AnySuccess).unwrap();
        let mut s = ExpertSurvey::new();
        for t in &triplets {
            s.add(&t.pipeline_id, "d", vote("e", Some(t.outcome), Confidence::Good));
        }
        let b = expert_roc(&s, &m, None).unwrap();
        assert_eq!(b.n_pairs, 6);
        assert_eq!(b.auc, 1.0);
    }

    #[test]
    fn expert_roc_empty_intersection() {
        let m = aggregate(&[ExecutionTriplet::new("p", "d", Rating::Success)], ConflictPolicy::AnySuccess).unwrap();
        let mut s = ExpertSurvey::new();
        s.add("other", "d", vote("e", Some(Rating::Success), Confidence::Good));
        assert!(matches!(expert_roc(&s, &m, None), Err(Error::Empty(_))));
    }

    #[test]
    fn confidence_comparison_needs_both_classes() {
        let m = aggregate(&[ExecutionTriplet::new("p", "d", Rating::Success)], ConflictPolicy::AnySuccess).unwrap();
        let mut s = ExpertSurvey::new();
        s.add("p", "d", vote("e", Some(Rating::Success), Confidence::Good));
        assert!(matches!(confidence_comparison(&s, &m), Err(Error::SingleClass(_))));
    }
}

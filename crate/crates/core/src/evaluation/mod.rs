//! Cross validation, ROC/AUC, the expert-survey baseline, and synthetic
//! matrices for desk-scale checks.

pub mod cv;
pub mod folds;
pub mod roc;
pub mod survey;
pub mod synth;

pub use cv::{cross_validate, CvOptions, EvaluationReport};
pub use folds::{kfold_split, FoldAssignment};
pub use roc::{auc, default_thresholds, roc_curve, RocPoint};
pub use survey::{
    confidence_comparison, expert_fraction, expert_roc, ConfidenceComparison, ExpertBaseline,
    ExpertSurvey,
};
pub use synth::{generate_synthetic, GroundTruth, SynthSpec};

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod factorization;
pub mod io;
pub mod linalg;
pub mod matrix;
pub mod provenance;
pub mod recommend;

pub use error::{Error, Result};
pub use factorization::{als_fit, objective, predict_raw, FactorModel, TrainConfig};
pub use matrix::{aggregate, density, ConflictPolicy, Rating, UtilityMatrix};
pub use provenance::{
    attribute_dataset, parse_manifests, parse_records, to_triplets, DatasetManifest,
    ExecutionTriplet, ProvenanceRecord, TiePolicy,
};
pub use recommend::{classify, recommend_datasets, recommend_pipelines, Recommendation};

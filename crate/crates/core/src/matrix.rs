//! Sparse pipeline x dataset utility matrix.
//!
//! Rows are pipelines, columns are datasets, and each observed cell holds an
//! execution outcome on the 1 (failed) / 2 (succeeded) scale. Row and column
//! indices follow first appearance in the source triplets and are persisted
//! with the matrix so factor rows stay aligned across save/load.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, RunMetadata};
use crate::provenance::ExecutionTriplet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Rating {
    Failed = 1,
    Success = 2,
}

impl Rating {
    pub fn value(self) -> u8 {
        self as u8
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.value())
    }

    pub fn is_success(self) -> bool {
        self == Rating::Success
    }

    pub fn parse(s: &str) -> Option<Rating> {
        match s.trim() {
            "1" => Some(Rating::Failed),
            "2" => Some(Rating::Success),
            _ => None,
        }
    }
}

impl From<Rating> for u8 {
    fn from(r: Rating) -> u8 {
        r.value()
    }
}

impl TryFrom<u8> for Rating {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Rating::Failed),
            2 => Ok(Rating::Success),
            other => Err(format!("rating must be 1 or 2, got {other}")),
        }
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

/// One observed cell of the utility matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub row: usize,
    pub col: usize,
    pub rating: Rating,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtilityMatrix {
    pipelines: IndexSet<String>,
    datasets: IndexSet<String>,
    /// Unique per (row, col), kept in order of first appearance.
    entries: Vec<Entry>,
    cells: HashMap<(usize, usize), usize>,
}

impl UtilityMatrix {
    pub fn new<P, D>(pipelines: P, datasets: D, entries: Vec<Entry>) -> Result<Self>
    where
        P: IntoIterator<Item = String>,
        D: IntoIterator<Item = String>,
    {
        let pipelines = unique_ids(pipelines, "pipeline")?;
        let datasets = unique_ids(datasets, "dataset")?;
        let mut cells = HashMap::with_capacity(entries.len());
        for (pos, e) in entries.iter().enumerate() {
            if e.row >= pipelines.len() {
                return Err(Error::OutOfRange {
                    kind: "pipeline",
                    index: e.row,
                    size: pipelines.len(),
                });
            }
            if e.col >= datasets.len() {
                return Err(Error::OutOfRange {
                    kind: "dataset",
                    index: e.col,
                    size: datasets.len(),
                });
            }
            if cells.insert((e.row, e.col), pos).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate entry for ({}, {})",
                    pipelines[e.row], datasets[e.col]
                )));
            }
        }
        Ok(UtilityMatrix {
            pipelines,
            datasets,
            entries,
            cells,
        })
    }

    pub fn n_pipelines(&self) -> usize {
        self.pipelines.len()
    }

    pub fn n_datasets(&self) -> usize {
        self.datasets.len()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pipeline_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.pipelines.iter().map(String::as_str)
    }

    pub fn dataset_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.datasets.iter().map(String::as_str)
    }

    pub fn pipeline_id(&self, row: usize) -> Option<&str> {
        self.pipelines.get_index(row).map(String::as_str)
    }

    pub fn dataset_id(&self, col: usize) -> Option<&str> {
        self.datasets.get_index(col).map(String::as_str)
    }

    pub fn pipeline_index(&self, id: &str) -> Option<usize> {
        self.pipelines.get_index_of(id)
    }

    pub fn dataset_index(&self, id: &str) -> Option<usize> {
        self.datasets.get_index_of(id)
    }

    pub fn get(&self, row: usize, col: usize) -> Option<Rating> {
        self.cells.get(&(row, col)).map(|&pos| self.entries[pos].rating)
    }

    pub fn get_by_id(&self, pipeline_id: &str, dataset_id: &str) -> Option<Rating> {
        self.get(self.pipeline_index(pipeline_id)?, self.dataset_index(dataset_id)?)
    }

    /// Observed (col, rating) pairs for every row.
    pub fn rows(&self) -> Vec<Vec<(usize, f64)>> {
        let mut rows = vec![Vec::new(); self.n_pipelines()];
        for e in &self.entries {
            rows[e.row].push((e.col, e.rating.as_f64()));
        }
        rows
    }

    /// Observed (row, rating) pairs for every column.
    pub fn cols(&self) -> Vec<Vec<(usize, f64)>> {
        let mut cols = vec![Vec::new(); self.n_datasets()];
        for e in &self.entries {
            cols[e.col].push((e.row, e.rating.as_f64()));
        }
        cols
    }

    pub fn mean_rating(&self) -> Option<f64> {
        if self.entries.is_empty() {
            return None;
        }
        let sum: f64 = self.entries.iter().map(|e| e.rating.as_f64()).sum();
        Some(sum / self.entries.len() as f64)
    }

    pub fn success_count(&self) -> usize {
        self.entries.iter().filter(|e| e.rating.is_success()).count()
    }

    /// Same index maps, keeping only the entries for which `keep` is true.
    pub fn subset<F: FnMut(usize, &Entry) -> bool>(&self, mut keep: F) -> UtilityMatrix {
        let entries: Vec<Entry> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(pos, e)| keep(*pos, e))
            .map(|(_, e)| *e)
            .collect();
        let cells = entries
            .iter()
            .enumerate()
            .map(|(pos, e)| ((e.row, e.col), pos))
            .collect();
        UtilityMatrix {
            pipelines: self.pipelines.clone(),
            datasets: self.datasets.clone(),
            entries,
            cells,
        }
    }

    pub fn to_triplets(&self) -> Vec<ExecutionTriplet> {
        self.entries
            .iter()
            .map(|e| ExecutionTriplet::new(&self.pipelines[e.row], &self.datasets[e.col], e.rating))
            .collect()
    }

    pub(crate) fn pipeline_index_vec(&self) -> Vec<String> {
        self.pipelines.iter().cloned().collect()
    }

    pub(crate) fn dataset_index_vec(&self) -> Vec<String> {
        self.datasets.iter().cloned().collect()
    }
}

fn unique_ids<I: IntoIterator<Item = String>>(ids: I, kind: &str) -> Result<IndexSet<String>> {
    let mut set = IndexSet::new();
    for id in ids {
        if id.is_empty() {
            return Err(Error::InvalidArgument(format!("empty {kind} id")));
        }
        if !set.insert(id.clone()) {
            return Err(Error::InvalidArgument(format!("duplicate {kind} id `{id}`")));
        }
    }
    Ok(set)
}

/// How repeated executions of the same pair collapse into one rating.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConflictPolicy {
    /// Success if any execution succeeded.
    #[default]
    AnySuccess,
    /// Most frequent outcome; ties count as failure.
    Majority,
    /// Outcome of the most recent execution. Equal timestamps resolve to the
    /// later triplet in the stream.
    LatestTimestamp,
}

/// Collapses triplets into a utility matrix, one entry per distinct pair.
pub fn aggregate(triplets: &[ExecutionTriplet], policy: ConflictPolicy) -> Result<UtilityMatrix> {
    let mut pipelines: IndexSet<String> = IndexSet::new();
    let mut datasets: IndexSet<String> = IndexSet::new();
    let mut groups: IndexMap<(usize, usize), Vec<&ExecutionTriplet>> = IndexMap::new();
    for t in triplets {
        let (row, _) = pipelines.insert_full(t.pipeline_id.clone());
        let (col, _) = datasets.insert_full(t.dataset_id.clone());
        groups.entry((row, col)).or_default().push(t);
    }

    let mut entries = Vec::with_capacity(groups.len());
    for (&(row, col), group) in &groups {
        let rating = match policy {
            ConflictPolicy::AnySuccess => {
                if group.iter().any(|t| t.outcome.is_success()) {
                    Rating::Success
                } else {
                    Rating::Failed
                }
            }
            ConflictPolicy::Majority => {
                let wins = group.iter().filter(|t| t.outcome.is_success()).count();
                if 2 * wins > group.len() {
                    Rating::Success
                } else {
                    Rating::Failed
                }
            }
            ConflictPolicy::LatestTimestamp => {
                let mut latest: Option<(DateTime<Utc>, Rating)> = None;
                for t in group {
                    let ts = t.timestamp.ok_or_else(|| Error::MissingTimestamp {
                        pipeline_id: t.pipeline_id.clone(),
                        dataset_id: t.dataset_id.clone(),
                    })?;
                    if latest.map_or(true, |(best, _)| ts >= best) {
                        latest = Some((ts, t.outcome));
                    }
                }
                latest.expect("groups are nonempty").1
            }
        };
        entries.push(Entry { row, col, rating });
    }

    UtilityMatrix::new(pipelines, datasets, entries)
}

/// Fraction of observed cells.
pub fn density(matrix: &UtilityMatrix) -> Result<f64> {
    let cells = matrix.n_pipelines() * matrix.n_datasets();
    if cells == 0 {
        return Err(Error::Empty(format!(
            "matrix has dimension {}x{}",
            matrix.n_pipelines(),
            matrix.n_datasets()
        )));
    }
    Ok(matrix.len() as f64 / cells as f64)
}

/// Sidecar written next to a persisted matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub n_pipelines: usize,
    pub n_datasets: usize,
    pub n_entries: usize,
    pub pipelines: Vec<String>,
    pub datasets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunMetadata>,
}

pub fn write_entries<W: Write>(writer: W, matrix: &UtilityMatrix) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::parse("matrix", e.to_string());
    wtr.write_record(["pipeline_id", "dataset_id", "rating"])
        .map_err(csv_err)?;
    for e in matrix.entries() {
        wtr.write_record([
            matrix.pipelines[e.row].as_str(),
            matrix.datasets[e.col].as_str(),
            &e.rating.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads `pipeline_id,dataset_id,rating` rows. Without a header the index
/// order is first appearance; with one, the header order is authoritative.
pub fn parse_entries<R: Read>(reader: R, header: Option<&MatrixHeader>) -> Result<UtilityMatrix> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let cols = rdr
        .headers()
        .map_err(|e| Error::parse("matrix", e.to_string()))?
        .clone();
    if cols.iter().collect::<Vec<_>>() != ["pipeline_id", "dataset_id", "rating"] {
        return Err(Error::parse(
            "matrix",
            format!("expected header `pipeline_id,dataset_id,rating`, found `{}`", cols.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut pipelines: IndexSet<String> = header
        .map(|h| h.pipelines.iter().cloned().collect())
        .unwrap_or_default();
    let mut datasets: IndexSet<String> = header
        .map(|h| h.datasets.iter().cloned().collect())
        .unwrap_or_default();
    let mut entries = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let ctx = format!("matrix row {}", idx + 2);
        let rec = rec.map_err(|e| Error::parse(&ctx, e.to_string()))?;
        let rating = Rating::parse(&rec[2])
            .ok_or_else(|| Error::parse(&ctx, format!("rating must be 1 or 2, got {:?}", &rec[2])))?;
        let (row, col) = if header.is_some() {
            let row = pipelines
                .get_index_of(&rec[0])
                .ok_or_else(|| Error::parse(&ctx, format!("pipeline `{}` not in header", &rec[0])))?;
            let col = datasets
                .get_index_of(&rec[1])
                .ok_or_else(|| Error::parse(&ctx, format!("dataset `{}` not in header", &rec[1])))?;
            (row, col)
        } else {
            (
                pipelines.insert_full(rec[0].to_string()).0,
                datasets.insert_full(rec[1].to_string()).0,
            )
        };
        entries.push(Entry { row, col, rating });
    }
    let matrix = UtilityMatrix::new(pipelines, datasets, entries)
        .map_err(|e| Error::parse("matrix", e.to_string()))?;
    if let Some(h) = header {
        if h.n_entries != matrix.len()
            || h.n_pipelines != matrix.n_pipelines()
            || h.n_datasets != matrix.n_datasets()
        {
            return Err(Error::parse("matrix", "sidecar dimensions disagree with entries"));
        }
    }
    Ok(matrix)
}

pub fn header_for(matrix: &UtilityMatrix, run: Option<RunMetadata>) -> MatrixHeader {
    MatrixHeader {
        n_pipelines: matrix.n_pipelines(),
        n_datasets: matrix.n_datasets(),
        n_entries: matrix.len(),
        pipelines: matrix.pipeline_index_vec(),
        datasets: matrix.dataset_index_vec(),
        run,
    }
}

/// Writes the entries to `path` and the index sidecar to `path.meta.json`.
pub fn save_matrix(path: &Path, matrix: &UtilityMatrix, run: Option<RunMetadata>) -> Result<()> {
    io::write_atomic(path, |w| write_entries(w, matrix))?;
    io::write_json(&io::sidecar_path(path), &header_for(matrix, run))
}

pub fn load_matrix(path: &Path) -> Result<UtilityMatrix> {
    let sidecar = io::sidecar_path(path);
    let header: Option<MatrixHeader> = if sidecar.exists() {
        Some(io::read_json(&sidecar)?)
    } else {
        None
    };
    let reader = io::open(path)?;
    parse_entries(reader, header.as_ref()).map_err(|e| match e {
        Error::Parse { context, message } => Error::Parse {
            context: format!("{}: {context}", path.display()),
            message,
        },
        other => other,
    })
}

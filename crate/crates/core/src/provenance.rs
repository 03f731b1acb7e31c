//! Provenance ingestion: execution records, dataset hash manifests, and
//! attribution of records to datasets by input file hash overlap.
//!
//! Records are read as JSON lines, one object per execution:
//!
//! ```text
//! {"record_id": "r1", "pipeline_id": "doi:10.5281/zenodo.1",
//!  "input_hashes": ["9f86d0..."], "output_hashes": [], "exit_code": 0,
//!  "timestamp": "2021-03-01T12:00:00Z", "parameters_digest": "ab12..."}
//! ```
//!
//! `pipeline_id`, `input_hashes` and `exit_code` are required; the rest are
//! optional. Manifests are CSV with header `dataset_id,hash`.

use std::collections::BTreeSet;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::matrix::Rating;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub record_id: String,
    pub pipeline_id: String,
    pub input_hashes: BTreeSet<String>,
    pub output_hashes: BTreeSet<String>,
    pub exit_code: i64,
    pub timestamp: Option<DateTime<Utc>>,
    pub parameters_digest: Option<String>,
}

impl ProvenanceRecord {
    pub fn new<I, S>(
        record_id: impl Into<String>,
        pipeline_id: impl Into<String>,
        input_hashes: I,
        exit_code: i64,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let record = ProvenanceRecord {
            record_id: record_id.into(),
            pipeline_id: pipeline_id.into(),
            input_hashes: input_hashes.into_iter().map(Into::into).collect(),
            output_hashes: BTreeSet::new(),
            exit_code,
            timestamp: None,
            parameters_digest: None,
        };
        if record.pipeline_id.is_empty() {
            return Err(Error::InvalidArgument("empty pipeline_id".into()));
        }
        if record.input_hashes.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "record {} has no input hashes",
                record.record_id
            )));
        }
        Ok(record)
    }

    pub fn with_timestamp(mut self, ts: DateTime<Utc>) -> Self {
        self.timestamp = Some(ts);
        self
    }

    /// Exit code 0 is success; anything else is a failed execution.
    pub fn outcome(&self) -> Rating {
        if self.exit_code == 0 {
            Rating::Success
        } else {
            Rating::Failed
        }
    }
}

/// A line that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedRecords {
    pub records: Vec<ProvenanceRecord>,
    pub rejects: Vec<RejectedLine>,
}

/// Parses JSON-lines provenance records. Blank lines are ignored; malformed
/// records are collected in `rejects` and never abort the batch.
pub fn parse_records<R: BufRead>(reader: R) -> Result<ParsedRecords> {
    let mut out = ParsedRecords::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match record_from_line(&line, lineno) {
            Ok(rec) => out.records.push(rec),
            Err(reason) => out.rejects.push(RejectedLine {
                line: lineno,
                reason,
            }),
        }
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<ParsedRecords> {
    let reader = crate::io::open(path)?;
    parse_records(reader).map_err(|e| match e {
        Error::Stream(source) => Error::io(path, source),
        other => other,
    })
}

fn record_from_line(line: &str, lineno: usize) -> std::result::Result<ProvenanceRecord, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value
        .as_object()
        .ok_or_else(|| "record is not a JSON object".to_string())?;

    let pipeline_id = match obj.get("pipeline_id") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(Value::String(_)) => return Err("empty pipeline_id".into()),
        Some(_) => return Err("pipeline_id is not a string".into()),
        None => return Err("missing pipeline_id".into()),
    };
    let exit_code = match obj.get("exit_code") {
        Some(v) => v
            .as_i64()
            .ok_or_else(|| "exit_code is not an integer".to_string())?,
        None => return Err("missing exit_code".into()),
    };
    let input_hashes = match obj.get("input_hashes") {
        Some(v) => hash_set(v, "input_hashes")?,
        None => return Err("missing input_hashes".into()),
    };
    if input_hashes.is_empty() {
        return Err("input_hashes is empty".into());
    }
    let output_hashes = match obj.get("output_hashes") {
        Some(Value::Null) | None => BTreeSet::new(),
        Some(v) => hash_set(v, "output_hashes")?,
    };
    let record_id = match obj.get("record_id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(Value::Null) | None => format!("line-{lineno}"),
        Some(_) => return Err("record_id is not a string".into()),
    };
    let timestamp = match obj.get("timestamp") {
        Some(Value::String(s)) => Some(
            DateTime::parse_from_rfc3339(s)
                .map_err(|e| format!("bad timestamp {s:?}: {e}"))?
                .with_timezone(&Utc),
        ),
        Some(Value::Null) | None => None,
        Some(_) => return Err("timestamp is not a string".into()),
    };
    let parameters_digest = match obj.get("parameters_digest") {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Null) | None => None,
        Some(_) => return Err("parameters_digest is not a string".into()),
    };

    Ok(ProvenanceRecord {
        record_id,
        pipeline_id,
        input_hashes,
        output_hashes,
        exit_code,
        timestamp,
        parameters_digest,
    })
}

fn hash_set(v: &Value, field: &str) -> std::result::Result<BTreeSet<String>, String> {
    let arr = v
        .as_array()
        .ok_or_else(|| format!("{field} is not an array"))?;
    arr.iter()
        .map(|h| match h {
            Value::String(s) if !s.is_empty() => Ok(s.clone()),
            _ => Err(format!("{field} contains a non-string or empty entry")),
        })
        .collect()
}

/// Content-hash index of one dataset. Each hash is stored once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub hashes: BTreeSet<String>,
}

impl DatasetManifest {
    pub fn new<I, S>(dataset_id: impl Into<String>, hashes: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let manifest = DatasetManifest {
            dataset_id: dataset_id.into(),
            hashes: hashes.into_iter().map(Into::into).collect(),
        };
        if manifest.dataset_id.is_empty() {
            return Err(Error::InvalidArgument("empty dataset_id".into()));
        }
        if manifest.hashes.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "manifest {} has no hashes",
                manifest.dataset_id
            )));
        }
        Ok(manifest)
    }

    pub fn file_count(&self) -> usize {
        self.hashes.len()
    }

    pub fn overlap(&self, hashes: &BTreeSet<String>) -> usize {
        // iterate the smaller set
        if hashes.len() <= self.hashes.len() {
            hashes.iter().filter(|h| self.hashes.contains(*h)).count()
        } else {
            self.hashes.iter().filter(|h| hashes.contains(*h)).count()
        }
    }
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    dataset_id: String,
    hash: String,
}

/// Parses `dataset_id,hash` rows into manifests, one per dataset, in order of
/// first appearance.
pub fn parse_manifests<R: Read>(reader: R) -> Result<Vec<DatasetManifest>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse("manifest", e.to_string()))?
        .clone();
    if headers.get(0) != Some("dataset_id") || headers.get(1) != Some("hash") {
        return Err(Error::parse(
            "manifest",
            format!("expected header `dataset_id,hash`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut grouped: IndexMap<String, BTreeSet<String>> = IndexMap::new();
    for (idx, row) in rdr.deserialize::<ManifestRow>().enumerate() {
        let row = row.map_err(|e| Error::parse(format!("manifest row {}", idx + 2), e.to_string()))?;
        if row.dataset_id.is_empty() || row.hash.is_empty() {
            return Err(Error::parse(
                format!("manifest row {}", idx + 2),
                "empty dataset_id or hash",
            ));
        }
        grouped.entry(row.dataset_id).or_default().insert(row.hash);
    }
    Ok(grouped
        .into_iter()
        .map(|(dataset_id, hashes)| DatasetManifest { dataset_id, hashes })
        .collect())
}

pub fn read_manifests(path: &Path) -> Result<Vec<DatasetManifest>> {
    let reader = crate::io::open(path)?;
    parse_manifests(reader).map_err(|e| match e {
        Error::Parse { context, message } => Error::Parse {
            context: format!("{}: {context}", path.display()),
            message,
        },
        other => other,
    })
}

/// Result of matching one record's inputs against the manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Attribution {
    Unique { dataset_id: String, overlap: usize },
    /// Several datasets share the maximal overlap; ids sorted ascending.
    Tied {
        dataset_ids: Vec<String>,
        overlap: usize,
    },
    Unattributable,
}

/// Finds the manifest(s) sharing the most hashes with the record's inputs.
pub fn attribute_dataset(
    record: &ProvenanceRecord,
    manifests: &[DatasetManifest],
) -> Result<Attribution> {
    if manifests.is_empty() {
        return Err(Error::Empty("no dataset manifests".into()));
    }
    let mut best = 0usize;
    let mut winners: Vec<&str> = Vec::new();
    for m in manifests {
        let ov = m.overlap(&record.input_hashes);
        if ov == 0 || ov < best {
            continue;
        }
        if ov > best {
            best = ov;
            winners.clear();
        }
        winners.push(&m.dataset_id);
    }
    winners.sort_unstable();
    winners.dedup();
    Ok(match winners.len() {
        0 => Attribution::Unattributable,
        1 => Attribution::Unique {
            dataset_id: winners[0].to_string(),
            overlap: best,
        },
        _ => Attribution::Tied {
            dataset_ids: winners.into_iter().map(str::to_string).collect(),
            overlap: best,
        },
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiePolicy {
    /// One triplet per tied dataset.
    #[default]
    EmitAll,
    /// Tied records produce no triplet.
    EmitNone,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTriplet {
    pub pipeline_id: String,
    pub dataset_id: String,
    pub outcome: Rating,
    pub timestamp: Option<DateTime<Utc>>,
}

impl ExecutionTriplet {
    pub fn new(pipeline_id: impl Into<String>, dataset_id: impl Into<String>, outcome: Rating) -> Self {
        ExecutionTriplet {
            pipeline_id: pipeline_id.into(),
            dataset_id: dataset_id.into(),
            outcome,
            timestamp: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TiedRecord {
    pub record_id: String,
    pub dataset_ids: Vec<String>,
    pub overlap: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub records: usize,
    /// Records that produced at least one triplet.
    pub attributed: usize,
    pub unattributable: usize,
    pub tied: usize,
    /// Lines rejected at parse time (filled in by the caller).
    pub rejected: usize,
    pub triplets: usize,
    pub unattributable_records: Vec<String>,
    pub tied_records: Vec<TiedRecord>,
    pub rejected_lines: Vec<RejectedLine>,
}

/// Attributes every record and emits (pipeline, dataset, outcome) triplets.
pub fn to_triplets(
    records: &[ProvenanceRecord],
    manifests: &[DatasetManifest],
    tie_policy: TiePolicy,
) -> (Vec<ExecutionTriplet>, AttributionReport) {
    let mut report = AttributionReport {
        records: records.len(),
        ..Default::default()
    };
    let mut triplets = Vec::new();
    if manifests.is_empty() {
        report.unattributable = records.len();
        report.unattributable_records = records.iter().map(|r| r.record_id.clone()).collect();
        return (triplets, report);
    }
    for record in records {
        // manifests is nonempty so attribution cannot fail
        let attribution = attribute_dataset(record, manifests).expect("nonempty manifests");
        let targets: Vec<String> = match attribution {
            Attribution::Unique { dataset_id, .. } => vec![dataset_id],
            Attribution::Tied {
                dataset_ids,
                overlap,
            } => {
                report.tied += 1;
                report.tied_records.push(TiedRecord {
                    record_id: record.record_id.clone(),
                    dataset_ids: dataset_ids.clone(),
                    overlap,
                });
                match tie_policy {
                    TiePolicy::EmitAll => dataset_ids,
                    TiePolicy::EmitNone => Vec::new(),
                }
            }
            Attribution::Unattributable => {
                report.unattributable += 1;
                report.unattributable_records.push(record.record_id.clone());
                Vec::new()
            }
        };
        if !targets.is_empty() {
            report.attributed += 1;
        }
        for dataset_id in targets {
            triplets.push(ExecutionTriplet {
                pipeline_id: record.pipeline_id.clone(),
                dataset_id,
                outcome: record.outcome(),
                timestamp: record.timestamp,
            });
        }
    }
    report.triplets = triplets.len();
    (triplets, report)
}

/// Writes `pipeline_id,dataset_id,outcome`; a `timestamp` column is appended
/// only when some triplet carries one.
pub fn write_triplets<W: Write>(writer: W, triplets: &[ExecutionTriplet]) -> Result<()> {
    let with_ts = triplets.iter().any(|t| t.timestamp.is_some());
    let mut wtr = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::parse("triplets", e.to_string());
    if with_ts {
        wtr.write_record(["pipeline_id", "dataset_id", "outcome", "timestamp"])
            .map_err(csv_err)?;
    } else {
        wtr.write_record(["pipeline_id", "dataset_id", "outcome"])
            .map_err(csv_err)?;
    }
    for t in triplets {
        let outcome = t.outcome.value().to_string();
        if with_ts {
            let ts = t
                .timestamp
                .map(|ts| ts.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true))
                .unwrap_or_default();
            wtr.write_record([t.pipeline_id.as_str(), &t.dataset_id, &outcome, &ts])
                .map_err(csv_err)?;
        } else {
            wtr.write_record([t.pipeline_id.as_str(), &t.dataset_id, &outcome])
                .map_err(csv_err)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn parse_triplets<R: Read>(reader: R) -> Result<Vec<ExecutionTriplet>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse("triplets", e.to_string()))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    let has_ts = match cols.as_slice() {
        ["pipeline_id", "dataset_id", "outcome"] => false,
        ["pipeline_id", "dataset_id", "outcome", "timestamp"] => true,
        _ => {
            return Err(Error::parse(
                "triplets",
                format!("unexpected header `{}`", cols.join(",")),
            ))
        }
    };
    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let ctx = format!("triplets row {}", idx + 2);
        let rec = rec.map_err(|e| Error::parse(&ctx, e.to_string()))?;
        let outcome = Rating::parse(&rec[2]).ok_or_else(|| Error::parse(&ctx, format!("bad outcome {:?}", &rec[2])))?;
        let timestamp = if has_ts && !rec[3].is_empty() {
            Some(
                DateTime::parse_from_rfc3339(&rec[3])
                    .map_err(|e| Error::parse(&ctx, e.to_string()))?
                    .with_timezone(&Utc),
            )
        } else {
            None
        };
        if rec[0].is_empty() || rec[1].is_empty() {
            return Err(Error::parse(&ctx, "empty id"));
        }
        out.push(ExecutionTriplet {
            pipeline_id: rec[0].to_string(),
            dataset_id: rec[1].to_string(),
            outcome,
            timestamp,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, inputs: &[&str], exit_code: i64) -> ProvenanceRecord {
        ProvenanceRecord::new(id, "doi:p", inputs.iter().copied(), exit_code).unwrap()
    }

    fn man(id: &str, hashes: &[&str]) -> DatasetManifest {
        DatasetManifest::new(id, hashes.iter().copied()).unwrap()
    }

    #[test]
    fn minimal_record_parses() {
        let input = r#"{"pipeline_id":"doi:x","input_hashes":["aa"],"exit_code":0}"#;
        let parsed = parse_records(input.as_bytes()).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert!(parsed.rejects.is_empty());
        assert_eq!(parsed.records[0].record_id, "line-1");
        assert_eq!(parsed.records[0].outcome(), Rating::Success);
    }

    #[test]
    fn empty_stream() {
        let parsed = parse_records("".as_bytes()).unwrap();
        assert!(parsed.records.is_empty());
        assert!(parsed.rejects.is_empty());
    }

    #[test]
    fn missing_exit_code_is_rejected() {
        let input = concat!(
            r#"{"pipeline_id":"doi:a","input_hashes":["aa"],"exit_code":0}"#,
            "\n",
            r#"{"pipeline_id":"doi:b","input_hashes":["bb"]}"#,
            "\n",
            r#"{"pipeline_id":"doi:c","input_hashes":["cc"],"exit_code":137}"#,
            "\n"
        );
        let parsed = parse_records(input.as_bytes()).unwrap();
        assert_eq!(parsed.records.len(), 2);
        assert_eq!(parsed.rejects.len(), 1);
        assert_eq!(parsed.rejects[0].line, 2);
        assert!(parsed.rejects[0].reason.contains("exit_code"));
    }

    #[test]
    fn reject_reasons() {
        let cases = [
            (r#"{"input_hashes":["a"],"exit_code":0}"#, "pipeline_id"),
            (r#"{"pipeline_id":"p","exit_code":0}"#, "input_hashes"),
            (r#"{"pipeline_id":"p","input_hashes":[],"exit_code":0}"#, "input_hashes"),
            (r#"{"pipeline_id":"p","input_hashes":["a"],"exit_code":"0"}"#, "exit_code"),
            (r#"{"pipeline_id":"p","input_hashes":["a"],"exit_code":0,"timestamp":"yesterday"}"#, "timestamp"),
            ("not json", "JSON"),
            ("[1,2]", "object"),
        ];
        for (line, needle) in cases {
            let parsed = parse_records(line.as_bytes()).unwrap();
            assert_eq!(parsed.records.len(), 0, "{line}");
            assert!(parsed.rejects[0].reason.contains(needle), "{line}: {}", parsed.rejects[0].reason);
        }
    }

    #[test]
    fn full_record_fields() {
        let line = r#"{"record_id":"r9","pipeline_id":"doi:y","input_hashes":["a","b","a"],"output_hashes":["o"],"exit_code":2,"timestamp":"2021-03-01T12:00:00+01:00","parameters_digest":"ff"}"#;
        let r = &parse_records(line.as_bytes()).unwrap().records[0];
        assert_eq!(r.record_id, "r9");
        assert_eq!(r.input_hashes.len(), 2);
        assert_eq!(r.output_hashes.len(), 1);
        assert_eq!(r.outcome(), Rating::Failed);
        assert_eq!(r.timestamp.unwrap().to_rfc3339(), "2021-03-01T11:00:00+00:00");
        assert_eq!(r.parameters_digest.as_deref(), Some("ff"));
    }

    #[test]
    fn manifests_group_and_dedupe() {
        let csv = "dataset_id,hash\nA,h1\nA,h2\nB,h9\nA,h1\n";
        let ms = parse_manifests(csv.as_bytes()).unwrap();
        assert_eq!(ms.len(), 2);
        assert_eq!(ms[0].dataset_id, "A");
        assert_eq!(ms[0].file_count(), 2);
        assert_eq!(ms[1].file_count(), 1);
    }

    #[test]
    fn manifest_bad_header() {
        assert!(parse_manifests("id,h\nA,x\n".as_bytes()).is_err());
    }

    #[test]
    fn unique_match() {
        let ms = [man("A", &["h1", "h2", "h3"]), man("B", &["h9"])];
        let a = attribute_dataset(&rec("r", &["h1", "h2"], 0), &ms).unwrap();
        assert_eq!(
            a,
            Attribution::Unique {
                dataset_id: "A".into(),
                overlap: 2
            }
        );
    }

    #[test]
    fn zero_overlap_is_unattributable() {
        let ms = [man("A", &["h2"]), man("B", &["h3"])];
        let a = attribute_dataset(&rec("r", &["h1"], 0), &ms).unwrap();
        assert_eq!(a, Attribution::Unattributable);
    }

    #[test]
    fn ties_report_all() {
        let ms = [man("B", &["h2"]), man("A", &["h1"])];
        let a = attribute_dataset(&rec("r", &["h1", "h2"], 0), &ms).unwrap();
        assert_eq!(
            a,
            Attribution::Tied {
                dataset_ids: vec!["A".into(), "B".into()],
                overlap: 1
            }
        );
    }

    #[test]
    fn no_manifests_is_error() {
        assert!(attribute_dataset(&rec("r", &["h1"], 0), &[]).is_err());
    }

    #[test]
    fn triplet_outcomes_and_tie_policies() {
        let ms = [man("A", &["h1"]), man("B", &["h2"]), man("D", &["d"])];
        let records = [
            rec("ok", &["d"], 0),
            rec("fail", &["d"], 1),
            rec("tie", &["h1", "h2"], 0),
            rec("none", &["zz"], 0),
        ];
        let (ts, report) = to_triplets(&records, &ms, TiePolicy::EmitAll);
        assert_eq!(ts.len(), 4);
        assert_eq!(ts[0].outcome, Rating::Success);
        assert_eq!(ts[1].outcome, Rating::Failed);
        assert_eq!(report.attributed, 3);
        assert_eq!(report.tied, 1);
        assert_eq!(report.unattributable, 1);
        assert_eq!(report.unattributable_records, vec!["none".to_string()]);
        assert_eq!(report.triplets, 4);

        let (ts, report) = to_triplets(&records, &ms, TiePolicy::EmitNone);
        assert_eq!(ts.len(), 2);
        assert_eq!(report.attributed, 2);
        assert_eq!(report.tied, 1);
    }

    #[test]
    fn triplet_csv_round_trip() {
        let mut ts = vec![
            ExecutionTriplet::new("p1", "d1", Rating::Success),
            ExecutionTriplet::new("p2", "d1", Rating::Failed),
        ];
        let mut buf = Vec::new();
        write_triplets(&mut buf, &ts).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "pipeline_id,dataset_id,outcome\np1,d1,2\np2,d1,1\n"
        );
        assert_eq!(parse_triplets(buf.as_slice()).unwrap(), ts);

        ts[0].timestamp = Some("2020-01-01T00:00:00Z".parse().unwrap());
        let mut buf = Vec::new();
        write_triplets(&mut buf, &ts).unwrap();
        assert_eq!(parse_triplets(buf.as_slice()).unwrap(), ts);
    }
}

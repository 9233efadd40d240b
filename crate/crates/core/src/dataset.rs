//! The per-session feature table: fixed 18-column feature order, missing
//! values, label columns, and the delimiter-separated text representation
//! shared between pipeline stages.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::labeling::{LabelStage, SessionLabel, Verdict};
use crate::semantic_features::SemanticFeatures;
use crate::sessionize::Session;
use crate::simple_features::SimpleFeatures;

/// Canonical feature order: the thirteen simple features, then the five
/// semantic ones. Column indexes are stable; models depend on them.
pub const FEATURE_NAMES: [&str; 18] = [
    "total_requests",
    "session_duration",
    "avg_time",
    "std_time",
    "repeated_requests",
    "http_2xx",
    "http_3xx",
    "http_4xx",
    "http_5xx",
    "pdf_requests",
    "unique_content",
    "multiple_countries",
    "web_service",
    "total_topics",
    "unique_topics",
    "page_similarity",
    "page_variance",
    "boolean_page_variance",
];

pub const SIMPLE_FEATURE_COUNT: usize = 13;
/// Index of page_similarity, the only feature that can be missing.
pub const PAGE_SIMILARITY_INDEX: usize = 15;
/// Imputation constant for a missing page_similarity: a session with no
/// topics behaves like a maximally self-similar one.
pub const MISSING_IMPUTE_VALUE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSet {
    Simple,
    Semantic,
    Both,
}

impl FeatureSet {
    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Simple => "simple",
            FeatureSet::Semantic => "semantic",
            FeatureSet::Both => "both",
        }
    }

    pub fn parse_name(name: &str) -> Option<FeatureSet> {
        match name {
            "simple" => Some(FeatureSet::Simple),
            "semantic" => Some(FeatureSet::Semantic),
            "both" => Some(FeatureSet::Both),
            _ => None,
        }
    }

    pub fn indices(self) -> std::ops::Range<usize> {
        match self {
            FeatureSet::Simple => 0..SIMPLE_FEATURE_COUNT,
            FeatureSet::Semantic => SIMPLE_FEATURE_COUNT..FEATURE_NAMES.len(),
            FeatureSet::Both => 0..FEATURE_NAMES.len(),
        }
    }

    pub fn names(self) -> Vec<String> {
        self.indices().map(|i| FEATURE_NAMES[i].to_string()).collect()
    }
}

/// One row of the feature table: a session with its 18 features and label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub session_id: String,
    /// Unix seconds (UTC) of the session's first request.
    pub start_timestamp: i64,
    pub features: [f64; 18],
    /// Missing-value mask parallel to `features`.
    pub missing: [bool; 18],
    pub label: Verdict,
    pub label_stage: LabelStage,
    pub label_evidence: Option<String>,
}

/// Pack simple and semantic features into the canonical column order.
pub fn feature_vector(
    simple: &SimpleFeatures,
    semantic: &SemanticFeatures,
) -> ([f64; 18], [bool; 18]) {
    let mut features = [0.0f64; 18];
    let mut missing = [false; 18];
    features[0] = simple.total_requests as f64;
    features[1] = simple.session_duration;
    features[2] = simple.avg_time;
    features[3] = simple.std_time;
    features[4] = simple.repeated_requests;
    features[5] = simple.http_2xx;
    features[6] = simple.http_3xx;
    features[7] = simple.http_4xx;
    features[8] = simple.http_5xx;
    features[9] = simple.pdf_requests;
    features[10] = simple.unique_content as f64;
    features[11] = if simple.multiple_countries { 1.0 } else { 0.0 };
    features[12] = if simple.web_service { 1.0 } else { 0.0 };
    features[13] = semantic.total_topics as f64;
    features[14] = semantic.unique_topics as f64;
    match semantic.page_similarity {
        Some(ps) => features[PAGE_SIMILARITY_INDEX] = ps,
        None => missing[PAGE_SIMILARITY_INDEX] = true,
    }
    features[16] = semantic.page_variance;
    features[17] = semantic.boolean_page_variance;
    (features, missing)
}

pub fn assemble_row(
    session: &Session,
    simple: &SimpleFeatures,
    semantic: &SemanticFeatures,
    label: Option<&SessionLabel>,
) -> FeatureRow {
    let (features, missing) = feature_vector(simple, semantic);
    let (label, label_stage, label_evidence) = match label {
        Some(l) => (l.verdict, l.stage, l.evidence.clone()),
        None => (Verdict::Unlabeled, LabelStage::None, None),
    };
    FeatureRow {
        session_id: session.id.clone(),
        start_timestamp: session.first_instant().timestamp(),
        features,
        missing,
        label,
        label_stage,
        label_evidence,
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("feature table I/O: {0}")]
    Io(#[from] io::Error),
    #[error("feature table line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("no rows labeled robot or human")]
    NoLabeledRows,
}

fn header_row() -> String {
    let mut cols = vec!["session_id", "start_timestamp"];
    cols.extend(FEATURE_NAMES);
    cols.extend(["label", "label_stage", "label_evidence"]);
    cols.join("\t")
}

/// Write the feature table with its self-describing comment header.
pub fn write_table<W: Write>(mut w: W, rows: &[FeatureRow]) -> Result<(), DatasetError> {
    writeln!(w, "# botsense feature table v1")?;
    writeln!(
        w,
        "# one row per session; start_timestamp is unix seconds (UTC) of the first request"
    )?;
    writeln!(
        w,
        "# feature cells are decimal numbers; '-' marks a missing value"
    )?;
    writeln!(
        w,
        "# label: robot|human|unlabeled; label_stage: ua-classifier|robot-list|manual-list|logged-in-user|none"
    )?;
    writeln!(w, "{}", header_row())?;
    for row in rows {
        let mut cells: Vec<String> = Vec::with_capacity(23);
        cells.push(row.session_id.clone());
        cells.push(row.start_timestamp.to_string());
        for (value, &missing) in row.features.iter().zip(&row.missing) {
            cells.push(if missing { "-".to_string() } else { value.to_string() });
        }
        cells.push(row.label.name().to_string());
        cells.push(row.label_stage.name().to_string());
        cells.push(match &row.label_evidence {
            // Evidence is free text; keep the table one-line-per-row.
            Some(e) => e.replace(['\t', '\n', '\r'], " "),
            None => "-".to_string(),
        });
        writeln!(w, "{}", cells.join("\t"))?;
    }
    Ok(())
}

pub fn read_table<R: BufRead>(reader: R) -> Result<Vec<FeatureRow>, DatasetError> {
    let expected_header = header_row();
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line != expected_header {
                return Err(DatasetError::Parse {
                    line: line_no,
                    reason: "unexpected column header".into(),
                });
            }
            saw_header = true;
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != 23 {
            return Err(DatasetError::Parse {
                line: line_no,
                reason: format!("expected 23 columns, found {}", cells.len()),
            });
        }
        let start_timestamp: i64 = cells[1].parse().map_err(|_| DatasetError::Parse {
            line: line_no,
            reason: format!("bad timestamp {:?}", cells[1]),
        })?;
        let mut features = [0.0f64; 18];
        let mut missing = [false; 18];
        for i in 0..18 {
            let cell = cells[2 + i];
            if cell == "-" {
                missing[i] = true;
            } else {
                features[i] = cell.parse().map_err(|_| DatasetError::Parse {
                    line: line_no,
                    reason: format!("bad value {:?} in column {}", cell, FEATURE_NAMES[i]),
                })?;
            }
        }
        let label = Verdict::parse_name(cells[20]).ok_or_else(|| DatasetError::Parse {
            line: line_no,
            reason: format!("bad label {:?}", cells[20]),
        })?;
        let label_stage = LabelStage::parse_name(cells[21]).ok_or_else(|| DatasetError::Parse {
            line: line_no,
            reason: format!("bad label_stage {:?}", cells[21]),
        })?;
        let label_evidence = if cells[22] == "-" {
            None
        } else {
            Some(cells[22].to_string())
        };
        rows.push(FeatureRow {
            session_id: cells[0].to_string(),
            start_timestamp,
            features,
            missing,
            label,
            label_stage,
            label_evidence,
        });
    }
    if !saw_header {
        return Err(DatasetError::Parse {
            line: 0,
            reason: "missing column header".into(),
        });
    }
    Ok(rows)
}

/// A binary-labeled dataset restricted to one feature set; unlabeled rows
/// are excluded.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<DataRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataRow {
    pub session_id: String,
    pub start_timestamp: i64,
    pub features: Vec<f64>,
    pub missing: Vec<bool>,
    /// Robot is the positive class.
    pub robot: bool,
}

impl LabeledDataset {
    pub fn from_rows(rows: &[FeatureRow], set: FeatureSet) -> Result<LabeledDataset, DatasetError> {
        let indices: Vec<usize> = set.indices().collect();
        let mut out = Vec::new();
        for row in rows {
            let robot = match row.label {
                Verdict::Robot => true,
                Verdict::Human => false,
                Verdict::Unlabeled => continue,
            };
            out.push(DataRow {
                session_id: row.session_id.clone(),
                start_timestamp: row.start_timestamp,
                features: indices.iter().map(|&i| row.features[i]).collect(),
                missing: indices.iter().map(|&i| row.missing[i]).collect(),
                robot,
            });
        }
        if out.is_empty() {
            return Err(DatasetError::NoLabeledRows);
        }
        Ok(LabeledDataset {
            feature_names: set.names(),
            rows: out,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Feature matrix with missing values imputed (see [`MISSING_IMPUTE_VALUE`]).
    pub fn imputed_features(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| imputed_row(r)).collect()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.robot).collect()
    }
}

pub fn imputed_row(row: &DataRow) -> Vec<f64> {
    row.features
        .iter()
        .zip(&row.missing)
        .map(|(&v, &m)| if m { MISSING_IMPUTE_VALUE } else { v })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic_features::extract_semantic;
    use crate::sessionize::{sessionize, test_support::entry_at};
    use crate::simple_features::extract_simple;
    use crate::topic_model::SparseTopicVector;

    fn sample_rows() -> Vec<FeatureRow> {
        let entries = vec![
            entry_at("1.1.1.1", "ua", 0, "/doi/abs/a"),
            entry_at("1.1.1.1", "ua", 10, "/doi/abs/b"),
            entry_at("1.1.1.1", "ua", 20, "/doi/pdf/a"),
        ];
        let session = sessionize(entries, 1800, 3).remove(0);
        let simple = extract_simple(&session);
        let vectors = vec![SparseTopicVector {
            entries: vec![(2, 0.8), (5, 0.2)],
        }];
        let with_topics = extract_semantic(&vectors, session.n());
        let without_topics = extract_semantic(&[], session.n());
        let label = SessionLabel {
            verdict: Verdict::Robot,
            stage: LabelStage::RobotList,
            evidence: Some("curl".into()),
        };
        let mut r1 = assemble_row(&session, &simple, &with_topics, Some(&label));
        r1.session_id = "s1".into();
        let mut r2 = assemble_row(&session, &simple, &without_topics, None);
        r2.session_id = "s2".into();
        r2.label = Verdict::Human;
        r2.label_stage = LabelStage::LoggedInUser;
        r2.start_timestamp += 100;
        vec![r1, r2]
    }

    #[test]
    fn vector_layout_matches_names() {
        let rows = sample_rows();
        assert_eq!(FEATURE_NAMES.len(), 18);
        assert_eq!(FEATURE_NAMES[PAGE_SIMILARITY_INDEX], "page_similarity");
        let r = &rows[0];
        assert_eq!(r.features[0], 3.0); // total_requests
        assert_eq!(r.features[13], 2.0); // total_topics
        assert_eq!(r.features[14], 2.0); // unique_topics
        assert_eq!(r.features[PAGE_SIMILARITY_INDEX], 1.0);
        assert!(!r.missing.iter().any(|&m| m));
    }

    #[test]
    fn missing_page_similarity_round_trips() {
        let rows = sample_rows();
        assert!(rows[1].missing[PAGE_SIMILARITY_INDEX]);
        let mut buf = Vec::new();
        write_table(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# botsense feature table v1"));
        let parsed = read_table(&buf[..]).unwrap();
        assert_eq!(parsed, rows);
    }

    #[test]
    fn read_rejects_malformed_tables() {
        assert!(read_table("".as_bytes()).is_err());
        assert!(read_table("wrong\theader\n".as_bytes()).is_err());
        let mut buf = Vec::new();
        write_table(&mut buf, &sample_rows()).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text.push_str("short\trow\n");
        assert!(read_table(text.as_bytes()).is_err());
    }

    #[test]
    fn labeled_dataset_selects_and_imputes() {
        let rows = sample_rows();
        let ds = LabeledDataset::from_rows(&rows, FeatureSet::Both).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.feature_names.len(), 18);
        assert_eq!(ds.labels(), vec![true, false]);
        let x = ds.imputed_features();
        assert_eq!(x[1][PAGE_SIMILARITY_INDEX], MISSING_IMPUTE_VALUE);

        let simple = LabeledDataset::from_rows(&rows, FeatureSet::Simple).unwrap();
        assert_eq!(simple.feature_names.len(), 13);
        assert_eq!(simple.feature_names[0], "total_requests");
        let semantic = LabeledDataset::from_rows(&rows, FeatureSet::Semantic).unwrap();
        assert_eq!(semantic.feature_names[0], "total_topics");
        assert_eq!(semantic.rows[0].features[0], 2.0);
    }

    #[test]
    fn unlabeled_rows_are_excluded() {
        let mut rows = sample_rows();
        rows[1].label = Verdict::Unlabeled;
        let ds = LabeledDataset::from_rows(&rows, FeatureSet::Both).unwrap();
        assert_eq!(ds.len(), 1);
        rows[0].label = Verdict::Unlabeled;
        assert!(matches!(
            LabeledDataset::from_rows(&rows, FeatureSet::Both),
            Err(DatasetError::NoLabeledRows)
        ));
    }

    #[test]
    fn evidence_with_tabs_is_flattened() {
        let mut rows = sample_rows();
        rows[0].label_evidence = Some("a\tb\nc".into());
        let mut buf = Vec::new();
        write_table(&mut buf, &rows).unwrap();
        let parsed = read_table(&buf[..]).unwrap();
        assert_eq!(parsed[0].label_evidence.as_deref(), Some("a b c"));
    }
}

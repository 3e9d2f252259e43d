//! Study records, deterministic train/val/test splits, tokenization and the
//! TF-IDF index used for keyword retrieval.

mod split;
mod text;
mod tfidf;

pub use split::{split_corpus, Split, SplitAssignment, SplitRatios};
pub use text::{tokenize, MASK_TOKEN};
pub use tfidf::{read_index, write_index, SearchHit, TfIdfIndex, INDEX_MAGIC};

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AugVariantKind;
use crate::volgrid::PeakCoordinate;

/// Coordinate space every record must be reported in.
pub const MNI152: &str = "MNI152";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate study id {id:?} on line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("split ratios {0:?} must be non-negative and sum to 1")]
    InvalidRatios([f64; 3]),
    #[error("cannot build an index over zero documents")]
    EmptyIndex,
    #[error("index format error in {field}: {detail}")]
    Format { field: &'static str, detail: String },
    #[error("unknown study id {0:?}")]
    UnknownId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub id: String,
    pub title: String,
    pub coordinates: Vec<PeakCoordinate>,
    pub space: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmented_variants: Option<BTreeMap<AugVariantKind, String>>,
}

impl StudyRecord {
    pub fn new(id: impl Into<String>, title: impl Into<String>, coordinates: Vec<PeakCoordinate>) -> Self {
        StudyRecord {
            id: id.into(),
            title: title.into(),
            coordinates,
            space: MNI152.to_string(),
            augmented_variants: None,
        }
    }

    /// Records without peaks are kept but cannot produce a meaningful target.
    pub fn has_peaks(&self) -> bool {
        !self.coordinates.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    records: Vec<StudyRecord>,
}

impl Corpus {
    /// Fails on duplicate ids.
    pub fn from_records(records: Vec<StudyRecord>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if !seen.insert(r.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    id: r.id.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Corpus { records })
    }

    pub fn records(&self) -> &[StudyRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&StudyRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }

    /// Records assigned to `split`, in corpus order.
    pub fn subset<'a>(&'a self, assignment: &'a SplitAssignment, split: Split) -> Vec<&'a StudyRecord> {
        self.records
            .iter()
            .filter(|r| assignment.get(&r.id) == Some(split))
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), CorpusError> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Why one input line was skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct LineDiagnostic {
    pub line: usize,
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for LineDiagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}: {}", self.line, self.field, self.message)
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub rejected: Vec<LineDiagnostic>,
    /// Ids of accepted records that carry no peak coordinates.
    pub without_peaks: Vec<String>,
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    title: Option<String>,
    coordinates: Option<Vec<Vec<f64>>>,
    space: Option<String>,
    #[serde(default)]
    augmented_variants: Option<BTreeMap<AugVariantKind, String>>,
}

fn parse_line(line_no: usize, line: &str) -> Result<StudyRecord, LineDiagnostic> {
    let diag = |field: &str, message: String| LineDiagnostic {
        line: line_no,
        field: field.to_string(),
        message,
    };
    let raw: RawRecord =
        serde_json::from_str(line).map_err(|e| diag("json", e.to_string()))?;
    let id = raw.id.ok_or_else(|| diag("id", "missing".into()))?;
    if id.is_empty() {
        return Err(diag("id", "empty".into()));
    }
    let title = raw.title.ok_or_else(|| diag("title", "missing".into()))?;
    let space = raw.space.ok_or_else(|| diag("space", "missing".into()))?;
    if space != MNI152 {
        return Err(diag("space", format!("expected {MNI152}, found {space:?}")));
    }
    let coords = raw
        .coordinates
        .ok_or_else(|| diag("coordinates", "missing".into()))?;
    let mut coordinates = Vec::with_capacity(coords.len());
    for (i, c) in coords.iter().enumerate() {
        if c.len() != 3 {
            return Err(diag(
                "coordinates",
                format!("entry {i} has {} values, expected 3", c.len()),
            ));
        }
        let p = PeakCoordinate::new(c[0], c[1], c[2]);
        if !p.is_finite() {
            return Err(diag("coordinates", format!("entry {i} is not finite")));
        }
        coordinates.push(p);
    }
    Ok(StudyRecord {
        id,
        title,
        coordinates,
        space,
        augmented_variants: raw.augmented_variants,
    })
}

/// Reads one JSON object per line. Malformed lines are skipped with a
/// diagnostic; blank lines are ignored; a repeated id aborts ingestion.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<(Corpus, IngestReport), CorpusError> {
    let mut records = Vec::new();
    let mut report = IngestReport::default();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line_no, &line) {
            Ok(rec) => {
                if !seen.insert(rec.id.clone()) {
                    return Err(CorpusError::DuplicateId {
                        id: rec.id,
                        line: line_no,
                    });
                }
                if !rec.has_peaks() {
                    report.without_peaks.push(rec.id.clone());
                }
                records.push(rec);
            }
            Err(d) => report.rejected.push(d),
        }
    }
    Ok((Corpus { records }, report))
}

pub fn ingest_jsonl(path: impl AsRef<Path>) -> Result<(Corpus, IngestReport), CorpusError> {
    let file = std::fs::File::open(path)?;
    read_jsonl(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_line_two_peaks() {
        let src = r#"{"id":"s1","title":"pain processing","coordinates":[[1,2,3],[-4,5.5,6]],"space":"MNI152"}"#;
        let (c, rep) = read_jsonl(src.as_bytes()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.records()[0].coordinates.len(), 2);
        assert_eq!(c.records()[0].coordinates[1], PeakCoordinate::new(-4.0, 5.5, 6.0));
        assert!(rep.rejected.is_empty());
    }

    #[test]
    fn empty_input() {
        let (c, rep) = read_jsonl(&b""[..]).unwrap();
        assert!(c.is_empty());
        assert_eq!(rep.rejected.len(), 0);
    }

    #[test]
    fn short_coordinate_is_rejected_with_line_and_field() {
        let src = concat!(
            r#"{"id":"a","title":"t","coordinates":[[1,2,3]],"space":"MNI152"}"#,
            "\n",
            r#"{"id":"b","title":"t","coordinates":[[1,2]],"space":"MNI152"}"#,
            "\n"
        );
        let (c, rep) = read_jsonl(src.as_bytes()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(rep.rejected.len(), 1);
        assert_eq!(rep.rejected[0].line, 2);
        assert_eq!(rep.rejected[0].field, "coordinates");
        assert!(rep.rejected[0].to_string().starts_with("line 2: coordinates"));
    }

    #[test]
    fn duplicate_id_is_hard_error() {
        let src = concat!(
            r#"{"id":"a","title":"t","coordinates":[],"space":"MNI152"}"#,
            "\n",
            r#"{"id":"a","title":"u","coordinates":[],"space":"MNI152"}"#,
        );
        let err = read_jsonl(src.as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { line: 2, .. }));
    }

    #[test]
    fn other_spaces_and_bad_json_rejected() {
        let src = concat!(
            r#"{"id":"a","title":"t","coordinates":[],"space":"Talairach"}"#,
            "\n",
            "{not json}\n",
            r#"{"id":"","title":"t","coordinates":[],"space":"MNI152"}"#,
            "\n",
            r#"{"id":"c","title":"t","coordinates":[],"space":"MNI152"}"#,
        );
        let (c, rep) = read_jsonl(src.as_bytes()).unwrap();
        assert_eq!(c.len(), 1);
        let fields: Vec<_> = rep.rejected.iter().map(|d| d.field.as_str()).collect();
        assert_eq!(fields, ["space", "json", "id"]);
        assert_eq!(rep.without_peaks, ["c"]);
    }

    #[test]
    fn jsonl_roundtrip() {
        let mut r = StudyRecord::new("x", "visual cortex", vec![PeakCoordinate::new(1.0, 2.0, 3.0)]);
        r.augmented_variants = Some(BTreeMap::from([(AugVariantKind::Keywords, "visual".to_string())]));
        let c = Corpus::from_records(vec![r]).unwrap();
        let mut buf = Vec::new();
        c.write_jsonl(&mut buf).unwrap();
        let (back, _) = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, c);
    }
}

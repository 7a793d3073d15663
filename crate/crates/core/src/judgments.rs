//! Annotator judgments and the pair × annotator judgment matrix.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::{AnnotationTask, SamplingError, TaskKey};

pub const JUDGMENT_HEADER: [&str; 4] = ["pair_id", "annotator", "value", "timestamp"];

/// A rating on the relatedness scale.
///
/// | value | meaning            |
/// |-------|--------------------|
/// | 4     | identical          |
/// | 3     | closely related    |
/// | 2     | distantly related  |
/// | 1     | unrelated          |
/// | 0     | cannot decide      |
///
/// 0 is a recorded abstention, never a magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct JudgmentValue(u8);

impl JudgmentValue {
    pub const CANNOT_DECIDE: JudgmentValue = JudgmentValue(0);

    pub fn new(value: i64) -> Result<Self, JudgmentError> {
        if (0..=4).contains(&value) {
            Ok(JudgmentValue(value as u8))
        } else {
            Err(JudgmentError::OutOfRange(value.to_string()))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// The value as a magnitude, or `None` for "cannot decide".
    pub fn score(self) -> Option<f64> {
        (self.0 != 0).then_some(self.0 as f64)
    }

    pub fn label(self) -> &'static str {
        match self.0 {
            4 => "Identical",
            3 => "Closely Related",
            2 => "Distantly Related",
            1 => "Unrelated",
            _ => "Cannot decide",
        }
    }
}

impl TryFrom<i64> for JudgmentValue {
    type Error = JudgmentError;

    fn try_from(v: i64) -> Result<Self, Self::Error> {
        JudgmentValue::new(v)
    }
}

impl From<JudgmentValue> for u8 {
    fn from(v: JudgmentValue) -> u8 {
        v.0
    }
}

impl FromStr for JudgmentValue {
    type Err = JudgmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: i64 = s.trim().parse().map_err(|_| JudgmentError::OutOfRange(s.to_owned()))?;
        JudgmentValue::new(v)
    }
}

impl fmt::Display for JudgmentValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub annotator: String,
    pub pair_id: String,
    pub value: JudgmentValue,
    pub timestamp: Option<DateTime<Utc>>,
}

/// What happens when one annotator judges the same pair twice.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DuplicatePolicy {
    /// A second, different value is an error; an identical repeat is ignored.
    #[default]
    Reject,
    /// The newest judgment replaces older ones.
    LatestWins,
}

impl FromStr for DuplicatePolicy {
    type Err = JudgmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reject" => Ok(DuplicatePolicy::Reject),
            "latest-wins" => Ok(DuplicatePolicy::LatestWins),
            other => Err(JudgmentError::Format(format!("unknown duplicate policy {other:?}"))),
        }
    }
}

impl fmt::Display for DuplicatePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DuplicatePolicy::Reject => "reject",
            DuplicatePolicy::LatestWins => "latest-wins",
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum JudgmentError {
    #[error("judgment value {0:?} is not an integer in 0..=4")]
    OutOfRange(String),
    #[error("row {row} (pair {pair_id}): judgment {value:?} is not an integer in 0..=4")]
    BadCell { row: usize, pair_id: String, value: String },
    #[error("row {row}: unknown pair_id {pair_id:?}")]
    UnknownPair { row: usize, pair_id: String },
    #[error("row {row}: duplicate pair_id {pair_id:?}")]
    DuplicateRow { row: usize, pair_id: String },
    #[error("annotator {annotator} judged {pair_id} as {existing} and {new}")]
    Conflict {
        annotator: String,
        pair_id: String,
        existing: JudgmentValue,
        new: JudgmentValue,
    },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl From<SamplingError> for JudgmentError {
    fn from(e: SamplingError) -> Self {
        match e {
            SamplingError::Io(m) => JudgmentError::Io(m),
            other => JudgmentError::Format(other.to_string()),
        }
    }
}

impl From<csv::Error> for JudgmentError {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => JudgmentError::Io(e.to_string()),
            _ => JudgmentError::Format(e.to_string()),
        }
    }
}

impl From<std::io::Error> for JudgmentError {
    fn from(e: std::io::Error) -> Self {
        JudgmentError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestOutcome {
    pub judgments: Vec<Judgment>,
    /// Pair ids whose judgment cell was left empty.
    pub missing: Vec<String>,
}

/// Reads a task file whose judgment column has been filled by `annotator`.
pub fn ingest_filled_task<R: Read>(stream: R, annotator: &str, key: &TaskKey) -> Result<IngestOutcome, JudgmentError> {
    let (task, cells) = AnnotationTask::read_csv(stream)?;
    let mut seen = HashSet::new();
    let mut judgments = Vec::new();
    let mut missing = Vec::new();
    for (i, (row, cell)) in task.rows.iter().zip(&cells).enumerate() {
        let row_no = i + 1;
        if !key.contains(&row.pair_id) {
            return Err(JudgmentError::UnknownPair {
                row: row_no,
                pair_id: row.pair_id.clone(),
            });
        }
        if !seen.insert(row.pair_id.as_str()) {
            return Err(JudgmentError::DuplicateRow {
                row: row_no,
                pair_id: row.pair_id.clone(),
            });
        }
        if cell.trim().is_empty() {
            missing.push(row.pair_id.clone());
            continue;
        }
        let value = cell.parse().map_err(|_| JudgmentError::BadCell {
            row: row_no,
            pair_id: row.pair_id.clone(),
            value: cell.clone(),
        })?;
        judgments.push(Judgment {
            annotator: annotator.to_owned(),
            pair_id: row.pair_id.clone(),
            value,
            timestamp: None,
        });
    }
    Ok(IngestOutcome { judgments, missing })
}

/// Pairs × annotators, rows in key order and columns sorted by annotator id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgmentMatrix {
    pairs: Vec<String>,
    annotators: Vec<String>,
    cells: Vec<Option<JudgmentValue>>,
    pair_lookup: HashMap<String, usize>,
}

impl JudgmentMatrix {
    pub fn pairs(&self) -> &[String] {
        &self.pairs
    }

    pub fn annotators(&self) -> &[String] {
        &self.annotators
    }

    /// (pairs, annotators)
    pub fn dims(&self) -> (usize, usize) {
        (self.pairs.len(), self.annotators.len())
    }

    pub fn pair_index(&self, pair_id: &str) -> Option<usize> {
        self.pair_lookup.get(pair_id).copied()
    }

    pub fn annotator_index(&self, annotator: &str) -> Option<usize> {
        self.annotators.iter().position(|a| a == annotator)
    }

    pub fn cell(&self, pair: usize, annotator: usize) -> Option<JudgmentValue> {
        self.cells[pair * self.annotators.len() + annotator]
    }

    pub fn get(&self, pair_id: &str, annotator: &str) -> Option<JudgmentValue> {
        self.cell(self.pair_index(pair_id)?, self.annotator_index(annotator)?)
    }

    pub fn row(&self, pair: usize) -> &[Option<JudgmentValue>] {
        let w = self.annotators.len();
        &self.cells[pair * w..(pair + 1) * w]
    }

    pub fn column(&self, annotator: usize) -> Vec<Option<JudgmentValue>> {
        (0..self.pairs.len()).map(|p| self.cell(p, annotator)).collect()
    }

    pub fn filled_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Filled cells as judgments (no timestamps), pair-major.
    pub fn to_judgments(&self) -> Vec<Judgment> {
        let mut out = Vec::with_capacity(self.filled_cells());
        for (p, pair_id) in self.pairs.iter().enumerate() {
            for (a, annotator) in self.annotators.iter().enumerate() {
                if let Some(value) = self.cell(p, a) {
                    out.push(Judgment {
                        annotator: annotator.clone(),
                        pair_id: pair_id.clone(),
                        value,
                        timestamp: None,
                    });
                }
            }
        }
        out
    }
}

pub fn assemble_matrix(judgments: &[Judgment], key: &TaskKey, policy: DuplicatePolicy) -> Result<JudgmentMatrix, JudgmentError> {
    let pairs: Vec<String> = key.entries().iter().map(|e| e.pair_id.clone()).collect();
    let pair_pos: HashMap<&str, usize> = pairs.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    let annotators: Vec<String> = judgments
        .iter()
        .map(|j| j.annotator.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let ann_pos: HashMap<&str, usize> = annotators.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();

    let width = annotators.len();
    let mut cells: Vec<Option<JudgmentValue>> = vec![None; pairs.len() * width];
    // index into `judgments` of the entry currently occupying each cell
    let mut source: Vec<Option<usize>> = vec![None; cells.len()];

    for (i, j) in judgments.iter().enumerate() {
        let p = *pair_pos.get(j.pair_id.as_str()).ok_or_else(|| JudgmentError::UnknownPair {
            row: i + 1,
            pair_id: j.pair_id.clone(),
        })?;
        let slot = p * width + ann_pos[j.annotator.as_str()];
        match (source[slot], policy) {
            (None, _) => {}
            (Some(prev), DuplicatePolicy::Reject) => {
                let existing = judgments[prev].value;
                if existing != j.value {
                    return Err(JudgmentError::Conflict {
                        annotator: j.annotator.clone(),
                        pair_id: j.pair_id.clone(),
                        existing,
                        new: j.value,
                    });
                }
                continue;
            }
            (Some(prev), DuplicatePolicy::LatestWins) => {
                // newer timestamp wins; equal or absent timestamps fall back to input order
                if judgments[prev].timestamp > j.timestamp {
                    continue;
                }
            }
        }
        cells[slot] = Some(j.value);
        source[slot] = Some(i);
    }

    let pair_lookup = pairs.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
    Ok(JudgmentMatrix {
        pairs,
        annotators,
        cells,
        pair_lookup,
    })
}

pub fn write_judgments_csv<W: Write>(out: W, judgments: &[Judgment]) -> Result<(), JudgmentError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(JUDGMENT_HEADER)?;
    for j in judgments {
        let ts = j
            .timestamp
            .map(|t| t.to_rfc3339_opts(SecondsFormat::Millis, true))
            .unwrap_or_default();
        w.write_record([j.pair_id.as_str(), &j.annotator, &j.value.to_string(), &ts])?;
    }
    w.flush()?;
    Ok(())
}

pub fn judgments_to_csv_string(judgments: &[Judgment]) -> String {
    let mut buf = Vec::new();
    write_judgments_csv(&mut buf, judgments).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("judgments are UTF-8")
}

pub fn read_judgments_csv<R: Read>(input: R) -> Result<Vec<Judgment>, JudgmentError> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != JUDGMENT_HEADER {
        return Err(JudgmentError::Format(format!("unexpected judgment header {headers:?}")));
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let value = rec[2].parse().map_err(|_| JudgmentError::BadCell {
            row,
            pair_id: rec[0].to_owned(),
            value: rec[2].to_owned(),
        })?;
        let timestamp = match rec[3].trim() {
            "" => None,
            ts => Some(
                DateTime::parse_from_rfc3339(ts)
                    .map_err(|e| JudgmentError::Format(format!("row {row}: bad timestamp {ts:?}: {e}")))?
                    .with_timezone(&Utc),
            ),
        };
        out.push(Judgment {
            annotator: rec[1].to_owned(),
            pair_id: rec[0].to_owned(),
            value,
            timestamp,
        });
    }
    Ok(out)
}

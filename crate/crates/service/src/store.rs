//! Studies on disk and in memory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DurationRound, TimeDelta, Utc};
use durel_core::judgments::{judgments_to_csv_string, Judgment};
use durel_core::{AnnotationTask, DuplicatePolicy, JudgmentValue, TaskKey};
use durel_core::sampling::TaskRow;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::journal::{Journal, JournalEntry};

const TASK_FILE: &str = "task.csv";
const KEY_FILE: &str = "key.csv";
const META_FILE: &str = "study.json";
const JOURNAL_FILE: &str = "journal.jsonl";
const MAX_ID_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("study id {0:?} must be 1 to 64 characters from [A-Za-z0-9_-]")]
    InvalidStudyId(String),
    #[error("invalid study: {0}")]
    InvalidPayload(String),
    #[error("study {0:?} already exists with different content")]
    StudyExists(String),
    #[error("no study {0:?}")]
    UnknownStudy(String),
    #[error("annotator {0:?} is not on the roster")]
    UnknownAnnotator(String),
    #[error("pair {0:?} is not part of this study")]
    UnknownPair(String),
    #[error("judgment {0} is not an integer in 0..=4")]
    OutOfRange(String),
    #[error("annotator {annotator:?} already judged {pair_id:?} as {stored}")]
    Conflict {
        annotator: String,
        pair_id: String,
        stored: u8,
    },
    #[error("missing or invalid bearer token")]
    Unauthorized,
    #[error("corrupt study data: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::InvalidStudyId(_) => "invalid_study_id",
            ServiceError::InvalidPayload(_) => "invalid_payload",
            ServiceError::StudyExists(_) => "study_exists",
            ServiceError::UnknownStudy(_) => "unknown_study",
            ServiceError::UnknownAnnotator(_) => "unknown_annotator",
            ServiceError::UnknownPair(_) => "unknown_pair",
            ServiceError::OutOfRange(_) => "out_of_range",
            ServiceError::Conflict { .. } => "conflict",
            ServiceError::Unauthorized => "unauthorized",
            ServiceError::Corrupt(_) => "corrupt",
            ServiceError::Io(_) => "io",
        }
    }
}

/// Roster entry in a creation request: a bare name gets a generated token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RosterEntry {
    Name(String),
    WithToken { annotator: String, token: String },
}

impl RosterEntry {
    pub fn annotator(&self) -> &str {
        match self {
            RosterEntry::Name(a) | RosterEntry::WithToken { annotator: a, .. } => a,
        }
    }

    fn token(&self) -> Option<&str> {
        match self {
            RosterEntry::Name(_) => None,
            RosterEntry::WithToken { token, .. } => Some(token),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyPayload {
    pub task: AnnotationTask,
    pub key: TaskKey,
    pub roster: Vec<RosterEntry>,
    #[serde(default)]
    pub policy: DuplicatePolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Member {
    annotator: String,
    token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StudyMeta {
    study_id: String,
    policy: DuplicatePolicy,
    roster: Vec<Member>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Created {
    pub study_id: String,
    pub created: bool,
    pub pairs: usize,
    pub tokens: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum NextPair {
    Pair { pair: TaskRow, judged: usize, total: usize },
    Done { judged: usize, total: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Submitted {
    /// "recorded" when appended, "unchanged" for an identical repeat.
    pub status: &'static str,
    pub pair_id: String,
    pub value: u8,
    pub judged: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnnotatorProgress {
    pub annotator: String,
    pub judged: usize,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Progress {
    pub study_id: String,
    pub total: usize,
    pub annotators: Vec<AnnotatorProgress>,
}

#[derive(Default)]
struct StudyState {
    entries: Vec<JournalEntry>,
    // (annotator, pair_id) → index of the entry currently in force
    winners: HashMap<(String, String), usize>,
    judged: HashMap<String, usize>,
}

impl StudyState {
    fn stored(&self, annotator: &str, pair_id: &str) -> Option<u8> {
        self.winners
            .get(&(annotator.to_owned(), pair_id.to_owned()))
            .map(|&i| self.entries[i].value)
    }

    fn push(&mut self, entry: JournalEntry) {
        let cell = (entry.annotator.clone(), entry.pair_id.clone());
        if self.winners.insert(cell, self.entries.len()).is_none() {
            *self.judged.entry(entry.annotator.clone()).or_default() += 1;
        }
        self.entries.push(entry);
    }
}

struct Study {
    meta: StudyMeta,
    task: AnnotationTask,
    key: TaskKey,
    tokens: HashMap<String, String>,
    journal: Mutex<Journal>,
    state: RwLock<StudyState>,
}

impl Study {
    fn load(dir: &Path) -> Result<Study, ServiceError> {
        let meta: StudyMeta = serde_json::from_slice(&fs::read(dir.join(META_FILE))?)
            .map_err(|e| corrupt(dir, META_FILE, e))?;
        let (task, _) = AnnotationTask::read_csv(fs::File::open(dir.join(TASK_FILE))?)
            .map_err(|e| corrupt(dir, TASK_FILE, e))?;
        let key = TaskKey::read_csv(fs::File::open(dir.join(KEY_FILE))?).map_err(|e| corrupt(dir, KEY_FILE, e))?;
        let (journal, entries) = Journal::open(&dir.join(JOURNAL_FILE))?;

        let tokens = meta
            .roster
            .iter()
            .map(|m| (m.annotator.clone(), m.token.clone()))
            .collect();
        let study = Study {
            meta,
            task,
            key,
            tokens,
            journal: Mutex::new(journal),
            state: RwLock::new(StudyState::default()),
        };
        {
            let mut state = study.state.write().expect("fresh lock");
            for entry in entries {
                if !study.tokens.contains_key(&entry.annotator) || !study.key.contains(&entry.pair_id) {
                    return Err(ServiceError::Corrupt(format!(
                        "{}: journal names unknown annotator {:?} or pair {:?}",
                        dir.display(),
                        entry.annotator,
                        entry.pair_id
                    )));
                }
                match (study.meta.policy, state.stored(&entry.annotator, &entry.pair_id)) {
                    (DuplicatePolicy::Reject, Some(_)) => {}
                    _ => state.push(entry),
                }
            }
        }
        Ok(study)
    }

    fn total(&self) -> usize {
        self.task.rows.len()
    }

    fn judged(state: &StudyState, annotator: &str) -> usize {
        state.judged.get(annotator).copied().unwrap_or(0)
    }
}

fn corrupt(dir: &Path, file: &str, e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Corrupt(format!("{}: {e}", dir.join(file).display()))
}

/// All studies under one data directory.
pub struct StudyStore {
    data_dir: PathBuf,
    studies: RwLock<HashMap<String, Arc<Study>>>,
    create_lock: Mutex<()>,
}

pub fn valid_study_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= MAX_ID_LEN
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

impl StudyStore {
    /// Opens the data directory, replaying every study found in it.
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<StudyStore, ServiceError> {
        let data_dir = data_dir.into();
        fs::create_dir_all(&data_dir)?;
        let mut studies = HashMap::new();
        for dirent in fs::read_dir(&data_dir)? {
            let dirent = dirent?;
            let name = dirent.file_name().to_string_lossy().into_owned();
            if !dirent.file_type()?.is_dir() || !valid_study_id(&name) {
                // staging directories start with '.' and are leftovers of an
                // interrupted creation
                continue;
            }
            studies.insert(name, Arc::new(Study::load(&dirent.path())?));
        }
        Ok(StudyStore {
            data_dir,
            studies: RwLock::new(studies),
            create_lock: Mutex::new(()),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn study_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.studies.read().expect("lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    fn study(&self, id: &str) -> Result<Arc<Study>, ServiceError> {
        self.studies
            .read()
            .expect("lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownStudy(id.to_owned()))
    }

    /// Creates a study. Repeating an identical request is a no-op that
    /// returns the existing tokens.
    pub fn create_study(&self, study_id: &str, payload: StudyPayload) -> Result<Created, ServiceError> {
        if !valid_study_id(study_id) {
            return Err(ServiceError::InvalidStudyId(study_id.to_owned()));
        }
        let (task_csv, key_csv) = validate(&payload)?;

        let _guard = self.create_lock.lock().expect("lock");
        if let Ok(existing) = self.study(study_id) {
            return if same_study(&existing, &payload) {
                Ok(created(&existing, false))
            } else {
                Err(ServiceError::StudyExists(study_id.to_owned()))
            };
        }

        let meta = StudyMeta {
            study_id: study_id.to_owned(),
            policy: payload.policy,
            roster: payload
                .roster
                .iter()
                .map(|r| Member {
                    annotator: r.annotator().to_owned(),
                    token: r
                        .token()
                        .map_or_else(|| uuid::Uuid::new_v4().simple().to_string(), str::to_owned),
                })
                .collect(),
        };

        let staging = self.data_dir.join(format!(".{study_id}.{}", uuid::Uuid::new_v4().simple()));
        fs::create_dir(&staging)?;
        let meta_json = serde_json::to_vec_pretty(&meta).map_err(|e| ServiceError::Corrupt(e.to_string()))?;
        for (name, bytes) in [
            (TASK_FILE, task_csv.as_bytes()),
            (KEY_FILE, key_csv.as_bytes()),
            (META_FILE, &meta_json[..]),
            (JOURNAL_FILE, &[][..]),
        ] {
            write_synced(&staging.join(name), bytes)?;
        }
        let final_dir = self.data_dir.join(study_id);
        fs::rename(&staging, &final_dir)?;
        fs::File::open(&self.data_dir)?.sync_all()?;

        let study = Arc::new(Study::load(&final_dir)?);
        let out = created(&study, true);
        self.studies.write().expect("lock").insert(study_id.to_owned(), study);
        Ok(out)
    }

    /// Checks the bearer token of `annotator`.
    pub fn authorize(&self, study_id: &str, annotator: &str, token: Option<&str>) -> Result<(), ServiceError> {
        let study = self.study(study_id)?;
        let expected = study
            .tokens
            .get(annotator)
            .ok_or_else(|| ServiceError::UnknownAnnotator(annotator.to_owned()))?;
        match token {
            Some(t) if constant_time_eq(t.as_bytes(), expected.as_bytes()) => Ok(()),
            _ => Err(ServiceError::Unauthorized),
        }
    }

    /// First row, in task order, that `annotator` has not judged yet.
    pub fn next_pair(&self, study_id: &str, annotator: &str) -> Result<NextPair, ServiceError> {
        let study = self.study(study_id)?;
        if !study.tokens.contains_key(annotator) {
            return Err(ServiceError::UnknownAnnotator(annotator.to_owned()));
        }
        let state = study.state.read().expect("lock");
        let judged = Study::judged(&state, annotator);
        let total = study.total();
        let next = study
            .task
            .rows
            .iter()
            .find(|r| state.stored(annotator, &r.pair_id).is_none());
        Ok(match next {
            Some(row) => NextPair::Pair {
                pair: row.clone(),
                judged,
                total,
            },
            None => NextPair::Done { judged, total },
        })
    }

    /// Records one judgment. `value` arrives unchecked from the client.
    pub fn submit(
        &self,
        study_id: &str,
        annotator: &str,
        pair_id: &str,
        value: &serde_json::Value,
    ) -> Result<Submitted, ServiceError> {
        let study = self.study(study_id)?;
        if !study.tokens.contains_key(annotator) {
            return Err(ServiceError::UnknownAnnotator(annotator.to_owned()));
        }
        if !study.key.contains(pair_id) {
            return Err(ServiceError::UnknownPair(pair_id.to_owned()));
        }
        let value = value
            .as_i64()
            .and_then(|v| JudgmentValue::new(v).ok())
            .ok_or_else(|| ServiceError::OutOfRange(value.to_string()))?
            .get();

        // the journal mutex serializes writers; readers only see the state lock
        let mut journal = study.journal.lock().expect("lock");
        let stored = study.state.read().expect("lock").stored(annotator, pair_id);
        let status = match (study.meta.policy, stored) {
            (DuplicatePolicy::Reject, Some(s)) if s == value => "unchanged",
            (DuplicatePolicy::Reject, Some(s)) => {
                return Err(ServiceError::Conflict {
                    annotator: annotator.to_owned(),
                    pair_id: pair_id.to_owned(),
                    stored: s,
                })
            }
            _ => {
                let entry = JournalEntry {
                    annotator: annotator.to_owned(),
                    pair_id: pair_id.to_owned(),
                    value,
                    timestamp: Utc::now()
                        .duration_trunc(TimeDelta::milliseconds(1))
                        .expect("millisecond truncation of the current time"),
                };
                journal.append(&entry)?;
                study.state.write().expect("lock").push(entry);
                "recorded"
            }
        };
        drop(journal);

        let state = study.state.read().expect("lock");
        Ok(Submitted {
            status,
            pair_id: pair_id.to_owned(),
            value,
            judged: Study::judged(&state, annotator),
            total: study.total(),
        })
    }

    pub fn progress(&self, study_id: &str) -> Result<Progress, ServiceError> {
        let study = self.study(study_id)?;
        let state = study.state.read().expect("lock");
        let total = study.total();
        Ok(Progress {
            study_id: study_id.to_owned(),
            total,
            annotators: study
                .meta
                .roster
                .iter()
                .map(|m| {
                    let judged = Study::judged(&state, &m.annotator);
                    AnnotatorProgress {
                        annotator: m.annotator.clone(),
                        judged,
                        remaining: total - judged,
                    }
                })
                .collect(),
        })
    }

    /// Judgments in force, in journal order.
    pub fn judgments(&self, study_id: &str) -> Result<Vec<Judgment>, ServiceError> {
        let study = self.study(study_id)?;
        let state = study.state.read().expect("lock");
        let mut live: Vec<usize> = state.winners.values().copied().collect();
        live.sort_unstable();
        Ok(live
            .into_iter()
            .map(|i| {
                let e = &state.entries[i];
                Judgment {
                    annotator: e.annotator.clone(),
                    pair_id: e.pair_id.clone(),
                    value: JudgmentValue::new(e.value.into()).expect("validated on submission"),
                    timestamp: Some(e.timestamp),
                }
            })
            .collect())
    }

    /// Judgment CSV of [`StudyStore::judgments`].
    pub fn export(&self, study_id: &str) -> Result<String, ServiceError> {
        Ok(judgments_to_csv_string(&self.judgments(study_id)?))
    }
}

fn validate(payload: &StudyPayload) -> Result<(String, String), ServiceError> {
    let invalid = |m: String| Err(ServiceError::InvalidPayload(m));
    if payload.task.rows.is_empty() {
        return invalid("task has no rows".into());
    }
    let mut seen = HashSet::new();
    for row in &payload.task.rows {
        if !seen.insert(row.pair_id.as_str()) {
            return invalid(format!("pair {:?} appears twice in the task", row.pair_id));
        }
        if !payload.key.contains(&row.pair_id) {
            return invalid(format!("pair {:?} has no key entry", row.pair_id));
        }
    }
    if seen.len() != payload.key.len() {
        return invalid("key lists pairs that are not in the task".into());
    }

    if payload.roster.is_empty() {
        return invalid("roster is empty".into());
    }
    let mut names = HashSet::new();
    let mut tokens = HashSet::new();
    for r in &payload.roster {
        let name = r.annotator();
        if name.is_empty() || name.trim() != name || name.contains(['/', '\n', '\r']) {
            return invalid(format!("bad annotator name {name:?}"));
        }
        if !names.insert(name) {
            return invalid(format!("annotator {name:?} listed twice"));
        }
        if let Some(t) = r.token() {
            if t.len() < 16 || !tokens.insert(t) {
                return invalid(format!("token for {name:?} is shorter than 16 bytes or reused"));
            }
        }
    }

    // the files on disk must parse back into exactly this study
    let task_csv = payload.task.to_csv_string();
    let key_csv = payload.key.to_csv_string();
    match AnnotationTask::read_csv(task_csv.as_bytes()) {
        Ok((t, _)) if t == payload.task => {}
        _ => return invalid("task metadata does not survive serialization (whitespace in task_id?)".into()),
    }
    match TaskKey::read_csv(key_csv.as_bytes()) {
        Ok(k) if k == payload.key => {}
        _ => return invalid("key does not survive serialization".into()),
    }
    Ok((task_csv, key_csv))
}

fn same_study(study: &Study, payload: &StudyPayload) -> bool {
    study.task == payload.task
        && study.key == payload.key
        && study.meta.policy == payload.policy
        && study.meta.roster.len() == payload.roster.len()
        && study
            .meta
            .roster
            .iter()
            .zip(&payload.roster)
            .all(|(m, r)| m.annotator == r.annotator() && r.token().is_none_or(|t| t == m.token))
}

fn created(study: &Study, created: bool) -> Created {
    Created {
        study_id: study.meta.study_id.clone(),
        created,
        pairs: study.total(),
        tokens: study
            .meta
            .roster
            .iter()
            .map(|m| (m.annotator.clone(), m.token.clone()))
            .collect(),
    }
}

fn write_synced(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut f = fs::File::create(path)?;
    io::Write::write_all(&mut f, bytes)?;
    f.sync_all()
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

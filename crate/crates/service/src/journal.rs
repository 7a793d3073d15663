//! Append-only judgment journal, one JSON object per line.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::store::ServiceError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub annotator: String,
    pub pair_id: String,
    pub value: u8,
    pub timestamp: DateTime<Utc>,
}

pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    /// Opens (creating if needed) and replays the journal. A torn final line
    /// left by a crash mid-append is cut off; damage anywhere else is an error.
    pub fn open(path: &Path) -> Result<(Journal, Vec<JournalEntry>), ServiceError> {
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        file.seek(SeekFrom::Start(0))?;

        let mut entries = Vec::new();
        let mut reader = BufReader::new(&file);
        let mut good_len: u64 = 0;
        let mut line = String::new();
        let mut line_no = 0;
        loop {
            line.clear();
            let read = reader.read_line(&mut line)?;
            if read == 0 {
                break;
            }
            line_no += 1;
            let complete = line.ends_with('\n');
            match serde_json::from_str::<JournalEntry>(line.trim_end()) {
                Ok(entry) if complete => {
                    entries.push(entry);
                    good_len += read as u64;
                }
                _ if !complete => break,
                Ok(_) => unreachable!(),
                Err(e) => {
                    return Err(ServiceError::Corrupt(format!(
                        "{}: line {line_no}: {e}",
                        path.display()
                    )))
                }
            }
        }
        drop(reader);

        if file.metadata()?.len() != good_len {
            file.set_len(good_len)?;
            file.sync_data()?;
        }
        Ok((
            Journal {
                path: path.to_owned(),
                file,
            },
            entries,
        ))
    }

    /// Appends one entry and syncs it to disk before returning.
    pub fn append(&mut self, entry: &JournalEntry) -> Result<(), ServiceError> {
        let mut line = serde_json::to_string(entry).map_err(|e| ServiceError::Corrupt(e.to_string()))?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(v: u8) -> JournalEntry {
        JournalEntry {
            annotator: "a".into(),
            pair_id: "w-1".into(),
            value: v,
            timestamp: "2024-01-01T00:00:00.000Z".parse().unwrap(),
        }
    }

    #[test]
    fn append_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        {
            let (mut j, entries) = Journal::open(&path).unwrap();
            assert!(entries.is_empty());
            j.append(&entry(3)).unwrap();
            j.append(&entry(4)).unwrap();
        }
        let (_, entries) = Journal::open(&path).unwrap();
        assert_eq!(entries, vec![entry(3), entry(4)]);
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        {
            let (mut j, _) = Journal::open(&path).unwrap();
            j.append(&entry(2)).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"annotator\":\"a\",\"pai").unwrap();
        drop(f);

        let (mut j, entries) = Journal::open(&path).unwrap();
        assert_eq!(entries, vec![entry(2)]);
        j.append(&entry(1)).unwrap();
        let (_, entries) = Journal::open(&path).unwrap();
        assert_eq!(entries, vec![entry(2), entry(1)]);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        std::fs::write(&path, "garbage\n{\"x\":1}\n").unwrap();
        assert!(matches!(Journal::open(&path), Err(ServiceError::Corrupt(_))));
    }
}

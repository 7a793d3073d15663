//! Study service: persists blinded annotation tasks and collects judgments
//! over HTTP/JSON.
//!
//! Each study lives in its own directory:
//!
//! ```text
//! <data_dir>/<study_id>/task.csv      blinded rows, immutable
//! <data_dir>/<study_id>/key.csv       withheld metadata, immutable, never served
//! <data_dir>/<study_id>/study.json    roster, tokens and duplicate policy
//! <data_dir>/<study_id>/journal.jsonl one judgment per line, append-only
//! ```
//!
//! On startup every study is rebuilt by replaying its journal.

pub mod api;
pub mod journal;
pub mod store;

pub use api::{router, serve};
pub use journal::JournalEntry;
pub use store::{NextPair, Progress, ServiceError, StudyPayload, StudyStore};

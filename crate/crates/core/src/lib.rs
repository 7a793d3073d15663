//! Core library for diachronic usage relatedness (DURel) studies.
//!
//! The pipeline runs in this order:
//!
//! 1. [`corpus`] parses a vertical corpus and extracts target uses per period.
//! 2. [`sampling`] builds the EARLIER / LATER / COMPARE use-pair groups and
//!    turns them into a blinded, shuffled [`sampling::AnnotationTask`] plus a
//!    server-side [`sampling::TaskKey`].
//! 3. [`judgments`] ingests filled tasks and assembles a pair × annotator
//!    [`judgments::JudgmentMatrix`].
//! 4. [`measures`] computes group means, Δ-LATER, COMPARE and ΔCOMPARE.
//! 5. [`agreement`] computes tie-corrected Spearman correlations between
//!    annotators.

pub mod agreement;
pub mod corpus;
pub mod judgments;
pub mod measures;
pub mod rng;
pub mod sampling;
pub mod synthetic;

pub use corpus::{Corpus, PeriodSpec, TargetSpec, Use};
pub use judgments::{DuplicatePolicy, Judgment, JudgmentMatrix, JudgmentValue};
pub use rng::StudyRng;
pub use sampling::{AnnotationTask, GroupId, SamplingConfig, TaskKey, UsePair};

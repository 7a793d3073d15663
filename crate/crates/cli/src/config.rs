//! Study configuration: a flat `key = value` file.
//!
//! ```text
//! # lines starting with '#' are comments
//! corpus = corpus.vrt               # vertical corpus, relative to this file
//! normalization = historical-german # or a from<TAB>to mapping file, or none
//! earlier = 1750-1800
//! later = 1850-1900
//! target = Abend NN                 # repeat per target; POS is optional
//! target = Feder
//! pairs_per_group = 20
//! seed = 42
//! allow_reuse_twice = true
//! lemma_case_insensitive = false
//! threshold = 0.1
//! policy = reject                   # or latest-wins
//! out_dir = out
//! min_year = 1400
//! max_year = 2100
//! ```
//!
//! Command-line flags override values from the file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use durel_core::corpus::{ImportOptions, LemmaMatch, OrthographyMap};
use durel_core::measures::DEFAULT_THRESHOLD;
use durel_core::{DuplicatePolicy, PeriodSpec, SamplingConfig, TargetSpec};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Normalization {
    None,
    HistoricalGerman,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub corpus: Option<PathBuf>,
    pub normalization: Normalization,
    pub targets: Vec<TargetSpec>,
    pub earlier: Option<PeriodSpec>,
    pub later: Option<PeriodSpec>,
    pub sampling: SamplingConfig,
    pub threshold: f64,
    pub policy: DuplicatePolicy,
    pub out_dir: PathBuf,
    pub lemma_match: LemmaMatch,
    pub import: ImportOptions,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            normalization: Normalization::None,
            targets: Vec::new(),
            earlier: None,
            later: None,
            sampling: SamplingConfig::default(),
            threshold: DEFAULT_THRESHOLD,
            policy: DuplicatePolicy::Reject,
            out_dir: PathBuf::from("."),
            lemma_match: LemmaMatch::Exact,
            import: ImportOptions::default(),
        }
    }
}

fn invalid(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Invalid(format!("config line {line}: {msg}"))
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| invalid(line, format!("bad value {value:?} for {key}")))
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(invalid(line, format!("bad value {value:?} for {key}, expected true or false"))),
    }
}

fn parse_period(line: usize, label: &str, value: &str) -> Result<PeriodSpec, CliError> {
    let (a, b) = value
        .split_once('-')
        .ok_or_else(|| invalid(line, format!("period {value:?} must look like 1750-1800")))?;
    let start = parse_value(line, label, a.trim())?;
    let end = parse_value(line, label, b.trim())?;
    PeriodSpec::new(label, start, end).map_err(|e| invalid(line, e))
}

impl StudyConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    /// Parses config text; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg = StudyConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split_once('#').map_or(raw, |(before, _)| before).trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| invalid(line, "expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            if key != "target" && !seen.insert(key.to_owned()) {
                return Err(invalid(line, format!("{key} given twice")));
            }
            let path = |v: &str| base.join(v);
            match key {
                "corpus" => cfg.corpus = Some(path(value)),
                "normalization" => {
                    cfg.normalization = match value {
                        "none" | "" => Normalization::None,
                        "historical-german" => Normalization::HistoricalGerman,
                        file => Normalization::File(path(file)),
                    }
                }
                "earlier" => cfg.earlier = Some(parse_period(line, "earlier", value)?),
                "later" => cfg.later = Some(parse_period(line, "later", value)?),
                "target" => {
                    let mut parts = value.split_whitespace();
                    let lemma = parts.next().ok_or_else(|| invalid(line, "target needs a lemma"))?;
                    let pos = parts.next();
                    if parts.next().is_some() {
                        return Err(invalid(line, "target takes a lemma and an optional POS tag"));
                    }
                    cfg.targets.push(TargetSpec::new(lemma, pos).map_err(|e| invalid(line, e))?);
                }
                "pairs_per_group" => cfg.sampling.pairs_per_group = parse_value(line, key, value)?,
                "seed" => cfg.sampling.seed = parse_value(line, key, value)?,
                "allow_reuse_twice" => cfg.sampling.allow_reuse_twice = parse_bool(line, key, value)?,
                "lemma_case_insensitive" => {
                    cfg.lemma_match = if parse_bool(line, key, value)? {
                        LemmaMatch::CaseInsensitive
                    } else {
                        LemmaMatch::Exact
                    }
                }
                "threshold" => cfg.threshold = parse_threshold(value).map_err(|m| invalid(line, m))?,
                "policy" => cfg.policy = value.parse().map_err(|e| invalid(line, e))?,
                "out_dir" => cfg.out_dir = path(value),
                "min_year" => cfg.import.min_year = parse_value(line, key, value)?,
                "max_year" => cfg.import.max_year = parse_value(line, key, value)?,
                other => return Err(invalid(line, format!("unknown key {other:?}"))),
            }
        }
        let mut targets = HashSet::new();
        for t in &cfg.targets {
            if !targets.insert(t) {
                return Err(CliError::Invalid(format!("target {t} listed twice")));
            }
        }
        // corpora without POS are fine as long as no target filters on it
        cfg.import.allow_empty_pos = cfg.targets.iter().all(|t| t.pos.is_none());
        Ok(cfg)
    }

    pub fn corpus(&self) -> Result<&Path, CliError> {
        self.corpus
            .as_deref()
            .ok_or_else(|| CliError::Invalid("no corpus configured".into()))
    }

    /// Both periods, checked to be disjoint.
    pub fn periods(&self) -> Result<(PeriodSpec, PeriodSpec), CliError> {
        let (Some(e), Some(l)) = (&self.earlier, &self.later) else {
            return Err(CliError::Invalid("config needs both earlier and later periods".into()));
        };
        if e.overlaps(l) {
            return Err(CliError::Invalid(format!(
                "periods {}-{} and {}-{} overlap",
                e.start_year, e.end_year, l.start_year, l.end_year
            )));
        }
        Ok((e.clone(), l.clone()))
    }

    pub fn require_targets(&self) -> Result<&[TargetSpec], CliError> {
        if self.targets.is_empty() {
            return Err(CliError::Invalid("config lists no target".into()));
        }
        Ok(&self.targets)
    }

    pub fn orthography(&self) -> Result<Option<OrthographyMap>, CliError> {
        match &self.normalization {
            Normalization::None => Ok(None),
            Normalization::HistoricalGerman => Ok(Some(OrthographyMap::historical_german())),
            Normalization::File(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Ok(Some(OrthographyMap::parse(&text)?))
            }
        }
    }
}

pub fn parse_threshold(value: &str) -> Result<f64, String> {
    match value.parse::<f64>() {
        Ok(t) if t.is_finite() && t >= 0.0 => Ok(t),
        _ => Err(format!("threshold {value:?} must be a non-negative number")),
    }
}

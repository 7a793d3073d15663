//! Vertical corpus parsing, orthographic normalization and use extraction.
//!
//! The vertical format is line based:
//!
//! ```text
//! #doc id=<doc_id> year=<YYYY>
//! surface<TAB>lemma<TAB>pos
//! surface<TAB>lemma<TAB>pos
//!
//! surface<TAB>lemma<TAB>pos
//! #doc id=<next_doc> year=<YYYY>
//! ...
//! ```
//!
//! A blank line ends a sentence, a header line ends the current document.
//! Consecutive blank lines never produce empty sentences.

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;

use aho_corasick::{AhoCorasick, MatchKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Marker placed around the target token in [`Use::sent_text`].
pub const TARGET_OPEN: &str = "<<";
pub const TARGET_CLOSE: &str = ">>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub lemma: String,
    pub pos: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn text(&self) -> String {
        join_surfaces(&self.tokens, None)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub year: i32,
    pub sentences: Vec<Sentence>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

/// A time period with inclusive year bounds.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PeriodSpec {
    pub label: String,
    pub start_year: i32,
    pub end_year: i32,
}

impl PeriodSpec {
    pub fn new(label: impl Into<String>, start_year: i32, end_year: i32) -> Result<Self, CorpusError> {
        if start_year > end_year {
            return Err(CorpusError::InvalidPeriod { start_year, end_year });
        }
        Ok(Self {
            label: label.into(),
            start_year,
            end_year,
        })
    }

    pub fn contains(&self, year: i32) -> bool {
        self.start_year <= year && year <= self.end_year
    }

    pub fn overlaps(&self, other: &PeriodSpec) -> bool {
        self.start_year <= other.end_year && other.start_year <= self.end_year
    }
}

/// A target word: a lemma, optionally restricted to one part of speech.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TargetSpec {
    pub lemma: String,
    pub pos: Option<String>,
}

impl TargetSpec {
    pub fn new(lemma: impl Into<String>, pos: Option<&str>) -> Result<Self, CorpusError> {
        let lemma = lemma.into();
        if lemma.is_empty() {
            return Err(CorpusError::EmptyLemma);
        }
        Ok(Self {
            lemma,
            pos: pos.filter(|p| !p.is_empty()).map(str::to_owned),
        })
    }

    /// POS tag as written in key files (empty when unset).
    pub fn pos_str(&self) -> &str {
        self.pos.as_deref().unwrap_or("")
    }
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.pos {
            Some(pos) => write!(f, "{}/{}", self.lemma, pos),
            None => f.write_str(&self.lemma),
        }
    }
}

/// One occurrence of a target word with its context sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Use {
    pub use_id: String,
    pub target: TargetSpec,
    pub year: i32,
    pub prev_text: String,
    pub sent_text: String,
    pub next_text: String,
    pub token_index: usize,
}

impl Use {
    pub fn make_id(doc_id: &str, sentence: usize, token: usize) -> String {
        format!("{doc_id}:{sentence}:{token}")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("line {line}, column {column}: malformed metadata line: {message}")]
    MalformedMetadata { line: usize, column: usize, message: String },
    #[error("line {line}, column {column}: expected 3 tab-separated fields, found {found}")]
    FieldCount { line: usize, column: usize, found: usize },
    #[error("line {line}, column {column}: {message}")]
    InvalidToken { line: usize, column: usize, message: String },
    #[error("line {line}, column 1: token line before any #doc header")]
    TokenOutsideDocument { line: usize },
    #[error("line {line}, column 1: duplicate doc_id {doc_id:?}")]
    DuplicateDocId { line: usize, doc_id: String },
    #[error("line {line}, column 1: document header without year")]
    MissingYear { line: usize },
    #[error("line {line}, column {column}: year {year} outside accepted range {min}..={max}")]
    YearOutOfRange { line: usize, column: usize, year: i32, min: i32, max: i32 },
    #[error("invalid period: start year {start_year} after end year {end_year}")]
    InvalidPeriod { start_year: i32, end_year: i32 },
    #[error("target lemma must not be empty")]
    EmptyLemma,
    #[error("normalization mapping line {line}: {message}")]
    MalformedMapping { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CorpusError {
    fn from(e: std::io::Error) -> Self {
        CorpusError::Io(e.to_string())
    }
}

/// Options controlling [`import_vertical_with`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportOptions {
    pub min_year: i32,
    pub max_year: i32,
    /// Accept token lines with an empty POS column. Only sensible when no
    /// target restricts on POS.
    pub allow_empty_pos: bool,
}

impl Default for ImportOptions {
    fn default() -> Self {
        Self {
            min_year: 1400,
            max_year: 2100,
            allow_empty_pos: false,
        }
    }
}

pub fn import_vertical<R: BufRead>(stream: R) -> Result<Corpus, CorpusError> {
    import_vertical_with(stream, &ImportOptions::default())
}

pub fn import_vertical_with<R: BufRead>(stream: R, opts: &ImportOptions) -> Result<Corpus, CorpusError> {
    let mut documents: Vec<Document> = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut current: Option<Document> = None;
    let mut sentence: Vec<Token> = Vec::new();

    fn flush_sentence(doc: &mut Option<Document>, sentence: &mut Vec<Token>) {
        if sentence.is_empty() {
            return;
        }
        let doc = doc.as_mut().expect("tokens are only collected inside a document");
        let index = doc.sentences.len();
        doc.sentences.push(Sentence {
            index,
            tokens: std::mem::take(sentence),
        });
    }

    for (lineno, line) in stream.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);

        if line.trim().is_empty() {
            flush_sentence(&mut current, &mut sentence);
            continue;
        }

        // token lines always contain tabs, so '#word\t...' stays a token
        if line.starts_with('#') && !line.contains('\t') {
            let (doc_id, year) = parse_header(line, line_no, opts)?;
            flush_sentence(&mut current, &mut sentence);
            if let Some(doc) = current.take() {
                documents.push(doc);
            }
            if !seen_ids.insert(doc_id.clone()) {
                return Err(CorpusError::DuplicateDocId { line: line_no, doc_id });
            }
            current = Some(Document {
                doc_id,
                year,
                sentences: Vec::new(),
            });
            continue;
        }

        if current.is_none() {
            return Err(CorpusError::TokenOutsideDocument { line: line_no });
        }
        sentence.push(parse_token(line, line_no, opts)?);
    }

    flush_sentence(&mut current, &mut sentence);
    if let Some(doc) = current.take() {
        documents.push(doc);
    }
    Ok(Corpus { documents })
}

fn parse_header(line: &str, line_no: usize, opts: &ImportOptions) -> Result<(String, i32), CorpusError> {
    let malformed = |column: usize, message: &str| CorpusError::MalformedMetadata {
        line: line_no,
        column,
        message: message.to_owned(),
    };
    let rest = line
        .strip_prefix("#doc")
        .filter(|r| r.is_empty() || r.starts_with(char::is_whitespace))
        .ok_or_else(|| malformed(1, "expected '#doc' header"))?;

    let mut doc_id = None;
    let mut year = None;
    let mut next_column = 5;
    for field in rest.split(char::is_whitespace) {
        let column = next_column;
        next_column += field.chars().count() + 1;
        if field.is_empty() {
            continue;
        }
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| malformed(column, "expected key=value"))?;
        match key {
            "id" if !value.is_empty() => doc_id = Some(value.to_owned()),
            "id" => return Err(malformed(column, "empty doc id")),
            "year" => {
                let y: i32 = value.parse().map_err(|_| malformed(column, "year is not an integer"))?;
                if y < opts.min_year || y > opts.max_year {
                    return Err(CorpusError::YearOutOfRange {
                        line: line_no,
                        column,
                        year: y,
                        min: opts.min_year,
                        max: opts.max_year,
                    });
                }
                year = Some(y);
            }
            _ => return Err(malformed(column, &format!("unknown key {key:?}"))),
        }
    }
    let doc_id = doc_id.ok_or_else(|| malformed(1, "missing id"))?;
    let year = year.ok_or(CorpusError::MissingYear { line: line_no })?;
    Ok((doc_id, year))
}

fn parse_token(line: &str, line_no: usize, opts: &ImportOptions) -> Result<Token, CorpusError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        let column = if fields.len() > 3 {
            fields[..3].iter().map(|f| f.chars().count() + 1).sum::<usize>()
        } else {
            line.chars().count() + 1
        };
        return Err(CorpusError::FieldCount {
            line: line_no,
            column,
            found: fields.len(),
        });
    }
    let invalid = |column: usize, message: &str| CorpusError::InvalidToken {
        line: line_no,
        column,
        message: message.to_owned(),
    };
    if fields[0].is_empty() {
        return Err(invalid(1, "empty surface"));
    }
    let lemma_col = fields[0].chars().count() + 2;
    if fields[1].is_empty() {
        return Err(invalid(lemma_col, "empty lemma"));
    }
    if fields[2].is_empty() && !opts.allow_empty_pos {
        return Err(invalid(lemma_col + fields[1].chars().count() + 1, "empty POS tag"));
    }
    Ok(Token {
        surface: fields[0].to_owned(),
        lemma: fields[1].to_owned(),
        pos: fields[2].to_owned(),
    })
}

impl Corpus {
    /// Serializes back into the vertical format accepted by [`import_vertical`].
    pub fn to_vertical(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            out.push_str(&format!("#doc id={} year={}\n", doc.doc_id, doc.year));
            for sentence in &doc.sentences {
                for t in &sentence.tokens {
                    out.push_str(&format!("{}\t{}\t{}\n", t.surface, t.lemma, t.pos));
                }
                out.push('\n');
            }
        }
        out
    }

    /// Applies the mapping to every surface form and lemma.
    pub fn normalized(&self, map: &OrthographyMap) -> Corpus {
        let documents = self
            .documents
            .iter()
            .map(|doc| Document {
                doc_id: doc.doc_id.clone(),
                year: doc.year,
                sentences: doc
                    .sentences
                    .iter()
                    .map(|s| Sentence {
                        index: s.index,
                        tokens: s
                            .tokens
                            .iter()
                            .map(|t| Token {
                                surface: map.apply(&t.surface),
                                lemma: map.apply(&t.lemma),
                                pos: t.pos.clone(),
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        Corpus { documents }
    }

    pub fn token_count(&self) -> usize {
        self.documents
            .iter()
            .flat_map(|d| &d.sentences)
            .map(|s| s.tokens.len())
            .sum()
    }
}

/// An ordered set of orthographic replacement rules, applied leftmost-longest.
#[derive(Debug, Clone)]
pub struct OrthographyMap {
    rules: Vec<(String, String)>,
    matcher: Option<AhoCorasick>,
}

impl OrthographyMap {
    pub fn new(rules: Vec<(String, String)>) -> Result<Self, CorpusError> {
        if let Some(pos) = rules.iter().position(|(from, _)| from.is_empty()) {
            return Err(CorpusError::MalformedMapping {
                line: pos + 1,
                message: "empty from-sequence".into(),
            });
        }
        let matcher = if rules.is_empty() {
            None
        } else {
            Some(
                AhoCorasick::builder()
                    .match_kind(MatchKind::LeftmostLongest)
                    .build(rules.iter().map(|(from, _)| from.as_str()))
                    .expect("non-empty literal patterns always build"),
            )
        };
        Ok(Self { rules, matcher })
    }

    /// Long s and superscript-e umlauts.
    pub fn historical_german() -> Self {
        Self::new(vec![
            ("ſ".into(), "s".into()),
            ("a\u{0364}".into(), "ä".into()),
            ("o\u{0364}".into(), "ö".into()),
            ("u\u{0364}".into(), "ü".into()),
            ("A\u{0364}".into(), "Ä".into()),
            ("O\u{0364}".into(), "Ö".into()),
            ("U\u{0364}".into(), "Ü".into()),
        ])
        .expect("default rules are valid")
    }

    /// Parses a mapping file: one `from<TAB>to` rule per line, blank lines skipped.
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() {
                continue;
            }
            let (from, to) = line.split_once('\t').ok_or_else(|| CorpusError::MalformedMapping {
                line: i + 1,
                message: "expected from<TAB>to".into(),
            })?;
            if from.is_empty() {
                return Err(CorpusError::MalformedMapping {
                    line: i + 1,
                    message: "empty from-sequence".into(),
                });
            }
            rules.push((from.to_owned(), to.to_owned()));
        }
        Self::new(rules)
    }

    pub fn rules(&self) -> &[(String, String)] {
        &self.rules
    }

    pub fn apply(&self, text: &str) -> String {
        match &self.matcher {
            None => text.to_owned(),
            Some(ac) => {
                let replacements: Vec<&str> = self.rules.iter().map(|(_, to)| to.as_str()).collect();
                ac.replace_all(text, &replacements)
            }
        }
    }
}

pub fn normalize_orthography(text: &str, mapping: &[(String, String)]) -> Result<String, CorpusError> {
    Ok(OrthographyMap::new(mapping.to_vec())?.apply(text))
}

/// How target lemmas are compared against corpus lemmas.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum LemmaMatch {
    #[default]
    Exact,
    CaseInsensitive,
}

impl LemmaMatch {
    fn matches(self, target: &str, lemma: &str) -> bool {
        match self {
            LemmaMatch::Exact => target == lemma,
            LemmaMatch::CaseInsensitive => target.to_lowercase() == lemma.to_lowercase(),
        }
    }
}

pub fn extract_uses(corpus: &Corpus, target: &TargetSpec, period: &PeriodSpec) -> Vec<Use> {
    extract_uses_with(corpus, target, period, LemmaMatch::Exact)
}

pub fn extract_uses_with(corpus: &Corpus, target: &TargetSpec, period: &PeriodSpec, lemma_match: LemmaMatch) -> Vec<Use> {
    let mut docs: Vec<&Document> = corpus.documents.iter().filter(|d| period.contains(d.year)).collect();
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));

    let mut uses = Vec::new();
    for doc in docs {
        for (si, sentence) in doc.sentences.iter().enumerate() {
            for (ti, token) in sentence.tokens.iter().enumerate() {
                if !token_matches(token, target, lemma_match) {
                    continue;
                }
                let prev_text = si
                    .checked_sub(1)
                    .map(|p| doc.sentences[p].text())
                    .unwrap_or_default();
                let next_text = doc.sentences.get(si + 1).map(Sentence::text).unwrap_or_default();
                uses.push(Use {
                    use_id: Use::make_id(&doc.doc_id, sentence.index, ti),
                    target: target.clone(),
                    year: doc.year,
                    prev_text,
                    sent_text: join_surfaces(&sentence.tokens, Some(ti)),
                    next_text,
                    token_index: ti,
                });
            }
        }
    }
    uses
}

pub fn usage_frequency(corpus: &Corpus, target: &TargetSpec, period: &PeriodSpec) -> usize {
    usage_frequency_with(corpus, target, period, LemmaMatch::Exact)
}

pub fn usage_frequency_with(corpus: &Corpus, target: &TargetSpec, period: &PeriodSpec, lemma_match: LemmaMatch) -> usize {
    corpus
        .documents
        .iter()
        .filter(|d| period.contains(d.year))
        .flat_map(|d| &d.sentences)
        .flat_map(|s| &s.tokens)
        .filter(|t| token_matches(t, target, lemma_match))
        .count()
}

fn token_matches(token: &Token, target: &TargetSpec, lemma_match: LemmaMatch) -> bool {
    lemma_match.matches(&target.lemma, &token.lemma) && target.pos.as_ref().is_none_or(|p| *p == token.pos)
}

fn join_surfaces(tokens: &[Token], marked: Option<usize>) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        if Some(i) == marked {
            out.push_str(TARGET_OPEN);
            out.push_str(&t.surface);
            out.push_str(TARGET_CLOSE);
        } else {
            out.push_str(&t.surface);
        }
    }
    out
}

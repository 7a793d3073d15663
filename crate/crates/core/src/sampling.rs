//! Use-pair sampling and blinded annotation task construction.
//!
//! Each target gets three groups of `k` pairs: EARLIER (t₁ × t₁), LATER
//! (t₂ × t₂) and COMPARE (t₁ × t₂). Inside a group every use is drawn at most
//! once while the pool is large enough; otherwise uses may appear in at most
//! two pairs. Uniqueness is tracked per group, so a use drawn for EARLIER may
//! show up again in COMPARE.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PeriodSpec, TargetSpec, Use};
use crate::rng::{StudyRng, RNG_ALGORITHM};

/// Column order of task files.
pub const TASK_HEADER: [&str; 8] = ["pair_id", "prev1", "sent1", "next1", "prev2", "sent2", "next2", "judgment"];
/// Column order of key files.
pub const KEY_HEADER: [&str; 8] = ["pair_id", "lemma", "pos", "group", "use1_id", "use2_id", "year1", "year2"];

/// Retries spent looking for a reuse pass that repeats no unordered pair.
const REUSE_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GroupId {
    Earlier,
    Later,
    Compare,
}

impl GroupId {
    pub const ALL: [GroupId; 3] = [GroupId::Earlier, GroupId::Later, GroupId::Compare];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupId::Earlier => "EARLIER",
            GroupId::Later => "LATER",
            GroupId::Compare => "COMPARE",
        }
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupId {
    type Err = SamplingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "EARLIER" => Ok(GroupId::Earlier),
            "LATER" => Ok(GroupId::Later),
            "COMPARE" => Ok(GroupId::Compare),
            other => Err(SamplingError::Format(format!("unknown group {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsePair {
    pub pair_id: String,
    pub target: TargetSpec,
    pub group: GroupId,
    pub first: Use,
    pub second: Use,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingConfig {
    pub pairs_per_group: usize,
    pub seed: u64,
    pub allow_reuse_twice: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            pairs_per_group: 20,
            seed: 0,
            allow_reuse_twice: true,
        }
    }
}

/// One blinded row as shown to annotators.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskRow {
    pub pair_id: String,
    pub prev1: String,
    pub sent1: String,
    pub next1: String,
    pub prev2: String,
    pub sent2: String,
    pub next2: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub seed: Option<u64>,
    pub rng_algorithm: String,
    pub rows: Vec<TaskRow>,
}

/// Metadata withheld from annotators for one pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEntry {
    pub pair_id: String,
    pub lemma: String,
    pub pos: String,
    pub group: GroupId,
    pub use1_id: String,
    pub use2_id: String,
    pub year1: i32,
    pub year2: i32,
}

impl KeyEntry {
    pub fn target(&self) -> TargetSpec {
        TargetSpec {
            lemma: self.lemma.clone(),
            pos: (!self.pos.is_empty()).then(|| self.pos.clone()),
        }
    }
}

/// Server-side key, in task row order.
#[derive(Debug, Clone, Default)]
pub struct TaskKey {
    entries: Vec<KeyEntry>,
    index: HashMap<String, usize>,
}

impl PartialEq for TaskKey {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl Eq for TaskKey {}

impl Serialize for TaskKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.entries.serialize(s)
    }
}

impl<'de> Deserialize<'de> for TaskKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let entries = Vec::<KeyEntry>::deserialize(d)?;
        TaskKey::new(entries).map_err(serde::de::Error::custom)
    }
}

impl TaskKey {
    pub fn new(entries: Vec<KeyEntry>) -> Result<Self, SamplingError> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.pair_id.clone(), i).is_some() {
                return Err(SamplingError::DuplicatePairId(e.pair_id.clone()));
            }
        }
        Ok(Self { entries, index })
    }

    pub fn entries(&self) -> &[KeyEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, pair_id: &str) -> Option<&KeyEntry> {
        self.index.get(pair_id).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, pair_id: &str) -> bool {
        self.index.contains_key(pair_id)
    }

    /// Distinct targets in first-appearance order.
    pub fn targets(&self) -> Vec<TargetSpec> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .map(KeyEntry::target)
            .filter(|t| seen.insert(t.clone()))
            .collect()
    }

    pub fn pairs_for<'a>(&'a self, target: &'a TargetSpec, group: GroupId) -> impl Iterator<Item = &'a KeyEntry> + 'a {
        self.entries
            .iter()
            .filter(move |e| e.group == group && e.lemma == target.lemma && e.pos == target.pos_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SamplingError {
    #[error("insufficient uses for {target} in {group}: need {needed} pairs, pool sizes {pool_a}/{pool_b}")]
    InsufficientUses {
        target: String,
        group: GroupId,
        needed: usize,
        pool_a: usize,
        pool_b: usize,
    },
    #[error("pairs_per_group must be at least 1")]
    ZeroPairs,
    #[error("duplicate pair_id {0:?}")]
    DuplicatePairId(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for SamplingError {
    fn from(e: std::io::Error) -> Self {
        SamplingError::Io(e.to_string())
    }
}

impl From<csv::Error> for SamplingError {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => SamplingError::Io(e.to_string()),
            _ => SamplingError::Format(e.to_string()),
        }
    }
}

/// Draws `k` pairs for one group.
///
/// `pool_b == None` means a within-period group drawing both uses from
/// `pool_a`. The returned pairs carry an empty `pair_id`; ids are assigned by
/// [`build_study_pairs_with`].
pub fn sample_group(
    target: &TargetSpec,
    pool_a: &[Use],
    pool_b: Option<&[Use]>,
    k: usize,
    group: GroupId,
    allow_reuse_twice: bool,
    rng: &mut StudyRng,
) -> Result<Vec<UsePair>, SamplingError> {
    if k == 0 {
        return Err(SamplingError::ZeroPairs);
    }
    let insufficient = || SamplingError::InsufficientUses {
        target: target.to_string(),
        group,
        needed: k,
        pool_a: pool_a.len(),
        pool_b: pool_b.map_or(pool_a.len(), <[Use]>::len),
    };
    let make = |a: &Use, b: &Use| UsePair {
        pair_id: String::new(),
        target: target.clone(),
        group,
        first: a.clone(),
        second: b.clone(),
    };

    match pool_b {
        None => {
            let n = pool_a.len();
            let enough = if n >= 2 * k {
                true
            } else {
                allow_reuse_twice && n >= 2 && n >= k
            };
            if !enough {
                return Err(insufficient());
            }
            let slots = within_slots(n, k, rng);
            Ok(slots.chunks(2).map(|c| make(&pool_a[c[0]], &pool_a[c[1]])).collect())
        }
        Some(pool_b) => {
            let (na, nb) = (pool_a.len(), pool_b.len());
            let min = na.min(nb);
            let enough = if min >= k { true } else { allow_reuse_twice && min > 0 && 2 * min >= k };
            if !enough {
                return Err(insufficient());
            }
            let (sa, sb) = cross_slots(pool_a, pool_b, k, rng).ok_or_else(insufficient)?;
            Ok(sa.iter().zip(&sb).map(|(&a, &b)| make(&pool_a[a], &pool_b[b])).collect())
        }
    }
}

fn permutation(n: usize, rng: &mut StudyRng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut v);
    v
}

fn unordered(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Use indices for `k` within-period pairs, consecutive slots forming a pair.
fn within_slots(n: usize, k: usize, rng: &mut StudyRng) -> Vec<usize> {
    let mut first = permutation(n, rng);
    if n >= 2 * k {
        first.truncate(2 * k);
        return first;
    }

    let extra = 2 * k - n;
    let mut fallback = None;
    for _ in 0..REUSE_ATTEMPTS {
        let second = permutation(n, rng);
        let mut slots = first.clone();
        slots.extend_from_slice(&second[..extra]);
        let pairs: Vec<(usize, usize)> = slots.chunks(2).map(|c| (c[0], c[1])).collect();
        if pairs.iter().any(|&(a, b)| a == b) {
            continue;
        }
        let distinct: HashSet<_> = pairs.iter().map(|&(a, b)| unordered(a, b)).collect();
        if distinct.len() == pairs.len() {
            return slots;
        }
        fallback.get_or_insert(slots);
    }
    fallback.unwrap_or_else(|| {
        // Only the pair straddling the two passes can be a self-pair (odd n);
        // rotating the second pass moves a different use into that slot.
        let mut second = permutation(n, rng);
        if n % 2 == 1 && second[0] == first[n - 1] {
            second.rotate_left(1);
        }
        first.extend_from_slice(&second[..extra]);
        first
    })
}

fn slot_sequence(n: usize, k: usize, rng: &mut StudyRng) -> Vec<usize> {
    let mut seq = permutation(n, rng);
    if k > n {
        seq.extend(permutation(n, rng).into_iter().take(k - n));
    }
    seq.truncate(k);
    seq
}

fn cross_slots(pool_a: &[Use], pool_b: &[Use], k: usize, rng: &mut StudyRng) -> Option<(Vec<usize>, Vec<usize>)> {
    let reuses = k > pool_a.len() || k > pool_b.len();
    let mut fallback = None;
    for _ in 0..REUSE_ATTEMPTS {
        let sa = slot_sequence(pool_a.len(), k, rng);
        let sb = slot_sequence(pool_b.len(), k, rng);
        if sa.iter().zip(&sb).any(|(&a, &b)| pool_a[a].use_id == pool_b[b].use_id) {
            continue;
        }
        if !reuses {
            return Some((sa, sb));
        }
        let distinct: HashSet<_> = sa.iter().zip(&sb).collect();
        if distinct.len() == k {
            return Some((sa, sb));
        }
        fallback.get_or_insert((sa, sb));
    }
    fallback
}

/// Builds the 3·k pairs of one target with a generator seeded from `config.seed`.
pub fn build_study_pairs(
    target: &TargetSpec,
    uses_t1: &[Use],
    uses_t2: &[Use],
    config: &SamplingConfig,
) -> Result<Vec<UsePair>, SamplingError> {
    let mut rng = StudyRng::from_seed(config.seed);
    build_study_pairs_with(target, uses_t1, uses_t2, config, &target.lemma, &mut rng)
}

/// Builds EARLIER, LATER and COMPARE pairs (in that order) and assigns
/// `<id_prefix>-<n>` pair ids. Numbers are handed out in random order, so an
/// id says nothing about the group of its pair.
pub fn build_study_pairs_with(
    target: &TargetSpec,
    uses_t1: &[Use],
    uses_t2: &[Use],
    config: &SamplingConfig,
    id_prefix: &str,
    rng: &mut StudyRng,
) -> Result<Vec<UsePair>, SamplingError> {
    let k = config.pairs_per_group;
    let reuse = config.allow_reuse_twice;
    let mut pairs = sample_group(target, uses_t1, None, k, GroupId::Earlier, reuse, rng)?;
    pairs.extend(sample_group(target, uses_t2, None, k, GroupId::Later, reuse, rng)?);
    pairs.extend(sample_group(target, uses_t1, Some(uses_t2), k, GroupId::Compare, reuse, rng)?);

    let numbers = permutation(pairs.len(), rng);
    for (pair, n) in pairs.iter_mut().zip(numbers) {
        pair.pair_id = format!("{id_prefix}-{}", n + 1);
    }
    Ok(pairs)
}

/// Randomizes use order inside each pair, shuffles all rows together and
/// splits the result into the blinded task and its key.
pub fn build_task(pairs: Vec<UsePair>, rng: &mut StudyRng) -> Result<(AnnotationTask, TaskKey), SamplingError> {
    let mut seen = HashSet::new();
    for p in &pairs {
        if !seen.insert(p.pair_id.as_str()) {
            return Err(SamplingError::DuplicatePairId(p.pair_id.clone()));
        }
    }

    let mut pairs = pairs;
    for p in pairs.iter_mut() {
        if rng.coin() {
            std::mem::swap(&mut p.first, &mut p.second);
        }
    }
    rng.shuffle(&mut pairs);

    let rows = pairs
        .iter()
        .map(|p| TaskRow {
            pair_id: p.pair_id.clone(),
            prev1: p.first.prev_text.clone(),
            sent1: p.first.sent_text.clone(),
            next1: p.first.next_text.clone(),
            prev2: p.second.prev_text.clone(),
            sent2: p.second.sent_text.clone(),
            next2: p.second.next_text.clone(),
        })
        .collect();
    let entries = pairs
        .iter()
        .map(|p| KeyEntry {
            pair_id: p.pair_id.clone(),
            lemma: p.target.lemma.clone(),
            pos: p.target.pos_str().to_owned(),
            group: p.group,
            use1_id: p.first.use_id.clone(),
            use2_id: p.second.use_id.clone(),
            year1: p.first.year,
            year2: p.second.year,
        })
        .collect();
    let task = AnnotationTask {
        task_id: "task".to_owned(),
        seed: Some(rng.seed()),
        rng_algorithm: RNG_ALGORITHM.to_owned(),
        rows,
    };
    Ok((task, TaskKey::new(entries)?))
}

impl AnnotationTask {
    pub fn pair_ids(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|r| r.pair_id.as_str())
    }

    fn header_line(&self) -> String {
        let seed = self.seed.map_or_else(|| "none".to_owned(), |s| s.to_string());
        format!("# task_id={} seed={} rng={}\n", self.task_id, seed, self.rng_algorithm)
    }

    /// Writes the task file with an empty judgment column.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), SamplingError> {
        out.write_all(self.header_line().as_bytes())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TASK_HEADER)?;
        for r in &self.rows {
            w.write_record([&r.pair_id, &r.prev1, &r.sent1, &r.next1, &r.prev2, &r.sent2, &r.next2, ""])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("task rows are UTF-8")
    }

    /// Reads a task file; judgment cells (possibly empty) are returned per row.
    pub fn read_csv<R: Read>(input: R) -> Result<(AnnotationTask, Vec<String>), SamplingError> {
        let mut input = std::io::BufReader::new(input);
        let mut first = String::new();
        input.read_line(&mut first)?;
        let (task_id, seed, rng_algorithm, pending) = match first.strip_prefix('#') {
            Some(meta) => {
                let (id, seed, alg) = parse_header_comment(meta)?;
                (id, seed, alg, String::new())
            }
            None => ("task".to_owned(), None, String::new(), first),
        };

        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(pending.as_bytes().chain(input));
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != TASK_HEADER {
            return Err(SamplingError::Format(format!("unexpected task header {headers:?}")));
        }
        let mut rows = Vec::new();
        let mut judgments = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            rows.push(TaskRow {
                pair_id: rec[0].to_owned(),
                prev1: rec[1].to_owned(),
                sent1: rec[2].to_owned(),
                next1: rec[3].to_owned(),
                prev2: rec[4].to_owned(),
                sent2: rec[5].to_owned(),
                next2: rec[6].to_owned(),
            });
            judgments.push(rec[7].to_owned());
        }
        Ok((
            AnnotationTask {
                task_id,
                seed,
                rng_algorithm,
                rows,
            },
            judgments,
        ))
    }
}

fn parse_header_comment(meta: &str) -> Result<(String, Option<u64>, String), SamplingError> {
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    for part in meta.split_whitespace() {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| SamplingError::Format(format!("bad task header field {part:?}")))?;
        fields.insert(k, v);
    }
    let seed = match fields.get("seed") {
        None | Some(&"none") => None,
        Some(s) => Some(
            s.parse()
                .map_err(|_| SamplingError::Format(format!("bad seed {s:?} in task header")))?,
        ),
    };
    Ok((
        fields.get("task_id").unwrap_or(&"task").to_string(),
        seed,
        fields.get("rng").unwrap_or(&"").to_string(),
    ))
}

impl TaskKey {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SamplingError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(KEY_HEADER)?;
        for e in &self.entries {
            w.write_record([
                e.pair_id.as_str(),
                &e.lemma,
                &e.pos,
                e.group.as_str(),
                &e.use1_id,
                &e.use2_id,
                &e.year1.to_string(),
                &e.year2.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("key rows are UTF-8")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<TaskKey, SamplingError> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != KEY_HEADER {
            return Err(SamplingError::Format(format!("unexpected key header {headers:?}")));
        }
        let mut entries = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let year = |col: usize| {
                rec[col]
                    .parse::<i32>()
                    .map_err(|_| SamplingError::Format(format!("key row {}: bad year {:?}", i + 1, &rec[col])))
            };
            entries.push(KeyEntry {
                pair_id: rec[0].to_owned(),
                lemma: rec[1].to_owned(),
                pos: rec[2].to_owned(),
                group: rec[3].parse()?,
                use1_id: rec[4].to_owned(),
                use2_id: rec[5].to_owned(),
                year1: year(6)?,
                year2: year(7)?,
            });
        }
        TaskKey::new(entries)
    }
}

/// Every string whose presence in annotator-facing text would break blinding:
/// the key's years, the given period labels and the group names.
pub fn blinding_terms(key: &TaskKey, periods: &[PeriodSpec]) -> Vec<String> {
    let mut terms: Vec<String> = key
        .entries()
        .iter()
        .flat_map(|e| [e.year1, e.year2])
        .chain(periods.iter().flat_map(|p| [p.start_year, p.end_year]))
        .map(|y| y.to_string())
        .collect();
    terms.extend(periods.iter().map(|p| p.label.clone()).filter(|l| !l.is_empty()));
    terms.extend(GroupId::ALL.iter().map(|g| g.as_str().to_owned()));
    terms.sort();
    terms.dedup();
    terms
}

/// Returns the blinding terms found in `text`. Group names are matched
/// case-insensitively.
pub fn blinding_violations(text: &str, key: &TaskKey, periods: &[PeriodSpec]) -> Vec<String> {
    let lower = text.to_lowercase();
    blinding_terms(key, periods)
        .into_iter()
        .filter(|t| text.contains(t.as_str()) || lower.contains(&t.to_lowercase()))
        .collect()
}

//! Group means and change measures.
//!
//! For a target `w`:
//!
//! * `Δ-LATER(w)  = mean_later(w) − mean_earlier(w)`
//! * `COMPARE(w)  = mean_compare(w)`
//! * `ΔCOMPARE(w) = mean_compare(w) − mean_earlier(w)`
//!
//! A group mean is the mean of per-pair means, and a pair mean averages only
//! the non-zero judgments of that pair. Negative Δ-LATER signals innovative
//! change (uses in the later period are less related), positive signals
//! reductive change.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TargetSpec;
use crate::judgments::{JudgmentMatrix, JudgmentValue};
use crate::sampling::{GroupId, TaskKey};

pub const DEFAULT_THRESHOLD: f64 = 0.1;

pub const MEASURES_HEADER: [&str; 12] = [
    "lemma",
    "pos",
    "mean_earlier",
    "mean_later",
    "mean_compare",
    "delta_later",
    "compare",
    "delta_compare",
    "class",
    "n_pairs_e",
    "n_pairs_l",
    "n_pairs_c",
];

#[derive(Debug, Error, PartialEq)]
pub enum MeasureError {
    #[error("no {group} pairs for target {target} in the key")]
    Absent { target: String, group: GroupId },
    #[error("{which} mean is undefined for {target}")]
    UndefinedMean { target: String, which: GroupId },
    #[error("unknown measure {0:?}")]
    UnknownMeasure(String),
    #[error("I/O error: {0}")]
    Io(String),
}

/// Mean over the non-zero values; `None` when nothing remains.
pub fn pair_mean(values: &[JudgmentValue]) -> Option<f64> {
    let scores: Vec<f64> = values.iter().filter_map(|v| v.score()).collect();
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub mean: Option<f64>,
    pub n_pairs_used: usize,
}

pub fn group_mean(matrix: &JudgmentMatrix, key: &TaskKey, target: &TargetSpec, group: GroupId) -> Result<GroupMean, MeasureError> {
    let mut n_pairs = 0;
    let mut pair_means = Vec::new();
    for entry in key.pairs_for(target, group) {
        n_pairs += 1;
        let values = pair_values(matrix, &entry.pair_id);
        if let Some(m) = pair_mean(&values) {
            pair_means.push(m);
        }
    }
    if n_pairs == 0 {
        return Err(MeasureError::Absent {
            target: target.to_string(),
            group,
        });
    }
    let mean = (!pair_means.is_empty()).then(|| pair_means.iter().sum::<f64>() / pair_means.len() as f64);
    Ok(GroupMean {
        mean,
        n_pairs_used: pair_means.len(),
    })
}

fn pair_values(matrix: &JudgmentMatrix, pair_id: &str) -> Vec<JudgmentValue> {
    matrix
        .pair_index(pair_id)
        .map(|p| matrix.row(p).iter().flatten().copied().collect())
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMeans {
    pub target: TargetSpec,
    pub earlier: GroupMean,
    pub later: GroupMean,
    pub compare: GroupMean,
}

impl GroupMeans {
    pub fn compute(matrix: &JudgmentMatrix, key: &TaskKey, target: &TargetSpec) -> Result<Self, MeasureError> {
        Ok(Self {
            target: target.clone(),
            earlier: group_mean(matrix, key, target, GroupId::Earlier)?,
            later: group_mean(matrix, key, target, GroupId::Later)?,
            compare: group_mean(matrix, key, target, GroupId::Compare)?,
        })
    }

    pub fn get(&self, group: GroupId) -> &GroupMean {
        match group {
            GroupId::Earlier => &self.earlier,
            GroupId::Later => &self.later,
            GroupId::Compare => &self.compare,
        }
    }

    fn require(&self, group: GroupId) -> Result<f64, MeasureError> {
        self.get(group).mean.ok_or_else(|| MeasureError::UndefinedMean {
            target: self.target.to_string(),
            which: group,
        })
    }
}

pub fn delta_later(means: &GroupMeans) -> Result<f64, MeasureError> {
    Ok(means.require(GroupId::Later)? - means.require(GroupId::Earlier)?)
}

pub fn compare_measure(means: &GroupMeans) -> Result<f64, MeasureError> {
    means.require(GroupId::Compare)
}

pub fn delta_compare(means: &GroupMeans) -> Result<f64, MeasureError> {
    Ok(means.require(GroupId::Compare)? - means.require(GroupId::Earlier)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ChangeClass {
    Innovative,
    Reductive,
    Stable,
}

impl ChangeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ChangeClass::Innovative => "INNOVATIVE",
            ChangeClass::Reductive => "REDUCTIVE",
            ChangeClass::Stable => "STABLE",
        }
    }
}

impl fmt::Display for ChangeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChangeClass {
    type Err = MeasureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "INNOVATIVE" => Ok(ChangeClass::Innovative),
            "REDUCTIVE" => Ok(ChangeClass::Reductive),
            "STABLE" => Ok(ChangeClass::Stable),
            _ => Err(MeasureError::UnknownMeasure(s.to_owned())),
        }
    }
}

pub fn classify(delta: f64, threshold: f64) -> ChangeClass {
    if delta < -threshold {
        ChangeClass::Innovative
    } else if delta > threshold {
        ChangeClass::Reductive
    } else {
        ChangeClass::Stable
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeMeasures {
    pub target: TargetSpec,
    pub means: GroupMeans,
    pub delta_later: Option<f64>,
    pub compare: Option<f64>,
    pub delta_compare: Option<f64>,
    /// Classification of Δ-LATER.
    pub class: Option<ChangeClass>,
}

impl ChangeMeasures {
    pub fn compute(matrix: &JudgmentMatrix, key: &TaskKey, target: &TargetSpec, threshold: f64) -> Result<Self, MeasureError> {
        let means = GroupMeans::compute(matrix, key, target)?;
        let dl = delta_later(&means).ok();
        Ok(Self {
            target: target.clone(),
            delta_later: dl,
            compare: compare_measure(&means).ok(),
            delta_compare: delta_compare(&means).ok(),
            class: dl.map(|d| classify(d, threshold)),
            means,
        })
    }

    pub fn value(&self, by: MeasureName) -> Option<f64> {
        match by {
            MeasureName::DeltaLater => self.delta_later,
            MeasureName::Compare => self.compare,
            MeasureName::DeltaCompare => self.delta_compare,
        }
    }
}

/// Measures for every target in the key, in key order.
pub fn all_measures(matrix: &JudgmentMatrix, key: &TaskKey, threshold: f64) -> Result<Vec<ChangeMeasures>, MeasureError> {
    key.targets()
        .iter()
        .map(|t| ChangeMeasures::compute(matrix, key, t, threshold))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureName {
    DeltaLater,
    Compare,
    DeltaCompare,
}

impl FromStr for MeasureName {
    type Err = MeasureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "delta_later" => Ok(MeasureName::DeltaLater),
            "compare" => Ok(MeasureName::Compare),
            "delta_compare" => Ok(MeasureName::DeltaCompare),
            other => Err(MeasureError::UnknownMeasure(other.to_owned())),
        }
    }
}

/// Sorts descending by the chosen measure, ties by lemma then POS. Targets
/// whose measure is undefined go last.
pub fn rank_targets(measures: &[ChangeMeasures], by: MeasureName) -> Vec<ChangeMeasures> {
    let mut ranked = measures.to_vec();
    ranked.sort_by(|a, b| {
        let by_value = match (a.value(by), b.value(by)) {
            (Some(x), Some(y)) => y.partial_cmp(&x).unwrap_or(Ordering::Equal),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        };
        by_value.then_with(|| a.target.cmp(&b.target))
    });
    ranked
}

/// Counts of judgment values 0..=4.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: [u64; 5],
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn histogram(matrix: &JudgmentMatrix, key: &TaskKey, target: &TargetSpec, group: GroupId) -> Histogram {
    let mut h = Histogram::default();
    for entry in key.pairs_for(target, group) {
        for v in pair_values(matrix, &entry.pair_id) {
            h.counts[v.get() as usize] += 1;
        }
    }
    h
}

pub fn format_measure(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_measures_csv<W: Write>(out: W, measures: &[ChangeMeasures]) -> Result<(), MeasureError> {
    let io = |e: csv::Error| MeasureError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MEASURES_HEADER).map_err(io)?;
    for m in measures {
        w.write_record([
            m.target.lemma.clone(),
            m.target.pos_str().to_owned(),
            format_measure(m.means.earlier.mean),
            format_measure(m.means.later.mean),
            format_measure(m.means.compare.mean),
            format_measure(m.delta_later),
            format_measure(m.compare),
            format_measure(m.delta_compare),
            m.class.map(|c| c.as_str().to_owned()).unwrap_or_default(),
            m.means.earlier.n_pairs_used.to_string(),
            m.means.later.n_pairs_used.to_string(),
            m.means.compare.n_pairs_used.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| MeasureError::Io(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judgments::{assemble_matrix, DuplicatePolicy, Judgment};
    use crate::sampling::KeyEntry;

    fn v(x: i64) -> JudgmentValue {
        JudgmentValue::new(x).unwrap()
    }

    fn vals(xs: &[i64]) -> Vec<JudgmentValue> {
        xs.iter().map(|&x| v(x)).collect()
    }

    /// Builds a key and matrix where `groups[g][p]` are the judgments of pair p in group g,
    /// one annotator per position.
    fn fixture(groups: [&[&[i64]]; 3]) -> (JudgmentMatrix, TaskKey, TargetSpec) {
        let mut entries = Vec::new();
        let mut judgments = Vec::new();
        for (g, pairs) in GroupId::ALL.iter().zip(groups) {
            for (p, values) in pairs.iter().enumerate() {
                let pair_id = format!("w-{}-{p}", g.as_str().to_lowercase());
                entries.push(KeyEntry {
                    pair_id: pair_id.clone(),
                    lemma: "w".into(),
                    pos: String::new(),
                    group: *g,
                    use1_id: "a".into(),
                    use2_id: "b".into(),
                    year1: 1780,
                    year2: 1880,
                });
                for (a, &x) in values.iter().enumerate() {
                    judgments.push(Judgment {
                        annotator: format!("ann{a}"),
                        pair_id: pair_id.clone(),
                        value: v(x),
                        timestamp: None,
                    });
                }
            }
        }
        let key = TaskKey::new(entries).unwrap();
        let matrix = assemble_matrix(&judgments, &key, DuplicatePolicy::Reject).unwrap();
        (matrix, key, TargetSpec::new("w", None).unwrap())
    }

    #[test]
    fn pair_mean_examples() {
        assert!((pair_mean(&vals(&[4, 4, 3, 4, 4])).unwrap() - 3.8).abs() < 1e-12);
        assert_eq!(pair_mean(&vals(&[0, 0])), None);
        assert_eq!(pair_mean(&[]), None);
        assert_eq!(pair_mean(&vals(&[2])), Some(2.0));
    }

    #[test]
    fn group_mean_examples() {
        let (m, k, t) = fixture([&[&[4], &[4], &[3], &[4]], &[&[0, 0], &[0]], &[&[0], &[2, 3], &[0, 0]]]);
        let e = group_mean(&m, &k, &t, GroupId::Earlier).unwrap();
        assert_eq!(e.mean, Some(3.75));
        assert_eq!(e.n_pairs_used, 4);
        assert_eq!(group_mean(&m, &k, &t, GroupId::Later).unwrap().mean, None);
        let c = group_mean(&m, &k, &t, GroupId::Compare).unwrap();
        assert_eq!((c.mean, c.n_pairs_used), (Some(2.5), 1));

        let other = TargetSpec::new("x", None).unwrap();
        assert!(matches!(
            group_mean(&m, &k, &other, GroupId::Earlier),
            Err(MeasureError::Absent { .. })
        ));
    }

    fn means(e: Option<f64>, l: Option<f64>, c: Option<f64>) -> GroupMeans {
        let gm = |mean| GroupMean { mean, n_pairs_used: 1 };
        GroupMeans {
            target: TargetSpec::new("w", None).unwrap(),
            earlier: gm(e),
            later: gm(l),
            compare: gm(c),
        }
    }

    #[test]
    fn delta_and_compare_examples() {
        assert_eq!(delta_later(&means(Some(3.0), Some(3.0), None)).unwrap(), 0.0);
        assert!((delta_later(&means(Some(3.75), Some(3.0), None)).unwrap() + 0.75).abs() < 1e-12);
        assert!(matches!(
            delta_later(&means(None, Some(3.0), None)),
            Err(MeasureError::UndefinedMean { which: GroupId::Earlier, .. })
        ));
        assert_eq!(compare_measure(&means(None, None, Some(3.9))).unwrap(), 3.9);
        assert_eq!(compare_measure(&means(None, None, Some(1.8))).unwrap(), 1.8);
        assert!(compare_measure(&means(Some(2.0), Some(2.0), None)).is_err());
        assert!((delta_compare(&means(Some(3.8), None, Some(2.0))).unwrap() + 1.8).abs() < 1e-12);
        assert_eq!(delta_compare(&means(Some(2.7), None, Some(2.7))).unwrap(), 0.0);
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(-0.75, 0.1), ChangeClass::Innovative);
        assert_eq!(classify(0.39, 0.1), ChangeClass::Reductive);
        assert_eq!(classify(0.0, 0.1), ChangeClass::Stable);
        assert_eq!(classify(0.1, 0.1), ChangeClass::Stable);
        assert_eq!(classify(-0.18, 0.1), ChangeClass::Innovative);
    }

    fn cm(lemma: &str, dl: Option<f64>) -> ChangeMeasures {
        let mut m = means(Some(3.0), dl.map(|d| 3.0 + d), Some(3.0));
        m.target = TargetSpec::new(lemma, None).unwrap();
        ChangeMeasures {
            target: m.target.clone(),
            delta_later: dl,
            compare: Some(3.0),
            delta_compare: Some(0.0),
            class: dl.map(|d| classify(d, 0.1)),
            means: m,
        }
    }

    #[test]
    fn ranking() {
        let ranked = rank_targets(&[cm("a", Some(0.4)), cm("b", Some(-0.2)), cm("c", Some(0.0))], MeasureName::DeltaLater);
        let order: Vec<&str> = ranked.iter().map(|m| m.target.lemma.as_str()).collect();
        assert_eq!(order, vec!["a", "c", "b"]);

        let ranked = rank_targets(&[cm("z", Some(0.1)), cm("m", None), cm("a", Some(0.1))], MeasureName::DeltaLater);
        let order: Vec<&str> = ranked.iter().map(|m| m.target.lemma.as_str()).collect();
        assert_eq!(order, vec!["a", "z", "m"]);
    }

    #[test]
    fn histogram_counts() {
        let (m, k, t) = fixture([&[&[4, 4, 3, 0, 1]], &[&[2]], &[&[2]]]);
        assert_eq!(histogram(&m, &k, &t, GroupId::Earlier).counts, [1, 1, 0, 1, 2]);
        let empty = TargetSpec::new("none", None).unwrap();
        assert_eq!(histogram(&m, &k, &empty, GroupId::Earlier).counts, [0; 5]);
    }

    #[test]
    fn measures_csv_layout() {
        let (m, k, _) = fixture([&[&[4, 4]], &[&[3, 3]], &[&[2, 2]]]);
        let all = all_measures(&m, &k, DEFAULT_THRESHOLD).unwrap();
        let mut buf = Vec::new();
        write_measures_csv(&mut buf, &all).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), MEASURES_HEADER.join(","));
        assert_eq!(
            lines.next().unwrap(),
            "w,,4.000000,3.000000,2.000000,-1.000000,2.000000,-2.000000,INNOVATIVE,1,1,1"
        );
    }
}

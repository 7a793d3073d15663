//! Inter-annotator agreement via tie-corrected Spearman correlation.
//!
//! ρ is computed as the Pearson correlation of fractional (average) ranks, so
//! the heavy ties of a four-level scale are handled exactly. Zero judgments and
//! missing cells are removed pairwise before ranking.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::judgments::{JudgmentMatrix, JudgmentValue};
use crate::rng::StudyRng;

pub const AGREEMENT_HEADER: [&str; 5] = ["annotator_a", "annotator_b", "rho", "n", "p"];
pub const REST: &str = "REST";
pub const MEAN_PAIRWISE: &str = "MEAN_PAIRWISE";

/// Below this overlap the t approximation is replaced by a permutation test.
pub const PERMUTATION_BELOW_N: usize = 30;
pub const PERMUTATION_SHUFFLES: usize = 10_000;
const PERMUTATION_SEED: u64 = 0x5eed_0001;

#[derive(Debug, Clone, Error, PartialEq, Serialize, Deserialize)]
pub enum AgreementError {
    #[error("cannot rank an empty list")]
    Empty,
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("insufficient overlap: {n} usable positions, need at least 3")]
    InsufficientOverlap { n: usize },
    #[error("zero rank variance over {n} positions; correlation undefined")]
    ZeroVariance { n: usize },
    #[error("need at least {needed} annotators, found {found}")]
    TooFewAnnotators { needed: usize, found: usize },
    #[error("unknown annotator {0:?}")]
    UnknownAnnotator(String),
    #[error("no defined pairwise correlation")]
    NoDefinedCells,
}

/// Fractional ranks (1-based); tied values share the mean of their positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankVector(pub Vec<f64>);

impl RankVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

pub fn fractional_ranks(values: &[f64]) -> Result<RankVector, AgreementError> {
    if values.is_empty() {
        return Err(AgreementError::Empty);
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));

    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share their average
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    Ok(RankVector(ranks))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    pub n: usize,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ of two already-filtered real vectors.
pub fn rank_correlation(x: &[f64], y: &[f64]) -> Result<Correlation, AgreementError> {
    if x.len() != y.len() {
        return Err(AgreementError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(AgreementError::InsufficientOverlap { n });
    }
    let rx = fractional_ranks(x)?;
    let ry = fractional_ranks(y)?;
    let rho = pearson(rx.values(), ry.values()).ok_or(AgreementError::ZeroVariance { n })?;
    Ok(Correlation { rho, n })
}

/// Spearman's ρ over the positions where both annotators gave a non-zero judgment.
pub fn spearman(x: &[Option<JudgmentValue>], y: &[Option<JudgmentValue>]) -> Result<Correlation, AgreementError> {
    if x.len() != y.len() {
        return Err(AgreementError::LengthMismatch(x.len(), y.len()));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter_map(|(a, b)| Some((a.and_then(JudgmentValue::score)?, b.and_then(JudgmentValue::score)?)))
        .unzip();
    rank_correlation(&xs, &ys)
}

/// Two-sided p-value of ρ under the t approximation with n − 2 degrees of freedom.
pub fn p_value(rho: f64, n: usize) -> f64 {
    assert!(n >= 3, "p_value needs n >= 3");
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    if rho == 0.0 {
        return 1.0;
    }
    let df = (n - 2) as f64;
    let t2 = rho * rho * df / (1.0 - rho * rho);
    // P(|T| > t) = I_{df/(df+t²)}(df/2, 1/2)
    beta_reg(df / 2.0, 0.5, df / (df + t2)).clamp(0.0, 1.0)
}

/// Two-sided permutation p-value: the share of shuffles of `y` whose |ρ|
/// reaches the observed one, with the usual +1 correction.
pub fn permutation_p_value(x: &[f64], y: &[f64], shuffles: usize, rng: &mut StudyRng) -> Result<f64, AgreementError> {
    let observed = rank_correlation(x, y)?.rho.abs();
    let rx = fractional_ranks(x)?.0;
    let mut ry = fractional_ranks(y)?.0;
    let mut hits = 0usize;
    for _ in 0..shuffles {
        rng.shuffle(&mut ry);
        let r = pearson(&rx, &ry).unwrap_or(0.0).abs();
        if r >= observed - 1e-12 {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (shuffles + 1) as f64)
}

/// How p-values are obtained for report cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Significance {
    /// t approximation, switching to a permutation test for n below
    /// [`PERMUTATION_BELOW_N`].
    #[default]
    Auto,
    TApproximation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub rho: f64,
    pub n: usize,
    pub p: f64,
}

fn cell_stat(x: &[f64], y: &[f64], significance: Significance) -> Result<CellStat, AgreementError> {
    let c = rank_correlation(x, y)?;
    let p = match significance {
        Significance::Auto if c.n < PERMUTATION_BELOW_N => {
            let mut rng = StudyRng::from_seed(PERMUTATION_SEED);
            permutation_p_value(x, y, PERMUTATION_SHUFFLES, &mut rng)?
        }
        _ => p_value(c.rho, c.n),
    };
    Ok(CellStat { rho: c.rho, n: c.n, p })
}

fn usable_pairs(x: &[Option<JudgmentValue>], y: &[Option<f64>]) -> (Vec<f64>, Vec<f64>) {
    x.iter()
        .zip(y)
        .filter_map(|(a, b)| Some((a.and_then(JudgmentValue::score)?, (*b)?)))
        .unzip()
}

fn as_scores(col: &[Option<JudgmentValue>]) -> Vec<Option<f64>> {
    col.iter().map(|v| v.and_then(JudgmentValue::score)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseCell {
    pub a: String,
    pub b: String,
    pub result: Result<CellStat, AgreementError>,
}

/// One cell per unordered annotator pair, in (i < j) order.
pub fn pairwise_matrix(matrix: &JudgmentMatrix, significance: Significance) -> Result<Vec<PairwiseCell>, AgreementError> {
    let names = matrix.annotators();
    if names.len() < 2 {
        return Err(AgreementError::TooFewAnnotators {
            needed: 2,
            found: names.len(),
        });
    }
    let columns: Vec<Vec<Option<JudgmentValue>>> = (0..names.len()).map(|a| matrix.column(a)).collect();
    let mut cells = Vec::new();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let (x, y) = usable_pairs(&columns[i], &as_scores(&columns[j]));
            cells.push(PairwiseCell {
                a: names[i].clone(),
                b: names[j].clone(),
                result: cell_stat(&x, &y, significance),
            });
        }
    }
    Ok(cells)
}

/// Correlates one annotator against the per-pair mean of everybody else's
/// non-zero judgments.
pub fn avg_vs_rest(matrix: &JudgmentMatrix, annotator: &str, significance: Significance) -> Result<CellStat, AgreementError> {
    let (n_pairs, n_ann) = matrix.dims();
    if n_ann < 3 {
        return Err(AgreementError::TooFewAnnotators { needed: 3, found: n_ann });
    }
    let me = matrix
        .annotator_index(annotator)
        .ok_or_else(|| AgreementError::UnknownAnnotator(annotator.to_owned()))?;
    let rest: Vec<Option<f64>> = (0..n_pairs)
        .map(|p| {
            let others: Vec<f64> = matrix
                .row(p)
                .iter()
                .enumerate()
                .filter(|&(a, _)| a != me)
                .filter_map(|(_, v)| v.and_then(JudgmentValue::score))
                .collect();
            (!others.is_empty()).then(|| others.iter().sum::<f64>() / others.len() as f64)
        })
        .collect();
    let (x, y) = usable_pairs(&matrix.column(me), &rest);
    cell_stat(&x, &y, significance)
}

pub fn mean_pairwise(cells: &[PairwiseCell]) -> Result<f64, AgreementError> {
    let defined: Vec<f64> = cells.iter().filter_map(|c| c.result.as_ref().ok().map(|s| s.rho)).collect();
    if defined.is_empty() {
        return Err(AgreementError::NoDefinedCells);
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub annotators: Vec<String>,
    pub pairwise: Vec<PairwiseCell>,
    pub avg_vs_rest: Vec<(String, Result<CellStat, AgreementError>)>,
    pub mean_pairwise: Option<f64>,
}

impl AgreementReport {
    pub fn compute(matrix: &JudgmentMatrix, significance: Significance) -> Result<Self, AgreementError> {
        let pairwise = pairwise_matrix(matrix, significance)?;
        let avg_vs_rest = if matrix.annotators().len() >= 3 {
            matrix
                .annotators()
                .iter()
                .map(|a| (a.clone(), avg_vs_rest(matrix, a, significance)))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            annotators: matrix.annotators().to_vec(),
            mean_pairwise: mean_pairwise(&pairwise).ok(),
            pairwise,
            avg_vs_rest,
        })
    }

    /// Symmetric lookup of a pairwise cell.
    pub fn get(&self, a: &str, b: &str) -> Option<&Result<CellStat, AgreementError>> {
        self.pairwise
            .iter()
            .find(|c| (c.a == a && c.b == b) || (c.a == b && c.b == a))
            .map(|c| &c.result)
    }

    pub fn rest(&self, annotator: &str) -> Option<&Result<CellStat, AgreementError>> {
        self.avg_vs_rest.iter().find(|(a, _)| a == annotator).map(|(_, r)| r)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let row = |w: &mut csv::Writer<W>, a: &str, b: &str, r: &Result<CellStat, AgreementError>| {
            let (rho, n, p) = match r {
                Ok(s) => (format!("{:.6}", s.rho), s.n.to_string(), format!("{:.6e}", s.p)),
                Err(AgreementError::InsufficientOverlap { n }) | Err(AgreementError::ZeroVariance { n }) => {
                    (String::new(), n.to_string(), String::new())
                }
                Err(_) => (String::new(), String::new(), String::new()),
            };
            w.write_record([a, b, &rho, &n, &p])
        };
        w.write_record(AGREEMENT_HEADER)?;
        for c in &self.pairwise {
            row(&mut w, &c.a, &c.b, &c.result)?;
        }
        for (a, r) in &self.avg_vs_rest {
            row(&mut w, a, REST, r)?;
        }
        let defined = self.pairwise.iter().filter(|c| c.result.is_ok()).count();
        let mean = self.mean_pairwise.map(|m| format!("{m:.6}")).unwrap_or_default();
        w.write_record([MEAN_PAIRWISE, "", &mean, &defined.to_string(), ""])?;
        w.flush()
    }
}

//! Synthetic corpora with known sense structure and simulated annotators.
//!
//! Every generated use carries a hidden sense label. A simulated annotator
//! rates a pair 4 when both uses share a sense and 1 otherwise; with
//! probability `noise` the rating slips to the adjacent scale point (4 → 3,
//! 1 → 2). Feeding these judgments through the pipeline must recover the
//! change type that was built into the corpus.

use std::collections::HashMap;

use crate::corpus::{Corpus, Document, PeriodSpec, Sentence, TargetSpec, Token, Use};
use crate::judgments::{Judgment, JudgmentValue};
use crate::rng::StudyRng;
use crate::sampling::TaskKey;

const FILLER: [&str; 12] = [
    "Haus", "Garten", "Wasser", "Brief", "Stadt", "Abend", "Weg", "Freund", "Tisch", "Licht", "Feld", "Winter",
];
const SENSE_CUES: [&str; 4] = ["Himmel", "Fluch", "Werkstatt", "Zeitung"];

/// Share of uses carrying the secondary sense in each period.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTarget {
    pub target: TargetSpec,
    pub secondary_share_earlier: f64,
    pub secondary_share_later: f64,
}

impl SyntheticTarget {
    /// Monosemous early, gains an equally frequent sense later.
    pub fn innovative(lemma: &str) -> Self {
        Self::with_shares(lemma, 0.0, 0.5)
    }

    /// Two equally frequent senses early, one left later.
    pub fn reductive(lemma: &str) -> Self {
        Self::with_shares(lemma, 0.5, 0.0)
    }

    pub fn stable(lemma: &str) -> Self {
        Self::with_shares(lemma, 0.0, 0.0)
    }

    pub fn with_shares(lemma: &str, earlier: f64, later: f64) -> Self {
        Self {
            target: TargetSpec::new(lemma, Some("NN")).expect("non-empty lemma"),
            secondary_share_earlier: earlier,
            secondary_share_later: later,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// use_id → sense (0 primary, 1 secondary)
    pub senses: HashMap<String, u8>,
}

/// One three-sentence document per use; the middle sentence holds the target.
pub fn generate_corpus(
    targets: &[SyntheticTarget],
    earlier: &PeriodSpec,
    later: &PeriodSpec,
    uses_per_period: usize,
    rng: &mut StudyRng,
) -> SyntheticCorpus {
    let mut documents = Vec::new();
    let mut senses = HashMap::new();
    for (ti, t) in targets.iter().enumerate() {
        for (pi, (period, share)) in [(earlier, t.secondary_share_earlier), (later, t.secondary_share_later)]
            .into_iter()
            .enumerate()
        {
            let secondary = (share * uses_per_period as f64).round() as usize;
            let mut labels: Vec<u8> = (0..uses_per_period).map(|i| u8::from(i < secondary)).collect();
            rng.shuffle(&mut labels);
            for (ui, sense) in labels.into_iter().enumerate() {
                let doc_id = format!("syn{ti}p{pi}u{ui}");
                let span = (period.end_year - period.start_year + 1) as usize;
                let year = period.start_year + rng.below(span) as i32;
                let sentences = vec![
                    filler_sentence(0, rng),
                    target_sentence(&t.target, sense, ti, rng),
                    filler_sentence(2, rng),
                ];
                senses.insert(Use::make_id(&doc_id, 1, 1), sense);
                documents.push(Document {
                    doc_id,
                    year,
                    sentences,
                });
            }
        }
    }
    SyntheticCorpus {
        corpus: Corpus { documents },
        senses,
    }
}

fn word(surface: &str, pos: &str) -> Token {
    Token {
        surface: surface.to_owned(),
        lemma: surface.to_owned(),
        pos: pos.to_owned(),
    }
}

fn filler_sentence(index: usize, rng: &mut StudyRng) -> Sentence {
    let tokens = vec![
        word("Der", "ART"),
        word(FILLER[rng.below(FILLER.len())], "NN"),
        word("lag", "VVFIN"),
        word("still", "ADJD"),
    ];
    Sentence { index, tokens }
}

// token 1 is always the target, which fixes the use id suffix ":1:1"
fn target_sentence(target: &TargetSpec, sense: u8, target_no: usize, rng: &mut StudyRng) -> Sentence {
    let cue = SENSE_CUES[(target_no * 2 + sense as usize) % SENSE_CUES.len()];
    let tokens = vec![
        word("Das", "ART"),
        Token {
            surface: target.lemma.clone(),
            lemma: target.lemma.clone(),
            pos: target.pos_str().to_owned(),
        },
        word("erinnerte", "VVFIN"),
        word("an", "APPR"),
        word(cue, "NN"),
        word(FILLER[rng.below(FILLER.len())], "NN"),
    ];
    Sentence { index: 1, tokens }
}

/// Judgments of `annotators` for every key pair.
pub fn simulate_judgments(
    key: &TaskKey,
    senses: &HashMap<String, u8>,
    annotators: &[String],
    noise: f64,
    rng: &mut StudyRng,
) -> Vec<Judgment> {
    let mut out = Vec::with_capacity(key.len() * annotators.len());
    for entry in key.entries() {
        let same = senses.get(&entry.use1_id) == senses.get(&entry.use2_id);
        for a in annotators {
            let mut value = if same { 4 } else { 1 };
            if rng.unit() < noise {
                value = if same { 3 } else { 2 };
            }
            out.push(Judgment {
                annotator: a.clone(),
                pair_id: entry.pair_id.clone(),
                value: JudgmentValue::new(value).expect("simulated values are on the scale"),
                timestamp: None,
            });
        }
    }
    out
}

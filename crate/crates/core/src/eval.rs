//! Attachment scores in gold-tokenization and raw-text alignment modes.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::treebank::Sentence;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Gold,
    Raw,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gold" => Ok(Mode::Gold),
            "raw" => Ok(Mode::Raw),
            _ => Err(Error::Eval(format!("unknown mode '{}', expected gold or raw", s))),
        }
    }
}

/// Raw counts; corpus totals are sums of per-sentence counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub gold: usize,
    pub system: usize,
    pub aligned: usize,
    pub uas_correct: usize,
    pub las_correct: usize,
}

impl Counts {
    pub fn merge(self, other: Counts) -> Counts {
        Counts {
            gold: self.gold + other.gold,
            system: self.system + other.system,
            aligned: self.aligned + other.aligned,
            uas_correct: self.uas_correct + other.uas_correct,
            las_correct: self.las_correct + other.las_correct,
        }
    }
}

/// Precision, recall and F1 in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn new(correct: usize, system: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let p = ratio(correct, system);
        let r = ratio(correct, gold);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Prf {
            precision: 100.0 * p,
            recall: 100.0 * r,
            f1: 100.0 * f1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub uas: Prf,
    pub las: Prf,
    pub aligned_count: usize,
    pub gold_count: usize,
    pub system_count: usize,
}

impl Metrics {
    pub fn from_counts(counts: Counts) -> Self {
        Metrics {
            uas: Prf::new(counts.uas_correct, counts.system, counts.gold),
            las: Prf::new(counts.las_correct, counts.system, counts.gold),
            aligned_count: counts.aligned,
            gold_count: counts.gold,
            system_count: counts.system,
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (name, prf) in [("UAS", self.uas), ("LAS", self.las)] {
            writeln!(out, "{}\t{:.2}", name, prf.f1).unwrap();
            writeln!(out, "{}_precision\t{:.2}", name, prf.precision).unwrap();
            writeln!(out, "{}_recall\t{:.2}", name, prf.recall).unwrap();
        }
        writeln!(out, "aligned\t{}", self.aligned_count).unwrap();
        writeln!(out, "gold_words\t{}", self.gold_count).unwrap();
        writeln!(out, "system_words\t{}", self.system_count).unwrap();
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// Universal part of a relation label, `nsubj:pass` -> `nsubj`.
pub fn universal_relation(label: &str) -> &str {
    label.split(':').next().unwrap_or(label)
}

fn spans(sentence: &Sentence) -> Result<Vec<(usize, usize)>> {
    let mut with_offsets;
    let sentence = if sentence.tokens.iter().all(|t| t.char_span.is_some()) {
        sentence
    } else {
        with_offsets = sentence.clone();
        with_offsets.attach_char_offsets();
        &with_offsets
    };
    sentence
        .tokens
        .iter()
        .map(|t| {
            t.char_span.ok_or_else(|| {
                Error::Eval(format!(
                    "sentence '{}': token {} has no character offsets; use gold mode",
                    sentence.sent_id, t.index
                ))
            })
        })
        .collect()
}

/// Pairs `(gold index, system index)`, 1-based, of tokens with identical
/// character spans.
pub fn align_tokens(gold: &Sentence, system: &Sentence) -> Result<Vec<(usize, usize)>> {
    let gold_spans = spans(gold)?;
    let system_spans = spans(system)?;
    let mut pairs = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < gold_spans.len() && j < system_spans.len() {
        let (g, s) = (gold_spans[i], system_spans[j]);
        if g == s {
            pairs.push((i + 1, j + 1));
            i += 1;
            j += 1;
        } else if (g.1, g.0) < (s.1, s.0) {
            i += 1;
        } else {
            j += 1;
        }
    }
    Ok(pairs)
}

fn count_pairs(gold: &Sentence, system: &Sentence, pairs: &[(usize, usize)]) -> Counts {
    let mut gold_to_system = vec![0; gold.len() + 1];
    for &(g, s) in pairs {
        gold_to_system[g] = s;
    }
    let mut counts = Counts {
        gold: gold.len(),
        system: system.len(),
        aligned: pairs.len(),
        ..Counts::default()
    };
    for &(g, s) in pairs {
        let gt = &gold.tokens[g - 1];
        let st = &system.tokens[s - 1];
        let head_ok = if gt.head == 0 {
            st.head == 0
        } else {
            st.head != 0 && gold_to_system[gt.head] == st.head
        };
        if head_ok {
            counts.uas_correct += 1;
            if universal_relation(&gt.deprel) == universal_relation(&st.deprel) {
                counts.las_correct += 1;
            }
        }
    }
    counts
}

pub fn score_sentence(gold: &Sentence, system: &Sentence, mode: Mode) -> Result<Counts> {
    let pairs = match mode {
        Mode::Gold => {
            if gold.len() != system.len() {
                return Err(Error::Eval(format!(
                    "sentence '{}': gold has {} words, system has {}",
                    gold.sent_id,
                    gold.len(),
                    system.len()
                )));
            }
            (1..=gold.len()).map(|i| (i, i)).collect()
        }
        Mode::Raw => align_tokens(gold, system)?,
    };
    Ok(count_pairs(gold, system, &pairs))
}

/// Corpus-level scores. Sentences are paired by position.
pub fn score(gold: &[Sentence], system: &[Sentence], mode: Mode) -> Result<Metrics> {
    if gold.len() != system.len() {
        return Err(Error::Eval(format!(
            "gold has {} sentences, system has {}",
            gold.len(),
            system.len()
        )));
    }
    let mut total = Counts::default();
    for (g, s) in gold.iter().zip(system) {
        total = total.merge(score_sentence(g, s, mode)?);
    }
    Ok(Metrics::from_counts(total))
}

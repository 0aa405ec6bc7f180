//! Scoring of match/mismatch responses with free-text explanations.
//!
//! A response starts (somewhere) with a label token `[[1]]` or `[[0]]`; the
//! text after the first token is the explanation. Matching accuracy is
//! reported per (dataset, language) plus a micro-averaged "Avg Acc", split
//! by polarity, and explanation similarity against reference texts is
//! binned over `[0, 0.2) … [0.8, 1]`.

mod embedder;
mod fixed;
mod report;
mod similarity;

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed_store::StoreError;
use crate::jsonl::JsonlError;

pub use embedder::{embed_text, tokenize, FallbackEmbedder, FALLBACK_DIM};
pub use fixed::Fixed;
pub use report::{evaluate, evaluate_records, LanguageReport, XbenchReport};
pub use similarity::{explanation_similarity, pair_similarities, similarity_bin, SimilarityReport, VectorSource, BIN_EDGES};

#[derive(Debug, Error)]
pub enum XbenchError {
    #[error("no prediction records")]
    EmptyInput,
    #[error("{language}: no {polarity} samples")]
    EmptyPolarity { language: Language, polarity: &'static str },
    #[error("{file}: line {line}: {message}")]
    Schema { file: String, line: usize, message: String },
    #[error("no reference explanation for sample {0:?}")]
    MissingReference(String),
    #[error("no vector for sample {0:?}")]
    MissingVector(String),
    #[error("{0} records but {1} parses")]
    LengthMismatch(usize, usize),
    #[error("vectors: {0}")]
    Store(#[from] StoreError),
}

impl XbenchError {
    fn schema(file: &str, err: JsonlError) -> Self {
        match err {
            JsonlError::Parse { line, source } => {
                XbenchError::Schema { file: file.to_string(), line, message: source.to_string() }
            }
            other => XbenchError::Schema { file: file.to_string(), line: 0, message: other.to_string() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Language {
    #[serde(rename = "EN")]
    En,
    #[serde(rename = "ZH")]
    Zh,
}

impl Language {
    pub const ALL: [Language; 2] = [Language::En, Language::Zh];

    pub fn code(self) -> &'static str {
        match self {
            Language::En => "EN",
            Language::Zh => "ZH",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "EN" | "en" => Ok(Language::En),
            "ZH" | "zh" => Ok(Language::Zh),
            _ => Err(format!("unknown language {s:?}")),
        }
    }
}

/// The closed set of benchmark datasets, in table column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetTag {
    #[serde(rename = "MAP")]
    Map,
    #[serde(rename = "SetVL-480K")]
    SetVl480k,
    #[serde(rename = "University-1652")]
    University1652,
    #[serde(rename = "VIGOR")]
    Vigor,
}

impl DatasetTag {
    pub const ALL: [DatasetTag; 4] = [DatasetTag::Map, DatasetTag::SetVl480k, DatasetTag::University1652, DatasetTag::Vigor];

    pub fn name(self) -> &'static str {
        match self {
            DatasetTag::Map => "MAP",
            DatasetTag::SetVl480k => "SetVL-480K",
            DatasetTag::University1652 => "University-1652",
            DatasetTag::Vigor => "VIGOR",
        }
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        DatasetTag::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| format!("unknown dataset {s:?}"))
    }
}

/// One model response line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub dataset: DatasetTag,
    pub language: Language,
    pub gt_label: u8,
    pub raw_text: String,
}

/// One reference explanation line, keyed by sample id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub id: String,
    pub reference_explanation: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrediction {
    /// `None` when the text has no label token.
    pub label: Option<u8>,
    pub explanation: String,
}

impl ParsedPrediction {
    pub fn is_parsed(&self) -> bool {
        self.label.is_some()
    }

    /// Unparseable responses are never correct.
    pub fn is_correct(&self, gt_label: u8) -> bool {
        self.label == Some(gt_label)
    }

    /// Canonical response text, `[[l]]\n\nexplanation`.
    pub fn render(&self) -> String {
        match self.label {
            Some(l) if self.explanation.is_empty() => format!("[[{l}]]"),
            Some(l) => format!("[[{l}]]\n\n{}", self.explanation),
            None => self.explanation.clone(),
        }
    }
}

static LABEL_TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[\[([01])\]\]").unwrap());

pub fn parse_prediction(raw_text: &str) -> ParsedPrediction {
    match LABEL_TOKEN.captures(raw_text) {
        Some(c) => {
            let whole = c.get(0).unwrap();
            ParsedPrediction {
                label: Some(if &c[1] == "1" { 1 } else { 0 }),
                explanation: raw_text[whole.end()..].trim().to_string(),
            }
        }
        None => ParsedPrediction { label: None, explanation: String::new() },
    }
}

/// Correct and total counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += correct as usize;
    }

    /// Unrounded percentage.
    pub fn percent(&self) -> f64 {
        self.correct as f64 * 100.0 / self.total as f64
    }

    /// Percentage with two decimals, half away from zero, exact from counts.
    pub fn percent2(&self) -> Fixed {
        Fixed::from_ratio(self.correct as u64 * 100, self.total as u64, 2)
    }
}

/// Accuracy for one language.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub language: Language,
    /// Indexed like [`DatasetTag::ALL`]; absent datasets have `total == 0`.
    pub per_dataset: [Tally; 4],
    pub overall: Tally,
}

impl AccuracyReport {
    pub fn dataset(&self, tag: DatasetTag) -> Tally {
        self.per_dataset[tag as usize]
    }

    /// Micro-average: total correct over total pairs.
    pub fn avg_acc(&self) -> f64 {
        self.overall.percent()
    }

    /// Sample-weighted mean of per-dataset accuracies; equals [`Self::avg_acc`].
    pub fn weighted_mean(&self) -> f64 {
        let present = self.per_dataset.iter().filter(|t| t.total > 0);
        present.map(|t| t.percent() * t.total as f64).sum::<f64>() / self.overall.total as f64
    }
}

fn check_lengths(records: &[PredictionRecord], parses: &[ParsedPrediction]) -> Result<(), XbenchError> {
    if records.len() != parses.len() {
        return Err(XbenchError::LengthMismatch(records.len(), parses.len()));
    }
    if records.is_empty() {
        return Err(XbenchError::EmptyInput);
    }
    Ok(())
}

/// One report per language present, in [`Language::ALL`] order.
pub fn matching_accuracy(records: &[PredictionRecord], parses: &[ParsedPrediction]) -> Result<Vec<AccuracyReport>, XbenchError> {
    check_lengths(records, parses)?;
    let mut out: Vec<AccuracyReport> = Vec::new();
    for language in Language::ALL {
        let mut rep = AccuracyReport { language, per_dataset: [Tally::default(); 4], overall: Tally::default() };
        for (r, p) in records.iter().zip(parses).filter(|(r, _)| r.language == language) {
            let ok = p.is_correct(r.gt_label);
            rep.per_dataset[r.dataset as usize].add(ok);
            rep.overall.add(ok);
        }
        if rep.overall.total > 0 {
            out.push(rep);
        }
    }
    Ok(out)
}

/// Accuracy split by ground-truth polarity for one language.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolarityReport {
    pub language: Language,
    pub positive: Tally,
    pub negative: Tally,
}

impl PolarityReport {
    /// Difference of the two printed accuracies.
    pub fn pos_minus_neg(&self) -> Fixed {
        self.positive.percent2() - self.negative.percent2()
    }
}

pub fn pos_neg_breakdown(records: &[PredictionRecord], parses: &[ParsedPrediction]) -> Result<Vec<PolarityReport>, XbenchError> {
    check_lengths(records, parses)?;
    let mut out = Vec::new();
    for language in Language::ALL {
        let mut rep = PolarityReport { language, positive: Tally::default(), negative: Tally::default() };
        for (r, p) in records.iter().zip(parses).filter(|(r, _)| r.language == language) {
            let ok = p.is_correct(r.gt_label);
            if r.gt_label == 1 {
                rep.positive.add(ok);
            } else {
                rep.negative.add(ok);
            }
        }
        match (rep.positive.total, rep.negative.total) {
            (0, 0) => continue,
            (0, _) => return Err(XbenchError::EmptyPolarity { language, polarity: "positive" }),
            (_, 0) => return Err(XbenchError::EmptyPolarity { language, polarity: "negative" }),
            _ => out.push(rep),
        }
    }
    Ok(out)
}

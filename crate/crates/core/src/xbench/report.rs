use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde_json::{json, Value};

use super::{
    explanation_similarity, matching_accuracy, pair_similarities, parse_prediction, pos_neg_breakdown, AccuracyReport,
    DatasetTag, Fixed, Language, PolarityReport, PredictionRecord, ReferenceRecord, SimilarityReport, XbenchError,
};
use crate::embed_store::read_embeddings;
use crate::jsonl::read_jsonl_numbered;

use super::VectorSource;

const BIN_LABELS: [&str; 5] = ["0.0-0.2", "0.2-0.4", "0.4-0.6", "0.6-0.8", "0.8-1.0"];

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageReport {
    pub language: Language,
    pub pairs: usize,
    pub unparseable: usize,
    pub accuracy: AccuracyReport,
    pub polarity: PolarityReport,
    pub similarity: SimilarityReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct XbenchReport {
    pub embedder: String,
    pub languages: Vec<LanguageReport>,
}

fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>, XbenchError> {
    let file = path.display().to_string();
    let rows = read_jsonl_numbered::<PredictionRecord>(path).map_err(|e| XbenchError::schema(&file, e))?;
    let mut ids = HashSet::with_capacity(rows.len());
    let mut out = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        let bad = |message: String| XbenchError::Schema { file: file.clone(), line, message };
        if r.gt_label > 1 {
            return Err(bad(format!("gt_label must be 0 or 1, got {}", r.gt_label)));
        }
        if !ids.insert(r.id.clone()) {
            return Err(bad(format!("duplicate id {:?}", r.id)));
        }
        out.push(r);
    }
    if out.is_empty() {
        return Err(XbenchError::EmptyInput);
    }
    Ok(out)
}

fn load_references(path: &Path) -> Result<HashMap<String, String>, XbenchError> {
    let file = path.display().to_string();
    let rows = read_jsonl_numbered::<ReferenceRecord>(path).map_err(|e| XbenchError::schema(&file, e))?;
    let mut out = HashMap::with_capacity(rows.len());
    for (line, r) in rows {
        if out.insert(r.id.clone(), r.reference_explanation).is_some() {
            return Err(XbenchError::Schema { file, line, message: format!("duplicate id {:?}", r.id) });
        }
    }
    Ok(out)
}

/// Scores prediction and reference files. `vectors` is a pair of `.emb`
/// files (predictions, references); `None` selects the fallback embedder.
pub fn evaluate(predictions: &Path, references: &Path, vectors: Option<(&Path, &Path)>) -> Result<XbenchReport, XbenchError> {
    let records = load_predictions(predictions)?;
    let refs = load_references(references)?;
    let source = match vectors {
        None => VectorSource::Fallback,
        Some((p, r)) => VectorSource::Files { predictions: read_embeddings(p)?, references: read_embeddings(r)? },
    };
    evaluate_records(&records, &refs, &source)
}

pub fn evaluate_records(
    records: &[PredictionRecord],
    references: &HashMap<String, String>,
    source: &VectorSource,
) -> Result<XbenchReport, XbenchError> {
    let parses: Vec<_> = records.iter().map(|r| parse_prediction(&r.raw_text)).collect();
    let accuracy = matching_accuracy(records, &parses)?;
    let polarity = pos_neg_breakdown(records, &parses)?;
    let sims = pair_similarities(records, &parses, references, source)?;
    let similarity = explanation_similarity(records, &sims)?;
    let languages = accuracy
        .into_iter()
        .zip(polarity)
        .zip(similarity)
        .map(|((accuracy, polarity), similarity)| LanguageReport {
            language: accuracy.language,
            pairs: accuracy.overall.total,
            unparseable: similarity.unparseable,
            accuracy,
            polarity,
            similarity,
        })
        .collect();
    let embedder = match source {
        VectorSource::Fallback => format!("fallback-hash-{}", super::FALLBACK_DIM),
        VectorSource::Files { .. } => "vectors-file".to_string(),
    };
    Ok(XbenchReport { embedder, languages })
}

fn opt(x: Option<Fixed>) -> String {
    x.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn opt_json(x: Option<Fixed>) -> Value {
    x.map_or(Value::Null, |v| json!(v))
}

fn render_table(title: &str, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = format!("{title}\n");
    out += &line(header.to_vec());
    out += &line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect());
    for row in rows {
        out += &line(row.iter().map(String::as_str).collect());
    }
    out
}

impl XbenchReport {
    pub fn language(&self, language: Language) -> Option<&LanguageReport> {
        self.languages.iter().find(|l| l.language == language)
    }

    pub fn to_text(&self) -> String {
        let mut acc_header = vec!["Language"];
        acc_header.extend(DatasetTag::ALL.iter().map(|t| t.name()));
        acc_header.push("Avg Acc");
        let acc_rows: Vec<Vec<String>> = self
            .languages
            .iter()
            .map(|l| {
                let mut row = vec![l.language.to_string()];
                for t in DatasetTag::ALL {
                    let tally = l.accuracy.dataset(t);
                    row.push(if tally.total == 0 { "-".into() } else { tally.percent2().to_string() });
                }
                row.push(l.accuracy.overall.percent2().to_string());
                row
            })
            .collect();

        let mut sim_header = vec!["Language"];
        sim_header.extend(BIN_LABELS);
        sim_header.push("Avg Sim");
        let sim_rows: Vec<Vec<String>> = self
            .languages
            .iter()
            .map(|l| {
                let s = &l.similarity;
                let mut row = vec![l.language.to_string()];
                row.extend((0..5).map(|i| s.bin_percent(i).map_or_else(|| "-".into(), |p| format!("{p}%"))));
                row.push(opt(s.avg()));
                row
            })
            .collect();

        let pn_header = ["Language", "Pos Acc", "Neg Acc", "Pos-Neg", "Pos Sim", "Neg Sim", "Pos-Neg"];
        let pn_rows: Vec<Vec<String>> = self
            .languages
            .iter()
            .map(|l| {
                let (p, s) = (&l.polarity, &l.similarity);
                vec![
                    l.language.to_string(),
                    p.positive.percent2().to_string(),
                    p.negative.percent2().to_string(),
                    p.pos_minus_neg().to_string(),
                    opt(s.pos()),
                    opt(s.neg()),
                    opt(s.pos_minus_neg()),
                ]
            })
            .collect();

        let count_header = ["Language", "Pairs", "Positive", "Negative", "Scored", "Unparseable"];
        let count_rows: Vec<Vec<String>> = self
            .languages
            .iter()
            .map(|l| {
                vec![
                    l.language.to_string(),
                    l.pairs.to_string(),
                    l.polarity.positive.total.to_string(),
                    l.polarity.negative.total.to_string(),
                    l.similarity.scored.to_string(),
                    l.unparseable.to_string(),
                ]
            })
            .collect();

        [
            render_table("Matching accuracy (%)", &acc_header, &acc_rows),
            render_table(&format!("Explanation similarity ({})", self.embedder), &sim_header, &sim_rows),
            render_table("Positive and negative samples", &pn_header, &pn_rows),
            render_table("Counts", &count_header, &count_rows),
        ]
        .join("\n")
    }

    pub fn to_json_value(&self) -> Value {
        let languages: Vec<Value> = self
            .languages
            .iter()
            .map(|l| {
                let datasets: serde_json::Map<String, Value> = DatasetTag::ALL
                    .iter()
                    .filter(|&&t| l.accuracy.dataset(t).total > 0)
                    .map(|&t| {
                        let tally = l.accuracy.dataset(t);
                        (t.name().to_string(), json!({"correct": tally.correct, "total": tally.total, "accuracy": tally.percent2()}))
                    })
                    .collect();
                let s = &l.similarity;
                let bins: Vec<Value> = (0..5)
                    .map(|i| json!({"range": BIN_LABELS[i], "count": s.bins[i], "percent": opt_json(s.bin_percent(i))}))
                    .collect();
                let p = &l.polarity;
                json!({
                    "language": l.language,
                    "pairs": l.pairs,
                    "unparseable": l.unparseable,
                    "accuracy": {
                        "datasets": datasets,
                        "correct": l.accuracy.overall.correct,
                        "avg_acc": l.accuracy.overall.percent2(),
                    },
                    "polarity": {
                        "pos": {"correct": p.positive.correct, "total": p.positive.total, "accuracy": p.positive.percent2()},
                        "neg": {"correct": p.negative.correct, "total": p.negative.total, "accuracy": p.negative.percent2()},
                        "pos_minus_neg": p.pos_minus_neg(),
                    },
                    "similarity": {
                        "scored": s.scored,
                        "bins": bins,
                        "avg_sim": opt_json(s.avg()),
                        "pos_sim": opt_json(s.pos()),
                        "neg_sim": opt_json(s.neg()),
                        "pos_minus_neg": opt_json(s.pos_minus_neg()),
                    },
                })
            })
            .collect();
        json!({"embedder": self.embedder, "languages": languages})
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("report serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    const PRED: &str = r#"{"id":"a","dataset":"MAP","language":"EN","gt_label":1,"raw_text":"[[1]]\n\nroads align"}
{"id":"b","dataset":"MAP","language":"EN","gt_label":0,"raw_text":"no idea"}
"#;
    const REFS: &str = r#"{"id":"a","reference_explanation":"roads align"}
{"id":"b","reference_explanation":"different rivers"}
"#;

    #[test]
    fn small_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "p.jsonl", PRED);
        let r = write(dir.path(), "r.jsonl", REFS);
        let rep = evaluate(&p, &r, None).unwrap();
        let en = rep.language(Language::En).unwrap();
        assert_eq!((en.pairs, en.unparseable), (2, 1));
        assert_eq!(en.accuracy.overall.percent2().to_string(), "50.00");
        assert_eq!(en.similarity.avg().unwrap().to_string(), "1.0000");
        let text = rep.to_text();
        assert!(text.contains("Avg Acc"));
        assert!(text.contains("100.0%"));
        let v: Value = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(v["languages"][0]["polarity"]["pos_minus_neg"], json!(100.0));
    }

    #[test]
    fn schema_errors_name_lines() {
        let dir = tempfile::tempdir().unwrap();
        let r = write(dir.path(), "r.jsonl", REFS);
        let bad_tag = PRED.replacen("\"MAP\",\"language\":\"EN\",\"gt_label\":0", "\"CVUSA\",\"language\":\"EN\",\"gt_label\":0", 1);
        let p = write(dir.path(), "p.jsonl", &bad_tag);
        match evaluate(&p, &r, None) {
            Err(XbenchError::Schema { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("CVUSA"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let p = write(dir.path(), "p.jsonl", &PRED.replace("\"gt_label\":0", "\"gt_label\":2"));
        assert!(matches!(evaluate(&p, &r, None), Err(XbenchError::Schema { line: 2, .. })));
        let p = write(dir.path(), "p.jsonl", "");
        assert!(matches!(evaluate(&p, &r, None), Err(XbenchError::EmptyInput)));
        let p = write(dir.path(), "p.jsonl", PRED);
        let r2 = write(dir.path(), "r2.jsonl", &format!("{REFS}{{\"id\":\"a\",\"reference_explanation\":\"x\"}}\n"));
        assert!(matches!(evaluate(&p, &r2, None), Err(XbenchError::Schema { line: 3, .. })));
    }

    #[test]
    fn table_layout() {
        let t = render_table("T", &["a", "bbb"], &[vec!["xx".into(), "y".into()]]);
        assert_eq!(t, "T\na   bbb\n--  ---\nxx  y\n");
    }
}

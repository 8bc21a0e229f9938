//! Multiple-choice datasets, run scoring, and report tables.
//!
//! Items are letter-keyed multiple choice (`A`..`E`), which covers the
//! medical QA benchmarks this pipeline targets; yes/no datasets map to a
//! two-option item (`A` = yes, `B` = no) at load time. Scoring reports
//! plain accuracy and, when per-item fact-check scores are supplied,
//! accuracy over the subset whose responses passed the fact check
//! (score exactly 1.0). Unanswered items always count as incorrect: an
//! abstaining model does not get a smaller denominator.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One multiple-choice item. Options are contiguous letters from `A`,
/// two to five of them, and `gold` is always one of the letters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqItem {
    pub id: String,
    pub question: String,
    pub options: BTreeMap<char, String>,
    pub gold: char,
}

impl McqItem {
    pub fn validate(&self) -> Result<()> {
        let invalid = |detail: String| Error::InvalidItem {
            id: self.id.clone(),
            detail,
        };
        if self.id.is_empty() {
            return Err(Error::InvalidItem {
                id: String::new(),
                detail: "empty id".to_owned(),
            });
        }
        if self.question.trim().is_empty() {
            return Err(invalid("empty question".to_owned()));
        }
        if !(2..=5).contains(&self.options.len()) {
            return Err(invalid(format!(
                "needs 2-5 options, has {}",
                self.options.len()
            )));
        }
        for (i, letter) in self.options.keys().enumerate() {
            let expected = (b'A' + i as u8) as char;
            if *letter != expected {
                return Err(invalid(format!(
                    "option letters must be contiguous from A, found {letter:?} where {expected:?} belongs"
                )));
            }
        }
        if !self.options.contains_key(&self.gold) {
            return Err(invalid(format!("gold {:?} is not an option", self.gold)));
        }
        Ok(())
    }

    pub fn letters(&self) -> Vec<char> {
        self.options.keys().copied().collect()
    }

    /// `(A) first option (B) second option ...` on one line, the shape
    /// the answer prompt's OPTIONS block uses.
    pub fn options_line(&self) -> String {
        self.options
            .iter()
            .map(|(letter, text)| format!("({letter}) {text}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// The context a fact check of an answer to this question runs in:
    /// the question followed by the available choices.
    pub fn context_string(&self) -> String {
        format!(
            "{} The available choices were: {}",
            self.question,
            self.options_line()
        )
    }
}

#[derive(Deserialize)]
struct RawItem {
    id: String,
    question: String,
    #[serde(default)]
    options: Option<BTreeMap<String, String>>,
    gold: String,
}

impl RawItem {
    fn into_item(self) -> Result<McqItem> {
        let invalid = |id: &str, detail: String| Error::InvalidItem {
            id: id.to_owned(),
            detail,
        };
        let options: BTreeMap<char, String> = match self.options {
            Some(raw) => {
                let mut out = BTreeMap::new();
                for (key, text) in raw {
                    let mut chars = key.chars();
                    let letter = match (chars.next(), chars.next()) {
                        (Some(c @ 'A'..='Z'), None) => c,
                        _ => {
                            return Err(invalid(
                                &self.id,
                                format!("option key {key:?} is not a single letter A-Z"),
                            ))
                        }
                    };
                    out.insert(letter, text);
                }
                out
            }
            // Yes/no datasets carry no options; synthesize the pair.
            None => BTreeMap::from([('A', "yes".to_owned()), ('B', "no".to_owned())]),
        };
        let gold_trimmed = self.gold.trim();
        let gold = {
            let mut chars = gold_trimmed.chars();
            match (chars.next(), chars.next()) {
                (Some(c @ 'A'..='Z'), None) if options.contains_key(&c) => c,
                _ => {
                    // Gold given as an option's text (e.g. "yes").
                    let matches: Vec<char> = options
                        .iter()
                        .filter(|(_, text)| text.eq_ignore_ascii_case(gold_trimmed))
                        .map(|(letter, _)| *letter)
                        .collect();
                    match matches.as_slice() {
                        [letter] => *letter,
                        [] => {
                            return Err(invalid(
                                &self.id,
                                format!("gold {gold_trimmed:?} matches no option"),
                            ))
                        }
                        _ => {
                            return Err(invalid(
                                &self.id,
                                format!("gold {gold_trimmed:?} matches several options"),
                            ))
                        }
                    }
                }
            }
        };
        let item = McqItem {
            id: self.id,
            question: self.question,
            options,
            gold,
        };
        item.validate()?;
        Ok(item)
    }
}

pub fn load_dataset_from_reader<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<McqItem>> {
    let mut items = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawItem = serde_json::from_str(&line).map_err(|e| Error::Jsonl {
            path: origin.to_owned(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        let item = raw.into_item()?;
        if !seen.insert(item.id.clone()) {
            return Err(Error::DuplicateId { id: item.id });
        }
        items.push(item);
    }
    Ok(items)
}

pub fn load_dataset(path: &Path) -> Result<Vec<McqItem>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_dataset_from_reader(BufReader::new(f), path)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub filtered_total: usize,
    pub filtered_correct: usize,
    /// Accuracy over items whose response passed the fact check; absent
    /// when nothing passed or no scores were supplied.
    pub filtered_accuracy: Option<f64>,
}

/// Score a run. `predictions` maps item id to the parsed answer (`None`
/// for an explicit non-answer); ids absent from the map count as
/// unanswered too. `leaf_scores` maps item id to the response's
/// fact-check score and selects the filtered subset at exactly 1.0.
/// Keys that name no item are errors: a prediction for an unknown id
/// means the run and dataset are out of sync.
pub fn score_run(
    items: &[McqItem],
    predictions: &BTreeMap<String, Option<char>>,
    leaf_scores: Option<&BTreeMap<String, f64>>,
) -> Result<EvalMetrics> {
    if items.is_empty() {
        return Err(Error::EmptyInput {
            what: "dataset".to_owned(),
        });
    }
    let ids: BTreeSet<&str> = items.iter().map(|i| i.id.as_str()).collect();
    for key in predictions.keys() {
        if !ids.contains(key.as_str()) {
            return Err(Error::UnknownId { id: key.clone() });
        }
    }
    if let Some(scores) = leaf_scores {
        for key in scores.keys() {
            if !ids.contains(key.as_str()) {
                return Err(Error::UnknownId { id: key.clone() });
            }
        }
    }
    let mut correct = 0usize;
    let mut filtered_total = 0usize;
    let mut filtered_correct = 0usize;
    for item in items {
        let is_correct = predictions.get(&item.id).copied().flatten() == Some(item.gold);
        if is_correct {
            correct += 1;
        }
        let passed = leaf_scores
            .and_then(|scores| scores.get(&item.id))
            .is_some_and(|score| *score == 1.0);
        if passed {
            filtered_total += 1;
            if is_correct {
                filtered_correct += 1;
            }
        }
    }
    Ok(EvalMetrics {
        total: items.len(),
        correct,
        accuracy: correct as f64 / items.len() as f64,
        filtered_total,
        filtered_correct,
        filtered_accuracy: (filtered_total > 0)
            .then(|| filtered_correct as f64 / filtered_total as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub dataset: String,
    #[serde(flatten)]
    pub metrics: EvalMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<ReportFormat> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidRequest {
                detail: format!("unknown report format {other:?} (expected text, json, or csv)"),
            }),
        }
    }
}

fn accuracy_mean(rows: &[DatasetMetrics]) -> f64 {
    rows.iter().map(|r| r.metrics.accuracy).sum::<f64>() / rows.len() as f64
}

/// Unweighted mean over the datasets that have a filtered accuracy.
fn filtered_mean(rows: &[DatasetMetrics]) -> Option<f64> {
    let values: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.metrics.filtered_accuracy)
        .collect();
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

#[derive(Serialize)]
struct ReportJson<'a> {
    datasets: &'a [DatasetMetrics],
    average: AverageJson,
}

#[derive(Serialize)]
struct AverageJson {
    accuracy: f64,
    filtered_accuracy: Option<f64>,
}

/// Render per-dataset metrics plus an unweighted Average row.
pub fn emit_report(rows: &[DatasetMetrics], format: ReportFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::EmptyInput {
            what: "report rows".to_owned(),
        });
    }
    match format {
        ReportFormat::Json => {
            let body = ReportJson {
                datasets: rows,
                average: AverageJson {
                    accuracy: accuracy_mean(rows),
                    filtered_accuracy: filtered_mean(rows),
                },
            };
            Ok(format!("{}\n", serde_json::to_string_pretty(&body)?))
        }
        ReportFormat::Csv => {
            let mut out = String::from(
                "dataset,total,correct,accuracy,filtered_total,filtered_correct,filtered_accuracy\n",
            );
            for r in rows {
                let filtered = r
                    .metrics
                    .filtered_accuracy
                    .map(|v| v.to_string())
                    .unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    csv_field(&r.dataset),
                    r.metrics.total,
                    r.metrics.correct,
                    r.metrics.accuracy,
                    r.metrics.filtered_total,
                    r.metrics.filtered_correct,
                    filtered
                ));
            }
            let filtered = filtered_mean(rows).map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("Average,,,{},,,{}\n", accuracy_mean(rows), filtered));
            Ok(out)
        }
        ReportFormat::Text => {
            let mut table: Vec<[String; 7]> = vec![[
                "dataset".to_owned(),
                "total".to_owned(),
                "correct".to_owned(),
                "accuracy".to_owned(),
                "f_total".to_owned(),
                "f_correct".to_owned(),
                "f_accuracy".to_owned(),
            ]];
            for r in rows {
                table.push([
                    r.dataset.clone(),
                    r.metrics.total.to_string(),
                    r.metrics.correct.to_string(),
                    format!("{:.4}", r.metrics.accuracy),
                    r.metrics.filtered_total.to_string(),
                    r.metrics.filtered_correct.to_string(),
                    r.metrics
                        .filtered_accuracy
                        .map(|v| format!("{v:.4}"))
                        .unwrap_or_else(|| "-".to_owned()),
                ]);
            }
            table.push([
                "Average".to_owned(),
                "-".to_owned(),
                "-".to_owned(),
                format!("{:.4}", accuracy_mean(rows)),
                "-".to_owned(),
                "-".to_owned(),
                filtered_mean(rows)
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "-".to_owned()),
            ]);
            let mut widths = [0usize; 7];
            for row in &table {
                for (w, cell) in widths.iter_mut().zip(row) {
                    *w = (*w).max(cell.chars().count());
                }
            }
            let mut out = String::new();
            for row in &table {
                let line: Vec<String> = row
                    .iter()
                    .enumerate()
                    .map(|(i, cell)| {
                        if i == 0 {
                            format!("{cell:<width$}", width = widths[0])
                        } else {
                            format!("{cell:>width$}", width = widths[i])
                        }
                    })
                    .collect();
                out.push_str(line.join("  ").trim_end());
                out.push('\n');
            }
            Ok(out)
        }
    }
}

fn csv_field(value: &str) -> String {
    if value.contains([',', '"', '\n']) {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, gold: char) -> McqItem {
        McqItem {
            id: id.to_owned(),
            question: format!("Question {id}?"),
            options: BTreeMap::from([
                ('A', "first".to_owned()),
                ('B', "second".to_owned()),
                ('C', "third".to_owned()),
            ]),
            gold,
        }
    }

    #[test]
    fn five_option_item_parses_with_gold_letter() {
        let line = serde_json::json!({
            "id": "usmle_scfe_0001",
            "question": "Which of the following is the best management for this patient?",
            "options": {
                "A": "Casting and crutches",
                "B": "Immobilization of the hip in a Pavlik harness",
                "C": "Supportive therapy and observation",
                "D": "Surgical drainage of the hip",
                "E": "Surgical pinning of the femoral head"
            },
            "gold": "E"
        });
        let items =
            load_dataset_from_reader(line.to_string().as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].gold, 'E');
        assert_eq!(items[0].options.len(), 5);
        assert_eq!(items[0].letters(), vec!['A', 'B', 'C', 'D', 'E']);
        assert!(items[0].options_line().starts_with("(A) Casting and crutches (B)"));
        assert!(items[0]
            .context_string()
            .contains("The available choices were: (A)"));
    }

    #[test]
    fn yes_no_items_synthesize_two_options() {
        let line = r#"{"id": "pubmed_1", "question": "Does it work?", "gold": "yes"}"#;
        let items = load_dataset_from_reader(line.as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(items[0].options.len(), 2);
        assert_eq!(items[0].options[&'A'], "yes");
        assert_eq!(items[0].options[&'B'], "no");
        assert_eq!(items[0].gold, 'A');

        let line = r#"{"id": "pubmed_2", "question": "Does it fail?", "gold": "no"}"#;
        let items = load_dataset_from_reader(line.as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(items[0].gold, 'B');
    }

    #[test]
    fn load_rejects_bad_lines_with_positions() {
        let data = "{\"id\":\"a\",\"question\":\"q?\",\"gold\":\"yes\"}\nnot json\n";
        let err = load_dataset_from_reader(data.as_bytes(), Path::new("mem")).unwrap_err();
        match err {
            Error::Jsonl { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }

        let missing_gold = r#"{"id":"a","question":"q?"}"#;
        assert!(load_dataset_from_reader(missing_gold.as_bytes(), Path::new("mem")).is_err());

        let dup = "{\"id\":\"a\",\"question\":\"q?\",\"gold\":\"yes\"}\n{\"id\":\"a\",\"question\":\"r?\",\"gold\":\"no\"}\n";
        let err = load_dataset_from_reader(dup.as_bytes(), Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::DuplicateId { .. }));
    }

    #[test]
    fn validation_rejects_gaps_bad_gold_and_extremes() {
        let gap = McqItem {
            options: BTreeMap::from([('A', "x".to_owned()), ('C', "y".to_owned())]),
            ..item("gap", 'A')
        };
        assert!(gap.validate().is_err());

        let bad_gold = McqItem {
            gold: 'E',
            ..item("bad_gold", 'A')
        };
        assert!(bad_gold.validate().is_err());

        let single = McqItem {
            options: BTreeMap::from([('A', "only".to_owned())]),
            ..item("single", 'A')
        };
        assert!(single.validate().is_err());

        let six = McqItem {
            options: ('A'..='F').map(|c| (c, format!("opt {c}"))).collect(),
            ..item("six", 'A')
        };
        assert!(six.validate().is_err());

        let gold_text_ambiguous = serde_json::json!({
            "id": "amb", "question": "q?",
            "options": {"A": "same", "B": "same"}, "gold": "same"
        });
        assert!(
            load_dataset_from_reader(gold_text_ambiguous.to_string().as_bytes(), Path::new("mem"))
                .is_err()
        );
    }

    #[test]
    fn accuracy_counts_unanswered_as_incorrect() {
        let items: Vec<McqItem> = (0..10).map(|i| item(&format!("q{i}"), 'A')).collect();
        let mut predictions: BTreeMap<String, Option<char>> = BTreeMap::new();
        for i in 0..7 {
            predictions.insert(format!("q{i}"), Some('A'));
        }
        predictions.insert("q7".to_owned(), Some('B'));
        predictions.insert("q8".to_owned(), None);
        // q9 entirely absent.
        let m = score_run(&items, &predictions, None).unwrap();
        assert_eq!(m.total, 10);
        assert_eq!(m.correct, 7);
        assert_eq!(m.accuracy, 0.7);
        assert_eq!(m.filtered_total, 0);
        assert_eq!(m.filtered_accuracy, None);
    }

    #[test]
    fn filtered_subset_uses_only_perfect_scores() {
        let items: Vec<McqItem> = (0..4).map(|i| item(&format!("q{i}"), 'A')).collect();
        let predictions: BTreeMap<String, Option<char>> = BTreeMap::from([
            ("q0".to_owned(), Some('A')),
            ("q1".to_owned(), Some('B')),
            ("q2".to_owned(), Some('A')),
            ("q3".to_owned(), Some('B')),
        ]);
        let scores: BTreeMap<String, f64> = BTreeMap::from([
            ("q0".to_owned(), 1.0),
            ("q1".to_owned(), 0.99), // not a pass, close does not count
            ("q2".to_owned(), 1.0),
            ("q3".to_owned(), 0.5),
        ]);
        let m = score_run(&items, &predictions, Some(&scores)).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.filtered_total, 2);
        assert_eq!(m.filtered_correct, 2);
        assert_eq!(m.filtered_accuracy, Some(1.0));

        // Dropping the scores changes nothing about plain accuracy.
        let bare = score_run(&items, &predictions, None).unwrap();
        assert_eq!(bare.accuracy, m.accuracy);
        assert_eq!(bare.filtered_accuracy, None);
    }

    #[test]
    fn unknown_ids_are_rejected() {
        let items = vec![item("q0", 'A')];
        let stray: BTreeMap<String, Option<char>> =
            BTreeMap::from([("ghost".to_owned(), Some('A'))]);
        assert!(matches!(
            score_run(&items, &stray, None),
            Err(Error::UnknownId { .. })
        ));
        let stray_scores: BTreeMap<String, f64> = BTreeMap::from([("ghost".to_owned(), 1.0)]);
        assert!(matches!(
            score_run(&items, &BTreeMap::new(), Some(&stray_scores)),
            Err(Error::UnknownId { .. })
        ));
        assert!(matches!(
            score_run(&[], &BTreeMap::new(), None),
            Err(Error::EmptyInput { .. })
        ));
    }

    fn rows() -> Vec<DatasetMetrics> {
        vec![
            DatasetMetrics {
                dataset: "medqa".to_owned(),
                metrics: EvalMetrics {
                    total: 10,
                    correct: 6,
                    accuracy: 0.6,
                    filtered_total: 4,
                    filtered_correct: 3,
                    filtered_accuracy: Some(0.75),
                },
            },
            DatasetMetrics {
                dataset: "pubmedqa".to_owned(),
                metrics: EvalMetrics {
                    total: 10,
                    correct: 8,
                    accuracy: 0.8,
                    filtered_total: 0,
                    filtered_correct: 0,
                    filtered_accuracy: None,
                },
            },
        ]
    }

    #[test]
    fn average_row_is_an_unweighted_mean() {
        let text = emit_report(&rows(), ReportFormat::Text).unwrap();
        assert!(text.contains("Average"), "{text}");
        assert!(text.contains("0.7000"), "{text}");
        // Only medqa has a filtered accuracy, so the mean is just its value.
        assert!(text.contains("0.7500"), "{text}");
        let last = text.lines().last().unwrap();
        assert!(last.starts_with("Average"));
    }

    #[test]
    fn json_report_round_trips() {
        let text = emit_report(&rows(), ReportFormat::Json).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["datasets"][0]["dataset"], "medqa");
        assert_eq!(value["datasets"][0]["accuracy"], 0.6);
        assert_eq!(value["datasets"][1]["filtered_accuracy"], serde_json::Value::Null);
        assert_eq!(value["average"]["accuracy"], 0.7);
        assert_eq!(value["average"]["filtered_accuracy"], 0.75);
        let back: Vec<DatasetMetrics> =
            serde_json::from_value(value["datasets"].clone()).unwrap();
        assert_eq!(back, rows());
    }

    #[test]
    fn csv_report_has_documented_header_and_average() {
        let text = emit_report(&rows(), ReportFormat::Csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "dataset,total,correct,accuracy,filtered_total,filtered_correct,filtered_accuracy"
        );
        assert_eq!(lines.next().unwrap(), "medqa,10,6,0.6,4,3,0.75");
        assert_eq!(lines.next().unwrap(), "pubmedqa,10,8,0.8,0,0,");
        assert_eq!(lines.next().unwrap(), "Average,,,0.7,,,0.75");
    }

    #[test]
    fn report_formats_parse_and_reject() {
        assert_eq!("text".parse::<ReportFormat>().unwrap(), ReportFormat::Text);
        assert_eq!("JSON".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
        assert_eq!("csv".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert!("xml".parse::<ReportFormat>().is_err());
        assert!(emit_report(&[], ReportFormat::Text).is_err());
    }
}

//! Corpus-level generation metrics: LCS F-score, simplified METEOR
//! ("METEOR-x"), and oracle-based answering accuracy, plus report rendering.

mod meteor;
mod oracle;
mod rouge;

pub use meteor::{meteor, meteor_text};
pub use oracle::{
    answering_accuracy, oracle_by_name, EmptyOracle, GoldOracle, LexicalWindowOracle, QAOracle,
};
pub use rouge::{lcs_length, rouge_l, rouge_l_text, DEFAULT_ROUGE_BETA};

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::TokenizedExample;

/// Corpus-level scores for one conditioning mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    /// Mean per-example LCS F-score, in [0, 1].
    pub rouge_l: f64,
    /// Mean per-example METEOR-x score, in [0, 1].
    pub meteor: f64,
    /// Exact-match answering accuracy, in [0, 100].
    pub answering_accuracy: f64,
    pub n_examples: usize,
    pub oracle_failures: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("cannot serialize report: {e}")))
    }
}

/// Scores `predictions` (example id → generated question) against `dataset`:
/// ROUGE-L and METEOR-x against the reference questions, answering accuracy
/// through `oracle`. Predictions must cover the dataset ids exactly.
pub fn evaluate(
    dataset: &[TokenizedExample],
    predictions: &HashMap<String, String>,
    oracle: &dyn QAOracle,
    mode: &str,
) -> Result<EvalReport> {
    if predictions.is_empty() {
        return Err(Error::Contract("no predictions to evaluate".into()));
    }
    let known: HashSet<&str> = dataset.iter().map(|ex| ex.id.as_str()).collect();
    let mut unknown: Vec<&str> =
        predictions.keys().map(String::as_str).filter(|id| !known.contains(id)).collect();
    unknown.sort_unstable();
    if !unknown.is_empty() {
        return Err(Error::Contract(format!(
            "predictions reference unknown example ids: {}",
            unknown.join(", ")
        )));
    }
    let mut missing: Vec<&str> = dataset
        .iter()
        .map(|ex| ex.id.as_str())
        .filter(|id| !predictions.contains_key(*id))
        .collect();
    missing.sort_unstable();
    if !missing.is_empty() {
        return Err(Error::Contract(format!(
            "missing predictions for example ids: {}",
            missing.join(", ")
        )));
    }

    let pairs: Vec<(&TokenizedExample, &str)> =
        dataset.iter().map(|ex| (ex, predictions[&ex.id].as_str())).collect();
    let n = pairs.len() as f64;
    let rouge = pairs
        .iter()
        .map(|(ex, hyp)| rouge_l_text(hyp, &ex.question, DEFAULT_ROUGE_BETA))
        .sum::<f64>()
        / n;
    let met = pairs.iter().map(|(ex, hyp)| meteor_text(hyp, &ex.question)).sum::<f64>() / n;
    let (acc, failures) = answering_accuracy(&pairs, oracle);
    Ok(EvalReport {
        mode: mode.to_string(),
        rouge_l: rouge,
        meteor: met,
        answering_accuracy: acc,
        n_examples: pairs.len(),
        oracle_failures: failures,
    })
}

/// Renders reports as an aligned plain-text table with the column layout
/// `Model | ROUGE-L | METEOR | Answering Accuracy (%)`.
pub fn render_table(rows: &[EvalReport]) -> String {
    let header = ["Model", "ROUGE-L", "METEOR", "Answering Accuracy (%)"];
    let cells: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            [
                r.mode.clone(),
                format!("{:.4}", r.rouge_l),
                format!("{:.4}", r.meteor),
                format!("{:.2}", r.answering_accuracy),
            ]
        })
        .collect();
    let mut width = header.map(str::len);
    for row in &cells {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let emit = |out: &mut String, cols: [&str; 4], right_align: bool| {
        for (k, (cell, w)) in cols.iter().zip(width).enumerate() {
            if k > 0 {
                out.push_str(" | ");
            }
            if right_align && k > 0 {
                out.push_str(&format!("{cell:>w$}"));
            } else {
                out.push_str(&format!("{cell:<w$}"));
            }
        }
        while out.ends_with(' ') {
            out.pop();
        }
        out.push('\n');
    };
    emit(&mut out, header, false);
    let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
    emit(&mut out, [&rule[0], &rule[1], &rule[2], &rule[3]], false);
    for row in &cells {
        emit(&mut out, [&row[0], &row[1], &row[2], &row[3]], true);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{RawExample, Vocabulary};

    fn example(id: &str, passage: &str, question: &str, answer: &str) -> TokenizedExample {
        let raw = RawExample {
            id: id.into(),
            passage: passage.into(),
            question: question.into(),
            answer: answer.into(),
            answer_start: passage.find(answer).expect("answer in passage"),
        };
        let vocab = Vocabulary::build([passage, question], 512).unwrap();
        TokenizedExample::from_raw(&raw, &vocab)
    }

    fn three_examples() -> Vec<TokenizedExample> {
        vec![
            example("e1", "p says a b c d", "a b c d", "p"),
            example("e2", "q says a c e", "a c e", "q"),
            example("e3", "r says x y", "x y", "r"),
        ]
    }

    #[test]
    fn perfect_predictions_with_gold_oracle() {
        let dataset = three_examples();
        let predictions: HashMap<String, String> =
            dataset.iter().map(|ex| (ex.id.clone(), ex.question.clone())).collect();
        let gold = GoldOracle::from_examples(&dataset);
        let report = evaluate(&dataset, &predictions, &gold, "AP").unwrap();
        assert_eq!(report.rouge_l, 1.0);
        assert_eq!(report.answering_accuracy, 100.0);
        assert_eq!(report.n_examples, 3);
        assert_eq!(report.oracle_failures, 0);
        // METEOR identity floor: mean of 1−0.5/u³ for u = 4, 3, 2.
        let want = ((1.0 - 0.5 / 64.0) + (1.0 - 0.5 / 27.0) + (1.0 - 0.5 / 8.0)) / 3.0;
        assert!((report.meteor - want).abs() < 1e-12);
    }

    #[test]
    fn report_matches_hand_computed_means() {
        let dataset = three_examples();
        // e1: exact match; e2: hyp "a b c d" vs ref "a c e"; e3: disjoint.
        let predictions: HashMap<String, String> = [
            ("e1".to_string(), "a b c d".to_string()),
            ("e2".to_string(), "a b c d".to_string()),
            ("e3".to_string(), "q r s".to_string()),
        ]
        .into();
        let report = evaluate(&dataset, &predictions, &EmptyOracle, "CP").unwrap();
        let want_rouge = (1.0 + 61.0 / 104.0 + 0.0) / 3.0;
        // e2 meteor: u=2 of 4/3, F=20/31, two chunks of two matches → ×0.5.
        let want_meteor = ((1.0 - 0.5 / 64.0) + 10.0 / 31.0 + 0.0) / 3.0;
        assert!((report.rouge_l - want_rouge).abs() < 1e-12, "rouge {}", report.rouge_l);
        assert!((report.meteor - want_meteor).abs() < 1e-12, "meteor {}", report.meteor);
        assert_eq!(report.answering_accuracy, 0.0);
        assert_eq!(report.mode, "CP");
    }

    #[test]
    fn empty_predictions_are_rejected() {
        let dataset = three_examples();
        let err = evaluate(&dataset, &HashMap::new(), &EmptyOracle, "AP").unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn missing_and_unknown_ids_are_listed() {
        let dataset = three_examples();
        let partial: HashMap<String, String> = [("e1".to_string(), "a b".to_string())].into();
        let msg = evaluate(&dataset, &partial, &EmptyOracle, "AP").unwrap_err().to_string();
        assert!(msg.contains("e2") && msg.contains("e3") && !msg.contains("e1"), "{msg}");

        let stray: HashMap<String, String> = dataset
            .iter()
            .map(|ex| (ex.id.clone(), "a".to_string()))
            .chain([("ghost".to_string(), "a".to_string())])
            .collect();
        let msg = evaluate(&dataset, &stray, &EmptyOracle, "AP").unwrap_err().to_string();
        assert!(msg.contains("ghost"), "{msg}");
    }

    #[test]
    fn report_json_round_trips() {
        let report = EvalReport {
            mode: "AP+RS".into(),
            rouge_l: 0.25,
            meteor: 0.5,
            answering_accuracy: 75.0,
            n_examples: 4,
            oracle_failures: 1,
        };
        let back: EvalReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn table_layout_matches_column_spec() {
        let rows = vec![
            EvalReport {
                mode: "AA".into(),
                rouge_l: 0.3128,
                meteor: 0.3019,
                answering_accuracy: 17.11,
                n_examples: 10,
                oracle_failures: 0,
            },
            EvalReport {
                mode: "AP+RS+CP".into(),
                rouge_l: 0.4489,
                meteor: 0.4453,
                answering_accuracy: 54.07,
                n_examples: 10,
                oracle_failures: 0,
            },
        ];
        let table = render_table(&rows);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "Model    | ROUGE-L | METEOR | Answering Accuracy (%)");
        assert_eq!(lines[1], "-------- | ------- | ------ | ----------------------");
        assert_eq!(lines[2], "AA       |  0.3128 | 0.3019 |                  17.11");
        assert_eq!(lines[3], "AP+RS+CP |  0.4489 | 0.4453 |                  54.07");
    }
}

//! Evaluation: per-label confusion counts, precision/recall/F1 with a
//! zero-division-is-zero convention, and multi-model report rendering in
//! text and CSV form. Also carries the published fine-tuned transformer
//! scores used as a consistency reference.

use std::collections::HashMap;

use thiserror::Error;

use crate::labels::{BiasLabel, BiasVector, NUM_LABELS};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction and target counts differ: {preds} vs {targets}")]
    LengthMismatch { preds: usize, targets: usize },
    #[error("cannot evaluate an empty example set")]
    Empty,
    #[error("bad report file, line {line}: {message}")]
    BadReportFile { line: usize, message: String },
}

/// Binary confusion counts for one label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LabelConfusion {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl LabelConfusion {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

/// Per-label confusion counts over one evaluation set. Every label's four
/// cells sum to the number of evaluated examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub per_label: [LabelConfusion; NUM_LABELS],
}

impl ConfusionCounts {
    pub fn examples(&self) -> u64 {
        self.per_label[0].total()
    }
}

/// Exact confusion counts for each label. Order of examples is
/// irrelevant; only the (prediction, target) pairs matter.
pub fn confusion(
    preds: &[BiasVector],
    targets: &[BiasVector],
) -> Result<ConfusionCounts, MetricsError> {
    if preds.len() != targets.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            targets: targets.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut per_label = [LabelConfusion::default(); NUM_LABELS];
    for (pred, target) in preds.iter().zip(targets) {
        for label in BiasLabel::ALL {
            let cell = &mut per_label[label.index()];
            match (pred.get(label), target.get(label)) {
                (true, true) => cell.true_pos += 1,
                (true, false) => cell.false_pos += 1,
                (false, true) => cell.false_neg += 1,
                (false, false) => cell.true_neg += 1,
            }
        }
    }
    Ok(ConfusionCounts { per_label })
}

/// Precision, recall, F1, and positive support for one label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Scores for all seven labels plus unweighted macro averages. The macro
/// figures are an extension beyond the published per-bias table and are
/// flagged as such when rendered.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_label: [LabelScores; NUM_LABELS],
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl EvalReport {
    pub fn from_label_scores(per_label: [LabelScores; NUM_LABELS]) -> Self {
        let n = NUM_LABELS as f64;
        EvalReport {
            macro_precision: per_label.iter().map(|s| s.precision).sum::<f64>() / n,
            macro_recall: per_label.iter().map(|s| s.recall).sum::<f64>() / n,
            macro_f1: per_label.iter().map(|s| s.f1).sum::<f64>() / n,
            per_label,
        }
    }

    pub fn total_support(&self) -> u64 {
        self.per_label.iter().map(|s| s.support).sum()
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// P = tp/(tp+fp), R = tp/(tp+fn), F1 = 2PR/(P+R); every 0/0 is 0.
pub fn prf1(counts: &ConfusionCounts) -> EvalReport {
    let per_label = counts.per_label.map(|c| {
        let precision = ratio(c.true_pos, c.true_pos + c.false_pos);
        let recall = ratio(c.true_pos, c.true_pos + c.false_neg);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        LabelScores {
            precision,
            recall,
            f1,
            support: c.true_pos + c.false_neg,
        }
    });
    EvalReport::from_label_scores(per_label)
}

/// Confusion counting and scoring in one step.
pub fn evaluate(preds: &[BiasVector], targets: &[BiasVector]) -> Result<EvalReport, MetricsError> {
    Ok(prf1(&confusion(preds, targets)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
}

/// Render one or more model reports side by side: seven bias rows with a
/// (P, R, F1) column triple per model, plus the macro-average extension
/// row. Text output rounds to two decimals; CSV keeps full precision.
pub fn render_report(reports: &[(String, EvalReport)], format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => render_text(reports),
        ReportFormat::Csv => render_csv(reports),
    }
}

const MACRO_ROW: &str = "macro_avg";

fn render_text(reports: &[(String, EvalReport)]) -> String {
    const NAME_W: usize = 22;
    const BLOCK_W: usize = 17;
    let mut out = String::new();
    out.push_str(&format!("{:<NAME_W$}", "Bias"));
    for (name, _) in reports {
        out.push_str(&format!("  {name:<BLOCK_W$}"));
    }
    out.push('\n');
    out.push_str(&format!("{:<NAME_W$}", ""));
    for _ in reports {
        out.push_str(&format!("  {:>5} {:>5} {:>5}", "P", "R", "F1"));
    }
    out.push('\n');
    out.push_str(&"-".repeat(NAME_W + reports.len() * (BLOCK_W + 2)));
    out.push('\n');
    for label in BiasLabel::ALL {
        out.push_str(&format!("{:<NAME_W$}", label.display_name()));
        for (_, report) in reports {
            let s = &report.per_label[label.index()];
            out.push_str(&format!(
                "  {:>5.2} {:>5.2} {:>5.2}",
                s.precision, s.recall, s.f1
            ));
        }
        out.push('\n');
    }
    out.push_str(&format!("{:<NAME_W$}", "Macro average*"));
    for (_, report) in reports {
        out.push_str(&format!(
            "  {:>5.2} {:>5.2} {:>5.2}",
            report.macro_precision, report.macro_recall, report.macro_f1
        ));
    }
    out.push('\n');
    out.push_str("\n* extension: the published table reports per-bias scores only.\n");
    out
}

fn render_csv(reports: &[(String, EvalReport)]) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["model", "bias", "precision", "recall", "f1", "support"])
        .expect("writing to memory");
    for (name, report) in reports {
        for label in BiasLabel::ALL {
            let s = &report.per_label[label.index()];
            wtr.write_record([
                name.as_str(),
                label.key(),
                &s.precision.to_string(),
                &s.recall.to_string(),
                &s.f1.to_string(),
                &s.support.to_string(),
            ])
            .expect("writing to memory");
        }
        wtr.write_record([
            name.as_str(),
            MACRO_ROW,
            &report.macro_precision.to_string(),
            &report.macro_recall.to_string(),
            &report.macro_f1.to_string(),
            &report.total_support().to_string(),
        ])
        .expect("writing to memory");
    }
    let body = String::from_utf8(wtr.into_inner().expect("flushing memory writer"))
        .expect("csv output is utf-8");
    format!("# {MACRO_ROW} rows are an extension beyond the published per-bias table\n{body}")
}

/// Read reports back from the CSV produced by [`render_report`]. Models
/// come back in first-appearance order; `macro_avg` rows are skipped and
/// recomputed so the convention stays in one place.
pub fn parse_eval_csv(text: &str) -> Result<Vec<(String, EvalReport)>, MetricsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| MetricsError::BadReportFile {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let expected = ["model", "bias", "precision", "recall", "f1", "support"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(MetricsError::BadReportFile {
            line: 1,
            message: format!("expected header {expected:?}, found {headers:?}"),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut partial: HashMap<String, [Option<LabelScores>; NUM_LABELS]> = HashMap::new();
    for result in rdr.records() {
        let record = result.map_err(|e| MetricsError::BadReportFile {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |message: String| MetricsError::BadReportFile { line, message };
        if record.len() != expected.len() {
            return Err(bad(format!(
                "expected {} fields, found {}",
                expected.len(),
                record.len()
            )));
        }
        let model = record[0].to_string();
        let bias = &record[1];
        if bias == MACRO_ROW {
            continue;
        }
        let label =
            BiasLabel::from_key(bias).ok_or_else(|| bad(format!("unknown bias `{bias}`")))?;
        let score = |idx: usize, name: &str| -> Result<f64, MetricsError> {
            let value: f64 = record[idx]
                .parse()
                .map_err(|_| bad(format!("{name} `{}` is not a number", &record[idx])))?;
            if !(0.0..=1.0).contains(&value) {
                return Err(bad(format!("{name} {value} outside [0, 1]")));
            }
            Ok(value)
        };
        let precision = score(2, "precision")?;
        let recall = score(3, "recall")?;
        let f1 = score(4, "f1")?;
        let support: u64 = record[5]
            .parse()
            .map_err(|_| bad(format!("support `{}` is not a count", &record[5])))?;
        if !partial.contains_key(&model) {
            order.push(model.clone());
            partial.insert(model.clone(), [None; NUM_LABELS]);
        }
        let slot = &mut partial.get_mut(&model).unwrap()[label.index()];
        if slot.is_some() {
            return Err(bad(format!(
                "duplicate row for model `{model}`, bias `{bias}`"
            )));
        }
        *slot = Some(LabelScores {
            precision,
            recall,
            f1,
            support,
        });
    }

    let mut reports = Vec::with_capacity(order.len());
    for model in order {
        let slots = partial.remove(&model).unwrap();
        let mut per_label = [LabelScores {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            support: 0,
        }; NUM_LABELS];
        for label in BiasLabel::ALL {
            per_label[label.index()] =
                slots[label.index()].ok_or_else(|| MetricsError::BadReportFile {
                    line: 0,
                    message: format!("model `{model}` is missing bias `{}`", label.key()),
                })?;
        }
        reports.push((model, EvalReport::from_label_scores(per_label)));
    }
    Ok(reports)
}

/// One published (precision, recall, F1) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublishedScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

const fn ps(precision: f64, recall: f64, f1: f64) -> PublishedScores {
    PublishedScores {
        precision,
        recall,
        f1,
    }
}

/// Column order of [`BASELINE_SCORES`].
pub const BASELINE_MODEL_NAMES: [&str; 5] = ["BERT", "DistilBERT", "ALBERT", "RoBERTa", "XLNet"];

/// Published fine-tuned transformer results: rows follow the canonical
/// bias order, columns follow [`BASELINE_MODEL_NAMES`]. Values are the
/// two-decimal figures as printed.
pub const BASELINE_SCORES: [[PublishedScores; 5]; NUM_LABELS] = [
    // political
    [
        ps(0.86, 0.93, 0.89),
        ps(0.82, 0.93, 0.87),
        ps(0.79, 0.90, 0.84),
        ps(0.82, 0.94, 0.87),
        ps(0.80, 0.89, 0.84),
    ],
    // gender
    [
        ps(0.73, 0.78, 0.75),
        ps(0.66, 0.73, 0.70),
        ps(0.58, 0.75, 0.66),
        ps(0.52, 0.81, 0.63),
        ps(0.52, 0.81, 0.64),
    ],
    // entity
    [
        ps(0.75, 0.74, 0.74),
        ps(0.71, 0.77, 0.74),
        ps(0.73, 0.73, 0.73),
        ps(0.72, 0.79, 0.75),
        ps(0.71, 0.78, 0.75),
    ],
    // racial
    [
        ps(0.60, 0.64, 0.62),
        ps(0.48, 0.65, 0.55),
        ps(0.28, 0.71, 0.40),
        ps(0.25, 0.71, 0.37),
        ps(0.26, 0.72, 0.38),
    ],
    // religious
    [
        ps(0.83, 0.96, 0.89),
        ps(0.81, 0.92, 0.86),
        ps(0.62, 0.94, 0.74),
        ps(0.65, 0.93, 0.76),
        ps(0.66, 0.95, 0.78),
    ],
    // regional
    [
        ps(0.61, 0.75, 0.67),
        ps(0.49, 0.65, 0.56),
        ps(0.46, 0.59, 0.52),
        ps(0.40, 0.77, 0.53),
        ps(0.39, 0.73, 0.51),
    ],
    // sensational
    [
        ps(0.74, 0.86, 0.80),
        ps(0.78, 0.65, 0.71),
        ps(0.72, 0.78, 0.75),
        ps(0.76, 0.67, 0.71),
        ps(0.74, 0.67, 0.70),
    ],
];

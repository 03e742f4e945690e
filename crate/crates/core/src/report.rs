//! Results tables with the columns
//! `model,loss,accuracy_pct,avg_class_recall_pct,avg_class_precision_pct,epochs`.
//! Cells that do not apply (cross-validation loss, failed runs) hold `-NA-`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::EvalReport;

pub const RESULTS_HEADER: [&str; 6] =
    ["model", "loss", "accuracy_pct", "avg_class_recall_pct", "avg_class_precision_pct", "epochs"];
pub const NOT_APPLICABLE: &str = "-NA-";

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub model: String,
    pub loss: Option<f64>,
    pub accuracy_pct: Option<f64>,
    pub avg_class_recall_pct: Option<f64>,
    pub avg_class_precision_pct: Option<f64>,
    pub epochs: Option<u32>,
}

impl ResultRow {
    pub fn from_report(model: impl Into<String>, report: &EvalReport) -> Self {
        ResultRow {
            model: model.into(),
            loss: report.loss,
            accuracy_pct: Some(report.accuracy * 100.0),
            avg_class_recall_pct: Some(report.avg_class_recall * 100.0),
            avg_class_precision_pct: Some(report.avg_class_precision * 100.0),
            epochs: Some(report.epochs_trained),
        }
    }

    /// A run that produced no metrics.
    pub fn failed(model: impl Into<String>) -> Self {
        ResultRow {
            model: model.into(),
            loss: None,
            accuracy_pct: None,
            avg_class_recall_pct: None,
            avg_class_precision_pct: None,
            epochs: None,
        }
    }

    fn cells(&self) -> [String; 6] {
        let num = |v: Option<f64>, places: usize| v.map_or(NOT_APPLICABLE.to_owned(), |v| format!("{v:.places$}"));
        [
            self.model.clone(),
            num(self.loss, 4),
            num(self.accuracy_pct, 2),
            num(self.avg_class_recall_pct, 2),
            num(self.avg_class_precision_pct, 2),
            self.epochs.map_or(NOT_APPLICABLE.to_owned(), |e| e.to_string()),
        ]
    }
}

pub fn write_results_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        w.write_record(r.cells())?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format { what: "results table", detail: e.to_string() })?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn read_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != RESULTS_HEADER {
        return Err(Error::Format { what: "results table", detail: format!("unexpected header {header:?}") });
    }
    let bad = |cell: &str| Error::Format { what: "results table", detail: format!("bad cell {cell:?}") };
    let num = |cell: &str| -> Result<Option<f64>> {
        if cell == NOT_APPLICABLE {
            Ok(None)
        } else {
            cell.parse().map(Some).map_err(|_| bad(cell))
        }
    };
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            Ok(ResultRow {
                model: rec[0].to_owned(),
                loss: num(&rec[1])?,
                accuracy_pct: num(&rec[2])?,
                avg_class_recall_pct: num(&rec[3])?,
                avg_class_precision_pct: num(&rec[4])?,
                epochs: if &rec[5] == NOT_APPLICABLE { None } else { Some(rec[5].parse().map_err(|_| bad(&rec[5]))?) },
            })
        })
        .collect()
}

/// Markdown table of `rows` in the given order.
pub fn render_table(rows: &[ResultRow]) -> String {
    render(rows.iter().map(|r| (r.model.clone(), r)))
}

/// Merges tables into one Markdown table, best accuracy first. Each row's
/// source table name is prefixed when more than one table is given.
pub fn render_summary(tables: &[(String, Vec<ResultRow>)]) -> String {
    let mut rows: Vec<(String, &ResultRow)> = tables
        .iter()
        .flat_map(|(name, rows)| {
            rows.iter().map(move |r| {
                let label = if tables.len() > 1 { format!("{name}: {}", r.model) } else { r.model.clone() };
                (label, r)
            })
        })
        .collect();
    let key = |r: &ResultRow| r.accuracy_pct.unwrap_or(f64::NEG_INFINITY);
    rows.sort_by(|a, b| key(b.1).total_cmp(&key(a.1)));
    render(rows.into_iter())
}

fn render<'a>(rows: impl Iterator<Item = (String, &'a ResultRow)>) -> String {
    let mut out =
        String::from("| Model | Loss | Accu (%) | Ave Class Recall (%) | Ave Class Precision (%) | No Epochs |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for (label, r) in rows {
        let cells = r.cells();
        let _ = writeln!(out, "| {label} | {} | {} | {} | {} | {} |", cells[1], cells[2], cells[3], cells[4], cells[5]);
    }
    out
}

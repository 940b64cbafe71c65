use std::path::Path;

use crate::data::LabeledDataset;
use crate::engine::{Algorithm, MetricsLog};
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "round,algorithm,seed,eta_w,eta_lambda,lambda,train_loss,acc,dpd,eod";

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn record_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    Error::Csv {
        path: path.to_path_buf(),
        row,
        col: 0,
        message: e.to_string(),
    }
}

fn cell<T: std::str::FromStr>(path: &Path, record: &csv::StringRecord, row: usize, col: usize) -> Result<T> {
    let raw = record.get(col).unwrap_or("");
    raw.trim().parse().map_err(|_| Error::Csv {
        path: path.to_path_buf(),
        row,
        col: col + 1,
        message: format!("cannot parse '{raw}'"),
    })
}

/// Read a dataset with header `f0,...,f{d-1},label,sensitive`. Rows are
/// numbered from 1 (the first data row) and columns from 1 in errors.
pub fn load_csv_dataset(path: &Path) -> Result<LabeledDataset> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| record_error(path, e))?.clone();
    let format = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let n_cols = header.len();
    if n_cols < 3 {
        return Err(format(format!(
            "header needs f0,...,label,sensitive, found {} columns",
            n_cols
        )));
    }
    let dim = n_cols - 2;
    for (i, name) in header.iter().take(dim).enumerate() {
        if name.trim() != format!("f{i}") {
            return Err(format(format!("header: expected f{i}, found '{name}'")));
        }
    }
    if header[dim].trim() != "label" || header[dim + 1].trim() != "sensitive" {
        return Err(format(format!(
            "header: expected label,sensitive as the last columns, found '{},{}'",
            &header[dim],
            &header[dim + 1]
        )));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut sensitive = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| record_error(path, e))?;
        for col in 0..dim {
            let v: f64 = cell(path, &record, row, col)?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    row,
                    col: col + 1,
                    message: format!("non-finite value {v}"),
                });
            }
            features.push(v);
        }
        for (col, out) in [(dim, &mut labels), (dim + 1, &mut sensitive)] {
            let v: u8 = cell(path, &record, row, col)?;
            if v > 1 {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    row,
                    col: col + 1,
                    message: format!("expected 0 or 1, found {v}"),
                });
            }
            out.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    LabeledDataset::from_flat(features, dim, labels, sensitive)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write a dataset in the format [`load_csv_dataset`] reads. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_csv_dataset(path: &Path, ds: &LabeledDataset) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header: Vec<String> = (0..ds.dim()).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    header.push("sensitive".into());
    w.write_record(&header).map_err(|e| record_error(path, e))?;
    for i in 0..ds.len() {
        let mut row: Vec<String> = ds.row(i).iter().map(f64::to_string).collect();
        row.push(ds.label(i).to_string());
        row.push(ds.sensitive(i).to_string());
        w.write_record(&row).map_err(|e| record_error(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// One row of a metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub eta_w: f64,
    pub eta_lambda: f64,
    pub lambda: f64,
    pub train_loss: f64,
    pub acc: f64,
    pub dpd: f64,
    pub eod: f64,
}

impl MetricsRow {
    pub fn from_log(log: &MetricsLog) -> Vec<MetricsRow> {
        log.records
            .iter()
            .map(|r| MetricsRow {
                round: r.round,
                algorithm: log.algorithm,
                seed: log.seed,
                eta_w: r.eta_w,
                eta_lambda: r.eta_lambda,
                lambda: r.lambda,
                train_loss: r.train_loss,
                acc: r.report.accuracy,
                dpd: r.report.dpd,
                eod: r.report.eod,
            })
            .collect()
    }
}

/// Metrics CSV text for a training log, one row per round.
pub fn metrics_csv(log: &MetricsLog) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in MetricsRow::from_log(log) {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.round, r.algorithm, r.seed, r.eta_w, r.eta_lambda, r.lambda, r.train_loss, r.acc, r.dpd, r.eod
        ));
    }
    out
}

pub fn write_metrics_csv(path: &Path, log: &MetricsLog) -> Result<()> {
    write_text(path, &metrics_csv(log))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| record_error(path, e))?;
    let found: Vec<&str> = header.iter().collect();
    if found.join(",") != METRICS_HEADER {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("header: expected {METRICS_HEADER}"),
        });
    }
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let rec = record.map_err(|e| record_error(path, e))?;
        let algorithm: String = cell(path, &rec, row, 1)?;
        let algorithm = algorithm.parse().map_err(|e: Error| Error::Csv {
            path: path.to_path_buf(),
            row,
            col: 2,
            message: e.to_string(),
        })?;
        rows.push(MetricsRow {
            round: cell(path, &rec, row, 0)?,
            algorithm,
            seed: cell(path, &rec, row, 2)?,
            eta_w: cell(path, &rec, row, 3)?,
            eta_lambda: cell(path, &rec, row, 4)?,
            lambda: cell(path, &rec, row, 5)?,
            train_loss: cell(path, &rec, row, 6)?,
            acc: cell(path, &rec, row, 7)?,
            dpd: cell(path, &rec, row, 8)?,
            eod: cell(path, &rec, row, 9)?,
        });
    }
    Ok(rows)
}

use std::fmt::Write as _;
use std::path::Path;

use crate::engine::Algorithm;
use crate::error::{Error, Result};
use crate::fairness::FairnessReport;

/// Linearly interpolated quantile of a sample (the "type 7" definition used
/// by R and NumPy). `values` need not be sorted.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&q) || values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("quantile needs q in [0, 1] and no NaN values"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Median and quartiles of one metric across seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        Ok(Summary {
            median: quantile(values, 0.5)?,
            q1: quantile(values, 0.25)?,
            q3: quantile(values, 0.75)?,
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub algorithm: Algorithm,
    pub seeds: usize,
    pub accuracy: Summary,
    pub dpd: Summary,
    pub eod: Summary,
}

/// Final-round metrics per algorithm, summarized over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

impl ComparisonReport {
    /// One row per entry of `runs`, each holding the final-round reports of
    /// every seed.
    pub fn from_reports(runs: &[(Algorithm, Vec<FairnessReport>)]) -> Result<Self> {
        let rows = runs
            .iter()
            .map(|(algorithm, reports)| {
                if reports.is_empty() {
                    return Err(Error::invalid(format!("no runs for {algorithm}")));
                }
                let col = |f: fn(&FairnessReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
                Ok(ComparisonRow {
                    algorithm: *algorithm,
                    seeds: reports.len(),
                    accuracy: Summary::of(&col(|r| r.accuracy))?,
                    dpd: Summary::of(&col(|r| r.dpd))?,
                    eod: Summary::of(&col(|r| r.eod))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ComparisonReport { rows })
    }

    pub fn row(&self, algorithm: Algorithm) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.algorithm == algorithm)
    }

    /// CSV with percentages to two decimals: median, first and third
    /// quartile of each metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "algorithm,seeds,acc_median_pct,acc_q1_pct,acc_q3_pct,dpd_median_pct,dpd_q1_pct,dpd_q3_pct,eod_median_pct,eod_q1_pct,eod_q3_pct\n",
        );
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.algorithm, r.seeds);
            for s in [r.accuracy, r.dpd, r.eod] {
                let _ = write!(out, ",{},{},{}", pct(s.median), pct(s.q1), pct(s.q3));
            }
            out.push('\n');
        }
        out
    }

    /// Aligned text table; each cell is `median (IQR)` in percent.
    pub fn to_text(&self) -> String {
        let mut cells: Vec<[String; 5]> = vec![[
            "algorithm".into(),
            "seeds".into(),
            "acc % median (IQR)".into(),
            "dpd % median (IQR)".into(),
            "eod % median (IQR)".into(),
        ]];
        for r in &self.rows {
            let fmt = |s: Summary| format!("{} ({})", pct(s.median), pct(s.iqr()));
            cells.push([
                r.algorithm.to_string(),
                r.seeds.to_string(),
                fmt(r.accuracy),
                fmt(r.dpd),
                fmt(r.eod),
            ]);
        }
        let widths: Vec<usize> = (0..5)
            .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (v, w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    pub fn write(&self, csv_path: &Path, text_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        std::fs::write(text_path, self.to_text()).map_err(|e| Error::io(text_path, e))
    }
}

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Joint distribution `P(Y = y, S = s, Yhat = yhat)`, indexed `[y][s][yhat]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointTable {
    pub p: [[[f64; 2]; 2]; 2],
}

impl JointTable {
    /// Entries in `(y, s, yhat)` lexicographic order.
    pub fn from_values(v: &[f64]) -> Result<Self> {
        if v.len() != 8 {
            return Err(Error::LengthMismatch(format!(
                "a joint table has 8 entries, got {}",
                v.len()
            )));
        }
        let mut p = [[[0.0; 2]; 2]; 2];
        for (k, &x) in v.iter().enumerate() {
            p[k >> 2][(k >> 1) & 1][k & 1] = x;
        }
        let table = JointTable { p };
        table.validate()?;
        Ok(table)
    }

    pub fn values(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.p[k >> 2][(k >> 1) & 1][k & 1];
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.values();
        if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid("table entries must be finite and non-negative"));
        }
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("table sums to {sum}, expected 1")));
        }
        Ok(())
    }

    fn mass(&self, y: Option<usize>, s: usize, yhat: Option<usize>) -> f64 {
        let ys: &[usize] = match y {
            Some(0) => &[0],
            Some(_) => &[1],
            None => &[0, 1],
        };
        let hs: &[usize] = match yhat {
            Some(0) => &[0],
            Some(_) => &[1],
            None => &[0, 1],
        };
        ys.iter().flat_map(|&a| hs.iter().map(move |&b| self.p[a][s][b])).sum()
    }

    /// `P(Yhat = 1 | S = s)` and optionally conditioned on `Y = y`.
    fn positive_rate(&self, y: Option<usize>, s: usize) -> Result<f64> {
        let denom = self.mass(y, s, None);
        if denom <= 0.0 {
            return Err(match y {
                Some(y) => Error::UndefinedMetric(format!("P(Y={y}, S={s}) is zero")),
                None => Error::UndefinedMetric(format!("P(S={s}) is zero")),
            });
        }
        Ok(self.mass(y, s, Some(1)) / denom)
    }
}

impl fmt::Display for JointTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "y s yhat p")?;
        for (k, v) in self.values().iter().enumerate() {
            writeln!(f, "{} {} {} {v}", k >> 2, (k >> 1) & 1, k & 1)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeReport {
    /// `|P(Yhat != y | Y = y, S = 0) - P(Yhat != y | Y = y, S = 1)|` per label.
    pub ap_gaps: [f64; 2],
    pub dpd: f64,
    pub eod: f64,
}

/// Per-label error-rate gaps, DPD and EOD of a joint table.
pub fn implication_probe(table: &JointTable) -> Result<ProbeReport> {
    table.validate()?;
    let mut ap_gaps = [0.0; 2];
    for (y, gap) in ap_gaps.iter_mut().enumerate() {
        let pos = [table.positive_rate(Some(y), 0)?, table.positive_rate(Some(y), 1)?];
        // Error rate is pos for y = 0 and 1 - pos for y = 1; the gap is the same.
        *gap = (pos[0] - pos[1]).abs();
    }
    let dpd = (table.positive_rate(None, 0)? - table.positive_rate(None, 1)?).abs();
    let eod = (table.positive_rate(Some(1), 0)? - table.positive_rate(Some(1), 1)?).abs();
    Ok(ProbeReport { ap_gaps, dpd, eod })
}

/// Random table whose per-label error rates are equal across groups while
/// group sizes and base rates differ.
pub fn random_equal_error_table<R: Rng + ?Sized>(rng: &mut R) -> JointTable {
    let err = [rng.random_range(0.01..0.99), rng.random_range(0.01..0.99)];
    let q1: f64 = rng.random_range(0.05..0.95);
    let group = [1.0 - q1, q1];
    let base = [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
    let mut p = [[[0.0; 2]; 2]; 2];
    for s in 0..2 {
        for y in 0..2 {
            let py = if y == 1 { base[s] } else { 1.0 - base[s] };
            let correct = y;
            p[y][s][correct] = group[s] * py * (1.0 - err[y]);
            p[y][s][1 - correct] = group[s] * py * err[y];
        }
    }
    JointTable { p }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSweep {
    pub trials: usize,
    pub max_ap_gap: f64,
    pub max_eod: f64,
    pub max_dpd: f64,
}

impl fmt::Display for ProbeSweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let eo = if self.max_eod < 1e-9 { "holds" } else { "violated" };
        write!(
            f,
            "equal error rates over {} tables: EO {eo} (max eod {:e}); DP max dpd {:.6} (max error-rate gap {:e})",
            self.trials, self.max_eod, self.max_dpd, self.max_ap_gap
        )
    }
}

/// Probe `trials` random equal-error-rate tables.
pub fn probe_sweep(trials: usize, seed: u64) -> Result<ProbeSweep> {
    let mut r = rng::stream(seed, &[rng::purpose::PROBE]);
    let mut sweep = ProbeSweep {
        trials,
        max_ap_gap: 0.0,
        max_eod: 0.0,
        max_dpd: 0.0,
    };
    for _ in 0..trials {
        let report = implication_probe(&random_equal_error_table(&mut r))?;
        sweep.max_ap_gap = sweep.max_ap_gap.max(report.ap_gaps[0]).max(report.ap_gaps[1]);
        sweep.max_eod = sweep.max_eod.max(report.eod);
        sweep.max_dpd = sweep.max_dpd.max(report.dpd);
    }
    Ok(sweep)
}

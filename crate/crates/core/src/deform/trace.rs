use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::{LossReport, LossTerm};

/// One evaluated step: every computed term and the weighted total.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    /// Indexed like [`LossTerm::ALL`]; `None` for terms that were not computed.
    pub terms: [Option<f64>; 7],
    pub total: f64,
}

impl TraceRow {
    pub fn from_report(step: usize, report: &LossReport) -> Self {
        TraceRow {
            step,
            terms: LossTerm::ALL.map(|t| report.term(t)),
            total: report.total,
        }
    }

    pub fn term(&self, term: LossTerm) -> Option<f64> {
        self.terms[LossTerm::ALL.iter().position(|&t| t == term).unwrap_or(0)]
    }
}

/// Loss values over an optimization run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn first_total(&self) -> Option<f64> {
        self.rows.first().map(|r| r.total)
    }

    pub fn last_total(&self) -> Option<f64> {
        self.rows.last().map(|r| r.total)
    }

    pub fn csv_header() -> String {
        let mut h = String::from("step");
        for t in LossTerm::ALL {
            h.push(',');
            h.push_str(t.name());
        }
        h.push_str(",total");
        h
    }

    /// CSV with a header line; terms that were not computed are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = LossTrace::csv_header();
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{}", r.step);
            for v in &r.terms {
                match v {
                    Some(v) => {
                        let _ = write!(out, ",{v}");
                    }
                    None => out.push(','),
                }
            }
            let _ = writeln!(out, ",{}", r.total);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

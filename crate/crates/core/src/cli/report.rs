//! Result tables and their CSV / JSON serialisation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{ExperimentSpec, Format};
use crate::error::Result;
use crate::mc::Estimate;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            // 17 significant digits round-trip every f64
            Cell::Float(v) => format!("{v:.16e}"),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Float)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.iter().map(Cell::csv).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}

/// Columns of every sweep table.
pub const SWEEP_COLUMNS: [&str; 5] = ["n", "estimate", "stderr", "normalized", "ratio_to_prev"];

pub fn sweep_row(n: usize, estimate: &Estimate, normalized: f64, ratio: Option<f64>) -> Vec<Cell> {
    vec![n.into(), estimate.mean.into(), estimate.stderr.into(), normalized.into(), ratio.into()]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub regime: Option<String>,
    pub table: Table,
    pub flags: BTreeMap<String, bool>,
    pub pass: bool,
    pub wall_clock_s: f64,
    pub version: String,
    pub master_seed: u64,
    pub n_samples: usize,
}

impl ExperimentReport {
    /// Writes `<target>.csv` or `<target>.json` (the table) plus
    /// `<target>.summary.json`, returning the written paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let stem = &self.spec.target;
        let mut written = Vec::new();
        match self.spec.format {
            Format::Csv => {
                let p = dir.join(format!("{stem}.csv"));
                std::fs::write(&p, self.table.to_csv())?;
                written.push(p);
            }
            Format::Json => {
                let p = dir.join(format!("{stem}.json"));
                std::fs::write(&p, serde_json::to_string_pretty(&self.table).expect("table serialises"))?;
                written.push(p);
            }
        }
        let p = dir.join(format!("{stem}.summary.json"));
        let mut f = std::fs::File::create(&p)?;
        f.write_all(serde_json::to_string_pretty(self).expect("report serialises").as_bytes())?;
        f.write_all(b"\n")?;
        written.push(p);
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut t = Table::new(&SWEEP_COLUMNS);
        t.push(sweep_row(20, &Estimate::new(0.1, 0.01, 10), 0.5, None));
        t.push(sweep_row(40, &Estimate::new(0.2, 0.02, 10), 0.25, Some(0.5)));
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "n,estimate,stderr,normalized,ratio_to_prev");
        assert_eq!(lines[1], "20,1.0000000000000001e-1,1.0000000000000000e-2,5.0000000000000000e-1,");
        let back: f64 = lines[2].split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(back, 0.2);
    }
}

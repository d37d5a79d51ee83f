use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub id: String,
    pub metrics: BTreeMap<String, f64>,
}

impl MetricRow {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            metrics: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, name: &str, v: f64) {
        self.metrics.insert(name.to_string(), v);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

/// One row per image; columns are the union of metric names.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
}

impl MetricTable {
    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = self
            .rows
            .iter()
            .flat_map(|r| r.metrics.keys().cloned())
            .collect();
        cols.sort();
        cols.dedup();
        cols
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter_map(|r| r.get(name)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn means(&self) -> BTreeMap<String, f64> {
        self.columns()
            .into_iter()
            .filter_map(|c| self.mean(&c).map(|m| (c, m)))
            .collect()
    }

    /// Delimited text: `id` then one column per metric. Tab or comma.
    pub fn write_delimited(&self, path: &Path, delimiter: u8) -> Result<()> {
        let cols = self.columns();
        let mut w = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_path(path)
            .map_err(|e| csv_err(path, e))?;
        let mut header = vec!["id".to_string()];
        header.extend(cols.iter().cloned());
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for r in &self.rows {
            let mut rec = vec![r.id.clone()];
            rec.extend(cols.iter().map(|c| r.get(c).map(|v| format!("{v:.6}")).unwrap_or_default()));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(io_err(path))
    }

    pub fn read_delimited(path: &Path, delimiter: u8) -> Result<MetricTable> {
        let mut r = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .from_path(path)
            .map_err(|e| csv_err(path, e))?;
        let header: Vec<String> = r
            .headers()
            .map_err(|e| csv_err(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut t = MetricTable::default();
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let mut row = MetricRow::new(rec.get(0).unwrap_or_default());
            for (name, v) in header.iter().zip(rec.iter()).skip(1) {
                if !v.is_empty() {
                    let x = v.parse::<f64>().map_err(|e| Error::Format {
                        path: path.to_path_buf(),
                        msg: format!("{name}: {e}"),
                    })?;
                    row.set(name, x);
                }
            }
            t.rows.push(row);
        }
        Ok(t)
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "count": self.rows.len(),
            "mean": self.means(),
        })
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.summary_json()).expect("plain values");
        std::fs::write(path, text + "\n").map_err(io_err(path))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

//! Per-region time series panels and their CSV form (`region_id,t0,t1,...`).

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frequency {
    Monthly,
    Yearly,
}

/// Region id → uniformly indexed series. Missing observations are NaN and
/// reported through [`SeriesPanel::valid_span`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPanel {
    pub task: String,
    pub frequency: Frequency,
    pub ids: Vec<String>,
    /// regions × steps
    pub values: Array2<f64>,
}

impl SeriesPanel {
    pub fn new(task: impl Into<String>, frequency: Frequency, ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if ids.len() != values.nrows() {
            return Err(Error::Shape(format!("{} ids for {} series", ids.len(), values.nrows())));
        }
        let values = values.as_standard_layout().into_owned();
        Ok(Self { task: task.into(), frequency, ids, values })
    }

    pub fn n_steps(&self) -> usize {
        self.values.ncols()
    }

    pub fn series(&self, region: usize) -> &[f64] {
        let n = self.n_steps();
        &self.values.as_slice().expect("panel is stored row-major")[region * n..(region + 1) * n]
    }

    /// True when every step in `span` is finite for `region`.
    pub fn valid_span(&self, region: usize, span: Range<usize>) -> bool {
        span.end <= self.n_steps() && self.values.row(region).iter().skip(span.start).take(span.len()).all(|v| v.is_finite())
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let steps: Vec<String> = (0..self.n_steps()).map(|t| format!("t{t}")).collect();
        let mut header = vec!["region_id"];
        header.extend(steps.iter().map(String::as_str));
        let rows: Vec<Vec<String>> = self
            .ids
            .iter()
            .zip(self.values.rows())
            .map(|(id, row)| std::iter::once(id.clone()).chain(row.iter().map(|v| v.to_string())).collect())
            .collect();
        io::write_csv_table(path, &header, &rows)
    }

    pub fn read_csv(path: &Path, task: &str, frequency: Frequency) -> Result<Self> {
        let table = io::read_csv_table(path)?;
        if table.header.first().map(String::as_str) != Some("region_id") {
            return Err(Error::parse(path, "first column must be region_id"));
        }
        let steps = table.header.len() - 1;
        let mut ids = Vec::new();
        let mut flat = Vec::with_capacity(table.rows.len() * steps);
        for row in &table.rows {
            if row.len() != steps + 1 {
                return Err(Error::parse(path, format!("row `{}` has {} fields", row[0], row.len())));
            }
            ids.push(row[0].clone());
            for v in &row[1..] {
                flat.push(io::parse_f64(path, v)?);
            }
        }
        let values = Array2::from_shape_vec((ids.len(), steps), flat).expect("row-major buffer");
        Self::new(task, frequency, ids, values)
    }
}

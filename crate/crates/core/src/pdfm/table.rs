use std::collections::{HashMap, HashSet};
use std::path::Path;

use ndarray::{concatenate, s, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::config::Partition;
use crate::error::{Error, Result};
use crate::features::Source;
use crate::io;

/// Node id → embedding row, with the partition map that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub ids: Vec<String>,
    pub values: Array2<f64>,
    pub fingerprint: String,
    pub partitions: Vec<Partition>,
}

#[derive(Serialize, Deserialize)]
struct TableMeta {
    fingerprint: String,
    partitions: Vec<Partition>,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<String>, values: Array2<f64>, fingerprint: String, partitions: Vec<Partition>) -> Result<Self> {
        if ids.len() != values.nrows() {
            return Err(Error::Shape(format!("{} ids for {} embedding rows", ids.len(), values.nrows())));
        }
        let covered = partitions.last().map(|p| p.end).unwrap_or(0);
        if covered != values.ncols() {
            return Err(Error::Shape(format!("partitions cover {covered} columns, table has {}", values.ncols())));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Schema(format!("duplicate embedding id `{dup}`")));
        }
        Ok(Self { ids, values, fingerprint, partitions })
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    /// Columns of one partition, addressed by partition name or by a source it holds.
    pub fn slice_modality(&self, modality: &str) -> Result<EmbeddingTable> {
        let source = modality.parse::<Source>().ok();
        let p = self
            .partitions
            .iter()
            .find(|p| p.name == modality || source.is_some_and(|s| p.sources.contains(&s)))
            .ok_or_else(|| Error::Lookup { kind: "modality", id: modality.into() })?;
        let values = self.values.slice(s![.., p.range()]).to_owned();
        let narrowed = Partition { start: 0, end: p.width(), ..p.clone() };
        Ok(EmbeddingTable {
            ids: self.ids.clone(),
            values,
            fingerprint: format!("{}:{}", self.fingerprint, p.name),
            partitions: vec![narrowed],
        })
    }

    /// Row-wise `[self ‖ external]` in this table's id order.
    pub fn concat_external(&self, external: &EmbeddingTable) -> Result<EmbeddingTable> {
        if external.width() == 0 {
            return Ok(self.clone());
        }
        let rows = external.rows_for(&self.ids)?;
        let extra: HashSet<&str> = self.ids.iter().map(String::as_str).collect();
        let unmatched: Vec<String> = external.ids.iter().filter(|id| !extra.contains(id.as_str())).cloned().collect();
        if !unmatched.is_empty() {
            return Err(Error::Join { count: unmatched.len(), first: unmatched.into_iter().take(5).collect() });
        }
        let values = concatenate(Axis(1), &[self.values.view(), rows.view()]).map_err(|e| Error::Shape(e.to_string()))?;
        let mut partitions = self.partitions.clone();
        let start = self.width();
        partitions.push(Partition::new("external", &[Source::External], start..start + external.width()));
        Ok(EmbeddingTable {
            ids: self.ids.clone(),
            values,
            fingerprint: format!("{}+{}", self.fingerprint, external.fingerprint),
            partitions,
        })
    }

    /// Rows for `ids` in the given order; missing ids produce a join error.
    pub fn rows_for(&self, ids: &[String]) -> Result<Array2<f64>> {
        let index = self.index();
        let missing: Vec<String> = ids.iter().filter(|id| !index.contains_key(id.as_str())).cloned().collect();
        if !missing.is_empty() {
            return Err(Error::Join { count: missing.len(), first: missing.into_iter().take(5).collect() });
        }
        let rows: Vec<usize> = ids.iter().map(|id| index[id.as_str()]).collect();
        Ok(self.values.select(Axis(0), &rows))
    }

    /// `region_id,e_0,…` with shortest round-trip decimals.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let cols: Vec<String> = (0..self.width()).map(|j| format!("e_{j}")).collect();
        let mut header = vec!["region_id"];
        header.extend(cols.iter().map(String::as_str));
        let rows: Vec<Vec<String>> = self
            .ids
            .iter()
            .zip(self.values.rows())
            .map(|(id, r)| std::iter::once(id.clone()).chain(r.iter().map(|v| v.to_string())).collect())
            .collect();
        io::write_csv_table(path, &header, &rows)
    }

    /// Read a plain embedding CSV (e.g. an external table). It gets a single
    /// partition named `external`.
    pub fn read_csv(path: &Path) -> Result<EmbeddingTable> {
        let t = io::read_csv_table(path)?;
        if t.header.first().map(String::as_str) != Some("region_id") {
            return Err(Error::parse(path, "first column must be region_id"));
        }
        let width = t.header.len() - 1;
        let mut ids = Vec::with_capacity(t.rows.len());
        let mut flat = Vec::with_capacity(t.rows.len() * width);
        for row in &t.rows {
            if row.len() != width + 1 {
                return Err(Error::parse(path, format!("row `{}` has {} fields", row[0], row.len())));
            }
            ids.push(row[0].clone());
            for v in &row[1..] {
                flat.push(io::parse_f64(path, v)?);
            }
        }
        let values = Array2::from_shape_vec((ids.len(), width), flat).expect("row-major buffer");
        let fingerprint = io::sha256_hex(io::read_string(path)?.as_bytes())[..16].to_string();
        EmbeddingTable::new(ids, values, fingerprint, vec![Partition::new("external", &[Source::External], 0..width)])
    }

    /// `embeddings.csv` plus `embeddings_meta.json` in `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.write_csv(&dir.join("embeddings.csv"))?;
        io::write_json(
            &dir.join("embeddings_meta.json"),
            &TableMeta { fingerprint: self.fingerprint.clone(), partitions: self.partitions.clone() },
        )
    }

    pub fn load(dir: &Path) -> Result<EmbeddingTable> {
        let plain = Self::read_csv(&dir.join("embeddings.csv"))?;
        let meta: TableMeta = io::read_json(&dir.join("embeddings_meta.json"))?;
        EmbeddingTable::new(plain.ids, plain.values, meta.fingerprint, meta.partitions)
    }
}

//! File helpers shared by the stage writers: CSV tables, feature-block CSVs and
//! deterministic JSON.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{FeatureBlock, Source};

pub fn write_string(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline. Map key order comes from the value's
/// types, so callers use ordered maps for reproducible bytes.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e.to_string()))?;
    text.push('\n');
    write_string(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

/// A header plus string rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn read_csv_table(path: &Path) -> Result<CsvTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| Error::parse(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok(CsvTable { header, rows })
}

pub fn write_csv_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::parse(path, e.to_string());
    writer.write_record(header).map_err(to_err)?;
    for row in rows {
        writer.write_record(row).map_err(to_err)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::parse(path, e.to_string()))?;
    write_string(path, &String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_f64(path: &Path, s: &str) -> Result<f64> {
    if s.is_empty() || s.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    s.parse::<f64>().map_err(|e| Error::parse(path, format!("`{s}`: {e}")))
}

/// `region_id,<columns...>` with shortest round-trip float formatting.
pub fn write_block_csv(path: &Path, block: &FeatureBlock) -> Result<()> {
    let mut header = vec!["region_id"];
    header.extend(block.columns.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = block
        .ids
        .iter()
        .zip(block.values.rows())
        .map(|(id, row)| std::iter::once(id.clone()).chain(row.iter().map(|v| v.to_string())).collect())
        .collect();
    write_csv_table(path, &header, &rows)
}

pub fn read_block_csv(path: &Path, source: Source) -> Result<FeatureBlock> {
    let table = read_csv_table(path)?;
    if table.header.first().map(String::as_str) != Some("region_id") {
        return Err(Error::parse(path, "first column must be region_id"));
    }
    let columns: Vec<String> = table.header[1..].to_vec();
    let mut ids = Vec::with_capacity(table.rows.len());
    let mut flat = Vec::with_capacity(table.rows.len() * columns.len());
    for row in &table.rows {
        if row.len() != columns.len() + 1 {
            return Err(Error::parse(path, format!("row for `{}` has {} fields", row[0], row.len())));
        }
        ids.push(row[0].clone());
        for v in &row[1..] {
            flat.push(parse_f64(path, v)?);
        }
    }
    let values = Array2::from_shape_vec((ids.len(), columns.len()), flat).expect("row-major buffer");
    FeatureBlock::new(source, ids, columns, values)
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Fingerprint of any serializable value (hash of its compact JSON).
pub fn fingerprint<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("fingerprinted values serialize");
    sha256_hex(&json)[..16].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn block_csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features_maps.csv");
        let block = FeatureBlock::new(
            Source::Maps,
            vec!["p1".into(), "p2".into()],
            vec!["a".into(), "b".into()],
            array![[0.1 + 0.2, -1e-300], [std::f64::consts::PI, 12345.678901234567]],
        )
        .unwrap();
        write_block_csv(&path, &block).unwrap();
        let back = read_block_csv(&path, Source::Maps).unwrap();
        assert_eq!(back, block);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("region_id,a,b\n"));
        assert!(!text.contains('\r'));
    }
}

//! Feature blocks and their preprocessing: trends normalization, column-wise
//! standardization with clipping, postal-to-county aggregation and
//! concatenation into the node input matrix.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to the standard deviation of constant columns.
pub const STD_FLOOR: f64 = 1e-8;
/// Default clip bound, in standard deviations.
pub const DEFAULT_CLIP: f64 = 4.0;
/// Rows with more than this fraction of absent entries are dropped by
/// [`filter_sparse_rows`].
pub const DEFAULT_SPARSE_ROW_THRESHOLD: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Trends,
    Maps,
    Busyness,
    WeatherAq,
    External,
}

impl Source {
    pub const MODEL_SOURCES: [Source; 4] =
        [Source::Trends, Source::Maps, Source::Busyness, Source::WeatherAq];

    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Trends => "trends",
            Source::Maps => "maps",
            Source::Busyness => "busyness",
            Source::WeatherAq => "weather_aq",
            Source::External => "external",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trends" => Ok(Source::Trends),
            "maps" => Ok(Source::Maps),
            "busyness" => Ok(Source::Busyness),
            "weather_aq" => Ok(Source::WeatherAq),
            "external" => Ok(Source::External),
            other => Err(Error::Lookup { kind: "source", id: other.to_string() }),
        }
    }
}

/// One matrix per data source, rows aligned with `ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub source: Source,
    pub ids: Vec<String>,
    pub columns: Vec<String>,
    pub values: Array2<f64>,
}

impl FeatureBlock {
    pub fn new(source: Source, ids: Vec<String>, columns: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != ids.len() || values.ncols() != columns.len() {
            return Err(Error::Shape(format!(
                "{source} block is {}x{} but has {} ids and {} columns",
                values.nrows(),
                values.ncols(),
                ids.len(),
                columns.len()
            )));
        }
        Ok(Self { source, ids, columns, values })
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row_index(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    /// Rows reordered (and possibly subset) to follow `order`.
    pub fn select_rows(&self, order: &[String]) -> Result<FeatureBlock> {
        let index = self.row_index();
        let mut values = Array2::zeros((order.len(), self.width()));
        for (r, id) in order.iter().enumerate() {
            let &src = index
                .get(id.as_str())
                .ok_or_else(|| Error::Schema(format!("{} block has no row for `{id}`", self.source)))?;
            values.row_mut(r).assign(&self.values.row(src));
        }
        Ok(FeatureBlock { source: self.source, ids: order.to_vec(), columns: self.columns.clone(), values })
    }

    pub fn column_slice(&self, range: Range<usize>) -> FeatureBlock {
        FeatureBlock {
            source: self.source,
            ids: self.ids.clone(),
            columns: self.columns[range.clone()].to_vec(),
            values: self.values.slice(ndarray::s![.., range]).to_owned(),
        }
    }
}

/// Scale a nonnegative count vector so it sums to 100.
pub fn normalize_trends(counts: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = counts.iter().find(|c| !c.is_finite() || **c < 0.0) {
        return Err(Error::Normalization(format!("counts must be finite and nonnegative, got {bad}")));
    }
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::Normalization("all-zero count vector".into()));
    }
    Ok(counts.iter().map(|c| 100.0 * c / total).collect())
}

/// Order in which standardization and clipping are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipOrder {
    /// `clamp((x - mean) / std, -c, c)`.
    #[default]
    StandardizeThenClip,
    /// Clip raw values at `mean ± c·std`, refit, then standardize (unbounded output).
    ClipThenStandardize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub clip: f64,
}

/// Per-column mean and population standard deviation, floored at [`STD_FLOOR`].
pub fn fit_standardizer(block: &FeatureBlock, clip: f64) -> Result<StandardizationStats> {
    if block.is_empty() {
        return Err(Error::Validation(format!("cannot fit a standardizer on an empty {} block", block.source)));
    }
    if !(clip > 0.0) {
        return Err(Error::config("clip", format!("must be > 0, got {clip}")));
    }
    let (mean, std) = column_moments(&block.values);
    Ok(StandardizationStats { columns: block.columns.clone(), mean, std, clip })
}

pub(crate) fn column_moments(values: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = values.nrows() as f64;
    let mean: Array1<f64> = values.sum_axis(Axis(0)) / n;
    let std = values
        .axis_iter(Axis(1))
        .zip(mean.iter())
        .map(|(col, &m)| {
            let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            var.sqrt().max(STD_FLOOR)
        })
        .collect();
    (mean.to_vec(), std)
}

/// Apply fitted stats: `clamp((x - mean) / std, -c, c)`.
pub fn apply_standardizer(block: &FeatureBlock, stats: &StandardizationStats) -> Result<FeatureBlock> {
    if block.columns != stats.columns {
        return Err(Error::Schema(format!(
            "{} block columns do not match the fitted standardizer ({} vs {} columns)",
            block.source,
            block.columns.len(),
            stats.columns.len()
        )));
    }
    let c = stats.clip;
    let mut out = block.values.clone();
    for mut row in out.rows_mut() {
        for ((x, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *x = ((*x - m) / s).clamp(-c, c);
        }
    }
    Ok(FeatureBlock { values: out, ..block.clone() })
}

/// Fit and apply in one step following `order`.
pub fn standardize(block: &FeatureBlock, clip: f64, order: ClipOrder) -> Result<(FeatureBlock, StandardizationStats)> {
    match order {
        ClipOrder::StandardizeThenClip => {
            let stats = fit_standardizer(block, clip)?;
            Ok((apply_standardizer(block, &stats)?, stats))
        }
        ClipOrder::ClipThenStandardize => {
            let first = fit_standardizer(block, clip)?;
            let mut clipped = block.clone();
            for mut row in clipped.values.rows_mut() {
                for ((x, m), s) in row.iter_mut().zip(&first.mean).zip(&first.std) {
                    *x = x.clamp(m - clip * s, m + clip * s);
                }
            }
            let mut stats = fit_standardizer(&clipped, clip)?;
            let mut out = clipped.clone();
            for mut row in out.values.rows_mut() {
                for ((x, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
                    *x = (*x - m) / s;
                }
            }
            stats.clip = f64::INFINITY;
            Ok((out, stats))
        }
    }
}

/// Replace NaN entries with the mean of the column's observed values
/// (0 when a column has no observed values).
pub fn impute_missing(block: &FeatureBlock) -> FeatureBlock {
    let mut out = block.clone();
    for mut col in out.values.axis_iter_mut(Axis(1)) {
        let (sum, n) = col
            .iter()
            .filter(|x| x.is_finite())
            .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        let fill = if n > 0 { sum / n as f64 } else { 0.0 };
        col.iter_mut().filter(|x| !x.is_finite()).for_each(|x| *x = fill);
    }
    out
}

/// Drop rows where more than `threshold` of the entries are missing (NaN) or zero.
pub fn filter_sparse_rows(block: &FeatureBlock, threshold: f64) -> FeatureBlock {
    let width = block.width().max(1) as f64;
    let keep: Vec<usize> = block
        .values
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(_, row)| {
            let absent = row.iter().filter(|x| !x.is_finite() || **x == 0.0).count() as f64;
            absent / width <= threshold
        })
        .map(|(i, _)| i)
        .collect();
    if keep.len() < block.len() {
        log::info!("{}: dropped {} sparse rows", block.source, block.len() - keep.len());
    }
    FeatureBlock {
        source: block.source,
        ids: keep.iter().map(|&i| block.ids[i].clone()).collect(),
        columns: block.columns.clone(),
        values: block.values.select(Axis(0), &keep),
    }
}

/// Unweighted mean of member postal rows for each county in `county_order`.
///
/// `membership` maps postal id to county id. Counties with no members are
/// left out of the result (with a warning).
pub fn aggregate_to_county(
    postal: &FeatureBlock,
    membership: &HashMap<String, String>,
    county_order: &[String],
) -> Result<FeatureBlock> {
    let mut sums: BTreeMap<&str, (Array1<f64>, usize)> = BTreeMap::new();
    for (row, id) in postal.values.rows().into_iter().zip(&postal.ids) {
        let county = membership
            .get(id)
            .ok_or_else(|| Error::Integrity(format!("postal `{id}` has no county membership")))?;
        let entry = sums
            .entry(county.as_str())
            .or_insert_with(|| (Array1::zeros(postal.width()), 0));
        entry.0 += &row;
        entry.1 += 1;
    }
    let mut ids = Vec::with_capacity(county_order.len());
    let mut rows = Vec::with_capacity(county_order.len() * postal.width());
    for county in county_order {
        match sums.get(county.as_str()) {
            Some((sum, n)) => {
                ids.push(county.clone());
                rows.extend(sum.iter().map(|s| s / *n as f64));
            }
            None => log::warn!("county `{county}` has no postal members; excluded from aggregation"),
        }
    }
    let values = Array2::from_shape_vec((ids.len(), postal.width()), rows).expect("row-major buffer");
    FeatureBlock::new(postal.source, ids, postal.columns.clone(), values)
}

/// Concatenated node inputs with column provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeInputs {
    pub ids: Vec<String>,
    pub values: Array2<f64>,
    pub provenance: Vec<(Source, Range<usize>)>,
}

impl NodeInputs {
    pub fn range_of(&self, source: Source) -> Option<Range<usize>> {
        self.provenance.iter().find(|(s, _)| *s == source).map(|(_, r)| r.clone())
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }
}

/// Concatenate blocks column-wise. All blocks must list the same ids in the same order.
pub fn concat_blocks(blocks: &[&FeatureBlock]) -> Result<NodeInputs> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::Schema("no blocks to concatenate".into()))?;
    for b in &blocks[1..] {
        if b.ids != first.ids {
            return Err(Error::Schema(format!(
                "{} block rows are not aligned with {} block rows",
                b.source, first.source
            )));
        }
    }
    let mut provenance = Vec::with_capacity(blocks.len());
    let mut start = 0;
    for b in blocks {
        provenance.push((b.source, start..start + b.width()));
        start += b.width();
    }
    let views: Vec<_> = blocks.iter().map(|b| b.values.view()).collect();
    let values = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(NodeInputs { ids: first.ids.clone(), values, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn block(source: Source, ids: &[&str], values: Array2<f64>) -> FeatureBlock {
        let columns = (0..values.ncols()).map(|c| format!("c{c}")).collect();
        FeatureBlock::new(source, ids.iter().map(|s| s.to_string()).collect(), columns, values).unwrap()
    }

    #[test]
    fn trends_normalization() {
        assert_eq!(normalize_trends(&[1.0, 1.0, 1.0, 1.0]).unwrap(), vec![25.0; 4]);
        assert_eq!(normalize_trends(&[100.0]).unwrap(), vec![100.0]);
        let v = normalize_trends(&[2.0, 3.0, 5.0]).unwrap();
        for (a, b) in v.iter().zip([20.0, 30.0, 50.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(normalize_trends(&[0.0, 0.0]), Err(Error::Normalization(_))));
    }

    #[test]
    fn standardizer_stats() {
        let b = block(Source::Maps, &["a", "b", "c"], array![[5.0, 0.0], [5.0, 2.0], [5.0, 1.0]]);
        let s = fit_standardizer(&b, DEFAULT_CLIP).unwrap();
        assert_eq!(s.mean[0], 5.0);
        assert_eq!(s.std[0], STD_FLOOR);
        let b2 = block(Source::Maps, &["a", "b"], array![[0.0], [2.0]]);
        let s2 = fit_standardizer(&b2, DEFAULT_CLIP).unwrap();
        assert_eq!((s2.mean[0], s2.std[0]), (1.0, 1.0));
        assert_eq!(fit_standardizer(&b2, 4.0).unwrap(), s2);
    }

    #[test]
    fn standardizer_apply_and_clip() {
        let stats = StandardizationStats { columns: vec!["c0".into()], mean: vec![3.0], std: vec![2.0], clip: 4.0 };
        let b = block(Source::Maps, &["a", "b", "c"], array![[3.0], [23.0], [8.0]]);
        let out = apply_standardizer(&b, &stats).unwrap();
        assert_eq!(out.values.column(0).to_vec(), vec![0.0, 4.0, 2.5]);

        let wrong = block(Source::Maps, &["a"], array![[1.0, 2.0]]);
        assert!(matches!(apply_standardizer(&wrong, &stats), Err(Error::Schema(_))));
    }

    #[test]
    fn aggregation_identity_and_midpoint() {
        let b = block(Source::Trends, &["p1", "p2", "p3"], array![[1.0, 4.0], [3.0, 8.0], [7.0, 7.0]]);
        let membership: HashMap<String, String> =
            [("p1", "cA"), ("p2", "cA"), ("p3", "cB")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        let order = vec!["cA".to_string(), "cB".to_string(), "cEmpty".to_string()];
        let c = aggregate_to_county(&b, &membership, &order).unwrap();
        assert_eq!(c.ids, vec!["cA", "cB"]);
        assert_eq!(c.values, array![[2.0, 6.0], [7.0, 7.0]]);
    }

    #[test]
    fn concat_widths_and_alignment() {
        let ids = ["a", "b"];
        let widths = [64, 64, 32, 45];
        let blocks: Vec<FeatureBlock> = Source::MODEL_SOURCES
            .iter()
            .zip(widths)
            .map(|(&s, w)| block(s, &ids, Array2::ones((2, w))))
            .collect();
        let refs: Vec<&FeatureBlock> = blocks.iter().collect();
        let inputs = concat_blocks(&refs).unwrap();
        assert_eq!(inputs.width(), 205);
        assert_eq!(inputs.range_of(Source::Busyness), Some(128..160));

        let single = concat_blocks(&[&blocks[0]]).unwrap();
        assert_eq!(single.values, blocks[0].values);

        let misaligned = block(Source::Maps, &["b", "a"], Array2::ones((2, 3)));
        assert!(matches!(concat_blocks(&[&blocks[0], &misaligned]), Err(Error::Schema(_))));
    }

    #[test]
    fn concat_commutes_with_row_permutation() {
        let a = block(Source::Trends, &["x", "y", "z"], array![[1.0], [2.0], [3.0]]);
        let b = block(Source::Maps, &["x", "y", "z"], array![[10.0, 11.0], [20.0, 21.0], [30.0, 31.0]]);
        let order: Vec<String> = ["z", "x", "y"].iter().map(|s| s.to_string()).collect();
        let permuted = concat_blocks(&[&a.select_rows(&order).unwrap(), &b.select_rows(&order).unwrap()]).unwrap();
        let full = concat_blocks(&[&a, &b]).unwrap();
        assert_eq!(permuted.values.row(0), full.values.row(2));
        assert_eq!(permuted.values.row(1), full.values.row(0));
    }

    #[test]
    fn imputation_and_sparse_filter() {
        let b = block(Source::Trends, &["a", "b", "c"], array![[1.0, f64::NAN], [3.0, 2.0], [0.0, 0.0]]);
        let imputed = impute_missing(&b);
        assert_eq!(imputed.values[[0, 1]], 1.0);
        let kept = filter_sparse_rows(&b, 0.5);
        assert_eq!(kept.ids, vec!["a", "b"]);
    }

    proptest! {
        #[test]
        fn standardized_columns_are_centered(data in prop::collection::vec(-1e3f64..1e3, 12..60)) {
            let rows = data.len() / 3;
            let values = Array2::from_shape_vec((rows, 3), data[..rows * 3].to_vec()).unwrap();
            let ids: Vec<String> = (0..rows).map(|i| format!("r{i}")).collect();
            let b = FeatureBlock::new(Source::Maps, ids, vec!["a".into(), "b".into(), "c".into()], values).unwrap();
            let mut stats = fit_standardizer(&b, 1.0).unwrap();
            stats.clip = f64::INFINITY;
            let out = apply_standardizer(&b, &stats).unwrap();
            for (j, col) in out.values.axis_iter(Axis(1)).enumerate() {
                if stats.std[j] <= 1e-6 { continue; }
                let n = col.len() as f64;
                let m = col.sum() / n;
                let sd = (col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
                prop_assert!(m.abs() < 1e-9);
                prop_assert!((sd - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn clipping_bounds_output(data in prop::collection::vec(-1e3f64..1e3, 4..40), c in 0.5f64..5.0) {
            let n = data.len();
            let b = FeatureBlock::new(Source::Maps, (0..n).map(|i| i.to_string()).collect(), vec!["a".into()],
                Array2::from_shape_vec((n, 1), data).unwrap()).unwrap();
            let stats = fit_standardizer(&b, c).unwrap();
            let out = apply_standardizer(&b, &stats).unwrap();
            let mut unclipped = stats.clone();
            unclipped.clip = f64::INFINITY;
            let raw = apply_standardizer(&b, &unclipped).unwrap();
            for (x, r) in out.values.iter().zip(raw.values.iter()) {
                prop_assert!(x.abs() <= c + 1e-12);
                prop_assert!(x.abs() <= r.abs() + 1e-12);
            }
        }

        #[test]
        fn aggregation_is_linear(a in prop::collection::vec(-10f64..10.0, 8), b in prop::collection::vec(-10f64..10.0, 8)) {
            let ids = ["p0", "p1", "p2", "p3"];
            let membership: HashMap<String, String> = ids.iter().enumerate()
                .map(|(i, p)| (p.to_string(), format!("c{}", i % 2))).collect();
            let order = vec!["c0".to_string(), "c1".to_string()];
            let ba = block(Source::Maps, &ids, Array2::from_shape_vec((4, 2), a).unwrap());
            let bb = block(Source::Maps, &ids, Array2::from_shape_vec((4, 2), b).unwrap());
            let sum = FeatureBlock { values: &ba.values + &bb.values, ..ba.clone() };
            let lhs = aggregate_to_county(&sum, &membership, &order).unwrap().values;
            let rhs = aggregate_to_county(&ba, &membership, &order).unwrap().values
                + aggregate_to_county(&bb, &membership, &order).unwrap().values;
            for (x, y) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}

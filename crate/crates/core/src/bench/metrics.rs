use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::Metric(format!("{} targets for {} predictions", y.len(), yhat.len())));
    }
    if y.len() < 2 {
        return Err(Error::Metric("need at least 2 values".into()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `1 − SSres/SStot`; not clamped, so it can be negative.
pub fn r_squared(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let m = mean(y);
    let ss_tot: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Metric("r_squared undefined for constant targets".into()));
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn pearson_r(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let (my, mp) = (mean(y), mean(yhat));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(yhat) {
        let (da, db) = (a - my, b - mp);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Metric("pearson_r undefined for constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntraCounty {
    pub mean: f64,
    pub per_county: BTreeMap<String, f64>,
    pub skipped: usize,
}

pub const INTRA_COUNTY_MIN_POINTS: usize = 3;

/// Pearson r within each county with at least 3 points and non-constant
/// values, averaged without weights.
pub fn intra_county_pearson(y: &[f64], yhat: &[f64], county: &[String]) -> Result<IntraCounty> {
    if y.len() != yhat.len() || y.len() != county.len() {
        return Err(Error::Metric("targets, predictions and counties must align".into()));
    }
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for i in 0..y.len() {
        let g = groups.entry(county[i].as_str()).or_default();
        g.0.push(y[i]);
        g.1.push(yhat[i]);
    }
    let mut per_county = BTreeMap::new();
    let mut skipped = 0;
    for (c, (a, b)) in &groups {
        if a.len() < INTRA_COUNTY_MIN_POINTS {
            skipped += 1;
            continue;
        }
        match pearson_r(a, b) {
            Ok(r) => {
                per_county.insert(c.to_string(), r);
            }
            Err(_) => skipped += 1,
        }
    }
    if per_county.is_empty() {
        return Err(Error::Metric("no county qualifies for intra-county Pearson".into()));
    }
    let mean = per_county.values().sum::<f64>() / per_county.len() as f64;
    Ok(IntraCounty { mean, per_county, skipped })
}

pub const MAPE_MIN_ABS: f64 = 1e-9;

/// Mean absolute percentage error as a fraction (0.1 = 10%).
pub fn mape(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() || y.is_empty() {
        return Err(Error::Metric(format!("{} targets for {} predictions", y.len(), yhat.len())));
    }
    if let Some(v) = y.iter().find(|v| v.abs() < MAPE_MIN_ABS) {
        return Err(Error::Metric(format!("mape undefined for near-zero actual {v}")));
    }
    Ok(y.iter().zip(yhat).map(|(a, b)| ((a - b) / a).abs()).sum::<f64>() / y.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub n: usize,
    pub mean_difference: f64,
    /// `None` when the differences have zero variance.
    pub t: Option<f64>,
    pub p: f64,
    pub threshold: f64,
    pub significant: bool,
    pub degenerate: Option<String>,
}

/// Paired two-sided t-test on `a − b`, Bonferroni threshold `0.05 / m`.
pub fn paired_t_test(a: &[f64], b: &[f64], comparisons: usize) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Metric("paired t-test needs two equal-length samples of size >= 2".into()));
    }
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let var = d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let threshold = 0.05 / comparisons.max(1) as f64;
    if var == 0.0 {
        let (p, reason) = if m == 0.0 {
            (1.0, "all differences are zero")
        } else {
            (0.0, "zero-variance differences with nonzero mean")
        };
        return Ok(TTest {
            n,
            mean_difference: m,
            t: None,
            p,
            threshold,
            significant: p < threshold,
            degenerate: Some(reason.into()),
        });
    }
    let t = m / (var.sqrt() / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::Metric(e.to_string()))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTest { n, mean_difference: m, t: Some(t), p, threshold, significant: p < threshold, degenerate: None })
}

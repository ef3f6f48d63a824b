use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Region, RegionKind};
use crate::{io, rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Interpolation,
    Extrapolation,
    Superres,
}

impl SplitKind {
    pub const ALL: [SplitKind; 3] = [SplitKind::Interpolation, SplitKind::Extrapolation, SplitKind::Superres];

    pub fn as_str(&self) -> &'static str {
        match self {
            SplitKind::Interpolation => "interpolation",
            SplitKind::Extrapolation => "extrapolation",
            SplitKind::Superres => "superres",
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SplitKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Lookup { kind: "split", id: s.into() })
    }
}

/// Train/validation/test ids plus the held-out groups that define them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub kind: SplitKind,
    /// Granularity of the training rows.
    pub train_level: RegionKind,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub holdout_groups: Vec<String>,
    pub holdout_fraction: f64,
    pub seed: u64,
    pub manifest_hash: String,
}

impl SplitSpec {
    fn seal(mut self) -> Self {
        self.manifest_hash = io::fingerprint(&(
            self.kind,
            &self.train,
            &self.validation,
            &self.test,
            &self.holdout_groups,
            self.seed,
            self.holdout_fraction,
        ));
        self
    }
}

/// Postal id → county id, choosing the county with the largest overlap weight
/// (ties → smallest county id). `candidates` are (postal, county, weight).
pub fn map_postal_to_county(postal_ids: &[String], candidates: &[(String, String, f64)]) -> Result<BTreeMap<String, String>> {
    let mut best: BTreeMap<&str, (&str, f64)> = BTreeMap::new();
    for (p, c, w) in candidates {
        let e = best.entry(p.as_str()).or_insert((c.as_str(), *w));
        if *w > e.1 || (*w == e.1 && c.as_str() < e.0) {
            *e = (c.as_str(), *w);
        }
    }
    postal_ids
        .iter()
        .map(|p| {
            best.get(p.as_str())
                .map(|(c, _)| (p.clone(), c.to_string()))
                .ok_or_else(|| Error::Data(format!("postal code `{p}` has no candidate county")))
        })
        .collect()
}

/// Mapping candidates taken from region records (one parent per postal code).
pub fn candidates_from_regions(regions: &[Region]) -> Vec<(String, String, f64)> {
    regions
        .iter()
        .filter(|r| r.kind == RegionKind::Postal)
        .filter_map(|r| r.county.as_ref().map(|c| (r.id.clone(), c.clone(), r.overlap_weight)))
        .collect()
}

fn group_holdout(
    kind: SplitKind,
    postal_to_group: &BTreeMap<String, String>,
    frac: f64,
    seed: u64,
    what: &str,
) -> Result<SplitSpec> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::config("bench.holdout_fraction", "must be in (0, 1)"));
    }
    let groups: Vec<String> = postal_to_group.values().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if groups.len() < 5 {
        return Err(Error::Data(format!("need at least 5 {what} to hold out, got {}", groups.len())));
    }
    let n_hold = (frac * groups.len() as f64).floor() as usize;
    let mut shuffled = groups.clone();
    shuffled.shuffle(&mut rng::stream(seed, &format!("{kind}-groups")));
    let mut held: Vec<String> = shuffled[..n_hold].to_vec();
    held.sort();
    let held_set: BTreeSet<&str> = held.iter().map(String::as_str).collect();
    let (test, mut rest): (Vec<String>, Vec<String>) =
        postal_to_group.keys().cloned().partition(|p| held_set.contains(postal_to_group[p].as_str()));
    rest.shuffle(&mut rng::stream(seed, &format!("{kind}-validation")));
    let n_val = (0.2 * rest.len() as f64).round() as usize;
    let mut validation = rest[..n_val].to_vec();
    let mut train = rest[n_val..].to_vec();
    validation.sort();
    train.sort();
    Ok(SplitSpec {
        kind,
        train_level: RegionKind::Postal,
        train,
        validation,
        test,
        holdout_groups: held,
        holdout_fraction: frac,
        seed,
        manifest_hash: String::new(),
    }
    .seal())
}

/// Hold out `⌊frac·counties⌋` whole counties; remaining postal codes split 80/20.
pub fn make_interpolation_split(postal_to_county: &BTreeMap<String, String>, frac: f64, seed: u64) -> Result<SplitSpec> {
    group_holdout(SplitKind::Interpolation, postal_to_county, frac, seed, "counties")
}

/// Hold out `⌊frac·states⌋` whole states.
pub fn make_extrapolation_split(postal_to_state: &BTreeMap<String, String>, frac: f64, seed: u64) -> Result<SplitSpec> {
    group_holdout(SplitKind::Extrapolation, postal_to_state, frac, seed, "states")
}

/// County-level training rows for the counties outside the interpolation
/// holdout; validation and test postal codes are reused.
pub fn make_superres_split(interp: &SplitSpec, postal_to_county: &BTreeMap<String, String>) -> Result<SplitSpec> {
    if interp.kind != SplitKind::Interpolation {
        return Err(Error::config("bench.superres", "must be derived from an interpolation split"));
    }
    let held: BTreeSet<&str> = interp.holdout_groups.iter().map(String::as_str).collect();
    let train: Vec<String> = postal_to_county
        .values()
        .filter(|c| !held.contains(c.as_str()))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    Ok(SplitSpec {
        kind: SplitKind::Superres,
        train_level: RegionKind::County,
        train,
        validation: interp.validation.clone(),
        test: interp.test.clone(),
        holdout_groups: interp.holdout_groups.clone(),
        holdout_fraction: interp.holdout_fraction,
        seed: interp.seed,
        manifest_hash: String::new(),
    }
    .seal())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &str) -> String {
        v.to_string()
    }

    #[test]
    fn overlap_mapping_rules() {
        let ids = vec![s("p1"), s("p2"), s("p3")];
        let cands = vec![
            (s("p1"), s("cA"), 1.0),
            (s("p2"), s("cB"), 0.4),
            (s("p2"), s("cC"), 0.6),
            (s("p3"), s("cZ"), 0.5),
            (s("p3"), s("cY"), 0.5),
        ];
        let m = map_postal_to_county(&ids, &cands).unwrap();
        assert_eq!(m["p1"], "cA");
        assert_eq!(m["p2"], "cC");
        assert_eq!(m["p3"], "cY");
        assert!(matches!(map_postal_to_county(&[s("p9")], &cands), Err(Error::Data(_))));
    }

    fn world(n_groups: usize, per: usize) -> BTreeMap<String, String> {
        (0..n_groups * per).map(|i| (format!("p{i:04}"), format!("g{:02}", i % n_groups))).collect()
    }

    #[test]
    fn interpolation_counts_and_hygiene() {
        let m = world(50, 10);
        let sp = make_interpolation_split(&m, 0.2, 3).unwrap();
        assert_eq!(sp.holdout_groups.len(), 10);
        assert!(sp.test.iter().all(|p| sp.holdout_groups.contains(&m[p])));
        assert_eq!(sp.test.len(), 100);
        assert_eq!(sp.validation.len(), 80);
        assert_eq!(sp, make_interpolation_split(&m, 0.2, 3).unwrap());
        assert_ne!(sp.manifest_hash, make_interpolation_split(&m, 0.2, 4).unwrap().manifest_hash);
        assert!(make_interpolation_split(&m, 1.0, 3).is_err());
        assert!(make_interpolation_split(&world(4, 3), 0.2, 3).is_err());
    }

    #[test]
    fn extrapolation_holds_out_whole_states() {
        let m = world(5, 20);
        let sp = make_extrapolation_split(&m, 0.2, 1).unwrap();
        assert_eq!(sp.holdout_groups.len(), 1);
        let test_states: BTreeSet<&String> = sp.test.iter().map(|p| &m[p]).collect();
        assert!(sp.train.iter().chain(&sp.validation).all(|p| !test_states.contains(&m[p])));
    }

    #[test]
    fn superres_reuses_interpolation_sets() {
        let m = world(50, 10);
        let interp = make_interpolation_split(&m, 0.2, 9).unwrap();
        let sr = make_superres_split(&interp, &m).unwrap();
        assert_eq!(sr.train.len(), 40);
        assert_eq!(sr.test, interp.test);
        assert!(sr.validation.iter().all(|v| !sr.test.contains(v)));
        assert_eq!(sr.train_level, RegionKind::County);
    }
}

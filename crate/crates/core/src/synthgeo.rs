//! Seeded synthetic world generator.
//!
//! A world is a grid of rectangular states, each holding postal centroids
//! drawn uniformly inside the cell. Counties are Voronoi cells around seed
//! postal codes within a state. Every postal code carries a latent vector:
//! smooth factors are sums of Gaussian spatial bumps, rough factors are white
//! noise. Feature blocks are fixed random linear maps of the latents plus
//! noise, labels are monotone functions of selected latents, and series mix a
//! latent-driven region bias with an AR(1) process, a trend and seasonality.
//!
//! County features and labels are the unweighted mean of their members.
//! Every random draw comes from a stream keyed by purpose and region id, so
//! the output is a pure function of [`SynthConfig`] regardless of threading.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, FeatureBlock, Source};
use crate::forecast::series::{Frequency, SeriesPanel};
use crate::graph::{haversine, LatLon, Region, RegionKind};
use crate::{io, par, rng};

/// Bumps per smooth latent factor.
pub const BUMPS_PER_FACTOR: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelFn {
    Linear,
    Tanh,
    Softplus,
    /// `exp(u / 2)`
    Exp,
}

impl LabelFn {
    pub fn apply(&self, u: f64) -> f64 {
        match self {
            LabelFn::Linear => u,
            LabelFn::Tanh => u.tanh(),
            LabelFn::Softplus => {
                if u > 30.0 {
                    u
                } else {
                    u.exp().ln_1p()
                }
            }
            LabelFn::Exp => (0.5 * u).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSpec {
    pub task: String,
    pub function: LabelFn,
    pub noise_std: f64,
    /// Rough tasks draw on the white-noise factors, smooth tasks on the
    /// spatially smooth ones (unless `factors` overrides the choice).
    pub rough: bool,
    /// Weight of the mean label of the `neighbor_k` nearest postal codes.
    #[serde(default)]
    pub neighbor_mix: f64,
    #[serde(default)]
    pub factors: Option<Vec<usize>>,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSpec {
    pub task: String,
    pub level: RegionKind,
    pub frequency: Frequency,
    pub n_steps: usize,
    pub ar_coefficient: f64,
    pub ar_noise_std: f64,
    /// Per-region slope drawn uniformly from `[lo, hi]`.
    pub trend_slope_range: [f64; 2],
    /// Region bias is `region_bias_scale * tanh(w . z)`.
    pub region_bias_scale: f64,
    /// Step from which the region bias is added (0 = whole series).
    #[serde(default)]
    pub bias_onset: usize,
    pub base_level: f64,
    #[serde(default)]
    pub seasonal_period: usize,
    #[serde(default)]
    pub seasonal_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub rng_seed: u64,
    pub n_states: usize,
    pub n_counties: usize,
    pub n_postal: usize,
    /// One entry per latent factor; a non-positive length scale marks a
    /// white-noise (rough) factor.
    pub length_scales_miles: Vec<f64>,
    pub block_dims: BTreeMap<Source, usize>,
    pub feature_noise_std: BTreeMap<Source, f64>,
    pub labels: Vec<LabelSpec>,
    pub series: Vec<SeriesSpec>,
    /// Nearest postal neighbours averaged by `neighbor_mix`.
    pub neighbor_k: usize,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub state_cell_degrees: f64,
    pub state_grid_columns: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        desk_synth_config()
    }
}

/// Desk-scale world: 10 states, 50 counties, 500 postal codes.
pub fn desk_synth_config() -> SynthConfig {
    let label = |task: &str, function, noise_std, rough, neighbor_mix, factors: Option<Vec<usize>>| LabelSpec {
        task: task.into(),
        function,
        noise_std,
        rough,
        neighbor_mix,
        factors,
        scale: 1.0,
        offset: 0.0,
    };
    SynthConfig {
        rng_seed: 20240601,
        n_states: 10,
        n_counties: 50,
        n_postal: 500,
        length_scales_miles: vec![500.0, 400.0, 300.0, 250.0, 200.0, 0.0, 0.0, 0.0],
        block_dims: default_block_dims(),
        feature_noise_std: Source::MODEL_SOURCES.iter().map(|&s| (s, 0.25)).collect(),
        labels: vec![
            label("elevation", LabelFn::Linear, 0.05, false, 0.0, Some(vec![0, 1])),
            label("tree_cover", LabelFn::Tanh, 0.1, false, 0.0, None),
            label("income", LabelFn::Softplus, 0.1, false, 0.0, Some(vec![1, 3, 5, 6])),
            label("night_lights", LabelFn::Exp, 0.1, false, 0.0, Some(vec![2, 4, 7])),
            label("obesity", LabelFn::Tanh, 0.05, true, -0.6, None),
            label("smoking", LabelFn::Linear, 0.1, true, -0.6, None),
        ],
        series: vec![
            SeriesSpec {
                task: "unemployment".into(),
                level: RegionKind::County,
                frequency: Frequency::Monthly,
                n_steps: 127,
                ar_coefficient: 0.6,
                ar_noise_std: 0.15,
                trend_slope_range: [-0.01, 0.01],
                region_bias_scale: 2.0,
                bias_onset: 120,
                base_level: 8.0,
                seasonal_period: 12,
                seasonal_amplitude: 0.8,
            },
            SeriesSpec {
                task: "poverty".into(),
                level: RegionKind::Postal,
                frequency: Frequency::Yearly,
                n_steps: 30,
                ar_coefficient: 0.5,
                ar_noise_std: 0.3,
                trend_slope_range: [-0.02, 0.02],
                region_bias_scale: 3.0,
                bias_onset: 27,
                base_level: 15.0,
                seasonal_period: 0,
                seasonal_amplitude: 0.0,
            },
        ],
        neighbor_k: 5,
        origin_lat: 33.0,
        origin_lon: -105.0,
        state_cell_degrees: 3.0,
        state_grid_columns: 5,
    }
}

pub fn default_block_dims() -> BTreeMap<Source, usize> {
    [(Source::Trends, 64), (Source::Maps, 64), (Source::Busyness, 32), (Source::WeatherAq, 45)]
        .into_iter()
        .collect()
}

impl SynthConfig {
    pub fn latent_dim(&self) -> usize {
        self.length_scales_miles.len()
    }

    pub fn smooth_factors(&self) -> Vec<usize> {
        (0..self.latent_dim()).filter(|&j| self.length_scales_miles[j] > 0.0).collect()
    }

    pub fn rough_factors(&self) -> Vec<usize> {
        (0..self.latent_dim()).filter(|&j| self.length_scales_miles[j] <= 0.0).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states < 1 {
            return Err(Error::config("synth.n_states", "must be >= 1"));
        }
        if self.n_counties < self.n_states {
            return Err(Error::config("synth.n_counties", "must be >= n_states"));
        }
        if self.n_postal < self.n_counties {
            return Err(Error::config("synth.n_postal", "must be >= n_counties"));
        }
        if self.latent_dim() < 1 {
            return Err(Error::config("synth.length_scales_miles", "need at least one latent factor"));
        }
        if self.length_scales_miles.iter().any(|l| !l.is_finite()) {
            return Err(Error::config("synth.length_scales_miles", "must be finite"));
        }
        for s in Source::MODEL_SOURCES {
            match self.block_dims.get(&s) {
                Some(&d) if d >= 1 => {}
                _ => return Err(Error::config(format!("synth.block_dims.{s}"), "must be >= 1")),
            }
            let noise = self.feature_noise_std.get(&s).copied().unwrap_or(0.0);
            if !(noise >= 0.0) {
                return Err(Error::config(format!("synth.feature_noise_std.{s}"), "must be >= 0"));
            }
        }
        if self.block_dims.contains_key(&Source::External) {
            return Err(Error::config("synth.block_dims.external", "external blocks are not generated"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, l) in self.labels.iter().enumerate() {
            let field = |f: &str| format!("synth.labels[{i}].{f}");
            if !seen.insert(l.task.as_str()) {
                return Err(Error::config(field("task"), format!("duplicate task `{}`", l.task)));
            }
            if !(l.noise_std >= 0.0) {
                return Err(Error::config(field("noise_std"), "must be >= 0"));
            }
            let eligible = self.label_factors(l);
            if eligible.is_empty() {
                return Err(Error::config(field("factors"), "no latent factors selected"));
            }
            if eligible.iter().any(|&j| j >= self.latent_dim()) {
                return Err(Error::config(field("factors"), "factor index out of range"));
            }
        }
        if self.labels.iter().any(|l| l.neighbor_mix != 0.0) && self.neighbor_k < 1 {
            return Err(Error::config("synth.neighbor_k", "must be >= 1 when neighbor_mix is used"));
        }
        for (i, s) in self.series.iter().enumerate() {
            let field = |f: &str| format!("synth.series[{i}].{f}");
            if s.n_steps < 2 {
                return Err(Error::config(field("n_steps"), "must be >= 2"));
            }
            if !(s.ar_coefficient.abs() < 1.0) {
                return Err(Error::config(field("ar_coefficient"), "|ar_coefficient| must be < 1"));
            }
            if !(s.ar_noise_std >= 0.0) {
                return Err(Error::config(field("ar_noise_std"), "must be >= 0"));
            }
            if s.trend_slope_range[0] > s.trend_slope_range[1] {
                return Err(Error::config(field("trend_slope_range"), "lo must be <= hi"));
            }
        }
        if !(self.state_cell_degrees > 0.0) || self.state_grid_columns < 1 {
            return Err(Error::config("synth.state_cell_degrees", "state grid must be nonempty"));
        }
        let rows = self.n_states.div_ceil(self.state_grid_columns);
        let top = self.origin_lat + rows as f64 * self.state_cell_degrees;
        let right = self.origin_lon + self.state_grid_columns as f64 * self.state_cell_degrees;
        if self.origin_lat < -90.0 || top > 90.0 || self.origin_lon < -180.0 || right > 180.0 {
            return Err(Error::config("synth.origin_lat", "state grid leaves the valid lat/lon range"));
        }
        Ok(())
    }

    fn label_factors(&self, l: &LabelSpec) -> Vec<usize> {
        match &l.factors {
            Some(f) => f.clone(),
            None if l.rough => self.rough_factors(),
            None => self.smooth_factors(),
        }
    }
}

/// Label values keyed by task, then region id.
pub type LabelTable = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct WorldBundle {
    /// Postal rows first (id order), then county rows.
    pub regions: Vec<Region>,
    /// Raw (unstandardized) blocks with postal rows followed by county rows.
    pub blocks: BTreeMap<Source, FeatureBlock>,
    pub labels: LabelTable,
    pub series: BTreeMap<String, SeriesPanel>,
    /// Ground-truth latents for postal rows (not written to disk).
    pub latents: Array2<f64>,
}

impl WorldBundle {
    pub fn postal_ids(&self) -> Vec<String> {
        self.ids_of(RegionKind::Postal)
    }

    pub fn county_ids(&self) -> Vec<String> {
        self.ids_of(RegionKind::County)
    }

    fn ids_of(&self, kind: RegionKind) -> Vec<String> {
        self.regions.iter().filter(|r| r.kind == kind).map(|r| r.id.clone()).collect()
    }

    pub fn membership(&self) -> HashMap<String, String> {
        self.regions
            .iter()
            .filter_map(|r| r.county.as_ref().map(|c| (r.id.clone(), c.clone())))
            .collect()
    }

    pub fn tasks(&self) -> Vec<String> {
        self.labels.keys().cloned().collect()
    }

    /// Names of the files [`WorldBundle::write`] produces.
    pub fn file_names(&self) -> Vec<String> {
        let mut names = vec!["regions.csv".to_string()];
        names.extend(self.blocks.keys().map(|s| format!("features_{s}.csv")));
        names.push("labels.csv".into());
        names.extend(self.series.keys().map(|t| format!("series_{t}.csv")));
        names
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let path = dir.join("regions.csv");
        let rows: Vec<Vec<String>> = self
            .regions
            .iter()
            .map(|r| {
                vec![
                    r.id.clone(),
                    r.kind.as_str().into(),
                    r.centroid.lat.to_string(),
                    r.centroid.lon.to_string(),
                    r.state.clone(),
                    r.county.clone().unwrap_or_default(),
                    r.overlap_weight.to_string(),
                ]
            })
            .collect();
        io::write_csv_table(
            &path,
            &["region_id", "kind", "lat", "lon", "state_id", "county_id", "overlap_weight"],
            &rows,
        )?;
        written.push(path);
        for (source, block) in &self.blocks {
            let path = dir.join(format!("features_{source}.csv"));
            io::write_block_csv(&path, block)?;
            written.push(path);
        }
        let path = dir.join("labels.csv");
        let rows: Vec<Vec<String>> = self
            .labels
            .iter()
            .flat_map(|(task, values)| {
                self.regions
                    .iter()
                    .filter_map(move |r| values.get(&r.id).map(|v| vec![r.id.clone(), task.clone(), v.to_string()]))
            })
            .collect();
        io::write_csv_table(&path, &["region_id", "task", "value"], &rows)?;
        written.push(path);
        for (task, panel) in &self.series {
            let path = dir.join(format!("series_{task}.csv"));
            panel.write_csv(&path)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Read the on-disk tables written by [`WorldBundle::write`]. Latents are not
/// persisted and come back empty.
pub fn read_world(dir: &Path, series: &[(String, Frequency)]) -> Result<WorldBundle> {
    let path = dir.join("regions.csv");
    let table = io::read_csv_table(&path)?;
    let mut regions = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        if row.len() != 7 {
            return Err(Error::parse(&path, format!("expected 7 fields, got {}", row.len())));
        }
        regions.push(Region {
            id: row[0].clone(),
            kind: row[1].parse().map_err(|e: Error| Error::parse(&path, e.to_string()))?,
            centroid: LatLon::new(io::parse_f64(&path, &row[2])?, io::parse_f64(&path, &row[3])?),
            state: row[4].clone(),
            county: if row[5].is_empty() { None } else { Some(row[5].clone()) },
            overlap_weight: io::parse_f64(&path, &row[6])?,
        });
    }
    let mut blocks = BTreeMap::new();
    for source in Source::MODEL_SOURCES {
        let path = dir.join(format!("features_{source}.csv"));
        if path.exists() {
            blocks.insert(source, io::read_block_csv(&path, source)?);
        }
    }
    let path = dir.join("labels.csv");
    let table = io::read_csv_table(&path)?;
    let mut labels: LabelTable = BTreeMap::new();
    for row in &table.rows {
        labels
            .entry(row[1].clone())
            .or_default()
            .insert(row[0].clone(), io::parse_f64(&path, &row[2])?);
    }
    let mut panels = BTreeMap::new();
    for (task, freq) in series {
        let panel = SeriesPanel::read_csv(&dir.join(format!("series_{task}.csv")), task, *freq)?;
        panels.insert(task.clone(), panel);
    }
    Ok(WorldBundle { regions, blocks, labels, series: panels, latents: Array2::zeros((0, 0)) })
}

struct Layout {
    /// (id, state index, lat, lon)
    postal: Vec<(String, usize, f64, f64)>,
    /// county index per postal row
    postal_county: Vec<usize>,
    /// (id, state index)
    counties: Vec<(String, usize)>,
}

fn split_evenly(total: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|i| total / parts + usize::from(i < total % parts)).collect()
}

fn state_id(s: usize) -> String {
    format!("S{s:02}")
}

fn layout(cfg: &SynthConfig) -> Layout {
    let postal_per_state = split_evenly(cfg.n_postal, cfg.n_states);
    let counties_per_state = split_evenly(cfg.n_counties, cfg.n_states);
    let width = 1 + (cfg.n_postal.max(1) - 1).to_string().len().max(3);
    let cwidth = 1 + (cfg.n_counties.max(1) - 1).to_string().len().max(2);

    let mut postal = Vec::with_capacity(cfg.n_postal);
    let mut postal_county = Vec::with_capacity(cfg.n_postal);
    let mut counties = Vec::with_capacity(cfg.n_counties);
    for s in 0..cfg.n_states {
        let row = s / cfg.state_grid_columns;
        let col = s % cfg.state_grid_columns;
        let lat0 = cfg.origin_lat + row as f64 * cfg.state_cell_degrees;
        let lon0 = cfg.origin_lon + col as f64 * cfg.state_cell_degrees;
        let first = postal.len();
        for _ in 0..postal_per_state[s] {
            let id = format!("P{:0w$}", postal.len(), w = width - 1);
            let mut r = rng::stream(cfg.rng_seed, &format!("centroid/{id}"));
            let lat = lat0 + r.random::<f64>() * cfg.state_cell_degrees;
            let lon = lon0 + r.random::<f64>() * cfg.state_cell_degrees;
            postal.push((id, s, lat, lon));
        }
        let members = first..postal.len();
        // county seeds: distinct postal centroids of this state
        let mut r = rng::stream(cfg.rng_seed, &format!("county-seeds/{}", state_id(s)));
        let picks = rand::seq::index::sample(&mut r, members.len(), counties_per_state[s]).into_vec();
        let mut picks: Vec<usize> = picks.into_iter().map(|p| first + p).collect();
        picks.sort_unstable();
        let first_county = counties.len();
        for _ in &picks {
            counties.push((format!("C{:0w$}", counties.len(), w = cwidth - 1), s));
        }
        for p in members {
            let here = LatLon::new(postal[p].2, postal[p].3);
            let nearest = picks
                .iter()
                .enumerate()
                .map(|(k, &seed)| (k, haversine(here, LatLon::new(postal[seed].2, postal[seed].3))))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .map(|(k, _)| k)
                .expect("every state has at least one county");
            postal_county.push(first_county + nearest);
        }
    }
    Layout { postal, postal_county, counties }
}

fn standardize_columns(m: &mut Array2<f64>) {
    let (mean, std) = features::column_moments(m);
    for mut row in m.rows_mut() {
        for ((x, mu), sd) in row.iter_mut().zip(&mean).zip(&std) {
            *x = (*x - mu) / sd;
        }
    }
}

fn latents(cfg: &SynthConfig, lay: &Layout) -> Array2<f64> {
    let k = cfg.latent_dim();
    let n = lay.postal.len();
    let rows = cfg.n_states.div_ceil(cfg.state_grid_columns);
    let lat_span = rows as f64 * cfg.state_cell_degrees;
    let lon_span = cfg.state_grid_columns as f64 * cfg.state_cell_degrees;
    // bumps: (center, amplitude) per smooth factor
    let bumps: Vec<Vec<(LatLon, f64)>> = (0..k)
        .map(|j| {
            let mut r = rng::stream(cfg.rng_seed, &format!("bumps/{j}"));
            (0..BUMPS_PER_FACTOR)
                .map(|_| {
                    let c = LatLon::new(
                        cfg.origin_lat + r.random::<f64>() * lat_span,
                        cfg.origin_lon + r.random::<f64>() * lon_span,
                    );
                    let a: f64 = StandardNormal.sample(&mut r);
                    (c, a)
                })
                .collect()
        })
        .collect();
    let rows: Vec<Vec<f64>> = par::map_range(n, |i| {
        let (id, _, lat, lon) = &lay.postal[i];
        let here = LatLon::new(*lat, *lon);
        let mut r = rng::stream(cfg.rng_seed, &format!("latent/{id}"));
        (0..k)
            .map(|j| {
                let noise: f64 = StandardNormal.sample(&mut r);
                let ell = cfg.length_scales_miles[j];
                if ell > 0.0 {
                    bumps[j]
                        .iter()
                        .map(|(c, a)| {
                            let d = haversine(here, *c);
                            a * (-d * d / (2.0 * ell * ell)).exp()
                        })
                        .sum()
                } else {
                    noise
                }
            })
            .collect()
    });
    let mut z = Array2::from_shape_vec((n, k), rows.into_iter().flatten().collect()).expect("n x k");
    standardize_columns(&mut z);
    z
}

fn unit_weights(r: &mut rng::Rng, len: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut *r)).collect();
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    w.iter_mut().for_each(|x| *x /= norm);
    w
}

fn block_columns(source: Source, dim: usize) -> Vec<String> {
    match source {
        Source::WeatherAq => (0..dim)
            .map(|c| {
                let stat = ["mean", "min", "max"][c % 3];
                format!("wx{:02}_{stat}", c / 3)
            })
            .collect(),
        Source::Trends => (0..dim).map(|c| format!("q{c:04}")).collect(),
        Source::Maps => (0..dim).map(|c| format!("poi{c:04}")).collect(),
        Source::Busyness => (0..dim).map(|c| format!("busy{c:04}")).collect(),
        Source::External => (0..dim).map(|c| format!("x{c:04}")).collect(),
    }
}

fn postal_block(cfg: &SynthConfig, lay: &Layout, z: &Array2<f64>, source: Source) -> Result<Array2<f64>> {
    let dim = cfg.block_dims[&source];
    let k = cfg.latent_dim();
    let noise_std = cfg.feature_noise_std.get(&source).copied().unwrap_or(0.0);
    let mut r = rng::stream(cfg.rng_seed, &format!("loading/{source}"));
    let scale = 1.0 / (k as f64).sqrt();
    let loading = Array2::from_shape_fn((k, dim), |_| scale * Distribution::<f64>::sample(&StandardNormal, &mut r));
    let rows: Vec<Result<Vec<f64>>> = par::map_range(lay.postal.len(), |i| {
        let id = &lay.postal[i].0;
        let mut r = rng::stream(cfg.rng_seed, &format!("noise/{source}/{id}"));
        let clean = z.row(i).dot(&loading);
        let noisy: Vec<f64> = clean
            .iter()
            .map(|x| x + noise_std * Distribution::<f64>::sample(&StandardNormal, &mut r))
            .collect();
        if source == Source::Trends {
            let counts: Vec<f64> = noisy.iter().map(|x| (0.5 * x).exp()).collect();
            features::normalize_trends(&counts)
        } else {
            Ok(noisy)
        }
    });
    let mut flat = Vec::with_capacity(lay.postal.len() * dim);
    for row in rows {
        flat.extend(row?);
    }
    Ok(Array2::from_shape_vec((lay.postal.len(), dim), flat).expect("n x dim"))
}

fn nearest_postal(lay: &Layout, k: usize) -> Vec<Vec<usize>> {
    par::map_range(lay.postal.len(), |i| {
        let here = LatLon::new(lay.postal[i].2, lay.postal[i].3);
        let mut d: Vec<(usize, f64)> = (0..lay.postal.len())
            .filter(|&j| j != i)
            .map(|j| (j, haversine(here, LatLon::new(lay.postal[j].2, lay.postal[j].3))))
            .collect();
        d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        d.into_iter().take(k).map(|(j, _)| j).collect()
    })
}

fn postal_labels(cfg: &SynthConfig, lay: &Layout, z: &Array2<f64>, spec: &LabelSpec, knn: &[Vec<usize>]) -> Vec<f64> {
    let factors = cfg.label_factors(spec);
    let mut r = rng::stream(cfg.rng_seed, &format!("label/{}", spec.task));
    let w = unit_weights(&mut r, factors.len());
    let base: Vec<f64> = (0..lay.postal.len())
        .map(|i| spec.function.apply(factors.iter().zip(&w).map(|(&j, wj)| wj * z[[i, j]]).sum()))
        .collect();
    (0..lay.postal.len())
        .map(|i| {
            let mut v = base[i];
            if spec.neighbor_mix != 0.0 && !knn[i].is_empty() {
                let m = knn[i].iter().map(|&j| base[j]).sum::<f64>() / knn[i].len() as f64;
                v += spec.neighbor_mix * m;
            }
            let mut nr = rng::stream(cfg.rng_seed, &format!("label-noise/{}/{}", spec.task, lay.postal[i].0));
            let eps: f64 = StandardNormal.sample(&mut nr);
            spec.offset + spec.scale * (v + spec.noise_std * eps)
        })
        .collect()
}

fn series_panel(cfg: &SynthConfig, spec: &SeriesSpec, ids: &[String], z: &Array2<f64>) -> Result<SeriesPanel> {
    let mut r = rng::stream(cfg.rng_seed, &format!("series-bias/{}", spec.task));
    let w = unit_weights(&mut r, cfg.latent_dim());
    let rows: Vec<Vec<f64>> = par::map_range(ids.len(), |i| {
        let mut r = rng::stream(cfg.rng_seed, &format!("series/{}/{}", spec.task, ids[i]));
        let bias = spec.region_bias_scale * z.row(i).dot(&Array1::from(w.clone())).tanh();
        let [lo, hi] = spec.trend_slope_range;
        let slope = lo + (hi - lo) * r.random::<f64>();
        let phase = r.random::<f64>() * std::f64::consts::TAU * 0.25;
        let stationary_sd = spec.ar_noise_std / (1.0 - spec.ar_coefficient.powi(2)).sqrt();
        let mut ar = stationary_sd * Distribution::<f64>::sample(&StandardNormal, &mut r);
        (0..spec.n_steps)
            .map(|t| {
                if t > 0 {
                    ar = spec.ar_coefficient * ar + spec.ar_noise_std * Distribution::<f64>::sample(&StandardNormal, &mut r);
                }
                let season = if spec.seasonal_period > 1 {
                    spec.seasonal_amplitude
                        * (std::f64::consts::TAU * t as f64 / spec.seasonal_period as f64 + phase).sin()
                } else {
                    0.0
                };
                let b = if t >= spec.bias_onset { bias } else { 0.0 };
                spec.base_level + slope * t as f64 + season + ar + b
            })
            .collect()
    });
    let values = Array2::from_shape_vec((ids.len(), spec.n_steps), rows.into_iter().flatten().collect())
        .expect("regions x steps");
    SeriesPanel::new(spec.task.clone(), spec.frequency, ids.to_vec(), values)
}

/// Generate the full world. A pure function of `cfg`.
pub fn generate_world(cfg: &SynthConfig) -> Result<WorldBundle> {
    cfg.validate()?;
    let lay = layout(cfg);
    let z = latents(cfg, &lay);

    let n_p = lay.postal.len();
    let n_c = lay.counties.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_c];
    for (p, &c) in lay.postal_county.iter().enumerate() {
        members[c].push(p);
    }
    // county latents and centroids: member means
    let mut county_z = Array2::zeros((n_c, cfg.latent_dim()));
    let mut county_centroid = Vec::with_capacity(n_c);
    for (c, m) in members.iter().enumerate() {
        let rows = z.select(Axis(0), m);
        county_z.row_mut(c).assign(&rows.mean_axis(Axis(0)).expect("nonempty county"));
        let lat = m.iter().map(|&p| lay.postal[p].2).sum::<f64>() / m.len() as f64;
        let lon = m.iter().map(|&p| lay.postal[p].3).sum::<f64>() / m.len() as f64;
        county_centroid.push(LatLon::new(lat, lon));
    }

    let mut regions = Vec::with_capacity(n_p + n_c);
    for (p, (id, s, lat, lon)) in lay.postal.iter().enumerate() {
        regions.push(Region {
            id: id.clone(),
            kind: RegionKind::Postal,
            centroid: LatLon::new(*lat, *lon),
            state: state_id(*s),
            county: Some(lay.counties[lay.postal_county[p]].0.clone()),
            overlap_weight: 1.0,
        });
    }
    for (c, (id, s)) in lay.counties.iter().enumerate() {
        regions.push(Region {
            id: id.clone(),
            kind: RegionKind::County,
            centroid: county_centroid[c],
            state: state_id(*s),
            county: None,
            overlap_weight: 1.0,
        });
    }
    let postal_ids: Vec<String> = lay.postal.iter().map(|p| p.0.clone()).collect();
    let county_ids: Vec<String> = lay.counties.iter().map(|c| c.0.clone()).collect();
    let membership: HashMap<String, String> = regions
        .iter()
        .filter_map(|r| r.county.as_ref().map(|c| (r.id.clone(), c.clone())))
        .collect();
    let all_ids: Vec<String> = postal_ids.iter().chain(&county_ids).cloned().collect();

    let mut blocks = BTreeMap::new();
    for source in Source::MODEL_SOURCES {
        let values = postal_block(cfg, &lay, &z, source)?;
        let postal = FeatureBlock::new(source, postal_ids.clone(), block_columns(source, values.ncols()), values)?;
        let county = features::aggregate_to_county(&postal, &membership, &county_ids)?;
        let stacked = ndarray::concatenate(Axis(0), &[postal.values.view(), county.values.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        blocks.insert(source, FeatureBlock::new(source, all_ids.clone(), postal.columns, stacked)?);
    }

    let knn = if cfg.labels.iter().any(|l| l.neighbor_mix != 0.0) {
        nearest_postal(&lay, cfg.neighbor_k)
    } else {
        vec![Vec::new(); n_p]
    };
    let mut labels = BTreeMap::new();
    for spec in &cfg.labels {
        let values = postal_labels(cfg, &lay, &z, spec, &knn);
        let mut table: BTreeMap<String, f64> = postal_ids.iter().cloned().zip(values.iter().copied()).collect();
        for (c, m) in members.iter().enumerate() {
            let mean = m.iter().map(|&p| values[p]).sum::<f64>() / m.len() as f64;
            table.insert(county_ids[c].clone(), mean);
        }
        labels.insert(spec.task.clone(), table);
    }

    let mut series = BTreeMap::new();
    for spec in &cfg.series {
        let panel = match spec.level {
            RegionKind::Postal => series_panel(cfg, spec, &postal_ids, &z)?,
            RegionKind::County => series_panel(cfg, spec, &county_ids, &county_z)?,
        };
        series.insert(spec.task.clone(), panel);
    }

    Ok(WorldBundle { regions, blocks, labels, series, latents: z })
}

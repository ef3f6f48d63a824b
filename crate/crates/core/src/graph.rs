//! Region graph: postal and county nodes joined by proximity, containment and
//! feature-similarity edge sets.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureBlock, Source};
use crate::par;

/// Mean Earth radius in statute miles.
pub const EARTH_RADIUS_MILES: f64 = 3958.761;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Postal,
    County,
}

impl RegionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegionKind::Postal => "postal",
            RegionKind::County => "county",
        }
    }
}

impl FromStr for RegionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "postal" => Ok(RegionKind::Postal),
            "county" => Ok(RegionKind::County),
            other => Err(Error::Lookup { kind: "region kind", id: other.into() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::Validation(format!(
                "coordinate ({}, {}) outside lat [-90,90] / lon [-180,180]",
                self.lat, self.lon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub kind: RegionKind,
    pub centroid: LatLon,
    pub state: String,
    /// Parent county, postal nodes only.
    pub county: Option<String>,
    /// Fraction of the postal area inside its parent county.
    pub overlap_weight: f64,
}

impl Region {
    pub fn validate(&self) -> Result<()> {
        self.centroid.validate()?;
        match (self.kind, &self.county) {
            (RegionKind::Postal, None) => {
                return Err(Error::Validation(format!("postal region `{}` has no parent county", self.id)))
            }
            (RegionKind::County, Some(_)) => {
                return Err(Error::Validation(format!("county region `{}` must not have a parent county", self.id)))
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.overlap_weight) {
            return Err(Error::Validation(format!(
                "region `{}` overlap weight {} outside [0,1]",
                self.id, self.overlap_weight
            )));
        }
        Ok(())
    }
}

/// Great-circle distance in miles (haversine).
pub fn geodesic_distance_miles(a: LatLon, b: LatLon) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(haversine(a, b))
}

#[inline]
pub(crate) fn haversine(a: LatLon, b: LatLon) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_MILES * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSetKind {
    ProxPostal,
    ProxCounty,
    Containment,
    Similarity,
}

impl EdgeSetKind {
    pub const ALL: [EdgeSetKind; 4] =
        [EdgeSetKind::ProxPostal, EdgeSetKind::ProxCounty, EdgeSetKind::Containment, EdgeSetKind::Similarity];

    pub fn as_str(&self) -> &'static str {
        match self {
            EdgeSetKind::ProxPostal => "prox_postal",
            EdgeSetKind::ProxCounty => "prox_county",
            EdgeSetKind::Containment => "containment",
            EdgeSetKind::Similarity => "similarity",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn is_symmetric_same_kind(&self) -> bool {
        !matches!(self, EdgeSetKind::Containment)
    }
}

impl fmt::Display for EdgeSetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EdgeSetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EdgeSetKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Lookup { kind: "edge set", id: s.into() })
    }
}

/// Directed edge between node indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSet {
    pub kind: EdgeSetKind,
    /// Sorted by `(src, dst)`.
    pub edges: Vec<Edge>,
}

impl EdgeSet {
    pub fn empty(kind: EdgeSetKind) -> Self {
        Self { kind, edges: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, src: usize, dst: usize) -> bool {
        self.edges
            .binary_search_by(|e| (e.src, e.dst).cmp(&(src, dst)))
            .is_ok()
    }

    /// Emit both directions for every undirected pair; weights from `pairs`.
    fn from_undirected(kind: EdgeSetKind, pairs: BTreeMap<(usize, usize), f64>) -> Self {
        let mut edges: Vec<Edge> = pairs
            .into_iter()
            .flat_map(|((a, b), w)| [Edge { src: a, dst: b, weight: w }, Edge { src: b, dst: a, weight: w }])
            .collect();
        edges.sort_by(|x, y| (x.src, x.dst).cmp(&(y.src, y.dst)));
        Self { kind, edges }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    pub proximity_radius_miles: f64,
    pub proximity_degree_cap: usize,
    pub similarity_k: usize,
    pub similarity_source: Source,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            proximity_radius_miles: 100.0,
            proximity_degree_cap: 64,
            similarity_k: 10,
            similarity_source: Source::Trends,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.proximity_radius_miles > 0.0) {
            return Err(Error::config("graph.proximity_radius_miles", "must be > 0"));
        }
        if self.proximity_degree_cap < 1 {
            return Err(Error::config("graph.proximity_degree_cap", "must be >= 1"));
        }
        if self.similarity_k < 1 {
            return Err(Error::config("graph.similarity_k", "must be >= 1"));
        }
        Ok(())
    }
}

/// Same-kind proximity edges within the radius, nearest `cap` per node,
/// symmetrized by union. Weight is `1 / (1 + miles)`.
pub fn build_proximity_edges(nodes: &[Region], cfg: &GraphConfig) -> Result<(EdgeSet, EdgeSet)> {
    cfg.validate()?;
    if nodes.is_empty() {
        return Err(Error::Validation("cannot build proximity edges on an empty node set".into()));
    }
    for n in nodes {
        n.validate()?;
    }
    let radius = cfg.proximity_radius_miles;
    let cap = cfg.proximity_degree_cap;
    let kept: Vec<Vec<(usize, f64)>> = par::map_range(nodes.len(), |i| {
        let mut near: Vec<(usize, f64)> = nodes
            .iter()
            .enumerate()
            .filter(|&(j, n)| j != i && n.kind == nodes[i].kind)
            .map(|(j, n)| (j, haversine(nodes[i].centroid, n.centroid)))
            .filter(|&(_, d)| d <= radius)
            .collect();
        near.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| nodes[a.0].id.cmp(&nodes[b.0].id)));
        near.truncate(cap);
        near
    });
    let mut postal = BTreeMap::new();
    let mut county = BTreeMap::new();
    for (i, near) in kept.iter().enumerate() {
        let target = match nodes[i].kind {
            RegionKind::Postal => &mut postal,
            RegionKind::County => &mut county,
        };
        for &(j, d) in near {
            target.insert((i.min(j), i.max(j)), 1.0 / (1.0 + d));
        }
    }
    Ok((
        EdgeSet::from_undirected(EdgeSetKind::ProxPostal, postal),
        EdgeSet::from_undirected(EdgeSetKind::ProxCounty, county),
    ))
}

/// One postal→county and one county→postal edge per membership.
pub fn build_containment_edges(nodes: &[Region]) -> Result<EdgeSet> {
    let counties: HashMap<&str, usize> = nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.kind == RegionKind::County)
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    let mut edges = Vec::new();
    for (i, n) in nodes.iter().enumerate() {
        if n.kind != RegionKind::Postal {
            continue;
        }
        let parent = n
            .county
            .as_deref()
            .ok_or_else(|| Error::Integrity(format!("postal `{}` has no parent county", n.id)))?;
        let &c = counties
            .get(parent)
            .ok_or_else(|| Error::Integrity(format!("postal `{}` references unknown county `{parent}`", n.id)))?;
        edges.push(Edge { src: i, dst: c, weight: n.overlap_weight });
        edges.push(Edge { src: c, dst: i, weight: n.overlap_weight });
    }
    edges.sort_by(|x, y| (x.src, x.dst).cmp(&(y.src, y.dst)));
    Ok(EdgeSet { kind: EdgeSetKind::Containment, edges })
}

/// k most cosine-similar same-kind neighbours per node, symmetrized by union.
///
/// `block` rows must be aligned with `nodes`. Nodes whose feature row has zero
/// norm take no part (neither as source nor as target). Weight is the cosine
/// clamped to `[0, 1]`; ties are broken by node id.
pub fn build_similarity_edges(nodes: &[Region], block: &FeatureBlock, k: usize) -> Result<EdgeSet> {
    if k < 1 {
        return Err(Error::config("graph.similarity_k", "must be >= 1"));
    }
    if block.len() != nodes.len() || block.ids.iter().zip(nodes).any(|(b, n)| *b != n.id) {
        return Err(Error::Schema(format!("{} block rows are not aligned with the node list", block.source)));
    }
    let norms: Vec<f64> = block.values.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    for (n, norm) in nodes.iter().zip(&norms) {
        if *norm == 0.0 {
            log::warn!("region `{}` has a zero-norm {} row; skipped for similarity edges", n.id, block.source);
        }
    }
    let picks: Vec<Vec<(usize, f64)>> = par::map_range(nodes.len(), |i| {
        if norms[i] == 0.0 {
            return Vec::new();
        }
        let row = block.values.row(i);
        let mut scored: Vec<(usize, f64)> = (0..nodes.len())
            .filter(|&j| j != i && norms[j] > 0.0 && nodes[j].kind == nodes[i].kind)
            .map(|j| (j, row.dot(&block.values.row(j)) / (norms[i] * norms[j])))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| nodes[a.0].id.cmp(&nodes[b.0].id)));
        scored.truncate(k);
        scored
    });
    let mut pairs = BTreeMap::new();
    for (i, picked) in picks.iter().enumerate() {
        for &(j, cos) in picked {
            pairs.insert((i.min(j), i.max(j)), cos.clamp(0.0, 1.0));
        }
    }
    Ok(EdgeSet::from_undirected(EdgeSetKind::Similarity, pairs))
}

/// Compressed adjacency for one edge set.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
}

impl Adjacency {
    fn build(n: usize, edges: &[Edge]) -> Self {
        let mut offsets = vec![0usize; n + 1];
        for e in edges {
            offsets[e.src + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        // edges are sorted by (src, dst), so a straight copy lands in CSR order
        let targets = edges.iter().map(|e| e.dst).collect();
        let weights = edges.iter().map(|e| e.weight).collect();
        Self { offsets, targets, weights }
    }

    pub fn neighbors(&self, node: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.offsets[node], self.offsets[node + 1]);
        (&self.targets[a..b], &self.weights[a..b])
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }
}

/// Immutable, indexed region graph.
#[derive(Debug, Clone)]
pub struct RegionGraph {
    nodes: Vec<Region>,
    index: HashMap<String, usize>,
    edge_sets: Vec<EdgeSet>,
    adjacency: Vec<Adjacency>,
    blocks: BTreeMap<Source, FeatureBlock>,
}

impl RegionGraph {
    pub fn nodes(&self) -> &[Region] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn edge_set(&self, kind: EdgeSetKind) -> &EdgeSet {
        &self.edge_sets[kind.index()]
    }

    pub fn edge_sets(&self) -> &[EdgeSet] {
        &self.edge_sets
    }

    pub fn adjacency(&self, kind: EdgeSetKind) -> &Adjacency {
        &self.adjacency[kind.index()]
    }

    pub fn neighbors(&self, node: usize, kind: EdgeSetKind) -> (&[usize], &[f64]) {
        self.adjacency[kind.index()].neighbors(node)
    }

    /// Attached blocks, rows in node order.
    pub fn blocks(&self) -> &BTreeMap<Source, FeatureBlock> {
        &self.blocks
    }

    pub fn block(&self, source: Source) -> Option<&FeatureBlock> {
        self.blocks.get(&source)
    }
}

/// Validate and index nodes, edge sets and feature blocks.
///
/// Missing edge sets are treated as empty. Blocks are reordered to node order.
pub fn assemble_graph(nodes: Vec<Region>, edge_sets: Vec<EdgeSet>, blocks: Vec<FeatureBlock>) -> Result<RegionGraph> {
    let mut index = HashMap::with_capacity(nodes.len());
    for (i, n) in nodes.iter().enumerate() {
        n.validate().map_err(|e| Error::Assembly(format!("node `{}`: {e}", n.id)))?;
        if index.insert(n.id.clone(), i).is_some() {
            return Err(Error::Assembly(format!("duplicate node id `{}`", n.id)));
        }
    }
    let mut sets: Vec<EdgeSet> = EdgeSetKind::ALL.iter().map(|&k| EdgeSet::empty(k)).collect();
    for set in edge_sets {
        let k = set.kind;
        sets[k.index()] = set;
    }
    for set in &mut sets {
        set.edges.sort_by(|x, y| (x.src, x.dst).cmp(&(y.src, y.dst)));
        check_edge_set(&nodes, set)?;
    }
    let adjacency = sets.iter().map(|s| Adjacency::build(nodes.len(), &s.edges)).collect();

    let order: Vec<String> = nodes.iter().map(|n| n.id.clone()).collect();
    let mut attached = BTreeMap::new();
    for b in blocks {
        let aligned = b.select_rows(&order).map_err(|e| Error::Assembly(e.to_string()))?;
        if aligned.values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Assembly(format!("{} block contains non-finite values", b.source)));
        }
        attached.insert(b.source, aligned);
    }
    Ok(RegionGraph { nodes, index, edge_sets: sets, adjacency, blocks: attached })
}

fn check_edge_set(nodes: &[Region], set: &EdgeSet) -> Result<()> {
    let n = nodes.len();
    for e in &set.edges {
        if e.src >= n || e.dst >= n {
            return Err(Error::Assembly(format!("{}: edge ({}, {}) references a missing node", set.kind, e.src, e.dst)));
        }
        if e.src == e.dst {
            return Err(Error::Assembly(format!("{}: self-loop on `{}`", set.kind, nodes[e.src].id)));
        }
        if !(e.weight >= 0.0) || !e.weight.is_finite() {
            return Err(Error::Assembly(format!("{}: edge weight {} must be finite and nonnegative", set.kind, e.weight)));
        }
        let (a, b) = (&nodes[e.src], &nodes[e.dst]);
        let ok_kinds = match set.kind {
            EdgeSetKind::ProxPostal => a.kind == RegionKind::Postal && b.kind == RegionKind::Postal,
            EdgeSetKind::ProxCounty => a.kind == RegionKind::County && b.kind == RegionKind::County,
            EdgeSetKind::Containment => a.kind != b.kind,
            EdgeSetKind::Similarity => a.kind == b.kind,
        };
        if !ok_kinds {
            return Err(Error::Assembly(format!("{}: edge `{}` -> `{}` joins the wrong node kinds", set.kind, a.id, b.id)));
        }
        if set.kind.is_symmetric_same_kind() && !set.contains(e.dst, e.src) {
            return Err(Error::Assembly(format!("{}: edge `{}` -> `{}` has no reverse", set.kind, a.id, b.id)));
        }
    }
    let mut seen = BTreeSet::new();
    for e in &set.edges {
        if !seen.insert((e.src, e.dst)) {
            return Err(Error::Assembly(format!("{}: duplicate edge `{}` -> `{}`", set.kind, nodes[e.src].id, nodes[e.dst].id)));
        }
    }
    Ok(())
}

/// Build every edge set from nodes and standardized blocks, then assemble.
pub fn build_graph(nodes: Vec<Region>, blocks: Vec<FeatureBlock>, cfg: &GraphConfig) -> Result<RegionGraph> {
    cfg.validate()?;
    let (prox_postal, prox_county) = build_proximity_edges(&nodes, cfg)?;
    let containment = build_containment_edges(&nodes)?;
    let order: Vec<String> = nodes.iter().map(|n| n.id.clone()).collect();
    let similarity = match blocks.iter().find(|b| b.source == cfg.similarity_source) {
        Some(b) => build_similarity_edges(&nodes, &b.select_rows(&order)?, cfg.similarity_k)?,
        None => {
            log::warn!("no {} block; similarity edge set left empty", cfg.similarity_source);
            EdgeSet::empty(EdgeSetKind::Similarity)
        }
    };
    assemble_graph(nodes, vec![prox_postal, prox_county, containment, similarity], blocks)
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphManifest {
    format: String,
    nodes: Vec<Region>,
    edge_sets: Vec<EdgeSetEntry>,
    blocks: Vec<BlockEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeSetEntry {
    name: EdgeSetKind,
    file: String,
    edges: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockEntry {
    source: Source,
    file: String,
    columns: usize,
}

const GRAPH_FORMAT: &str = "geofm-graph/1";

/// Write `manifest.json`, `edges_<set>.csv` and `block_<source>.csv` into `dir`.
pub fn export_graph(graph: &RegionGraph, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut edge_entries = Vec::new();
    for set in graph.edge_sets() {
        let file = format!("edges_{}.csv", set.kind);
        let mut out = String::from("src,dst,weight\n");
        for e in &set.edges {
            out.push_str(&format!("{},{},{}\n", graph.nodes[e.src].id, graph.nodes[e.dst].id, e.weight));
        }
        crate::io::write_string(&dir.join(&file), &out)?;
        edge_entries.push(EdgeSetEntry { name: set.kind, file, edges: set.len() });
    }
    let mut block_entries = Vec::new();
    for (source, block) in graph.blocks() {
        let file = format!("block_{source}.csv");
        crate::io::write_block_csv(&dir.join(&file), block)?;
        block_entries.push(BlockEntry { source: *source, file, columns: block.width() });
    }
    let manifest = GraphManifest {
        format: GRAPH_FORMAT.into(),
        nodes: graph.nodes.clone(),
        edge_sets: edge_entries,
        blocks: block_entries,
    };
    crate::io::write_json(&dir.join("manifest.json"), &manifest)
}

/// Inverse of [`export_graph`].
pub fn import_graph(dir: &Path) -> Result<RegionGraph> {
    let manifest: GraphManifest = crate::io::read_json(&dir.join("manifest.json"))?;
    if manifest.format != GRAPH_FORMAT {
        return Err(Error::parse(dir.join("manifest.json"), format!("unsupported format `{}`", manifest.format)));
    }
    let index: HashMap<&str, usize> = manifest.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    let mut sets = Vec::new();
    for entry in &manifest.edge_sets {
        let path = dir.join(&entry.file);
        let table = crate::io::read_csv_table(&path)?;
        if table.header != ["src", "dst", "weight"] {
            return Err(Error::parse(&path, "expected header src,dst,weight"));
        }
        let mut edges = Vec::with_capacity(table.rows.len());
        for row in &table.rows {
            let lookup = |id: &str| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::parse(&path, format!("unknown node `{id}`")))
            };
            let weight = row[2].parse::<f64>().map_err(|e| Error::parse(&path, e.to_string()))?;
            edges.push(Edge { src: lookup(&row[0])?, dst: lookup(&row[1])?, weight });
        }
        sets.push(EdgeSet { kind: entry.name, edges });
    }
    let mut blocks = Vec::new();
    for entry in &manifest.blocks {
        blocks.push(crate::io::read_block_csv(&dir.join(&entry.file), entry.source)?);
    }
    assemble_graph(manifest.nodes, sets, blocks)
}

/// Dense copy of one block, rows in node order (convenience for tests).
pub fn block_matrix(graph: &RegionGraph, source: Source) -> Option<Array2<f64>> {
    graph.block(source).map(|b| b.values.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn postal(id: &str, lat: f64, lon: f64) -> Region {
        Region {
            id: id.into(),
            kind: RegionKind::Postal,
            centroid: LatLon::new(lat, lon),
            state: "S0".into(),
            county: Some("C0".into()),
            overlap_weight: 1.0,
        }
    }

    fn county(id: &str, lat: f64, lon: f64) -> Region {
        Region {
            id: id.into(),
            kind: RegionKind::County,
            centroid: LatLon::new(lat, lon),
            state: "S0".into(),
            county: None,
            overlap_weight: 1.0,
        }
    }

    /// Degrees of longitude at the equator spanning `miles`.
    fn lon_for_miles(miles: f64) -> f64 {
        (miles / EARTH_RADIUS_MILES).to_degrees()
    }

    #[test]
    fn distance_examples() {
        let p = LatLon::new(10.0, 20.0);
        assert_eq!(geodesic_distance_miles(p, p).unwrap(), 0.0);
        let half = geodesic_distance_miles(LatLon::new(0.0, 0.0), LatLon::new(0.0, 180.0)).unwrap();
        assert!((half - std::f64::consts::PI * EARTH_RADIUS_MILES).abs() < 1e-6);
        // the commonly quoted ~12434 mi agrees to within 0.1%
        assert!((half - 12434.0).abs() / 12434.0 < 1e-3);
        // 1 degree of longitude at the equator: R * pi / 180
        let one = geodesic_distance_miles(LatLon::new(0.0, 0.0), LatLon::new(0.0, 1.0)).unwrap();
        assert!((one - 69.09).abs() < 0.01, "{one}");
        assert!(geodesic_distance_miles(LatLon::new(91.0, 0.0), p).is_err());
        assert!(geodesic_distance_miles(p, LatLon::new(0.0, -181.0)).is_err());
    }

    #[test]
    fn proximity_threshold() {
        let cfg = GraphConfig::default();
        let near = vec![postal("a", 0.0, 0.0), postal("b", 0.0, lon_for_miles(50.0))];
        let (pp, pc) = build_proximity_edges(&near, &cfg).unwrap();
        assert!(pp.contains(0, 1) && pp.contains(1, 0));
        assert!(pc.is_empty());
        let far = vec![postal("a", 0.0, 0.0), postal("b", 0.0, lon_for_miles(150.0))];
        let (pp, _) = build_proximity_edges(&far, &cfg).unwrap();
        assert!(pp.is_empty());
    }

    #[test]
    fn proximity_degree_cap_on_collinear_nodes() {
        let nodes: Vec<Region> =
            (0..5).map(|i| postal(&format!("n{i}"), 0.0, lon_for_miles(40.0 * i as f64))).collect();
        let cfg = GraphConfig { proximity_degree_cap: 2, ..Default::default() };
        let (pp, _) = build_proximity_edges(&nodes, &cfg).unwrap();
        // brute force: each node keeps its two nearest within 100 miles
        let mut expected = BTreeSet::new();
        for i in 0..5 {
            let mut d: Vec<(usize, f64)> = (0..5)
                .filter(|&j| j != i)
                .map(|j| (j, haversine(nodes[i].centroid, nodes[j].centroid)))
                .filter(|&(_, d)| d <= 100.0)
                .collect();
            d.sort_by(|a, b| a.1.total_cmp(&b.1).then(nodes[a.0].id.cmp(&nodes[b.0].id)));
            for &(j, _) in d.iter().take(2) {
                expected.insert((i, j));
                expected.insert((j, i));
            }
        }
        let got: BTreeSet<(usize, usize)> = pp.edges.iter().map(|e| (e.src, e.dst)).collect();
        assert_eq!(got, expected);
        // interior nodes keep their immediate neighbours
        for i in 1..4 {
            assert!(pp.contains(i, i - 1) && pp.contains(i, i + 1));
        }
    }

    #[test]
    fn containment_counts() {
        let mut nodes = vec![county("C0", 0.0, 0.0), county("C1", 1.0, 1.0)];
        for i in 0..3 {
            nodes.push(postal(&format!("p{i}"), 0.0, 0.1 * i as f64));
        }
        let set = build_containment_edges(&nodes).unwrap();
        assert_eq!(set.len(), 6);
        assert!(set.edges.iter().all(|e| e.src != 1 && e.dst != 1));

        nodes.push(Region { county: Some("nope".into()), ..postal("bad", 0.0, 0.0) });
        assert!(matches!(build_containment_edges(&nodes), Err(Error::Integrity(_))));
    }

    fn sim_block(nodes: &[Region], rows: Vec<Vec<f64>>) -> FeatureBlock {
        let w = rows[0].len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        FeatureBlock::new(
            Source::Trends,
            nodes.iter().map(|n| n.id.clone()).collect(),
            (0..w).map(|c| format!("q{c}")).collect(),
            Array2::from_shape_vec((nodes.len(), w), flat).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn similarity_identical_and_orthogonal() {
        let nodes = vec![postal("a", 0.0, 0.0), postal("b", 5.0, 5.0)];
        let set = build_similarity_edges(&nodes, &sim_block(&nodes, vec![vec![1.0, 2.0], vec![1.0, 2.0]]), 1).unwrap();
        assert_eq!(set.len(), 2);
        assert!((set.edges[0].weight - 1.0).abs() < 1e-12);
        let set = build_similarity_edges(&nodes, &sim_block(&nodes, vec![vec![1.0, 0.0], vec![0.0, 1.0]]), 1).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.edges[0].weight, 0.0);
    }

    #[test]
    fn similarity_zero_norm_rows_are_skipped() {
        let nodes = vec![postal("a", 0.0, 0.0), postal("b", 5.0, 5.0), postal("c", 6.0, 6.0)];
        let block = sim_block(&nodes, vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]]);
        let set = build_similarity_edges(&nodes, &block, 2).unwrap();
        assert!(set.edges.iter().all(|e| e.src != 0 && e.dst != 0));
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn similarity_matches_exhaustive_ranking() {
        let nodes: Vec<Region> = (0..6).map(|i| postal(&format!("n{i}"), i as f64, 0.0)).collect();
        let rows = vec![
            vec![1.0, 0.2, 0.0],
            vec![0.9, 0.1, 0.3],
            vec![-0.5, 1.0, 0.2],
            vec![0.0, 0.8, 0.9],
            vec![0.3, -0.2, 1.0],
            vec![1.0, 1.0, 1.0],
        ];
        let set = build_similarity_edges(&nodes, &sim_block(&nodes, rows.clone()), 2).unwrap();
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let mut expected = BTreeMap::new();
        for i in 0..6 {
            let mut all: Vec<(usize, f64)> = (0..6).filter(|&j| j != i).map(|j| (j, cos(&rows[i], &rows[j]))).collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            for &(j, c) in &all[..2] {
                expected.insert((i, j), c.clamp(0.0, 1.0));
                expected.insert((j, i), c.clamp(0.0, 1.0));
            }
        }
        assert_eq!(set.len(), expected.len());
        for e in &set.edges {
            assert!((expected[&(e.src, e.dst)] - e.weight).abs() < 1e-12);
        }
    }

    #[test]
    fn assembly_checks() {
        let nodes = vec![county("C0", 0.0, 0.0), postal("p0", 0.1, 0.1), postal("p1", 0.2, 0.2)];
        let block = sim_block(&nodes, vec![vec![1.0], vec![2.0], vec![3.0]]);
        let containment = build_containment_edges(&nodes).unwrap();
        let g = assemble_graph(nodes.clone(), vec![containment.clone()], vec![block.clone()]).unwrap();
        assert!(g.edge_set(EdgeSetKind::Similarity).is_empty());
        assert_eq!(g.neighbors(0, EdgeSetKind::Containment).0, &[1, 2]);

        let short = FeatureBlock::new(
            Source::Trends,
            vec!["C0".into(), "p0".into()],
            vec!["q0".into()],
            Array2::zeros((2, 1)),
        )
        .unwrap();
        assert!(matches!(assemble_graph(nodes.clone(), vec![], vec![short]), Err(Error::Assembly(_))));

        let one_way = EdgeSet { kind: EdgeSetKind::ProxPostal, edges: vec![Edge { src: 1, dst: 2, weight: 0.5 }] };
        assert!(matches!(assemble_graph(nodes.clone(), vec![one_way], vec![]), Err(Error::Assembly(_))));

        let loop_set = EdgeSet { kind: EdgeSetKind::Similarity, edges: vec![Edge { src: 1, dst: 1, weight: 0.5 }] };
        assert!(matches!(assemble_graph(nodes, vec![loop_set], vec![]), Err(Error::Assembly(_))));
    }
}

//! Seed-anchored breadth-first subgraph sampling.
//!
//! Starting from a seed, each frontier node draws up to `fanout` neighbours per
//! edge set without replacement, either uniformly or with probability
//! proportional to edge weight (exponential-race keys `-ln(u) / w`, smallest
//! keys win). A node joins at the hop where it is first drawn; expansion stops
//! after `max_hops`. The generator for a seed is derived from the master seed
//! and the seed's region id, so subgraphs do not depend on scheduling.

use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeSetKind, RegionGraph};
use crate::{par, rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    #[default]
    EdgeWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub max_hops: usize,
    /// Per edge set, in [`EdgeSetKind::ALL`] order.
    pub fanout: [usize; 4],
    pub weighting: Weighting,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { max_hops: 4, fanout: [8; 4], weighting: Weighting::EdgeWeight, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_hops < 1 {
            return Err(Error::config("sampler.max_hops", "must be >= 1"));
        }
        if self.fanout.iter().any(|&f| f < 1) {
            return Err(Error::config("sampler.fanout", "every fanout must be >= 1"));
        }
        Ok(())
    }

    pub fn fanout_for(&self, kind: EdgeSetKind) -> usize {
        self.fanout[kind.index()]
    }
}

/// A directed draw: `to` was sampled from `from`'s neighbourhood in `set`.
/// Messages flow from `to` into `from`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledEdge {
    pub from: usize,
    pub to: usize,
    pub set: EdgeSetKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subgraph {
    /// Graph indices ordered by (hop, region id); the seed is at position 0.
    pub nodes: Vec<usize>,
    /// Hop label for each entry of `nodes`.
    pub hops: Vec<usize>,
    /// Local indices into `nodes`.
    pub edges: Vec<SampledEdge>,
}

impl Subgraph {
    pub fn seed(&self) -> usize {
        self.nodes[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Local indices of nodes drawn directly from the seed through `set`.
    pub fn seed_neighbors(&self, set: EdgeSetKind) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.from == 0 && e.set == set).map(|e| e.to)
    }

    pub fn to_json(&self, graph: &RegionGraph) -> serde_json::Value {
        let nodes = &graph.nodes();
        serde_json::json!({
            "seed": nodes[self.seed()].id,
            "nodes": self.nodes.iter().zip(&self.hops)
                .map(|(&n, &h)| serde_json::json!({"id": nodes[n].id, "hop": h}))
                .collect::<Vec<_>>(),
            "edges": self.edges.iter()
                .map(|e| serde_json::json!({
                    "src": nodes[self.nodes[e.from]].id,
                    "dst": nodes[self.nodes[e.to]].id,
                    "edge_set": e.set.as_str(),
                }))
                .collect::<Vec<_>>(),
        })
    }
}

/// Indices of up to `k` items drawn without replacement, weighted by `weights`
/// (or uniformly). Zero-weight items are never drawn in weighted mode.
pub fn draw_without_replacement(r: &mut rng::Rng, weights: &[f64], k: usize, mode: Weighting) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .filter_map(|(i, &w)| {
            let w = match mode {
                Weighting::Uniform => 1.0,
                Weighting::EdgeWeight => w,
            };
            // one uniform per candidate keeps the stream aligned across modes
            let u: f64 = r.random::<f64>();
            (w > 0.0).then(|| (-(1.0 - u).ln() / w, i))
        })
        .collect();
    if keyed.len() > k {
        keyed.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        keyed.truncate(k);
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Sample the subgraph anchored at graph node `seed`.
pub fn sample_subgraph_at(graph: &RegionGraph, seed: usize, cfg: &SamplerConfig) -> Result<Subgraph> {
    cfg.validate()?;
    if seed >= graph.len() {
        return Err(Error::Lookup { kind: "seed index", id: seed.to_string() });
    }
    let nodes = graph.nodes();
    let mut r = rng::stream(cfg.seed, &nodes[seed].id);
    let mut local: HashMap<usize, usize> = HashMap::from([(seed, 0)]);
    let mut order = vec![seed];
    let mut hops = vec![0usize];
    let mut edges = Vec::new();
    let mut frontier = vec![seed];
    for hop in 0..cfg.max_hops {
        if frontier.is_empty() {
            break;
        }
        let mut next = Vec::new();
        for &v in &frontier {
            for kind in EdgeSetKind::ALL {
                let (targets, weights) = graph.neighbors(v, kind);
                for pick in draw_without_replacement(&mut r, weights, cfg.fanout_for(kind), cfg.weighting) {
                    let u = targets[pick];
                    let lu = *local.entry(u).or_insert_with(|| {
                        order.push(u);
                        hops.push(hop + 1);
                        next.push(u);
                        order.len() - 1
                    });
                    edges.push(SampledEdge { from: local[&v], to: lu, set: kind });
                }
            }
        }
        next.sort_by(|a, b| nodes[*a].id.cmp(&nodes[*b].id));
        frontier = next;
    }
    // canonical order: (hop, id), seed first
    let mut perm: Vec<usize> = (0..order.len()).collect();
    perm.sort_by(|&a, &b| hops[a].cmp(&hops[b]).then_with(|| nodes[order[a]].id.cmp(&nodes[order[b]].id)));
    let mut remap = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        remap[old] = new;
    }
    let mut edges: Vec<SampledEdge> = edges
        .into_iter()
        .map(|e| SampledEdge { from: remap[e.from], to: remap[e.to], set: e.set })
        .collect();
    edges.sort_by_key(|e| (e.from, e.set, e.to));
    Ok(Subgraph {
        nodes: perm.iter().map(|&i| order[i]).collect(),
        hops: perm.iter().map(|&i| hops[i]).collect(),
        edges,
    })
}

/// Sample the subgraph anchored at the region with id `seed_id`.
pub fn sample_subgraph(graph: &RegionGraph, seed_id: &str, cfg: &SamplerConfig) -> Result<Subgraph> {
    let seed = graph
        .node_index(seed_id)
        .ok_or_else(|| Error::Lookup { kind: "seed", id: seed_id.into() })?;
    sample_subgraph_at(graph, seed, cfg)
}

/// Every node id exactly once, in node order.
pub fn enumerate_seeds(graph: &RegionGraph) -> Vec<String> {
    graph.nodes().iter().map(|n| n.id.clone()).collect()
}

/// Subgraphs for the given seeds, sampled in parallel.
pub fn sample_many(graph: &RegionGraph, seeds: &[usize], cfg: &SamplerConfig) -> Result<Vec<Subgraph>> {
    cfg.validate()?;
    par::try_map_slice(seeds, |&s| sample_subgraph_at(graph, s, cfg))
}

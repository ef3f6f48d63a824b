use ndarray::{array, Array1, Array2, Axis};
use rand::Rng as _;

use super::*;
use crate::error::Error;
use crate::features::{FeatureBlock, Source};
use crate::graph::{assemble_graph, Edge, EdgeSet, EdgeSetKind, LatLon, Region, RegionGraph, RegionKind};
use crate::nn::{gelu, grad_check, Activation, DenseLayer};
use crate::sampling::{sample_many, sample_subgraph_at, SampledEdge, SamplerConfig, Subgraph};
use crate::{par, rng};

fn region(id: &str, kind: RegionKind) -> Region {
    Region {
        id: id.into(),
        kind,
        centroid: LatLon::new(0.0, 0.0),
        state: "S0".into(),
        county: (kind == RegionKind::Postal).then(|| "C0".into()),
        overlap_weight: 1.0,
    }
}

fn both_ways(kind: EdgeSetKind, pairs: &[(usize, usize)], w: f64) -> EdgeSet {
    let mut edges = Vec::new();
    for &(a, b) in pairs {
        edges.push(Edge { src: a, dst: b, weight: w });
        edges.push(Edge { src: b, dst: a, weight: w });
    }
    EdgeSet { kind, edges }
}

/// Four postal codes in one county plus the county: five nodes, every edge set used.
fn fixture_graph(seed: u64) -> RegionGraph {
    let mut r = rng::from_seed(seed);
    let mut nodes: Vec<Region> = (0..4).map(|i| region(&format!("P{i}"), RegionKind::Postal)).collect();
    nodes.push(region("C0", RegionKind::County));
    let ids: Vec<String> = nodes.iter().map(|n| n.id.clone()).collect();
    let widths = [(Source::Trends, 3), (Source::Maps, 2), (Source::Busyness, 2), (Source::WeatherAq, 3)];
    let blocks = widths
        .iter()
        .map(|&(s, w)| {
            let values = Array2::from_shape_fn((5, w), |_| r.random_range(-1.5..1.5));
            FeatureBlock::new(s, ids.clone(), (0..w).map(|c| format!("c{c}")).collect(), values).unwrap()
        })
        .collect();
    let sets = vec![
        both_ways(EdgeSetKind::ProxPostal, &[(0, 1), (1, 2), (2, 3), (0, 2)], 0.5),
        both_ways(EdgeSetKind::Containment, &[(0, 4), (1, 4), (2, 4), (3, 4)], 1.0),
        both_ways(EdgeSetKind::Similarity, &[(0, 3), (1, 3)], 0.9),
    ];
    assemble_graph(nodes, sets, blocks).unwrap()
}

fn tiny_cfg(hidden: usize) -> PdfmConfig {
    PdfmConfig {
        hidden,
        embedding_dim: 6,
        partitions: vec![
            Partition::new("trends", &[Source::Trends], 0..2),
            Partition::new("maps_busyness", &[Source::Maps, Source::Busyness], 2..4),
            Partition::new("weather_aq", &[Source::WeatherAq], 4..6),
        ],
        batch_size: 2,
        grad_chunk: 1,
        epochs: 3,
        lr_max: 0.01,
        ..PdfmConfig::desk()
    }
}

fn layout_of(graph: &RegionGraph) -> Vec<(Source, std::ops::Range<usize>)> {
    model_inputs(graph).unwrap().provenance
}

#[test]
fn init_is_deterministic_and_shaped() {
    let g = fixture_graph(1);
    let cfg = PdfmConfig::desk();
    let a = init_model(&cfg, &layout_of(&g), &mut rng::from_seed(5)).unwrap();
    let b = init_model(&cfg, &layout_of(&g), &mut rng::from_seed(5)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.embedding.weight.shape(), &[48, 256]);
    assert_eq!(a.neighbor.len(), 4);
    assert!(a.layers_have_zero_bias());
}

impl PdfmModel {
    fn layers_have_zero_bias(&self) -> bool {
        self.encoder.bias.iter().chain(self.embedding.bias.iter()).chain(self.self_transform.bias.iter()).all(|b| *b == 0.0)
    }
}

#[test]
fn init_column_variance_near_glorot_target() {
    let g = fixture_graph(1);
    for seed in 0..10 {
        let m = init_model(&PdfmConfig::desk(), &layout_of(&g), &mut rng::from_seed(seed)).unwrap();
        for layer in [&m.embedding, &m.self_transform, &m.neighbor[0]] {
            let target = 2.0 / (layer.inputs() + layer.outputs()) as f64;
            for col in layer.weight.axis_iter(Axis(1)) {
                let mean = col.mean().unwrap();
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
                assert!(var > target / 3.0 && var < target * 3.0, "{var} vs {target}");
            }
        }
    }
}

#[test]
fn encode_inputs_examples() {
    let g = fixture_graph(2);
    let inputs = model_inputs(&g).unwrap();
    let mut m = init_model(&tiny_cfg(4), &inputs.provenance, &mut rng::from_seed(3)).unwrap();
    // independent evaluation with explicit loops
    let h = encode_inputs(&m, &inputs.values).unwrap();
    for i in 0..inputs.values.nrows() {
        for o in 0..4 {
            let mut z = m.encoder.bias[o];
            for j in 0..inputs.width() {
                z += m.encoder.weight[[o, j]] * inputs.values[[i, j]];
            }
            assert!((h[[i, o]] - gelu(z)).abs() < 1e-14);
        }
    }
    let dup = inputs.values.select(Axis(0), &[1, 1]);
    let hd = encode_inputs(&m, &dup).unwrap();
    assert_eq!(hd.row(0), hd.row(1));
    m.encoder.weight.fill(0.0);
    assert!(encode_inputs(&m, &inputs.values).unwrap().iter().all(|v| *v == 0.0));
    assert!(matches!(encode_inputs(&m, &Array2::zeros((2, 3))), Err(Error::Shape(_))));
}

fn hand_model() -> PdfmModel {
    let cfg = PdfmConfig {
        hidden: 2,
        embedding_dim: 2,
        partitions: vec![Partition::new("trends", &[Source::Trends], 0..2)],
        ..PdfmConfig::desk()
    };
    let mut m = init_model(&cfg, &[(Source::Trends, 0..2)], &mut rng::from_seed(0)).unwrap();
    m.encoder = DenseLayer::new(Array2::eye(2), Array1::zeros(2), Activation::Gelu).unwrap();
    for l in &mut m.neighbor {
        *l = DenseLayer::new(Array2::eye(2), Array1::zeros(2), Activation::Relu).unwrap();
    }
    m.neighbor[EdgeSetKind::Similarity.index()] =
        DenseLayer::new(array![[0.0, 1.0], [1.0, 0.0]], array![0.5, 0.0], Activation::Relu).unwrap();
    m.self_transform = DenseLayer::new(Array2::eye(2) * 2.0, Array1::zeros(2), Activation::Identity).unwrap();
    m
}

fn three_node_subgraph(order_swapped: bool) -> Subgraph {
    let mut edges = vec![
        SampledEdge { from: 0, to: 1, set: EdgeSetKind::ProxPostal },
        SampledEdge { from: 0, to: 2, set: EdgeSetKind::Similarity },
    ];
    if order_swapped {
        edges.reverse();
    }
    Subgraph { nodes: vec![0, 1, 2], hops: vec![0, 1, 1], edges }
}

#[test]
fn sage_forward_hand_computed() {
    let m = hand_model();
    let x = array![[1.0, 0.0], [0.0, 1.0], [2.0, -1.0]];
    let h0 = encode_inputs(&m, &x).unwrap();
    let h1 = sage_forward(&m, &three_node_subgraph(false), &h0).unwrap();
    let (g1, g2, gm1) = (gelu(1.0), gelu(2.0), gelu(-1.0));
    // self: 2*[g1, 0]; prox: relu([0, g1]); similarity: relu([gm1 + 0.5, g2])
    let expected = [2.0 * g1 + (gm1 + 0.5), g1 + g2];
    assert!((h1[0] - expected[0]).abs() < 1e-14 && (h1[1] - expected[1]).abs() < 1e-14, "{h1}");
    let swapped = sage_forward(&m, &three_node_subgraph(true), &h0).unwrap();
    assert_eq!(h1, swapped);
    // isolated seed: only the self transform
    let lone = Subgraph { nodes: vec![0], hops: vec![0], edges: vec![] };
    let h = sage_forward(&m, &lone, &h0.select(Axis(0), &[0])).unwrap();
    assert_eq!(h, array![2.0 * g1, 0.0]);
}

#[test]
fn neighbour_permutation_invariance_on_sampled_subgraphs() {
    let g = fixture_graph(4);
    let inputs = model_inputs(&g).unwrap();
    let m = init_model(&tiny_cfg(5), &inputs.provenance, &mut rng::from_seed(9)).unwrap();
    let sub = sample_subgraph_at(&g, 1, &SamplerConfig::default()).unwrap();
    let h0 = encode_inputs(&m, &inputs.values.select(Axis(0), &sub.nodes)).unwrap();
    let base = sage_forward(&m, &sub, &h0).unwrap();
    let mut rev = sub.clone();
    rev.edges.reverse();
    assert_eq!(sage_forward(&m, &rev, &h0).unwrap(), base);
}

#[test]
fn embed_examples() {
    let g = fixture_graph(5);
    let mut m = init_model(&tiny_cfg(4), &layout_of(&g), &mut rng::from_seed(1)).unwrap();
    m.embedding.bias = Array1::from_iter((0..6).map(|i| i as f64 * 0.1));
    assert_eq!(embed(&m, &Array1::zeros(4)).unwrap(), m.embedding.bias);
    let h = array![0.3, -1.2, 0.5, 2.0];
    let e = embed(&m, &h).unwrap();
    for o in 0..6 {
        let z: f64 = m.embedding.bias[o] + (0..4).map(|j| m.embedding.weight[[o, j]] * h[j]).sum::<f64>();
        assert!((e[o] - z).abs() < 1e-14);
    }
    m.embedding.bias.fill(0.0);
    let e1 = embed(&m, &h).unwrap();
    let e2 = embed(&m, &(&h * 2.0)).unwrap();
    for (a, b) in e1.iter().zip(&e2) {
        assert!((2.0 * a - b).abs() < 1e-14);
    }
}

#[test]
fn reconstruct_reads_only_its_partition() {
    let g = fixture_graph(6);
    let m = init_model(&tiny_cfg(4), &layout_of(&g), &mut rng::from_seed(2)).unwrap();
    let e = array![0.4, -0.3, 1.1, 0.2, -0.9, 0.6];
    let base = reconstruct(&m, &e).unwrap();
    // oracle: per-slice matrix product
    for (h, (src, xhat)) in m.heads.iter().zip(&base) {
        assert_eq!(h.source, *src);
        for o in 0..xhat.len() {
            let z: f64 = h.layer.bias[o]
                + h.partition.clone().enumerate().map(|(j, c)| h.layer.weight[[o, j]] * e[c]).sum::<f64>();
            assert!((xhat[o] - z).abs() < 1e-14);
        }
    }
    let mut zeroed = e.clone();
    zeroed[0] = 0.0;
    zeroed[1] = 0.0;
    let after = reconstruct(&m, &zeroed).unwrap();
    for ((s, a), (_, b)) in base.iter().zip(&after) {
        assert_eq!(*s == Source::Trends, a != b, "{s}");
    }
    let zero = reconstruct(&m, &Array1::zeros(6)).unwrap();
    for (h, (_, xhat)) in m.heads.iter().zip(&zero) {
        assert_eq!(xhat, &h.layer.bias);
    }
}

#[test]
fn partition_isolation_by_finite_differences() {
    let g = fixture_graph(7);
    let m = init_model(&tiny_cfg(4), &layout_of(&g), &mut rng::from_seed(3)).unwrap();
    let e = array![0.4, -0.3, 1.1, 0.2, -0.9, 0.6];
    let base = reconstruct(&m, &e).unwrap();
    for (hi, head) in m.heads.iter().enumerate() {
        assert_eq!(head.layer.inputs(), head.partition.len());
        for j in 0..6 {
            let mut p = e.clone();
            p[j] += 1e-3;
            let moved = &reconstruct(&m, &p).unwrap()[hi].1;
            let sensitivity = (moved - &base[hi].1).mapv(f64::abs).sum() / 1e-3;
            if head.partition.contains(&j) {
                assert!(sensitivity > 0.0);
            } else {
                assert_eq!(sensitivity, 0.0, "{} reads column {j}", head.source);
            }
        }
    }
}

#[test]
fn batched_forward_matches_single_seed_path() {
    let g = fixture_graph(8);
    let inputs = model_inputs(&g).unwrap();
    for pooling in [Pooling::Sum, Pooling::Mean] {
        let cfg = PdfmConfig { pooling, ..tiny_cfg(5) };
        let m = init_model(&cfg, &inputs.provenance, &mut rng::from_seed(4)).unwrap();
        let subs = sample_many(&g, &[0, 1, 2, 3, 4], &SamplerConfig::default()).unwrap();
        let refs: Vec<&Subgraph> = subs.iter().collect();
        let batched = m.embed_batch(&inputs.values, &Batch::from_subgraphs(&refs)).unwrap();
        for (i, sub) in subs.iter().enumerate() {
            let h0 = encode_inputs(&m, &inputs.values.select(Axis(0), &sub.nodes)).unwrap();
            let e = embed(&m, &sage_forward(&m, sub, &h0).unwrap()).unwrap();
            for (a, b) in e.iter().zip(batched.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn full_loss_gradient_check() {
    let g = fixture_graph(9);
    let inputs = model_inputs(&g).unwrap();
    let subs = sample_many(&g, &[0, 1, 2, 3, 4], &SamplerConfig::default()).unwrap();
    let refs: Vec<&Subgraph> = subs.iter().collect();
    let batch = Batch::from_subgraphs(&refs);
    for (pooling, shared) in [(Pooling::Sum, false), (Pooling::Mean, true)] {
        let cfg = PdfmConfig { pooling, share_neighbor_weights: shared, ..tiny_cfg(4) };
        let m = init_model(&cfg, &inputs.provenance, &mut rng::from_seed(12)).unwrap();
        let weight = |s: Source| if s == Source::Maps { 0.5 } else { 1.0 };
        let f = |p: &[f64]| {
            let mut mm = m.clone();
            mm.set_params(p).unwrap();
            let mut grads = PdfmGrads::zeros_like(&mm);
            let l = mm.loss_batch(&inputs.values, &batch, &weight, 0.3, 1.0, Some(&mut grads)).unwrap();
            (l.total, grads.flatten())
        };
        let err = grad_check(f, &m.params(), 1e-5);
        assert!(err < 1e-6, "{pooling:?}: {err}");
    }
}

#[test]
fn hop_one_draws_do_not_depend_on_depth() {
    let g = fixture_graph(10);
    for seed in 0..5 {
        let deep = SamplerConfig { seed: 77, ..Default::default() };
        let shallow = SamplerConfig { max_hops: 1, ..deep.clone() };
        let a = sample_subgraph_at(&g, seed, &deep).unwrap();
        let b = sample_subgraph_at(&g, seed, &shallow).unwrap();
        for k in EdgeSetKind::ALL {
            let ga: Vec<usize> = a.seed_neighbors(k).map(|l| a.nodes[l]).collect();
            let gb: Vec<usize> = b.seed_neighbors(k).map(|l| b.nodes[l]).collect();
            let (mut ga, mut gb) = (ga, gb);
            ga.sort_unstable();
            gb.sort_unstable();
            assert_eq!(ga, gb);
        }
    }
}

#[test]
fn zero_lr_and_zero_epochs_keep_init() {
    let g = fixture_graph(11);
    let cfg = PdfmConfig { lr_max: 0.0, ..tiny_cfg(4) };
    let init = init_model(&cfg, &layout_of(&g), &mut rng::stream(cfg.seed, "init")).unwrap();
    let out = train_pdfm(&g, &cfg).unwrap();
    assert_eq!(out.model, init);
    assert_eq!(out.history.len(), 3);
    let out = train_pdfm(&g, &PdfmConfig { epochs: 0, ..tiny_cfg(4) }).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.model, init);
}

#[test]
fn validation_split_is_a_partition() {
    for seed in 0..20 {
        let (train, val) = split_seeds(37, 0.2, seed);
        assert_eq!(val.len(), 7);
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
    }
}

#[test]
fn training_is_worker_count_independent() {
    let g = fixture_graph(12);
    let cfg = tiny_cfg(6);
    let one = par::with_workers(1, || train_pdfm(&g, &cfg).unwrap());
    let four = par::with_workers(4, || train_pdfm(&g, &cfg).unwrap());
    assert_eq!(one.model, four.model);
    assert_eq!(one.history, four.history);
    assert!(one.history.iter().all(|h| h.train_loss.is_finite()));
}

#[test]
fn export_is_repeatable_and_changes_after_training() {
    let g = fixture_graph(13);
    let cfg = tiny_cfg(6);
    let init = init_model(&cfg, &layout_of(&g), &mut rng::from_seed(1)).unwrap();
    let sampler = SamplerConfig { seed: 5, ..Default::default() };
    let a = export_embeddings(&init, &g, &sampler).unwrap();
    let b = export_embeddings(&init, &g, &sampler).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), g.len());
    assert_eq!(a.width(), 6);
    let trained = train_pdfm(&g, &PdfmConfig { seed: 1, ..cfg }).unwrap().model;
    let c = export_embeddings(&trained, &g, &sampler).unwrap();
    let dist: f64 = (&c.values - &a.values).mapv(|v| v * v).sum().sqrt();
    assert!(dist > 0.0);
}

fn table(width_parts: &[(&str, usize)]) -> EmbeddingTable {
    let mut parts = Vec::new();
    let mut at = 0;
    for (name, w) in width_parts {
        parts.push(Partition::new(name, &[], at..at + w));
        at += w;
    }
    let ids: Vec<String> = (0..4).map(|i| format!("n{i}")).collect();
    let values = Array2::from_shape_fn((4, at), |(i, j)| (i * 100 + j) as f64 / 7.0);
    EmbeddingTable::new(ids, values, "fp".into(), parts).unwrap()
}

#[test]
fn slice_and_concat_tables() {
    let t = table(&[("trends", 16), ("maps_busyness", 16), ("weather_aq", 16)]);
    assert_eq!(t.slice_modality("trends").unwrap().width(), 16);
    assert!(matches!(t.slice_modality("nope"), Err(Error::Lookup { .. })));
    let slices: Vec<_> = ["trends", "maps_busyness", "weather_aq"].iter().map(|m| t.slice_modality(m).unwrap()).collect();
    let views: Vec<_> = slices.iter().map(|s| s.values.view()).collect();
    assert_eq!(ndarray::concatenate(Axis(1), &views).unwrap(), t.values);

    let mut ext = table(&[("external", 16)]);
    ext.ids.reverse();
    let joined = t.concat_external(&ext).unwrap();
    assert_eq!(joined.width(), 64);
    let ei = ext.index();
    for (i, id) in t.ids.iter().enumerate() {
        let row = joined.values.row(i);
        assert_eq!(row.slice(ndarray::s![..48]), t.values.row(i));
        assert_eq!(row.slice(ndarray::s![48..]), ext.values.row(ei[id.as_str()]));
    }
    let empty = EmbeddingTable::new(t.ids.clone(), Array2::zeros((4, 0)), "e".into(), vec![]).unwrap();
    assert_eq!(t.concat_external(&empty).unwrap(), t);
    let mut short = table(&[("external", 2)]);
    short.ids[3] = "zz".into();
    assert!(matches!(t.concat_external(&short), Err(Error::Join { .. })));
}

#[test]
fn paper_preset_trends_slice_is_128_wide() {
    let parts = PdfmConfig::paper().partitions;
    let ids: Vec<String> = vec!["a".into()];
    let t = EmbeddingTable::new(ids, Array2::zeros((1, 330)), "p".into(), parts).unwrap();
    assert_eq!(t.slice_modality("trends").unwrap().width(), 128);
    assert_eq!(t.slice_modality("busyness").unwrap().width(), 128);
    assert_eq!(t.slice_modality("weather_aq").unwrap().width(), 74);
}

#[test]
fn table_and_checkpoint_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let t = table(&[("trends", 3), ("rest", 2)]);
    t.save(dir.path()).unwrap();
    let back = EmbeddingTable::load(dir.path()).unwrap();
    assert_eq!(back, t);

    let g = fixture_graph(14);
    let cfg = tiny_cfg(4);
    let m = init_model(&cfg, &layout_of(&g), &mut rng::from_seed(8)).unwrap();
    let path = dir.path().join("model.json");
    m.to_checkpoint(&cfg).save(&path).unwrap();
    let (m2, cfg2) = PdfmModel::from_checkpoint(&crate::nn::Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(m2, m);
    assert_eq!(cfg2, cfg);

    let log = vec![EpochLog { epoch: 0, train_loss: 0.5, val_loss: None, lr: 1e-3 }];
    write_training_log(&dir.path().join("log.jsonl"), &log).unwrap();
    assert_eq!(read_training_log(&dir.path().join("log.jsonl")).unwrap(), log);
}

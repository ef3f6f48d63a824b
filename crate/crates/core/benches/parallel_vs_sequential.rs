//! One worker vs the default pool on the data-parallel hot paths.
//!
//! Build with `--no-default-features` to measure the purely sequential fallback.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng as _;

use geofm::baselines::{idw_fit, IdwConfig};
use geofm::bench::{coordinate_table, run_benchmark, BenchConfig, NamedTable, SplitKind};
use geofm::downstream::RegressorSpec;
use geofm::features::{standardize, ClipOrder};
use geofm::graph::{build_graph, GraphConfig, LatLon, RegionGraph};
use geofm::pdfm::{train_pdfm, PdfmConfig};
use geofm::sampling::{sample_many, SamplerConfig};
use geofm::synthgeo::{desk_synth_config, generate_world, WorldBundle};
use geofm::{par, rng};

fn desk() -> (WorldBundle, RegionGraph) {
    let world = generate_world(&desk_synth_config()).expect("desk world");
    let blocks = world
        .blocks
        .values()
        .map(|b| standardize(b, 4.0, ClipOrder::default()).map(|(s, _)| s))
        .collect::<Result<Vec<_>, _>>()
        .expect("standardize");
    let graph = build_graph(world.regions.clone(), blocks, &GraphConfig::default()).expect("graph");
    (world, graph)
}

/// (label, workers): 1 forces a single thread, 0 uses the default pool.
const MODES: [(&str, usize); 2] = [("sequential", 1), ("parallel", 0)];

fn bench_all(c: &mut Criterion) {
    let (world, graph) = desk();

    let mut r = rng::from_seed(1);
    let coords: Vec<LatLon> =
        (0..2000).map(|_| LatLon::new(r.random_range(25.0..49.0), r.random_range(-124.0..-67.0))).collect();
    let values: Vec<f64> = (0..2000).map(|_| r.random_range(0.0..1.0)).collect();
    let queries: Vec<LatLon> =
        (0..2000).map(|_| LatLon::new(r.random_range(25.0..49.0), r.random_range(-124.0..-67.0))).collect();
    let idw = idw_fit(&coords, &values, &IdwConfig::default()).unwrap();

    let seeds: Vec<usize> = (0..graph.len()).collect();
    let sampler = SamplerConfig::default();
    let pdfm = PdfmConfig { epochs: 1, ..PdfmConfig::desk() };
    let coords_table = coordinate_table(&world.regions).unwrap();
    let bench_cfg = BenchConfig {
        tasks: vec!["elevation".into(), "obesity".into()],
        splits: vec![SplitKind::Interpolation, SplitKind::Extrapolation],
        regressors: vec![RegressorSpec::Ridge { lambda: 1.0 }],
        ..BenchConfig::default()
    };

    let mut group = c.benchmark_group("workers");
    group.sample_size(10);
    for (label, workers) in MODES {
        group.bench_with_input(BenchmarkId::new("idw_predict_2000", label), &workers, |b, &w| {
            b.iter(|| par::with_workers(w, || black_box(idw.predict(&queries))))
        });
        group.bench_with_input(BenchmarkId::new("sample_desk_graph", label), &workers, |b, &w| {
            b.iter(|| par::with_workers(w, || black_box(sample_many(&graph, &seeds, &sampler).unwrap())))
        });
        group.bench_with_input(BenchmarkId::new("pdfm_one_epoch", label), &workers, |b, &w| {
            b.iter(|| par::with_workers(w, || black_box(train_pdfm(&graph, &pdfm).unwrap())))
        });
        group.bench_with_input(BenchmarkId::new("ridge_benchmark", label), &workers, |b, &w| {
            let tables = [NamedTable { name: "coords", table: &coords_table }];
            b.iter(|| {
                par::with_workers(w, || black_box(run_benchmark(&world.regions, &world.labels, &tables, &bench_cfg).unwrap()))
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_all);
criterion_main!(benches);

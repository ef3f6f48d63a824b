use ndarray::{Array2, Axis};

use super::*;
use crate::pdfm::EmbeddingTable;
use crate::synthgeo::{desk_synth_config, generate_world, WorldBundle};

fn world() -> WorldBundle {
    generate_world(&desk_synth_config()).unwrap()
}

/// Ground-truth latents for postal rows and member means for counties.
fn latent_table(w: &WorldBundle) -> EmbeddingTable {
    let postal = w.postal_ids();
    let membership = w.membership();
    let mut ids = postal.clone();
    let mut rows: Vec<Vec<f64>> = w.latents.rows().into_iter().map(|r| r.to_vec()).collect();
    for c in w.county_ids() {
        let members: Vec<usize> = postal.iter().enumerate().filter(|(_, p)| membership[*p] == c).map(|(i, _)| i).collect();
        rows.push(w.latents.select(Axis(0), &members).mean_axis(Axis(0)).unwrap().to_vec());
        ids.push(c);
    }
    let d = rows[0].len();
    let values = Array2::from_shape_vec((rows.len(), d), rows.concat()).unwrap();
    EmbeddingTable::new(ids, values, "latents".into(), vec![crate::pdfm::Partition::new("latent", &[], 0..d)]).unwrap()
}

fn zero_width(w: &WorldBundle) -> EmbeddingTable {
    let ids: Vec<String> = w.regions.iter().map(|r| r.id.clone()).collect();
    EmbeddingTable::new(ids.clone(), Array2::zeros((ids.len(), 0)), "none".into(), Vec::new()).unwrap()
}

pub(crate) fn desk_tasks() -> Vec<ForecastTaskConfig> {
    vec![
        ForecastTaskConfig {
            task: "unemployment".into(),
            split: ThreePartSplit { part1: 0..120, part2: 120..121, part3: 126..127 },
            base: None,
            arima: ForecasterSpec::arima(1, 0, 1),
        },
        ForecastTaskConfig {
            task: "poverty".into(),
            split: ThreePartSplit { part1: 0..27, part2: 27..28, part3: 29..30 },
            base: None,
            arima: ForecasterSpec::arima(1, 0, 1),
        },
    ]
}

fn cfg() -> ForecastConfig {
    ForecastConfig { tasks: desk_tasks(), ..Default::default() }
}

#[test]
fn latent_embeddings_let_the_adapter_beat_stale_forecasts() {
    let w = world();
    let run = run_forecast_benchmark(&w.series, &latent_table(&w), &cfg()).unwrap();
    for (task, rep) in &run.report.tasks {
        let (a, c) = (rep.mape[BASE_T_MINUS_1], rep.mape[BASE_T_MINUS_1_ADAPTER]);
        assert!(c <= 0.9 * a, "{task}: adapter {c} vs base {a}");
        assert!(c <= 0.9 * rep.mape[BASE_T], "{task}");
        assert!(rep.comparisons.iter().all(|cmp| cmp.test.threshold == 0.025));
        let tf = &run.tasks[task];
        for m in METHODS {
            assert_eq!(tf.ape[m].len(), tf.regions.len());
        }
    }
}

#[test]
fn zero_width_embedding_reduces_to_calibration() {
    let w = world();
    let run = run_forecast_benchmark(&w.series, &zero_width(&w), &cfg()).unwrap();
    for (task, rep) in &run.report.tasks {
        let (a, c) = (rep.mape[BASE_T_MINUS_1], rep.mape[BASE_T_MINUS_1_ADAPTER]);
        assert!((c - a).abs() <= 0.05 * a, "{task}: adapter {c} vs base {a}");
    }
}

#[test]
fn stale_path_never_reads_later_steps() {
    let w = world();
    let table = latent_table(&w);
    let a = run_forecast_benchmark(&w.series, &table, &cfg()).unwrap();
    let mut series = w.series.clone();
    for tc in desk_tasks() {
        let p = series.get_mut(&tc.task).unwrap();
        for mut row in p.values.rows_mut() {
            for t in tc.split.part3.clone() {
                row[t] *= 1.5;
            }
        }
    }
    let b = run_forecast_benchmark(&series, &table, &cfg()).unwrap();
    for tc in desk_tasks() {
        let (fa, fb) = (&a.tasks[&tc.task].forecasts, &b.tasks[&tc.task].forecasts);
        assert_eq!(fa[BASE_T_MINUS_1], fb[BASE_T_MINUS_1]);
        assert_eq!(fa[BASE_T_MINUS_1_ADAPTER], fb[BASE_T_MINUS_1_ADAPTER]);
        assert_eq!(fa[BASE_T], fb[BASE_T]);
    }
}

#[test]
fn constant_series_score_zero() {
    let ids: Vec<String> = (0..6).map(|i| format!("C{i}")).collect();
    let panel = SeriesPanel::new("flat", Frequency::Yearly, ids.clone(), Array2::from_elem((6, 30), 4.0)).unwrap();
    let panels = [("flat".to_string(), panel)].into_iter().collect();
    let values = Array2::from_shape_fn((6, 2), |(i, j)| (i * j) as f64);
    let emb = EmbeddingTable::new(ids, values, "e".into(), vec![crate::pdfm::Partition::new("e", &[], 0..2)]).unwrap();
    let task = ForecastTaskConfig {
        task: "flat".into(),
        split: ThreePartSplit { part1: 0..27, part2: 27..28, part3: 29..30 },
        base: None,
        arima: ForecasterSpec::arima(1, 0, 1),
    };
    let run = run_forecast_benchmark(&panels, &emb, &ForecastConfig { tasks: vec![task], ..Default::default() }).unwrap();
    for (m, v) in &run.report.tasks["flat"].mape {
        assert!(v.abs() < 1e-6, "{m}: {v}");
    }
}

#[test]
fn missing_values_drop_regions_from_every_method() {
    let w = world();
    let mut series = w.series.clone();
    let p = series.get_mut("unemployment").unwrap();
    p.values[(3, 50)] = f64::NAN;
    let gone = p.ids[3].clone();
    let run = run_forecast_benchmark(&series, &latent_table(&w), &cfg()).unwrap();
    let rep = &run.report.tasks["unemployment"];
    assert_eq!(rep.n_regions, 49);
    assert!(rep.dropped.contains_key(&gone));
    assert!(!run.tasks["unemployment"].regions.contains(&gone));
}

#[test]
fn invalid_splits_and_missing_embeddings_error() {
    let w = world();
    let mut bad = cfg();
    bad.tasks[0].split.part3 = 126..200;
    assert!(matches!(run_forecast_benchmark(&w.series, &latent_table(&w), &bad), Err(crate::Error::Config { .. })));
    let mut bad = cfg();
    bad.tasks[0].split.part2 = 121..122;
    assert!(run_forecast_benchmark(&w.series, &latent_table(&w), &bad).is_err());
    let t = latent_table(&w);
    let county = w.county_ids()[0].clone();
    let keep: Vec<String> = t.ids.iter().filter(|id| **id != county).cloned().collect();
    let partial = EmbeddingTable::new(keep.clone(), t.rows_for(&keep).unwrap(), "p".into(), t.partitions.clone()).unwrap();
    let err = run_forecast_benchmark(&w.series, &partial, &cfg()).unwrap_err();
    assert!(matches!(err, crate::Error::Join { .. }), "{err}");
}

#[test]
fn forecasts_csv_has_one_row_per_region_and_method() {
    let w = world();
    let run = run_forecast_benchmark(&w.series, &zero_width(&w), &cfg()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("forecasts.csv");
    write_forecasts_csv(&path, &run).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 * (500 + 50));
    assert!(text.starts_with("region_id,task,method,h0"));
}

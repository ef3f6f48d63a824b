//! Region-holdout splits, metrics, significance tests and the benchmark
//! runner for interpolation, extrapolation and super-resolution.

mod metrics;
mod report;
mod run;
mod split;

pub use metrics::{intra_county_pearson, mape, paired_t_test, pearson_r, r_squared, IntraCounty, TTest, INTRA_COUNTY_MIN_POINTS, MAPE_MIN_ABS};
pub use report::{
    choropleth_svg, read_predictions_csv, report_json, report_rows, write_choropleths, write_reports, ChoroplethOptions, PREDICTIONS_CSV,
    REPORT_CSV, REPORT_JSON, SPLITS_JSON,
};
pub use run::{
    build_splits, coordinate_table, run_benchmark, BenchConfig, BenchRun, CellOutcome, CellPredictions, EvalReport,
    LabelAccess, LabelRead, NamedTable, Purpose, Significance, SplitSummary, IDW_METHOD,
};
pub use split::{
    candidates_from_regions, make_extrapolation_split, make_interpolation_split, make_superres_split,
    map_postal_to_county, SplitKind, SplitSpec,
};

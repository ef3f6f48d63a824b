//! Base forecasters, supervised ARIMA and an embedding-conditioned adapter
//! that corrects stale base forecasts.

pub mod adapter;
pub mod arima;
pub mod base;
mod run;
pub mod series;

pub use adapter::{train_adapter, AdapterModel, AdapterSpec};
pub use arima::{arima_fit, arima_forecast, ArimaModel};
pub use base::{base_forecast, ForecasterFamily, ForecasterSpec};
pub use run::{
    run_forecast_benchmark, write_forecasts_csv, Comparison, ForecastConfig, ForecastReport, ForecastRun,
    ForecastTaskConfig, ForecastTaskReport, TaskForecasts, ThreePartSplit, ARIMA_T, BASE_T, BASE_T_MINUS_1,
    BASE_T_MINUS_1_ADAPTER, METHODS,
};
pub use series::{Frequency, SeriesPanel};

#[cfg(test)]
mod tests;

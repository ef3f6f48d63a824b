use serde::{Deserialize, Serialize};

use super::arima::{arima_fit, arima_forecast};
use super::series::Frequency;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecasterFamily {
    NaiveLast,
    SeasonalNaive,
    Ar,
    Arima,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecasterSpec {
    pub family: ForecasterFamily,
    #[serde(default)]
    pub p: usize,
    #[serde(default)]
    pub d: usize,
    #[serde(default)]
    pub q: usize,
    #[serde(default)]
    pub period: usize,
}

impl ForecasterSpec {
    pub fn naive_last() -> Self {
        Self { family: ForecasterFamily::NaiveLast, p: 0, d: 0, q: 0, period: 0 }
    }

    pub fn seasonal_naive(period: usize) -> Self {
        Self { family: ForecasterFamily::SeasonalNaive, p: 0, d: 0, q: 0, period }
    }

    pub fn ar(p: usize) -> Self {
        Self { family: ForecasterFamily::Ar, p, d: 0, q: 0, period: 0 }
    }

    pub fn arima(p: usize, d: usize, q: usize) -> Self {
        Self { family: ForecasterFamily::Arima, p, d, q, period: 0 }
    }

    /// Stand-in base forecaster: seasonal-naive (12) for monthly data,
    /// AR(2) for yearly.
    pub fn default_base(frequency: Frequency) -> Self {
        match frequency {
            Frequency::Monthly => Self::seasonal_naive(12),
            Frequency::Yearly => Self::ar(2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            ForecasterFamily::SeasonalNaive if self.period < 1 => {
                Err(Error::config("forecast.period", "seasonal_naive needs period >= 1"))
            }
            ForecasterFamily::Ar if self.p < 1 || self.q != 0 || self.d != 0 => {
                Err(Error::config("forecast.p", "ar needs p >= 1 and d = q = 0"))
            }
            ForecasterFamily::Arima if self.p + self.q < 1 => Err(Error::config("forecast.p", "arima needs p + q >= 1")),
            _ => Ok(()),
        }
    }

    pub fn min_context(&self) -> usize {
        (self.p + self.d).max(self.period).max(3)
    }
}

/// `h` forecasts following `context`.
pub fn base_forecast(context: &[f64], spec: &ForecasterSpec, h: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    if context.len() < spec.min_context() {
        return Err(Error::Forecast(format!(
            "{:?} needs a context of {} values, got {}",
            spec.family,
            spec.min_context(),
            context.len()
        )));
    }
    if context.iter().any(|v| !v.is_finite()) {
        return Err(Error::Forecast("context contains non-finite values".into()));
    }
    let n = context.len();
    Ok(match spec.family {
        ForecasterFamily::NaiveLast => vec![context[n - 1]; h],
        ForecasterFamily::SeasonalNaive => {
            let last = &context[n - spec.period..];
            (0..h).map(|i| last[i % spec.period]).collect()
        }
        ForecasterFamily::Ar => arima_forecast(&arima_fit(context, spec.p, 0, 0)?, h),
        ForecasterFamily::Arima => arima_forecast(&arima_fit(context, spec.p, spec.d, spec.q)?, h),
    })
}

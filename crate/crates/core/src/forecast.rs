//! Load and PV forecasts over a control horizon.

use serde::{Deserialize, Serialize};

use crate::ingest::TimeSeries;
use crate::{Error, Result, STEPS_PER_DAY};

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub load: Vec<f64>,
    pub pv: Vec<f64>,
    /// Step index the forecast is issued at.
    pub origin: usize,
}

impl Forecast {
    pub fn horizon(&self) -> usize {
        self.load.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForecastMode {
    Perfect,
    Persistence,
}

impl ForecastMode {
    pub fn forecast(self, profiles: &TimeSeries, t0: usize, h: usize) -> Result<Forecast> {
        match self {
            ForecastMode::Perfect => perfect(profiles, t0, h),
            ForecastMode::Persistence => persistence(profiles, t0, h, STEPS_PER_DAY),
        }
    }
}

/// The true future window.
pub fn perfect(profiles: &TimeSeries, t0: usize, h: usize) -> Result<Forecast> {
    let end = t0 + h;
    if end > profiles.len() {
        return Err(Error::Index { index: end, len: profiles.len() });
    }
    Ok(Forecast {
        load: profiles.load()[t0..end].to_vec(),
        pv: profiles.pv()[t0..end].to_vec(),
        origin: t0,
    })
}

/// Same time on the most recent past day: entry `i` is sample
/// `t0 + (i mod period) − period`. Only samples before `t0` are read; while
/// less than one period of history exists, positions without history take
/// the latest sample available (the current one at `t0 = 0`).
pub fn persistence(profiles: &TimeSeries, t0: usize, h: usize, period: usize) -> Result<Forecast> {
    if period == 0 {
        return Err(Error::Config("persistence period must be positive".into()));
    }
    if t0 >= profiles.len() {
        return Err(Error::Index { index: t0, len: profiles.len() });
    }
    let latest = t0.saturating_sub(1);
    let source = |i: usize| (t0 + i % period).checked_sub(period).unwrap_or(latest);
    Ok(Forecast {
        load: (0..h).map(|i| profiles.load()[source(i)]).collect(),
        pv: (0..h).map(|i| profiles.pv()[source(i)]).collect(),
        origin: t0,
    })
}

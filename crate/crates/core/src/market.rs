//! Tariffs, the grid power balance and per-step energy cost.

use serde::{Deserialize, Serialize};

use crate::ingest::TimeSeries;
use crate::{Error, Result, STEP_HOURS};

/// Feed-in price used by the default scenarios, €/kWh.
pub const DEFAULT_SELL_PRICE: f64 = 0.086;

/// Time-of-use purchase prices, a flat feed-in price and a multiplicative
/// tax ratio applied to both directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tariff {
    buy_price: Vec<f64>,
    sell_price: f64,
    tax_ratio: f64,
}

impl Tariff {
    pub fn new(buy_price: Vec<f64>, sell_price: f64, tax_ratio: f64) -> Result<Self> {
        if let Some((t, k)) = buy_price.iter().enumerate().find(|(_, k)| !(**k > 0.0 && k.is_finite())) {
            return Err(Error::Config(format!("buy price {k} at step {t} must be positive")));
        }
        if !(sell_price >= 0.0 && sell_price.is_finite()) {
            return Err(Error::Config(format!("sell price {sell_price} must be non-negative")));
        }
        if !(0.0..1.0).contains(&tax_ratio) {
            return Err(Error::Config(format!("tax ratio {tax_ratio} must lie in [0, 1)")));
        }
        Ok(Self { buy_price, sell_price, tax_ratio })
    }

    /// Tariff over the price column of `series`.
    pub fn from_series(series: &TimeSeries, sell_price: f64, tax_ratio: f64) -> Result<Self> {
        let prices = series
            .price()
            .ok_or_else(|| Error::Data("profile has no price column".into()))?;
        Self::new(prices.to_vec(), sell_price, tax_ratio)
    }

    pub fn len(&self) -> usize {
        self.buy_price.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buy_price.is_empty()
    }

    pub fn buy_price(&self) -> &[f64] {
        &self.buy_price
    }

    pub fn sell_price(&self) -> f64 {
        self.sell_price
    }

    pub fn tax_ratio(&self) -> f64 {
        self.tax_ratio
    }

    /// Effective import price `k^ToU_t·(1+k)`.
    pub fn import_rate(&self, t: usize) -> Result<f64> {
        let k = self
            .buy_price
            .get(t)
            .ok_or(Error::Index { index: t, len: self.buy_price.len() })?;
        Ok(k * (1.0 + self.tax_ratio))
    }

    /// Effective export price `k^Sell·(1−k)`.
    pub fn export_rate(&self) -> f64 {
        self.sell_price * (1.0 - self.tax_ratio)
    }

    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        let end = start
            .checked_add(len)
            .filter(|&e| e <= self.len())
            .ok_or(Error::Index { index: start.saturating_add(len), len: self.len() })?;
        Ok(Self {
            buy_price: self.buy_price[start..end].to_vec(),
            ..self.clone()
        })
    }
}

/// Site exchange at one step, before any battery action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSample {
    pub load: f64,
    pub pv: f64,
    /// Step length, hours.
    pub dt: f64,
}

impl GridSample {
    pub fn new(load: f64, pv: f64, dt: f64) -> Result<Self> {
        if !(load >= 0.0) || !(pv >= 0.0) || !(dt > 0.0) {
            return Err(Error::Data(format!(
                "grid sample needs load, pv >= 0 and dt > 0 (got {load}, {pv}, {dt})"
            )));
        }
        Ok(Self { load, pv, dt })
    }
}

/// Net grid import `p^L − p^PV + Σ p^B`, positive battery power charging.
pub fn grid_power(sample: &GridSample, battery_powers: &[f64], strings: usize) -> Result<f64> {
    if battery_powers.len() != strings {
        return Err(Error::Config(format!(
            "{} battery powers given for {strings} configured strings",
            battery_powers.len()
        )));
    }
    Ok(sample.load - sample.pv + battery_powers.iter().sum::<f64>())
}

/// Cost of exchanging `p_grid` kW for `dt` hours at step `t`; negative when
/// exporting.
pub fn step_cost(p_grid: f64, t: usize, tariff: &Tariff, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("step length {dt} must be positive")));
    }
    let import = tariff.import_rate(t)?;
    Ok(if p_grid >= 0.0 {
        p_grid * dt * import
    } else {
        p_grid * dt * tariff.export_rate()
    })
}

/// Cost at every step with the batteries idle.
pub fn baseline_cost_series(profiles: &TimeSeries, tariff: &Tariff) -> Result<Vec<f64>> {
    if tariff.len() < profiles.len() {
        return Err(Error::Data(format!(
            "tariff covers {} steps, profiles have {}",
            tariff.len(),
            profiles.len()
        )));
    }
    (0..profiles.len())
        .map(|t| {
            let sample = GridSample::new(profiles.load()[t], profiles.pv()[t], STEP_HOURS)?;
            step_cost(grid_power(&sample, &[], 0)?, t, tariff, STEP_HOURS)
        })
        .collect()
}

//! 15-minute profile loading, validation, price scaling and a synthetic
//! profile generator.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, FixedOffset, SecondsFormat, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, STEPS_PER_DAY};

pub const PRICE_LO: f64 = 0.18;
pub const PRICE_HI: f64 = 0.38;
const SPACING_MINUTES: i64 = 15;

/// Aligned load, PV and price samples at uniform 15-minute spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    timestamps: Vec<DateTime<FixedOffset>>,
    load: Vec<f64>,
    pv: Vec<f64>,
    price: Option<Vec<f64>>,
}

impl TimeSeries {
    pub fn new(
        timestamps: Vec<DateTime<FixedOffset>>,
        load: Vec<f64>,
        pv: Vec<f64>,
        price: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = timestamps.len();
        if load.len() != n || pv.len() != n || price.as_ref().is_some_and(|p| p.len() != n) {
            return Err(Error::Data("profile columns have different lengths".into()));
        }
        check_spacing(&timestamps, 0)?;
        for i in 0..n {
            check_sample(i, load[i], pv[i], price.as_ref().map(|p| p[i]), 0)?;
        }
        Ok(Self { timestamps, load, pv, price })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[DateTime<FixedOffset>] {
        &self.timestamps
    }

    pub fn load(&self) -> &[f64] {
        &self.load
    }

    pub fn pv(&self) -> &[f64] {
        &self.pv
    }

    pub fn price(&self) -> Option<&[f64]> {
        self.price.as_deref()
    }

    /// Replaces the price column, e.g. with scaled prices.
    pub fn with_price(mut self, price: Vec<f64>) -> Result<Self> {
        if price.len() != self.len() {
            return Err(Error::Data(format!(
                "price column has {} samples, series has {}",
                price.len(),
                self.len()
            )));
        }
        self.price = Some(price);
        Ok(self)
    }

    /// Copy of `len` samples starting at `start`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        let end = start.checked_add(len).filter(|&e| e <= self.len()).ok_or(Error::Index {
            index: start.saturating_add(len),
            len: self.len(),
        })?;
        Ok(Self {
            timestamps: self.timestamps[start..end].to_vec(),
            load: self.load[start..end].to_vec(),
            pv: self.pv[start..end].to_vec(),
            price: self.price.as_ref().map(|p| p[start..end].to_vec()),
        })
    }

    /// First and last timestamp, if any.
    pub fn span(&self) -> Option<(DateTime<FixedOffset>, DateTime<FixedOffset>)> {
        Some((*self.timestamps.first()?, *self.timestamps.last()?))
    }
}

/// Header names for the four CSV columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub timestamp: String,
    pub load: String,
    pub pv: String,
    pub price: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            load: "load_kw".into(),
            pv: "pv_kw".into(),
            price: "price_eur_kwh".into(),
        }
    }
}

pub fn load_csv(path: &Path, columns: &ColumnMap) -> Result<TimeSeries> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let series = read_csv(file, columns)?;
    if let Some((first, last)) = series.span() {
        log::info!("loaded {} rows from {} ({first} .. {last})", series.len(), path.display());
    }
    Ok(series)
}

/// Parses a profile CSV. Row numbers in errors count the header as row 1.
/// The price column is optional.
pub fn read_csv<R: Read>(reader: R, columns: &ColumnMap) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Data(format!("header: {e}")))?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let missing = |name: &str| Error::Data(format!("missing column `{name}`"));
    let ts_col = find(&columns.timestamp).ok_or_else(|| missing(&columns.timestamp))?;
    let load_col = find(&columns.load).ok_or_else(|| missing(&columns.load))?;
    let pv_col = find(&columns.pv).ok_or_else(|| missing(&columns.pv))?;
    let price_col = find(&columns.price);

    let mut timestamps = Vec::new();
    let mut load = Vec::new();
    let mut pv = Vec::new();
    let mut price = price_col.map(|_| Vec::new());
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let ts = DateTime::parse_from_rfc3339(field(ts_col))
            .map_err(|e| Error::Data(format!("row {row}: bad timestamp `{}`: {e}", field(ts_col))))?;
        let num = |c: usize, what: &str| -> Result<f64> {
            field(c)
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("row {row}: bad {what} `{}`", field(c))))
        };
        let l = num(load_col, "load")?;
        let p = num(pv_col, "pv")?;
        let k = match price_col {
            Some(c) => Some(num(c, "price")?),
            None => None,
        };
        check_sample(i, l, p, k, 2)?;
        if let Some(&prev) = timestamps.last() {
            check_step(prev, ts, row)?;
        }
        timestamps.push(ts);
        load.push(l);
        pv.push(p);
        if let (Some(v), Some(k)) = (price.as_mut(), k) {
            v.push(k);
        }
    }
    if timestamps.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    Ok(TimeSeries { timestamps, load, pv, price })
}

pub fn write_csv(path: &Path, series: &TimeSeries) -> Result<()> {
    let mut buf = Vec::new();
    write_csv_to(&mut buf, series)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Writes the default schema. Floats use shortest round-trip formatting,
/// so reading the output back yields an identical series.
pub fn write_csv_to<W: Write>(writer: W, series: &TimeSeries) -> Result<()> {
    let cols = ColumnMap::default();
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Data(format!("csv write: {e}"));
    let mut header = vec![cols.timestamp.as_str(), cols.load.as_str(), cols.pv.as_str()];
    if series.price.is_some() {
        header.push(cols.price.as_str());
    }
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..series.len() {
        let mut rec = vec![
            series.timestamps[i].to_rfc3339_opts(SecondsFormat::AutoSi, true),
            series.load[i].to_string(),
            series.pv[i].to_string(),
        ];
        if let Some(p) = &series.price {
            rec.push(p[i].to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("csv write: {e}")))
}

fn check_sample(i: usize, load: f64, pv: f64, price: Option<f64>, row_offset: usize) -> Result<()> {
    let row = i + row_offset;
    let label = if row_offset == 0 { "sample" } else { "row" };
    if !load.is_finite() || load < 0.0 {
        return Err(Error::Data(format!("{label} {row}: load {load} must be finite and non-negative")));
    }
    if !pv.is_finite() || pv < 0.0 {
        return Err(Error::Data(format!("{label} {row}: pv {pv} must be finite and non-negative")));
    }
    if let Some(k) = price {
        if !k.is_finite() {
            return Err(Error::Data(format!("{label} {row}: price {k} is not finite")));
        }
    }
    Ok(())
}

fn check_step(prev: DateTime<FixedOffset>, next: DateTime<FixedOffset>, row: usize) -> Result<()> {
    let step = next - prev;
    if step == Duration::minutes(SPACING_MINUTES) {
        return Ok(());
    }
    if step <= Duration::zero() {
        Err(Error::Data(format!("row {row}: duplicate or out-of-order timestamp {next} after {prev}")))
    } else {
        Err(Error::Data(format!("row {row}: gap between {prev} and {next}")))
    }
}

fn check_spacing(ts: &[DateTime<FixedOffset>], row_offset: usize) -> Result<()> {
    for i in 1..ts.len() {
        check_step(ts[i - 1], ts[i], i + row_offset)?;
    }
    Ok(())
}

/// Affine min-max map of `raw` onto `[lo, hi]`. A constant series maps to
/// the midpoint.
pub fn scale_prices(raw: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::Data("cannot scale an empty price series".into()));
    }
    if !(lo <= hi) {
        return Err(Error::Config(format!("price band [{lo}, {hi}] is empty")));
    }
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !min.is_finite() || !max.is_finite() {
        return Err(Error::Data("price series contains non-finite values".into()));
    }
    if max == min {
        return Ok(vec![0.5 * (lo + hi); raw.len()]);
    }
    let span = max - min;
    Ok(raw
        .iter()
        .map(|&r| (lo + (r - min) / span * (hi - lo)).clamp(lo, hi))
        .collect())
}

/// Shape parameters of the synthetic profile generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    /// Mean site load, kW.
    pub load_mean: f64,
    /// Amplitude of the daily load swing, kW.
    pub load_swing: f64,
    /// Standard deviation of per-sample load noise, kW.
    pub load_noise: f64,
    /// Clear-sky PV peak, kW.
    pub pv_peak: f64,
    /// Daylight hours `[sunrise, sunset)`.
    pub daylight: (f64, f64),
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            load_mean: 90.0,
            load_swing: 35.0,
            load_noise: 6.0,
            pv_peak: 160.0,
            daylight: (6.0, 20.0),
        }
    }
}

/// Deterministic synthetic profiles: a sinusoid-plus-noise load, a
/// cloud-modulated solar arc and a two-peak price curve inside the tariff
/// band. Starts at 2023-01-02T00:00Z.
pub fn synth_profiles(days: usize, seed: u64) -> Result<TimeSeries> {
    synth_profiles_with(days, seed, &SynthParams::default())
}

pub fn synth_profiles_with(days: usize, seed: u64, params: &SynthParams) -> Result<TimeSeries> {
    if days == 0 {
        return Err(Error::Config("synthetic profiles need at least one day".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.load_noise.max(0.0))
        .map_err(|e| Error::Config(format!("load noise: {e}")))?;
    let start = Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap().fixed_offset();
    let n = days * STEPS_PER_DAY;
    let (rise, set) = params.daylight;

    let mut timestamps = Vec::with_capacity(n);
    let mut load = Vec::with_capacity(n);
    let mut pv = Vec::with_capacity(n);
    let mut price = Vec::with_capacity(n);
    for _day in 0..days {
        let cloud: f64 = rng.gen_range(0.35..1.0);
        let level: f64 = rng.gen_range(-0.03..0.03);
        let evening_weight: f64 = rng.gen_range(0.8..1.0);
        for k in 0..STEPS_PER_DAY {
            let i = timestamps.len();
            timestamps.push(start + Duration::minutes(SPACING_MINUTES * i as i64));
            let hour = k as f64 * 24.0 / STEPS_PER_DAY as f64;

            let daily = -(2.0 * PI * (hour - 3.0) / 24.0).cos();
            let l = params.load_mean + params.load_swing * daily + noise.sample(&mut rng);
            load.push(l.max(0.0));

            let p = if hour >= rise && hour < set {
                let arc = (PI * (hour - rise) / (set - rise)).sin();
                let flicker: f64 = rng.gen_range(0.9..1.0);
                params.pv_peak * cloud * flicker * arc * arc
            } else {
                0.0
            };
            pv.push(p);

            let bump = |center: f64, width: f64| (-((hour - center) / width).powi(2)).exp();
            let shape = 0.75 * bump(8.0, 1.8) + evening_weight * bump(19.0, 2.2) - 0.25 * bump(13.5, 2.0);
            let k_tou = 0.24 + 0.14 * shape + level;
            price.push(k_tou.clamp(PRICE_LO, PRICE_HI));
        }
    }
    TimeSeries::new(timestamps, load, pv, Some(price))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> DateTime<FixedOffset> {
        DateTime::parse_from_rfc3339(s).unwrap()
    }

    const FOUR_ROWS: &str = "timestamp,load_kw,pv_kw,price_eur_kwh
2024-03-01T00:00:00Z,10,0,0.2
2024-03-01T00:15:00Z,11,0,0.21
2024-03-01T00:30:00Z,12,0.5,0.22
2024-03-01T00:45:00Z,13,1,0.23
";

    #[test]
    fn well_formed_file_loads() {
        let s = read_csv(FOUR_ROWS.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.load(), &[10.0, 11.0, 12.0, 13.0]);
        assert_eq!(s.price().unwrap()[3], 0.23);
        assert_eq!(s.span().unwrap().1, ts("2024-03-01T00:45:00Z"));
    }

    #[test]
    fn gap_is_named() {
        let text = FOUR_ROWS.replace("2024-03-01T00:30:00Z", "2024-03-01T00:35:00Z");
        let err = read_csv(text.as_bytes(), &ColumnMap::default()).unwrap_err().to_string();
        assert!(err.contains("row 4") && err.contains("gap"), "{err}");
    }

    #[test]
    fn duplicate_timestamp_rejected() {
        let text = FOUR_ROWS.replace("2024-03-01T00:15:00Z", "2024-03-01T00:00:00Z");
        let err = read_csv(text.as_bytes(), &ColumnMap::default()).unwrap_err().to_string();
        assert!(err.contains("row 3") && err.contains("duplicate"), "{err}");
    }

    #[test]
    fn negative_pv_rejected_with_row() {
        let text = FOUR_ROWS.replace(",0.5,", ",-0.5,");
        let err = read_csv(text.as_bytes(), &ColumnMap::default()).unwrap_err().to_string();
        assert!(err.contains("row 4") && err.contains("pv"), "{err}");
    }

    #[test]
    fn remapped_columns_without_price() {
        let text = "time,demand,solar\n2024-03-01T00:00:00+01:00,1,2\n2024-03-01T00:15:00+01:00,3,4\n";
        let cols = ColumnMap {
            timestamp: "time".into(),
            load: "demand".into(),
            pv: "solar".into(),
            ..ColumnMap::default()
        };
        let s = read_csv(text.as_bytes(), &cols).unwrap();
        assert_eq!(s.pv(), &[2.0, 4.0]);
        assert!(s.price().is_none());
    }

    #[test]
    fn csv_round_trip() {
        let s = synth_profiles(2, 5).unwrap();
        let mut buf = Vec::new();
        write_csv_to(&mut buf, &s).unwrap();
        let back = read_csv(buf.as_slice(), &ColumnMap::default()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn price_scaling_endpoints_and_midpoint() {
        let s = scale_prices(&[10.0, 30.0, 20.0], PRICE_LO, PRICE_HI).unwrap();
        assert_eq!(s[0], 0.18);
        assert_eq!(s[1], 0.38);
        assert!((s[2] - 0.28).abs() < 1e-15);
        assert_eq!(scale_prices(&[4.0; 3], PRICE_LO, PRICE_HI).unwrap(), vec![0.28; 3]);
        assert!(scale_prices(&[], PRICE_LO, PRICE_HI).is_err());
    }

    #[test]
    fn price_scaling_preserves_ramps() {
        let raw: Vec<f64> = (0..11).map(|i| -5.0 + 2.0 * i as f64).collect();
        let s = scale_prices(&raw, PRICE_LO, PRICE_HI).unwrap();
        for w in s.windows(3) {
            assert!(((w[2] - w[1]) - (w[1] - w[0])).abs() < 1e-12);
        }
    }

    #[test]
    fn synth_is_seeded_and_in_band() {
        let a = synth_profiles(3, 11).unwrap();
        let b = synth_profiles(3, 11).unwrap();
        let c = synth_profiles(3, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.load(), c.load());
        assert!(a.price().unwrap().iter().all(|&k| (PRICE_LO..=PRICE_HI).contains(&k)));
        for (i, &p) in a.pv().iter().enumerate() {
            let hour = (i % STEPS_PER_DAY) as f64 / 4.0;
            if !(6.0..20.0).contains(&hour) {
                assert_eq!(p, 0.0, "pv at hour {hour}");
            }
        }
    }

    #[test]
    fn window_bounds_checked() {
        let s = synth_profiles(1, 0).unwrap();
        assert_eq!(s.window(90, 6).unwrap().len(), 6);
        assert!(s.window(90, 7).is_err());
    }
}

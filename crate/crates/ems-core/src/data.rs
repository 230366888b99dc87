//! Hourly microgrid time series: loading, synthesis and splitting.
//!
//! A dataset holds three aligned hourly series — solar generation (kW),
//! demand (kW) and grid price (currency per kWh) — starting at a midnight
//! timestamp. The on-disk format is CSV with the exact header
//! `timestamp,generation_kw,demand_kw,price` and ISO-8601 hourly timestamps.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{EmsError, Result};

pub const HOURS_PER_DAY: usize = 24;

/// Largest run of missing hours that CSV loading repairs by linear
/// interpolation; anything longer is an error.
pub const MAX_INTERPOLATED_GAP_HOURS: i64 = 3;

const CSV_HEADER: [&str; 4] = ["timestamp", "generation_kw", "demand_kw", "price"];
const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// One of the three tracked series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Generation,
    Demand,
    Price,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [Quantity::Generation, Quantity::Demand, Quantity::Price];
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Quantity::Generation => "generation",
            Quantity::Demand => "demand",
            Quantity::Price => "price",
        };
        f.write_str(s)
    }
}

impl FromStr for Quantity {
    type Err = EmsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generation" => Ok(Quantity::Generation),
            "demand" => Ok(Quantity::Demand),
            "price" => Ok(Quantity::Price),
            other => Err(EmsError::invalid(format!("unknown quantity '{other}'"))),
        }
    }
}

/// Aligned hourly series beginning at a midnight timestamp. Contiguity is an
/// invariant: the i-th sample is at `start + i` hours.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    start: NaiveDateTime,
    generation: Vec<f64>,
    demand: Vec<f64>,
    price: Vec<f64>,
}

/// Summary of repairs performed while loading a CSV file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Number of missing hours filled by linear interpolation.
    pub interpolated_hours: usize,
}

impl TimeSeriesDataset {
    pub fn new(
        start: NaiveDateTime,
        generation: Vec<f64>,
        demand: Vec<f64>,
        price: Vec<f64>,
    ) -> Result<Self> {
        if generation.len() != demand.len() || demand.len() != price.len() {
            return Err(EmsError::data(format!(
                "series lengths differ: generation {}, demand {}, price {}",
                generation.len(),
                demand.len(),
                price.len()
            )));
        }
        if generation.is_empty() {
            return Err(EmsError::data("dataset is empty"));
        }
        if start.hour() != 0 || start.minute() != 0 || start.second() != 0 {
            return Err(EmsError::data(format!(
                "dataset must start at midnight for day-aligned splits, got {start}"
            )));
        }
        for (name, series) in [
            ("generation", &generation),
            ("demand", &demand),
            ("price", &price),
        ] {
            if let Some(i) = series.iter().position(|v| !v.is_finite() || *v < 0.0) {
                return Err(EmsError::data(format!(
                    "{name} value {} at hour {} is negative or non-finite",
                    series[i], i
                )));
            }
        }
        Ok(TimeSeriesDataset {
            start,
            generation,
            demand,
            price,
        })
    }

    pub fn len(&self) -> usize {
        self.generation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generation.is_empty()
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn timestamp(&self, i: usize) -> NaiveDateTime {
        self.start + chrono::Duration::hours(i as i64)
    }

    pub fn generation(&self, i: usize) -> f64 {
        self.generation[i]
    }

    pub fn demand(&self, i: usize) -> f64 {
        self.demand[i]
    }

    pub fn price(&self, i: usize) -> f64 {
        self.price[i]
    }

    /// View over the whole dataset.
    pub fn full_view(&self) -> SeriesView<'_> {
        SeriesView {
            ds: self,
            offset: 0,
            len: self.len(),
        }
    }

    /// Chronological train/test split aligned to day boundaries: the train
    /// side gets `floor(len * fraction / 24) * 24` hours. Each side must keep
    /// at least [`MIN_SPLIT_HOURS`] hours.
    pub fn split(&self, train_fraction: f64) -> Result<(SeriesView<'_>, SeriesView<'_>)> {
        if !(0.0 < train_fraction && train_fraction < 1.0) {
            return Err(EmsError::invalid(format!(
                "train fraction must be in (0, 1), got {train_fraction}"
            )));
        }
        let train_hours =
            ((self.len() as f64 * train_fraction) / HOURS_PER_DAY as f64).floor() as usize
                * HOURS_PER_DAY;
        let test_hours = self.len() - train_hours;
        if train_hours < MIN_SPLIT_HOURS || test_hours < MIN_SPLIT_HOURS {
            return Err(EmsError::data(format!(
                "split at fraction {train_fraction} leaves train {train_hours} h / test {test_hours} h; \
                 both sides need at least {MIN_SPLIT_HOURS} h (one episode day, one history hour and a \
                 warm-up day)"
            )));
        }
        let train = SeriesView {
            ds: self,
            offset: 0,
            len: train_hours,
        };
        let test = SeriesView {
            ds: self,
            offset: train_hours,
            len: test_hours,
        };
        Ok((train, test))
    }

    // -------------------------------------------------------------- CSV I/O

    /// Loads a dataset, repairing gaps of up to
    /// [`MAX_INTERPOLATED_GAP_HOURS`] missing hours by linear interpolation.
    pub fn load_csv(path: &Path) -> Result<(Self, LoadReport)> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| EmsError::data(format!("cannot open {}: {e}", path.display())))?;
        {
            let header = reader
                .headers()
                .map_err(|e| EmsError::data(format!("cannot read header: {e}")))?;
            let got: Vec<&str> = header.iter().collect();
            if got != CSV_HEADER {
                return Err(EmsError::data(format!(
                    "expected header {:?}, got {:?}",
                    CSV_HEADER.join(","),
                    got.join(",")
                )));
            }
        }

        let mut timestamps: Vec<NaiveDateTime> = Vec::new();
        let mut generation = Vec::new();
        let mut demand = Vec::new();
        let mut price = Vec::new();
        let mut report = LoadReport::default();

        for record in reader.records() {
            let record = record.map_err(|e| EmsError::data(format!("malformed CSV: {e}")))?;
            let line = record
                .position()
                .map(|p| p.line().to_string())
                .unwrap_or_else(|| "?".to_string());
            if record.len() != 4 {
                return Err(EmsError::data(format!(
                    "line {line}: expected 4 fields, got {}",
                    record.len()
                )));
            }
            let ts = NaiveDateTime::parse_from_str(&record[0], TIMESTAMP_FORMAT).map_err(|e| {
                EmsError::data(format!("line {line}: bad timestamp '{}': {e}", &record[0]))
            })?;
            let parse = |field: usize, name: &str| -> Result<f64> {
                record[field].trim().parse::<f64>().map_err(|e| {
                    EmsError::data(format!(
                        "line {line}: bad {name} value '{}': {e}",
                        &record[field]
                    ))
                })
            };
            let g = parse(1, "generation_kw")?;
            let d = parse(2, "demand_kw")?;
            let p = parse(3, "price")?;

            if let Some(&prev) = timestamps.last() {
                let delta = ts - prev;
                if delta <= chrono::Duration::zero() {
                    return Err(EmsError::data(format!(
                        "line {line}: timestamp {ts} is not after previous {prev}"
                    )));
                }
                if delta.num_seconds() % 3600 != 0 {
                    return Err(EmsError::data(format!(
                        "line {line}: timestamp {ts} is not hour-aligned with previous {prev}"
                    )));
                }
                let missing = delta.num_hours() - 1;
                if missing > MAX_INTERPOLATED_GAP_HOURS {
                    return Err(EmsError::data(format!(
                        "line {line}: gap of {missing} missing hours before {ts} exceeds the \
                         {MAX_INTERPOLATED_GAP_HOURS}-hour interpolation limit"
                    )));
                }
                let (g0, d0, p0) = (
                    *generation.last().unwrap(),
                    *demand.last().unwrap(),
                    *price.last().unwrap(),
                );
                for j in 1..=missing {
                    let frac = j as f64 / (missing + 1) as f64;
                    timestamps.push(prev + chrono::Duration::hours(j));
                    generation.push(g0 + (g - g0) * frac);
                    demand.push(d0 + (d - d0) * frac);
                    price.push(p0 + (p - p0) * frac);
                }
                report.interpolated_hours += missing.max(0) as usize;
            }
            timestamps.push(ts);
            generation.push(g);
            demand.push(d);
            price.push(p);
        }

        if timestamps.is_empty() {
            return Err(EmsError::data(format!(
                "{} contains no data rows",
                path.display()
            )));
        }
        let ds = TimeSeriesDataset::new(timestamps[0], generation, demand, price)?;
        Ok((ds, report))
    }

    /// Writes the dataset in the canonical CSV format. Values use the
    /// shortest round-trippable decimal form, so writing is deterministic.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)
            .map_err(|e| EmsError::data(format!("cannot create {}: {e}", path.display())))?;
        writer
            .write_record(CSV_HEADER)
            .map_err(|e| EmsError::data(format!("write failed: {e}")))?;
        for i in 0..self.len() {
            writer
                .write_record(&[
                    self.timestamp(i).format(TIMESTAMP_FORMAT).to_string(),
                    format!("{}", self.generation[i]),
                    format!("{}", self.demand[i]),
                    format!("{}", self.price[i]),
                ])
                .map_err(|e| EmsError::data(format!("write failed: {e}")))?;
        }
        writer
            .flush()
            .map_err(|e| EmsError::data(format!("flush failed: {e}")))?;
        Ok(())
    }
}

/// Minimum hours a split side must keep: one episode day plus one hour of
/// history plus one warm-up day for forecaster windows.
pub const MIN_SPLIT_HOURS: usize = 2 * HOURS_PER_DAY + 1;

/// Borrowed, cheaply copyable window into a dataset.
#[derive(Debug, Clone, Copy)]
pub struct SeriesView<'a> {
    ds: &'a TimeSeriesDataset,
    offset: usize,
    len: usize,
}

impl<'a> SeriesView<'a> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn generation(&self, i: usize) -> f64 {
        debug_assert!(i < self.len);
        self.ds.generation(self.offset + i)
    }

    pub fn demand(&self, i: usize) -> f64 {
        debug_assert!(i < self.len);
        self.ds.demand(self.offset + i)
    }

    pub fn price(&self, i: usize) -> f64 {
        debug_assert!(i < self.len);
        self.ds.price(self.offset + i)
    }

    pub fn value(&self, q: Quantity, i: usize) -> f64 {
        match q {
            Quantity::Generation => self.generation(i),
            Quantity::Demand => self.demand(i),
            Quantity::Price => self.price(i),
        }
    }

    /// Copies one series out of the view.
    pub fn series(&self, q: Quantity) -> Vec<f64> {
        (0..self.len).map(|i| self.value(q, i)).collect()
    }
}

// ------------------------------------------------------------------ synthesis

/// Configuration of the synthetic benchmark generator.
///
/// The deterministic skeleton is periodic with a 24-hour period: demand has
/// an evening peak and a smaller midday harmonic, generation follows a solar
/// bell between 06:00 and 18:00, and price is a two-tier tariff with an
/// evening peak window. Independent Gaussian noise (clamped to physical
/// ranges) is layered on top; zero noise standard deviations give an exactly
/// periodic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub days: usize,
    pub demand_base_kw: f64,
    pub demand_evening_amplitude_kw: f64,
    pub demand_midday_amplitude_kw: f64,
    pub demand_noise_std_kw: f64,
    pub solar_peak_kw: f64,
    pub solar_noise_std_kw: f64,
    pub price_offpeak: f64,
    pub price_peak: f64,
    /// Peak tariff applies to hours `peak_start_hour <= h < peak_end_hour`.
    pub peak_start_hour: u32,
    pub peak_end_hour: u32,
    pub price_noise_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            days: 60,
            demand_base_kw: 300.0,
            demand_evening_amplitude_kw: 40.0,
            demand_midday_amplitude_kw: 15.0,
            demand_noise_std_kw: 12.0,
            solar_peak_kw: 250.0,
            solar_noise_std_kw: 20.0,
            price_offpeak: 0.03,
            price_peak: 0.09,
            peak_start_hour: 17,
            peak_end_hour: 22,
            price_noise_std: 0.004,
        }
    }
}

/// Price can never fall below this floor, whatever the noise draws.
pub const PRICE_FLOOR: f64 = 0.005;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.days < 5 {
            return Err(EmsError::invalid(format!(
                "synthetic dataset of {} days is too short: at least 5 days are needed so a \
                 train/test split can keep an episode day plus warm-up on each side",
                self.days
            )));
        }
        for (name, v) in [
            ("demand_base_kw", self.demand_base_kw),
            ("solar_peak_kw", self.solar_peak_kw),
            ("price_offpeak", self.price_offpeak),
            ("price_peak", self.price_peak),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(EmsError::invalid(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("demand_evening_amplitude_kw", self.demand_evening_amplitude_kw),
            ("demand_midday_amplitude_kw", self.demand_midday_amplitude_kw),
            ("demand_noise_std_kw", self.demand_noise_std_kw),
            ("solar_noise_std_kw", self.solar_noise_std_kw),
            ("price_noise_std", self.price_noise_std),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(EmsError::invalid(format!(
                    "{name} must be non-negative and finite, got {v}"
                )));
            }
        }
        if self.peak_start_hour >= self.peak_end_hour || self.peak_end_hour > 24 {
            return Err(EmsError::invalid(format!(
                "peak window [{}, {}) must satisfy start < end <= 24",
                self.peak_start_hour, self.peak_end_hour
            )));
        }
        Ok(())
    }

    /// Deterministic demand at hour-of-day `h` before noise.
    pub fn demand_shape(&self, h: f64) -> f64 {
        use std::f64::consts::PI;
        self.demand_base_kw
            + self.demand_evening_amplitude_kw * ((2.0 * PI * (h - 18.0)) / 24.0).cos()
            + self.demand_midday_amplitude_kw * ((2.0 * PI * (h - 9.0)) / 12.0).cos()
    }

    /// Deterministic solar generation at hour-of-day `h` before noise
    /// (exactly zero outside daylight).
    pub fn solar_shape(&self, h: f64) -> f64 {
        use std::f64::consts::PI;
        if h > 6.0 && h < 18.0 {
            self.solar_peak_kw * ((PI * (h - 6.0)) / 12.0).sin()
        } else {
            0.0
        }
    }

    /// Deterministic tariff at hour-of-day `h` before noise.
    pub fn price_shape(&self, h: u32) -> f64 {
        if h >= self.peak_start_hour && h < self.peak_end_hour {
            self.price_peak
        } else {
            self.price_offpeak
        }
    }
}

/// First timestamp of every synthetic dataset.
pub fn synth_start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2020, 1, 1)
        .expect("valid date")
        .and_hms_opt(0, 0, 0)
        .expect("valid time")
}

/// Generates a synthetic dataset. Deterministic: the same config and seed
/// produce a bit-identical dataset.
pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<TimeSeriesDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |std: f64| Normal::new(0.0, std).expect("validated std");
    let demand_noise = normal(cfg.demand_noise_std_kw);
    let solar_noise = normal(cfg.solar_noise_std_kw);
    let price_noise = normal(cfg.price_noise_std);

    let n = cfg.days * HOURS_PER_DAY;
    let mut generation = Vec::with_capacity(n);
    let mut demand = Vec::with_capacity(n);
    let mut price = Vec::with_capacity(n);
    for i in 0..n {
        let h = (i % HOURS_PER_DAY) as u32;
        let hf = h as f64;

        let d = (cfg.demand_shape(hf) + demand_noise.sample(&mut rng)).max(0.0);
        demand.push(d);

        let solar_det = cfg.solar_shape(hf);
        // Night hours are exactly zero; noise only perturbs daylight output.
        let g = if solar_det > 0.0 {
            (solar_det + solar_noise.sample(&mut rng)).max(0.0)
        } else {
            0.0
        };
        generation.push(g);

        let p = (cfg.price_shape(h) + price_noise.sample(&mut rng)).max(PRICE_FLOOR);
        price.push(p);
    }
    TimeSeriesDataset::new(synth_start(), generation, demand, price)
}

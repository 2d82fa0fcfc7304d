//! Synthetic market generator: geometric random walks with an optional planted
//! volume/range motif that precedes an open-to-open jump.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::market_data::{Bar, StockSeries, Universe, SECTOR_NAMES};
use crate::models::derive_seed;

pub const OHLCV_FILE: &str = "ohlcv.csv";
pub const SECTORS_FILE: &str = "sectors.csv";
pub const EVENTS_FILE: &str = "events.csv";

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    MarketData(#[from] crate::market_data::MarketDataError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_stocks: usize,
    pub n_days: usize,
    pub start_date: NaiveDate,
    /// Standard deviation of daily log returns of the open.
    pub daily_vol: f64,
    /// Mean daily log return.
    pub drift: f64,
    pub base_volume: f64,
    /// Chance that a motif ends on a given stock-day (motifs never overlap).
    pub motif_rate: f64,
    /// Days covered by the motif, ending at the anchor day.
    pub motif_len: usize,
    pub volume_mult: f64,
    pub range_mult: f64,
    /// Chance that a motif is followed by the jump.
    pub jump_prob: f64,
    /// Open-to-open return from anchor+1 to anchor+2 when the jump fires.
    pub jump_size: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_stocks: 30,
            n_days: 900,
            start_date: NaiveDate::from_ymd_opt(2015, 1, 5).unwrap(),
            daily_vol: 0.01,
            drift: 0.0,
            base_volume: 5_000_000.0,
            motif_rate: 0.1,
            motif_len: 3,
            volume_mult: 4.0,
            range_mult: 3.0,
            jump_prob: 0.8,
            jump_size: 0.05,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.n_stocks == 0 {
            return bad("n_stocks must be positive");
        }
        if self.n_days < 3 {
            return bad("n_days must be at least 3");
        }
        if !(self.daily_vol >= 0.0 && self.daily_vol.is_finite()) || !self.drift.is_finite() {
            return bad("daily_vol must be non-negative and drift finite");
        }
        if !(self.base_volume >= 1.0 && self.base_volume.is_finite()) {
            return bad("base_volume must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.motif_rate) || !(0.0..=1.0).contains(&self.jump_prob) {
            return bad("motif_rate and jump_prob must lie in [0, 1]");
        }
        if self.motif_len == 0 || self.motif_len >= self.n_days {
            return bad("motif_len must be in [1, n_days)");
        }
        if !(self.volume_mult >= 1.0) || !(self.range_mult >= 1.0) {
            return bad("volume_mult and range_mult must be at least 1");
        }
        if !(self.jump_size > -1.0 && self.jump_size.is_finite()) {
            return bad("jump_size must exceed -1");
        }
        Ok(())
    }
}

/// One planted motif.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEvent {
    pub ticker: String,
    /// Last day of the motif; the jump, if any, runs from the next open to the one after.
    pub anchor_date: NaiveDate,
    pub anchor_day: usize,
    pub jumped: bool,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub universe: Universe,
    pub events: Vec<PlantedEvent>,
}

/// Weekdays starting at `start`.
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(n)
        .collect()
}

fn generate_stock(spec: &SynthSpec, i: usize, calendar: &[NaiveDate], seed: u64) -> (StockSeries, Vec<PlantedEvent>) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
    let ticker = format!("S{i:03}");
    let step = Normal::new(spec.drift, spec.daily_vol).unwrap();
    let noise = Normal::new(0.0, 1.0).unwrap();
    let n = spec.n_days;

    // Motif placement: anchors need room for the jump two days later.
    let mut motif = vec![false; n];
    let mut events = Vec::new();
    let mut next_free = spec.motif_len - 1;
    for t in spec.motif_len - 1..n - 2 {
        let fire = rng.gen_bool(spec.motif_rate);
        if fire && t >= next_free {
            for m in motif.iter_mut().take(t + 1).skip(t + 1 - spec.motif_len) {
                *m = true;
            }
            events.push(PlantedEvent {
                ticker: ticker.clone(),
                anchor_date: calendar[t],
                anchor_day: t,
                jumped: rng.gen_bool(spec.jump_prob),
            });
            next_free = t + 2 + spec.motif_len;
        }
    }

    let mut opens = Vec::with_capacity(n);
    opens.push(rng.gen_range(20.0..100.0));
    let jump_at: Vec<usize> = events.iter().filter(|e| e.jumped).map(|e| e.anchor_day + 2).collect();
    for t in 1..n {
        let z = step.sample(&mut rng);
        let prev: f64 = opens[t - 1];
        let next = if jump_at.contains(&t) { prev * (1.0 + spec.jump_size) } else { prev * z.exp() };
        opens.push(next);
    }

    let volume_scale = spec.base_volume * rng.gen_range(0.5..2.0);
    let bars = (0..n)
        .map(|t| {
            let open = opens[t];
            let close = open * (0.5 * spec.daily_vol * noise.sample(&mut rng)).exp();
            let wiggle = if motif[t] { spec.range_mult } else { 1.0 };
            let up = 1.0 + wiggle * 0.5 * spec.daily_vol * noise.sample(&mut rng).abs();
            let down = 1.0 - (wiggle * 0.5 * spec.daily_vol * noise.sample(&mut rng).abs()).min(0.9);
            let vmult = if motif[t] { spec.volume_mult } else { 1.0 };
            let volume = (volume_scale * vmult * (0.2 * noise.sample(&mut rng)).exp()).round().max(1.0) as u64;
            Bar {
                date: calendar[t],
                open,
                high: open.max(close) * up,
                low: open.min(close) * down,
                close,
                volume,
            }
        })
        .collect();
    let series = StockSeries {
        ticker,
        sector_id: (i % SECTOR_NAMES.len()) as u8,
        bars,
        death_day: None,
    };
    (series, events)
}

pub fn generate(spec: &SynthSpec, seed: u64) -> Result<SynthData> {
    spec.validate()?;
    let calendar = business_days(spec.start_date, spec.n_days);
    let (stocks, events): (Vec<_>, Vec<_>) = (0..spec.n_stocks).map(|i| generate_stock(spec, i, &calendar, seed)).unzip();
    Ok(SynthData {
        universe: Universe::new(calendar, stocks)?,
        events: events.into_iter().flatten().collect(),
    })
}

pub fn write_ohlcv<W: Write>(u: &Universe, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["ticker", "date", "open", "high", "low", "close", "volume"])?;
    for s in &u.stocks {
        for b in &s.bars {
            wtr.write_record([
                s.ticker.clone(),
                b.date.to_string(),
                b.open.to_string(),
                b.high.to_string(),
                b.low.to_string(),
                b.close.to_string(),
                b.volume.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_sectors<W: Write>(u: &Universe, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["ticker", "sector"])?;
    for s in &u.stocks {
        let name = SECTOR_NAMES.get(s.sector_id as usize).copied().unwrap_or("");
        wtr.write_record([s.ticker.as_str(), name])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_events<W: Write>(events: &[PlantedEvent], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["ticker", "anchor_date", "jumped"])?;
    for e in events {
        wtr.write_record([e.ticker.clone(), e.anchor_date.to_string(), e.jumped.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes `ohlcv.csv`, `sectors.csv` and `events.csv` into `dir`.
pub fn write_all(data: &SynthData, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_ohlcv(&data.universe, BufWriter::new(File::create(dir.join(OHLCV_FILE))?))?;
    write_sectors(&data.universe, BufWriter::new(File::create(dir.join(SECTORS_FILE))?))?;
    write_events(&data.events, BufWriter::new(File::create(dir.join(EVENTS_FILE))?))?;
    Ok(())
}

/// Reads `events.csv` back.
pub fn read_events(path: &Path) -> Result<Vec<(String, NaiveDate, bool)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize::<(String, NaiveDate, bool)>()
        .map(|r| r.map_err(SynthError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{assign_label, daily_return, Label};
    use crate::market_data::load_ohlcv;

    fn small() -> SynthSpec {
        SynthSpec {
            n_stocks: 4,
            n_days: 120,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        write_all(&generate(&small(), 9).unwrap(), &a).unwrap();
        write_all(&generate(&small(), 9).unwrap(), &b).unwrap();
        for f in [OHLCV_FILE, SECTORS_FILE, EVENTS_FILE] {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        }
        let c = generate(&small(), 10).unwrap();
        assert_ne!(c.universe, generate(&small(), 9).unwrap().universe);
    }

    #[test]
    fn files_load_back_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate(&small(), 3).unwrap();
        write_all(&data, dir.path()).unwrap();
        let u = load_ohlcv(&dir.path().join(OHLCV_FILE), &dir.path().join(SECTORS_FILE)).unwrap();
        assert_eq!(u.calendar, data.universe.calendar);
        for (x, y) in u.stocks.iter().zip(&data.universe.stocks) {
            assert_eq!(x.ticker, y.ticker);
            assert_eq!(x.sector_id, y.sector_id);
            assert_eq!(x.bars, y.bars);
        }
        let ev = read_events(&dir.path().join(EVENTS_FILE)).unwrap();
        assert_eq!(ev.len(), data.events.len());
    }

    #[test]
    fn bars_are_consistent_and_weekdays_only() {
        let data = generate(&SynthSpec { motif_rate: 0.3, ..small() }, 1).unwrap();
        for s in &data.universe.stocks {
            for b in &s.bars {
                assert!(b.low > 0.0 && b.low <= b.open.min(b.close) && b.high >= b.open.max(b.close));
                assert!(!matches!(b.date.weekday(), Weekday::Sat | Weekday::Sun));
            }
        }
    }

    #[test]
    fn planted_jumps_fire_at_configured_rate() {
        let spec = SynthSpec {
            n_stocks: 320,
            n_days: 2000,
            motif_rate: 0.5,
            ..Default::default()
        };
        let data = generate(&spec, 11).unwrap();
        assert!(data.events.len() > 100_000, "{}", data.events.len());
        let rate = data.events.iter().filter(|e| e.jumped).count() as f64 / data.events.len() as f64;
        assert!((rate - 0.8).abs() < 0.01, "{rate}");
        let idx: std::collections::HashMap<&str, usize> =
            data.universe.stocks.iter().enumerate().map(|(i, s)| (s.ticker.as_str(), i)).collect();
        for e in data.events.iter().take(2000) {
            let s = &data.universe.stocks[idx[e.ticker.as_str()]];
            let r = daily_return(s, e.anchor_day).unwrap();
            if e.jumped {
                assert!((r - 0.05).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn no_signal_labels_are_near_symmetric() {
        let spec = SynthSpec {
            n_stocks: 50,
            n_days: 2000,
            motif_rate: 0.0,
            ..Default::default()
        };
        let data = generate(&spec, 5).unwrap();
        assert!(data.events.is_empty());
        let mut counts = [0usize; 5];
        for s in &data.universe.stocks {
            for t in 0..spec.n_days - 2 {
                counts[assign_label(daily_return(s, t).unwrap()).unwrap().index()] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        let f = counts.map(|c| c as f64 / total as f64);
        assert!((f[Label::Sell.index()] - f[Label::Buy.index()]).abs() < 0.01, "{f:?}");
        assert!((f[Label::StrongSell.index()] - f[Label::StrongBuy.index()]).abs() < 0.005, "{f:?}");
    }

    #[test]
    fn invalid_specs_rejected() {
        for s in [
            SynthSpec { n_stocks: 0, ..small() },
            SynthSpec { jump_prob: 1.5, ..small() },
            SynthSpec { jump_size: -1.0, ..small() },
            SynthSpec { motif_len: 0, ..small() },
            SynthSpec { daily_vol: -0.1, ..small() },
        ] {
            assert!(generate(&s, 0).is_err());
        }
    }
}

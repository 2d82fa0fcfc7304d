//! Loading, validating and filtering daily OHLCV panels.
//!
//! A [`Universe`] is rectangular: every stock has a bar on every calendar day.
//! All downstream modules index stocks and days positionally and rely on that.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// Default minimum average daily dollar volume.
pub const DEFAULT_DOLLAR_VOLUME_THRESHOLD: f64 = 10_000_000.0;
/// Default open price below which a stock is considered dead.
pub const DEFAULT_PRICE_FLOOR: f64 = 0.1;
/// Number of sector slots, including the "no sector" slot.
pub const SECTOR_COUNT: usize = 12;
/// Sector id used for tickers without sector information.
pub const NO_SECTOR: u8 = 11;

/// Canonical sector names, indexed by sector id.
pub const SECTOR_NAMES: [&str; 11] = [
    "Basic Materials",
    "Communication Services",
    "Consumer Cyclical",
    "Consumer Defensive",
    "Energy",
    "Financial Services",
    "Healthcare",
    "Industrials",
    "Real Estate",
    "Technology",
    "Utilities",
];

#[derive(Debug, thiserror::Error)]
pub enum MarketDataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        reason: String,
    },
    #[error("{path}: unexpected header {found:?}, expected {expected:?}")]
    BadHeader {
        path: PathBuf,
        found: Vec<String>,
        expected: Vec<String>,
    },
    #[error("duplicate bar for ticker {ticker} on {date}")]
    DuplicateBar { ticker: String, date: NaiveDate },
    #[error("ticker {ticker} has a non-positive price on {date} before it dies")]
    NonPositivePrice { ticker: String, date: NaiveDate },
    #[error("ticker {ticker} is missing calendar day {date}")]
    MissingDay { ticker: String, date: NaiveDate },
    #[error("no stocks left in the universe: {0}")]
    EmptyUniverse(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, MarketDataError>;

/// One trading day for one security.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: u64,
}

impl Bar {
    pub fn dollar_volume(&self) -> f64 {
        self.open * self.volume as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockSeries {
    pub ticker: String,
    pub sector_id: u8,
    pub bars: Vec<Bar>,
    /// Index into the universe calendar of the first day with open below the price floor.
    pub death_day: Option<usize>,
}

impl StockSeries {
    pub fn opens(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.open).collect()
    }

    pub fn death_date(&self) -> Option<NaiveDate> {
        self.death_day.map(|d| self.bars[d].date)
    }

    /// Whether the stock is alive on calendar day `day`.
    pub fn is_alive(&self, day: usize) -> bool {
        self.death_day.map_or(true, |d| day < d)
    }

    pub fn mean_dollar_volume(&self) -> f64 {
        if self.bars.is_empty() {
            return 0.0;
        }
        self.bars.iter().map(Bar::dollar_volume).sum::<f64>() / self.bars.len() as f64
    }
}

/// Thresholds that have been applied to a universe.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UniverseMeta {
    pub dollar_volume_threshold: Option<f64>,
    pub price_floor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Universe {
    pub calendar: Vec<NaiveDate>,
    pub stocks: Vec<StockSeries>,
    pub meta: UniverseMeta,
}

impl Universe {
    /// Builds a universe from already aligned series, checking rectangularity.
    pub fn new(calendar: Vec<NaiveDate>, stocks: Vec<StockSeries>) -> Result<Self> {
        let u = Universe {
            calendar,
            stocks,
            meta: UniverseMeta::default(),
        };
        u.check_rectangular()?;
        Ok(u)
    }

    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn n_stocks(&self) -> usize {
        self.stocks.len()
    }

    pub fn tickers(&self) -> Vec<String> {
        self.stocks.iter().map(|s| s.ticker.clone()).collect()
    }

    pub fn check_rectangular(&self) -> Result<()> {
        for s in &self.stocks {
            if s.bars.len() != self.calendar.len() {
                let missing = self
                    .calendar
                    .iter()
                    .find(|d| s.bars.binary_search_by_key(*d, |b| b.date).is_err())
                    .copied()
                    .unwrap_or(self.calendar[0]);
                return Err(MarketDataError::MissingDay {
                    ticker: s.ticker.clone(),
                    date: missing,
                });
            }
            for (bar, day) in s.bars.iter().zip(&self.calendar) {
                if bar.date != *day {
                    return Err(MarketDataError::MissingDay {
                        ticker: s.ticker.clone(),
                        date: *day,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Maps a sector name to its id; unknown or empty names map to [`NO_SECTOR`].
pub fn sector_id(name: &str) -> u8 {
    let key = name.trim().to_ascii_lowercase();
    let canonical = match key.as_str() {
        "materials" => "basic materials",
        "telecommunication services" | "communication" => "communication services",
        "consumer discretionary" => "consumer cyclical",
        "consumer staples" => "consumer defensive",
        "financials" | "financial" => "financial services",
        "health care" => "healthcare",
        "information technology" => "technology",
        other => other,
    };
    SECTOR_NAMES
        .iter()
        .position(|s| s.to_ascii_lowercase() == canonical)
        .map_or(NO_SECTOR, |i| i as u8)
}

/// Options for [`load_ohlcv_with`].
#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    /// Floor used to decide which days count as "before death" for price validation.
    pub price_floor: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            start: None,
            end: None,
            price_floor: DEFAULT_PRICE_FLOOR,
        }
    }
}

#[derive(Debug, Deserialize)]
struct OhlcvRow {
    ticker: String,
    date: String,
    open: f64,
    high: f64,
    low: f64,
    close: f64,
    volume: u64,
}

#[derive(Debug, Deserialize)]
struct SectorRow {
    ticker: String,
    sector: String,
}

const OHLCV_HEADER: [&str; 7] = ["ticker", "date", "open", "high", "low", "close", "volume"];
const SECTOR_HEADER: [&str; 2] = ["ticker", "sector"];

fn open_csv(path: &Path, expected: &[&str]) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|source| MarketDataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| MarketDataError::MalformedRow {
            path: path.to_path_buf(),
            line: 1,
            reason: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if header != expected {
        return Err(MarketDataError::BadHeader {
            path: path.to_path_buf(),
            found: header,
            expected: expected.iter().map(|s| s.to_string()).collect(),
        });
    }
    Ok(rdr)
}

fn row_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// Reads the sector CSV into a ticker → sector id map.
pub fn load_sectors(path: &Path) -> Result<HashMap<String, u8>> {
    let mut rdr = open_csv(path, &SECTOR_HEADER)?;
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| MarketDataError::MalformedRow {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let row: SectorRow = rec.deserialize(None).map_err(|e| MarketDataError::MalformedRow {
            path: path.to_path_buf(),
            line: row_line(&rec),
            reason: e.to_string(),
        })?;
        out.insert(row.ticker, sector_id(&row.sector));
    }
    Ok(out)
}

pub fn load_ohlcv(path: &Path, sector_path: &Path) -> Result<Universe> {
    load_ohlcv_with(path, sector_path, &LoadOptions::default())
}

/// Loads OHLCV and sector CSVs into a rectangular [`Universe`].
///
/// Tickers whose history does not cover the full date range (first and last
/// date of the whole file, or of `opts.start`/`opts.end`) are dropped. The
/// calendar is the union of the remaining tickers' dates, and any remaining
/// ticker missing one of those days is an error.
pub fn load_ohlcv_with(path: &Path, sector_path: &Path, opts: &LoadOptions) -> Result<Universe> {
    let sectors = load_sectors(sector_path)?;
    let mut rdr = open_csv(path, &OHLCV_HEADER)?;
    let mut by_ticker: BTreeMap<String, BTreeMap<NaiveDate, Bar>> = BTreeMap::new();

    for rec in rdr.records() {
        let rec = rec.map_err(|e| MarketDataError::MalformedRow {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row_line(&rec);
        let malformed = |reason: String| MarketDataError::MalformedRow {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let row: OhlcvRow = rec.deserialize(None).map_err(|e| malformed(e.to_string()))?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d")
            .map_err(|e| malformed(format!("bad date {:?}: {e}", row.date)))?;
        let prices = [row.open, row.high, row.low, row.close];
        if prices.iter().any(|p| !p.is_finite()) {
            return Err(malformed("non-finite price".into()));
        }
        if row.high < row.open.max(row.close) || row.low > row.open.min(row.close) {
            return Err(malformed(format!(
                "inconsistent bar: low {} high {} open {} close {}",
                row.low, row.high, row.open, row.close
            )));
        }
        if opts.start.is_some_and(|s| date < s) || opts.end.is_some_and(|e| date > e) {
            continue;
        }
        let bar = Bar {
            date,
            open: row.open,
            high: row.high,
            low: row.low,
            close: row.close,
            volume: row.volume,
        };
        let bars = by_ticker.entry(row.ticker.clone()).or_default();
        if bars.insert(date, bar).is_some() {
            return Err(MarketDataError::DuplicateBar {
                ticker: row.ticker,
                date,
            });
        }
    }

    let first = by_ticker
        .values()
        .filter_map(|b| b.keys().next())
        .min()
        .copied();
    let last = by_ticker
        .values()
        .filter_map(|b| b.keys().next_back())
        .max()
        .copied();
    let (Some(first), Some(last)) = (first, last) else {
        return Err(MarketDataError::EmptyUniverse(format!(
            "{} contains no bars in range",
            path.display()
        )));
    };
    let range_start = opts.start.map_or(first, |s| s.max(first));
    let range_end = opts.end.map_or(last, |e| e.min(last));

    by_ticker.retain(|_, bars| {
        bars.keys().next() == Some(&range_start) && bars.keys().next_back() == Some(&range_end)
    });
    if by_ticker.is_empty() {
        return Err(MarketDataError::EmptyUniverse(
            "no ticker spans the full date range".into(),
        ));
    }

    let calendar: Vec<NaiveDate> = by_ticker
        .values()
        .flat_map(|b| b.keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut stocks = Vec::with_capacity(by_ticker.len());
    for (ticker, bars) in by_ticker {
        if bars.len() != calendar.len() {
            let missing = calendar.iter().find(|d| !bars.contains_key(d)).copied();
            return Err(MarketDataError::MissingDay {
                ticker,
                date: missing.unwrap_or(range_start),
            });
        }
        let bars: Vec<Bar> = bars.into_values().collect();
        let first_dead = bars
            .iter()
            .position(|b| b.open < opts.price_floor)
            .unwrap_or(bars.len());
        if let Some(bad) = bars[..first_dead]
            .iter()
            .find(|b| [b.open, b.high, b.low, b.close].iter().any(|&p| p <= 0.0))
        {
            return Err(MarketDataError::NonPositivePrice {
                ticker,
                date: bad.date,
            });
        }
        let sector_id = sectors.get(&ticker).copied().unwrap_or(NO_SECTOR);
        stocks.push(StockSeries {
            ticker,
            sector_id,
            bars,
            death_day: None,
        });
    }
    Universe::new(calendar, stocks)
}

/// Drops stocks whose mean daily `open × volume` is below `threshold`.
pub fn filter_by_dollar_volume(u: Universe, threshold: f64) -> Result<Universe> {
    if !(threshold > 0.0) {
        return Err(MarketDataError::InvalidParameter(format!(
            "dollar volume threshold must be positive, got {threshold}"
        )));
    }
    let Universe {
        calendar,
        stocks,
        mut meta,
    } = u;
    let kept: Vec<StockSeries> = stocks
        .into_iter()
        .filter(|s| s.mean_dollar_volume() >= threshold)
        .collect();
    if kept.is_empty() {
        return Err(MarketDataError::EmptyUniverse(format!(
            "every stock trades below {threshold} per day"
        )));
    }
    meta.dollar_volume_threshold = Some(threshold);
    Ok(Universe {
        calendar,
        stocks: kept,
        meta,
    })
}

/// Marks each stock's death day: the first day its open falls below `price_floor`.
/// Bars are left untouched; death is permanent even if the price recovers.
pub fn apply_dead_stock_rule(mut u: Universe, price_floor: f64) -> Result<Universe> {
    if !(price_floor > 0.0) {
        return Err(MarketDataError::InvalidParameter(format!(
            "price floor must be positive, got {price_floor}"
        )));
    }
    for s in &mut u.stocks {
        s.death_day = s.bars.iter().position(|b| b.open < price_floor);
    }
    u.meta.price_floor = Some(price_floor);
    Ok(u)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn day(i: usize) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(i as u64)
    }

    pub fn series_from_opens(ticker: &str, opens: &[f64], volume: u64) -> StockSeries {
        StockSeries {
            ticker: ticker.to_string(),
            sector_id: 0,
            bars: opens
                .iter()
                .enumerate()
                .map(|(i, &o)| Bar {
                    date: day(i),
                    open: o,
                    high: o * 1.01,
                    low: o * 0.99,
                    close: o,
                    volume,
                })
                .collect(),
            death_day: None,
        }
    }

    pub fn universe_from_opens(series: &[(&str, Vec<f64>, u64)]) -> Universe {
        let n = series[0].1.len();
        Universe::new(
            (0..n).map(day).collect(),
            series
                .iter()
                .map(|(t, o, v)| series_from_opens(t, o, *v))
                .collect(),
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        p
    }

    fn ohlcv(tickers: &[&str], days: usize, skip: Option<(&str, usize)>) -> String {
        let mut s = String::from("ticker,date,open,high,low,close,volume\n");
        for t in tickers {
            for d in 0..days {
                if skip == Some((t, d)) {
                    continue;
                }
                s.push_str(&format!("{t},{},10.0,10.5,9.5,10.2,1000\n", day(d)));
            }
        }
        s
    }

    #[test]
    fn loads_complete_panel() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "o.csv", &ohlcv(&["AAA", "BBB"], 5, None));
        let s = write(dir.path(), "s.csv", "ticker,sector\nAAA,Technology\nBBB,Energy\n");
        let u = load_ohlcv(&p, &s).unwrap();
        assert_eq!(u.n_days(), 5);
        assert_eq!(u.n_stocks(), 2);
        assert_eq!(u.stocks[0].sector_id, 9);
        assert_eq!(u.stocks[1].sector_id, 4);
    }

    #[test]
    fn missing_interior_day_names_ticker_and_date() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "o.csv", &ohlcv(&["AAA", "BBB"], 5, Some(("BBB", 2))));
        let s = write(dir.path(), "s.csv", "ticker,sector\n");
        match load_ohlcv(&p, &s) {
            Err(MarketDataError::MissingDay { ticker, date }) => {
                assert_eq!(ticker, "BBB");
                assert_eq!(date, day(2));
            }
            other => panic!("expected MissingDay, got {other:?}"),
        }
    }

    #[test]
    fn short_history_ticker_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "o.csv", &ohlcv(&["AAA", "BBB"], 5, Some(("BBB", 0))));
        let s = write(dir.path(), "s.csv", "ticker,sector\n");
        let u = load_ohlcv(&p, &s).unwrap();
        assert_eq!(u.tickers(), vec!["AAA"]);
    }

    #[test]
    fn unknown_sector_maps_to_reserved_slot() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "o.csv", &ohlcv(&["XYZ"], 3, None));
        let s = write(dir.path(), "s.csv", "ticker,sector\nABC,Utilities\n");
        let u = load_ohlcv(&p, &s).unwrap();
        assert_eq!(u.stocks[0].sector_id, NO_SECTOR);
        assert_eq!(sector_id("ETF"), NO_SECTOR);
        assert_eq!(sector_id(" health care "), 6);
    }

    #[test]
    fn duplicate_and_malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "s.csv", "ticker,sector\n");
        let mut body = ohlcv(&["AAA"], 2, None);
        body.push_str(&format!("AAA,{},10,11,9,10,5\n", day(1)));
        let p = write(dir.path(), "dup.csv", &body);
        assert!(matches!(
            load_ohlcv(&p, &s),
            Err(MarketDataError::DuplicateBar { .. })
        ));

        let p = write(
            dir.path(),
            "bad.csv",
            "ticker,date,open,high,low,close,volume\nAAA,2020-01-01,10,11,9,10,5\nAAA,2020-01-02,ten,11,9,10,5\n",
        );
        match load_ohlcv(&p, &s) {
            Err(MarketDataError::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected MalformedRow, got {other:?}"),
        }

        let p = write(dir.path(), "hdr.csv", "ticker,date,open\n");
        assert!(matches!(
            load_ohlcv(&p, &s),
            Err(MarketDataError::BadHeader { .. })
        ));
    }

    #[test]
    fn non_positive_price_before_death_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "s.csv", "ticker,sector\n");
        let p = write(
            dir.path(),
            "o.csv",
            "ticker,date,open,high,low,close,volume\nAAA,2020-01-01,10,11,0,10,5\nAAA,2020-01-02,10,11,9,10,5\n",
        );
        assert!(matches!(
            load_ohlcv(&p, &s),
            Err(MarketDataError::NonPositivePrice { .. })
        ));
        // After death the feed may carry junk.
        let p = write(
            dir.path(),
            "o2.csv",
            "ticker,date,open,high,low,close,volume\nAAA,2020-01-01,10,11,9,10,5\nAAA,2020-01-02,0.05,0.05,0,0.05,5\n",
        );
        assert!(load_ohlcv(&p, &s).is_ok());
    }

    #[test]
    fn dollar_volume_filter() {
        let u = universe_from_opens(&[
            ("HI", vec![10.0; 4], 2_000_000),
            ("LO", vec![10.0; 4], 500_000),
        ]);
        let f = filter_by_dollar_volume(u.clone(), 1e7).unwrap();
        assert_eq!(f.tickers(), vec!["HI"]);
        assert_eq!(f.calendar, u.calendar);
        assert_eq!(f.meta.dollar_volume_threshold, Some(1e7));
        assert!(filter_by_dollar_volume(u.clone(), 0.0).is_err());
        assert!(matches!(
            filter_by_dollar_volume(u, 1e12),
            Err(MarketDataError::EmptyUniverse(_))
        ));
    }

    #[test]
    fn dead_stock_rule() {
        let u = universe_from_opens(&[
            ("A", vec![5.0, 0.05, 0.04], 1),
            ("B", vec![5.0, 5.0, 5.0], 1),
            ("C", vec![0.05, 5.0, 5.0], 1),
        ]);
        let before = u.clone();
        let d = apply_dead_stock_rule(u, DEFAULT_PRICE_FLOOR).unwrap();
        assert_eq!(d.stocks[0].death_day, Some(1));
        assert_eq!(d.stocks[1].death_day, None);
        assert_eq!(d.stocks[2].death_day, Some(0));
        for (a, b) in d.stocks.iter().zip(&before.stocks) {
            assert_eq!(a.bars, b.bars);
        }
        assert!(!d.stocks[0].is_alive(1));
        assert!(d.stocks[0].is_alive(0));
    }

    proptest::proptest! {
        #[test]
        fn dollar_volume_filter_is_idempotent(vols in proptest::collection::vec(1u64..5_000_000, 1..8), th in 1e6f64..3e7) {
            let series: Vec<(String, Vec<f64>, u64)> = vols.iter().enumerate()
                .map(|(i, v)| (format!("T{i}"), vec![10.0; 3], *v)).collect();
            let refs: Vec<(&str, Vec<f64>, u64)> = series.iter().map(|(t, o, v)| (t.as_str(), o.clone(), *v)).collect();
            let u = universe_from_opens(&refs);
            if let Ok(once) = filter_by_dollar_volume(u, th) {
                let twice = filter_by_dollar_volume(once.clone(), th).unwrap();
                proptest::prop_assert_eq!(&once, &twice);
                once.check_rectangular().unwrap();
            }
        }

        #[test]
        fn death_day_is_first_violation(opens in proptest::collection::vec(0.01f64..1.0, 1..30), floor in 0.05f64..0.5) {
            let u = universe_from_opens(&[("A", opens.clone(), 1)]);
            let d = apply_dead_stock_rule(u, floor).unwrap();
            let mut expected = None;
            for (i, o) in opens.iter().enumerate() {
                if *o < floor { expected = Some(i); break; }
            }
            proptest::prop_assert_eq!(d.stocks[0].death_day, expected);
        }
    }
}

//! Daily-rebalanced portfolio simulation from per-day rankings and open-to-open returns.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub const DEFAULT_K: usize = 10;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BacktestError {
    #[error("date misalignment at day {index}: ranking {ranking}, returns {returns}")]
    DateMismatch { index: usize, ranking: NaiveDate, returns: NaiveDate },
    #[error("{rankings} ranking days but {returns} return days")]
    LengthMismatch { rankings: usize, returns: usize },
    #[error("no return for {ticker} on {date}")]
    MissingReturn { ticker: String, date: NaiveDate },
    #[error("non-finite score for {0}")]
    NonFiniteScore(String),
    #[error("non-finite or ≤ −100% return for {ticker} on {date}")]
    BadReturn { ticker: String, date: NaiveDate },
    #[error("k = {k} but only {n} ranked stocks on {date}")]
    InvalidK { k: usize, n: usize, date: NaiveDate },
    #[error("no alive stocks on {0}")]
    EmptyMarket(NaiveDate),
    #[error("nothing to simulate")]
    Empty,
    #[error("unknown strategy '{0}'")]
    UnknownStrategy(String),
    #[error("ledger csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, BacktestError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Equal scores ordered by ascending ticker.
    TickerAscending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyRanking {
    pub date: NaiveDate,
    /// Descending by score.
    pub entries: Vec<(String, f64)>,
    pub tie_break: TieBreak,
}

impl DailyRanking {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self, k: usize) -> impl Iterator<Item = &str> {
        self.entries.iter().take(k).map(|(t, _)| t.as_str())
    }

    pub fn bottom(&self, k: usize) -> impl Iterator<Item = &str> {
        self.entries.iter().rev().take(k).map(|(t, _)| t.as_str())
    }
}

/// Sorts by descending score, ties by ticker.
pub fn rank(date: NaiveDate, scores: &[(String, f64)]) -> Result<DailyRanking> {
    if let Some((t, _)) = scores.iter().find(|(_, s)| !s.is_finite()) {
        return Err(BacktestError::NonFiniteScore(t.clone()));
    }
    let mut entries = scores.to_vec();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(DailyRanking {
        date,
        entries,
        tie_break: TieBreak::TickerAscending,
    })
}

pub type Holdings = BTreeMap<String, f64>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trades {
    pub sold: Vec<String>,
    pub held: Vec<String>,
    pub bought: Vec<String>,
}

impl Trades {
    fn between(old: &Holdings, new: &Holdings) -> Self {
        Trades {
            sold: old.keys().filter(|t| !new.contains_key(*t)).cloned().collect(),
            held: old.keys().filter(|t| new.contains_key(*t)).cloned().collect(),
            bought: new.keys().filter(|t| !old.contains_key(*t)).cloned().collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.sold.is_empty() && self.bought.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RebalanceMode {
    /// Retained names keep drifted weights; freed capital is split equally among newcomers.
    #[default]
    Drift,
    /// Every selected name is reset to 1/k each day.
    Reequalize,
}

fn equal_weights<'a>(names: impl Iterator<Item = &'a str>) -> Holdings {
    let names: Vec<&str> = names.collect();
    let w = 1.0 / names.len() as f64;
    names.into_iter().map(|t| (t.to_string(), w)).collect()
}

/// Moves `current` onto the target set. An empty `current` buys the target at equal weight.
pub fn rebalance_to(current: &Holdings, target: &BTreeSet<&str>, mode: RebalanceMode) -> (Trades, Holdings) {
    let new = if current.is_empty() || mode == RebalanceMode::Reequalize {
        equal_weights(target.iter().copied())
    } else {
        let mut h: Holdings = current
            .iter()
            .filter(|(t, _)| target.contains(t.as_str()))
            .map(|(t, w)| (t.clone(), *w))
            .collect();
        let freed = 1.0 - h.values().sum::<f64>();
        let newcomers: Vec<&str> = target.iter().copied().filter(|t| !current.contains_key(*t)).collect();
        for t in &newcomers {
            h.insert(t.to_string(), freed / newcomers.len() as f64);
        }
        let total: f64 = h.values().sum();
        h.values_mut().for_each(|w| *w /= total);
        h
    };
    (Trades::between(current, &new), new)
}

/// Sells holdings that left the top k, keeps the rest, buys the newcomers.
pub fn rebalance_topk(current: &Holdings, ranking: &DailyRanking, k: usize, mode: RebalanceMode) -> (Trades, Holdings) {
    let target: BTreeSet<&str> = ranking.top(k).collect();
    rebalance_to(current, &target, mode)
}

/// Realized open-to-open returns for one test day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayReturns {
    pub date: NaiveDate,
    pub returns: BTreeMap<String, f64>,
    /// Stocks eligible for the equal-weight market on this day.
    pub alive: BTreeSet<String>,
}

impl DayReturns {
    fn get(&self, ticker: &str) -> Result<f64> {
        let r = *self.returns.get(ticker).ok_or_else(|| BacktestError::MissingReturn {
            ticker: ticker.to_string(),
            date: self.date,
        })?;
        if !r.is_finite() || r <= -1.0 {
            return Err(BacktestError::BadReturn {
                ticker: ticker.to_string(),
                date: self.date,
            });
        }
        Ok(r)
    }

    fn portfolio_return(&self, h: &Holdings) -> Result<f64> {
        h.iter().map(|(t, w)| Ok(w * self.get(t)?)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "topk")]
    TopK,
    #[serde(rename = "bottomk")]
    BottomK,
    #[serde(rename = "top_decile")]
    TopDecile,
    #[serde(rename = "bottom_decile")]
    BottomDecile,
    #[serde(rename = "long_short_k")]
    LongShortK,
    #[serde(rename = "long_short_decile")]
    LongShortDecile,
    #[serde(rename = "market_equal_weight")]
    Market,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::TopK,
        Strategy::BottomK,
        Strategy::TopDecile,
        Strategy::BottomDecile,
        Strategy::LongShortK,
        Strategy::LongShortDecile,
        Strategy::Market,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::TopK => "topk",
            Strategy::BottomK => "bottomk",
            Strategy::TopDecile => "top_decile",
            Strategy::BottomDecile => "bottom_decile",
            Strategy::LongShortK => "long_short_k",
            Strategy::LongShortDecile => "long_short_decile",
            Strategy::Market => "market_equal_weight",
        }
    }
}

impl FromStr for Strategy {
    type Err = BacktestError;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| BacktestError::UnknownStrategy(s.to_string()))
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub k: usize,
    pub mode: RebalanceMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            k: DEFAULT_K,
            mode: RebalanceMode::Drift,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerDay {
    pub date: NaiveDate,
    /// Weights held over the day, after the open rebalance. Short legs are negative.
    pub holdings: Vec<(String, f64)>,
    pub trades: Trades,
    pub daily_return: f64,
    /// Portfolio value at the end of the day; the run starts at 1.0.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestLedger {
    pub strategy: String,
    /// k for the top/bottom strategies, decile size otherwise (last day's size).
    pub param: usize,
    pub days: Vec<LedgerDay>,
}

impl BacktestLedger {
    pub fn returns(&self) -> Vec<f64> {
        self.days.iter().map(|d| d.daily_return).collect()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.days.iter().map(|d| d.date).collect()
    }

    pub fn final_value(&self) -> f64 {
        self.days.last().map_or(1.0, |d| d.value)
    }

    /// Value path including the initial 1.0.
    pub fn nav(&self) -> Vec<f64> {
        std::iter::once(1.0).chain(self.days.iter().map(|d| d.value)).collect()
    }

    fn from_returns(strategy: &str, param: usize, days: Vec<(NaiveDate, Vec<(String, f64)>, Trades, f64)>) -> Self {
        let mut value = 1.0;
        let days = days
            .into_iter()
            .map(|(date, holdings, trades, r)| {
                value *= 1.0 + r;
                LedgerDay {
                    date,
                    holdings,
                    trades,
                    daily_return: r,
                    value,
                }
            })
            .collect();
        BacktestLedger {
            strategy: strategy.to_string(),
            param,
            days,
        }
    }

    /// Chains consecutive ledgers of one strategy into a single compounded path.
    pub fn concat(parts: &[BacktestLedger]) -> Result<Self> {
        let first = parts.first().ok_or(BacktestError::Empty)?;
        let days = parts
            .iter()
            .flat_map(|p| &p.days)
            .map(|d| (d.date, d.holdings.clone(), d.trades.clone(), d.daily_return))
            .collect();
        Ok(Self::from_returns(&first.strategy, first.param, days))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["date", "value", "daily_return", "holdings"])?;
        for d in &self.days {
            let holdings = d
                .holdings
                .iter()
                .map(|(t, w)| format!("{t}:{w}"))
                .collect::<Vec<_>>()
                .join(";");
            wtr.write_record([d.date.to_string(), d.value.to_string(), d.daily_return.to_string(), holdings])?;
        }
        wtr.flush()
    }

    /// Reads a ledger written by [`BacktestLedger::write_csv`]. Trades are not stored and come back empty.
    pub fn read_csv<R: Read>(r: R, strategy: &str, param: usize) -> Result<Self> {
        let bad = |e: String| BacktestError::Csv(e);
        let mut rdr = csv::Reader::from_reader(r);
        let mut days = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if rec.len() != 4 {
                return Err(bad(format!("expected 4 columns, got {}", rec.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("'{s}': {e}")));
            let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| bad(e.to_string()))?;
            let holdings = rec[3]
                .split(';')
                .filter(|s| !s.is_empty())
                .map(|h| {
                    let (t, w) = h.rsplit_once(':').ok_or_else(|| bad(format!("holding '{h}'")))?;
                    Ok((t.to_string(), num(w)?))
                })
                .collect::<Result<Vec<_>>>()?;
            days.push(LedgerDay {
                date,
                holdings,
                trades: Trades::default(),
                daily_return: num(&rec[2])?,
                value: num(&rec[1])?,
            });
        }
        Ok(BacktestLedger {
            strategy: strategy.to_string(),
            param,
            days,
        })
    }
}

pub fn decile_size(n: usize) -> usize {
    (n / 10).max(1)
}

fn check_alignment(rankings: &[DailyRanking], returns: &[DayReturns]) -> Result<()> {
    if rankings.len() != returns.len() {
        return Err(BacktestError::LengthMismatch {
            rankings: rankings.len(),
            returns: returns.len(),
        });
    }
    if rankings.is_empty() {
        return Err(BacktestError::Empty);
    }
    for (index, (a, b)) in rankings.iter().zip(returns).enumerate() {
        if a.date != b.date {
            return Err(BacktestError::DateMismatch {
                index,
                ranking: a.date,
                returns: b.date,
            });
        }
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Top,
    Bottom,
}

#[derive(Clone, Copy, PartialEq)]
enum Size {
    K(usize),
    Decile,
}

fn long_only(
    name: &str,
    rankings: &[DailyRanking],
    returns: &[DayReturns],
    side: Side,
    size: Size,
    mode: RebalanceMode,
) -> Result<BacktestLedger> {
    let mut current = Holdings::new();
    let mut days = Vec::with_capacity(rankings.len());
    let mut param = 0;
    for (rk, day) in rankings.iter().zip(returns) {
        let n = rk.len();
        let k = match size {
            Size::K(k) => k,
            Size::Decile => decile_size(n),
        };
        if k == 0 || k > n {
            return Err(BacktestError::InvalidK { k, n, date: rk.date });
        }
        param = k;
        let target: BTreeSet<&str> = match side {
            Side::Top => rk.top(k).collect(),
            Side::Bottom => rk.bottom(k).collect(),
        };
        let mode = if size == Size::Decile { RebalanceMode::Reequalize } else { mode };
        let (trades, held) = rebalance_to(&current, &target, mode);
        let r = day.portfolio_return(&held)?;
        // Drift to the next open.
        current = held
            .iter()
            .map(|(t, w)| Ok((t.clone(), w * (1.0 + day.get(t)?) / (1.0 + r))))
            .collect::<Result<_>>()?;
        days.push((day.date, held.into_iter().collect(), trades, r));
    }
    Ok(BacktestLedger::from_returns(name, param, days))
}

fn long_short(name: &str, long: BacktestLedger, short: BacktestLedger) -> BacktestLedger {
    let days = long
        .days
        .into_iter()
        .zip(short.days)
        .map(|(l, s)| {
            let mut holdings = l.holdings;
            holdings.extend(s.holdings.into_iter().map(|(t, w)| (t, -w)));
            let trades = Trades {
                sold: [l.trades.sold, s.trades.sold].concat(),
                held: [l.trades.held, s.trades.held].concat(),
                bought: [l.trades.bought, s.trades.bought].concat(),
            };
            (l.date, holdings, trades, l.daily_return - s.daily_return)
        })
        .collect();
    BacktestLedger::from_returns(name, long.param, days)
}

/// Equal weight over each day's alive stocks, rebalanced daily.
pub fn market_ledger(returns: &[DayReturns]) -> Result<BacktestLedger> {
    if returns.is_empty() {
        return Err(BacktestError::Empty);
    }
    let mut prev = Holdings::new();
    let mut days = Vec::with_capacity(returns.len());
    for day in returns {
        if day.alive.is_empty() {
            return Err(BacktestError::EmptyMarket(day.date));
        }
        let h = equal_weights(day.alive.iter().map(String::as_str));
        let r = day.portfolio_return(&h)?;
        let trades = Trades::between(&prev, &h);
        days.push((day.date, h.iter().map(|(t, w)| (t.clone(), *w)).collect(), trades, r));
        prev = h;
    }
    Ok(BacktestLedger::from_returns(Strategy::Market.name(), returns[0].alive.len(), days))
}

/// Runs one strategy over aligned rankings and returns.
pub fn simulate(strategy: Strategy, rankings: &[DailyRanking], returns: &[DayReturns], cfg: &SimConfig) -> Result<BacktestLedger> {
    check_alignment(rankings, returns)?;
    let name = strategy.name();
    let k = Size::K(cfg.k);
    match strategy {
        Strategy::TopK => long_only(name, rankings, returns, Side::Top, k, cfg.mode),
        Strategy::BottomK => long_only(name, rankings, returns, Side::Bottom, k, cfg.mode),
        Strategy::TopDecile => long_only(name, rankings, returns, Side::Top, Size::Decile, cfg.mode),
        Strategy::BottomDecile => long_only(name, rankings, returns, Side::Bottom, Size::Decile, cfg.mode),
        Strategy::LongShortK => Ok(long_short(
            name,
            long_only(name, rankings, returns, Side::Top, k, cfg.mode)?,
            long_only(name, rankings, returns, Side::Bottom, k, cfg.mode)?,
        )),
        Strategy::LongShortDecile => Ok(long_short(
            name,
            long_only(name, rankings, returns, Side::Top, Size::Decile, cfg.mode)?,
            long_only(name, rankings, returns, Side::Bottom, Size::Decile, cfg.mode)?,
        )),
        Strategy::Market => market_ledger(returns),
    }
}

/// Equal-capital blend: each day's return is the mean of the members' returns.
pub fn combine_strategies(ledgers: &[BacktestLedger]) -> Result<BacktestLedger> {
    let first = ledgers.first().ok_or(BacktestError::Empty)?;
    let n = ledgers.len() as f64;
    let mut days = Vec::with_capacity(first.days.len());
    for (i, d0) in first.days.iter().enumerate() {
        let mut holdings: BTreeMap<String, f64> = BTreeMap::new();
        let mut r = 0.0;
        for l in ledgers {
            let d = l.days.get(i).ok_or(BacktestError::LengthMismatch {
                rankings: first.days.len(),
                returns: l.days.len(),
            })?;
            if d.date != d0.date {
                return Err(BacktestError::DateMismatch {
                    index: i,
                    ranking: d0.date,
                    returns: d.date,
                });
            }
            r += d.daily_return;
            for (t, w) in &d.holdings {
                *holdings.entry(t.clone()).or_insert(0.0) += w / n;
            }
        }
        days.push((d0.date, holdings.into_iter().collect(), Trades::default(), r / n));
    }
    if ledgers.iter().any(|l| l.days.len() != first.days.len()) {
        return Err(BacktestError::LengthMismatch {
            rankings: first.days.len(),
            returns: ledgers.iter().map(|l| l.days.len()).max().unwrap_or(0),
        });
    }
    let name = if ledgers.len() == 1 { first.strategy.clone() } else { format!("combined_{}", first.strategy) };
    Ok(BacktestLedger::from_returns(&name, first.param, days))
}

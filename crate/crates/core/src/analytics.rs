//! Portfolio metrics: annualized return, Sharpe ratio, drawdowns and t-tests against the market.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::backtest::{BacktestLedger, Strategy};

pub const TRADING_DAYS: f64 = 252.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AnalyticsError {
    #[error("need at least {need} observations, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("zero volatility: metric undefined")]
    ZeroVolatility,
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("ledger dates differ from market dates")]
    DateMismatch,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("risk-free csv: {0}")]
    RiskFree(String),
}

pub type Result<T> = std::result::Result<T, AnalyticsError>;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n − 1).
fn sample_std(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Treats a deviation lost in rounding noise as exactly zero.
fn is_degenerate(sd: f64, x: &[f64]) -> bool {
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    sd <= 1e-14 * scale || sd == 0.0
}

/// `mean(R − Rf) / std(R) · √252`. An empty `rf_daily` means a zero rate.
pub fn sharpe_ratio(returns: &[f64], rf_daily: &[f64]) -> Result<f64> {
    if returns.len() < 2 {
        return Err(AnalyticsError::TooShort { need: 2, got: returns.len() });
    }
    if !rf_daily.is_empty() && rf_daily.len() != returns.len() {
        return Err(AnalyticsError::LengthMismatch(returns.len(), rf_daily.len()));
    }
    let sd = sample_std(returns);
    if is_degenerate(sd, returns) {
        return Err(AnalyticsError::ZeroVolatility);
    }
    let excess = if rf_daily.is_empty() {
        mean(returns)
    } else {
        returns.iter().zip(rf_daily).map(|(r, f)| r - f).sum::<f64>() / returns.len() as f64
    };
    Ok(excess / sd * TRADING_DAYS.sqrt())
}

/// Geometric annualization over a 252-day year.
pub fn annualize_return(final_value: f64, n_days: usize) -> Result<f64> {
    if n_days == 0 || !(final_value > 0.0) || !final_value.is_finite() {
        return Err(AnalyticsError::Invalid(format!("final value {final_value} over {n_days} days")));
    }
    Ok(final_value.powf(TRADING_DAYS / n_days as f64) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Drawdown {
    /// `min(v / running_max − 1)`, in [−1, 0].
    pub depth: f64,
    /// 0-based indices into the value path.
    pub peak: usize,
    pub trough: usize,
}

fn check_values(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(AnalyticsError::TooShort { need: 1, got: 0 });
    }
    if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(AnalyticsError::Invalid("values must be positive and finite".into()));
    }
    Ok(())
}

pub fn max_drawdown(values: &[f64]) -> Result<Drawdown> {
    check_values(values)?;
    let mut best = Drawdown { depth: 0.0, peak: 0, trough: 0 };
    let mut peak = 0;
    for (t, v) in values.iter().enumerate() {
        if *v > values[peak] {
            peak = t;
        }
        let dd = v / values[peak] - 1.0;
        if dd < best.depth {
            best = Drawdown { depth: dd, peak, trough: t };
        }
    }
    Ok(best)
}

/// Longest stretch, in days, from a peak to the first day the value regains it.
/// An unrecovered final episode counts to the last day.
pub fn mdd_duration(values: &[f64]) -> Result<usize> {
    check_values(values)?;
    let mut longest = 0;
    let mut peak = 0;
    let mut under = false;
    for (t, v) in values.iter().enumerate() {
        if *v >= values[peak] {
            if under {
                longest = longest.max(t - peak);
            }
            peak = t;
            under = false;
        } else {
            under = true;
        }
    }
    if under {
        longest = longest.max(values.len() - 1 - peak);
    }
    Ok(longest)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// Test on daily differences.
    #[default]
    Paired,
    /// Two independent samples with unequal variances.
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
}

fn two_sided(t: f64, df: f64) -> Result<f64> {
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| AnalyticsError::Invalid(e.to_string()))?;
    Ok((2.0 * dist.cdf(-t.abs())).min(1.0))
}

/// Paired t-test on `d = a − b` with n − 1 degrees of freedom.
pub fn t_test_paired(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(AnalyticsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(AnalyticsError::TooShort { need: 2, got: a.len() });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let df = (d.len() - 1) as f64;
    if d.iter().all(|v| *v == 0.0) {
        return Ok(TTest { t: 0.0, p: 1.0, df });
    }
    let sd = sample_std(&d);
    if is_degenerate(sd, &d) {
        return Err(AnalyticsError::ZeroVolatility);
    }
    let t = mean(&d) / (sd / (d.len() as f64).sqrt());
    Ok(TTest { t, p: two_sided(t, df)?, df })
}

/// Welch's unequal-variance two-sample t-test.
pub fn t_test_welch(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(AnalyticsError::TooShort { need: 2, got: a.len().min(b.len()) });
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_std(a).powi(2) / na, sample_std(b).powi(2) / nb);
    let diff = mean(a) - mean(b);
    if va + vb == 0.0 {
        return if diff == 0.0 {
            Ok(TTest { t: 0.0, p: 1.0, df: na + nb - 2.0 })
        } else {
            Err(AnalyticsError::ZeroVolatility)
        };
    }
    let t = diff / (va + vb).sqrt();
    let df = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok(TTest { t, p: two_sided(t, df)?, df })
}

pub fn t_test(kind: TestKind, strategy: &[f64], market: &[f64]) -> Result<TTest> {
    match kind {
        TestKind::Paired => t_test_paired(strategy, market),
        TestKind::Welch => t_test_welch(strategy, market),
    }
}

/// Dated annual risk-free rates, forward-filled to daily rates of `annual / 252`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RiskFree {
    points: Vec<(NaiveDate, f64)>,
}

impl RiskFree {
    pub fn new(mut points: Vec<(NaiveDate, f64)>) -> Result<Self> {
        points.sort_by_key(|p| p.0);
        if points.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(AnalyticsError::RiskFree("duplicate date".into()));
        }
        if points.iter().any(|p| !p.1.is_finite()) {
            return Err(AnalyticsError::RiskFree("non-finite rate".into()));
        }
        Ok(RiskFree { points })
    }

    /// Reads `date,rate` rows (annual rates as fractions).
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let bad = |e: String| AnalyticsError::RiskFree(e);
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["date", "rate"] {
            return Err(bad(format!("expected header date,rate, got {:?}", headers)));
        }
        let mut points = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let d = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| bad(format!("'{}': {e}", &rec[0])))?;
            let v: f64 = rec[1].trim().parse().map_err(|e| bad(format!("'{}': {e}", &rec[1])))?;
            points.push((d, v));
        }
        Self::new(points)
    }

    /// Daily rates for `dates`. Days before the first quote take the first quote; no quotes means zero.
    pub fn daily(&self, dates: &[NaiveDate]) -> Vec<f64> {
        dates
            .iter()
            .map(|d| {
                let i = self.points.partition_point(|p| p.0 <= *d);
                let annual = match (i, self.points.first()) {
                    (_, None) => 0.0,
                    (0, Some(first)) => first.1,
                    (i, _) => self.points[i - 1].1,
                };
                annual / TRADING_DAYS
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub final_value: f64,
    pub annual_return: f64,
    /// `None` when volatility is zero.
    pub sharpe: Option<f64>,
    pub max_drawdown: f64,
    pub mdd_duration_days: usize,
    /// `None` for the market itself or when the test is undefined.
    pub t_value: Option<f64>,
    pub p_value: Option<f64>,
}

/// Assembles all metrics for one ledger. `market` is `None` when reporting the market itself.
pub fn build_report(ledger: &BacktestLedger, market: Option<&BacktestLedger>, rf: &RiskFree, kind: TestKind) -> Result<MetricsReport> {
    if ledger.days.is_empty() {
        return Err(AnalyticsError::TooShort { need: 1, got: 0 });
    }
    let returns = ledger.returns();
    let nav = ledger.nav();
    let sharpe = match sharpe_ratio(&returns, &rf.daily(&ledger.dates())) {
        Ok(s) => Some(s),
        Err(AnalyticsError::ZeroVolatility | AnalyticsError::TooShort { .. }) => None,
        Err(e) => return Err(e),
    };
    let test = match market {
        None => None,
        Some(m) => {
            if m.dates() != ledger.dates() {
                return Err(AnalyticsError::DateMismatch);
            }
            match t_test(kind, &returns, &m.returns()) {
                Ok(t) => Some(t),
                Err(AnalyticsError::ZeroVolatility | AnalyticsError::TooShort { .. }) => None,
                Err(e) => return Err(e),
            }
        }
    };
    Ok(MetricsReport {
        final_value: ledger.final_value(),
        annual_return: annualize_return(ledger.final_value(), returns.len())?,
        sharpe,
        max_drawdown: max_drawdown(&nav)?.depth,
        mdd_duration_days: mdd_duration(&nav)?,
        t_value: test.map(|t| t.t),
        p_value: test.map(|t| t.p),
    })
}

pub const GRID_ROWS: [&str; 8] = [
    "Final Value",
    "Annual Return",
    "Top 10 SR",
    "Bottom 10 SR",
    "Long-Short 10 SR",
    "Top Decile SR",
    "Bottom Decile SR",
    "Long-Short Decile SR",
];

/// Ledgers of every strategy for one model.
pub type StrategySet = BTreeMap<Strategy, BacktestLedger>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub label: String,
    pub values: Vec<Option<f64>>,
}

/// Rows are metrics, columns are models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricGrid {
    pub columns: Vec<String>,
    pub rows: Vec<GridRow>,
}

fn csv_cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

impl MetricGrid {
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(std::iter::once("metric".to_string()).chain(self.columns.iter().cloned()))?;
        for r in &self.rows {
            wtr.write_record(std::iter::once(r.label.clone()).chain(r.values.iter().map(|v| csv_cell(*v))))?;
        }
        wtr.flush()
    }

    pub fn get(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|r| r.label == row)?.values[c]
    }
}

/// The eight-row grid; missing strategies leave empty cells.
pub fn metric_grid(models: &[(String, &StrategySet)], rf: &RiskFree) -> Result<MetricGrid> {
    let sr = |set: &StrategySet, s: Strategy| -> Result<Option<f64>> {
        match set.get(&s) {
            None => Ok(None),
            Some(l) => match sharpe_ratio(&l.returns(), &rf.daily(&l.dates())) {
                Ok(v) => Ok(Some(v)),
                Err(AnalyticsError::ZeroVolatility | AnalyticsError::TooShort { .. }) => Ok(None),
                Err(e) => Err(e),
            },
        }
    };
    let mut rows: Vec<GridRow> = GRID_ROWS
        .iter()
        .map(|l| GridRow { label: l.to_string(), values: Vec::new() })
        .collect();
    for (_, set) in models {
        let top = set.get(&Strategy::TopK);
        rows[0].values.push(top.map(|l| l.final_value()));
        rows[1].values.push(match top {
            Some(l) if !l.days.is_empty() => Some(annualize_return(l.final_value(), l.days.len())?),
            _ => None,
        });
        let order = [
            Strategy::TopK,
            Strategy::BottomK,
            Strategy::LongShortK,
            Strategy::TopDecile,
            Strategy::BottomDecile,
            Strategy::LongShortDecile,
        ];
        for (row, s) in rows[2..].iter_mut().zip(order) {
            row.values.push(sr(set, s)?);
        }
    }
    Ok(MetricGrid {
        columns: models.iter().map(|(n, _)| n.clone()).collect(),
        rows,
    })
}

pub const COMPARISON_HEADER: [&str; 7] = ["Strategy", "Return", "t-value", "p-value", "SR", "MD", "MDD"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub report: MetricsReport,
}

/// Top-k comparison against the market; the market row comes last with no test.
pub fn comparison_table(
    models: &[(String, &BacktestLedger)],
    market: &BacktestLedger,
    rf: &RiskFree,
    kind: TestKind,
) -> Result<Vec<ComparisonRow>> {
    let mut rows = models
        .iter()
        .map(|(name, l)| {
            Ok(ComparisonRow {
                strategy: name.clone(),
                report: build_report(l, Some(market), rf, kind)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.push(ComparisonRow {
        strategy: "Market".into(),
        report: build_report(market, None, rf, kind)?,
    });
    Ok(rows)
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], w: W) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(COMPARISON_HEADER)?;
    for r in rows {
        let m = &r.report;
        wtr.write_record([
            r.strategy.clone(),
            m.annual_return.to_string(),
            csv_cell(m.t_value),
            csv_cell(m.p_value),
            csv_cell(m.sharpe),
            m.max_drawdown.to_string(),
            m.mdd_duration_days.to_string(),
        ])?;
    }
    wtr.flush()
}

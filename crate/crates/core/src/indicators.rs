//! Basic statistics and technical indicators computed from opening prices.
//!
//! Every indicator is written against a generic "price" series standing in
//! for the close of the usual textbook formula; the panel feeds it the opens.
//! High, low and volume are used where a formula needs them. Values before an
//! indicator's warmup are masked invalid, never zero-filled.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::market_data::{StockSeries, Universe};

#[derive(Debug, thiserror::Error)]
pub enum IndicatorError {
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("feature {name}: parameter {param} must be a positive integer, got {value}")]
    BadParam {
        name: String,
        param: String,
        value: f64,
    },
    #[error("feature {0:?} selected twice")]
    Duplicate(String),
    #[error("series of {len} days is shorter than the {warmup}-day warmup of {name}")]
    InsufficientHistory {
        name: String,
        warmup: usize,
        len: usize,
    },
    #[error("csv export: {0}")]
    Export(String),
}

pub type Result<T> = std::result::Result<T, IndicatorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Momentum,
    Volume,
    Volatility,
    Trend,
    Basic,
}

/// Names of the 12 basic features, in panel order.
pub const BASIC_FEATURES: [&str; 12] = [
    "mom_2",
    "mom_3",
    "mom_5",
    "mom_10",
    "sma_5_ratio",
    "sma_20_ratio",
    "sma_50_ratio",
    "ret_std_5",
    "ret_std_20",
    "range",
    "volume",
    "dollar_volume",
];

const BASIC_WARMUPS: [usize; 12] = [3, 4, 6, 11, 5, 20, 50, 6, 21, 1, 1, 1];

/// The full technical indicator table.
pub const TECHNICAL_FEATURES: [&str; 19] = [
    "stoch_rsi",
    "stoch",
    "awesome_osc",
    "pvo",
    "kama",
    "williams_r",
    "adi",
    "eom",
    "force_index",
    "cmf",
    "vpt",
    "atr",
    "bb_high",
    "donchian_width",
    "ulcer_index",
    "adx",
    "aroon_up",
    "aroon_down",
    "ichimoku_a",
];

/// Default 16-indicator selection; drops the three price-level indicators
/// (KAMA, Bollinger high, Ichimoku span A), which track the moving averages.
pub const DEFAULT_TECHNICAL: [&str; 16] = [
    "stoch_rsi",
    "stoch",
    "awesome_osc",
    "pvo",
    "williams_r",
    "adi",
    "eom",
    "force_index",
    "cmf",
    "vpt",
    "atr",
    "donchian_width",
    "ulcer_index",
    "adx",
    "aroon_up",
    "aroon_down",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub category: Category,
    pub params: BTreeMap<String, f64>,
    /// Days of history needed before the first valid value.
    pub warmup: usize,
}

impl FeatureSpec {
    /// The indicator with its conventional default parameters.
    pub fn standard(name: &str) -> Result<Self> {
        use Category::*;
        let (category, params): (Category, &[(&str, f64)]) = match name {
            "rsi" => (Momentum, &[("window", 14.0)]),
            "stoch_rsi" => (Momentum, &[("window", 14.0)]),
            "stoch" => (Momentum, &[("window", 14.0)]),
            "awesome_osc" => (Momentum, &[("short", 5.0), ("long", 34.0)]),
            "pvo" => (Momentum, &[("fast", 12.0), ("slow", 26.0)]),
            "kama" => (Momentum, &[("window", 10.0), ("fast", 2.0), ("slow", 30.0)]),
            "williams_r" => (Momentum, &[("window", 14.0)]),
            "adi" => (Volume, &[]),
            "eom" => (Volume, &[("window", 14.0)]),
            "force_index" => (Volume, &[("window", 13.0)]),
            "cmf" => (Volume, &[("window", 20.0)]),
            "vpt" => (Volume, &[]),
            "atr" => (Volatility, &[("window", 14.0)]),
            "bb_high" => (Volatility, &[("window", 20.0), ("dev", 2.0)]),
            "donchian_width" => (Volatility, &[("window", 20.0)]),
            "ulcer_index" => (Volatility, &[("window", 14.0)]),
            "adx" => (Trend, &[("window", 14.0)]),
            "aroon_up" => (Trend, &[("window", 25.0)]),
            "aroon_down" => (Trend, &[("window", 25.0)]),
            "ichimoku_a" => (Trend, &[("conversion", 9.0), ("base", 26.0)]),
            other => return Err(IndicatorError::UnknownFeature(other.to_string())),
        };
        let mut spec = FeatureSpec {
            name: name.to_string(),
            category,
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            warmup: 1,
        };
        spec.warmup = spec.compute_warmup()?;
        Ok(spec)
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Result<Self> {
        if !self.params.contains_key(key) {
            return Err(IndicatorError::BadParam {
                name: self.name.clone(),
                param: key.to_string(),
                value,
            });
        }
        self.params.insert(key.to_string(), value);
        self.warmup = self.compute_warmup()?;
        Ok(self)
    }

    fn window(&self, key: &str) -> Result<usize> {
        let value = self.params.get(key).copied().unwrap_or(f64::NAN);
        if value >= 1.0 && value.fract() == 0.0 {
            Ok(value as usize)
        } else {
            Err(IndicatorError::BadParam {
                name: self.name.clone(),
                param: key.to_string(),
                value,
            })
        }
    }

    fn compute_warmup(&self) -> Result<usize> {
        let w = |k: &str| self.window(k);
        Ok(match self.name.as_str() {
            "rsi" | "eom" | "atr" => w("window")? + 1,
            "stoch_rsi" => 2 * w("window")?,
            "stoch" | "williams_r" | "cmf" | "donchian_width" | "ulcer_index" => w("window")?,
            "force_index" => w("window")? + 1,
            "kama" => {
                w("fast")?;
                w("slow")?;
                w("window")? + 1
            }
            "awesome_osc" => w("short")?.max(w("long")?),
            "pvo" => w("fast")?.max(w("slow")?),
            "adi" => 1,
            "vpt" => 2,
            "bb_high" => {
                if !(self.params["dev"] > 0.0) {
                    return Err(IndicatorError::BadParam {
                        name: self.name.clone(),
                        param: "dev".into(),
                        value: self.params["dev"],
                    });
                }
                w("window")?
            }
            "adx" => 2 * w("window")?,
            "aroon_up" | "aroon_down" => w("window")? + 1,
            "ichimoku_a" => w("conversion")?.max(w("base")?),
            other => return Err(IndicatorError::UnknownFeature(other.to_string())),
        })
    }
}

/// Price and volume columns an indicator reads. `price` plays the role of the close.
#[derive(Debug, Clone, Copy)]
pub struct Inputs<'a> {
    pub price: &'a [f64],
    pub high: &'a [f64],
    pub low: &'a [f64],
    pub volume: &'a [f64],
}

/// Owned columns of one stock with opens substituted for closes.
pub struct OpenColumns {
    pub open: Vec<f64>,
    pub high: Vec<f64>,
    pub low: Vec<f64>,
    pub volume: Vec<f64>,
}

impl OpenColumns {
    pub fn from_series(s: &StockSeries) -> Self {
        OpenColumns {
            open: s.bars.iter().map(|b| b.open).collect(),
            high: s.bars.iter().map(|b| b.high).collect(),
            low: s.bars.iter().map(|b| b.low).collect(),
            volume: s.bars.iter().map(|b| b.volume as f64).collect(),
        }
    }

    pub fn inputs(&self) -> Inputs<'_> {
        Inputs {
            price: &self.open,
            high: &self.high,
            low: &self.low,
            volume: &self.volume,
        }
    }
}

// ---- rolling primitives -------------------------------------------------

fn sma(x: &[f64], w: usize) -> Vec<f64> {
    let mut out = vec![f64::NAN; x.len()];
    for t in w.saturating_sub(1)..x.len() {
        out[t] = x[t + 1 - w..=t].iter().sum::<f64>() / w as f64;
    }
    out
}

fn rolling_max(x: &[f64], w: usize) -> Vec<f64> {
    (0..x.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(w);
            x[lo..=t].iter().copied().fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

fn rolling_min(x: &[f64], w: usize) -> Vec<f64> {
    (0..x.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(w);
            x[lo..=t].iter().copied().fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn rolling_std(x: &[f64], w: usize, ddof: usize) -> Vec<f64> {
    let mut out = vec![f64::NAN; x.len()];
    for t in w.saturating_sub(1)..x.len() {
        let win = &x[t + 1 - w..=t];
        let mean = win.iter().sum::<f64>() / w as f64;
        let ss: f64 = win.iter().map(|v| (v - mean) * (v - mean)).sum();
        out[t] = (ss / (w - ddof) as f64).sqrt();
    }
    out
}

/// Exponential average `y_t = y_{t-1} + alpha (x_t - y_{t-1})` seeded with the
/// first finite input. Entries before `start` are ignored.
fn ewm(x: &[f64], alpha: f64, start: usize) -> Vec<f64> {
    let mut out = vec![f64::NAN; x.len()];
    let mut acc: Option<f64> = None;
    for t in start..x.len() {
        let next = match acc {
            None => x[t],
            Some(prev) => prev + alpha * (x[t] - prev),
        };
        acc = Some(next);
        out[t] = next;
    }
    out
}

fn span_alpha(span: usize) -> f64 {
    2.0 / (span as f64 + 1.0)
}

fn ratio_or(num: f64, den: f64, fallback: f64) -> f64 {
    if den == 0.0 {
        fallback
    } else {
        num / den
    }
}

/// Close location value, zero on a zero-range bar.
fn clv(p: f64, h: f64, l: f64) -> f64 {
    ratio_or((p - l) - (h - p), h - l, 0.0)
}

fn true_range(inp: &Inputs) -> Vec<f64> {
    let mut tr = vec![f64::NAN; inp.price.len()];
    for t in 1..inp.price.len() {
        let prev = inp.price[t - 1];
        tr[t] = (inp.high[t] - inp.low[t])
            .max((inp.high[t] - prev).abs())
            .max((inp.low[t] - prev).abs());
    }
    tr
}

// ---- indicators -----------------------------------------------------------

/// Wilder RSI: exponential averages of gains and losses with `alpha = 1/window`.
pub fn rsi(price: &[f64], window: usize) -> Vec<f64> {
    let n = price.len();
    let mut up = vec![0.0; n];
    let mut down = vec![0.0; n];
    for t in 1..n {
        let d = price[t] - price[t - 1];
        up[t] = d.max(0.0);
        down[t] = (-d).max(0.0);
    }
    let alpha = 1.0 / window as f64;
    let avg_up = ewm(&up, alpha, 1);
    let avg_down = ewm(&down, alpha, 1);
    let mut out = vec![f64::NAN; n];
    for t in window.min(n)..n {
        out[t] = if avg_down[t] == 0.0 {
            100.0
        } else {
            100.0 - 100.0 / (1.0 + avg_up[t] / avg_down[t])
        };
    }
    out
}

/// Stochastic RSI: position of RSI within its own rolling range (0.5 on a flat range).
pub fn stoch_rsi(price: &[f64], window: usize) -> Vec<f64> {
    let r = rsi(price, window);
    let mut out = vec![f64::NAN; price.len()];
    for t in (2 * window - 1).min(price.len())..price.len() {
        let win = &r[t + 1 - window..=t];
        let hi = win.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = win.iter().copied().fold(f64::INFINITY, f64::min);
        out[t] = ratio_or(r[t] - lo, hi - lo, 0.5);
    }
    out
}

/// Stochastic oscillator %K (50 on a zero range).
pub fn stoch(inp: &Inputs, window: usize) -> Vec<f64> {
    let hh = rolling_max(inp.high, window);
    let ll = rolling_min(inp.low, window);
    (0..inp.price.len())
        .map(|t| {
            if t + 1 < window {
                f64::NAN
            } else {
                100.0 * ratio_or(inp.price[t] - ll[t], hh[t] - ll[t], 0.5)
            }
        })
        .collect()
}

/// Williams %R in [-100, 0] (-50 on a zero range).
pub fn williams_r(inp: &Inputs, window: usize) -> Vec<f64> {
    let hh = rolling_max(inp.high, window);
    let ll = rolling_min(inp.low, window);
    (0..inp.price.len())
        .map(|t| {
            if t + 1 < window {
                f64::NAN
            } else {
                -100.0 * ratio_or(hh[t] - inp.price[t], hh[t] - ll[t], 0.5)
            }
        })
        .collect()
}

pub fn awesome_oscillator(inp: &Inputs, short: usize, long: usize) -> Vec<f64> {
    let median: Vec<f64> = inp
        .high
        .iter()
        .zip(inp.low)
        .map(|(h, l)| (h + l) / 2.0)
        .collect();
    let s = sma(&median, short);
    let l = sma(&median, long);
    s.iter().zip(&l).map(|(a, b)| a - b).collect()
}

/// Percentage volume oscillator: `100 (EMA_fast - EMA_slow) / EMA_slow` of volume.
pub fn pvo(volume: &[f64], fast: usize, slow: usize) -> Vec<f64> {
    let f = ewm(volume, span_alpha(fast), 0);
    let s = ewm(volume, span_alpha(slow), 0);
    let first = fast.max(slow) - 1;
    (0..volume.len())
        .map(|t| {
            if t < first {
                f64::NAN
            } else {
                100.0 * ratio_or(f[t] - s[t], s[t], 0.0)
            }
        })
        .collect()
}

/// Kaufman adaptive moving average.
pub fn kama(price: &[f64], window: usize, fast: usize, slow: usize) -> Vec<f64> {
    let n = price.len();
    let mut out = vec![f64::NAN; n];
    if n <= window {
        return out;
    }
    let fast_sc = 2.0 / (fast as f64 + 1.0);
    let slow_sc = 2.0 / (slow as f64 + 1.0);
    let mut prev = price[window - 1];
    for t in window..n {
        let change = (price[t] - price[t - window]).abs();
        let noise: f64 = (t + 1 - window..=t)
            .map(|i| (price[i] - price[i - 1]).abs())
            .sum();
        let er = ratio_or(change, noise, 0.0);
        let sc = (er * (fast_sc - slow_sc) + slow_sc).powi(2);
        prev += sc * (price[t] - prev);
        out[t] = prev;
    }
    out
}

/// Accumulation/distribution index.
pub fn adi(inp: &Inputs) -> Vec<f64> {
    let mut acc = 0.0;
    (0..inp.price.len())
        .map(|t| {
            acc += clv(inp.price[t], inp.high[t], inp.low[t]) * inp.volume[t];
            acc
        })
        .collect()
}

/// Ease of movement, smoothed with a simple moving average.
pub fn ease_of_movement(inp: &Inputs, window: usize) -> Vec<f64> {
    let n = inp.price.len();
    let mut emv = vec![f64::NAN; n];
    for t in 1..n {
        let moved = inp.high[t] - inp.high[t - 1] + inp.low[t] - inp.low[t - 1];
        emv[t] = ratio_or(moved * (inp.high[t] - inp.low[t]), 2.0 * inp.volume[t], 0.0) * 1e8;
    }
    let mut out = vec![f64::NAN; n];
    for t in window..n {
        out[t] = emv[t + 1 - window..=t].iter().sum::<f64>() / window as f64;
    }
    out
}

pub fn force_index(inp: &Inputs, window: usize) -> Vec<f64> {
    let n = inp.price.len();
    let mut fi = vec![f64::NAN; n];
    for t in 1..n {
        fi[t] = (inp.price[t] - inp.price[t - 1]) * inp.volume[t];
    }
    let mut out = ewm(&fi, span_alpha(window), 1);
    for v in out.iter_mut().take(window.min(n)) {
        *v = f64::NAN;
    }
    out
}

/// Chaikin money flow.
pub fn cmf(inp: &Inputs, window: usize) -> Vec<f64> {
    let n = inp.price.len();
    let mfv: Vec<f64> = (0..n)
        .map(|t| clv(inp.price[t], inp.high[t], inp.low[t]) * inp.volume[t])
        .collect();
    let mut out = vec![f64::NAN; n];
    for t in window.saturating_sub(1)..n {
        let num: f64 = mfv[t + 1 - window..=t].iter().sum();
        let den: f64 = inp.volume[t + 1 - window..=t].iter().sum();
        out[t] = ratio_or(num, den, 0.0);
    }
    out
}

/// Volume-price trend (cumulative volume-weighted returns).
pub fn vpt(inp: &Inputs) -> Vec<f64> {
    let n = inp.price.len();
    let mut out = vec![f64::NAN; n];
    let mut acc = 0.0;
    for t in 1..n {
        acc += inp.volume[t] * ratio_or(inp.price[t] - inp.price[t - 1], inp.price[t - 1], 0.0);
        out[t] = acc;
    }
    out
}

/// Wilder average true range.
pub fn atr(inp: &Inputs, window: usize) -> Vec<f64> {
    let tr = true_range(inp);
    let n = tr.len();
    let mut out = vec![f64::NAN; n];
    if n <= window {
        return out;
    }
    let mut acc = tr[1..=window].iter().sum::<f64>() / window as f64;
    out[window] = acc;
    for t in window + 1..n {
        acc = (acc * (window as f64 - 1.0) + tr[t]) / window as f64;
        out[t] = acc;
    }
    out
}

/// Upper Bollinger band: SMA plus `dev` population standard deviations.
pub fn bollinger_high(price: &[f64], window: usize, dev: f64) -> Vec<f64> {
    let m = sma(price, window);
    let s = rolling_std(price, window, 0);
    m.iter().zip(&s).map(|(a, b)| a + dev * b).collect()
}

/// Donchian channel width as a percentage of the channel midpoint.
pub fn donchian_width(inp: &Inputs, window: usize) -> Vec<f64> {
    let hh = rolling_max(inp.high, window);
    let ll = rolling_min(inp.low, window);
    (0..inp.price.len())
        .map(|t| {
            if t + 1 < window {
                f64::NAN
            } else {
                100.0 * ratio_or(hh[t] - ll[t], (hh[t] + ll[t]) / 2.0, 0.0)
            }
        })
        .collect()
}

pub fn ulcer_index(price: &[f64], window: usize) -> Vec<f64> {
    let peak = rolling_max(price, window);
    let dd_sq: Vec<f64> = price
        .iter()
        .zip(&peak)
        .map(|(p, m)| (100.0 * ratio_or(p - m, *m, 0.0)).powi(2))
        .collect();
    let mut out = vec![f64::NAN; price.len()];
    for t in window.saturating_sub(1)..price.len() {
        out[t] = (dd_sq[t + 1 - window..=t].iter().sum::<f64>() / window as f64).sqrt();
    }
    out
}

/// Wilder average directional index.
pub fn adx(inp: &Inputs, window: usize) -> Vec<f64> {
    let n = inp.price.len();
    let mut out = vec![f64::NAN; n];
    if n < 2 * window {
        return out;
    }
    let tr = true_range(inp);
    let mut plus_dm = vec![0.0; n];
    let mut minus_dm = vec![0.0; n];
    for t in 1..n {
        let up = inp.high[t] - inp.high[t - 1];
        let down = inp.low[t - 1] - inp.low[t];
        if up > down && up > 0.0 {
            plus_dm[t] = up;
        }
        if down > up && down > 0.0 {
            minus_dm[t] = down;
        }
    }
    let w = window as f64;
    let mut s_tr: f64 = tr[1..=window].iter().sum();
    let mut s_plus: f64 = plus_dm[1..=window].iter().sum();
    let mut s_minus: f64 = minus_dm[1..=window].iter().sum();
    let mut dx = vec![f64::NAN; n];
    for t in window..n {
        if t > window {
            s_tr = s_tr - s_tr / w + tr[t];
            s_plus = s_plus - s_plus / w + plus_dm[t];
            s_minus = s_minus - s_minus / w + minus_dm[t];
        }
        let di_plus = 100.0 * ratio_or(s_plus, s_tr, 0.0);
        let di_minus = 100.0 * ratio_or(s_minus, s_tr, 0.0);
        dx[t] = 100.0 * ratio_or((di_plus - di_minus).abs(), di_plus + di_minus, 0.0);
    }
    let first = 2 * window - 1;
    let mut acc = dx[window..=first].iter().sum::<f64>() / w;
    out[first] = acc;
    for t in first + 1..n {
        acc = (acc * (w - 1.0) + dx[t]) / w;
        out[t] = acc;
    }
    out
}

/// Aroon line over the trailing `window + 1` bars. `pick_high` selects Aroon Up
/// (highest high) versus Aroon Down (lowest low); ties resolve to the most recent bar.
fn aroon(series: &[f64], window: usize, pick_high: bool) -> Vec<f64> {
    (0..series.len())
        .map(|t| {
            if t < window {
                return f64::NAN;
            }
            let mut best = t;
            for i in (t - window..=t).rev() {
                let better = if pick_high {
                    series[i] > series[best]
                } else {
                    series[i] < series[best]
                };
                if better {
                    best = i;
                }
            }
            100.0 * (window - (t - best)) as f64 / window as f64
        })
        .collect()
}

pub fn aroon_up(high: &[f64], window: usize) -> Vec<f64> {
    aroon(high, window, true)
}

pub fn aroon_down(low: &[f64], window: usize) -> Vec<f64> {
    aroon(low, window, false)
}

/// Ichimoku leading span A (unshifted): mean of the conversion and base lines.
pub fn ichimoku_a(inp: &Inputs, conversion: usize, base: usize) -> Vec<f64> {
    let mid = |w: usize| -> Vec<f64> {
        let hh = rolling_max(inp.high, w);
        let ll = rolling_min(inp.low, w);
        hh.iter().zip(&ll).map(|(h, l)| (h + l) / 2.0).collect()
    };
    let c = mid(conversion);
    let b = mid(base);
    let first = conversion.max(base) - 1;
    (0..inp.price.len())
        .map(|t| if t < first { f64::NAN } else { (c[t] + b[t]) / 2.0 })
        .collect()
}

/// Evaluates one indicator over a full series.
pub fn evaluate(spec: &FeatureSpec, inp: &Inputs) -> Result<Vec<f64>> {
    let w = |k: &str| spec.window(k);
    Ok(match spec.name.as_str() {
        "rsi" => rsi(inp.price, w("window")?),
        "stoch_rsi" => stoch_rsi(inp.price, w("window")?),
        "stoch" => stoch(inp, w("window")?),
        "awesome_osc" => awesome_oscillator(inp, w("short")?, w("long")?),
        "pvo" => pvo(inp.volume, w("fast")?, w("slow")?),
        "kama" => kama(inp.price, w("window")?, w("fast")?, w("slow")?),
        "williams_r" => williams_r(inp, w("window")?),
        "adi" => adi(inp),
        "eom" => ease_of_movement(inp, w("window")?),
        "force_index" => force_index(inp, w("window")?),
        "cmf" => cmf(inp, w("window")?),
        "vpt" => vpt(inp),
        "atr" => atr(inp, w("window")?),
        "bb_high" => bollinger_high(inp.price, w("window")?, spec.params["dev"]),
        "donchian_width" => donchian_width(inp, w("window")?),
        "ulcer_index" => ulcer_index(inp.price, w("window")?),
        "adx" => adx(inp, w("window")?),
        "aroon_up" => aroon_up(inp.high, w("window")?),
        "aroon_down" => aroon_down(inp.low, w("window")?),
        "ichimoku_a" => ichimoku_a(inp, w("conversion")?, w("base")?),
        other => return Err(IndicatorError::UnknownFeature(other.to_string())),
    })
}

/// Day-major feature values for one stock: `values[day * n_features + f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub warmups: Vec<usize>,
    pub n_days: usize,
    pub values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn get(&self, day: usize, feature: usize) -> Option<f64> {
        (day + 1 >= self.warmups[feature]).then(|| self.values[day * self.n_features() + feature])
    }

    fn from_columns(names: Vec<String>, warmups: Vec<usize>, columns: Vec<Vec<f64>>, n_days: usize) -> Self {
        let nf = columns.len();
        let mut values = vec![f64::NAN; n_days * nf];
        for (f, col) in columns.iter().enumerate() {
            for (d, v) in col.iter().enumerate() {
                values[d * nf + f] = if d + 1 >= warmups[f] {
                    // Post-death prices can divide by zero; keep the panel finite.
                    if v.is_finite() {
                        *v
                    } else {
                        0.0
                    }
                } else {
                    f64::NAN
                };
            }
        }
        FeatureMatrix {
            names,
            warmups,
            n_days,
            values,
        }
    }
}

/// The 12 basic features of [`BASIC_FEATURES`], computed from opens.
pub fn compute_basic_features(s: &StockSeries) -> FeatureMatrix {
    let cols = OpenColumns::from_series(s);
    let open = &cols.open;
    let n = open.len();
    let momentum = |k: usize| -> Vec<f64> {
        (0..n)
            .map(|t| if t >= k { open[t] / open[t - k] - 1.0 } else { f64::NAN })
            .collect()
    };
    let ma_ratio = |w: usize| -> Vec<f64> {
        sma(open, w)
            .iter()
            .zip(open)
            .map(|(m, o)| m / o)
            .collect()
    };
    let mut ret = vec![f64::NAN; n];
    for t in 1..n {
        ret[t] = open[t] / open[t - 1] - 1.0;
    }
    let ret_std = |w: usize| -> Vec<f64> {
        let mut out = vec![f64::NAN; n];
        if n > w {
            let tail = rolling_std(&ret[1..], w, 1);
            out[1..].copy_from_slice(&tail);
        }
        out
    };
    let range: Vec<f64> = (0..n).map(|t| (cols.high[t] - cols.low[t]) / open[t]).collect();
    let dollar: Vec<f64> = (0..n).map(|t| open[t] * cols.volume[t]).collect();
    let columns = vec![
        momentum(2),
        momentum(3),
        momentum(5),
        momentum(10),
        ma_ratio(5),
        ma_ratio(20),
        ma_ratio(50),
        ret_std(5),
        ret_std(20),
        range,
        cols.volume.clone(),
        dollar,
    ];
    FeatureMatrix::from_columns(
        BASIC_FEATURES.iter().map(|s| s.to_string()).collect(),
        BASIC_WARMUPS.to_vec(),
        columns,
        n,
    )
}

pub fn compute_technical_features(s: &StockSeries, specs: &[FeatureSpec]) -> Result<FeatureMatrix> {
    let cols = OpenColumns::from_series(s);
    let inp = cols.inputs();
    let columns = specs
        .iter()
        .map(|spec| evaluate(spec, &inp))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureMatrix::from_columns(
        specs.iter().map(|s| s.name.clone()).collect(),
        specs.iter().map(|s| s.warmup).collect(),
        columns,
        s.bars.len(),
    ))
}

/// Per-stock, per-day feature values: `values[(stock * n_days + day) * n_features + f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePanel {
    pub tickers: Vec<String>,
    pub calendar: Vec<NaiveDate>,
    pub feature_names: Vec<String>,
    pub warmups: Vec<usize>,
    pub values: Vec<f64>,
}

impl FeaturePanel {
    pub fn n_stocks(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// First day on which every feature is valid.
    pub fn first_valid_day(&self) -> usize {
        self.warmups.iter().copied().max().unwrap_or(1).saturating_sub(1)
    }

    pub fn is_valid(&self, day: usize, feature: usize) -> bool {
        day + 1 >= self.warmups[feature]
    }

    pub fn value(&self, stock: usize, day: usize, feature: usize) -> f64 {
        self.values[(stock * self.n_days() + day) * self.n_features() + feature]
    }

    /// The feature row of one stock on one day.
    pub fn row(&self, stock: usize, day: usize) -> &[f64] {
        let nf = self.n_features();
        let start = (stock * self.n_days() + day) * nf;
        &self.values[start..start + nf]
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// A panel restricted to the named features, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<FeaturePanel> {
        let idx = names
            .iter()
            .map(|n| self.feature_index(n).ok_or_else(|| IndicatorError::UnknownFeature(n.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let rows = self.n_stocks() * self.n_days();
        let nf = self.n_features();
        let mut values = Vec::with_capacity(rows * idx.len());
        for r in 0..rows {
            values.extend(idx.iter().map(|&f| self.values[r * nf + f]));
        }
        Ok(FeaturePanel {
            tickers: self.tickers.clone(),
            calendar: self.calendar.clone(),
            feature_names: names.iter().map(|s| s.to_string()).collect(),
            warmups: idx.iter().map(|&f| self.warmups[f]).collect(),
            values,
        })
    }

    /// Writes `ticker,date,<features...>`; masked values are empty cells.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["ticker".to_string(), "date".to_string()];
        header.extend(self.feature_names.iter().cloned());
        let err = |e: csv::Error| IndicatorError::Export(e.to_string());
        wtr.write_record(&header).map_err(err)?;
        for (s, ticker) in self.tickers.iter().enumerate() {
            for (d, date) in self.calendar.iter().enumerate() {
                let mut rec = vec![ticker.clone(), date.to_string()];
                for f in 0..self.n_features() {
                    rec.push(if self.is_valid(d, f) {
                        format!("{}", self.value(s, d, f))
                    } else {
                        String::new()
                    });
                }
                wtr.write_record(&rec).map_err(err)?;
            }
        }
        wtr.flush().map_err(|e| IndicatorError::Export(e.to_string()))
    }
}

/// Resolves indicator names to their standard specs, rejecting duplicates.
pub fn standard_specs(names: &[impl AsRef<str>]) -> Result<Vec<FeatureSpec>> {
    let mut seen = std::collections::HashSet::new();
    names
        .iter()
        .map(|n| {
            let n = n.as_ref();
            if !seen.insert(n.to_string()) {
                return Err(IndicatorError::Duplicate(n.to_string()));
            }
            FeatureSpec::standard(n)
        })
        .collect()
}

/// Builds the feature panel: basic features (if enabled) followed by `specs` in order.
pub fn assemble_panel(u: &Universe, basic: bool, specs: &[FeatureSpec]) -> Result<FeaturePanel> {
    let mut names: Vec<String> = Vec::new();
    let mut warmups: Vec<usize> = Vec::new();
    if basic {
        names.extend(BASIC_FEATURES.iter().map(|s| s.to_string()));
        warmups.extend(BASIC_WARMUPS);
    }
    for s in specs {
        if names.contains(&s.name) {
            return Err(IndicatorError::Duplicate(s.name.clone()));
        }
        names.push(s.name.clone());
        warmups.push(s.warmup);
    }
    let n_days = u.n_days();
    if let Some((i, &w)) = warmups.iter().enumerate().max_by_key(|(_, w)| **w) {
        if w > n_days {
            return Err(IndicatorError::InsufficientHistory {
                name: names[i].clone(),
                warmup: w,
                len: n_days,
            });
        }
    }
    let nf = names.len();
    let mut values = Vec::with_capacity(u.n_stocks() * n_days * nf);
    for stock in &u.stocks {
        let b = basic.then(|| compute_basic_features(stock));
        let t = compute_technical_features(stock, specs)?;
        for d in 0..n_days {
            if let Some(b) = &b {
                values.extend_from_slice(&b.values[d * 12..(d + 1) * 12]);
            }
            values.extend_from_slice(&t.values[d * specs.len()..(d + 1) * specs.len()]);
        }
    }
    Ok(FeaturePanel {
        tickers: u.tickers(),
        calendar: u.calendar.clone(),
        feature_names: names,
        warmups,
        values,
    })
}

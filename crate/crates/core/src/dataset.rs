//! Walk-forward splits, per-stock standardization, labels and samples.

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::indicators::FeaturePanel;
use crate::market_data::{StockSeries, Universe};

/// Guard for zero standard deviation in standardization.
pub const STD_EPSILON: f64 = 1e-8;
/// Days after the anchor read by a label: the opens of T+1 and T+2.
pub const LABEL_HORIZON: usize = 2;
pub const DEFAULT_RETURN_CAP: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("calendar of {len} days is too short; need at least {needed}")]
    CalendarTooShort { len: usize, needed: usize },
    #[error("invalid window configuration: {0}")]
    InvalidWindows(String),
    #[error("standardization range starts on day {start} but feature {feature} is only valid from day {valid_from}")]
    WarmupOverlap {
        start: usize,
        feature: String,
        valid_from: usize,
    },
    #[error("day {day} is out of range for a label (calendar has {len} days)")]
    OutOfRange { day: usize, len: usize },
    #[error("non-finite return {0}")]
    NonFiniteReturn(f64),
    #[error("invalid label scheme: {0}")]
    InvalidScheme(String),
    #[error("sample export: {0}")]
    Export(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// Window lengths of the walk-forward protocol, in trading days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub std_days: usize,
    pub trainval_days: usize,
    pub val_days: usize,
    pub test_days: usize,
    pub lookback: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            std_days: 200,
            trainval_days: 200,
            val_days: 20,
            test_days: 20,
            lookback: 20,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DatasetError::InvalidWindows(m.to_string()));
        if self.std_days < 2 || self.test_days == 0 || self.lookback == 0 {
            return bad("std_days >= 2, test_days >= 1 and lookback >= 1 are required");
        }
        if self.val_days == 0 || self.val_days >= self.trainval_days {
            return bad("val_days must be in [1, trainval_days)");
        }
        if self.lookback > self.std_days + 1 {
            return bad("lookback cannot reach before the standardization range");
        }
        Ok(())
    }

    /// Minimum calendar length for one plan: all three ranges, lookback headroom
    /// and the label horizon of the last test day.
    pub fn min_calendar_len(&self) -> usize {
        self.std_days + self.trainval_days + self.test_days + (self.lookback - 1) + LABEL_HORIZON
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub period_index: usize,
    pub std_range: Range<usize>,
    pub trainval_range: Range<usize>,
    pub test_range: Range<usize>,
}

impl SplitPlan {
    /// The same plan moved `offset` days later on the calendar.
    pub fn shifted(&self, offset: usize) -> SplitPlan {
        let mv = |r: &Range<usize>| r.start + offset..r.end + offset;
        SplitPlan {
            period_index: self.period_index,
            std_range: mv(&self.std_range),
            trainval_range: mv(&self.trainval_range),
            test_range: mv(&self.test_range),
        }
    }
}

pub fn build_split_plans(calendar_len: usize, m: usize) -> Result<Vec<SplitPlan>> {
    build_split_plans_with(
        calendar_len,
        &WindowConfig {
            lookback: m,
            ..WindowConfig::default()
        },
    )
}

/// Consecutive plans, each shifted by `test_days`, for as long as a full test
/// range plus its label horizon fits on the calendar.
pub fn build_split_plans_with(calendar_len: usize, cfg: &WindowConfig) -> Result<Vec<SplitPlan>> {
    cfg.validate()?;
    let needed = cfg.min_calendar_len();
    if calendar_len < needed {
        return Err(DatasetError::CalendarTooShort {
            len: calendar_len,
            needed,
        });
    }
    let span = cfg.std_days + cfg.trainval_days + cfg.test_days;
    let mut plans = Vec::new();
    let mut k = 0;
    loop {
        let start = k * cfg.test_days;
        if start + span + LABEL_HORIZON > calendar_len {
            break;
        }
        let tv = start + cfg.std_days;
        let test = tv + cfg.trainval_days;
        plans.push(SplitPlan {
            period_index: k,
            std_range: start..tv,
            trainval_range: tv..test,
            test_range: test..test + cfg.test_days,
        });
        k += 1;
    }
    Ok(plans)
}

/// Per (stock, feature) mean and standard deviation over a standardization range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub n_features: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardizationStats {
    pub fn mean(&self, stock: usize, feature: usize) -> f64 {
        self.mean[stock * self.n_features + feature]
    }

    pub fn std(&self, stock: usize, feature: usize) -> f64 {
        self.std[stock * self.n_features + feature]
    }
}

/// Standardized features for the days of one plan, from the start of its
/// standardization range to the end of its test range.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedPanel {
    pub first_day: usize,
    pub n_days: usize,
    pub n_stocks: usize,
    pub n_features: usize,
    pub values: Vec<f64>,
    pub stats: StandardizationStats,
}

impl StandardizedPanel {
    pub fn row(&self, stock: usize, day: usize) -> &[f64] {
        let start = (stock * self.n_days + (day - self.first_day)) * self.n_features;
        &self.values[start..start + self.n_features]
    }

    /// The `m × n` window of rows for days `anchor − m + 1 ..= anchor`, row-major.
    pub fn window(&self, stock: usize, anchor: usize, m: usize) -> &[f64] {
        assert!(anchor + 1 >= self.first_day + m, "window reaches before the panel");
        let start = (stock * self.n_days + (anchor + 1 - m - self.first_day)) * self.n_features;
        &self.values[start..start + m * self.n_features]
    }
}

/// Standardizes each stock's features with the mean and population standard
/// deviation of its own standardization range: `(x − μ) / max(σ, ε)`.
pub fn standardize(panel: &FeaturePanel, plan: &SplitPlan) -> Result<StandardizedPanel> {
    let nf = panel.n_features();
    for f in 0..nf {
        if !panel.is_valid(plan.std_range.start, f) {
            return Err(DatasetError::WarmupOverlap {
                start: plan.std_range.start,
                feature: panel.feature_names[f].clone(),
                valid_from: panel.warmups[f] - 1,
            });
        }
    }
    if plan.test_range.end > panel.n_days() {
        return Err(DatasetError::CalendarTooShort {
            len: panel.n_days(),
            needed: plan.test_range.end,
        });
    }
    let ns = panel.n_stocks();
    let first = plan.std_range.start;
    let n_days = plan.test_range.end - first;
    let count = plan.std_range.len() as f64;
    let mut mean = vec![0.0; ns * nf];
    let mut std = vec![0.0; ns * nf];
    for s in 0..ns {
        for f in 0..nf {
            let mu = plan.std_range.clone().map(|d| panel.value(s, d, f)).sum::<f64>() / count;
            let var = plan
                .std_range
                .clone()
                .map(|d| (panel.value(s, d, f) - mu).powi(2))
                .sum::<f64>()
                / count;
            mean[s * nf + f] = mu;
            std[s * nf + f] = var.sqrt();
        }
    }
    let mut values = Vec::with_capacity(ns * n_days * nf);
    for s in 0..ns {
        for d in first..plan.test_range.end {
            for f in 0..nf {
                let denom = std[s * nf + f].max(STD_EPSILON);
                values.push((panel.value(s, d, f) - mean[s * nf + f]) / denom);
            }
        }
    }
    Ok(StandardizedPanel {
        first_day: first,
        n_days,
        n_stocks: ns,
        n_features: nf,
        values,
        stats: StandardizationStats {
            n_features: nf,
            mean,
            std,
        },
    })
}

/// Open-to-open return from day T+1 to T+2, or 0 once the stock has died on or before T+2.
pub fn daily_return(s: &StockSeries, t: usize) -> Result<f64> {
    if t + LABEL_HORIZON >= s.bars.len() {
        return Err(DatasetError::OutOfRange {
            day: t,
            len: s.bars.len(),
        });
    }
    if s.death_day.is_some_and(|d| d <= t + 2) {
        return Ok(0.0);
    }
    let p1 = s.bars[t + 1].open;
    let p2 = s.bars[t + 2].open;
    Ok((p2 - p1) / p1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    StrongSell = 0,
    Sell = 1,
    Hold = 2,
    Buy = 3,
    StrongBuy = 4,
}

impl Label {
    pub const ALL: [Label; 5] = [
        Label::StrongSell,
        Label::Sell,
        Label::Hold,
        Label::Buy,
        Label::StrongBuy,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn one_hot(self) -> [f64; 5] {
        let mut v = [0.0; 5];
        v[self.index()] = 1.0;
        v
    }
}

/// Return thresholds for the five classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelScheme {
    /// Half-width of the Hold band (0.01).
    pub hold: f64,
    /// Magnitude at which a move becomes Strong (0.03).
    pub strong: f64,
    /// Cap applied to |r| for the loss weight (0.5).
    pub cap: f64,
}

impl Default for LabelScheme {
    fn default() -> Self {
        LabelScheme {
            hold: 0.01,
            strong: 0.03,
            cap: DEFAULT_RETURN_CAP,
        }
    }
}

impl LabelScheme {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.hold && self.hold < self.strong) || !(self.cap > 0.0) {
            return Err(DatasetError::InvalidScheme(format!(
                "need 0 < hold < strong and cap > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn label(&self, r: f64) -> Result<Label> {
        if !r.is_finite() {
            return Err(DatasetError::NonFiniteReturn(r));
        }
        Ok(if r >= self.strong {
            Label::StrongBuy
        } else if r > self.hold {
            Label::Buy
        } else if r > -self.hold {
            Label::Hold
        } else if r > -self.strong {
            Label::Sell
        } else {
            Label::StrongSell
        })
    }

    pub fn weight(&self, r: f64) -> f64 {
        r.abs().min(self.cap)
    }
}

/// Five-class label with the default ±1% / ±3% thresholds.
pub fn assign_label(r: f64) -> Result<Label> {
    LabelScheme::default().label(r)
}

/// Loss weight `|r_cap| = min(|r|, 0.5)`.
pub fn cap_return(r: f64) -> f64 {
    r.abs().min(DEFAULT_RETURN_CAP)
}

/// One (stock, anchor day) example. The feature window lives in the
/// [`StandardizedPanel`] the sample was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub stock: usize,
    pub anchor_day: usize,
    pub label: Label,
    pub r_d: f64,
    pub weight: f64,
    pub sector_id: u8,
}

impl Sample {
    pub fn window<'a>(&self, panel: &'a StandardizedPanel, m: usize) -> &'a [f64] {
        panel.window(self.stock, self.anchor_day, m)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleSets {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

fn samples_for(u: &Universe, days: Range<usize>, scheme: &LabelScheme) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(days.len() * u.n_stocks());
    for day in days {
        for (i, s) in u.stocks.iter().enumerate() {
            let r_d = daily_return(s, day)?;
            out.push(Sample {
                stock: i,
                anchor_day: day,
                label: scheme.label(r_d)?,
                r_d,
                weight: scheme.weight(r_d),
                sector_id: s.sector_id,
            });
        }
    }
    Ok(out)
}

/// Training, validation and test samples for one plan, ordered by (day, stock).
/// The training/validation range is split temporally: the last `val_days` days validate.
pub fn make_samples(
    panel: &StandardizedPanel,
    u: &Universe,
    plan: &SplitPlan,
    cfg: &WindowConfig,
    scheme: &LabelScheme,
) -> Result<SampleSets> {
    cfg.validate()?;
    scheme.validate()?;
    if plan.trainval_range.start + 1 < panel.first_day + cfg.lookback {
        return Err(DatasetError::InvalidWindows(format!(
            "lookback {} reaches before day {}",
            cfg.lookback, panel.first_day
        )));
    }
    let split = plan.trainval_range.end - cfg.val_days;
    Ok(SampleSets {
        train: samples_for(u, plan.trainval_range.start..split, scheme)?,
        val: samples_for(u, split..plan.trainval_range.end, scheme)?,
        test: samples_for(u, plan.test_range.clone(), scheme)?,
    })
}

/// Class frequencies of a sample set, in label order.
pub fn label_distribution(samples: &[Sample]) -> [f64; 5] {
    let mut counts = [0usize; 5];
    for s in samples {
        counts[s.label.index()] += 1;
    }
    let n = samples.len().max(1) as f64;
    counts.map(|c| c as f64 / n)
}

/// Debug dump: one row per sample with its flattened window.
pub fn write_samples_csv<W: Write>(
    w: W,
    samples: &[Sample],
    panel: &StandardizedPanel,
    u: &Universe,
    m: usize,
) -> Result<()> {
    let err = |e: csv::Error| DatasetError::Export(e.to_string());
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["ticker", "date", "label", "r_d", "weight", "sector_id"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for t in 0..m {
        for f in 0..panel.n_features {
            header.push(format!("x_{t}_{f}"));
        }
    }
    wtr.write_record(&header).map_err(err)?;
    for s in samples {
        let mut rec = vec![
            u.stocks[s.stock].ticker.clone(),
            u.calendar[s.anchor_day].to_string(),
            s.label.index().to_string(),
            s.r_d.to_string(),
            s.weight.to_string(),
            s.sector_id.to_string(),
        ];
        rec.extend(s.window(panel, m).iter().map(|v| v.to_string()));
        wtr.write_record(&rec).map_err(err)?;
    }
    wtr.flush().map_err(|e| DatasetError::Export(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::test_support::{day, universe_from_opens};
    use proptest::prelude::*;

    fn panel(n_stocks: usize, n_days: usize, n_features: usize, f: impl Fn(usize, usize, usize) -> f64) -> FeaturePanel {
        let mut values = Vec::new();
        for s in 0..n_stocks {
            for d in 0..n_days {
                for k in 0..n_features {
                    values.push(f(s, d, k));
                }
            }
        }
        FeaturePanel {
            tickers: (0..n_stocks).map(|i| format!("T{i}")).collect(),
            calendar: (0..n_days).map(day).collect(),
            feature_names: (0..n_features).map(|i| format!("f{i}")).collect(),
            warmups: vec![1; n_features],
            values,
        }
    }

    #[test]
    fn first_plan_ranges() {
        let plans = build_split_plans(1782, 20).unwrap();
        assert_eq!(plans[0].std_range, 0..200);
        assert_eq!(plans[0].trainval_range, 200..400);
        assert_eq!(plans[0].test_range, 400..420);
        for w in plans.windows(2) {
            assert_eq!(w[1].std_range.start, w[0].std_range.start + 20);
            assert_eq!(w[1].test_range.start, w[0].test_range.end);
        }
        let last = plans.last().unwrap();
        assert!(last.test_range.end + LABEL_HORIZON <= 1782);
        assert!(last.test_range.end + 20 + LABEL_HORIZON > 1782);
    }

    #[test]
    fn sixty_seven_periods_cover_1340_test_days() {
        // 400 days of standardization + training, 1340 test days, two label days.
        let plans = build_split_plans(400 + 1340 + 2, 20).unwrap();
        assert_eq!(plans.len(), 67);
        assert_eq!(plans.len() * 20, 1340);
    }

    #[test]
    fn short_calendar_rejected() {
        assert!(matches!(
            build_split_plans(421, 20),
            Err(DatasetError::CalendarTooShort { .. })
        ));
        assert_eq!(build_split_plans(441, 20).unwrap().len(), 1);
        assert!(build_split_plans(440, 20).is_err());
    }

    #[test]
    fn standardize_examples() {
        let plan = &build_split_plans(441, 20).unwrap()[0];
        // Constant feature: standardized value 0.
        let p = panel(1, 441, 1, |_, _, _| 5.0);
        let st = standardize(&p, plan).unwrap();
        assert_eq!(st.row(0, 410)[0], 0.0);

        // Alternating 8/12 gives mu 10, population sigma 2; raw 14 maps to 2.
        let p = panel(1, 441, 1, |_, d, _| if d >= 200 { 14.0 } else if d % 2 == 0 { 8.0 } else { 12.0 });
        let st = standardize(&p, plan).unwrap();
        assert_eq!(st.stats.mean(0, 0), 10.0);
        assert_eq!(st.stats.std(0, 0), 2.0);
        assert_eq!(st.row(0, 300)[0], 2.0);

        // Zero sigma: guarded by epsilon, finite.
        let p = panel(1, 441, 1, |_, d, _| if d >= 200 { 6.0 } else { 5.0 });
        let st = standardize(&p, plan).unwrap();
        assert_eq!(st.row(0, 300)[0], 1.0 / STD_EPSILON);
    }

    #[test]
    fn standardize_requires_valid_warmup() {
        let plan = &build_split_plans(441, 20).unwrap()[0];
        let mut p = panel(1, 441, 2, |_, _, _| 1.0);
        p.warmups[1] = 5;
        assert!(matches!(
            standardize(&p, plan),
            Err(DatasetError::WarmupOverlap { .. })
        ));
        let p = panel(1, 445, 2, |_, _, _| 1.0);
        let mut p = p;
        p.warmups[1] = 5;
        assert!(standardize(&p, &plan.shifted(3)).is_err());
        assert!(standardize(&p, &plan.shifted(4)).is_ok());
    }

    #[test]
    fn standardized_std_range_has_zero_mean_unit_std() {
        let plan = &build_split_plans(441, 20).unwrap()[0];
        let p = panel(3, 441, 4, |s, d, k| ((s * 7 + d * 13 + k * 29) % 17) as f64 * (k + 1) as f64 + (d as f64).sin());
        let st = standardize(&p, plan).unwrap();
        for s in 0..3 {
            for k in 0..4 {
                let xs: Vec<f64> = plan.std_range.clone().map(|d| st.row(s, d)[k]).collect();
                let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
                assert!(mean.abs() < 1e-9);
                assert!((var.sqrt() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn daily_return_examples() {
        let mut u = universe_from_opens(&[("A", vec![50.0, 100.0, 103.0, 103.0], 1)]);
        assert!((daily_return(&u.stocks[0], 0).unwrap() - 0.03).abs() < 1e-15);
        assert_eq!(daily_return(&u.stocks[0], 1).unwrap(), 0.0);
        assert!(daily_return(&u.stocks[0], 2).is_err());
        u.stocks[0].death_day = Some(2);
        assert_eq!(daily_return(&u.stocks[0], 0).unwrap(), 0.0);
        u.stocks[0].death_day = Some(3);
        assert_eq!(daily_return(&u.stocks[0], 0).unwrap(), (103.0 - 100.0) / 100.0);
    }

    #[test]
    fn label_examples() {
        assert_eq!(assign_label(0.05).unwrap(), Label::StrongBuy);
        assert_eq!(assign_label(0.03).unwrap(), Label::StrongBuy);
        assert_eq!(assign_label(0.02).unwrap(), Label::Buy);
        assert_eq!(assign_label(0.01).unwrap(), Label::Hold);
        assert_eq!(assign_label(-0.01).unwrap(), Label::Sell);
        assert_eq!(assign_label(-0.03).unwrap(), Label::StrongSell);
        assert_eq!(assign_label(-0.02).unwrap(), Label::Sell);
        assert_eq!(Label::StrongSell.one_hot(), [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(Label::StrongBuy.one_hot(), [0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(assign_label(f64::NAN).is_err());
        assert!(assign_label(f64::INFINITY).is_err());
    }

    #[test]
    fn cap_examples() {
        assert_eq!(cap_return(0.03), 0.03);
        assert_eq!(cap_return(0.7), 0.5);
        assert_eq!(cap_return(-0.8), 0.5);
        assert_eq!(cap_return(-0.02), 0.02);
    }

    fn ramp_universe(n_stocks: usize, n_days: usize) -> Universe {
        let series: Vec<(String, Vec<f64>, u64)> = (0..n_stocks)
            .map(|s| {
                let opens = (0..n_days)
                    .map(|d| 20.0 + ((d * (s + 3)) % 11) as f64 * 0.3)
                    .collect();
                (format!("T{s}"), opens, 1000)
            })
            .collect();
        let refs: Vec<(&str, Vec<f64>, u64)> = series.iter().map(|(t, o, v)| (t.as_str(), o.clone(), *v)).collect();
        universe_from_opens(&refs)
    }

    #[test]
    fn sample_counts_and_windows() {
        let u = ramp_universe(10, 441);
        let p = panel(10, 441, 3, |s, d, k| (s * 1000 + d * 3 + k) as f64);
        let plan = &build_split_plans(441, 20).unwrap()[0];
        let st = standardize(&p, plan).unwrap();
        let sets = make_samples(&st, &u, plan, &WindowConfig::default(), &LabelScheme::default()).unwrap();
        assert_eq!(sets.train.len(), 1800);
        assert_eq!(sets.val.len(), 200);
        assert_eq!(sets.test.len(), 200);
        assert!(sets.train.iter().all(|s| (200..380).contains(&s.anchor_day)));
        assert!(sets.val.iter().all(|s| (380..400).contains(&s.anchor_day)));

        // First training anchor: window rows are days 181..=200, chronological.
        let first = sets.train[0];
        assert_eq!(first.anchor_day, 200);
        let w = first.window(&st, 20);
        assert_eq!(w.len(), 60);
        assert_eq!(&w[..3], st.row(first.stock, 181));
        assert_eq!(&w[57..], st.row(first.stock, 200));
        for r in 1..20 {
            assert!(w[r * 3] > w[(r - 1) * 3]);
        }

        // Labels, weights and returns agree.
        for s in sets.train.iter().chain(&sets.test) {
            assert_eq!(s.label, assign_label(s.r_d).unwrap());
            assert_eq!(s.weight, cap_return(s.r_d));
            assert_eq!(s.r_d, daily_return(&u.stocks[s.stock], s.anchor_day).unwrap());
            assert!(s.anchor_day + LABEL_HORIZON < plan.test_range.end + LABEL_HORIZON);
        }
    }

    #[test]
    fn dead_stock_samples_have_zero_weight() {
        let mut u = ramp_universe(2, 441);
        u.stocks[1].death_day = Some(300);
        let p = panel(2, 441, 1, |s, d, _| (s + d) as f64);
        let plan = &build_split_plans(441, 20).unwrap()[0];
        let st = standardize(&p, plan).unwrap();
        let sets = make_samples(&st, &u, plan, &WindowConfig::default(), &LabelScheme::default()).unwrap();
        for s in sets.train.iter().filter(|s| s.stock == 1 && s.anchor_day >= 298) {
            assert_eq!(s.weight, 0.0);
            assert_eq!(s.label, Label::Hold);
        }
    }

    #[test]
    fn sample_export_has_one_row_per_sample() {
        let u = ramp_universe(2, 441);
        let p = panel(2, 441, 2, |s, d, k| (s + d + k) as f64);
        let plan = &build_split_plans(441, 20).unwrap()[0];
        let st = standardize(&p, plan).unwrap();
        let sets = make_samples(&st, &u, plan, &WindowConfig::default(), &LabelScheme::default()).unwrap();
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &sets.test, &st, &u, 20).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 41);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 6 + 40);
    }

    proptest! {
        #[test]
        fn labels_partition_the_reals(r in -0.2f64..0.2) {
            let l = assign_label(r).unwrap();
            let expected = [r <= -0.03, -0.03 < r && r <= -0.01, -0.01 < r && r <= 0.01, 0.01 < r && r < 0.03, r >= 0.03];
            prop_assert_eq!(expected.iter().filter(|b| **b).count(), 1);
            prop_assert!(expected[l.index()]);
        }

        #[test]
        fn weight_zero_iff_return_zero(r in prop_oneof![Just(0.0), Just(-0.0), -1.0f64..1.0]) {
            let w = cap_return(r);
            prop_assert!((0.0..=0.5).contains(&w));
            prop_assert_eq!(w == 0.0, r == 0.0);
        }

        #[test]
        fn strong_labels_outweigh_hold(r in -0.6f64..0.6, h in -0.01f64..=0.01) {
            let l = assign_label(r).unwrap();
            if matches!(l, Label::StrongBuy | Label::StrongSell) {
                prop_assert!(cap_return(r) >= 0.03);
                prop_assert!(cap_return(r) > cap_return(h));
            }
        }
    }

    #[test]
    fn boundary_values_are_exact() {
        for (r, l) in [
            (0.01, Label::Hold),
            (-0.01, Label::Sell),
            (0.03, Label::StrongBuy),
            (-0.03, Label::StrongSell),
            (0.0, Label::Hold),
        ] {
            assert_eq!(assign_label(r).unwrap(), l);
        }
    }

    #[test]
    fn symmetric_returns_give_symmetric_labels() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = Normal::new(0.0, 0.02).unwrap();
        let samples: Vec<Sample> = (0..200_000)
            .map(|i| {
                let r: f64 = n.sample(&mut rng);
                Sample { stock: 0, anchor_day: i, label: assign_label(r).unwrap(), r_d: r, weight: cap_return(r), sector_id: 0 }
            })
            .collect();
        let d = label_distribution(&samples);
        // Four standard errors of a proportion near 0.2 at n = 2e5.
        let tol = 4.0 * (0.25f64 / 200_000.0).sqrt() * 2.0;
        assert!((d[0] - d[4]).abs() < tol, "{d:?}");
        assert!((d[1] - d[3]).abs() < tol, "{d:?}");
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

//! End-to-end walk-forward run: data → features → train → backtest → report.
//!
//! Output layout under the run directory:
//!
//! | path | contents |
//! |------|----------|
//! | `config.json` | resolved config |
//! | `data/` | generated OHLCV, sectors and planted events (synthetic runs only) |
//! | `checkpoints/pNNN/<model>.ensemble` | CNN ensembles after period NNN |
//! | `checkpoints/pNNN/<model>.csv` | linear baseline coefficients |
//! | `training/pNNN.json` | per-member training histories and MoE weights |
//! | `predictions/pNNN.csv` | `model,date,ticker,score` for every test day |
//! | `ledgers/pNNN/<model>_<strategy>.csv` | per-period ledgers |
//! | `reports/pNNN.json` | per-period metrics |
//! | `ledgers/<model>_<strategy>.csv` | full-run ledgers |
//! | `nav/<model>_<strategy>.csv` | `date,value` curves |
//! | `metrics.json`, `grid.csv`, `comparison.csv` | consolidated report |
//! | `manifest.json` | version, config hash and sha256 of every artifact |

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::{build_report, comparison_table, metric_grid, write_comparison_csv, ComparisonRow, MetricGrid, MetricsReport, RiskFree, StrategySet};
use crate::backtest::{combine_strategies, market_ledger, rank, simulate, BacktestLedger, DailyRanking, DayReturns, SimConfig, Strategy};
use crate::baselines::{baseline_predict, fit_method, preset, Design, Method, RegressionFit};
use crate::checkpoint::save_ensemble;
use crate::config::RunConfig;
use crate::dataset::{build_split_plans_with, daily_return, make_samples, standardize, Sample, SampleSets, SplitPlan, StandardizedPanel};
use crate::error::{Error, Result};
use crate::indicators::{assemble_panel, standard_specs, FeaturePanel, TECHNICAL_FEATURES};
use crate::losses::LossKind;
use crate::market_data::{apply_dead_stock_rule, filter_by_dollar_volume, load_ohlcv_with, LoadOptions, Universe};
use crate::models::{derive_seed, output_score, predict_samples, train_period, Ensemble, Model, TrainHistory};
use crate::synth::{self, PlantedEvent};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MODULES: [&str; 10] = [
    "market_data",
    "indicators",
    "dataset",
    "nn_core",
    "losses",
    "models",
    "baselines",
    "backtest",
    "analytics",
    "cli",
];
pub const COMBINED_MODEL: &str = "CNN_Combined";
pub const MARKET_MODEL: &str = "Market";

pub fn cnn_name(kind: LossKind) -> &'static str {
    match kind {
        LossKind::ReturnWeighted => "CNN_New",
        LossKind::CrossEntropy => "CNN_CE",
        LossKind::Mse => "CNN_MSE",
    }
}

pub fn baseline_name(m: Method) -> &'static str {
    match m {
        Method::Ols => "OLS",
        Method::Ridge => "Ridge",
        Method::Lasso => "Lasso",
    }
}

pub fn file_stem(model: &str) -> String {
    model.to_lowercase()
}

pub fn period_dir(p: usize) -> String {
    format!("p{p:03}")
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io("cli", path, e)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::io("cli", path, e))?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Loaded data, features and walk-forward plans.
pub struct Prepared {
    pub universe: Universe,
    pub panel: FeaturePanel,
    /// Wider panel for the linear baselines, restricted to the configured preset.
    pub baseline_panel: Option<FeaturePanel>,
    pub plans: Vec<SplitPlan>,
    pub events: Vec<PlantedEvent>,
}

pub fn load_universe(cfg: &RunConfig) -> Result<(Universe, Vec<PlantedEvent>)> {
    let (u, events) = match (&cfg.data.synth, &cfg.data.ohlcv, &cfg.data.sectors) {
        (Some(spec), _, _) => {
            let d = synth::generate(spec, cfg.seed)?;
            (d.universe, d.events)
        }
        (None, Some(o), Some(s)) => {
            let opts = LoadOptions {
                start: cfg.data.start,
                end: cfg.data.end,
                price_floor: cfg.universe.price_floor,
            };
            (load_ohlcv_with(o, s, &opts)?, Vec::new())
        }
        _ => return Err(Error::config("config", "no data source")),
    };
    let u = filter_by_dollar_volume(u, cfg.universe.dollar_volume_threshold)?;
    let u = apply_dead_stock_rule(u, cfg.universe.price_floor)?;
    Ok((u, events))
}

pub fn feature_panel(cfg: &RunConfig, u: &Universe) -> Result<FeaturePanel> {
    Ok(assemble_panel(u, cfg.features.basic, &standard_specs(&cfg.features.technical)?)?)
}

/// Everything the run needs before any output is written.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (universe, events) = load_universe(cfg)?;
    let panel = feature_panel(cfg, &universe)?;
    let baseline_panel = if cfg.baselines.methods.is_empty() {
        None
    } else {
        let mut names: Vec<&str> = TECHNICAL_FEATURES.to_vec();
        names.push("rsi");
        let full = assemble_panel(&universe, true, &standard_specs(&names)?)?;
        let cols = preset(&cfg.baselines.preset)?;
        Some(full.select(&cols.iter().map(String::as_str).collect::<Vec<_>>())?)
    };
    let offset = panel
        .first_valid_day()
        .max(baseline_panel.as_ref().map_or(0, |p| p.first_valid_day()));
    let len = universe.n_days().saturating_sub(offset);
    let mut plans: Vec<SplitPlan> = build_split_plans_with(len, &cfg.windows)?
        .into_iter()
        .map(|p| p.shifted(offset))
        .collect();
    if let Some(n) = cfg.max_periods {
        plans.truncate(n);
    }
    let k_cap = universe.n_stocks();
    if cfg.backtest.k > k_cap {
        return Err(Error::config("backtest", format!("k = {} exceeds the {k_cap} stocks in the universe", cfg.backtest.k)));
    }
    Ok(Prepared {
        universe,
        panel,
        baseline_panel,
        plans,
        events,
    })
}

/// Held-out returns for the test days of one plan.
pub fn test_day_returns(u: &Universe, plan: &SplitPlan) -> Result<Vec<DayReturns>> {
    plan.test_range
        .clone()
        .map(|t| {
            let mut returns = BTreeMap::new();
            let mut alive = std::collections::BTreeSet::new();
            for s in &u.stocks {
                returns.insert(s.ticker.clone(), daily_return(s, t)?);
                if s.is_alive(t) {
                    alive.insert(s.ticker.clone());
                }
            }
            Ok(DayReturns {
                date: u.calendar[t],
                returns,
                alive,
            })
        })
        .collect()
}

/// Groups per-sample scores into one ranking per test day.
pub fn rankings_from_scores(u: &Universe, samples: &[Sample], scores: &[f64]) -> Result<Vec<DailyRanking>> {
    let mut by_day: BTreeMap<usize, Vec<(String, f64)>> = BTreeMap::new();
    for (s, v) in samples.iter().zip(scores) {
        by_day.entry(s.anchor_day).or_default().push((u.stocks[s.stock].ticker.clone(), *v));
    }
    Ok(by_day
        .into_iter()
        .map(|(d, sc)| rank(u.calendar[d], &sc))
        .collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberLog {
    pub history: TrainHistory,
    /// Compounded top-k return of this member alone over the test period.
    pub test_return: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelLog {
    /// Combination weights used for this period's test predictions.
    pub weights: Vec<f64>,
    pub members: Vec<MemberLog>,
}

/// Rankings of every model for every test day of one period.
pub type PeriodRankings = BTreeMap<String, Vec<DailyRanking>>;

struct PeriodData {
    std_panel: StandardizedPanel,
    sets: SampleSets,
    returns: Vec<DayReturns>,
}

/// Owns the run directory for the duration of a run.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("run.lock");
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| Error::data("cli", format!("cannot lock {}: {e} (another run may own this directory)", path.display())))?;
        writeln!(f, "{}", std::process::id()).map_err(io_err(&path))?;
        Ok(RunLock { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn member_seed(cfg: &RunConfig, kind: LossKind, member: usize) -> u64 {
    let k = LossKind::ALL.iter().position(|x| *x == kind).unwrap() as u64;
    derive_seed(cfg.seed, 1000 + k * 100 + member as u64)
}

fn train_seed(cfg: &RunConfig, kind: LossKind, member: usize, period: usize) -> u64 {
    derive_seed(member_seed(cfg, kind, member), 1 + period as u64)
}

/// Walk-forward state carried between periods.
pub struct Trainer<'a> {
    cfg: &'a RunConfig,
    prep: &'a Prepared,
    pub ensembles: Vec<(LossKind, Ensemble)>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a RunConfig, prep: &'a Prepared) -> Result<Self> {
        let n = prep.panel.n_features();
        let ensembles = cfg
            .losses
            .iter()
            .map(|&kind| {
                let members = (0..cfg.ensemble.members)
                    .map(|j| Model::new(cfg.arch(n, kind), member_seed(cfg, kind, j)))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                Ok((kind, Ensemble::new(members, cfg.ensemble.combine)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Trainer { cfg, prep, ensembles })
    }

    fn period_data(&self, plan: &SplitPlan) -> Result<PeriodData> {
        let std_panel = standardize(&self.prep.panel, plan)?;
        let sets = make_samples(&std_panel, &self.prep.universe, plan, &self.cfg.windows, &self.cfg.labels)?;
        Ok(PeriodData {
            returns: test_day_returns(&self.prep.universe, plan)?,
            std_panel,
            sets,
        })
    }

    /// Trains every member on one period, scores the test days with the
    /// current combination weights, then records each member's test return.
    pub fn run_period(&mut self, plan: &SplitPlan) -> Result<(PeriodRankings, BTreeMap<String, ModelLog>)> {
        let d = self.period_data(plan)?;
        let cfg = self.cfg;
        let period = plan.period_index;
        let histories: Vec<Vec<TrainHistory>> = std::thread::scope(|s| {
            let handles: Vec<Vec<_>> = self
                .ensembles
                .iter_mut()
                .map(|(kind, ens)| {
                    let kind = *kind;
                    let hp = cfg.model.hyper.get(kind).clone();
                    let d = &d;
                    ens.members
                        .iter_mut()
                        .enumerate()
                        .map(|(j, model)| {
                            let hp = hp.clone();
                            let seed = train_seed(cfg, kind, j, period);
                            s.spawn(move || train_period(model, &d.std_panel, &d.sets.train, &d.sets.val, &hp, seed))
                        })
                        .collect()
                })
                .collect();
            handles
                .into_iter()
                .map(|hs| {
                    hs.into_iter()
                        .map(|h| h.join().expect("training thread panicked").map_err(Error::from))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let mut rankings = PeriodRankings::new();
        let mut logs = BTreeMap::new();
        for ((kind, ens), hist) in self.ensembles.iter_mut().zip(histories) {
            let outs = ens
                .members
                .iter()
                .map(|m| predict_samples(m, &d.std_panel, &d.sets.test))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let weights = ens.weights();
            let combined: Vec<f64> = ens.combine(&outs).iter().map(|o| output_score(o)).collect();
            let mut member_logs = Vec::new();
            let mut member_returns = Vec::new();
            for (out, history) in outs.iter().zip(hist) {
                let scores: Vec<f64> = out.iter().map(|o| output_score(o)).collect();
                let rk = rankings_from_scores(&self.prep.universe, &d.sets.test, &scores)?;
                let sim = SimConfig {
                    k: cfg.backtest.k,
                    mode: cfg.backtest.rebalance_mode,
                };
                let r = simulate(Strategy::TopK, &rk, &d.returns, &sim)?.final_value() - 1.0;
                member_returns.push(r);
                member_logs.push(MemberLog { history, test_return: r });
            }
            ens.record_period_returns(&member_returns)?;
            let name = cnn_name(*kind).to_string();
            rankings.insert(name.clone(), rankings_from_scores(&self.prep.universe, &d.sets.test, &combined)?);
            logs.insert(name, ModelLog { weights, members: member_logs });
        }
        Ok((rankings, logs))
    }

    /// Fits the linear baselines on the training and validation days of one plan.
    pub fn run_baselines(&self, plan: &SplitPlan) -> Result<(PeriodRankings, BTreeMap<String, RegressionFit>)> {
        let mut rankings = PeriodRankings::new();
        let mut fits = BTreeMap::new();
        let Some(bp) = &self.prep.baseline_panel else {
            return Ok((rankings, fits));
        };
        let std_panel = standardize(bp, plan)?;
        let sets = make_samples(&std_panel, &self.prep.universe, plan, &self.cfg.windows, &self.cfg.labels)?;
        let cols: Vec<usize> = (0..bp.n_features()).collect();
        let fit_rows: Vec<Sample> = sets.train.iter().chain(&sets.val).cloned().collect();
        let x = Design::from_samples(&std_panel, &fit_rows, &cols, bp.feature_names.clone());
        let y: Vec<f64> = fit_rows.iter().map(|s| s.r_d).collect();
        let xt = Design::from_samples(&std_panel, &sets.test, &cols, bp.feature_names.clone());
        for &m in &self.cfg.baselines.methods {
            let fit = fit_method(m, &x, &y)?;
            let scores = baseline_predict(&fit, &xt);
            let name = baseline_name(m).to_string();
            rankings.insert(name.clone(), rankings_from_scores(&self.prep.universe, &sets.test, &scores)?);
            fits.insert(name, fit);
        }
        Ok((rankings, fits))
    }
}

pub fn write_predictions(path: &Path, rankings: &PeriodRankings) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| Error::io("cli", path, e);
    w.write_record(["model", "date", "ticker", "score"]).map_err(err)?;
    for (model, days) in rankings {
        for d in days {
            for (t, s) in &d.entries {
                w.write_record([model.as_str(), &d.date.to_string(), t, &s.to_string()]).map_err(err)?;
            }
        }
    }
    w.flush().map_err(io_err(path))
}

pub fn read_predictions(path: &Path) -> Result<PeriodRankings> {
    let err = |e: csv::Error| Error::io("cli", path, e);
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let mut raw: BTreeMap<String, BTreeMap<NaiveDate, Vec<(String, f64)>>> = BTreeMap::new();
    for rec in r.deserialize::<(String, NaiveDate, String, f64)>() {
        let (model, date, ticker, score) = rec.map_err(err)?;
        raw.entry(model).or_default().entry(date).or_default().push((ticker, score));
    }
    raw.into_iter()
        .map(|(m, days)| {
            let rk = days
                .into_iter()
                .map(|(d, sc)| rank(d, &sc))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok((m, rk))
        })
        .collect()
}

/// Configured per-model strategies. The market benchmark is simulated once, not per model.
pub fn model_strategies(cfg: &RunConfig) -> Vec<Strategy> {
    cfg.backtest.strategies.iter().copied().filter(|s| *s != Strategy::Market).collect()
}

/// Every configured strategy for every model, plus the market and, with more
/// than one CNN, the equal-capital blend of the CNN ensembles.
pub fn backtest_period(
    cfg: &RunConfig,
    rankings: &PeriodRankings,
    returns: &[DayReturns],
) -> Result<(BTreeMap<String, StrategySet>, BacktestLedger)> {
    let sim = SimConfig {
        k: cfg.backtest.k,
        mode: cfg.backtest.rebalance_mode,
    };
    let market = market_ledger(returns)?;
    let mut out: BTreeMap<String, StrategySet> = BTreeMap::new();
    for (model, rk) in rankings {
        let mut set = StrategySet::new();
        for s in model_strategies(cfg) {
            set.insert(s, simulate(s, rk, returns, &sim)?);
        }
        out.insert(model.clone(), set);
    }
    let cnns: Vec<&str> = cfg.losses.iter().map(|k| cnn_name(*k)).filter(|n| out.contains_key(*n)).collect();
    if cnns.len() > 1 {
        let mut set = StrategySet::new();
        for s in model_strategies(cfg) {
            let parts: Vec<BacktestLedger> = cnns.iter().map(|n| out[*n][&s].clone()).collect();
            set.insert(s, combine_strategies(&parts)?);
        }
        out.insert(COMBINED_MODEL.to_string(), set);
    }
    Ok((out, market))
}

pub fn ledger_name(model: &str, s: Strategy) -> String {
    format!("{}_{}.csv", file_stem(model), s.name())
}

pub fn write_ledgers(dir: &Path, sets: &BTreeMap<String, StrategySet>, market: &BacktestLedger) -> Result<()> {
    let write = |path: PathBuf, l: &BacktestLedger| -> Result<()> {
        let mut w = create(&path)?;
        l.write_csv(&mut w).map_err(io_err(&path))?;
        w.flush().map_err(io_err(&path))
    };
    for (model, set) in sets {
        for (s, l) in set {
            write(dir.join(ledger_name(model, *s)), l)?;
        }
    }
    write(dir.join(ledger_name(MARKET_MODEL, Strategy::Market)), market)
}

pub fn read_ledgers(dir: &Path, cfg: &RunConfig, models: &[String]) -> Result<(BTreeMap<String, StrategySet>, BacktestLedger)> {
    let read = |model: &str, s: Strategy| -> Result<BacktestLedger> {
        let path = dir.join(ledger_name(model, s));
        let f = File::open(&path).map_err(io_err(&path))?;
        Ok(BacktestLedger::read_csv(f, s.name(), cfg.backtest.k)?)
    };
    let mut sets = BTreeMap::new();
    for m in models {
        let mut set = StrategySet::new();
        for s in model_strategies(cfg) {
            set.insert(s, read(m, s)?);
        }
        sets.insert(m.clone(), set);
    }
    Ok((sets, read(MARKET_MODEL, Strategy::Market)?))
}

/// Consolidated metrics for one set of ledgers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub version: String,
    pub config_hash: String,
    pub test_days: usize,
    pub first_test_date: Option<NaiveDate>,
    pub last_test_date: Option<NaiveDate>,
    pub models: BTreeMap<String, BTreeMap<String, MetricsReport>>,
    pub market: MetricsReport,
    pub grid: MetricGrid,
    pub comparison: Vec<ComparisonRow>,
}

/// Every model name the config can produce, in report order.
pub fn candidate_models(cfg: &RunConfig) -> Vec<String> {
    let mut names: Vec<String> = cfg.losses.iter().map(|k| cnn_name(*k).to_string()).collect();
    names.push(COMBINED_MODEL.to_string());
    names.extend(cfg.baselines.methods.iter().map(|m| baseline_name(*m).to_string()));
    names
}

fn model_order(cfg: &RunConfig, present: &BTreeMap<String, StrategySet>) -> Vec<String> {
    candidate_models(cfg).into_iter().filter(|n| present.contains_key(n)).collect()
}

pub fn build_metrics(cfg: &RunConfig, sets: &BTreeMap<String, StrategySet>, market: &BacktestLedger, rf: &RiskFree) -> Result<MetricsDoc> {
    let kind = cfg.analytics.t_test;
    let order = model_order(cfg, sets);
    let mut models = BTreeMap::new();
    for name in &order {
        let mut reports = BTreeMap::new();
        for (s, l) in &sets[name] {
            reports.insert(s.name().to_string(), build_report(l, Some(market), rf, kind)?);
        }
        models.insert(name.clone(), reports);
    }
    let grid_cols: Vec<(String, &StrategySet)> = order.iter().map(|n| (n.clone(), &sets[n])).collect();
    let top: Vec<(String, &BacktestLedger)> = order
        .iter()
        .filter_map(|n| sets[n].get(&Strategy::TopK).map(|l| (n.clone(), l)))
        .collect();
    Ok(MetricsDoc {
        version: VERSION.to_string(),
        config_hash: cfg.hash(),
        test_days: market.days.len(),
        first_test_date: market.days.first().map(|d| d.date),
        last_test_date: market.days.last().map(|d| d.date),
        models,
        market: build_report(market, None, rf, kind)?,
        grid: metric_grid(&grid_cols, rf)?,
        comparison: comparison_table(&top, market, rf, kind)?,
    })
}

pub fn load_rf(cfg: &RunConfig) -> Result<RiskFree> {
    match &cfg.analytics.rf_path {
        None => Ok(RiskFree::default()),
        Some(p) => Ok(RiskFree::read_csv(File::open(p).map_err(io_err(p))?)?),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub modules: BTreeMap<String, String>,
    pub files: Vec<ManifestEntry>,
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .map_err(io_err(dir))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name != "manifest.json" && name != "run.lock" {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    Ok(())
}

/// Lists every artifact under `dir` with its digest. No timestamps, so identical runs give identical manifests.
pub fn write_manifest(dir: &Path, cfg: &RunConfig) -> Result<Manifest> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    let files = files
        .into_iter()
        .map(|rel| {
            let bytes = fs::read(dir.join(&rel)).map_err(io_err(&rel))?;
            Ok(ManifestEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let m = Manifest {
        version: VERSION.to_string(),
        config_hash: cfg.hash(),
        modules: MODULES.iter().map(|m| (m.to_string(), VERSION.to_string())).collect(),
        files,
    };
    write_json(&dir.join("manifest.json"), &m)?;
    Ok(m)
}

/// Ledgers per period, keyed by period index.
pub type PeriodLedgers = Vec<(usize, BTreeMap<String, StrategySet>, BacktestLedger)>;

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub rankings: Vec<(usize, PeriodRankings)>,
}

/// Trains through every plan, writing checkpoints, training logs and predictions.
pub fn train_stage(cfg: &RunConfig, prep: &Prepared, out: &Path) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(cfg, prep)?;
    let mut all = Vec::new();
    for plan in &prep.plans {
        let p = plan.period_index;
        let pd = period_dir(p);
        let (mut rankings, logs) = trainer.run_period(plan)?;
        let (base, fits) = trainer.run_baselines(plan)?;
        rankings.extend(base);
        for (kind, ens) in &trainer.ensembles {
            let path = out.join("checkpoints").join(&pd).join(format!("{}.ensemble", file_stem(cnn_name(*kind))));
            fs::create_dir_all(path.parent().unwrap()).map_err(io_err(&path))?;
            save_ensemble(ens, &path)?;
        }
        for (name, fit) in &fits {
            let path = out.join("checkpoints").join(&pd).join(format!("{}.csv", file_stem(name)));
            let mut w = create(&path)?;
            fit.write_csv(&mut w).map_err(io_err(&path))?;
            w.flush().map_err(io_err(&path))?;
        }
        write_json(&out.join("training").join(format!("{pd}.json")), &logs)?;
        write_predictions(&out.join("predictions").join(format!("{pd}.csv")), &rankings)?;
        all.push((p, rankings));
    }
    Ok(TrainOutput { rankings: all })
}

/// Backtests each period's rankings and writes per-period ledgers and reports.
pub fn backtest_stage(cfg: &RunConfig, prep: &Prepared, train: &TrainOutput, out: &Path) -> Result<PeriodLedgers> {
    let rf = load_rf(cfg)?;
    let mut res = Vec::new();
    for (p, rankings) in &train.rankings {
        let plan = prep
            .plans
            .iter()
            .find(|x| x.period_index == *p)
            .ok_or_else(|| Error::data("cli", format!("predictions for unknown period {p}")))?;
        let returns = test_day_returns(&prep.universe, plan)?;
        let (sets, market) = backtest_period(cfg, rankings, &returns)?;
        let pd = period_dir(*p);
        write_ledgers(&out.join("ledgers").join(&pd), &sets, &market)?;
        write_json(&out.join("reports").join(format!("{pd}.json")), &build_metrics(cfg, &sets, &market, &rf)?)?;
        res.push((*p, sets, market));
    }
    Ok(res)
}

/// Chains per-period ledgers and writes the consolidated report.
pub fn report_stage(cfg: &RunConfig, periods: &PeriodLedgers, out: &Path) -> Result<MetricsDoc> {
    if periods.is_empty() {
        return Err(Error::data("cli", "no periods to report"));
    }
    let rf = load_rf(cfg)?;
    let mut sets: BTreeMap<String, StrategySet> = BTreeMap::new();
    for model in periods[0].1.keys() {
        let mut set = StrategySet::new();
        for s in periods[0].1[model].keys() {
            let parts: Vec<BacktestLedger> = periods.iter().map(|(_, ps, _)| ps[model][s].clone()).collect();
            set.insert(*s, BacktestLedger::concat(&parts)?);
        }
        sets.insert(model.clone(), set);
    }
    let market = BacktestLedger::concat(&periods.iter().map(|p| p.2.clone()).collect::<Vec<_>>())?;
    write_ledgers(&out.join("ledgers"), &sets, &market)?;
    let nav_dir = out.join("nav");
    let mut navs: Vec<(String, &BacktestLedger)> = vec![(ledger_name(MARKET_MODEL, Strategy::Market), &market)];
    for (m, set) in &sets {
        for (s, l) in set {
            navs.push((ledger_name(m, *s), l));
        }
    }
    for (name, l) in navs {
        let path = nav_dir.join(name);
        let mut w = csv::Writer::from_writer(create(&path)?);
        let err = |e: csv::Error| Error::io("cli", &path, e);
        w.write_record(["date", "value"]).map_err(err)?;
        w.write_record(["", "1"]).map_err(err)?;
        for d in &l.days {
            w.write_record([d.date.to_string(), d.value.to_string()]).map_err(err)?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    let doc = build_metrics(cfg, &sets, &market, &rf)?;
    write_json(&out.join("metrics.json"), &doc)?;
    let path = out.join("grid.csv");
    let mut w = create(&path)?;
    doc.grid.write_csv(&mut w).map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))?;
    let path = out.join("comparison.csv");
    let mut w = create(&path)?;
    write_comparison_csv(&doc.comparison, &mut w).map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))?;
    Ok(doc)
}

/// Writes the resolved config and, for synthetic runs, the generated data.
pub fn write_inputs(cfg: &RunConfig, prep: &Prepared, out: &Path) -> Result<()> {
    let path = out.join("config.json");
    let mut w = create(&path)?;
    w.write_all(cfg.to_json().as_bytes()).map_err(io_err(&path))?;
    w.write_all(b"\n").map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))?;
    if cfg.data.synth.is_some() {
        let data = synth::SynthData {
            universe: prep.universe.clone(),
            events: prep.events.clone(),
        };
        synth::write_all(&data, &out.join("data"))?;
    }
    Ok(())
}

/// Full pipeline. Nothing is written until the config and data have been validated.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<MetricsDoc> {
    let prep = prepare(cfg)?;
    let _lock = RunLock::acquire(out)?;
    write_inputs(cfg, &prep, out)?;
    let train = train_stage(cfg, &prep, out)?;
    let periods = backtest_stage(cfg, &prep, &train, out)?;
    let doc = report_stage(cfg, &periods, out)?;
    write_manifest(out, cfg)?;
    Ok(doc)
}

/// Reads the config saved in a run directory.
pub fn load_run_config(dir: &Path) -> Result<RunConfig> {
    let path = dir.join("config.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(RunConfig::from_json(&text)?)
}

/// Period indices with saved predictions, in order.
pub fn saved_periods(dir: &Path, sub: &str) -> Result<Vec<usize>> {
    let d = dir.join(sub);
    let mut ps: Vec<usize> = fs::read_dir(&d)
        .map_err(io_err(&d))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().to_string();
            name.strip_prefix('p')?.split('.').next()?.parse().ok()
        })
        .collect();
    ps.sort_unstable();
    ps.dedup();
    Ok(ps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DataConfig;
    use crate::dataset::WindowConfig;
    use crate::models::ConvSpec;
    use crate::synth::SynthSpec;

    pub(crate) fn tiny_config() -> RunConfig {
        let mut c = RunConfig {
            data: DataConfig {
                synth: Some(SynthSpec {
                    n_stocks: 12,
                    n_days: 140,
                    ..Default::default()
                }),
                ..Default::default()
            },
            windows: WindowConfig {
                std_days: 30,
                trainval_days: 30,
                val_days: 6,
                test_days: 5,
                lookback: 6,
            },
            max_periods: Some(2),
            ..Default::default()
        };
        c.features.technical = vec!["pvo".into(), "cmf".into()];
        c.model.conv = vec![ConvSpec { kernel: 2, channels: 4 }];
        c.model.dense = vec![4];
        for hp in [&mut c.model.hyper.new, &mut c.model.hyper.ce, &mut c.model.hyper.mse] {
            hp.max_epochs = 3;
            hp.batch_size = 64;
        }
        c.ensemble.members = 2;
        c.backtest.k = 3;
        c.baselines.preset = "mom2_mom5".into();
        c
    }

    #[test]
    fn tiny_run_writes_every_artifact_and_is_deterministic() {
        let cfg = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let doc = run(&cfg, &a).unwrap();
        run(&cfg, &b).unwrap();
        for f in ["metrics.json", "grid.csv", "comparison.csv", "manifest.json", "predictions/p000.csv", "checkpoints/p001/cnn_new.ensemble"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
        assert!(!a.join("run.lock").exists());
        assert_eq!(doc.test_days, 10);
        for m in ["CNN_New", "CNN_CE", "CNN_MSE", "CNN_Combined", "OLS", "Ridge", "Lasso"] {
            assert!(doc.models.contains_key(m), "{m}");
        }
        assert_eq!(doc.comparison.last().unwrap().strategy, "Market");
        let first = a.join("ledgers/p000/cnn_new_topk.csv");
        assert!(fs::read_to_string(first).unwrap().starts_with("date,value,daily_return,holdings\n"));
        assert_eq!(saved_periods(&a, "predictions").unwrap(), vec![0, 1]);
        let rk = read_predictions(&a.join("predictions/p001.csv")).unwrap();
        assert_eq!(rk["CNN_New"].len(), 5);
    }

    #[test]
    fn stages_from_files_match_in_memory_run() {
        let cfg = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let doc = run(&cfg, dir.path()).unwrap();
        let prep = prepare(&cfg).unwrap();
        let rankings = saved_periods(dir.path(), "predictions")
            .unwrap()
            .into_iter()
            .map(|p| (p, read_predictions(&dir.path().join("predictions").join(format!("{}.csv", period_dir(p)))).unwrap()))
            .collect();
        let other = dir.path().join("again");
        let periods = backtest_stage(&cfg, &prep, &TrainOutput { rankings }, &other).unwrap();
        let again = report_stage(&cfg, &periods, &other).unwrap();
        assert_eq!(again, doc);
    }

    #[test]
    fn bad_config_writes_nothing() {
        let mut cfg = tiny_config();
        cfg.data.synth.as_mut().unwrap().n_days = 60;
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let e = run(&cfg, &out).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(!out.exists());
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let l = RunLock::acquire(dir.path()).unwrap();
        assert!(RunLock::acquire(dir.path()).is_err());
        drop(l);
        assert!(RunLock::acquire(dir.path()).is_ok());
    }
}

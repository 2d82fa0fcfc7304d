//! Declarative run configuration. Every field has a default, so `{}` is a complete config.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::TestKind;
use crate::backtest::{RebalanceMode, Strategy, DEFAULT_K};
use crate::baselines::{preset, Method};
use crate::dataset::{LabelScheme, WindowConfig};
use crate::indicators::{standard_specs, DEFAULT_TECHNICAL};
use crate::losses::LossKind;
use crate::market_data::{DEFAULT_DOLLAR_VOLUME_THRESHOLD, DEFAULT_PRICE_FLOOR};
use crate::models::{default_dropout, ArchConfig, CombineMode, ConvSpec, TrainHyper};
use crate::nn::DEFAULT_LEAKY_SLOPE;
use crate::synth::SynthSpec;

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

pub type Result<T> = std::result::Result<T, ConfigError>;

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(ConfigError(msg.into()))
}

/// One value per loss kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerLoss<T> {
    pub new: T,
    pub ce: T,
    pub mse: T,
}

impl<T> PerLoss<T> {
    pub fn from_fn(f: impl Fn(LossKind) -> T) -> Self {
        PerLoss {
            new: f(LossKind::ReturnWeighted),
            ce: f(LossKind::CrossEntropy),
            mse: f(LossKind::Mse),
        }
    }

    pub fn get(&self, kind: LossKind) -> &T {
        match kind {
            LossKind::ReturnWeighted => &self.new,
            LossKind::CrossEntropy => &self.ce,
            LossKind::Mse => &self.mse,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub ohlcv: Option<PathBuf>,
    pub sectors: Option<PathBuf>,
    /// Generate the universe instead of reading files.
    pub synth: Option<SynthSpec>,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniverseConfig {
    pub dollar_volume_threshold: f64,
    pub price_floor: f64,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        UniverseConfig {
            dollar_volume_threshold: DEFAULT_DOLLAR_VOLUME_THRESHOLD,
            price_floor: DEFAULT_PRICE_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub basic: bool,
    pub technical: Vec<String>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            basic: true,
            technical: DEFAULT_TECHNICAL.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub conv: Vec<ConvSpec>,
    pub dense: Vec<usize>,
    pub leaky_slope: f64,
    pub dropout: PerLoss<f64>,
    pub hyper: PerLoss<TrainHyper>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let r = ArchConfig::reference(1, LossKind::ReturnWeighted);
        ModelConfig {
            conv: r.conv,
            dense: r.dense,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            dropout: PerLoss::from_fn(default_dropout),
            hyper: PerLoss::from_fn(TrainHyper::for_loss),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: usize,
    pub combine: CombineMode,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            members: 3,
            combine: CombineMode::Moe,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub strategies: Vec<Strategy>,
    pub k: usize,
    pub rebalance_mode: RebalanceMode,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            strategies: Strategy::ALL.to_vec(),
            k: DEFAULT_K,
            rebalance_mode: RebalanceMode::Drift,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticsConfig {
    /// CSV of `date,rate` annual risk-free rates; zero when absent.
    pub rf_path: Option<PathBuf>,
    pub t_test: TestKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Empty disables the linear baselines.
    pub methods: Vec<Method>,
    pub preset: String,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            methods: Method::ALL.to_vec(),
            preset: "all".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub universe: UniverseConfig,
    pub features: FeatureConfig,
    pub windows: WindowConfig,
    pub labels: LabelScheme,
    pub model: ModelConfig,
    pub losses: Vec<LossKind>,
    pub ensemble: EnsembleConfig,
    pub backtest: BacktestConfig,
    pub analytics: AnalyticsConfig,
    pub baselines: BaselineConfig,
    /// Stop after this many walk-forward periods.
    pub max_periods: Option<usize>,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            universe: UniverseConfig::default(),
            features: FeatureConfig::default(),
            windows: WindowConfig::default(),
            labels: LabelScheme::default(),
            model: ModelConfig::default(),
            losses: LossKind::ALL.to_vec(),
            ensemble: EnsembleConfig::default(),
            backtest: BacktestConfig::default(),
            analytics: AnalyticsConfig::default(),
            baselines: BaselineConfig::default(),
            max_periods: None,
            seed: 42,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ConfigError(format!("config parse error: {e}")))
    }

    /// Reads a config; relative data paths resolve against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        fix(&mut cfg.data.ohlcv);
        fix(&mut cfg.data.sectors);
        fix(&mut cfg.analytics.rf_path);
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form (defaults filled in).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn arch(&self, n_features: usize, loss: LossKind) -> ArchConfig {
        ArchConfig {
            m: self.windows.lookback,
            n: n_features,
            conv: self.model.conv.clone(),
            dense: self.model.dense.clone(),
            dropout: *self.model.dropout.get(loss),
            leaky_slope: self.model.leaky_slope,
            loss,
        }
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        if self.features.basic {
            names.extend(crate::indicators::BASIC_FEATURES.iter().map(|s| s.to_string()));
        }
        names.extend(self.features.technical.iter().cloned());
        names
    }

    /// Checks everything that can be checked without reading market data.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        match (&d.synth, &d.ohlcv, &d.sectors) {
            (Some(s), None, None) => {
                s.validate().map_err(|e| ConfigError(e.to_string()))?;
                let need = self.windows.min_calendar_len();
                if s.n_days < need {
                    return bad(format!("synth n_days {} is shorter than the {need} days one period needs", s.n_days));
                }
            }
            (None, Some(o), Some(s)) => {
                for p in [o, s] {
                    if !p.is_file() {
                        return bad(format!("data file {} does not exist", p.display()));
                    }
                }
            }
            (None, None, None) => return bad("no data: set data.ohlcv and data.sectors, or data.synth"),
            _ => return bad("set either data.synth or both data.ohlcv and data.sectors"),
        }
        if let (Some(a), Some(b)) = (d.start, d.end) {
            if a > b {
                return bad(format!("data.start {a} is after data.end {b}"));
            }
        }
        if let Some(p) = &self.analytics.rf_path {
            if !p.is_file() {
                return bad(format!("rf file {} does not exist", p.display()));
            }
        }
        let u = &self.universe;
        if !(u.dollar_volume_threshold >= 0.0) || !(u.price_floor >= 0.0) {
            return bad("universe thresholds must be non-negative");
        }
        standard_specs(&self.features.technical).map_err(|e| ConfigError(format!("features: {e}")))?;
        if self.feature_names().is_empty() {
            return bad("no features selected");
        }
        self.windows.validate().map_err(|e| ConfigError(format!("windows: {e}")))?;
        self.labels.validate().map_err(|e| ConfigError(format!("labels: {e}")))?;
        if self.losses.is_empty() {
            return bad("losses must not be empty");
        }
        for (i, l) in self.losses.iter().enumerate() {
            if self.losses[..i].contains(l) {
                return bad(format!("loss {l} listed twice"));
            }
            self.arch(self.feature_names().len(), *l)
                .validate()
                .map_err(|e| ConfigError(format!("model ({l}): {e}")))?;
            self.model
                .hyper
                .get(*l)
                .validate()
                .map_err(|e| ConfigError(format!("hyper ({l}): {e}")))?;
        }
        if self.ensemble.members == 0 {
            return bad("ensemble.members must be positive");
        }
        if self.backtest.k == 0 {
            return bad("backtest.k must be positive");
        }
        if self.backtest.strategies.is_empty() {
            return bad("backtest.strategies must not be empty");
        }
        if !self.baselines.methods.is_empty() {
            preset(&self.baselines.preset).map_err(|e| ConfigError(e.to_string()))?;
        }
        if self.max_periods == Some(0) {
            return bad("max_periods must be positive");
        }
        Ok(())
    }
}

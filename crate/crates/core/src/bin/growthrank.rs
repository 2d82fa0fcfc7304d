use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use growthrank::backtest::Strategy;
use growthrank::config::RunConfig;
use growthrank::error::{Error, Result};
use growthrank::losses::LossKind;
use growthrank::pipeline::{self, PeriodLedgers, TrainOutput};
use growthrank::synth::{self, SynthSpec};

#[derive(Parser)]
#[command(name = "growthrank", version, about = "Daily stock ranking with CNN ensembles")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic OHLCV universe with planted motifs.
    Synth {
        /// Generator spec (JSON). Defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the raw feature panel.
    Features(RunArgs),
    /// Train the walk-forward models and write predictions.
    Train(RunArgs),
    /// Backtest the predictions saved in a run directory.
    Backtest {
        #[arg(long)]
        run: PathBuf,
    },
    /// Chain per-period ledgers into the final report.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Train, backtest and report.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train a single loss (new, ce or mse).
    #[arg(long)]
    loss: Option<String>,
    /// Comma-separated strategy names.
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<(RunConfig, PathBuf)> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(l) = &self.loss {
            cfg.losses = vec![LossKind::parse(l)?];
        }
        if !self.strategy.is_empty() {
            cfg.backtest.strategies = self.strategy.iter().map(|s| s.parse::<Strategy>()).collect::<std::result::Result<_, _>>()?;
        }
        let out = match (&self.out, &cfg.out_dir) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => o.clone(),
            (None, None) => PathBuf::from("runs").join(&cfg.hash()[..12]),
        };
        Ok((cfg, out))
    }
}

fn summary(doc: &pipeline::MetricsDoc) {
    println!("{:<14} {:>10} {:>8} {:>8} {:>8} {:>8} {:>6}", "strategy", "return", "t", "p", "SR", "MD", "MDD");
    for row in &doc.comparison {
        let r = &row.report;
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<14} {:>10.4} {:>8} {:>8} {:>8} {:>8.4} {:>6}",
            row.strategy,
            r.annual_return,
            opt(r.t_value),
            opt(r.p_value),
            opt(r.sharpe),
            r.max_drawdown,
            r.mdd_duration_days
        );
    }
}

fn cmd_synth(config: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let spec: SynthSpec = match config {
        None => SynthSpec::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io("synth", p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::config("synth", format!("{}: {e}", p.display())))?
        }
    };
    let data = synth::generate(&spec, seed)?;
    synth::write_all(&data, out)?;
    println!("wrote {} stocks x {} days to {}", data.universe.n_stocks(), data.universe.n_days(), out.display());
    Ok(())
}

fn cmd_features(args: &RunArgs) -> Result<()> {
    let (cfg, out) = args.resolve()?;
    cfg.validate()?;
    let (u, _) = pipeline::load_universe(&cfg)?;
    let panel = pipeline::feature_panel(&cfg, &u)?;
    fs::create_dir_all(&out).map_err(|e| Error::io("cli", &out, e))?;
    let path = out.join("features.csv");
    let f = fs::File::create(&path).map_err(|e| Error::io("cli", &path, e))?;
    panel.write_csv(std::io::BufWriter::new(f))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_train(args: &RunArgs) -> Result<()> {
    let (cfg, out) = args.resolve()?;
    let prep = pipeline::prepare(&cfg)?;
    let _lock = pipeline::RunLock::acquire(&out)?;
    pipeline::write_inputs(&cfg, &prep, &out)?;
    let t = pipeline::train_stage(&cfg, &prep, &out)?;
    pipeline::write_manifest(&out, &cfg)?;
    println!("trained {} periods into {}", t.rankings.len(), out.display());
    Ok(())
}

fn backtest_dir(run: &Path) -> Result<(RunConfig, PeriodLedgers)> {
    let cfg = pipeline::load_run_config(run)?;
    let prep = pipeline::prepare(&cfg)?;
    let periods = pipeline::saved_periods(run, "predictions")?;
    if periods.is_empty() {
        return Err(Error::data("cli", format!("no predictions under {}", run.display())));
    }
    let rankings = periods
        .into_iter()
        .map(|p| {
            let path = run.join("predictions").join(format!("{}.csv", pipeline::period_dir(p)));
            Ok((p, pipeline::read_predictions(&path)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let ledgers = pipeline::backtest_stage(&cfg, &prep, &TrainOutput { rankings }, run)?;
    Ok((cfg, ledgers))
}

fn read_period_ledgers(run: &Path, cfg: &RunConfig) -> Result<PeriodLedgers> {
    let periods = pipeline::saved_periods(run, "ledgers")?;
    if periods.is_empty() {
        return Err(Error::data("cli", format!("no period ledgers under {}; run `backtest` first", run.display())));
    }
    periods
        .into_iter()
        .map(|p| {
            let dir = run.join("ledgers").join(pipeline::period_dir(p));
            let models = pipeline::candidate_models(cfg)
                .into_iter()
                .filter(|m| pipeline::model_strategies(cfg).first().is_some_and(|s| dir.join(pipeline::ledger_name(m, *s)).exists()))
                .collect::<Vec<_>>();
            let (sets, market) = pipeline::read_ledgers(&dir, cfg, &models)?;
            Ok((p, sets, market))
        })
        .collect()
}

fn run_cmd(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth { config, seed, out } => cmd_synth(config.as_deref(), seed, &out),
        Cmd::Features(a) => cmd_features(&a),
        Cmd::Train(a) => cmd_train(&a),
        Cmd::Backtest { run } => {
            let _lock = pipeline::RunLock::acquire(&run)?;
            let (_, l) = backtest_dir(&run)?;
            println!("backtested {} periods", l.len());
            Ok(())
        }
        Cmd::Report { run } => {
            let _lock = pipeline::RunLock::acquire(&run)?;
            let cfg = pipeline::load_run_config(&run)?;
            let periods = read_period_ledgers(&run, &cfg)?;
            let doc = pipeline::report_stage(&cfg, &periods, &run)?;
            pipeline::write_manifest(&run, &cfg)?;
            summary(&doc);
            Ok(())
        }
        Cmd::Run(a) => {
            let (cfg, out) = a.resolve()?;
            let doc = pipeline::run(&cfg, &out)?;
            summary(&doc);
            println!("results in {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_cmd(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

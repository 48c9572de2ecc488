//! `gmvshrink`: simulation, backtesting and random-matrix checks for dynamic
//! shrinkage of global minimum variance portfolios.

mod meta;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gmv_shrink::backtest::{run_backtest, strategy_weights, Accounting, RebalanceSchedule, WeightSource};
use gmv_shrink::exec::{with_threads, Execution};
use gmv_shrink::io::{read_returns, read_weights_path};
use gmv_shrink::rmt::{bridge, mc_quadratic_form, GramSpec, QuadraticFormKind, Tail};
use gmv_shrink::sim::{run_experiment, GeneratorOptions, Scenario, ScenarioConfig};
use gmv_shrink::{Error, Strategy, WeightVector};

use meta::{content_hash, Metadata};

/// Replications above this count require `--full`.
const DESK_REPS_LIMIT: usize = 1000;

#[derive(Parser, Debug)]
#[command(name = "gmvshrink", version, about = "Dynamic shrinkage of GMV portfolio weights")]
struct Cli {
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Run replications sequentially.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo relative-loss experiment.
    Simulate(SimulateArgs),
    /// Backtest one strategy on a returns file.
    Backtest(BacktestArgs),
    /// Compare random-matrix limits with Monte Carlo estimates.
    CheckRmt(CheckRmtArgs),
    /// Print the per-period weights chosen by a strategy.
    Weights(WeightsArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ScenarioArg {
    T5,
    Capm,
    CccGarch,
    Varma,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::T5 => Scenario::T5,
            ScenarioArg::Capm => Scenario::Capm,
            ScenarioArg::CccGarch => Scenario::CccGarch,
            ScenarioArg::Varma => Scenario::Varma,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum AccountingArg {
    Fixed,
    Drift,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TailArg {
    Normal,
    T9,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    scenario: ScenarioArg,
    /// Number of assets (default 125, or 200 with --full).
    #[arg(long)]
    p: Option<usize>,
    /// Observations per block.
    #[arg(long, default_value_t = 250)]
    n: usize,
    /// Rebalancing periods (default 10, or 20 with --full).
    #[arg(long = "T")]
    periods: Option<usize>,
    /// Monte Carlo replications (default 200, or 5000 with --full).
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value = "1,2,3,4,5,6,7")]
    strategies: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluate losses against the innovation covariance for every scenario.
    #[arg(long)]
    literal_eval_cov: bool,
    /// Do not standardize t(5) draws to unit variance.
    #[arg(long)]
    raw_t5: bool,
    /// Allow full-scale runs.
    #[arg(long)]
    full: bool,
}

#[derive(Args, Debug)]
struct ScheduleArgs {
    /// Window length for every period.
    #[arg(long, conflicts_with = "windows")]
    n: Option<usize>,
    /// Comma-separated window lengths.
    #[arg(long)]
    windows: Option<String>,
    /// Periods (default: all full windows that leave one window to hold the last weights).
    #[arg(long = "T")]
    periods: Option<usize>,
}

#[derive(Args, Debug)]
struct BacktestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, required_unless_present = "external_weights")]
    strategy: Option<u8>,
    /// CSV of per-period weights to evaluate instead of a built-in strategy.
    #[arg(long, conflicts_with = "strategy")]
    external_weights: Option<PathBuf>,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long, value_enum, default_value = "fixed")]
    accounting: AccountingArg,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-day wealth CSV.
    #[arg(long)]
    wealth_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckRmtArgs {
    #[arg(long)]
    p: usize,
    #[arg(long)]
    n: usize,
    /// Extension size (default n).
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value = "normal")]
    tail: TailArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct WeightsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    strategy: u8,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::OutOfRange { .. } | Error::InsufficientSample { .. } => 2,
        Error::Singular { .. } | Error::Degenerate(_) => 4,
        _ => 3,
    }
}

fn kind(code: u8) -> &'static str {
    match code {
        2 => "config",
        4 => "numerical",
        _ => "data",
    }
}

fn report_error(code: u8, message: &str) {
    let flat = message.replace(['\n', '\r'], " ");
    eprintln!("error code={code} kind={} message={:?}", kind(code), flat.trim());
}

fn emit(out: Option<&Path>, content: &str) -> Result<(), Error> {
    match out {
        Some(path) => fs::write(path, content)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(content.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn simulate(args: &SimulateArgs, exec: Execution) -> Result<String, Error> {
    let (p_default, t_default, reps_default) = if args.full { (200, 20, 5000) } else { (125, 10, 200) };
    let p = args.p.unwrap_or(p_default);
    let periods = args.periods.unwrap_or(t_default);
    let reps = args.reps.unwrap_or(reps_default);
    if reps > DESK_REPS_LIMIT && !args.full {
        return Err(config_err(format!("reps = {reps} exceeds {DESK_REPS_LIMIT}; pass --full")));
    }
    let strategies = Strategy::parse_list(&args.strategies)?;
    let scenario: Scenario = args.scenario.into();
    let mut config = ScenarioConfig::new(scenario, p, args.n, periods, reps, args.seed).with_strategies(&strategies);
    config.generator = GeneratorOptions { raw_t5: args.raw_t5 };
    config.literal_eval_cov = args.literal_eval_cov;
    config.validate()?;

    let mut m = Metadata::new("simulate");
    m.push("scenario", scenario);
    m.push("p", p);
    m.push("n", args.n);
    m.push("T", periods);
    m.push("reps", reps);
    m.push(
        "strategies",
        strategies.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
    );
    m.push("seed", args.seed);
    m.push("t5_standardized", !args.raw_t5);
    m.push("eval_cov", if args.literal_eval_cov { "sigma" } else { "returns" });
    m.push("full", args.full);

    let table = run_experiment(&config, exec)?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    Ok(m.comment_block() + &String::from_utf8(buf).expect("csv output is utf-8"))
}

fn load_input(path: &Path) -> Result<(gmv_shrink::io::ReturnsFile, String), Error> {
    let bytes = fs::read(path)?;
    let hash = content_hash(&bytes);
    Ok((read_returns(bytes.as_slice())?, hash))
}

fn build_schedule(args: &ScheduleArgs, obs: usize) -> Result<RebalanceSchedule, Error> {
    if let Some(w) = &args.windows {
        let windows = w
            .split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|_| config_err(format!("invalid window '{t}'"))))
            .collect::<Result<Vec<_>, _>>()?;
        if args.periods.is_some_and(|t| t != windows.len()) {
            return Err(config_err("--T disagrees with the number of --windows"));
        }
        return RebalanceSchedule::new(windows);
    }
    let n = args.n.unwrap_or(250);
    if n == 0 {
        return Err(config_err("window length must be positive"));
    }
    let periods = match args.periods {
        Some(t) => t,
        None => (obs / n).saturating_sub(1).max(1),
    };
    let schedule = RebalanceSchedule::uniform(n, periods)?;
    if schedule.total() > obs {
        return Err(config_err(format!(
            "schedule needs {} observations, input has {obs}",
            schedule.total()
        )));
    }
    Ok(schedule)
}

fn schedule_meta(m: &mut Metadata, s: &RebalanceSchedule) {
    m.push(
        "windows",
        s.windows().iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
    );
    m.push("T", s.periods());
}

fn backtest(args: &BacktestArgs) -> Result<(String, Option<String>), Error> {
    let (file, input_hash) = load_input(&args.input)?;
    let series = &file.returns;
    let p = series.asset_count();
    let schedule = build_schedule(&args.schedule, series.obs_count())?;
    let target = WeightVector::equal(p);
    let accounting = match args.accounting {
        AccountingArg::Fixed => Accounting::Fixed,
        AccountingArg::Drift => Accounting::Drift,
    };

    let mut m = Metadata::new("backtest");
    m.push("input_hash", &input_hash);
    m.push("assets", p);
    m.push("observations", series.obs_count());
    schedule_meta(&mut m, &schedule);
    m.push("accounting", accounting.name());
    m.push("target", "equal");
    m.push("seed", args.seed);

    let external;
    let source = match (&args.external_weights, args.strategy) {
        (Some(path), _) => {
            let bytes = fs::read(path)?;
            m.push("external_weights_hash", content_hash(&bytes));
            let (assets, ws) = read_weights_path(path)?;
            if assets != file.assets {
                return Err(Error::Data {
                    row: 1,
                    col: 1,
                    message: "external weight columns do not match the returns file".into(),
                });
            }
            external = ws;
            WeightSource::External(&external)
        }
        (None, Some(k)) => WeightSource::Strategy(Strategy::from_number(k)?),
        (None, None) => return Err(config_err("either --strategy or --external-weights is required")),
    };
    let result = run_backtest(series, source, &schedule, &target, accounting)?;
    let doc = result.report.to_kv(&m.with_hash());
    let wealth = match &args.wealth_out {
        Some(_) => {
            let mut buf = Vec::new();
            result.report.write_wealth_csv(&mut buf)?;
            Some(m.comment_block() + &String::from_utf8(buf).expect("csv output is utf-8"))
        }
        None => None,
    };
    Ok((doc, wealth))
}

fn weights(args: &WeightsArgs) -> Result<String, Error> {
    let (file, input_hash) = load_input(&args.input)?;
    let series = &file.returns;
    let schedule = build_schedule(&args.schedule, series.obs_count())?;
    let strategy = Strategy::from_number(args.strategy)?;
    let target = WeightVector::equal(series.asset_count());
    let mut m = Metadata::new("weights");
    m.push("input_hash", &input_hash);
    m.push("strategy", strategy);
    schedule_meta(&mut m, &schedule);
    m.push("target", "equal");
    m.push("seed", args.seed);

    let history = strategy_weights(series, strategy, &schedule, &target)?;
    let mut out = m.comment_block();
    out.push_str("period");
    for a in &file.assets {
        out.push(',');
        out.push_str(a);
    }
    out.push('\n');
    for (i, w) in history.iter().enumerate() {
        out.push_str(&(i + 1).to_string());
        for v in w.as_slice() {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

fn check_rmt(args: &CheckRmtArgs, exec: Execution) -> Result<String, Error> {
    let m_ext = args.m.unwrap_or(args.n);
    if args.p <= 2 || args.p >= args.n {
        return Err(Error::OutOfRange {
            name: "p",
            value: args.p as f64,
            expected: "2 < p < n",
        });
    }
    if args.reps == 0 {
        return Err(config_err("reps must be positive"));
    }
    let tail = match args.tail {
        TailArg::Normal => Tail::Normal,
        TailArg::T9 => Tail::T9,
    };
    let spec = GramSpec::new(args.p, args.n, m_ext)?.with_tail(tail);

    let mut meta = Metadata::new("check-rmt");
    meta.push("p", args.p);
    meta.push("n", args.n);
    meta.push("m", m_ext);
    meta.push("reps", args.reps);
    meta.push("seed", args.seed);
    meta.push("tail", if tail == Tail::T9 { "t9" } else { "normal" });

    let mut out = meta.comment_block();
    out.push_str("check,target,mc_mean,stderr,rel_dev,tol,status\n");
    let status = |ok: bool| if ok { "pass" } else { "fail" };
    let mut cross = Vec::new();
    for (kind, tol) in [
        (QuadraticFormKind::Lemma1Inv, 0.05),
        (QuadraticFormKind::Lemma1InvSq, 0.05),
        (QuadraticFormKind::Lemma2Cross, 0.10),
        (QuadraticFormKind::Lemma3Cross, 0.10),
    ] {
        let target = kind.target(&spec)?;
        let est = mc_quadratic_form(&spec, kind, args.reps, args.seed, exec)?;
        let rel = (est.mean - target).abs() / target.abs();
        out.push_str(&format!(
            "{},{target},{},{},{rel},{tol},{}\n",
            kind.name(),
            est.mean,
            est.stderr,
            status(rel <= tol)
        ));
        if matches!(kind, QuadraticFormKind::Lemma2Cross | QuadraticFormKind::Lemma3Cross) {
            cross.push(est);
        }
    }
    let joint = (cross[0].stderr.powi(2) + cross[1].stderr.powi(2)).sqrt();
    let gap = (cross[0].mean - cross[1].mean).abs();
    out.push_str(&format!(
        "lemma3_vs_lemma2,0,{gap},{joint},{},2se,{}\n",
        if joint > 0.0 { gap / joint } else { 0.0 },
        status(gap <= 2.0 * joint)
    ));
    let (lhs, rhs) = bridge(args.p, args.n, args.n + m_ext)?;
    let dev = (lhs - rhs).abs();
    out.push_str(&format!("bridge,{rhs},{lhs},0,{dev},0.005,{}\n", status(dev <= 0.005)));
    Ok(out)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let go = || -> Result<(), Error> {
        match &cli.command {
            Command::Simulate(a) => emit(a.out.as_deref(), &simulate(a, exec)?),
            Command::Backtest(a) => {
                let (doc, wealth) = backtest(a)?;
                if let (Some(path), Some(csv)) = (&a.wealth_out, wealth) {
                    fs::write(path, csv)?;
                }
                emit(a.out.as_deref(), &doc)
            }
            Command::CheckRmt(a) => emit(a.out.as_deref(), &check_rmt(a, exec)?),
            Command::Weights(a) => emit(a.out.as_deref(), &weights(a)?),
        }
    };
    match cli.threads {
        Some(0) => Err(config_err("--threads must be positive")),
        Some(t) => with_threads(t, go),
        None => go(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            report_error(2, first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            report_error(code, &e.to_string());
            ExitCode::from(code)
        }
    }
}

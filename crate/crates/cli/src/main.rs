mod svg;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use trp::backtest::{sliding_backtest, BacktestConfig, Strategy};
use trp::engine::TrpConfig;
use trp::estimation::{mle, mle_with_floor};
use trp::linalg::SquareMatrix;
use trp::market::{sample_market, CsvMode, LogNormalParams, PriceRelativeSeries};
use trp::mvn::{mvn_probability, mvn_probability_dense, MvnProblem, QmcParams, DENSE_MAX_DIM};
use trp::optimizer::{evaluate_grid, select, write_surface_csv, SearchGrid};
use trp::quadrature::Quadrature;
use trp::wealth::{expected_wealth, BandLaw, WealthOptions};
use trp::Error;

/// Threshold rebalanced portfolios: simulation, estimation, expected wealth,
/// optimization and backtesting.
///
/// Every run logs its effective configuration as one JSON line on stderr.
/// Relative output paths are resolved against --out-dir.
#[derive(Debug, Parser)]
#[command(name = "trp", version)]
struct Cli {
    /// Directory for output files
    #[arg(long, global = true, env = "TRP_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,

    /// Seed for market sampling and QMC shifts
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample an i.i.d. log-normal two-asset market to CSV (date,x1,x2)
    Simulate(SimulateArgs),
    /// Maximum-likelihood fit of a market CSV; prints JSON
    Estimate(EstimateArgs),
    /// Per-horizon expected-wealth table (i,stay_p,fc_p,pr,pt,es)
    ExpectedWealth(ExpectedWealthArgs),
    /// Grid search for the (b, eps) with the largest expected wealth; prints JSON
    Optimize(OptimizeArgs),
    /// Sliding-window backtest of the TRP against baselines
    Backtest(BacktestArgs),
    /// One MVN box probability, with the dense oracle when dim <= 4; prints JSON
    MvnDebug(MvnDebugArgs),
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
struct MarketArgs {
    /// Log-drift of asset 1 per period
    #[arg(long, default_value_t = 0.006, allow_negative_numbers = true)]
    mu1: f64,
    /// Log-drift of asset 2 per period
    #[arg(long, default_value_t = 0.003, allow_negative_numbers = true)]
    mu2: f64,
    /// Log-variance of asset 1 per period
    #[arg(long, default_value_t = 0.05)]
    var1: f64,
    /// Log-variance of asset 2 per period
    #[arg(long, default_value_t = 0.05)]
    var2: f64,
}

impl MarketArgs {
    fn params(&self) -> trp::Result<LogNormalParams> {
        LogNormalParams::new(self.mu1, self.mu2, self.var1, self.var2)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum LawArg {
    Bridge,
    Unconditional,
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
struct NumericsArgs {
    /// QMC lattice points per shift
    #[arg(long, default_value_t = 2000)]
    qmc_points: usize,
    /// QMC random shifts
    #[arg(long, default_value_t = 12)]
    qmc_shifts: usize,
    /// QMC error multiplier
    #[arg(long, default_value_t = 3.0)]
    alpha: f64,
    /// Relative tolerance of the quadrature over the endpoint log-ratio
    #[arg(long, default_value_t = 1e-4)]
    rel_tol: f64,
    /// Largest accepted horizon
    #[arg(long, default_value_t = 40)]
    horizon_cap: usize,
    /// Law of the walk between block start and endpoint
    #[arg(long, value_enum, default_value_t = LawArg::Bridge)]
    band_law: LawArg,
}

impl NumericsArgs {
    fn options(&self, seed: u64) -> WealthOptions {
        WealthOptions {
            qmc: QmcParams {
                n_points: self.qmc_points,
                n_shifts: self.qmc_shifts,
                alpha: self.alpha,
                seed,
            },
            quadrature: Quadrature::with_rel_tol(self.rel_tol),
            horizon_cap: self.horizon_cap,
            band_law: match self.band_law {
                LawArg::Bridge => BandLaw::Bridge,
                LawArg::Unconditional => BandLaw::Unconditional,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
struct GridArgs {
    #[arg(long, default_value_t = 0.05)]
    b_min: f64,
    #[arg(long, default_value_t = 0.95)]
    b_max: f64,
    #[arg(long, default_value_t = 0.05)]
    b_step: f64,
    #[arg(long, default_value_t = 0.0)]
    eps_min: f64,
    #[arg(long, default_value_t = 0.25)]
    eps_max: f64,
    #[arg(long, default_value_t = 0.01)]
    eps_step: f64,
    /// Leave out the buy-and-hold (no-trade) point at every b
    #[arg(long)]
    no_trade_off: bool,
}

impl GridArgs {
    fn grid(&self) -> SearchGrid {
        SearchGrid {
            b_min: self.b_min,
            b_max: self.b_max,
            b_step: self.b_step,
            eps_min: self.eps_min,
            eps_max: self.eps_max,
            eps_step: self.eps_step,
            include_no_trade: !self.no_trade_off,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    /// date,x1,x2
    Relatives,
    /// date,close1,close2
    Prices,
}

impl From<ModeArg> for CsvMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Relatives => CsvMode::Relatives,
            ModeArg::Prices => CsvMode::Prices,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    market: MarketArgs,
    /// Number of periods
    #[arg(long, default_value_t = 1100)]
    n: usize,
    /// Output CSV
    #[arg(long, default_value = "market.csv")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EstimateArgs {
    /// Market CSV
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Relatives)]
    mode: ModeArg,
    /// Lower bound on fitted variances [default: off]
    #[arg(long)]
    var_floor: Option<f64>,
    /// Also write the JSON here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ExpectedWealthArgs {
    #[command(flatten)]
    market: MarketArgs,
    /// Target fraction in asset 1
    #[arg(long, default_value_t = 0.5)]
    b: f64,
    /// No-trade half-width around b
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Proportional cost (sell plus buy)
    #[arg(long, default_value_t = 0.01)]
    c: f64,
    /// Horizon
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[command(flatten)]
    numerics: NumericsArgs,
    /// Output CSV
    #[arg(long, default_value = "horizon.csv")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct OptimizeArgs {
    #[command(flatten)]
    market: MarketArgs,
    /// Objective horizon
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// Proportional cost (sell plus buy)
    #[arg(long, default_value_t = 0.025)]
    c: f64,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    numerics: NumericsArgs,
    /// Write the scored surface (b,eps,es) here
    #[arg(long)]
    surface: Option<PathBuf>,
    /// Also write the JSON here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct BacktestArgs {
    /// Market CSV
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Relatives)]
    mode: ModeArg,
    /// Periods per estimation window and trading block
    #[arg(long, default_value_t = 200)]
    window: usize,
    /// Objective horizon
    #[arg(long, default_value_t = 20)]
    horizon: usize,
    /// Proportional cost (sell plus buy)
    #[arg(long, default_value_t = 0.025)]
    c: f64,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    numerics: NumericsArgs,
    /// Comma-separated strategies
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "trp,crp,scrp,buy_and_hold,cover_up"
    )]
    strategies: Vec<String>,
    /// Target of the CRP, SCRP and buy-and-hold baselines
    #[arg(long, default_value_t = 0.5)]
    baseline_b: f64,
    /// SCRP rebalance interval
    #[arg(long, default_value_t = 5)]
    scrp_k: usize,
    /// Experts in the universal portfolio
    #[arg(long, default_value_t = 21)]
    cover_experts: usize,
    /// Refit the CRP target every block to the TRP's b
    #[arg(long)]
    refit_crp: bool,
    /// Lower bound on fitted variances [default: off]
    #[arg(long)]
    var_floor: Option<f64>,
    /// Also draw the curves to backtest.svg
    #[arg(long)]
    svg: bool,
}

#[derive(Debug, Args, Serialize)]
struct MvnDebugArgs {
    /// Dimension
    #[arg(long, default_value_t = 3)]
    dim: usize,
    /// Lower and upper bound shared by every coordinate
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true, default_values_t = [-1.0, 1.0])]
    r#box: Vec<f64>,
    /// Covariance is the inverse of tridiag(-1, 2, -1) instead of the identity
    #[arg(long)]
    tridiagonal: bool,
    /// QMC lattice points per shift
    #[arg(long, default_value_t = 2000)]
    qmc_points: usize,
    /// QMC random shifts
    #[arg(long, default_value_t = 12)]
    qmc_shifts: usize,
    /// QMC error multiplier
    #[arg(long, default_value_t = 3.0)]
    alpha: f64,
    /// Also write the JSON here
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve(out_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        out_dir.join(path)
    }
}

fn create(path: &Path) -> trp::Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn emit_json(value: &serde_json::Value, out: Option<&Path>) -> trp::Result<()> {
    let text = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    println!("{text}");
    if let Some(path) = out {
        let mut w = create(path)?;
        writeln!(w, "{text}")?;
        w.flush()?;
    }
    Ok(())
}

fn read_market(path: &Path, mode: ModeArg) -> trp::Result<PriceRelativeSeries> {
    PriceRelativeSeries::read_csv(File::open(path)?, mode.into())
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> trp::Result<()> {
    let series = sample_market(&args.market.params()?, args.n, cli.seed)?;
    let path = resolve(&cli.out_dir, &args.out);
    let mut w = create(&path)?;
    series.write_csv(&mut w)?;
    w.flush()?;
    eprintln!("wrote {} periods to {}", series.len(), path.display());
    Ok(())
}

fn estimate(cli: &Cli, args: &EstimateArgs) -> trp::Result<()> {
    let series = read_market(&args.input, args.mode)?;
    let p = match args.var_floor {
        Some(f) => mle_with_floor(&series, f)?,
        None => mle(&series)?,
    };
    let value = json!({
        "mu1": p.mu1,
        "mu2": p.mu2,
        "var1": p.var1,
        "var2": p.var2,
        "n_samples": series.len(),
    });
    emit_json(
        &value,
        args.out
            .as_ref()
            .map(|o| resolve(&cli.out_dir, o))
            .as_deref(),
    )
}

fn expected(cli: &Cli, args: &ExpectedWealthArgs) -> trp::Result<()> {
    let params = args.market.params()?;
    let config = TrpConfig::new(args.b, args.eps, args.c)?;
    let options = args.numerics.options(cli.seed);
    let table = expected_wealth(args.n, &params, &config, &options)?;
    let path = resolve(&cli.out_dir, &args.out);
    let mut w = create(&path)?;
    table.write_csv(&mut w)?;
    w.flush()?;
    eprintln!(
        "E[S({})] = {}; table written to {}",
        args.n,
        table.es(args.n),
        path.display()
    );
    Ok(())
}

fn optimize_cmd(cli: &Cli, args: &OptimizeArgs) -> trp::Result<()> {
    let params = args.market.params()?;
    let grid = args.grid.grid();
    let options = args.numerics.options(cli.seed);
    let started = Instant::now();
    let points = evaluate_grid(&params, args.n, args.c, &grid, &options)?;
    let best = select(&points)?;
    // Timing stays on stderr so that stdout and files are reproducible.
    eprintln!("runtime_ms = {}", started.elapsed().as_millis());
    if let Some(surface) = &args.surface {
        let path = resolve(&cli.out_dir, surface);
        let mut w = create(&path)?;
        write_surface_csv(&points, &mut w)?;
        w.flush()?;
    }
    let value = json!({
        "b_star": best.b_star,
        "eps_star": best.eps_star,
        "es_star": best.es_star,
        "evaluated_count": best.evaluated_count,
        "grid": grid,
    });
    emit_json(
        &value,
        args.out
            .as_ref()
            .map(|o| resolve(&cli.out_dir, o))
            .as_deref(),
    )
}

fn backtest_cmd(cli: &Cli, args: &BacktestArgs) -> trp::Result<()> {
    let series = read_market(&args.input, args.mode)?;
    let strategies = args
        .strategies
        .iter()
        .map(|s| s.trim().parse::<Strategy>())
        .collect::<trp::Result<Vec<_>>>()?;
    let config = BacktestConfig {
        window: args.window,
        horizon: args.horizon,
        c: args.c,
        grid: args.grid.grid(),
        wealth: args.numerics.options(cli.seed),
        strategies,
        baseline_b: args.baseline_b,
        scrp_k: args.scrp_k,
        cover_experts: args.cover_experts,
        refit_crp: args.refit_crp,
        var_floor: args.var_floor,
    };
    let report = sliding_backtest(&series, &config)?;
    for (strategy, curve) in &report.curves {
        let path = resolve(
            &cli.out_dir,
            Path::new(&format!("wealth_{}.csv", strategy.as_str())),
        );
        let mut w = create(&path)?;
        curve.write_csv(&mut w)?;
        w.flush()?;
    }
    if args.svg {
        let named: Vec<(&str, &[f64])> = report
            .curves
            .iter()
            .map(|(s, c)| (s.as_str(), c.wealth.as_slice()))
            .collect();
        let chart = svg::wealth_chart(&format!("wealth, c = {}", args.c), &named);
        let mut w = create(&resolve(&cli.out_dir, Path::new("backtest.svg")))?;
        w.write_all(chart.as_bytes())?;
        w.flush()?;
    }
    let blocks: Vec<_> = report
        .blocks
        .iter()
        .map(|b| {
            json!({
                "start": b.start,
                "len": b.len,
                "params": b.params,
                "b_star": b.optimum.b_star,
                "eps_star": b.optimum.eps_star,
                "es_star": b.optimum.es_star,
            })
        })
        .collect();
    let value = json!({
        "evaluated_periods": report.evaluated_periods,
        "strategies": report.summary(),
        "blocks": blocks,
    });
    emit_json(
        &value,
        Some(&resolve(&cli.out_dir, Path::new("backtest.json"))),
    )
}

fn tridiagonal_covariance(k: usize) -> trp::Result<SquareMatrix> {
    let precision = SquareMatrix::from_fn(k, |i, j| match i.abs_diff(j) {
        0 => 2.0,
        1 => -1.0,
        _ => 0.0,
    });
    precision.inverse()
}

fn mvn_debug(cli: &Cli, args: &MvnDebugArgs) -> trp::Result<()> {
    if args.dim == 0 {
        return Err(Error::InvalidParameter(
            "dimension must be at least 1".into(),
        ));
    }
    let cov = if args.tridiagonal {
        tridiagonal_covariance(args.dim)?
    } else {
        SquareMatrix::identity(args.dim)
    };
    let problem = MvnProblem::new(
        vec![args.r#box[0]; args.dim],
        vec![args.r#box[1]; args.dim],
        cov,
    )?;
    let qmc = QmcParams {
        n_points: args.qmc_points,
        n_shifts: args.qmc_shifts,
        alpha: args.alpha,
        seed: cli.seed,
    };
    let r = mvn_probability(&problem, &qmc)?;
    let mut value = json!({ "p": r.p, "err": r.err });
    if args.dim <= DENSE_MAX_DIM {
        value["dense"] = json!(mvn_probability_dense(&problem)?);
    }
    emit_json(
        &value,
        args.out
            .as_ref()
            .map(|o| resolve(&cli.out_dir, o))
            .as_deref(),
    )
}

fn run(cli: &Cli) -> trp::Result<()> {
    let (name, config) = match &cli.command {
        Command::Simulate(a) => ("simulate", serde_json::to_value(a)),
        Command::Estimate(a) => ("estimate", serde_json::to_value(a)),
        Command::ExpectedWealth(a) => ("expected-wealth", serde_json::to_value(a)),
        Command::Optimize(a) => ("optimize", serde_json::to_value(a)),
        Command::Backtest(a) => ("backtest", serde_json::to_value(a)),
        Command::MvnDebug(a) => ("mvn-debug", serde_json::to_value(a)),
    };
    let config = config.expect("argument structs always serialize");
    eprintln!(
        "{}",
        json!({ "command": name, "seed": cli.seed, "out_dir": cli.out_dir, "config": config })
    );
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Estimate(a) => estimate(cli, a),
        Command::ExpectedWealth(a) => expected(cli, a),
        Command::Optimize(a) => optimize_cmd(cli, a),
        Command::Backtest(a) => backtest_cmd(cli, a),
        Command::MvnDebug(a) => mvn_debug(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

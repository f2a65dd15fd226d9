use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use esgval_cli::config::{RiskKind, RunConfig, Underlying};
use esgval_cli::{commands, CliResult};

#[derive(Parser)]
#[command(name = "esgval", version, about = "ESG-valued portfolio, option and shadow-rate analysis")]
struct Cli {
    /// TOML run configuration; every field has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    prices: Option<PathBuf>,
    #[arg(long, global = true)]
    esg: Option<PathBuf>,
    #[arg(long, global = true)]
    yields: Option<PathBuf>,
    #[arg(long, global = true)]
    max_gap: Option<usize>,
    /// Trading days per year in the ESG blend.
    #[arg(long, global = true)]
    scale_c: Option<f64>,
    /// Estimation window in returns.
    #[arg(long, global = true)]
    window: Option<usize>,
    #[arg(long, global = true)]
    scenarios: Option<usize>,
    /// Comma-separated ESG affinities.
    #[arg(long, global = true, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct OptimizerArgs {
    /// `start:step:end`, `start:end` or a comma list.
    #[arg(long)]
    alpha_grid: Option<String>,
    #[arg(long, value_enum)]
    risk: Option<RiskArg>,
    #[arg(long)]
    beta: Option<f64>,
    /// Decision date (YYYY-MM-DD); defaults to the last date.
    #[arg(long)]
    date: Option<NaiveDate>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum RiskArg {
    Mv,
    Mcvar,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum UnderlyingArg {
    Tangent,
    Index,
    Equal,
}

#[derive(Subcommand)]
enum Command {
    /// Load, align and write back the inputs.
    Ingest,
    /// Efficient frontiers, one CSV per lambda.
    Frontier(OptimizerArgs),
    /// Tangent portfolios against the ESG-valued riskless rate.
    Tangent(OptimizerArgs),
    /// Rolling backtest with turnover cap, costs and benchmarks.
    Backtest {
        #[arg(long, value_enum)]
        risk: Option<RiskArg>,
        #[arg(long)]
        beta: Option<f64>,
        /// Comma-separated fixed alphas.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        /// Turnover cap; negative disables it.
        #[arg(long, allow_hyphen_values = true)]
        gamma: Option<f64>,
        #[arg(long)]
        cost_bps: Option<f64>,
        #[arg(long)]
        start: Option<NaiveDate>,
        #[arg(long)]
        end: Option<NaiveDate>,
        /// Add a tangent-portfolio strategy per lambda.
        #[arg(long)]
        tangent: bool,
    },
    /// Minimum-entropy option surfaces on a portfolio underlying.
    PriceOptions {
        #[arg(long)]
        date: Option<NaiveDate>,
        #[arg(long, value_enum)]
        underlying: Option<UnderlyingArg>,
        #[arg(long)]
        t_grid: Option<String>,
        #[arg(long)]
        t_count: Option<usize>,
        #[arg(long)]
        m_grid: Option<String>,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Shadow riskless rate and information ratio.
    Srr {
        #[arg(long)]
        lambda_grid: Option<String>,
        #[arg(long)]
        srr_window: Option<usize>,
    },
    /// Summary tables from a backtest's series.csv.
    Report {
        /// Directory holding series.csv.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        beta: Option<f64>,
    },
}

fn risk(r: RiskArg) -> RiskKind {
    match r {
        RiskArg::Mv => RiskKind::Mv,
        RiskArg::Mcvar => RiskKind::Mcvar,
    }
}

fn apply_optimizer(cfg: &mut RunConfig, a: OptimizerArgs) {
    if let Some(v) = a.alpha_grid {
        cfg.optimizer.alpha_grid = v;
    }
    if let Some(v) = a.risk {
        cfg.optimizer.risk = risk(v);
    }
    if let Some(v) = a.beta {
        cfg.optimizer.beta = v;
    }
    if a.date.is_some() {
        cfg.frontier.date = a.date;
    }
}

fn resolve(cli: &mut Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = cli.out_dir.take() {
        cfg.out_dir = v;
    }
    if let Some(v) = cli.prices.take() {
        cfg.data.prices = v;
    }
    if let Some(v) = cli.esg.take() {
        cfg.data.esg = v;
    }
    if let Some(v) = cli.yields.take() {
        cfg.data.yields = Some(v);
    }
    if let Some(v) = cli.max_gap {
        cfg.data.max_gap = v;
    }
    if let Some(v) = cli.scale_c {
        cfg.data.scale_c = v;
    }
    if let Some(v) = cli.window {
        cfg.model.window = v;
    }
    if let Some(v) = cli.scenarios {
        cfg.model.scenarios = v;
    }
    if let Some(v) = cli.lambda.take() {
        cfg.optimizer.lambdas = v;
    }
    Ok(cfg)
}

fn run(mut cli: Cli) -> CliResult<PathBuf> {
    let mut cfg = resolve(&mut cli)?;
    match cli.command {
        Command::Ingest => commands::ingest(&cfg),
        Command::Frontier(a) => {
            apply_optimizer(&mut cfg, a);
            commands::frontier(&cfg)
        }
        Command::Tangent(a) => {
            apply_optimizer(&mut cfg, a);
            commands::tangent(&cfg)
        }
        Command::Backtest {
            risk: r,
            beta,
            alphas,
            gamma,
            cost_bps,
            start,
            end,
            tangent,
        } => {
            let b = &mut cfg.backtest;
            if let Some(v) = alphas {
                b.alphas = v;
            }
            if let Some(v) = gamma {
                b.gamma = v;
            }
            if let Some(v) = cost_bps {
                b.cost_bps = v;
            }
            if start.is_some() {
                b.start = start;
            }
            if end.is_some() {
                b.end = end;
            }
            b.tangent |= tangent;
            if let Some(v) = r {
                cfg.optimizer.risk = risk(v);
            }
            if let Some(v) = beta {
                cfg.optimizer.beta = v;
            }
            commands::backtest(&cfg)
        }
        Command::PriceOptions {
            date,
            underlying,
            t_grid,
            t_count,
            m_grid,
            paths,
        } => {
            let o = &mut cfg.options;
            if date.is_some() {
                o.date = date;
            }
            if let Some(u) = underlying {
                o.underlying = match u {
                    UnderlyingArg::Tangent => Underlying::Tangent,
                    UnderlyingArg::Index => Underlying::Index,
                    UnderlyingArg::Equal => Underlying::Equal,
                };
            }
            if let Some(v) = t_grid {
                o.t_grid = v;
            }
            if let Some(v) = t_count {
                o.t_count = v;
            }
            if let Some(v) = m_grid {
                o.m_grid = v;
            }
            if let Some(v) = paths {
                o.paths = v;
            }
            commands::price_options(&cfg)
        }
        Command::Srr { lambda_grid, srr_window } => {
            if let Some(v) = lambda_grid {
                cfg.srr.lambda_grid = v;
            }
            if let Some(v) = srr_window {
                cfg.srr.window = v;
            }
            commands::srr(&cfg)
        }
        Command::Report { input, beta } => {
            if input.is_some() {
                cfg.report.input = input;
            }
            if let Some(v) = beta {
                cfg.report.beta = v;
            }
            commands::report(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

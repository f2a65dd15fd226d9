//! The subcommands. Each validates the configuration, computes, and writes
//! its artifacts under `<out_dir>/<command>/`, returning that directory.

use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::NaiveDate;
use esgval::backtest::{day_seed, run_backtest, BacktestConfig, StrategyKind, StrategySpec};
use esgval::esg_transform::esg_valued_riskless;
use esgval::frontier::{build_frontier, tangent_portfolio, FrontierInputs, FrontierPoint, TangentResult};
use esgval::market_data::{ReturnPanel, YieldSeries};
use esgval::optimizer::OptimizationSpec;
use esgval::option_pricer::surface;
use esgval::scenario::{fit_universe, simulate_trajectories, EsgPricing, TrajectoryEnsemble};
use esgval::shadow_rate::{ir_stats, srr_series, ColumnReduction};
use esgval::{EsgBlendParams, Error, ScenarioMatrix};
use serde_json::json;

use crate::config::{RunConfig, Underlying};
use crate::data::{fit_options, scenarios_at, Dataset};
use crate::output::{command_dir, lambda_label, num, opt, write_json, Table};
use crate::report::{read_series, report_tables, series_table, write_report, PathRecord};
use crate::CliResult;

fn params(cfg: &RunConfig, lambda: f64) -> CliResult<EsgBlendParams> {
    Ok(EsgBlendParams::new(lambda, cfg.data.scale_c)?)
}

fn weight_header<'a>(lead: impl IntoIterator<Item = &'a str>, tickers: &[String]) -> Vec<String> {
    lead.into_iter()
        .map(String::from)
        .chain(tickers.iter().map(|t| format!("w_{t}")))
        .collect()
}

fn rate_map(yields: Option<&YieldSeries>) -> Option<BTreeMap<NaiveDate, f64>> {
    yields.map(|y| y.calendar.dates().iter().copied().zip(y.daily_rate.iter().copied()).collect())
}

/// Loads and aligns the inputs and writes them back in canonical form.
pub fn ingest(cfg: &RunConfig) -> CliResult<PathBuf> {
    cfg.validate()?;
    let data = Dataset::load(cfg)?;
    let dir = command_dir(cfg, "ingest")?;
    let tickers = data.tickers();

    let mut returns = Table::new(std::iter::once("date".to_string()).chain(tickers.iter().cloned()));
    for (d, row) in data.returns.calendar.dates().iter().zip(&data.returns.returns) {
        returns.push(std::iter::once(d.to_string()).chain(row.iter().map(|v| num(*v))).collect());
    }
    returns.write(&dir.join("returns.csv"))?;

    let mut esg = Table::new(["date", "ticker", "raw", "normalized"]);
    for (t, d) in data.esg.calendar.dates().iter().enumerate() {
        for (i, tk) in tickers.iter().enumerate() {
            esg.push(vec![d.to_string(), tk.clone(), num(data.esg.raw[t][i]), num(data.esg.normalized[t][i])]);
        }
    }
    esg.write(&dir.join("esg_daily.csv"))?;

    if let Some(y) = &data.yields {
        let mut tab = Table::new(["date", "annual_yield", "daily_rate"]);
        for (k, d) in y.calendar.dates().iter().enumerate() {
            tab.push(vec![d.to_string(), num(y.annual_yield[k]), num(y.daily_rate[k])]);
        }
        tab.write(&dir.join("yields.csv"))?;
    }

    let dates = data.returns.calendar.dates();
    let filled: usize = data.prices.filled.iter().flatten().filter(|f| **f).count();
    write_json(
        &dir.join("summary.json"),
        &json!({
            "tickers": tickers,
            "rejected": data.prices.rejected,
            "price_dates": data.prices.calendar.len(),
            "return_dates": dates.len(),
            "first_return": dates.first().map(|d| d.to_string()),
            "last_return": dates.last().map(|d| d.to_string()),
            "forward_filled_prices": filled,
            "yields": data.yields.is_some(),
            "index_weights": data.index_weights,
        }),
    )?;
    Ok(dir)
}

struct FrontierRun {
    t: usize,
    scenarios: ScenarioMatrix,
    /// One frontier per configured lambda, in order.
    frontiers: Vec<(f64, Vec<Result<FrontierPoint, Error>>)>,
}

fn frontier_template(cfg: &RunConfig) -> OptimizationSpec {
    // A single-date frontier has no previous holding, so no turnover cap.
    OptimizationSpec {
        risk: cfg.optimizer.risk_measure(),
        ..OptimizationSpec::default()
    }
}

fn compute_frontiers(
    data: &Dataset,
    cfg: &RunConfig,
    t: usize,
    scenarios: ScenarioMatrix,
    alphas: &[f64],
) -> CliResult<FrontierRun> {
    let inputs = FrontierInputs {
        scenarios: &scenarios,
        normalized_scores: data.esg.normalized_row(t),
        raw_scores: data.esg.raw_row(t),
    };
    let template = frontier_template(cfg);
    let mut frontiers = Vec::new();
    for &l in &cfg.optimizer.lambdas {
        let f = build_frontier(inputs, &params(cfg, l)?, alphas, &template)?;
        frontiers.push((l, f));
    }
    Ok(FrontierRun { t, scenarios, frontiers })
}

fn frontier_table(lambda: f64, points: &[Result<FrontierPoint, Error>], alphas: &[f64], tickers: &[String]) -> Table {
    let lead = [
        "lambda", "alpha", "status", "mean_z", "risk_z", "cvar_z", "mean_r", "risk_r", "cvar_r", "esg_star",
        "sigma_star", "error",
    ];
    let mut tab = Table::new(weight_header(lead, tickers));
    for (p, a) in points.iter().zip(alphas) {
        let row = match p {
            Ok(p) => [
                num(p.lambda),
                num(p.alpha),
                format!("{:?}", p.status),
                num(p.mean_z),
                num(p.risk_z),
                num(p.cvar_z),
                num(p.mean_r),
                num(p.risk_r),
                num(p.cvar_r),
                num(p.esg_star),
                num(p.sigma_star),
                String::new(),
            ]
            .into_iter()
            .chain(p.weights.theta.iter().map(|w| num(*w)))
            .collect(),
            Err(e) => {
                let mut row = vec![num(lambda), num(*a), "Failed".into()];
                row.extend(std::iter::repeat_n(String::new(), 8));
                row.push(e.to_string());
                row.extend(std::iter::repeat_n(String::new(), tickers.len()));
                row
            }
        };
        tab.push(row);
    }
    tab
}

/// Efficient frontiers over the alpha grid, one CSV per lambda.
pub fn frontier(cfg: &RunConfig) -> CliResult<PathBuf> {
    cfg.validate()?;
    let alphas = cfg.alphas()?;
    let data = Dataset::load(cfg)?;
    let t = data.decision_index(cfg.frontier.date, cfg.model.window)?;
    let (model, scenarios) = scenarios_at(&data, cfg, t)?;
    let run = compute_frontiers(&data, cfg, t, scenarios, &alphas)?;
    let dir = command_dir(cfg, "frontier")?;
    for (l, points) in &run.frontiers {
        frontier_table(*l, points, &alphas, data.tickers()).write(&dir.join(format!("frontier_{}.csv", lambda_label(*l))))?;
    }
    write_json(&dir.join("fit.json"), &model)?;
    write_json(
        &dir.join("summary.json"),
        &json!({
            "date": data.date(run.t).to_string(),
            "scenarios": run.scenarios.n_scenarios(),
            "scenario_seed": run.scenarios.seed(),
            "lambdas": cfg.optimizer.lambdas,
            "alphas": alphas.len(),
            "failed_points": run.frontiers.iter().map(|(_, f)| f.iter().filter(|p| p.is_err()).count()).collect::<Vec<_>>(),
        }),
    )?;
    Ok(dir)
}

fn zeta_f(data: &Dataset, t: usize, p: &EsgBlendParams) -> f64 {
    esg_valued_riskless(data.riskless(t), p)
}

fn tangents(data: &Dataset, cfg: &RunConfig, run: &FrontierRun) -> CliResult<Vec<(f64, Result<TangentResult, Error>)>> {
    run.frontiers
        .iter()
        .map(|(l, pts)| {
            let ok: Vec<FrontierPoint> = pts.iter().filter_map(|p| p.as_ref().ok().cloned()).collect();
            let zf = zeta_f(data, run.t, &params(cfg, *l)?);
            Ok((*l, tangent_portfolio(&ok, zf)))
        })
        .collect()
}

/// Tangent portfolio of each lambda's frontier against the ESG-valued
/// riskless rate of the decision date.
pub fn tangent(cfg: &RunConfig) -> CliResult<PathBuf> {
    cfg.validate()?;
    let alphas = cfg.alphas()?;
    let data = Dataset::load(cfg)?;
    let t = data.decision_index(cfg.frontier.date, cfg.model.window)?;
    let (_, scenarios) = scenarios_at(&data, cfg, t)?;
    let run = compute_frontiers(&data, cfg, t, scenarios, &alphas)?;
    let lead = [
        "lambda", "zeta_f", "alpha", "slope", "negative_slope", "mean_z", "risk_z", "cvar_z", "esg_star", "error",
    ];
    let mut tab = Table::new(weight_header(lead, data.tickers()));
    for (l, res) in tangents(&data, cfg, &run)? {
        let row = match res {
            Ok(tr) => [
                num(l),
                num(tr.zeta_f),
                num(tr.point.alpha),
                num(tr.slope),
                tr.negative_slope.to_string(),
                num(tr.point.mean_z),
                num(tr.point.risk_z),
                num(tr.point.cvar_z),
                num(tr.point.esg_star),
                String::new(),
            ]
            .into_iter()
            .chain(tr.point.weights.theta.iter().map(|w| num(*w)))
            .collect(),
            Err(e) => {
                let mut row = vec![num(l), num(zeta_f(&data, t, &params(cfg, l)?))];
                row.extend(std::iter::repeat_n(String::new(), 7));
                row.push(e.to_string());
                row.extend(std::iter::repeat_n(String::new(), data.tickers().len()));
                row
            }
        };
        tab.push(row);
    }
    let dir = command_dir(cfg, "tangent")?;
    tab.write(&dir.join("tangent.csv"))?;
    Ok(dir)
}

fn strategy_name(cfg: &RunConfig, lambda: f64, alpha: f64) -> String {
    let risk = match cfg.optimizer.risk {
        crate::config::RiskKind::Mv => "mv",
        crate::config::RiskKind::Mcvar => "mcvar",
    };
    format!("{risk} lambda={lambda} alpha={alpha}")
}

/// The core backtest configuration described by `cfg`.
pub fn backtest_config(cfg: &RunConfig, index_weights: Option<Vec<f64>>) -> CliResult<BacktestConfig> {
    let mut strategies = Vec::new();
    let tangent_alphas = cfg.tangent_alphas()?;
    for &l in &cfg.optimizer.lambdas {
        for &a in &cfg.backtest.alphas {
            strategies.push(StrategySpec {
                name: strategy_name(cfg, l, a),
                lambda: l,
                kind: StrategyKind::Fixed { alpha: a },
            });
        }
        if cfg.backtest.tangent {
            strategies.push(StrategySpec {
                name: format!("tangent lambda={l}"),
                lambda: l,
                kind: StrategyKind::Tangent {
                    alphas: tangent_alphas.clone(),
                },
            });
        }
    }
    let (fit, nig) = fit_options(cfg);
    Ok(BacktestConfig {
        window: cfg.model.window,
        n_scenarios: cfg.model.scenarios,
        gamma: cfg.backtest.gamma(),
        cost_bps: cfg.backtest.cost_bps,
        risk: cfg.optimizer.risk_measure(),
        strategies,
        index_weights,
        seed: cfg.seed,
        start: cfg.backtest.start,
        end: cfg.backtest.end,
        fit,
        nig,
        initial_value: cfg.backtest.initial_value,
        scale: cfg.data.scale_c,
    })
}

/// Rolling daily re-optimization with turnover cap and trading costs,
/// plus the buy-and-hold and index benchmarks.
pub fn backtest(cfg: &RunConfig) -> CliResult<PathBuf> {
    cfg.validate()?;
    let data = Dataset::load(cfg)?;
    let bt = backtest_config(cfg, data.index_weights.clone())?;
    bt.validate(data.tickers().len())?;
    let result = run_backtest(&data.returns, &data.esg, data.yields.as_ref(), &bt)?;

    let mut records = Vec::new();
    for (p, spec) in result.strategies.iter().zip(&bt.strategies) {
        let (kind, alpha) = match &spec.kind {
            StrategyKind::Fixed { alpha } => ("fixed", Some(*alpha)),
            StrategyKind::Tangent { .. } => ("tangent", None),
        };
        records.push(PathRecord::from_path(p, kind, alpha));
    }
    for p in &result.benchmarks {
        let kind = if p.name.starts_with("EWBH") { "ewbh" } else { "index" };
        records.push(PathRecord::from_path(p, kind, None));
    }

    let dir = command_dir(cfg, "backtest")?;
    series_table(&records).write(&dir.join("series.csv"))?;

    let mut weights = Table::new(weight_header(["strategy", "decision_date"], data.tickers()));
    for p in result.strategies.iter().chain(&result.benchmarks) {
        for (d, w) in p.decision_dates.iter().zip(&p.weights) {
            weights.push(
                [p.name.clone(), d.to_string()]
                    .into_iter()
                    .chain(w.iter().map(|v| num(*v)))
                    .collect(),
            );
        }
    }
    weights.write(&dir.join("weights.csv"))?;

    let rates = rate_map(data.yields.as_ref());
    write_report(&dir, &report_tables(&records, cfg.report.beta, rates.as_ref()))?;

    let paths: Vec<_> = result
        .strategies
        .iter()
        .chain(&result.benchmarks)
        .map(|p| {
            json!({
                "name": p.name,
                "decisions": p.decision_dates.len(),
                "first_decision": p.decision_dates.first().map(|d| d.to_string()),
                "last_decision": p.decision_dates.last().map(|d| d.to_string()),
                "skipped": p.skipped,
                "numeric_limits": p.numeric_limits,
                "final_price": p.series.price.last(),
            })
        })
        .collect();
    write_json(
        &dir.join("summary.json"),
        &json!({ "fit_failures": result.fit_failures, "paths": paths }),
    )?;
    Ok(dir)
}

/// Daily log return of a constant-mix portfolio.
fn portfolio_panel(returns: &ReturnPanel, weights: &[f64]) -> ReturnPanel {
    let series = returns
        .returns
        .iter()
        .map(|row| vec![row.iter().zip(weights).map(|(r, w)| w * r.exp()).sum::<f64>().ln()])
        .collect();
    ReturnPanel {
        calendar: returns.calendar.clone(),
        tickers: vec!["PORTFOLIO".into()],
        returns: series,
        filled: vec![vec![false]; returns.len()],
    }
}

/// Option surfaces on a portfolio underlying, one CSV per lambda.
pub fn price_options(cfg: &RunConfig) -> CliResult<PathBuf> {
    cfg.validate()?;
    let t_grid = cfg.maturities()?;
    let m_grid = cfg.moneyness()?;
    let t_max = *t_grid.iter().max().expect("validated non-empty");
    let data = Dataset::load(cfg)?;
    let t = data.decision_index(cfg.options.date, cfg.model.window)?;
    let n = data.tickers().len();

    // (lambda, weights, tangent alpha)
    let mut underlyings: Vec<(f64, Vec<f64>, Option<f64>)> = Vec::new();
    match cfg.options.underlying {
        Underlying::Equal => {
            for &l in &cfg.optimizer.lambdas {
                underlyings.push((l, vec![1.0 / n as f64; n], None));
            }
        }
        Underlying::Index => {
            let w = data
                .index_weights
                .clone()
                .ok_or_else(|| Error::Precondition("underlying 'index' needs data.index_weights".into()))?;
            for &l in &cfg.optimizer.lambdas {
                underlyings.push((l, w.clone(), None));
            }
        }
        Underlying::Tangent => {
            let (_, scenarios) = scenarios_at(&data, cfg, t)?;
            let run = compute_frontiers(&data, cfg, t, scenarios, &cfg.alphas()?)?;
            for (l, res) in tangents(&data, cfg, &run)? {
                let tr = res?;
                underlyings.push((l, tr.point.weights.theta, Some(tr.point.alpha)));
            }
        }
    }

    let window = data.returns.window(t + 1 - cfg.model.window..t + 1);
    let (fit_opts, nig_opts) = fit_options(cfg);
    let seed = day_seed(cfg.seed, data.date(t));
    let scores = data.esg.normalized_row(t);
    let raw = data.esg.raw_row(t);
    let dir = command_dir(cfg, "price-options")?;

    // Paths depend only on the weights, so identical underlyings share them.
    let mut ensembles: Vec<(Vec<f64>, TrajectoryEnsemble)> = Vec::new();
    let mut under = Table::new(weight_header(
        ["lambda", "source", "alpha", "esg_score", "sigma_score", "zeta_f", "redraws"],
        data.tickers(),
    ));
    for (l, w, alpha) in &underlyings {
        let p = params(cfg, *l)?;
        let score: f64 = w.iter().zip(scores).map(|(a, b)| a * b).sum();
        let pricing = EsgPricing {
            spot: cfg.options.spot,
            score,
            params: p,
        };
        let ens = match ensembles.iter().find(|(v, _)| v == w) {
            Some((_, e)) => e.revalue(pricing),
            None => {
                let model = fit_universe(&portfolio_panel(&window, w), &fit_opts, &nig_opts)?;
                let e = simulate_trajectories(&model.fits[0], &model.joint, t_max, cfg.options.paths, seed, pricing)?;
                ensembles.push((w.clone(), e.clone()));
                e
            }
        };
        let zf = zeta_f(&data, t, &p);
        let surf = surface(&ens, zf, &t_grid, &m_grid)?;
        let mut tab = Table::new([
            "T", "M", "strike", "call", "put", "iv_call", "iv_put", "parity_residual", "martingale_residual",
            "kl_divergence", "note",
        ]);
        for c in &surf.cells {
            tab.push(vec![
                c.t_days.to_string(),
                num(c.moneyness),
                num(c.strike),
                num(c.call),
                num(c.put),
                opt(c.iv_call),
                opt(c.iv_put),
                num(c.parity_residual),
                num(c.martingale_residual),
                num(c.kl_divergence),
                c.note.clone().unwrap_or_default(),
            ]);
        }
        tab.write(&dir.join(format!("options_{}.csv", lambda_label(*l))))?;
        let source = match cfg.options.underlying {
            Underlying::Tangent => "tangent",
            Underlying::Index => "index",
            Underlying::Equal => "equal",
        };
        under.push(
            [
                num(*l),
                source.to_string(),
                opt(*alpha),
                num(w.iter().zip(raw).map(|(a, b)| a * b).sum()),
                num(score),
                num(zf),
                ens.redraws.to_string(),
            ]
            .into_iter()
            .chain(w.iter().map(|v| num(*v)))
            .collect(),
        );
    }
    under.write(&dir.join("underlying.csv"))?;
    Ok(dir)
}

/// Shadow riskless rate and information ratio over the lambda grid.
pub fn srr(cfg: &RunConfig) -> CliResult<PathBuf> {
    cfg.validate()?;
    let lambdas = cfg.srr_lambdas()?;
    let data = Dataset::load(cfg)?;
    let reduction = ColumnReduction {
        second_last: cfg.srr.reduction[0],
        last: cfg.srr.reduction[1],
    };
    let mut series = Table::new([
        "lambda", "date", "srr", "mu_pi", "sigma_pi_norm", "ir", "residual", "condition", "error",
    ]);
    let mut summary = Table::new(["lambda", "mu_ir", "sigma_ir", "n_used", "n_skipped", "error"]);
    for &l in &lambdas {
        let points = srr_series(&data.returns, &data.esg, &params(cfg, l)?, cfg.srr.window, reduction)?;
        for p in &points {
            let row = match &p.solution {
                Ok(s) => vec![
                    num(l),
                    p.date.to_string(),
                    num(s.srr),
                    num(s.mu_pi),
                    num(s.sigma_pi_norm),
                    opt(s.ir),
                    num(s.residual),
                    num(s.condition),
                    String::new(),
                ],
                Err(e) => {
                    let mut row = vec![num(l), p.date.to_string()];
                    row.extend(std::iter::repeat_n(String::new(), 6));
                    row.push(e.to_string());
                    row
                }
            };
            series.push(row);
        }
        summary.push(match ir_stats(&points) {
            Ok(s) => vec![
                num(l),
                num(s.mu_ir),
                num(s.sigma_ir),
                s.n_used.to_string(),
                s.n_skipped.to_string(),
                String::new(),
            ],
            Err(e) => vec![
                num(l),
                String::new(),
                String::new(),
                "0".into(),
                points.len().to_string(),
                e.to_string(),
            ],
        });
    }
    let dir = command_dir(cfg, "srr")?;
    series.write(&dir.join("srr_series.csv"))?;
    summary.write(&dir.join("srr_summary.csv"))?;
    Ok(dir)
}

/// Recomputes the summary tables from a backtest's `series.csv`.
pub fn report(cfg: &RunConfig) -> CliResult<PathBuf> {
    cfg.validate()?;
    let input = cfg.report.input.clone().unwrap_or_else(|| cfg.out_dir.join("backtest"));
    let records = read_series(&input.join("series.csv"))?;
    let rates = match &cfg.data.yields {
        Some(p) => Some(esgval::market_data::load_yields(p, cfg.data.scale_c)?),
        None => None,
    };
    let tables = report_tables(&records, cfg.report.beta, rate_map(rates.as_ref()).as_ref());
    let dir = command_dir(cfg, "report")?;
    write_report(&dir, &tables)?;
    Ok(dir)
}

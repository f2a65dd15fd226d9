//! Rolling out-of-sample backtest: refit, simulate and re-optimize on every
//! decision date, hold over the next day, and account for turnover costs.

use chrono::{Datelike, NaiveDate};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::esg_transform::{blend_scenarios, esg_valued_riskless, EsgBlendParams};
use crate::frontier::{build_frontier, tangent_portfolio, FrontierInputs, FrontierPoint, RealizedSeries};
use crate::market_data::{EsgPanel, ReturnPanel, YieldSeries};
use crate::optimizer::{solve, OptimizationSpec, RiskMeasure, SolveStatus};
use crate::scenario::arma_garch::FitOptions;
use crate::scenario::{fit_universe_from, simulate_one_step, NigFitOptions, NigParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StrategyKind {
    /// One frontier point at a fixed risk aversion.
    Fixed { alpha: f64 },
    /// The tangent point of the frontier swept over `alphas`.
    Tangent { alphas: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub name: String,
    pub lambda: f64,
    #[serde(flatten)]
    pub kind: StrategyKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestConfig {
    /// Estimation window length in returns.
    pub window: usize,
    pub n_scenarios: usize,
    /// Daily L1 turnover cap; `None` leaves trading unconstrained.
    pub gamma: Option<f64>,
    /// Cost per side in basis points of traded notional.
    pub cost_bps: f64,
    pub risk: RiskMeasure,
    pub strategies: Vec<StrategySpec>,
    /// Weights of the fixed-weight index benchmark, in ticker order.
    pub index_weights: Option<Vec<f64>>,
    pub seed: u64,
    /// First and last decision dates (inclusive); default to the full range.
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    pub fit: FitOptions,
    pub nig: NigFitOptions,
    /// Value of every portfolio before the first decision.
    pub initial_value: f64,
    /// Trading days per year in the ESG blend.
    pub scale: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            window: 510,
            n_scenarios: 10_000,
            gamma: Some(0.004),
            cost_bps: 2.0,
            risk: RiskMeasure::Mcvar { beta: 0.99 },
            strategies: Vec::new(),
            index_weights: None,
            seed: 0,
            start: None,
            end: None,
            fit: FitOptions::default(),
            nig: NigFitOptions::default(),
            initial_value: 1.0,
            scale: crate::DEFAULT_SCALE,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self, n_assets: usize) -> Result<()> {
        if self.window < 2 {
            return Err(Error::Domain(format!("window {} too short", self.window)));
        }
        if self.n_scenarios == 0 {
            return Err(Error::Domain("scenario count must be positive".into()));
        }
        if let Some(g) = self.gamma {
            if !(g >= 0.0) {
                return Err(Error::Domain(format!("turnover cap {g} must be >= 0")));
            }
        }
        if !(self.cost_bps >= 0.0 && self.cost_bps < 10_000.0) {
            return Err(Error::Domain(format!("cost {} bp outside [0, 10000)", self.cost_bps)));
        }
        if !(self.initial_value > 0.0) {
            return Err(Error::Domain("initial value must be positive".into()));
        }
        for s in &self.strategies {
            EsgBlendParams::new(s.lambda, self.scale)?;
            match &s.kind {
                StrategyKind::Fixed { alpha } => {
                    if !(0.0..=1.0).contains(alpha) {
                        return Err(Error::Domain(format!("{}: alpha {alpha} outside [0, 1]", s.name)));
                    }
                }
                StrategyKind::Tangent { alphas } => {
                    if alphas.is_empty() || alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
                        return Err(Error::Domain(format!("{}: tangent alpha grid must lie in [0, 1]", s.name)));
                    }
                }
            }
        }
        if let Some(w) = &self.index_weights {
            if w.len() != n_assets || w.iter().any(|v| !(*v >= 0.0)) || !(w.iter().sum::<f64>() > 0.0) {
                return Err(Error::Domain(format!(
                    "index weights must be {n_assets} non-negative numbers with a positive sum"
                )));
            }
        }
        Ok(())
    }
}

/// Realized history of one strategy or benchmark.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyPath {
    pub name: String,
    pub lambda: f64,
    pub decision_dates: Vec<NaiveDate>,
    /// Weights held after trading on each decision date.
    pub weights: Vec<Vec<f64>>,
    /// `sum |theta - theta_drifted|`; the first allocation counts as 1.
    pub turnover: Vec<f64>,
    /// Fraction of portfolio value paid in costs on each decision date.
    pub cost: Vec<f64>,
    /// Selected alpha per date (tangent strategies), or the fixed alpha.
    pub alpha: Vec<Option<f64>>,
    pub series: RealizedSeries,
    /// Dates where no trade happened because fitting or solving failed.
    pub skipped: usize,
    pub numeric_limits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestResult {
    pub strategies: Vec<StrategyPath>,
    pub benchmarks: Vec<StrategyPath>,
    pub fit_failures: usize,
}

/// Scenario seed of a decision date: independent of where the backtest
/// starts, so overlapping runs draw identical scenarios.
pub fn day_seed(seed: u64, date: NaiveDate) -> u64 {
    let mut z = seed ^ (date.num_days_from_ce() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Book {
    path: StrategyPath,
    params: EsgBlendParams,
    /// Weights after the previous day's drift; `None` before investing.
    drifted: Option<Vec<f64>>,
    cum_r: f64,
    cum_z: f64,
    p0: f64,
}

impl Book {
    fn new(name: String, params: EsgBlendParams, p0: f64) -> Self {
        Self {
            path: StrategyPath {
                name,
                lambda: params.lambda(),
                decision_dates: Vec::new(),
                weights: Vec::new(),
                turnover: Vec::new(),
                cost: Vec::new(),
                alpha: Vec::new(),
                series: RealizedSeries {
                    dates: Vec::new(),
                    realized_r: Vec::new(),
                    realized_z: Vec::new(),
                    price: Vec::new(),
                    esg_price: Vec::new(),
                    esg_score: Vec::new(),
                },
                skipped: 0,
                numeric_limits: 0,
            },
            params,
            drifted: None,
            cum_r: 0.0,
            cum_z: 0.0,
            p0,
        }
    }

    /// Trades to `target` (or keeps the drifted weights when `None`) on
    /// `date`, then realizes the next day's returns.
    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        date: NaiveDate,
        target: Option<Vec<f64>>,
        alpha: Option<f64>,
        cost_rate: f64,
        next: NaiveDate,
        r_next: &[f64],
        norm_next: &[f64],
        raw_next: &[f64],
    ) {
        let theta = match (target, &self.drifted) {
            (Some(t), _) => t,
            (None, Some(d)) => d.clone(),
            (None, None) => return,
        };
        let turnover: f64 = match &self.drifted {
            Some(d) => theta.iter().zip(d).map(|(a, b)| (a - b).abs()).sum(),
            None => theta.iter().map(|a| a.abs()).sum(),
        };
        let cost = cost_rate * turnover;
        let growth: Vec<f64> = theta.iter().zip(r_next).map(|(w, r)| w * r.exp()).collect();
        let gross: f64 = growth.iter().sum();
        let r = gross.ln() + (1.0 - cost).ln();
        let sigma_p: f64 = theta.iter().zip(norm_next).map(|(w, s)| w * s).sum();
        let z = self.params.blend(r, sigma_p);
        self.cum_r += r;
        self.cum_z += z;
        let p = &mut self.path;
        p.decision_dates.push(date);
        p.turnover.push(turnover);
        p.cost.push(cost);
        p.alpha.push(alpha);
        p.series.dates.push(next);
        p.series.realized_r.push(r);
        p.series.realized_z.push(z);
        p.series.price.push(self.p0 * self.cum_r.exp());
        p.series.esg_price.push(self.cum_z.exp());
        p.series.esg_score.push(theta.iter().zip(raw_next).map(|(w, s)| w * s).sum());
        p.weights.push(theta);
        self.drifted = Some(growth.iter().map(|g| g / gross).collect());
    }
}

/// Decision indices `t` into `returns` (window ends) that have a next day.
fn decision_range(returns: &ReturnPanel, cfg: &BacktestConfig) -> Result<std::ops::RangeInclusive<usize>> {
    let dates = returns.calendar.dates();
    let first_possible = cfg.window - 1;
    if returns.len() < cfg.window + 1 {
        return Err(Error::WindowTooShort {
            needed: cfg.window + 1,
            got: returns.len(),
        });
    }
    let lo = match cfg.start {
        Some(d) => dates.partition_point(|x| *x < d).max(first_possible),
        None => first_possible,
    };
    let hi = match cfg.end {
        Some(d) => dates.partition_point(|x| *x <= d).saturating_sub(1),
        None => returns.len() - 2,
    }
    .min(returns.len() - 2);
    if lo > hi {
        return Err(Error::Precondition(format!(
            "no decision dates: the first needs {} prior returns and a following day",
            cfg.window
        )));
    }
    Ok(lo..=hi)
}

/// Runs every configured strategy plus the equal-weight buy-and-hold and
/// (when weights are given) the fixed-weight index benchmarks. Benchmarks
/// trade without costs. Tangent strategies need `yields`.
pub fn run_backtest(
    returns: &ReturnPanel,
    esg: &EsgPanel,
    yields: Option<&YieldSeries>,
    cfg: &BacktestConfig,
) -> Result<BacktestResult> {
    let n = returns.n_assets();
    cfg.validate(n)?;
    if esg.tickers != returns.tickers {
        return Err(Error::Shape("ESG and return panels list different tickers".into()));
    }
    let needs_rates = cfg
        .strategies
        .iter()
        .any(|s| matches!(s.kind, StrategyKind::Tangent { .. }));
    let rates = match (needs_rates, yields) {
        (true, None) => {
            return Err(Error::Precondition("tangent strategies need a riskless yield series".into()))
        }
        (true, Some(y)) => Some(y.align_to(&returns.calendar)?),
        (false, _) => None,
    };
    let range = decision_range(returns, cfg)?;
    let dates = returns.calendar.dates();
    let esg_index = |d: NaiveDate| {
        esg.calendar
            .index_of(d)
            .ok_or_else(|| Error::Alignment(format!("{d} not on the ESG calendar")))
    };

    let cost_rate = cfg.cost_bps * 1e-4;
    let mut books: Vec<Book> = cfg
        .strategies
        .iter()
        .map(|s| Ok(Book::new(s.name.clone(), EsgBlendParams::new(s.lambda, cfg.scale)?, cfg.initial_value)))
        .collect::<Result<_>>()?;
    let mut lambdas: Vec<f64> = cfg.strategies.iter().map(|s| s.lambda).collect();
    if lambdas.is_empty() {
        lambdas.push(0.0);
    }
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    let mut ewbh = Vec::new();
    let mut index = Vec::new();
    for &l in &lambdas {
        let p = EsgBlendParams::new(l, cfg.scale)?;
        ewbh.push(Book::new(format!("EWBH lambda={l}"), p, cfg.initial_value));
        if cfg.index_weights.is_some() {
            index.push(Book::new(format!("Index lambda={l}"), p, cfg.initial_value));
        }
    }
    let index_theta = cfg.index_weights.as_ref().map(|w| {
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect::<Vec<f64>>()
    });

    let mut previous: Option<NigParams> = None;
    let mut fit_failures = 0;
    let total = range.end() - range.start() + 1;
    for (k, t) in range.enumerate() {
        let date = dates[t];
        let next = dates[t + 1];
        let e_now = esg_index(date)?;
        let e_next = esg_index(next)?;
        let (norm_now, raw_now) = (esg.normalized_row(e_now), esg.raw_row(e_now));
        let (norm_next, raw_next) = (esg.normalized_row(e_next), esg.raw_row(e_next));
        let r_next = &returns.returns[t + 1];

        let window = returns.window(t + 1 - cfg.window..t + 1);
        let model = fit_universe_from(&window, &cfg.fit, &cfg.nig, previous.as_ref()).or_else(|e| {
            if previous.is_some() {
                warn!("{date}: warm-started fit failed ({e}); refitting from scratch");
                fit_universe_from(&window, &cfg.fit, &cfg.nig, None)
            } else {
                Err(e)
            }
        });
        let scenarios = model.and_then(|m| {
            let s = simulate_one_step(&m.fits, &m.joint, cfg.n_scenarios, day_seed(cfg.seed, date))?;
            previous = Some(m.joint);
            Ok(s)
        });
        let scenarios = match scenarios {
            Ok(s) => Some(s),
            Err(e) => {
                warn!("{date}: no scenarios ({e}); holding drifted weights");
                fit_failures += 1;
                None
            }
        };

        for (book, spec) in books.iter_mut().zip(&cfg.strategies) {
            let decision = scenarios.as_ref().map(|sc| -> Result<(Vec<f64>, f64, SolveStatus)> {
                let template = OptimizationSpec {
                    alpha: 0.0,
                    risk: cfg.risk,
                    gamma: book.drifted.as_ref().and(cfg.gamma),
                    prev_weights: book.drifted.clone(),
                    allow_short: false,
                    tie_break: true,
                };
                match &spec.kind {
                    StrategyKind::Fixed { alpha } => {
                        let blended = blend_scenarios(sc, norm_now, &book.params)?;
                        let rep = solve(&blended, &OptimizationSpec { alpha: *alpha, ..template })?;
                        Ok((rep.weights.theta, *alpha, rep.status))
                    }
                    StrategyKind::Tangent { alphas } => {
                        let inputs = FrontierInputs {
                            scenarios: sc,
                            normalized_scores: norm_now,
                            raw_scores: raw_now,
                        };
                        let points: Vec<FrontierPoint> = build_frontier(inputs, &book.params, alphas, &template)?
                            .into_iter()
                            .filter_map(Result::ok)
                            .collect();
                        let rf = rates.as_ref().map_or(0.0, |y| y.daily_rate[t]);
                        let tan = tangent_portfolio(&points, esg_valued_riskless(rf, &book.params))?;
                        Ok((tan.point.weights.theta, tan.point.alpha, tan.point.status))
                    }
                }
            });
            let (target, alpha) = match decision {
                Some(Ok((theta, alpha, status))) => {
                    if status == SolveStatus::NumericLimit {
                        book.path.numeric_limits += 1;
                    }
                    (Some(theta), Some(alpha))
                }
                Some(Err(e)) => {
                    warn!("{date} {}: {e}; holding drifted weights", book.path.name);
                    book.path.skipped += 1;
                    (None, None)
                }
                None => {
                    book.path.skipped += 1;
                    (None, None)
                }
            };
            book.step(date, target, alpha, cost_rate, next, r_next, norm_next, raw_next);
        }
        for b in &mut ewbh {
            let target = b.drifted.is_none().then(|| vec![1.0 / n as f64; n]);
            b.step(date, target, None, 0.0, next, r_next, norm_next, raw_next);
        }
        if let Some(theta) = &index_theta {
            for b in &mut index {
                b.step(date, Some(theta.clone()), None, 0.0, next, r_next, norm_next, raw_next);
            }
        }
        if (k + 1) % 50 == 0 || k + 1 == total {
            info!("backtest: {} of {total} decision dates done", k + 1);
        }
    }
    Ok(BacktestResult {
        strategies: books.into_iter().map(|b| b.path).collect(),
        benchmarks: ewbh.into_iter().chain(index).map(|b| b.path).collect(),
        fit_failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{NormalizationMap, TradingCalendar};
    use chrono::Duration;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn market(n_days: usize, n_assets: usize, seed: u64) -> (ReturnPanel, EsgPanel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
        let dates: Vec<NaiveDate> = (0..n_days).map(|k| start + Duration::days(k as i64)).collect();
        let calendar = TradingCalendar::new(dates).unwrap();
        let returns: Vec<Vec<f64>> = (0..n_days)
            .map(|_| {
                (0..n_assets)
                    .map(|i| 2e-4 * i as f64 + 0.01 * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let tickers: Vec<String> = (0..n_assets).map(|i| format!("T{i}")).collect();
        let raw: Vec<f64> = (0..n_assets).map(|i| 30.0 + 10.0 * i as f64).collect();
        let esg = EsgPanel {
            calendar: calendar.clone(),
            tickers: tickers.clone(),
            release_dates: vec![vec![start]; n_assets],
            raw: vec![raw.clone(); n_days],
            normalized: vec![raw.iter().map(|r| r / 50.0 - 1.0).collect(); n_days],
            map: NormalizationMap::default(),
        };
        let rp = ReturnPanel {
            calendar,
            tickers,
            filled: vec![vec![false; n_assets]; n_days],
            returns,
        };
        (rp, esg)
    }

    fn config(strategies: Vec<StrategySpec>) -> BacktestConfig {
        BacktestConfig {
            window: 150,
            n_scenarios: 500,
            strategies,
            seed: 3,
            ..Default::default()
        }
    }

    fn fixed(name: &str, lambda: f64, alpha: f64) -> StrategySpec {
        StrategySpec {
            name: name.into(),
            lambda,
            kind: StrategyKind::Fixed { alpha },
        }
    }

    #[test]
    fn single_asset_matches_buy_and_hold() {
        let (rp, esg) = market(170, 1, 1);
        let cfg = BacktestConfig {
            gamma: None,
            cost_bps: 0.0,
            ..config(vec![fixed("one", 0.0, 0.0)])
        };
        let res = run_backtest(&rp, &esg, None, &cfg).unwrap();
        let s = &res.strategies[0].series;
        let b = &res.benchmarks[0].series;
        assert_eq!(s.dates.len(), 170 - 150);
        for (x, y) in s.price.iter().zip(&b.price) {
            assert!((x - y).abs() < 1e-14);
        }
        let hold: f64 = rp.returns[150..].iter().map(|r| r[0]).sum();
        assert!((s.price.last().unwrap() - hold.exp()).abs() < 1e-12);
    }

    #[test]
    fn zero_turnover_freezes_shares() {
        let (rp, esg) = market(165, 3, 2);
        let cfg = BacktestConfig {
            gamma: Some(0.0),
            ..config(vec![fixed("frozen", 0.5, 0.5)])
        };
        let res = run_backtest(&rp, &esg, None, &cfg).unwrap();
        let p = &res.strategies[0];
        for t in 1..p.turnover.len() {
            assert!(p.turnover[t] < 1e-7, "{}", p.turnover[t]);
        }
        assert!((p.turnover[0] - 1.0).abs() < 1e-9);
        assert!((p.cost[0] - 2e-4).abs() < 1e-12);
    }

    #[test]
    fn turnover_cap_respected_and_costs_charged() {
        let (rp, esg) = market(170, 3, 4);
        let cfg = config(vec![fixed("capped", 0.25, 0.9)]);
        let res = run_backtest(&rp, &esg, None, &cfg).unwrap();
        let p = &res.strategies[0];
        for (to, c) in p.turnover.iter().zip(&p.cost).skip(1) {
            assert!(*to <= 0.004 + 1e-7);
            assert!((c - 2e-4 * to).abs() < 1e-15);
        }
    }

    #[test]
    fn ewbh_keeps_share_counts() {
        let (rp, esg) = market(160, 3, 5);
        let res = run_backtest(&rp, &esg, None, &config(vec![])).unwrap();
        let b = &res.benchmarks[0];
        assert_eq!(b.weights[0], vec![1.0 / 3.0; 3]);
        for t in 1..b.weights.len() {
            // Weight ratios follow price ratios.
            let want = (rp.returns[150..150 + t].iter().map(|r| r[1] - r[0]).sum::<f64>()).exp();
            assert!((b.weights[t][1] / b.weights[t][0] - want).abs() < 1e-12);
        }
        assert!(b.cost.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn index_is_constant_mix() {
        let (rp, esg) = market(155, 2, 6);
        let cfg = BacktestConfig {
            index_weights: Some(vec![3.0, 1.0]),
            ..config(vec![])
        };
        let res = run_backtest(&rp, &esg, None, &cfg).unwrap();
        let idx = res.benchmarks.iter().find(|b| b.name.starts_with("Index")).unwrap();
        assert!(idx.weights.iter().all(|w| w == &vec![0.75, 0.25]));
        let r = &rp.returns[151];
        let want = (0.75 * r[0].exp() + 0.25 * r[1].exp()).ln();
        assert!((idx.series.realized_r[1] - want).abs() < 1e-15);
    }

    #[test]
    fn lambda_zero_esg_series_equals_financial() {
        let (rp, esg) = market(160, 3, 7);
        let res = run_backtest(&rp, &esg, None, &config(vec![fixed("plain", 0.0, 0.7)])).unwrap();
        let s = &res.strategies[0].series;
        for (r, z) in s.realized_r.iter().zip(&s.realized_z) {
            assert_eq!(r, z);
        }
    }

    #[test]
    fn deterministic_and_start_independent_seeds() {
        let (rp, esg) = market(165, 3, 8);
        let cfg = config(vec![fixed("a", 0.5, 0.7)]);
        let a = run_backtest(&rp, &esg, None, &cfg).unwrap();
        let b = run_backtest(&rp, &esg, None, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(day_seed(1, rp.calendar.dates()[0]), day_seed(1, rp.calendar.dates()[1]));
    }

    #[test]
    fn tangent_needs_rates() {
        let (rp, esg) = market(160, 3, 9);
        let cfg = config(vec![StrategySpec {
            name: "tan".into(),
            lambda: 0.5,
            kind: StrategyKind::Tangent { alphas: vec![0.1, 0.5, 0.9] },
        }]);
        assert!(matches!(run_backtest(&rp, &esg, None, &cfg), Err(Error::Precondition(_))));
        let y = YieldSeries::new(rp.calendar.clone(), vec![0.02; rp.len()], 255.0).unwrap();
        let res = run_backtest(&rp, &esg, Some(&y), &cfg).unwrap();
        assert!(res.strategies[0].alpha.iter().all(|a| a.is_some()));
    }

    #[test]
    fn history_too_short() {
        let (rp, esg) = market(150, 2, 10);
        assert!(matches!(
            run_backtest(&rp, &esg, None, &config(vec![])),
            Err(Error::WindowTooShort { .. })
        ));
    }
}

//! Loads the configured files into aligned panels.

use std::path::Path;

use chrono::NaiveDate;
use esgval::market_data::{
    compute_returns, fill_daily_scores, load_esg, load_prices, load_yields, EsgPanel, NormalizationMap, PricePanel,
    ReturnPanel, YieldSeries,
};
use esgval::scenario::arma_garch::FitOptions;
use esgval::scenario::{fit_universe, simulate_one_step, NigFitOptions, UniverseModel};
use esgval::{Error, ScenarioMatrix};

use crate::config::RunConfig;
use crate::CliResult;

pub struct Dataset {
    pub prices: PricePanel,
    pub returns: ReturnPanel,
    /// Daily scores on the return calendar.
    pub esg: EsgPanel,
    /// Yields carried onto the return calendar.
    pub yields: Option<YieldSeries>,
    pub index_weights: Option<Vec<f64>>,
}

impl Dataset {
    pub fn load(cfg: &RunConfig) -> CliResult<Self> {
        let d = &cfg.data;
        let prices = load_prices(&d.prices, d.max_gap)?;
        for (t, why) in &prices.rejected {
            log::warn!("dropped {t}: {why}");
        }
        let returns = compute_returns(&prices)?;
        let releases = load_esg(&d.esg)?;
        let esg = fill_daily_scores(&releases, &returns.tickers, &returns.calendar, NormalizationMap::default())?;
        let yields = match &d.yields {
            Some(p) => Some(load_yields(p, d.scale_c)?.align_to(&returns.calendar)?),
            None => None,
        };
        let index_weights = match &d.index_weights {
            Some(p) => Some(load_index_weights(p, &returns.tickers)?),
            None => None,
        };
        Ok(Self {
            prices,
            returns,
            esg,
            yields,
            index_weights,
        })
    }

    pub fn tickers(&self) -> &[String] {
        &self.returns.tickers
    }

    /// Index of `date` (default: the last date) as a decision date with a
    /// full estimation window behind it.
    pub fn decision_index(&self, date: Option<NaiveDate>, window: usize) -> CliResult<usize> {
        let dates = self.returns.calendar.dates();
        let t = match date {
            Some(d) => self
                .returns
                .calendar
                .index_of(d)
                .ok_or_else(|| Error::Alignment(format!("{d} is not a return date")))?,
            None => dates.len() - 1,
        };
        if t + 1 < window {
            return Err(Error::WindowTooShort {
                needed: window,
                got: t + 1,
            }
            .into());
        }
        Ok(t)
    }

    pub fn date(&self, t: usize) -> NaiveDate {
        self.returns.calendar.dates()[t]
    }

    /// Daily riskless rate on return date `t` (0 without a yield file).
    pub fn riskless(&self, t: usize) -> f64 {
        self.yields.as_ref().map_or(0.0, |y| y.daily_rate[t])
    }
}

/// Reads `ticker,weight` rows into ticker order.
pub fn load_index_weights(path: &Path, tickers: &[String]) -> CliResult<Vec<f64>> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut w = vec![f64::NAN; tickers.len()];
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse_err = |m: String| Error::Parse { line, message: m };
        if rec.len() != 2 {
            return Err(parse_err(format!("expected 2 columns, found {}", rec.len())).into());
        }
        let Some(i) = tickers.iter().position(|t| t == &rec[0]) else {
            return Err(parse_err(format!("index weight for unknown ticker {}", &rec[0])).into());
        };
        let v: f64 = rec[1]
            .parse()
            .map_err(|_| parse_err(format!("bad weight '{}'", &rec[1])))?;
        if !(v >= 0.0) {
            return Err(parse_err(format!("negative weight {v}")).into());
        }
        w[i] = v;
    }
    if let Some(i) = w.iter().position(|v| v.is_nan()) {
        return Err(Error::Domain(format!("no index weight for {}", tickers[i])).into());
    }
    let s: f64 = w.iter().sum();
    if !(s > 0.0) {
        return Err(Error::Domain("index weights sum to zero".into()).into());
    }
    Ok(w.iter().map(|v| v / s).collect())
}

pub fn fit_options(cfg: &RunConfig) -> (FitOptions, NigFitOptions) {
    let fit = FitOptions {
        restarts: cfg.model.garch_restarts,
        ..FitOptions::default()
    };
    let nig = NigFitOptions {
        max_iter: cfg.model.nig_max_iter,
        tolerance: cfg.model.nig_tolerance,
    };
    (fit, nig)
}

/// Fits the window ending at `t` and draws the next-day scenarios.
pub fn scenarios_at(data: &Dataset, cfg: &RunConfig, t: usize) -> CliResult<(UniverseModel, ScenarioMatrix)> {
    let w = cfg.model.window;
    let window = data.returns.window(t + 1 - w..t + 1);
    let (fit, nig) = fit_options(cfg);
    let model = fit_universe(&window, &fit, &nig)?;
    let seed = esgval::backtest::day_seed(cfg.seed, data.date(t));
    let scenarios = simulate_one_step(&model.fits, &model.joint, cfg.model.scenarios, seed)?;
    Ok((model, scenarios))
}

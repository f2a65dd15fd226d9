//! Performance, moment and reward-risk tables of realized series, and the
//! long-format series CSV they are computed from.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use esgval::analytics::{moments, performance_summary, rrr_suite};
use esgval::backtest::StrategyPath;
use esgval::Error;

use crate::output::{num, opt, res, Table};
use crate::CliResult;

/// One realized series as stored in `series.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub name: String,
    pub kind: String,
    pub lambda: f64,
    /// Fixed alpha; `None` for tangent strategies and benchmarks.
    pub alpha: Option<f64>,
    pub decision_dates: Vec<NaiveDate>,
    pub dates: Vec<NaiveDate>,
    pub chosen_alpha: Vec<Option<f64>>,
    pub turnover: Vec<f64>,
    pub cost: Vec<f64>,
    pub realized_r: Vec<f64>,
    pub realized_z: Vec<f64>,
    pub price: Vec<f64>,
    pub esg_price: Vec<f64>,
    pub esg_score: Vec<f64>,
}

impl PathRecord {
    pub fn from_path(p: &StrategyPath, kind: &str, alpha: Option<f64>) -> Self {
        Self {
            name: p.name.clone(),
            kind: kind.to_string(),
            lambda: p.lambda,
            alpha,
            decision_dates: p.decision_dates.clone(),
            dates: p.series.dates.clone(),
            chosen_alpha: p.alpha.clone(),
            turnover: p.turnover.clone(),
            cost: p.cost.clone(),
            realized_r: p.series.realized_r.clone(),
            realized_z: p.series.realized_z.clone(),
            price: p.series.price.clone(),
            esg_price: p.series.esg_price.clone(),
            esg_score: p.series.esg_score.clone(),
        }
    }

    /// Value before the first realized return.
    fn initial_value(&self) -> f64 {
        self.price[0] / self.realized_r[0].exp()
    }
}

const SERIES_HEADER: [&str; 15] = [
    "strategy",
    "kind",
    "lambda",
    "alpha",
    "decision_date",
    "date",
    "chosen_alpha",
    "turnover",
    "cost",
    "realized_r",
    "realized_z",
    "price",
    "esg_price",
    "esg_score",
    "initial_value",
];

pub fn series_table(records: &[PathRecord]) -> Table {
    let mut t = Table::new(SERIES_HEADER);
    for r in records {
        if r.dates.is_empty() {
            continue;
        }
        let p0 = r.initial_value();
        for k in 0..r.dates.len() {
            t.push(vec![
                r.name.clone(),
                r.kind.clone(),
                num(r.lambda),
                opt(r.alpha),
                r.decision_dates[k].to_string(),
                r.dates[k].to_string(),
                opt(r.chosen_alpha[k]),
                num(r.turnover[k]),
                num(r.cost[k]),
                num(r.realized_r[k]),
                num(r.realized_z[k]),
                num(r.price[k]),
                num(r.esg_price[k]),
                num(r.esg_score[k]),
                num(p0),
            ]);
        }
    }
    t
}

/// Parses a `series.csv` written by [`series_table`].
pub fn read_series(path: &Path) -> CliResult<Vec<PathRecord>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out: Vec<PathRecord> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != SERIES_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} columns, found {}", SERIES_HEADER.len(), rec.len()),
            }
            .into());
        }
        let bad = |what: &str| Error::Parse {
            line,
            message: format!("bad {what}"),
        };
        let f = |i: usize, what: &str| rec[i].parse::<f64>().map_err(|_| bad(what));
        let of = |i: usize, what: &str| -> Result<Option<f64>, Error> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                rec[i].parse::<f64>().map(Some).map_err(|_| bad(what))
            }
        };
        let d = |i: usize| NaiveDate::parse_from_str(&rec[i], "%Y-%m-%d").map_err(|_| bad("date"));
        if out.last().is_none_or(|r| r.name != rec[0]) {
            out.push(PathRecord {
                name: rec[0].to_string(),
                kind: rec[1].to_string(),
                lambda: f(2, "lambda")?,
                alpha: of(3, "alpha")?,
                decision_dates: Vec::new(),
                dates: Vec::new(),
                chosen_alpha: Vec::new(),
                turnover: Vec::new(),
                cost: Vec::new(),
                realized_r: Vec::new(),
                realized_z: Vec::new(),
                price: Vec::new(),
                esg_price: Vec::new(),
                esg_score: Vec::new(),
            });
        }
        let r = out.last_mut().expect("pushed above");
        r.decision_dates.push(d(4)?);
        r.dates.push(d(5)?);
        r.chosen_alpha.push(of(6, "chosen_alpha")?);
        r.turnover.push(f(7, "turnover")?);
        r.cost.push(f(8, "cost")?);
        r.realized_r.push(f(9, "realized_r")?);
        r.realized_z.push(f(10, "realized_z")?);
        r.price.push(f(11, "price")?);
        r.esg_price.push(f(12, "esg_price")?);
        r.esg_score.push(f(13, "esg_score")?);
    }
    Ok(out)
}

pub struct ReportTables {
    pub performance: Table,
    pub moments: Table,
    pub rrr: Table,
}

/// Builds the three summary tables. Turnover averages skip the first
/// decision (the initial allocation). Reward-risk ratios use the daily
/// riskless rate in force on each realized date when `rates` is given.
pub fn report_tables(records: &[PathRecord], beta: f64, rates: Option<&BTreeMap<NaiveDate, f64>>) -> ReportTables {
    let pct = (beta * 100.0).round();
    let mut performance = Table::new(
        [
            "strategy", "kind", "lambda", "alpha", "tot_ret", "ann_ret", "avg_turnover",
        ]
        .into_iter()
        .map(String::from)
        .chain([format!("etl{pct}"), format!("etr{pct}")])
        .chain(["mdd", "esg_avg", "esg_std", "error"].into_iter().map(String::from)),
    );
    let mut mom = Table::new([
        "strategy", "kind", "lambda", "alpha", "mean", "median", "std", "skew", "excess_kurtosis", "error",
    ]);
    let mut rrr = Table::new([
        "strategy", "kind", "lambda", "alpha", "sharpe", "sortino", "star", "rachev", "gini", "error",
    ]);
    for r in records {
        let id = vec![r.name.clone(), r.kind.clone(), num(r.lambda), opt(r.alpha)];
        if r.dates.is_empty() {
            let blank = |n: usize, msg: &str| {
                let mut row = id.clone();
                row.extend(std::iter::repeat_n(String::new(), n));
                row.push(msg.to_string());
                row
            };
            performance.push(blank(8, "empty series"));
            mom.push(blank(5, "empty series"));
            rrr.push(blank(5, "empty series"));
            continue;
        }
        let mut prices = vec![r.initial_value()];
        prices.extend(&r.price);
        let turnover = if r.turnover.len() > 1 { &r.turnover[1..] } else { &r.turnover[..0] };
        let mut row = id.clone();
        match performance_summary(&prices, &r.realized_r, turnover, &r.esg_score, beta) {
            Ok(s) => {
                row.extend([s.tot_ret, s.ann_ret, s.avg_turnover, s.etl, s.etr, s.mdd, s.esg_avg, s.esg_std].map(num));
                row.push(String::new());
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), 8));
                row.push(e.to_string());
            }
        }
        performance.push(row);

        let mut row = id.clone();
        match moments(&r.realized_r) {
            Ok(m) => {
                row.extend([num(m.mean), num(m.median), num(m.std), opt(m.skew), opt(m.excess_kurtosis)]);
                row.push(String::new());
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), 5));
                row.push(e.to_string());
            }
        }
        mom.push(row);

        let rf: Vec<f64> = r
            .dates
            .iter()
            .map(|d| rates.and_then(|m| m.range(..=*d).next_back().map(|(_, v)| *v)).unwrap_or(0.0))
            .collect();
        let mut row = id;
        match rrr_suite(&r.realized_r, &rf, beta) {
            Ok(s) => {
                let cells = [&s.sharpe, &s.sortino, &s.star, &s.rachev, &s.gini];
                row.extend(cells.iter().map(|c| res(c)));
                let errs: Vec<String> = cells.iter().filter_map(|c| c.as_ref().err().map(|e| e.to_string())).collect();
                row.push(errs.join("; "));
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), 5));
                row.push(e.to_string());
            }
        }
        rrr.push(row);
    }
    ReportTables {
        performance,
        moments: mom,
        rrr,
    }
}

pub fn write_report(dir: &Path, tables: &ReportTables) -> CliResult<()> {
    tables.performance.write(&dir.join("performance.csv"))?;
    tables.moments.write(&dir.join("moments.csv"))?;
    tables.rrr.write(&dir.join("rrr.csv"))
}
